//! Weighted (Hájek) and augmented treatment-effect estimators.
//!
//! Sign convention: a positive effect means treated outcomes exceed control
//! outcomes.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balance::{Interval, WeightScheme};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::normal;
use crate::numeric::pairwise_sum;
use crate::terms::{design_matrix, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "ATO")]
    Ato,
    #[serde(rename = "ATT")]
    Att,
}

impl Estimand {
    pub fn scheme(self) -> WeightScheme {
        match self {
            Estimand::Ato => WeightScheme::Ato,
            Estimand::Att => WeightScheme::Att,
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Ato => "ATO",
            Estimand::Att => "ATT",
        })
    }
}

impl TryFrom<WeightScheme> for Estimand {
    type Error = Error;

    fn try_from(s: WeightScheme) -> Result<Self> {
        match s {
            WeightScheme::Ato => Ok(Estimand::Ato),
            WeightScheme::Att => Ok(Estimand::Att),
            WeightScheme::None => Err(Error::Manifest(
                "the NONE scheme has no associated estimand".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub tau: f64,
    pub se: f64,
    pub p_value: f64,
    pub interval: Interval,
    pub n0: usize,
    pub n1: usize,
    pub theta_hat: f64,
}

/// Σw₁ZY/Σw₁Z − Σw₀(1−Z)Y/Σw₀(1−Z), with `w` already holding each unit's
/// arm-specific weight.
pub fn hajek_wate(y: &[f64], z: &[bool], w: &[f64]) -> Result<f64> {
    let mut num1 = Vec::new();
    let mut den1 = Vec::new();
    let mut num0 = Vec::new();
    let mut den0 = Vec::new();
    for ((&yi, &zi), &wi) in y.iter().zip(z).zip(w) {
        if zi {
            num1.push(wi * yi);
            den1.push(wi);
        } else {
            num0.push(wi * yi);
            den0.push(wi);
        }
    }
    let d1 = pairwise_sum(&den1);
    let d0 = pairwise_sum(&den0);
    if d1 <= 0.0 {
        return Err(Error::ZeroWeight("treated"));
    }
    if d0 <= 0.0 {
        return Err(Error::ZeroWeight("control"));
    }
    Ok(pairwise_sum(&num1) / d1 - pairwise_sum(&num0) / d0)
}

/// Least-squares fit of the outcome on an intercept plus `terms`, using one
/// arm of a subsample.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub treated_arm: bool,
    pub terms: Vec<Term>,
    /// Intercept first.
    pub coefficients: DVector<f64>,
    /// XᵀX over the arm's units.
    pub gram: DMatrix<f64>,
    /// Units used in the fit.
    pub n: usize,
}

impl OutcomeModel {
    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    /// ∂μ/∂γ at a covariate vector: the design row.
    pub fn design_row(&self, covariates: &[f64], names: &[String]) -> Result<DVector<f64>> {
        let mut row = DVector::zeros(self.terms.len() + 1);
        row[0] = 1.0;
        for (k, t) in self.terms.iter().enumerate() {
            row[k + 1] = t.evaluate(covariates, names)?;
        }
        Ok(row)
    }

    pub fn predict(&self, covariates: &[f64], names: &[String]) -> Result<f64> {
        Ok(self.design_row(covariates, names)?.dot(&self.coefficients))
    }
}

/// Fit μ_z by ordinary least squares on the units in `rows` whose treatment
/// equals `treated_arm`.
pub fn fit_outcome_model(
    dataset: &Dataset,
    rows: &[usize],
    treated_arm: bool,
    terms: &[Term],
) -> Result<OutcomeModel> {
    let arm: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| dataset.treated()[i] == treated_arm)
        .collect();
    let k = terms.len() + 1;
    if arm.len() <= k {
        return Err(Error::OutcomeArmTooSmall {
            arm: if treated_arm { "treated" } else { "control" },
            n: arm.len(),
            need: k + 1,
        });
    }
    let x = design_matrix(dataset, &arm, terms, true)?;
    let y = DVector::from_iterator(arm.len(), arm.iter().map(|&i| dataset.units()[i].outcome));
    let collinear = collinear_columns(&x);
    if !collinear.is_empty() {
        let names = collinear
            .into_iter()
            .map(|c| {
                if c == 0 {
                    "(intercept)".to_string()
                } else {
                    terms[c - 1].to_string()
                }
            })
            .collect();
        return Err(Error::RankDeficient(names));
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * &y;
    let coefficients = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(vec!["(solve)".into()]))?;
    Ok(OutcomeModel {
        treated_arm,
        terms: terms.to_vec(),
        coefficients,
        gram: x.transpose() * &x,
        n: arm.len(),
    })
}

/// Columns that are (numerically) linear combinations of earlier columns.
fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for (c, col) in x.column_iter().enumerate() {
        let mut v: DVector<f64> = col.into_owned();
        let norm0 = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            out.push(c);
        } else {
            basis.push(v / norm);
        }
    }
    out
}

/// (τ̂₁, τ̂₀) of the augmented ATT estimator.
pub fn augmented_att_parts(y: &[f64], z: &[bool], e: &[f64], mu0: &[f64]) -> Result<(f64, f64)> {
    let n1 = z.iter().filter(|&&t| t).count();
    if n1 == 0 {
        return Err(Error::ZeroWeight("treated"));
    }
    let treated: Vec<f64> = y
        .iter()
        .zip(z)
        .filter(|(_, &t)| t)
        .map(|(v, _)| *v)
        .collect();
    let aug: Vec<f64> = (0..y.len())
        .map(|i| {
            let zi = f64::from(u8::from(z[i]));
            (y[i] * (1.0 - zi) * e[i] + mu0[i] * (zi - e[i])) / (1.0 - e[i])
        })
        .collect();
    let n1 = n1 as f64;
    Ok((pairwise_sum(&treated) / n1, pairwise_sum(&aug) / n1))
}

/// ΣYZ/ΣZ − (1/ΣZ)·Σ[Y(1−Z)ê + μ̂₀(Z − ê)] / (1 − ê).
pub fn augmented_att(y: &[f64], z: &[bool], e: &[f64], mu0: &[f64]) -> Result<f64> {
    let (t1, t0) = augmented_att_parts(y, z, e, mu0)?;
    Ok(t1 - t0)
}

/// (τ̂₁, τ̂₀) of the augmented ATO estimator.
pub fn augmented_ato_parts(
    y: &[f64],
    z: &[bool],
    e: &[f64],
    mu0: &[f64],
    mu1: &[f64],
) -> Result<(f64, f64)> {
    let n1 = z.iter().filter(|&&t| t).count();
    if n1 == 0 {
        return Err(Error::ZeroWeight("treated"));
    }
    if n1 == z.len() {
        return Err(Error::ZeroWeight("control"));
    }
    let h: Vec<f64> = e.iter().map(|&v| v * (1.0 - v)).collect();
    let denom = pairwise_sum(&h);
    if denom <= 0.0 {
        return Err(Error::ZeroWeight("overlap"));
    }
    let (mut a1, mut a0) = (Vec::with_capacity(y.len()), Vec::with_capacity(y.len()));
    for i in 0..y.len() {
        let zi = f64::from(u8::from(z[i]));
        a1.push((1.0 - e[i]) * (zi * y[i] - (zi - e[i]) * mu1[i]));
        a0.push(e[i] * ((1.0 - zi) * y[i] + (zi - e[i]) * mu0[i]));
    }
    Ok((pairwise_sum(&a1) / denom, pairwise_sum(&a0) / denom))
}

/// Σ(1−ê)[ZY − (Z−ê)μ̂₁]/Σê(1−ê) − Σê[(1−Z)Y + (Z−ê)μ̂₀]/Σê(1−ê).
pub fn augmented_ato(y: &[f64], z: &[bool], e: &[f64], mu0: &[f64], mu1: &[f64]) -> Result<f64> {
    let (t1, t0) = augmented_ato_parts(y, z, e, mu0, mu1)?;
    Ok(t1 - t0)
}

/// Two-sided normal p-value.
pub fn p_value(tau: f64, se: f64) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::NonPositiveSe);
    }
    Ok(normal::two_sided_p(tau / se))
}
