//! Sandwich (M-estimation) standard errors for the augmented ATT and ATO
//! estimators, propagating the probit and outcome-model estimation error.
//!
//! With D the sample mean derivative of an estimating function, the
//! influence of unit i is
//!
//! ```text
//! I_i = U1_i - U0_i - H_ηᵀ E_ηη⁻¹ S_i(η) - H_γ1ᵀ E_γ1⁻¹ S_i(γ1) - H_γ0ᵀ E_γ0⁻¹ S_i(γ0)
//! ```
//!
//! where H_η = D0_η − D1_η, H_γ1 = −D1_γ and H_γ0 = D0_γ (for ATT, U1 does
//! not depend on η or γ1 and those terms vanish). The variance is
//! (nθ̂)⁻² Σ I_i².

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{augmented_ato_parts, augmented_att_parts, Estimand, OutcomeModel};
use crate::numeric::{column_sums, pairwise_sum, spd_inverse};
use crate::probit::{FittedProbit, PropensityVector};

/// Which probit score rows enter the η correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScope {
    /// Scores of subsample units only, normalized by n.
    #[default]
    Subsample,
    /// Scores of every unit the probit was fitted on, normalized by N.
    FullSample,
}

/// Outcome-model quantities evaluated on the subsample.
#[derive(Debug, Clone)]
pub struct ArmFit {
    pub mu: Vec<f64>,
    /// ∂μ/∂γ per unit.
    pub design: Vec<DVector<f64>>,
    /// S_i(γ) = 1(Z_i = z) x_i (Y_i − μ_i); zero rows for the other arm.
    pub scores: Vec<DVector<f64>>,
    /// E_γγ: XᵀX of the arm divided by the subsample size.
    pub info: DMatrix<f64>,
}

impl ArmFit {
    pub fn new(model: &OutcomeModel, dataset: &Dataset, rows: &[usize]) -> Result<Self> {
        let names = dataset.covariate_names();
        let k = model.n_coefficients();
        let mut mu = Vec::with_capacity(rows.len());
        let mut design = Vec::with_capacity(rows.len());
        let mut scores = Vec::with_capacity(rows.len());
        for &i in rows {
            let unit = &dataset.units()[i];
            let x = model.design_row(&unit.covariates, names)?;
            let m = x.dot(&model.coefficients);
            scores.push(if dataset.treated()[i] == model.treated_arm {
                &x * (unit.outcome - m)
            } else {
                DVector::zeros(k)
            });
            mu.push(m);
            design.push(x);
        }
        Ok(Self {
            mu,
            design,
            scores,
            info: &model.gram / rows.len() as f64,
        })
    }
}

/// Everything the sandwich needs, restricted to one subsample.
#[derive(Debug, Clone)]
pub struct VarianceInput {
    pub y: Vec<f64>,
    pub z: Vec<bool>,
    pub e: Vec<f64>,
    pub e_grad: Vec<DVector<f64>>,
    /// S_i(η̂) for subsample units.
    pub eta_scores: Vec<DVector<f64>>,
    /// S_k(η̂) for every unit of the probit fit.
    pub full_eta_scores: Vec<DVector<f64>>,
    /// E_ηη: per-observation average information over the probit sample.
    pub eta_info: DMatrix<f64>,
    pub mu0: ArmFit,
    pub mu1: Option<ArmFit>,
    pub scope: ScoreScope,
    /// Position of each subsample unit within the probit sample.
    pub rows: Vec<usize>,
}

impl VarianceInput {
    /// `rows` index the subsample within `dataset`, which must be the data
    /// the probit was fitted on.
    pub fn new(
        dataset: &Dataset,
        rows: &[usize],
        fit: &FittedProbit,
        ps: &PropensityVector,
        mu0: &OutcomeModel,
        mu1: Option<&OutcomeModel>,
        scope: ScoreScope,
    ) -> Result<Self> {
        if fit.per_obs_scores.len() != dataset.len() || ps.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                expected: dataset.len(),
                found: fit.per_obs_scores.len().min(ps.len()),
            });
        }
        Ok(Self {
            y: rows.iter().map(|&i| dataset.units()[i].outcome).collect(),
            z: rows.iter().map(|&i| dataset.treated()[i]).collect(),
            e: rows.iter().map(|&i| ps.e_hat[i]).collect(),
            e_grad: rows.iter().map(|&i| ps.gradient[i].clone()).collect(),
            eta_scores: rows
                .iter()
                .map(|&i| fit.per_obs_scores[i].clone())
                .collect(),
            full_eta_scores: fit.per_obs_scores.clone(),
            eta_info: fit.mean_information(),
            mu0: ArmFit::new(mu0, dataset, rows)?,
            mu1: mu1.map(|m| ArmFit::new(m, dataset, rows)).transpose()?,
            scope,
            rows: rows.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone)]
pub struct InfluenceDecomposition {
    pub estimand: Estimand,
    pub scope: ScoreScope,
    pub tau1: f64,
    pub tau0: f64,
    pub theta_hat: f64,
    pub u1: Vec<f64>,
    pub u0: Vec<f64>,
    /// Î_i over the subsample, with the η term built from subsample scores.
    pub influence: Vec<f64>,
    pub h_eta: DVector<f64>,
    pub h_gamma0: DVector<f64>,
    pub h_gamma1: Option<DVector<f64>>,
    pub eta_info_inv: DMatrix<f64>,
    pub gamma0_info_inv: DMatrix<f64>,
    pub gamma1_info_inv: Option<DMatrix<f64>>,
    pub se: f64,
    /// Standard error with every H set to zero.
    pub naive_se: f64,
}

impl InfluenceDecomposition {
    pub fn tau(&self) -> f64 {
        self.tau1 - self.tau0
    }

    pub fn n(&self) -> usize {
        self.influence.len()
    }

    pub fn variance(&self) -> f64 {
        self.se * self.se
    }

    /// Plain-text audit dump: θ̂, H-vectors and the first ten influence values.
    pub fn audit_text(&self) -> String {
        let fmt_vec = |v: &DVector<f64>| {
            v.iter()
                .map(|x| format!("{x:.10e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = format!(
            "estimand={}\nscope={:?}\nn={}\ntau1={:.10e}\ntau0={:.10e}\ntheta_hat={:.10e}\nse={:.10e}\nnaive_se={:.10e}\nh_eta={}\nh_gamma0={}\n",
            self.estimand,
            self.scope,
            self.n(),
            self.tau1,
            self.tau0,
            self.theta_hat,
            self.se,
            self.naive_se,
            fmt_vec(&self.h_eta),
            fmt_vec(&self.h_gamma0),
        );
        if let Some(h) = &self.h_gamma1 {
            s.push_str(&format!("h_gamma1={}\n", fmt_vec(h)));
        }
        let head: Vec<String> = self
            .influence
            .iter()
            .take(10)
            .map(|x| format!("{x:.10e}"))
            .collect();
        s.push_str(&format!("influence_head={}\n", head.join(" ")));
        s
    }
}

fn mean_rows(rows: &[DVector<f64>], dim: usize) -> DVector<f64> {
    column_sums(rows, dim) / rows.len() as f64
}

fn correction(h: &DVector<f64>, info_inv: &DMatrix<f64>, scores: &[DVector<f64>]) -> Vec<f64> {
    let w = info_inv * h;
    scores.par_iter().map(|s| w.dot(s)).collect()
}

struct Pieces {
    tau1: f64,
    tau0: f64,
    theta: f64,
    u1: Vec<f64>,
    u0: Vec<f64>,
    h_eta: DVector<f64>,
    h_gamma0: DVector<f64>,
    h_gamma1: Option<DVector<f64>>,
}

fn att_pieces(inp: &VarianceInput) -> Result<Pieces> {
    let (y, z, e, mu0) = (&inp.y, &inp.z, &inp.e, &inp.mu0.mu);
    let (tau1, tau0) = augmented_att_parts(y, z, e, mu0)?;
    let n = inp.n();
    let zf = |i: usize| f64::from(u8::from(z[i]));
    let u1: Vec<f64> = (0..n).map(|i| zf(i) * (y[i] - tau1)).collect();
    let u0: Vec<f64> = (0..n)
        .map(|i| {
            (y[i] * (1.0 - zf(i)) * e[i] + mu0[i] * (zf(i) - e[i])) / (1.0 - e[i]) - tau0 * zf(i)
        })
        .collect();
    let d_eta: Vec<DVector<f64>> = (0..n)
        .map(|i| &inp.e_grad[i] * ((y[i] - mu0[i]) * (1.0 - zf(i)) / (1.0 - e[i]).powi(2)))
        .collect();
    let d_gamma: Vec<DVector<f64>> = (0..n)
        .map(|i| &inp.mu0.design[i] * ((zf(i) - e[i]) / (1.0 - e[i])))
        .collect();
    Ok(Pieces {
        tau1,
        tau0,
        theta: pairwise_sum(e) / n as f64,
        u1,
        u0,
        h_eta: mean_rows(&d_eta, inp.eta_info.nrows()),
        h_gamma0: mean_rows(&d_gamma, inp.mu0.info.nrows()),
        h_gamma1: None,
    })
}

fn ato_pieces(inp: &VarianceInput) -> Result<Pieces> {
    let arm1 = inp
        .mu1
        .as_ref()
        .ok_or_else(|| Error::Manifest("ATO variance needs a treated-arm outcome model".into()))?;
    let (y, z, e, mu0, mu1) = (&inp.y, &inp.z, &inp.e, &inp.mu0.mu, &arm1.mu);
    let (tau1, tau0) = augmented_ato_parts(y, z, e, mu0, mu1)?;
    let n = inp.n();
    let zf = |i: usize| f64::from(u8::from(z[i]));
    let u1: Vec<f64> = (0..n)
        .map(|i| (1.0 - e[i]) * (zf(i) * y[i] - (zf(i) - e[i]) * mu1[i] - e[i] * tau1))
        .collect();
    let u0: Vec<f64> = (0..n)
        .map(|i| {
            e[i] * ((1.0 - zf(i)) * y[i] + (zf(i) - e[i]) * mu0[i]) - e[i] * (1.0 - e[i]) * tau0
        })
        .collect();
    // H_η = D0_η − D1_η, assembled per unit.
    let d_eta: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let d1 =
                zf(i) * (mu1[i] - y[i]) + mu1[i] * (1.0 - 2.0 * e[i]) + tau1 * (2.0 * e[i] - 1.0);
            let d0 =
                (1.0 - zf(i)) * y[i] + mu0[i] * (zf(i) - 2.0 * e[i]) - tau0 * (1.0 - 2.0 * e[i]);
            &inp.e_grad[i] * (d0 - d1)
        })
        .collect();
    let d_gamma1: Vec<DVector<f64>> = (0..n)
        .map(|i| &arm1.design[i] * ((1.0 - e[i]) * (zf(i) - e[i])))
        .collect();
    let d_gamma0: Vec<DVector<f64>> = (0..n)
        .map(|i| &inp.mu0.design[i] * (e[i] * (zf(i) - e[i])))
        .collect();
    let h: Vec<f64> = e.iter().map(|&v| v * (1.0 - v)).collect();
    Ok(Pieces {
        tau1,
        tau0,
        theta: pairwise_sum(&h) / n as f64,
        u1,
        u0,
        h_eta: mean_rows(&d_eta, inp.eta_info.nrows()),
        h_gamma0: mean_rows(&d_gamma0, inp.mu0.info.nrows()),
        h_gamma1: Some(mean_rows(&d_gamma1, arm1.info.nrows())),
    })
}

fn assemble(inp: &VarianceInput, estimand: Estimand, p: Pieces) -> Result<InfluenceDecomposition> {
    let n = inp.n();
    let eta_info_inv = spd_inverse(&inp.eta_info, "probit")?;
    let gamma0_info_inv = spd_inverse(&inp.mu0.info, "control outcome model")?;
    let gamma1_info_inv = match (&p.h_gamma1, &inp.mu1) {
        (Some(_), Some(arm)) => Some(spd_inverse(&arm.info, "treated outcome model")?),
        _ => None,
    };

    let c_eta = correction(&p.h_eta, &eta_info_inv, &inp.eta_scores);
    let c_g0 = correction(&p.h_gamma0, &gamma0_info_inv, &inp.mu0.scores);
    let c_g1 = match (&p.h_gamma1, &gamma1_info_inv, &inp.mu1) {
        (Some(h), Some(inv), Some(arm)) => correction(h, inv, &arm.scores),
        _ => vec![0.0; n],
    };

    let base: Vec<f64> = (0..n)
        .map(|i| p.u1[i] - p.u0[i] - c_g1[i] - c_g0[i])
        .collect();
    let influence: Vec<f64> = (0..n).map(|i| base[i] - c_eta[i]).collect();
    let scale = n as f64 * p.theta;

    let variance = match inp.scope {
        ScoreScope::Subsample => {
            let sq: Vec<f64> = influence.iter().map(|v| v * v).collect();
            pairwise_sum(&sq) / (scale * scale)
        }
        ScoreScope::FullSample => {
            // Every probit unit contributes −c_k/(Nθ); subsample units add
            // base_i/(nθ) on top.
            let big_n = inp.full_eta_scores.len() as f64;
            let c_full = correction(&p.h_eta, &eta_info_inv, &inp.full_eta_scores);
            let mut phi: Vec<f64> = c_full.iter().map(|c| -c / (big_n * p.theta)).collect();
            for (pos, &k) in inp.rows.iter().enumerate() {
                phi[k] += base[pos] / scale;
            }
            let sq: Vec<f64> = phi.iter().map(|v| v * v).collect();
            pairwise_sum(&sq)
        }
    };
    let naive: Vec<f64> = (0..n).map(|i| (p.u1[i] - p.u0[i]).powi(2)).collect();
    let naive_var = pairwise_sum(&naive) / (scale * scale);
    if !variance.is_finite() || !naive_var.is_finite() {
        return Err(Error::NonPositiveSe);
    }

    Ok(InfluenceDecomposition {
        estimand,
        scope: inp.scope,
        tau1: p.tau1,
        tau0: p.tau0,
        theta_hat: p.theta,
        u1: p.u1,
        u0: p.u0,
        influence,
        h_eta: p.h_eta,
        h_gamma0: p.h_gamma0,
        h_gamma1: p.h_gamma1,
        eta_info_inv,
        gamma0_info_inv,
        gamma1_info_inv,
        se: variance.max(0.0).sqrt(),
        naive_se: naive_var.max(0.0).sqrt(),
    })
}

fn check_arms(inp: &VarianceInput) -> Result<()> {
    let n1 = inp.z.iter().filter(|&&t| t).count();
    if n1 == 0 {
        return Err(Error::ZeroWeight("treated"));
    }
    if n1 == inp.n() {
        return Err(Error::ZeroWeight("control"));
    }
    Ok(())
}

pub fn sandwich_att(inp: &VarianceInput) -> Result<InfluenceDecomposition> {
    check_arms(inp)?;
    let p = att_pieces(inp)?;
    assemble(inp, Estimand::Att, p)
}

pub fn sandwich_ato(inp: &VarianceInput) -> Result<InfluenceDecomposition> {
    check_arms(inp)?;
    let p = ato_pieces(inp)?;
    assemble(inp, Estimand::Ato, p)
}

pub fn sandwich(inp: &VarianceInput, estimand: Estimand) -> Result<InfluenceDecomposition> {
    match estimand {
        Estimand::Att => sandwich_att(inp),
        Estimand::Ato => sandwich_ato(inp),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceRow {
    /// Position within the subsample.
    pub position: usize,
    pub influence: f64,
    pub flagged: bool,
}

/// Flags units whose |Î_i| exceeds five times the median |Î|.
pub fn influence_diagnostics(decomp: &InfluenceDecomposition) -> Vec<InfluenceRow> {
    let mut abs: Vec<f64> = decomp.influence.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let median = crate::numeric::quantile_sorted(&abs, 0.5);
    decomp
        .influence
        .iter()
        .enumerate()
        .map(|(position, &influence)| InfluenceRow {
            position,
            influence,
            flagged: influence.abs() > 5.0 * median,
        })
        .collect()
}
