//! Covariate balance in propensity intervals and the interval searches.
//!
//! Balance is measured by the standardized bias: the weighted difference in
//! arm means over the unweighted two-sample standard error. Intervals are
//! open on both ends.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, sample_variance};
use crate::probit::{PropensityVector, PS_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Overlap weights: w₁ = 1 - e, w₀ = e.
    #[serde(rename = "ATO")]
    Ato,
    /// Treated weights: w₁ = 1, w₀ = e / (1 - e).
    #[serde(rename = "ATT")]
    Att,
    #[serde(rename = "NONE")]
    None,
}

impl WeightScheme {
    #[inline]
    pub fn weight(self, e: f64, treated: bool) -> f64 {
        match (self, treated) {
            (WeightScheme::Ato, true) => 1.0 - e,
            (WeightScheme::Ato, false) => e,
            (WeightScheme::Att, true) => 1.0,
            (WeightScheme::Att, false) => e / (1.0 - e),
            (WeightScheme::None, _) => 1.0,
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScheme::Ato => "ATO",
            WeightScheme::Att => "ATT",
            WeightScheme::None => "NONE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: Vec<f64>,
    /// Controls whose ATT weight comes from a clamped propensity score.
    pub extreme: Vec<usize>,
}

pub fn compute_weights(e_hat: &[f64], treated: &[bool], scheme: WeightScheme) -> Weights {
    let mut extreme = Vec::new();
    let w = e_hat
        .iter()
        .zip(treated)
        .enumerate()
        .map(|(i, (&e, &t))| {
            if scheme == WeightScheme::Att && !t && e >= 1.0 - PS_CLAMP {
                extreme.push(i);
            }
            scheme.weight(e, t)
        })
        .collect();
    Weights { w, extreme }
}

fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let num: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
    pairwise_sum(&num) / pairwise_sum(w)
}

/// Weighted treated-minus-control mean difference over the unweighted
/// standard error `sqrt(s₀²/n₀ + s₁²/n₁)`.
pub fn standardized_bias(x: &[f64], treated: &[bool], w: &[f64]) -> Result<f64> {
    let (mut x1, mut w1, mut x0, mut w0) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((&v, &t), &wi) in x.iter().zip(treated).zip(w) {
        if t {
            x1.push(v);
            w1.push(wi);
        } else {
            x0.push(v);
            w0.push(wi);
        }
    }
    let s1 = sample_variance(&x1).ok_or(Error::ArmTooSmall {
        arm: "treated",
        n: x1.len(),
        need: 2,
    })?;
    let s0 = sample_variance(&x0).ok_or(Error::ArmTooSmall {
        arm: "control",
        n: x0.len(),
        need: 2,
    })?;
    let se = (s0 / x0.len() as f64 + s1 / x1.len() as f64).sqrt();
    if se == 0.0 {
        return Err(Error::DegenerateCovariate);
    }
    Ok((weighted_mean(&x1, &w1) - weighted_mean(&x0, &w0)) / se)
}

/// Open propensity window (e_min, e_max).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub e_min: f64,
    pub e_max: f64,
}

impl Interval {
    pub fn new(e_min: f64, e_max: f64) -> Result<Self> {
        if !(0.0 < e_min && e_min < e_max && e_max < 1.0) {
            return Err(Error::InvalidInterval(e_min, e_max));
        }
        Ok(Self { e_min, e_max })
    }

    pub fn symmetric(d: f64) -> Result<Self> {
        Self::new(round_grid(0.5 - d), round_grid(0.5 + d))
    }

    #[inline]
    pub fn contains(&self, e: f64) -> bool {
        self.e_min < e && e < self.e_max
    }

    pub fn covers(&self, other: &Interval) -> bool {
        self.e_min <= other.e_min && self.e_max >= other.e_max
    }
}

/// Positions of units whose score lies inside the interval.
pub fn subsample(e_hat: &[f64], interval: &Interval) -> Vec<usize> {
    e_hat
        .iter()
        .enumerate()
        .filter(|(_, &e)| interval.contains(e))
        .map(|(i, _)| i)
        .collect()
}

/// Keeps grid arithmetic like `0.5 - 0.3` from drifting off the grid.
fn round_grid(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub interval: Interval,
    pub scheme: WeightScheme,
    pub n0: usize,
    pub n1: usize,
    /// Per covariate; `None` when the covariate is constant in both arms and
    /// therefore left out of the criterion.
    pub sb: Vec<Option<f64>>,
    pub max_abs_sb: f64,
    pub balanced: bool,
}

impl BalanceReport {
    pub fn n(&self) -> usize {
        self.n0 + self.n1
    }

    pub fn degenerate(&self) -> Vec<usize> {
        self.sb
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub d_min: f64,
    pub d_max: f64,
    pub d_step: f64,
    /// |SB| must stay strictly below this value.
    pub critical: f64,
    /// Minimum units per arm for an interval to be considered.
    pub min_arm: usize,
    /// Increment for each one-sided extension.
    pub asym_step: f64,
    /// Lower bound for e_min in the asymmetric search.
    pub e_floor: f64,
    /// Upper bound for e_max in the asymmetric search.
    pub e_ceiling: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            d_min: 0.05,
            d_max: 0.49,
            d_step: 0.01,
            critical: 1.96,
            min_arm: 5,
            asym_step: 0.01,
            e_floor: 0.01,
            e_ceiling: 0.99,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.d_min
            && self.d_min < self.d_max
            && self.d_max < 0.5
            && self.d_step > 0.0
            && self.asym_step > 0.0
            && 0.0 < self.e_floor
            && self.e_floor < 0.5
            && 0.5 < self.e_ceiling
            && self.e_ceiling < 1.0
            && self.critical > 0.0
            && self.min_arm >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGrid(format!("{self:?}")))
        }
    }

    /// Ascending bandwidth grid from `d_min` to `d_max`.
    pub fn grid(&self) -> Vec<f64> {
        let steps = ((self.d_max - self.d_min) / self.d_step + 1e-9).floor() as usize;
        (0..=steps)
            .map(|k| round_grid(self.d_min + k as f64 * self.d_step))
            .collect()
    }
}

/// Covariate matrix and treatment in a form the searches can share.
#[derive(Debug, Clone)]
pub struct BalanceInput<'a> {
    pub covariates: Vec<Vec<f64>>,
    pub treated: &'a [bool],
    pub e_hat: &'a [f64],
}

impl<'a> BalanceInput<'a> {
    pub fn new(dataset: &'a Dataset, e_hat: &'a PropensityVector) -> Self {
        let covariates = (0..dataset.covariate_names().len())
            .map(|j| dataset.covariate(j))
            .collect();
        Self {
            covariates,
            treated: dataset.treated(),
            e_hat: &e_hat.e_hat,
        }
    }
}

/// Standardized bias of every covariate on the interval's subsample, with
/// weights computed on that subsample.
pub fn balance_table(
    input: &BalanceInput<'_>,
    interval: Interval,
    scheme: WeightScheme,
    critical: f64,
    min_arm: usize,
) -> Result<BalanceReport> {
    let rows = subsample(input.e_hat, &interval);
    let z: Vec<bool> = rows.iter().map(|&i| input.treated[i]).collect();
    let n1 = z.iter().filter(|&&t| t).count();
    let n0 = z.len() - n1;
    let need = min_arm.max(2);
    if n1 < need {
        return Err(Error::ArmTooSmall {
            arm: "treated",
            n: n1,
            need,
        });
    }
    if n0 < need {
        return Err(Error::ArmTooSmall {
            arm: "control",
            n: n0,
            need,
        });
    }
    let e: Vec<f64> = rows.iter().map(|&i| input.e_hat[i]).collect();
    let w = compute_weights(&e, &z, scheme).w;
    let mut sb = Vec::with_capacity(input.covariates.len());
    for col in &input.covariates {
        let x: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
        match standardized_bias(&x, &z, &w) {
            Ok(v) => sb.push(Some(v)),
            Err(Error::DegenerateCovariate) => {
                // Constant within each arm: only a difference in the two
                // constants counts as imbalance.
                let (c1, c0) = arm_constants(&x, &z);
                if c1 == c0 {
                    sb.push(None);
                } else {
                    sb.push(Some(if c1 > c0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }));
                }
            }
            Err(other) => return Err(other),
        }
    }
    let max_abs_sb = sb.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BalanceReport {
        interval,
        scheme,
        n0,
        n1,
        balanced: sb.iter().flatten().all(|v| v.abs() < critical),
        sb,
        max_abs_sb,
    })
}

fn arm_constants(x: &[f64], z: &[bool]) -> (f64, f64) {
    let c1 = x
        .iter()
        .zip(z)
        .find(|(_, &t)| t)
        .map(|(v, _)| *v)
        .unwrap_or(f64::NAN);
    let c0 = x
        .iter()
        .zip(z)
        .find(|(_, &t)| !t)
        .map(|(v, _)| *v)
        .unwrap_or(f64::NAN);
    (c1, c0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub d: f64,
    /// `None` when an arm is below `min_arm`.
    pub report: Option<BalanceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSearch {
    pub scheme: WeightScheme,
    pub trace: Vec<GridPoint>,
    /// Largest d reached before the first imbalanced feasible grid point.
    pub selected: Option<f64>,
}

impl SymmetricSearch {
    pub fn selected_report(&self) -> Option<&BalanceReport> {
        let d = self.selected?;
        self.trace
            .iter()
            .find(|g| g.d == d)
            .and_then(|g| g.report.as_ref())
    }

    /// Every balanced grid point, selected or not.
    pub fn balanced(&self) -> impl Iterator<Item = &GridPoint> {
        self.trace
            .iter()
            .filter(|g| g.report.as_ref().is_some_and(|r| r.balanced))
    }
}

pub fn search_symmetric(
    input: &BalanceInput<'_>,
    scheme: WeightScheme,
    settings: &SearchSettings,
) -> Result<SymmetricSearch> {
    settings.validate()?;
    let trace = settings
        .grid()
        .into_par_iter()
        .map(|d| {
            let interval = Interval::symmetric(d)?;
            match balance_table(input, interval, scheme, settings.critical, settings.min_arm) {
                Ok(r) => Ok(GridPoint { d, report: Some(r) }),
                Err(Error::ArmTooSmall { .. }) => Ok(GridPoint { d, report: None }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut selected = None;
    for g in &trace {
        match &g.report {
            None => continue,
            Some(r) if r.balanced => selected = Some(g.d),
            Some(_) => break,
        }
    }
    Ok(SymmetricSearch {
        scheme,
        trace,
        selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricStep {
    pub side: Side,
    pub report: BalanceReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricSearch {
    pub start: BalanceReport,
    /// Accepted extensions in order.
    pub steps: Vec<AsymmetricStep>,
}

impl AsymmetricSearch {
    pub fn final_report(&self) -> &BalanceReport {
        self.steps.last().map(|s| &s.report).unwrap_or(&self.start)
    }

    pub fn final_interval(&self) -> Interval {
        self.final_report().interval
    }

    /// Start followed by every accepted interval.
    pub fn path(&self) -> impl Iterator<Item = &BalanceReport> {
        std::iter::once(&self.start).chain(self.steps.iter().map(|s| &s.report))
    }
}

/// Greedy one-sided widening from a balanced start. Each round tries
/// lowering e_min and raising e_max by one step; the balanced candidate with
/// the smaller max |SB| wins, ties going to the left (control) side.
pub fn search_asymmetric(
    input: &BalanceInput<'_>,
    scheme: WeightScheme,
    start: Interval,
    settings: &SearchSettings,
) -> Result<AsymmetricSearch> {
    settings.validate()?;
    let start = balance_table(input, start, scheme, settings.critical, settings.min_arm)?;
    let mut current = start.interval;
    let mut steps = Vec::new();
    let eps = 1e-12;
    loop {
        let left = (current.e_min > settings.e_floor + eps).then(|| {
            let lo = round_grid((current.e_min - settings.asym_step).max(settings.e_floor));
            (
                Side::Left,
                Interval {
                    e_min: lo,
                    e_max: current.e_max,
                },
            )
        });
        let right = (current.e_max < settings.e_ceiling - eps).then(|| {
            let hi = round_grid((current.e_max + settings.asym_step).min(settings.e_ceiling));
            (
                Side::Right,
                Interval {
                    e_min: current.e_min,
                    e_max: hi,
                },
            )
        });
        let mut best: Option<AsymmetricStep> = None;
        for (side, interval) in left.into_iter().chain(right) {
            let report =
                match balance_table(input, interval, scheme, settings.critical, settings.min_arm) {
                    Ok(r) => r,
                    Err(Error::ArmTooSmall { .. }) => continue,
                    Err(e) => return Err(e),
                };
            if !report.balanced {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => report.max_abs_sb < b.report.max_abs_sb,
            };
            if better {
                best = Some(AsymmetricStep { side, report });
            }
        }
        match best {
            Some(step) => {
                current = step.report.interval;
                steps.push(step);
            }
            None => break,
        }
    }
    Ok(AsymmetricSearch { start, steps })
}
