//! Synthetic data with known truth, Monte Carlo studies and the bootstrap.
//!
//! Every random draw comes from a ChaCha8 stream keyed by (seed, stream id),
//! so replication r of a study is the same whether it runs alone, in a
//! range, or on any number of threads.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::Interval;
use crate::dataset::{CategoryScale, Dataset, UnitRecord};
use crate::error::{Error, Result};
use crate::estimate::Estimand;
use crate::normal;
use crate::numeric::{mean, pairwise_sum, sample_variance};
use crate::pipeline::{
    choose_interval, estimate_interval, fit_propensity, resolve_terms, IntervalRule,
    PipelineSettings,
};
use crate::terms::Term;

const BOOTSTRAP_STREAM: u64 = 1 << 62;
const TRUTH_STREAM: u64 = 1 << 63;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// μ(x) = intercept + Σ coefficient·term(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeFn {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default)]
    pub coefficients: Vec<f64>,
}

impl OutcomeFn {
    pub fn constant(c: f64) -> Self {
        Self {
            intercept: c,
            terms: Vec::new(),
            coefficients: Vec::new(),
        }
    }

    fn compile(&self, names: &[String]) -> Result<CompiledFn> {
        if self.terms.len() != self.coefficients.len() {
            return Err(Error::Simulation(format!(
                "outcome function has {} terms but {} coefficients",
                self.terms.len(),
                self.coefficients.len()
            )));
        }
        Ok(CompiledFn {
            intercept: self.intercept,
            terms: crate::terms::parse_terms(&self.terms, names)?,
            coefficients: self.coefficients.clone(),
        })
    }
}

struct CompiledFn {
    intercept: f64,
    terms: Vec<Term>,
    coefficients: Vec<f64>,
}

impl CompiledFn {
    fn eval(&self, x: &[f64], names: &[String]) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .zip(&self.coefficients)
                .map(|(t, c)| c * t.evaluate(x, names).unwrap_or(f64::NAN))
                .sum::<f64>()
    }
}

/// Data-generating process: X ~ N(0, Σ), R* = Xβ + ε, categories by
/// cutoffs, Y(z) = μ_z(X) + noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub beta: Vec<f64>,
    pub cutoffs: Vec<f64>,
    /// Zero-based index of the first treated category.
    pub threshold: usize,
    pub mu0: OutcomeFn,
    pub mu1: OutcomeFn,
    pub noise_sd: f64,
    /// Covariate correlation matrix; identity when absent.
    #[serde(default)]
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Covariates left out of the fitted probit.
    #[serde(default)]
    pub ps_omit: Vec<String>,
    /// Terms of the fitted outcome models; the union of the true terms when
    /// absent.
    #[serde(default)]
    pub outcome_fit_terms: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

impl DgpConfig {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.p()).map(|k| format!("x{k}")).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        (1..=self.cutoffs.len() + 1)
            .map(|k| format!("c{k}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Simulation(m));
        if self.n < 2 {
            return bad(format!("n = {} is too small", self.n));
        }
        if self.cutoffs.is_empty() || self.cutoffs.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("cutoffs must be non-empty and strictly increasing".into());
        }
        if self.threshold == 0 || self.threshold > self.cutoffs.len() {
            return bad(format!(
                "threshold index {} outside the scale",
                self.threshold
            ));
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be nonnegative".into());
        }
        let names = self.covariate_names();
        for c in &self.ps_omit {
            if !names.contains(c) {
                return Err(Error::UnknownCovariate(c.clone()));
            }
        }
        self.mu0.compile(&names)?;
        self.mu1.compile(&names)?;
        self.chol()?;
        Ok(())
    }

    fn chol(&self) -> Result<Option<DMatrix<f64>>> {
        let Some(rows) = &self.correlation else {
            return Ok(None);
        };
        let p = self.p();
        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
            return Err(Error::Simulation("correlation matrix must be p × p".into()));
        }
        let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
        m.cholesky()
            .map(|c| Some(c.l()))
            .ok_or_else(|| Error::Simulation("correlation matrix is not positive definite".into()))
    }

    /// Apply this config's misspecification switches to pipeline settings.
    pub fn fit_settings(&self, base: &PipelineSettings) -> PipelineSettings {
        let mut s = base.clone();
        s.probit_terms = self
            .covariate_names()
            .into_iter()
            .filter(|c| !self.ps_omit.contains(c))
            .collect();
        s.outcome_terms = match &self.outcome_fit_terms {
            Some(t) => t.clone(),
            // Both functions constant gives an empty union, which the
            // pipeline reads as every covariate entering linearly.
            None => {
                let mut t: Vec<String> = Vec::new();
                for term in self.mu0.terms.iter().chain(&self.mu1.terms) {
                    if !t.contains(term) {
                        t.push(term.clone());
                    }
                }
                t
            }
        };
        s
    }

    /// True P(Z = 1 | x).
    pub fn true_propensity(&self, x: &[f64]) -> f64 {
        let xb: f64 = x.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        normal::sf(self.cutoffs[self.threshold - 1] - xb)
    }
}

/// Potential outcomes and true propensities; never passed to estimation
/// code.
#[derive(Debug, Clone)]
pub struct Truth {
    y0: Vec<f64>,
    y1: Vec<f64>,
    e: Vec<f64>,
}

impl Truth {
    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn propensity(&self) -> &[f64] {
        &self.e
    }

    pub fn unit_effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: Truth,
}

fn draw_covariates(rng: &mut ChaCha8Rng, p: usize, chol: Option<&DMatrix<f64>>) -> Vec<f64> {
    let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    match chol {
        None => z,
        Some(l) => (l * DVector::from_vec(z)).data.into(),
    }
}

/// One dataset from `config`, using `config.seed`.
pub fn generate(config: &DgpConfig) -> Result<Generated> {
    generate_stream(config, 0)
}

/// One dataset from stream `stream` of `config.seed`.
pub fn generate_stream(config: &DgpConfig, stream: u64) -> Result<Generated> {
    config.validate()?;
    let names = config.covariate_names();
    let labels = config.labels();
    let scale = CategoryScale::new(labels.clone(), &labels[config.threshold])?;
    let chol = config.chol()?;
    let mu0 = config.mu0.compile(&names)?;
    let mu1 = config.mu1.compile(&names)?;
    let mut rng = stream_rng(config.seed, stream);
    let mut units = Vec::with_capacity(config.n);
    let mut truth = Truth {
        y0: Vec::with_capacity(config.n),
        y1: Vec::with_capacity(config.n),
        e: Vec::with_capacity(config.n),
    };
    let mut counts = vec![0usize; labels.len()];
    for i in 0..config.n {
        let x = draw_covariates(&mut rng, config.p(), chol.as_ref());
        let eps: f64 = rng.sample(StandardNormal);
        let xb: f64 = x.iter().zip(&config.beta).map(|(a, b)| a * b).sum();
        let latent = xb + eps;
        let category = config.cutoffs.iter().take_while(|&&u| latent > u).count();
        let n0: f64 = rng.sample(StandardNormal);
        let n1: f64 = rng.sample(StandardNormal);
        let y0 = mu0.eval(&x, &names) + config.noise_sd * n0;
        let y1 = mu1.eval(&x, &names) + config.noise_sd * n1;
        let treated = category >= config.threshold;
        counts[category] += 1;
        truth.y0.push(y0);
        truth.y1.push(y1);
        truth.e.push(config.true_propensity(&x));
        units.push(UnitRecord {
            id: format!("u{}", i + 1),
            category,
            outcome: if treated { y1 } else { y0 },
            covariates: x,
        });
    }
    if counts.contains(&0) {
        let freq: Vec<String> = labels
            .iter()
            .zip(&counts)
            .map(|(l, c)| format!("{l}={c}"))
            .collect();
        return Err(Error::Simulation(format!(
            "empty category in generated data ({})",
            freq.join(", ")
        )));
    }
    Ok(Generated {
        dataset: Dataset::new(scale, names, units)?,
        truth,
    })
}

pub const TRUTH_DRAWS: usize = 1_000_000;

/// E_h[μ₁ − μ₀] over units whose TRUE propensity lies in `interval`, by
/// averaging over `draws` fresh covariate draws (h = e(1−e) for ATO, e for
/// ATT).
pub fn true_estimand_with(
    config: &DgpConfig,
    estimand: Estimand,
    interval: Interval,
    draws: usize,
) -> Result<f64> {
    config.validate()?;
    let names = config.covariate_names();
    let chol = config.chol()?;
    let mu0 = config.mu0.compile(&names)?;
    let mu1 = config.mu1.compile(&names)?;
    const CHUNK: usize = 1 << 14;
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(config.seed, TRUTH_STREAM + c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut num = Vec::with_capacity(len);
            let mut den = Vec::with_capacity(len);
            for _ in 0..len {
                let x = draw_covariates(&mut rng, config.p(), chol.as_ref());
                let e = config.true_propensity(&x);
                if !interval.contains(e) {
                    continue;
                }
                let h = match estimand {
                    Estimand::Ato => e * (1.0 - e),
                    Estimand::Att => e,
                };
                num.push(h * (mu1.eval(&x, &names) - mu0.eval(&x, &names)));
                den.push(h);
            }
            (pairwise_sum(&num), pairwise_sum(&den))
        })
        .collect();
    let num: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let den: Vec<f64> = parts.iter().map(|p| p.1).collect();
    let den = pairwise_sum(&den);
    if den <= 0.0 {
        return Err(Error::Simulation(format!(
            "no draws with true propensity in ({}, {})",
            interval.e_min, interval.e_max
        )));
    }
    Ok(pairwise_sum(&num) / den)
}

pub fn true_estimand(config: &DgpConfig, estimand: Estimand, interval: Interval) -> Result<f64> {
    true_estimand_with(config, estimand, interval, TRUTH_DRAWS)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRecord {
    pub replication: usize,
    pub tau: f64,
    pub se: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub n0: usize,
    pub n1: usize,
    pub converged: bool,
    /// Normal 95% interval covers the truth.
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McFailure {
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub estimand: Estimand,
    pub truth: f64,
    pub replications: usize,
    pub mean_bias: f64,
    pub mc_sd: f64,
    /// Monte Carlo standard error of the mean estimate, mc_sd/√R.
    pub mc_se_of_mean: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub records: Vec<McRecord>,
    pub failures: Vec<McFailure>,
}

impl McReport {
    pub fn from_parts(
        estimand: Estimand,
        truth: f64,
        mut records: Vec<McRecord>,
        mut failures: Vec<McFailure>,
    ) -> Self {
        records.sort_by_key(|r| r.replication);
        failures.sort_by_key(|f| f.replication);
        let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
        let ses: Vec<f64> = records.iter().map(|r| r.se).collect();
        let covered: Vec<f64> = records
            .iter()
            .map(|r| f64::from(u8::from(r.covered)))
            .collect();
        let mc_sd = sample_variance(&taus).map(f64::sqrt).unwrap_or(f64::NAN);
        Self {
            estimand,
            truth,
            replications: records.len() + failures.len(),
            mean_bias: mean(&taus) - truth,
            mc_sd,
            mc_se_of_mean: mc_sd / (records.len() as f64).sqrt(),
            mean_se: mean(&ses),
            coverage: mean(&covered),
            records,
            failures,
        }
    }

    /// Report over the union of two disjoint replication ranges.
    pub fn merge(self, other: McReport) -> Self {
        let mut records = self.records;
        records.extend(other.records);
        let mut failures = self.failures;
        failures.extend(other.failures);
        Self::from_parts(self.estimand, self.truth, records, failures)
    }

    pub fn to_tsv(&self) -> String {
        let mut s =
            String::from("replication\ttau\tse\te_min\te_max\tn0\tn1\tconverged\tcovered\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{:.12e}\t{:.12e}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.replication, r.tau, r.se, r.e_min, r.e_max, r.n0, r.n1, r.converged, r.covered
            ));
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!(
            "estimand\t{}\ntruth\t{:.12e}\nreplications\t{}\nsucceeded\t{}\nfailed\t{}\nmean_bias\t{:.12e}\nmc_sd\t{:.12e}\nmc_se_of_mean\t{:.12e}\nmean_se\t{:.12e}\ncoverage\t{:.6}\n",
            self.estimand,
            self.truth,
            self.replications,
            self.records.len(),
            self.failures.len(),
            self.mean_bias,
            self.mc_sd,
            self.mc_se_of_mean,
            self.mean_se,
            self.coverage
        );
        for f in &self.failures {
            s.push_str(&format!("failure\t{}\t{}\n", f.replication, f.error));
        }
        s
    }
}

/// Monte Carlo run of the full pipeline on replications `range`, scored
/// against `truth`. Replication r draws its data from stream r.
pub fn monte_carlo_range(
    config: &DgpConfig,
    base: &PipelineSettings,
    range: Range<usize>,
    truth: f64,
) -> Result<McReport> {
    config.validate()?;
    let settings = config.fit_settings(base);
    let z95 = normal::quantile(0.975);
    let outcomes: Vec<std::result::Result<McRecord, McFailure>> = range
        .clone()
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<McRecord> {
                let g = generate_stream(config, r as u64)?;
                let res = crate::pipeline::run_pipeline(&g.dataset, &settings)?;
                let est = &res.estimate.estimate;
                Ok(McRecord {
                    replication: r,
                    tau: est.tau,
                    se: est.se,
                    e_min: est.interval.e_min,
                    e_max: est.interval.e_max,
                    n0: est.n0,
                    n1: est.n1,
                    converged: res.converged,
                    covered: (est.tau - truth).abs() <= z95 * est.se,
                })
            };
            run().map_err(|e| McFailure {
                replication: r,
                error: e.to_string(),
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() * 10 > range.len() {
        return Err(Error::Simulation(format!(
            "{} of {} replications failed; first: {}",
            failures.len(),
            range.len(),
            failures[0].error
        )));
    }
    if records.len() < 2 {
        return Err(Error::Simulation(
            "fewer than two successful replications".into(),
        ));
    }
    Ok(McReport::from_parts(
        settings.estimand,
        truth,
        records,
        failures,
    ))
}

/// Monte Carlo over replications 0..`replications`. Without `truth`, the
/// interval rule must be fixed and the truth is computed by
/// [`true_estimand`] on it.
pub fn monte_carlo(
    config: &DgpConfig,
    base: &PipelineSettings,
    replications: usize,
    truth: Option<f64>,
) -> Result<McReport> {
    if replications < 2 {
        return Err(Error::Simulation("need at least two replications".into()));
    }
    let truth = match truth {
        Some(t) => t,
        None => match base.interval {
            IntervalRule::Fixed { e_min, e_max } => {
                true_estimand(config, base.estimand, Interval::new(e_min, e_max)?)?
            }
            _ => {
                return Err(Error::Simulation(
                    "a searched interval needs an explicit truth".into(),
                ))
            }
        },
    };
    monte_carlo_range(config, base, 0..replications, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub se: f64,
    pub interval: Interval,
    pub estimates: Vec<f64>,
    /// Resamples that could not be estimated, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Nonparametric bootstrap of the augmented estimate: units are resampled
/// with replacement and the probit and outcome models refitted each time,
/// with the interval held at its value on the original data.
pub fn bootstrap_se(
    dataset: &Dataset,
    settings: &PipelineSettings,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if resamples < 100 {
        return Err(Error::Simulation(format!(
            "need at least 100 resamples, got {resamples}"
        )));
    }
    let interval = match settings.interval {
        IntervalRule::Fixed { e_min, e_max } => Interval::new(e_min, e_max)?,
        rule => {
            let model = fit_propensity(dataset, settings)?;
            choose_interval(
                dataset,
                &model.ps,
                rule,
                settings.estimand,
                &settings.search,
            )?
        }
    };
    let outcome_terms = resolve_terms(&settings.outcome_terms, dataset)?;
    let n = dataset.len();
    let results: Vec<std::result::Result<f64, (usize, String)>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, BOOTSTRAP_STREAM + b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let run = || -> Result<f64> {
                let ds = dataset.select(&rows)?;
                let model = fit_propensity(&ds, settings)?;
                let est = estimate_interval(
                    &ds,
                    &model,
                    interval,
                    settings.estimand,
                    &outcome_terms,
                    settings.score_scope,
                )?;
                Ok(est.estimate.tau)
            };
            run().map_err(|e| (b, e.to_string()))
        })
        .collect();
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(t) => estimates.push(t),
            Err(s) => skipped.push(s),
        }
    }
    let se = sample_variance(&estimates)
        .map(f64::sqrt)
        .ok_or_else(|| Error::Simulation("fewer than two usable resamples".into()))?;
    Ok(BootstrapReport {
        se,
        interval,
        estimates,
        skipped,
    })
}
