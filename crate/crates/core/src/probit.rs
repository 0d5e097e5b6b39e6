//! Ordered probit model for the ordinal running variable.
//!
//! Parameter vector layout is `η = (u_1, …, u_{J-1}, β_1, …, β_k)`. There is
//! no intercept; the cutoffs absorb location. The optimizer works on
//! `(u_1, log(u_2 - u_1), …, β)` so cutoff ordering holds at every iterate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::normal;
use crate::numeric::{column_sums, pairwise_sum, quantile_sorted, symmetrize};
use crate::terms::{design_matrix, term_names, Term};

/// Floor for cell probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Propensity scores are clamped to `[PS_CLAMP, 1 - PS_CLAMP]`.
pub const PS_CLAMP: f64 = 1e-10;

const PAR_MIN_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyCategoryPolicy {
    /// Refuse to fit when a declared category has no units.
    #[default]
    Error,
    /// Drop empty categories from the scale before fitting.
    Collapse,
}

/// Design matrix and categories for the probit, on a compact category scale.
#[derive(Debug, Clone)]
pub struct ProbitData {
    x: DMatrix<f64>,
    category: Vec<usize>,
    labels: Vec<String>,
    threshold: usize,
    term_names: Vec<String>,
    standardization: Option<Standardization>,
}

/// Column means and standard deviations used to z-score the design.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Map parameters fitted on z-scored columns back to the raw design scale.
    pub fn to_original(&self, params: &ProbitParams) -> ProbitParams {
        let beta: Vec<f64> = params
            .beta
            .iter()
            .zip(&self.sds)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = beta.iter().zip(&self.means).map(|(b, m)| b * m).sum();
        ProbitParams {
            cutoffs: params.cutoffs.iter().map(|u| u + shift).collect(),
            beta,
        }
    }
}

impl ProbitData {
    /// `category` holds zero-based indices into `labels`; `threshold` is the
    /// first treated category. Every category must be observed.
    pub fn new(
        x: DMatrix<f64>,
        category: Vec<usize>,
        labels: Vec<String>,
        threshold: usize,
    ) -> Result<Self> {
        if x.nrows() != category.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: category.len(),
            });
        }
        let j = labels.len();
        if j < 2 || threshold == 0 || threshold >= j {
            return Err(Error::InvalidScale(format!(
                "{j} categories with threshold index {threshold}"
            )));
        }
        let mut counts = vec![0usize; j];
        for &c in &category {
            if c >= j {
                return Err(Error::InvalidScale(format!(
                    "category index {c} out of range"
                )));
            }
            counts[c] += 1;
        }
        if let Some(empty) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyCategory(labels[empty].clone()));
        }
        let term_names = (1..=x.ncols()).map(|k| format!("x{k}")).collect();
        Ok(Self {
            x,
            category,
            labels,
            threshold,
            term_names,
            standardization: None,
        })
    }

    /// Build the probit design from every unit of a dataset.
    pub fn from_dataset(
        dataset: &Dataset,
        terms: &[Term],
        standardize: bool,
        policy: EmptyCategoryPolicy,
    ) -> Result<Self> {
        let rows: Vec<usize> = (0..dataset.len()).collect();
        let mut x = design_matrix(dataset, &rows, terms, false)?;
        let scale = dataset.scale();
        let mut counts = vec![0usize; scale.len()];
        for u in dataset.units() {
            counts[u.category] += 1;
        }
        let mut remap = vec![usize::MAX; scale.len()];
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                remap[c] = labels.len();
                labels.push(scale.labels()[c].clone());
            } else if policy == EmptyCategoryPolicy::Error {
                return Err(Error::EmptyCategory(scale.labels()[c].clone()));
            }
        }
        let threshold = (scale.threshold()..scale.len())
            .find(|&c| counts[c] > 0)
            .map(|c| remap[c])
            .ok_or(Error::OneSided {
                controls: dataset.len(),
                treated: 0,
            })?;
        let category = dataset.units().iter().map(|u| remap[u.category]).collect();
        let standardization = if standardize {
            let mut means = Vec::with_capacity(x.ncols());
            let mut sds = Vec::with_capacity(x.ncols());
            for mut col in x.column_iter_mut() {
                let v: Vec<f64> = col.iter().copied().collect();
                let m = crate::numeric::mean(&v);
                let s = crate::numeric::sample_variance(&v)
                    .map(f64::sqrt)
                    .unwrap_or(0.0);
                let s = if s > 0.0 { s } else { 1.0 };
                for e in col.iter_mut() {
                    *e = (*e - m) / s;
                }
                means.push(m);
                sds.push(s);
            }
            Some(Standardization { means, sds })
        } else {
            None
        };
        let mut data = Self::new(x, category, labels, threshold)?;
        data.term_names = term_names(terms);
        data.standardization = standardization;
        Ok(data)
    }

    pub fn n(&self) -> usize {
        self.category.len()
    }

    /// Number of categories J (after any collapsing).
    pub fn n_categories(&self) -> usize {
        self.labels.len()
    }

    pub fn n_terms(&self) -> usize {
        self.x.ncols()
    }

    /// Length of η.
    pub fn dim(&self) -> usize {
        self.n_categories() - 1 + self.n_terms()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn categories(&self) -> &[usize] {
        &self.category
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn term_names(&self) -> &[String] {
        &self.term_names
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Rows in the given order (rows may repeat).
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows.iter());
        let category = rows.iter().map(|&i| self.category[i]).collect();
        let mut out = Self::new(x, category, self.labels.clone(), self.threshold)?;
        out.term_names = self.term_names.clone();
        out.standardization = self.standardization.clone();
        Ok(out)
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn check(&self, params: &ProbitParams) -> Result<()> {
        if params.beta.len() != self.n_terms() {
            return Err(Error::DimensionMismatch {
                expected: self.n_terms(),
                found: params.beta.len(),
            });
        }
        if params.cutoffs.len() + 1 != self.n_categories() {
            return Err(Error::DimensionMismatch {
                expected: self.n_categories() - 1,
                found: params.cutoffs.len(),
            });
        }
        params.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitParams {
    pub cutoffs: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ProbitParams {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.iter().any(|u| !u.is_finite())
            || self.cutoffs.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::CutoffsNotIncreasing);
        }
        Ok(())
    }

    /// Stack into η.
    pub fn to_eta(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.cutoffs.len() + self.beta.len(),
            self.cutoffs.iter().chain(&self.beta).copied(),
        )
    }

    pub fn from_eta(eta: &DVector<f64>, n_cutoffs: usize) -> Self {
        Self {
            cutoffs: eta.rows(0, n_cutoffs).iter().copied().collect(),
            beta: eta
                .rows(n_cutoffs, eta.len() - n_cutoffs)
                .iter()
                .copied()
                .collect(),
        }
    }

    /// Latent-scale bounds (lower, upper) of category `c` relative to `xb`.
    #[inline]
    fn bounds(&self, c: usize, xb: f64) -> (f64, f64) {
        let lo = if c == 0 {
            f64::NEG_INFINITY
        } else {
            self.cutoffs[c - 1] - xb
        };
        let hi = if c == self.cutoffs.len() {
            f64::INFINITY
        } else {
            self.cutoffs[c] - xb
        };
        (lo, hi)
    }
}

/// Log-likelihood Σ_i log[Φ(u_{c_i} - x_iβ) - Φ(u_{c_i - 1} - x_iβ)].
pub fn log_likelihood(params: &ProbitParams, data: &ProbitData) -> Result<f64> {
    data.check(params)?;
    let xb = data.linear_predictor(&params.beta);
    let terms: Vec<Result<f64>> = (0..data.n())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let (lo, hi) = params.bounds(data.category[i], xb[i]);
            let p = normal::interval_prob(lo, hi);
            if p < PROB_FLOOR {
                Err(Error::CellUnderflow { unit: i })
            } else {
                Ok(p.ln())
            }
        })
        .collect();
    let terms = terms.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Total and per-observation score in η coordinates.
#[derive(Debug, Clone)]
pub struct Score {
    pub total: DVector<f64>,
    /// One row per observation.
    pub per_obs: Vec<DVector<f64>>,
}

struct ObsTerms {
    c: usize,
    p: f64,
    lo: f64,
    hi: f64,
    pdf_lo: f64,
    pdf_hi: f64,
}

fn obs_terms(params: &ProbitParams, data: &ProbitData, xb: &[f64], i: usize) -> Result<ObsTerms> {
    let c = data.category[i];
    let (lo, hi) = params.bounds(c, xb[i]);
    let p = normal::interval_prob(lo, hi);
    if p < PROB_FLOOR {
        return Err(Error::CellUnderflow { unit: i });
    }
    Ok(ObsTerms {
        c,
        p,
        lo,
        hi,
        pdf_lo: normal::pdf(lo),
        pdf_hi: normal::pdf(hi),
    })
}

fn obs_score(t: &ObsTerms, x: &[f64], n_cut: usize) -> DVector<f64> {
    let mut s = DVector::zeros(n_cut + x.len());
    if t.c < n_cut {
        s[t.c] = t.pdf_hi / t.p;
    }
    if t.c > 0 {
        s[t.c - 1] = -t.pdf_lo / t.p;
    }
    let d = (t.pdf_hi - t.pdf_lo) / t.p;
    for (k, xk) in x.iter().enumerate() {
        s[n_cut + k] = -xk * d;
    }
    s
}

pub fn score(params: &ProbitParams, data: &ProbitData) -> Result<Score> {
    data.check(params)?;
    let xb = data.linear_predictor(&params.beta);
    let n_cut = params.cutoffs.len();
    let rows: Vec<Result<DVector<f64>>> = (0..data.n())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let t = obs_terms(params, data, &xb, i)?;
            Ok(obs_score(&t, &data.row(i), n_cut))
        })
        .collect();
    let per_obs = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let total = column_sums(&per_obs, data.dim());
    Ok(Score { total, per_obs })
}

/// Contribution of one observation to the Hessian of the log-likelihood.
fn obs_hessian(t: &ObsTerms, x: &[f64], n_cut: usize) -> DMatrix<f64> {
    let dim = n_cut + x.len();
    let mut h = DMatrix::zeros(dim, dim);
    let p = t.p;
    let a_hi = t.pdf_hi / p;
    let a_lo = t.pdf_lo / p;
    let xh = normal::x_pdf(t.hi) / p;
    let xl = normal::x_pdf(t.lo) / p;
    let d = a_hi - a_lo;
    let upper = (t.c < n_cut).then_some(t.c);
    let lower = (t.c > 0).then(|| t.c - 1);
    if let Some(u) = upper {
        h[(u, u)] = -xh - a_hi * a_hi;
        for (k, xk) in x.iter().enumerate() {
            let v = xk * (xh + a_hi * d);
            h[(u, n_cut + k)] = v;
            h[(n_cut + k, u)] = v;
        }
    }
    if let Some(l) = lower {
        h[(l, l)] = xl - a_lo * a_lo;
        for (k, xk) in x.iter().enumerate() {
            let v = -xk * (xl + a_lo * d);
            h[(l, n_cut + k)] = v;
            h[(n_cut + k, l)] = v;
        }
    }
    if let (Some(u), Some(l)) = (upper, lower) {
        h[(u, l)] = a_hi * a_lo;
        h[(l, u)] = a_hi * a_lo;
    }
    let w = (xh - xl) + d * d;
    for (a, xa) in x.iter().enumerate() {
        for (b, xb) in x.iter().enumerate() {
            h[(n_cut + a, n_cut + b)] = -xa * xb * w;
        }
    }
    h
}

/// Negative Hessian of the log-likelihood (total over observations),
/// exactly symmetric.
pub fn observed_information(params: &ProbitParams, data: &ProbitData) -> Result<DMatrix<f64>> {
    data.check(params)?;
    let xb = data.linear_predictor(&params.beta);
    let n_cut = params.cutoffs.len();
    let dim = data.dim();
    let parts: Vec<Result<DMatrix<f64>>> = (0..data.n())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let t = obs_terms(params, data, &xb, i)?;
            Ok(obs_hessian(&t, &data.row(i), n_cut))
        })
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let mut info = DMatrix::zeros(dim, dim);
    let mut buf = vec![0.0; parts.len()];
    for a in 0..dim {
        for b in 0..dim {
            for (v, h) in buf.iter_mut().zip(&parts) {
                *v = h[(a, b)];
            }
            info[(a, b)] = -pairwise_sum(&buf);
        }
    }
    Ok(symmetrize(&info))
}

/// Central finite difference of the analytic score, step `h`. Test fallback
/// for [`observed_information`].
pub fn observed_information_fd(
    params: &ProbitParams,
    data: &ProbitData,
    h: f64,
) -> Result<DMatrix<f64>> {
    let eta = params.to_eta();
    let n_cut = params.cutoffs.len();
    let dim = eta.len();
    let mut info = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mut plus = eta.clone();
        plus[k] += h;
        let mut minus = eta.clone();
        minus[k] -= h;
        let sp = score(&ProbitParams::from_eta(&plus, n_cut), data)?.total;
        let sm = score(&ProbitParams::from_eta(&minus, n_cut), data)?.total;
        let col = (sp - sm) / (2.0 * h);
        for r in 0..dim {
            info[(r, k)] = -col[r];
        }
    }
    Ok(symmetrize(&info))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    /// Convergence when ‖score‖_∞ falls to this value.
    pub gradient_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub empty_category: EmptyCategoryPolicy,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-8,
            max_iter: 200,
            max_halvings: 30,
            empty_category: EmptyCategoryPolicy::Error,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedProbit {
    pub params: ProbitParams,
    pub loglik: f64,
    /// S_i(η̂), one row per observation.
    pub per_obs_scores: Vec<DVector<f64>>,
    /// Total observed information (negative Hessian) at η̂.
    pub information: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Number of observations used in the fit.
    pub n: usize,
    pub labels: Vec<String>,
    pub threshold: usize,
}

impl FittedProbit {
    /// Evaluate likelihood quantities at fixed parameters.
    pub fn at(params: ProbitParams, data: &ProbitData) -> Result<Self> {
        let loglik = log_likelihood(&params, data)?;
        let score = score(&params, data)?;
        let information = observed_information(&params, data)?;
        Ok(Self {
            params,
            loglik,
            per_obs_scores: score.per_obs,
            information,
            converged: false,
            iterations: 0,
            n: data.n(),
            labels: data.labels.clone(),
            threshold: data.threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.cutoffs.len() + self.params.beta.len()
    }

    /// Per-observation average information, the E_ηη used for variances.
    pub fn mean_information(&self) -> DMatrix<f64> {
        &self.information / self.n as f64
    }

    pub fn total_score(&self) -> DVector<f64> {
        column_sums(&self.per_obs_scores, self.dim())
    }
}

/// Optimizer coordinates: (u_1, log-gaps, β).
struct Reparam {
    n_cut: usize,
}

impl Reparam {
    fn to_params(&self, theta: &DVector<f64>) -> ProbitParams {
        let mut cutoffs = Vec::with_capacity(self.n_cut);
        let mut u = theta[0];
        cutoffs.push(u);
        for k in 1..self.n_cut {
            u += theta[k].exp();
            cutoffs.push(u);
        }
        ProbitParams {
            cutoffs,
            beta: theta
                .rows(self.n_cut, theta.len() - self.n_cut)
                .iter()
                .copied()
                .collect(),
        }
    }

    fn from_params(&self, p: &ProbitParams) -> DVector<f64> {
        let mut theta = p.to_eta();
        for k in 1..self.n_cut {
            theta[k] = (p.cutoffs[k] - p.cutoffs[k - 1]).ln();
        }
        theta
    }

    /// ∂η/∂θ.
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let dim = theta.len();
        let mut j = DMatrix::identity(dim, dim);
        for r in 0..self.n_cut {
            j[(r, 0)] = 1.0;
            for m in 1..self.n_cut {
                j[(r, m)] = if m <= r { theta[m].exp() } else { 0.0 };
            }
        }
        j
    }

    /// Gradient and Hessian in θ from their η counterparts.
    fn transform(
        &self,
        theta: &DVector<f64>,
        g_eta: &DVector<f64>,
        h_eta: &DMatrix<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let j = self.jacobian(theta);
        let g = j.transpose() * g_eta;
        let mut h = j.transpose() * h_eta * &j;
        for m in 1..self.n_cut {
            let tail: f64 = (m..self.n_cut).map(|r| g_eta[r]).sum();
            h[(m, m)] += theta[m].exp() * tail;
        }
        (g, symmetrize(&h))
    }
}

/// Starting values: β = 0 and cutoffs at Φ⁻¹ of cumulative category shares.
pub fn null_model_cutoffs(data: &ProbitData) -> Vec<f64> {
    let mut counts = vec![0usize; data.n_categories()];
    for &c in &data.category {
        counts[c] += 1;
    }
    let n = data.n() as f64;
    let mut cum = 0usize;
    counts[..counts.len() - 1]
        .iter()
        .map(|&c| {
            cum += c;
            normal::quantile(cum as f64 / n)
        })
        .collect()
}

/// Maximum-likelihood fit by Newton–Raphson with step halving.
pub fn fit(data: &ProbitData, settings: &FitSettings) -> Result<FittedProbit> {
    let params_n = data.dim();
    if data.n() <= params_n {
        return Err(Error::TooFewUnits {
            units: data.n(),
            params: params_n,
        });
    }
    let rp = Reparam {
        n_cut: data.n_categories() - 1,
    };
    let start = ProbitParams {
        cutoffs: null_model_cutoffs(data),
        beta: vec![0.0; data.n_terms()],
    };
    let col_sd: Vec<f64> = data
        .x
        .column_iter()
        .map(|c| {
            let v: Vec<f64> = c.iter().copied().collect();
            crate::numeric::sample_variance(&v)
                .map(f64::sqrt)
                .unwrap_or(0.0)
        })
        .collect();

    let mut theta = rp.from_params(&start);
    let mut params = start;
    let mut ll = log_likelihood(&params, data)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        let g_eta = score(&params, data)?.total;
        if g_eta.amax() <= settings.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let h_eta = -observed_information(&params, data)?;
        let (g, h) = rp.transform(&theta, &g_eta, &h_eta);
        let (step, newton) = match (-&h).cholesky() {
            Some(ch) => (ch.solve(&g), true),
            None => {
                let norm = g.norm();
                (g.clone() / norm.max(f64::MIN_POSITIVE), false)
            }
        };
        let mut accepted = None;
        let mut t = 1.0;
        for halving in 0..=settings.max_halvings {
            let cand = &theta + &step * t;
            let cp = rp.to_params(&cand);
            if cp.validate().is_ok() {
                if let Ok(cl) = log_likelihood(&cp, data) {
                    let flat = cl >= ll - 1e-12 * (1.0 + ll.abs());
                    if cl > ll || (newton && halving == 0 && flat) {
                        accepted = Some((cand, cp, cl));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((cand, cp, cl)) = accepted else {
            break;
        };
        theta = cand;
        params = cp;
        ll = cl;
        if let Some(msg) = divergence(&params, &col_sd) {
            return Err(Error::Separation(msg));
        }
    }
    if !converged {
        if let Some(msg) =
            divergence(&params, &col_sd).or_else(|| weak_divergence(&params, &col_sd))
        {
            return Err(Error::Separation(msg));
        }
    }
    let mut fitted = FittedProbit::at(params, data)?;
    fitted.converged = converged;
    fitted.iterations = iterations;
    Ok(fitted)
}

fn scaled_effects(params: &ProbitParams, col_sd: &[f64]) -> Vec<f64> {
    params
        .beta
        .iter()
        .zip(col_sd)
        .map(|(b, s)| (b * s).abs())
        .collect()
}

/// Latent-scale effects this large only arise when the likelihood has no
/// interior maximum.
fn divergence(params: &ProbitParams, col_sd: &[f64]) -> Option<String> {
    threshold_divergence(params, col_sd, 50.0)
}

fn weak_divergence(params: &ProbitParams, col_sd: &[f64]) -> Option<String> {
    threshold_divergence(params, col_sd, 20.0)
}

fn threshold_divergence(params: &ProbitParams, col_sd: &[f64], limit: f64) -> Option<String> {
    if let Some((k, e)) = scaled_effects(params, col_sd)
        .into_iter()
        .enumerate()
        .find(|(_, e)| *e > limit)
    {
        return Some(format!(
            "coefficient {k} moves the latent index by {e:.1} sd per covariate sd"
        ));
    }
    if let Some(w) = params.cutoffs.windows(2).find(|w| w[1] - w[0] > limit) {
        return Some(format!(
            "cutoff gap {:.1} between {} and {}",
            w[1] - w[0],
            w[0],
            w[1]
        ));
    }
    None
}

/// Probabilities of each category at covariate row `x`.
pub fn category_probabilities(params: &ProbitParams, x: &[f64]) -> Vec<f64> {
    let xb: f64 = x.iter().zip(&params.beta).map(|(a, b)| a * b).sum();
    (0..=params.cutoffs.len())
        .map(|c| {
            let (lo, hi) = params.bounds(c, xb);
            normal::interval_prob(lo, hi)
        })
        .collect()
}

/// ê_i with its gradient in η.
#[derive(Debug, Clone)]
pub struct PropensityVector {
    pub e_hat: Vec<f64>,
    /// ∂e_i/∂η, one row per unit.
    pub gradient: Vec<DVector<f64>>,
    /// Units whose score hit the clamp.
    pub clamped: Vec<bool>,
}

impl PropensityVector {
    pub fn len(&self) -> usize {
        self.e_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_hat.is_empty()
    }

    /// Scores without gradients, e.g. for balance fixtures.
    pub fn from_scores(e_hat: Vec<f64>) -> Self {
        let clamped = e_hat
            .iter()
            .map(|&e| e <= PS_CLAMP || e >= 1.0 - PS_CLAMP)
            .collect();
        let e_hat = e_hat
            .into_iter()
            .map(|e| e.clamp(PS_CLAMP, 1.0 - PS_CLAMP))
            .collect();
        Self {
            e_hat,
            gradient: Vec::new(),
            clamped,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            e_hat: rows.iter().map(|&i| self.e_hat[i]).collect(),
            gradient: if self.gradient.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&i| self.gradient[i].clone()).collect()
            },
            clamped: rows.iter().map(|&i| self.clamped[i]).collect(),
        }
    }
}

/// ê_i = 1 - Φ(u_{t-1} - x_iβ) for every row of `data`, with threshold
/// `threshold` (first treated category, zero-based).
pub fn propensity_with(
    params: &ProbitParams,
    data: &ProbitData,
    threshold: usize,
) -> PropensityVector {
    let xb = data.linear_predictor(&params.beta);
    let n_cut = params.cutoffs.len();
    let cut = threshold - 1;
    let mut e_hat = Vec::with_capacity(data.n());
    let mut gradient = Vec::with_capacity(data.n());
    let mut clamped = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let z = params.cutoffs[cut] - xb[i];
        let e = normal::sf(z);
        let dens = normal::pdf(z);
        let mut g = DVector::zeros(n_cut + params.beta.len());
        g[cut] = -dens;
        for (k, xk) in data.x.row(i).iter().enumerate() {
            g[n_cut + k] = dens * xk;
        }
        clamped.push(!(PS_CLAMP..=1.0 - PS_CLAMP).contains(&e));
        e_hat.push(e.clamp(PS_CLAMP, 1.0 - PS_CLAMP));
        gradient.push(g);
    }
    PropensityVector {
        e_hat,
        gradient,
        clamped,
    }
}

pub fn propensity(fit: &FittedProbit, data: &ProbitData) -> PropensityVector {
    propensity_with(&fit.params, data, fit.threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPropensity {
    pub label: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Share of units with ê ≥ 0.5.
    pub share_at_least_half: f64,
}

/// Well-specification diagnostic: distribution of ê within each observed
/// category, plus threshold-adjacent summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityDiagnostic {
    pub categories: Vec<CategoryPropensity>,
    /// Mean ê in the category just below the threshold (expected < 0.5).
    pub mean_below: f64,
    /// Mean ê in the threshold category (expected ≥ 0.5).
    pub mean_at: f64,
    /// Share with ê < 0.5 among the two categories just below the threshold.
    pub share_below_half_under: f64,
    /// Share with ê > 0.5 among the two categories at and above the threshold.
    pub share_above_half_over: f64,
    /// Mean ê is non-decreasing across categories.
    pub monotone: bool,
}

pub fn propensity_by_category(e: &PropensityVector, data: &ProbitData) -> PropensityDiagnostic {
    let j = data.n_categories();
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); j];
    for (&c, &v) in data.category.iter().zip(&e.e_hat) {
        groups[c].push(v);
    }
    let categories: Vec<CategoryPropensity> = groups
        .iter_mut()
        .zip(&data.labels)
        .map(|(g, label)| {
            g.sort_by(f64::total_cmp);
            let n = g.len();
            CategoryPropensity {
                label: label.clone(),
                n,
                min: g.first().copied().unwrap_or(f64::NAN),
                q1: quantile_sorted(g, 0.25),
                median: quantile_sorted(g, 0.5),
                q3: quantile_sorted(g, 0.75),
                max: g.last().copied().unwrap_or(f64::NAN),
                mean: crate::numeric::mean(g),
                share_at_least_half: g.iter().filter(|&&v| v >= 0.5).count() as f64
                    / n.max(1) as f64,
            }
        })
        .collect();
    let t = data.threshold;
    let share = |cats: std::ops::Range<usize>, pred: &dyn Fn(f64) -> bool| {
        let vals: Vec<f64> = cats.flat_map(|c| groups[c].iter().copied()).collect();
        vals.iter().filter(|&&v| pred(v)).count() as f64 / vals.len().max(1) as f64
    };
    let monotone = categories
        .windows(2)
        .all(|w| w[1].mean >= w[0].mean || w[0].n == 0 || w[1].n == 0);
    PropensityDiagnostic {
        mean_below: categories[t - 1].mean,
        mean_at: categories[t].mean,
        share_below_half_under: share(t.saturating_sub(2)..t, &|v| v < 0.5),
        share_above_half_over: share(t..(t + 2).min(j), &|v| v > 0.5),
        monotone,
        categories,
    }
}
