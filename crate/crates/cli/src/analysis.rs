//! The staged analysis shared by `run` and `falsify`.

use ordrd::balance::{
    search_asymmetric, search_symmetric, AsymmetricSearch, BalanceInput, BalanceReport, Interval,
    SymmetricSearch, WeightScheme,
};
use ordrd::dataset::Dataset;
use ordrd::estimate::Estimand;
use ordrd::pipeline::{
    estimate_interval, fit_propensity, resolve_terms, IntervalEstimate, PropensityModel,
};
use ordrd::variance::{influence_diagnostics, InfluenceRow};
use ordrd::Error;

use crate::manifest::AnalysisManifest;

pub fn fit_stage(dataset: &Dataset, manifest: &AnalysisManifest) -> Result<PropensityModel, Error> {
    fit_propensity(dataset, &manifest.pipeline(manifest.inference.estimands[0]))
}

/// Weighting schemes searched: one per requested estimand, then NONE as
/// the unweighted reference.
pub fn search_schemes(manifest: &AnalysisManifest) -> Vec<WeightScheme> {
    let mut out: Vec<WeightScheme> = manifest
        .inference
        .estimands
        .iter()
        .map(|e| e.scheme())
        .collect();
    out.push(WeightScheme::None);
    out
}

pub fn symmetric_stage(
    dataset: &Dataset,
    model: &PropensityModel,
    manifest: &AnalysisManifest,
) -> Result<Vec<SymmetricSearch>, Error> {
    let input = BalanceInput::new(dataset, &model.ps);
    search_schemes(manifest)
        .into_iter()
        .map(|s| search_symmetric(&input, s, &manifest.search))
        .collect()
}

/// Asymmetric widening for every estimand, from its symmetric choice.
pub fn asymmetric_stage(
    dataset: &Dataset,
    model: &PropensityModel,
    symmetric: &[SymmetricSearch],
    manifest: &AnalysisManifest,
) -> Result<Vec<(Estimand, AsymmetricSearch)>, Error> {
    let input = BalanceInput::new(dataset, &model.ps);
    manifest
        .inference
        .estimands
        .iter()
        .map(|&estimand| {
            let sym = symmetric
                .iter()
                .find(|s| s.scheme == estimand.scheme())
                .expect("one symmetric search per estimand");
            let d = sym
                .selected
                .ok_or_else(|| Error::NoBalancedInterval(estimand.scheme().to_string()))?;
            let start = Interval::symmetric(d)?;
            Ok((
                estimand,
                search_asymmetric(&input, estimand.scheme(), start, &manifest.search)?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub estimand: Estimand,
    /// Position on the asymmetric path; 0 is the symmetric start.
    pub step: usize,
    /// Last interval on the path, the one reported as the estimate.
    pub selected: bool,
    pub result: IntervalEstimate,
}

/// Augmented estimate with sandwich se on every interval of each path.
pub fn estimation_stage(
    dataset: &Dataset,
    model: &PropensityModel,
    paths: &[(Estimand, AsymmetricSearch)],
    manifest: &AnalysisManifest,
) -> Result<Vec<EstimateRow>, Error> {
    let terms = resolve_terms(&manifest.model.outcome_terms, dataset)?;
    let mut rows = Vec::new();
    for (estimand, path) in paths {
        let reports: Vec<&BalanceReport> = path.path().collect();
        let last = reports.len() - 1;
        for (step, report) in reports.into_iter().enumerate() {
            let result = estimate_interval(
                dataset,
                model,
                report.interval,
                *estimand,
                &terms,
                manifest.inference.score_scope,
            )?;
            rows.push(EstimateRow {
                estimand: *estimand,
                step,
                selected: step == last,
                result,
            });
        }
    }
    Ok(rows)
}

pub fn selected(rows: &[EstimateRow], estimand: Estimand) -> Option<&EstimateRow> {
    rows.iter().find(|r| r.estimand == estimand && r.selected)
}

/// Influence diagnostics on a row's subsample, keyed by unit id.
pub fn influence_rows<'a>(dataset: &'a Dataset, row: &EstimateRow) -> Vec<(&'a str, InfluenceRow)> {
    influence_diagnostics(&row.result.decomposition)
        .into_iter()
        .map(|r| (dataset.units()[row.result.rows[r.position]].id.as_str(), r))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: PropensityModel,
    pub symmetric: Vec<SymmetricSearch>,
    pub asymmetric: Vec<(Estimand, AsymmetricSearch)>,
    pub estimates: Vec<EstimateRow>,
}

impl Analysis {
    /// Selected-interval estimate for the headline (first) estimand.
    pub fn headline(&self) -> &EstimateRow {
        selected(&self.estimates, self.asymmetric[0].0).expect("every path has a selected row")
    }
}

/// All stages in one call.
pub fn analyze(dataset: &Dataset, manifest: &AnalysisManifest) -> Result<Analysis, Error> {
    let model = fit_stage(dataset, manifest)?;
    let symmetric = symmetric_stage(dataset, &model, manifest)?;
    let asymmetric = asymmetric_stage(dataset, &model, &symmetric, manifest)?;
    let estimates = estimation_stage(dataset, &model, &asymmetric, manifest)?;
    Ok(Analysis {
        model,
        symmetric,
        asymmetric,
        estimates,
    })
}

/// Falsification verdict: the negative-control estimate passes when it is
/// not significant at `significance`.
pub fn falsification_pass(p_value: f64, significance: f64) -> bool {
    p_value >= significance
}
