//! End-to-end estimation: probit fit, propensity scores, interval choice,
//! augmented estimate and sandwich variance.

use serde::{Deserialize, Serialize};

use crate::balance::{
    compute_weights, search_asymmetric, search_symmetric, subsample, BalanceInput, Interval,
    SearchSettings,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{fit_outcome_model, hajek_wate, p_value, EffectEstimate, Estimand};
use crate::probit::{self, FitSettings, FittedProbit, ProbitData, PropensityVector};
use crate::terms::{parse_terms, Term};
use crate::variance::{sandwich, InfluenceDecomposition, ScoreScope, VarianceInput};

/// How the subsample interval is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntervalRule {
    Fixed {
        e_min: f64,
        e_max: f64,
    },
    /// Largest balanced symmetric interval.
    #[default]
    Symmetric,
    /// Asymmetric widening of the symmetric choice.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Probit terms; empty means every covariate, linearly.
    pub probit_terms: Vec<String>,
    /// Outcome-model terms; empty means every covariate, linearly.
    pub outcome_terms: Vec<String>,
    pub standardize: bool,
    pub fit: FitSettings,
    pub search: SearchSettings,
    pub interval: IntervalRule,
    pub estimand: Estimand,
    pub score_scope: ScoreScope,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            probit_terms: Vec::new(),
            outcome_terms: Vec::new(),
            standardize: true,
            fit: FitSettings::default(),
            search: SearchSettings::default(),
            interval: IntervalRule::default(),
            estimand: Estimand::Ato,
            score_scope: ScoreScope::default(),
        }
    }
}

pub fn resolve_terms(terms: &[String], dataset: &Dataset) -> Result<Vec<Term>> {
    if terms.is_empty() {
        Ok(dataset
            .covariate_names()
            .iter()
            .map(|n| Term::covariate(n))
            .collect())
    } else {
        parse_terms(terms, dataset.covariate_names())
    }
}

#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub data: ProbitData,
    pub fit: FittedProbit,
    pub ps: PropensityVector,
}

pub fn fit_propensity(dataset: &Dataset, settings: &PipelineSettings) -> Result<PropensityModel> {
    let terms = resolve_terms(&settings.probit_terms, dataset)?;
    let data = ProbitData::from_dataset(
        dataset,
        &terms,
        settings.standardize,
        settings.fit.empty_category,
    )?;
    let fit = probit::fit(&data, &settings.fit)?;
    let ps = probit::propensity(&fit, &data);
    Ok(PropensityModel { data, fit, ps })
}

#[derive(Debug, Clone)]
pub struct IntervalEstimate {
    pub estimate: EffectEstimate,
    pub decomposition: InfluenceDecomposition,
    /// Dataset rows inside the interval.
    pub rows: Vec<usize>,
    /// Weighted (Hájek) estimate under the same weights, without an se.
    pub hajek: f64,
}

/// Augmented estimate and sandwich se on one interval.
pub fn estimate_interval(
    dataset: &Dataset,
    model: &PropensityModel,
    interval: Interval,
    estimand: Estimand,
    outcome_terms: &[Term],
    scope: ScoreScope,
) -> Result<IntervalEstimate> {
    let rows = subsample(&model.ps.e_hat, &interval);
    let z: Vec<bool> = rows.iter().map(|&i| dataset.treated()[i]).collect();
    let n1 = z.iter().filter(|&&t| t).count();
    let n0 = z.len() - n1;
    if n1 == 0 {
        return Err(Error::ZeroWeight("treated"));
    }
    if n0 == 0 {
        return Err(Error::ZeroWeight("control"));
    }
    let mu0 = fit_outcome_model(dataset, &rows, false, outcome_terms)?;
    let mu1 = match estimand {
        Estimand::Ato => Some(fit_outcome_model(dataset, &rows, true, outcome_terms)?),
        Estimand::Att => None,
    };
    let input = VarianceInput::new(
        dataset,
        &rows,
        &model.fit,
        &model.ps,
        &mu0,
        mu1.as_ref(),
        scope,
    )?;
    let decomposition = sandwich(&input, estimand)?;
    let tau = decomposition.tau();
    let se = decomposition.se;
    let w = compute_weights(&input.e, &input.z, estimand.scheme()).w;
    let hajek = hajek_wate(&input.y, &input.z, &w)?;
    Ok(IntervalEstimate {
        estimate: EffectEstimate {
            estimand,
            tau,
            se,
            p_value: p_value(tau, se)?,
            interval,
            n0,
            n1,
            theta_hat: decomposition.theta_hat,
        },
        decomposition,
        rows,
        hajek,
    })
}

/// Interval under `rule`, searching with the estimand's weighting scheme.
pub fn choose_interval(
    dataset: &Dataset,
    ps: &PropensityVector,
    rule: IntervalRule,
    estimand: Estimand,
    search: &SearchSettings,
) -> Result<Interval> {
    match rule {
        IntervalRule::Fixed { e_min, e_max } => Interval::new(e_min, e_max),
        IntervalRule::Symmetric | IntervalRule::Asymmetric => {
            let input = BalanceInput::new(dataset, ps);
            let sym = search_symmetric(&input, estimand.scheme(), search)?;
            let d = sym
                .selected
                .ok_or_else(|| Error::NoBalancedInterval(estimand.scheme().to_string()))?;
            let start = Interval::symmetric(d)?;
            if rule == IntervalRule::Symmetric {
                return Ok(start);
            }
            Ok(search_asymmetric(&input, estimand.scheme(), start, search)?.final_interval())
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub estimate: IntervalEstimate,
    pub converged: bool,
    pub iterations: usize,
}

/// Full pipeline on one dataset.
pub fn run_pipeline(dataset: &Dataset, settings: &PipelineSettings) -> Result<PipelineResult> {
    let model = fit_propensity(dataset, settings)?;
    let interval = choose_interval(
        dataset,
        &model.ps,
        settings.interval,
        settings.estimand,
        &settings.search,
    )?;
    let outcome_terms = resolve_terms(&settings.outcome_terms, dataset)?;
    let estimate = estimate_interval(
        dataset,
        &model,
        interval,
        settings.estimand,
        &outcome_terms,
        settings.score_scope,
    )?;
    Ok(PipelineResult {
        estimate,
        converged: model.fit.converged,
        iterations: model.fit.iterations,
    })
}
