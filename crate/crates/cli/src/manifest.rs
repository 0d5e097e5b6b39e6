//! Manifest schemas and loading. See `docs/manifest.md` for every key.

use std::path::{Path, PathBuf};

use ordrd::balance::SearchSettings;
use ordrd::dataset::{DataManifest, ExclusionRule};
use ordrd::estimate::Estimand;
use ordrd::pipeline::{IntervalRule, PipelineSettings};
use ordrd::probit::FitSettings;
use ordrd::simlab::DgpConfig;
use ordrd::variance::ScoreScope;
use ordrd::Error;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisManifest {
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataManifest,
    #[serde(default)]
    pub exclude: Vec<ExclusionRule>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub falsify: FalsifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Probit terms; every covariate when empty.
    pub probit_terms: Vec<String>,
    /// Outcome-model terms; every covariate when empty.
    pub outcome_terms: Vec<String>,
    pub standardize: bool,
    pub fit: FitSettings,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            probit_terms: Vec::new(),
            outcome_terms: Vec::new(),
            standardize: true,
            fit: FitSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    /// One estimates panel per entry; the first is the headline.
    pub estimands: Vec<Estimand>,
    pub significance: f64,
    pub score_scope: ScoreScope,
    /// Bootstrap resamples for the headline estimate; 0 disables.
    pub bootstrap_resamples: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            estimands: vec![Estimand::Ato, Estimand::Att],
            significance: 0.10,
            score_scope: ScoreScope::default(),
            bootstrap_resamples: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FalsifySection {
    /// Negative-control table; `--control-data` overrides it.
    pub data: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output directory; `--out` overrides it.
    pub dir: Option<String>,
}

impl AnalysisManifest {
    pub fn validate(&self) -> Result<(), Error> {
        if self.inference.estimands.is_empty() {
            return Err(Error::Manifest(
                "inference.estimands must not be empty".into(),
            ));
        }
        let e = &self.inference.estimands;
        if e.len() == 2 && e[0] == e[1] || e.len() > 2 {
            return Err(Error::Manifest(
                "inference.estimands lists an estimand twice".into(),
            ));
        }
        let s = self.inference.significance;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Manifest(format!(
                "inference.significance must lie in (0, 1), got {s}"
            )));
        }
        if self.inference.bootstrap_resamples != 0 && self.inference.bootstrap_resamples < 100 {
            return Err(Error::Manifest(
                "inference.bootstrap_resamples must be 0 or at least 100".into(),
            ));
        }
        if self.data.path.is_none() {
            return Err(Error::Manifest("missing key `data.path`".into()));
        }
        self.search.validate()
    }

    pub fn pipeline(&self, estimand: Estimand) -> PipelineSettings {
        PipelineSettings {
            probit_terms: self.model.probit_terms.clone(),
            outcome_terms: self.model.outcome_terms.clone(),
            standardize: self.model.standardize,
            fit: self.model.fit,
            search: self.search,
            estimand,
            score_scope: self.inference.score_scope,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationManifest {
    pub dgp: DgpConfig,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub replications: usize,
    /// Target value; computed from the DGP on a fixed interval when absent.
    #[serde(default)]
    pub truth: Option<f64>,
    /// Index of the first replication; replication r always uses stream r.
    #[serde(default)]
    pub first_replication: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    /// Resamples of the first generated dataset; 0 disables.
    pub resamples: usize,
}

impl SimulationManifest {
    pub fn validate(&self) -> Result<(), Error> {
        if self.monte_carlo.replications < 2 {
            return Err(Error::Manifest(format!(
                "monte_carlo.replications must be at least 2, got {}",
                self.monte_carlo.replications
            )));
        }
        if self.bootstrap.resamples != 0 && self.bootstrap.resamples < 100 {
            return Err(Error::Manifest(
                "bootstrap.resamples must be 0 or at least 100".into(),
            ));
        }
        if self.monte_carlo.truth.is_none()
            && !matches!(self.pipeline.interval, IntervalRule::Fixed { .. })
        {
            return Err(Error::Manifest(
                "monte_carlo.truth is required unless pipeline.interval is fixed".into(),
            ));
        }
        self.pipeline.search.validate()?;
        self.dgp
            .validate()
            .map_err(|e| Error::Manifest(format!("dgp: {e}")))
    }
}

/// Raw bytes, their SHA-256 and the parsed manifest.
pub struct Loaded<T> {
    pub manifest: T,
    pub sha256: String,
    pub dir: PathBuf,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, Error> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let sha256 = format!("{:x}", Sha256::digest(&bytes));
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Manifest(format!("{} is not UTF-8", path.display())))?;
    let manifest = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Loaded {
        manifest,
        sha256,
        dir,
    })
}

/// Resolve a manifest-relative path.
pub fn resolve(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
