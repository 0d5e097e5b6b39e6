//! Unit-level data: ingestion, validation, exclusions and summaries.
//!
//! Category order is whatever the manifest declares. Labels are matched
//! exactly, so `bbb` and `BBB` are different categories.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered category labels and the first treated category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryScale {
    labels: Vec<String>,
    threshold: usize,
}

impl CategoryScale {
    /// `threshold` is the label of the lowest treated category.
    pub fn new(labels: Vec<String>, threshold: &str) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidScale(format!(
                "need at least 2 categories, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidScale(format!("duplicate label `{l}`")));
            }
        }
        let threshold = labels
            .iter()
            .position(|l| l == threshold)
            .ok_or_else(|| Error::ThresholdNotInScale(threshold.to_string()))?;
        if threshold == 0 {
            return Err(Error::InvalidScale(
                "threshold is the lowest category, so there is no control region".into(),
            ));
        }
        Ok(Self { labels, threshold })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of categories J.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Zero-based index of the threshold category.
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    #[inline]
    pub fn is_treated(&self, category: usize) -> bool {
        category >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: String,
    /// Zero-based index into the scale.
    pub category: usize,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

/// Validated units with the sharp treatment indicator derived from the scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    scale: CategoryScale,
    covariate_names: Vec<String>,
    units: Vec<UnitRecord>,
    treated: Vec<bool>,
}

impl Dataset {
    pub fn new(
        scale: CategoryScale,
        covariate_names: Vec<String>,
        units: Vec<UnitRecord>,
    ) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::NoRows);
        }
        let p = covariate_names.len();
        for u in &units {
            if u.covariates.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: u.covariates.len(),
                });
            }
            if u.category >= scale.len() {
                return Err(Error::InvalidScale(format!(
                    "unit {} has category index {} outside the scale",
                    u.id, u.category
                )));
            }
        }
        let treated: Vec<bool> = units.iter().map(|u| scale.is_treated(u.category)).collect();
        let n1 = treated.iter().filter(|&&t| t).count();
        if n1 == 0 || n1 == units.len() {
            return Err(Error::OneSided {
                controls: units.len() - n1,
                treated: n1,
            });
        }
        Ok(Self {
            scale,
            covariate_names,
            units,
            treated,
        })
    }

    pub fn scale(&self) -> &CategoryScale {
        &self.scale
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Treatment indicator Z_i.
    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    /// Z_i as 0.0 / 1.0.
    pub fn treatment(&self) -> Vec<f64> {
        self.treated
            .iter()
            .map(|&t| if t { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.outcome).collect()
    }

    pub fn categories(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.category).collect()
    }

    /// Column `j` of the covariate matrix.
    pub fn covariate(&self, j: usize) -> Vec<f64> {
        self.units.iter().map(|u| u.covariates[j]).collect()
    }

    /// Units at the given positions, in that order. Positions may repeat.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let units = rows.iter().map(|&i| self.units[i].clone()).collect();
        Self::new(self.scale.clone(), self.covariate_names.clone(), units)
    }

    /// Same units with outcomes replaced.
    pub fn with_outcomes(&self, outcomes: &[f64]) -> Result<Self> {
        if outcomes.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: outcomes.len(),
            });
        }
        let mut out = self.clone();
        for (u, &y) in out.units.iter_mut().zip(outcomes) {
            u.outcome = y;
        }
        Ok(out)
    }
}

/// Column mapping and scale declaration needed to read a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    /// Input table; relative paths resolve against the manifest directory.
    pub path: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub id_column: Option<String>,
    pub outcome: String,
    pub category: String,
    pub labels: Vec<String>,
    pub threshold: String,
    pub covariates: Vec<String>,
    /// Reject the whole table instead of dropping incomplete rows.
    #[serde(default)]
    pub strict: bool,
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    Missing(String),
    Unparseable(String),
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::Missing(c) => write!(f, "missing:{c}"),
            DropReason::Unparseable(c) => write!(f, "unparseable:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropRecord {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub drops: Vec<DropRecord>,
}

/// Read a delimited table from disk.
pub fn load_dataset(path: &Path, manifest: &DataManifest) -> Result<Loaded> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, manifest)
}

/// Read a delimited table from any reader. Rows with missing or unparseable
/// fields are dropped and logged (or rejected when `manifest.strict`); a
/// non-empty category label absent from the scale is always an error.
pub fn read_dataset<R: std::io::Read>(reader: R, manifest: &DataManifest) -> Result<Loaded> {
    let scale = CategoryScale::new(manifest.labels.clone(), &manifest.threshold)?;
    if !manifest.delimiter.is_ascii() {
        return Err(Error::Manifest(format!(
            "delimiter `{}` must be a single ASCII character",
            manifest.delimiter
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(manifest.delimiter as u8)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = manifest.id_column.as_deref().map(col).transpose()?;
    let y_col = col(&manifest.outcome)?;
    let r_col = col(&manifest.category)?;
    let x_cols = manifest
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut units = Vec::new();
    let mut drops = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let id = match id_col {
            Some(c) => rec.get(c).unwrap_or("").to_string(),
            None => format!("row{row}"),
        };
        let parsed = parse_row(&rec, &scale, manifest, y_col, r_col, &x_cols);
        match parsed {
            Ok(Ok((category, outcome, covariates))) => units.push(UnitRecord {
                id,
                category,
                outcome,
                covariates,
            }),
            Ok(Err(reason)) => {
                if manifest.strict {
                    return Err(Error::StrictDrop {
                        row,
                        id,
                        reason: reason.to_string(),
                    });
                }
                drops.push(DropRecord { row, id, reason });
            }
            Err(label) => return Err(Error::UnknownCategory { row, id, label }),
        }
    }
    if units.is_empty() {
        return Err(Error::NoRows);
    }
    let dataset = Dataset::new(scale, manifest.covariates.clone(), units)?;
    Ok(Loaded { dataset, drops })
}

type ParsedRow = (usize, f64, Vec<f64>);

/// Outer error: unknown label (fatal). Inner error: droppable row.
fn parse_row(
    rec: &csv::StringRecord,
    scale: &CategoryScale,
    manifest: &DataManifest,
    y_col: usize,
    r_col: usize,
    x_cols: &[usize],
) -> std::result::Result<std::result::Result<ParsedRow, DropReason>, String> {
    let label = rec.get(r_col).unwrap_or("");
    let category = if label.is_empty() {
        None
    } else {
        Some(scale.index_of(label).ok_or_else(|| label.to_string())?)
    };
    let Some(category) = category else {
        return Ok(Err(DropReason::Missing(manifest.category.clone())));
    };
    let num = |c: usize, name: &str| -> std::result::Result<f64, DropReason> {
        let s = rec.get(c).unwrap_or("");
        if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
            return Err(DropReason::Missing(name.to_string()));
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(DropReason::Unparseable(name.to_string())),
        }
    };
    let row = (|| {
        let y = num(y_col, &manifest.outcome)?;
        let xs = x_cols
            .iter()
            .zip(&manifest.covariates)
            .map(|(&c, name)| num(c, name))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((category, y, xs))
    })();
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Gt => value > bound,
            Comparator::Ge => value >= bound,
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
            Comparator::Eq => value == bound,
            Comparator::Ne => value != bound,
        }
    }
}

/// A unit is excluded when `covariate <op> bound` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionRule {
    pub covariate: String,
    pub op: Comparator,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct Exclusions {
    pub dataset: Dataset,
    /// Units matching each rule, in rule order. A unit can match several rules.
    pub per_rule: Vec<usize>,
    pub removed: usize,
}

pub fn apply_exclusion_rules(dataset: &Dataset, rules: &[ExclusionRule]) -> Result<Exclusions> {
    let cols = rules
        .iter()
        .map(|r| {
            dataset
                .covariate_index(&r.covariate)
                .ok_or_else(|| Error::UnknownCovariate(r.covariate.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_rule = vec![0; rules.len()];
    let mut keep = Vec::with_capacity(dataset.len());
    for (i, u) in dataset.units().iter().enumerate() {
        let mut excluded = false;
        for (k, (rule, &c)) in rules.iter().zip(&cols).enumerate() {
            if rule.op.holds(u.covariates[c], rule.bound) {
                per_rule[k] += 1;
                excluded = true;
            }
        }
        if !excluded {
            keep.push(i);
        }
    }
    let removed = dataset.len() - keep.len();
    let dataset = if removed == 0 {
        dataset.clone()
    } else {
        dataset.select(&keep)?
    };
    Ok(Exclusions {
        dataset,
        per_rule,
        removed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); `None` for a single unit.
    pub sd: Option<f64>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub outcome: ColumnSummary,
    pub covariates: Vec<ColumnSummary>,
    /// (label, count) in scale order.
    pub categories: Vec<(String, usize)>,
    pub n_treated: usize,
    pub n_control: usize,
}

pub fn summarize(dataset: &Dataset) -> Summary {
    let covariates = dataset
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| summarize_column(name, &dataset.covariate(j)))
        .collect();
    let mut counts = vec![0usize; dataset.scale().len()];
    for u in dataset.units() {
        counts[u.category] += 1;
    }
    let n_treated = dataset.treated().iter().filter(|&&t| t).count();
    Summary {
        outcome: summarize_column("outcome", &dataset.outcomes()),
        covariates,
        categories: dataset
            .scale()
            .labels()
            .iter()
            .cloned()
            .zip(counts)
            .collect(),
        n_treated,
        n_control: dataset.len() - n_treated,
    }
}

pub fn summarize_column(name: &str, values: &[f64]) -> ColumnSummary {
    let n = values.len();
    let mean = crate::numeric::mean(values);
    let sd = crate::numeric::sample_variance(values).map(f64::sqrt);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ColumnSummary {
        name: name.to_string(),
        n,
        mean,
        sd,
        min: sorted.first().copied().unwrap_or(f64::NAN),
        q1: crate::numeric::quantile_sorted(&sorted, 0.25),
        median: crate::numeric::quantile_sorted(&sorted, 0.5),
        q3: crate::numeric::quantile_sorted(&sorted, 0.75),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    }
}
