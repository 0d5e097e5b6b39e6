#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ordrd::dataset::Dataset;
use ordrd::simlab::{generate, DgpConfig, OutcomeFn};

/// Five rating categories, threshold at the third, three covariates.
pub fn rating_config(n: usize, effect: f64, seed: u64) -> DgpConfig {
    DgpConfig {
        n,
        beta: vec![0.9, -0.6, 0.4],
        cutoffs: vec![-1.4, -0.5, 0.4, 1.3],
        threshold: 2,
        mu0: OutcomeFn {
            intercept: 1.0,
            terms: vec!["x1".into(), "x2".into(), "x3".into()],
            coefficients: vec![0.8, 0.5, -0.3],
        },
        mu1: OutcomeFn {
            intercept: 1.0 + effect,
            terms: vec!["x1".into(), "x2".into(), "x3".into()],
            coefficients: vec![0.8, 0.5, -0.3],
        },
        noise_sd: 1.0,
        correlation: None,
        ps_omit: vec![],
        outcome_fit_terms: None,
        seed,
    }
}

pub fn dataset(config: &DgpConfig) -> Dataset {
    generate(config).unwrap().dataset
}

/// Write a dataset as CSV with columns id, y, rating and the covariates.
pub fn write_csv(ds: &Dataset, path: &Path) {
    let labels = ds.scale().labels();
    let mut s = String::from("id,y,rating");
    for c in ds.covariate_names() {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for u in ds.units() {
        s.push_str(&format!("{},{},{}", u.id, u.outcome, labels[u.category]));
        for x in &u.covariates {
            s.push_str(&format!(",{x}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Analysis manifest for a CSV written by [`write_csv`].
pub fn manifest(
    data: &str,
    labels: &[String],
    threshold: &str,
    covariates: &[String],
    extra: &str,
) -> String {
    let list = |v: &[String]| {
        v.iter()
            .map(|s| format!("\"{s}\""))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "seed = 7\n\n[data]\npath = \"{data}\"\nid_column = \"id\"\noutcome = \"y\"\ncategory = \"rating\"\nlabels = [{}]\nthreshold = \"{threshold}\"\ncovariates = [{}]\n\n{extra}",
        list(labels),
        list(covariates),
    )
}

/// Dataset and manifest written into `dir`; returns the manifest path.
pub fn analysis_fixture(dir: &Path, config: &DgpConfig, extra: &str) -> PathBuf {
    let ds = dataset(config);
    write_csv(&ds, &dir.join("data.csv"));
    let labels = config.labels();
    let text = manifest(
        "data.csv",
        &labels,
        &labels[config.threshold],
        &config.covariate_names(),
        extra,
    );
    let path = dir.join("analysis.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn ordrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordrd"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}
