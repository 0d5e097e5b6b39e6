mod common;

use std::path::Path;
use std::time::Instant;

use common::{analysis_fixture, code, dataset, ordrd, rating_config, write_csv};

const ARTIFACTS: [&str; 7] = [
    "probit.txt",
    "propensity_by_category.tsv",
    "balance_symmetric.tsv",
    "balance_asymmetric.tsv",
    "estimates.tsv",
    "influence.tsv",
    "report.txt",
];

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn validate_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(dir.path(), &rating_config(600, 0.0, 1), "");
    let out = dir.path().join("v");
    let o = ordrd(&["validate", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out.join("summary.tsv"));
    assert!(summary.starts_with("# manifest_sha256="));
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("column\tn\tmean"));
    assert_eq!(summary.lines().count(), 2 + 4);
    assert_eq!(read(&out.join("drops.tsv")).lines().count(), 2);
}

#[test]
fn missing_threshold_is_a_manifest_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(dir.path(), &rating_config(200, 0.0, 1), "");
    let text = read(&m);
    let cut: String = text
        .lines()
        .filter(|l| !l.starts_with("threshold"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&m, cut).unwrap();
    let o = ordrd(&[
        "validate",
        "--manifest",
        s(&m),
        "--out",
        s(&dir.path().join("v")),
    ]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.starts_with("error\tmanifest\t") && err.contains("threshold"),
        "{err}"
    );
}

#[test]
fn unknown_key_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(
        dir.path(),
        &rating_config(200, 0.0, 1),
        "[search]\nd_stepp = 0.02\n",
    );
    assert_eq!(code(&ordrd(&["validate", "--manifest", s(&m)])), 2);
    let m = analysis_fixture(dir.path(), &rating_config(200, 0.0, 1), "");
    std::fs::remove_file(dir.path().join("data.csv")).unwrap();
    assert_eq!(code(&ordrd(&["validate", "--manifest", s(&m)])), 3);
    assert_eq!(code(&ordrd(&["validate"])), 2);
    assert_eq!(code(&ordrd(&["frobnicate"])), 2);
}

#[test]
fn one_bad_row_is_dropped_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(dir.path(), &rating_config(300, 0.0, 2), "");
    let csv = dir.path().join("data.csv");
    let text = read(&csv);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    cells[2].clear();
    lines[5] = cells.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();

    let out = dir.path().join("lenient");
    let o = ordrd(&["validate", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let drops = read(&out.join("drops.tsv"));
    assert_eq!(drops.lines().count(), 3);
    assert!(
        drops.lines().nth(2).unwrap().ends_with("missing:rating"),
        "{drops}"
    );

    let o = ordrd(&[
        "validate",
        "--manifest",
        s(&m),
        "--out",
        s(&dir.path().join("strict")),
        "--strict",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn run_writes_every_artifact_with_both_panels() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(dir.path(), &rating_config(1500, 0.5, 3), "");
    let out = dir.path().join("run");
    let o = ordrd(&["run", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for a in ARTIFACTS {
        let text = read(&out.join(a));
        assert!(text.starts_with("# manifest_sha256="), "{a}");
        assert!(text.lines().next().unwrap().ends_with(" seed=7"), "{a}");
    }
    let est = read(&out.join("estimates.tsv"));
    for panel in ["ATO", "ATT"] {
        let selected: Vec<&str> = est
            .lines()
            .filter(|l| l.starts_with(panel) && l.split('\t').nth(2) == Some("true"))
            .collect();
        assert_eq!(selected.len(), 1, "{panel}\n{est}");
    }
    let sym = read(&out.join("balance_symmetric.tsv"));
    assert!(sym.lines().any(|l| l.starts_with("NONE\t")));
    assert!(read(&out.join("probit.txt")).contains("converged: true"));
}

#[test]
fn seed_flag_and_workers_do_not_change_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(dir.path(), &rating_config(800, 0.5, 4), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        code(&ordrd(&[
            "run",
            "--manifest",
            s(&m),
            "--out",
            s(&a),
            "--workers",
            "1"
        ])),
        0
    );
    assert_eq!(
        code(&ordrd(&[
            "run",
            "--manifest",
            s(&m),
            "--out",
            s(&b),
            "--workers",
            "3"
        ])),
        0
    );
    for f in ARTIFACTS {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let c = dir.path().join("c");
    assert_eq!(
        code(&ordrd(&[
            "run",
            "--manifest",
            s(&m),
            "--out",
            s(&c),
            "--seed",
            "99"
        ])),
        0
    );
    assert!(read(&c.join("estimates.tsv")).starts_with("# manifest_sha256="));
    assert!(read(&c.join("estimates.tsv"))
        .lines()
        .next()
        .unwrap()
        .ends_with("seed=99"));
}

#[test]
fn imbalance_everywhere_stops_at_the_balance_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = rating_config(1500, 0.0, 5);
    cfg.beta = vec![0.3, 2.5, 0.0];
    // The probit leaves out x2, which drives the rating.
    let m = analysis_fixture(
        dir.path(),
        &cfg,
        "[model]\nprobit_terms = [\"x1\", \"x3\"]\n",
    );
    let out = dir.path().join("run");
    let o = ordrd(&["run", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(&out.join("report.txt")).contains("no balanced symmetric interval"));
    assert!(out.join("probit.txt").exists());
    assert!(out.join("balance_symmetric.tsv").exists());
    assert!(!out.join("estimates.tsv").exists());
    assert!(read(&out.join("errors.tsv")).contains("balance\t"));
}

#[test]
fn falsify_reports_table_columns_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let m = analysis_fixture(dir.path(), &rating_config(1200, 0.0, 6), "");
    let control = dir.path().join("control.csv");
    write_csv(&dataset(&rating_config(1200, 0.0, 60)), &control);
    let out = dir.path().join("f");
    let o = ordrd(&[
        "falsify",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--control-data",
        s(&control),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(&out.join("report.txt"));
    assert!(report.contains("FALSIFICATION"));
    let header = report
        .lines()
        .find(|l| l.starts_with("estimand  "))
        .unwrap();
    for col in ["estimate", "se", "p_value"] {
        assert!(header.split_whitespace().any(|c| c == col), "{header}");
    }
    assert!(report
        .lines()
        .any(|l| l.starts_with("falsification: PASS") || l.starts_with("falsification: FAIL")));

    let effect = dir.path().join("effect.csv");
    write_csv(&dataset(&rating_config(1200, 2.0, 61)), &effect);
    let out = dir.path().join("g");
    let o = ordrd(&[
        "falsify",
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--control-data",
        s(&effect),
    ]);
    assert_eq!(code(&o), 0);
    assert!(read(&out.join("report.txt")).contains("falsification: FAIL"));
}

const SIM: &str = r#"
[dgp]
n = 1000
beta = [0.8, 0.3]
cutoffs = [-0.7, 0.2, 1.1]
threshold = 2
noise_sd = 1.0
seed = 11
mu0 = { intercept = 1.0, terms = ["x1"], coefficients = [0.5] }
mu1 = { intercept = 2.0, terms = ["x1"], coefficients = [0.5] }

[pipeline]
estimand = "ATO"
interval = { rule = "fixed", e_min = 0.1, e_max = 0.9 }

[monte_carlo]
replications = REPS
"#;

#[test]
fn simulate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("sim.toml");
    std::fs::write(&m, SIM.replace("REPS", "10")).unwrap();
    let out = dir.path().join("sim");
    let t = Instant::now();
    let o = ordrd(&["simulate", "--manifest", s(&m), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.elapsed().as_secs() < 60);
    let records = read(&out.join("mc_records.tsv"));
    assert_eq!(records.lines().count(), 2 + 10);
    assert!(read(&out.join("mc_summary.tsv")).contains("replications\t10"));
    assert!(read(&out.join("report.txt")).contains("95% coverage"));

    std::fs::write(&m, SIM.replace("REPS", "0")).unwrap();
    assert_eq!(
        code(&ordrd(&["simulate", "--manifest", s(&m), "--out", s(&out)])),
        2
    );
}
