//! The four subcommands.

use std::path::{Path, PathBuf};

use ordrd::balance::{BalanceReport, Interval, SymmetricSearch};
use ordrd::dataset::{
    apply_exclusion_rules, load_dataset, summarize, ColumnSummary, Dataset, DropRecord,
};
use ordrd::estimate::Estimand;
use ordrd::numeric::spd_inverse;
use ordrd::pipeline::{IntervalRule, PropensityModel};
use ordrd::probit::propensity_by_category;
use ordrd::simlab::{bootstrap_se, generate_stream, monte_carlo_range, true_estimand};
use ordrd::Error;

use crate::analysis::{self, EstimateRow};
use crate::manifest::{load, resolve, AnalysisManifest, SimulationManifest};
use crate::output::{fixed, num, OutDir, Table};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Global {
    pub manifest: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strict: bool,
}

/// Where a failed command may still leave its error list.
pub type OutSlot = Option<OutDir>;

fn out_dir(g: &Global, manifest_dir: &Path, configured: Option<&str>) -> PathBuf {
    match (&g.out, configured) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => resolve(manifest_dir, d),
        (None, None) => manifest_dir.join("out"),
    }
}

struct Prepared {
    manifest: AnalysisManifest,
    dir: PathBuf,
    sha256: String,
    seed: u64,
}

fn prepare(g: &Global, slot: &mut OutSlot) -> Result<Prepared, Error> {
    let loaded = load::<AnalysisManifest>(&g.manifest)?;
    let mut manifest = loaded.manifest;
    if g.strict {
        manifest.data.strict = true;
    }
    let seed = g.seed.or(manifest.seed).unwrap_or(0);
    let out = out_dir(g, &loaded.dir, manifest.output.dir.as_deref());
    *slot = Some(OutDir::create(&out, &loaded.sha256, seed)?);
    manifest.validate()?;
    Ok(Prepared {
        manifest,
        dir: loaded.dir,
        sha256: loaded.sha256,
        seed,
    })
}

struct Ingested {
    dataset: Dataset,
    drops: Vec<DropRecord>,
    read: usize,
    per_rule: Vec<usize>,
}

fn ingest(path: &Path, manifest: &AnalysisManifest) -> Result<Ingested, Error> {
    let loaded = load_dataset(path, &manifest.data)?;
    let read = loaded.dataset.len() + loaded.drops.len();
    let ex = apply_exclusion_rules(&loaded.dataset, &manifest.exclude)?;
    // Exclusions can leave one side of the threshold empty.
    let n1 = ex.dataset.treated().iter().filter(|&&t| t).count();
    if n1 == 0 || n1 == ex.dataset.len() {
        return Err(Error::OneSided {
            controls: ex.dataset.len() - n1,
            treated: n1,
        });
    }
    Ok(Ingested {
        dataset: ex.dataset,
        drops: loaded.drops,
        read,
        per_rule: ex.per_rule,
    })
}

fn ingest_text(path: &Path, manifest: &AnalysisManifest, d: &Ingested) -> String {
    let n1 = d.dataset.treated().iter().filter(|&&t| t).count();
    let mut s = format!(
        "data: {}\nrows read: {}\nrows dropped: {}\n",
        path.display(),
        d.read,
        d.drops.len()
    );
    for (rule, k) in manifest.exclude.iter().zip(&d.per_rule) {
        s.push_str(&format!(
            "excluded by {} {} {}: {}\n",
            rule.covariate,
            serde_op(rule.op),
            rule.bound,
            k
        ));
    }
    s.push_str(&format!(
        "units analysed: {} ({} treated, {} control)\n",
        d.dataset.len(),
        n1,
        d.dataset.len() - n1
    ));
    s
}

fn serde_op(op: ordrd::dataset::Comparator) -> &'static str {
    use ordrd::dataset::Comparator::*;
    match op {
        Gt => ">",
        Ge => ">=",
        Lt => "<",
        Le => "<=",
        Eq => "==",
        Ne => "!=",
    }
}

fn data_path(p: &Prepared) -> Result<PathBuf, Error> {
    let rel = p
        .manifest
        .data
        .path
        .as_deref()
        .ok_or_else(|| Error::Manifest("missing key `data.path`".into()))?;
    Ok(resolve(&p.dir, rel))
}

fn column_row(c: &ColumnSummary) -> Vec<String> {
    vec![
        c.name.clone(),
        c.n.to_string(),
        num(c.mean),
        c.sd.map(num).unwrap_or_else(|| "NA".into()),
        num(c.min),
        num(c.q1),
        num(c.median),
        num(c.q3),
        num(c.max),
    ]
}

pub fn validate(g: &Global, slot: &mut OutSlot) -> Result<(), Error> {
    let p = prepare(g, slot)?;
    let out = slot.as_ref().expect("prepared");
    let path = data_path(&p)?;
    let d = ingest(&path, &p.manifest)?;

    let mut drops = Table::new(["row", "id", "reason"]);
    for r in &d.drops {
        drops.push(vec![r.row.to_string(), r.id.clone(), r.reason.to_string()]);
    }
    out.write("drops.tsv", &drops.to_tsv())?;

    let summary = summarize(&d.dataset);
    let mut cols = Table::new([
        "column", "n", "mean", "sd", "min", "q1", "median", "q3", "max",
    ]);
    cols.push(column_row(&summary.outcome));
    for c in &summary.covariates {
        cols.push(column_row(c));
    }
    out.write("summary.tsv", &cols.to_tsv())?;

    let threshold = d.dataset.scale().threshold();
    let mut cats = Table::new(["category", "n", "treated"]);
    for (k, (label, n)) in summary.categories.iter().enumerate() {
        cats.push(vec![
            label.clone(),
            n.to_string(),
            (k >= threshold).to_string(),
        ]);
    }
    out.write("categories.tsv", &cats.to_tsv())?;

    let mut report = String::from("validation report\n\n");
    report.push_str(&ingest_text(&path, &p.manifest, &d));
    report.push('\n');
    report.push_str(&cats.to_aligned());
    report.push('\n');
    report.push_str(&cols.to_aligned());
    out.write("report.txt", &report)?;
    Ok(())
}

fn probit_text(model: &PropensityModel) -> String {
    let fit = &model.fit;
    let labels = model.data.labels();
    let mut s = format!(
        "ordered probit\nconverged: {}\niterations: {}\nlog-likelihood: {}\nmax |score|: {:e}\nunits: {}\ncategories: {}\nthreshold category: {}\nstandardized design: {}\n\n",
        fit.converged,
        fit.iterations,
        num(fit.loglik),
        fit.total_score().amax(),
        fit.n,
        labels.join(" < "),
        labels[fit.threshold],
        model.data.standardization().is_some(),
    );
    let se: Vec<f64> = match spd_inverse(&fit.information, "probit") {
        Ok(inv) => (0..fit.dim()).map(|k| inv[(k, k)].sqrt()).collect(),
        Err(_) => vec![f64::NAN; fit.dim()],
    };
    let raw = model
        .data
        .standardization()
        .map(|st| st.to_original(&fit.params));
    let mut names: Vec<String> = labels
        .windows(2)
        .map(|w| format!("cutoff {}|{}", w[0], w[1]))
        .collect();
    names.extend(model.data.term_names().iter().cloned());
    let mut values = fit.params.cutoffs.clone();
    values.extend(&fit.params.beta);
    let mut t = Table::new(["parameter", "estimate", "se", "raw_scale"]);
    for (k, name) in names.iter().enumerate() {
        let raw_value = raw.as_ref().map(|r| {
            let c = r.cutoffs.len();
            if k < c {
                r.cutoffs[k]
            } else {
                r.beta[k - c]
            }
        });
        t.push(vec![
            name.clone(),
            num(values[k]),
            num(se[k]),
            raw_value.map(num).unwrap_or_else(|| num(values[k])),
        ]);
    }
    s.push_str(&t.to_aligned());
    s
}

fn propensity_table(model: &PropensityModel) -> (Table, String) {
    let diag = propensity_by_category(&model.ps, &model.data);
    let mut t = Table::new([
        "category",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
        "share_ge_half",
    ]);
    for c in &diag.categories {
        t.push(vec![
            c.label.clone(),
            c.n.to_string(),
            num(c.min),
            num(c.q1),
            num(c.median),
            num(c.q3),
            num(c.max),
            num(c.mean),
            num(c.share_at_least_half),
        ]);
    }
    let text = format!(
        "mean propensity just below threshold: {}\nmean propensity at threshold: {}\nshare below 0.5 in the two categories under the threshold: {}\nshare above 0.5 in the two categories from the threshold: {}\nmean propensity non-decreasing across categories: {}\n",
        fixed(diag.mean_below, 4),
        fixed(diag.mean_at, 4),
        fixed(diag.share_below_half_under, 4),
        fixed(diag.share_above_half_over, 4),
        diag.monotone,
    );
    (t, text)
}

fn sb_cells(r: &BalanceReport) -> Vec<String> {
    r.sb.iter()
        .map(|s| s.map(num).unwrap_or_else(|| "NA".into()))
        .collect()
}

fn symmetric_table(searches: &[SymmetricSearch], covariates: &[String]) -> Table {
    let mut cols: Vec<String> = [
        "scheme",
        "d",
        "e_min",
        "e_max",
        "n0",
        "n1",
        "max_abs_sb",
        "balanced",
        "selected",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    cols.extend(covariates.iter().map(|c| format!("sb_{c}")));
    let mut t = Table::new(cols);
    for s in searches {
        for g in &s.trace {
            let iv = Interval::symmetric(g.d).expect("grid point");
            let mut row = vec![s.scheme.to_string(), num(g.d), num(iv.e_min), num(iv.e_max)];
            match &g.report {
                Some(r) => {
                    row.extend([
                        r.n0.to_string(),
                        r.n1.to_string(),
                        num(r.max_abs_sb),
                        r.balanced.to_string(),
                    ]);
                    row.push((s.selected == Some(g.d)).to_string());
                    row.extend(sb_cells(r));
                }
                None => {
                    row.extend(["NA", "NA", "NA", "false", "false"].map(String::from));
                    row.extend(covariates.iter().map(|_| "NA".to_string()));
                }
            }
            t.push(row);
        }
    }
    t
}

fn asymmetric_table(
    paths: &[(Estimand, ordrd::balance::AsymmetricSearch)],
    covariates: &[String],
) -> Table {
    let mut cols: Vec<String> = [
        "scheme",
        "step",
        "side",
        "e_min",
        "e_max",
        "n0",
        "n1",
        "max_abs_sb",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    cols.extend(covariates.iter().map(|c| format!("sb_{c}")));
    let mut t = Table::new(cols);
    for (estimand, path) in paths {
        let sides = std::iter::once("start").chain(path.steps.iter().map(|s| match s.side {
            ordrd::balance::Side::Left => "left",
            ordrd::balance::Side::Right => "right",
        }));
        for (step, (r, side)) in path.path().zip(sides).enumerate() {
            let mut row = vec![
                estimand.to_string(),
                step.to_string(),
                side.to_string(),
                num(r.interval.e_min),
                num(r.interval.e_max),
                r.n0.to_string(),
                r.n1.to_string(),
                num(r.max_abs_sb),
            ];
            row.extend(sb_cells(r));
            t.push(row);
        }
    }
    t
}

const Z95: f64 = 1.959963984540054;

fn estimates_table(rows: &[EstimateRow]) -> Table {
    let mut t = Table::new([
        "estimand",
        "step",
        "selected",
        "e_min",
        "e_max",
        "n0",
        "n1",
        "estimate",
        "se",
        "p_value",
        "ci_low",
        "ci_high",
        "hajek",
        "theta_hat",
    ]);
    for r in rows {
        let e = &r.result.estimate;
        t.push(vec![
            e.estimand.to_string(),
            r.step.to_string(),
            r.selected.to_string(),
            num(e.interval.e_min),
            num(e.interval.e_max),
            e.n0.to_string(),
            e.n1.to_string(),
            num(e.tau),
            num(e.se),
            num(e.p_value),
            num(e.tau - Z95 * e.se),
            num(e.tau + Z95 * e.se),
            num(r.result.hajek),
            num(e.theta_hat),
        ]);
    }
    t
}

/// Human-readable panel for the selected intervals: estimate, se, p-value.
fn headline_table(rows: &[EstimateRow]) -> Table {
    let mut t = Table::new([
        "estimand", "interval", "n0", "n1", "estimate", "se", "p_value",
    ]);
    for r in rows.iter().filter(|r| r.selected) {
        let e = &r.result.estimate;
        t.push(vec![
            e.estimand.to_string(),
            format!(
                "({}, {})",
                fixed(e.interval.e_min, 2),
                fixed(e.interval.e_max, 2)
            ),
            e.n0.to_string(),
            e.n1.to_string(),
            fixed(e.tau, 4),
            fixed(e.se, 4),
            fixed(e.p_value, 4),
        ]);
    }
    t
}

/// `run`, or `falsify` when `control` is given.
pub fn run(
    g: &Global,
    control: Option<&Path>,
    falsify: bool,
    slot: &mut OutSlot,
) -> Result<(), Error> {
    let p = prepare(g, slot)?;
    let out = slot.as_ref().expect("prepared");
    let path = if falsify {
        match (control, p.manifest.falsify.data.as_deref()) {
            (Some(c), _) => c.to_path_buf(),
            (None, Some(rel)) => resolve(&p.dir, rel),
            (None, None) => {
                return Err(Error::Manifest(
                    "falsify needs --control-data or key `falsify.data`".into(),
                ))
            }
        }
    } else {
        data_path(&p)?
    };
    let mut report = String::from(if falsify {
        "FALSIFICATION report (negative-control sample)\n\n"
    } else {
        "analysis report\n\n"
    });
    report.push_str(&format!(
        "manifest: {}\nmanifest sha256: {}\nseed: {}\n",
        g.manifest.display(),
        p.sha256,
        p.seed
    ));
    let result = run_stages(&p, &path, falsify, out, &mut report);
    if let Err(e) = &result {
        report.push_str(&format!(
            "\nstopped at {} stage: {e}\n",
            stage_name(e.stage())
        ));
    }
    out.write("report.txt", &report)?;
    result
}

fn run_stages(
    p: &Prepared,
    path: &Path,
    falsify: bool,
    out: &OutDir,
    report: &mut String,
) -> Result<(), Error> {
    let m = &p.manifest;
    let d = ingest(path, m)?;
    report.push_str(&ingest_text(path, m, &d));
    let ds = &d.dataset;
    let covariates = ds.covariate_names();

    let model = analysis::fit_stage(ds, m)?;
    out.write("probit.txt", &probit_text(&model))?;
    report.push_str(&format!(
        "\nprobit: converged {} after {} iterations, log-likelihood {}\n",
        model.fit.converged,
        model.fit.iterations,
        fixed(model.fit.loglik, 4)
    ));
    let (ptable, ptext) = propensity_table(&model);
    out.write("propensity_by_category.tsv", &ptable.to_tsv())?;
    report.push_str("\npropensity by category\n");
    report.push_str(&ptable.rounded(4).to_aligned());
    report.push_str(&ptext);

    let symmetric = analysis::symmetric_stage(ds, &model, m)?;
    out.write(
        "balance_symmetric.tsv",
        &symmetric_table(&symmetric, covariates).to_tsv(),
    )?;
    report.push_str("\nsymmetric search\n");
    for s in &symmetric {
        match s.selected_report() {
            Some(r) => report.push_str(&format!(
                "  {}: d* = {} interval ({}, {}), n0 = {}, n1 = {}, max |SB| = {}\n",
                s.scheme,
                num(s.selected.unwrap_or(f64::NAN)),
                num(r.interval.e_min),
                num(r.interval.e_max),
                r.n0,
                r.n1,
                fixed(r.max_abs_sb, 3)
            )),
            None => report.push_str(&format!("  {}: no balanced symmetric interval\n", s.scheme)),
        }
    }
    let asymmetric = analysis::asymmetric_stage(ds, &model, &symmetric, m)?;
    out.write(
        "balance_asymmetric.tsv",
        &asymmetric_table(&asymmetric, covariates).to_tsv(),
    )?;
    report.push_str("\nasymmetric search\n");
    for (estimand, a) in &asymmetric {
        let r = a.final_report();
        report.push_str(&format!(
            "  {estimand}: {} accepted steps, final interval ({}, {}), n0 = {}, n1 = {}\n",
            a.steps.len(),
            num(r.interval.e_min),
            num(r.interval.e_max),
            r.n0,
            r.n1
        ));
    }

    let estimates = analysis::estimation_stage(ds, &model, &asymmetric, m)?;
    out.write("estimates.tsv", &estimates_table(&estimates).to_tsv())?;
    let mut infl = Table::new(["estimand", "id", "position", "influence", "flagged"]);
    let mut flagged = Vec::new();
    for (estimand, _) in &asymmetric {
        let row = analysis::selected(&estimates, *estimand).expect("selected row");
        let rows = analysis::influence_rows(ds, row);
        flagged.push((*estimand, rows.iter().filter(|(_, r)| r.flagged).count()));
        for (id, r) in rows {
            infl.push(vec![
                estimand.to_string(),
                id.to_string(),
                r.position.to_string(),
                num(r.influence),
                r.flagged.to_string(),
            ]);
        }
    }
    out.write("influence.tsv", &infl.to_tsv())?;

    let headline = headline_table(&estimates);
    report.push_str("\nestimates on the selected intervals (augmented estimator, sandwich se)\n");
    report.push_str(&headline.to_aligned());
    for (estimand, k) in &flagged {
        report.push_str(&format!(
            "influence: {k} {estimand} units with |I| above 5x the median\n"
        ));
    }

    let first = m.inference.estimands[0];
    let top = analysis::selected(&estimates, first).expect("selected row");
    if m.inference.bootstrap_resamples > 0 {
        let mut settings = m.pipeline(first);
        let iv = top.result.estimate.interval;
        settings.interval = IntervalRule::Fixed {
            e_min: iv.e_min,
            e_max: iv.e_max,
        };
        let b = bootstrap_se(ds, &settings, m.inference.bootstrap_resamples, p.seed)?;
        let mut t = Table::new([
            "estimand",
            "resamples",
            "used",
            "skipped",
            "bootstrap_se",
            "sandwich_se",
        ]);
        t.push(vec![
            first.to_string(),
            m.inference.bootstrap_resamples.to_string(),
            b.estimates.len().to_string(),
            b.skipped.len().to_string(),
            num(b.se),
            num(top.result.estimate.se),
        ]);
        out.write("bootstrap.tsv", &t.to_tsv())?;
        report.push_str(&format!(
            "bootstrap se ({first}, {} resamples): {}\n",
            b.estimates.len(),
            fixed(b.se, 4)
        ));
    }

    if falsify {
        let pv = top.result.estimate.p_value;
        let sig = m.inference.significance;
        let pass = analysis::falsification_pass(pv, sig);
        report.push_str(&format!(
            "\nfalsification: {} ({first} p-value {} {} significance level {})\n",
            if pass { "PASS" } else { "FAIL" },
            fixed(pv, 4),
            if pass { ">=" } else { "<" },
            sig
        ));
    }
    Ok(())
}

pub fn simulate(g: &Global, slot: &mut OutSlot) -> Result<(), Error> {
    let loaded = load::<SimulationManifest>(&g.manifest)?;
    let mut m = loaded.manifest;
    if let Some(s) = g.seed {
        m.dgp.seed = s;
    }
    let seed = m.dgp.seed;
    let dir = out_dir(g, &loaded.dir, m.output.dir.as_deref());
    *slot = Some(OutDir::create(&dir, &loaded.sha256, seed)?);
    let out = slot.as_ref().expect("created");
    m.validate()?;

    let truth = match m.monte_carlo.truth {
        Some(t) => t,
        None => match m.pipeline.interval {
            IntervalRule::Fixed { e_min, e_max } => {
                true_estimand(&m.dgp, m.pipeline.estimand, Interval::new(e_min, e_max)?)?
            }
            _ => unreachable!("checked by validate"),
        },
    };
    let first = m.monte_carlo.first_replication;
    let range = first..first + m.monte_carlo.replications;
    let mc = monte_carlo_range(&m.dgp, &m.pipeline, range, truth)?;
    out.write("mc_records.tsv", &mc.to_tsv())?;
    out.write("mc_summary.tsv", &mc.summary_text())?;

    let mut report = format!(
        "simulation report\n\nmanifest: {}\nmanifest sha256: {}\nseed: {seed}\nestimand: {}\nunits per replication: {}\nreplications: {} (first {first})\n\n",
        g.manifest.display(),
        loaded.sha256,
        m.pipeline.estimand,
        m.dgp.n,
        m.monte_carlo.replications,
    );
    let mut t = Table::new(["quantity", "value"]);
    for (k, v) in [
        ("truth", fixed(mc.truth, 6)),
        ("succeeded", mc.records.len().to_string()),
        ("failed", mc.failures.len().to_string()),
        ("mean bias", fixed(mc.mean_bias, 6)),
        ("MC sd", fixed(mc.mc_sd, 6)),
        ("MC se of mean", fixed(mc.mc_se_of_mean, 6)),
        ("mean sandwich se", fixed(mc.mean_se, 6)),
        ("95% coverage", fixed(mc.coverage, 4)),
    ] {
        t.push(vec![k.to_string(), v]);
    }
    report.push_str(&t.to_aligned());

    if m.bootstrap.resamples > 0 {
        let data = generate_stream(&m.dgp, first as u64)?.dataset;
        let settings = m.dgp.fit_settings(&m.pipeline);
        let b = bootstrap_se(&data, &settings, m.bootstrap.resamples, seed)?;
        let mut bt = Table::new([
            "resamples",
            "used",
            "skipped",
            "e_min",
            "e_max",
            "bootstrap_se",
        ]);
        bt.push(vec![
            m.bootstrap.resamples.to_string(),
            b.estimates.len().to_string(),
            b.skipped.len().to_string(),
            num(b.interval.e_min),
            num(b.interval.e_max),
            num(b.se),
        ]);
        out.write("bootstrap.tsv", &bt.to_tsv())?;
        report.push_str(&format!(
            "\nbootstrap se on replication {first}'s data: {} ({} of {} resamples used)\n",
            fixed(b.se, 6),
            b.estimates.len(),
            m.bootstrap.resamples
        ));
    }
    out.write("report.txt", &report)?;
    Ok(())
}

pub fn stage_name(stage: ordrd::Stage) -> &'static str {
    match stage {
        ordrd::Stage::Manifest => "manifest",
        ordrd::Stage::Data => "data",
        ordrd::Stage::Fit => "fit",
        ordrd::Stage::Balance => "balance",
        ordrd::Stage::Estimation => "estimation",
    }
}

pub fn exit_code(stage: ordrd::Stage) -> i32 {
    match stage {
        ordrd::Stage::Manifest => 2,
        ordrd::Stage::Data => 3,
        ordrd::Stage::Fit => 4,
        ordrd::Stage::Balance => 5,
        ordrd::Stage::Estimation => 6,
    }
}
