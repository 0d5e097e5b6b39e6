//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails. Run with `cargo test -p ordrd-cli --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ordrd::balance::{
    search_asymmetric, search_symmetric, standardized_bias, BalanceInput, Interval, SearchSettings,
    WeightScheme,
};
use ordrd::dataset::Dataset;
use ordrd::estimate::{augmented_ato_parts, augmented_att_parts, Estimand};
use ordrd::normal;
use ordrd::pipeline::{
    estimate_interval, fit_propensity, resolve_terms, IntervalRule, PipelineSettings,
};
use ordrd::probit::{
    fit, log_likelihood, score, EmptyCategoryPolicy, FitSettings, ProbitData, ProbitParams,
};
use ordrd::simlab::{
    bootstrap_se, generate, generate_stream, monte_carlo, monte_carlo_range, true_estimand,
    DgpConfig, OutcomeFn,
};
use ordrd::terms::Term;
use ordrd::variance::{ScoreScope, VarianceInput};
use ordrd_cli::analysis::{analyze, falsification_pass};
use ordrd_cli::manifest::AnalysisManifest;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1. Analytic probit score against central finite differences.

fn random_probit(seed: u64, n: usize, p: usize, j: usize) -> Option<(ProbitData, ProbitParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut cutoffs = Vec::with_capacity(j - 1);
    let mut u = rng.random_range(-1.0..-0.2);
    for _ in 0..j - 1 {
        cutoffs.push(u);
        u += rng.random_range(0.3..1.2);
    }
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let category: Vec<usize> = (0..n)
        .map(|i| {
            let latent = (0..p).map(|k| x[(i, k)] * beta[k]).sum::<f64>()
                + rng.sample::<f64, _>(StandardNormal);
            cutoffs.iter().take_while(|&&c| latent > c).count()
        })
        .collect();
    let labels = (0..j).map(|c| format!("c{c}")).collect();
    let data = ProbitData::new(x, category, labels, 1).ok()?;
    // Evaluate away from the truth so the score is far from zero.
    let params = ProbitParams {
        cutoffs: cutoffs
            .iter()
            .enumerate()
            .map(|(k, c)| c + 0.03 * k as f64)
            .collect(),
        beta: beta
            .iter()
            .map(|b| b + rng.random_range(-0.2..0.2))
            .collect(),
    };
    Some((data, params))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut seed = 0u64;
    while done < 50 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9));
        let n = rng.random_range(20..=200);
        let p = rng.random_range(0..=3);
        let j = rng.random_range(2..=4);
        let Some((data, params)) = random_probit(seed, n, p, j) else {
            continue;
        };
        if params.validate().is_err() {
            continue;
        }
        let analytic = score(&params, &data).unwrap().total;
        let eta = params.to_eta();
        let k = params.cutoffs.len();
        let numeric = DVector::from_fn(eta.len(), |m, _| {
            let h = 1e-5 * (1.0 + eta[m].abs());
            let mut a = eta.clone();
            a[m] += h;
            let mut b = eta.clone();
            b[m] -= h;
            (log_likelihood(&ProbitParams::from_eta(&a, k), &data).unwrap()
                - log_likelihood(&ProbitParams::from_eta(&b, k), &data).unwrap())
                / (2.0 * h)
        });
        worst = worst.max((&analytic - &numeric).amax() / numeric.amax().max(1.0));
        done += 1;
    }
    let el = t.elapsed();
    outcome(
        worst < 1e-6 && el < Duration::from_secs(10),
        format!("50 instances, max relative error {worst:.2e}, {}", secs(el)),
    )
}

// 2. MLE recovery.

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let beta = [0.7, -0.4];
    let cutoffs = [-0.8, 0.1, 0.9];
    let fits: Vec<(Vec<f64>, bool)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = DgpConfig {
                n: 5000,
                beta: beta.to_vec(),
                cutoffs: cutoffs.to_vec(),
                threshold: 2,
                mu0: OutcomeFn::constant(0.0),
                mu1: OutcomeFn::constant(0.0),
                noise_sd: 1.0,
                correlation: None,
                ps_omit: vec![],
                outcome_fit_terms: None,
                seed: 1000 + seed,
            };
            let ds = generate(&cfg).unwrap().dataset;
            let terms = vec![Term::covariate("x1"), Term::covariate("x2")];
            let data =
                ProbitData::from_dataset(&ds, &terms, false, EmptyCategoryPolicy::Error).unwrap();
            let f = fit(&data, &FitSettings::default()).unwrap();
            let mut err: Vec<f64> = f
                .params
                .beta
                .iter()
                .zip(&beta)
                .map(|(a, b)| (a - b).abs())
                .collect();
            err.extend(
                f.params
                    .cutoffs
                    .iter()
                    .zip(&cutoffs)
                    .map(|(a, b)| (a - b).abs()),
            );
            (err, f.converged)
        })
        .collect();
    let converged = fits.iter().filter(|f| f.1).count();
    let medians: Vec<f64> = (0..5)
        .map(|k| {
            let mut v: Vec<f64> = fits.iter().map(|f| f.0[k]).collect();
            v.sort_by(f64::total_cmp);
            0.5 * (v[49] + v[50])
        })
        .collect();
    let worst = medians.iter().copied().fold(0.0, f64::max);
    let el = t.elapsed();
    outcome(
        worst < 0.1 && converged >= 99 && el < Duration::from_secs(120),
        format!(
            "100 seeds, largest median |error| {worst:.4} (beta {:.4} {:.4}, cutoffs {:.4} {:.4} {:.4}), {converged} converged, {}",
            medians[0], medians[1], medians[2], medians[3], medians[4], secs(el)
        ),
    )
}

// 3. Null-model cutoffs.

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for counts in [
        &[37usize, 91, 12, 60][..],
        &[5, 5],
        &[200, 1, 300],
        &[13, 29, 31, 47, 3],
    ] {
        let category: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let n = category.len();
        let labels = (0..counts.len()).map(|c| c.to_string()).collect();
        let data = ProbitData::new(DMatrix::zeros(n, 0), category, labels, 1).unwrap();
        let f = fit(&data, &FitSettings::default()).unwrap();
        let mut cum = 0;
        for (k, &u) in f.params.cutoffs.iter().enumerate() {
            cum += counts[k];
            worst = worst.max((u - normal::quantile(cum as f64 / n as f64)).abs());
        }
    }
    outcome(
        worst < 1e-8,
        format!("4 category tables, max |cutoff - quantile| {worst:.2e}"),
    )
}

// 4. Unit-weight SB against a Welch t-statistic.

fn welch_t(x: &[f64], z: &[bool]) -> f64 {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (v, &t) in x.iter().zip(z) {
        if t {
            a.push(*v)
        } else {
            b.push(*v)
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    (mean(&a) - mean(&b)) / (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt()
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(6..300);
        let shift = rng.random_range(-1.0..1.0);
        let scale = rng.random_range(0.1..50.0);
        let mut z: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        z[0] = true;
        z[1] = true;
        z[2] = false;
        z[3] = false;
        let x: Vec<f64> = z
            .iter()
            .map(|&t| scale * (rng.sample::<f64, _>(StandardNormal) + if t { shift } else { 0.0 }))
            .collect();
        let sb = standardized_bias(&x, &z, &vec![1.0; n]).unwrap();
        worst = worst.max((sb - welch_t(&x, &z)).abs());
    }
    outcome(
        worst < 1e-12,
        format!("100 datasets, max |SB - t| {worst:.2e}"),
    )
}

// 5. Interval search on the banded fixture.

fn criterion_5() -> Outcome {
    // Blocks at 0.5 ± (0.005 + 0.01k); balanced inside |e - 0.5| <= 0.30,
    // covariate pushed apart between arms outside.
    let (mut x, mut z, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..49 {
        let off = 0.005 + 0.01 * k as f64;
        for side in [-1.0, 1.0] {
            let s = if off > 0.30 { 5.0 } else { 0.0 };
            for v in [-1.0, 1.0] {
                x.extend([v + s, v - s]);
                z.extend([true, false]);
                e.extend([0.5 + side * off; 2]);
            }
        }
    }
    let input = BalanceInput {
        covariates: vec![x],
        treated: &z,
        e_hat: &e,
    };
    let settings = SearchSettings::default();
    let mut ok = true;
    let mut found = Vec::new();
    for scheme in [WeightScheme::Ato, WeightScheme::Att, WeightScheme::None] {
        let sym = search_symmetric(&input, scheme, &settings).unwrap();
        let Some(d) = sym.selected else {
            ok = false;
            found.push(format!("{scheme}: none"));
            continue;
        };
        let start = Interval::symmetric(d).unwrap();
        let asym = search_asymmetric(&input, scheme, start, &settings).unwrap();
        let contains = asym.path().next().is_some_and(|r| r.interval == start)
            && asym.final_interval().covers(&start);
        ok &= (d - 0.30).abs() <= settings.d_step + 1e-12 && contains;
        found.push(format!(
            "{scheme}: d* = {d}, path contains start {contains}"
        ));
    }
    outcome(ok, found.join("; "))
}

// 6. Two-unit hand examples.

fn criterion_6() -> Outcome {
    let y = [2.0, 1.0];
    let z = [true, false];
    let e = [0.5, 0.5];
    let (a1, a0) = augmented_att_parts(&y, &z, &e, &[1.0, 1.0]).unwrap();
    let (o1, o0) = augmented_ato_parts(&y, &z, &e, &[1.0, 1.0], &[2.0, 2.0]).unwrap();
    let att = a1 - a0;
    let ato = o1 - o0;
    let ok = (a1 - 2.0).abs() < 1e-12
        && (a0 - 1.0).abs() < 1e-12
        && (att - 1.0).abs() < 1e-12
        && (o1 - 2.0).abs() < 1e-12
        && (o0 - 1.0).abs() < 1e-12
        && (ato - 1.0).abs() < 1e-12;
    outcome(
        ok,
        format!("ATT {a1} - {a0} = {att}; ATO {o1} - {o0} = {ato}"),
    )
}

// 7 and 8. Monte Carlo robustness.

fn fixed_interval(estimand: Estimand) -> PipelineSettings {
    PipelineSettings {
        interval: IntervalRule::Fixed {
            e_min: 0.1,
            e_max: 0.9,
        },
        estimand,
        ..Default::default()
    }
}

/// Constant effect 1 with a quadratic control surface. Wrong outcome
/// drops the square from the fitted models; wrong PS drops x2 from the probit.
fn dr_config(wrong_ps: bool, wrong_outcome: bool) -> DgpConfig {
    let f = |c: f64| OutcomeFn {
        intercept: c,
        terms: vec!["x1".into(), "x2".into(), "x1^2".into()],
        coefficients: vec![1.0, 1.0, 0.8],
    };
    DgpConfig {
        n: 2000,
        beta: vec![0.7, 0.7],
        cutoffs: vec![-0.6, 0.3, 1.0],
        threshold: 2,
        mu0: f(0.0),
        mu1: f(1.0),
        noise_sd: 1.0,
        correlation: None,
        ps_omit: if wrong_ps { vec!["x2".into()] } else { vec![] },
        outcome_fit_terms: wrong_outcome.then(|| vec!["x1".into(), "x2".into()]),
        seed: 7,
    }
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let settings = fixed_interval(Estimand::Att);
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, wrong_ps, wrong_outcome) in [
        ("correct PS, wrong outcome", false, true),
        ("wrong PS, correct outcome", true, false),
    ] {
        let cfg = dr_config(wrong_ps, wrong_outcome);
        let r = monte_carlo(&cfg, &settings, 500, None).unwrap();
        let pass = r.mean_bias.abs() < 0.1 * r.mc_sd;
        ok &= pass;
        parts.push(format!(
            "{label}: bias {:+.4}, 0.1 x MC sd {:.4}, {} failed",
            r.mean_bias,
            0.1 * r.mc_sd,
            r.failures.len()
        ));
    }
    let el = t.elapsed();
    ok &= el < Duration::from_secs(900);
    outcome(
        ok,
        format!(
            "ATT, N = 2000, 500 reps; {}; {}",
            parts.join("; "),
            secs(el)
        ),
    )
}

/// Effect 1 + x2, so the overlap population matters. Wrong PS omits x2 from
/// the probit; wrong outcome omits the square.
fn ato_config(wrong_ps: bool, wrong_outcome: bool) -> DgpConfig {
    DgpConfig {
        n: 4000,
        beta: vec![0.8, 0.8],
        cutoffs: vec![-0.5, 0.6],
        threshold: 1,
        mu0: OutcomeFn {
            intercept: 0.0,
            terms: vec!["x1".into(), "x2".into(), "x1^2".into()],
            coefficients: vec![1.0, 1.0, 0.8],
        },
        mu1: OutcomeFn {
            intercept: 1.0,
            terms: vec!["x1".into(), "x2".into(), "x1^2".into()],
            coefficients: vec![1.0, 2.0, 0.8],
        },
        noise_sd: 1.0,
        correlation: None,
        ps_omit: if wrong_ps { vec!["x2".into()] } else { vec![] },
        outcome_fit_terms: wrong_outcome.then(|| vec!["x1".into(), "x2".into()]),
        seed: 8,
    }
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let settings = fixed_interval(Estimand::Ato);
    let good = monte_carlo(&ato_config(false, true), &settings, 500, None).unwrap();
    let bad = monte_carlo(&ato_config(true, false), &settings, 500, None).unwrap();
    let vanishes = good.mean_bias.abs() < 0.1 * good.mc_sd;
    let persists = bad.mean_bias.abs() > 2.0 * bad.mc_se_of_mean;
    outcome(
        vanishes && persists,
        format!(
            "ATO, N = 4000, 500 reps, truth {:.4}; correct PS, wrong outcome: bias {:+.4} vs 0.1 x MC sd {:.4}; wrong PS, correct outcome: bias {:+.4} vs 2 x MC se of mean {:.4}; {}",
            good.truth,
            good.mean_bias,
            0.1 * good.mc_sd,
            bad.mean_bias,
            2.0 * bad.mc_se_of_mean,
            secs(t.elapsed())
        ),
    )
}

// 9. Sandwich se against bootstrap and Monte Carlo.

fn reference_config() -> DgpConfig {
    DgpConfig {
        n: 2000,
        beta: vec![0.8, 0.3],
        cutoffs: vec![-0.7, 0.2, 1.1],
        threshold: 2,
        mu0: OutcomeFn {
            intercept: 1.0,
            terms: vec!["x1".into()],
            coefficients: vec![0.5],
        },
        mu1: OutcomeFn {
            intercept: 2.0,
            terms: vec!["x1".into()],
            coefficients: vec![0.5],
        },
        noise_sd: 1.0,
        correlation: None,
        ps_omit: vec![],
        outcome_fit_terms: None,
        seed: 42,
    }
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let cfg = reference_config();
    let mut ok = true;
    let mut parts = Vec::new();
    for estimand in [Estimand::Ato, Estimand::Att] {
        let settings = cfg.fit_settings(&fixed_interval(estimand));
        let truth = true_estimand(&cfg, estimand, Interval::new(0.1, 0.9).unwrap()).unwrap();
        let first = monte_carlo_range(&cfg, &settings, 0..500, truth).unwrap();
        let rest = monte_carlo_range(&cfg, &settings, 500..1000, truth).unwrap();
        let coverage = first.coverage;
        let all = first.merge(rest);

        let data = generate_stream(&cfg, 0).unwrap().dataset;
        let sandwich = all.records[0].se;
        let boot = bootstrap_se(&data, &settings, 2000, cfg.seed).unwrap();
        let half_se = {
            let v = &boot.estimates[..1000.min(boot.estimates.len())];
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
        };

        let vs_boot = (sandwich - boot.se).abs() / boot.se;
        let vs_mc = (all.mean_se - all.mc_sd).abs() / all.mc_sd;
        let pass = vs_boot < 0.15 && vs_mc < 0.15 && (0.92..=0.975).contains(&coverage);
        ok &= pass;
        parts.push(format!(
            "{estimand}: se {sandwich:.4} vs bootstrap {:.4} ({:.1}%), mean se {:.4} vs MC sd {:.4} ({:.1}%), coverage {coverage:.3}; bootstrap se at 1000 resamples {half_se:.4}",
            boot.se,
            100.0 * vs_boot,
            all.mean_se,
            all.mc_sd,
            100.0 * vs_mc
        ));
    }
    outcome(
        ok,
        format!("N = 2000; {}; {}", parts.join("; "), secs(t.elapsed())),
    )
}

// 10. Estimating equations at the estimates.

fn criterion_10() -> Outcome {
    let cfg = reference_config();
    let ds = generate(&cfg).unwrap().dataset;
    let model = fit_propensity(&ds, &PipelineSettings::default()).unwrap();
    let terms = resolve_terms(&[], &ds).unwrap();
    let interval = Interval::new(0.1, 0.9).unwrap();
    let att = estimate_interval(
        &ds,
        &model,
        interval,
        Estimand::Att,
        &terms,
        ScoreScope::Subsample,
    )
    .unwrap();
    let ato = estimate_interval(
        &ds,
        &model,
        interval,
        Estimand::Ato,
        &terms,
        ScoreScope::Subsample,
    )
    .unwrap();
    let rows = &ato.rows;
    let mu0 = ordrd::estimate::fit_outcome_model(&ds, rows, false, &terms).unwrap();
    let mu1 = ordrd::estimate::fit_outcome_model(&ds, rows, true, &terms).unwrap();
    let inp = VarianceInput::new(
        &ds,
        rows,
        &model.fit,
        &model.ps,
        &mu0,
        Some(&mu1),
        ScoreScope::Subsample,
    )
    .unwrap();
    let (y, e, m0) = (&inp.y, &inp.e, &inp.mu0.mu);
    let m1 = &inp.mu1.as_ref().unwrap().mu;
    let zf: Vec<f64> = inp.z.iter().map(|&t| f64::from(u8::from(t))).collect();
    let (a, o) = (&att.decomposition, &ato.decomposition);
    // Direct transcriptions of the four estimating functions.
    let sums = [
        (
            "ATT treated",
            (0..y.len()).map(|i| zf[i] * (y[i] - a.tau1)).sum::<f64>(),
        ),
        (
            "ATT control",
            (0..y.len())
                .map(|i| {
                    (y[i] * (1.0 - zf[i]) * e[i] + m0[i] * (zf[i] - e[i])) / (1.0 - e[i])
                        - a.tau0 * zf[i]
                })
                .sum(),
        ),
        (
            "ATO treated",
            (0..y.len())
                .map(|i| (1.0 - e[i]) * (zf[i] * y[i] - (zf[i] - e[i]) * m1[i] - e[i] * o.tau1))
                .sum(),
        ),
        (
            "ATO control",
            (0..y.len())
                .map(|i| {
                    e[i] * ((1.0 - zf[i]) * y[i] + (zf[i] - e[i]) * m0[i])
                        - e[i] * (1.0 - e[i]) * o.tau0
                })
                .sum(),
        ),
    ];
    let library = [&a.u1, &a.u0, &o.u1, &o.u0].map(|u| u.iter().sum::<f64>().abs());
    let worst = sums
        .iter()
        .map(|s| s.1.abs())
        .chain(library)
        .fold(0.0, f64::max);
    let detail: Vec<String> = sums.iter().map(|(k, s)| format!("{k} {s:.1e}")).collect();
    outcome(
        worst < 1e-8,
        format!("{} units; {}; max {worst:.1e}", y.len(), detail.join(", ")),
    )
}

// 11. Byte-identical outputs across two runs.

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let m = common::analysis_fixture(
        dir.path(),
        &common::rating_config(1500, 0.5, 11),
        "[inference]\nbootstrap_resamples = 200\n",
    );
    let ms = m.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ca = common::code(&common::ordrd(&[
        "run",
        "--manifest",
        ms,
        "--out",
        a.to_str().unwrap(),
    ]));
    let cb = common::code(&common::ordrd(&[
        "run",
        "--manifest",
        ms,
        "--out",
        b.to_str().unwrap(),
        "--workers",
        "2",
    ]));
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .collect();
    outcome(
        ca == 0 && cb == 0 && names.len() >= 7 && differing.is_empty(),
        format!(
            "exit codes {ca} {cb}; {} files compared, {} differ",
            names.len(),
            differing.len()
        ),
    )
}

// 12. Falsification protocol.

fn criterion_12() -> Outcome {
    let t = Instant::now();
    let manifest: AnalysisManifest = toml::from_str(&common::manifest(
        "unused.csv",
        &common::rating_config(2, 0.0, 0).labels(),
        "c3",
        &common::rating_config(2, 0.0, 0).covariate_names(),
        "[inference]\nestimands = [\"ATO\"]\n",
    ))
    .unwrap();
    let sig = manifest.inference.significance;
    let cfg = common::rating_config(1000, 0.0, 12);
    let datasets: Vec<Dataset> = (0..200u64)
        .map(|r| generate_stream(&cfg, r).unwrap().dataset)
        .collect();
    // A run whose balance search finds no interval stops before any
    // estimate (exit 5) and yields no verdict; rates are over verdicts.
    let verdict = |ds: &Dataset| -> Result<Option<(f64, f64)>, String> {
        match analyze(ds, &manifest) {
            Ok(a) => {
                let e = &a.headline().result.estimate;
                Ok(Some((e.p_value, e.se)))
            }
            Err(ordrd::Error::NoBalancedInterval(_)) => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    };
    let null: Vec<Result<Option<(f64, f64)>, String>> = datasets.par_iter().map(verdict).collect();
    let null_ok: Vec<(f64, f64)> = null
        .iter()
        .filter_map(|r| r.clone().ok().flatten())
        .collect();
    let se_scale = null_ok.iter().map(|r| r.1).sum::<f64>() / null_ok.len() as f64;
    let effect = 3.0 * se_scale;
    let injected: Vec<Result<Option<(f64, f64)>, String>> = datasets
        .par_iter()
        .map(|ds| {
            let y: Vec<f64> = ds
                .units()
                .iter()
                .zip(ds.treated())
                .map(|(u, &t)| u.outcome + if t { effect } else { 0.0 })
                .collect();
            verdict(&ds.with_outcomes(&y).map_err(|e| e.to_string())?)
        })
        .collect();
    let inj_ok: Vec<(f64, f64)> = injected
        .iter()
        .filter_map(|r| r.clone().ok().flatten())
        .collect();
    let errors = null.iter().chain(&injected).filter(|r| r.is_err()).count();
    let passes = null_ok
        .iter()
        .filter(|(p, _)| falsification_pass(*p, sig))
        .count();
    let fails = inj_ok
        .iter()
        .filter(|(p, _)| !falsification_pass(*p, sig))
        .count();
    let pass_rate = passes as f64 / null_ok.len() as f64;
    let fail_rate = fails as f64 / inj_ok.len() as f64;
    outcome(
        errors == 0 && pass_rate >= 0.85 && fail_rate >= 0.9,
        format!(
            "ATO headline, N = 1000, 200 runs each at the {sig} level; null: {passes} of {} verdicts pass, rate {pass_rate:.3}; effect {effect:.4} (3 x mean se): {fails} of {} verdicts fail, rate {fail_rate:.3}; runs without a balanced interval: {} null, {} injected; other errors {errors}; {}",
            null_ok.len(),
            inj_ok.len(),
            200 - null_ok.len(),
            200 - inj_ok.len(),
            secs(t.elapsed())
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that matches nothing
    // skips the suite.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if args
        .iter()
        .any(|a| !"acceptance criterion".contains(a.as_str()))
    {
        return;
    }
    let criteria: [(u32, fn() -> Outcome); 12] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, f) in criteria {
        if only.is_some_and(|o| o != k) {
            continue;
        }
        let o = f();
        println!(
            "criterion {k}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
