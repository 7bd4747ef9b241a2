//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.
//!
//! `cargo test -p incidence --test acceptance -- <filter>` runs only the
//! criteria whose key contains `<filter>`.

use std::cell::OnceCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use incidence::bench::{self, BenchRow, BenchSettings};
use incidence::gbdt::{grad_hess, softmax_probs, weighted_log_loss};
use incidence::marginal::{aalen_johansen, kaplan_meier, DEFAULT_CLIP_FLOOR};
use incidence::metrics::{accuracy_in_time, properness_probe, s_cen_log_simple_from_nodes, weighted_logloss};
use incidence::multiincidence::{fit, fit_with, FitOptions};
use incidence::synthgen::{generate, SynthConfig};
use incidence::{IncidencePredictor, IncidenceVector, SurvivalDataset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, &'static str, Box<dyn FnMut() -> Check + 'a>);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn dataset(durations: Vec<f64>, events: Vec<usize>, n_events: usize) -> SurvivalDataset {
    let n = durations.len();
    SurvivalDataset::with_event_count(vec!["x".into()], vec![0.0; n], durations, events, n_events).unwrap()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn properness() -> Check {
    let started = Instant::now();
    let oracle = [0.5, 0.3, 0.2];
    let g = |t: f64| (-t).exp();
    let minimizer = properness_probe(&oracle, g, g, 1.0, 0.01);
    let gap = linf(&minimizer, &oracle);
    ensure(gap <= 0.01 + 1e-12, format!("oracle weights: argmin {minimizer:?}, L∞ {gap}"))?;

    // Half the censoring hazard: Ĝ = G^(1/2).
    let halved = properness_probe(&oracle, g, |t| g(t).sqrt(), 1.0, 0.01);
    let shift = linf(&halved, &oracle);
    ensure(shift > 0.01, format!("halved Ĝ: argmin {halved:?} moved only {shift}"))?;

    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!("L∞ {gap:.3} with oracle weights, {shift:.3} with halved Ĝ, {secs:.2}s"))
}

fn loss_expectation() -> Check {
    let started = Instant::now();
    let horizon = 0.5;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let out = generate(&SynthConfig::benchmark(200_000, 0.5, 100 + seed)).map_err(|e| e.to_string())?;
        let ds = &out.dataset;
        let n = ds.n_rows();
        let k = ds.n_events();
        let mut predictions = Vec::with_capacity(n);
        let mut analytic = 0.0;
        let mut terms = Vec::with_capacity(n);
        for i in 0..n {
            let truth = out.oracle.predict(ds.row(i), horizon);
            let p: Vec<f64> = truth.probs().iter().map(|&q| 0.8 * q + 0.2 / (k + 1) as f64).collect();
            analytic -= truth.probs().iter().zip(&p).map(|(q, pc)| q * pc.ln()).sum::<f64>();

            let law = out.censoring.law(i).expect("censored sample");
            let (t, e) = (ds.duration(i), ds.event(i));
            let term = if t > horizon {
                -p[0].ln() / law.survival(horizon)
            } else if e == 0 {
                0.0
            } else {
                -p[e].ln() / law.survival(t)
            };
            terms.push(term);
            predictions.push(IncidenceVector::from_probs(p));
        }
        analytic /= n as f64;
        let mean = terms.iter().sum::<f64>() / n as f64;
        let var = terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();

        let empirical = weighted_logloss(&predictions, ds, horizon, &out.censoring, DEFAULT_CLIP_FLOOR);
        ensure(
            (empirical - mean).abs() < 1e-9,
            format!("seed {seed}: library loss {empirical} vs direct sum {mean}"),
        )?;
        let z = (empirical - analytic).abs() / se;
        ensure(z < 3.0, format!("seed {seed}: empirical {empirical:.5} analytic {analytic:.5} ({z:.2} SE)"))?;
        worst = worst.max(z);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("max deviation {worst:.2} SE over 5 seeds, {secs:.1}s"))
}

fn gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let classes = rng.random_range(2..=5);
        let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target = rng.random_range(0..classes);
        let weight = rng.random_range(0.0..5.0);
        let loss = |s: &[f64]| weighted_log_loss(softmax_probs(s).probs(), target, weight);
        let probs = softmax_probs(&raw);
        let (grad, hess) = grad_hess(probs.probs(), target, weight);
        for c in 0..classes {
            let shifted = |delta: f64| {
                let mut s = raw.clone();
                s[c] += delta;
                s
            };
            let fd_grad = (loss(&shifted(h)) - loss(&shifted(-h))) / (2.0 * h);
            let grad_at = |s: &[f64]| grad_hess(softmax_probs(s).probs(), target, weight).0[c];
            let fd_hess = (grad_at(&shifted(h)) - grad_at(&shifted(-h))) / (2.0 * h);
            let err = (fd_grad - grad[c]).abs().max((fd_hess - hess[c]).abs());
            ensure(err < 1e-6, format!("draw {draw} class {c}: error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("100 draws, max |analytic − finite difference| {worst:.1e}"))
}

fn simplex() -> Check {
    let out = generate(&SynthConfig::benchmark(2000, 0.5, 11)).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        n_iter: 30,
        ..TrainConfig::default()
    };
    let model = fit(&out.dataset, &config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t_max = model.t_max();
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let row: Vec<f64> = (0..model.n_features()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let horizon = rng.random_range(0.0..1.2 * t_max);
        let v = model.predict(&row, horizon);
        let p = v.probs();
        ensure(
            p.iter().all(|&x| (0.0..=1.0).contains(&x)),
            format!("prediction {i} leaves [0, 1]: {p:?}"),
        )?;
        let err = (p.iter().sum::<f64>() - 1.0).abs();
        ensure(err <= 1e-9, format!("prediction {i} sums to 1 + {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("10⁴ predictions, max |Σ − 1| {worst:.1e}"))
}

fn marginals() -> Check {
    let km = kaplan_meier(&[1.0, 2.0, 3.0, 4.0, 5.0], &[true, false, true, false, true]);
    let expected = [
        (0.5, 1.0),
        (1.0, 0.8),
        (2.0, 0.8),
        (3.0, 0.8 * 2.0 / 3.0),
        (4.5, 0.8 * 2.0 / 3.0),
        (5.0, 0.0),
    ];
    for (t, s) in expected {
        let got = km.value(t);
        ensure((got - s).abs() <= 1e-12, format!("KM S({t}) = {got}, expected {s}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 50;
    // Durations on a coarse lattice so that ties occur.
    let durations: Vec<f64> = (0..n).map(|_| rng.random_range(1..=20) as f64 / 4.0).collect();
    let events: Vec<usize> = (0..n).map(|_| rng.random_range(0..=2)).collect();
    let ds = dataset(durations.clone(), events.clone(), 2);
    let aj = aalen_johansen(&ds);

    let mut times: Vec<f64> = durations.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut surv_before = 1.0;
    let mut cif = [0.0; 2];
    let mut worst = 0.0f64;
    for &u in &times {
        let at_risk = durations.iter().filter(|&&t| t >= u).count() as f64;
        let d: Vec<f64> = (1..=2)
            .map(|k| (0..n).filter(|&i| durations[i] == u && events[i] == k).count() as f64)
            .collect();
        for (c, dk) in cif.iter_mut().zip(&d) {
            *c += surv_before * dk / at_risk;
        }
        surv_before *= 1.0 - (d[0] + d[1]) / at_risk;
        for (curve, c) in aj.cifs.iter().zip(&cif) {
            worst = worst.max((curve.value(u) - c).abs());
        }
        let identity = aj.cifs[0].value(u) + aj.cifs[1].value(u) + aj.survival.value(u);
        ensure((identity - 1.0).abs() <= 1e-12, format!("ΣCIF + S = {identity} at {u}"))?;
    }
    ensure(worst <= 1e-12, format!("Aalen–Johansen deviates from direct summation by {worst:e}"))?;
    Ok(format!("KM exact on 5 rows; AJ vs direct summation {worst:.1e} on {n} rows"))
}

/// Benchmark rows shared by the synthetic-benchmark and censoring-trend
/// criteria.
fn sweep_rows() -> Result<Vec<BenchRow>, String> {
    let settings = BenchSettings::default();
    let mut rows = Vec::new();
    for seed in 0..5 {
        let started = Instant::now();
        let cell = bench::censoring_sweep(20_000, 10, &[0.2, 0.5, 0.8], seed, &settings).map_err(|e| e.to_string())?;
        eprintln!("  sweep seed {seed} done in {:.0}s", started.elapsed().as_secs_f64());
        rows.extend(cell);
    }
    Ok(rows)
}

fn mean_of(rows: &[BenchRow], model: &str, censoring: f64, seeds: std::ops::Range<u64>) -> f64 {
    let sel: Vec<&BenchRow> = rows
        .iter()
        .filter(|r| r.model == model && r.censoring == censoring && seeds.contains(&r.seed))
        .collect();
    sel.iter().map(|r| r.ibs).sum::<f64>() / sel.len() as f64
}

fn synthetic_benchmark(rows: &[BenchRow]) -> Check {
    let model = mean_of(rows, bench::MODEL_MULTIINCIDENCE, 0.5, 0..3);
    let aj = mean_of(rows, bench::MODEL_AALEN_JOHANSEN, 0.5, 0..3);
    let oracle = mean_of(rows, bench::MODEL_ORACLE, 0.5, 0..3);
    let slowest = rows
        .iter()
        .filter(|r| r.model == bench::MODEL_MULTIINCIDENCE && r.censoring == 0.5 && r.seed < 3)
        .map(|r| r.fit_seconds)
        .fold(0.0, f64::max);
    let detail = format!(
        "IBS {model:.4} vs Aalen–Johansen {aj:.4}, oracle {oracle:.4} ({:+.1}%), slowest fit {slowest:.0}s",
        100.0 * (model - oracle) / oracle
    );
    ensure(model <= aj - 0.005, format!("not 0.005 below Aalen–Johansen: {detail}"))?;
    ensure(model <= 1.15 * oracle, format!("more than 15% above the oracle: {detail}"))?;
    ensure(slowest < 120.0, format!("fit budget exceeded: {detail}"))?;
    Ok(detail)
}

fn censoring_trend(rows: &[BenchRow]) -> Check {
    let means: Vec<f64> = [0.2, 0.5, 0.8]
        .iter()
        .map(|&c| mean_of(rows, bench::MODEL_MULTIINCIDENCE, c, 0..5))
        .collect();
    let detail = format!("IBS at 20/50/80% censoring: {:.4} / {:.4} / {:.4}", means[0], means[1], means[2]);
    ensure(means.windows(2).all(|w| w[0] <= w[1]), format!("decreasing: {detail}"))?;
    Ok(detail)
}

fn zero_weight_nullity() -> Check {
    let out = generate(&SynthConfig::benchmark(3000, 0.5, 21)).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        n_iter: 40,
        seed: 9,
        ..TrainConfig::default()
    };
    let full = fit_with(&out.dataset, &config, FitOptions::default()).map_err(|e| e.to_string())?;
    let dropped = fit_with(
        &out.dataset,
        &config,
        FitOptions {
            drop_zero_weight_rows: true,
        },
    )
    .map_err(|e| e.to_string())?;
    let a = full.to_json().map_err(|e| e.to_string())?;
    let b = dropped.to_json().map_err(|e| e.to_string())?;
    ensure(a.as_bytes() == b.as_bytes(), "serialized models differ")?;
    Ok(format!("{} serialized bytes identical", a.len()))
}

fn fixtures() -> Check {
    // Interval-censored log score with two node intervals on [0, 2].
    let ds = dataset(vec![0.5, 1.5, 3.0], vec![1, 0, 2], 2);
    let cif = [
        0.0, 0.3, 0.6, // event in (0, 1]: −log(0.3 − 0)
        0.0, 0.2, 0.5, // censored in (1, 2]: −log(1 − 0.5)
        0.0, 0.4, 0.9, // event past t_max, last interval: −log(0.9 − 0.4)
    ];
    let got = s_cen_log_simple_from_nodes(&cif, &ds, 2, 2.0).map_err(|e| e.to_string())?;
    let hand = (-(0.3f64).ln() - (0.5f64).ln() - (0.5f64).ln()) / 3.0;
    ensure((got - hand).abs() <= 1e-12, format!("S_Cen-log-simple {got} vs hand {hand}"))?;

    let preds = vec![
        IncidenceVector::from_probs(vec![0.2, 0.3, 0.5]), // event 2 by ζ: hit
        IncidenceVector::from_probs(vec![0.4, 0.4, 0.2]), // still at risk, tie goes to 0: hit
        IncidenceVector::from_probs(vec![0.5, 0.3, 0.2]), // event 1 by ζ: miss
    ];
    let ds = dataset(vec![0.5, 2.0, 0.8], vec![2, 1, 1], 2);
    let acc = accuracy_in_time(&preds, &ds, 1.0).map_err(|e| e.to_string())?;
    ensure((acc - 2.0 / 3.0).abs() <= 1e-12, format!("accuracy {acc} vs hand 2/3"))?;
    let censored = dataset(vec![0.5, 2.0, 0.8], vec![2, 1, 0], 2);
    let acc = accuracy_in_time(&preds, &censored, 1.0).map_err(|e| e.to_string())?;
    ensure((acc - 1.0).abs() <= 1e-12, format!("accuracy {acc} with the miss censored, hand 1"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 500;
    let durations: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
    let events: Vec<usize> = (0..n).map(|_| rng.random_range(0..=3)).collect();
    let ds = dataset(durations, events, 3);
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let transform = |f: &dyn Fn(f64) -> f64| -> Vec<IncidenceVector> {
        raw.iter()
            .map(|v| {
                let w: Vec<f64> = v.iter().map(|&x| f(x)).collect();
                let s: f64 = w.iter().sum();
                IncidenceVector::from_probs(w.into_iter().map(|x| x / s).collect())
            })
            .collect()
    };
    let base = accuracy_in_time(&transform(&|x| x), &ds, 1.0).map_err(|e| e.to_string())?;
    let maps: [(&str, &dyn Fn(f64) -> f64); 3] = [("7x", &|x| 7.0 * x), ("x³", &|x| x * x * x), ("exp", &|x| x.exp())];
    for (name, f) in maps {
        let acc = accuracy_in_time(&transform(f), &ds, 1.0).map_err(|e| e.to_string())?;
        ensure(acc == base, format!("accuracy {acc} after {name}, {base} before"))?;
    }
    Ok(format!("hand fixtures exact; accuracy {base:.3} unchanged under 3 monotone maps"))
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |key: &str| filters.is_empty() || filters.iter().any(|f| key.contains(f.as_str()));

    let sweep = OnceCell::new();
    let shared_sweep = || sweep.get_or_init(sweep_rows).clone();

    let criteria: Vec<Criterion> = vec![
        ("1", "properness", Box::new(properness)),
        ("2", "loss-expectation", Box::new(loss_expectation)),
        ("3", "gradient", Box::new(gradient)),
        ("4", "simplex", Box::new(simplex)),
        ("5", "marginal-estimators", Box::new(marginals)),
        ("6", "synthetic-benchmark", Box::new(|| synthetic_benchmark(&shared_sweep()?))),
        ("7", "censoring-trend", Box::new(|| censoring_trend(&shared_sweep()?))),
        ("8", "zero-weight-nullity", Box::new(zero_weight_nullity)),
        ("9", "fixtures", Box::new(fixtures)),
    ];

    let mut failed = 0;
    let mut ran = 0;
    for (id, key, mut check) in criteria {
        if !wanted(key) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(&mut check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} {key}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {key}: FAIL ({detail}) [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
