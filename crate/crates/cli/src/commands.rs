use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use incidence::bench::{self, BenchCell, BenchSettings};
use incidence::data::{
    load_csv, quantile_grid, read_features, save_csv, DURATION_COLUMN, EVENT_COLUMN,
};
use incidence::marginal::{censoring_km, CensoringSurvival};
use incidence::metrics::{self, default_ibs_grid, integrated_brier, EvalSettings};
use incidence::multiincidence::{self, monotonicity_audit, CensoringWeights};
use incidence::synthgen::{self, OracleCensoring, OracleCif, SynthConfig, SynthSidecar};
use incidence::{Error, MultiIncidenceModel, PredictionCube, SurvivalDataset, TrainConfig};

use crate::manifest::{display, sibling, RunManifest};
use crate::{BenchmarkArgs, EvaluateArgs, FitArgs, GenerateArgs, PredictArgs, TrainArgs, Weights};

/// Any-event quantiles at which accuracy and C-index are reported.
const POINTWISE_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];
const MONOTONICITY_PAIRS: usize = 1000;
const MONOTONICITY_TOLERANCE: f64 = 0.05;

fn train_config(args: &TrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: args.learning_rate,
        n_iter: args.n_iter,
        max_depth: args.max_depth,
        n_time_samples: args.n_times,
        n_censoring_warmup: args.n_warmup,
        clip_floor: args.clip_floor,
        seed,
        censoring_weights: if args.marginal_censoring {
            CensoringWeights::MarginalKm
        } else {
            CensoringWeights::Feedback
        },
    }
}

fn load_dataset(path: &Path) -> Result<SurvivalDataset> {
    load_csv(path, DURATION_COLUMN, EVENT_COLUMN).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let dependence = args.censoring_features.unwrap_or(args.features.min(6));
    let config = SynthConfig::standard(
        args.n,
        args.events,
        args.features,
        dependence,
        args.censoring,
        args.seed,
    );
    let out = synthgen::generate(&config)?;
    save_csv(&out.dataset, &args.output, DURATION_COLUMN, EVENT_COLUMN)?;

    let grid = default_ibs_grid(&out.dataset, args.grid_points)?;
    let ibs = synthgen::oracle_ibs(
        &config,
        &out.dataset,
        &grid,
        out.censoring_multiplier,
        incidence::marginal::DEFAULT_CLIP_FLOOR,
    )?;
    let sidecar = SynthSidecar {
        config,
        censoring_multiplier: out.censoring_multiplier,
        realized_censoring_rate: out.dataset.censoring_rate(),
        ibs_grid: grid.horizons().to_vec(),
        oracle_ibs: ibs.average,
        oracle_ibs_per_event: ibs.per_event,
    };
    let sidecar_path = sibling(&args.output, "oracle.json");
    write_json(&sidecar_path, &sidecar)?;

    RunManifest {
        command: "generate",
        config: args,
        seed: Some(args.seed),
        fit_seconds: None,
        outputs: display(&[&args.output, &sidecar_path]),
        version: incidence::VERSION,
    }
    .write(&args.output)?;
    println!(
        "{} rows, {:.1}% censored, oracle IBS {:.5} -> {}",
        out.dataset.n_rows(),
        100.0 * sidecar.realized_censoring_rate,
        sidecar.oracle_ibs,
        args.output.display()
    );
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let config = train_config(&args.train, args.seed);
    let started = Instant::now();
    let model = multiincidence::fit(&dataset, &config)?;
    let fit_seconds = started.elapsed().as_secs_f64();
    model.save(&args.output)?;
    RunManifest {
        command: "fit",
        config: args,
        seed: Some(args.seed),
        fit_seconds: Some(fit_seconds),
        outputs: display(&[&args.output]),
        version: incidence::VERSION,
    }
    .write(&args.output)?;
    println!(
        "fitted {} rows in {:.2}s -> {}",
        dataset.n_rows(),
        fit_seconds,
        args.output.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<MultiIncidenceModel> {
    MultiIncidenceModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let file = File::open(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let (names, features, n_rows) = read_features(file, &[DURATION_COLUMN, EVENT_COLUMN])?;
    if names.len() != model.n_features() {
        return Err(Error::FeatureCount {
            expected: model.n_features(),
            got: names.len(),
        }
        .into());
    }
    let cube = PredictionCube::from_feature_rows(&model, &features, n_rows, &args.horizons);
    cube.write_csv(create(&args.output)?)?;
    RunManifest {
        command: "predict",
        config: args,
        seed: None,
        fit_seconds: None,
        outputs: display(&[&args.output]),
        version: incidence::VERSION,
    }
    .write(&args.output)?;
    println!(
        "{} rows x {} horizons -> {}",
        n_rows,
        args.horizons.len(),
        args.output.display()
    );
    Ok(())
}

fn report_csv_path(output: &Path) -> PathBuf {
    let swapped = output.with_extension("csv");
    if swapped == output {
        sibling(output, "csv")
    } else {
        swapped
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let sidecar: Option<SynthSidecar> = match &args.oracle {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let sidecar: SynthSidecar = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if sidecar.config.n_features != dataset.n_features() {
                bail!(
                    "side-car describes {} features, dataset has {}",
                    sidecar.config.n_features,
                    dataset.n_features()
                );
            }
            Some(sidecar)
        }
        None => None,
    };
    let censoring: Box<dyn CensoringSurvival> = match (args.weights, &sidecar) {
        (Weights::Km, _) => Box::new(censoring_km(&dataset)),
        (Weights::Oracle, Some(s)) => Box::new(OracleCensoring::for_dataset(
            &s.config.coefficients,
            &dataset,
            s.censoring_multiplier,
        )),
        (Weights::Oracle, None) => bail!("--weights oracle needs --oracle <side-car>"),
    };

    let (mut report, ibs_horizons) = if let Some(path) = &args.model {
        let model = load_model(path)?;
        if model.n_features() != dataset.n_features() {
            return Err(Error::FeatureCount {
                expected: model.n_features(),
                got: dataset.n_features(),
            }
            .into());
        }
        let settings = EvalSettings {
            grid: default_ibs_grid(&dataset, args.grid_points)?,
            horizons: quantile_grid(&dataset, &POINTWISE_QUANTILES)?.horizons().to_vec(),
            node_count: args.node_count,
            clip_floor: args.clip_floor,
        };
        let mut report = metrics::evaluate(&model, &dataset, &settings, censoring.as_ref())?;
        report.cif_monotonicity = Some(monotonicity_audit(
            &model,
            &dataset,
            MONOTONICITY_PAIRS,
            MONOTONICITY_TOLERANCE,
            0,
        )?);
        (report, settings.grid.horizons().to_vec())
    } else {
        let path = args.predictions.as_ref().expect("clap enforces one source");
        let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
        let cube = PredictionCube::read_csv(file)?;
        if cube.n_rows() != dataset.n_rows() {
            bail!(
                "predictions cover {} rows, dataset has {}",
                cube.n_rows(),
                dataset.n_rows()
            );
        }
        let report = metrics::evaluate_cube(&cube, &dataset, censoring.as_ref(), args.clip_floor)?;
        (report, cube.horizons().to_vec())
    };

    if let Some(s) = &sidecar {
        let oracle = OracleCif::new(s.config.coefficients.clone());
        let cube = PredictionCube::from_predictor(&oracle, &dataset, &ibs_horizons);
        let oracle_ibs = integrated_brier(&cube, &dataset, censoring.as_ref(), args.clip_floor)?;
        report = report.with_oracle_ibs(oracle_ibs.average);
    }

    write_json(&args.output, &report)?;
    let csv_path = report_csv_path(&args.output);
    report.write_csv(create(&csv_path)?)?;
    RunManifest {
        command: "evaluate",
        config: args,
        seed: None,
        fit_seconds: None,
        outputs: display(&[&args.output, &csv_path]),
        version: incidence::VERSION,
    }
    .write(&args.output)?;
    match report.oracle_ibs {
        Some(o) => println!("IBS {:.5} (oracle {:.5}) -> {}", report.ibs, o, args.output.display()),
        None => println!("IBS {:.5} -> {}", report.ibs, args.output.display()),
    }
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut rows = Vec::new();
    for &n in &args.n {
        for &censoring in &args.censoring {
            for &d in &args.d {
                for &seed in &args.seed {
                    let settings = BenchSettings {
                        n_events: args.events,
                        n_test: args.n_test,
                        grid_points: args.grid_points,
                        uncensored_test: !args.censored_test,
                        train: train_config(&args.train, seed),
                        ..BenchSettings::default()
                    };
                    let cell = BenchCell { n, censoring, d, seed };
                    let cell_rows = bench::run_cell(&cell, &settings, None)?;
                    for r in &cell_rows {
                        eprintln!(
                            "n={} censoring={} d={} seed={} {:<15} ibs={:.5} fit={:.2}s",
                            r.n, r.censoring, r.d, r.seed, r.model, r.ibs, r.fit_seconds
                        );
                    }
                    rows.extend(cell_rows);
                }
            }
        }
    }
    bench::write_rows(&rows, create(&args.output)?)?;
    let fit_seconds = rows
        .iter()
        .filter(|r| r.model == bench::MODEL_MULTIINCIDENCE)
        .map(|r| r.fit_seconds)
        .sum();
    RunManifest {
        command: "benchmark",
        config: args,
        seed: args.seed.first().copied(),
        fit_seconds: Some(fit_seconds),
        outputs: display(&[&args.output]),
        version: incidence::VERSION,
    }
    .write(&args.output)?;
    for model in [bench::MODEL_MULTIINCIDENCE, bench::MODEL_AALEN_JOHANSEN, bench::MODEL_ORACLE] {
        if let Some(mean) = bench::mean_ibs(&rows, model) {
            println!("{model:<15} mean IBS {mean:.5}");
        }
    }
    Ok(())
}
