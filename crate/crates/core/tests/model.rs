use incidence::multiincidence::{fit, monotonicity_audit, CensoringWeights};
use incidence::synthgen::{generate, Coefficients, SynthConfig};
use incidence::{Error, IncidencePredictor, MultiIncidenceModel, TrainConfig};

fn quick() -> TrainConfig {
    TrainConfig {
        n_iter: 25,
        ..TrainConfig::default()
    }
}

#[test]
fn save_and_load_round_trip() {
    let out = generate(&SynthConfig::benchmark(800, 0.5, 1)).unwrap();
    let model = fit(&out.dataset, &quick()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = MultiIncidenceModel::load(&path).unwrap();
    assert_eq!(model.to_json().unwrap(), loaded.to_json().unwrap());
    for i in 0..50 {
        for h in [0.1, 0.3, 1.0] {
            assert_eq!(model.predict(out.dataset.row(i), h), loaded.predict(out.dataset.row(i), h));
        }
    }
}

#[test]
fn newer_format_is_rejected() {
    let out = generate(&SynthConfig::benchmark(300, 0.5, 1)).unwrap();
    let text = fit(&out.dataset, &quick()).unwrap().to_json().unwrap();
    let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(
        MultiIncidenceModel::from_json(&bumped),
        Err(Error::UnsupportedVersion { .. })
    ));
}

#[test]
fn training_is_deterministic_given_seed() {
    let out = generate(&SynthConfig::benchmark(800, 0.5, 2)).unwrap();
    let a = fit(&out.dataset, &quick()).unwrap().to_json().unwrap();
    let b = fit(&out.dataset, &quick()).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let other = TrainConfig { seed: 1, ..quick() };
    assert_ne!(a, fit(&out.dataset, &other).unwrap().to_json().unwrap());
}

#[test]
fn single_event_without_censoring_tracks_event_fraction() {
    let config = SynthConfig {
        n_samples: 3000,
        n_events: 1,
        n_features: 3,
        censoring_dependence: 0,
        target_censoring_rate: 0.0,
        seed: 3,
        coefficients: Coefficients::constant(&[1.0], &[1.0], (1.0, 1.0)),
        censoring_multiplier: None,
    };
    let ds = generate(&config).unwrap().dataset;
    let model = fit(&ds, &quick()).unwrap();
    let mut sorted = ds.durations().to_vec();
    sorted.sort_by(f64::total_cmp);
    for q in [0.25, 0.5, 0.75] {
        let h = sorted[(q * sorted.len() as f64) as usize];
        let fraction = ds.durations().iter().filter(|&&t| t <= h).count() as f64 / ds.n_rows() as f64;
        let mean: f64 = (0..ds.n_rows()).map(|i| model.predict(ds.row(i), h).cif(1)).sum::<f64>() / ds.n_rows() as f64;
        assert!((mean - fraction).abs() < 0.03, "h {h}: mean CIF {mean} vs fraction {fraction}");
    }
}

#[test]
fn prediction_edge_cases() {
    let out = generate(&SynthConfig::benchmark(600, 0.5, 4)).unwrap();
    let model = fit(&out.dataset, &quick()).unwrap();
    let row = out.dataset.row(0);
    let origin = model.predict_incidence(row, 0.0).unwrap();
    assert_eq!(origin.probs(), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(
        model.predict_incidence(row, model.t_max()).unwrap(),
        model.predict_incidence(row, 10.0 * model.t_max()).unwrap()
    );
    assert!(matches!(model.predict_incidence(&row[..3], 0.5), Err(Error::FeatureCount { .. })));

    let curves = model
        .predict_curves(row, &incidence::TimeGrid::uniform(0.0, model.t_max(), 10, model.t_max()).unwrap())
        .unwrap();
    assert_eq!(curves.len(), 10);

    let share = monotonicity_audit(&model, &out.dataset, 300, 0.05, 0).unwrap();
    assert!((0.0..=1.0).contains(&share));
}

#[test]
fn marginal_censoring_weights_also_train() {
    let out = generate(&SynthConfig::benchmark(600, 0.5, 5)).unwrap();
    let config = TrainConfig {
        censoring_weights: CensoringWeights::MarginalKm,
        ..quick()
    };
    let model = fit(&out.dataset, &config).unwrap();
    let v = model.predict(out.dataset.row(1), 0.3);
    assert!((v.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}
