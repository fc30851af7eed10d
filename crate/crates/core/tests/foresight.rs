use proptest::prelude::*;

use smartpilot_core::datagen::{gen_forecast, ForecastGenConfig};
use smartpilot_core::foresight::*;
use smartpilot_core::kernel::TrainConfig;

fn constant_series(value: f64, n: usize) -> (ForecastSeries, StructuredFeatures) {
    (
        ForecastSeries {
            product_id: "C".into(),
            values: vec![value; n],
            period_ms: DEFAULT_PERIOD_MS,
            timestamps: (0..n as i64).map(|t| t * DEFAULT_PERIOD_MS).collect(),
        },
        StructuredFeatures {
            names: vec!["raw".into()],
            rows: (0..n).map(|t| vec![(t % 5) as f64]).collect(),
        },
    )
}

fn quick() -> ForesightConfig {
    ForesightConfig {
        lstm_units: (16, 8),
        dense_units: 8,
        train: TrainConfig {
            learning_rate: 5e-3,
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        },
        ..ForesightConfig::default()
    }
}

#[test]
fn constant_series_is_forecast_as_the_constant() {
    let (s, f) = constant_series(30.0, 120);
    let m = train_forecaster(&s, &f, false, &ForesightConfig::default()).unwrap();
    let r = evaluate(&m, &s, &f).unwrap();
    for y in &r.forecasts {
        assert!((y - 30.0).abs() <= 1.0, "forecast {y}");
    }
}

#[test]
fn zero_epochs_return_the_initialization() {
    let (s, f) = constant_series(10.0, 60);
    let mut cfg = quick();
    cfg.train.epochs = 0;
    let a = train_forecaster(&s, &f, true, &cfg).unwrap();
    let (s2, _) = constant_series(50.0, 60);
    let b = train_forecaster(&s2, &f, true, &cfg).unwrap();
    assert_eq!(a.recurrent, b.recurrent);
    assert_eq!(a.head, b.head);
    let trained = train_forecaster(&s, &f, true, &quick()).unwrap();
    assert_ne!(trained.head, a.head);
}

#[test]
fn training_and_forecasting_are_deterministic() {
    let (products, _) = gen_forecast(&ForecastGenConfig {
        periods: 120,
        ..ForecastGenConfig::default()
    })
    .unwrap();
    let p = &products[0];
    let a = train_forecaster(&p.series, &p.features, true, &quick()).unwrap();
    let b = train_forecaster(&p.series, &p.features, true, &quick()).unwrap();
    assert_eq!(a, b);
    let ra = evaluate(&a, &p.series, &p.features).unwrap();
    assert_eq!(ra, evaluate(&b, &p.series, &p.features).unwrap());
    assert!(ra.mae <= ra.rmse);
    let w = &p.series.values[..24];
    let x = &p.features.rows[24];
    assert_eq!(forecast_next(&a, w, x).unwrap(), forecast_next(&a, w, x).unwrap());
}

#[test]
fn kil_adds_parameters() {
    let (s, f) = constant_series(10.0, 60);
    let base = train_forecaster(&s, &f, false, &quick()).unwrap();
    let kil = train_forecaster(&s, &f, true, &quick()).unwrap();
    assert_eq!(kil.param_count() - base.param_count(), quick().dense_units * f.names.len());
}

#[test]
fn improvement_reproduces_three_table_rows() {
    let agg = |f: f64, a: f64| ForecastAggregate {
        avg_forecast: f,
        avg_actual: a,
    };
    // Toy rocket: base 24 vs actual 30, infused 28.
    let toy = improvement(&agg(24.0, 30.0), &agg(28.0, 30.0)).unwrap();
    assert!((toy - 66.67).abs() < 0.005, "{toy}");
    let brd = improvement(&agg(121.0, 100.0), &agg(113.0, 100.0)).unwrap();
    assert!((brd - 38.10).abs() < 0.005, "{brd}");
    let fmx = improvement(&agg(68.0, 100.0), &agg(78.0, 100.0)).unwrap();
    assert!((fmx - 31.25).abs() < 1e-9, "{fmx}");
    assert_eq!(improvement(&agg(5.0, 5.0), &agg(6.0, 5.0)), None);
}

proptest! {
    #[test]
    fn mae_never_exceeds_rmse(pairs in prop::collection::vec((0.0..1e3f64, 0.0..1e3f64), 1..60)) {
        let (f, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = ForecastResult::from_pairs("p", f.clone(), a.clone()).unwrap();
        let mae = f.iter().zip(&a).map(|(x, y)| (x - y).abs()).sum::<f64>() / f.len() as f64;
        let rmse = (f.iter().zip(&a).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
        prop_assert!((r.mae - mae).abs() <= 1e-9 * mae.max(1.0));
        prop_assert!((r.rmse - rmse).abs() <= 1e-9 * rmse.max(1.0));
        prop_assert!(r.mae <= r.rmse * (1.0 + 1e-12));
    }
}
