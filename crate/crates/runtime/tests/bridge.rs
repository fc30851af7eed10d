use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smartpilot_core::predictx::{AnomalyClass, PredictionResult};
use smartpilot_runtime::InsightBridge;

fn prediction(c: AnomalyClass, ts: i64) -> PredictionResult {
    let mut probs = vec![0.0; AnomalyClass::COUNT];
    probs[c.index()] = 1.0;
    let mut p = PredictionResult::from_probs(Vec::new(), probs);
    p.timestamp = ts;
    p
}

#[test]
fn rate_equals_brute_force_recount_on_random_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let window = rng.random_range(1..=15);
        let threshold = rng.random_range(0.0..1.0);
        let len = rng.random_range(1..=60);
        let p_anom: f64 = rng.random();
        let stream: Vec<AnomalyClass> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < p_anom {
                    AnomalyClass::from_index(rng.random_range(1..AnomalyClass::COUNT)).unwrap()
                } else {
                    AnomalyClass::Normal
                }
            })
            .collect();
        let mut bridge = InsightBridge::new(window, threshold).unwrap();
        for (k, c) in stream.iter().enumerate() {
            let ins = bridge.push(&prediction(*c, k as i64));
            let tail = &stream[(k + 1).saturating_sub(window)..=k];
            let anomalous = tail.iter().filter(|c| **c != AnomalyClass::Normal).count();
            let rate = anomalous as f64 / tail.len() as f64;
            assert_eq!(ins.window_anomaly_rate, rate);
            assert_eq!(ins.degraded, rate > threshold);
            assert_eq!(ins.window, tail.len());
            assert_eq!(ins.timestamp, k as i64);
            let counted: usize = ins.recent_classes.values().sum();
            assert_eq!(counted, tail.len());
            for (class, n) in &ins.recent_classes {
                assert_eq!(*n, tail.iter().filter(|c| *c == class).count());
            }
        }
    }
}
