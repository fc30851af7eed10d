use smartpilot_core::datagen::*;
use smartpilot_core::predictx::{write_dataset, AnomalyClass};

/// Lag-1 sample autocorrelation, computed from centered sums.
fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        den += (x[i] - mean).powi(2);
        if i + 1 < x.len() {
            num += (x[i] - mean) * (x[i + 1] - mean);
        }
    }
    num / den
}

#[test]
fn memory_coefficient_makes_series_autocorrelated() {
    for seed in 0..5 {
        let (products, meta) = gen_forecast(&ForecastGenConfig {
            seed,
            ..ForecastGenConfig::default()
        })
        .unwrap();
        assert_eq!(meta.b, 0.8);
        for p in &products {
            let r = lag1_autocorrelation(&p.series.values);
            assert!(r > 0.5, "seed {seed} {} r = {r}", p.series.product_id);
        }
    }
}

#[test]
fn constant_driver_gives_steady_series() {
    let cfg = ForecastGenConfig {
        noise_sigma: 0.0,
        raw_jitter: 0.0,
        shift_every: 1e9,
        ..ForecastGenConfig::default()
    };
    let (products, _) = gen_forecast(&cfg).unwrap();
    for p in &products {
        let raw = p.features.rows[0][0];
        let steady = 0.5 * raw / (1.0 - 0.8);
        assert!(p.series.values.iter().all(|v| (v - steady).abs() < 1e-9));
    }
}

#[test]
fn normal_label_iff_every_frame_in_range() {
    let d = gen_assembly(&GenConfig {
        n_windows: 400,
        ..GenConfig::default()
    })
    .unwrap();
    for s in &d.samples {
        let all_in = s
            .window
            .frames
            .iter()
            .zip(&s.window.state_ids)
            .all(|(f, st)| d.ontology.range_penalty(f, st).unwrap() == 0.0);
        assert_eq!(s.window.label == AnomalyClass::Normal, all_in, "window at {}", s.window.timestamp);
    }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn regenerated_files_are_byte_identical() {
    let write = |root: &std::path::Path| {
        let d = gen_assembly(&GenConfig {
            n_windows: 60,
            ..GenConfig::default()
        })
        .unwrap();
        write_dataset(root.join("assembly"), &d.samples, &d.metadata.channels).unwrap();
        d.ontology.save(root.join("ontology.json")).unwrap();
        write_replay(root.join("replay.tsv"), &d, "ff").unwrap();
        gen_corpus(&CorpusConfig::default()).unwrap().write(root.join("corpus")).unwrap();
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write(a.path());
    write(b.path());
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(fa.len() >= 6);
    assert_eq!(fa, fb);
}
