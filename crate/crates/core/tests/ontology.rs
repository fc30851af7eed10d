use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smartpilot_core::datagen::{gen_assembly, GenConfig};
use smartpilot_core::kernel::{Graph, ParamId, Slot, Tensor};
use smartpilot_core::ontology::{load_ontology, load_ontology_file, range_penalty_graph, CycleState, ProcessOntology, VariableRange};
use smartpilot_core::predictx::{AnomalyClass, PredictionResult};

fn ontology(ranges: &[(f64, f64)]) -> ProcessOntology {
    let vars: IndexMap<String, VariableRange> = ranges
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| (format!("v{i}"), VariableRange { lo, hi, unit: "u".into() }))
        .collect();
    let state = CycleState {
        state_id: "S".into(),
        description: "state".into(),
        robot_functions: IndexMap::from([("R1".to_string(), "holds".to_string())]),
        variable_ranges: vars,
    };
    ProcessOntology::new("1", "f", vec![state]).unwrap()
}

/// Hinge sum written out per variable with explicit branches.
fn brute_force(v: &[f64], ranges: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for (x, &(lo, hi)) in v.iter().zip(ranges) {
        if *x < lo {
            total += (lo - x) * (lo - x);
        } else if *x > hi {
            total += (x - hi) * (x - hi);
        }
    }
    total
}

fn ranges_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-50.0..50.0f64, 0.0..20.0f64).prop_map(|(lo, w)| (lo, lo + w)), 1..12)
}

proptest! {
    #[test]
    fn penalty_equals_brute_force_hinge(
        (ranges, v) in ranges_strategy().prop_flat_map(|r| {
            let n = r.len();
            (Just(r), prop::collection::vec(-100.0..100.0f64, n))
        })
    ) {
        let o = ontology(&ranges);
        let p = o.range_penalty(&v, "S").unwrap();
        prop_assert!(p >= 0.0);
        prop_assert!((p - brute_force(&v, &ranges)).abs() <= 1e-12 * p.max(1.0));
    }

    #[test]
    fn explain_lists_exactly_the_violations(
        (ranges, v) in ranges_strategy().prop_flat_map(|r| {
            let n = r.len();
            (Just(r), prop::collection::vec(-100.0..100.0f64, n))
        })
    ) {
        let o = ontology(&ranges);
        let mut probs = vec![0.0; AnomalyClass::COUNT];
        probs[AnomalyClass::NoNose.index()] = 1.0;
        let pred = PredictionResult::from_probs(v.clone(), probs);
        let e = o.explain(&pred, &v, "S").unwrap();
        let outside: Vec<usize> = (0..v.len()).filter(|&i| v[i] < ranges[i].0 || v[i] > ranges[i].1).collect();
        prop_assert_eq!(e.responsible_variables.len(), outside.len());
        for r in &e.responsible_variables {
            prop_assert!(r.observed < r.expected_lo || r.observed > r.expected_hi);
        }
        let mags: Vec<f64> = e
            .responsible_variables
            .iter()
            .map(|r| (r.expected_lo - r.observed).max(r.observed - r.expected_hi))
            .collect();
        prop_assert!(mags.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(e.possible_misclassification, outside.is_empty());
        prop_assert_eq!(&e, &o.explain(&pred, &v, "S").unwrap());
    }
}

#[test]
fn ten_thousand_random_vectors_match_hinge_oracle() {
    let ranges: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 - 3.0, i as f64 * 1.5)).collect();
    let o = ontology(&ranges);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-30.0..40.0)).collect();
        let p = o.range_penalty(&v, "S").unwrap();
        assert!((p - brute_force(&v, &ranges)).abs() <= 1e-12 * p.max(1.0));
    }
}

/// Exhaustive over a 5-variable grid straddling every boundary.
#[test]
fn zero_penalty_iff_all_in_range_on_grid() {
    let ranges = [(0.0, 1.0), (-2.0, 2.0), (5.0, 5.0), (-1.0, 0.0), (10.0, 20.0)];
    let o = ontology(&ranges);
    let levels = |(lo, hi): (f64, f64)| [lo - 1.0, lo - 1e-9, lo, (lo + hi) / 2.0, hi, hi + 1e-9, hi + 1.0];
    let grids: Vec<[f64; 7]> = ranges.iter().map(|&r| levels(r)).collect();
    let mut count = 0;
    for a in grids[0] {
        for b in grids[1] {
            for c in grids[2] {
                for d in grids[3] {
                    for e in grids[4] {
                        let v = [a, b, c, d, e];
                        let inside = v.iter().zip(&ranges).all(|(x, (lo, hi))| lo <= x && x <= hi);
                        let p = o.range_penalty(&v, "S").unwrap();
                        assert_eq!(p == 0.0, inside, "{v:?} -> {p}");
                        count += 1;
                    }
                }
            }
        }
    }
    assert_eq!(count, 7usize.pow(5));
}

#[test]
fn one_variable_two_above_gives_four() {
    let o = ontology(&[(0.0, 10.0), (0.0, 1.0)]);
    assert_eq!(o.range_penalty(&[12.0, 0.5], "S").unwrap(), 4.0);
    assert_eq!(o.range_penalty(&[5.0, 0.5], "S").unwrap(), 0.0);
    assert!(o.range_penalty(&[5.0, 0.5], "missing").is_err());
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let ranges: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, i as f64 + 2.0)).collect();
    let (lo, hi): (Vec<f64>, Vec<f64>) = ranges.iter().copied().unzip();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let id = ParamId {
        net: 0,
        layer: 0,
        slot: Slot::Weight,
    };
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut g = Graph::<f64>::new();
        let p = g.param(id, &Tensor::matrix(2, 6, x.to_vec()).unwrap(), true);
        let l = range_penalty_graph(
            &mut g,
            p,
            Tensor::matrix(2, 6, [lo.clone(), lo.clone()].concat()).unwrap(),
            Tensor::matrix(2, 6, [hi.clone(), hi.clone()].concat()).unwrap(),
        )
        .unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).values()[0], grads[&id].values().to_vec())
    };
    for _ in 0..200 {
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-4.0..12.0)).collect();
        let near_boundary = x
            .iter()
            .enumerate()
            .any(|(i, v)| (v - lo[i % 6]).abs() < 1e-3 || (v - hi[i % 6]).abs() < 1e-3);
        if near_boundary {
            continue;
        }
        let (_, analytic) = eval(&x);
        for k in 0..12 {
            let h = 1e-5;
            let mut up = x.clone();
            up[k] += h;
            let mut down = x.clone();
            down[k] -= h;
            let fd = (eval(&up).0 - eval(&down).0) / (2.0 * h);
            let err = (analytic[k] - fd).abs() / fd.abs().max(analytic[k].abs()).max(1e-8);
            assert!(err < 1e-4 || (analytic[k] - fd).abs() < 1e-9, "k={k} analytic {} fd {fd}", analytic[k]);
        }
    }
}

#[test]
fn generated_ontology_has_252_ranges() {
    let d = gen_assembly(&GenConfig {
        n_windows: 50,
        ..GenConfig::default()
    })
    .unwrap();
    let text = d.ontology.to_document_string();
    let o = load_ontology(&text).unwrap();
    assert_eq!(o.states().len(), 21);
    let total: usize = o.states().iter().map(|s| s.variable_ranges.len()).sum();
    assert_eq!(total, 252);
    assert_eq!(o, d.ontology);
}

#[test]
fn file_round_trip_is_exact() {
    let d = gen_assembly(&GenConfig {
        n_windows: 20,
        ..GenConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("onto.json");
    d.ontology.save(&path).unwrap();
    let back = load_ontology_file(&path).unwrap();
    assert_eq!(back, d.ontology);
    assert_eq!(back.to_document_string(), std::fs::read_to_string(&path).unwrap());
}
