use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::ontology::{CycleState, ProcessOntology, VariableRange};
use crate::predictx::{AnomalyClass, AssemblySample, Component, ImageFeatures, SensorWindow};
use crate::Real;

pub const REPLAY_STATE_TAG: &str = "state";
pub const REPLAY_CAMERA_TAG: &str = "camera";

const FRAME_PERIOD_MS: i64 = 100;
const START_MS: i64 = 1_700_000_000_000;
const SENSOR_KINDS: [&str; 4] = ["load", "torque", "position", "current"];
const PARTS: [&str; 4] = ["nose cone", "body 1", "body 2", "base"];
const ACTIONS: [&str; 6] = ["picks", "carries", "places", "aligns", "fastens", "releases"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub facility_id: String,
    pub n_channels: usize,
    pub n_states: usize,
    pub window_len: usize,
    pub n_windows: usize,
    pub anomaly_mix: BTreeMap<AnomalyClass, Real>,
    pub image_feature_dim: usize,
    /// Sensor noise as a fraction of each range half-width.
    pub noise_sigma: Real,
    /// Standard deviation of image-feature noise.
    pub image_noise: Real,
    /// Frames spent in each cycle state.
    pub state_dwell: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let mut mix = BTreeMap::new();
        mix.insert(AnomalyClass::Normal, 0.4);
        for c in &AnomalyClass::ALL[1..] {
            mix.insert(*c, 0.1);
        }
        Self {
            seed: 42,
            facility_id: "rocket-line".into(),
            n_channels: 12,
            n_states: 21,
            window_len: 30,
            n_windows: 2000,
            anomaly_mix: mix,
            image_feature_dim: 64,
            noise_sigma: 0.35,
            image_noise: 0.6,
            state_dwell: 4,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let err = |m: String| Err(DatagenError::Config(m));
        if self.n_channels < 3 {
            return err(format!("n_channels must be at least 3, got {}", self.n_channels));
        }
        for (name, v) in [
            ("n_states", self.n_states),
            ("window_len", self.window_len),
            ("n_windows", self.n_windows),
            ("image_feature_dim", self.image_feature_dim),
            ("state_dwell", self.state_dwell),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if let Some((c, p)) = self.anomaly_mix.iter().find(|(_, p)| !(**p >= 0.0)) {
            return err(format!("proportion of {c} is {p}; proportions must be non-negative"));
        }
        let total: Real = self.anomaly_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return err(format!("anomaly proportions sum to {total}, not 1"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.image_noise >= 0.0) {
            return err("noise levels must be non-negative".into());
        }
        Ok(())
    }

    /// Window counts per class by largest remainder, so each count is
    /// within one window of its exact share.
    pub fn label_counts(&self) -> BTreeMap<AnomalyClass, usize> {
        let n = self.n_windows as Real;
        let mut counts: Vec<(AnomalyClass, usize, Real)> = self
            .anomaly_mix
            .iter()
            .map(|(c, p)| {
                let exact = p * n;
                (*c, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = counts.iter().map(|c| c.1).sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
        for &i in order.iter().take(self.n_windows.saturating_sub(assigned)) {
            counts[i].1 += 1;
        }
        counts.into_iter().map(|(c, k, _)| (c, k)).collect()
    }
}

/// Where each anomaly is planted. Emitted alongside the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyMetadata {
    pub seed: u64,
    pub channels: Vec<String>,
    /// Channels pushed out of range when the component is missing.
    pub signature_channels: BTreeMap<Component, Vec<String>>,
    /// Sign of the out-of-range excursion for each signature channel.
    pub signature_directions: BTreeMap<Component, Vec<Real>>,
    /// Unit image-feature direction added when the component is missing.
    pub image_directions: BTreeMap<Component, Vec<Real>>,
    pub label_counts: BTreeMap<AnomalyClass, usize>,
    pub frame_period_ms: i64,
}

#[derive(Clone, Debug)]
pub struct AssemblyDataset {
    pub samples: Vec<AssemblySample>,
    pub ontology: ProcessOntology,
    pub metadata: AssemblyMetadata,
}

fn component_of(c: usize, n: usize) -> Component {
    Component::ALL[(c * 3 / n).min(2)]
}

fn component_name(c: Component) -> &'static str {
    match c {
        Component::Nose => "nose",
        Component::Body1 => "body1",
        Component::Body2 => "body2",
    }
}

fn channel_names(n: usize) -> Vec<String> {
    let mut within = BTreeMap::new();
    (0..n)
        .map(|c| {
            let comp = component_of(c, n);
            let k = within.entry(comp).or_insert(0usize);
            let name = if *k < SENSOR_KINDS.len() {
                format!("{}_{}", component_name(comp), SENSOR_KINDS[*k])
            } else {
                format!("{}_{}{}", component_name(comp), SENSOR_KINDS[*k % 4], *k / 4)
            };
            *k += 1;
            name
        })
        .collect()
}

fn state_id(s: usize) -> String {
    format!("S{:02}", s + 1)
}

fn robot_functions(s: usize) -> IndexMap<String, String> {
    let mut m = IndexMap::new();
    let robot = s % 4;
    for r in 0..4 {
        let f = if r == robot {
            format!("{} the {}", ACTIONS[s % ACTIONS.len()], PARTS[(s / 2) % PARTS.len()])
        } else if (r + 1) % 4 == robot {
            "holds position".to_string()
        } else {
            "idle".to_string()
        };
        m.insert(format!("R{:02}", r + 1), f);
    }
    m
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Real> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let v: Vec<Real> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Generates windows, the ontology they were drawn from, and the planted
/// signatures.
///
/// Normal frames stay strictly inside their state's range. A missing
/// component drives its two signature channels out of range from a random
/// onset inside the window through the target frame, and shifts the image
/// features along the component's direction.
pub fn gen_assembly(config: &GenConfig) -> Result<AssemblyDataset, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_channels;
    let l = config.window_len;
    let channels = channel_names(n);

    // Ontology: per state and channel, a center and a half-width.
    let mut centers = vec![vec![0.0; n]; config.n_states];
    let mut halves = vec![vec![0.0; n]; config.n_states];
    let mut states = Vec::with_capacity(config.n_states);
    for s in 0..config.n_states {
        let mut ranges = IndexMap::new();
        for c in 0..n {
            let mu: Real = rng.random_range(2.0..8.0);
            let h: Real = rng.random_range(0.3..0.8);
            centers[s][c] = mu;
            halves[s][c] = h;
            let unit = match c % 4 {
                0 => "N",
                1 => "N*m",
                2 => "mm",
                _ => "A",
            };
            ranges.insert(
                channels[c].clone(),
                VariableRange {
                    lo: mu - h,
                    hi: mu + h,
                    unit: unit.into(),
                },
            );
        }
        let rf = robot_functions(s);
        let description = rf
            .iter()
            .find(|(_, f)| *f != "idle" && *f != "holds position")
            .map(|(r, f)| format!("{r} {f}"))
            .unwrap_or_default();
        states.push(CycleState {
            state_id: state_id(s),
            description,
            robot_functions: rf,
            variable_ranges: ranges,
        });
    }
    let ontology = ProcessOntology::new("1", config.facility_id.clone(), states)?;

    let mut signature_channels = BTreeMap::new();
    let mut signature_directions = BTreeMap::new();
    let mut signature_idx = BTreeMap::new();
    let mut image_directions = BTreeMap::new();
    for comp in Component::ALL {
        let idx: Vec<usize> = (0..n).filter(|&c| component_of(c, n) == comp).take(2).collect();
        let dirs: Vec<Real> = idx
            .iter()
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        signature_channels.insert(comp, idx.iter().map(|&c| channels[c].clone()).collect());
        signature_directions.insert(comp, dirs.clone());
        signature_idx.insert(comp, (idx, dirs));
        image_directions.insert(comp, unit_vector(&mut rng, config.image_feature_dim));
    }
    let image_bases: Vec<Vec<Real>> = (0..config.n_states)
        .map(|_| {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            (0..config.image_feature_dim).map(|_| normal.sample(&mut rng)).collect()
        })
        .collect();

    let label_counts = config.label_counts();
    let mut labels: Vec<AnomalyClass> = label_counts
        .iter()
        .flat_map(|(c, k)| std::iter::repeat_n(*c, *k))
        .collect();
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let cycle = config.n_states * config.state_dwell;
    let mut samples = Vec::with_capacity(config.n_windows);
    for (i, &label) in labels.iter().enumerate() {
        let phase = rng.random_range(0..cycle);
        let onset = rng.random_range(l.saturating_sub(10)..l);
        let state_of = |f: usize| ((phase + f) / config.state_dwell) % config.n_states;
        let mut frames = Vec::with_capacity(l + 1);
        let mut state_ids = Vec::with_capacity(l + 1);
        // Excursion sizes are fixed per window so a fault persists.
        let excess: Vec<Real> = (0..n).map(|_| rng.random_range(0.15..0.9)).collect();
        for f in 0..=l {
            let s = state_of(f);
            let mut frame = Vec::with_capacity(n);
            for c in 0..n {
                let h = halves[s][c];
                let z: Real = noise.sample(&mut rng) * config.noise_sigma;
                frame.push(centers[s][c] + h * z.clamp(-0.9, 0.9));
            }
            if f >= onset {
                for comp in label.components() {
                    let (idx, dirs) = &signature_idx[comp];
                    for (&c, &d) in idx.iter().zip(dirs) {
                        frame[c] = centers[s][c] + d * halves[s][c] * (1.0 + excess[c]);
                    }
                }
            }
            frames.push(frame);
            state_ids.push(state_id(s));
        }
        let target = frames.pop().expect("target frame");
        let target_state = state_ids.pop().expect("target state");
        let t0 = START_MS + (i * (l + 1)) as i64 * FRAME_PERIOD_MS;
        let timestamp = t0 + (l as i64 - 1) * FRAME_PERIOD_MS;
        let s_last = state_of(l - 1);
        let mut vector: Vec<Real> = image_bases[s_last]
            .iter()
            .map(|b| b + config.image_noise * noise.sample(&mut rng))
            .collect();
        for comp in label.components() {
            let m: Real = rng.random_range(1.0..2.5);
            for (v, d) in vector.iter_mut().zip(&image_directions[comp]) {
                *v += m * d;
            }
        }
        samples.push(AssemblySample {
            window: SensorWindow {
                frames,
                state_ids,
                timestamp,
                label,
            },
            image: ImageFeatures {
                vector,
                source_camera: "cam-01".into(),
                timestamp,
            },
            target,
            target_state,
        });
    }

    Ok(AssemblyDataset {
        samples,
        ontology,
        metadata: AssemblyMetadata {
            seed: config.seed,
            channels,
            signature_channels,
            signature_directions,
            image_directions,
            label_counts,
            frame_period_ms: FRAME_PERIOD_MS,
        },
    })
}

fn fmt_real(v: Real) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v:?}")
}

/// Writes the samples as a tag stream, one update per line:
/// `timestamp \t facility \t tag \t value`. Each frame carries one update
/// per channel plus its state; the last window frame also carries the
/// camera features as comma-separated values.
pub fn write_replay(
    path: impl AsRef<Path>,
    dataset: &AssemblyDataset,
    facility_id: &str,
) -> Result<(), DatagenError> {
    let channels = &dataset.metadata.channels;
    let mut out = String::new();
    for s in &dataset.samples {
        let l = s.window.window_len() as i64;
        let t0 = s.window.timestamp - (l - 1) * FRAME_PERIOD_MS;
        let frames = s.window.frames.iter().chain(std::iter::once(&s.target));
        let states = s.window.state_ids.iter().chain(std::iter::once(&s.target_state));
        for (f, (frame, state)) in frames.zip(states).enumerate() {
            let ts = t0 + f as i64 * FRAME_PERIOD_MS;
            let _ = writeln!(out, "{ts}\t{facility_id}\t{REPLAY_STATE_TAG}\t{state}");
            for (name, v) in channels.iter().zip(frame) {
                let _ = writeln!(out, "{ts}\t{facility_id}\t{name}\t{}", fmt_real(*v));
            }
            if ts == s.image.timestamp {
                let joined: Vec<String> = s.image.vector.iter().map(|v| fmt_real(*v)).collect();
                let _ = writeln!(out, "{ts}\t{facility_id}\t{REPLAY_CAMERA_TAG}\t{}", joined.join(","));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mix: &[(AnomalyClass, Real)], n: usize) -> GenConfig {
        GenConfig {
            n_windows: n,
            anomaly_mix: mix.iter().copied().collect(),
            ..GenConfig::default()
        }
    }

    #[test]
    fn all_normal_has_zero_penalty() {
        let d = gen_assembly(&small(&[(AnomalyClass::Normal, 1.0)], 50)).unwrap();
        for s in &d.samples {
            for (f, st) in s.window.frames.iter().zip(&s.window.state_ids) {
                assert_eq!(d.ontology.range_penalty(f, st).unwrap(), 0.0);
            }
            assert_eq!(d.ontology.range_penalty(&s.target, &s.target_state).unwrap(), 0.0);
        }
    }

    #[test]
    fn label_counts_follow_mix() {
        let d = gen_assembly(&small(&[(AnomalyClass::Normal, 0.5), (AnomalyClass::NoNose, 0.5)], 100)).unwrap();
        let nn = d.samples.iter().filter(|s| s.window.label == AnomalyClass::NoNose).count();
        assert!((49..=51).contains(&nn));
    }

    #[test]
    fn negative_proportion_is_rejected() {
        let cfg = small(&[(AnomalyClass::Normal, 1.5), (AnomalyClass::NoNose, -0.5)], 10);
        assert!(matches!(gen_assembly(&cfg), Err(DatagenError::Config(_))));
    }

    #[test]
    fn same_seed_same_data() {
        let a = gen_assembly(&small(&[(AnomalyClass::Normal, 0.5), (AnomalyClass::NoBody2, 0.5)], 20)).unwrap();
        let b = gen_assembly(&small(&[(AnomalyClass::Normal, 0.5), (AnomalyClass::NoBody2, 0.5)], 20)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.ontology, b.ontology);
    }

    #[test]
    fn default_channel_names() {
        let names = channel_names(12);
        assert_eq!(names[0], "nose_load");
        assert_eq!(names[4], "body1_load");
        assert_eq!(names[11], "body2_current");
    }
}
