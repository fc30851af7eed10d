//! Tab-separated dataset files.
//!
//! `assembly.tsv` holds `window_len + 1` consecutive frame rows per sample
//! (the window, then its target frame) with columns
//! `timestamp, state_id, <channels>, label`. `image_features.tsv` holds one
//! row per sample keyed by the window timestamp:
//! `timestamp, camera, v0, v1, ...`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AnomalyClass, AssemblySample, ImageFeatures, PredictxError, SensorWindow};
use crate::Real;

pub const DATASET_FILE: &str = "assembly.tsv";
pub const FEATURES_FILE: &str = "image_features.tsv";
/// Spacing of the frame timestamps written for each window.
pub const FRAME_PERIOD_MS: i64 = 100;

/// Writes both dataset files into `dir`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    samples: &[AssemblySample],
    channels: &[String],
) -> Result<(), PredictxError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let window_len = samples.first().map_or(0, |s| s.window.window_len());
    let mut ts = String::new();
    let _ = writeln!(ts, "# window_len={window_len}");
    let _ = writeln!(ts, "timestamp\tstate_id\t{}\tlabel", channels.join("\t"));
    let mut feats = String::new();
    for s in samples {
        let w = &s.window;
        if w.window_len() != window_len {
            return Err(PredictxError::Input("windows differ in length".into()));
        }
        let period = FRAME_PERIOD_MS;
        let t0 = w.timestamp - (window_len as i64 - 1) * period;
        let rows = w.frames.iter().chain(std::iter::once(&s.target));
        let states = w.state_ids.iter().chain(std::iter::once(&s.target_state));
        for (f, (frame, state)) in rows.zip(states).enumerate() {
            let values: Vec<String> = frame.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(
                ts,
                "{}\t{state}\t{}\t{}",
                t0 + f as i64 * period,
                values.join("\t"),
                w.label
            );
        }
        let values: Vec<String> = s.image.vector.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(feats, "{}\t{}\t{}", s.image.timestamp, s.image.source_camera, values.join("\t"));
    }
    fs::write(dir.join(DATASET_FILE), ts)?;
    fs::write(dir.join(FEATURES_FILE), feats)?;
    Ok(())
}

fn bad(line: usize, msg: impl std::fmt::Display) -> PredictxError {
    PredictxError::Format(format!("line {line}: {msg}"))
}

fn parse_real(s: &str, line: usize) -> Result<Real, PredictxError> {
    s.parse::<Real>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(line, format!("'{s}' is not a finite number")))
}

/// Reads a dataset written by [`write_dataset`]. Returns the samples and the
/// channel names.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Vec<AssemblySample>, Vec<String>), PredictxError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(DATASET_FILE))?;
    let mut lines = text.lines().enumerate();
    let window_len: usize = lines
        .next()
        .and_then(|(_, l)| l.strip_prefix("# window_len="))
        .and_then(|v| v.trim().parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| bad(1, "expected '# window_len=<n>'"))?;
    let header: Vec<&str> = lines
        .next()
        .map(|(_, l)| l.split('\t').collect())
        .ok_or_else(|| bad(2, "missing header"))?;
    if header.len() < 4 || header[0] != "timestamp" || header[1] != "state_id" || header[header.len() - 1] != "label" {
        return Err(bad(2, "header must be timestamp, state_id, <channels>, label"));
    }
    let channels: Vec<String> = header[2..header.len() - 1].iter().map(|s| s.to_string()).collect();
    let n = channels.len();

    let mut images = HashMap::new();
    let feats = fs::read_to_string(dir.join(FEATURES_FILE))?;
    for (i, line) in feats.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(PredictxError::Format(format!("{FEATURES_FILE} line {}: too few columns", i + 1)));
        }
        let ts: i64 = cols[0].parse().map_err(|_| bad(i + 1, "bad timestamp"))?;
        let vector = cols[2..].iter().map(|v| parse_real(v, i + 1)).collect::<Result<_, _>>()?;
        images.insert(
            ts,
            ImageFeatures {
                vector,
                source_camera: cols[1].to_string(),
                timestamp: ts,
            },
        );
    }

    let mut samples = Vec::new();
    let mut frames = Vec::with_capacity(window_len + 1);
    let mut states = Vec::with_capacity(window_len + 1);
    let mut stamps = Vec::with_capacity(window_len + 1);
    let mut label = AnomalyClass::Normal;
    for (i, line) in lines {
        let no = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != n + 3 {
            return Err(bad(no, format!("expected {} columns, got {}", n + 3, cols.len())));
        }
        stamps.push(cols[0].parse::<i64>().map_err(|_| bad(no, "bad timestamp"))?);
        states.push(cols[1].to_string());
        frames.push(cols[2..2 + n].iter().map(|v| parse_real(v, no)).collect::<Result<Vec<_>, _>>()?);
        label = cols[n + 2].parse().map_err(|e| bad(no, e))?;
        if frames.len() == window_len + 1 {
            let target = frames.pop().expect("target row");
            let target_state = states.pop().expect("target state");
            let timestamp = stamps[window_len - 1];
            let image = images
                .remove(&timestamp)
                .ok_or_else(|| bad(no, format!("no image features for timestamp {timestamp}")))?;
            samples.push(AssemblySample {
                window: SensorWindow {
                    frames: std::mem::take(&mut frames),
                    state_ids: std::mem::take(&mut states),
                    timestamp,
                    label,
                },
                image,
                target,
                target_state,
            });
            stamps.clear();
        }
    }
    if !frames.is_empty() {
        return Err(PredictxError::Format(format!(
            "trailing {} rows do not form a complete window (label {label})",
            frames.len()
        )));
    }
    Ok((samples, channels))
}
