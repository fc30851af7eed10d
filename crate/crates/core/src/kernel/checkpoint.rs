use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::KernelError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

/// Renders a model as a versioned JSON checkpoint. Floats are written in
/// shortest round-trip form, so loading gives back identical bits.
pub fn to_checkpoint_string<M: Serialize>(kind: &str, model: &M) -> Result<String, KernelError> {
    serde_json::to_string_pretty(&Envelope {
        format: kind.to_string(),
        version: CHECKPOINT_VERSION,
        model,
    })
    .map_err(|e| KernelError::Checkpoint(e.to_string()))
}

pub fn from_checkpoint_str<M: DeserializeOwned>(kind: &str, text: &str) -> Result<M, KernelError> {
    let env: Envelope<M> =
        serde_json::from_str(text).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
    if env.format != kind {
        return Err(KernelError::Checkpoint(format!(
            "expected a '{kind}' checkpoint, found '{}'",
            env.format
        )));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(KernelError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            env.version
        )));
    }
    Ok(env.model)
}

pub fn save_checkpoint<M: Serialize>(
    path: impl AsRef<Path>,
    kind: &str,
    model: &M,
) -> Result<(), KernelError> {
    fs::write(path, to_checkpoint_string(kind, model)?)?;
    Ok(())
}

pub fn load_checkpoint<M: DeserializeOwned>(
    path: impl AsRef<Path>,
    kind: &str,
) -> Result<M, KernelError> {
    from_checkpoint_str(kind, &fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Activation, LayerSpec, ModelParams};

    #[test]
    fn round_trip_is_bit_exact() {
        let m = ModelParams::<f64>::new(
            vec![
                LayerSpec::lstm(3, 5, false),
                LayerSpec::dense(5, 2, Activation::Softmax).frozen(),
            ],
            123,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, "sequential", &m).unwrap();
        let back: ModelParams<f64> = load_checkpoint(&path, "sequential").unwrap();
        assert_eq!(back, m);
        for (a, b) in m.layers.iter().zip(&back.layers) {
            assert!(a.weight.bit_eq(&b.weight) && a.bias.bit_eq(&b.bias));
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let text = to_checkpoint_string("a", &1u32).unwrap();
        assert!(from_checkpoint_str::<u32>("b", &text).is_err());
        assert_eq!(from_checkpoint_str::<u32>("a", &text).unwrap(), 1);
    }
}
