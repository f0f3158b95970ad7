//! Checkpoint format.
//!
//! A checkpoint is two files sharing a stem:
//! - `<stem>.json`: manifest with `format`, `kind` (`encoder`/`decoder`),
//!   `config`, `seed`, `step`, `n_params` and the tensor table
//!   (`name`, `offset`, `shape`);
//! - `<stem>.bin`: `n_params` IEEE-754 doubles, little-endian, in layout order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::decoder::DecoderModel;
use super::encoder::EncoderModel;
use super::transformer::{TensorInfo, Transformer};
use crate::corpus::io::{read_json, write_json};
use crate::error::{Error, Result};

pub const FORMAT: &str = "relevance-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub kind: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub n_params: usize,
    pub tensors: Vec<TensorInfo>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

fn save(net: &Transformer, kind: &str, stem: &Path, seed: u64, step: u64) -> Result<()> {
    let (json, bin) = paths(stem);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        kind: kind.into(),
        config: net.config.clone(),
        seed,
        step,
        n_params: net.params.len(),
        tensors: net.layout.tensors.clone(),
    };
    write_json(&json, &manifest)?;
    let mut bytes = Vec::with_capacity(net.params.len() * 8);
    for p in &net.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
}

fn load(stem: &Path, kind: &str) -> Result<(Transformer, CheckpointManifest)> {
    let (json, bin) = paths(stem);
    let manifest: CheckpointManifest = read_json(&json)?;
    let bad = |msg: String| Error::Parse {
        path: json.clone(),
        msg,
    };
    if manifest.format != FORMAT {
        return Err(bad(format!("unknown format {}", manifest.format)));
    }
    if manifest.kind != kind {
        return Err(bad(format!("expected a {kind} checkpoint, found {}", manifest.kind)));
    }
    if !bin.exists() {
        return Err(Error::MissingArtifact(bin));
    }
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut net = Transformer::init(manifest.config.clone(), 0)?;
    if bytes.len() != net.params.len() * 8 || manifest.n_params != net.params.len() {
        return Err(Error::Parse {
            path: bin,
            msg: format!("expected {} parameters", net.params.len()),
        });
    }
    if manifest.tensors != net.layout.tensors {
        return Err(bad("tensor table does not match the config".into()));
    }
    for (p, chunk) in net.params.iter_mut().zip(bytes.chunks_exact(8)) {
        *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok((net, manifest))
}

pub fn save_encoder(model: &EncoderModel, stem: &Path, seed: u64, step: u64) -> Result<()> {
    save(&model.net, "encoder", stem, seed, step)
}

pub fn load_encoder(stem: &Path) -> Result<(EncoderModel, CheckpointManifest)> {
    let (net, m) = load(stem, "encoder")?;
    Ok((EncoderModel { net }, m))
}

pub fn save_decoder(model: &DecoderModel, stem: &Path, seed: u64, step: u64) -> Result<()> {
    save(&model.net, "decoder", stem, seed, step)
}

pub fn load_decoder(stem: &Path) -> Result<(DecoderModel, CheckpointManifest)> {
    let (net, m) = load(stem, "decoder")?;
    Ok((DecoderModel { net }, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_round_trips_losslessly() {
        let cfg = ModelConfig::encoder(50, 16, 2);
        let m = EncoderModel::init(cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("student");
        save_encoder(&m, &stem, 5, 42).unwrap();
        let (back, manifest) = load_encoder(&stem).unwrap();
        assert_eq!(back.net.params, m.net.params);
        assert_eq!(manifest.step, 42);
        assert!(load_decoder(&stem).is_err());
    }

    #[test]
    fn missing_checkpoint_names_file() {
        let err = load_encoder(Path::new("/nonexistent/ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
        assert!(err.to_string().contains("ckpt.json"));
    }
}
