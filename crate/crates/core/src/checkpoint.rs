//! Single-file checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a JSON header, then every
//! tensor as row-major little-endian `f32` in header order. Tensor names are
//! the hierarchical parameter keys (`state_core/projection/W`, ...).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data_ingest::Vocabulary;
use crate::error::{MdstError, Result};
use crate::model::MdstModel;
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "N")]
    pub n_objects: usize,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training metadata (epoch, metric snapshot, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, model: &MdstModel, vocab: &Vocabulary, metadata: serde_json::Value) -> Result<()> {
    let tensors: Vec<TensorEntry> = model
        .store
        .iter()
        .map(|(_, name, m)| TensorEntry {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect();
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        d: model.config.d_model,
        n_objects: model.config.n_objects,
        config: model.config.clone(),
        vocab: vocab.clone(),
        tensors,
        metadata,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
    let mut buf = Vec::with_capacity(8 + json.len() + model.store.num_scalars() * 4);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, m) in model.store.iter() {
        for &x in m.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| MdstError::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| MdstError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| MdstError::io(path, e))
}

pub fn read_header(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| MdstError::io(path, e))?;
    let bad = |m: &str| MdstError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("file too short"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if 8 + hlen > bytes.len() {
        return Err(bad("header length exceeds file size"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    Ok((header, bytes[8 + hlen..].to_vec()))
}

/// Rebuilds the model described by the header and fills in every tensor.
pub fn load_checkpoint(path: &Path) -> Result<(MdstModel, Vocabulary, CheckpointHeader)> {
    let (header, data) = read_header(path)?;
    let bad = |m: String| MdstError::Checkpoint(format!("{}: {m}", path.display()));
    let mut model = MdstModel::new(header.config.clone(), 0)?;
    let expected: usize = header.tensors.iter().map(|t| t.rows * t.cols * 4).sum();
    if expected != data.len() {
        return Err(bad(format!("{} data bytes, header declares {expected}", data.len())));
    }
    if header.tensors.len() != model.store.len() {
        return Err(bad(format!(
            "{} tensors stored, model has {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    let mut off = 0;
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let values: Vec<f64> = data[off..off + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        off += n * 4;
        let slot = model
            .store
            .by_name_mut(&t.name)
            .ok_or_else(|| bad(format!("unknown tensor {}", t.name)))?;
        if slot.shape() != (t.rows, t.cols) {
            return Err(bad(format!(
                "tensor {} is {}x{}, model expects {:?}",
                t.name,
                t.rows,
                t.cols,
                slot.shape()
            )));
        }
        *slot = Matrix::from_vec(t.rows, t.cols, values)?;
    }
    let vocab = header.vocab.clone();
    Ok((model, vocab, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
        let cfg = ModelConfig::tiny(vocab.len(), 5, 2);
        let model = MdstModel::new(cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, &vocab, serde_json::json!({"epoch": 1})).unwrap();
        let (back, v, header) = load_checkpoint(&path).unwrap();
        assert_eq!(v, vocab);
        assert_eq!(header.metadata["epoch"], 1);
        assert!(header.tensors.iter().any(|t| t.name == "state_core/projection/W"));
        for (id, name, m) in model.store.iter() {
            let b = back.store.get(id);
            assert_eq!(back.store.name(id), name);
            for (x, y) in m.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(MdstError::Checkpoint(_))));
    }
}
