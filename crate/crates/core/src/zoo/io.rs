//! On-disk zoo layout: `manifest.json` plus one `WZT1` file per tensor.
//!
//! Tensors are written first and the manifest last, so a directory with a
//! manifest is always complete.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Hyperparams, LoraFactors, ModelRecord, NamedLayer, Splits, Zoo, ZooMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::wzt;

pub const MANIFEST_FILE: &str = "manifest.json";
const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    universe_size: usize,
    subset_size: usize,
    trees: Vec<String>,
    splits: Splits,
    seed: u64,
    split_ratios: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    holdout_classes: Vec<String>,
    records: Vec<RecordEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordEntry {
    id: String,
    tree: String,
    layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lora: Vec<LoraEntry>,
    label_bits: String,
    hyperparams: Hyperparams,
    embedding_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_accuracy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    file: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct LoraEntry {
    layer: String,
    b_file: String,
    b_shape: [usize; 2],
    a_file: String,
    a_shape: [usize; 2],
}

/// Packs bits LSB-first into bytes and hex-encodes them.
pub(crate) fn bits_to_hex(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    hex::encode(bytes)
}

pub(crate) fn hex_to_bits(s: &str, len: usize) -> std::result::Result<Vec<bool>, String> {
    let bytes = hex::decode(s).map_err(|e| format!("bad label_bits hex: {e}"))?;
    if bytes.len() != len.div_ceil(8) {
        return Err(format!(
            "label_bits has {} bytes, universe of {len} needs {}",
            bytes.len(),
            len.div_ceil(8)
        ));
    }
    let bits: Vec<bool> = (0..bytes.len() * 8)
        .map(|i| bytes[i / 8] & (1 << (i % 8)) != 0)
        .collect();
    if bits[len..].iter().any(|&b| b) {
        return Err("label_bits sets bits beyond the universe".into());
    }
    Ok(bits[..len].to_vec())
}

fn tensor_file(id: &str, suffix: &str) -> String {
    format!("{TENSOR_DIR}/{id}.{suffix}.wzt")
}

fn write_matrix(dir: &Path, rel: &str, m: &Matrix) -> Result<()> {
    wzt::write_matrix(&dir.join(rel), m)
}

pub fn save_zoo(zoo: &Zoo, dir: &Path) -> Result<()> {
    zoo.validate()?;
    fs::create_dir_all(dir.join(TENSOR_DIR)).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(zoo.records.len());
    for r in &zoo.records {
        let mut layers = Vec::new();
        for l in &r.layers {
            let file = tensor_file(&r.model_id, &l.name);
            write_matrix(dir, &file, &l.weights)?;
            layers.push(LayerEntry {
                name: l.name.clone(),
                file,
                shape: [l.weights.rows(), l.weights.cols()],
            });
        }
        let mut lora = Vec::new();
        for f in &r.lora {
            let b_file = tensor_file(&r.model_id, &format!("{}.lora_b", f.layer));
            let a_file = tensor_file(&r.model_id, &format!("{}.lora_a", f.layer));
            write_matrix(dir, &b_file, &f.b)?;
            write_matrix(dir, &a_file, &f.a)?;
            lora.push(LoraEntry {
                layer: f.layer.clone(),
                b_file,
                b_shape: [f.b.rows(), f.b.cols()],
                a_file,
                a_shape: [f.a.rows(), f.a.cols()],
            });
        }
        records.push(RecordEntry {
            id: r.model_id.clone(),
            tree: r.tree_id.clone(),
            layers,
            lora,
            label_bits: bits_to_hex(&r.label_bits),
            hyperparams: r.hyperparams.clone(),
            embedding_key: r.embedding_key.clone(),
            final_accuracy: r.final_accuracy,
        });
    }
    let manifest = Manifest {
        universe_size: zoo.meta.universe_size,
        subset_size: zoo.meta.subset_size,
        trees: zoo.meta.trees.clone(),
        splits: zoo.meta.splits.clone(),
        seed: zoo.meta.seed,
        split_ratios: zoo.meta.split_ratios,
        holdout_classes: zoo.meta.holdout_classes.clone(),
        records,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

fn read_checked(dir: &Path, rel: &str, shape: [usize; 2]) -> Result<Matrix> {
    let path: PathBuf = dir.join(rel);
    let m = wzt::read_matrix(&path)?;
    if [m.rows(), m.cols()] != shape {
        return Err(Error::format(
            &path,
            format!(
                "manifest shape {}x{} disagrees with tensor header {}x{}",
                shape[0],
                shape[1],
                m.rows(),
                m.cols()
            ),
        ));
    }
    Ok(m)
}

pub fn load_zoo(dir: &Path) -> Result<Zoo> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for entry in manifest.records {
        let mut layers = Vec::new();
        for l in &entry.layers {
            layers.push(NamedLayer {
                name: l.name.clone(),
                weights: read_checked(dir, &l.file, l.shape)?,
            });
        }
        let mut lora = Vec::new();
        for l in &entry.lora {
            lora.push(LoraFactors {
                layer: l.layer.clone(),
                b: read_checked(dir, &l.b_file, l.b_shape)?,
                a: read_checked(dir, &l.a_file, l.a_shape)?,
            });
        }
        let label_bits = hex_to_bits(&entry.label_bits, manifest.universe_size)
            .map_err(|msg| Error::format(&path, format!("record {}: {msg}", entry.id)))?;
        records.push(ModelRecord {
            model_id: entry.id,
            tree_id: entry.tree,
            layers,
            lora,
            label_bits,
            embedding_key: entry.embedding_key,
            hyperparams: entry.hyperparams,
            final_accuracy: entry.final_accuracy,
        });
    }
    let zoo = Zoo {
        meta: ZooMeta {
            universe_size: manifest.universe_size,
            subset_size: manifest.subset_size,
            trees: manifest.trees,
            splits: manifest.splits,
            seed: manifest.seed,
            split_ratios: manifest.split_ratios,
            holdout_classes: manifest.holdout_classes,
        },
        records,
    };
    zoo.validate()
        .map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(zoo)
}
