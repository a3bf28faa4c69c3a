//! Run configuration, output directories, and the provenance record every
//! command leaves behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use probex_core::pipeline::ModelConfig;
use probex_core::trainer::TrainConfig;
use probex_core::zoo::{AlignSpec, TaskSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_FILE: &str = "run.json";

/// Config file contents. Every section is optional; flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<TaskSpec>,
    pub align: Option<AlignSpec>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub zoo: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub layers: Option<Vec<String>>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// A usage or configuration error (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// A failed check (exit code 1).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Prepares an empty output directory; an existing non-empty one is only
/// replaced under `force`.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if occupied {
            if !force {
                return Err(usage(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let mut entries = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            out.push((rel, path));
        }
    }
    Ok(())
}

/// Content hash over the run config and every input file, each file framed
/// like a git blob (`blob <len>\0<bytes>`) after its relative path.
pub fn content_hash(config: &serde_json::Value, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    for input in inputs {
        let mut files = Vec::new();
        if input.is_dir() {
            collect_files(input, input, &mut files)?;
        } else {
            let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            files.push((name, input.to_path_buf()));
        }
        for (rel, path) in files {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(format!("blob {}\0", bytes.len()).as_bytes());
            h.update(&bytes);
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config: &'a serde_json::Value,
    inputs: Vec<String>,
    content_hash: String,
}

/// Writes `run.json`: the resolved config and the hash of all inputs.
pub fn write_run_record(out: &Path, command: &str, config: &impl Serialize, inputs: &[&Path]) -> Result<()> {
    let config = serde_json::to_value(config)?;
    let record = RunRecord {
        command,
        config: &config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        content_hash: content_hash(&config, inputs)?,
    };
    write_json(&out.join(RUN_FILE), &record)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Parses `a,b,c` into positive integers.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let dims = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("bad dimension list `{s}`")))?;
    if dims.contains(&0) {
        bail!(Usage(format!("dimensions must be positive, got `{s}`")));
    }
    Ok(dims)
}
