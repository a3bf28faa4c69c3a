//! Synthetic model populations organized into Model Trees.
//!
//! A zoo is a set of small MLP classifiers ([`TargetNet`]), each fine-tuned
//! on a random subset of a Gaussian-mixture task. Models in one tree start
//! from the same pre-trained root; a forest gives every model a fresh
//! random initialization.

mod align;
mod io;
mod target;
mod task;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub use align::{spawn_alignment_zoo, AlignSpec};
pub use io::{load_zoo, save_zoo, MANIFEST_FILE};
pub use target::{layer_name, LoraAdapter, TargetNet};
pub use task::{Dataset, Mixture, TaskSpec};

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Layer fed to the metanetworks unless another one is selected.
pub const DEFAULT_LAYER: &str = "fc1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub weights: Matrix,
}

/// LoRA factors of one layer; the layer's weight matrix is `B·A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    pub layer: String,
    pub b: Matrix,
    pub a: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model_id: String,
    pub tree_id: String,
    pub layers: Vec<NamedLayer>,
    pub lora: Vec<LoraFactors>,
    pub label_bits: Vec<bool>,
    pub embedding_key: Option<String>,
    pub hyperparams: Hyperparams,
    /// Held-out accuracy of the target on its own task.
    pub final_accuracy: Option<f64>,
}

impl ModelRecord {
    pub fn layer_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .map(|l| l.name.as_str())
            .chain(self.lora.iter().map(|l| l.layer.as_str()))
            .collect()
    }

    /// Weight matrix of a layer, reconstructing `B·A` for LoRA layers.
    pub fn layer(&self, name: &str) -> Result<Matrix> {
        if let Some(l) = self.layers.iter().find(|l| l.name == name) {
            return Ok(l.weights.clone());
        }
        if let Some(f) = self.lora.iter().find(|l| l.layer == name) {
            return lora_reconstruct(&f.b, &f.a);
        }
        Err(Error::config(format!(
            "model {} has no layer `{name}` (available: {})",
            self.model_id,
            self.layer_names().join(", ")
        )))
    }

    pub fn classes(&self) -> Vec<usize> {
        self.label_bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

pub fn lora_reconstruct(b: &Matrix, a: &Matrix) -> Result<Matrix> {
    if b.cols() != a.rows() {
        return Err(Error::dim(format!(
            "LoRA factors B {}x{} and A {}x{} do not chain",
            b.rows(),
            b.cols(),
            a.rows(),
            a.cols()
        )));
    }
    b.matmul(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Shuffles ids with a stream derived from `seed` and cuts by `ratios`.
    pub fn assign(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<Self> {
        let total: f64 = ratios.iter().sum();
        if ratios.iter().any(|&r| r < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios {ratios:?} must sum to 1")));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        Rng::new(seed).split(0x0053_504c_4954).shuffle(&mut order);
        let n = ids.len();
        let n_train = (ratios[0] * n as f64).round() as usize;
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
        let pick = |range: std::ops::Range<usize>| -> Vec<String> {
            let mut idx: Vec<usize> = order[range].to_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| ids[i].clone()).collect()
        };
        Ok(Self {
            train: pick(0..n_train),
            val: pick(n_train..n_train + n_val),
            test: pick(n_train + n_val..n),
        })
    }

    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooMeta {
    pub universe_size: usize,
    pub subset_size: usize,
    pub trees: Vec<String>,
    pub splits: Splits,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    /// Classes whose models appear only in the test split.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holdout_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zoo {
    pub meta: ZooMeta,
    pub records: Vec<ModelRecord>,
}

impl Zoo {
    /// Builds a zoo with reproducible 70/10/20-style splits.
    pub fn new(
        records: Vec<ModelRecord>,
        universe_size: usize,
        subset_size: usize,
        seed: u64,
        ratios: [f64; 3],
    ) -> Result<Self> {
        let ids: Vec<String> = records.iter().map(|r| r.model_id.clone()).collect();
        let splits = Splits::assign(&ids, ratios, seed)?;
        let zoo = Self {
            meta: ZooMeta {
                universe_size,
                subset_size,
                trees: tree_roster(&records),
                splits,
                seed,
                split_ratios: ratios,
                holdout_classes: Vec::new(),
            },
            records,
        };
        zoo.validate()?;
        Ok(zoo)
    }

    pub fn validate(&self) -> Result<()> {
        let roster: BTreeSet<&str> = self.meta.trees.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.model_id.as_str()) {
                return Err(Error::Data(format!("duplicate model id {}", r.model_id)));
            }
            if !roster.contains(r.tree_id.as_str()) {
                return Err(Error::Data(format!(
                    "model {} belongs to unknown tree {}",
                    r.model_id, r.tree_id
                )));
            }
            if r.label_bits.len() != self.meta.universe_size {
                return Err(Error::Data(format!(
                    "model {} has {} label bits, universe is {}",
                    r.model_id,
                    r.label_bits.len(),
                    self.meta.universe_size
                )));
            }
            let pop = r.label_bits.iter().filter(|&&b| b).count();
            if pop != self.meta.subset_size {
                return Err(Error::Data(format!(
                    "model {} has {pop} classes, expected {}",
                    r.model_id, self.meta.subset_size
                )));
            }
            for f in &r.lora {
                if f.b.cols() != f.a.rows() {
                    return Err(Error::dim(format!(
                        "model {} layer {}: B has {} columns, A has {} rows",
                        r.model_id,
                        f.layer,
                        f.b.cols(),
                        f.a.rows()
                    )));
                }
            }
        }
        let s = &self.meta.splits;
        let mut assigned = BTreeSet::new();
        for id in s.train.iter().chain(&s.val).chain(&s.test) {
            if !assigned.insert(id.as_str()) {
                return Err(Error::Data(format!("model {id} appears in two splits")));
            }
            if !seen.contains(id.as_str()) {
                return Err(Error::Data(format!("split references unknown model {id}")));
            }
        }
        if assigned.len() != seen.len() {
            return Err(Error::Data("splits do not cover every record".into()));
        }
        Ok(())
    }

    pub fn record(&self, id: &str) -> Option<&ModelRecord> {
        self.records.iter().find(|r| r.model_id == id)
    }

    pub fn split(&self, split: Split) -> Vec<&ModelRecord> {
        let wanted: BTreeSet<&str> = self.meta.splits.get(split).iter().map(String::as_str).collect();
        self.records
            .iter()
            .filter(|r| wanted.contains(r.model_id.as_str()))
            .collect()
    }

    pub fn trees(&self) -> &[String] {
        &self.meta.trees
    }

    /// Restricts to a subset of records, keeping the manifest's split assignment.
    pub fn filter(&self, keep: impl Fn(&ModelRecord) -> bool) -> Zoo {
        let records: Vec<ModelRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let ids: BTreeSet<&str> = records.iter().map(|r| r.model_id.as_str()).collect();
        let retain = |v: &[String]| -> Vec<String> {
            v.iter().filter(|id| ids.contains(id.as_str())).cloned().collect()
        };
        let splits = Splits {
            train: retain(&self.meta.splits.train),
            val: retain(&self.meta.splits.val),
            test: retain(&self.meta.splits.test),
        };
        Zoo {
            meta: ZooMeta {
                trees: tree_roster(&records),
                splits,
                ..self.meta.clone()
            },
            records,
        }
    }
}

fn tree_roster(records: &[ModelRecord]) -> Vec<String> {
    let mut trees: Vec<String> = Vec::new();
    for r in records {
        if !trees.contains(&r.tree_id) {
            trees.push(r.tree_id.clone());
        }
    }
    trees
}

/// Pre-trains a root classifier on the pre-training classes `B`.
pub fn pretrain_root(task: &TaskSpec, rng: &mut Rng) -> Result<TargetNet> {
    task.validate()?;
    let mixture = task.mixture();
    let mut net = TargetNet::random(&task.layer_sizes(), rng);
    let classes: Vec<(usize, usize)> = task
        .pretrain_components()
        .into_iter()
        .enumerate()
        .map(|(logit, comp)| (comp, logit))
        .collect();
    let data = mixture.sample(&classes, task.samples_per_class, rng);
    for _ in 0..task.pretrain_epochs {
        net.sgd_epoch(&data, task.pretrain_lr, 0.0, task.batch_size, &mut [], rng);
    }
    Ok(net)
}

/// Pre-training accuracy check on fresh samples of `B`.
pub fn root_accuracy(root: &TargetNet, task: &TaskSpec, rng: &mut Rng) -> f64 {
    let classes: Vec<(usize, usize)> = task
        .pretrain_components()
        .into_iter()
        .enumerate()
        .map(|(logit, comp)| (comp, logit))
        .collect();
    let data = task.mixture().sample(&classes, task.eval_samples_per_class.max(1), rng);
    root.accuracy(&data)
}

impl TaskSpec {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.universe);
        sizes
    }
}

/// Per-model seed, derived from the population stream and model index.
fn model_seed(rng: &Rng, index: usize) -> u64 {
    rng.split(index as u64).next_u64()
}

/// Pre-fine-tuning weights of model `index`: the root itself, or a fresh
/// random network when there is no root.
pub fn initial_net(root: Option<&TargetNet>, task: &TaskSpec, seed: u64) -> TargetNet {
    match root {
        Some(r) => r.clone(),
        None => TargetNet::random(&task.layer_sizes(), &mut Rng::new(seed).split(1)),
    }
}

pub struct FineTuned {
    pub net: TargetNet,
    pub classes: Vec<usize>,
    pub hyperparams: Hyperparams,
    pub accuracy: f64,
}

/// Fine-tunes `init` on a uniformly random subset of the class universe
/// with hyperparameters drawn from the task's grids.
pub fn fine_tune(init: TargetNet, task: &TaskSpec, mixture: &Mixture, seed: u64) -> FineTuned {
    let mut rng = Rng::new(seed).split(2);
    let classes = rng.subset(task.universe, task.subset_size);
    let lr = *rng.choose(&task.lr_grid);
    let weight_decay = *rng.choose(&task.weight_decay_grid);
    let (lo, hi) = task.epoch_range;
    let epochs = lo + rng.below(hi - lo + 1);

    let pairs: Vec<(usize, usize)> = classes.iter().map(|&c| (c, c)).collect();
    let data = mixture.sample(&pairs, task.samples_per_class, &mut rng);
    let mut net = init;
    for _ in 0..epochs {
        net.sgd_epoch(&data, lr, weight_decay, task.batch_size, &mut [], &mut rng);
    }
    let held_out = mixture.sample(&pairs, task.eval_samples_per_class.max(1), &mut rng);
    let accuracy = net.accuracy(&held_out);
    FineTuned {
        net,
        classes,
        hyperparams: Hyperparams {
            lr,
            epochs,
            seed,
            weight_decay,
            lora_rank: None,
        },
        accuracy,
    }
}

fn record_from_net(
    model_id: String,
    tree_id: String,
    tuned: FineTuned,
    universe: usize,
) -> ModelRecord {
    let names = tuned.net.layer_names();
    let layers = tuned
        .net
        .weights
        .into_iter()
        .zip(names)
        .map(|(mut weights, name)| {
            weights.round_to_f32();
            NamedLayer { name, weights }
        })
        .collect();
    let mut label_bits = vec![false; universe];
    for c in tuned.classes {
        label_bits[c] = true;
    }
    ModelRecord {
        model_id,
        tree_id,
        layers,
        lora: Vec::new(),
        label_bits,
        embedding_key: None,
        hyperparams: tuned.hyperparams,
        final_accuracy: Some(tuned.accuracy),
    }
}

/// Fine-tunes `n` models. With a root they form one tree named `tree_id`;
/// without one every model is its own tree.
pub fn spawn_records(
    root: Option<&TargetNet>,
    n: usize,
    task: &TaskSpec,
    tree_id: &str,
    rng: &Rng,
) -> Result<Vec<ModelRecord>> {
    if n == 0 {
        return Err(Error::config("population size must be at least 1"));
    }
    task.validate()?;
    let mixture = task.mixture();
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = model_seed(rng, i);
            let init = initial_net(root, task, seed);
            let tuned = fine_tune(init, task, &mixture, seed);
            let model_id = format!("{tree_id}-m{i:04}");
            let tree = match root {
                Some(_) => tree_id.to_string(),
                None => format!("{tree_id}-root{i:04}"),
            };
            record_from_net(model_id, tree, tuned, task.universe)
        })
        .collect();
    Ok(records)
}

/// A single population: a Model Tree when `root` is given, a Model Forest otherwise.
pub fn spawn_population(
    root: Option<&TargetNet>,
    n: usize,
    task: &TaskSpec,
    rng: &mut Rng,
) -> Result<Zoo> {
    let prefix = if root.is_some() { "tree0" } else { "forest" };
    let records = spawn_records(root, n, task, prefix, rng)?;
    Zoo::new(records, task.universe, task.subset_size, rng.seed(), DEFAULT_SPLIT_RATIOS)
}

/// `k` independently pre-trained roots with `n` models split evenly between them.
pub fn spawn_multitree(k: usize, n: usize, task: &TaskSpec, rng: &mut Rng) -> Result<Zoo> {
    if k == 0 || n < k {
        return Err(Error::config(format!("cannot split {n} models into {k} trees")));
    }
    let mut records = Vec::with_capacity(n);
    for t in 0..k {
        let size = n / k + usize::from(t < n % k);
        let mut root_rng = rng.split(0x524f_4f54 + t as u64);
        let root = pretrain_root(task, &mut root_rng)?;
        let pop_rng = rng.split(0x504f_5000 + t as u64);
        records.extend(spawn_records(Some(&root), size, task, &format!("tree{t}"), &pop_rng)?);
    }
    Zoo::new(records, task.universe, task.subset_size, rng.seed(), DEFAULT_SPLIT_RATIOS)
}
