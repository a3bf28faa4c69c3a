//! Alignment zoo: every model is fine-tuned on a single concept class whose
//! data distribution is a fixed non-linear function of the class embedding.
//!
//! This stands in for text-conditioned fine-tuning, where the concept a
//! model learns is semantically tied to its text embedding. Models descend
//! from several base checkpoints, each reading its inputs in its own
//! orthonormal basis, so the same concept appears under different weight
//! coordinates. Held-out classes contribute models only to the test split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::target::{layer_name, LoraAdapter};
use super::{
    initial_net, pretrain_root, Hyperparams, LoraFactors, ModelRecord, NamedLayer, Splits,
    TaskSpec, Zoo, ZooMeta, DEFAULT_SPLIT_RATIOS,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, Matrix, Rng};
use crate::zoo::task::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignSpec {
    /// Root network shape and background (pre-training) classes.
    pub task: TaskSpec,
    pub n_classes: usize,
    pub n_holdout: usize,
    pub embedding_dim: usize,
    pub models_per_class: usize,
    pub holdout_models_per_class: usize,
    /// Independently pre-trained base checkpoints; models cycle through them.
    pub n_roots: usize,
    /// Give every base checkpoint its own random orthonormal input basis.
    pub rotate_root_inputs: bool,
    /// LoRA rank of every layer's adapter; `None` fine-tunes all weights.
    pub lora_rank: Option<usize>,
    pub concept_samples: usize,
    pub background_per_class: usize,
    /// Norm scale of the concept means.
    pub concept_scale: f64,
    /// Gain of the embedding→mean map before its `tanh`.
    pub concept_gain: f64,
    pub lr_grid: Vec<f64>,
    pub epoch_range: (usize, usize),
    pub seed: u64,
}

impl Default for AlignSpec {
    fn default() -> Self {
        Self {
            task: TaskSpec::tiny(),
            n_classes: 50,
            n_holdout: 10,
            embedding_dim: 16,
            models_per_class: 8,
            holdout_models_per_class: 10,
            n_roots: 4,
            rotate_root_inputs: true,
            lora_rank: None,
            concept_samples: 60,
            background_per_class: 4,
            concept_scale: 2.0,
            concept_gain: 2.0,
            lr_grid: vec![5e-2, 3e-2, 2e-2],
            epoch_range: (3, 6),
            seed: 0,
        }
    }
}

impl AlignSpec {
    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class_{c:02}")).collect()
    }

    fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.n_holdout >= self.n_classes {
            return Err(Error::config("at least one class must be used for training"));
        }
        if self.n_roots == 0 || self.models_per_class == 0 || self.embedding_dim == 0 || self.concept_samples == 0 {
            return Err(Error::config("alignment zoo counts must be positive"));
        }
        let (lo, hi) = self.epoch_range;
        if lo == 0 || lo > hi || self.lr_grid.is_empty() {
            return Err(Error::config("bad alignment fine-tuning schedule"));
        }
        Ok(())
    }

    /// Concept means, one row per class: `scale · tanh(G · t_c)`.
    fn concept_means(&self, table: &EmbeddingTable) -> Matrix {
        let mut rng = Rng::new(self.seed).split(0x434f_4e43);
        let dim = self.task.input_dim;
        let g = Matrix::gaussian(
            dim,
            self.embedding_dim,
            self.concept_gain / (self.embedding_dim as f64).sqrt(),
            &mut rng,
        );
        let mut means = Matrix::zeros(table.len(), dim);
        for c in 0..table.len() {
            let pre = g.matvec(table.vector(c)).expect("embedding dims match");
            for (dst, p) in means.row_mut(c).iter_mut().zip(pre) {
                *dst = self.concept_scale * p.tanh();
            }
        }
        means
    }
}

/// Generates the zoo and the class embedding table it is aligned to.
pub fn spawn_alignment_zoo(spec: &AlignSpec) -> Result<(Zoo, EmbeddingTable)> {
    spec.validate()?;
    let names = spec.class_names();
    let base = Rng::new(spec.seed);
    let table = EmbeddingTable::random(&names, spec.embedding_dim, &mut base.split(0x454d_4244));
    let means = spec.concept_means(&table);
    let roots = (0..spec.n_roots)
        .map(|i| pretrain_root(&spec.task, &mut base.split(0x524f_4f54 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rotations: Vec<Option<Matrix>> = (0..spec.n_roots)
        .map(|i| {
            spec.rotate_root_inputs.then(|| {
                random_orthogonal(spec.task.input_dim, &mut base.split(0x524f_5441 + i as u64))
            })
        })
        .collect();
    let tree_ids: Vec<String> = (0..spec.n_roots).map(|i| format!("tree{i}")).collect();
    let mixture = spec.task.mixture();
    let concept_logit = spec.task.universe - 1;
    let background: Vec<(usize, usize)> = spec
        .task
        .pretrain_components()
        .into_iter()
        .enumerate()
        .map(|(logit, comp)| (comp, logit))
        .collect();

    let mut class_order: Vec<usize> = (0..spec.n_classes).collect();
    base.split(0x484f_4c44).shuffle(&mut class_order);
    let mut holdout: Vec<usize> = class_order[..spec.n_holdout].to_vec();
    holdout.sort_unstable();

    let mut jobs = Vec::new();
    for c in 0..spec.n_classes {
        let count = if holdout.contains(&c) {
            spec.holdout_models_per_class
        } else {
            spec.models_per_class
        };
        for k in 0..count {
            jobs.push((c, k));
        }
    }

    let n_layers = spec.task.hidden.len() + 1;
    let pop_rng = base.split(0x504f_5000);
    let records: Vec<ModelRecord> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let seed = pop_rng.split((c * 10_000 + k) as u64).next_u64();
            let mut rng = Rng::new(seed).split(2);
            let lr = *rng.choose(&spec.lr_grid);
            let (lo, hi) = spec.epoch_range;
            let epochs = lo + rng.below(hi - lo + 1);

            let mut data = concept_data(&means, c, spec, concept_logit, &mut rng);
            let bg = mixture.sample(&background, spec.background_per_class, &mut rng);
            data = concat(&data, &bg);

            let root = k % spec.n_roots;
            let mut net = initial_net(Some(&roots[root]), &spec.task, seed);
            let mut adapters: Vec<LoraAdapter> = match spec.lora_rank {
                Some(rank) => (0..n_layers)
                    .map(|l| LoraAdapter::init(&net, l, rank, &mut rng))
                    .collect(),
                None => Vec::new(),
            };
            for _ in 0..epochs {
                net.sgd_epoch(&data, lr, 0.0, spec.task.batch_size, &mut adapters, &mut rng);
            }
            let check = concept_data(&means, c, spec, concept_logit, &mut rng);
            let accuracy = net.accuracy_with(&check, &adapters);
            // The base checkpoint reads its inputs in its own basis `x' = R·x`;
            // the same function then has first-layer weights `W·Rᵀ`.
            if let Some(r) = &rotations[root] {
                let rt = r.transpose();
                match adapters.iter_mut().find(|a| a.layer == 0) {
                    Some(ad) => ad.a = ad.a.matmul(&rt).expect("input width"),
                    None => net.weights[0] = net.weights[0].matmul(&rt).expect("input width"),
                }
            }

            let (layers, lora) = if adapters.is_empty() {
                let layers = net
                    .weights
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut w)| {
                        w.round_to_f32();
                        NamedLayer {
                            name: layer_name(i, n_layers),
                            weights: w,
                        }
                    })
                    .collect();
                (layers, Vec::new())
            } else {
                let lora = adapters
                    .into_iter()
                    .map(|mut ad| {
                        ad.b.round_to_f32();
                        ad.a.round_to_f32();
                        LoraFactors {
                            layer: layer_name(ad.layer, n_layers),
                            b: ad.b,
                            a: ad.a,
                        }
                    })
                    .collect();
                (Vec::new(), lora)
            };
            let mut label_bits = vec![false; spec.n_classes];
            label_bits[c] = true;
            ModelRecord {
                model_id: format!("{}-m{k:03}", names[c]),
                tree_id: tree_ids[root].clone(),
                layers,
                lora,
                label_bits,
                embedding_key: Some(names[c].clone()),
                hyperparams: Hyperparams {
                    lr,
                    epochs,
                    seed,
                    weight_decay: 0.0,
                    lora_rank: spec.lora_rank,
                },
                final_accuracy: Some(accuracy),
            }
        })
        .collect();

    let in_dist: Vec<String> = records
        .iter()
        .filter(|r| !holdout.contains(&r.classes()[0]))
        .map(|r| r.model_id.clone())
        .collect();
    let mut splits = Splits::assign(&in_dist, DEFAULT_SPLIT_RATIOS, spec.seed)?;
    splits.test.extend(
        records
            .iter()
            .filter(|r| holdout.contains(&r.classes()[0]))
            .map(|r| r.model_id.clone()),
    );
    let zoo = Zoo {
        meta: ZooMeta {
            universe_size: spec.n_classes,
            subset_size: 1,
            trees: tree_ids,
            splits,
            seed: spec.seed,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            holdout_classes: holdout.iter().map(|&c| names[c].clone()).collect(),
        },
        records,
    };
    zoo.validate()?;
    Ok((zoo, table))
}

fn concept_data(
    means: &Matrix,
    class: usize,
    spec: &AlignSpec,
    logit: usize,
    rng: &mut Rng,
) -> Dataset {
    let dim = means.cols();
    let noise = spec.task.noise_std;
    let mut x = Matrix::zeros(spec.concept_samples, dim);
    for r in 0..spec.concept_samples {
        for (dst, mu) in x.row_mut(r).iter_mut().zip(means.row(class)) {
            *dst = mu + noise * rng.normal();
        }
    }
    Dataset {
        x,
        labels: vec![logit; spec.concept_samples],
    }
}

fn concat(a: &Dataset, b: &Dataset) -> Dataset {
    let mut data = a.x.as_slice().to_vec();
    data.extend_from_slice(b.x.as_slice());
    let x = Matrix::from_vec(a.len() + b.len(), a.x.cols(), data).expect("same width");
    let mut labels = a.labels.clone();
    labels.extend(&b.labels);
    Dataset { x, labels }
}
