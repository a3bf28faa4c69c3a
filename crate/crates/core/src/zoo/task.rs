use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

/// Synthetic classification task shared by every model in an experiment.
///
/// The Gaussian mixture has `mixture_classes` components in `input_dim`
/// dimensions. The first `universe` components form the fine-tuning class
/// universe; the next `pretrain_classes` form the disjoint pre-training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub universe: usize,
    pub subset_size: usize,
    pub pretrain_classes: usize,
    pub mixture_classes: usize,
    /// Per-coordinate standard deviation of the class means.
    pub mean_std: f64,
    pub noise_std: f64,
    pub samples_per_class: usize,
    /// Held-out samples per class used to measure a target's accuracy.
    pub eval_samples_per_class: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    pub weight_decay_grid: Vec<f64>,
    /// Inclusive range of fine-tuning epochs.
    pub epoch_range: (usize, usize),
    /// Seeds the class means; all populations of one experiment share it.
    pub task_seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: vec![64, 64],
            universe: 50,
            subset_size: 25,
            pretrain_classes: 25,
            mixture_classes: 75,
            mean_std: 2.0,
            noise_std: 1.0,
            samples_per_class: 200,
            eval_samples_per_class: 20,
            pretrain_epochs: 20,
            pretrain_lr: 0.1,
            batch_size: 64,
            lr_grid: vec![1e-1, 6e-2, 2e-2, 1.8e-2, 1.4e-2, 1e-2, 6e-3],
            weight_decay_grid: vec![5e-2, 3e-2, 1e-2, 9e-3, 7e-3, 5e-3],
            epoch_range: (2, 9),
            task_seed: 0,
        }
    }
}

impl TaskSpec {
    /// Smaller targets for experiment suites that train hundreds of models.
    pub fn tiny() -> Self {
        Self {
            input_dim: 16,
            hidden: vec![32, 32],
            samples_per_class: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("network dimensions must be positive"));
        }
        if self.universe == 0 || self.subset_size == 0 || self.subset_size > self.universe {
            return Err(Error::config(format!(
                "subset size {} must lie in 1..={}",
                self.subset_size, self.universe
            )));
        }
        if self.universe + self.pretrain_classes > self.mixture_classes {
            return Err(Error::config(format!(
                "{} fine-tuning + {} pre-training classes exceed the {}-component mixture",
                self.universe, self.pretrain_classes, self.mixture_classes
            )));
        }
        if self.pretrain_classes > self.universe {
            return Err(Error::config(
                "pre-training classes must fit in the classifier head",
            ));
        }
        if self.pretrain_epochs == 0 {
            return Err(Error::config("root pre-training needs at least one epoch"));
        }
        if self.samples_per_class == 0 || self.batch_size == 0 {
            return Err(Error::config("sample and batch counts must be positive"));
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| lr <= 0.0) {
            return Err(Error::config("learning-rate grid must be non-empty and positive"));
        }
        if self.weight_decay_grid.is_empty() {
            return Err(Error::config("weight-decay grid must be non-empty"));
        }
        let (lo, hi) = self.epoch_range;
        if lo == 0 || lo > hi {
            return Err(Error::config(format!("bad epoch range {lo}..={hi}")));
        }
        Ok(())
    }

    pub fn mixture(&self) -> Mixture {
        let mut rng = Rng::new(self.task_seed).split(0x6d69_7874);
        Mixture {
            means: Matrix::gaussian(self.mixture_classes, self.input_dim, self.mean_std, &mut rng),
            noise_std: self.noise_std,
        }
    }

    /// Mixture components of the pre-training set `B`.
    pub fn pretrain_components(&self) -> Vec<usize> {
        (self.universe..self.universe + self.pretrain_classes).collect()
    }
}

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub means: Matrix,
    pub noise_std: f64,
}

/// Labelled samples; `labels[i]` is a logit index of the target head.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Mixture {
    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Draws `per_class` samples of each `(component, logit)` pair.
    pub fn sample(&self, classes: &[(usize, usize)], per_class: usize, rng: &mut Rng) -> Dataset {
        let dim = self.dim();
        let mut x = Matrix::zeros(classes.len() * per_class, dim);
        let mut labels = Vec::with_capacity(classes.len() * per_class);
        let mut row = 0;
        for &(component, logit) in classes {
            let mean = self.means.row(component).to_vec();
            for _ in 0..per_class {
                for (dst, mu) in x.row_mut(row).iter_mut().zip(&mean) {
                    *dst = mu + self.noise_std * rng.normal();
                }
                labels.push(logit);
                row += 1;
            }
        }
        Dataset { x, labels }
    }
}
