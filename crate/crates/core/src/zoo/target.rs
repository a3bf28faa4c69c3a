//! The small MLP classifiers that populate a zoo.

use crate::error::{Error, Result};
use crate::linalg::{axpy, matmul_nt, matmul_tn, Matrix, Rng};

use super::task::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetNet {
    /// `weights[i]` maps layer `i` to layer `i + 1` and is `out × in`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Low-rank adapter `W + B·A` on one layer. `B` is `out × r`, `A` is `r × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub layer: usize,
    pub b: Matrix,
    pub a: Matrix,
}

impl LoraAdapter {
    /// Standard LoRA start: `A` uniform fan-in, `B` zero, so the delta is zero.
    pub fn init(net: &TargetNet, layer: usize, rank: usize, rng: &mut Rng) -> Self {
        let w = &net.weights[layer];
        let bound = 1.0 / (w.cols() as f64).sqrt();
        Self {
            layer,
            b: Matrix::zeros(w.rows(), rank),
            a: Matrix::uniform(rank, w.cols(), bound, rng),
        }
    }
}

pub fn layer_name(index: usize, n_layers: usize) -> String {
    if index + 1 == n_layers {
        "head".to_string()
    } else {
        format!("fc{}", index + 1)
    }
}

impl TargetNet {
    /// Uniform fan-in initialization, zero biases.
    pub fn random(sizes: &[usize], rng: &mut Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Matrix::uniform(fan_out, fan_in, bound, rng));
            biases.push(vec![0.0; fan_out]);
        }
        Self { weights, biases }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_names(&self) -> Vec<String> {
        (0..self.n_layers())
            .map(|i| layer_name(i, self.n_layers()))
            .collect()
    }

    pub fn check_chain(&self) -> Result<()> {
        for (i, pair) in self.weights.windows(2).enumerate() {
            if pair[0].rows() != pair[1].cols() {
                return Err(Error::dim(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].rows(),
                    i + 1,
                    pair[1].cols()
                )));
            }
        }
        Ok(())
    }

    fn effective_weight(&self, layer: usize, adapters: &[LoraAdapter]) -> Matrix {
        let mut w = self.weights[layer].clone();
        for ad in adapters.iter().filter(|a| a.layer == layer) {
            let delta = ad.b.matmul(&ad.a).expect("adapter shapes checked at init");
            w = w.add(&delta).expect("adapter shapes checked at init");
        }
        w
    }

    /// Returns pre-activations and activations per layer; `acts[0]` is the input.
    fn forward_cached(&self, x: &Matrix, weights: &[Matrix]) -> (Vec<Matrix>, Vec<Matrix>) {
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(weights.len());
        for (i, (w, b)) in weights.iter().zip(&self.biases).enumerate() {
            let mut z = matmul_nt(acts.last().unwrap(), w).expect("chained shapes");
            for r in 0..z.rows() {
                axpy(1.0, b, z.row_mut(r));
            }
            let a = if i + 1 < weights.len() {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    pub fn logits(&self, x: &Matrix) -> Matrix {
        self.logits_with(x, &[])
    }

    pub fn logits_with(&self, x: &Matrix, adapters: &[LoraAdapter]) -> Matrix {
        let weights: Vec<Matrix> = (0..self.n_layers())
            .map(|l| self.effective_weight(l, adapters))
            .collect();
        let (_, mut acts) = self.forward_cached(x, &weights);
        acts.pop().unwrap()
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        self.accuracy_with(data, &[])
    }

    pub fn accuracy_with(&self, data: &Dataset, adapters: &[LoraAdapter]) -> f64 {
        let logits = self.logits_with(&data.x, adapters);
        let correct = (0..data.len())
            .filter(|&i| argmax(logits.row(i)) == data.labels[i])
            .count();
        correct as f64 / data.len() as f64
    }

    /// One epoch of mini-batch SGD with softmax cross-entropy over all logits.
    ///
    /// With adapters present only the adapter factors are updated.
    pub fn sgd_epoch(
        &mut self,
        data: &Dataset,
        lr: f64,
        weight_decay: f64,
        batch_size: usize,
        adapters: &mut [LoraAdapter],
        rng: &mut Rng,
    ) -> f64 {
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let mut total_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let mut xb = Matrix::zeros(batch.len(), data.x.cols());
            for (r, &i) in batch.iter().enumerate() {
                xb.row_mut(r).copy_from_slice(data.x.row(i));
            }
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            total_loss += self.sgd_step(&xb, &labels, lr, weight_decay, adapters) * batch.len() as f64;
        }
        total_loss / data.len() as f64
    }

    fn sgd_step(
        &mut self,
        x: &Matrix,
        labels: &[usize],
        lr: f64,
        weight_decay: f64,
        adapters: &mut [LoraAdapter],
    ) -> f64 {
        let n = x.rows() as f64;
        let weights: Vec<Matrix> = (0..self.n_layers())
            .map(|l| self.effective_weight(l, adapters))
            .collect();
        let (pre, acts) = self.forward_cached(x, &weights);

        let mut delta = acts.last().unwrap().clone();
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = delta.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += sum.ln() + max - row[label];
            for v in row.iter_mut() {
                *v = (*v - max).exp() / sum / n;
            }
            row[label] -= 1.0 / n;
        }

        let train_base = adapters.is_empty();
        for layer in (0..self.n_layers()).rev() {
            let grad_w = matmul_tn(&delta, &acts[layer]).expect("chained shapes");
            let next_delta = if layer > 0 {
                let mut d = delta.matmul(&weights[layer]).expect("chained shapes");
                for (v, z) in d.as_mut_slice().iter_mut().zip(pre[layer - 1].as_slice()) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
                Some(d)
            } else {
                None
            };

            if train_base {
                let w = self.weights[layer].as_mut_slice();
                for (wi, gi) in w.iter_mut().zip(grad_w.as_slice()) {
                    *wi -= lr * (gi + weight_decay * *wi);
                }
                let b = &mut self.biases[layer];
                for r in 0..delta.rows() {
                    axpy(-lr, delta.row(r), b);
                }
            } else {
                for ad in adapters.iter_mut().filter(|a| a.layer == layer) {
                    let grad_b = matmul_nt(&grad_w, &ad.a).expect("adapter shapes");
                    let grad_a = matmul_tn(&ad.b, &grad_w).expect("adapter shapes");
                    for (p, g) in ad.b.as_mut_slice().iter_mut().zip(grad_b.as_slice()) {
                        *p -= lr * (g + weight_decay * *p);
                    }
                    for (p, g) in ad.a.as_mut_slice().iter_mut().zip(grad_a.as_slice()) {
                        *p -= lr * (g + weight_decay * *p);
                    }
                }
            }
            if let Some(d) = next_delta {
                delta = d;
            }
        }
        loss / n
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
