//! Per-layer weight statistics and small heads trained on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, quantile_sorted, variance, Matrix, Rng, Vector};
use crate::metanet::Metanet;
use crate::zoo::ModelRecord;

pub const STAT_QUANTILES: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];
pub const STATS_PER_LAYER: usize = 2 + STAT_QUANTILES.len();

/// `[mean, variance, q10, q25, q50, q75, q90]` of one weight matrix.
pub fn layer_stats(w: &Matrix) -> Result<Vector> {
    if w.is_empty() {
        return Err(Error::Degenerate("statistics of an empty layer".into()));
    }
    let mut sorted = w.as_slice().to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = vec![mean(&sorted), variance(&sorted)];
    out.extend(STAT_QUANTILES.iter().map(|&q| quantile_sorted(&sorted, q)));
    Ok(out)
}

/// Concatenated per-layer statistics, `7·|layers|` values.
pub fn statnn_features(record: &ModelRecord, layers: &[&str]) -> Result<Vector> {
    let mut out = Vec::with_capacity(STATS_PER_LAYER * layers.len());
    for name in layers {
        out.extend(layer_stats(&record.layer(name)?)?);
    }
    Ok(out)
}

pub fn features_csv(rows: &[(String, Vector)]) -> String {
    let width = rows.first().map_or(0, |(_, f)| f.len());
    let mut out = String::from("model_id");
    for i in 1..=width {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for (id, f) in rows {
        out.push_str(id);
        for v in f {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Per-feature shift and scale fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vector,
    pub scale: Vector,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Constant features keep scale 1.
    pub fn fit(features: &[Vector]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::config("cannot standardize zero feature rows"))?;
        let dim = first.len();
        let mut shift = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in 0..dim {
            let col: Vec<f64> = features.iter().map(|f| f[j]).collect();
            shift[j] = mean(&col);
            let sd = variance(&col).sqrt();
            if sd > 1e-12 {
                scale[j] = sd;
            }
        }
        Ok(Self { shift, scale })
    }

    pub fn apply(&self, f: &[f64]) -> Vector {
        f.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatHead {
    Linear {
        norm: Standardizer,
        w: Matrix,
        b: Vector,
    },
    Mlp {
        norm: Standardizer,
        w1: Matrix,
        b1: Vector,
        w2: Matrix,
        b2: Vector,
    },
}

/// Hidden width whose MLP parameter count is closest to `budget`.
pub fn mlp_hidden_for_budget(n_features: usize, d_out: usize, budget: usize) -> Result<usize> {
    let per_unit = n_features + 1 + d_out;
    let fixed = d_out;
    if budget <= fixed + per_unit {
        return Err(Error::config(format!(
            "budget {budget} too small for a hidden layer"
        )));
    }
    let h = ((budget - fixed) as f64 / per_unit as f64).round() as usize;
    let count = mlp_param_count(n_features, h, d_out);
    let rel = (count as f64 - budget as f64).abs() / budget as f64;
    if rel > 0.10 {
        return Err(Error::config(format!(
            "closest MLP has {count} parameters, more than 10% from budget {budget}"
        )));
    }
    Ok(h)
}

pub fn mlp_param_count(n_features: usize, hidden: usize, d_out: usize) -> usize {
    hidden * (n_features + 1) + d_out * (hidden + 1)
}

impl StatHead {
    pub fn linear(norm: Standardizer, d_out: usize, rng: &mut Rng) -> Self {
        let f = norm.shift.len();
        let bound = 1.0 / (f as f64).sqrt();
        Self::Linear {
            norm,
            w: Matrix::uniform(d_out, f, bound, rng),
            b: vec![0.0; d_out],
        }
    }

    pub fn mlp(norm: Standardizer, hidden: usize, d_out: usize, rng: &mut Rng) -> Self {
        let f = norm.shift.len();
        Self::Mlp {
            norm,
            w1: Matrix::uniform(hidden, f, 1.0 / (f as f64).sqrt(), rng),
            b1: vec![0.0; hidden],
            w2: Matrix::uniform(d_out, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            b2: vec![0.0; d_out],
        }
    }

    fn norm(&self) -> &Standardizer {
        match self {
            Self::Linear { norm, .. } | Self::Mlp { norm, .. } => norm,
        }
    }

    fn check(&self, x: &[f64]) -> Result<Vector> {
        let n = self.norm();
        if x.len() != n.shift.len() {
            return Err(Error::dim(format!(
                "head expects {} features, got {}",
                n.shift.len(),
                x.len()
            )));
        }
        Ok(n.apply(x))
    }
}

fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vector> {
    let mut y = w.matvec(x)?;
    crate::linalg::axpy(1.0, b, &mut y);
    Ok(y)
}

impl Metanet for StatHead {
    type Input = Vector;

    fn output_dim(&self) -> usize {
        match self {
            Self::Linear { b, .. } => b.len(),
            Self::Mlp { b2, .. } => b2.len(),
        }
    }

    fn forward(&self, x: &Vector) -> Result<Vector> {
        let z = self.check(x)?;
        match self {
            Self::Linear { w, b, .. } => affine(w, b, &z),
            Self::Mlp { w1, b1, w2, b2, .. } => {
                let h = crate::linalg::relu(&affine(w1, b1, &z)?);
                affine(w2, b2, &h)
            }
        }
    }

    fn gradients(&self, x: &Vector, upstream: &[f64]) -> Result<Vec<Vec<f64>>> {
        let z = self.check(x)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::dim("upstream gradient length mismatch"));
        }
        match self {
            Self::Linear { w, .. } => {
                let mut gw = Matrix::zeros(w.rows(), w.cols());
                gw.add_outer(1.0, upstream, &z);
                Ok(vec![gw.into_vec(), upstream.to_vec()])
            }
            Self::Mlp { w1, b1, w2, .. } => {
                let pre = affine(w1, b1, &z)?;
                let h = crate::linalg::relu(&pre);
                let mut gw2 = Matrix::zeros(w2.rows(), w2.cols());
                gw2.add_outer(1.0, upstream, &h);
                let mut dh = w2.matvec_t(upstream)?;
                for (d, p) in dh.iter_mut().zip(&pre) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut gw1 = Matrix::zeros(w1.rows(), w1.cols());
                gw1.add_outer(1.0, &dh, &z);
                Ok(vec![gw1.into_vec(), dh, gw2.into_vec(), upstream.to_vec()])
            }
        }
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        match self {
            Self::Linear { w, b, .. } => vec![("W".into(), w.as_slice()), ("b".into(), &b[..])],
            Self::Mlp { w1, b1, w2, b2, .. } => vec![
                ("W1".into(), w1.as_slice()),
                ("b1".into(), &b1[..]),
                ("W2".into(), w2.as_slice()),
                ("b2".into(), &b2[..]),
            ],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Self::Linear { w, b, .. } => vec![w.as_mut_slice(), &mut b[..]],
            Self::Mlp { w1, b1, w2, b2, .. } => vec![
                w1.as_mut_slice(),
                &mut b1[..],
                w2.as_mut_slice(),
                &mut b2[..],
            ],
        }
    }
}
