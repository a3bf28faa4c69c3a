//! Losses, Adam, and the epoch loop with validation-based selection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Rng, Vector};
use crate::metanet::Metanet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MultilabelBce,
    ContrastiveAlign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub loss: LossKind,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-5,
            epochs: 500,
            batch_size: None,
            seed: 0,
            loss: LossKind::MultilabelBce,
            temperature: 0.07,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be > 0"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight decay must be ≥ 0"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch size must be ≥ 1"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid binary cross-entropy over classes, and `dL/dy`.
pub fn loss_multilabel_bce(y: &[f64], bits: &[bool]) -> Result<(f64, Vector)> {
    if y.len() != bits.len() {
        return Err(Error::dim(format!(
            "{} logits vs {} label bits",
            y.len(),
            bits.len()
        )));
    }
    let c = y.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (&yi, &b) in y.iter().zip(bits) {
        let target = if b { 1.0 } else { 0.0 };
        // log(1 + e^y) − b·y, computed stably
        loss += yi.max(0.0) + (-yi.abs()).exp().ln_1p() - target * yi;
        grad.push((sigmoid(yi) - target) / c);
    }
    Ok((loss / c, grad))
}

/// Cross-entropy of the softmax over `cos(y, t_c) / τ` for every class in
/// `table`, against `target`. `y` is normalized inside the loss.
pub fn loss_contrastive_align(
    y: &[f64],
    target: usize,
    table: &EmbeddingTable,
    temperature: f64,
) -> Result<(f64, Vector)> {
    if target >= table.len() {
        return Err(Error::Data(format!(
            "target class {target} outside table of {}",
            table.len()
        )));
    }
    if y.len() != table.dim() {
        return Err(Error::dim(format!(
            "mapped encoding has length {}, embeddings have {}",
            y.len(),
            table.dim()
        )));
    }
    let n = norm(y);
    if n == 0.0 {
        return Err(Error::Degenerate("mapped encoding has zero norm".into()));
    }
    let s: Vector = y.iter().map(|v| v / n).collect();
    let logits: Vector = (0..table.len())
        .map(|c| dot(&s, table.vector(c)) / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let loss = z.ln() + max - logits[target];

    // dL/ds = Σ_c (p_c − δ_c) t_c / τ, then through the normalization.
    let mut ds = vec![0.0; y.len()];
    for (c, l) in logits.iter().enumerate() {
        let mut w = (l - max).exp() / z;
        if c == target {
            w -= 1.0;
        }
        crate::linalg::axpy(w / temperature, table.vector(c), &mut ds);
    }
    let proj = dot(&s, &ds);
    let grad = ds.iter().zip(&s).map(|(d, si)| (d - proj * si) / n).collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam with L2 weight decay added to the gradient.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    names: &[String],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(format!(
            "{} parameter tensors vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        if p.len() != g.len() {
            return Err(Error::dim(format!(
                "tensor `{name}` has {} values, gradient has {}",
                p.len(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { tensor: name });
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, w) in p.iter_mut().enumerate() {
            let g = grads[k][i] + cfg.weight_decay * *w;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// What a record is trained to produce.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Membership of each universe class in the training subset.
    Bits(Vec<bool>),
    /// Index of the record's class in the objective's embedding table.
    Class(usize),
}

#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Multilabel,
    Align {
        table: &'a EmbeddingTable,
        temperature: f64,
    },
}

impl Objective<'_> {
    pub fn loss(&self, y: &[f64], target: &Target) -> Result<(f64, Vector)> {
        match (self, target) {
            (Objective::Multilabel, Target::Bits(bits)) => loss_multilabel_bce(y, bits),
            (Objective::Align { table, temperature }, Target::Class(c)) => {
                loss_contrastive_align(y, *c, table, *temperature)
            }
            _ => Err(Error::config("target kind does not match the loss")),
        }
    }

    /// Per-record score: mean binary accuracy or top-1 correctness.
    pub fn score(&self, y: &[f64], target: &Target) -> Result<f64> {
        match (self, target) {
            (Objective::Multilabel, Target::Bits(bits)) => Ok(multilabel_accuracy(y, bits)),
            (Objective::Align { table, .. }, Target::Class(c)) => {
                let pred = nearest_class(y, table, None)?;
                Ok(if pred == *c { 1.0 } else { 0.0 })
            }
            _ => Err(Error::config("target kind does not match the metric")),
        }
    }
}

/// Mean over classes of `[y_c > 0] == bit_c`.
pub fn multilabel_accuracy(y: &[f64], bits: &[bool]) -> f64 {
    let correct = y.iter().zip(bits).filter(|(&v, &b)| (v > 0.0) == b).count();
    correct as f64 / bits.len() as f64
}

/// Table index of the highest cosine similarity, optionally restricted to
/// `candidates`. Ties go to the earliest candidate. Table rows are unit
/// vectors, so ranking by `y·t` is ranking by cosine.
pub fn nearest_class(y: &[f64], table: &EmbeddingTable, candidates: Option<&[usize]>) -> Result<usize> {
    if norm(y) == 0.0 {
        return Err(Error::Degenerate("mapped encoding has zero norm".into()));
    }
    let all: Vec<usize>;
    let cands = match candidates {
        Some(c) => c,
        None => {
            all = (0..table.len()).collect();
            &all
        }
    };
    let mut best = None;
    let mut best_sim = f64::NEG_INFINITY;
    for &c in cands {
        let sim = dot(y, table.vector(c));
        if sim > best_sim {
            best_sim = sim;
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::config("no candidate classes"))
}

#[derive(Debug, Clone)]
pub struct Samples<I> {
    pub inputs: Vec<I>,
    pub targets: Vec<Target>,
}

impl<I> Samples<I> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn best_metric(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.rows.iter().find(|r| r.epoch == best).map(|r| r.val_metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_metric);
        }
        out
    }
}

/// Records per gradient chunk; sums inside and across chunks run in a fixed
/// order so results do not depend on the thread count.
const GRAD_CHUNK: usize = 16;

fn batch_gradient<M: Metanet>(
    model: &M,
    samples: &Samples<M::Input>,
    batch: &[usize],
    objective: &Objective<'_>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let partials: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &i in chunk {
                let y = model.forward(&samples.inputs[i])?;
                let (l, dy) = objective.loss(&y, &samples.targets[i])?;
                loss += l;
                let g = model.gradients(&samples.inputs[i], &dy)?;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => add_grads(a, &g),
                }
            }
            Ok((loss, acc.expect("chunks are non-empty")))
        })
        .collect();
    let mut total_loss = 0.0;
    let mut total: Option<Vec<Vec<f64>>> = None;
    for p in partials {
        let (l, g) = p?;
        total_loss += l;
        match total.as_mut() {
            None => total = Some(g),
            Some(t) => add_grads(t, &g),
        }
    }
    let mut grads = total.expect("batch is non-empty");
    let scale = 1.0 / batch.len() as f64;
    grads
        .iter_mut()
        .flatten()
        .for_each(|v| *v *= scale);
    Ok((total_loss * scale, grads))
}

fn add_grads(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Mean per-record score of `model` on `samples`.
pub fn evaluate<M: Metanet>(model: &M, samples: &Samples<M::Input>, objective: &Objective<'_>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("cannot evaluate on an empty split"));
    }
    let scores = samples
        .inputs
        .par_iter()
        .zip(samples.targets.par_iter())
        .map(|(x, t)| objective.score(&model.forward(x)?, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Trains with Adam and returns the parameters of the best validation epoch.
///
/// `history` is filled as training progresses, so it survives an error.
pub fn train_into<M: Metanet>(
    init: M,
    train: &Samples<M::Input>,
    val: &Samples<M::Input>,
    objective: &Objective<'_>,
    cfg: &TrainConfig,
    history: &mut History,
) -> Result<M> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config(format!(
            "empty split: {} training and {} validation records",
            train.len(),
            val.len()
        )));
    }
    let names: Vec<String> = init.tensors().into_iter().map(|(n, _)| n).collect();
    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut state = AdamState::default();
    let mut rng = Rng::new(cfg.seed).split(0x0054_5241_494e);
    let mut model = init.clone();
    let mut best = init;
    let mut best_metric = f64::NEG_INFINITY;
    let batch_size = cfg.batch_size.unwrap_or(train.len()).min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        if batch_size < train.len() {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let (loss, grads) = batch_gradient(&model, train, batch, objective)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    tensor: "train_loss".into(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            let mut params = model.tensors_mut();
            adam_step(&mut params, &grads, &names, &mut state, &adam)?;
        }
        let val_metric = evaluate(&model, val, objective)?;
        history.rows.push(HistoryRow {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_metric,
        });
        if val_metric > best_metric {
            best_metric = val_metric;
            best = model.clone();
            history.best_epoch = Some(epoch);
        }
    }
    Ok(best)
}

pub fn train<M: Metanet>(
    init: M,
    train: &Samples<M::Input>,
    val: &Samples<M::Input>,
    objective: &Objective<'_>,
    cfg: &TrainConfig,
) -> Result<(M, History)> {
    let mut history = History::default();
    let model = train_into(init, train, val, objective, cfg, &mut history)?;
    Ok((model, history))
}

/// Mean training loss of `model` over all of `samples`.
pub fn mean_loss<M: Metanet>(model: &M, samples: &Samples<M::Input>, objective: &Objective<'_>) -> Result<f64> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    Ok(batch_gradient(model, samples, &idx, objective)?.0)
}
