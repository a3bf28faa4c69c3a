//! Zoo-to-metanet plumbing: input extraction, fitting, prediction,
//! persistence, layer selection, and the routed mixture of experts.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{mlp_hidden_for_budget, statnn_features, StatHead, Standardizer};
use crate::dense::DenseExpert;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::ModelOutput;
use crate::linalg::{Matrix, Rng, Vector};
use crate::metanet::Metanet;
use crate::probex::{Activation, ProbeXDims, ProbeXMulti};
use crate::router::{fit_router, route, RouterModel};
use crate::trainer::{evaluate, train, History, Objective, Samples, Target, TrainConfig};
use crate::wzt;
use crate::zoo::{ModelRecord, Split, Zoo};

pub const METANET_FILE: &str = "metanet.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetanetKind {
    Probex,
    ProbexLinear,
    Dense,
    StatnnLinear,
    StatnnMlp,
}

impl FromStr for MetanetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probex" => Ok(Self::Probex),
            "probex-linear" => Ok(Self::ProbexLinear),
            "dense" => Ok(Self::Dense),
            "statnn-linear" => Ok(Self::StatnnLinear),
            "statnn-mlp" => Ok(Self::StatnnMlp),
            other => Err(Error::config(format!("unknown metanet kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classify,
    Align,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Self::Classify),
            "align" => Ok(Self::Align),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: MetanetKind,
    pub layers: Vec<String>,
    /// `r_U = r_V = r_T` of every ProbeX encoder.
    pub rank: usize,
    pub depth: usize,
    /// Parameter budget of the StatNN MLP; defaults to a ProbeX of `rank`
    /// on the same layers.
    pub mlp_budget: Option<usize>,
    /// Subtract the mean training weight matrix from every input.
    pub center_inputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: MetanetKind::ProbexLinear,
            layers: vec![crate::zoo::DEFAULT_LAYER.to_string()],
            rank: 16,
            depth: 1,
            mlp_budget: None,
            center_inputs: false,
        }
    }
}

/// What the metanet is trained to output.
#[derive(Debug, Clone, Copy)]
pub enum TargetSpec<'a> {
    /// Multi-label logits over `universe` classes.
    Classify { universe: usize },
    /// Vectors aligned to `table`, whose classes are the training candidates.
    Align { table: &'a EmbeddingTable, temperature: f64 },
}

impl TargetSpec<'_> {
    fn output_dim(&self) -> usize {
        match self {
            TargetSpec::Classify { universe } => *universe,
            TargetSpec::Align { table, .. } => table.dim(),
        }
    }

    fn objective(&self) -> Objective<'_> {
        match *self {
            TargetSpec::Classify { .. } => Objective::Multilabel,
            TargetSpec::Align { table, temperature } => Objective::Align { table, temperature },
        }
    }

    fn target(&self, r: &ModelRecord) -> Result<Target> {
        match self {
            TargetSpec::Classify { universe } => {
                if r.label_bits.len() != *universe {
                    return Err(Error::Data(format!(
                        "model {} has {} label bits, expected {universe}",
                        r.model_id,
                        r.label_bits.len()
                    )));
                }
                Ok(Target::Bits(r.label_bits.clone()))
            }
            TargetSpec::Align { table, .. } => {
                let key = r
                    .embedding_key
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("model {} has no embedding key", r.model_id)))?;
                table
                    .index_of(key)
                    .map(Target::Class)
                    .ok_or_else(|| Error::Data(format!("class `{key}` missing from embedding table")))
            }
        }
    }
}

/// Mean weight matrices subtracted from every input layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputTransform {
    pub means: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetanetModel {
    Probex(ProbeXMulti),
    Dense(DenseExpert),
    Stat(StatHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMetanet {
    pub config: ModelConfig,
    pub output_dim: usize,
    pub transform: InputTransform,
    pub model: MetanetModel,
}

fn layer_inputs(r: &ModelRecord, layers: &[String], t: &InputTransform) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(layers.len());
    for (i, name) in layers.iter().enumerate() {
        let w = r.layer(name)?;
        out.push(match t.means.get(i) {
            Some(mean) => w.add(&mean.scaled(-1.0))?,
            None => w,
        });
    }
    Ok(out)
}

fn stat_inputs(r: &ModelRecord, layers: &[String]) -> Result<Vector> {
    let names: Vec<&str> = layers.iter().map(String::as_str).collect();
    statnn_features(r, &names)
}

fn samples<I>(
    records: &[&ModelRecord],
    spec: &TargetSpec<'_>,
    input: impl Fn(&ModelRecord) -> Result<I> + Sync,
) -> Result<Samples<I>>
where
    I: Send,
{
    let inputs = records.par_iter().map(|r| input(r)).collect::<Result<Vec<I>>>()?;
    let targets = records.iter().map(|r| spec.target(r)).collect::<Result<Vec<_>>>()?;
    Ok(Samples { inputs, targets })
}

fn fit_transform(records: &[&ModelRecord], cfg: &ModelConfig) -> Result<InputTransform> {
    if !cfg.center_inputs || matches!(cfg.kind, MetanetKind::StatnnLinear | MetanetKind::StatnnMlp) {
        return Ok(InputTransform::default());
    }
    let mut means = Vec::with_capacity(cfg.layers.len());
    for name in &cfg.layers {
        let mut acc: Option<Matrix> = None;
        for r in records {
            let w = r.layer(name)?;
            acc = Some(match acc {
                None => w,
                Some(a) => a.add(&w)?,
            });
        }
        let mut mean = acc
            .ok_or_else(|| Error::config("cannot center on an empty split"))?
            .scaled(1.0 / records.len() as f64);
        mean.round_to_f32();
        means.push(mean);
    }
    Ok(InputTransform { means })
}

fn probex_init(
    first: &ModelRecord,
    cfg: &ModelConfig,
    d_y: usize,
    rng: &mut Rng,
) -> Result<ProbeXMulti> {
    let dims = cfg
        .layers
        .iter()
        .map(|name| {
            let w = first.layer(name)?;
            let mut d = ProbeXDims::with_rank(w.rows(), w.cols(), d_y, cfg.rank);
            d.depth = cfg.depth;
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    let activation = if cfg.kind == MetanetKind::Probex {
        Activation::Relu
    } else {
        Activation::Identity
    };
    ProbeXMulti::init(cfg.layers.clone(), &dims, activation, rng)
}

/// ProbeX parameter count on the given record's layers.
pub fn probex_budget(first: &ModelRecord, layers: &[String], rank: usize, d_y: usize) -> Result<usize> {
    let mut total = 0;
    for name in layers {
        let w = first.layer(name)?;
        total += ProbeXDims::with_rank(w.rows(), w.cols(), d_y, rank).param_count();
    }
    Ok(total)
}

/// Skeleton with the right shapes; `fit` overwrites every value.
fn build_model(
    first: &ModelRecord,
    cfg: &ModelConfig,
    d_y: usize,
    norm: Standardizer,
    rng: &mut Rng,
) -> Result<MetanetModel> {
    if cfg.layers.is_empty() {
        return Err(Error::config("select at least one layer"));
    }
    Ok(match cfg.kind {
        MetanetKind::Probex | MetanetKind::ProbexLinear => {
            MetanetModel::Probex(probex_init(first, cfg, d_y, rng)?)
        }
        MetanetKind::Dense => {
            if cfg.layers.len() != 1 {
                return Err(Error::config("the dense expert takes exactly one layer"));
            }
            let w = first.layer(&cfg.layers[0])?;
            MetanetModel::Dense(DenseExpert::init(w.rows(), w.cols(), d_y, rng)?)
        }
        MetanetKind::StatnnLinear => MetanetModel::Stat(StatHead::linear(norm, d_y, rng)),
        MetanetKind::StatnnMlp => {
            let budget = match cfg.mlp_budget {
                Some(b) => b,
                None => probex_budget(first, &cfg.layers, cfg.rank, d_y)?,
            };
            let hidden = mlp_hidden_for_budget(norm.shift.len(), d_y, budget)?;
            MetanetModel::Stat(StatHead::mlp(norm, hidden, d_y, rng))
        }
    })
}

fn round_params<M: Metanet>(m: &mut M) {
    for t in m.tensors_mut() {
        t.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Outcome of [`fit_records`]: the selected parameters (rounded to `f32`,
/// as stored on disk), the history, and their validation metric.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub metanet: TrainedMetanet,
    pub history: History,
    pub val_metric: f64,
}

fn fit_generic<M: Metanet>(
    init: M,
    train_s: &Samples<M::Input>,
    val_s: &Samples<M::Input>,
    objective: &Objective<'_>,
    cfg: &TrainConfig,
) -> Result<(M, History, f64)> {
    let (mut model, history) = train(init, train_s, val_s, objective, cfg)?;
    round_params(&mut model);
    let metric = evaluate(&model, val_s, objective)?;
    Ok((model, history, metric))
}

/// Trains a metanet of `cfg.kind` on explicit record lists.
pub fn fit_records(
    train_records: &[&ModelRecord],
    val_records: &[&ModelRecord],
    spec: &TargetSpec<'_>,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Fitted> {
    if train_records.is_empty() || val_records.is_empty() {
        return Err(Error::config(format!(
            "empty split: {} training and {} validation records",
            train_records.len(),
            val_records.len()
        )));
    }
    let d_y = spec.output_dim();
    let objective = spec.objective();
    let mut rng = Rng::new(train_cfg.seed).split(0x494e_4954);
    let transform = fit_transform(train_records, cfg)?;
    let layers = &cfg.layers;

    let (model, history, val_metric) = match cfg.kind {
        MetanetKind::StatnnLinear | MetanetKind::StatnnMlp => {
            let tr = samples(train_records, spec, |r| stat_inputs(r, layers))?;
            let va = samples(val_records, spec, |r| stat_inputs(r, layers))?;
            let norm = Standardizer::fit(&tr.inputs)?;
            let MetanetModel::Stat(head) = build_model(train_records[0], cfg, d_y, norm, &mut rng)? else {
                unreachable!("StatNN kinds build a StatNN head")
            };
            let (m, h, v) = fit_generic(head, &tr, &va, &objective, train_cfg)?;
            (MetanetModel::Stat(m), h, v)
        }
        MetanetKind::Dense => {
            let input = |r: &ModelRecord| Ok(layer_inputs(r, layers, &transform)?.remove(0));
            let tr = samples(train_records, spec, input)?;
            let va = samples(val_records, spec, input)?;
            let norm = Standardizer::identity(0);
            let MetanetModel::Dense(w) = build_model(train_records[0], cfg, d_y, norm, &mut rng)? else {
                unreachable!("dense kind builds a dense expert")
            };
            let (m, h, v) = fit_generic(w, &tr, &va, &objective, train_cfg)?;
            (MetanetModel::Dense(m), h, v)
        }
        MetanetKind::Probex | MetanetKind::ProbexLinear => {
            let input = |r: &ModelRecord| layer_inputs(r, layers, &transform);
            let tr = samples(train_records, spec, input)?;
            let va = samples(val_records, spec, input)?;
            let norm = Standardizer::identity(0);
            let MetanetModel::Probex(p) = build_model(train_records[0], cfg, d_y, norm, &mut rng)? else {
                unreachable!("ProbeX kinds build a ProbeX")
            };
            let (m, h, v) = fit_generic(p, &tr, &va, &objective, train_cfg)?;
            (MetanetModel::Probex(m), h, v)
        }
    };
    Ok(Fitted {
        metanet: TrainedMetanet {
            config: cfg.clone(),
            output_dim: d_y,
            transform,
            model,
        },
        history,
        val_metric,
    })
}

/// Trains on the zoo's train split and selects on its val split.
pub fn fit(zoo: &Zoo, spec: &TargetSpec<'_>, cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Fitted> {
    fit_records(&zoo.split(Split::Train), &zoo.split(Split::Val), spec, cfg, train_cfg)
}

impl TrainedMetanet {
    pub fn predict(&self, r: &ModelRecord) -> Result<Vector> {
        match &self.model {
            MetanetModel::Probex(p) => p.forward(&layer_inputs(r, &self.config.layers, &self.transform)?),
            MetanetModel::Dense(d) => {
                d.forward(&layer_inputs(r, &self.config.layers, &self.transform)?.remove(0))
            }
            MetanetModel::Stat(h) => h.forward(&stat_inputs(r, &self.config.layers)?),
        }
    }

    pub fn predict_all(&self, records: &[&ModelRecord]) -> Result<Vec<ModelOutput>> {
        records
            .par_iter()
            .map(|r| {
                Ok(ModelOutput {
                    id: r.model_id.clone(),
                    output: self.predict(r)?,
                })
            })
            .collect()
    }

    /// Mean per-record score on `records` under the objective of `spec`.
    pub fn score(&self, records: &[&ModelRecord], spec: &TargetSpec<'_>) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::config("cannot evaluate an empty split"));
        }
        let objective = spec.objective();
        let scores = records
            .par_iter()
            .map(|r| objective.score(&self.predict(r)?, &spec.target(r)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn param_count(&self) -> usize {
        match &self.model {
            MetanetModel::Probex(p) => p.param_count(),
            MetanetModel::Dense(d) => Metanet::param_count(d),
            MetanetModel::Stat(h) => h.param_count(),
        }
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        match &self.model {
            MetanetModel::Probex(p) => p.tensors(),
            MetanetModel::Dense(d) => d.tensors(),
            MetanetModel::Stat(h) => h.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.model {
            MetanetModel::Probex(p) => p.tensors_mut(),
            MetanetModel::Dense(d) => d.tensors_mut(),
            MetanetModel::Stat(h) => h.tensors_mut(),
        }
    }

    fn shape_record(&self) -> ShapeSidecar {
        let layer_shapes = match &self.model {
            MetanetModel::Probex(p) => p.encoders.iter().map(|e| e.input_shape()).collect(),
            MetanetModel::Dense(d) => {
                let [w, h, _] = d.w.dims();
                vec![(w, h)]
            }
            MetanetModel::Stat(_) => Vec::new(),
        };
        let (standardizer, hidden) = match &self.model {
            MetanetModel::Stat(StatHead::Linear { norm, .. }) => (Some(norm.clone()), None),
            MetanetModel::Stat(StatHead::Mlp { norm, b1, .. }) => (Some(norm.clone()), Some(b1.len())),
            _ => (None, None),
        };
        ShapeSidecar {
            config: self.config.clone(),
            output_dim: self.output_dim,
            layer_shapes,
            standardizer,
            mlp_hidden: hidden,
            centered: !self.transform.means.is_empty(),
            tensors: Vec::new(),
        }
    }

    /// Writes `metanet.json` plus one WZT1 file per parameter tensor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut sidecar = self.shape_record();
        for (name, data) in self.tensors() {
            let file = format!("{name}.wzt");
            wzt::write(&dir.join(&file), &[data.len()], data)?;
            sidecar.tensors.push(file);
        }
        for (i, mean) in self.transform.means.iter().enumerate() {
            wzt::write_matrix(&dir.join(format!("center_{i}.wzt")), mean)?;
        }
        let path = dir.join(METANET_FILE);
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(METANET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: ShapeSidecar = serde_json::from_str(&text)?;
        let cfg = &side.config;
        let mut rng = Rng::new(0);
        let model = match cfg.kind {
            MetanetKind::Probex | MetanetKind::ProbexLinear => {
                if side.layer_shapes.len() != cfg.layers.len() {
                    return Err(Error::format(&path, "one layer shape per layer is required"));
                }
                let dims: Vec<ProbeXDims> = side
                    .layer_shapes
                    .iter()
                    .map(|&(w, h)| {
                        let mut d = ProbeXDims::with_rank(w, h, side.output_dim, cfg.rank);
                        d.depth = cfg.depth;
                        d
                    })
                    .collect();
                let act = if cfg.kind == MetanetKind::Probex {
                    Activation::Relu
                } else {
                    Activation::Identity
                };
                MetanetModel::Probex(ProbeXMulti::init(cfg.layers.clone(), &dims, act, &mut rng)?)
            }
            MetanetKind::Dense => {
                let &(w, h) = side
                    .layer_shapes
                    .first()
                    .ok_or_else(|| Error::format(&path, "dense expert needs a layer shape"))?;
                MetanetModel::Dense(DenseExpert::zeros(w, h, side.output_dim))
            }
            MetanetKind::StatnnLinear | MetanetKind::StatnnMlp => {
                let norm = side
                    .standardizer
                    .clone()
                    .ok_or_else(|| Error::format(&path, "StatNN head needs its standardizer"))?;
                match (cfg.kind, side.mlp_hidden) {
                    (MetanetKind::StatnnMlp, Some(h)) => {
                        MetanetModel::Stat(StatHead::mlp(norm, h, side.output_dim, &mut rng))
                    }
                    (MetanetKind::StatnnMlp, None) => {
                        return Err(Error::format(&path, "MLP head needs its hidden width"))
                    }
                    _ => MetanetModel::Stat(StatHead::linear(norm, side.output_dim, &mut rng)),
                }
            }
        };
        let mut out = TrainedMetanet {
            config: side.config.clone(),
            output_dim: side.output_dim,
            transform: InputTransform::default(),
            model,
        };
        let slots = out.tensors_mut();
        if slots.len() != side.tensors.len() {
            return Err(Error::format(&path, "tensor list does not match the architecture"));
        }
        for (slot, file) in slots.into_iter().zip(&side.tensors) {
            let raw = wzt::read(&dir.join(file))?;
            if raw.data.len() != slot.len() {
                return Err(Error::format(
                    dir.join(file),
                    format!("expected {} values, found {}", slot.len(), raw.data.len()),
                ));
            }
            slot.copy_from_slice(&raw.data);
        }
        if side.centered {
            out.transform.means = (0..side.config.layers.len())
                .map(|i| wzt::read_matrix(&dir.join(format!("center_{i}.wzt"))))
                .collect::<Result<_>>()?;
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct ShapeSidecar {
    config: ModelConfig,
    output_dim: usize,
    layer_shapes: Vec<(usize, usize)>,
    standardizer: Option<Standardizer>,
    mlp_hidden: Option<usize>,
    centered: bool,
    tensors: Vec<String>,
}

/// Fits one metanet per candidate layer and keeps the best on validation;
/// ties go to the earlier candidate.
pub fn select_layer(
    zoo: &Zoo,
    spec: &TargetSpec<'_>,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    candidates: &[String],
) -> Result<(usize, Vec<f64>, Fitted)> {
    let mut best: Option<(usize, Fitted)> = None;
    let mut metrics = Vec::with_capacity(candidates.len());
    for (i, layer) in candidates.iter().enumerate() {
        let layer_cfg = ModelConfig {
            layers: vec![layer.clone()],
            ..cfg.clone()
        };
        let fitted = fit(zoo, spec, &layer_cfg, train_cfg)?;
        metrics.push(fitted.val_metric);
        if best.as_ref().is_none_or(|(_, b)| fitted.val_metric > b.val_metric) {
            best = Some((i, fitted));
        }
    }
    let (i, fitted) = best.ok_or_else(|| Error::config("no candidate layers"))?;
    Ok((i, metrics, fitted))
}

/// Router plus one expert per tree.
#[derive(Debug, Clone)]
pub struct MoeModel {
    pub router: RouterModel,
    pub experts: Vec<TrainedMetanet>,
    pub histories: Vec<History>,
}

fn route_record(router: &RouterModel, r: &ModelRecord) -> Result<usize> {
    route(router, &r.layer(&router.layer_name)?)
}

/// Fits the router on the training split, then an independent expert per
/// tree on the records routed to it. Expert `k` uses seed `seed + k`.
pub fn moe_train(
    zoo: &Zoo,
    spec: &TargetSpec<'_>,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    router_k: Option<usize>,
    min_train_size: usize,
) -> Result<MoeModel> {
    let train_records = zoo.split(Split::Train);
    let val_records = zoo.split(Split::Val);
    let layer = cfg
        .layers
        .first()
        .ok_or_else(|| Error::config("select at least one layer"))?;
    let items = train_records
        .iter()
        .map(|r| r.layer(layer))
        .collect::<Result<Vec<_>>>()?;
    let router = fit_router(&items, layer, router_k)?;
    moe_train_with(&router, &train_records, &val_records, spec, cfg, train_cfg, min_train_size)
}

pub fn moe_train_with(
    router: &RouterModel,
    train_records: &[&ModelRecord],
    val_records: &[&ModelRecord],
    spec: &TargetSpec<'_>,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    min_train_size: usize,
) -> Result<MoeModel> {
    let mut train_by = vec![Vec::new(); router.k];
    let mut val_by = vec![Vec::new(); router.k];
    for &r in train_records {
        train_by[route_record(router, r)?].push(r);
    }
    for &r in val_records {
        val_by[route_record(router, r)?].push(r);
    }
    for (k, group) in train_by.iter().enumerate() {
        if group.len() < min_train_size.max(1) {
            return Err(Error::config(format!(
                "tree {k} has {} training records, minimum is {min_train_size}",
                group.len()
            )));
        }
    }
    let fitted = (0..router.k)
        .into_par_iter()
        .map(|k| {
            let expert_cfg = TrainConfig {
                seed: train_cfg.seed + k as u64,
                ..train_cfg.clone()
            };
            fit_records(&train_by[k], &val_by[k], spec, cfg, &expert_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let (experts, histories) = fitted.into_iter().map(|f| (f.metanet, f.history)).unzip();
    Ok(MoeModel {
        router: router.clone(),
        experts,
        histories,
    })
}

impl MoeModel {
    pub fn predict(&self, r: &ModelRecord) -> Result<Vector> {
        self.experts[route_record(&self.router, r)?].predict(r)
    }

    pub fn score(&self, records: &[&ModelRecord], spec: &TargetSpec<'_>) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::config("cannot evaluate an empty split"));
        }
        let objective = spec.objective();
        let scores = records
            .par_iter()
            .map(|r| objective.score(&self.predict(r)?, &spec.target(r)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}
