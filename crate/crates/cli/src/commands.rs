//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use probex_core::dense::{dense_forward, prop1_construct, prop2_tucker_expand, DenseExpert};
use probex_core::embedding::EmbeddingTable;
use probex_core::eval::{
    eval_knn, eval_multilabel, eval_occ, eval_zeroshot, labeled_reps, raw_layer_rep, retrieve, EvalReport, KnnK,
    ModelOutput, Retrieved,
};
use probex_core::experiments::{multitree_zoo, training_classes, ClassifyExperiment};
use probex_core::linalg::Rng;
use probex_core::pipeline::{
    fit, moe_train, select_layer, MetanetKind, ModelConfig, MoeModel, TargetSpec, TaskKind, TrainedMetanet,
};
use probex_core::router::{fit_router, RouterModel};
use probex_core::trainer::{LossKind, TrainConfig};
use probex_core::zoo::{
    load_zoo, pretrain_root, save_zoo, spawn_alignment_zoo, spawn_population, ModelRecord, Split, TaskSpec, Zoo,
};
use probex_core::probex::dense_param_count;
use probex_core::{Activation, Matrix, ProbeXDims, ProbeXParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::run::{parse_dims, prepare_out, read_json, usage, write_json, write_run_record, CheckFailed, RunConfig};
use crate::{CheckArgs, EvalArgs, GenerateArgs, Mode, ParamsArgs, RepKind, RouteArgs, TrainArgs, TreeForestArgs};

pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let (table, warnings) = EmbeddingTable::load(path)?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(table)
}

fn required(flag: Option<&PathBuf>, config: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(config)
        .cloned()
        .ok_or_else(|| usage(format!("--{name} is required (flag or config `{name}`)")))
}

#[derive(Serialize)]
struct GenerateEcho {
    mode: String,
    n: Option<usize>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    task: Option<TaskSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    align: Option<probex_core::zoo::AlignSpec>,
}

pub fn generate_zoo(a: &GenerateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.n == Some(0) {
        return Err(usage("--n must be at least 1"));
    }
    let mut echo = GenerateEcho {
        mode: String::new(),
        n: a.n,
        seed: a.seed,
        task: None,
        align: None,
    };
    let (zoo, table) = if a.mode == Mode::Align {
        let mut spec = cfg.align.unwrap_or_default();
        spec.seed = a.seed;
        if let Some(n) = a.n {
            spec.models_per_class = n;
        }
        echo.mode = "align".into();
        let (zoo, table) = spawn_alignment_zoo(&spec)?;
        echo.align = Some(spec);
        (zoo, Some(table))
    } else {
        let n = a.n.ok_or_else(|| usage("--n is required"))?;
        let task = cfg.task.unwrap_or_else(TaskSpec::tiny);
        let rng = Rng::new(a.seed);
        // Same streams as the in-process tree/forest experiment.
        let zoo = match a.mode {
            Mode::Tree => {
                echo.mode = "tree".into();
                let root = pretrain_root(&task, &mut rng.split(0))?;
                spawn_population(Some(&root), n, &task, &mut rng.split(1))?
            }
            Mode::Forest => {
                echo.mode = "forest".into();
                spawn_population(None, n, &task, &mut rng.split(2))?
            }
            Mode::Multitree(k) => {
                echo.mode = format!("multitree:{k}");
                multitree_zoo(&task, k, n, a.seed)?
            }
            Mode::Align => unreachable!("handled above"),
        };
        echo.task = Some(task);
        (zoo, None)
    };
    prepare_out(&a.out, a.common.force)?;
    save_zoo(&zoo, &a.out)?;
    if let Some(table) = table {
        table.save(&a.out.join(EMBEDDINGS_FILE))?;
    }
    info!("wrote {} models in {} trees to {}", zoo.records.len(), zoo.trees().len(), a.out.display());
    write_run_record(&a.out, "generate-zoo", &echo, &[])
}

/// What `eval` needs to know about a training run.
#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    task: TaskKind,
    temperature: f64,
    moe: bool,
    kind: MetanetKind,
    layers: Vec<String>,
    /// Validation metric per candidate layer under `--select-layer`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    layer_metrics: Vec<(String, f64)>,
    val_metric: f64,
    /// Best epoch and its validation metric, per expert.
    best_epochs: Vec<Option<usize>>,
    best_history_metrics: Vec<Option<f64>>,
    param_count: usize,
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    task: TaskKind,
    zoo: &'a Path,
    embeddings: Option<&'a Path>,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    select_layer: bool,
    moe: bool,
    router_k: Option<usize>,
}

enum Predictor {
    Single(TrainedMetanet),
    Moe(MoeModel),
}

impl Predictor {
    fn load(run: &Path, moe: bool) -> Result<Self> {
        if !moe {
            return Ok(Self::Single(TrainedMetanet::load(&run.join("metanet"))?));
        }
        let router = RouterModel::load(&run.join("router"))?;
        let experts = (0..router.k)
            .map(|k| TrainedMetanet::load(&expert_dir(run, k)))
            .collect::<probex_core::Result<Vec<_>>>()?;
        Ok(Self::Moe(MoeModel {
            router,
            experts,
            histories: Vec::new(),
        }))
    }

    fn score(&self, records: &[&ModelRecord], spec: &TargetSpec<'_>) -> Result<f64> {
        Ok(match self {
            Self::Single(m) => m.score(records, spec)?,
            Self::Moe(m) => m.score(records, spec)?,
        })
    }

    fn outputs(&self, records: &[&ModelRecord]) -> Result<Vec<ModelOutput>> {
        let outputs = records
            .par_iter()
            .map(|r| {
                let output = match self {
                    Self::Single(m) => m.predict(r)?,
                    Self::Moe(m) => m.predict(r)?,
                };
                Ok(ModelOutput {
                    id: r.model_id.clone(),
                    output,
                })
            })
            .collect::<probex_core::Result<Vec<_>>>()?;
        Ok(outputs)
    }
}

fn expert_dir(run: &Path, k: usize) -> PathBuf {
    run.join("experts").join(format!("expert_{k}"))
}

/// Restricts the table to classes with training models.
fn seen_table(zoo: &Zoo, table: &EmbeddingTable) -> Result<(EmbeddingTable, Vec<String>)> {
    let seen = training_classes(zoo, table);
    Ok((table.restrict(&seen)?, seen))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let zoo_dir = required(a.zoo.as_ref(), cfg.zoo.as_ref(), "zoo")?;
    let out = required(a.out.as_ref(), cfg.out.as_ref(), "out")?;
    let emb_path = a.embeddings.clone().or(cfg.embeddings.clone());
    let table = match a.task {
        TaskKind::Align => {
            let path = emb_path
                .as_ref()
                .ok_or_else(|| usage("--task align requires --embeddings"))?;
            Some(load_table(path)?)
        }
        TaskKind::Classify => None,
    };

    let mut model = cfg.model.clone().unwrap_or_default();
    if let Some(kind) = a.model {
        model.kind = kind;
    }
    if let Some(layers) = a.layers.clone().or(cfg.layers.clone()) {
        model.layers = layers;
    }
    if let Some(r) = a.rank {
        model.rank = r;
    }
    if let Some(d) = a.depth {
        model.depth = d;
    }
    if model.layers.len() > 1 && model.kind == MetanetKind::Dense && !a.select_layer {
        return Err(usage("the dense expert takes one layer; pass --select-layer to choose among several"));
    }

    let mut train_cfg = cfg.train.clone().unwrap_or_else(|| match a.task {
        TaskKind::Classify => ClassifyExperiment::default().train,
        TaskKind::Align => probex_core::experiments::AlignExperiment::default().train,
    });
    train_cfg.loss = match a.task {
        TaskKind::Classify => LossKind::MultilabelBce,
        TaskKind::Align => LossKind::ContrastiveAlign,
    };
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        train_cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        train_cfg.batch_size = Some(b);
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    train_cfg.validate()?;

    let zoo = load_zoo(&zoo_dir)?;
    let restricted = match &table {
        Some(t) => Some(seen_table(&zoo, t)?.0),
        None => None,
    };
    let spec = match &restricted {
        Some(t) => TargetSpec::Align {
            table: t,
            temperature: train_cfg.temperature,
        },
        None => TargetSpec::Classify {
            universe: zoo.meta.universe_size,
        },
    };

    prepare_out(&out, a.common.force)?;
    let mut report = TrainReport {
        task: a.task,
        temperature: train_cfg.temperature,
        moe: a.moe,
        kind: model.kind,
        layers: model.layers.clone(),
        layer_metrics: Vec::new(),
        val_metric: f64::NAN,
        best_epochs: Vec::new(),
        best_history_metrics: Vec::new(),
        param_count: 0,
    };
    if a.moe {
        let moe = moe_train(&zoo, &spec, &model, &train_cfg, a.router_k, 1)?;
        moe.router.save(&out.join("router"))?;
        for (k, (expert, history)) in moe.experts.iter().zip(&moe.histories).enumerate() {
            expert.save(&expert_dir(&out, k))?;
            write_text(&out.join(format!("history_{k}.csv")), &history.to_csv())?;
            report.best_epochs.push(history.best_epoch);
            report.best_history_metrics.push(history.best_metric());
        }
        report.param_count = moe.experts.iter().map(TrainedMetanet::param_count).sum();
        report.val_metric = moe.score(&zoo.split(Split::Val), &spec)?;
    } else {
        let fitted = if a.select_layer {
            let (best, metrics, fitted) = select_layer(&zoo, &spec, &model, &train_cfg, &model.layers)?;
            report.layer_metrics = model.layers.iter().cloned().zip(metrics).collect();
            report.layers = vec![model.layers[best].clone()];
            fitted
        } else {
            fit(&zoo, &spec, &model, &train_cfg)?
        };
        fitted.metanet.save(&out.join("metanet"))?;
        write_text(&out.join("history.csv"), &fitted.history.to_csv())?;
        report.best_epochs.push(fitted.history.best_epoch);
        report.best_history_metrics.push(fitted.history.best_metric());
        report.param_count = fitted.metanet.param_count();
        report.val_metric = fitted.val_metric;
    }
    info!("validation metric {:.4}", report.val_metric);
    write_json(&out.join(TRAIN_REPORT_FILE), &report)?;
    let echo = TrainEcho {
        task: a.task,
        zoo: &zoo_dir,
        embeddings: emb_path.as_deref(),
        model: &model,
        train: &train_cfg,
        select_layer: a.select_layer,
        moe: a.moe,
        router_k: a.router_k,
    };
    let mut inputs = vec![zoo_dir.as_path()];
    inputs.extend(emb_path.as_deref().filter(|_| a.task == TaskKind::Align));
    write_run_record(&out, "train", &echo, &inputs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Retrieval {
    query: String,
    results: Vec<Retrieved>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct EvalSummary {
    split: Split,
    /// Mean per-model score, as during training.
    metric: f64,
    n_models: usize,
    reports: BTreeMap<String, EvalReport>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let zoo_dir = required(a.zoo.as_ref(), cfg.zoo.as_ref(), "zoo")?;
    let emb_path = a.embeddings.clone().or(cfg.embeddings.clone());
    let report: TrainReport = read_json(&a.run.join(TRAIN_REPORT_FILE))?;
    let table = match report.task {
        TaskKind::Align => {
            let path = emb_path
                .as_ref()
                .ok_or_else(|| usage("evaluating an aligned run requires --embeddings"))?;
            Some(load_table(path)?)
        }
        TaskKind::Classify => None,
    };
    let predictor = Predictor::load(&a.run, report.moe)?;
    let zoo = load_zoo(&zoo_dir)?;
    let records = zoo.split(a.split);
    if records.is_empty() {
        return Err(usage(format!("split {:?} of {} is empty", a.split, zoo_dir.display())));
    }

    let mut reports = BTreeMap::new();
    let mut retrieval = None;
    let metric = match &table {
        None => {
            let spec = TargetSpec::Classify {
                universe: zoo.meta.universe_size,
            };
            let outputs = predictor.outputs(&records)?;
            let bits: Vec<Vec<bool>> = records.iter().map(|r| r.label_bits.clone()).collect();
            reports.insert("multilabel".to_string(), eval_multilabel(&outputs, &bits)?);
            predictor.score(&records, &spec)?
        }
        Some(table) => {
            let (restricted, seen) = seen_table(&zoo, table)?;
            let holdout = &zoo.meta.holdout_classes;
            let (unseen, seen_records): (Vec<&ModelRecord>, Vec<&ModelRecord>) = records
                .iter()
                .partition(|r| r.embedding_key.as_ref().is_some_and(|k| holdout.contains(k)));
            let mut zeroshot = |name: &str, rs: &[&ModelRecord], classes: &[String]| -> Result<()> {
                if rs.is_empty() {
                    return Ok(());
                }
                let outputs = predictor.outputs(rs)?;
                let keys: Vec<Option<String>> = rs.iter().map(|r| r.embedding_key.clone()).collect();
                reports.insert(name.to_string(), eval_zeroshot(&outputs, &keys, table, classes)?);
                Ok(())
            };
            zeroshot("in_dist", &seen_records, &seen)?;
            zeroshot("zero_shot", &unseen, holdout)?;

            let raw_layer = a.raw_layer.clone().unwrap_or_else(|| report.layers[0].clone());
            let reps_of = |rs: &[&ModelRecord]| -> Result<Vec<ModelOutput>> {
                match a.rep {
                    RepKind::Metanet => predictor.outputs(rs),
                    RepKind::Raw => Ok(rs
                        .par_iter()
                        .map(|r| {
                            Ok(ModelOutput {
                                id: r.model_id.clone(),
                                output: raw_layer_rep(r, &raw_layer)?,
                            })
                        })
                        .collect::<probex_core::Result<Vec<_>>>()?),
                }
            };
            if a.knn == 0 {
                return Err(usage("--knn must be at least 1"));
            }
            let train_records = zoo.split(Split::Train);
            let train_reps = labeled_reps(reps_of(&train_records)?, &train_records)?;
            let split_outputs = reps_of(&records)?;
            let split_reps = labeled_reps(split_outputs.clone(), &records)?;
            let seen_reps: Vec<_> = split_reps.iter().filter(|r| !holdout.contains(&r.class)).cloned().collect();
            if !seen_reps.is_empty() {
                reports.insert("knn".to_string(), eval_knn(&train_reps, &seen_reps, KnnK::K(a.knn))?);
            }
            match eval_occ(&train_reps, &split_reps, &seen, KnnK::K(a.knn)) {
                Ok(r) => {
                    reports.insert("occ".to_string(), r);
                }
                Err(probex_core::Error::Degenerate(msg)) => warn!("one-class report skipped: {msg}"),
                Err(e) => return Err(e.into()),
            }
            if let Some(n) = a.retrieve {
                let pool = reps_of(&zoo.records.iter().collect::<Vec<_>>())?;
                retrieval = Some(
                    split_outputs
                        .iter()
                        .map(|q| {
                            let (results, warnings) = retrieve(&pool, &q.id, &q.output, n)?;
                            Ok(Retrieval {
                                query: q.id.clone(),
                                results,
                                warnings,
                            })
                        })
                        .collect::<probex_core::Result<Vec<_>>>()?,
                );
            }
            if seen_records.is_empty() {
                f64::NAN
            } else {
                let spec = TargetSpec::Align {
                    table: &restricted,
                    temperature: report.temperature,
                };
                predictor.score(&seen_records, &spec)?
            }
        }
    };

    prepare_out(&a.out, a.common.force)?;
    for (name, r) in &reports {
        write_text(&a.out.join(format!("{name}_per_class.csv")), &r.per_class_csv())?;
    }
    let summary = EvalSummary {
        split: a.split,
        metric,
        n_models: records.len(),
        reports,
    };
    write_json(&a.out.join(EVAL_REPORT_FILE), &summary)?;
    if let Some(retrieval) = &retrieval {
        write_json(&a.out.join("retrieval.json"), retrieval)?;
    }
    println!("{metric}");
    #[derive(Serialize)]
    struct Echo<'a> {
        run: &'a Path,
        zoo: &'a Path,
        split: Split,
        rep: RepKind,
        raw_layer: Option<&'a str>,
        knn: usize,
        retrieve: Option<usize>,
    }
    let echo = Echo {
        run: &a.run,
        zoo: &zoo_dir,
        split: a.split,
        rep: a.rep,
        raw_layer: a.raw_layer.as_deref(),
        knn: a.knn,
        retrieve: a.retrieve,
    };
    let mut inputs = vec![zoo_dir.as_path(), a.run.as_path()];
    inputs.extend(emb_path.as_deref().filter(|_| report.task == TaskKind::Align));
    write_run_record(&a.out, "eval", &echo, &inputs)
}

pub fn route(a: &RouteArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let zoo_dir = required(a.zoo.as_ref(), cfg.zoo.as_ref(), "zoo")?;
    let zoo = load_zoo(&zoo_dir)?;
    let train = zoo.split(Split::Train);
    let items = train.iter().map(|r| r.layer(&a.layer)).collect::<probex_core::Result<Vec<_>>>()?;
    let router = fit_router(&items, &a.layer, a.k)?;

    prepare_out(&a.out, a.common.force)?;
    router.save(&a.out)?;
    let mut csv = String::from("model_id,split,tree_id,cluster\n");
    for split in [Split::Train, Split::Val, Split::Test] {
        let name = serde_json::to_value(split)?;
        for r in zoo.split(split) {
            let c = probex_core::router::route(&router, &r.layer(&a.layer)?)?;
            let _ = writeln!(csv, "{},{},{},{c}", r.model_id, name.as_str().unwrap_or_default(), r.tree_id);
        }
    }
    write_text(&a.out.join("routes.csv"), &csv)?;
    println!("{}", router.k);
    #[derive(Serialize)]
    struct Echo<'a> {
        zoo: &'a Path,
        layer: &'a str,
        k: Option<usize>,
    }
    let echo = Echo {
        zoo: &zoo_dir,
        layer: &a.layer,
        k: a.k,
    };
    write_run_record(&a.out, "route", &echo, &[zoo_dir.as_path()])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Serialize)]
struct EquivalenceReport {
    dims: [usize; 6],
    trials: usize,
    tol: f64,
    /// Dense expert against its probing-network construction.
    dense_to_probing: f64,
    /// Linear ProbeX against its Tucker expansion.
    probex_to_dense: f64,
    max_deviation: f64,
    pass: bool,
}

pub fn check_equivalence(a: &CheckArgs) -> Result<()> {
    let d = parse_dims(&a.dims)?;
    let [d_w, d_h, d_y, r_u, r_v, r_t] = <[usize; 6]>::try_from(d)
        .map_err(|_| usage("--dims takes six values: d_W,d_H,d_Y,r_U,r_V,r_T"))?;
    if !(a.tol >= 0.0) {
        return Err(usage("--tol must be a non-negative number"));
    }
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let dims = ProbeXDims::new(d_w, d_h, d_y, r_u, r_v, r_t);
    let rng = Rng::new(a.seed);
    let per_trial = |t: usize| -> Result<(f64, f64)> {
        let mut rng = rng.split(t as u64);
        let w = DenseExpert::init(d_w, d_h, d_y, &mut rng)?;
        let net = prop1_construct(&w)?;
        let p = ProbeXParams::init(dims, Activation::Identity, &mut rng)?;
        let expanded = prop2_tucker_expand(&p)?;
        let (mut dev1, mut dev2) = (0.0f64, 0.0f64);
        for _ in 0..5 {
            let x = Matrix::gaussian(d_w, d_h, 1.0, &mut rng);
            dev1 = dev1.max(max_abs_diff(&net.forward(&x)?, &dense_forward(&w, &x)?));
            dev2 = dev2.max(max_abs_diff(&p.forward(&x)?.1, &dense_forward(&expanded, &x)?));
        }
        Ok((dev1, dev2))
    };
    let devs = (0..a.trials).into_par_iter().map(per_trial).collect::<Result<Vec<_>>>()?;
    let dense_to_probing = devs.iter().map(|d| d.0).fold(0.0, f64::max);
    let probex_to_dense = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    let max_deviation = dense_to_probing.max(probex_to_dense);
    let report = EquivalenceReport {
        dims: [d_w, d_h, d_y, r_u, r_v, r_t],
        trials: a.trials,
        tol: a.tol,
        dense_to_probing,
        probex_to_dense,
        max_deviation,
        pass: max_deviation <= a.tol,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.pass {
        return Err(CheckFailed(format!("max deviation {max_deviation:.3e} exceeds tolerance {}", a.tol)).into());
    }
    Ok(())
}

/// `probex_params,dense_params,ratio` for the given dimensions.
pub fn params_csv(dims: &[usize]) -> Result<String> {
    let p = match *dims {
        [d_w, d_h, d_y, r] => ProbeXDims::with_rank(d_w, d_h, d_y, r),
        [d_w, d_h, d_y, r_u, r_v, r_t] => ProbeXDims::new(d_w, d_h, d_y, r_u, r_v, r_t),
        _ => return Err(usage("--dims takes d_W,d_H,d_Y,r or d_W,d_H,d_Y,r_U,r_V,r_T")),
    };
    let probex = p.param_count();
    let dense = dense_param_count(p.d_w, p.d_h, p.d_y);
    Ok(format!(
        "probex_params,dense_params,ratio\n{probex},{dense},{:.4}\n",
        dense as f64 / probex as f64
    ))
}

pub fn params(a: &ParamsArgs) -> Result<()> {
    print!("{}", params_csv(&parse_dims(&a.dims)?)?);
    Ok(())
}

pub fn tree_vs_forest(a: &TreeForestArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let defaults = ClassifyExperiment::default();
    let mut exp = ClassifyExperiment {
        task: cfg.task.unwrap_or(defaults.task),
        model: cfg.model.unwrap_or(defaults.model),
        train: cfg.train.unwrap_or(defaults.train),
    };
    if let Some(layers) = cfg.layers {
        exp.model.layers = layers;
    }
    if let Some(out) = &a.out {
        prepare_out(out, a.common.force)?;
    }
    let r = probex_core::experiments::tree_vs_forest(&exp, a.n, a.seed)?;
    let csv = format!("population,test_accuracy\ntree,{}\nforest,{}\n", r.tree, r.forest);
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(&out.join("tree_vs_forest.csv"), &csv)?;
        #[derive(Serialize)]
        struct Echo<'a> {
            n: usize,
            seed: u64,
            experiment: &'a ClassifyExperiment,
        }
        let echo = Echo {
            n: a.n,
            seed: a.seed,
            experiment: &exp,
        };
        write_run_record(out, "tree-vs-forest", &echo, &[])?;
    }
    Ok(())
}
