//! End-to-end experiment drivers shared by the command line and the
//! acceptance suite.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::eval_zeroshot;
use crate::linalg::Rng;
use crate::pipeline::{fit, fit_records, moe_train, probex_budget, MetanetKind, ModelConfig, TargetSpec};
use crate::router::{fit_router, route};
use crate::trainer::{LossKind, TrainConfig};
use crate::zoo::{
    pretrain_root, spawn_alignment_zoo, spawn_multitree, spawn_population, AlignSpec, ModelRecord,
    Split, TaskSpec, Zoo,
};

/// Target task, metanet, and optimizer shared by the classification
/// experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyExperiment {
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ClassifyExperiment {
    fn default() -> Self {
        Self {
            task: TaskSpec::tiny(),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 300,
                batch_size: Some(64),
                ..TrainConfig::default()
            },
        }
    }
}

impl ClassifyExperiment {
    fn spec(&self) -> TargetSpec<'static> {
        TargetSpec::Classify {
            universe: self.task.universe,
        }
    }

    /// Test accuracy of the configured metanet trained on `zoo`.
    pub fn test_accuracy(&self, zoo: &Zoo) -> Result<f64> {
        let fitted = fit(zoo, &self.spec(), &self.model, &self.train)?;
        fitted.metanet.score(&zoo.split(Split::Test), &self.spec())
    }
}

/// A Model Tree (shared pre-trained root) and a Model Forest (independent
/// random inits) of `n` models each, fine-tuned on the same task.
pub fn tree_and_forest(task: &TaskSpec, n: usize, seed: u64) -> Result<(Zoo, Zoo)> {
    let rng = Rng::new(seed);
    let root = pretrain_root(task, &mut rng.split(0))?;
    let tree = spawn_population(Some(&root), n, task, &mut rng.split(1))?;
    let forest = spawn_population(None, n, task, &mut rng.split(2))?;
    Ok((tree, forest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeForest {
    pub tree: f64,
    pub forest: f64,
}

pub fn tree_vs_forest(exp: &ClassifyExperiment, n: usize, seed: u64) -> Result<TreeForest> {
    let (tree, forest) = tree_and_forest(&exp.task, n, seed)?;
    Ok(TreeForest {
        tree: exp.test_accuracy(&tree)?,
        forest: exp.test_accuracy(&forest)?,
    })
}

/// Test accuracy after training on a seeded `fraction` of the training
/// split; validation and test splits are unchanged.
pub fn subsampled_accuracy(exp: &ClassifyExperiment, zoo: &Zoo, fraction: f64, seed: u64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut train = zoo.split(Split::Train);
    Rng::new(seed).split(0x5355_4253).shuffle(&mut train);
    let keep = ((train.len() as f64 * fraction).ceil() as usize).max(1);
    train.truncate(keep);
    let spec = exp.spec();
    let train_cfg = TrainConfig {
        seed,
        ..exp.train.clone()
    };
    let fitted = fit_records(&train, &zoo.split(Split::Val), &spec, &exp.model, &train_cfg)?;
    fitted.metanet.score(&zoo.split(Split::Test), &spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterRecovery {
    pub k: usize,
    pub true_k: usize,
    /// Share of training models whose cluster matches their tree one-to-one.
    pub fit_accuracy: f64,
    /// Share of held-out (val + test) models routed to their own tree.
    pub routing_accuracy: f64,
}

/// Clusters the training split of `zoo` on `layer` and scores routing
/// against the ground-truth tree ids.
pub fn router_recovery(zoo: &Zoo, layer: &str) -> Result<RouterRecovery> {
    let train = zoo.split(Split::Train);
    let items = train.iter().map(|r| r.layer(layer)).collect::<Result<Vec<_>>>()?;
    let router = fit_router(&items, layer, None)?;
    // Each cluster is named after the majority tree of its members.
    let trees = zoo.trees();
    let mut votes = vec![vec![0usize; trees.len()]; router.k];
    for (r, &c) in train.iter().zip(&router.assignments) {
        votes[c][tree_index(trees, r)?] += 1;
    }
    let cluster_tree: Vec<usize> = votes
        .iter()
        .map(|v| (0..v.len()).max_by_key(|&t| (v[t], usize::MAX - t)).unwrap_or(0))
        .collect();
    let fit_hits = train
        .iter()
        .zip(&router.assignments)
        .filter(|(r, &c)| tree_index(trees, r).ok() == Some(cluster_tree[c]))
        .count();
    let mut distinct = cluster_tree.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let one_to_one = distinct.len() == router.k;

    let held_out: Vec<&ModelRecord> = zoo.split(Split::Val).into_iter().chain(zoo.split(Split::Test)).collect();
    let mut hits = 0;
    for r in &held_out {
        let c = route(&router, &r.layer(layer)?)?;
        if cluster_tree[c] == tree_index(trees, r)? {
            hits += 1;
        }
    }
    Ok(RouterRecovery {
        k: router.k,
        true_k: trees.len(),
        fit_accuracy: if one_to_one {
            fit_hits as f64 / train.len() as f64
        } else {
            0.0
        },
        routing_accuracy: if held_out.is_empty() {
            f64::NAN
        } else {
            hits as f64 / held_out.len() as f64
        },
    })
}

fn tree_index(trees: &[String], r: &ModelRecord) -> Result<usize> {
    trees
        .iter()
        .position(|t| *t == r.tree_id)
        .ok_or_else(|| Error::Data(format!("model {} names unknown tree {}", r.model_id, r.tree_id)))
}

pub fn multitree_zoo(task: &TaskSpec, k: usize, n: usize, seed: u64) -> Result<Zoo> {
    spawn_multitree(k, n, task, &mut Rng::new(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoeVsShared {
    pub moe: f64,
    pub shared: f64,
    pub moe_params: usize,
    pub shared_params: usize,
}

/// Smallest ProbeX rank whose parameter count reaches `budget`.
pub fn rank_for_budget(first: &ModelRecord, layers: &[String], d_y: usize, budget: usize) -> Result<usize> {
    let mut r = 1;
    while probex_budget(first, layers, r, d_y)? < budget {
        r += 1;
    }
    // Pick whichever neighbour is closer.
    if r > 1 {
        let below = probex_budget(first, layers, r - 1, d_y)?;
        let above = probex_budget(first, layers, r, d_y)?;
        if budget - below < above - budget {
            return Ok(r - 1);
        }
    }
    Ok(r)
}

/// Per-tree experts behind a router against one shared ProbeX with the same
/// total parameter count.
pub fn moe_vs_shared(exp: &ClassifyExperiment, zoo: &Zoo) -> Result<MoeVsShared> {
    let spec = exp.spec();
    let moe = moe_train(zoo, &spec, &exp.model, &exp.train, None, 1)?;
    let test = zoo.split(Split::Test);
    let moe_acc = moe.score(&test, &spec)?;
    let moe_params: usize = moe.experts.iter().map(|e| e.param_count()).sum();

    let first = zoo
        .records
        .first()
        .ok_or_else(|| Error::config("empty zoo"))?;
    let rank = rank_for_budget(first, &exp.model.layers, exp.task.universe, moe_params)?;
    let shared_cfg = ModelConfig {
        rank,
        ..exp.model.clone()
    };
    let shared = fit(zoo, &spec, &shared_cfg, &exp.train)?;
    Ok(MoeVsShared {
        moe: moe_acc,
        shared: shared.metanet.score(&test, &spec)?,
        moe_params,
        shared_params: shared.metanet.param_count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignExperiment {
    pub zoo: AlignSpec,
    pub kind: MetanetKind,
    pub rank: usize,
    pub layer: String,
    pub train: TrainConfig,
}

impl Default for AlignExperiment {
    fn default() -> Self {
        Self {
            zoo: AlignSpec::default(),
            kind: MetanetKind::Probex,
            rank: 16,
            layer: crate::zoo::DEFAULT_LAYER.to_string(),
            train: TrainConfig {
                epochs: 600,
                batch_size: Some(32),
                loss: LossKind::ContrastiveAlign,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOutcome {
    /// Top-1 over the training classes, on test models of those classes.
    pub in_dist: f64,
    pub in_dist_chance: f64,
    /// Top-1 over the held-out classes, on their (test-only) models.
    pub zero_shot: f64,
    pub zero_shot_chance: f64,
}

/// Names of the classes that have training models, in table order.
pub fn training_classes(zoo: &Zoo, table: &EmbeddingTable) -> Vec<String> {
    table
        .names()
        .iter()
        .filter(|n| !zoo.meta.holdout_classes.contains(n))
        .cloned()
        .collect()
}

/// Trains an aligned metanet on an existing alignment zoo and scores it.
pub fn align_on(zoo: &Zoo, table: &EmbeddingTable, exp: &AlignExperiment) -> Result<AlignOutcome> {
    let seen = training_classes(zoo, table);
    let holdout = &zoo.meta.holdout_classes;
    if holdout.is_empty() {
        return Err(Error::config("alignment zoo has no held-out classes"));
    }
    let train_table = table.restrict(&seen)?;
    let spec = TargetSpec::Align {
        table: &train_table,
        temperature: exp.train.temperature,
    };
    let cfg = ModelConfig {
        kind: exp.kind,
        layers: vec![exp.layer.clone()],
        rank: exp.rank,
        ..ModelConfig::default()
    };
    let fitted = fit(zoo, &spec, &cfg, &exp.train)?;

    let (unseen, seen_test): (Vec<&ModelRecord>, Vec<&ModelRecord>) =
        zoo.split(Split::Test).into_iter().partition(|r| {
            r.embedding_key
                .as_ref()
                .is_some_and(|k| holdout.contains(k))
        });
    let score = |records: &[&ModelRecord], classes: &[String]| -> Result<f64> {
        let outputs = fitted.metanet.predict_all(records)?;
        let keys: Vec<Option<String>> = records.iter().map(|r| r.embedding_key.clone()).collect();
        Ok(eval_zeroshot(&outputs, &keys, table, classes)?.aggregate)
    };
    Ok(AlignOutcome {
        in_dist: score(&seen_test, &seen)?,
        in_dist_chance: 1.0 / seen.len() as f64,
        zero_shot: score(&unseen, holdout)?,
        zero_shot_chance: 1.0 / holdout.len() as f64,
    })
}

pub fn alignment(exp: &AlignExperiment) -> Result<AlignOutcome> {
    let (zoo, table) = spawn_alignment_zoo(&exp.zoo)?;
    align_on(&zoo, &table, exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> TaskSpec {
        TaskSpec {
            input_dim: 8,
            hidden: vec![12, 12],
            universe: 10,
            subset_size: 5,
            pretrain_classes: 5,
            mixture_classes: 15,
            samples_per_class: 20,
            mean_std: 1.5,
            ..TaskSpec::default()
        }
    }

    fn small_experiment() -> ClassifyExperiment {
        ClassifyExperiment {
            task: small_task(),
            model: ModelConfig {
                rank: 3,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 5,
                batch_size: Some(8),
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn budget_rank_picks_the_nearest_count() {
        let zoo = multitree_zoo(&small_task(), 1, 4, 0).unwrap();
        let first = &zoo.records[0];
        let layers = vec!["fc1".to_string()];
        for r in 1..6 {
            let exact = probex_budget(first, &layers, r, 10).unwrap();
            assert_eq!(rank_for_budget(first, &layers, 10, exact).unwrap(), r);
        }
        assert_eq!(rank_for_budget(first, &layers, 10, 1).unwrap(), 1);
    }

    #[test]
    fn subsample_fraction_is_validated_and_full_fraction_is_plain_fit() {
        let exp = small_experiment();
        let zoo = multitree_zoo(&exp.task, 1, 30, 1).unwrap();
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(subsampled_accuracy(&exp, &zoo, bad, 0).is_err());
        }
        let full = subsampled_accuracy(&exp, &zoo, 1.0, 0).unwrap();
        assert!((0.0..=1.0).contains(&full));
    }

    #[test]
    fn router_recovery_on_two_trees() {
        let zoo = multitree_zoo(&small_task(), 2, 40, 2).unwrap();
        let r = router_recovery(&zoo, "fc1").unwrap();
        assert_eq!(r.true_k, 2);
        assert_eq!(r.k, 2);
        assert_eq!(r.fit_accuracy, 1.0);
        assert_eq!(r.routing_accuracy, 1.0);
    }

    #[test]
    fn moe_and_shared_budgets_are_close() {
        let exp = small_experiment();
        let zoo = multitree_zoo(&exp.task, 2, 40, 3).unwrap();
        let out = moe_vs_shared(&exp, &zoo).unwrap();
        let rel = (out.moe_params as f64 - out.shared_params as f64).abs() / out.moe_params as f64;
        assert!(rel < 0.25, "{out:?}");
    }

    #[test]
    fn alignment_smoke() {
        let exp = AlignExperiment {
            zoo: AlignSpec {
                task: small_task(),
                n_classes: 8,
                n_holdout: 2,
                embedding_dim: 4,
                models_per_class: 3,
                holdout_models_per_class: 2,
                ..AlignSpec::default()
            },
            rank: 3,
            train: TrainConfig {
                epochs: 3,
                batch_size: Some(8),
                loss: LossKind::ContrastiveAlign,
                ..TrainConfig::default()
            },
            ..AlignExperiment::default()
        };
        let (zoo, table) = spawn_alignment_zoo(&exp.zoo).unwrap();
        assert_eq!(training_classes(&zoo, &table).len(), 6);
        let out = align_on(&zoo, &table, &exp).unwrap();
        assert_eq!(out.in_dist_chance, 1.0 / 6.0);
        assert_eq!(out.zero_shot_chance, 0.5);
        assert!((0.0..=1.0).contains(&out.zero_shot));
    }
}
