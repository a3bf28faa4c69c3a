//! Downstream evaluations on metanet outputs and representations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::zoo::ModelRecord;
use crate::linalg::{cosine_distance, Vector};
use crate::trainer::nearest_class;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub class: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub aggregate: f64,
    /// How `aggregate` follows from `per_class`: `mean` or `weighted_mean`.
    pub aggregation: String,
    pub per_class: Vec<ClassMetric>,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalReport {
    fn new(task: &str, aggregation: &str, per_class: Vec<ClassMetric>, warnings: Vec<String>) -> Self {
        let mut report = Self {
            task: task.to_string(),
            aggregate: 0.0,
            aggregation: aggregation.to_string(),
            per_class,
            seed: 0,
            config: serde_json::Value::Null,
            warnings,
        };
        report.aggregate = report.recompute_aggregate();
        report
    }

    pub fn recompute_aggregate(&self) -> f64 {
        if self.per_class.is_empty() {
            return f64::NAN;
        }
        if self.aggregation == "weighted_mean" {
            let n: usize = self.per_class.iter().map(|c| c.count).sum();
            self.per_class
                .iter()
                .map(|c| c.value * c.count as f64)
                .sum::<f64>()
                / n as f64
        } else {
            self.per_class.iter().map(|c| c.value).sum::<f64>() / self.per_class.len() as f64
        }
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,value,count\n");
        for c in &self.per_class {
            let _ = writeln!(out, "{},{},{}", c.class, c.value, c.count);
        }
        out
    }
}

/// A metanet output (or representation) for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub id: String,
    pub output: Vector,
}

/// Mean per-class binary accuracy at logit threshold 0. Each entry of
/// `per_class` is one universe class; the aggregate is their mean.
pub fn eval_multilabel(outputs: &[ModelOutput], bits: &[Vec<bool>]) -> Result<EvalReport> {
    if outputs.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    if outputs.len() != bits.len() {
        return Err(Error::dim("one label-bit vector per output is required"));
    }
    let c = bits[0].len();
    let mut correct = vec![0usize; c];
    for (o, b) in outputs.iter().zip(bits) {
        if o.output.len() != c || b.len() != c {
            return Err(Error::dim(format!(
                "model {}: {} logits vs {} classes",
                o.id,
                o.output.len(),
                c
            )));
        }
        for j in 0..c {
            if (o.output[j] > 0.0) == b[j] {
                correct[j] += 1;
            }
        }
    }
    let n = outputs.len();
    let per_class = correct
        .iter()
        .enumerate()
        .map(|(j, &k)| ClassMetric {
            class: j.to_string(),
            value: k as f64 / n as f64,
            count: n,
        })
        .collect();
    Ok(EvalReport::new("multilabel", "mean", per_class, Vec::new()))
}

/// Top-1 accuracy of cosine nearest-class prediction over `restrict_to`.
/// `keys[i]` is the true class name of `outputs[i]`.
pub fn eval_zeroshot(
    outputs: &[ModelOutput],
    keys: &[Option<String>],
    table: &EmbeddingTable,
    restrict_to: &[String],
) -> Result<EvalReport> {
    if outputs.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let candidates = restrict_to
        .iter()
        .map(|n| {
            table
                .index_of(n)
                .ok_or_else(|| Error::Data(format!("class `{n}` missing from embedding table")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (o, key) in outputs.iter().zip(keys) {
        let key = key
            .as_ref()
            .ok_or_else(|| Error::Data(format!("model {} has no embedding key", o.id)))?;
        let truth = table
            .index_of(key)
            .filter(|i| candidates.contains(i))
            .ok_or_else(|| Error::Data(format!("model {}: class `{key}` not in candidates", o.id)))?;
        let pred = nearest_class(&o.output, table, Some(&candidates))?;
        let entry = tally.entry(key.clone()).or_default();
        entry.0 += usize::from(pred == truth);
        entry.1 += 1;
    }
    let per_class = tally
        .into_iter()
        .map(|(class, (hit, n))| ClassMetric {
            class,
            value: hit as f64 / n as f64,
            count: n,
        })
        .collect();
    Ok(EvalReport::new("zeroshot", "weighted_mean", per_class, Vec::new()))
}

/// A representation with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRep {
    pub id: String,
    pub class: String,
    pub rep: Vector,
}

/// Flattened weights of one layer: the untrained baseline representation.
pub fn raw_layer_rep(record: &ModelRecord, layer: &str) -> Result<Vector> {
    Ok(record.layer(layer)?.into_vec())
}

/// Pairs each output with its record's class; records without a class
/// are an error.
pub fn labeled_reps(outputs: Vec<ModelOutput>, records: &[&ModelRecord]) -> Result<Vec<LabeledRep>> {
    if outputs.len() != records.len() {
        return Err(Error::dim("one output per record is required"));
    }
    outputs
        .into_iter()
        .zip(records)
        .map(|(o, r)| {
            let class = r
                .embedding_key
                .clone()
                .ok_or_else(|| Error::Data(format!("model {} has no embedding key", r.model_id)))?;
            Ok(LabeledRep {
                id: o.id,
                class,
                rep: o.output,
            })
        })
        .collect()
}

/// How many nearest members of a class enter its score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnnK {
    K(usize),
    All,
}

/// Mean of the `k` smallest cosine distances from `query` to `members`.
pub fn knn_score(query: &[f64], members: &[&Vector], k: KnnK) -> Result<f64> {
    let mut d = members
        .iter()
        .map(|m| cosine_distance(query, m))
        .collect::<Result<Vec<f64>>>()?;
    d.sort_by(f64::total_cmp);
    let take = match k {
        KnnK::K(k) => k.min(d.len()),
        KnnK::All => d.len(),
    };
    if take == 0 {
        return Err(Error::config("kNN score needs at least one member"));
    }
    Ok(d[..take].iter().sum::<f64>() / take as f64)
}

fn group_by_class(train: &[LabeledRep]) -> BTreeMap<&str, Vec<&Vector>> {
    let mut groups: BTreeMap<&str, Vec<&Vector>> = BTreeMap::new();
    for r in train {
        groups.entry(&r.class).or_default().push(&r.rep);
    }
    groups
}

/// Predicts each test rep's class as the one with the lowest kNN score.
/// Ties go to the lexicographically first class.
pub fn eval_knn(train: &[LabeledRep], test: &[LabeledRep], k: KnnK) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    if k == KnnK::K(0) {
        return Err(Error::config("k must be ≥ 1"));
    }
    let groups = group_by_class(train);
    let mut warnings = Vec::new();
    for r in test {
        if !groups.contains_key(r.class.as_str()) && !warnings.iter().any(|w: &String| w.contains(&r.class)) {
            warnings.push(format!("class `{}` has no training reps; skipped", r.class));
        }
    }
    let preds = test
        .par_iter()
        .map(|r| {
            let mut best: Option<(&str, f64)> = None;
            for (class, members) in &groups {
                let s = knn_score(&r.rep, members, k)?;
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((class, s));
                }
            }
            Ok(best.map(|(c, _)| c.to_string()))
        })
        .collect::<Result<Vec<Option<String>>>>()?;
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (r, pred) in test.iter().zip(preds) {
        if !groups.contains_key(r.class.as_str()) {
            continue;
        }
        let e = tally.entry(r.class.clone()).or_default();
        e.0 += usize::from(pred.as_deref() == Some(r.class.as_str()));
        e.1 += 1;
    }
    let per_class = tally
        .into_iter()
        .map(|(class, (hit, n))| ClassMetric {
            class,
            value: hit as f64 / n as f64,
            count: n,
        })
        .collect();
    Ok(EvalReport::new("knn", "weighted_mean", per_class, warnings))
}

/// ROC AUC that a positive outscores a negative, ties counting one half,
/// via midranks.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Degenerate("AUC needs both positives and negatives".into()));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n1, n0) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// One-class AUC per normal class: every test rep is scored by its kNN
/// distance to the normal class's training reps (lower = more normal).
/// Classes with fewer than two normal test reps, or no training reps, are
/// excluded with a warning.
pub fn eval_occ(
    train: &[LabeledRep],
    test: &[LabeledRep],
    normal_classes: &[String],
    k: KnnK,
) -> Result<EvalReport> {
    if k == KnnK::K(0) {
        return Err(Error::config("k must be ≥ 1"));
    }
    let groups = group_by_class(train);
    let mut warnings = Vec::new();
    let mut per_class = Vec::new();
    for class in normal_classes {
        let Some(members) = groups.get(class.as_str()) else {
            warnings.push(format!("class `{class}` has no training reps; excluded"));
            continue;
        };
        let n_normal = test.iter().filter(|r| &r.class == class).count();
        if n_normal < 2 {
            warnings.push(format!("class `{class}` has {n_normal} test models; AUC excluded"));
            continue;
        }
        let scores = test
            .par_iter()
            .map(|r| knn_score(&r.rep, members, k))
            .collect::<Result<Vec<f64>>>()?;
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (r, s) in test.iter().zip(scores) {
            // Negated distance: higher = more normal.
            if &r.class == class {
                pos.push(-s);
            } else {
                neg.push(-s);
            }
        }
        if neg.is_empty() {
            warnings.push(format!("class `{class}` has no anomalous test models; excluded"));
            continue;
        }
        per_class.push(ClassMetric {
            class: class.clone(),
            value: auc(&pos, &neg)?,
            count: pos.len(),
        });
    }
    if per_class.is_empty() {
        return Err(Error::Degenerate("no class admits an AUC".into()));
    }
    Ok(EvalReport::new("occ", "mean", per_class, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: String,
    pub distance: f64,
}

/// The `n` nearest reps to `query` by cosine distance, excluding the query's
/// own id; ties broken by id. Returns any truncation warning.
pub fn retrieve(
    pool: &[ModelOutput],
    query_id: &str,
    query: &[f64],
    n: usize,
) -> Result<(Vec<Retrieved>, Vec<String>)> {
    if n == 0 {
        return Err(Error::config("n must be ≥ 1"));
    }
    let mut ranked = pool
        .iter()
        .filter(|p| p.id != query_id)
        .map(|p| {
            Ok(Retrieved {
                id: p.id.clone(),
                distance: cosine_distance(query, &p.output)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    let mut warnings = Vec::new();
    if n > ranked.len() {
        warnings.push(format!("requested {n} models, only {} available", ranked.len()));
    }
    ranked.truncate(n);
    Ok((ranked, warnings))
}
