use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_TASK: &str = r#"{"task": {"input_dim": 8, "hidden": [12, 12], "universe": 10, "subset_size": 5,
  "pretrain_classes": 5, "mixture_classes": 15, "samples_per_class": 20, "mean_std": 1.5}}"#;

fn probex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probex"))
        .args(args)
        .env_remove("PROBEX_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = probex(args);
    assert_eq!(code(&out), 0, "{args:?} failed: {}", stderr(&out));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("small.json"), SMALL_TASK).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn zoo(&self, name: &str, mode: &str, n: usize, seed: u64) -> PathBuf {
        let out = self.path(name);
        let (n, seed) = (n.to_string(), seed.to_string());
        let cfg = self.path("small.json");
        ok(&["generate-zoo", "--mode", mode, "--n", &n, "--seed", &seed, "--out", s(&out), "--config", s(&cfg)]);
        out
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir` by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generation_is_deterministic_and_idempotent_under_force() {
    let ws = Workspace::new();
    let a = ws.zoo("a", "tree", 10, 1);
    let b = ws.zoo("b", "tree", 10, 1);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let before = snapshot(&a);

    let cfg = ws.path("small.json");
    let again = probex(&["generate-zoo", "--mode", "tree", "--n", "10", "--seed", "1", "--out", s(&a), "--config", s(&cfg)]);
    assert_eq!(code(&again), 2, "non-empty --out without --force");
    assert!(stderr(&again).contains("--force"));

    ok(&["generate-zoo", "--mode", "tree", "--n", "10", "--seed", "1", "--out", s(&a), "--config", s(&cfg), "--force"]);
    assert_eq!(snapshot(&a), before);

    let c = ws.zoo("c", "tree", 10, 2);
    assert_ne!(fs::read(a.join("manifest.json")).unwrap(), fs::read(c.join("manifest.json")).unwrap());
}

#[test]
fn multitree_partitions_evenly() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "multitree:4", 400, 0);
    let manifest = read_json(&zoo.join("manifest.json"));
    let mut counts = BTreeMap::new();
    for r in manifest["records"].as_array().unwrap() {
        *counts.entry(r["tree"].as_str().unwrap().to_string()).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 4);
    assert!(counts.values().all(|&c| c == 100), "{counts:?}");
}

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new();
    let out = probex(&["generate-zoo", "--mode", "tree", "--n", "0", "--out", s(&ws.path("z"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--n"));

    assert_eq!(code(&probex(&["generate-zoo", "--mode", "grove", "--n", "3", "--out", "x"])), 2);
    assert_eq!(code(&probex(&["train", "--out", s(&ws.path("t"))])), 2, "no zoo given");
    let missing = probex(&["train", "--zoo", s(&ws.path("nope")), "--out", s(&ws.path("t2"))]);
    assert_eq!(code(&missing), 2, "{}", stderr(&missing));

    let zoo = ws.zoo("z", "tree", 10, 0);
    let align = probex(&["train", "--zoo", s(&zoo), "--task", "align", "--out", s(&ws.path("t3"))]);
    assert_eq!(code(&align), 2);
    assert!(stderr(&align).contains("--embeddings"));

    fs::write(ws.path("bad.json"), r#"{"unknown_section": 1}"#).unwrap();
    let bad = probex(&["train", "--zoo", s(&zoo), "--out", s(&ws.path("t4")), "--config", s(&ws.path("bad.json"))]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn numeric_failure_exits_three_naming_the_tensor() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "tree", 20, 0);
    let out = probex(&["train", "--zoo", s(&zoo), "--lr", "1e300", "--epochs", "3", "--out", s(&ws.path("t"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("tensor `"), "{}", stderr(&out));
}

#[test]
fn eval_on_validation_reproduces_the_training_metric() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "multitree:2", 60, 3);
    for kind in ["probex", "probex-linear", "dense", "statnn-linear", "statnn-mlp"] {
        let run = ws.path(&format!("t-{kind}"));
        let ev = ws.path(&format!("e-{kind}"));
        ok(&["train", "--zoo", s(&zoo), "--model", kind, "--rank", "4", "--epochs", "15", "--batch-size", "8", "--out", s(&run)]);
        assert!(run.join("history.csv").exists());
        let report = read_json(&run.join("train_report.json"));
        let printed = stdout(&ok(&["eval", "--zoo", s(&zoo), "--run", s(&run), "--split", "val", "--out", s(&ev)]));
        let summary = read_json(&ev.join("eval_report.json"));
        let metric = summary["metric"].as_f64().unwrap();
        assert_eq!(metric, report["val_metric"].as_f64().unwrap(), "{kind}");
        assert_eq!(metric, report["best_history_metrics"][0].as_f64().unwrap(), "{kind}");
        assert_eq!(printed.trim().parse::<f64>().unwrap(), metric);
        let multilabel = &summary["reports"]["multilabel"];
        assert_eq!(multilabel["per_class"].as_array().unwrap().len(), 10);
        assert!(ev.join("multilabel_per_class.csv").exists());
    }
}

#[test]
fn run_records_hash_their_inputs() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "tree", 20, 0);
    let cfg = ws.path("run.json");
    let body = serde_json::json!({"zoo": zoo, "out": ws.path("t"), "train": {"epochs": 5, "batch_size": 8}});
    fs::write(&cfg, body.to_string()).unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let first = read_json(&ws.path("t").join("run.json"));
    assert_eq!(first["command"], "train");
    assert_eq!(first["config"]["train"]["epochs"], 5);
    let hash = first["content_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);

    ok(&["train", "--config", s(&cfg), "--force"]);
    assert_eq!(read_json(&ws.path("t").join("run.json"))["content_hash"], hash.as_str());
    ok(&["train", "--config", s(&cfg), "--epochs", "6", "--force"]);
    assert_ne!(read_json(&ws.path("t").join("run.json"))["content_hash"], hash.as_str());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "tree", 40, 0);
    let one = ws.path("one");
    let many = ws.path("many");
    ok(&["--threads", "1", "train", "--zoo", s(&zoo), "--model", "probex", "--epochs", "10", "--out", s(&one)]);
    let out = Command::new(env!("CARGO_BIN_EXE_probex"))
        .args(["train", "--zoo", s(&zoo), "--model", "probex", "--epochs", "10", "--out", s(&many)])
        .env("PROBEX_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (a, b) = (snapshot(&one.join("metanet")), snapshot(&many.join("metanet")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(fs::read(one.join("history.csv")).unwrap(), fs::read(many.join("history.csv")).unwrap());
}

#[test]
fn route_recovers_generated_trees() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "multitree:3", 60, 5);
    let out = ws.path("r");
    let k = stdout(&ok(&["route", "--zoo", s(&zoo), "--out", s(&out)]));
    assert_eq!(k.trim(), "3");
    assert!(out.join("router.json").exists());
    let csv = fs::read_to_string(out.join("routes.csv")).unwrap();
    let mut tree_of_cluster = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let prev = tree_of_cluster.insert(f[3].to_string(), f[2].to_string());
        assert!(prev.is_none_or(|t| t == f[2]), "cluster {} mixes trees", f[3]);
    }
    assert_eq!(tree_of_cluster.len(), 3);
}

#[test]
fn mixture_of_experts_round_trips_through_eval() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "multitree:2", 120, 1);
    let run = ws.path("t");
    ok(&["train", "--zoo", s(&zoo), "--moe", "--epochs", "10", "--batch-size", "8", "--out", s(&run)]);
    assert!(run.join("router").join("router.json").exists());
    assert!(run.join("history_1.csv").exists());
    let report = read_json(&run.join("train_report.json"));
    assert_eq!(report["best_epochs"].as_array().unwrap().len(), 2);
    let ev = ws.path("e");
    ok(&["eval", "--zoo", s(&zoo), "--run", s(&run), "--split", "val", "--out", s(&ev)]);
    assert_eq!(read_json(&ev.join("eval_report.json"))["metric"], report["val_metric"]);
}

#[test]
fn select_layer_keeps_the_best_validation_layer() {
    let ws = Workspace::new();
    let zoo = ws.zoo("z", "tree", 40, 2);
    let run = ws.path("t");
    ok(&["train", "--zoo", s(&zoo), "--layers", "fc1,fc2", "--select-layer", "--epochs", "10", "--out", s(&run)]);
    let report = read_json(&run.join("train_report.json"));
    let metrics: Vec<(String, f64)> = serde_json::from_value(report["layer_metrics"].clone()).unwrap();
    assert_eq!(metrics.len(), 2);
    let best = metrics.iter().fold(&metrics[0], |b, m| if m.1 > b.1 { m } else { b });
    assert_eq!(report["layers"][0], best.0.as_str());
    assert_eq!(report["val_metric"].as_f64().unwrap(), best.1);
}

#[test]
fn alignment_zoo_trains_and_reports_both_class_sets() {
    let ws = Workspace::new();
    let cfg = ws.path("align.json");
    let task: Value = serde_json::from_str(SMALL_TASK).unwrap();
    let body = serde_json::json!({"align": {"task": task["task"], "n_classes": 12, "n_holdout": 3,
        "embedding_dim": 6, "n_roots": 2}});
    fs::write(&cfg, body.to_string()).unwrap();
    let zoo = ws.path("za");
    let gen = ok(&["generate-zoo", "--mode", "align", "--n", "4", "--seed", "2", "--out", s(&zoo), "--config", s(&cfg)]);
    assert!(stderr(&gen).is_empty(), "generated tables are already unit norm: {}", stderr(&gen));
    let table = zoo.join("embeddings.json");
    assert!(table.exists());

    let run = ws.path("ta");
    ok(&["train", "--zoo", s(&zoo), "--task", "align", "--embeddings", s(&table), "--epochs", "20", "--out", s(&run)]);
    let no_table = probex(&["eval", "--zoo", s(&zoo), "--run", s(&run), "--out", s(&ws.path("x"))]);
    assert_eq!(code(&no_table), 2);

    let ev = ws.path("ea");
    ok(&["eval", "--zoo", s(&zoo), "--run", s(&run), "--embeddings", s(&table), "--out", s(&ev)]);
    let summary = read_json(&ev.join("eval_report.json"));
    let zero_shot = &summary["reports"]["zero_shot"];
    assert_eq!(zero_shot["per_class"].as_array().unwrap().len(), 3);
    assert_eq!(summary["reports"]["in_dist"]["task"], "zeroshot");
    assert_eq!(summary["reports"]["knn"]["task"], "knn");

    let raw = ws.path("raw");
    ok(&["eval", "--zoo", s(&zoo), "--run", s(&run), "--embeddings", s(&table), "--rep", "raw", "--knn", "1",
        "--retrieve", "3", "--out", s(&raw)]);
    let raw_summary = read_json(&raw.join("eval_report.json"));
    assert!(raw_summary["reports"]["knn"]["aggregate"].is_number());
    let retrieval = read_json(&raw.join("retrieval.json"));
    let rows = retrieval.as_array().unwrap();
    assert_eq!(rows.len(), summary["n_models"].as_u64().unwrap() as usize);
    for row in rows {
        let results = row["results"].as_array().unwrap();
        assert_eq!(results.len(), 3);
        assert!(results.iter().all(|r| r["id"] != row["query"]));
    }

    let val = ws.path("ev");
    ok(&["eval", "--zoo", s(&zoo), "--run", s(&run), "--embeddings", s(&table), "--split", "val", "--out", s(&val)]);
    let val_metric = read_json(&val.join("eval_report.json"))["metric"].clone();
    assert_eq!(val_metric, read_json(&run.join("train_report.json"))["val_metric"]);
}

#[test]
fn equivalence_check_exit_codes() {
    let out = ok(&["check-equivalence"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-9);

    let strict = probex(&["check-equivalence", "--tol", "0"]);
    assert_eq!(code(&strict), 1);
    assert!(stderr(&strict).contains("max deviation"));

    ok(&["check-equivalence", "--dims", "1,1,1,1,1,1"]);
    assert_eq!(code(&probex(&["check-equivalence", "--dims", "1,2,3"])), 2);
}

#[test]
fn parameter_table() {
    let vit = stdout(&ok(&["params", "--dims", "768,768,100,128"]));
    assert_eq!(vit, "probex_params,dense_params,ratio\n2306560,58982400,25.5716\n");
    let resnet = stdout(&ok(&["params", "--dims", "2048,512,100,128"]));
    assert!(resnet.contains(",104857600,"), "{resnet}");
    let trivial = stdout(&ok(&["params", "--dims", "1,1,1,1"]));
    assert_eq!(trivial.lines().nth(1), Some("4,1,0.2500"));
}

#[test]
fn tree_vs_forest_emits_two_rows_with_the_tree_ahead() {
    let ws = Workspace::new();
    let out = ws.path("tf");
    let cfg = ws.path("small.json");
    let printed = stdout(&ok(&["tree-vs-forest", "--n", "60", "--config", s(&cfg), "--out", s(&out)]));
    assert_eq!(fs::read_to_string(out.join("tree_vs_forest.csv")).unwrap(), printed);
    let rows: Vec<Vec<&str>> = printed.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], ["population", "test_accuracy"]);
    assert_eq!((rows[1][0], rows[2][0]), ("tree", "forest"));
    let tree: f64 = rows[1][1].parse().unwrap();
    let forest: f64 = rows[2][1].parse().unwrap();
    assert!(tree > forest, "tree {tree} vs forest {forest}");
}
