//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion without a recorded gap fails.

mod common;

use std::time::Instant;

use probex_core::baselines::layer_stats;
use probex_core::dense::{dense_forward, prop1_construct, prop2_tucker_expand, DenseExpert};
use probex_core::embedding::EmbeddingTable;
use probex_core::eval::auc;
use probex_core::experiments::{
    align_on, moe_vs_shared, multitree_zoo, router_recovery, subsampled_accuracy, tree_and_forest,
    tree_vs_forest, AlignExperiment, ClassifyExperiment,
};
use probex_core::linalg::{Matrix, Rng};
use probex_core::pipeline::MetanetKind;
use probex_core::probex::dense_param_count;
use probex_core::trainer::{loss_contrastive_align, loss_multilabel_bce, nearest_class};
use probex_core::zoo::{load_zoo, save_zoo, spawn_alignment_zoo, Split};
use probex_core::{Activation, ProbeXDims, ProbeXMulti, ProbeXParams};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dense_matches_probing_construction() -> Outcome {
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (dw, dh, dy) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(5));
        let w = DenseExpert::init(dw, dh, dy, &mut rng).unwrap();
        let net = prop1_construct(&w).unwrap();
        for _ in 0..100 {
            let x = Matrix::gaussian(dw, dh, 1.0, &mut rng);
            worst = worst.max(max_abs_diff(&net.forward(&x).unwrap(), &dense_forward(&w, &x).unwrap()));
        }
    }
    outcome(worst <= 1e-9, format!("max |Δ| = {worst:.3e} over 100 tensors × 100 inputs"))
}

fn linear_probex_matches_tucker_expansion() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = ProbeXParams::init(ProbeXDims::with_rank(6, 6, 6, 3), Activation::Identity, &mut rng).unwrap();
        let w = prop2_tucker_expand(&p).unwrap();
        for _ in 0..10 {
            let x = Matrix::gaussian(6, 6, 1.0, &mut rng);
            worst = worst.max(max_abs_diff(&p.forward(&x).unwrap().1, &dense_forward(&w, &x).unwrap()));
        }
    }
    outcome(worst <= 1e-9, format!("max |Δ| = {worst:.3e} over 100 linear ProbeX"))
}

fn gradient_checks() -> Outcome {
    let mut rng = Rng::new(3);
    let mut worst = (0.0, String::new());
    let mut keep = |w: (f64, String), what: &str| {
        if w.0 > worst.0 {
            worst = (w.0, format!("{what}: {}", w.1));
        }
    };
    let c: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    for act in [Activation::Identity, Activation::Relu] {
        for depth in [1, 2] {
            let mut dims = ProbeXDims::new(6, 5, 4, 3, 4, 2);
            dims.depth = depth;
            let p = ProbeXParams::init(dims, act, &mut rng).unwrap();
            let x = common::gaussian(6, 5, &mut rng);
            keep(common::worst_param_error(&p, &x, common::probe_loss(c.clone())), "probex");
            let bits = [true, false, true, false];
            keep(
                common::worst_param_error(&p, &x, |y| loss_multilabel_bce(y, &bits).unwrap()),
                "probex+bce",
            );
            let names: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
            let table = EmbeddingTable::random(&names, 4, &mut rng);
            keep(
                common::worst_param_error(&p, &x, |y| loss_contrastive_align(y, 2, &table, 0.07).unwrap()),
                "probex+contrastive",
            );
        }
    }
    let dims = [ProbeXDims::new(6, 5, 4, 2, 3, 2), ProbeXDims::new(4, 6, 4, 3, 2, 3)];
    let multi = ProbeXMulti::init(vec!["a".into(), "b".into()], &dims, Activation::Relu, &mut rng).unwrap();
    let xs = vec![common::gaussian(6, 5, &mut rng), common::gaussian(4, 6, &mut rng)];
    keep(common::worst_param_error(&multi, &xs, common::probe_loss(c.clone())), "multilayer");
    let dense = DenseExpert::init(5, 4, 4, &mut rng).unwrap();
    let x = common::gaussian(5, 4, &mut rng);
    keep(common::worst_param_error(&dense, &x, common::probe_loss(c)), "dense");
    outcome(
        worst.0 <= common::FD_REL_TOL,
        format!("worst relative error {:.2e} (h = {:e}) at {}", worst.0, common::FD_STEP, worst.1),
    )
}

fn parameter_counts() -> Outcome {
    let probex = ProbeXDims::new(768, 768, 100, 128, 128, 128).param_count();
    let dense = dense_param_count(768, 768, 100);
    let resnet = dense_param_count(2048, 512, 100);
    let ratio = dense as f64 / probex as f64;
    outcome(
        probex == 2_306_560 && dense == 58_982_400 && ratio >= 25.0 && resnet == 104_857_600,
        format!("ProbeX {probex}, dense {dense}, ratio {ratio:.1}×, 2048×512 dense {resnet}"),
    )
}

fn tree_vs_forest_gap() -> Outcome {
    let exp = ClassifyExperiment::default();
    let tf = tree_vs_forest(&exp, 430, 0).unwrap();
    let gap = tf.tree - tf.forest;
    outcome(
        gap >= 0.15 && (tf.forest - 0.5).abs() <= 0.10,
        format!("tree {:.3}, forest {:.3}, gap {gap:.3}", tf.tree, tf.forest),
    )
}

fn positive_transfer() -> Outcome {
    let exp = ClassifyExperiment::default();
    let (mut full, mut quarter) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let (tree, _) = tree_and_forest(&exp.task, 430, seed).unwrap();
        quarter.push(subsampled_accuracy(&exp, &tree, 0.25, seed).unwrap());
        full.push(subsampled_accuracy(&exp, &tree, 1.0, seed).unwrap());
    }
    outcome(
        mean(&full) > mean(&quarter),
        format!("full {:.3} vs 25% {:.3} (mean of {} seeds)", mean(&full), mean(&quarter), SEEDS.len()),
    )
}

fn router_perfection() -> Outcome {
    let exp = ClassifyExperiment::default();
    let zoo = multitree_zoo(&exp.task, 4, 200, 0).unwrap();
    let r = router_recovery(&zoo, "fc1").unwrap();
    outcome(
        r.k == 4 && r.fit_accuracy == 1.0 && r.routing_accuracy == 1.0,
        format!(
            "k = {} (truth {}), training assignment {:.3}, held-out routing {:.3}",
            r.k, r.true_k, r.fit_accuracy, r.routing_accuracy
        ),
    )
}

fn moe_at_least_shared() -> Outcome {
    let exp = ClassifyExperiment::default();
    let (mut moe, mut shared, mut budgets) = (Vec::new(), Vec::new(), String::new());
    for seed in SEEDS {
        let zoo = multitree_zoo(&exp.task, 2, 860, seed).unwrap();
        let out = moe_vs_shared(&exp, &zoo).unwrap();
        moe.push(out.moe);
        shared.push(out.shared);
        budgets = format!("{} vs {} params", out.moe_params, out.shared_params);
    }
    outcome(
        mean(&moe) >= mean(&shared),
        format!("MoE {:.3} vs shared {:.3} (mean of {} seeds, {budgets})", mean(&moe), mean(&shared), SEEDS.len()),
    )
}

fn alignment() -> Outcome {
    let (mut in_dist, mut zs_relu, mut zs_lin) = (Vec::new(), Vec::new(), Vec::new());
    let (mut in_chance, mut zs_chance) = (0.0, 0.0);
    for seed in SEEDS {
        let mut exp = AlignExperiment::default();
        exp.zoo.seed = seed;
        exp.train.seed = seed;
        let (zoo, table) = spawn_alignment_zoo(&exp.zoo).unwrap();
        let relu = align_on(&zoo, &table, &exp).unwrap();
        exp.kind = MetanetKind::ProbexLinear;
        let lin = align_on(&zoo, &table, &exp).unwrap();
        in_dist.push(relu.in_dist);
        zs_relu.push(relu.zero_shot);
        zs_lin.push(lin.zero_shot);
        in_chance = relu.in_dist_chance;
        zs_chance = relu.zero_shot_chance;
    }
    let (a, b, c) = (mean(&in_dist), mean(&zs_relu), mean(&zs_lin));
    outcome(
        a >= 10.0 * in_chance && b >= 3.0 * zs_chance && b >= c,
        format!(
            "in-dist {a:.3} ({:.1}× chance), zero-shot ReLU {b:.3} ({:.1}× chance), linear {c:.3} (mean of {} seeds)",
            a / in_chance,
            b / zs_chance,
            SEEDS.len()
        ),
    )
}

fn invariants() -> Outcome {
    let mut rng = Rng::new(10);
    let mut failures = Vec::new();

    for trial in 0..100 {
        let act = if trial % 2 == 0 { Activation::Relu } else { Activation::Identity };
        let mut dims = ProbeXDims::new(7, 6, 4, 5, 3, 3);
        dims.depth = 1 + trial % 2;
        let p = ProbeXParams::init(dims, act, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..dims.r_u).collect();
        rng.shuffle(&mut perm);
        let mut q = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..dims.d_h {
                q.encoder.u[(j, new)] = p.encoder.u[(j, old)];
            }
            q.encoder.m.slab_mut(new).copy_from_slice(p.encoder.m.slab(old));
        }
        let x = Matrix::gaussian(7, 6, 1.0, &mut rng);
        if p.forward(&x).unwrap().1 != q.forward(&x).unwrap().1 {
            failures.push("probe permutation");
            break;
        }
    }

    for _ in 0..100 {
        let (r, c) = (1 + rng.below(8), 1 + rng.below(8));
        let w = Matrix::gaussian(r, c, 1.0, &mut rng);
        let mut vals = w.as_slice().to_vec();
        rng.shuffle(&mut vals);
        if layer_stats(&w).unwrap() != layer_stats(&Matrix::from_vec(r, c, vals).unwrap()).unwrap() {
            failures.push("StatNN entry permutation");
            break;
        }
    }

    let names: Vec<String> = (0..20).map(|i| format!("c{i}")).collect();
    let table = EmbeddingTable::random(&names, 8, &mut rng);
    for _ in 0..200 {
        let y: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let base = nearest_class(&y, &table, None).unwrap();
        let alpha = 2f64.powi(rng.below(40) as i32 - 20) * (1.0 + rng.uniform(0.0, 1.0));
        let scaled: Vec<f64> = y.iter().map(|v| v * alpha).collect();
        if nearest_class(&scaled, &table, None).unwrap() != base {
            failures.push("cosine-argmax scale");
            break;
        }
    }

    for _ in 0..100 {
        let (n1, n0) = (1 + rng.below(25), 1 + rng.below(25));
        let pos: Vec<f64> = (0..n1).map(|_| rng.below(6) as f64).collect();
        let neg: Vec<f64> = (0..n0).map(|_| rng.below(6) as f64).collect();
        let mut u = 0.0;
        for p in &pos {
            for q in &neg {
                u += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
        if (auc(&pos, &neg).unwrap() - u / (n1 * n0) as f64).abs() > 1e-12 {
            failures.push("AUC rank oracle");
            break;
        }
    }

    let zoo = multitree_zoo(&common::small_task(), 2, 20, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_zoo(&zoo, dir.path()).unwrap();
    let back = load_zoo(dir.path()).unwrap();
    let bits = |z: &probex_core::zoo::Zoo| -> Vec<u64> {
        z.records
            .iter()
            .flat_map(|r| r.layers.iter().flat_map(|l| l.weights.as_slice().iter().map(|v| v.to_bits())))
            .collect()
    };
    if back != zoo || bits(&back) != bits(&zoo) || back.split(Split::Test).len() != zoo.split(Split::Test).len() {
        failures.push("zoo round trip");
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "probe permutation, StatNN permutation, cosine-argmax scale, AUC oracle, zoo round trip".to_string()
        } else {
            format!("violated: {}", failures.join(", "))
        },
    )
}

/// Criteria whose failure is a documented, expected gap rather than a
/// regression. Their outcome is still printed as measured.
const KNOWN_GAPS: [usize; 1] = [8];

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "dense expert ↔ probing construction", dense_matches_probing_construction),
        (2, "linear ProbeX ↔ Tucker-expanded dense", linear_probex_matches_tucker_expansion),
        (3, "finite-difference gradient checks", gradient_checks),
        (4, "parameter counts", parameter_counts),
        (5, "tree vs forest", tree_vs_forest_gap),
        (6, "positive transfer within a tree", positive_transfer),
        (7, "router recovers trees", router_perfection),
        (8, "MoE ≥ shared at matched budget", moe_at_least_shared),
        (9, "alignment and zero-shot", alignment),
        (10, "invariant suites", invariants),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut regressions = Vec::new();
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = match (o.pass, KNOWN_GAPS.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known gap)",
            (false, false) => {
                regressions.push(id);
                "FAIL"
            }
        };
        println!(
            "criterion {id:>2} {tag}: {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if !regressions.is_empty() {
        eprintln!("acceptance failures: {regressions:?}");
        std::process::exit(1);
    }
}
