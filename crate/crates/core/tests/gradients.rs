mod common;

use common::{probe_loss, rel_err, worst_param_error, FD_REL_TOL, FD_STEP};
use probex_core::baselines::{StatHead, Standardizer};
use probex_core::dense::DenseExpert;
use probex_core::embedding::EmbeddingTable;
use probex_core::linalg::{Matrix, Rng, Vector};
use probex_core::trainer::{loss_contrastive_align, loss_multilabel_bce};
use probex_core::{Activation, ProbeXDims, ProbeXMulti, ProbeXParams};

fn normals(n: usize, rng: &mut Rng) -> Vector {
    (0..n).map(|_| rng.normal()).collect()
}

#[test]
fn probex_every_tensor_both_activations_and_depths() {
    for act in [Activation::Identity, Activation::Relu] {
        for depth in [1, 2, 3] {
            let mut rng = Rng::new(10 + depth as u64);
            let mut dims = ProbeXDims::new(6, 5, 4, 3, 4, 2);
            dims.depth = depth;
            let p = ProbeXParams::init(dims, act, &mut rng).unwrap();
            let x = common::gaussian(6, 5, &mut rng);
            let (err, at) = worst_param_error(&p, &x, probe_loss(normals(4, &mut rng)));
            assert!(err <= FD_REL_TOL, "{act:?} depth {depth}: {at} (rel {err:e})");
        }
    }
}

#[test]
fn probex_multilayer_shares_one_head() {
    let mut rng = Rng::new(3);
    let dims = [ProbeXDims::new(6, 5, 3, 2, 3, 2), ProbeXDims::new(4, 6, 3, 3, 2, 3)];
    let p = ProbeXMulti::init(vec!["a".into(), "b".into()], &dims, Activation::Relu, &mut rng).unwrap();
    let xs = vec![common::gaussian(6, 5, &mut rng), common::gaussian(4, 6, &mut rng)];
    let (err, at) = worst_param_error(&p, &xs, probe_loss(normals(3, &mut rng)));
    assert!(err <= FD_REL_TOL, "{at} (rel {err:e})");
}

#[test]
fn dense_expert_gradient() {
    let mut rng = Rng::new(4);
    let w = DenseExpert::init(5, 4, 3, &mut rng).unwrap();
    let x = common::gaussian(5, 4, &mut rng);
    let (err, at) = worst_param_error(&w, &x, probe_loss(normals(3, &mut rng)));
    assert!(err <= FD_REL_TOL, "{at} (rel {err:e})");
}

#[test]
fn statnn_heads_gradient() {
    let mut rng = Rng::new(5);
    let norm = Standardizer {
        shift: normals(7, &mut rng),
        scale: (0..7).map(|i| 0.5 + i as f64 * 0.1).collect(),
    };
    let x = normals(7, &mut rng);
    for head in [
        StatHead::linear(norm.clone(), 3, &mut rng),
        StatHead::mlp(norm.clone(), 6, 3, &mut rng),
    ] {
        let (err, at) = worst_param_error(&head, &x, probe_loss(normals(3, &mut rng)));
        assert!(err <= FD_REL_TOL, "{at} (rel {err:e})");
    }
}

fn check_loss_gradient(y: &[f64], loss: impl Fn(&[f64]) -> (f64, Vector)) {
    let (_, g) = loss(y);
    for i in 0..y.len() {
        let mut plus = y.to_vec();
        plus[i] += FD_STEP;
        let mut minus = y.to_vec();
        minus[i] -= FD_STEP;
        let fd = (loss(&plus).0 - loss(&minus).0) / (2.0 * FD_STEP);
        assert!(rel_err(fd, g[i]) <= FD_REL_TOL, "dL/dy[{i}]: fd {fd} vs {}", g[i]);
    }
}

#[test]
fn multilabel_bce_gradient() {
    let mut rng = Rng::new(6);
    let y: Vector = (0..10).map(|_| 4.0 * rng.normal()).collect();
    let bits: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
    check_loss_gradient(&y, |y| loss_multilabel_bce(y, &bits).unwrap());
}

#[test]
fn contrastive_gradient() {
    let mut rng = Rng::new(7);
    let names: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    let table = EmbeddingTable::random(&names, 5, &mut rng);
    let y = normals(5, &mut rng);
    for tau in [0.07, 1.0] {
        check_loss_gradient(&y, |y| loss_contrastive_align(y, 2, &table, tau).unwrap());
    }
}

#[test]
fn losses_chain_into_probex_parameters() {
    let mut rng = Rng::new(8);
    let p = ProbeXParams::init(ProbeXDims::new(6, 5, 5, 3, 3, 3), Activation::Relu, &mut rng).unwrap();
    let x: Matrix = common::gaussian(6, 5, &mut rng);
    let bits: Vec<bool> = (0..5).map(|i| i % 2 == 0).collect();
    let (err, at) = worst_param_error(&p, &x, |y| loss_multilabel_bce(y, &bits).unwrap());
    assert!(err <= FD_REL_TOL, "bce: {at} (rel {err:e})");

    let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    let table = EmbeddingTable::random(&names, 5, &mut rng);
    let (err, at) = worst_param_error(&p, &x, |y| loss_contrastive_align(y, 1, &table, 0.07).unwrap());
    assert!(err <= FD_REL_TOL, "contrastive: {at} (rel {err:e})");
}
