#![allow(dead_code)]

use probex_core::linalg::{Matrix, Rng};
use probex_core::metanet::Metanet;
use probex_core::zoo::TaskSpec;

/// A task small enough to spawn dozens of targets in well under a second.
pub fn small_task() -> TaskSpec {
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

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|)`, with the denominator floored at 1e-3 so that
/// near-zero entries are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between analytic parameter gradients of
/// `loss(model(x))` and central differences, over every tensor entry.
pub fn worst_param_error<M: Metanet>(
    model: &M,
    x: &M::Input,
    loss: impl Fn(&[f64]) -> (f64, Vec<f64>),
) -> (f64, String) {
    let y = model.forward(x).unwrap();
    let (_, upstream) = loss(&y);
    let grads = model.gradients(x, &upstream).unwrap();
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(grads.len(), names.len());
    let f = |m: &M| loss(&m.forward(x).unwrap()).0;
    let mut worst = (0.0, String::new());
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = model.clone();
            plus.tensors_mut()[t][i] += FD_STEP;
            let mut minus = model.clone();
            minus.tensors_mut()[t][i] -= FD_STEP;
            let fd = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            let e = rel_err(fd, g[i]);
            if e > worst.0 {
                worst = (e, format!("{}[{i}]: fd {fd} vs analytic {}", names[t], g[i]));
            }
        }
    }
    worst
}

/// Random projection loss `⟨c, y⟩ + ½‖y‖²`, which exercises every output.
pub fn probe_loss(c: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
    move |y: &[f64]| {
        let l = y.iter().zip(&c).map(|(a, b)| a * b + 0.5 * a * a).sum();
        let g = y.iter().zip(&c).map(|(a, b)| a + b).collect();
        (l, g)
    }
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::gaussian(rows, cols, 1.0, rng)
}
