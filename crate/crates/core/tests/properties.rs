mod common;

use probex_core::baselines::layer_stats;
use probex_core::dense::{dense_forward, prop1_construct, prop2_tucker_expand, DenseExpert};
use probex_core::embedding::EmbeddingTable;
use probex_core::eval::{auc, eval_zeroshot, ModelOutput};
use probex_core::linalg::{contract3, cosine_sim, random_orthogonal, Matrix, Rng};
use probex_core::trainer::nearest_class;
use probex_core::{Activation, ProbeXDims, ProbeXParams};
use proptest::prelude::*;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
        let mut rng = Rng::new(seed);
        let a = Matrix::gaussian(m, k, 1.0, &mut rng);
        let b = Matrix::gaussian(k, n, 1.0, &mut rng);
        let c = Matrix::gaussian(n, p, 1.0, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(max_abs_diff(left.as_slice(), right.as_slice()) < 1e-10);
    }

    #[test]
    fn dense_forward_is_linear_in_x(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let w = DenseExpert::init(4, 3, 5, &mut rng).unwrap();
        let x1 = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let x2 = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let mix = x1.scaled(a).add(&x2.scaled(b)).unwrap();
        let lhs = contract3(&w.w, &mix).unwrap();
        let y1 = dense_forward(&w, &x1).unwrap();
        let y2 = dense_forward(&w, &x2).unwrap();
        let rhs: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn probe_permutation_leaves_output_bit_identical(seed in any::<u64>(), relu in any::<bool>(), depth in 1usize..3) {
        let mut rng = Rng::new(seed);
        let act = if relu { Activation::Relu } else { Activation::Identity };
        let mut dims = ProbeXDims::new(7, 6, 4, 5, 3, 3);
        dims.depth = depth;
        let p = ProbeXParams::init(dims, act, &mut rng).unwrap();
        let perm = permutation(dims.r_u, &mut rng);
        let mut q = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..dims.d_h {
                q.encoder.u[(j, new)] = p.encoder.u[(j, old)];
            }
            q.encoder.m.slab_mut(new).copy_from_slice(p.encoder.m.slab(old));
        }
        let x = Matrix::gaussian(7, 6, 1.0, &mut rng);
        prop_assert_eq!(p.forward(&x).unwrap().1, q.forward(&x).unwrap().1);
    }

    #[test]
    fn relu_probex_is_positively_homogeneous(seed in any::<u64>(), k in -6i32..6, alpha in 0.01f64..100.0) {
        let mut rng = Rng::new(seed);
        let p = ProbeXParams::init(ProbeXDims::new(5, 4, 3, 3, 3, 3), Activation::Relu, &mut rng).unwrap();
        let x = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let y = p.forward(&x).unwrap().1;
        // Powers of two scale every intermediate exactly.
        let s = 2f64.powi(k);
        let ys = p.forward(&x.scaled(s)).unwrap().1;
        prop_assert_eq!(ys, y.iter().map(|v| v * s).collect::<Vec<_>>());
        let ya = p.forward(&x.scaled(alpha)).unwrap().1;
        let expected: Vec<f64> = y.iter().map(|v| v * alpha).collect();
        prop_assert!(max_abs_diff(&ya, &expected) <= 1e-12 * alpha.max(1.0) * 10.0);
    }

    #[test]
    fn statnn_features_ignore_entry_order(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9) {
        let mut rng = Rng::new(seed);
        let w = Matrix::gaussian(rows, cols, 1.0, &mut rng);
        let perm = permutation(rows * cols, &mut rng);
        let shuffled: Vec<f64> = perm.iter().map(|&i| w.as_slice()[i]).collect();
        let reshaped = Matrix::from_vec(cols, rows, shuffled).unwrap();
        prop_assert_eq!(layer_stats(&w).unwrap(), layer_stats(&reshaped).unwrap());
    }

    #[test]
    fn cosine_is_rotation_invariant(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = Rng::new(seed);
        let q = random_orthogonal(n, &mut rng);
        let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let before = cosine_sim(&a, &b).unwrap();
        let after = cosine_sim(&q.matvec(&a).unwrap(), &q.matvec(&b).unwrap()).unwrap();
        prop_assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn zero_shot_argmax_ignores_scale(seed in any::<u64>(), k in -20i32..20, alpha in 1e-3f64..1e3) {
        let mut rng = Rng::new(seed);
        let names: Vec<String> = (0..12).map(|i| format!("c{i}")).collect();
        let table = EmbeddingTable::random(&names, 6, &mut rng);
        let y: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let base = nearest_class(&y, &table, None).unwrap();
        let pow2: Vec<f64> = y.iter().map(|v| v * 2f64.powi(k)).collect();
        prop_assert_eq!(nearest_class(&pow2, &table, None).unwrap(), base);
        let scaled: Vec<f64> = y.iter().map(|v| v * alpha).collect();
        prop_assert_eq!(nearest_class(&scaled, &table, None).unwrap(), base);
    }

    #[test]
    fn adding_candidates_never_helps_zero_shot(seed in any::<u64>(), small in 2usize..6, extra in 1usize..6) {
        let mut rng = Rng::new(seed);
        let names: Vec<String> = (0..small + extra).map(|i| format!("c{i:02}")).collect();
        let table = EmbeddingTable::random(&names, 5, &mut rng);
        let outputs: Vec<ModelOutput> = (0..20)
            .map(|i| ModelOutput { id: format!("m{i}"), output: (0..5).map(|_| rng.normal()).collect() })
            .collect();
        let keys: Vec<Option<String>> = (0..20).map(|i| Some(names[i % small].clone())).collect();
        let narrow = eval_zeroshot(&outputs, &keys, &table, &names[..small]).unwrap();
        let wide = eval_zeroshot(&outputs, &keys, &table, &names).unwrap();
        for (n, w) in narrow.per_class.iter().zip(&wide.per_class) {
            prop_assert_eq!(&n.class, &w.class);
            prop_assert!(w.value <= n.value);
        }
    }

    #[test]
    fn auc_matches_mann_whitney(seed in any::<u64>(), n1 in 1usize..30, n0 in 1usize..30, levels in 2u32..12) {
        let mut rng = Rng::new(seed);
        // Coarse scores make ties common.
        let draw = |rng: &mut Rng| (rng.below(levels as usize)) as f64 * 0.5;
        let pos: Vec<f64> = (0..n1).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..n0).map(|_| draw(&mut rng)).collect();
        let mut u = 0.0;
        for p in &pos {
            for q in &neg {
                u += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
        let oracle = u / (n1 * n0) as f64;
        prop_assert!((auc(&pos, &neg).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn prop1_construction_matches_dense(seed in any::<u64>(), dw in 1usize..9, dh in 1usize..9, dy in 1usize..6) {
        let mut rng = Rng::new(seed);
        let w = DenseExpert::init(dw, dh, dy, &mut rng).unwrap();
        let net = prop1_construct(&w).unwrap();
        let x = Matrix::gaussian(dw, dh, 1.0, &mut rng);
        prop_assert!(max_abs_diff(&net.forward(&x).unwrap(), &dense_forward(&w, &x).unwrap()) <= 1e-9);
    }

    #[test]
    fn prop2_expansion_matches_probex(seed in any::<u64>(), r in 1usize..4) {
        let mut rng = Rng::new(seed);
        let p = ProbeXParams::init(ProbeXDims::with_rank(6, 6, 4, r), Activation::Identity, &mut rng).unwrap();
        let w = prop2_tucker_expand(&p).unwrap();
        let x = Matrix::gaussian(6, 6, 1.0, &mut rng);
        prop_assert!(max_abs_diff(&p.forward(&x).unwrap().1, &dense_forward(&w, &x).unwrap()) <= 1e-9);
    }
}
