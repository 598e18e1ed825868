use proptest::prelude::*;

use bnn_skeleton::activation::ActivationKind;
use bnn_skeleton::bench::Dataset;
use bnn_skeleton::skeleton::{Skeleton, SkeletonNode};
use bnn_skeleton::tensor::{Matrix, Tape};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

/// `Σ tanh(A B) ⊙ C + Σ (A B)²`, by hand.
fn reference(a: &Matrix, b: &Matrix, c: &Matrix) -> f64 {
    let ab = a.matmul(b).unwrap();
    ab.data().iter().zip(c.data()).map(|(x, y)| x.tanh() * y + x * x).sum()
}

fn skeleton() -> impl Strategy<Value = Skeleton> {
    let acts = prop::sample::select(vec![ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Identity, ActivationKind::Sigmoid]);
    (prop::collection::vec(1usize..4, 1..4), prop::collection::vec((1usize..4, 1usize..4, acts, any::<u64>()), 1..4)).prop_map(|(inputs, layers)| {
        let mut prev = inputs.len();
        let mut out = Vec::new();
        for (size, width, act, bits) in layers {
            let nodes = (0..size)
                .map(|i| {
                    let mut ins: Vec<usize> = (0..prev).filter(|k| k % size == i % size || bits >> (i * 4 + k) & 1 == 1).collect();
                    if ins.is_empty() {
                        ins.push(i % prev);
                    }
                    SkeletonNode {
                        activation: act,
                        width,
                        inputs: ins,
                    }
                })
                .collect();
            out.push(nodes);
            prev = size;
        }
        Skeleton::new(inputs, out).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tape_gradient_matches_differences((a, b, c) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m), matrix(n, m)))) {
        let tape = Tape::new();
        let av = tape.var(a.clone());
        let bv = tape.var(b.clone());
        let ab = av.matmul(bv).unwrap();
        let out = ab.activation(ActivationKind::Tanh).mul(tape.constant(c.clone())).unwrap().sum().add(ab.square().sum()).unwrap();
        prop_assert!((out.item() - reference(&a, &b, &c)).abs() < 1e-12);
        let g = tape.gradient(out, &[av, bv]).unwrap();
        let h = 1e-6;
        for i in 0..a.len() {
            let (mut up, mut dn) = (a.clone(), a.clone());
            up.data_mut()[i] += h;
            dn.data_mut()[i] -= h;
            let fd = (reference(&up, &b, &c) - reference(&dn, &b, &c)) / (2.0 * h);
            prop_assert!((g[0].data()[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        for i in 0..b.len() {
            let (mut up, mut dn) = (b.clone(), b.clone());
            up.data_mut()[i] += h;
            dn.data_mut()[i] -= h;
            let fd = (reference(&a, &up, &c) - reference(&a, &dn, &c)) / (2.0 * h);
            prop_assert!((g[1].data()[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn skeleton_text_round_trips(s in skeleton()) {
        let text = s.to_toml();
        prop_assert_eq!(Skeleton::parse(&text).unwrap(), s.clone());
        prop_assert_eq!(Skeleton::parse(&text).unwrap().to_toml(), text);
    }

    #[test]
    fn transpose_products_agree((a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, k, m)| (matrix(k, n), matrix(k, m)))) {
        let direct = a.transpose().matmul(&b).unwrap();
        let fused = a.t_matmul(&b).unwrap();
        prop_assert!(direct.sub(&fused).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn splits_partition_rows(n in 2usize..60, frac in 0.0f64..0.9, seed in any::<u64>()) {
        let x = Matrix::from_fn(n, 1, |i, _| i as f64);
        let d = Dataset::new(x, vec![0.0; n], vec!["a".into()], "y").unwrap();
        let s = d.random_split(frac, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.test.len(), (frac * n as f64).round() as usize);
        prop_assert_eq!(d.random_split(frac, seed).unwrap(), s);
    }
}
