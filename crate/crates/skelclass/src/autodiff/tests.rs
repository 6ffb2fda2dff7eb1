use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    // Kink-avoiding: resample entries with |x| < 1e-3 so ReLU-style ops
    // are checked away from their non-differentiable point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() >= 1e-3 {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

fn positive_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(0.05..2.0)).collect();
    Tensor::from_vec(rows, cols, data)
}

#[test]
fn leaky_relu_values_and_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(1, 2, vec![-1.0, -2.0]), true);
    let y = g.leaky_relu(x, 0.01).unwrap();
    assert_eq!(g.value(y).data(), &[-0.01, -0.02]);
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.01, 0.01]);
}

#[test]
fn row_softmax_symmetry_and_sums() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(2, 2, vec![0.0, 0.0, 3.0, 1.0]));
    let y = g.row_softmax(x).unwrap();
    let v = g.value(y);
    assert_eq!(v.row(0), &[0.5, 0.5]);
    for r in 0..2 {
        let sum: f64 = v.row(r).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(v.row(r).iter().all(|&p| p > 0.0));
    }
}

#[test]
fn matmul_identity_and_sum_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(random_tensor(3, 4, 7), true);
    let i = g.constant(Tensor::identity(3));
    let y = g.matmul(i, x).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    assert!(matches!(g.matmul(a, b), Err(GraphError::ShapeMismatch { .. })));
}

#[test]
fn non_finite_results_are_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(1, 1, vec![0.0]));
    assert!(matches!(g.log(x), Err(GraphError::NonFinite { .. })));
}

#[test]
fn shared_subexpression_gradients_sum() {
    // f(x) = g(x) + g(x) must yield exactly twice the gradient of g.
    let x = random_tensor(2, 3, 11);
    let grad_once = {
        let mut g = Graph::new();
        let xn = g.leaf(x.clone(), true);
        let y = g.elementwise_mul(xn, xn).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        g.grad(xn).unwrap().clone()
    };
    let mut g = Graph::new();
    let xn = g.leaf(x, true);
    let y = g.elementwise_mul(xn, xn).unwrap();
    let s1 = g.sum_all(y).unwrap();
    let f = g.add(s1, s1).unwrap();
    g.backward(f).unwrap();
    let doubled = g.grad(xn).unwrap();
    for (a, b) in doubled.data().iter().zip(grad_once.data()) {
        assert_eq!(*a, 2.0 * b);
    }
}

#[test]
fn max_routes_gradient_to_lowest_tied_index() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(3, 2, vec![5.0, 1.0, 5.0, 2.0, 3.0, 2.0]), true);
    let m = g.max_over_axis(x, 0).unwrap();
    assert_eq!(g.value(m).data(), &[5.0, 2.0]);
    let s = g.sum_all(m).unwrap();
    g.backward(s).unwrap();
    // Column 0 ties between rows 0 and 1: row 0 wins; column 1 ties
    // between rows 1 and 2: row 1 wins.
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn grad_check_quadratic_is_tight() {
    let x = random_tensor(3, 3, 23);
    let err = grad_check(
        |g, xn| {
            let sq = g.elementwise_mul(xn, xn)?;
            g.sum_all(sq)
        },
        &x,
        DEFAULT_FD_EPS,
    )
    .unwrap();
    assert!(err < 1e-8, "err = {err}");
}

#[test]
fn grad_check_catches_corrupted_backward() {
    // Harness sensitivity: a 5% multiplicative corruption of the analytic
    // gradient must be reported as a large error.
    let x = random_tensor(2, 4, 31);
    let f = |g: &mut Graph, xn: NodeId| {
        let sq = g.elementwise_mul(xn, xn)?;
        g.sum_all(sq)
    };
    let numeric = fd_gradient(&f, &x, DEFAULT_FD_EPS).unwrap();
    let corrupted: Vec<f64> = x.data().iter().map(|&v| 2.0 * v * 1.05).collect();
    assert!(max_rel_err(&corrupted, &numeric) > 1e-2);
}

/// Every primitive's analytic gradient agrees with central differences.
#[test]
fn primitive_gradients_match_finite_differences() {
    let tol = 1e-4;
    let checks: Vec<(&str, f64)> = vec![
        ("matmul", {
            let w = random_tensor(4, 3, 100);
            grad_check(
                move |g, x| {
                    let wn = g.constant(w.clone());
                    let y = g.matmul(x, wn)?;
                    g.sum_all(y)
                },
                &random_tensor(2, 4, 1),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("add_sub_mul", {
            let other = random_tensor(3, 3, 101);
            grad_check(
                move |g, x| {
                    let o = g.constant(other.clone());
                    let a = g.add(x, o)?;
                    let s = g.sub(a, x)?;
                    let m = g.elementwise_mul(s, x)?;
                    g.sum_all(m)
                },
                &random_tensor(3, 3, 2),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("affine_bias", {
            grad_check(
                |g, x| {
                    let b = g.leaf(Tensor::from_vec(1, 4, vec![0.3, -0.7, 1.1, 0.2]), true);
                    let y = g.add_bias(x, b)?;
                    let z = g.affine(y, 1.5, -0.25)?;
                    g.sum_all(z)
                },
                &random_tensor(3, 4, 3),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("concat_slice_transpose", {
            grad_check(
                |g, x| {
                    let t = g.transpose(x)?;
                    let tt = g.transpose(t)?;
                    let c = g.concat_rows(&[x, tt])?;
                    let s = g.slice_rows(c, 1, 3)?;
                    let sc = g.slice_cols(s, 0, 2)?;
                    let sq = g.elementwise_mul(sc, sc)?;
                    g.sum_all(sq)
                },
                &random_tensor(2, 3, 4),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("concat_cols_permute", {
            grad_check(
                |g, x| {
                    let c = g.concat_cols(&[x, x])?;
                    let p = g.permute_rows(c, vec![2, 0, 1, 0])?;
                    let sq = g.elementwise_mul(p, p)?;
                    g.sum_all(sq)
                },
                &random_tensor(3, 2, 5),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("row_softmax", {
            grad_check(
                |g, x| {
                    let sm = g.row_softmax(x)?;
                    let sq = g.elementwise_mul(sm, sm)?;
                    g.sum_all(sq)
                },
                &random_tensor(3, 4, 6),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("attention", {
            let (wk, wv) = (random_tensor(3, 3, 102), random_tensor(3, 3, 103));
            grad_check(
                move |g, x| {
                    let k = g.constant(wk.clone());
                    let v = g.constant(wv.clone());
                    let kk = g.matmul(x, k)?;
                    let vv = g.matmul(x, v)?;
                    let att = g.attention(x, kk, vv, 3, 3)?;
                    let sq = g.elementwise_mul(att, att)?;
                    g.sum_all(sq)
                },
                &random_tensor(6, 3, 7),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("block_left_mul", {
            let p = Tensor::from_vec(2, 2, vec![0.0, 0.5, 0.5, 0.0]);
            grad_check(
                move |g, x| {
                    let y = g.block_left_mul(&p, x)?;
                    let sq = g.elementwise_mul(y, y)?;
                    g.sum_all(sq)
                },
                &random_tensor(4, 3, 8),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("max_mean_blocks", {
            grad_check(
                |g, x| {
                    let m = g.block_rows_max(x, 2)?;
                    let mm = g.block_rows_mean(x, 3)?;
                    let s1 = g.sum_all(m)?;
                    let s2 = g.sum_all(mm)?;
                    g.add(s1, s2)
                },
                &random_tensor(6, 3, 9),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("mean_axes_row_max", {
            grad_check(
                |g, x| {
                    let m0 = g.mean_over_axis(x, 0)?;
                    let m1 = g.mean_over_axis(x, 1)?;
                    let rm = g.max_over_axis(x, 1)?;
                    let s0 = g.sum_all(m0)?;
                    let s1 = g.sum_all(m1)?;
                    let s2 = g.sum_all(rm)?;
                    let t = g.add(s0, s1)?;
                    g.add(t, s2)
                },
                &random_tensor(4, 5, 10),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("log_pow_clamp", {
            grad_check(
                |g, x| {
                    let l = g.log(x)?;
                    let p = g.pow_scalar(x, 2.5)?;
                    let c = g.clamp(x, 0.1, 1.9)?;
                    let s1 = g.sum_all(l)?;
                    let s2 = g.sum_all(p)?;
                    let s3 = g.sum_all(c)?;
                    let t = g.add(s1, s2)?;
                    g.add(t, s3)
                },
                &positive_tensor(3, 3, 11),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("sigmoid_tanh_leaky", {
            grad_check(
                |g, x| {
                    let s = g.sigmoid(x)?;
                    let t = g.tanh(x)?;
                    let l = g.leaky_relu(x, 0.01)?;
                    let a = g.elementwise_mul(s, t)?;
                    let b = g.elementwise_mul(a, l)?;
                    g.sum_all(b)
                },
                &random_tensor(3, 4, 12),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
        ("take_per_row", {
            grad_check(
                |g, x| {
                    let t = g.take_per_row(x, vec![1, 0, 2])?;
                    let sq = g.elementwise_mul(t, t)?;
                    g.sum_all(sq)
                },
                &random_tensor(3, 3, 13),
                DEFAULT_FD_EPS,
            )
            .unwrap()
        }),
    ];
    for (name, err) in checks {
        assert!(err < tol, "{name}: rel err {err}");
    }
}

#[test]
fn batch_norm_gradient_matches_finite_differences() {
    let err = grad_check(
        |g, x| {
            let gamma = g.leaf(Tensor::from_vec(1, 3, vec![1.2, 0.8, 1.0]), true);
            let beta = g.leaf(Tensor::from_vec(1, 3, vec![0.1, -0.2, 0.0]), true);
            let zeros = Tensor::zeros(1, 3);
            let ones = Tensor::filled(1, 3, 1.0);
            let y = g.batch_norm(x, gamma, beta, (&zeros, &ones), Mode::Train, 1e-5)?;
            let sq = g.elementwise_mul(y, y)?;
            g.sum_all(sq)
        },
        &random_tensor(6, 3, 14),
        DEFAULT_FD_EPS,
    )
    .unwrap();
    assert!(err < 1e-4, "batch_norm rel err {err}");
}

#[test]
fn batch_norm_fixed_point_and_degenerate_batch() {
    // Construct columns with zero mean and population variance exactly
    // 1 - eps, so the eps-floored denominator is exactly 1 and the
    // normalization is the identity up to rounding.
    let eps = 1e-5;
    let target_sd = (1.0f64 - eps).sqrt();
    let base = [-1.5, -0.5, 0.5, 1.5];
    let sd = (base.iter().map(|v| v * v).sum::<f64>() / base.len() as f64).sqrt();
    let col: Vec<f64> = base.iter().map(|v| v / sd * target_sd).collect();
    let mut data = Vec::new();
    for &v in &col {
        data.extend_from_slice(&[v, 2.0 * v]);
    }
    // Second column scaled: variance 4·(1-eps); not the fixed point, so
    // only column 0 is asserted to be identity.
    let x = Tensor::from_vec(4, 2, data);
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let gamma = g.constant(Tensor::filled(1, 2, 1.0));
    let beta = g.constant(Tensor::zeros(1, 2));
    let zeros = Tensor::zeros(1, 2);
    let ones = Tensor::filled(1, 2, 1.0);
    let y = g.batch_norm(xn, gamma, beta, (&zeros, &ones), Mode::Train, eps).unwrap();
    for r in 0..4 {
        assert!((g.value(y).get(r, 0) - x.get(r, 0)).abs() < 1e-9);
    }

    // Constant batch: variance floors at eps and the output equals the shift.
    let mut g2 = Graph::new();
    let xc = g2.constant(Tensor::filled(5, 2, 3.7));
    let gamma = g2.constant(Tensor::filled(1, 2, 2.0));
    let beta = g2.constant(Tensor::from_vec(1, 2, vec![0.5, -1.0]));
    let y2 = g2.batch_norm(xc, gamma, beta, (&zeros, &ones), Mode::Train, eps).unwrap();
    for r in 0..5 {
        assert_eq!(g2.value(y2).row(r), &[0.5, -1.0]);
    }

    // Train-mode batch of one row is a contract violation.
    let mut g3 = Graph::new();
    let x1 = g3.constant(Tensor::zeros(1, 2));
    let gamma = g3.constant(Tensor::filled(1, 2, 1.0));
    let beta = g3.constant(Tensor::zeros(1, 2));
    assert!(g3.batch_norm(x1, gamma, beta, (&zeros, &ones), Mode::Train, eps).is_err());
}

#[test]
fn dropout_modes_and_expectation() {
    let x = Tensor::filled(1, 8, 1.0);
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let eval = g.dropout(xn, 0.5, Mode::Eval, 1).unwrap();
    assert_eq!(eval, xn);
    let p0 = g.dropout(xn, 0.0, Mode::Train, 1).unwrap();
    assert_eq!(p0, xn);

    // Monte Carlo expectation of a unit input under inverted dropout.
    let trials = 100_000usize;
    let p = 0.3;
    let mut total = 0.0;
    for t in 0..trials {
        let mut g = Graph::new();
        let xn = g.constant(Tensor::filled(1, 1, 1.0));
        let d = g.dropout(xn, p, Mode::Train, t as u64).unwrap();
        total += g.value(d).get(0, 0);
    }
    let mean = total / trials as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean = {mean}");
}

#[test]
fn attention_general_query_example() {
    // One query [1] against keys [1],[0] and values [2],[4]:
    // softmax(1,0) ≈ (0.7311, 0.2689) and output ≈ 2.5378.
    let mut g = Graph::new();
    let q = g.constant(Tensor::from_vec(1, 1, vec![1.0]));
    let k = g.constant(Tensor::from_vec(2, 1, vec![1.0, 0.0]));
    let v = g.constant(Tensor::from_vec(2, 1, vec![2.0, 4.0]));
    let att = g.attention(q, k, v, 1, 2).unwrap();
    let w = g.attention_weights(att).unwrap();
    assert!((w.get(0, 0) - 0.7311).abs() < 1e-4);
    assert!((w.get(0, 1) - 0.2689).abs() < 1e-4);
    assert!((g.value(att).get(0, 0) - 2.5378).abs() < 1e-4);
}

proptest! {
    #[test]
    fn softmax_rows_always_sum_to_one(vals in proptest::collection::vec(-30.0f64..30.0, 8)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(2, 4, vals));
        let y = g.row_softmax(x).unwrap();
        for r in 0..2 {
            let sum: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(g.value(y).row(r).iter().all(|&p| p > 0.0));
        }
    }
}
