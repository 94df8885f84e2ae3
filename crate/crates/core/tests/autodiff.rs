use std::sync::Arc;

use adalign::autodiff::{grad_check, AutodiffError, CsrMatrix, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.get(i, p) * b.get(p, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

#[test]
fn relu_and_cos_definitions() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = tape.constant(Tensor::vector(vec![0.0]));
    let c = tape.cos(z).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let a = random_matrix(&mut rng, 2, 3, 2.0);
        let b = random_matrix(&mut rng, 3, 2, 2.0);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(av, bv).unwrap();
        assert!(tape.value(c).max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);

        let bt = tape.constant(b.transpose());
        let c2 = tape.matmul_transposed(av, bt).unwrap();
        assert!(tape.value(c2).max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(AutodiffError::Shape { .. })));
    let c = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, c), Err(AutodiffError::Shape { .. })));
}

#[test]
fn sqrt_eps_rejects_negative_input() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0, -1e-3]));
    assert!(matches!(tape.sqrt_eps(x), Err(AutodiffError::Domain { .. })));
    let zero = tape.leaf(Tensor::vector(vec![0.0]));
    let s = tape.sqrt_eps(zero).unwrap();
    let loss = tape.sum(s).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(zero).data()[0].is_finite());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(AutodiffError::Contract(_))));
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3, 4]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x), &Tensor::filled(&[3, 4], 1.0));
}

#[test]
fn mean_of_squares_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let m = tape.mean(sq).unwrap();
    let g = tape.backward(m).unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0, 2.0]);
}

#[test]
fn unused_leaf_gets_exact_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let unused = tape.leaf(Tensor::filled(&[2, 2], 3.0));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(unused), &Tensor::zeros(&[2, 2]));
}

#[test]
fn frozen_tape_refuses_new_nodes() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.is_frozen());
    assert_eq!(tape.exp(x), Err(AutodiffError::Frozen));
}

fn composite(tape: &mut Tape, x: Var, w: &Tensor, t: &Tensor) -> Result<Var, AutodiffError> {
    let wv = tape.constant(w.clone());
    let tv = tape.constant(t.clone());
    let h = tape.matmul(x, wv)?;
    let p = tape.matmul_transposed(h, tv)?;
    let c = tape.cos(p)?;
    let sq = tape.mul(c, c)?;
    let r = tape.sqrt_eps(sq)?;
    tape.mean(r)
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_matrix(&mut rng, 4, 3, 1.0);
    let w = random_matrix(&mut rng, 3, 2, 1.0);
    let t = random_matrix(&mut rng, 5, 2, 1.0);
    let err = grad_check(|tape, v| composite(tape, v, &w, &t), &x, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn replayed_tape_gives_identical_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_matrix(&mut rng, 4, 3, 1.0);
    let w = random_matrix(&mut rng, 3, 2, 1.0);
    let t = random_matrix(&mut rng, 5, 2, 1.0);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let loss = composite(&mut tape, xv, &w, &t).unwrap();
        tape.backward(loss).unwrap().wrt(xv).clone()
    };
    let (g1, g2) = (run(), run());
    assert!(g1.data().iter().zip(g2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

/// Every differentiable op, reduced to a scalar, on 10 random inputs.
#[test]
fn every_op_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let adj = Arc::new(
        CsrMatrix::from_triplets(4, 4, &[(0, 0, 0.5), (0, 1, 0.3), (1, 0, 0.3), (2, 3, 0.7), (3, 3, 1.0)])
            .unwrap(),
    );
    for trial in 0..10 {
        let other = random_matrix(&mut rng, 4, 3, 1.0);
        let square = random_matrix(&mut rng, 3, 3, 1.0);
        let weights = random_matrix(&mut rng, 4, 3, 1.0);
        let x = random_matrix(&mut rng, 4, 3, 1.0);
        let positive = x.map(|v| v.abs() + 0.1);

        type Case<'a> = (&'static str, Box<dyn Fn(&mut Tape, Var) -> Result<Var, AutodiffError> + 'a>, &'a Tensor);
        // Each case ends in a weighted sum so every output coordinate matters.
        let weighted = |tape: &mut Tape, y: Var| -> Result<Var, AutodiffError> {
            let shape = tape.value(y).shape().to_vec();
            let n: usize = shape.iter().product();
            let w: Vec<f64> = weights.data().iter().copied().cycle().take(n).collect();
            let wv = tape.constant(Tensor::new(shape, w)?);
            let p = tape.mul(y, wv)?;
            tape.sum(p)
        };
        let cases: Vec<Case> = vec![
            ("matmul", Box::new(|t, v| { let s = t.constant(square.clone()); let y = t.matmul(v, s)?; weighted(t, y) }), &x),
            ("matmul_rhs", Box::new(|t, v| { let o = t.constant(other.transpose()); let y = t.matmul(o, v)?; weighted(t, y) }), &x),
            ("matmul_transposed", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.matmul_transposed(v, o)?; weighted(t, y) }), &x),
            ("matmul_transposed_rhs", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.matmul_transposed(o, v)?; weighted(t, y) }), &x),
            ("sparse_dense_matmul", Box::new(|t, v| { let y = t.sparse_matmul(&adj, v)?; weighted(t, y) }), &x),
            ("add", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.add(v, o)?; let y = t.mul(y, y)?; weighted(t, y) }), &x),
            ("sub", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.sub(o, v)?; let y = t.mul(y, y)?; weighted(t, y) }), &x),
            ("elementwise_mul", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.mul(v, o)?; weighted(t, y) }), &x),
            ("add_row", Box::new(|t, v| { let r = t.gather_rows(v, &[1])?; let y = t.add_row(v, r)?; weighted(t, y) }), &x),
            ("scalar_mul", Box::new(|t, v| { let y = t.scale(v, -2.5)?; weighted(t, y) }), &x),
            ("relu", Box::new(|t, v| { let y = t.relu(v)?; weighted(t, y) }), &x),
            ("exp", Box::new(|t, v| { let y = t.exp(v)?; weighted(t, y) }), &x),
            ("cos", Box::new(|t, v| { let y = t.cos(v)?; weighted(t, y) }), &x),
            ("sin", Box::new(|t, v| { let y = t.sin(v)?; weighted(t, y) }), &x),
            ("sqrt_eps", Box::new(|t, v| { let y = t.sqrt_eps(v)?; weighted(t, y) }), &positive),
            ("clamp", Box::new(|t, v| { let y = t.clamp(v, -0.5, 0.5)?; weighted(t, y) }), &x),
            ("mean", Box::new(|t, v| { let y = t.mul(v, v)?; t.mean(y) }), &x),
            ("sum", Box::new(|t, v| { let y = t.exp(v)?; t.sum(y) }), &x),
            ("col_mean", Box::new(|t, v| { let y = t.col_mean(v)?; let y = t.mul(y, y)?; t.sum(y) }), &x),
            ("log_softmax_rows", Box::new(|t, v| { let y = t.log_softmax_rows(v)?; weighted(t, y) }), &x),
            ("gather_rows", Box::new(|t, v| { let y = t.gather_rows(v, &[3, 0, 3, 2])?; weighted(t, y) }), &x),
            ("concat_rows", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.concat_rows(&[o, v])?; let y = t.mul(y, y)?; t.sum(y) }), &x),
            ("pick", Box::new(|t, v| { let y = t.pick(v, &[0, 2, 1, 2])?; let y = t.exp(y)?; t.sum(y) }), &x),
            ("reshape", Box::new(|t, v| { let y = t.reshape(v, &[3, 4])?; let y = t.col_mean(y)?; let y = t.exp(y)?; t.sum(y) }), &x),
            ("characteristic_function", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.characteristic_function(v, o)?; let y = t.mul(y, y)?; t.sum(y) }), &x),
            ("characteristic_function_freq", Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.characteristic_function(o, v)?; let y = t.mul(y, y)?; t.sum(y) }), &x),
            ("cis_col_mean", Box::new(|t, v| { let s = t.constant(square.clone()); let p = t.matmul(v, s)?; let y = t.cis_col_mean(p)?; let y = t.mul(y, y)?; t.sum(y) }), &x),
        ];
        for (name, f, input) in &cases {
            let err = grad_check(|t, v| f(t, v), input, 1e-5).unwrap();
            assert!(err < 1e-4, "trial {trial}: {name} relative error {err}");
        }
    }
}

#[test]
fn cis_col_mean_matches_separate_cos_sin() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = random_matrix(&mut rng, 7, 5, 4.0);
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let cis = tape.cis_col_mean(pv).unwrap();
    let c = tape.cos(pv).unwrap();
    let cm = tape.col_mean(c).unwrap();
    let s = tape.sin(pv).unwrap();
    let sm = tape.col_mean(s).unwrap();
    let out = tape.value(cis);
    for j in 0..5 {
        assert!((out.get(0, j) - tape.value(cm).data()[j]).abs() < 1e-14);
        assert!((out.get(1, j) - tape.value(sm).data()[j]).abs() < 1e-14);
    }
}

#[test]
fn characteristic_function_matches_unfused_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // enough rows and frequencies to span several internal blocks
    let z = random_matrix(&mut rng, 300, 3, 2.0);
    let t = random_matrix(&mut rng, 1000, 3, 1.0);
    let g = random_matrix(&mut rng, 2, 1000, 1.0);
    let run = |fused: bool| {
        let mut tape = Tape::new();
        let (zv, tv) = (tape.leaf(z.clone()), tape.leaf(t.clone()));
        let cf = if fused {
            tape.characteristic_function(zv, tv).unwrap()
        } else {
            let p = tape.matmul_transposed(zv, tv).unwrap();
            tape.cis_col_mean(p).unwrap()
        };
        let gv = tape.constant(g.clone());
        let y = tape.mul(cf, gv).unwrap();
        let loss = tape.sum(y).unwrap();
        let value = tape.value(cf).clone();
        let grads = tape.backward(loss).unwrap();
        (value, grads.wrt(zv).clone(), grads.wrt(tv).clone())
    };
    let (a, b) = (run(true), run(false));
    assert!(a.0.max_abs_diff(&b.0) < 1e-14);
    assert!(a.1.max_abs_diff(&b.1) < 1e-12);
    assert!(a.2.max_abs_diff(&b.2) < 1e-12);
}

#[test]
fn log_softmax_rows_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 6, 4, 10.0);
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = tape.log_softmax_rows(v).unwrap();
    for r in 0..6 {
        let total: f64 = tape.value(y).row_slice(r).iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
