//! Finite-difference checks for every tape primitive.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const H: f64 = 1e-5;

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap().with_grad()
}

/// Builds a scalar loss from `inputs` on a fresh tape.
type LossFn = dyn Fn(&mut Tape<'_>, &[Var]) -> Var;

fn eval(inputs: &[Tensor], f: &LossFn) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t)).collect();
    let out = f(&mut tape, &vars);
    tape.scalar(out)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares tape gradients of every input element with central differences.
fn check(inputs: Vec<Tensor>, f: &LossFn, tol: f64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t)).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    for (i, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()]);
        for j in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus, f) - eval(&minus, f)) / (2.0 * H);
            let e = rel_err(analytic[j], numeric);
            assert!(e < tol, "input {i} elem {j}: analytic {} numeric {numeric} rel {e}", analytic[j]);
        }
    }
}

fn weighted_sum(tape: &mut Tape<'_>, x: Var, seed: u64) -> Var {
    // Random weights so the loss is not symmetric in the outputs.
    let (r, c) = tape.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.matrix(r, c, w, false).unwrap();
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let id = tape.matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0], false).unwrap();
    let m = tape.matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
    let p = tape.matmul(id, m).unwrap();
    assert_eq!(tape.value(p), &[1.0, 2.0, 3.0, 4.0]);
    let a = tape.matrix(1, 2, vec![1.0, 0.0], false).unwrap();
    let b = tape.matrix(2, 1, vec![2.0, 5.0], false).unwrap();
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p), &[2.0]);
    assert!(matches!(tape.matmul(a, a), Err(crate::Error::Shape { .. })));
}

#[test]
fn matmul_gradient_of_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f: &LossFn = &|t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        t.sum(p)
    };
    check(vec![rand_matrix(&mut rng, 3, 4), rand_matrix(&mut rng, 4, 2)], f, 1e-4);
}

#[test]
fn matmul_transposed_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (ta, tb) in [(false, true), (true, false), (true, true)] {
        let (a, b) = match (ta, tb) {
            (false, true) => (rand_matrix(&mut rng, 3, 4), rand_matrix(&mut rng, 2, 4)),
            (true, false) => (rand_matrix(&mut rng, 4, 3), rand_matrix(&mut rng, 4, 2)),
            _ => (rand_matrix(&mut rng, 4, 3), rand_matrix(&mut rng, 2, 4)),
        };
        let f = move |t: &mut Tape<'_>, v: &[Var]| {
            let p = t.matmul_t(v[0], ta, v[1], tb).unwrap();
            weighted_sum(t, p, 7)
        };
        check(vec![a, b], &f, 1e-4);
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_matrix(&mut rng, 2, 3);
    let b = rand_matrix(&mut rng, 2, 3);
    let row = rand_matrix(&mut rng, 1, 3);
    let f: &LossFn = &|t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let m = t.mul(s, v[0]).unwrap();
        let r = t.add_row(m, v[2]).unwrap();
        let g = t.gelu(r);
        let sc = t.scale(g, -1.7);
        weighted_sum(t, sc, 11)
    };
    check(vec![a, b, row], f, 1e-4);
}

#[test]
fn sum_and_square_gradients() {
    let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let v = tape.input(&x);
    let s = tape.sum(v);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let v = tape.input(&x);
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[1.0, -4.0, 6.0]);
}

#[test]
fn layer_norm_examples_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.matrix(1, 3, vec![5.0; 3], false).unwrap();
    let g = tape.matrix(1, 3, vec![1.0; 3], false).unwrap();
    let b = tape.matrix(1, 3, vec![0.0; 3], false).unwrap();
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = rand_matrix(&mut rng, 4, 16);
    let x = tape.input(&input);
    let (ones, zeros) = (tape_ones(&mut tape, 16), tape_zeros(&mut tape, 16));
    let y = tape.layer_norm(x, ones, zeros, 1e-12).unwrap();
    for row in tape.value(y).chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }

    let f: &LossFn = &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(t, y, 5)
    };
    check(vec![rand_matrix(&mut rng, 3, 5), rand_matrix(&mut rng, 1, 5), rand_matrix(&mut rng, 1, 5)], f, 1e-4);
}

fn tape_ones(t: &mut Tape<'_>, n: usize) -> Var {
    t.matrix(1, n, vec![1.0; n], false).unwrap()
}

fn tape_zeros(t: &mut Tape<'_>, n: usize) -> Var {
    t.matrix(1, n, vec![0.0; n], false).unwrap()
}

#[test]
fn softmax_gradient_and_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_matrix(&mut rng, 3, 4);
    let mut tape = Tape::new();
    let v = tape.input(&x);
    let s = tape.softmax(v);
    let reference = softmax(&x, 1).unwrap();
    assert_eq!(tape.value(s), reference.data());
    let f: &LossFn = &|t, v| {
        let s = t.softmax(v[0]);
        weighted_sum(t, s, 9)
    };
    check(vec![x], f, 1e-4);
}

#[test]
fn attention_gradient_and_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = rand_matrix(&mut rng, 2, 8);
    let k = rand_matrix(&mut rng, 5, 8);
    let v = rand_matrix(&mut rng, 5, 8);
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.input(&q), tape.input(&k), tape.input(&v));
    let o = tape.attention(qv, kv, vv, 2).unwrap();
    let (probs, heads) = tape.attention_probs(o).unwrap();
    assert_eq!(heads, 2);
    for row in probs.chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(tape.attention(qv, kv, vv, 3).is_err());
    let f: &LossFn = &|t, v| {
        let o = t.attention(v[0], v[1], v[2], 2).unwrap();
        weighted_sum(t, o, 13)
    };
    check(vec![q, k, v], f, 1e-4);
}

#[test]
fn gather_concat_and_nll_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let table = rand_matrix(&mut rng, 6, 3);
    let other = rand_matrix(&mut rng, 2, 3);
    let f: &LossFn = &|t, v| {
        let g = t.gather(v[0], &[4, 1, 4]).unwrap();
        let c = t.concat_rows(&[g, v[1]]).unwrap();
        let q = t.gather(v[0], &[0]).unwrap();
        let scores = t.matmul_t(q, false, c, true).unwrap();
        t.nll_ranking(scores).unwrap()
    };
    check(vec![table, other], f, 1e-4);
}

#[test]
fn nll_tape_matches_closed_form() {
    let mut tape = Tape::new();
    let s = tape.matrix(1, 3, vec![1.0, 0.0, -1.0], false).unwrap();
    let l = tape.nll_ranking(s).unwrap();
    let direct = nll_ranking_loss(1.0, &[0.0, -1.0]).unwrap();
    assert!((tape.scalar(l) - direct).abs() < 1e-14);
    let one = tape.matrix(1, 1, vec![1.0], false).unwrap();
    assert!(tape.nll_ranking(one).is_err());
}

#[test]
fn backward_contracts() {
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let v = tape.input(&x);
    assert!(matches!(tape.backward(v), Err(crate::Error::Contract(_))));
    let s = tape.sum(v);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(crate::Error::Contract(_))));
}

#[test]
fn reused_inputs_accumulate() {
    // loss = sum(x) + sum(x) uses x twice.
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let v = tape.input(&x);
    let a = tape.sum(v);
    let b = tape.sum(v);
    let l = tape.add(a, b).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[2.0, 2.0]);
}

#[test]
fn params_report_gradients_by_id() {
    let mut ps = ParamSet::default();
    let w = ps.push("w", Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap().with_grad());
    let frozen = ps.push("c", Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let mut tape = Tape::new();
    let a = tape.param(w, ps.get(w));
    let b = tape.param(frozen, ps.get(frozen));
    let a2 = tape.param(w, ps.get(w));
    let m = tape.mul(a, b).unwrap();
    let m2 = tape.mul(m, a2).unwrap();
    let l = tape.sum(m2);
    let grads = tape.backward(l).unwrap();
    assert_eq!(grads.len(), 1);
    // d/dw sum(w*w) = 2w, split across the two registrations.
    assert_eq!(grads.get(w).unwrap(), &[6.0, -2.0]);
    assert!(grads.get(frozen).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-1e3f64..1e3, 12)) {
        let x = Tensor::new(vec![3, 4], data).unwrap();
        let s = softmax(&x, 1).unwrap();
        for row in s.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn primitives_stay_finite(data in prop::collection::vec(-1e3f64..1e3, 16)) {
        let x = Tensor::new(vec![2, 8], data).unwrap().with_grad();
        let mut tape = Tape::new();
        let v = tape.input(&x);
        let g = tape.matrix(1, 8, vec![1.0; 8], false).unwrap();
        let b = tape.matrix(1, 8, vec![0.0; 8], false).unwrap();
        let n = tape.layer_norm(v, g, b, 1e-6).unwrap();
        let a = tape.attention(v, v, v, 2).unwrap();
        let sum = tape.add(n, a).unwrap();
        let act = tape.gelu(sum);
        let s = tape.softmax(act);
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        prop_assert!(tape.value(act).iter().all(|v| v.is_finite()));
        prop_assert!(tape.grad(v).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn random_shapes_match_finite_differences(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = move |t: &mut Tape<'_>, v: &[Var]| {
            let p = t.matmul(v[0], v[1]).unwrap();
            let g = t.gelu(p);
            weighted_sum(t, g, seed)
        };
        check(vec![rand_matrix(&mut rng, m, k), rand_matrix(&mut rng, k, n)], &f, 1e-4);
    }
}

#[test]
fn saturated_ranking_has_vanishing_gradient() {
    let x = Tensor::new(vec![1, 4], vec![50.0, 0.0, -3.0, -0.5]).unwrap().with_grad();
    let mut tape = Tape::new();
    let s = tape.input(&x);
    let l = tape.nll_ranking(s).unwrap();
    tape.backward(l).unwrap();
    let norm = tape.grad(s).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "{norm}");
    assert!(tape.scalar(l) < 1e-20);
}
