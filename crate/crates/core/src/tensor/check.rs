//! Central finite-difference gradient checking.
//!
//! This is the numerical oracle the test suites compare analytic gradients
//! against. It only ever calls the *forward* computation (twice per perturbed
//! coordinate), so it shares nothing with the backward pass it is checking.

use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default perturbation for 64-bit checks: small enough for tight truncation
/// error, large enough that f64 rounding noise stays orders of magnitude
/// below the tolerances used in the tests.
pub const DEFAULT_H: f64 = 1e-6;

/// Numerically differentiate `f` with respect to every entry of every input,
/// using central differences: (f(x+h) − f(x−h)) / 2h.
pub fn central_diff_grads<F>(inputs: &[Tensor<f64>], mut f: F, h: f64) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for ti in 0..inputs.len() {
        let mut grad = work[ti].clone();
        for ei in 0..work[ti].numel() {
            let original = work[ti].data()[ei];
            work[ti].data_mut()[ei] = original + h;
            let plus = f(&work);
            work[ti].data_mut()[ei] = original - h;
            let minus = f(&work);
            work[ti].data_mut()[ei] = original;
            grad.data_mut()[ei] = (plus - minus) / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}

/// Relative error that degrades to absolute error near zero:
/// |a − b| / max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative error over a pair of gradient sets.
pub fn max_rel_err(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        for (&x, &y) in a.data().iter().zip(n.data()) {
            worst = worst.max(rel_err(x, y));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Per-primitive sweep
// ---------------------------------------------------------------------------

/// A differentiable scalar function of some tensors, expressed as a tape
/// program so it can be run once for analytic gradients and many times for
/// numeric ones.
pub type Program = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn run_value(inputs: &[Tensor<f64>], program: &Program) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = program(&mut tape, &vars);
    let (r, c) = tape.shape(out);
    assert_eq!(r * c, 1, "check program must end in a scalar");
    tape.data(out)[0]
}

fn run_grads(inputs: &[Tensor<f64>], program: &Program) -> Vec<Tensor<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = program(&mut tape, &vars);
    tape.backward(out).expect("scalar loss");
    vars.iter().map(|&v| tape.grad_tensor(v)).collect()
}

/// Check one program against central differences; returns the worst relative
/// error over all inputs.
pub fn check_program(inputs: &[Tensor<f64>], program: &Program, h: f64) -> f64 {
    let analytic = run_grads(inputs, program);
    let numeric = central_diff_grads(inputs, |xs| run_value(xs, program), h);
    max_rel_err(&analytic, &numeric)
}

/// Random tensor with entries kept away from zero, so kinked activations
/// (relu) are not differentiated across their corner.
fn randn_off_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::randn(rows, cols, rng);
    for v in t.data_mut() {
        if v.abs() < 1e-2 {
            *v += 0.05_f64.copysign(*v + f64::MIN_POSITIVE);
        }
    }
    t
}

/// Reduce an arbitrary tensor to a scalar through a fixed random weighting,
/// so every output entry influences the loss.
pub fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
    let w = tape.leaf(Tensor::randn(r, c, &mut rng));
    let prod = tape.mul(v, w);
    tape.sum(prod)
}

/// Finite-difference every primitive tape operation across `n_seeds` random
/// instances each. Returns the worst (op name, relative error) pair, or an
/// error string describing the first op that exceeded `tol`.
pub fn gradcheck_primitives(
    n_seeds: u64,
    h: f64,
    tol: f64,
) -> std::result::Result<(String, f64), String> {
    let mut worst = ("none".to_string(), 0.0f64);
    for seed in 0..n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cases: Vec<(&str, Vec<Tensor<f64>>, Program)> = vec![
            (
                "add",
                vec![
                    Tensor::randn(3, 4, &mut rng),
                    Tensor::randn(3, 4, &mut rng),
                ],
                Box::new(move |t, v| {
                    let y = t.add(v[0], v[1]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "add_row",
                vec![Tensor::randn(3, 4, &mut rng), Tensor::randn(1, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.add_row(v[0], v[1]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "mul",
                vec![
                    Tensor::randn(3, 4, &mut rng),
                    Tensor::randn(3, 4, &mut rng),
                ],
                Box::new(move |t, v| {
                    let y = t.mul(v[0], v[1]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "scale",
                vec![Tensor::randn(3, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.scale(v[0], -1.7);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "matmul",
                vec![
                    Tensor::randn(3, 4, &mut rng),
                    Tensor::randn(4, 2, &mut rng),
                ],
                Box::new(move |t, v| {
                    let y = t.matmul(v[0], v[1]).unwrap();
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "transpose",
                vec![Tensor::randn(3, 5, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.transpose(v[0]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "concat_rows",
                vec![
                    Tensor::randn(2, 3, &mut rng),
                    Tensor::randn(4, 3, &mut rng),
                ],
                Box::new(move |t, v| {
                    let y = t.concat_rows(&[v[0], v[1]]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "concat_cols",
                vec![
                    Tensor::randn(3, 2, &mut rng),
                    Tensor::randn(3, 5, &mut rng),
                ],
                Box::new(move |t, v| {
                    let y = t.concat_cols(&[v[0], v[1]]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "slice_rows",
                vec![Tensor::randn(5, 3, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.slice_rows(v[0], 1..4);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "slice_cols",
                vec![Tensor::randn(3, 6, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.slice_cols(v[0], 2..5);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "reshape",
                vec![Tensor::randn(3, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.reshape(v[0], 2, 6);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "softmax_rows",
                vec![Tensor::randn(3, 5, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.softmax_rows(v[0]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "layer_norm",
                vec![
                    Tensor::randn(3, 6, &mut rng),
                    Tensor::randn(1, 6, &mut rng),
                    Tensor::randn(1, 6, &mut rng),
                ],
                Box::new(move |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2], 1e-5);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "relu",
                vec![randn_off_zero(3, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.relu(v[0]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "gelu",
                vec![Tensor::randn(3, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.gelu(v[0]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "sigmoid",
                vec![Tensor::randn(3, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.sigmoid(v[0]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "tanh",
                vec![Tensor::randn(3, 4, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.tanh(v[0]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "sum",
                vec![Tensor::randn(4, 4, &mut rng)],
                Box::new(move |t, v| t.sum(v[0])),
            ),
            (
                "dropout",
                vec![Tensor::randn(4, 4, &mut rng)],
                Box::new(move |t, v| {
                    // Same seed on every evaluation, so the sampled mask is a
                    // fixed function and finite differences see it too.
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(77 + seed);
                    let y = t.dropout(v[0], 0.25, &mut drop_rng);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "embed",
                vec![Tensor::randn(6, 3, &mut rng)],
                Box::new(move |t, v| {
                    let y = t.embed(v[0], &[4, 0, 4, 2]);
                    weighted_sum(t, y, seed)
                }),
            ),
            (
                "cross_entropy",
                vec![Tensor::randn(4, 5, &mut rng)],
                Box::new(move |t, v| t.cross_entropy(v[0], &[0, 2, 4, 1])),
            ),
            (
                "sq_diff_sum",
                vec![
                    Tensor::randn(3, 4, &mut rng),
                    Tensor::randn(3, 4, &mut rng),
                ],
                Box::new(move |t, v| t.sq_diff_sum(v[0], v[1])),
            ),
        ];

        for (name, inputs, program) in cases {
            let err = check_program(&inputs, &program, h);
            if err > tol {
                return Err(format!(
                    "op {name} seed {seed}: rel err {err:.3e} exceeds {tol:.1e}"
                ));
            }
            if err > worst.1 {
                worst = (name.to_string(), err);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_gradient_of_dot_with_itself() {
        // f(x) = Σ x², gradient 2x.
        let x = Tensor::row(vec![1.0, -2.0, 0.5]);
        let grads = central_diff_grads(
            &[x.clone()],
            |xs| xs[0].data().iter().map(|v| v * v).sum(),
            DEFAULT_H,
        );
        for (g, v) in grads[0].data().iter().zip(x.data()) {
            assert!((g - 2.0 * v).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_err_is_absolute_near_zero() {
        assert!(rel_err(1e-9, 0.0) < 1e-8);
        assert!((rel_err(200.0, 100.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn every_primitive_survives_a_quick_sweep() {
        // The acceptance suite runs the full 20-seed sweep; keep the unit
        // variant light so `cargo test` stays snappy.
        let (op, err) = gradcheck_primitives(3, DEFAULT_H, 1e-5).unwrap();
        assert!(err <= 1e-5, "worst op {op}: {err}");
    }
}
