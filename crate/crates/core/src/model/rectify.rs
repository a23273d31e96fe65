//! Attention rectification from knowledge-graph context.
//!
//! An LSTM reads the ordered context rows and its final hidden state is
//! mapped — through a zero-initialized dense layer — to an additive update
//! `ΔR`, giving `R = I + ΔR`. Zero initialization matters: a freshly built
//! model produces exactly the identity, so the knowledge-graph machinery is
//! provably inert until training moves it.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::params::TapeBinding;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
pub struct RectVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl RectVars {
    /// Looks up `<prefix>.lstm.{wx,wh,b}` and `<prefix>.out.{w,b}`.
    pub fn bind(binding: &TapeBinding, prefix: &str) -> Self {
        RectVars {
            wx: binding.var(&format!("{prefix}.lstm.wx")),
            wh: binding.var(&format!("{prefix}.lstm.wh")),
            b: binding.var(&format!("{prefix}.lstm.b")),
            out_w: binding.var(&format!("{prefix}.out.w")),
            out_b: binding.var(&format!("{prefix}.out.b")),
        }
    }
}

/// `blocks` identity matrices of size `dk`, stacked row-wise.
pub fn stacked_eye<S: Scalar>(blocks: usize, dk: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(blocks * dk, dk);
    for b in 0..blocks {
        for j in 0..dk {
            t.set(b * dk + j, j, S::one());
        }
    }
    t
}

/// Builds the rectification stack `R = I + ΔR` (`blocks*dk x dk`) from the
/// first `count` context rows. With no context the LSTM contributes nothing
/// and `R` falls back to `I + out_b`-reshaped — still exactly `I` while the
/// output layer is at its zero init.
pub fn rectifier<S: Scalar>(
    tape: &mut Tape<S>,
    p: &RectVars,
    ctx: Var,
    count: usize,
    hidden: usize,
    blocks: usize,
    dk: usize,
) -> Result<Var> {
    let h_final = lstm_final_state(tape, p, ctx, count, hidden)?;
    let delta = tape.affine(h_final, p.out_w, p.out_b)?;
    let delta = tape.reshape(delta, blocks * dk, dk);
    let eye = tape.leaf(stacked_eye(blocks, dk));
    Ok(tape.add(eye, delta))
}

fn lstm_final_state<S: Scalar>(
    tape: &mut Tape<S>,
    p: &RectVars,
    ctx: Var,
    count: usize,
    hidden: usize,
) -> Result<Var> {
    let mut h = tape.zeros(1, hidden);
    let mut c = tape.zeros(1, hidden);
    for t in 0..count {
        let x_t = tape.slice_rows(ctx, t..t + 1);
        let xg = tape.affine(x_t, p.wx, p.b)?;
        let hg = tape.matmul(h, p.wh)?;
        let gates = tape.add(xg, hg);
        let i_raw = tape.slice_cols(gates, 0..hidden);
        let f_raw = tape.slice_cols(gates, hidden..2 * hidden);
        let g_raw = tape.slice_cols(gates, 2 * hidden..3 * hidden);
        let o_raw = tape.slice_cols(gates, 3 * hidden..4 * hidden);
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh(g_raw);
        let o = tape.sigmoid(o_raw);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        h = tape.mul(o, tc);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::{check_program, weighted_sum};
    use crate::tensor::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect_store(d_ctx: usize, hidden: usize, out: usize, zero_out: bool) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut params = ParamStore::new();
        let dense = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (rows as f64).sqrt();
            Tensor::uniform(rows, cols, -bound, bound, rng)
        };
        params.insert("r.lstm.wx", dense(d_ctx, 4 * hidden, &mut rng));
        params.insert("r.lstm.wh", dense(hidden, 4 * hidden, &mut rng));
        params.insert("r.lstm.b", Tensor::zeros(1, 4 * hidden));
        if zero_out {
            params.insert("r.out.w", Tensor::zeros(hidden, out));
            params.insert("r.out.b", Tensor::zeros(1, out));
        } else {
            params.insert("r.out.w", dense(hidden, out, &mut rng));
            params.insert("r.out.b", dense(1, out, &mut rng));
        }
        params
    }

    #[test]
    fn zero_initialized_output_gives_exact_identity() {
        for (blocks, dk, count) in [(1, 4, 3), (2, 3, 5), (1, 4, 0)] {
            let params = rect_store(6, 5, blocks * dk * dk, true);
            let mut tape = Tape::new();
            let binding = TapeBinding::bind(&mut tape, &params);
            let p = RectVars::bind(&binding, "r");
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let ctx = tape.leaf(Tensor::randn(8, 6, &mut rng));
            let r = rectifier(&mut tape, &p, ctx, count, 5, blocks, dk).unwrap();
            assert_eq!(tape.tensor(r).data(), stacked_eye::<f64>(blocks, dk).data());
        }
    }

    #[test]
    fn perturbed_output_layer_moves_off_identity() {
        let params = rect_store(6, 5, 16, false);
        let mut tape = Tape::new();
        let binding = TapeBinding::bind(&mut tape, &params);
        let p = RectVars::bind(&binding, "r");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctx = tape.leaf(Tensor::randn(4, 6, &mut rng));
        let r = rectifier(&mut tape, &p, ctx, 4, 5, 1, 4).unwrap();
        let diff = tape.tensor(r).max_abs_diff(&stacked_eye::<f64>(1, 4));
        assert!(diff > 1e-4, "rectifier stuck at identity ({diff})");
    }

    #[test]
    fn gradients_flow_through_the_unrolled_lstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d_ctx, hidden, blocks, dk, count) = (3, 4, 1, 3, 4);
        let dense = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (rows as f64).sqrt();
            Tensor::uniform(rows, cols, -bound, bound, rng)
        };
        let inputs = vec![
            Tensor::randn(count, d_ctx, &mut rng),
            dense(d_ctx, 4 * hidden, &mut rng),
            dense(hidden, 4 * hidden, &mut rng),
            dense(1, 4 * hidden, &mut rng),
            dense(hidden, blocks * dk * dk, &mut rng),
            dense(1, blocks * dk * dk, &mut rng),
        ];
        let program: crate::tensor::check::Program = Box::new(move |tape, vars| {
            let p = RectVars {
                wx: vars[1],
                wh: vars[2],
                b: vars[3],
                out_w: vars[4],
                out_b: vars[5],
            };
            let r = rectifier(tape, &p, vars[0], count, hidden, blocks, dk).unwrap();
            weighted_sum(tape, r, 77)
        });
        let err = check_program(&inputs, &program, 1e-6);
        assert!(err < 1e-6, "lstm gradient mismatch: {err}");
    }
}
