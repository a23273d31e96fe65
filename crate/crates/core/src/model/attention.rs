//! Multi-head scaled dot-product attention with optional rectification.
//!
//! A rectification matrix `R` sits between the query and key projections:
//! scores become `(Q_h R_h) K_hᵀ / √d_k` instead of `Q_h K_hᵀ / √d_k`. When
//! `R` is the identity the two formulas produce bitwise-identical floats —
//! multiplying by an exact identity neither rounds nor reorders any sum — so
//! disabling the knowledge-graph path is a true no-op rather than an
//! approximate one.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::params::TapeBinding;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Projection variables of one attention block.
#[derive(Clone, Copy)]
pub struct AttnVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttnVars {
    /// Looks up `<prefix>.{wq,bq,wk,bk,wv,bv,wo,bo}` in the binding.
    pub fn bind(binding: &TapeBinding, prefix: &str) -> Self {
        let v = |suffix: &str| binding.var(&format!("{prefix}.{suffix}"));
        AttnVars {
            wq: v("wq"),
            bq: v("bq"),
            wk: v("wk"),
            bk: v("bk"),
            wv: v("wv"),
            bv: v("bv"),
            wo: v("wo"),
            bo: v("bo"),
        }
    }
}

/// `rect` is either one `d_k x d_k` matrix shared by all heads or a stack of
/// `n_heads` such blocks (`n_heads*d_k x d_k`). When `collect` is given, the
/// post-softmax weights of every head are copied into it, one
/// `n_q x n_k` matrix per head.
pub fn multi_head<S: Scalar>(
    tape: &mut Tape<S>,
    p: &AttnVars,
    x_q: Var,
    x_kv: Var,
    n_heads: usize,
    rect: Option<Var>,
    mut collect: Option<&mut Vec<Tensor<S>>>,
) -> Result<Var> {
    let d = tape.shape(x_q).1;
    assert_eq!(d % n_heads, 0, "d_model must divide into heads");
    let dk = d / n_heads;
    if let Some(r) = rect {
        let (rr, rc) = tape.shape(r);
        assert!(
            rc == dk && (rr == dk || rr == n_heads * dk),
            "rectifier must be dk x dk or stacked per head, got {rr}x{rc}"
        );
    }

    let q = tape.affine(x_q, p.wq, p.bq)?;
    let k = tape.affine(x_kv, p.wk, p.bk)?;
    let v = tape.affine(x_kv, p.wv, p.bv)?;
    let scale = S::of(1.0 / (dk as f64).sqrt());

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = h * dk..(h + 1) * dk;
        let qh = tape.slice_cols(q, cols.clone());
        let kh = tape.slice_cols(k, cols.clone());
        let vh = tape.slice_cols(v, cols);
        let qr = match rect {
            None => qh,
            Some(r) => {
                let rh = if tape.shape(r).0 == dk {
                    r
                } else {
                    tape.slice_rows(r, h * dk..(h + 1) * dk)
                };
                tape.matmul(qh, rh)?
            }
        };
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qr, kt)?;
        let scaled = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scaled);
        if let Some(out) = collect.as_deref_mut() {
            out.push(tape.tensor(weights));
        }
        heads.push(tape.matmul(weights, vh)?);
    }
    let cat = tape.concat_cols(&heads);
    tape.affine(cat, p.wo, p.bo)
}
