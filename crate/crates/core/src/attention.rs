//! `Attn(A, B, C)`: score pairs of rows of `A` and `B` with
//! `relu(A U) diag(D) relu(B U)ᵀ`, softmax each row, and mix the rows of `C`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Projection `U` (`d×k`) and diagonal `D` (stored as a `1×k` row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnParams {
    pub u: ParamId,
    pub d: ParamId,
    pub d_in: usize,
    pub k: usize,
}

impl AttnParams {
    /// `U` uniform, `D` all ones.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, k: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            u: store.add_uniform(&format!("{name}.u"), d_in, k, rng)?,
            d: store.add(&format!("{name}.d"), Tensor::ones(&[1, k]), false)?,
            d_in,
            k,
        })
    }
}

/// `S[i][j] = Σ_t relu(A_i U)_t · D_t · relu(B_j U)_t`, shape `m×n`.
pub fn attn_scores(g: &mut Graph, store: &ParamStore, p: &AttnParams, a: Var, b: Var) -> Result<Var> {
    let (_, da) = g.shape(a);
    let (_, db) = g.shape(b);
    if da != p.d_in || db != p.d_in {
        return Err(dim_err!("attention expects width {} for both sides, got {da} and {db}", p.d_in));
    }
    let u = g.param(store, p.u);
    let d = g.param(store, p.d);
    let pa = g.matmul(a, u)?;
    let pa = g.relu(pa);
    let pa = g.mul_row(pa, d)?;
    let pb = g.matmul(b, u)?;
    let pb = g.relu(pb);
    g.matmul_bt(pa, pb)
}

/// Softmax each row of `scores` (masked columns get zero weight) and mix
/// the rows of `c`. Returns the output and the weight matrix.
pub fn attend(g: &mut Graph, scores: Var, c: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
    let (_, n) = g.shape(scores);
    let (nc, _) = g.shape(c);
    if n != nc {
        return Err(dim_err!("attention: {n} score columns but {nc} value rows"));
    }
    let alpha = g.softmax_rows(scores, mask)?;
    Ok((g.matmul(alpha, c)?, alpha))
}

/// `Attn(A, B, C)` with optional mask over the rows of `B`/`C`.
pub fn attn_weights(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttnParams,
    a: Var,
    b: Var,
    c: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let (nb, _) = g.shape(b);
    let (nc, _) = g.shape(c);
    if nb != nc {
        return Err(dim_err!("attention: {nb} key rows but {nc} value rows"));
    }
    let s = attn_scores(g, store, p, a, b)?;
    attend(g, s, c, mask)
}

pub fn attn(g: &mut Graph, store: &ParamStore, p: &AttnParams, a: Var, b: Var, c: Var) -> Result<Var> {
    Ok(attn_weights(g, store, p, a, b, c, None)?.0)
}

/// Context word vectors attend to question word vectors: `Attn(C, Q, Q)`.
pub fn word_level_inter_attention(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttnParams,
    context: Var,
    question: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    attn_weights(g, store, p, context, question, question, mask)
}

/// `Attn(X, X, X)`, or `Attn(S, S, X)` when `score_input` is given. The
/// diagonal is not masked.
pub fn self_attention(
    g: &mut Graph,
    store: &ParamStore,
    p: &AttnParams,
    x: Var,
    score_input: Option<Var>,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let s = score_input.unwrap_or(x);
    if g.shape(s).0 != g.shape(x).0 {
        return Err(dim_err!("self attention: {} score rows but {} value rows", g.shape(s).0, g.shape(x).0));
    }
    attn_weights(g, store, p, s, s, x, mask)
}

/// One call per level: `Attn(HoW_C, HoW_Q, values[k])` with `params[k]`.
/// Returns the outputs and the weight matrices.
pub fn multilevel_attention(
    g: &mut Graph,
    store: &ParamStore,
    params: &[AttnParams],
    how_c: Var,
    how_q: Var,
    values: &[Var],
    mask: Option<&[bool]>,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if params.len() != values.len() {
        return Err(dim_err!("multilevel attention: {} parameter sets for {} levels", params.len(), values.len()));
    }
    let (_, wc) = g.shape(how_c);
    let (_, wq) = g.shape(how_q);
    if wc != wq {
        return Err(dim_err!("multilevel attention: history widths {wc} and {wq} differ"));
    }
    let mut outs = Vec::with_capacity(values.len());
    let mut weights = Vec::with_capacity(values.len());
    for (p, &v) in params.iter().zip(values) {
        let (o, w) = attn_weights(g, store, p, how_c, how_q, v, mask)?;
        outs.push(o);
        weights.push(w);
    }
    Ok((outs, weights))
}
