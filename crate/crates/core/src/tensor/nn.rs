//! Recurrent cells and dropout masks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Whether a forward pass draws dropout masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted-dropout mask: each entry is `1/(1−rate)` with probability
/// `1−rate` and zero otherwise. Eval mode returns all ones.
pub fn dropout_mask<R: Rng>(shape: &[usize], rate: f64, rng: &mut R, mode: Mode) -> Result<Tensor> {
    check_rate(rate)?;
    let numel: usize = shape.iter().product();
    if mode == Mode::Eval || rate == 0.0 {
        return Tensor::new(shape.to_vec(), alloc::vec![1.0; numel]);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let data = (0..numel).map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Mask for variational dropout. The caller multiplies the same mask into
/// every timestep of a sequence, so `shape` is the per-step feature shape.
pub fn variational_dropout_mask<R: Rng>(shape: &[usize], rate: f64, rng: &mut R, mode: Mode) -> Result<Tensor> {
    dropout_mask(shape, rate, rng, mode)
}

/// Weights of a single-direction LSTM. Gate order in the fused matrices is
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_ih: store.add_uniform(&format!("{name}.w_ih"), d_in, 4 * d_h, rng)?,
            w_hh: store.add_uniform(&format!("{name}.w_hh"), d_h, 4 * d_h, rng)?,
            bias: store.add_zeros(&format!("{name}.bias"), 1, 4 * d_h)?,
            d_in,
            d_h,
        })
    }
}

/// One recurrent step given the already-projected input row `x·W_ih + b`.
fn lstm_step(g: &mut Graph, proj: Var, h_prev: Var, c_prev: Var, w_hh: Var, d_h: usize) -> Result<(Var, Var)> {
    let rec = g.matmul(h_prev, w_hh)?;
    let gates = g.add(proj, rec)?;
    let i = g.slice_cols(gates, 0, d_h)?;
    let f = g.slice_cols(gates, d_h, d_h)?;
    let cand = g.slice_cols(gates, 2 * d_h, d_h)?;
    let o = g.slice_cols(gates, 3 * d_h, d_h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

fn check_state(g: &Graph, what: &str, v: Var, width: usize) -> Result<()> {
    if g.shape(v) != (1, width) {
        return Err(dim_err!("{what}: expected [1×{width}], got {:?}", g.shape(v)));
    }
    Ok(())
}

/// Standard LSTM cell on row vectors: returns `(h, c)`.
pub fn lstm_cell(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    check_state(g, "lstm input", x, p.d_in)?;
    check_state(g, "lstm hidden state", h_prev, p.d_h)?;
    check_state(g, "lstm cell state", c_prev, p.d_h)?;
    let w_ih = g.param(store, p.w_ih);
    let w_hh = g.param(store, p.w_hh);
    let b = g.param(store, p.bias);
    let xw = g.matmul(x, w_ih)?;
    let proj = g.add(xw, b)?;
    lstm_step(g, proj, h_prev, c_prev, w_hh, p.d_h)
}

fn run_direction(g: &mut Graph, store: &ParamStore, p: &LstmParams, seq: Var, reverse: bool) -> Result<Vec<Var>> {
    let (t_len, _) = g.shape(seq);
    let w_ih = g.param(store, p.w_ih);
    let w_hh = g.param(store, p.w_hh);
    let b = g.param(store, p.bias);
    let xw = g.matmul(seq, w_ih)?;
    let proj = g.add_row(xw, b)?;
    let mut h = g.constant(Tensor::zeros(&[1, p.d_h]));
    let mut c = g.constant(Tensor::zeros(&[1, p.d_h]));
    let mut out = alloc::vec![h; t_len];
    let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for t in order {
        let row = g.row(proj, t)?;
        (h, c) = lstm_step(g, row, h, c, w_hh, p.d_h)?;
        out[t] = h;
    }
    Ok(out)
}

/// Parameters of a bidirectional LSTM layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fwd: LstmParams::new(store, &format!("{name}.fwd"), d_in, d_h, rng)?,
            bwd: LstmParams::new(store, &format!("{name}.bwd"), d_in, d_h, rng)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.d_h
    }
}

/// Bidirectional LSTM over the rows of `seq` (`T×d_in`), giving `T×2d_h`:
/// forward states in the left half, backward states in the right half.
///
/// `mask` is a dropout mask on the input. A `1×d_in` mask is shared by every
/// timestep (variational dropout); a `T×d_in` mask gives each step its own.
pub fn bilstm_layer(
    g: &mut Graph,
    store: &ParamStore,
    p: &BiLstmParams,
    seq: Var,
    mask: Option<&Tensor>,
) -> Result<Var> {
    let (t_len, d_in) = g.shape(seq);
    if d_in != p.fwd.d_in {
        return Err(dim_err!("bilstm: input width {d_in}, layer expects {}", p.fwd.d_in));
    }
    let seq = match mask {
        None => seq,
        Some(m) => {
            let shape = m.dims2()?;
            let mv = g.constant(m.clone());
            if shape == (1, d_in) {
                g.mul_row(seq, mv)?
            } else if shape == (t_len, d_in) {
                g.mul(seq, mv)?
            } else {
                return Err(dim_err!("bilstm: dropout mask {:?} does not fit input [{t_len}×{d_in}]", shape));
            }
        }
    };
    let fwd = run_direction(g, store, &p.fwd, seq, false)?;
    let bwd = run_direction(g, store, &p.bwd, seq, true)?;
    let fwd = g.concat_rows(&fwd)?;
    let bwd = g.concat_rows(&bwd)?;
    g.concat_cols(&[fwd, bwd])
}

/// Weights of a GRU cell. Gate order in the fused matrices is reset,
/// update, candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_ih: store.add_uniform(&format!("{name}.w_ih"), d_in, 3 * d_h, rng)?,
            w_hh: store.add_uniform(&format!("{name}.w_hh"), d_h, 3 * d_h, rng)?,
            b_ih: store.add_zeros(&format!("{name}.b_ih"), 1, 3 * d_h)?,
            b_hh: store.add_zeros(&format!("{name}.b_hh"), 1, 3 * d_h)?,
            d_in,
            d_h,
        })
    }
}

/// GRU cell: `h = (1−z)·h_prev + z·n` with
/// `n = tanh(x·W_in + b_in + r ⊙ (h_prev·W_hn + b_hn))`.
pub fn gru_cell(g: &mut Graph, store: &ParamStore, p: &GruParams, x: Var, h_prev: Var) -> Result<Var> {
    check_state(g, "gru input", x, p.d_in)?;
    check_state(g, "gru hidden state", h_prev, p.d_h)?;
    let d = p.d_h;
    let w_ih = g.param(store, p.w_ih);
    let w_hh = g.param(store, p.w_hh);
    let b_ih = g.param(store, p.b_ih);
    let b_hh = g.param(store, p.b_hh);
    let xi = g.matmul(x, w_ih)?;
    let xi = g.add(xi, b_ih)?;
    let hh = g.matmul(h_prev, w_hh)?;
    let hh = g.add(hh, b_hh)?;

    let xr = g.slice_cols(xi, 0, d)?;
    let hr = g.slice_cols(hh, 0, d)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let xz = g.slice_cols(xi, d, d)?;
    let hz = g.slice_cols(hh, d, d)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);
    let xn = g.slice_cols(xi, 2 * d, d)?;
    let hn = g.slice_cols(hh, 2 * d, d)?;
    let gated = g.mul(r, hn)?;
    let n = g.add(xn, gated)?;
    let n = g.tanh(n);

    let keep = g.one_minus(z);
    let keep = g.mul(keep, h_prev)?;
    let write = g.mul(z, n)?;
    g.add(keep, write)
}
