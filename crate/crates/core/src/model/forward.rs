use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::encode::{dropout, encode, EncodedBatch, PreparedPassage};
use super::{ModelConfig, SdnetModel};
use crate::attention::{multilevel_attention, self_attention};
use crate::dialogue::{AnswerKind, Gold};
use crate::error::{Error, Result};
use crate::tensor::{
    bilstm_layer, dropout_mask, gru_cell, variational_dropout_mask, BiLstmParams, Graph, Mode, ParamId, ParamStore,
    Tensor, Var,
};
use crate::SeededRng;

/// Integration-layer outputs and the intermediates the output layer and
/// tests look at.
#[derive(Clone, Debug)]
pub struct Integration {
    /// `n×2h` final question rows.
    pub u_q: Var,
    /// `m×2h_final` final context rows.
    pub u_c: Var,
    /// `h^{C,1..K}`.
    pub h_c: Vec<Var>,
    /// `h^{Q,1..K+1}`.
    pub h_q: Vec<Var>,
    /// `m^{(1..K+1),C}`.
    pub m_c: Vec<Var>,
    pub v_c: Var,
    pub s_c: Var,
    /// Every attention weight matrix, in dataflow order.
    pub attention_weights: Vec<Var>,
}

/// Input dropout mask for a recurrent layer over a `t×d` sequence: one
/// `1×d` mask shared by every step under variational dropout, else `t×d`.
/// `None` in eval mode or at rate zero.
pub fn rnn_input_mask(
    config: &ModelConfig,
    t: usize,
    d: usize,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Option<Tensor>> {
    let rate = config.dropout_other;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(None);
    }
    Ok(Some(if config.variational_dropout {
        variational_dropout_mask(&[1, d], rate, rng, mode)?
    } else {
        dropout_mask(&[t, d], rate, rng, mode)?
    }))
}

fn rnn(g: &mut Graph, model: &SdnetModel, p: &BiLstmParams, x: Var, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
    let (t, d) = g.shape(x);
    let mask = rnn_input_mask(&model.config, t, d, mode, rng)?;
    bilstm_layer(g, &model.store, p, x, mask.as_ref())
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Dimension(msg) => Error::Dimension(format!("{name}: {msg}")),
        other => other,
    })
}

pub fn integration_forward(
    g: &mut Graph,
    model: &SdnetModel,
    enc: &EncodedBatch,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Integration> {
    let cfg = &model.config;
    let p = &model.params;
    let s = &model.store;
    let rate = cfg.dropout_other;
    let mut weights = vec![enc.word_attn];

    let mut h_c = Vec::with_capacity(cfg.k);
    let mut h_q = Vec::with_capacity(cfg.k + 1);
    let (mut xc, mut xq) = (enc.context, enc.question);
    for layer in 0..cfg.k {
        xc = stage("context rnn", rnn(g, model, &p.ctx_rnn[layer], xc, mode, rng))?;
        xq = stage("question rnn", rnn(g, model, &p.q_rnn[layer], xq, mode, rng))?;
        h_c.push(xc);
        h_q.push(xq);
    }
    let hq_cat = g.concat_cols(&h_q)?;
    let q_top = stage("question understanding", rnn(g, model, &p.q_top, hq_cat, mode, rng))?;
    h_q.push(q_top);
    let u_q = if cfg.question_self_attention {
        let score = dropout(g, q_top, rate, mode, rng)?;
        let (u, w) = stage("question self attention", self_attention(g, s, &p.q_self, q_top, Some(score), None))?;
        weights.push(w);
        u
    } else {
        q_top
    };

    let mut how_c = vec![enc.glove_c];
    how_c.extend(enc.bert_c);
    how_c.extend(&h_c);
    let how_c = g.concat_cols(&how_c)?;
    let mut how_q = vec![enc.glove_q];
    how_q.extend(enc.bert_q);
    how_q.extend(&h_q[..cfg.k]);
    let how_q = g.concat_cols(&how_q)?;
    let how_c = dropout(g, how_c, rate, mode, rng)?;
    let how_q = dropout(g, how_q, rate, mode, rng)?;
    let (m_c, ml_w) =
        stage("multilevel attention", multilevel_attention(g, s, &p.multilevel, how_c, how_q, &h_q, None))?;
    weights.extend(ml_w);

    let mut y = h_c.clone();
    y.extend(&m_c);
    let y = g.concat_cols(&y)?;
    let v_c = stage("context rnn over y", rnn(g, model, &p.ctx_v, y, mode, rng))?;

    let mut s_parts = vec![enc.glove_c];
    s_parts.extend(enc.bert_c);
    s_parts.extend(&h_c);
    s_parts.extend(&m_c);
    s_parts.push(v_c);
    let s_c = g.concat_cols(&s_parts)?;
    let s_drop = dropout(g, s_c, rate, mode, rng)?;
    let (v_tilde, w) = stage("context self attention", self_attention(g, s, &p.ctx_self, v_c, Some(s_drop), None))?;
    weights.push(w);
    let vv = g.concat_cols(&[v_c, v_tilde])?;
    let u_c = stage("final context rnn", rnn(g, model, &p.ctx_final, vv, mode, rng))?;
    Ok(Integration { u_q, u_c, h_c, h_q, m_c, v_c, s_c, attention_weights: weights })
}

/// `Σ_i β_i u^Q_i` with `β = softmax(u^Q w)`. Returns the `1×d` vector and `β`.
pub fn condense_question(g: &mut Graph, store: &ParamStore, u_q: Var, w: ParamId) -> Result<(Var, Var)> {
    let wv = g.param(store, w);
    let scores = g.matmul(u_q, wv)?;
    let scores = g.transpose(scores);
    let beta = g.softmax_rows(scores, None)?;
    Ok((g.matmul(beta, u_q)?, beta))
}

/// Output-layer logits. `start` and `end` are `1×(m+3)`: context positions
/// followed by the yes, no and unknown logits.
#[derive(Clone, Copy, Debug)]
pub struct AnswerScores {
    pub start: Var,
    pub end: Var,
    /// Start distribution over context positions only (GRU fusion input).
    pub start_context: Var,
    pub fused_query: Var,
    pub class_logits: [Var; 3],
    pub class_weights: [Var; 3],
}

pub fn answer_scores(g: &mut Graph, model: &SdnetModel, uq: Var, u_c: Var) -> Result<AnswerScores> {
    let p = &model.params;
    let s = &model.store;
    let bilinear = |g: &mut Graph, q: Var, w: ParamId| -> Result<Var> {
        let wv = g.param(s, w);
        let qw = g.matmul(q, wv)?;
        g.matmul_bt(qw, u_c)
    };
    let start_ctx = bilinear(g, uq, p.w_start)?;
    let ps = g.softmax_rows(start_ctx, None)?;
    let fused_in = g.matmul(ps, u_c)?;
    let t_q = gru_cell(g, s, &p.fusion, fused_in, uq)?;
    let end_ctx = bilinear(g, t_q, p.w_end)?;
    let mut class_logits = [start_ctx; 3];
    let mut class_weights = [start_ctx; 3];
    for c in 0..3 {
        let sc = bilinear(g, uq, p.w_class[c])?;
        let pc = g.softmax_rows(sc, None)?;
        let pooled = g.matmul(pc, u_c)?;
        let vv = g.param(s, p.v_class[c]);
        class_logits[c] = g.matmul(pooled, vv)?;
        class_weights[c] = pc;
    }
    let mut parts = vec![start_ctx];
    parts.extend(class_logits);
    let start = g.concat_cols(&parts)?;
    parts[0] = end_ctx;
    let end = g.concat_cols(&parts)?;
    Ok(AnswerScores { start, end, start_context: ps, fused_query: t_q, class_logits, class_weights })
}

/// Everything produced for one question.
#[derive(Clone, Debug)]
pub struct QuestionOutput {
    pub start: Var,
    pub end: Var,
    /// Every softmax row set in the network (attention weights, `β`, the
    /// class pools, start/end over `m+3`).
    pub distributions: Vec<Var>,
    pub integration: Integration,
    pub scores: AnswerScores,
}

pub fn question_forward(
    g: &mut Graph,
    model: &SdnetModel,
    passage: &PreparedPassage,
    q: usize,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<QuestionOutput> {
    let enc = encode(g, model, passage, q, mode, rng)?;
    let integ = integration_forward(g, model, &enc, mode, rng)?;
    let (uq, beta) = condense_question(g, &model.store, integ.u_q, model.params.condense)?;
    let scores = answer_scores(g, model, uq, integ.u_c)?;
    let mut distributions = integ.attention_weights.clone();
    distributions.push(beta);
    distributions.push(scores.start_context);
    distributions.extend(scores.class_weights);
    let ps = g.softmax_rows(scores.start, None)?;
    let pe = g.softmax_rows(scores.end, None)?;
    distributions.extend([ps, pe]);
    Ok(QuestionOutput { start: scores.start, end: scores.end, distributions, integration: integ, scores })
}

/// `−log P^S − log P^E` at the gold positions (the class slot for
/// yes/no/unknown answers).
pub fn question_loss(g: &mut Graph, start: Var, end: Var, gold: &Gold) -> Result<Var> {
    let (_, width) = g.shape(start);
    let m = width
        .checked_sub(3)
        .filter(|&m| m > 0)
        .ok_or_else(|| Error::Dimension(format!("logit row of width {width} has no context positions")))?;
    let (i, j) = match gold.kind {
        AnswerKind::Span => {
            if gold.start > gold.end || gold.end >= m {
                return Err(Error::Data(format!("gold span {}..={} outside {m} context tokens", gold.start, gold.end)));
            }
            (gold.start, gold.end)
        }
        kind => {
            let c = m + kind.class_offset().expect("class answers have an offset");
            (c, c)
        }
    };
    let ls = g.log_softmax_rows(start, None)?;
    let le = g.log_softmax_rows(end, None)?;
    let a = g.pick(ls, i)?;
    let b = g.pick(le, j)?;
    let sum = g.add(a, b)?;
    Ok(g.scale(sum, -1.0))
}

/// Summed loss over every question of the passage, plus the per-question outputs.
pub fn passage_loss(
    g: &mut Graph,
    model: &SdnetModel,
    passage: &PreparedPassage,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(Var, Vec<QuestionOutput>)> {
    if passage.questions.is_empty() {
        return Err(Error::Data(format!("passage `{}` has no questions", passage.batch.passage_id)));
    }
    let mut total: Option<Var> = None;
    let mut outs = Vec::with_capacity(passage.questions.len());
    for (q, pq) in passage.questions.iter().enumerate() {
        let out = question_forward(g, model, passage, q, mode, rng)?;
        let l = question_loss(g, out.start, out.end, &pq.gold)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
        outs.push(out);
    }
    Ok((total.expect("at least one question"), outs))
}
