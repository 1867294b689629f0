use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SdnetModel};
use crate::attention::word_level_inter_attention;
use crate::dialogue::{Gold, PassageBatch};
use crate::embeddings::{embed_words, ContextualEmbedder, WordVectorTable};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{dropout_mask, Graph, Mode, Tensor, Var};
use crate::text::{NerTag, PosTag, TokenRecord, ANSWER_MARKER};
use crate::SeededRng;

/// Per-passage constants shared by every question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageInputs {
    /// `m×word_dim` word vectors.
    pub glove: Tensor,
    /// `L` word-level layers of `m×contextual_dim`.
    pub bert: Option<Vec<Tensor>>,
    /// One-hot POS and NER tags.
    pub pos: Tensor,
    pub ner: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedQuestion {
    pub turn_id: usize,
    /// `n×word_dim`; marker rows are zero.
    pub glove: Tensor,
    /// `n×2` selector of the `<Q>`/`<A>` marker vectors.
    pub markers: Tensor,
    /// Marker rows are zero.
    pub bert: Option<Vec<Tensor>>,
    /// `m×4`: exact-match bits and normalized term frequency.
    pub features: Tensor,
    pub gold: Gold,
    pub references: Vec<String>,
}

/// A passage batch with every embedding lookup done.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedPassage {
    pub batch: PassageBatch,
    pub inputs: PassageInputs,
    pub questions: Vec<PreparedQuestion>,
}

impl PreparedPassage {
    pub fn context_len(&self) -> usize {
        self.batch.context.len()
    }
}

fn one_hot(rows: usize, cols: usize, idx: impl Iterator<Item = Option<usize>>) -> Result<Tensor> {
    let mut data = vec![0.0; rows * cols];
    for (r, i) in idx.enumerate() {
        if let Some(i) = i {
            data[r * cols + i] = 1.0;
        }
    }
    Tensor::new(vec![rows, cols], data)
}

fn glove_rows(table: &WordVectorTable, tokens: &[TokenRecord]) -> Result<Tensor> {
    let mut t = table.lookup(&tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>())?;
    let d = table.dim();
    for (r, tok) in tokens.iter().enumerate() {
        if tok.is_marker() {
            t.data_mut()[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(t)
}

/// Contextual layers for `tokens`; marker tokens are skipped by the embedder
/// and get zero rows.
fn contextual_rows(embedder: &dyn ContextualEmbedder, tokens: &[TokenRecord]) -> Result<Vec<Tensor>> {
    let keep: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].is_marker()).collect();
    let d = embedder.dim();
    let words: Vec<&str> = keep.iter().map(|&i| tokens[i].text.as_str()).collect();
    let layers = if words.is_empty() {
        vec![Tensor::zeros(&[1, d]); embedder.num_layers()]
    } else {
        embed_words(embedder, &words)?
    };
    layers
        .into_iter()
        .map(|l| {
            let mut out = vec![0.0; tokens.len() * d];
            for (r, &i) in keep.iter().enumerate() {
                out[i * d..(i + 1) * d].copy_from_slice(l.row_slice(r));
            }
            Tensor::new(vec![tokens.len(), d], out)
        })
        .collect()
}

/// Looks up word vectors, contextual layers, tags and features for every
/// question of a passage.
pub fn prepare_passage(
    batch: &PassageBatch,
    table: &WordVectorTable,
    embedder: Option<&dyn ContextualEmbedder>,
    config: &ModelConfig,
) -> Result<PreparedPassage> {
    if table.dim() != config.word_dim {
        return Err(Error::Usage(format!(
            "word vectors have dim {}, model.word_dim is {}",
            table.dim(),
            config.word_dim
        )));
    }
    let embedder = match (config.use_contextual, embedder) {
        (false, _) => None,
        (true, None) => return Err(Error::Usage("model uses contextual embeddings but no embedder was given".into())),
        (true, Some(e)) => {
            if e.num_layers() != config.contextual_layers || e.dim() != config.contextual_dim {
                return Err(Error::Usage(format!(
                    "embedder has L={} dim={}, model expects L={} dim={}",
                    e.num_layers(),
                    e.dim(),
                    config.contextual_layers,
                    config.contextual_dim
                )));
            }
            Some(e)
        }
    };
    let ctx = &batch.context;
    let m = ctx.len();
    let inputs = PassageInputs {
        glove: glove_rows(table, ctx)?,
        bert: embedder.map(|e| contextual_rows(e, ctx)).transpose()?,
        pos: one_hot(m, PosTag::COUNT, ctx.iter().map(|t| Some(t.pos_tag.index())))?,
        ner: one_hot(m, NerTag::COUNT, ctx.iter().map(|t| Some(t.ner_tag.index())))?,
    };
    let questions = batch
        .examples
        .iter()
        .map(|ex| {
            let q = &ex.question_tokens;
            if ex.features.len() != m {
                return Err(Error::Usage(format!(
                    "{} turn {}: {} feature vectors for {m} context tokens",
                    batch.passage_id,
                    ex.turn,
                    ex.features.len()
                )));
            }
            let mut feats = Vec::with_capacity(m * 4);
            for f in &ex.features {
                feats.extend(f.exact_match.iter().map(|&b| if b { 1.0 } else { 0.0 }));
                feats.push(f.norm_tf);
            }
            let marker_idx = q.iter().map(|t| match t.is_marker() {
                false => None,
                true if t.text == ANSWER_MARKER => Some(1),
                true => Some(0),
            });
            Ok(PreparedQuestion {
                turn_id: ex.turn_id,
                glove: glove_rows(table, q)?,
                markers: one_hot(q.len(), 2, marker_idx)?,
                bert: embedder.map(|e| contextual_rows(e, q)).transpose()?,
                features: Tensor::new(vec![m, 4], feats)?,
                gold: ex.gold,
                references: ex.references.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedPassage { batch: batch.clone(), inputs, questions })
}

/// Input rows for one question:
/// context `[glove; bert; ĥ; pos; ner; em; tf]` and question `[glove; bert]`.
#[derive(Clone, Copy, Debug)]
pub struct EncodedBatch {
    pub context: Var,
    pub question: Var,
    pub glove_c: Var,
    pub bert_c: Option<Var>,
    pub glove_q: Var,
    pub bert_q: Option<Var>,
    /// Weights of the word-level inter-attention.
    pub word_attn: Var,
}

/// Ordinary dropout with a fresh mask per element.
pub(super) fn dropout(g: &mut Graph, x: Var, rate: f64, mode: Mode, rng: &mut SeededRng) -> Result<Var> {
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = g.shape(x);
    let mask = g.constant(dropout_mask(&[r, c], rate, rng, mode)?);
    g.mul(x, mask)
}

fn mix(g: &mut Graph, model: &SdnetModel, layers: &[Tensor]) -> Result<Var> {
    if model.config.last_layer_only {
        let last = layers.last().ok_or_else(|| dim_err!("no contextual layers"))?;
        return Ok(g.constant(last.clone()));
    }
    let lm = model.params.layer_mix.ok_or_else(|| Error::Usage("model has no layer mix".into()))?;
    lm.apply(g, &model.store, layers)
}

pub fn encode(
    g: &mut Graph,
    model: &SdnetModel,
    passage: &PreparedPassage,
    q: usize,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<EncodedBatch> {
    let cfg = &model.config;
    let s = &model.store;
    let p = &model.params;
    let question = passage
        .questions
        .get(q)
        .ok_or_else(|| Error::Usage(format!("question {q} out of {}", passage.questions.len())))?;
    let inp = &passage.inputs;
    if cfg.use_contextual && (inp.bert.is_none() || question.bert.is_none()) {
        return Err(Error::Usage("contextual layers missing from prepared passage".into()));
    }

    let glove_c = g.constant(inp.glove.clone());
    let bert_c = match (&inp.bert, cfg.use_contextual) {
        (Some(layers), true) => {
            let b = mix(g, model, layers)?;
            Some(dropout(g, b, cfg.dropout_contextual, mode, rng)?)
        }
        _ => None,
    };
    let glove_q0 = g.constant(question.glove.clone());
    let sel = g.constant(question.markers.clone());
    let marker_w = g.param(s, p.markers);
    let marker_rows = g.matmul(sel, marker_w)?;
    let glove_q = g.add(glove_q0, marker_rows)?;
    let bert_q = match (&question.bert, cfg.use_contextual) {
        (Some(layers), true) => {
            let b = mix(g, model, layers)?;
            Some(dropout(g, b, cfg.dropout_contextual, mode, rng)?)
        }
        _ => None,
    };

    let att_c = dropout(g, glove_c, cfg.dropout_other, mode, rng)?;
    let att_q = dropout(g, glove_q, cfg.dropout_other, mode, rng)?;
    let (h_hat, word_attn) = word_level_inter_attention(g, s, &p.word_attn, att_c, att_q, None)?;

    let pos_sel = g.constant(inp.pos.clone());
    let pos_w = g.param(s, p.pos);
    let pos = g.matmul(pos_sel, pos_w)?;
    let ner_sel = g.constant(inp.ner.clone());
    let ner_w = g.param(s, p.ner);
    let ner = g.matmul(ner_sel, ner_w)?;
    let feats = g.constant(question.features.clone());

    let mut ctx_parts = vec![glove_c];
    ctx_parts.extend(bert_c);
    ctx_parts.extend([h_hat, pos, ner, feats]);
    let context = g.concat_cols(&ctx_parts)?;
    let mut q_parts = vec![glove_q];
    q_parts.extend(bert_q);
    let question_rows = g.concat_cols(&q_parts)?;
    Ok(EncodedBatch { context, question: question_rows, glove_c, bert_c, glove_q, bert_q, word_attn })
}
