//! The SDNet network: encoding, integration and output layers, loss and
//! span prediction.

mod encode;
mod forward;
mod predict;

pub use encode::{encode, prepare_passage, EncodedBatch, PassageInputs, PreparedPassage, PreparedQuestion};
pub use forward::{
    answer_scores, condense_question, integration_forward, passage_loss, question_forward, question_loss,
    rnn_input_mask, AnswerScores, Integration, QuestionOutput,
};
pub use predict::{predict, predict_indices, Prediction};

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attention::AttnParams;
use crate::embeddings::LayerMixWeights;
use crate::error::{Error, Result};
use crate::tensor::{BiLstmParams, GruParams, ParamId, ParamStore, Tensor};
use crate::text::{NerTag, PosTag};

/// Network sizes, dropout rates and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// RNN layers per side.
    pub k: usize,
    pub rnn_hidden: usize,
    pub word_attn_k: usize,
    pub q_self_attn_k: usize,
    pub multilevel_k: usize,
    pub c_self_attn_k: usize,
    pub final_rnn_hidden: usize,
    pub dropout_contextual: f64,
    pub dropout_other: f64,
    pub max_span_len: usize,
    pub n_history: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    pub word_dim: usize,
    pub contextual_dim: usize,
    pub contextual_layers: usize,
    pub use_contextual: bool,
    pub variational_dropout: bool,
    pub question_self_attention: bool,
    pub last_layer_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 2,
            rnn_hidden: 125,
            word_attn_k: 300,
            q_self_attn_k: 300,
            multilevel_k: 250,
            c_self_attn_k: 250,
            final_rnn_hidden: 125,
            dropout_contextual: 0.4,
            dropout_other: 0.3,
            max_span_len: 15,
            n_history: 2,
            pos_dim: 12,
            ner_dim: 8,
            word_dim: 300,
            contextual_dim: 1024,
            contextual_layers: 24,
            use_contextual: true,
            variational_dropout: true,
            question_self_attention: true,
            last_layer_only: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("k", self.k),
            ("rnn_hidden", self.rnn_hidden),
            ("word_attn_k", self.word_attn_k),
            ("q_self_attn_k", self.q_self_attn_k),
            ("multilevel_k", self.multilevel_k),
            ("c_self_attn_k", self.c_self_attn_k),
            ("final_rnn_hidden", self.final_rnn_hidden),
            ("max_span_len", self.max_span_len),
            ("pos_dim", self.pos_dim),
            ("ner_dim", self.ner_dim),
            ("word_dim", self.word_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Parameter(format!("model.{name} must be positive")));
            }
        }
        if self.use_contextual && (self.contextual_dim == 0 || self.contextual_layers == 0) {
            return Err(Error::Parameter("model.contextual_dim and model.contextual_layers must be positive".into()));
        }
        for (name, r) in [("dropout_contextual", self.dropout_contextual), ("dropout_other", self.dropout_other)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Parameter(format!("model.{name} = {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Width of the contextual block (zero when contextual embeddings are off).
    pub fn bert_width(&self) -> usize {
        if self.use_contextual {
            self.contextual_dim
        } else {
            0
        }
    }

    /// POS + NER embeddings, three exact-match bits and term frequency.
    pub fn feature_width(&self) -> usize {
        self.pos_dim + self.ner_dim + 4
    }

    pub fn context_input_width(&self) -> usize {
        2 * self.word_dim + self.bert_width() + self.feature_width()
    }

    pub fn question_input_width(&self) -> usize {
        self.word_dim + self.bert_width()
    }

    /// Output width of every BiLSTM with `rnn_hidden` units per direction.
    pub fn rnn_width(&self) -> usize {
        2 * self.rnn_hidden
    }

    pub fn how_width(&self) -> usize {
        self.word_dim + self.bert_width() + self.k * self.rnn_width()
    }

    /// `y^C = [h^{C,1..K}; m^{(1..K+1),C}]`.
    pub fn y_width(&self) -> usize {
        (2 * self.k + 1) * self.rnn_width()
    }

    /// `s^C = [glove; bert; h^{C,1..K}; m^{(1..K+1),C}; v^C]`.
    pub fn s_width(&self) -> usize {
        self.word_dim + self.bert_width() + self.y_width() + self.rnn_width()
    }

    pub fn final_width(&self) -> usize {
        2 * self.final_rnn_hidden
    }
}

/// Parameter handles of every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Learned word vectors of the `<Q>` and `<A>` markers.
    pub markers: ParamId,
    pub pos: ParamId,
    pub ner: ParamId,
    pub layer_mix: Option<LayerMixWeights>,
    pub word_attn: AttnParams,
    pub ctx_rnn: Vec<BiLstmParams>,
    pub q_rnn: Vec<BiLstmParams>,
    pub q_top: BiLstmParams,
    pub q_self: AttnParams,
    pub multilevel: Vec<AttnParams>,
    pub ctx_v: BiLstmParams,
    pub ctx_self: AttnParams,
    pub ctx_final: BiLstmParams,
    pub condense: ParamId,
    pub w_start: ParamId,
    pub w_end: ParamId,
    pub fusion: GruParams,
    /// Yes, no, unknown.
    pub w_class: [ParamId; 3],
    pub v_class: [ParamId; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdnetModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl SdnetModel {
    /// Builds every parameter from the init stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seeded_rng(seed, 0);
        let rng = &mut rng;
        let c = &config;
        let mut s = ParamStore::new();
        let h2 = c.rnn_width();
        let markers = s.add_uniform("embed.markers", 2, c.word_dim, rng)?;
        let pos = s.add_uniform("embed.pos", PosTag::COUNT, c.pos_dim, rng)?;
        let ner = s.add_uniform("embed.ner", NerTag::COUNT, c.ner_dim, rng)?;
        let layer_mix = if c.use_contextual {
            Some(LayerMixWeights::new(&mut s, "embed.layer_mix", c.contextual_layers)?)
        } else {
            None
        };
        let word_attn = AttnParams::new(&mut s, "attn.word", c.word_dim, c.word_attn_k, rng)?;
        let mut ctx_rnn = Vec::with_capacity(c.k);
        let mut q_rnn = Vec::with_capacity(c.k);
        for layer in 0..c.k {
            let (din_c, din_q) =
                if layer == 0 { (c.context_input_width(), c.question_input_width()) } else { (h2, h2) };
            ctx_rnn.push(BiLstmParams::new(&mut s, &format!("rnn.context{}", layer + 1), din_c, c.rnn_hidden, rng)?);
            q_rnn.push(BiLstmParams::new(&mut s, &format!("rnn.question{}", layer + 1), din_q, c.rnn_hidden, rng)?);
        }
        let q_top = BiLstmParams::new(&mut s, "rnn.question_top", c.k * h2, c.rnn_hidden, rng)?;
        let q_self = AttnParams::new(&mut s, "attn.question_self", h2, c.q_self_attn_k, rng)?;
        let multilevel = (1..=c.k + 1)
            .map(|l| AttnParams::new(&mut s, &format!("attn.multilevel{l}"), c.how_width(), c.multilevel_k, rng))
            .collect::<Result<Vec<_>>>()?;
        let ctx_v = BiLstmParams::new(&mut s, "rnn.context_v", c.y_width(), c.rnn_hidden, rng)?;
        let ctx_self = AttnParams::new(&mut s, "attn.context_self", c.s_width(), c.c_self_attn_k, rng)?;
        let ctx_final = BiLstmParams::new(&mut s, "rnn.context_final", 2 * h2, c.final_rnn_hidden, rng)?;
        let fw = c.final_width();
        let condense = s.add_uniform("out.condense", h2, 1, rng)?;
        let w_start = s.add_uniform("out.w_start", h2, fw, rng)?;
        let fusion = GruParams::new(&mut s, "out.fusion", fw, h2, rng)?;
        let w_end = s.add_uniform("out.w_end", h2, fw, rng)?;
        let mut w_class = [ParamId(0); 3];
        let mut v_class = [ParamId(0); 3];
        for (i, name) in ["yes", "no", "unknown"].iter().enumerate() {
            w_class[i] = s.add_uniform(&format!("out.{name}.w"), h2, fw, rng)?;
            v_class[i] = s.add_uniform(&format!("out.{name}.v"), fw, 1, rng)?;
        }
        let params = ModelParams {
            markers,
            pos,
            ner,
            layer_mix,
            word_attn,
            ctx_rnn,
            q_rnn,
            q_top,
            q_self,
            multilevel,
            ctx_v,
            ctx_self,
            ctx_final,
            condense,
            w_start,
            w_end,
            fusion,
            w_class,
            v_class,
        };
        Ok(Self { config, store: s, params })
    }

    /// Current layer-mix weights, if contextual embeddings are used.
    pub fn alpha(&self) -> Option<&[f64]> {
        self.params.layer_mix.map(|m| self.store.get(m.alpha).tensor.data())
    }

    pub fn set_alpha(&mut self, alpha: &[f64]) -> Result<()> {
        let m = self.params.layer_mix.ok_or_else(|| Error::Usage("model has no contextual layer mix".into()))?;
        let t = &mut self.store.get_mut(m.alpha).tensor;
        if t.numel() != alpha.len() {
            return Err(Error::Dimension(format!("alpha has {} weights, model has {}", alpha.len(), t.numel())));
        }
        t.data_mut().copy_from_slice(alpha);
        Ok(())
    }

    /// Replaces every parameter value, keeping names and shapes.
    pub fn load_values(&mut self, values: &[(alloc::string::String, Tensor)]) -> Result<()> {
        if values.len() != self.store.len() {
            return Err(Error::Usage(format!(
                "checkpoint has {} parameters, model has {}",
                values.len(),
                self.store.len()
            )));
        }
        for (p, (name, t)) in self.store.iter_mut().zip(values) {
            if &p.name != name || p.tensor.shape() != t.shape() {
                return Err(Error::Usage(format!(
                    "checkpoint parameter `{name}` {:?} does not match model parameter `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}
