//! Per-passage training with Adamax and gradient clipping, dev evaluation
//! and ablation sweeps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dialogue::{make_batches, AnswerKind, Dialogue};
use crate::embeddings::{ContextualEmbedder, WordVectorTable};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, f1_multi, DomainScore, EvalRecord, F1Report};
use crate::model::{
    passage_loss, predict, prepare_passage, question_forward, ModelConfig, Prediction, PreparedPassage, SdnetModel,
};
use crate::tensor::{adamax_step, clip_gradients, AdamaxState, Graph, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Where the companion crate writes checkpoints; unused here.
    pub checkpoint_dir: Option<String>,
    /// Epochs between dev evaluations; the last epoch is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.002,
            betas: (0.9, 0.999),
            eps: 1e-8,
            clip_norm: 10.0,
            seed: 1,
            checkpoint_dir: None,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("train.epochs must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Parameter("train.eval_every must be positive".into()));
        }
        if [self.lr, self.clip_norm, self.eps].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::Parameter("train.lr, train.eps and train.clip_norm must be positive".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Parameter(format!("train.betas ({b1}, {b2}) outside [0, 1)")));
        }
        Ok(())
    }

    pub fn optimizer(&self, model: &SdnetModel) -> AdamaxState {
        AdamaxState::new(&model.store, self.lr, self.betas.0, self.betas.1, self.eps)
    }
}

/// One completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-question loss over the epoch.
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
    pub wall_secs: f64,
    /// Fraction of steps whose gradient was rescaled.
    pub clip_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().filter(|r| r.dev_f1.is_some()).fold(None, |best: Option<&EpochRecord>, r| match best {
            Some(b) if b.dev_f1 >= r.dev_f1 => Some(b),
            _ => Some(r),
        })
    }
}

/// Callbacks from the training loop. The core has no clock or file system,
/// so both come from here.
pub trait TrainHooks {
    fn elapsed_secs(&mut self) -> f64 {
        0.0
    }

    fn on_step(&mut self, _epoch: usize, _step: usize, _loss: f64) {}

    fn on_epoch_end(
        &mut self,
        _model: &SdnetModel,
        _optimizer: &AdamaxState,
        _record: &EpochRecord,
        _is_best: bool,
    ) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Runs `config.epochs` epochs over `train`, one optimizer step per passage.
///
/// Passage order is reshuffled every epoch and dropout masks are drawn from
/// the same training stream of `config.seed`.
pub fn train(
    model: &mut SdnetModel,
    train: &[PreparedPassage],
    dev: &[PreparedPassage],
    config: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<(RunLog, AdamaxState)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = crate::seeded_rng(config.seed, 1);
    let mut opt = config.optimizer(model);
    let mut log = RunLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last_finite = None;
    let mut best_f1 = f64::NEG_INFINITY;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut questions, mut clipped) = (0.0, 0usize, 0usize);
        for (step, &i) in order.iter().enumerate() {
            let p = &train[i];
            let mut g = Graph::new();
            let (loss, _) = passage_loss(&mut g, model, p, Mode::Train, &mut rng)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss {value} on passage `{}` (epoch {epoch}, step {}); last finite loss {}",
                    p.batch.passage_id,
                    step + 1,
                    last_finite.map_or_else(|| String::from("none"), |v: f64| format!("{v}"))
                )));
            }
            last_finite = Some(value);
            let grads = g.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate(&g, &grads);
            if clip_gradients(&mut model.store, config.clip_norm) < 1.0 {
                clipped += 1;
            }
            adamax_step(&mut model.store, &mut opt)?;
            loss_sum += value;
            questions += p.questions.len();
            hooks.on_step(epoch, step + 1, value);
        }
        let dev_f1 = if !dev.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            Some(evaluate_dev(model, dev)?.report.overall)
        } else {
            None
        };
        let is_best = dev_f1.is_some_and(|f| f > best_f1);
        if let Some(f) = dev_f1.filter(|_| is_best) {
            best_f1 = f;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / questions as f64,
            dev_f1,
            wall_secs: hooks.elapsed_secs(),
            clip_rate: clipped as f64 / train.len() as f64,
        };
        hooks.on_epoch_end(model, &opt, &record, is_best)?;
        log.records.push(record);
    }
    Ok((log, opt))
}

/// Something that answers every question of a prepared passage.
pub trait Predictor {
    fn predict_passage(&self, passage: &PreparedPassage) -> Result<Vec<Prediction>>;
}

impl Predictor for SdnetModel {
    fn predict_passage(&self, passage: &PreparedPassage) -> Result<Vec<Prediction>> {
        let mut rng = crate::seeded_rng(0, 1);
        (0..passage.questions.len())
            .map(|q| {
                let mut g = Graph::new();
                let out = question_forward(&mut g, self, passage, q, Mode::Eval, &mut rng)?;
                predict(g.data(out.start), g.data(out.end), &passage.batch, self.config.max_span_len)
            })
            .collect()
    }
}

/// Debug predictor that answers with the main gold answer.
pub struct GoldEcho;

impl Predictor for GoldEcho {
    fn predict_passage(&self, passage: &PreparedPassage) -> Result<Vec<Prediction>> {
        Ok(passage
            .questions
            .iter()
            .map(|q| Prediction {
                answer_type: q.gold.kind,
                span: (q.gold.kind == AnswerKind::Span).then_some((q.gold.start, q.gold.end)),
                probability: 1.0,
                answer_text: q.references.first().cloned().unwrap_or_default(),
            })
            .collect())
    }
}

/// One predicted turn, ready to be written out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub turn_id: usize,
    pub answer: String,
    pub answer_type: AnswerKind,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevReport {
    pub report: F1Report,
    /// Keyed by gold answer type.
    pub per_type: BTreeMap<String, DomainScore>,
    pub records: Vec<EvalRecord>,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate_dev(predictor: &dyn Predictor, dev: &[PreparedPassage]) -> Result<DevReport> {
    if dev.iter().all(|p| p.questions.is_empty()) {
        return Err(Error::Data("dev set is empty".into()));
    }
    let mut records = Vec::new();
    let mut predictions = Vec::new();
    let mut by_type: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for p in dev {
        let preds = predictor.predict_passage(p)?;
        for (q, pred) in p.questions.iter().zip(preds) {
            let f = f1_multi(&pred.answer_text, &q.references)?;
            let e = by_type.entry(q.gold.kind.as_str().into()).or_default();
            e.0 += f;
            e.1 += 1;
            records.push(EvalRecord {
                passage_id: p.batch.passage_id.clone(),
                turn_id: q.turn_id,
                predicted: pred.answer_text.clone(),
                golds: q.references.clone(),
                domain: p.batch.domain.clone(),
            });
            predictions.push(PredictionRecord {
                id: p.batch.passage_id.clone(),
                turn_id: q.turn_id,
                answer: pred.answer_text,
                answer_type: pred.answer_type,
                probability: pred.probability,
            });
        }
    }
    let report = aggregate(&records)?;
    let per_type =
        by_type.into_iter().map(|(k, (s, n))| (k, DomainScore { f1: 100.0 * s / n as f64, turns: n })).collect();
    Ok(DevReport { report, per_type, records, predictions })
}

/// Batches and prepares every dialogue.
pub fn prepare_all(
    dialogues: &[Dialogue],
    config: &ModelConfig,
    table: &WordVectorTable,
    embedder: Option<&dyn ContextualEmbedder>,
) -> Result<Vec<PreparedPassage>> {
    make_batches(dialogues, config.n_history)?.iter().map(|b| prepare_passage(b, table, embedder, config)).collect()
}

/// A single-factor change from the base configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoVariationalDropout,
    NoQuestionSelfAttention,
    LastLayerOnly,
    NoContextual,
    History(usize),
}

pub const VARIANT_NAMES: &[&str] = &[
    "full",
    "no_variational_dropout",
    "no_question_self_attention",
    "last_layer_only",
    "no_contextual",
    "n0",
    "n1",
    "n2",
    "n3",
];

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "full" => Variant::Full,
            "no_variational_dropout" => Variant::NoVariationalDropout,
            "no_question_self_attention" => Variant::NoQuestionSelfAttention,
            "last_layer_only" => Variant::LastLayerOnly,
            "no_contextual" => Variant::NoContextual,
            "n0" => Variant::History(0),
            "n1" => Variant::History(1),
            "n2" => Variant::History(2),
            "n3" => Variant::History(3),
            _ => {
                return Err(Error::Usage(format!(
                    "unknown variant `{name}`; valid variants: {}",
                    VARIANT_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoVariationalDropout => "no_variational_dropout".into(),
            Variant::NoQuestionSelfAttention => "no_question_self_attention".into(),
            Variant::LastLayerOnly => "last_layer_only".into(),
            Variant::NoContextual => "no_contextual".into(),
            Variant::History(n) => format!("n{n}"),
        }
    }

    /// Row label in the published tables.
    pub fn label(self) -> String {
        match self {
            Variant::Full => "SDNet".into(),
            Variant::NoVariationalDropout => "--Variational dropout".into(),
            Variant::NoQuestionSelfAttention => "--Question self attention".into(),
            Variant::LastLayerOnly => "Using last layer of BERT output (no weighted sum)".into(),
            Variant::NoContextual => "--BERT".into(),
            Variant::History(n) => format!("N = {n}"),
        }
    }

    /// Published dev F1 for the row.
    pub fn reference_f1(self) -> Option<f64> {
        match self {
            Variant::Full => Some(77.99),
            Variant::NoVariationalDropout => Some(77.75),
            Variant::NoQuestionSelfAttention => Some(77.24),
            Variant::LastLayerOnly => Some(76.24),
            Variant::NoContextual => Some(70.84),
            Variant::History(0) => Some(69.43),
            Variant::History(1) => Some(76.70),
            Variant::History(2) => Some(77.99),
            Variant::History(3) => Some(77.39),
            Variant::History(_) => None,
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoVariationalDropout => c.variational_dropout = false,
            Variant::NoQuestionSelfAttention => c.question_self_attention = false,
            Variant::LastLayerOnly => c.last_layer_only = true,
            Variant::NoContextual => c.use_contextual = false,
            Variant::History(n) => c.n_history = n,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub label: String,
    pub dev_f1: f64,
    pub reference_f1: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aligned text table: label, dev F1 here, published F1.
    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<w$}  {:>8}  {:>9}\n", "Model", "F1", "reference");
        for r in &self.rows {
            let reference = r.reference_f1.map_or_else(|| String::from("-"), |v| format!("{v:.2}"));
            out += &format!("{:<w$}  {:>8.2}  {:>9}\n", r.label, r.dev_f1, reference);
        }
        out
    }
}

/// Data and settings shared by every ablation variant.
pub struct AblationSetup<'a> {
    pub base: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub model_seed: u64,
    pub train_data: &'a [Dialogue],
    pub dev_data: &'a [Dialogue],
    pub table: &'a WordVectorTable,
    pub embedder: Option<&'a dyn ContextualEmbedder>,
}

/// Trains each variant from the same seeds and data and reports its final
/// dev F1.
pub fn ablation_run(
    setup: &AblationSetup<'_>,
    variants: &[Variant],
    hooks: &mut dyn TrainHooks,
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::Usage(format!("no variants given; valid variants: {}", VARIANT_NAMES.join(", "))));
    }
    if setup.dev_data.is_empty() {
        return Err(Error::Data("ablation needs a non-empty dev set".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = v.apply(setup.base);
        let train = prepare_all(setup.train_data, &cfg, setup.table, setup.embedder)?;
        let dev = prepare_all(setup.dev_data, &cfg, setup.table, setup.embedder)?;
        let mut model = SdnetModel::new(cfg, setup.model_seed)?;
        let (log, _) = self::train(&mut model, &train, &[], setup.train, hooks)?;
        let report = evaluate_dev(&model, &dev)?;
        rows.push(AblationRow {
            variant: v.name(),
            label: v.label(),
            dev_f1: report.report.overall,
            reference_f1: v.reference_f1(),
            final_train_loss: log.records.last().map_or(f64::NAN, |r| r.train_loss),
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::MockEmbedder;
    use crate::synthetic::{overfit_corpus, random_word_vectors, tiny_model_config};
    use alloc::vec;

    struct Counter {
        steps: usize,
        epochs: Vec<usize>,
    }

    impl TrainHooks for Counter {
        fn on_step(&mut self, _: usize, _: usize, _: f64) {
            self.steps += 1;
        }
        fn on_epoch_end(&mut self, _: &SdnetModel, _: &AdamaxState, r: &EpochRecord, _: bool) -> Result<()> {
            self.epochs.push(r.epoch);
            Ok(())
        }
    }

    fn setup(passages: usize) -> (ModelConfig, Vec<PreparedPassage>) {
        let cfg = tiny_model_config(6, 2, 4);
        let corpus = overfit_corpus(passages, 3);
        let table = random_word_vectors(&corpus, 6, 0).unwrap();
        let emb = MockEmbedder::new(1, 2, 4).unwrap();
        let data = prepare_all(&corpus, &cfg, &table, Some(&emb)).unwrap();
        (cfg, data)
    }

    #[test]
    fn defaults() {
        let t = TrainConfig::default();
        assert_eq!((t.epochs, t.lr, t.betas, t.eps, t.clip_norm), (30, 0.002, (0.9, 0.999), 1e-8, 10.0));
        assert!(TrainConfig { epochs: 0, ..t.clone() }.validate().is_err());
        assert!(TrainConfig { betas: (1.0, 0.9), ..t }.validate().is_err());
    }

    #[test]
    fn one_passage_two_epochs_is_two_steps() {
        let (cfg, data) = setup(1);
        let mut model = SdnetModel::new(cfg, 0).unwrap();
        let tc = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let mut hooks = Counter { steps: 0, epochs: vec![] };
        let (log, opt) = train(&mut model, &data, &[], &tc, &mut hooks).unwrap();
        assert_eq!(opt.step_count, 2);
        assert_eq!(hooks.steps, 2);
        assert_eq!(hooks.epochs, [1, 2]);
        assert_eq!(log.records.len(), 2);
        assert!(log.records.iter().all(|r| r.dev_f1.is_none()));
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let (cfg, data) = setup(2);
        let run = || {
            let mut model = SdnetModel::new(cfg.clone(), 4).unwrap();
            let tc = TrainConfig { epochs: 3, seed: 9, ..TrainConfig::default() };
            let (log, _) = train(&mut model, &data, &data, &tc, &mut NoHooks).unwrap();
            (log, model.store)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn loss_drops_on_toy_data() {
        let (cfg, data) = setup(2);
        let mut model = SdnetModel::new(cfg, 1).unwrap();
        let tc = TrainConfig { epochs: 5, lr: 0.01, ..TrainConfig::default() };
        let (log, _) = train(&mut model, &data, &[], &tc, &mut NoHooks).unwrap();
        assert!(log.records[4].train_loss < log.records[0].train_loss, "{:?}", log.records);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let (cfg, data) = setup(1);
        let mut model = SdnetModel::new(cfg, 1).unwrap();
        assert!(matches!(train(&mut model, &[], &[], &TrainConfig::default(), &mut NoHooks), Err(Error::Data(_))));
        assert!(matches!(evaluate_dev(&model, &[]), Err(Error::Data(_))));
        let _ = data;
    }

    #[test]
    fn gold_echo_scores_one_hundred() {
        let (_, data) = setup(3);
        let r = evaluate_dev(&GoldEcho, &data).unwrap();
        assert_eq!(r.report.overall, 100.0);
        assert_eq!(r.report.turns, 15);
        assert!(r.per_type.values().all(|s| s.f1 == 100.0));
    }

    #[test]
    fn breakdown_matches_recomputation() {
        let (cfg, data) = setup(3);
        let model = SdnetModel::new(cfg, 2).unwrap();
        let r = evaluate_dev(&model, &data).unwrap();
        let scores: Vec<f64> = r.records.iter().map(|e| f1_multi(&e.predicted, &e.golds).unwrap()).collect();
        let mean = 100.0 * scores.iter().sum::<f64>() / scores.len() as f64;
        assert!((r.report.overall - mean).abs() < 1e-9);
        let weighted: f64 = r.per_type.values().map(|s| s.f1 * s.turns as f64).sum::<f64>() / 15.0;
        assert!((weighted - mean).abs() < 1e-9);
    }

    #[test]
    fn variant_names_round_trip() {
        for n in VARIANT_NAMES {
            assert_eq!(Variant::parse(n).unwrap().name(), *n);
        }
        let err = Variant::parse("bogus").unwrap_err();
        assert!(matches!(&err, Error::Usage(m) if m.contains("no_contextual")));
        assert_eq!(Variant::History(0).reference_f1(), Some(69.43));
        assert_eq!(Variant::History(2).reference_f1(), Some(77.99));
        let base = ModelConfig::default();
        assert!(Variant::LastLayerOnly.apply(&base).last_layer_only);
        assert_eq!(Variant::History(3).apply(&base).n_history, 3);
    }

    #[test]
    fn ablation_table_shape() {
        let cfg = tiny_model_config(6, 2, 4);
        let corpus = overfit_corpus(2, 5);
        let table = random_word_vectors(&corpus, 6, 0).unwrap();
        let emb = MockEmbedder::new(1, 2, 4).unwrap();
        let tc = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let setup = AblationSetup {
            base: &cfg,
            train: &tc,
            model_seed: 0,
            train_data: &corpus,
            dev_data: &corpus,
            table: &table,
            embedder: Some(&emb),
        };
        let variants: Vec<Variant> = (0..4).map(Variant::History).collect();
        let t = ablation_run(&setup, &variants, &mut NoHooks).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t, ablation_run(&setup, &variants, &mut NoHooks).unwrap());
        let text = t.render();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("69.43"));
        assert!(matches!(ablation_run(&setup, &[], &mut NoHooks), Err(Error::Usage(_))));
    }
}
