//! The five commands, as library functions returning their results.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use sdnet_core::dialogue::{make_batches, Dialogue, PassageBatch};
use sdnet_core::embeddings::{ContextualEmbedder, WordVectorTable};
use sdnet_core::model::{prepare_passage, ModelConfig, PreparedPassage, SdnetModel};
use sdnet_core::synthetic::random_word_vectors;
use sdnet_core::tensor::AdamaxState;
use sdnet_core::text::TOKENIZER_VERSION;
use sdnet_core::training::{
    ablation_run, evaluate_dev, prepare_all, train, AblationSetup, AblationTable, DevReport, EpochRecord, GoldEcho,
    PredictionRecord, Predictor, RunLog, TrainHooks, Variant,
};

use crate::checkpoint::{config_digest, hex, Checkpoint, FrozenDigests};
use crate::config::RunConfig;
use crate::coqa::load_coqa;
use crate::error::{CliError, CliResult};
use crate::report::{render_report, write_predictions, FilePredictor};
use crate::runlog::{curve, read_runlog, render_curve, write_record};
use crate::vectors::load_word_vectors;

pub const CONFIG_ECHO: &str = "config.toml";
pub const RUNLOG: &str = "runlog.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Frozen inputs shared by every passage of a run.
pub struct Inputs {
    pub table: WordVectorTable,
    pub embedder: Option<Box<dyn ContextualEmbedder>>,
    pub frozen: FrozenDigests,
}

impl Inputs {
    pub fn embedder(&self) -> Option<&dyn ContextualEmbedder> {
        self.embedder.as_deref()
    }
}

pub struct Corpus {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
}

pub fn load_corpus(cfg: &RunConfig) -> CliResult<Corpus> {
    let train = load_coqa(&cfg.data.train, "data.train")?;
    let dev = cfg.data.dev.as_deref().map(|p| load_coqa(p, "data.dev")).transpose()?.unwrap_or_default();
    Ok(Corpus { train, dev })
}

pub fn load_inputs(cfg: &RunConfig, model: &ModelConfig, corpus: &Corpus) -> CliResult<Inputs> {
    let table = match &cfg.data.word_vectors {
        Some(p) => load_word_vectors(p, model.word_dim, "data.word_vectors")?,
        None => {
            let all: Vec<Dialogue> = corpus.train.iter().chain(&corpus.dev).cloned().collect();
            random_word_vectors(&all, model.word_dim, cfg.model_seed)?
        }
    };
    let embedder = if model.use_contextual {
        let e = cfg.contextual.build(model.contextual_layers, model.contextual_dim)?;
        if e.is_none() {
            return Err(CliError::Usage("contextual: kind = \"none\" but model.use_contextual = true".into()));
        }
        e
    } else {
        None
    };
    let frozen = FrozenDigests { word_vectors: table.digest(), embedder: embedder.as_ref().map_or(0, |e| e.digest()) };
    Ok(Inputs { table, embedder, frozen })
}

/// Tokenized batches, read from or written to `cache_dir` when given. The
/// cache key covers the dialogues, the history length and the tokenizer
/// version.
pub fn batches(dialogues: &[Dialogue], n_history: usize, cache_dir: Option<&Path>) -> CliResult<Vec<PassageBatch>> {
    let Some(dir) = cache_dir else {
        return Ok(make_batches(dialogues, n_history)?);
    };
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(dialogues).expect("dialogues serialize"));
    let key = hex(&h.finalize()[..12]);
    let path = dir.join(format!("batches-{key}-n{n_history}-tok{TOKENIZER_VERSION}.json"));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(b) = serde_json::from_slice(&bytes) {
            return Ok(b);
        }
        log::warn!("ignoring unreadable cache file {}", path.display());
    }
    let b = make_batches(dialogues, n_history)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io("cannot create cache dir", dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io("cannot write cache in", dir, e))?;
    serde_json::to_writer(BufWriter::new(tmp.as_file()), &b).map_err(|e| CliError::Data(format!("cache: {e}")))?;
    tmp.persist(&path).map_err(|e| CliError::io("cannot write cache", &path, e.error))?;
    Ok(b)
}

pub fn prepare(
    dialogues: &[Dialogue],
    model: &ModelConfig,
    inputs: &Inputs,
    cache_dir: Option<&Path>,
) -> CliResult<Vec<PreparedPassage>> {
    batches(dialogues, model.n_history, cache_dir)?
        .iter()
        .map(|b| Ok(prepare_passage(b, &inputs.table, inputs.embedder(), model)?))
        .collect()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("output_dir: cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io("cannot write", path, e))
}

struct RunHooks {
    start: Instant,
    epochs: usize,
    runlog: BufWriter<File>,
    runlog_path: PathBuf,
    ckpt_dir: PathBuf,
    frozen: FrozenDigests,
}

fn hook_err(e: CliError) -> sdnet_core::Error {
    sdnet_core::Error::Data(e.to_string())
}

impl TrainHooks for RunHooks {
    fn elapsed_secs(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch_end(
        &mut self,
        model: &SdnetModel,
        optimizer: &AdamaxState,
        record: &EpochRecord,
        is_best: bool,
    ) -> sdnet_core::Result<()> {
        write_record(&mut self.runlog, record)
            .map_err(|e| hook_err(CliError::io("cannot append to", &self.runlog_path, e)))?;
        let ckpt = Checkpoint::capture(model, optimizer, self.frozen, record.epoch as u64);
        ckpt.save(&self.ckpt_dir.join(LAST_CHECKPOINT)).map_err(hook_err)?;
        if is_best {
            ckpt.save(&self.ckpt_dir.join(BEST_CHECKPOINT)).map_err(hook_err)?;
        }
        let dev = record
            .dev_f1
            .map_or_else(String::new, |f| format!(" dev F1 {f:.2}{}", if is_best { " (best)" } else { "" }));
        log::info!(
            "epoch {}/{} loss {:.4}{dev} clip {:.2} [{:.1}s]",
            record.epoch,
            self.epochs,
            record.train_loss,
            record.clip_rate,
            record.wall_secs
        );
        Ok(())
    }
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub log: RunLog,
}

/// Trains from a config file, writing the resolved config, the run log and
/// checkpoints into the run directory.
pub fn cmd_train(config_path: &Path) -> CliResult<TrainOutcome> {
    let cfg = RunConfig::load(config_path)?;
    let corpus = load_corpus(&cfg)?;
    let inputs = load_inputs(&cfg, &cfg.model, &corpus)?;
    let cache = cfg.data.cache_dir.as_deref();
    let train_data = prepare(&corpus.train, &cfg.model, &inputs, cache)?;
    let dev_data = prepare(&corpus.dev, &cfg.model, &inputs, cache)?;
    create_dir(&cfg.output_dir)?;
    let ckpt_dir = cfg.checkpoint_dir();
    create_dir(&ckpt_dir)?;
    write_file(&cfg.output_dir.join(CONFIG_ECHO), &cfg.to_toml())?;
    let runlog_path = cfg.output_dir.join(RUNLOG);
    let runlog = File::create(&runlog_path).map_err(|e| CliError::io("cannot create", &runlog_path, e))?;
    let mut hooks = RunHooks {
        start: Instant::now(),
        epochs: cfg.train.epochs,
        runlog: BufWriter::new(runlog),
        runlog_path,
        ckpt_dir,
        frozen: inputs.frozen,
    };
    let mut model = SdnetModel::new(cfg.model.clone(), cfg.model_seed)?;
    log::info!(
        "training on {} passages ({} dev), {} parameters, run dir {}",
        train_data.len(),
        dev_data.len(),
        model.store.num_values(),
        cfg.output_dir.display()
    );
    let (log, _) = train(&mut model, &train_data, &dev_data, &cfg.train, &mut hooks)?;
    Ok(TrainOutcome { run_dir: cfg.output_dir, log })
}

/// A model restored from a checkpoint together with the frozen inputs it was
/// trained with.
pub struct Restored {
    pub model: SdnetModel,
    pub config: RunConfig,
    pub inputs: Inputs,
}

fn config_mismatch(ckpt: &ModelConfig, run: &ModelConfig) -> Vec<String> {
    let a = serde_json::to_value(ckpt).expect("config serializes");
    let b = serde_json::to_value(run).expect("config serializes");
    let (a, b) = (a.as_object().expect("object"), b.as_object().expect("object"));
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, v)| {
            format!(
                "model.{k} = {v} in the checkpoint, {} in the config",
                b.get(k).map_or("missing".into(), |x| x.to_string())
            )
        })
        .collect()
}

/// Loads a checkpoint and the run config it belongs to (by default the
/// `config.toml` echoed next to it), checking that they agree.
pub fn restore(checkpoint: &Path, config: Option<&Path>) -> CliResult<Restored> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let config_path = config
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_ECHO));
    let cfg = RunConfig::load(&config_path)?;
    if config_digest(&cfg.model).1 != config_digest(&ckpt.config).1 {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not match config {}: {}",
            checkpoint.display(),
            config_path.display(),
            config_mismatch(&ckpt.config, &cfg.model).join("; ")
        )));
    }
    let corpus =
        if cfg.data.word_vectors.is_some() { Corpus { train: vec![], dev: vec![] } } else { load_corpus(&cfg)? };
    let inputs = load_inputs(&cfg, &ckpt.config, &corpus)?;
    if inputs.frozen != ckpt.frozen {
        return Err(CliError::Usage(format!(
            "checkpoint {} was trained with different frozen inputs (word vectors {:016x} vs {:016x}, contextual embedder {:016x} vs {:016x})",
            checkpoint.display(),
            ckpt.frozen.word_vectors,
            inputs.frozen.word_vectors,
            ckpt.frozen.embedder,
            inputs.frozen.embedder
        )));
    }
    Ok(Restored { model: ckpt.to_model()?, config: cfg, inputs })
}

/// Where eval answers come from.
pub enum EvalSource {
    Checkpoint {
        path: PathBuf,
        config: Option<PathBuf>,
    },
    Predictions(PathBuf),
    /// Answers every question with its main gold answer.
    GoldEcho,
}

/// Passages prepared only for their questions and references.
fn reference_passages(dialogues: &[Dialogue]) -> CliResult<Vec<PreparedPassage>> {
    let cfg = ModelConfig { use_contextual: false, word_dim: 1, n_history: 0, ..ModelConfig::default() };
    Ok(prepare_all(dialogues, &cfg, &WordVectorTable::new(1)?, None)?)
}

/// Scores `data` and, with `out`, writes `predictions.json`, `report.json`
/// and `report.txt` there.
pub fn cmd_eval(source: &EvalSource, data: &Path, out: Option<&Path>) -> CliResult<(DevReport, String)> {
    let dialogues = load_coqa(data, "data")?;
    let (report, label) = match source {
        EvalSource::Checkpoint { path, config } => {
            let r = restore(path, config.as_deref())?;
            let passages = prepare(&dialogues, &r.model.config, &r.inputs, None)?;
            (evaluate_dev(&r.model, &passages)?, "SDNet")
        }
        EvalSource::Predictions(p) => {
            (evaluate_dev(&FilePredictor::load(p)?, &reference_passages(&dialogues)?)?, "Predictions")
        }
        EvalSource::GoldEcho => (evaluate_dev(&GoldEcho, &reference_passages(&dialogues)?)?, "Gold echo"),
    };
    let text = render_report(label, &report);
    if let Some(dir) = out {
        create_dir(dir)?;
        write_predictions(&dir.join("predictions.json"), &report.predictions)?;
        write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        write_file(&dir.join("report.txt"), &text)?;
    }
    Ok((report, text))
}

pub fn cmd_predict(
    checkpoint: &Path,
    config: Option<&Path>,
    data: &Path,
    out: &Path,
) -> CliResult<Vec<PredictionRecord>> {
    let r = restore(checkpoint, config)?;
    let dialogues = load_coqa(data, "data")?;
    let passages = prepare(&dialogues, &r.model.config, &r.inputs, None)?;
    let mut preds = Vec::new();
    for p in &passages {
        for (q, pred) in p.questions.iter().zip(r.model.predict_passage(p)?) {
            preds.push(PredictionRecord {
                id: p.batch.passage_id.clone(),
                turn_id: q.turn_id,
                answer: pred.answer_text,
                answer_type: pred.answer_type,
                probability: pred.probability,
            });
        }
    }
    write_predictions(out, &preds)?;
    Ok(preds)
}

struct ProgressHooks;

impl TrainHooks for ProgressHooks {
    fn on_epoch_end(&mut self, _: &SdnetModel, _: &AdamaxState, r: &EpochRecord, _: bool) -> sdnet_core::Result<()> {
        log::info!("epoch {} loss {:.4}", r.epoch, r.train_loss);
        Ok(())
    }
}

/// Trains every variant and writes `ablation.txt` and `ablation.json` into
/// the run directory.
pub fn cmd_ablate(config_path: &Path, variants: &[String]) -> CliResult<AblationTable> {
    if variants.is_empty() {
        return Err(CliError::Usage(format!(
            "no variants given; valid variants: {}",
            sdnet_core::training::VARIANT_NAMES.join(", ")
        )));
    }
    let variants = variants.iter().map(|v| Variant::parse(v)).collect::<sdnet_core::Result<Vec<_>>>()?;
    let cfg = RunConfig::load(config_path)?;
    let corpus = load_corpus(&cfg)?;
    if corpus.dev.is_empty() {
        return Err(CliError::Usage("data.dev: ablation needs a dev set".into()));
    }
    let inputs = load_inputs(&cfg, &cfg.model, &corpus)?;
    let setup = AblationSetup {
        base: &cfg.model,
        train: &cfg.train,
        model_seed: cfg.model_seed,
        train_data: &corpus.train,
        dev_data: &corpus.dev,
        table: &inputs.table,
        embedder: inputs.embedder(),
    };
    let table = ablation_run(&setup, &variants, &mut ProgressHooks)?;
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("ablation.txt"), &table.render())?;
    write_file(
        &cfg.output_dir.join("ablation.json"),
        &serde_json::to_string_pretty(&table).expect("table serializes"),
    )?;
    Ok(table)
}

/// Two-column `epoch dev_f1` text from a run log, also written to `out`.
pub fn cmd_curve(runlog: &Path, out: Option<&Path>) -> CliResult<String> {
    let text = render_curve(&curve(&read_runlog(runlog)?));
    if let Some(p) = out {
        write_file(p, &text)?;
    }
    Ok(text)
}
