//! Text rendering of evaluation reports and prediction-file IO.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sdnet_core::dialogue::AnswerKind;
use sdnet_core::model::{Prediction, PreparedPassage};
use sdnet_core::training::{DevReport, PredictionRecord, Predictor};

use crate::error::{CliError, CliResult};

/// Domain columns followed by `Overall`, then the per-answer-type breakdown.
pub fn render_report(model: &str, r: &DevReport) -> String {
    let mut cols: Vec<(String, f64)> = r.report.per_domain.iter().map(|(d, s)| (d.clone(), s.f1)).collect();
    cols.push(("Overall".into(), r.report.overall));
    let w = model.chars().count().max(5);
    let widths: Vec<usize> = cols.iter().map(|(d, _)| d.chars().count().max(6)).collect();
    let mut s = format!("{:<w$}", "Model");
    for ((d, _), cw) in cols.iter().zip(&widths) {
        s += &format!("  {d:>cw$}");
    }
    s += &format!("\n{model:<w$}");
    for ((_, f), cw) in cols.iter().zip(&widths) {
        s += &format!("  {f:>cw$.1}");
    }
    s += &format!("\n\n{:<8}  {:>6}  {:>6}\n", "Answer", "F1", "Turns");
    for (kind, score) in &r.per_type {
        s += &format!("{kind:<8}  {:>6.1}  {:>6}\n", score.f1, score.turns);
    }
    s += &format!("{:<8}  {:>6.1}  {:>6}\n", "all", r.report.overall, r.report.turns);
    s
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> CliResult<()> {
    let text = serde_json::to_string_pretty(preds).expect("predictions serialize");
    std::fs::write(path, text).map_err(|e| CliError::io("cannot write predictions", path, e))
}

/// One entry of a prediction file; only `id`, `turn_id` and `answer` are
/// required, as in CoQA evaluation input.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    turn_id: usize,
    answer: String,
    #[serde(default)]
    answer_type: Option<AnswerKind>,
    #[serde(default)]
    probability: Option<f64>,
}

/// Answers read from a prediction file.
pub struct FilePredictor {
    answers: HashMap<(String, usize), PredictionLine>,
}

impl FilePredictor {
    pub fn parse(text: &str) -> CliResult<Self> {
        let lines: Vec<PredictionLine> =
            serde_json::from_str(text).map_err(|e| CliError::Data(format!("prediction file: {e}")))?;
        let mut answers = HashMap::new();
        for l in lines {
            let key = (l.id.clone(), l.turn_id);
            if answers.insert(key, l.clone()).is_some() {
                return Err(CliError::Data(format!("duplicate prediction for `{}` turn {}", l.id, l.turn_id)));
            }
        }
        Ok(Self { answers })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::unreadable("predictions", path, e))?;
        Self::parse(&text).map_err(|e| e.context(&path.display().to_string()))
    }
}

impl Predictor for FilePredictor {
    fn predict_passage(&self, passage: &PreparedPassage) -> sdnet_core::Result<Vec<Prediction>> {
        passage
            .questions
            .iter()
            .map(|q| {
                let l = self.answers.get(&(passage.batch.passage_id.clone(), q.turn_id)).ok_or_else(|| {
                    sdnet_core::Error::Data(format!(
                        "no prediction for `{}` turn {}",
                        passage.batch.passage_id, q.turn_id
                    ))
                })?;
                Ok(Prediction {
                    answer_type: l.answer_type.unwrap_or_else(|| AnswerKind::classify(&l.answer, true)),
                    span: None,
                    probability: l.probability.unwrap_or(1.0),
                    answer_text: l.answer.clone(),
                })
            })
            .collect()
    }
}
