//! CoQA JSON reading and writing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sdnet_core::dialogue::{AnswerKind, Dialogue, Turn};
use sdnet_core::text::Span;

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
struct CoqaFile {
    #[serde(default)]
    version: String,
    data: Vec<CoqaStory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoqaStory {
    id: String,
    #[serde(default)]
    source: String,
    story: String,
    questions: Vec<CoqaQuestion>,
    answers: Vec<CoqaAnswer>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    additional_answers: BTreeMap<String, Vec<CoqaAnswer>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoqaQuestion {
    input_text: String,
    turn_id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoqaAnswer {
    #[serde(default = "no_span")]
    span_start: i64,
    #[serde(default = "no_span")]
    span_end: i64,
    #[serde(default)]
    span_text: String,
    input_text: String,
    turn_id: usize,
}

fn no_span() -> i64 {
    -1
}

fn story_to_dialogue(s: CoqaStory) -> CliResult<Dialogue> {
    if s.questions.len() != s.answers.len() {
        return Err(CliError::Data(format!(
            "story `{}`: {} questions but {} answers",
            s.id,
            s.questions.len(),
            s.answers.len()
        )));
    }
    let mut turns = Vec::with_capacity(s.questions.len());
    for (k, (q, a)) in s.questions.iter().zip(&s.answers).enumerate() {
        if q.turn_id != a.turn_id || q.turn_id != k + 1 {
            return Err(CliError::Data(format!(
                "story `{}`: turn {} has question turn_id {} and answer turn_id {}",
                s.id,
                k + 1,
                q.turn_id,
                a.turn_id
            )));
        }
        let span = (a.span_start >= 0 && a.span_end > a.span_start)
            .then(|| Span::new(a.span_start as usize, a.span_end as usize));
        let kind = AnswerKind::classify(&a.input_text, span.is_some());
        turns.push(Turn {
            turn_id: q.turn_id,
            question: q.input_text.clone(),
            answer_text: a.input_text.clone(),
            answer_span: if kind == AnswerKind::Span { span } else { None },
            answer_type: kind,
        });
    }
    let mut extra_answers = if s.additional_answers.is_empty() { Vec::new() } else { vec![Vec::new(); turns.len()] };
    for answers in s.additional_answers.values() {
        for a in answers {
            let slot = a.turn_id.checked_sub(1).and_then(|i| extra_answers.get_mut(i)).ok_or_else(|| {
                CliError::Data(format!("story `{}`: additional answer for unknown turn {}", s.id, a.turn_id))
            })?;
            slot.push(a.input_text.clone());
        }
    }
    let d = Dialogue { passage_id: s.id, domain: s.source, passage_text: s.story, turns, extra_answers };
    d.validate()?;
    Ok(d)
}

pub fn parse_coqa(text: &str) -> CliResult<Vec<Dialogue>> {
    let file: CoqaFile = serde_json::from_str(text).map_err(|e| CliError::Data(format!("CoQA JSON: {e}")))?;
    file.data.into_iter().map(story_to_dialogue).collect()
}

/// Reads a CoQA file; `field` names the config entry the path came from.
pub fn load_coqa(path: &Path, field: &str) -> CliResult<Vec<Dialogue>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::unreadable(field, path, e))?;
    parse_coqa(&text).map_err(|e| e.context(&path.display().to_string()))
}

fn char_to_byte(text: &str, c: usize) -> usize {
    text.char_indices().nth(c).map_or(text.len(), |(b, _)| b)
}

/// CoQA JSON for `dialogues`. Class answers are written with span `-1`.
pub fn to_coqa_json(dialogues: &[Dialogue]) -> String {
    let data = dialogues
        .iter()
        .map(|d| {
            let answer = |t: &Turn, text: &str| {
                let (s, e) = t.answer_span.map_or((-1, -1), |s| (s.start as i64, s.end as i64));
                let span_text = t.answer_span.map_or(String::new(), |s| {
                    d.passage_text[char_to_byte(&d.passage_text, s.start)..char_to_byte(&d.passage_text, s.end)].into()
                });
                CoqaAnswer { span_start: s, span_end: e, span_text, input_text: text.into(), turn_id: t.turn_id }
            };
            let mut additional = BTreeMap::new();
            let width = d.extra_answers.iter().map(Vec::len).max().unwrap_or(0);
            for r in 0..width {
                let list = d
                    .turns
                    .iter()
                    .zip(&d.extra_answers)
                    .filter_map(|(t, extra)| extra.get(r).map(|a| answer(t, a)))
                    .collect();
                additional.insert(r.to_string(), list);
            }
            CoqaStory {
                id: d.passage_id.clone(),
                source: d.domain.clone(),
                story: d.passage_text.clone(),
                questions: d
                    .turns
                    .iter()
                    .map(|t| CoqaQuestion { input_text: t.question.clone(), turn_id: t.turn_id })
                    .collect(),
                answers: d.turns.iter().map(|t| answer(t, &t.answer_text)).collect(),
                additional_answers: additional,
            }
        })
        .collect();
    serde_json::to_string_pretty(&CoqaFile { version: "1.0".into(), data }).expect("CoQA structures serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdnet_core::synthetic::overfit_corpus;

    const SAMPLE: &str = r#"{"version": "1.0", "data": [{
        "source": "wikipedia", "id": "p1",
        "story": "Tom has a red kite. Ann has a ball.",
        "questions": [
            {"input_text": "What does Tom have?", "turn_id": 1},
            {"input_text": "Does Ann have a ball?", "turn_id": 2},
            {"input_text": "Who is Bob?", "turn_id": 3}],
        "answers": [
            {"span_start": 4, "span_end": 18, "span_text": "has a red kite", "input_text": "a red kite", "turn_id": 1},
            {"span_start": 20, "span_end": 35, "span_text": "Ann has a ball.", "input_text": "Yes", "turn_id": 2},
            {"span_start": -1, "span_end": -1, "span_text": "unknown", "input_text": "unknown", "turn_id": 3}],
        "additional_answers": {
            "0": [{"span_start": 8, "span_end": 18, "span_text": "a red kite", "input_text": "red kite", "turn_id": 1},
                  {"span_start": 20, "span_end": 35, "span_text": "Ann has a ball.", "input_text": "yes", "turn_id": 2}]}
    }]}"#;

    #[test]
    fn reads_turns_types_and_references() {
        let d = &parse_coqa(SAMPLE).unwrap()[0];
        assert_eq!(d.domain, "wikipedia");
        let kinds: Vec<AnswerKind> = d.turns.iter().map(|t| t.answer_type).collect();
        assert_eq!(kinds, [AnswerKind::Span, AnswerKind::Yes, AnswerKind::Unknown]);
        assert_eq!(d.turns[0].answer_span, Some(Span::new(4, 18)));
        assert_eq!(d.turns[1].answer_span, None);
        assert_eq!(d.references(1), ["a red kite", "red kite"]);
        assert_eq!(d.references(3), ["unknown"]);
    }

    #[test]
    fn rejects_mismatched_turns() {
        let bad = SAMPLE.replace(r#""turn_id": 3}],"#, r#""turn_id": 4}],"#);
        assert!(matches!(parse_coqa(&bad), Err(CliError::Data(_))));
        assert!(matches!(parse_coqa("{"), Err(CliError::Data(_))));
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = overfit_corpus(3, 2);
        c[0].extra_answers = vec![vec!["x".into()]; 5];
        assert_eq!(parse_coqa(&to_coqa_json(&c)).unwrap(), c);
        let original = parse_coqa(SAMPLE).unwrap();
        assert_eq!(parse_coqa(&to_coqa_json(&original)).unwrap(), original);
    }
}
