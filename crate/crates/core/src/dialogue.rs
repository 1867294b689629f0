//! Dialogues, history reformulation, token features and per-passage batches.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{f1_single, normalize_answer};
use crate::text::{tokenize, Span, TokenRecord, ANSWER_MARKER, QUESTION_MARKER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Span,
    Yes,
    No,
    Unknown,
}

impl AnswerKind {
    /// Offset of the class slot appended after the context positions.
    pub fn class_offset(self) -> Option<usize> {
        match self {
            AnswerKind::Span => None,
            AnswerKind::Yes => Some(0),
            AnswerKind::No => Some(1),
            AnswerKind::Unknown => Some(2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerKind::Span => "span",
            AnswerKind::Yes => "yes",
            AnswerKind::No => "no",
            AnswerKind::Unknown => "unknown",
        }
    }

    /// Answer type from the answer text and whether a usable span exists.
    pub fn classify(answer_text: &str, has_span: bool) -> Self {
        let norm = normalize_answer(answer_text);
        match norm.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["yes"] => AnswerKind::Yes,
            ["no"] => AnswerKind::No,
            ["unknown"] | ["unknow"] => AnswerKind::Unknown,
            _ if !has_span => AnswerKind::Unknown,
            _ => AnswerKind::Span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: usize,
    pub question: String,
    pub answer_text: String,
    /// Char range into the passage.
    pub answer_span: Option<Span>,
    pub answer_type: AnswerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub passage_id: String,
    pub domain: String,
    pub passage_text: String,
    pub turns: Vec<Turn>,
    /// Additional reference answers per turn (evaluation only).
    pub extra_answers: Vec<Vec<String>>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        let len = self.passage_text.chars().count();
        for (k, t) in self.turns.iter().enumerate() {
            if t.answer_type == AnswerKind::Span {
                let s = t.answer_span.ok_or_else(|| {
                    Error::Data(format!("{}: span answer at turn {} has no span", self.passage_id, k + 1))
                })?;
                if s.start >= s.end || s.end > len {
                    return Err(Error::Data(format!(
                        "{}: span {}..{} at turn {} outside passage of {len} chars",
                        self.passage_id,
                        s.start,
                        s.end,
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Main answer followed by any additional references for turn `k` (1-based).
    pub fn references(&self, k: usize) -> Vec<String> {
        let mut refs = alloc::vec![self.turns[k - 1].answer_text.clone()];
        if let Some(extra) = self.extra_answers.get(k - 1) {
            refs.extend(extra.iter().cloned());
        }
        refs
    }
}

/// DrQA-style per-token features of a context word.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Surface, lowercase and lemma match against any question token.
    pub exact_match: [bool; 3],
    pub norm_tf: f64,
}

impl FeatureVector {
    pub const WIDTH: usize = 4;
}

/// Ground truth for one question; `start..=end` token indices for spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub kind: AnswerKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReformulatedExample {
    /// 1-based turn index.
    pub turn: usize,
    pub turn_id: usize,
    pub question_tokens: Vec<TokenRecord>,
    pub context_tokens: Arc<[TokenRecord]>,
    pub features: Vec<FeatureVector>,
    pub gold: Gold,
    pub references: Vec<String>,
}

pub fn compute_features(context: &[TokenRecord], question: &[TokenRecord]) -> Vec<FeatureVector> {
    let surface: BTreeSet<&str> = question.iter().map(|t| t.text.as_str()).collect();
    let lower: BTreeSet<&str> = question.iter().map(|t| t.lower.as_str()).collect();
    let lemma: BTreeSet<&str> = question.iter().map(|t| t.lemma.as_str()).collect();
    let mut counts = alloc::collections::BTreeMap::<&str, usize>::new();
    for t in context {
        *counts.entry(t.lower.as_str()).or_default() += 1;
    }
    let m = context.len() as f64;
    context
        .iter()
        .map(|t| FeatureVector {
            exact_match: [
                surface.contains(t.text.as_str()),
                lower.contains(t.lower.as_str()),
                lemma.contains(t.lemma.as_str()),
            ],
            norm_tf: counts[t.lower.as_str()] as f64 / m,
        })
        .collect()
}

/// Minimal token window covering a char span, refined to the sub-window with
/// the best F1 against `answer_text` when the two disagree.
pub fn project_span(context: &[TokenRecord], span: Span, answer_text: &str) -> Option<(usize, usize)> {
    let covering: Vec<usize> =
        context.iter().enumerate().filter(|(_, t)| t.char_range.overlaps(&span)).map(|(i, _)| i).collect();
    let (&first, &last) = (covering.first()?, covering.last()?);
    let answer = normalize_answer(answer_text);
    let window_norm =
        |a: usize, b: usize| -> Vec<String> { context[a..=b].iter().flat_map(|t| normalize_answer(&t.text)).collect() };
    if answer.is_empty() || window_norm(first, last) == answer {
        return Some((first, last));
    }
    let mut best = (0.0, first, last);
    for a in first..=last {
        for b in a..=last {
            let f = f1_single(&window_norm(a, b), &answer);
            if f > best.0 || (f == best.0 && b - a < best.2 - best.1) {
                best = (f, a, b);
            }
        }
    }
    Some((best.1, best.2))
}

fn marker_token(text: &str) -> TokenRecord {
    TokenRecord::marker(text)
}

/// Builds the question for turn `k` (1-based) by prepending the previous `n`
/// rounds: `<Q> Q_{k−n} <A> A_{k−n} … <Q> Q_{k−1} <A> A_{k−1} <Q> Q_k`,
/// truncated at the start of the dialogue. History uses gold answers.
pub fn reformulate(dialogue: &Dialogue, k: usize, n_history: usize) -> Result<ReformulatedExample> {
    let context: Arc<[TokenRecord]> = tokenize(&dialogue.passage_text).into();
    reformulate_with_context(dialogue, &context, k, n_history)
}

pub fn reformulate_with_context(
    dialogue: &Dialogue,
    context: &Arc<[TokenRecord]>,
    k: usize,
    n_history: usize,
) -> Result<ReformulatedExample> {
    if k == 0 || k > dialogue.turns.len() {
        return Err(Error::Usage(format!(
            "turn {k} out of range for `{}` with {} turns",
            dialogue.passage_id,
            dialogue.turns.len()
        )));
    }
    if context.is_empty() {
        return Err(Error::Data(format!("passage `{}` has no tokens", dialogue.passage_id)));
    }
    let first = k.saturating_sub(n_history).max(1);
    let mut question = Vec::new();
    for j in first..k {
        let t = &dialogue.turns[j - 1];
        question.push(marker_token(QUESTION_MARKER));
        question.extend(tokenize(&t.question));
        question.push(marker_token(ANSWER_MARKER));
        question.extend(tokenize(&t.answer_text));
    }
    let turn = &dialogue.turns[k - 1];
    question.push(marker_token(QUESTION_MARKER));
    question.extend(tokenize(&turn.question));

    let mut kind = turn.answer_type;
    let (mut start, mut end) = (0, 0);
    if kind == AnswerKind::Span {
        match turn.answer_span.and_then(|s| project_span(context, s, &turn.answer_text)) {
            Some((s, e)) => (start, end) = (s, e),
            None => kind = AnswerKind::Unknown,
        }
    }
    let features = compute_features(context, &question);
    Ok(ReformulatedExample {
        turn: k,
        turn_id: turn.turn_id,
        question_tokens: question,
        context_tokens: Arc::clone(context),
        features,
        gold: Gold { kind, start, end },
        references: dialogue.references(k),
    })
}

/// All questions of one passage; the passage is tokenized once and shared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageBatch {
    pub passage_id: String,
    pub domain: String,
    pub passage_text: String,
    pub context: Arc<[TokenRecord]>,
    pub examples: Vec<ReformulatedExample>,
}

impl PassageBatch {
    /// Passage text covered by context tokens `start..=end`.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let (a, b) = (self.context[start].byte_range.start, self.context[end].byte_range.end);
        self.passage_text[a..b].into()
    }
}

/// One batch per passage, in input order.
pub fn make_batches(dialogues: &[Dialogue], n_history: usize) -> Result<Vec<PassageBatch>> {
    dialogues
        .iter()
        .map(|d| {
            let context: Arc<[TokenRecord]> = tokenize(&d.passage_text).into();
            let examples = (1..=d.turns.len())
                .map(|k| reformulate_with_context(d, &context, k, n_history))
                .collect::<Result<Vec<_>>>()?;
            Ok(PassageBatch {
                passage_id: d.passage_id.clone(),
                domain: d.domain.clone(),
                passage_text: d.passage_text.clone(),
                context,
                examples,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn dialogue(n_turns: usize) -> Dialogue {
        let passage = "Tom has a red kite. The kite is in the garden. Ann has a ball.".to_string();
        let turns = (1..=n_turns)
            .map(|k| {
                let (q, a, s) = match k % 3 {
                    1 => ("What does Tom have?", "a red kite", Some(Span::new(8, 18))),
                    2 => ("Where is it?", "in the garden", Some(Span::new(32, 45))),
                    _ => ("Does Ann have a ball?", "yes", None),
                };
                Turn {
                    turn_id: k,
                    question: q.into(),
                    answer_text: a.into(),
                    answer_span: s,
                    answer_type: AnswerKind::classify(a, s.is_some()),
                }
            })
            .collect();
        Dialogue { passage_id: "p1".into(), domain: "test".into(), passage_text: passage, turns, extra_answers: vec![] }
    }

    fn texts(ex: &ReformulatedExample) -> Vec<String> {
        ex.question_tokens.iter().map(|t| t.text.clone()).collect()
    }

    #[test]
    fn no_history_keeps_only_current_question() {
        let mut d = dialogue(3);
        d.turns[2].question = "Who?".into();
        let ex = reformulate(&d, 3, 0).unwrap();
        assert_eq!(texts(&ex), ["<Q>", "Who", "?"]);
    }

    #[test]
    fn two_rounds_of_history() {
        let d = dialogue(3);
        let ex = reformulate(&d, 3, 2).unwrap();
        let expect: Vec<String> = ["<Q>", "What", "does", "Tom", "have", "?", "<A>", "a", "red", "kite"]
            .iter()
            .chain(["<Q>", "Where", "is", "it", "?", "<A>", "in", "the", "garden"].iter())
            .chain(["<Q>", "Does", "Ann", "have", "a", "ball", "?"].iter())
            .map(|s| s.to_string())
            .collect();
        assert_eq!(texts(&ex), expect);
    }

    #[test]
    fn history_truncates_at_dialogue_start() {
        let d = dialogue(3);
        let ex = reformulate(&d, 2, 2).unwrap();
        let t = texts(&ex);
        assert_eq!(t.iter().filter(|s| *s == "<Q>").count(), 2);
        assert_eq!(t.iter().filter(|s| *s == "<A>").count(), 1);
        assert_eq!(t[1], "What");
    }

    #[test]
    fn turn_out_of_range() {
        let d = dialogue(2);
        assert!(matches!(reformulate(&d, 0, 1), Err(Error::Usage(_))));
        assert!(matches!(reformulate(&d, 3, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn gold_projection_matches_answer_text() {
        let d = dialogue(3);
        let batches = make_batches(&[d], 1).unwrap();
        let b = &batches[0];
        let g = b.examples[0].gold;
        assert_eq!(g.kind, AnswerKind::Span);
        assert_eq!(normalize_answer(&b.span_text(g.start, g.end)), normalize_answer("a red kite"));
        let g = b.examples[1].gold;
        assert_eq!(normalize_answer(&b.span_text(g.start, g.end)), ["in", "garden"]);
        assert_eq!(b.examples[2].gold.kind, AnswerKind::Yes);
    }

    #[test]
    fn rationale_is_narrowed_to_best_window() {
        let ctx = tokenize("Tom has a red kite.");
        // rationale covers the whole clause, free-form answer is just the kite
        let (s, e) = project_span(&ctx, Span::new(0, 19), "red kite").unwrap();
        assert_eq!((s, e), (3, 4));
        assert!(project_span(&ctx, Span::new(100, 120), "x").is_none());
    }

    #[test]
    fn classify_answers() {
        assert_eq!(AnswerKind::classify("Yes.", true), AnswerKind::Yes);
        assert_eq!(AnswerKind::classify("no", false), AnswerKind::No);
        assert_eq!(AnswerKind::classify("unknown", true), AnswerKind::Unknown);
        assert_eq!(AnswerKind::classify("the garden", false), AnswerKind::Unknown);
        assert_eq!(AnswerKind::classify("the garden", true), AnswerKind::Span);
    }

    #[test]
    fn feature_cases() {
        let ctx = tokenize("Paris is big");
        let q = tokenize("Is Paris nice?");
        let f = compute_features(&ctx, &q);
        assert_eq!(f[0].exact_match, [true, true, true]);
        assert_eq!(f[1].exact_match, [false, true, true]);
        assert_eq!(f[2].exact_match, [false, false, false]);

        let ctx = tokenize("the the cat");
        let f = compute_features(&ctx, &[]);
        assert!((f[0].norm_tf - 2.0 / 3.0).abs() < 1e-15);
        assert!((f[2].norm_tf - 1.0 / 3.0).abs() < 1e-15);
        assert!(f.iter().all(|v| v.exact_match == [false; 3]));
    }

    #[test]
    fn one_batch_per_passage() {
        let mut d2 = dialogue(2);
        d2.passage_id = "p2".into();
        let batches = make_batches(&[dialogue(15), d2], 2).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].examples.len(), 15);
        assert_eq!(batches[1].examples.len(), 2);
        assert!(Arc::ptr_eq(&batches[0].context, &batches[0].examples[7].context_tokens));
        assert!(batches[1]
            .examples
            .iter()
            .all(|e| e.references[0] != "" && e.context_tokens.len() == batches[1].context.len()));
    }

    #[test]
    fn off_by_one_span_snaps_to_answer_token() {
        let ctx = tokenize("The cat sat");
        assert_eq!(project_span(&ctx, Span::new(4, 7), "cat"), Some((1, 1)));
        assert_eq!(project_span(&ctx, Span::new(5, 8), "cat"), Some((1, 1)));
        let mut d = dialogue(1);
        d.passage_text = "The cat sat".into();
        d.turns[0].answer_text = "cat".into();
        d.turns[0].answer_span = Some(Span::new(5, 8));
        assert!(d.validate().is_ok());
    }

    #[test]
    fn validate_rejects_out_of_range_span() {
        let mut d = dialogue(1);
        d.turns[0].answer_span = Some(Span::new(50, 500));
        assert!(matches!(d.validate(), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn marker_counts_and_monotone_length(k in 1usize..=9, n in 0usize..6) {
            let d = dialogue(9);
            let ex = reformulate(&d, k, n).unwrap();
            let t = texts(&ex);
            let q = t.iter().filter(|s| *s == "<Q>").count();
            let a = t.iter().filter(|s| *s == "<A>").count();
            prop_assert_eq!(q, n.min(k - 1) + 1);
            prop_assert_eq!(a, n.min(k - 1));
            // alternation, ending with the current question
            let markers: Vec<&String> = t.iter().filter(|s| *s == "<Q>" || *s == "<A>").collect();
            for (i, m) in markers.iter().enumerate() {
                prop_assert_eq!(m.as_str(), if i % 2 == 0 { "<Q>" } else { "<A>" });
            }
            let longer = reformulate(&d, k, n + 1).unwrap();
            prop_assert!(longer.question_tokens.len() >= ex.question_tokens.len());
        }

        #[test]
        fn exact_match_ignores_question_order(perm in Just(()).prop_perturb(|_, mut rng| {
            let mut idx: Vec<usize> = (0..6).collect();
            for i in (1..idx.len()).rev() {
                let j = (rng.next_u32() as usize) % (i + 1);
                idx.swap(i, j);
            }
            idx
        })) {
            let ctx = tokenize("Tom has a red kite in the garden");
            let q = tokenize("where is Tom 's kite ?");
            let shuffled: Vec<TokenRecord> = perm.iter().map(|&i| q[i].clone()).collect();
            let a = compute_features(&ctx, &q);
            let b = compute_features(&ctx, &shuffled);
            prop_assert_eq!(a, b);
        }
    }
}
