//! Generated dialogues and word vectors for smoke runs and tests.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::dialogue::{AnswerKind, Dialogue, Turn};
use crate::embeddings::{Fnv, WordVectorTable};
use crate::error::Result;
use crate::model::ModelConfig;
use crate::text::{tokenize, Span};
use crate::SeededRng;

const NAMES: &[&str] = &["Tom", "Ann", "Bob", "Kim", "Sam", "Eve", "Max", "Lia", "Ned", "Zoe", "Ian", "Amy"];
const THINGS: &[&str] = &["kite", "ball", "book", "drum", "lamp", "sock", "vase", "cup", "hat", "bike", "doll", "pen"];
const COLORS: &[&str] = &["red", "blue", "green", "pink", "gray", "gold"];
const PLACES: &[&str] = &["garden", "kitchen", "attic", "garage", "hall", "shed", "barn", "cellar", "porch", "yard"];

/// A small configuration for tests and synthetic runs.
pub fn tiny_model_config(word_dim: usize, contextual_layers: usize, contextual_dim: usize) -> ModelConfig {
    ModelConfig {
        k: 2,
        rnn_hidden: 6,
        word_attn_k: 8,
        q_self_attn_k: 8,
        multilevel_k: 8,
        c_self_attn_k: 8,
        final_rnn_hidden: 6,
        pos_dim: 3,
        ner_dim: 2,
        word_dim,
        contextual_dim,
        contextual_layers,
        ..ModelConfig::default()
    }
}

/// Hash-seeded vectors in `[-1, 1)` for every token of every dialogue.
pub fn random_word_vectors(dialogues: &[Dialogue], dim: usize, seed: u64) -> Result<WordVectorTable> {
    let mut table = WordVectorTable::new(dim)?;
    let mut add = |text: &str| -> Result<()> {
        for t in tokenize(text) {
            if table.get(&t.lower).is_none() {
                let mut h = Fnv::new();
                h.write(&seed.to_le_bytes());
                h.write(t.lower.as_bytes());
                let mut rng = SeededRng::seed_from_u64(h.finish());
                table.insert(&t.lower, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            }
        }
        Ok(())
    };
    for d in dialogues {
        add(&d.passage_text)?;
        for t in &d.turns {
            add(&t.question)?;
            add(&t.answer_text)?;
        }
    }
    Ok(table)
}

fn span_turn(passage: &str, turn_id: usize, question: String, answer: &str, anchor: &str) -> Turn {
    let at = passage.find(anchor).expect("anchor is in the passage");
    let start = at + anchor.find(answer).expect("answer is inside the anchor");
    Turn {
        turn_id,
        question,
        answer_text: answer.into(),
        answer_span: Some(Span::new(start, start + answer.len())),
        answer_type: AnswerKind::Span,
    }
}

fn class_turn(turn_id: usize, question: String, kind: AnswerKind) -> Turn {
    Turn { turn_id, question, answer_text: kind.as_str().into(), answer_span: None, answer_type: kind }
}

/// Passages with two owners, five turns each: two spans, yes, no, unknown.
pub fn overfit_corpus(passages: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = SeededRng::seed_from_u64(seed);
    (0..passages)
        .map(|p| {
            let names: Vec<&str> = NAMES.choose_multiple(&mut rng, 3).cloned().collect();
            let things: Vec<&str> = THINGS.choose_multiple(&mut rng, 2).cloned().collect();
            let colors: Vec<&str> = COLORS.choose_multiple(&mut rng, 3).cloned().collect();
            let place = *PLACES.choose(&mut rng).expect("non-empty");
            let (a, b) = (names[0], names[1]);
            let s1 = format!("{a} has a {} {}.", colors[0], things[0]);
            let s2 = format!("The {} is in the {place}.", things[0]);
            let s3 = format!("{b} has a {} {}.", colors[1], things[1]);
            let passage = format!("{s1} {s2} {s3}");
            let turns = vec![
                span_turn(&passage, 1, format!("What does {a} have?"), &format!("{} {}", colors[0], things[0]), &s1),
                span_turn(&passage, 2, format!("Where is the {}?", things[0]), place, &s2),
                class_turn(3, format!("Does {b} have a {}?", things[1]), AnswerKind::Yes),
                class_turn(4, format!("Is the {} {}?", things[1], colors[2]), AnswerKind::No),
                class_turn(5, format!("What does {} eat?", names[2]), AnswerKind::Unknown),
            ];
            Dialogue {
                passage_id: format!("overfit-{seed}-{p}"),
                domain: "synthetic".into(),
                passage_text: passage,
                turns,
                extra_answers: vec![],
            }
        })
        .collect()
}

/// Passages of `people` sentence pairs "X likes Y. The Y is in the Z."
/// Odd turns ask "What does X like?"; even turns ask "Where is it?", which
/// only the previous answer resolves.
pub fn coreference_corpus(passages: usize, people: usize, rounds: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = SeededRng::seed_from_u64(seed);
    (0..passages)
        .map(|p| {
            let names: Vec<&str> = NAMES.choose_multiple(&mut rng, people).cloned().collect();
            let things: Vec<&str> = THINGS.choose_multiple(&mut rng, people).cloned().collect();
            let places: Vec<&str> = PLACES.choose_multiple(&mut rng, people).cloned().collect();
            let mut sentences: Vec<(String, String)> = (0..people)
                .map(|i| {
                    (
                        format!("{} likes the {}.", names[i], things[i]),
                        format!("The {} is in the {}.", things[i], places[i]),
                    )
                })
                .collect();
            sentences.shuffle(&mut rng);
            let passage = sentences.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect::<Vec<_>>().join(" ");
            let mut order: Vec<usize> = (0..people).collect();
            order.shuffle(&mut rng);
            let mut turns = Vec::with_capacity(2 * rounds);
            for r in 0..rounds {
                let i = order[r % people];
                let like = format!("{} likes the {}.", names[i], things[i]);
                let place = format!("The {} is in the {}.", things[i], places[i]);
                turns.push(span_turn(&passage, 2 * r + 1, format!("What does {} like?", names[i]), things[i], &like));
                turns.push(span_turn(&passage, 2 * r + 2, "Where is it?".into(), places[i], &place));
            }
            Dialogue {
                passage_id: format!("coref-{seed}-{p}"),
                domain: "synthetic".into(),
                passage_text: passage,
                turns,
                extra_answers: vec![],
            }
        })
        .collect()
}
