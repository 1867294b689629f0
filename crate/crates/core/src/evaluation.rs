//! Word-level F1 with multi-reference all-but-one averaging.
//!
//! Normalization lowercases, deletes punctuation, drops the articles
//! `a`/`an`/`the` and splits on whitespace. [`NORMALIZATION_VERSION`]
//! identifies this rule set.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORMALIZATION_VERSION: u32 = 1;

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '‘' | '’' | '“' | '”' | '–' | '—' | '…' | '«' | '»' | '¡' | '¿' | '·' | '′' | '″')
}

pub fn normalize_answer(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stripped: String = lowered.chars().filter(|&c| !is_punct(c)).collect();
    stripped.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).map(String::from).collect()
}

/// Harmonic mean of multiset precision and recall.
pub fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for w in gold {
        *counts.entry(w.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in pred {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 of a prediction string against a single reference string.
pub fn f1_text(pred: &str, gold: &str) -> f64 {
    f1_single(&normalize_answer(pred), &normalize_answer(gold))
}

/// Multi-reference F1: with one reference this is [`f1_text`]; otherwise each
/// reference is held out in turn, the best F1 against the remaining ones is
/// taken, and those maxima are averaged.
pub fn f1_multi<S: AsRef<str>>(pred: &str, golds: &[S]) -> Result<f64> {
    let p = normalize_answer(pred);
    let norm: Vec<Vec<String>> = golds.iter().map(|g| normalize_answer(g.as_ref())).collect();
    match norm.len() {
        0 => Err(Error::Data("f1_multi needs at least one reference answer".into())),
        1 => Ok(f1_single(&p, &norm[0])),
        n => {
            let total: f64 = (0..n)
                .map(|held| {
                    norm.iter()
                        .enumerate()
                        .filter(|(i, _)| *i != held)
                        .map(|(_, g)| f1_single(&p, g))
                        .fold(0.0, f64::max)
                })
                .sum();
            Ok(total / n as f64)
        }
    }
}

/// One scored turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub passage_id: String,
    pub turn_id: usize,
    pub predicted: String,
    pub golds: Vec<String>,
    pub domain: String,
}

/// Percent F1 overall and per domain, with turn counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub overall: f64,
    pub turns: usize,
    pub per_domain: BTreeMap<String, DomainScore>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub f1: f64,
    pub turns: usize,
}

/// Unweighted per-turn means, reported ×100.
pub fn aggregate(records: &[EvalRecord]) -> Result<F1Report> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut scores = Vec::with_capacity(records.len());
    for r in records {
        let s = f1_multi(&r.predicted, &r.golds)?;
        scores.push(s);
        let e = sums.entry(r.domain.clone()).or_default();
        e.0 += s;
        e.1 += 1;
    }
    let overall = if scores.is_empty() { 0.0 } else { 100.0 * scores.iter().sum::<f64>() / scores.len() as f64 };
    let per_domain =
        sums.into_iter().map(|(d, (s, n))| (d, DomainScore { f1: 100.0 * s / n as f64, turns: n })).collect();
    Ok(F1Report { overall, turns: records.len(), per_domain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn normalization_cases() {
        assert_eq!(normalize_answer("The Cat!"), ["cat"]);
        assert_eq!(normalize_answer("yes"), ["yes"]);
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("An apple, a pear."), ["apple", "pear"]);
    }

    #[test]
    fn f1_hand_cases() {
        assert_eq!(f1_single(&toks(&["a1", "b"]), &toks(&["a1", "b"])), 1.0);
        assert!((f1_single(&toks(&["b", "c"]), &toks(&["a", "b", "c"])) - 0.8).abs() < 1e-12);
        assert_eq!(f1_single(&toks(&["x"]), &toks(&["y"])), 0.0);
        assert_eq!(f1_single(&[], &[]), 1.0);
        assert_eq!(f1_single(&toks(&["x"]), &[]), 0.0);
    }

    #[test]
    fn all_but_one_hold_out() {
        assert_eq!(f1_multi("yes", &["yes", "yes", "yes"]).unwrap(), 1.0);
        assert!((f1_multi("red ball", &["red ball", "kite"]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(f1_multi("b c", &["a b c"]).unwrap(), f1_text("b c", "a b c"));
        assert!(matches!(f1_multi::<&str>("x", &[]), Err(Error::Data(_))));
    }

    #[test]
    fn aggregate_means() {
        let rec = |p: &str, g: &str, d: &str| EvalRecord {
            passage_id: "p".into(),
            turn_id: 1,
            predicted: p.into(),
            golds: vec![g.into()],
            domain: d.into(),
        };
        let r = aggregate(&[rec("a", "a", "news"), rec("a", "b", "news")]).unwrap();
        assert_eq!(r.overall, 50.0);
        assert_eq!(r.per_domain["news"].f1, 50.0);
        let r = aggregate(&[rec("x", "x", "wiki"), rec("x y", "x", "wiki"), rec("z", "x", "wiki")]).unwrap();
        assert_eq!(r.overall, r.per_domain["wiki"].f1);
    }
}
