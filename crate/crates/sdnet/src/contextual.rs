//! Contextual-embedder configuration and the precomputed-states file.
//!
//! The file is line-delimited JSON, one sequence per line:
//! `{"words": [...], "layers": L, "dim": d, "subtoken_map": [...], "values": [...]}`
//! with `values` holding the `L×s×d` sub-token states in row-major order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdnet_core::embeddings::{ContextualEmbedder, Fnv, MockEmbedder, SubtokenStates};
use sdnet_core::tensor::Tensor;
use sdnet_core::Error;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderSpec {
    None,
    /// Hash-seeded mock; layer count and width come from the model config.
    Mock {
        seed: u64,
    },
    Precomputed {
        path: PathBuf,
    },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Mock { seed: 0 }
    }
}

impl EmbedderSpec {
    pub fn build(&self, layers: usize, dim: usize) -> CliResult<Option<Box<dyn ContextualEmbedder>>> {
        Ok(match self {
            EmbedderSpec::None => None,
            EmbedderSpec::Mock { seed } => Some(Box::new(MockEmbedder::new(*seed, layers, dim)?)),
            EmbedderSpec::Precomputed { path } => Some(Box::new(PrecomputedEmbedder::load(path)?)),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    words: Vec<String>,
    layers: usize,
    dim: usize,
    subtoken_map: Vec<usize>,
    values: Vec<f64>,
}

/// States read back from a precomputed file, keyed by the word sequence.
pub struct PrecomputedEmbedder {
    layers: usize,
    dim: usize,
    states: HashMap<Vec<String>, SubtokenStates>,
    digest: u64,
}

impl PrecomputedEmbedder {
    pub fn parse(reader: impl BufRead) -> CliResult<Self> {
        let mut shape = None;
        let mut states = HashMap::new();
        let mut h = Fnv::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            h.write(line.as_bytes());
            let rec: Line = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
            let (l, d) = *shape.get_or_insert((rec.layers, rec.dim));
            let s = rec.subtoken_map.len();
            if (rec.layers, rec.dim) != (l, d) || rec.values.len() != l * s * d || l == 0 || d == 0 {
                return Err(CliError::Data(format!(
                    "line {n}: header L={} dim={} with {} sub-tokens does not fit {} values (file uses L={l} dim={d})",
                    rec.layers,
                    rec.dim,
                    s,
                    rec.values.len()
                )));
            }
            let layers = rec
                .values
                .chunks(s * d)
                .map(|c| Tensor::new(vec![s, d], c.to_vec()))
                .collect::<Result<Vec<_>, Error>>()?;
            states.insert(rec.words, SubtokenStates { layers, subtoken_map: rec.subtoken_map });
        }
        let (layers, dim) = shape.ok_or_else(|| CliError::Data("precomputed embedding file is empty".into()))?;
        Ok(Self { layers, dim, states, digest: h.finish() })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let f = std::fs::File::open(path).map_err(|e| CliError::unreadable("contextual.path", path, e))?;
        Self::parse(std::io::BufReader::new(f)).map_err(|e| e.context(&path.display().to_string()))
    }
}

impl ContextualEmbedder for PrecomputedEmbedder {
    fn num_layers(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, words: &[&str]) -> sdnet_core::Result<SubtokenStates> {
        let key: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        self.states
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no precomputed states for the sequence `{}`", key.join(" "))))
    }

    fn digest(&self) -> u64 {
        self.digest
    }
}

/// Wraps an embedder and remembers every sequence it was asked for.
pub struct RecordingEmbedder<'a> {
    inner: &'a dyn ContextualEmbedder,
    seen: RefCell<Vec<(Vec<String>, SubtokenStates)>>,
}

impl<'a> RecordingEmbedder<'a> {
    pub fn new(inner: &'a dyn ContextualEmbedder) -> Self {
        Self { inner, seen: RefCell::new(Vec::new()) }
    }

    /// Writes each distinct recorded sequence once, in first-seen order.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut done = std::collections::HashSet::new();
        for (words, st) in self.seen.borrow().iter() {
            if !done.insert(words.clone()) {
                continue;
            }
            let line = Line {
                words: words.clone(),
                layers: self.inner.num_layers(),
                dim: self.inner.dim(),
                subtoken_map: st.subtoken_map.clone(),
                values: st.layers.iter().flat_map(|t| t.data().iter().copied()).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

impl ContextualEmbedder for RecordingEmbedder<'_> {
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, words: &[&str]) -> sdnet_core::Result<SubtokenStates> {
        let st = self.inner.embed(words)?;
        self.seen.borrow_mut().push((words.iter().map(|w| w.to_string()).collect(), st.clone()));
        Ok(st)
    }

    fn digest(&self) -> u64 {
        self.inner.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdnet_core::synthetic::{overfit_corpus, random_word_vectors, tiny_model_config};
    use sdnet_core::training::prepare_all;

    #[test]
    fn precomputed_file_reproduces_the_source_embedder() {
        let cfg = tiny_model_config(5, 3, 4);
        let corpus = overfit_corpus(2, 1);
        let table = random_word_vectors(&corpus, 5, 0).unwrap();
        let mock = MockEmbedder::new(7, 3, 4).unwrap();
        let rec = RecordingEmbedder::new(&mock);
        let direct = prepare_all(&corpus, &cfg, &table, Some(&rec)).unwrap();
        let mut buf = Vec::new();
        rec.write(&mut buf).unwrap();
        let pre = PrecomputedEmbedder::parse(buf.as_slice()).unwrap();
        assert_eq!((pre.num_layers(), pre.dim()), (3, 4));
        let loaded = prepare_all(&corpus, &cfg, &table, Some(&pre)).unwrap();
        assert_eq!(direct, loaded);
        assert!(pre.embed(&["never", "seen"]).is_err());
    }

    #[test]
    fn malformed_lines_are_reported() {
        let e = PrecomputedEmbedder::parse(
            "{\"words\":[\"a\"],\"layers\":1,\"dim\":2,\"subtoken_map\":[0],\"values\":[1,2,3]}\n".as_bytes(),
        )
        .err()
        .unwrap();
        assert!(matches!(&e, CliError::Data(m) if m.starts_with("line 1")), "{e}");
        assert!(PrecomputedEmbedder::parse("".as_bytes()).is_err());
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: EmbedderSpec = toml::from_str("kind = \"mock\"\nseed = 3").unwrap();
        assert_eq!(s, EmbedderSpec::Mock { seed: 3 });
        let s: EmbedderSpec = toml::from_str("kind = \"none\"").unwrap();
        assert_eq!(s, EmbedderSpec::None);
        assert!(toml::from_str::<EmbedderSpec>("kind = \"mock\"\nseed = 3\nextra = 1").is_err());
    }
}
