//! TOML run configuration.
//!
//! ```toml
//! model_seed = 0
//! output_dir = "toy-run"
//!
//! [data]
//! train = "train.json"
//! dev = "dev.json"
//! word_vectors = "vectors.txt"
//!
//! [contextual]
//! kind = "mock"
//! seed = 0
//!
//! [model]
//! rnn_hidden = 8
//!
//! [train]
//! epochs = 5
//! ```
//!
//! Relative paths resolve against the config file's directory, except
//! `output_dir`, which resolves against `$SDNET_RUN_ROOT` when that is set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdnet_core::model::ModelConfig;
use sdnet_core::training::TrainConfig;

use crate::contextual::EmbedderSpec;
use crate::error::{CliError, CliResult};

pub const RUN_ROOT_ENV: &str = "SDNET_RUN_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    /// When absent, hash-seeded vectors are generated for the train and dev
    /// vocabulary from `model_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_vectors: Option<PathBuf>,
    /// Directory for tokenized-batch caches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model_seed: u64,
    pub output_dir: PathBuf,
    pub data: DataPaths,
    #[serde(default)]
    pub contextual: EmbedderSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Usage(format!("invalid config: {}", e.to_string().trim_end())))?;
        cfg.model.validate().map_err(|e| CliError::Usage(format!("model: {e}")))?;
        cfg.train.validate().map_err(|e| CliError::Usage(format!("train: {e}")))?;
        Ok(cfg)
    }

    /// Reads and validates a config file and makes every path absolute.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::unreadable("config", path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| e.context(&path.display().to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::path::absolute(&base).unwrap_or(base);
        let run_root = std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from);
        cfg.resolve(&base, run_root.as_deref());
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path, run_root: Option<&Path>) {
        let join = |root: &Path, p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        join(run_root.unwrap_or(base), &mut self.output_dir);
        join(base, &mut self.data.train);
        for p in [&mut self.data.dev, &mut self.data.word_vectors, &mut self.data.cache_dir].into_iter().flatten() {
            join(base, p);
        }
        if let EmbedderSpec::Precomputed { path } = &mut self.contextual {
            join(base, path);
        }
        if let Some(dir) = &self.train.checkpoint_dir {
            let mut p = PathBuf::from(dir);
            join(&self.output_dir, &mut p);
            self.train.checkpoint_dir = Some(p.display().to_string());
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.train.checkpoint_dir.as_ref().map_or_else(|| self.output_dir.clone(), PathBuf::from)
    }

    /// Fully expanded TOML, written next to the run's outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "output_dir = \"out\"\n[data]\ntrain = \"t.json\"\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.contextual, EmbedderSpec::Mock { seed: 0 });
    }

    #[test]
    fn unknown_and_missing_keys_name_the_field() {
        let e = RunConfig::parse(&format!("{MINIMAL}[model]\nrnn_hiden = 3\n")).unwrap_err();
        assert!(e.to_string().contains("rnn_hiden"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::parse("output_dir = \"o\"\n[data]\ndev = \"d.json\"\n").unwrap_err();
        assert!(e.to_string().contains("train"), "{e}");
        let e = RunConfig::parse(&format!("{MINIMAL}[train]\nepochs = 0\n")).unwrap_err();
        assert!(e.to_string().contains("train.epochs"), "{e}");
    }

    #[test]
    fn paths_resolve_against_base_and_run_root() {
        let mut c =
            RunConfig::parse(&format!("{MINIMAL}[contextual]\nkind = \"precomputed\"\npath = \"c.jsonl\"\n")).unwrap();
        c.resolve(Path::new("/cfg"), Some(Path::new("/runs")));
        assert_eq!(c.output_dir, Path::new("/runs/out"));
        assert_eq!(c.data.train, Path::new("/cfg/t.json"));
        assert_eq!(c.contextual, EmbedderSpec::Precomputed { path: "/cfg/c.jsonl".into() });
        assert_eq!(c.checkpoint_dir(), Path::new("/runs/out"));
    }

    #[test]
    fn echo_parses_back_identically() {
        let mut c = RunConfig::parse(&format!("{MINIMAL}[train]\nepochs = 3\nbetas = [0.8, 0.99]\n")).unwrap();
        c.resolve(Path::new("/cfg"), None);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
