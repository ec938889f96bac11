//! Run configuration: a TOML file with `[paths]`, `[train]`, `[synth]` and
//! `[eval]` tables, overridable by command-line flags. The effective
//! configuration is echoed into the output directory for every run.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tieforge_core::corpus::SynthSpec;
use tieforge_core::trainer::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub train_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ties: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub export_embeddings: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct RunConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub eval: EvalOptions,
}


impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Resolved path helpers: explicit config paths win, otherwise the
    /// conventional file name inside the output directory.
    pub fn train_corpus(&self, out: &Path) -> PathBuf {
        self.paths
            .train_corpus
            .clone()
            .unwrap_or_else(|| out.join("train.jsonl"))
    }

    pub fn test_corpus(&self, out: &Path) -> PathBuf {
        self.paths
            .test_corpus
            .clone()
            .unwrap_or_else(|| out.join("test.jsonl"))
    }

    pub fn relations(&self, out: &Path) -> PathBuf {
        self.paths
            .relations
            .clone()
            .unwrap_or_else(|| out.join("relations.tsv"))
    }

    pub fn checkpoint(&self, out: &Path) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| out.join("model.ckpt"))
    }

    pub fn ties(&self, out: &Path) -> PathBuf {
        self.paths.ties.clone().unwrap_or_else(|| out.join("ties.tsv"))
    }

    /// Writes the flag-merged configuration next to the run's outputs.
    pub fn echo(&self, out: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing effective config")?;
        let path = out.join("effective-config.toml");
        std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
