use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::model::ModelConfig;
use crate::train::{Ablation, LossMode, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Generation budget per prompt.
    pub max_new_tokens: usize,
    /// Responses up to this many tokens are classified "concise", longer ones "detailed".
    pub concise_max_tokens: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 48,
            concise_max_tokens: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// JSONL corpus; the bundled toy corpus when unset.
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<out_dir>/metrics.tsv`.
    pub metrics_log: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            metrics_log: None,
        }
    }
}

impl PathsConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.bin"))
    }

    pub fn metrics_log_path(&self) -> PathBuf {
        self.metrics_log.clone().unwrap_or_else(|| self.out_dir.join("metrics.tsv"))
    }
}

/// Everything a run needs. `seed` seeds both model initialization and the trainer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub memory: MemoryConfig,
    pub metrics: MetricsConfig,
    pub ablation: Ablation,
    pub paths: PathsConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_memory: bool,
    pub no_curriculum: bool,
    pub no_lora: bool,
    pub loss_mode: Option<LossMode>,
}

impl RunConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        if let Some(p) = cfg.paths.corpus.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.paths.out_dir);
        if let Some(p) = cfg.paths.checkpoint.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.paths.metrics_log.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.ablation.no_memory |= o.no_memory;
        self.ablation.no_curriculum |= o.no_curriculum;
        self.ablation.no_lora |= o.no_lora;
        if let Some(m) = o.loss_mode {
            self.train.loss_mode = m;
        }
    }

    /// Checks every section and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.memory.validate()?;
        if self.metrics.max_new_tokens == 0 {
            return Err(Error::Config("metrics.max_new_tokens must be positive".into()));
        }
        if let Some(p) = &self.paths.corpus {
            if !p.is_file() {
                return Err(Error::Config(format!("corpus {} does not exist", p.display())));
            }
        }
        let mut m = self.model.clone();
        if m.vocab_size == 0 {
            // the real size comes from the corpus; a placeholder no smaller than d
            // keeps the head's rank bound from rejecting valid configs
            m.vocab_size = m.d_model.max(8);
        }
        m.validate()
    }

    /// The plan with the run seed and ablation flags folded in.
    pub fn plan(&self) -> TrainPlan {
        TrainPlan {
            seed: self.seed,
            ablation: self.ablation,
            ..self.train.clone()
        }
    }

    /// The model shape for a vocabulary of `vocab_len` words.
    pub fn model_config(&self, vocab_len: usize) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        if m.vocab_size == 0 {
            m.vocab_size = vocab_len;
        } else if m.vocab_size != vocab_len {
            return Err(Error::Config(format!(
                "model.vocab_size = {} but the corpus vocabulary has {vocab_len} entries",
                m.vocab_size
            )));
        }
        m.seed = self.seed;
        m.validate()?;
        Ok(m)
    }
}
