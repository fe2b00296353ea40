//! Run specifications: one JSON document plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stm_core::driver::{Mode, StmConfig};
use stm_core::problems::ProblemSpec;
use stm_core::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub config: StmConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub iterations: String,
    pub summary: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("stm-out"),
            iterations: "iterations.csv".into(),
            summary: "summary.json".into(),
        }
    }
}

impl OutputSpec {
    pub fn iterations_path(&self) -> PathBuf {
        self.dir.join(&self.iterations)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.dir.join(&self.summary)
    }
}

/// Flag values that replace the corresponding spec fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub scheme: Option<Scheme>,
    pub max_iters: Option<usize>,
    pub full_batch: bool,
}

impl RunSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: RunSpec = serde_json::from_str(text).context("invalid run spec")?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.config.seed = s;
        }
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if let Some(m) = o.mode {
            self.config.mode = m;
        }
        if let Some(s) = o.scheme {
            self.config.scheme = s;
        }
        if let Some(k) = o.max_iters {
            self.config.max_iters = k;
        }
        if o.full_batch {
            self.config.full_batch = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate().context("invalid config")?;
        Ok(())
    }
}
