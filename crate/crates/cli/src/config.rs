//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clmn_core::concept_layer::ConceptSpec;
use clmn_core::data::PlantedTask;
use clmn_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Size and noise of the generated planted-task dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub noise: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            noise: 0.0,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Where checkpoints, metrics and reports go.
    pub out: PathBuf,
    /// Directory holding `train.jsonl`, `val.jsonl`, `test.jsonl`.
    pub data: PathBuf,
    /// Concept spec for external data; generated data carries its own.
    pub concepts: Option<ConceptSpec>,
    /// Class count for external data.
    pub n_classes: Option<usize>,
    pub planted: PlantedConfig,
    pub train: TrainConfig,
    /// `(α1, α2)` cells for `ablate`.
    pub grid: Vec<(f64, f64)>,
    /// Examples per explanation report.
    pub explain: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs"),
            data: PathBuf::from("data"),
            concepts: None,
            n_classes: None,
            planted: PlantedConfig::default(),
            train: TrainConfig::default(),
            grid: vec![(0.0, 0.0), (100.0, 0.0), (0.0, 10.0), (100.0, 10.0)],
            explain: 5,
        }
    }
}

/// Values given on the command line; each one replaces the file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        config.apply(overrides);
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(a) = o.alpha1 {
            self.train.alpha1 = a;
        }
        if let Some(a) = o.alpha2 {
            self.train.alpha2 = a;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.data {
            self.data = p.clone();
        }
    }

    /// Checks everything that does not depend on files existing.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(spec) = &self.concepts {
            spec.validate()?;
        }
        if let Some(n) = self.n_classes {
            if n < 2 {
                bail!("n_classes must be at least 2, got {n}");
            }
        }
        let p = &self.planted;
        if !(0.0..1.0).contains(&p.noise) {
            bail!("planted.noise must be in [0, 1), got {}", p.noise);
        }
        if p.n_train == 0 || p.n_val == 0 || p.n_test == 0 {
            bail!("planted split sizes must be positive");
        }
        if self.grid.is_empty() {
            bail!("ablation grid must be non-empty");
        }
        for &(a1, a2) in &self.grid {
            if !(a1 >= 0.0 && a2 >= 0.0) {
                bail!("ablation weights must be ≥ 0, got ({a1}, {a2})");
            }
        }
        Ok(())
    }

    pub fn planted_task(&self) -> Result<PlantedTask> {
        Ok(PlantedTask::restaurant(self.planted.noise)?)
    }
}
