use std::fs;
use std::path::{Path, PathBuf};

use adanas::data::{TaskType, ToyKind, ToySpec};
use adanas::engine::{SearchConfig, TrainConfig};
use adanas::teacher::ProbeSettings;
use adanas::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::Overrides;

/// Toy dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub kind: ToyKind,
    pub size: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Per-token replacement probability of the augmented copies; 0 turns
    /// augmentation off.
    pub augment_prob: f64,
    /// Augmented copies per training example.
    pub augment_copies: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            kind: ToyKind::KeywordSentiment,
            size: 1000,
            vocab_size: 200,
            seed: 0,
            augment_prob: 0.0,
            augment_copies: 1,
        }
    }
}

impl GenConfig {
    pub fn spec(&self) -> ToySpec {
        ToySpec::new(self.kind, self.size, self.vocab_size, self.seed)
    }
}

/// Everything a run reads. Loaded from TOML, then patched by the flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Inferred from the dataset header when unset.
    pub task_type: Option<TaskType>,
    /// Inferred from the labels when unset.
    pub num_classes: Option<usize>,
    pub teacher: Option<PathBuf>,
    pub synthetic_teacher: Option<String>,
    pub out: PathBuf,
    pub workers: usize,
    pub gen: GenConfig,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub probes: ProbeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            task_type: None,
            num_classes: None,
            teacher: None,
            synthetic_teacher: None,
            out: PathBuf::from("out"),
            workers: 1,
            gen: GenConfig::default(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            probes: ProbeSettings::default(),
        }
    }
}

/// Which section an `--epochs` or `--batch-size` flag lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Probes,
    Search,
    Train,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn resolve(file: Option<&Path>, flags: &Overrides, stage: Stage) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(flags, stage);
        cfg.search.validate()?;
        cfg.train.validate()?;
        if cfg.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(cfg)
    }

    fn apply(&mut self, f: &Overrides, stage: Stage) {
        if let Some(s) = f.seed {
            self.gen.seed = s;
            self.probes.seed = s;
            self.search.seed = s;
            self.train.seed = s;
        }
        if let Some(p) = &f.out {
            self.out = p.clone();
        }
        if let Some(p) = &f.dataset {
            self.dataset = Some(p.clone());
        }
        if let Some(p) = &f.teacher {
            self.teacher = Some(p.clone());
            self.synthetic_teacher = None;
        }
        if let Some(s) = &f.synthetic_teacher {
            self.synthetic_teacher = Some(s.clone());
            self.teacher = None;
        }
        if let Some(b) = f.beta {
            self.search.beta = b;
        }
        if let Some(g) = f.gamma {
            self.search.gamma = g;
            self.train.gamma = g;
        }
        if let Some(t) = f.kd_temp {
            self.search.kd_temperature = t;
            self.train.kd_temperature = t;
        }
        if let Some(t) = f.tau_start {
            self.search.tau_start = t;
        }
        if let Some(t) = f.tau_end {
            self.search.tau_end = t;
        }
        if let Some(k) = f.k_max {
            self.search.k_max = k;
        }
        if let Some(w) = f.workers {
            self.workers = w;
        }
        let (epochs, batch) = match stage {
            Stage::Gen => return,
            Stage::Probes => (&mut self.probes.epochs, &mut self.probes.batch_size),
            Stage::Search => (&mut self.search.epochs, &mut self.search.batch_size),
            Stage::Train => (&mut self.train.epochs, &mut self.train.batch_size),
        };
        if let Some(e) = f.epochs {
            *epochs = e;
        }
        if let Some(b) = f.batch_size {
            *batch = b;
        }
    }

    /// Writes the resolved configuration into the output directory.
    pub fn echo(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join("config.toml");
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }
}
