use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Vocab, DEFAULT_MAX_LEN};
use crate::error::{bail, Result};
use crate::losses::LossConfig;
use crate::nn::cosine_lr;
use crate::space::{OperationKind, SpaceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauDecay {
    Linear,
    Exponential,
}

/// Search settings. Defaults are the paper's setup; the temperature
/// schedule and batch size are our own choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub k_max: usize,
    pub nodes: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    pub ops: Vec<OperationKind>,
    pub gamma: f64,
    pub beta: f64,
    pub kd_temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_decay: TauDecay,
    pub weight_lr_max: f64,
    pub weight_lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Largest joint L2 norm of the weight gradients; 0 disables clipping.
    pub grad_clip: f64,
    pub arch_lr: f64,
    pub arch_weight_decay: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            nodes: 3,
            embed_dim: 128,
            max_len: DEFAULT_MAX_LEN,
            ops: OperationKind::ALL.to_vec(),
            gamma: 0.8,
            beta: 4.0,
            kd_temperature: 1.0,
            epochs: 80,
            batch_size: 32,
            tau_start: 5.0,
            tau_end: 0.5,
            tau_decay: TauDecay::Linear,
            weight_lr_max: 2e-2,
            weight_lr_min: 5e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip: 5.0,
            arch_lr: 3e-4,
            arch_weight_decay: 1e-3,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            beta: self.beta,
            temperature: self.kd_temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.max_len == 0 {
            bail!(Config, "epochs, batch_size and max_len must be positive");
        }
        if !(self.tau_start > 0.0) || !(self.tau_end > 0.0) {
            bail!(Config, "temperatures must be positive, got {} -> {}", self.tau_start, self.tau_end);
        }
        if !(self.weight_lr_max > 0.0) || !(self.weight_lr_min >= 0.0) || !(self.arch_lr > 0.0) {
            bail!(Config, "learning rates must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            bail!(Config, "grad_clip {} must be non-negative", self.grad_clip);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(Config, "momentum {} outside [0, 1)", self.momentum);
        }
        Ok(())
    }

    /// Temperature during epoch `epoch` (0-based): `tau_start` in the first
    /// epoch, `tau_end` in the last.
    pub fn tau(&self, epoch: usize) -> f64 {
        let t = if self.epochs <= 1 {
            0.0
        } else {
            epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64
        };
        match self.tau_decay {
            TauDecay::Linear => self.tau_start + (self.tau_end - self.tau_start) * t,
            TauDecay::Exponential => self.tau_start * (self.tau_end / self.tau_start).powf(t),
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_lr(self.weight_lr_max, self.weight_lr_min, epoch, self.epochs)
    }

    /// Search space and vocabulary for a dataset.
    pub fn space(&self, dataset: &Dataset) -> (SpaceConfig, Vocab) {
        let vocab = Vocab::build(dataset, self.max_len);
        let space = SpaceConfig {
            task_type: dataset.task_type,
            nodes: self.nodes,
            k_max: self.k_max,
            embed_dim: self.embed_dim,
            ops: self.ops.clone(),
            vocab_size: vocab.len(),
            num_classes: dataset.num_classes,
        };
        (space, vocab)
    }
}

/// Retraining settings for a derived child, from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub gamma: f64,
    pub kd_temperature: f64,
    pub weight_lr_max: f64,
    pub weight_lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            max_len: DEFAULT_MAX_LEN,
            gamma: 0.8,
            kd_temperature: 1.0,
            weight_lr_max: 2e-2,
            weight_lr_min: 5e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            beta: 0.0,
            temperature: self.kd_temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.max_len == 0 {
            bail!(Config, "epochs, batch_size and max_len must be positive");
        }
        if !(self.weight_lr_max > 0.0) || !(self.weight_lr_min >= 0.0) {
            bail!(Config, "learning rates must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            bail!(Config, "grad_clip {} must be non-negative", self.grad_clip);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(Config, "momentum {} outside [0, 1)", self.momentum);
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_lr(self.weight_lr_max, self.weight_lr_min, epoch, self.epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_setup() {
        let c = SearchConfig::default();
        assert_eq!((c.k_max, c.nodes, c.embed_dim, c.epochs), (8, 3, 128, 80));
        assert_eq!((c.gamma, c.beta, c.kd_temperature), (0.8, 4.0, 1.0));
        assert_eq!((c.momentum, c.weight_lr_max, c.weight_lr_min), (0.9, 2e-2, 5e-4));
        assert_eq!((c.arch_lr, c.arch_weight_decay), (3e-4, 1e-3));
        assert_eq!(c.ops.len(), 10);
        c.validate().unwrap();
    }

    #[test]
    fn tau_schedules() {
        let c = SearchConfig {
            epochs: 10,
            ..SearchConfig::default()
        };
        assert_eq!(c.tau(0), 5.0);
        assert!((c.tau(9) - 0.5).abs() < 1e-15);
        assert!((c.tau(3) - 3.5).abs() < 1e-15);
        let e = SearchConfig {
            tau_decay: TauDecay::Exponential,
            ..c
        };
        assert!((e.tau(9) - 0.5).abs() < 1e-12);
        assert!((e.tau(3) - 5.0 * 0.1f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<SearchConfig>(r#"{"beta": 1.0}"#).unwrap().beta == 1.0);
        assert!(serde_json::from_str::<SearchConfig>(r#"{"betta": 1.0}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1.0}"#).is_err());
    }
}
