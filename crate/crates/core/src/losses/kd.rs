use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::Var;

/// Weights of the three loss terms and the distillation temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub beta: f64,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            beta: 4.0,
            temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            bail!(Config, "gamma must lie in [0, 1], got {}", self.gamma);
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            bail!(Config, "beta must be a nonnegative number, got {}", self.beta);
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            bail!(Config, "distillation temperature must be positive, got {}", self.temperature);
        }
        Ok(())
    }
}

/// `(1 - gamma) * ce + gamma * kd + beta * eff`.
pub fn total_loss(ce: f64, kd: f64, eff: f64, cfg: &LossConfig) -> f64 {
    (1.0 - cfg.gamma) * ce + cfg.gamma * kd + cfg.beta * eff
}

/// Teacher layer distilled into student layer `i` of a `k`-layer student:
/// `ceil(i * J / K)`.
pub fn layer_map(i: usize, k: usize, j: usize) -> Result<usize> {
    if k == 0 || j == 0 {
        bail!(Validation, "layer map needs positive depths, got K={} J={}", k, j);
    }
    if i == 0 || i > k {
        bail!(Validation, "student layer {} outside [1, {}]", i, k);
    }
    Ok((i * j).div_ceil(k))
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| !(*v >= 0.0)) {
        bail!(Validation, "{what} is not a probability vector (sum {s})");
    }
    Ok(())
}

/// `-Σ_c p_c * log softmax(z / T)_c` for one instance.
pub fn kd_instance_loss(teacher_probs: &[f64], student_logits: &[f64], temperature: f64) -> Result<f64> {
    check_distribution(teacher_probs, "teacher output")?;
    if teacher_probs.len() != student_logits.len() {
        bail!(Dimension, "{} teacher classes against {} student logits", teacher_probs.len(), student_logits.len());
    }
    let z: Vec<f64> = student_logits.iter().map(|v| v / temperature).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(teacher_probs
        .iter()
        .zip(&z)
        .filter(|(p, _)| **p != 0.0)
        .map(|(p, v)| -p * (v - lse))
        .sum())
}

/// Softmax of the teacher probes' log-probabilities of the true label, one
/// entry per student layer.
pub fn attentive_weights(true_label_log_probs: &[f64]) -> Vec<f64> {
    let max = true_label_log_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = true_label_log_probs.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Teacher probe outputs for one batch: `probs[j - 1]` holds the row-major
/// `[B, classes]` probabilities of teacher layer `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets {
    pub classes: usize,
    pub probs: Vec<Vec<f64>>,
}

impl TeacherTargets {
    pub fn depth(&self) -> usize {
        self.probs.len()
    }

    fn layer(&self, j: usize) -> Result<&[f64]> {
        match self.probs.get(j.wrapping_sub(1)) {
            Some(p) => Ok(p),
            None => bail!(Data, "teacher layer {} missing (teacher has {})", j, self.probs.len()),
        }
    }

    /// Per student layer `i = 1..=k`, the attentive weight of every row.
    pub fn weights(&self, k: usize, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.classes;
        let mut logp = vec![vec![0.0; k]; labels.len()];
        for i in 1..=k {
            let p = self.layer(layer_map(i, k, self.depth())?)?;
            if p.len() != labels.len() * n {
                bail!(Dimension, "teacher layer has {} values for {} rows", p.len(), labels.len());
            }
            for (m, &y) in labels.iter().enumerate() {
                logp[m][i - 1] = p[m * n + y].max(f64::MIN_POSITIVE).ln();
            }
        }
        let per_row: Vec<Vec<f64>> = logp.iter().map(|r| attentive_weights(r)).collect();
        Ok((0..k).map(|i| per_row.iter().map(|w| w[i]).collect()).collect())
    }
}

/// Batch mean of `Σ_i w_{i,m} * L_KD^{i,m}` over student layers
/// `1..=student.len()`, each distilled from teacher layer `ceil(i J / K)`.
pub fn attentive_kd_loss<'t>(
    student: &[Var<'t>],
    teacher: &TeacherTargets,
    labels: &[usize],
    temperature: f64,
) -> Result<Var<'t>> {
    let k = student.len();
    if k == 0 {
        bail!(Validation, "no student layers to distill into");
    }
    let weights = teacher.weights(k, labels)?;
    let mut terms = Vec::with_capacity(k);
    for (i, z) in student.iter().enumerate() {
        let target = teacher.layer(layer_map(i + 1, k, teacher.depth())?)?;
        terms.push(z.scale(1.0 / temperature).cross_entropy(target, Some(&weights[i]))?);
    }
    Var::add_n(&terms)
}

/// Plain-value version of [`attentive_kd_loss`].
pub fn attentive_kd_value(
    student: &[Vec<f64>],
    teacher: &TeacherTargets,
    labels: &[usize],
    temperature: f64,
) -> Result<f64> {
    let k = student.len();
    let n = teacher.classes;
    let weights = teacher.weights(k, labels)?;
    let mut total = 0.0;
    for (i, z) in student.iter().enumerate() {
        let target = teacher.layer(layer_map(i + 1, k, teacher.depth())?)?;
        for m in 0..labels.len() {
            let l = kd_instance_loss(&target[m * n..(m + 1) * n], &z[m * n..(m + 1) * n], temperature)?;
            total += weights[i][m] * l;
        }
    }
    Ok(total / labels.len() as f64)
}
