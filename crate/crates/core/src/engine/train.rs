use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::data::{encode_batch, Dataset, Example, Split, Vocab};
use crate::error::{bail, Error, Result};
use crate::losses::attentive_kd_loss;
use crate::nn::{accumulate, clip_grad_norm, Binding, Sgd};
use crate::space::{ChildGraph, ChildNet, OperationKind, SpaceConfig};
use crate::teacher::Teacher;
use crate::tensor::{argmax, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: usize,
    pub examples: usize,
    pub correct: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub examples: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean cross-entropy of the classification logits.
    pub loss: f64,
    pub per_class: Vec<ClassCounts>,
}

/// A child with the vocabulary its embedding table was built on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub child: ChildNet,
    pub vocab: Vocab,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub kd: f64,
    pub dev_accuracy: f64,
    pub dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub child: String,
    pub seed: u64,
    pub epochs: Vec<TrainEpoch>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    /// Lowest dev loss over all epochs.
    pub best_dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedChild {
    /// Weights from the epoch with the best dev accuracy.
    pub model: TrainedModel,
    pub report: TrainReport,
}

/// Space in which a child can be rebuilt on its own.
pub fn child_space(child: &ChildGraph, vocab: &Vocab, num_classes: usize) -> SpaceConfig {
    SpaceConfig {
        task_type: child.task_type,
        nodes: child.nodes,
        k_max: child.k,
        embed_dim: child.embed_dim,
        ops: OperationKind::ALL.to_vec(),
        vocab_size: vocab.len(),
        num_classes,
    }
}

fn one_hot(labels: &[usize], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; labels.len() * n];
    for (r, &y) in labels.iter().enumerate() {
        t[r * n + y] = 1.0;
    }
    t
}

/// Trains a child from freshly initialized weights with the weight-optimizer
/// settings. With `gamma > 0` every child layer is also distilled from the
/// teacher probes.
pub fn train_child(
    child: &ChildGraph,
    dataset: &Dataset,
    teacher: Option<&Teacher>,
    config: &TrainConfig,
) -> Result<TrainedChild> {
    config.validate()?;
    child.validate()?;
    if child.task_type != dataset.task_type {
        bail!(Validation, "child is for a {} task, dataset is {}", child.task_type, dataset.task_type);
    }
    if dataset.count(Split::Dev) == 0 {
        bail!(Validation, "child training needs a dev split");
    }
    let teacher = match teacher {
        Some(t) if config.gamma > 0.0 => {
            t.check_aligned(dataset)?;
            Some(t)
        }
        None if config.gamma > 0.0 => bail!(Config, "gamma = {} needs a teacher", config.gamma),
        _ => None,
    };
    let vocab = Vocab::build(dataset, config.max_len);
    let n = dataset.num_classes;
    let space = child_space(child, &vocab, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TrainedModel {
        child: ChildNet::new(&space, child, &mut rng)?,
        vocab,
    };
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let ids = model.child.net.weight_ids();
    let mut best: Option<(f64, usize, TrainedModel)> = None;
    let mut report = TrainReport {
        child: child.encoding(),
        seed: config.seed,
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_dev_accuracy: 0.0,
        best_dev_loss: f64::INFINITY,
    };
    for epoch in 0..config.epochs {
        let lr = config.lr(epoch);
        let (mut loss_sum, mut ce_sum, mut kd_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for batch in dataset.batches(Split::Train, config.batch_size, &mut rng) {
            let enc = encode_batch(&model.vocab, &batch, dataset.task_type);
            let tape = Tape::new();
            let bind = Binding::new(&tape, &model.child.net.store);
            let out = model.child.forward(&bind, &enc, true)?;
            let ce = out.logits.cross_entropy(&one_hot(&enc.labels, n), None)?;
            let (total, kd) = match teacher {
                Some(t) => {
                    let logits: Vec<Var> = out.layers.iter().map(|l| l.logits).collect();
                    let kd = attentive_kd_loss(&logits, &t.targets(&enc.ids)?, &enc.labels, config.kd_temperature)?;
                    (Var::add_n(&[ce.scale(1.0 - config.gamma), kd.scale(config.gamma)])?, kd.item())
                }
                None => (ce, 0.0),
            };
            if !total.item().is_finite() {
                bail!(Training, "non-finite loss while training {} in epoch {}", child.encoding(), epoch + 1);
            }
            let grads = tape.backward(&total)?;
            let mut g = bind.gradients(&grads);
            drop(bind);
            clip_grad_norm(&mut g, config.grad_clip);
            loss_sum += total.item();
            ce_sum += ce.item();
            kd_sum += kd;
            steps += 1;
            let store = &mut model.child.net.store;
            store.zero_grad();
            accumulate(store, g)?;
            sgd.step(store, &ids, lr);
        }
        let dev = evaluate(&model, dataset, Split::Dev)?;
        let s = steps.max(1) as f64;
        report.epochs.push(TrainEpoch {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / s,
            ce: ce_sum / s,
            kd: kd_sum / s,
            dev_accuracy: dev.accuracy,
            dev_loss: dev.loss,
        });
        report.best_dev_loss = report.best_dev_loss.min(dev.loss);
        if best.as_ref().map_or(true, |(acc, _, _)| dev.accuracy > *acc) {
            best = Some((dev.accuracy, epoch + 1, model.clone()));
        }
    }
    let (acc, epoch, model) = best.expect("at least one epoch");
    report.best_dev_accuracy = acc;
    report.best_epoch = epoch;
    log::info!("child {}: best dev accuracy {:.4} at epoch {}", report.child, acc, epoch);
    Ok(TrainedChild { model, report })
}

/// Accuracy, loss and per-class counts of a trained child on one split,
/// with batch-norm running statistics.
pub fn evaluate(model: &TrainedModel, dataset: &Dataset, split: Split) -> Result<Evaluation> {
    let examples: Vec<&Example> = dataset.split(split).collect();
    if examples.is_empty() {
        bail!(Validation, "the {} split is empty", split.as_str());
    }
    let n = dataset.num_classes;
    let mut per_class: Vec<ClassCounts> = (0..n)
        .map(|label| ClassCounts {
            label,
            examples: 0,
            correct: 0,
            predicted: 0,
        })
        .collect();
    let mut loss = 0.0;
    for chunk in examples.chunks(128) {
        let enc = encode_batch(&model.vocab, chunk, dataset.task_type);
        let tape = Tape::new();
        let bind = Binding::new(&tape, &model.child.net.store);
        let out = model.child.forward(&bind, &enc, false)?;
        loss += out.logits.cross_entropy(&one_hot(&enc.labels, n), None)?.item() * chunk.len() as f64;
        let z = out.logits.value();
        for (r, &y) in enc.labels.iter().enumerate() {
            let p = argmax(&z[r * n..(r + 1) * n]);
            per_class[y].examples += 1;
            per_class[p].predicted += 1;
            if p == y {
                per_class[y].correct += 1;
            }
        }
    }
    let correct = per_class.iter().map(|c| c.correct).sum();
    Ok(Evaluation {
        split,
        examples: examples.len(),
        correct,
        accuracy: correct as f64 / examples.len() as f64,
        loss: loss / examples.len() as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_task, TaskType, ToyKind};

    fn space_for(ds: &Dataset, k: usize) -> SpaceConfig {
        SpaceConfig {
            nodes: 1,
            k_max: k,
            embed_dim: 8,
            ..SpaceConfig::new(ds.task_type, 40, ds.num_classes)
        }
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            max_len: 16,
            gamma: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_child_predicts_one_class() {
        let ds = toy_task(ToyKind::KeywordSentiment, 200, 30, 1).unwrap();
        let child = ChildGraph::new(&space_for(&ds, 1), 1, &[OperationKind::Zero; 2]).unwrap();
        let t = train_child(&child, &ds, None, &quick(5)).unwrap();
        let ev = evaluate(&t.model, &ds, Split::Dev).unwrap();
        assert_eq!(ev.per_class.iter().filter(|c| c.predicted > 0).count(), 1);
        let majority = ev.per_class.iter().map(|c| c.examples).max().unwrap() as f64 / ev.examples as f64;
        assert!(ev.accuracy <= majority + 1e-12);
    }

    #[test]
    fn skip_child_learns_keywords() {
        let ds = toy_task(ToyKind::KeywordSentiment, 400, 40, 1).unwrap();
        let space = SpaceConfig {
            nodes: 3,
            ..space_for(&ds, 1)
        };
        let child = ChildGraph::new(&space, 1, &[OperationKind::Skip; 9]).unwrap();
        let t = train_child(&child, &ds, None, &quick(30)).unwrap();
        assert!(t.report.best_dev_accuracy >= 0.9, "{:?}", t.report.best_dev_accuracy);
        let ev = evaluate(&t.model, &ds, Split::Dev).unwrap();
        assert_eq!(ev.accuracy, t.report.best_dev_accuracy);
        assert_eq!(t.report.epochs.len(), 30);
        assert!(t.report.best_dev_loss <= t.report.epochs[0].dev_loss);
        let again = train_child(&child, &ds, None, &quick(30)).unwrap();
        assert_eq!(again.report, t.report);
        assert_eq!(again.model, t.model);
    }

    #[test]
    fn evaluation_counts_by_hand() {
        let mut examples = Vec::new();
        for i in 0..30 {
            examples.push(Example {
                id: format!("e{i}"),
                text_a: format!("w{} w{} w{}", i % 7, i % 5, i % 3),
                text_b: None,
                label: i % 2,
                split: if i < 20 { Split::Train } else { Split::Dev },
            });
        }
        let ds = Dataset::new(TaskType::SingleText, 2, examples).unwrap();
        let child = ChildGraph::new(&space_for(&ds, 2), 2, &[OperationKind::StdConv3, OperationKind::MaxPool3]).unwrap();
        let model = train_child(&child, &ds, None, &quick(2)).unwrap().model;
        let ev = evaluate(&model, &ds, Split::Dev).unwrap();
        let dev: Vec<&Example> = ds.split(Split::Dev).collect();
        let enc = encode_batch(&model.vocab, &dev, ds.task_type);
        let tape = Tape::new();
        let bind = Binding::new(&tape, &model.child.net.store);
        let z = model.child.forward(&bind, &enc, false).unwrap().logits.to_vec();
        let correct = (0..10).filter(|&r| argmax(&z[2 * r..2 * r + 2]) == dev[r].label).count();
        assert_eq!((ev.examples, ev.correct), (10, correct));
        assert_eq!(ev.per_class.iter().map(|c| c.predicted).sum::<usize>(), 10);
        assert_eq!(ev.per_class.iter().map(|c| c.correct).sum::<usize>(), correct);
        let train_only = Dataset::new(ds.task_type, 2, ds.split(Split::Train).cloned().collect()).unwrap();
        assert!(matches!(evaluate(&model, &train_only, Split::Dev), Err(Error::Validation(_))));
    }

    #[test]
    fn model_file_round_trip() {
        let ds = toy_task(ToyKind::KeywordSentiment, 100, 20, 1).unwrap();
        let child = ChildGraph::new(&space_for(&ds, 1), 1, &[OperationKind::StdConv3; 2]).unwrap();
        let model = train_child(&child, &ds, None, &quick(1)).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(TrainedModel::load(&path).unwrap(), model);
    }

    #[test]
    fn gamma_without_teacher_is_a_config_error() {
        let ds = toy_task(ToyKind::KeywordSentiment, 100, 20, 1).unwrap();
        let child = ChildGraph::new(&space_for(&ds, 1), 1, &[OperationKind::Skip; 2]).unwrap();
        let cfg = TrainConfig { gamma: 0.5, ..quick(1) };
        assert!(matches!(train_child(&child, &ds, None, &cfg), Err(Error::Config(_))));
    }
}
