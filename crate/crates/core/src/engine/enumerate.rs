use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::train_child;
use crate::data::Dataset;
use crate::error::{bail, Result};
use crate::space::{ChildGraph, SpaceConfig};
use crate::teacher::Teacher;

/// Largest search space `enumerate_and_rank` agrees to train exhaustively.
pub const MAX_ENUMERATION: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedChild {
    pub rank: usize,
    pub child: ChildGraph,
    pub encoding: String,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

/// `|O|^edges * k_max`, saturating.
pub fn space_size(space: &SpaceConfig) -> usize {
    let edges = space.topology().edges.len() as u32;
    space.ops.len().saturating_pow(edges).saturating_mul(space.k_max)
}

/// Every child of the space, depth-major then in odometer order over edges.
pub fn all_children(space: &SpaceConfig) -> Result<Vec<ChildGraph>> {
    space.validate()?;
    let total = space_size(space);
    if total > MAX_ENUMERATION {
        bail!(Guard, "{} children exceed the enumeration limit of {}", total, MAX_ENUMERATION);
    }
    let edges = space.topology().edges.len();
    let per_k = total / space.k_max;
    let mut out = Vec::with_capacity(total);
    for k in 1..=space.k_max {
        for mut code in 0..per_k {
            let mut ops = Vec::with_capacity(edges);
            for _ in 0..edges {
                ops.push(space.ops[code % space.ops.len()]);
                code /= space.ops.len();
            }
            out.push(ChildGraph::new(space, k, &ops)?);
        }
    }
    Ok(out)
}

/// A child drawn uniformly from the space.
pub fn random_child<R: Rng>(space: &SpaceConfig, rng: &mut R) -> Result<ChildGraph> {
    let ops: Vec<_> = (0..space.topology().edges.len())
        .map(|_| space.ops[rng.gen_range(0..space.ops.len())])
        .collect();
    ChildGraph::new(space, rng.gen_range(1..=space.k_max), &ops)
}

/// Retrains every child with the same budget and seed and ranks them by
/// their best dev loss. `workers` threads share the work; the result does
/// not depend on their number.
pub fn enumerate_and_rank(
    space: &SpaceConfig,
    dataset: &Dataset,
    teacher: Option<&Teacher>,
    config: &TrainConfig,
    workers: usize,
) -> Result<Vec<RankedChild>> {
    let children = all_children(space)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<RankedChild>>> = Mutex::new(Vec::with_capacity(children.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(child) = children.get(i) else { break };
                let r = train_child(child, dataset, teacher, config).map(|t| RankedChild {
                    rank: 0,
                    child: child.clone(),
                    encoding: child.encoding(),
                    dev_loss: t.report.best_dev_loss,
                    dev_accuracy: t.report.best_dev_accuracy,
                });
                results.lock().expect("no worker panicked").push(r);
            });
        }
    });
    let mut ranked = results.into_inner().expect("no worker panicked").into_iter().collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.encoding.cmp(&b.encoding));
    ranked.sort_by(|a, b| a.dev_loss.total_cmp(&b.dev_loss));
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_task, TaskType, ToyKind};
    use crate::space::OperationKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn restricted(vocab: usize) -> SpaceConfig {
        SpaceConfig {
            nodes: 1,
            k_max: 2,
            embed_dim: 4,
            ops: vec![OperationKind::StdConv3, OperationKind::MaxPool3, OperationKind::Skip],
            ..SpaceConfig::new(TaskType::SingleText, vocab, 2)
        }
    }

    #[test]
    fn restricted_space_has_eighteen_children() {
        let s = restricted(10);
        assert_eq!(space_size(&s), 18);
        let all = all_children(&s).unwrap();
        assert_eq!(all.len(), 18);
        let mut codes: Vec<String> = all.iter().map(|c| c.encoding()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 18);
        assert_eq!(all[0].k, 1);
        assert_eq!(all[17].k, 2);
    }

    #[test]
    fn large_spaces_are_refused() {
        let s = SpaceConfig::new(TaskType::SingleText, 10, 2);
        assert!(space_size(&s) > MAX_ENUMERATION);
        assert!(matches!(all_children(&s), Err(crate::Error::Guard(_))));
    }

    #[test]
    fn random_children_stay_in_the_space() {
        let s = restricted(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            random_child(&s, &mut rng).unwrap().validate_for(&s).unwrap();
        }
    }

    #[test]
    fn ranking_does_not_depend_on_workers() {
        let ds = toy_task(ToyKind::KeywordSentiment, 100, 20, 2).unwrap();
        let (space, _) = crate::engine::SearchConfig {
            nodes: 1,
            k_max: 2,
            embed_dim: 4,
            max_len: 8,
            ops: restricted(1).ops,
            ..Default::default()
        }
        .space(&ds);
        let cfg = TrainConfig {
            epochs: 2,
            max_len: 8,
            gamma: 0.0,
            ..TrainConfig::default()
        };
        let one = enumerate_and_rank(&space, &ds, None, &cfg, 1).unwrap();
        let three = enumerate_and_rank(&space, &ds, None, &cfg, 3).unwrap();
        assert_eq!(one, three);
        assert_eq!(one.len(), 18);
        assert!(one.windows(2).all(|w| w[0].dev_loss <= w[1].dev_loss));
        assert_eq!(one.iter().map(|r| r.rank).collect::<Vec<_>>(), (1..=18).collect::<Vec<_>>());
    }
}
