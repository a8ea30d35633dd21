use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::config::SearchConfig;
use crate::data::{encode_batch, Dataset, EncodedBatch, Split, Vocab};
use crate::error::{bail, Error, Result};
use crate::losses::{
    attentive_kd_loss, build_cost_table, child_flops, child_params, efficiency_loss_var, CostTable,
    TeacherTargets,
};
use crate::nn::{accumulate, clip_grad_norm, Adam, Binding, Sgd};
use crate::space::{ChildGraph, SpaceConfig, SuperNet};
use crate::teacher::Teacher;
use crate::tensor::{Gradients, Tape, Var};

/// Loss components of one step or, averaged, of one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub kd: f64,
    pub eff: f64,
}

/// Search objective of one batch: `(1 - gamma) CE + gamma KD + beta L_E`
/// under one architecture draw from `rng`. Without `straight_through` the
/// draw stays relaxed, which makes the loss smooth in the logits.
#[allow(clippy::too_many_arguments)]
pub fn supernet_loss<'t, R: Rng>(
    net: &SuperNet,
    bind_w: &Binding<'t, '_>,
    bind_a: &Binding<'t, '_>,
    batch: &EncodedBatch,
    targets: Option<&TeacherTargets>,
    table: &CostTable,
    cfg: &SearchConfig,
    rng: &mut R,
    straight_through: bool,
) -> Result<(LossParts, Var<'t>)> {
    let sample = net.arch.sample(bind_a, rng, straight_through)?;
    let out = net.forward(bind_w, &sample, batch, true)?;
    let ce = out.logits.cross_entropy(&batch.one_hot(net.space().num_classes), None)?;
    let mut terms = vec![ce.scale(1.0 - cfg.gamma)];
    let mut parts = LossParts {
        ce: ce.item(),
        ..LossParts::default()
    };
    if cfg.gamma > 0.0 {
        let Some(targets) = targets else {
            bail!(Config, "gamma = {} needs teacher targets", cfg.gamma);
        };
        let logits: Vec<Var<'t>> = out.layers.iter().map(|l| l.logits).collect();
        // KD over layers 1..=k for every depth k, gated by the depth sample.
        let per_depth = (1..=logits.len())
            .map(|k| attentive_kd_loss(&logits[..k], targets, &batch.labels, cfg.kd_temperature))
            .collect::<Result<Vec<_>>>()?;
        let kd = Var::weighted_sum(&sample.k, &per_depth)?;
        parts.kd = kd.item();
        terms.push(kd.scale(cfg.gamma));
    }
    if cfg.beta > 0.0 {
        let eff = efficiency_loss_var(&sample, &net.space().ops, table)?;
        parts.eff = eff.item();
        terms.push(eff.scale(cfg.beta));
    }
    let total = Var::add_n(&terms)?;
    parts.total = total.item();
    Ok((parts, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossParts,
    pub tau: f64,
    pub lr: f64,
    pub entropy_k: f64,
    pub mean_entropy_o: f64,
    pub child: String,
    pub child_k: usize,
    pub child_params: u64,
    pub child_flops: u64,
}

/// Per-epoch records and the derived child. Wall-clock time is kept out so
/// that reruns produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRunReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub child: ChildGraph,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Epoch(&'a EpochRecord),
    Final { seed: u64, child: &'a ChildGraph },
}

impl SearchRunReport {
    /// One JSON object per line: every epoch, then the final child.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&ReportLine::Epoch(e)).expect("serializable"));
            out.push('\n');
        }
        let last = ReportLine::Final {
            seed: self.seed,
            child: &self.child,
        };
        out.push_str(&serde_json::to_string(&last).expect("serializable"));
        out.push('\n');
        out
    }
}

/// Everything needed to continue a search bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub config: SearchConfig,
    pub vocab: Vocab,
    pub supernet: SuperNet,
    pub sgd: Sgd,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub records: Vec<EpochRecord>,
}

impl SearchState {
    pub fn new(config: &SearchConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        if dataset.count(Split::Train) == 0 {
            bail!(Data, "the training split is empty");
        }
        let (space, vocab) = config.space(dataset);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let supernet = SuperNet::new(&space, config.tau(0), &mut rng)?;
        Ok(Self {
            config: config.clone(),
            vocab,
            supernet,
            sgd: Sgd::new(config.momentum, config.weight_decay),
            adam: Adam::new(config.arch_lr, config.arch_weight_decay),
            epoch: 0,
            rng,
            records: Vec::new(),
        })
    }

    pub fn space(&self) -> &SpaceConfig {
        self.supernet.space()
    }

    pub fn cost_table(&self) -> Result<CostTable> {
        build_cost_table(self.config.embed_dim, self.config.max_len)
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Argmax child of the current architecture logits.
    pub fn derive(&self) -> Result<ChildGraph> {
        self.supernet.arch.derive(self.space())
    }

    fn check_teacher(&self, dataset: &Dataset, teacher: Option<&Teacher>) -> Result<()> {
        match teacher {
            Some(t) => t.check_aligned(dataset),
            None if self.config.gamma > 0.0 => {
                bail!(Config, "gamma = {} needs a teacher; pass one or set gamma to 0", self.config.gamma)
            }
            None => Ok(()),
        }
    }

    /// Forward pass and loss of one batch under a fresh architecture draw.
    /// Returns the loss parts, the total on the tape and both bindings.
    fn losses<'t>(
        &self,
        tape: &'t Tape,
        batch: &EncodedBatch,
        targets: Option<&TeacherTargets>,
        table: &CostTable,
        rng: &mut ChaCha8Rng,
    ) -> Result<(LossParts, Var<'t>, Binding<'t, '_>, Binding<'t, '_>)> {
        let net = &self.supernet;
        let bind_w = Binding::new(tape, &net.net.store);
        let bind_a = Binding::new(tape, &net.arch.store);
        let (parts, total) = supernet_loss(net, &bind_w, &bind_a, batch, targets, table, &self.config, rng, true)?;
        Ok((parts, total, bind_w, bind_a))
    }

    fn step(
        &mut self,
        batch: &EncodedBatch,
        targets: Option<&TeacherTargets>,
        table: &CostTable,
        lr: f64,
    ) -> Result<LossParts> {
        let tape = Tape::new();
        let mut rng = self.rng.clone();
        let (parts, total, bind_w, bind_a) = self.losses(&tape, batch, targets, table, &mut rng)?;
        if !parts.total.is_finite() {
            bail!(Training, "non-finite loss {:?} in epoch {}", parts, self.epoch + 1);
        }
        let grads: Gradients = tape.backward(&total)?;
        let (mut gw, ga) = (bind_w.gradients(&grads), bind_a.gradients(&grads));
        drop((bind_w, bind_a));
        clip_grad_norm(&mut gw, self.config.grad_clip);
        self.rng = rng;
        let net = &mut self.supernet;
        net.net.store.zero_grad();
        net.arch.store.zero_grad();
        accumulate(&mut net.net.store, gw)?;
        accumulate(&mut net.arch.store, ga)?;
        let (wid, aid) = (net.net.weight_ids(), net.arch.ids());
        self.sgd.step(&mut net.net.store, &wid, lr);
        self.adam.step(&mut net.arch.store, &aid);
        if !net.net.store.all_finite() || !net.arch.store.all_finite() {
            bail!(Training, "parameters became non-finite in epoch {}", self.epoch + 1);
        }
        Ok(parts)
    }

    /// Architecture-parameter gradients of one batch without updating
    /// anything.
    pub fn arch_gradients(&self, dataset: &Dataset, teacher: Option<&Teacher>, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.check_teacher(dataset, teacher)?;
        let examples: Vec<_> = dataset.split(Split::Train).take(self.config.batch_size).collect();
        let batch = encode_batch(&self.vocab, &examples, dataset.task_type);
        let targets = teacher.map(|t| t.targets(&batch.ids)).transpose()?;
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = self.cost_table()?;
        let (_, total, _, bind_a) = self.losses(&tape, &batch, targets.as_ref(), &table, &mut rng)?;
        let grads = tape.backward(&total)?;
        Ok(bind_a.gradients(&grads).into_iter().map(|(_, g)| g).collect())
    }

    /// One pass over the training split.
    pub fn run_epoch(&mut self, dataset: &Dataset, teacher: Option<&Teacher>) -> Result<EpochRecord> {
        self.check_teacher(dataset, teacher)?;
        if self.is_done() {
            bail!(Validation, "search already ran its {} epochs", self.config.epochs);
        }
        let table = self.cost_table()?;
        let (tau, lr) = (self.config.tau(self.epoch), self.config.lr(self.epoch));
        self.supernet.arch.tau = tau;
        let batches: Vec<Vec<String>> = dataset
            .batches(Split::Train, self.config.batch_size, &mut self.rng)
            .into_iter()
            .map(|b| b.into_iter().map(|e| e.id.clone()).collect())
            .collect();
        let by_id: std::collections::HashMap<&str, &crate::data::Example> =
            dataset.examples.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut sum = LossParts::default();
        for ids in &batches {
            let examples: Vec<_> = ids.iter().map(|id| by_id[id.as_str()]).collect();
            let batch = encode_batch(&self.vocab, &examples, dataset.task_type);
            let targets = teacher.map(|t| t.targets(&batch.ids)).transpose()?;
            let p = self.step(&batch, targets.as_ref(), &table, lr)?;
            sum.total += p.total;
            sum.ce += p.ce;
            sum.kd += p.kd;
            sum.eff += p.eff;
        }
        let n = batches.len() as f64;
        let child = self.derive()?;
        let params = child_params(&child, self.space().vocab_size, self.space().num_classes, &table);
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            steps: batches.len(),
            loss: LossParts {
                total: sum.total / n,
                ce: sum.ce / n,
                kd: sum.kd / n,
                eff: sum.eff / n,
            },
            tau,
            lr,
            entropy_k: self.supernet.arch.entropy_k(),
            mean_entropy_o: self.supernet.arch.mean_entropy_o(),
            child: child.encoding(),
            child_k: child.k,
            child_params: params.total(),
            child_flops: child_flops(&child, &table),
        };
        log::info!(
            "epoch {}: loss {:.4} (ce {:.4} kd {:.4} eff {:.4}) tau {:.3} child {}",
            record.epoch,
            record.loss.total,
            record.loss.ce,
            record.loss.kd,
            record.loss.eff,
            tau,
            record.child
        );
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn report(&self) -> Result<SearchRunReport> {
        Ok(SearchRunReport {
            seed: self.config.seed,
            epochs: self.records.clone(),
            child: self.derive()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path)
    }
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub child: ChildGraph,
    pub report: SearchRunReport,
    pub state: SearchState,
    pub elapsed: Duration,
}

/// Runs (or resumes) a search to its last epoch. With a checkpoint path the
/// state is saved after every epoch, and a divergence error names the last
/// good checkpoint.
pub fn search(
    config: &SearchConfig,
    dataset: &Dataset,
    teacher: Option<&Teacher>,
    checkpoint_path: Option<&Path>,
) -> Result<SearchOutcome> {
    let start = Instant::now();
    let state = SearchState::new(config, dataset)?;
    resume(state, dataset, teacher, checkpoint_path, start)
}

pub fn resume_search(
    state: SearchState,
    dataset: &Dataset,
    teacher: Option<&Teacher>,
    checkpoint_path: Option<&Path>,
) -> Result<SearchOutcome> {
    resume(state, dataset, teacher, checkpoint_path, Instant::now())
}

fn resume(
    mut state: SearchState,
    dataset: &Dataset,
    teacher: Option<&Teacher>,
    checkpoint_path: Option<&Path>,
    start: Instant,
) -> Result<SearchOutcome> {
    let mut last_good = (state.epoch > 0 && checkpoint_path.is_some_and(|p| p.exists())).then_some(state.epoch);
    while !state.is_done() {
        if let Err(e) = state.run_epoch(dataset, teacher) {
            return Err(match (e, checkpoint_path, last_good) {
                (Error::Training(m), Some(p), Some(ep)) => {
                    Error::Training(format!("{m}; last good checkpoint {} (epoch {ep})", p.display()))
                }
                (Error::Training(m), _, _) => Error::Training(format!("{m}; no checkpoint was written")),
                (other, _, _) => other,
            });
        }
        if let Some(p) = checkpoint_path {
            state.save(p)?;
            last_good = Some(state.epoch);
        }
    }
    let report = state.report()?;
    Ok(SearchOutcome {
        child: report.child.clone(),
        report,
        state,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_task, ToyKind};
    use crate::space::OperationKind;
    use crate::teacher::{synthetic_teacher, ProbeSettings, SyntheticSpec};

    fn small(epochs: usize) -> SearchConfig {
        SearchConfig {
            nodes: 1,
            k_max: 2,
            embed_dim: 4,
            max_len: 8,
            ops: vec![OperationKind::StdConv3, OperationKind::MaxPool3, OperationKind::Skip],
            epochs,
            gamma: 0.0,
            arch_lr: 3e-3,
            ..SearchConfig::default()
        }
    }

    fn data() -> Dataset {
        toy_task(ToyKind::KeywordSentiment, 120, 30, 4).unwrap()
    }

    fn teacher(ds: &Dataset) -> Teacher {
        let view = synthetic_teacher(ds, &SyntheticSpec::new(3, 8, 0)).unwrap();
        Teacher::train(view, ds, &ProbeSettings::default()).unwrap()
    }

    #[test]
    fn reruns_are_identical() {
        let ds = data();
        let a = search(&small(3), &ds, None, None).unwrap();
        let b = search(&small(3), &ds, None, None).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.state, b.state);
        assert_eq!(a.report.to_jsonl(), b.report.to_jsonl());
        let c = search(&SearchConfig { seed: 1, ..small(3) }, &ds, None, None).unwrap();
        assert_ne!(a.state.supernet, c.state.supernet);
    }

    #[test]
    fn disabled_terms_report_zero() {
        let ds = data();
        let cfg = SearchConfig { beta: 0.0, ..small(2) };
        for r in search(&cfg, &ds, None, None).unwrap().report.epochs {
            assert_eq!((r.loss.kd, r.loss.eff), (0.0, 0.0));
            assert_eq!(r.loss.total, r.loss.ce);
        }
    }

    #[test]
    fn total_recombines_from_parts() {
        let ds = data();
        let t = teacher(&ds);
        let cfg = SearchConfig { gamma: 0.8, beta: 4.0, ..small(2) };
        for r in search(&cfg, &ds, Some(&t), None).unwrap().report.epochs {
            let l = r.loss;
            assert!(l.kd > 0.0 && l.eff > 0.0);
            assert!((l.total - (0.2 * l.ce + 0.8 * l.kd + 4.0 * l.eff)).abs() <= 1e-9, "{l:?}");
        }
    }

    #[test]
    fn efficiency_term_reaches_op_logits() {
        let ds = data();
        let with = SearchState::new(&SearchConfig { beta: 4.0, ..small(1) }, &ds).unwrap();
        let without = SearchState::new(&SearchConfig { beta: 0.0, ..small(1) }, &ds).unwrap();
        assert_eq!(with.supernet, without.supernet);
        let (g4, g0) = (with.arch_gradients(&ds, None, 7).unwrap(), without.arch_gradients(&ds, None, 7).unwrap());
        assert_eq!(g4.len(), 1 + with.space().topology().edges.len());
        assert!(g4[1..].iter().zip(&g0[1..]).any(|(a, b)| a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-6)));
    }

    #[test]
    fn gamma_needs_a_teacher() {
        let ds = data();
        let cfg = SearchConfig { gamma: 0.8, ..small(1) };
        assert!(matches!(search(&cfg, &ds, None, None), Err(Error::Config(_))));
    }

    #[test]
    fn resumed_search_matches_uninterrupted() {
        let ds = data();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("search.ckpt");
        let full = search(&small(3), &ds, None, None).unwrap();
        let mut state = SearchState::new(&small(3), &ds).unwrap();
        state.run_epoch(&ds, None).unwrap();
        state.save(&path).unwrap();
        let loaded = SearchState::load(&path).unwrap();
        assert_eq!(loaded, state);
        let resumed = resume_search(loaded, &ds, None, Some(&path)).unwrap();
        assert_eq!(resumed.report, full.report);
        assert_eq!(resumed.state, full.state);
        assert_eq!(SearchState::load(&path).unwrap(), full.state);
    }

    #[test]
    fn divergence_names_the_last_checkpoint() {
        let ds = data();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("search.ckpt");
        let mut state = SearchState::new(&small(3), &ds).unwrap();
        state.run_epoch(&ds, None).unwrap();
        state.save(&path).unwrap();
        let id = state.supernet.net.weight_ids()[0];
        state.supernet.net.store.get_mut(id).data_mut().fill(f64::NAN);
        match resume_search(state, &ds, None, Some(&path)) {
            Err(Error::Training(m)) => assert!(m.contains("last good checkpoint") && m.contains("epoch 1"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
