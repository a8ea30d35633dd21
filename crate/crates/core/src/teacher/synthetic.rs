use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::view::{TeacherRecord, TeacherView};
use crate::data::{tokenize, Dataset, Example, Split, TaskType, Vocab};
use crate::error::{bail, Result};
use crate::nn::{accumulate, Adam, Binding, ParamId, ParamStore};
use crate::tensor::{argmax, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub depth: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Training fails unless the teacher reaches this train accuracy.
    pub target_accuracy: f64,
    /// Training stops early once this train accuracy is reached.
    pub stop_accuracy: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            depth: 6,
            hidden: 32,
            epochs: 60,
            lr: 1e-2,
            batch_size: 32,
            target_accuracy: 0.9,
            stop_accuracy: 0.99,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn new(depth: usize, hidden: usize, seed: u64) -> Self {
        Self {
            depth,
            hidden,
            seed,
            ..Self::default()
        }
    }

    /// `J=<depth>,H=<hidden>[,seed=..][,epochs=..][,lr=..]`, keys in any order.
    pub fn parse(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let Some((k, v)) = part.split_once('=') else {
                bail!(Config, "synthetic teacher option `{part}` is not key=value");
            };
            let bad = |e: &dyn std::fmt::Display| crate::Error::Config(format!("synthetic teacher `{k}`: {e}"));
            match k.trim() {
                "J" | "depth" => spec.depth = v.parse().map_err(|e| bad(&e))?,
                "H" | "hidden" => spec.hidden = v.parse().map_err(|e| bad(&e))?,
                "seed" => spec.seed = v.parse().map_err(|e| bad(&e))?,
                "epochs" => spec.epochs = v.parse().map_err(|e| bad(&e))?,
                "lr" => spec.lr = v.parse().map_err(|e| bad(&e))?,
                "batch_size" => spec.batch_size = v.parse().map_err(|e| bad(&e))?,
                "target" => spec.target_accuracy = v.parse().map_err(|e| bad(&e))?,
                other => bail!(Config, "unknown synthetic teacher option `{other}`"),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.batch_size == 0 {
            bail!(Config, "synthetic teacher needs positive J, H and batch size");
        }
        if !(self.lr > 0.0) {
            bail!(Config, "synthetic teacher learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Weights {
    embedding: ParamId,
    input: Vec<(ParamId, ParamId)>,
    layers: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

/// Stack of residual `tanh` layers over mean-pooled word embeddings,
/// trained on the task and then frozen.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    spec: SyntheticSpec,
    task_type: TaskType,
    num_classes: usize,
    vocab: Vocab,
    store: ParamStore,
    weights: Weights,
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

impl SyntheticTeacher {
    pub fn fit(dataset: &Dataset, spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        if dataset.train_classes().len() < 2 {
            bail!(DegenerateTask, "synthetic teacher needs at least two training classes");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let vocab = Vocab::build(dataset, usize::MAX);
        let (h, n) = (spec.hidden, dataset.num_classes);
        let mut store = ParamStore::new();
        let embedding = store.add_fan_in("embedding", vec![vocab.len(), h], h, &mut rng);
        let inputs = match dataset.task_type {
            TaskType::SingleText => 1,
            TaskType::TextPair => 4,
        };
        let mut affine = |store: &mut ParamStore, name: String, out: usize| {
            (
                store.add_fan_in(format!("{name}.weight"), vec![out, h], h, &mut rng),
                store.add_fan_in(format!("{name}.bias"), vec![out], h, &mut rng),
            )
        };
        let input = (0..inputs).map(|i| affine(&mut store, format!("input{i}"), h)).collect();
        let layers = (1..=spec.depth).map(|j| affine(&mut store, format!("layer{j}"), h)).collect();
        let head = affine(&mut store, "head".into(), n);
        let mut teacher = Self {
            spec: spec.clone(),
            task_type: dataset.task_type,
            num_classes: n,
            vocab,
            store,
            weights: Weights {
                embedding,
                input,
                layers,
                head,
            },
            train_accuracy: 0.0,
            epochs_run: 0,
        };
        teacher.train(dataset, &mut rng)?;
        Ok(teacher)
    }

    fn train(&mut self, dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<()> {
        let ids: Vec<ParamId> = self.store.ids().collect();
        let mut opt = Adam::new(self.spec.lr, 0.0);
        let train: Vec<&Example> = dataset.split(Split::Train).collect();
        for epoch in 1..=self.spec.epochs {
            for batch in dataset.batches(Split::Train, self.spec.batch_size, rng) {
                let tape = Tape::new();
                let bind = Binding::new(&tape, &self.store);
                let (_, logits) = self.forward(&bind, &batch)?;
                let mut target = vec![0.0; batch.len() * self.num_classes];
                for (r, e) in batch.iter().enumerate() {
                    target[r * self.num_classes + e.label] = 1.0;
                }
                let loss = logits.cross_entropy(&target, None)?;
                if !loss.item().is_finite() {
                    bail!(Training, "synthetic teacher loss diverged in epoch {epoch}");
                }
                let grads = tape.backward(&loss)?;
                let g = bind.gradients(&grads);
                drop(bind);
                self.store.zero_grad();
                accumulate(&mut self.store, g)?;
                opt.step(&mut self.store, &ids);
            }
            self.epochs_run = epoch;
            self.train_accuracy = self.accuracy(&train)?;
            log::debug!("synthetic teacher epoch {epoch}: train accuracy {:.4}", self.train_accuracy);
            if self.train_accuracy >= self.spec.stop_accuracy {
                break;
            }
        }
        if self.train_accuracy < self.spec.target_accuracy {
            bail!(
                Training,
                "synthetic teacher reached train accuracy {:.4} after {} epochs, needs {} (J={}, H={}, lr={})",
                self.train_accuracy,
                self.epochs_run,
                self.spec.target_accuracy,
                self.spec.depth,
                self.spec.hidden,
                self.spec.lr
            );
        }
        Ok(())
    }

    /// Row-normalized token counts `[B, V]`; multiplying by the embedding
    /// table mean-pools over the non-padding tokens.
    fn bag<'t>(&self, tape: &'t Tape, texts: &[&str]) -> Result<Var<'t>> {
        let v = self.vocab.len();
        let mut m = vec![0.0; texts.len() * v];
        for (r, t) in texts.iter().enumerate() {
            let toks = tokenize(t);
            for tok in &toks {
                m[r * v + self.vocab.id(tok)] += 1.0 / toks.len() as f64;
            }
        }
        tape.constant(vec![texts.len(), v], m)
    }

    fn forward<'t>(&self, bind: &Binding<'t, '_>, batch: &[&Example]) -> Result<(Vec<Var<'t>>, Var<'t>)> {
        let tape = bind.tape();
        let w = &self.weights;
        let table = bind.var(w.embedding);
        let lin = |x: &Var<'t>, (wi, bi): (ParamId, ParamId)| x.linear(&bind.var(wi), &bind.var(bi));
        let a_txt: Vec<&str> = batch.iter().map(|e| e.text_a.as_str()).collect();
        let a = self.bag(tape, &a_txt)?.matmul(&table)?;
        let pre = match self.task_type {
            TaskType::SingleText => lin(&a, w.input[0])?,
            TaskType::TextPair => {
                let b_txt: Vec<&str> = batch.iter().map(|e| e.text_b.as_deref().unwrap_or("")).collect();
                let b = self.bag(tape, &b_txt)?.matmul(&table)?;
                let d = a.sub(&b)?;
                Var::add_n(&[
                    lin(&a, w.input[0])?,
                    lin(&b, w.input[1])?,
                    lin(&a.mul(&b)?, w.input[2])?,
                    lin(&d.mul(&d)?, w.input[3])?,
                ])?
            }
        };
        let mut h = pre.tanh();
        let mut states = Vec::with_capacity(w.layers.len());
        for &l in &w.layers {
            h = h.add(&lin(&h, l)?.tanh())?;
            states.push(h);
        }
        let logits = lin(&h, w.head)?;
        Ok((states, logits))
    }

    fn accuracy(&self, examples: &[&Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for chunk in examples.chunks(256) {
            let tape = Tape::new();
            let bind = Binding::new(&tape, &self.store);
            let (_, logits) = self.forward(&bind, chunk)?;
            let z = logits.value();
            hits += chunk
                .iter()
                .enumerate()
                .filter(|(r, e)| argmax(&z[r * self.num_classes..(r + 1) * self.num_classes]) == e.label)
                .count();
        }
        Ok(hits as f64 / examples.len() as f64)
    }

    pub fn dev_accuracy(&self, dataset: &Dataset) -> Result<f64> {
        self.accuracy(&dataset.split(Split::Dev).collect::<Vec<_>>())
    }

    /// Per-layer states of every example in the dataset, rounded to `f32`.
    pub fn view(&self, dataset: &Dataset) -> Result<TeacherView> {
        let mut records = Vec::with_capacity(dataset.examples.len());
        let all: Vec<&Example> = dataset.examples.iter().collect();
        let h = self.spec.hidden;
        for chunk in all.chunks(256) {
            let tape = Tape::new();
            let bind = Binding::new(&tape, &self.store);
            let (states, _) = self.forward(&bind, chunk)?;
            let values: Vec<_> = states.iter().map(Var::value).collect();
            for (r, e) in chunk.iter().enumerate() {
                records.push(TeacherRecord {
                    id: e.id.clone(),
                    label: e.label,
                    layers: values.iter().map(|v| v[r * h..(r + 1) * h].iter().map(|x| *x as f32).collect()).collect(),
                });
            }
        }
        TeacherView::new(self.spec.depth, h, self.num_classes, records)
    }
}

/// Fits a synthetic teacher on the dataset and returns its view.
pub fn synthetic_teacher(dataset: &Dataset, spec: &SyntheticSpec) -> Result<TeacherView> {
    SyntheticTeacher::fit(dataset, spec)?.view(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_task, ToyKind};
    use crate::teacher::{train_probes, ProbeSettings};

    #[test]
    fn spec_strings() {
        let s = SyntheticSpec::parse("J=12, H=64,seed=3").unwrap();
        assert_eq!((s.depth, s.hidden, s.seed), (12, 64, 3));
        assert!(SyntheticSpec::parse("J=2,colour=red").is_err());
        assert!(SyntheticSpec::parse("J").is_err());
        assert!(SyntheticSpec::parse("J=0").is_err());
    }

    #[test]
    fn fits_every_toy_task_deterministically() {
        for kind in ToyKind::ALL {
            let ds = toy_task(kind, 400, 40, 1).unwrap();
            let spec = SyntheticSpec::new(3, 16, 2);
            let t = SyntheticTeacher::fit(&ds, &spec).unwrap();
            assert!(t.train_accuracy >= 0.9, "{kind}: {}", t.train_accuracy);
            let v = t.view(&ds).unwrap();
            assert_eq!(v.len(), 400);
            assert_eq!(v, synthetic_teacher(&ds, &spec).unwrap(), "{kind}");
        }
    }

    #[test]
    fn last_layer_probe_not_worse_than_first() {
        let ds = toy_task(ToyKind::KeywordSentiment, 600, 50, 4).unwrap();
        let v = synthetic_teacher(&ds, &SyntheticSpec::new(4, 16, 0)).unwrap();
        let probes = train_probes(&v, &ds, &ProbeSettings::default()).unwrap();
        let acc = &probes.dev_accuracy;
        assert!(acc[3].unwrap() >= acc[0].unwrap() - 0.05, "{acc:?}");
    }

    #[test]
    fn shape_of_a_deep_view() {
        let ds = toy_task(ToyKind::KeywordSentiment, 2000, 60, 0).unwrap();
        let spec = SyntheticSpec {
            epochs: 1,
            target_accuracy: 0.0,
            ..SyntheticSpec::new(12, 64, 0)
        };
        let v = synthetic_teacher(&ds, &spec).unwrap();
        assert_eq!(v.len() * v.depth(), 2000 * 12);
        assert!(v.records().iter().all(|r| r.layers.iter().all(|l| l.len() == 64)));
    }

    #[test]
    fn budget_exhaustion_is_a_training_error() {
        let ds = toy_task(ToyKind::PairOrderEntailment, 200, 40, 0).unwrap();
        let spec = SyntheticSpec {
            epochs: 1,
            lr: 1e-6,
            ..SyntheticSpec::new(2, 8, 0)
        };
        assert!(matches!(SyntheticTeacher::fit(&ds, &spec), Err(crate::Error::Training(_))));
    }
}
