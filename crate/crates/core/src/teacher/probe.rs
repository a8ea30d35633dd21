use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::view::TeacherView;
use crate::data::{Dataset, Split};
use crate::error::{bail, Result};
use crate::nn::{accumulate, Adam, Binding, ParamStore};
use crate::tensor::{argmax, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Softmax classifier over one teacher layer; `weight` is `[classes, H]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Probe {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let h = x.len();
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| b + self.weight[c * h..(c + 1) * h].iter().zip(x).map(|(w, v)| w * *v as f64).sum::<f64>())
            .collect()
    }

    pub fn probs(&self, x: &[f32]) -> Vec<f64> {
        let z = self.logits(x);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub probes: Vec<Probe>,
    pub hidden: usize,
    pub settings: ProbeSettings,
    pub train_accuracy: Vec<f64>,
    pub dev_accuracy: Vec<Option<f64>>,
}

impl ProbeSet {
    pub fn depth(&self) -> usize {
        self.probes.len()
    }
}

fn rows<'a>(view: &'a TeacherView, dataset: &'a Dataset, split: Split) -> Result<Vec<(&'a [Vec<f32>], usize)>> {
    dataset
        .split(split)
        .map(|ex| match view.get(&ex.id) {
            Some(r) if r.label == ex.label => Ok((r.layers.as_slice(), ex.label)),
            Some(r) => bail!(Data, "example `{}` has label {} in the dataset but {} in the teacher", ex.id, ex.label, r.label),
            None => bail!(Data, "example `{}` has no teacher record", ex.id),
        })
        .collect()
}

fn accuracy(probe: &Probe, rows: &[(&[Vec<f32>], usize)], layer: usize) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let hits = rows.iter().filter(|(l, y)| argmax(&probe.logits(&l[layer])) == *y).count();
    Some(hits as f64 / rows.len() as f64)
}

/// Trains the probe of teacher layer `j` (1-based) on the training split.
/// Returns the probe with its train and dev accuracy.
pub fn train_probe(
    view: &TeacherView,
    dataset: &Dataset,
    j: usize,
    settings: &ProbeSettings,
) -> Result<(Probe, f64, Option<f64>)> {
    if j == 0 || j > view.depth() {
        bail!(Validation, "probe layer {} outside [1, {}]", j, view.depth());
    }
    if dataset.num_classes != view.num_classes() {
        bail!(Data, "dataset has {} classes, teacher {}", dataset.num_classes, view.num_classes());
    }
    let classes = dataset.train_classes();
    if classes.len() < 2 {
        bail!(DegenerateTask, "training split holds {} distinct label(s); probes need two", classes.len());
    }
    let train = rows(view, dataset, Split::Train)?;
    let dev = rows(view, dataset, Split::Dev)?;
    let (n, h, layer) = (view.num_classes(), view.hidden(), j - 1);
    let mut store = ParamStore::new();
    let w = store.add("weight", Tensor::param(vec![n, h], vec![0.0; n * h]));
    let b = store.add("bias", Tensor::param(vec![n], vec![0.0; n]));
    let mut opt = Adam::new(settings.lr, settings.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(j as u64));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(settings.batch_size.max(1)) {
            let x: Vec<f64> = chunk.iter().flat_map(|&i| train[i].0[layer].iter().map(|v| *v as f64)).collect();
            let mut target = vec![0.0; chunk.len() * n];
            for (r, &i) in chunk.iter().enumerate() {
                target[r * n + train[i].1] = 1.0;
            }
            let tape = Tape::new();
            let bind = Binding::new(&tape, &store);
            let xv = tape.constant(vec![chunk.len(), h], x)?;
            let loss = xv.linear(&bind.var(w), &bind.var(b))?.cross_entropy(&target, None)?;
            let grads = tape.backward(&loss)?;
            let g = bind.gradients(&grads);
            drop(bind);
            store.zero_grad();
            accumulate(&mut store, g)?;
            opt.step(&mut store, &[w, b]);
        }
    }
    let probe = Probe {
        weight: store.get(w).data().to_vec(),
        bias: store.get(b).data().to_vec(),
    };
    let train_acc = accuracy(&probe, &train, layer).unwrap_or(0.0);
    let dev_acc = accuracy(&probe, &dev, layer);
    Ok((probe, train_acc, dev_acc))
}

/// One independently trained probe per teacher layer. The view is only read.
pub fn train_probes(view: &TeacherView, dataset: &Dataset, settings: &ProbeSettings) -> Result<ProbeSet> {
    let mut set = ProbeSet {
        probes: Vec::with_capacity(view.depth()),
        hidden: view.hidden(),
        settings: settings.clone(),
        train_accuracy: Vec::new(),
        dev_accuracy: Vec::new(),
    };
    for j in 1..=view.depth() {
        let (p, tr, dv) = train_probe(view, dataset, j, settings)?;
        log::debug!("probe {j}: train {tr:.3} dev {dv:?}");
        set.probes.push(p);
        set.train_accuracy.push(tr);
        set.dev_accuracy.push(dv);
    }
    Ok(set)
}
