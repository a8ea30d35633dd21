//! Frozen teacher knowledge: per-layer pooled states and the softmax probes
//! trained on them.

mod probe;
mod synthetic;
mod view;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use probe::{train_probe, train_probes, Probe, ProbeSet, ProbeSettings};
pub use synthetic::{synthetic_teacher, SyntheticSpec, SyntheticTeacher};
pub use view::{load_teacher, write_teacher, TeacherRecord, TeacherView, TEACHER_SCHEMA_VERSION};

use crate::data::Dataset;
use crate::error::{bail, Error, Result};
use crate::losses::TeacherTargets;

/// A view with its trained probes. Probe outputs are computed once per
/// layer for every example and reused.
#[derive(Debug)]
pub struct Teacher {
    view: TeacherView,
    probes: ProbeSet,
    cache: Vec<OnceLock<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ProbeCache {
    teacher_hash: String,
    probes: ProbeSet,
}

impl Teacher {
    pub fn new(view: TeacherView, probes: ProbeSet) -> Result<Self> {
        if probes.depth() != view.depth() || probes.hidden != view.hidden() {
            bail!(
                Data,
                "{} probes of width {} for a teacher with J={} H={}",
                probes.depth(),
                probes.hidden,
                view.depth(),
                view.hidden()
            );
        }
        if let Some(p) = probes.probes.iter().find(|p| {
            p.classes() != view.num_classes() || p.weight.len() != view.num_classes() * view.hidden()
        }) {
            bail!(Data, "probe with {} classes does not fit the teacher", p.classes());
        }
        let cache = (0..view.depth()).map(|_| OnceLock::new()).collect();
        Ok(Self { view, probes, cache })
    }

    pub fn train(view: TeacherView, dataset: &Dataset, settings: &ProbeSettings) -> Result<Self> {
        let probes = train_probes(&view, dataset, settings)?;
        Self::new(view, probes)
    }

    pub fn view(&self) -> &TeacherView {
        &self.view
    }

    pub fn probes(&self) -> &ProbeSet {
        &self.probes
    }

    pub fn depth(&self) -> usize {
        self.view.depth()
    }

    fn layer_probs(&self, j: usize) -> &[f64] {
        self.cache[j - 1].get_or_init(|| {
            let probe = &self.probes.probes[j - 1];
            self.view.records().iter().flat_map(|r| probe.probs(&r.layers[j - 1])).collect()
        })
    }

    /// Probe-`j` probabilities of the requested examples, row-major.
    pub fn probe_probs(&self, ids: &[impl AsRef<str>], j: usize) -> Result<Vec<f64>> {
        if j == 0 || j > self.depth() {
            bail!(Validation, "teacher layer {} outside [1, {}]", j, self.depth());
        }
        let n = self.view.num_classes();
        let all = self.layer_probs(j);
        let mut out = Vec::with_capacity(ids.len() * n);
        for id in ids {
            let Some(i) = self.view.position(id.as_ref()) else {
                bail!(Data, "example `{}` has no teacher record", id.as_ref());
            };
            out.extend_from_slice(&all[i * n..(i + 1) * n]);
        }
        Ok(out)
    }

    /// Probe outputs of every teacher layer for one batch.
    pub fn targets(&self, ids: &[impl AsRef<str>]) -> Result<TeacherTargets> {
        Ok(TeacherTargets {
            classes: self.view.num_classes(),
            probs: (1..=self.depth()).map(|j| self.probe_probs(ids, j)).collect::<Result<_>>()?,
        })
    }

    /// Every dataset example must have a teacher record with the same label.
    pub fn check_aligned(&self, dataset: &Dataset) -> Result<()> {
        if dataset.num_classes != self.view.num_classes() {
            bail!(Data, "dataset has {} classes, teacher {}", dataset.num_classes, self.view.num_classes());
        }
        for ex in &dataset.examples {
            match self.view.get(&ex.id) {
                Some(r) if r.label == ex.label => {}
                Some(r) => bail!(Data, "example `{}` is labelled {} but the teacher says {}", ex.id, ex.label, r.label),
                None => bail!(Data, "example `{}` has no teacher record", ex.id),
            }
        }
        Ok(())
    }

    /// Path of the probe cache kept beside a teacher file.
    pub fn cache_path(teacher_file: &Path) -> PathBuf {
        let mut name = teacher_file.as_os_str().to_owned();
        name.push(".probes.json");
        PathBuf::from(name)
    }

    /// Loads a teacher file and reuses the probe cache beside it when it was
    /// trained on the same vectors with the same settings; otherwise trains
    /// the probes and rewrites the cache.
    pub fn load_with_probes(path: &Path, dataset: &Dataset, settings: &ProbeSettings) -> Result<Self> {
        let view = load_teacher(path)?;
        let hash = view.content_hash();
        let cache = Self::cache_path(path);
        if let Ok(text) = fs::read_to_string(&cache) {
            match serde_json::from_str::<ProbeCache>(&text) {
                Ok(c) if c.teacher_hash == hash && c.probes.settings == *settings => {
                    log::info!("reusing probes from {}", cache.display());
                    return Self::new(view, c.probes);
                }
                Ok(_) => log::info!("probe cache {} is stale", cache.display()),
                Err(e) => log::warn!("ignoring unreadable probe cache {}: {e}", cache.display()),
            }
        }
        let teacher = Self::train(view, dataset, settings)?;
        teacher.save_probes(&cache)?;
        Ok(teacher)
    }

    pub fn save_probes(&self, path: &Path) -> Result<()> {
        let c = ProbeCache {
            teacher_hash: self.view.content_hash(),
            probes: self.probes.clone(),
        };
        let text = serde_json::to_string(&c).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_task, ToyKind};

    fn hand_set() -> Teacher {
        let records = vec![
            TeacherRecord {
                id: "a".into(),
                label: 0,
                layers: vec![vec![0.5, -1.0]],
            },
            TeacherRecord {
                id: "b".into(),
                label: 1,
                layers: vec![vec![2.0, 0.25]],
            },
        ];
        let view = TeacherView::new(1, 2, 2, records).unwrap();
        let probes = ProbeSet {
            probes: vec![Probe {
                weight: vec![1.0, 0.0, 0.0, 1.0],
                bias: vec![0.0, 0.5],
            }],
            hidden: 2,
            settings: ProbeSettings::default(),
            train_accuracy: vec![1.0],
            dev_accuracy: vec![None],
        };
        Teacher::new(view, probes).unwrap()
    }

    #[test]
    fn hand_set_probe_outputs() {
        let t = hand_set();
        let p = t.probe_probs(&["b", "a"], 1).unwrap();
        // softmax([2.0, 0.75]) and softmax([0.5, -0.5])
        let oracle = [0.7772998611746911, 0.22270013882530884, 0.7310585786300049, 0.2689414213699951];
        for (x, y) in p.iter().zip(oracle) {
            assert!((x - y).abs() < 1e-12, "{p:?}");
        }
        assert_eq!(t.probe_probs(&["b", "a"], 1).unwrap(), p);
        assert!(matches!(t.probe_probs(&["zz"], 1), Err(Error::Data(_))));
        assert!(t.probe_probs(&["a"], 2).is_err());
    }

    #[test]
    fn targets_rows_are_distributions() {
        let ds = toy_task(ToyKind::PairOverlapEquivalence, 200, 30, 2).unwrap();
        let view = synthetic_teacher(&ds, &SyntheticSpec::new(3, 8, 1)).unwrap();
        let t = Teacher::train(view, &ds, &ProbeSettings::default()).unwrap();
        t.check_aligned(&ds).unwrap();
        let ids: Vec<&str> = ds.examples.iter().map(|e| e.id.as_str()).collect();
        let tg = t.targets(&ids).unwrap();
        assert_eq!(tg.depth(), 3);
        for layer in &tg.probs {
            for row in layer.chunks(2) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn probe_cache_is_reused_and_keyed() {
        let ds = toy_task(ToyKind::KeywordSentiment, 200, 30, 2).unwrap();
        let view = synthetic_teacher(&ds, &SyntheticSpec::new(2, 8, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.jsonl");
        write_teacher(&view, &path).unwrap();
        let s = ProbeSettings::default();
        let first = Teacher::load_with_probes(&path, &ds, &s).unwrap();
        assert!(Teacher::cache_path(&path).exists());
        assert_eq!(first.view().content_hash(), view.content_hash());
        // A planted cache with the right key is picked up as is.
        let mut planted = first.probes().clone();
        planted.probes[0].bias = vec![3.0, -3.0];
        Teacher::new(view.clone(), planted.clone()).unwrap().save_probes(&Teacher::cache_path(&path)).unwrap();
        assert_eq!(Teacher::load_with_probes(&path, &ds, &s).unwrap().probes(), &planted);
        // Different settings retrain.
        let other = ProbeSettings { epochs: 2, ..s };
        assert_ne!(Teacher::load_with_probes(&path, &ds, &other).unwrap().probes(), &planted);
    }
}
