//! Synthetic tasks with planted, decidable labelling rules.
//!
//! Tokens are the words `w0 .. w{vocab_size-1}`. Every generator labels its
//! examples with [`ToySpec::rule`], so the rule is an exact oracle for both
//! splits.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example, Split, TaskType};
use super::vocab::tokenize;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Label 1 iff the text contains a planted positive keyword.
    KeywordSentiment,
    /// Label 1 iff the token sets of the two texts have Jaccard overlap >= 1/2.
    PairOverlapEquivalence,
    /// Label 1 iff the second text is an ordered subsequence of the first.
    PairOrderEntailment,
}

impl ToyKind {
    pub const ALL: [ToyKind; 3] = [
        ToyKind::KeywordSentiment,
        ToyKind::PairOverlapEquivalence,
        ToyKind::PairOrderEntailment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToyKind::KeywordSentiment => "keyword_sentiment",
            ToyKind::PairOverlapEquivalence => "pair_overlap_equivalence",
            ToyKind::PairOrderEntailment => "pair_order_entailment",
        }
    }

    pub fn task_type(self) -> TaskType {
        match self {
            ToyKind::KeywordSentiment => TaskType::SingleText,
            _ => TaskType::TextPair,
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown toy task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub size: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Planted positive keywords (keyword task only).
    #[serde(default = "default_keywords")]
    pub keywords: usize,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_keywords() -> usize {
    3
}
fn default_min_len() -> usize {
    6
}
fn default_max_len() -> usize {
    12
}

fn word(i: usize) -> String {
    format!("w{i}")
}

impl ToySpec {
    pub fn new(kind: ToyKind, size: usize, vocab_size: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            vocab_size,
            seed,
            keywords: default_keywords(),
            min_len: default_min_len(),
            max_len: default_max_len(),
        }
    }

    /// The planted positive keywords of the keyword task.
    pub fn positive_keywords(&self) -> Vec<String> {
        (0..self.keywords).map(word).collect()
    }

    fn negative_cues(&self) -> Vec<String> {
        (self.keywords..2 * self.keywords).map(word).collect()
    }

    fn filler(&self) -> Vec<String> {
        let start = match self.kind {
            ToyKind::KeywordSentiment => 2 * self.keywords,
            _ => 0,
        };
        (start..self.vocab_size).map(word).collect()
    }

    /// Exact labelling rule of this task.
    pub fn rule(&self, text_a: &str, text_b: Option<&str>) -> usize {
        let a = tokenize(text_a);
        let b = text_b.map(tokenize).unwrap_or_default();
        let hit = match self.kind {
            ToyKind::KeywordSentiment => {
                let keys: HashSet<String> = self.positive_keywords().into_iter().collect();
                a.iter().any(|t| keys.contains(t))
            }
            ToyKind::PairOverlapEquivalence => {
                let sa: HashSet<&String> = a.iter().collect();
                let sb: HashSet<&String> = b.iter().collect();
                let union = sa.union(&sb).count();
                union > 0 && 2 * sa.intersection(&sb).count() >= union
            }
            ToyKind::PairOrderEntailment => is_subsequence(&b, &a),
        };
        usize::from(hit)
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.vocab_size < 20 {
            bail!(Config, "toy vocabulary needs at least 20 words, got {}", self.vocab_size);
        }
        if self.size < 100 {
            bail!(Config, "toy datasets need at least 100 examples, got {}", self.size);
        }
        if self.min_len < 4 || self.max_len < self.min_len {
            bail!(Config, "toy text length range [{}, {}] is invalid", self.min_len, self.max_len);
        }
        if self.kind == ToyKind::KeywordSentiment && 2 * self.keywords + self.max_len > self.vocab_size {
            bail!(Config, "vocabulary too small for {} keywords", self.keywords);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let filler = self.filler();
        let mut by_class: [Vec<(String, Option<String>)>; 2] = [Vec::new(), Vec::new()];
        let want = [self.size - self.size / 2, self.size / 2];
        for class in [1usize, 0] {
            while by_class[class].len() < want[class] {
                let (a, b) = self.draw(class, &filler, &mut rng);
                // Keep only draws whose rule label matches the intended class.
                if self.rule(&a, b.as_deref()) == class {
                    by_class[class].push((a, b));
                }
            }
        }
        let mut examples = Vec::with_capacity(self.size);
        for (class, items) in by_class.into_iter().enumerate() {
            let n_train = (items.len() as f64 * 0.8).round() as usize;
            for (i, (a, b)) in items.into_iter().enumerate() {
                examples.push(Example {
                    id: String::new(),
                    text_a: a,
                    text_b: b,
                    label: class,
                    split: if i < n_train { Split::Train } else { Split::Dev },
                });
            }
        }
        examples.shuffle(&mut rng);
        for (i, ex) in examples.iter_mut().enumerate() {
            ex.id = i.to_string();
        }
        Dataset::new(self.kind.task_type(), 2, examples)
    }

    fn draw<R: Rng>(&self, class: usize, filler: &[String], rng: &mut R) -> (String, Option<String>) {
        let len = rng.gen_range(self.min_len..=self.max_len);
        match self.kind {
            ToyKind::KeywordSentiment => {
                let mut toks: Vec<String> = (0..len).map(|_| filler.choose(rng).unwrap().clone()).collect();
                let cues = self.negative_cues();
                if rng.gen_bool(0.5) {
                    let at = rng.gen_range(0..toks.len());
                    toks[at] = cues.choose(rng).unwrap().clone();
                }
                if class == 1 {
                    let at = rng.gen_range(0..toks.len());
                    toks[at] = self.positive_keywords().choose(rng).unwrap().clone();
                }
                (toks.join(" "), None)
            }
            ToyKind::PairOverlapEquivalence => {
                let a: Vec<String> = filler.choose_multiple(rng, len).cloned().collect();
                let b = if class == 1 {
                    let mut b = a.clone();
                    b.shuffle(rng);
                    if rng.gen_bool(0.5) {
                        let at = rng.gen_range(0..b.len());
                        b[at] = filler.choose(rng).unwrap().clone();
                    }
                    b
                } else {
                    let m = rng.gen_range(self.min_len..=self.max_len);
                    let mut b: Vec<String> = filler.choose_multiple(rng, m).cloned().collect();
                    let shared = rng.gen_range(0..=2).min(m);
                    for (slot, tok) in b.iter_mut().zip(a.choose_multiple(rng, shared)) {
                        *slot = tok.clone();
                    }
                    b.shuffle(rng);
                    b
                };
                (a.join(" "), Some(b.join(" ")))
            }
            ToyKind::PairOrderEntailment => {
                let a: Vec<String> = filler.choose_multiple(rng, len).cloned().collect();
                let m = rng.gen_range(3..=5.min(len));
                let mut idx: Vec<usize> = (0..len).collect::<Vec<_>>().choose_multiple(rng, m).copied().collect();
                idx.sort_unstable();
                let mut b: Vec<String> = idx.iter().map(|&i| a[i].clone()).collect();
                if class == 0 {
                    if rng.gen_bool(0.1) {
                        let at = rng.gen_range(0..m - 1);
                        b.swap(at, at + 1);
                    } else {
                        let present: HashSet<&String> = a.iter().collect();
                        let outside: Vec<&String> = filler.iter().filter(|w| !present.contains(w)).collect();
                        let at = rng.gen_range(0..m);
                        b[at] = (*outside.choose(rng).unwrap()).clone();
                    }
                }
                (a.join(" "), Some(b.join(" ")))
            }
        }
    }
}

fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Convenience wrapper over [`ToySpec::generate`] with default lengths.
pub fn toy_task(kind: ToyKind, size: usize, vocab_size: usize, seed: u64) -> Result<Dataset> {
    ToySpec::new(kind, size, vocab_size, seed).generate()
}
