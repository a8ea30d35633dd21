use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Example, Split};
use super::vocab::tokenize;
use crate::error::{bail, Result};

/// Adds `copies` perturbed versions of every training example. Each token
/// is independently swapped, with probability `replace_prob`, for a
/// different token drawn uniformly from the training vocabulary. Labels are
/// kept; originals and the dev split are left as they are.
pub fn augment(dataset: &Dataset, replace_prob: f64, copies: usize, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&replace_prob) {
        bail!(Config, "replace probability {} outside [0, 1]", replace_prob);
    }
    let pool: Vec<String> = dataset
        .split(Split::Train)
        .flat_map(|e| std::iter::once(&e.text_a).chain(e.text_b.as_ref()))
        .flat_map(|t| tokenize(t))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturb = |text: &str, rng: &mut ChaCha8Rng| -> String {
        tokenize(text)
            .into_iter()
            .map(|tok| {
                if pool.len() > 1 && rng.gen_bool(replace_prob) {
                    loop {
                        let cand = &pool[rng.gen_range(0..pool.len())];
                        if *cand != tok {
                            break cand.clone();
                        }
                    }
                } else {
                    tok
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut examples = dataset.examples.clone();
    for ex in dataset.split(Split::Train) {
        for c in 1..=copies {
            examples.push(Example {
                id: format!("{}#aug{}", ex.id, c),
                text_a: perturb(&ex.text_a, &mut rng),
                text_b: ex.text_b.as_deref().map(|t| perturb(t, &mut rng)),
                label: ex.label,
                split: Split::Train,
            });
        }
    }
    Dataset::new(dataset.task_type, dataset.num_classes, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{toy_task, ToyKind};

    fn originals(ds: &Dataset) -> Vec<&Example> {
        ds.examples.iter().filter(|e| !e.id.contains("#aug")).collect()
    }

    #[test]
    fn zero_probability_copies_text() {
        let ds = toy_task(ToyKind::KeywordSentiment, 100, 40, 1).unwrap();
        let aug = augment(&ds, 0.0, 1, 9).unwrap();
        assert_eq!(originals(&aug).len(), ds.examples.len());
        for ex in aug.examples.iter().filter(|e| e.id.contains("#aug")) {
            let src = ds.examples.iter().find(|o| ex.id.starts_with(&format!("{}#", o.id))).unwrap();
            assert_eq!(tokenize(&src.text_a), tokenize(&ex.text_a));
            assert_eq!(src.label, ex.label);
        }
    }

    #[test]
    fn full_probability_replaces_every_token() {
        let ds = toy_task(ToyKind::PairOverlapEquivalence, 100, 40, 2).unwrap();
        let aug = augment(&ds, 1.0, 1, 3).unwrap();
        for ex in aug.examples.iter().filter(|e| e.id.ends_with("#aug1")) {
            let id = ex.id.trim_end_matches("#aug1");
            let src = ds.examples.iter().find(|o| o.id == id).unwrap();
            for (a, b) in tokenize(&src.text_a).iter().zip(tokenize(&ex.text_a)) {
                assert_ne!(*a, b);
            }
        }
    }

    #[test]
    fn replaced_fraction_concentrates() {
        let ds = toy_task(ToyKind::KeywordSentiment, 1200, 80, 4).unwrap();
        let aug = augment(&ds, 0.1, 1, 5).unwrap();
        let (mut total, mut changed) = (0usize, 0usize);
        for ex in aug.examples.iter().filter(|e| e.id.ends_with("#aug1")) {
            let id = ex.id.trim_end_matches("#aug1");
            let src = ds.examples.iter().find(|o| o.id == id).unwrap();
            for (a, b) in tokenize(&src.text_a).iter().zip(tokenize(&ex.text_a)) {
                total += 1;
                changed += usize::from(*a != b);
            }
        }
        assert!(total >= 8000, "{total}");
        let frac = changed as f64 / total as f64;
        assert!((0.08..=0.12).contains(&frac), "{frac}");
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = toy_task(ToyKind::PairOrderEntailment, 100, 40, 6).unwrap();
        assert_eq!(augment(&ds, 0.2, 2, 1).unwrap(), augment(&ds, 0.2, 2, 1).unwrap());
        assert!(augment(&ds, 1.5, 1, 1).is_err());
    }
}
