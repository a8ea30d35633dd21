use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Example, Split, TaskType};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 128;

/// Lowercase, strip punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token index built from the training split. Index 0 is padding, 1 is
/// unknown; the rest follow first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    max_len: usize,
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        let index = f.tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens: f.tokens,
            index,
            max_len: f.max_len,
        }
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        Self {
            max_len: v.max_len,
            tokens: v.tokens,
        }
    }
}

impl Vocab {
    pub fn build(dataset: &Dataset, max_len: usize) -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut index = HashMap::new();
        for ex in dataset.split(Split::Train) {
            let texts = std::iter::once(&ex.text_a).chain(ex.text_b.as_ref());
            for tok in texts.flat_map(|t| tokenize(t)) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), tokens.len());
                    tokens.push(tok);
                }
            }
        }
        Self { tokens, index, max_len }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids truncated or padded to `max_len`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(text)
            .iter()
            .take(self.max_len)
            .map(|t| self.id(t))
            .collect();
        ids.resize(self.max_len, PAD);
        ids
    }
}

/// Token ids for the two layer-one inputs of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub len: usize,
    pub tokens_a: Vec<usize>,
    pub tokens_b: Vec<usize>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub task_type: TaskType,
}

impl EncodedBatch {
    /// One-hot label rows for `num_classes` classes.
    pub fn one_hot(&self, num_classes: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * num_classes];
        for (r, &l) in self.labels.iter().enumerate() {
            out[r * num_classes + l] = 1.0;
        }
        out
    }
}

/// Single-text batches feed the same text to both inputs; pair batches feed
/// the two texts separately.
pub fn encode_batch(vocab: &Vocab, examples: &[&Example], task_type: TaskType) -> EncodedBatch {
    let len = vocab.max_len;
    let mut tokens_a = Vec::with_capacity(examples.len() * len);
    let mut tokens_b = Vec::with_capacity(examples.len() * len);
    for ex in examples {
        let a = vocab.encode(&ex.text_a);
        if a.iter().all(|&t| t == PAD) {
            warn!("example `{}` has no tokens; encoding as padding", ex.id);
        }
        let b = match (task_type, &ex.text_b) {
            (TaskType::TextPair, Some(t)) => vocab.encode(t),
            (TaskType::TextPair, None) => vec![PAD; len],
            (TaskType::SingleText, _) => a.clone(),
        };
        tokens_a.extend(a);
        tokens_b.extend(b);
    }
    EncodedBatch {
        batch: examples.len(),
        len,
        tokens_a,
        tokens_b,
        labels: examples.iter().map(|e| e.label).collect(),
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        task_type,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, a: &str, b: Option<&str>, split: Split) -> Example {
        Example {
            id: id.into(),
            text_a: a.into(),
            text_b: b.map(Into::into),
            label: 0,
            split,
        }
    }

    #[test]
    fn lowercasing_merges_tokens() {
        let ds = Dataset::new(TaskType::SingleText, 2, vec![ex("0", "Hello hello", None, Split::Train)]).unwrap();
        let v = Vocab::build(&ds, 8);
        let ids = v.encode("Hello hello");
        assert_eq!(ids[0], ids[1]);
        assert_eq!(ids[2..], [PAD; 6]);
        assert_eq!(tokenize("Wait, what?!"), vec!["wait", "what"]);
    }

    #[test]
    fn truncation_to_max_len() {
        let text: Vec<String> = (0..200).map(|i| format!("t{i}")).collect();
        let ds = Dataset::new(TaskType::SingleText, 2, vec![ex("0", &text.join(" "), None, Split::Train)]).unwrap();
        let v = Vocab::build(&ds, DEFAULT_MAX_LEN);
        let ids = v.encode(&text.join(" "));
        assert_eq!(ids.len(), 128);
        assert!(ids.iter().all(|&i| i > UNK));
    }

    #[test]
    fn dev_only_tokens_are_unknown() {
        let ds = Dataset::new(
            TaskType::SingleText,
            2,
            vec![ex("0", "seen words", None, Split::Train), ex("1", "hidden", None, Split::Dev)],
        )
        .unwrap();
        let v = Vocab::build(&ds, 4);
        assert_eq!(v.len(), 4);
        assert_eq!(v.encode("hidden seen")[..2], [UNK, 2]);
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn single_text_inputs_are_identical() {
        let ds = Dataset::new(
            TaskType::SingleText,
            2,
            vec![ex("0", "a b c", None, Split::Train), ex("1", "", None, Split::Train)],
        )
        .unwrap();
        let v = Vocab::build(&ds, 5);
        let refs: Vec<&Example> = ds.examples.iter().collect();
        let b = encode_batch(&v, &refs, TaskType::SingleText);
        assert_eq!(b.tokens_a, b.tokens_b);
        assert_eq!(b.tokens_a[5..], [PAD; 5]);
        assert_eq!(encode_batch(&v, &refs, TaskType::SingleText), b);
    }

    #[test]
    fn pair_inputs_are_separate() {
        let ds = Dataset::new(TaskType::TextPair, 2, vec![ex("0", "a b", Some("c"), Split::Train)]).unwrap();
        let v = Vocab::build(&ds, 3);
        let refs: Vec<&Example> = ds.examples.iter().collect();
        let b = encode_batch(&v, &refs, TaskType::TextPair);
        assert_eq!(b.tokens_a, vec![2, 3, PAD]);
        assert_eq!(b.tokens_b, vec![4, PAD, PAD]);
    }
}
