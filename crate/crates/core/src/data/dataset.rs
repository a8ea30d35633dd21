use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    SingleText,
    TextPair,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::SingleText => "single_text",
            TaskType::TextPair => "text_pair",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_text" | "single" => Ok(TaskType::SingleText),
            "text_pair" | "pair" => Ok(TaskType::TextPair),
            other => Err(Error::Config(format!("unknown task type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub task_type: TaskType,
    pub num_classes: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(task_type: TaskType, num_classes: usize, examples: Vec<Example>) -> Result<Self> {
        let ds = Self {
            task_type,
            num_classes,
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            bail!(Data, "a classification task needs at least two classes");
        }
        let mut seen = HashSet::new();
        for ex in &self.examples {
            if !seen.insert(ex.id.as_str()) {
                bail!(Data, "duplicate example id `{}`", ex.id);
            }
            if ex.label >= self.num_classes {
                bail!(Data, "example `{}` has label {} outside [0, {})", ex.id, ex.label, self.num_classes);
            }
            match (self.task_type, &ex.text_b) {
                (TaskType::SingleText, Some(_)) => {
                    bail!(Data, "example `{}` has a second text in a single-text task", ex.id)
                }
                (TaskType::TextPair, None) => {
                    bail!(Data, "example `{}` lacks the second text of a pair task", ex.id)
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Labels present in the training split.
    pub fn train_classes(&self) -> BTreeSet<usize> {
        self.split(Split::Train).map(|e| e.label).collect()
    }

    /// Shuffled mini-batches of one split. The last batch may be short.
    pub fn batches<R: Rng>(&self, split: Split, batch_size: usize, rng: &mut R) -> Vec<Vec<&Example>> {
        let mut items: Vec<&Example> = self.split(split).collect();
        items.shuffle(rng);
        items.chunks(batch_size.max(1)).map(<[&Example]>::to_vec).collect()
    }

    /// Batches in file order, for evaluation.
    pub fn ordered_batches(&self, split: Split, batch_size: usize) -> Vec<Vec<&Example>> {
        let items: Vec<&Example> = self.split(split).collect();
        items.chunks(batch_size.max(1)).map(<[&Example]>::to_vec).collect()
    }

    /// Writes the dataset as tab-separated values with a header row.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        let mut out = String::new();
        match self.task_type {
            TaskType::SingleText => out.push_str("id\ttext\tlabel\tsplit\n"),
            TaskType::TextPair => out.push_str("id\ttext_a\ttext_b\tlabel\tsplit\n"),
        }
        for ex in &self.examples {
            out.push_str(&clean(&ex.id));
            out.push('\t');
            out.push_str(&clean(&ex.text_a));
            if let Some(b) = &ex.text_b {
                out.push('\t');
                out.push_str(&clean(b));
            }
            out.push_str(&format!("\t{}\t{}\n", ex.label, ex.split.as_str()));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Reads a tab-separated dataset.
///
/// The header names the columns: `text` (or `text_a`), `text_b` for pair
/// tasks, and `label`. Optional `id` and `split` columns are honoured; rows
/// without them get their row index as id and land in the training split.
/// `num_classes`, when given, bounds the labels; otherwise it is inferred
/// as `max(label) + 1`.
pub fn load_dataset(path: &Path, task_type: TaskType, num_classes: Option<usize>) -> Result<Dataset> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_dataset(&raw, task_type, num_classes)
}

pub fn parse_dataset(raw: &str, task_type: TaskType, num_classes: Option<usize>) -> Result<Dataset> {
    let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        bail!(Data, "line 1: empty dataset file");
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |names: &[&str]| cols.iter().position(|c| names.contains(c));
    let text_a = find(&["text", "text_a"])
        .ok_or_else(|| Error::Data("line 1: missing `text` / `text_a` column".into()))?;
    let label_col = find(&["label"]).ok_or_else(|| Error::Data("line 1: missing `label` column".into()))?;
    let text_b = match task_type {
        TaskType::TextPair => Some(
            find(&["text_b"]).ok_or_else(|| Error::Data("line 1: missing `text_b` column".into()))?,
        ),
        TaskType::SingleText => None,
    };
    let id_col = find(&["id"]);
    let split_col = find(&["split"]);

    let mut examples = Vec::new();
    for (row, (idx, line)) in lines.enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| -> Result<&str> {
            fields
                .get(c)
                .copied()
                .ok_or_else(|| Error::Data(format!("line {lineno}: expected {} columns, found {}", cols.len(), fields.len())))
        };
        let label: usize = get(label_col)?
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {lineno}: label `{}` is not a class index", fields[label_col])))?;
        if let Some(n) = num_classes {
            if label >= n {
                bail!(Data, "line {lineno}: label {label} outside [0, {n})");
            }
        }
        let split = match split_col {
            Some(c) => match get(c)?.trim() {
                "train" => Split::Train,
                "dev" => Split::Dev,
                other => bail!(Data, "line {lineno}: unknown split `{other}`"),
            },
            None => Split::Train,
        };
        examples.push(Example {
            id: match id_col {
                Some(c) => get(c)?.trim().to_string(),
                None => row.to_string(),
            },
            text_a: get(text_a)?.to_string(),
            text_b: text_b.map(get).transpose()?.map(str::to_string),
            label,
            split,
        });
    }
    if examples.is_empty() {
        bail!(Data, "line 2: dataset has a header but no rows");
    }
    let inferred = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let ds = Dataset {
        task_type,
        num_classes: num_classes.unwrap_or(inferred.max(2)),
        examples,
    };
    ds.validate()?;
    Ok(ds)
}
