//! Labelled text datasets, tokenization and the synthetic toy tasks.

mod augment;
mod dataset;
mod toy;
mod vocab;

pub use augment::augment;
pub use dataset::{load_dataset, parse_dataset, Dataset, Example, Split, TaskType};
pub use toy::{toy_task, ToyKind, ToySpec};
pub use vocab::{encode_batch, tokenize, EncodedBatch, Vocab, DEFAULT_MAX_LEN, PAD, UNK};
