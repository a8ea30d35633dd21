//! Supernet search, child retraining, evaluation and the exhaustive
//! enumeration used to check the search.

pub mod checkpoint;
mod config;
mod enumerate;
mod search;
mod train;

pub use config::{SearchConfig, TauDecay, TrainConfig};
pub use enumerate::{all_children, enumerate_and_rank, random_child, space_size, RankedChild, MAX_ENUMERATION};
pub use search::{
    resume_search, search, supernet_loss, EpochRecord, LossParts, SearchOutcome, SearchRunReport, SearchState,
};
pub use train::{child_space, evaluate, train_child, ClassCounts, Evaluation, TrainEpoch, TrainReport, TrainedChild, TrainedModel};
