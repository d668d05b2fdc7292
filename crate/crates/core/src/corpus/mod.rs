//! Seeded synthetic corpora drawn from a planted total-variability model,
//! truncation into short segments, short/long pairing and trial lists.

mod generate;
mod pairs;
mod truncate;
mod truth;

pub use generate::{generate_corpus, SyntheticCorpus, SyntheticSpec};
pub use pairs::{build_pairs, build_trials, parent_id, read_labels, write_labels};
pub use truncate::{
    read_truncation_records, truncate, truncate_all, write_truncation_records, Segment, TruncationRecord, TruncationSpec,
    WindowMode,
};
pub use truth::GroundTruth;
