//! JSON-lines datasets and the synthetic aligned corpus.

pub mod jsonl;
pub mod synthetic;

pub use jsonl::{
    dataset_dims, load_dataset, parse_dataset, serialize_instance, write_dataset, CLS_PROBS_TOL,
};
pub use synthetic::{generate_synthetic, SyntheticCorpusSpec};
