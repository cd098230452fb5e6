//! The assembled network: feature embedding, per-category Mamba blocks,
//! intra- and inter-group attention and the prediction head.
//!
//! Each numeric feature becomes one sequence position via a learned affine
//! map `v·w_f + b_f`; each categorical feature via a lookup table with row 0
//! reserved for unknown tokens.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod mac;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{Ablation, ModelConfig};
pub use export::{attention_records, write_attention_csv, AttentionRecord};
pub use mac::{AttentionTrace, GroupTrace, MacModel, INPUT_LIMIT};
