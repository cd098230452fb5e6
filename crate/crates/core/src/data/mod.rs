//! Dataset ingestion and preprocessing: CSV loading with trimming and
//! mapping-file expansion, outlier cleaning, normalisation and tokenisation,
//! splitting, and a synthetic suite generator.

pub mod clean;
pub mod dataset;
pub mod schema;
pub mod split;
pub mod synth;
pub mod transform;

pub use clean::{clean_outliers, RemovedRow};
pub use dataset::{load_csv, read_csv, write_csv, Dataset, Mapping, Mappings, Provenance, Record};
pub use schema::{FeatureKind, FeatureLayout, FeatureSchema, FeatureSpec, Group, LayoutFeature, OutputSpec};
pub use split::{holdout, kfold, split, split_sizes, Fold, SplitIndices};
pub use synth::{synthesize, SynthGenerator, SynthSpec};
pub use transform::{
    apply_transform, fit_transform, EncodedDataset, EncodedSample, Moments, NormStats, Preprocessor, TokenTable,
    Vocabulary,
};
