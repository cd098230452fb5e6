//! Normalisation of numeric features and outputs, and tokenisation of
//! categorical features. Statistics are fitted on the training fold only.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Provenance};
use crate::data::schema::{FeatureKind, FeatureLayout};
use crate::error::{Error, Result};

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// One entry per numeric slot.
    pub numeric: Vec<Moments>,
    /// One entry per output column.
    pub outputs: Vec<Moments>,
}

/// Token table of one categorical feature. Id 0 is UNK; `tokens[i]` has
/// id `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTable {
    pub feature: String,
    pub tokens: Vec<String>,
}

impl TokenTable {
    pub const UNK: usize = 0;

    pub fn id(&self, token: &str) -> usize {
        self.tokens.iter().position(|t| t == token).map_or(Self::UNK, |i| i + 1)
    }

    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// One table per categorical slot.
    pub tables: Vec<TokenTable>,
}

/// Fitted preprocessing state, stored alongside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub stats: NormStats,
    pub vocab: Vocabulary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub numeric: Vec<f64>,
    pub categorical: Vec<usize>,
    /// Standardised targets.
    pub targets: Vec<f64>,
    /// Targets in original units.
    pub raw_targets: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub layout: FeatureLayout,
    pub samples: Vec<EncodedSample>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn fit_moments(values: &[f64], what: &str) -> Moments {
    let mut m = Moments::of(values);
    if !(m.std > 0.0) {
        log::warn!("{what} has zero variance on the training fold; leaving it unscaled");
        m.std = 1.0;
    }
    m
}

impl Preprocessor {
    /// Fits statistics and vocabularies on `train`.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty dataset".into()));
        }
        let layout = &train.layout;
        let numeric = layout
            .of_kind(FeatureKind::Numeric)
            .map(|f| {
                let col: Vec<f64> = train.records.iter().map(|r| r.numeric[f.slot]).collect();
                fit_moments(&col, &format!("feature {:?}", f.name))
            })
            .collect();
        let outputs = layout
            .outputs
            .iter()
            .enumerate()
            .map(|(j, name)| fit_moments(&train.target_column(j), &format!("output {name:?}")))
            .collect();
        let tables = layout
            .of_kind(FeatureKind::Categorical)
            .map(|f| {
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for r in &train.records {
                    *counts.entry(r.categorical[f.slot].as_str()).or_default() += 1;
                }
                let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                let keep = f.vocab_capacity.saturating_sub(1);
                if ranked.len() > keep {
                    log::warn!(
                        "feature {:?}: {} distinct tokens exceed capacity {}; rarest map to UNK",
                        f.name,
                        ranked.len(),
                        f.vocab_capacity
                    );
                }
                TokenTable {
                    feature: f.name.clone(),
                    tokens: ranked.into_iter().take(keep).map(|(t, _)| t.to_owned()).collect(),
                }
            })
            .collect();
        Ok(Self {
            stats: NormStats { numeric, outputs },
            vocab: Vocabulary { tables },
        })
    }

    fn check(&self, layout: &FeatureLayout) -> Result<()> {
        if self.stats.numeric.len() != layout.n_numeric()
            || self.vocab.tables.len() != layout.n_categorical()
            || self.stats.outputs.len() != layout.n_outputs()
        {
            return Err(Error::Schema(
                "preprocessing state does not match the dataset layout".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, d: &Dataset) -> Result<EncodedDataset> {
        self.check(&d.layout)?;
        let samples = d
            .records
            .iter()
            .map(|r| EncodedSample {
                numeric: r
                    .numeric
                    .iter()
                    .zip(&self.stats.numeric)
                    .map(|(v, m)| m.standardize(*v))
                    .collect(),
                categorical: r
                    .categorical
                    .iter()
                    .zip(&self.vocab.tables)
                    .map(|(t, table)| table.id(t))
                    .collect(),
                targets: r
                    .targets
                    .iter()
                    .zip(&self.stats.outputs)
                    .map(|(v, m)| m.standardize(*v))
                    .collect(),
                raw_targets: r.targets.clone(),
                provenance: r.provenance.clone(),
            })
            .collect();
        Ok(EncodedDataset {
            layout: d.layout.clone(),
            samples,
        })
    }

    /// Maps standardised predictions back to original units.
    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.stats.outputs)
            .map(|(v, m)| m.destandardize(*v))
            .collect()
    }
}

pub fn fit_transform(train: &Dataset) -> Result<(Preprocessor, EncodedDataset)> {
    let pre = Preprocessor::fit(train)?;
    let encoded = pre.apply(train)?;
    Ok((pre, encoded))
}

pub fn apply_transform(pre: &Preprocessor, d: &Dataset) -> Result<EncodedDataset> {
    pre.apply(d)
}
