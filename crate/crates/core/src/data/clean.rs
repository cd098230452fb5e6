//! Single-pass z-score outlier removal on output columns.

use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Provenance};
use crate::data::transform::Moments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedRow {
    /// Index in the input dataset.
    pub index: usize,
    pub provenance: Provenance,
    /// First output column whose |z| exceeded the threshold.
    pub column: String,
    pub z: f64,
}

/// Removes rows whose |z| on any output column exceeds `threshold`, with μ
/// and σ computed once over the whole input. Columns with σ = 0 are skipped.
pub fn clean_outliers(d: &Dataset, threshold: f64) -> (Dataset, Vec<RemovedRow>) {
    let moments: Vec<Option<Moments>> = d
        .layout
        .outputs
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let m = Moments::of(&d.target_column(j));
            if m.std > 0.0 {
                Some(m)
            } else {
                log::warn!("output {name:?} has zero variance; skipping outlier check");
                None
            }
        })
        .collect();
    let mut kept = Vec::with_capacity(d.len());
    let mut removed = Vec::new();
    for (i, r) in d.records.iter().enumerate() {
        let hit = r
            .targets
            .iter()
            .zip(&moments)
            .enumerate()
            .find_map(|(j, (v, m))| {
                let z = m.as_ref()?.standardize(*v);
                (z.abs() > threshold).then_some((j, z))
            });
        match hit {
            Some((j, z)) => removed.push(RemovedRow {
                index: i,
                provenance: r.provenance.clone(),
                column: d.layout.outputs[j].clone(),
                z,
            }),
            None => kept.push(r.clone()),
        }
    }
    (
        Dataset {
            layout: d.layout.clone(),
            records: kept,
        },
        removed,
    )
}
