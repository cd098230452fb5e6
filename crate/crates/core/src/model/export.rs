//! Attention-matrix export for external plotting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::mac::AttentionTrace;

/// One attention matrix of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub suite: String,
    pub sample_id: String,
    /// Group name for intra-group matrices, `"inter"` for the group tokens.
    pub group: String,
    pub layer: usize,
    pub head: usize,
    pub size: usize,
    pub labels: Vec<String>,
    /// Row-major `size × size`.
    pub matrix: Vec<f64>,
}

pub fn attention_records(trace: &AttentionTrace, suite: &str, sample_id: &str) -> Vec<AttentionRecord> {
    let mut out = Vec::new();
    let mut push = |group: String, labels: &[String], layers: &[Vec<crate::autodiff::Tensor>]| {
        for (layer, heads) in layers.iter().enumerate() {
            for (head, m) in heads.iter().enumerate() {
                out.push(AttentionRecord {
                    suite: suite.to_owned(),
                    sample_id: sample_id.to_owned(),
                    group: group.clone(),
                    layer,
                    head,
                    size: labels.len(),
                    labels: labels.to_vec(),
                    matrix: m.data().to_vec(),
                });
            }
        }
    };
    for g in &trace.intra {
        push(g.group.to_string(), &g.labels, &g.layers);
    }
    let tokens: Vec<String> = trace.intra.iter().map(|g| g.group.to_string()).collect();
    push("inter".into(), &tokens, &trace.inter);
    out
}

/// Long-format CSV: one row per matrix entry.
pub fn write_attention_csv(records: &[AttentionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["suite", "sample_id", "group", "layer", "head", "row", "col", "row_label", "col_label", "weight"])?;
    for r in records {
        for i in 0..r.size {
            for j in 0..r.size {
                w.write_record([
                    r.suite.clone(),
                    r.sample_id.clone(),
                    r.group.clone(),
                    r.layer.to_string(),
                    r.head.to_string(),
                    i.to_string(),
                    j.to_string(),
                    r.labels[i].clone(),
                    r.labels[j].clone(),
                    r.matrix[i * r.size + j].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthesize, SynthSpec};
    use crate::data::transform::fit_transform;
    use crate::model::{MacModel, ModelConfig};

    #[test]
    fn records_cover_every_head_and_sum_to_one() {
        let (d, gen) = synthesize(&SynthSpec::default(), 2).unwrap();
        let (_, enc) = fit_transform(&d).unwrap();
        let m = MacModel::new(&gen.schema(), &ModelConfig::default(), 2).unwrap();
        let trace = m.trace(&enc.samples[0]).unwrap();
        let recs = attention_records(&trace, "synthetic", "0");
        // 4 intra groups + inter, 3 layers, 4 heads
        assert_eq!(recs.len(), 5 * 3 * 4);
        let cpu = recs.iter().find(|r| r.group == "cpu").unwrap();
        assert_eq!(cpu.size, 20);
        assert_eq!(cpu.matrix.len(), 400);
        assert!(recs.iter().filter(|r| r.group == "inter").all(|r| r.size == 4));
        for r in &recs {
            for row in r.matrix.chunks(r.size) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        write_attention_csv(&recs, dir.path().join("a.csv")).unwrap();
    }
}
