//! Versioned JSON checkpoints.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "schema_hash": "<sha-256 of the schema JSON, hex>",
//!   "schema": { ... },
//!   "config": { ... },
//!   "seed": 42,
//!   "params": [{"name": "...", "shape": [r, c], "data": [...]}, ...],
//!   "preprocessing": {"stats": {...}, "vocab": {...}}   // optional
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a reload is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::schema::FeatureSchema;
use crate::data::transform::Preprocessor;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::mac::MacModel;
use crate::params::NamedTensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schema_hash: String,
    pub schema: FeatureSchema,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Preprocessor>,
}

impl Checkpoint {
    pub fn from_model(model: &MacModel, seed: u64, preprocessing: Option<&Preprocessor>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            schema_hash: model.schema().hash(),
            schema: model.schema().clone(),
            config: model.config().clone(),
            seed,
            params: model.store().to_named(),
            preprocessing: preprocessing.cloned(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint and checks its version and internal hash.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        let actual = ckpt.schema.hash();
        if actual != ckpt.schema_hash {
            return Err(Error::IncompatibleCheckpoint {
                expected: ckpt.schema_hash.clone(),
                found: actual,
            });
        }
        Ok(ckpt)
    }

    /// Rebuilds the model. With `expected`, the checkpoint's schema hash must
    /// match that schema.
    pub fn into_model(self, expected: Option<&FeatureSchema>) -> Result<(MacModel, Option<Preprocessor>)> {
        if let Some(schema) = expected {
            let want = schema.hash();
            if want != self.schema_hash {
                return Err(Error::IncompatibleCheckpoint {
                    expected: want,
                    found: self.schema_hash,
                });
            }
        }
        let mut model = MacModel::new(&self.schema, &self.config, self.seed)?;
        if self.params.len() != model.store().len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors; the model has {}",
                self.params.len(),
                model.store().len()
            )));
        }
        for p in self.params {
            let id = model
                .store()
                .find(&p.name)
                .ok_or_else(|| Error::Data(format!("unknown parameter {:?}", p.name)))?;
            let tensor = Tensor::new(p.shape, p.data)?;
            if tensor.shape() != model.store().get(id).shape() {
                return Err(Error::shape("checkpoint", tensor.shape(), model.store().get(id).shape()));
            }
            *model.store_mut().get_mut(id) = tensor;
        }
        Ok((model, self.preprocessing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthesize, SynthSpec};
    use crate::data::transform::fit_transform;

    #[test]
    fn save_load_predicts_identically() {
        let (d, gen) = synthesize(&SynthSpec::default(), 1).unwrap();
        let (pre, enc) = fit_transform(&d).unwrap();
        let schema = gen.schema();
        let mut model = MacModel::new(&schema, &ModelConfig::default(), 7).unwrap();
        // give the zero-initialised projections values so the check is not vacuous
        for (i, t) in model.store_mut().tensors_mut().iter_mut().enumerate() {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v += 1e-3 * ((i * 31 + j * 17) % 13) as f64 / 7.0;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::from_model(&model, 7, Some(&pre)).save(&path).unwrap();
        let (back, back_pre) = Checkpoint::load(&path).unwrap().into_model(Some(&schema)).unwrap();
        assert_eq!(back.store(), model.store());
        assert_eq!(back_pre.as_ref(), Some(&pre));
        for s in &enc.samples[..5] {
            let a = model.predict(s).unwrap();
            let b = back.predict(s).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn other_schema_is_rejected() {
        let (_, gen) = synthesize(&SynthSpec::default(), 1).unwrap();
        let schema = gen.schema();
        let model = MacModel::new(&schema, &ModelConfig::default(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::from_model(&model, 7, None).save(&path).unwrap();
        let mut other = schema.clone();
        other.features.swap(0, 1);
        let err = Checkpoint::load(&path).unwrap().into_model(Some(&other)).unwrap_err();
        assert!(matches!(err, Error::IncompatibleCheckpoint { .. }));
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Json(_))));
    }
}
