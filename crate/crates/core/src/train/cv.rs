//! k-fold cross-validation.
//!
//! Each fold's training part is split again into an inner training set and
//! a model-selection set (one fifth). Preprocessing is fitted on the inner
//! training set only; the fold's held-out part is used just for its report.

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::data::schema::FeatureSchema;
use crate::data::split::{kfold, shuffled, Fold};
use crate::data::transform::Preprocessor;
use crate::error::{Error, Result};
use crate::model::{MacModel, ModelConfig};
use crate::train::metrics::MetricsReport;
use crate::train::trainer::{evaluate, train, History, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub select_size: usize,
    pub val_size: usize,
    pub report: MetricsReport,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldReport>,
    /// Field-wise mean of the fold reports.
    pub mean: MetricsReport,
}

fn run_fold(
    schema: &FeatureSchema,
    data: &Dataset,
    fold_index: usize,
    fold: &Fold,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldReport> {
    let fold_seed = train_cfg.seed.wrapping_add(fold_index as u64);
    let order = shuffled(fold.train.len(), fold_seed);
    let select_n = fold.train.len() / 5;
    let inner: Vec<usize> = order[select_n..].iter().map(|&i| fold.train[i]).collect();
    let select: Vec<usize> = order[..select_n].iter().map(|&i| fold.train[i]).collect();

    let inner_set = data.subset(&inner);
    let pre = Preprocessor::fit(&inner_set)?;
    let train_enc = pre.apply(&inner_set)?;
    let select_enc = pre.apply(&data.subset(&select))?;
    let val_enc = pre.apply(&data.subset(&fold.val))?;

    let mut model = MacModel::new(schema, model_cfg, fold_seed)?;
    let cfg = TrainConfig {
        seed: fold_seed,
        ..train_cfg.clone()
    };
    let history = train(&mut model, &train_enc, &select_enc, &cfg, Some(&pre))?;
    let report = evaluate(&model, &val_enc, Some(&pre))?;
    log::info!("fold {fold_index}: MAE {:.4} MAPE {:?}", report.aggregate.mae, report.aggregate.mape);
    Ok(FoldReport {
        fold: fold_index,
        train_size: inner.len(),
        select_size: select.len(),
        val_size: fold.val.len(),
        report,
        history,
    })
}

/// Trains one model per fold, with the folds running on separate threads
/// when `parallel` is set.
pub fn cross_validate(
    schema: &FeatureSchema,
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
    parallel: bool,
) -> Result<CvReport> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let folds = kfold(&indices, k, train_cfg.seed)?;
    if folds.iter().any(|f| f.train.len() < 2) {
        return Err(Error::Data(format!("{} samples are too few for {k} folds", data.len())));
    }
    let results: Vec<Result<FoldReport>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = folds
                .iter()
                .enumerate()
                .map(|(i, f)| scope.spawn(move || run_fold(schema, data, i, f, model_cfg, train_cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("fold worker panicked".into()))))
                .collect()
        })
    } else {
        folds
            .iter()
            .enumerate()
            .map(|(i, f)| run_fold(schema, data, i, f, model_cfg, train_cfg))
            .collect()
    };
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(CvReport {
        k,
        mean: MetricsReport::mean(&reports)?,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SynthSpec};

    fn setup() -> (FeatureSchema, Dataset, ModelConfig, TrainConfig) {
        let spec = SynthSpec {
            n_samples: 30,
            cpu: 2,
            memory: 1,
            other: 1,
            char: 1,
            ..SynthSpec::default()
        };
        let (data, generator) = synthesize(&spec, 4).unwrap();
        let model = ModelConfig {
            embed_dim: 4,
            state_dim: 2,
            attn_layers: 1,
            attn_heads: 1,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            epochs: 2,
            lr0: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        (generator.schema(), data, model, train)
    }

    #[test]
    fn five_folds_cover_every_sample_once() {
        let (schema, data, model, train) = setup();
        let r = cross_validate(&schema, &data, &model, &train, 5, false).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.folds.iter().map(|f| f.val_size).sum::<usize>(), data.len());
        for f in &r.folds {
            assert_eq!(f.train_size + f.select_size + f.val_size, data.len());
            assert_eq!(f.history.epochs.len(), 2);
        }
        let maes: Vec<f64> = r.folds.iter().map(|f| f.report.aggregate.mae).collect();
        let mean = maes.iter().sum::<f64>() / 5.0;
        assert_eq!(r.mean.aggregate.mae, mean);
    }

    #[test]
    fn parallel_equals_sequential() {
        let (schema, data, model, train) = setup();
        let a = cross_validate(&schema, &data, &model, &train, 3, false).unwrap();
        let b = cross_validate(&schema, &data, &model, &train, 3, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_k() {
        let (schema, data, model, train) = setup();
        assert!(cross_validate(&schema, &data, &model, &train, 1, false).is_err());
        assert!(cross_validate(&schema, &data.subset(&[0, 1]), &model, &train, 3, false).is_err());
    }
}
