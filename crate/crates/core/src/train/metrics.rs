//! Error metrics in original target units.
//!
//! MAPE is reported in percent and is undefined (`None`) when any ground
//! truth value is zero. `median_se` is the median of per-sample squared
//! errors; the SE percentiles use the nearest-rank method.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub mape: Option<f64>,
    pub median_se: f64,
    pub se_p75: f64,
    pub se_p90: f64,
    pub se_p95: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMetrics {
    pub output: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub outputs: Vec<OutputMetrics>,
    /// Pooled over every (sample, output) pair.
    pub aggregate: Metrics,
}

/// Nearest-rank percentile of ascending `sorted`, `p` in `(0, 100]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Median of ascending `sorted`; the mean of the middle pair when even.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn metrics(truth: &[f64], pred: &[f64]) -> Result<Metrics> {
    if truth.len() != pred.len() {
        return Err(Error::shape("metrics", &[truth.len()], &[pred.len()]));
    }
    if truth.is_empty() {
        return Err(Error::Data("metrics need at least one sample".into()));
    }
    let n = truth.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut has_zero = false;
    let mut se = Vec::with_capacity(truth.len());
    for (&x, &xh) in truth.iter().zip(pred) {
        let e = x - xh;
        abs_sum += e.abs();
        sq_sum += e * e;
        se.push(e * e);
        if x == 0.0 {
            has_zero = true;
        } else {
            pct_sum += (e / x).abs();
        }
    }
    se.sort_by(f64::total_cmp);
    Ok(Metrics {
        mae: abs_sum / n,
        mse: sq_sum / n,
        mape: (!has_zero).then(|| 100.0 * pct_sum / n),
        median_se: median(&se),
        se_p75: nearest_rank(&se, 75.0),
        se_p90: nearest_rank(&se, 90.0),
        se_p95: nearest_rank(&se, 95.0),
        n: truth.len(),
    })
}

impl MetricsReport {
    /// `truth[i]` and `pred[i]` hold every output of sample `i`.
    pub fn compute(names: &[String], truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape("report", &[truth.len()], &[pred.len()]));
        }
        for row in truth.iter().chain(pred) {
            if row.len() != names.len() {
                return Err(Error::shape("report", &[row.len()], &[names.len()]));
            }
        }
        let column = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let outputs = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                Ok(OutputMetrics {
                    output: name.clone(),
                    metrics: metrics(&column(truth, j), &column(pred, j))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<f64>>();
        let aggregate = metrics(&flat(truth), &flat(pred))?;
        Ok(Self { outputs, aggregate })
    }

    /// Field-wise arithmetic mean of reports over the same outputs.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Data("cannot average zero reports".into()))?;
        let names: Vec<&str> = first.outputs.iter().map(|o| o.output.as_str()).collect();
        for r in reports {
            let other: Vec<&str> = r.outputs.iter().map(|o| o.output.as_str()).collect();
            if other != names {
                return Err(Error::Data("reports cover different outputs".into()));
            }
        }
        let outputs = (0..names.len())
            .map(|j| OutputMetrics {
                output: names[j].to_owned(),
                metrics: mean_metrics(reports.iter().map(|r| &r.outputs[j].metrics)),
            })
            .collect();
        let aggregate = mean_metrics(reports.iter().map(|r| &r.aggregate));
        Ok(Self { outputs, aggregate })
    }

    /// Plain-text table, one row per output plus the pooled row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>14} {:>9} {:>12} {:>12} {:>12} {:>12} {:>6}",
            "output", "MAE", "MSE", "MAPE(%)", "MedianSE", "SE75", "SE90", "SE95", "n"
        );
        let mut row = |name: &str, m: &Metrics| {
            let mape = m.mape.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "{:<16} {:>12.4} {:>14.4} {:>9} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>6}",
                name, m.mae, m.mse, mape, m.median_se, m.se_p75, m.se_p90, m.se_p95, m.n
            );
        };
        for o in &self.outputs {
            row(&o.output, &o.metrics);
        }
        if self.outputs.len() > 1 {
            row("all", &self.aggregate);
        }
        out
    }
}

fn mean_metrics<'a>(items: impl Iterator<Item = &'a Metrics> + Clone) -> Metrics {
    let k = items.clone().count() as f64;
    let avg = |f: &dyn Fn(&Metrics) -> f64| items.clone().map(f).sum::<f64>() / k;
    let mape = items
        .clone()
        .map(|m| m.mape)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / k);
    Metrics {
        mae: avg(&|m| m.mae),
        mse: avg(&|m| m.mse),
        mape,
        median_se: avg(&|m| m.median_se),
        se_p75: avg(&|m| m.se_p75),
        se_p90: avg(&|m| m.se_p90),
        se_p95: avg(&|m| m.se_p95),
        n: (avg(&|m| m.n as f64)).round() as usize,
    }
}
