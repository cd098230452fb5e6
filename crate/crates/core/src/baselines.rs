//! Linear baselines: Ridge in closed form, Lasso and ElasticNet by cyclic
//! coordinate descent.
//!
//! All fits centre `X` and `y` and recover the intercept from the means.
//! With `n` rows the objectives are
//!
//! ```text
//! ridge        ‖y − Xw‖² + λ‖w‖²
//! elastic net  ‖y − Xw‖²/2n + λ1‖w‖₁ + λ2‖w‖²/2n
//! ```
//!
//! so an elastic net with `λ1 = 0` is the ridge fit with `λ = λ2`, and with
//! `λ2 = 0` it is the lasso.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::schema::FeatureKind;
use crate::data::transform::{EncodedDataset, Preprocessor};
use crate::error::{Error, Result};
use crate::train::metrics::MetricsReport;

/// Regularisation grid searched by [`tune`].
pub const LAMBDA_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Ridge,
    Lasso,
    ElasticNet,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Ridge, BaselineKind::Lasso, BaselineKind::ElasticNet];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Ridge => "ridge",
            BaselineKind::Lasso => "lasso",
            BaselineKind::ElasticNet => "elasticnet",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ridge" => Ok(BaselineKind::Ridge),
            "lasso" => Ok(BaselineKind::Lasso),
            "elasticnet" | "elastic-net" | "en" => Ok(BaselineKind::ElasticNet),
            _ => Err(Error::Config(format!("unknown baseline {s:?}; expected ridge, lasso or elasticnet"))),
        }
    }
}

/// Affine map `x ↦ Wx + b`, one weight row per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: BaselineKind,
    /// `[output][feature]`.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
    /// False when coordinate descent hit `max_iter` on any output.
    pub converged: bool,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..x.nrows())
            .map(|i| self.predict_row(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect()
    }
}

/// One coordinate-descent fit of a single output.
#[derive(Debug, Clone, PartialEq)]
pub struct CdFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective: Vec<f64>,
}

fn check_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape("linear_fit", &[x.nrows(), x.ncols()], &[y.nrows(), y.ncols()]));
    }
    if x.nrows() == 0 {
        return Err(Error::Data("cannot fit on zero rows".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("design matrix or targets contain non-finite values".into()));
    }
    Ok(())
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

fn centred(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c
}

/// Solves `(XᵀX + λI)w = Xᵀy` on centred data for every target column.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<LinearModel> {
    check_inputs(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let xm = column_means(x);
    let ym = column_means(y);
    let xc = centred(x, &xm);
    let yc = centred(y, &ym);
    let p = x.ncols();
    let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    if chol.l().diagonal().iter().any(|d| d * d < 1e-12 * scale) {
        return Err(singular());
    }
    let w = chol.solve(&(xc.transpose() * &yc));
    let weights: Vec<Vec<f64>> = w.column_iter().map(|c| c.iter().copied().collect()).collect();
    let intercepts = weights
        .iter()
        .enumerate()
        .map(|(k, wk)| ym[k] - wk.iter().zip(xm.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok(LinearModel {
        kind: BaselineKind::Ridge,
        weights,
        intercepts,
        l1: 0.0,
        l2: lambda,
        converged: true,
    })
}

fn singular() -> Error {
    Error::Solver("normal equations are singular (collinear features); use lambda > 0".into())
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `‖y − Xw − b‖²/2n + λ1‖w‖₁ + λ2‖w‖²/2n`.
pub fn elasticnet_objective(x: &DMatrix<f64>, y: &[f64], w: &[f64], b: f64, l1: f64, l2: f64) -> f64 {
    let n = x.nrows() as f64;
    let wv = DVector::from_column_slice(w);
    let r = DVector::from_column_slice(y) - x * wv - DVector::from_element(x.nrows(), b);
    let l1_term: f64 = w.iter().map(|v| v.abs()).sum();
    let l2_term: f64 = w.iter().map(|v| v * v).sum();
    r.norm_squared() / (2.0 * n) + l1 * l1_term + l2 * l2_term / (2.0 * n)
}

/// Cyclic coordinate descent on one target column. Stops when the largest
/// coordinate change in a sweep is below `tol`.
pub fn coordinate_descent(x: &DMatrix<f64>, y: &[f64], l1: f64, l2: f64, tol: f64, max_iter: usize) -> Result<CdFit> {
    if x.nrows() != y.len() {
        return Err(Error::shape("coordinate_descent", &[x.nrows(), x.ncols()], &[y.len()]));
    }
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(Error::Config(format!("penalties must be >= 0, got l1 {l1}, l2 {l2}")));
    }
    let n = x.nrows() as f64;
    let xm = column_means(x);
    let ymean = y.iter().sum::<f64>() / n;
    let xc = centred(x, &xm);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ymean));
    let p = x.ncols();
    let norms: Vec<f64> = xc.column_iter().map(|c| c.norm_squared()).collect();
    let mut w = vec![0.0; p];
    let mut r = yc.clone();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iter {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            let denom = norms[j] + l2;
            if denom == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho = col.dot(&r) + norms[j] * w[j];
            let new = soft_threshold(rho, n * l1) / denom;
            let delta = new - w[j];
            if delta != 0.0 {
                r.axpy(-delta, &col, 1.0);
                w[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        objective.push(elasticnet_objective(&xc, yc.as_slice(), &w, 0.0, l1, l2));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    let intercept = ymean - w.iter().zip(xm.iter()).map(|(a, b)| a * b).sum::<f64>();
    Ok(CdFit {
        weights: w,
        intercept,
        converged,
        sweeps,
        objective,
    })
}

pub fn elasticnet_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, l1: f64, l2: f64, tol: f64, max_iter: usize) -> Result<LinearModel> {
    check_inputs(x, y)?;
    let fits = y
        .column_iter()
        .map(|c| coordinate_descent(x, c.as_slice(), l1, l2, tol, max_iter))
        .collect::<Result<Vec<_>>>()?;
    let converged = fits.iter().all(|f| f.converged);
    if !converged {
        log::warn!("coordinate descent stopped at max_iter {max_iter} before reaching tol {tol}");
    }
    Ok(LinearModel {
        kind: if l2 == 0.0 { BaselineKind::Lasso } else { BaselineKind::ElasticNet },
        intercepts: fits.iter().map(|f| f.intercept).collect(),
        weights: fits.into_iter().map(|f| f.weights).collect(),
        l1,
        l2,
        converged,
    })
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, tol: f64, max_iter: usize) -> Result<LinearModel> {
    elasticnet_fit(x, y, lambda, 0.0, tol, max_iter)
}

/// Standardised numeric features followed by one-hot token ids, and the
/// standardised targets.
pub fn design_matrix(data: &EncodedDataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let layout = &data.layout;
    let caps: Vec<usize> = layout.of_kind(FeatureKind::Categorical).map(|f| f.vocab_capacity).collect();
    let width = layout.n_numeric() + caps.iter().sum::<usize>();
    let n = data.len();
    let mut x = DMatrix::zeros(n, width);
    let mut y = DMatrix::zeros(n, layout.n_outputs());
    for (i, s) in data.samples.iter().enumerate() {
        for (j, v) in s.numeric.iter().enumerate() {
            x[(i, j)] = *v;
        }
        let mut offset = layout.n_numeric();
        for (id, cap) in s.categorical.iter().zip(&caps) {
            x[(i, offset + id.min(&(cap - 1)))] = 1.0;
            offset += cap;
        }
        for (k, t) in s.targets.iter().enumerate() {
            y[(i, k)] = *t;
        }
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub model: LinearModel,
    /// Validation report of the chosen regularisation.
    pub val_report: MetricsReport,
}

fn report(model: &LinearModel, data: &EncodedDataset, names: &[String], pre: Option<&Preprocessor>) -> Result<MetricsReport> {
    let (x, _) = design_matrix(data);
    let mut pred = model.predict(&x);
    let truth: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| if pre.is_some() { s.raw_targets.clone() } else { s.targets.clone() })
        .collect();
    if let Some(p) = pre {
        pred = pred.iter().map(|z| p.destandardize(z)).collect();
    }
    MetricsReport::compute(names, &truth, &pred)
}

/// Evaluates a fitted baseline, in original units when `pre` is given.
pub fn evaluate_baseline(model: &LinearModel, data: &EncodedDataset, pre: Option<&Preprocessor>) -> Result<MetricsReport> {
    report(model, data, &data.layout.outputs, pre)
}

/// Fits `kind` for every grid point on `train` and keeps the one with the
/// lowest validation MAE.
pub fn tune(kind: BaselineKind, train: &EncodedDataset, val: &EncodedDataset, pre: Option<&Preprocessor>) -> Result<BaselineResult> {
    const TOL: f64 = 1e-8;
    const MAX_ITER: usize = 10_000;
    let (x, y) = design_matrix(train);
    let candidates: Vec<(f64, f64)> = match kind {
        BaselineKind::Ridge => LAMBDA_GRID.iter().map(|&l| (0.0, l)).collect(),
        BaselineKind::Lasso => LAMBDA_GRID.iter().map(|&l| (l, 0.0)).collect(),
        BaselineKind::ElasticNet => LAMBDA_GRID
            .iter()
            .flat_map(|&a| LAMBDA_GRID.iter().map(move |&b| (a, b)))
            .collect(),
    };
    let mut best: Option<BaselineResult> = None;
    for (l1, l2) in candidates {
        let model = match kind {
            BaselineKind::Ridge => ridge_fit(&x, &y, l2)?,
            BaselineKind::Lasso => lasso_fit(&x, &y, l1, TOL, MAX_ITER)?,
            BaselineKind::ElasticNet => LinearModel {
                kind,
                ..elasticnet_fit(&x, &y, l1, l2, TOL, MAX_ITER)?
            },
        };
        let val_report = evaluate_baseline(&model, val, pre)?;
        log::debug!("{} l1 {l1:e} l2 {l2:e}: val MAE {}", kind.as_str(), val_report.aggregate.mae);
        if best.as_ref().is_none_or(|b| val_report.aggregate.mae < b.val_report.aggregate.mae) {
            best = Some(BaselineResult { model, val_report });
        }
    }
    best.ok_or_else(|| Error::Config("empty regularisation grid".into()))
}
