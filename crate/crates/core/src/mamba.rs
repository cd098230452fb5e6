//! Mamba block: RMSNorm, input projection, causal depthwise convolution,
//! selective SSM with activation, gating and output projection, residual.
//!
//! ```text
//! x1 = RMSNorm(x)·W_in + b_in          [T×E], E = S·D
//! x2 = Conv(x1) + b_conv
//! x3 = σ(SSM(x2))
//! y  = (x3 ⊙ σ(x1))·W_out + x          [T×D]
//! ```
//!
//! σ is SiLU. The gate is applied in the expanded width, before the output
//! projection, so that the product is between equally sized tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::ssm::selective::{selective_ssm, SelectionVars};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MambaConfig {
    pub d_model: usize,
    pub expand: usize,
    pub states: usize,
    pub conv_width: usize,
    pub rms_eps: f64,
}

impl MambaConfig {
    pub fn inner(&self) -> usize {
        self.d_model * self.expand
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.expand == 0 || self.states == 0 || self.conv_width == 0 {
            return Err(Error::Config(format!("mamba dimensions must be positive: {self:?}")));
        }
        if !(self.rms_eps > 0.0) {
            return Err(Error::Config("rms_eps must be > 0".into()));
        }
        Ok(())
    }

    /// Scalar parameters in one block.
    pub fn param_count(&self) -> usize {
        let (d, e, n, w) = (self.d_model, self.inner(), self.states, self.conv_width);
        d + d * e + e + w * e + e + e * e + e + 2 * (e * n + n) + e * n + e * d
    }
}

/// Parameter handles of one block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MambaBlock {
    pub config: MambaConfig,
    pub rms_gain: ParamId,
    pub in_weight: ParamId,
    pub in_bias: ParamId,
    pub conv_kernel: ParamId,
    pub conv_bias: ParamId,
    pub dt_weight: ParamId,
    pub dt_bias: ParamId,
    pub b_weight: ParamId,
    pub b_bias: ParamId,
    pub c_weight: ParamId,
    pub c_bias: ParamId,
    pub a_log: ParamId,
    pub out_weight: ParamId,
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub(crate) fn linear_init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    uniform(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng)
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaBlock {
    /// Registers a freshly initialised block under `prefix`.
    pub fn init(store: &mut ParamStore, prefix: &str, config: MambaConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, e, n, w) = (config.d_model, config.inner(), config.states, config.conv_width);
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);

        let rms_gain = add("rms_gain", Tensor::full(&[1, d], 1.0));
        let in_weight = add("in_weight", linear_init(d, e, rng));
        let in_bias = add("in_bias", Tensor::zeros(&[1, e]));
        let conv_kernel = add("conv_kernel", uniform(w, e, 1.0 / (w as f64).sqrt(), rng));
        let conv_bias = add("conv_bias", Tensor::zeros(&[1, e]));
        let dt_weight = add("dt_weight", linear_init(e, e, rng));
        let (lo, hi) = (0.01f64.ln(), 0.1f64.ln());
        let dt0: Vec<f64> = (0..e)
            .map(|_| inverse_softplus(rng.random_range(lo..hi).exp()))
            .collect();
        let dt_bias = add("dt_bias", Tensor::row_vector(dt0));
        let b_weight = add("b_weight", linear_init(e, n, rng));
        let b_bias = add("b_bias", Tensor::zeros(&[1, n]));
        let c_weight = add("c_weight", linear_init(e, n, rng));
        let c_bias = add("c_bias", Tensor::zeros(&[1, n]));
        let a_log: Vec<f64> = (0..e * n).map(|i| (((i % n) + 1) as f64).ln()).collect();
        let a_log = add("a_log", Tensor::matrix(e, n, a_log)?);
        let out_weight = add("out_weight", Tensor::zeros(&[e, d]));
        Ok(Self {
            config,
            rms_gain,
            in_weight,
            in_bias,
            conv_kernel,
            conv_bias,
            dt_weight,
            dt_bias,
            b_weight,
            b_bias,
            c_weight,
            c_bias,
            a_log,
            out_weight,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 13] {
        [
            self.rms_gain,
            self.in_weight,
            self.in_bias,
            self.conv_kernel,
            self.conv_bias,
            self.dt_weight,
            self.dt_bias,
            self.b_weight,
            self.b_bias,
            self.c_weight,
            self.c_bias,
            self.a_log,
            self.out_weight,
        ]
    }

    /// `x[T×D] → [T×D]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (_, d) = g.value(x).dims2()?;
        if d != self.config.d_model {
            return Err(Error::shape("mamba_forward", g.value(x).shape(), &[self.config.d_model]));
        }
        let normed = g.rmsnorm(x, p[self.rms_gain], self.config.rms_eps)?;
        let x1 = g.matmul(normed, p[self.in_weight])?;
        let x1 = g.add_row(x1, p[self.in_bias])?;
        let x2 = g.causal_depthwise_conv(x1, p[self.conv_kernel])?;
        let x2 = g.add_row(x2, p[self.conv_bias])?;
        let sel = SelectionVars {
            dt_weight: p[self.dt_weight],
            dt_bias: p[self.dt_bias],
            b_weight: p[self.b_weight],
            b_bias: p[self.b_bias],
            c_weight: p[self.c_weight],
            c_bias: p[self.c_bias],
            a_log: p[self.a_log],
        };
        let ssm = selective_ssm(g, x2, &sel)?;
        let x3 = g.silu(ssm);
        let gate = g.silu(x1);
        let gated = g.mul(x3, gate)?;
        let x4 = g.matmul(gated, p[self.out_weight])?;
        g.add(x4, x)
    }
}
