//! Selective (input-dependent) scan.
//!
//! Each step `t` discretises with its own `Δ_t`, `B_t`, `C_t`:
//!
//! ```text
//! h_t[e,n] = exp(Δ_t[e]·a[e,n])·h_{t−1}[e,n] + b̄_t[e,n]·x_t[e]
//! b̄_t[e,n] = ((exp(Δ_t[e]·a[e,n]) − 1) / a[e,n])·B_t[n]
//! y_t[e]   = Σ_n C_t[n]·h_t[e,n]
//! ```
//!
//! `B_t` and `C_t` are shared across channels. Output slot `t` follows the
//! same one-step-ahead alignment as [`super::ssm_scan`].

use super::{phi, phi_prime};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub steps: usize,
    pub channels: usize,
    pub states: usize,
}

/// Returns `(y[T×E], h[T×E×N])`; the hidden states feed the backward pass.
pub fn scan_forward(
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    dims: ScanDims,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ScanDims {
        steps,
        channels: ch,
        states: n,
    } = dims;
    if let Some(bad) = delta.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::Contract(format!("scan timescale {bad} is not positive")));
    }
    let mut y = vec![0.0; steps * ch];
    let mut hidden = vec![0.0; steps * ch * n];
    for t in 0..steps {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        for e in 0..ch {
            let dt = delta[t * ch + e];
            let xt = x[t * ch + e];
            let mut acc = 0.0;
            for s in 0..n {
                let i = e * n + s;
                let z = dt * a[i];
                let prev = if t > 0 { hidden[(t - 1) * ch * n + i] } else { 0.0 };
                let h = z.exp() * prev + dt * phi(z) * bt[s] * xt;
                hidden[t * ch * n + i] = h;
                acc += ct[s] * h;
            }
            y[t * ch + e] = acc;
        }
    }
    Ok((y, hidden))
}

#[derive(Debug, Clone)]
pub struct ScanGrads {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn scan_backward(
    dy: &[f64],
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    hidden: &[f64],
    dims: ScanDims,
) -> ScanGrads {
    let ScanDims {
        steps,
        channels: ch,
        states: n,
    } = dims;
    let mut grads = ScanGrads {
        x: vec![0.0; x.len()],
        delta: vec![0.0; delta.len()],
        a: vec![0.0; a.len()],
        b: vec![0.0; b.len()],
        c: vec![0.0; c.len()],
    };
    // adjoint of h_t, carried backwards through ā
    let mut carry = vec![0.0; ch * n];
    for t in (0..steps).rev() {
        for e in 0..ch {
            let dt = delta[t * ch + e];
            let xt = x[t * ch + e];
            let gyt = dy[t * ch + e];
            for s in 0..n {
                let i = e * n + s;
                let (av, bv, cv) = (a[i], b[t * n + s], c[t * n + s]);
                let h = hidden[t * ch * n + i];
                let prev = if t > 0 { hidden[(t - 1) * ch * n + i] } else { 0.0 };
                let z = dt * av;
                let a_bar = z.exp();
                let gain = dt * phi(z);

                let gh = carry[i] + gyt * cv;
                grads.c[t * n + s] += gyt * h;
                let g_abar = gh * prev;
                let g_bbar = gh * xt;
                grads.x[t * ch + e] += gh * bv * gain;
                grads.b[t * n + s] += g_bbar * gain;
                grads.delta[t * ch + e] += g_abar * a_bar * av + g_bbar * bv * a_bar;
                grads.a[i] += g_abar * a_bar * dt + g_bbar * bv * dt * dt * phi_prime(z);
                carry[i] = gh * a_bar;
            }
        }
    }
    grads
}

/// Graph handles for the input-dependent projections of a selective SSM
/// over `E` channels with `N` states.
#[derive(Debug, Clone, Copy)]
pub struct SelectionVars {
    /// `[E×E]` and `[1×E]`; `Δ = softplus(x·W + bias)`.
    pub dt_weight: Var,
    pub dt_bias: Var,
    /// `[E×N]` and `[1×N]`.
    pub b_weight: Var,
    pub b_bias: Var,
    pub c_weight: Var,
    pub c_bias: Var,
    /// `[E×N]`; the state matrix is `a = −exp(a_log)`.
    pub a_log: Var,
}

/// Selective SSM over `x[T×E]`, differentiable in `x` and every projection.
pub fn selective_ssm(g: &mut Graph, x: Var, sel: &SelectionVars) -> Result<Var> {
    let dt = g.matmul(x, sel.dt_weight)?;
    let dt = g.add_row(dt, sel.dt_bias)?;
    let delta = g.softplus(dt);
    let b = g.matmul(x, sel.b_weight)?;
    let b = g.add_row(b, sel.b_bias)?;
    let c = g.matmul(x, sel.c_weight)?;
    let c = g.add_row(c, sel.c_bias)?;
    let a = g.exp(sel.a_log);
    let a = g.scale(a, -1.0);
    g.selective_scan(x, delta, a, b, c)
}
