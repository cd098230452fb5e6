//! Diagonal state-space kernels.
//!
//! Continuous system `h' = A h + B x`, `y = C h` with diagonal `A`, discretised
//! by zero-order hold:
//!
//! ```text
//! ā = exp(Δ a)
//! b̄ = ((exp(Δ a) − 1) / a) · b
//! ```
//!
//! The recurrence `h_{k+1} = ā h_k + b̄ x_k`, `y_{k+1} = C h_{k+1}` starts from
//! `h_0 = 0`. Output slot `k` of every routine here holds `y_{k+1}`, so the
//! recurrent form and the convolution with `K̄ = (C b̄, C ā b̄, C ā² b̄, …)` line
//! up index for index.

pub mod selective;

use crate::error::{Error, Result};

/// Below this `|Δ·a|` the input gain uses its Taylor expansion.
pub const SERIES_THRESHOLD: f64 = 1e-8;

/// `(exp(z) − 1) / z`, with the removable singularity at zero filled in.
pub(crate) fn phi(z: f64) -> f64 {
    if z.abs() < SERIES_THRESHOLD {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`phi`].
pub(crate) fn phi_prime(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// Which formula evaluates the ZOH input gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZohBranch {
    /// Pick by [`SERIES_THRESHOLD`].
    Auto,
    /// `((exp(Δa) − 1)/a)·b`.
    Direct,
    /// `Δ·b·(1 + z/2 + z²/6)` with `z = Δa`.
    Series,
}

/// ZOH for one diagonal state: returns `(ā, b̄)`.
pub fn zoh(a: f64, b: f64, delta: f64, branch: ZohBranch) -> (f64, f64) {
    let z = delta * a;
    let a_bar = z.exp();
    let b_bar = match branch {
        ZohBranch::Auto => delta * phi(z) * b,
        ZohBranch::Direct => z.exp_m1() / a * b,
        ZohBranch::Series => delta * (1.0 + z / 2.0 + z * z / 6.0) * b,
    };
    (a_bar, b_bar)
}

/// Continuous diagonal SSM for `channels` independent input channels, each
/// with `states` real states. Arrays are `[channels × states]` row-major;
/// `delta` has one timescale per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    channels: usize,
    states: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    delta: Vec<f64>,
}

impl SsmParams {
    pub fn new(
        channels: usize,
        states: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        delta: Vec<f64>,
    ) -> Result<Self> {
        let n = channels * states;
        for (name, len) in [("a", a.len()), ("b", b.len()), ("c", c.len())] {
            if len != n {
                return Err(Error::Contract(format!(
                    "{name} has {len} entries, expected {channels}×{states}"
                )));
            }
        }
        if delta.len() != channels {
            return Err(Error::Contract(format!(
                "delta has {} entries, expected {channels}",
                delta.len()
            )));
        }
        if let Some(bad) = a.iter().find(|v| !(**v < 0.0)) {
            return Err(Error::Contract(format!("state entry a = {bad} is not negative")));
        }
        if let Some(bad) = delta.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Contract(format!("timescale delta = {bad} is not positive")));
        }
        Ok(Self {
            channels,
            states,
            a,
            b,
            c,
            delta,
        })
    }

    /// One channel with `a.len()` states.
    pub fn single(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, delta: f64) -> Result<Self> {
        let states = a.len();
        Self::new(1, states, a, b, c, vec![delta])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    pub channels: usize,
    pub states: usize,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
}

impl DiscreteSsm {
    /// Builds a discrete system directly, e.g. `ā = 0` for a memoryless delay.
    pub fn from_parts(
        channels: usize,
        states: usize,
        a_bar: Vec<f64>,
        b_bar: Vec<f64>,
        c: Vec<f64>,
    ) -> Result<Self> {
        let n = channels * states;
        if a_bar.len() != n || b_bar.len() != n || c.len() != n {
            return Err(Error::Contract(format!(
                "discrete system arrays must have {channels}×{states} entries"
            )));
        }
        Ok(Self {
            channels,
            states,
            a_bar,
            b_bar,
            c,
        })
    }
}

/// Convolution taps, `[length × channels]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub channels: usize,
    pub taps: Vec<f64>,
}

impl ConvKernel {
    pub fn len(&self) -> usize {
        self.taps.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn tap(&self, j: usize, channel: usize) -> f64 {
        self.taps[j * self.channels + channel]
    }
}

pub fn discretize_zoh(params: &SsmParams) -> DiscreteSsm {
    let n = params.states;
    let mut a_bar = Vec::with_capacity(params.a.len());
    let mut b_bar = Vec::with_capacity(params.a.len());
    for ch in 0..params.channels {
        let delta = params.delta[ch];
        for s in 0..n {
            let (ab, bb) = zoh(params.a[ch * n + s], params.b[ch * n + s], delta, ZohBranch::Auto);
            a_bar.push(ab);
            b_bar.push(bb);
        }
    }
    DiscreteSsm {
        channels: params.channels,
        states: n,
        a_bar,
        b_bar,
        c: params.c.clone(),
    }
}

/// Sequential recurrence over `x[T × channels]`.
pub fn ssm_scan(d: &DiscreteSsm, x: &[f64]) -> Result<Vec<f64>> {
    let ch = d.channels;
    if ch == 0 || x.len() % ch != 0 {
        return Err(Error::Contract(format!(
            "input of {} values is not a whole number of {ch}-channel steps",
            x.len()
        )));
    }
    let n = d.states;
    let mut h = vec![0.0; ch * n];
    let mut y = vec![0.0; x.len()];
    for (xt, yt) in x.chunks(ch).zip(y.chunks_mut(ch)) {
        for e in 0..ch {
            let mut acc = 0.0;
            for s in 0..n {
                let i = e * n + s;
                h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * xt[e];
                acc += d.c[i] * h[i];
            }
            yt[e] = acc;
        }
    }
    Ok(y)
}

/// `K̄[j] = Σ_states C·ā^j·b̄`, with the power kept as a running product.
pub fn ssm_conv_kernel(d: &DiscreteSsm, length: usize) -> Result<ConvKernel> {
    if length == 0 {
        return Err(Error::Contract("kernel length must be at least 1".into()));
    }
    let (ch, n) = (d.channels, d.states);
    let mut power = vec![1.0; ch * n];
    let mut taps = Vec::with_capacity(length * ch);
    for _ in 0..length {
        for e in 0..ch {
            let mut acc = 0.0;
            for s in 0..n {
                let i = e * n + s;
                acc += d.c[i] * power[i] * d.b_bar[i];
            }
            taps.push(acc);
        }
        for (p, a) in power.iter_mut().zip(&d.a_bar) {
            *p *= a;
        }
    }
    Ok(ConvKernel { channels: ch, taps })
}

/// Causal convolution `y[t] = Σ_{j≤t} K̄[j]·x[t−j]` per channel. Taps past
/// the input length are ignored.
pub fn apply_global_conv(x: &[f64], k: &ConvKernel) -> Result<Vec<f64>> {
    let ch = k.channels;
    if ch == 0 || x.len() % ch != 0 {
        return Err(Error::Contract("input does not match kernel channels".into()));
    }
    let steps = x.len() / ch;
    if k.len() < steps {
        return Err(Error::Contract(format!(
            "kernel has {} taps, input has {steps} steps",
            k.len()
        )));
    }
    let mut y = vec![0.0; x.len()];
    for t in 0..steps {
        for j in 0..=t {
            for e in 0..ch {
                y[t * ch + e] += k.tap(j, e) * x[(t - j) * ch + e];
            }
        }
    }
    Ok(y)
}
