//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;

/// Relative error with the denominator floored at `1e-12`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Which coordinates of each input to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// At most this many coordinates per input, drawn with the given seed.
    Sampled { per_input: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Max relative error per input, in input order.
    pub per_input: Vec<f64>,
    /// Worst coordinate of each input as `(index, analytic, numeric)`.
    pub worst: Vec<(usize, f64, f64)>,
    pub coordinates: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Graph, Vec<Var>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).data()[0];
    g.backward(out)?;
    Ok((v, g, vars))
}

fn value_at<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
pub fn finite_diff_check_many<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    coverage: Coverage,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, graph, vars) = evaluate(&f, inputs)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| graph.grad_or_zeros(v)).collect();
    drop(graph);

    let mut rng = match coverage {
        Coverage::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coverage::All => None,
    };
    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut worst_at = Vec::with_capacity(inputs.len());
    let mut coordinates = 0;
    for k in 0..inputs.len() {
        let n = inputs[k].numel();
        let coords: Vec<usize> = match (coverage, rng.as_mut()) {
            (Coverage::Sampled { per_input, .. }, Some(rng)) if per_input < n => {
                let mut c = sample(rng, n, per_input).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0_f64;
        let mut at = (0, 0.0, 0.0);
        for j in coords {
            let x0 = inputs[k].data()[j];
            work[k].data_mut()[j] = x0 + h;
            let plus = value_at(&f, &work)?;
            work[k].data_mut()[j] = x0 - h;
            let minus = value_at(&f, &work)?;
            work[k].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].data()[j];
            let err = relative_error(a, numeric);
            if err >= worst {
                worst = err;
                at = (j, a, numeric);
            }
            coordinates += 1;
        }
        per_input.push(worst);
        worst_at.push(at);
    }
    Ok(GradCheck {
        per_input,
        worst: worst_at,
        coordinates,
    })
}

/// Single-input form: max relative error over every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = finite_diff_check_many(
        |g, vars| f(g, vars[0]),
        std::slice::from_ref(x),
        h,
        Coverage::All,
    )?;
    Ok(report.max_error())
}
