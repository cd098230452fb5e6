//! Huber loss.

/// Per-element Huber penalty.
pub fn huber(err: f64, delta: f64) -> f64 {
    let a = err.abs();
    if a <= delta {
        0.5 * err * err
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `err`; clamps at `±delta`.
pub fn huber_grad(err: f64, delta: f64) -> f64 {
    err.clamp(-delta, delta)
}

/// Mean Huber penalty of `pred − target`.
pub fn huber_loss(target: &[f64], pred: &[f64], delta: f64) -> f64 {
    debug_assert_eq!(target.len(), pred.len());
    debug_assert!(delta > 0.0);
    if target.is_empty() {
        return 0.0;
    }
    let total: f64 = target.iter().zip(pred).map(|(y, p)| huber(p - y, delta)).sum();
    total / target.len() as f64
}
