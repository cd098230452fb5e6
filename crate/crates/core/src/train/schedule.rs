//! Staircase exponential learning-rate decay.

/// `lr0 · decay_rate^⌊epoch / decay_every⌋`.
pub fn lr_schedule(epoch: usize, lr0: f64, decay_rate: f64, decay_every: usize) -> f64 {
    let steps = epoch / decay_every.max(1);
    lr0 * decay_rate.powi(steps as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staircase_values() {
        assert_eq!(lr_schedule(0, 0.001, 0.96, 10), 0.001);
        assert_eq!(lr_schedule(9, 0.001, 0.96, 10), 0.001);
        assert!((lr_schedule(10, 0.001, 0.96, 10) - 0.00096).abs() < 1e-18);
        assert!((lr_schedule(25, 0.001, 0.96, 10) - 0.001 * 0.96 * 0.96).abs() < 1e-18);
    }

    #[test]
    fn unit_rate_is_constant() {
        for e in [0, 1, 50, 299] {
            assert_eq!(lr_schedule(e, 0.003, 1.0, 10), 0.003);
        }
    }
}
