//! Reduced dynamics of the per-layer singular values and the rate formulas
//! built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|λ − 1|` below which a coordinate counts as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-10;

/// Fraction of leading steps excluded when measuring `α`.
pub const BURN_IN_FRACTION: f64 = 0.1;

/// `λ − η λ^{2L−1} + η λ^{L−1}`.
pub fn lambda_step(lambda: f64, eta: f64, depth: usize) -> f64 {
    coordinate_step(lambda, eta, depth, 1.0, 1.0)
}

/// `λ − η (s λ^{2L−1} − t λ^{L−1})`, the recursion for a coordinate whose
/// input direction has second moment `s` and target coupling `t`. Aligned
/// coordinates have `s = t = 1`; coordinates outside the target have
/// `t = 0` and do not move when their initial value is zero.
pub fn coordinate_step(lambda: f64, eta: f64, depth: usize, s: f64, t: f64) -> f64 {
    let l = depth as i32;
    let low = lambda.powi(l - 1);
    lambda - eta * (s * low * low * lambda - t * low)
}

/// `min{1/L, 2/((2L−1) M^{2L−2})}`. Step sizes must stay strictly below it.
pub fn max_step_size(depth: usize, m: f64) -> f64 {
    let l = depth as f64;
    (1.0 / l).min(2.0 / ((2.0 * l - 1.0) * m.powi(2 * depth as i32 - 2)))
}

/// `½ Σ (1 − λ_i^L)²`.
pub fn closed_form_excess_loss(lambdas: &[f64], depth: usize) -> f64 {
    0.5 * lambdas
        .iter()
        .map(|l| (1.0 - l.powi(depth as i32)).powi(2))
        .sum::<f64>()
}

/// `l0 · exp(−2 L α η t)`.
pub fn loss_decay_bound(l0: f64, alpha: f64, eta: f64, depth: usize, t: usize) -> f64 {
    l0 * (-2.0 * depth as f64 * alpha * eta * t as f64).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenTrajectory {
    /// `values[t][i] = λ_{i,t}`, for `t = 0..=steps`.
    pub values: Vec<Vec<f64>>,
    pub eta: f64,
    pub depth: usize,
    /// `max{1, λ_{i,0}}`.
    pub m: f64,
}

impl EigenTrajectory {
    pub fn steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn excess_loss(&self, t: usize) -> f64 {
        closed_form_excess_loss(&self.values[t], self.depth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    /// `min_i λ_{i,t}^{2L−2}` over the window after burn-in; sets the
    /// asymptotic rate.
    pub alpha: f64,
    /// The same minimum over the whole trajectory. This is the constant the
    /// loss bound `L̃_0 e^{−2Lαηt}` holds with from `t = 0`.
    pub alpha_trajectory: f64,
    /// Smallest `λ_{i,t}` anywhere on the trajectory.
    pub c_min: f64,
    /// First step with `max_i |λ_{i,t} − 1| < 1e-10`.
    pub converged_at: Option<usize>,
    /// `2 L α η`.
    pub predicted_decay_rate: f64,
}

impl DynamicsReport {
    pub fn from_values(values: &[Vec<f64>], depth: usize, eta: f64) -> Self {
        let power = 2 * depth as i32 - 2;
        let step_min = |row: &Vec<f64>| row.iter().fold(f64::INFINITY, |m, l| m.min(*l));
        let steps = values.len().saturating_sub(1);
        let burn = (BURN_IN_FRACTION * steps as f64).floor() as usize;
        let alpha = values[burn..]
            .iter()
            .map(|row| step_min(row).powi(power))
            .fold(f64::INFINITY, f64::min);
        let c_min = values.iter().map(step_min).fold(f64::INFINITY, f64::min);
        let alpha_trajectory = c_min.powi(power);
        let converged_at = values.iter().position(|row| {
            row.iter().all(|l| (l - 1.0).abs() < CONVERGENCE_TOLERANCE)
        });
        Self {
            alpha,
            alpha_trajectory,
            c_min,
            converged_at,
            predicted_decay_rate: 2.0 * depth as f64 * alpha * eta,
        }
    }
}

/// Iterates [`lambda_step`] on every coordinate for `steps` steps.
pub fn run_scalar_dynamics(
    lambda0: &[f64],
    eta: f64,
    depth: usize,
    steps: usize,
) -> Result<(EigenTrajectory, DynamicsReport)> {
    if depth < 2 {
        return Err(Error::Config(format!("depth must be at least 2, got {depth}")));
    }
    if lambda0.is_empty() {
        return Err(Error::Domain("no coordinates to evolve".into()));
    }
    if let Some(bad) = lambda0.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::Domain(format!("initial value {bad} is outside (0, inf)")));
    }
    let m = lambda0.iter().fold(1.0_f64, |m, &l| m.max(l));
    let bound = max_step_size(depth, m);
    if !(eta > 0.0 && eta < bound) {
        return Err(Error::Config(format!(
            "step size eta = {eta} must lie in (0, {bound}) for L = {depth}, M = {m}"
        )));
    }
    let limit = 2.0 * m;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(lambda0.to_vec());
    for t in 1..=steps {
        let next: Vec<f64> = values[t - 1].iter().map(|&l| lambda_step(l, eta, depth)).collect();
        if let Some(&bad) = next.iter().find(|l| !(**l > 0.0 && **l <= limit)) {
            return Err(Error::Divergence { step: t, value: bad, limit });
        }
        values.push(next);
    }
    let report = DynamicsReport::from_values(&values, depth, eta);
    Ok((EigenTrajectory { values, eta, depth, m }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        for depth in 2..=7 {
            for eta in [0.01, 0.1, 0.3] {
                assert_eq!(lambda_step(1.0, eta, depth), 1.0);
                assert_eq!(lambda_step(0.0, eta, depth), 0.0);
            }
        }
    }

    #[test]
    fn hand_evaluated_step() {
        assert!((lambda_step(0.5, 0.1, 2) - 0.5375).abs() < 1e-15);
    }

    #[test]
    fn step_bound_values() {
        assert_eq!(max_step_size(2, 1.0), 0.5);
        assert!((max_step_size(3, 1.0) - 1.0 / 3.0).abs() < 1e-16);
        // M > 1 makes the second term bind: 2 / (3 · 4) for L = 2, M = 2.
        assert!((max_step_size(2, 2.0) - 2.0 / 12.0).abs() < 1e-16);
    }

    #[test]
    fn converges_from_spread_of_starts() {
        for depth in 2..=5 {
            for start in [0.1_f64, 0.5, 1.0, 1.3] {
                let m = start.max(1.0);
                let eta = 0.9 * max_step_size(depth, m);
                let (traj, report) = run_scalar_dynamics(&[start], eta, depth, 100_000).unwrap();
                assert!(report.converged_at.is_some(), "L={depth} start={start}");
                assert!((traj.values.last().unwrap()[0] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn small_starts_converge_eventually_at_depth() {
        // Growth near zero is O(λ^{L−1}), so deep networks started small
        // need millions of steps; iterate without storing the trajectory.
        for depth in 2..=7 {
            for start in [0.05_f64, 0.5, 0.95] {
                let eta = 0.9 * max_step_size(depth, 1.0);
                let mut l = start;
                let mut steps = 0;
                while (l - 1.0).abs() >= CONVERGENCE_TOLERANCE {
                    l = lambda_step(l, eta, depth);
                    steps += 1;
                    assert!(steps < 20_000_000, "L={depth} start={start}");
                }
            }
        }
    }

    #[test]
    fn already_converged() {
        let (_, report) = run_scalar_dynamics(&[1.0; 4], 0.1, 3, 50).unwrap();
        assert_eq!(report.converged_at, Some(0));
        assert_eq!(report.alpha, 1.0);
        assert_eq!(report.alpha_trajectory, 1.0);
    }

    #[test]
    fn monotone_rise_from_half() {
        let (traj, report) = run_scalar_dynamics(&[0.5; 4], 0.4, 2, 400).unwrap();
        for w in traj.values.windows(2) {
            assert!(w[1][0] >= w[0][0] && w[1][0] <= 1.0);
        }
        assert!(report.alpha > 0.99);
        assert_eq!(report.c_min, 0.5);
    }

    #[test]
    fn loss_decays_at_least_at_predicted_rate() {
        let depth = 3;
        let eta = 0.5 * max_step_size(depth, 1.0);
        let (traj, report) = run_scalar_dynamics(&[0.3, 0.6, 0.9], eta, depth, 2000).unwrap();
        let l0 = traj.excess_loss(0);
        for t in 0..=traj.steps() {
            let bound = loss_decay_bound(l0, report.alpha_trajectory, eta, depth, t);
            assert!(traj.excess_loss(t) <= bound * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(run_scalar_dynamics(&[0.5], 0.5, 2, 10), Err(Error::Config(_))));
        assert!(matches!(run_scalar_dynamics(&[0.0], 0.1, 2, 10), Err(Error::Domain(_))));
        assert!(matches!(run_scalar_dynamics(&[], 0.1, 2, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn closed_form_loss_values() {
        assert_eq!(closed_form_excess_loss(&[1.0; 3], 4), 0.0);
        assert_eq!(closed_form_excess_loss(&[0.0; 5], 2), 2.5);
    }

    #[test]
    fn decay_bound_identities() {
        assert_eq!(loss_decay_bound(3.0, 0.7, 0.1, 2, 0), 3.0);
        let a = loss_decay_bound(1.0, 0.5, 0.1, 2, 40);
        let b = loss_decay_bound(1.0, 0.5, 0.1, 4, 20);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn generalized_step_reduces_to_plain() {
        for l in [0.2, 0.9, 1.1] {
            assert_eq!(coordinate_step(l, 0.1, 3, 1.0, 1.0), lambda_step(l, 0.1, 3));
        }
        assert_eq!(coordinate_step(0.4, 0.1, 3, 0.0, 0.0), 0.4);
        assert!(coordinate_step(0.4, 0.1, 3, 1.0, 0.0) < 0.4);
    }
}
