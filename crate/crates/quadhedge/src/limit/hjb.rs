//! Explicit monotone finite-difference scheme for the limiting value.
//!
//! Backward in time from the adjusted terminal condition, each step applies
//! the capped Hamiltonian to the discrete second difference:
//!
//! ```text
//! v(t - dt, x) = v(t, x) + dt · H_cap( D² v(t, x) )
//! ```
//!
//! `H_cap` clamps the maximizing variance to `z_cap = σ_hi² (1 + 4Λ q_cap)`,
//! and the time step obeys `dt <= dx² / z_cap`, which makes the update a
//! monotone (convex-combination) scheme; monotone schemes converge to the
//! viscosity solution as the grid refines. Boundary rows reuse the adjacent
//! interior second difference.

use serde::{Deserialize, Serialize};

use super::{g_penalty, hamiltonian, LimitError, LimitObjective};

/// Spatial/temporal grid and the curvature cap for the control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
    pub q_cap: f64,
}

impl HjbGrid {
    /// Default grid for an objective: the space spans eight upper-bound
    /// standard deviations each side of the spot, and the step count is the
    /// smallest satisfying the monotonicity bound.
    pub fn for_objective(objective: &LimitObjective, nx: usize) -> Self {
        let span = 8.0 * objective.sigma_hi;
        let q_cap = 50.0;
        let z_cap = objective.sigma_hi
            * objective.sigma_hi
            * (1.0 + 4.0 * objective.lambda_cost * q_cap);
        let dx = 2.0 * span / (nx - 1) as f64;
        let nt = (z_cap / (dx * dx)).ceil() as usize + 1;
        HjbGrid { x_lo: objective.s - span, x_hi: objective.s + span, nx, nt, q_cap }
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn z_cap(&self, objective: &LimitObjective) -> f64 {
        objective.sigma_hi * objective.sigma_hi
            * (1.0 + 4.0 * objective.lambda_cost * self.q_cap)
    }

    pub fn validate(&self, objective: &LimitObjective) -> Result<(), LimitError> {
        if self.nx < 3 {
            return Err(LimitError::InvalidParams("nx must be at least 3".into()));
        }
        if !(self.x_lo < objective.s && objective.s < self.x_hi) {
            return Err(LimitError::InvalidParams("spot must lie inside the grid".into()));
        }
        if !(self.q_cap > 0.0) {
            return Err(LimitError::InvalidParams("q_cap must be positive".into()));
        }
        let dx = self.dx();
        let bound = dx * dx / self.z_cap(objective);
        if self.dt() > bound * (1.0 + 1e-9) {
            return Err(LimitError::CflViolation { dt: self.dt(), bound });
        }
        Ok(())
    }
}

/// Hamiltonian with the maximizing variance clamped to `[0, z_cap]`.
fn hamiltonian_capped(q: f64, lo: f64, hi: f64, lambda: f64, z_cap: f64) -> f64 {
    let (value, z_star) = hamiltonian(q, lo, hi, lambda);
    if z_star > z_cap {
        0.5 * q * z_cap - g_penalty(z_cap, lo, hi).expect("nonnegative cap") / (16.0 * lambda)
    } else {
        value
    }
}

/// Integrates the scheme backward from an arbitrary terminal function and
/// returns the value at `(t = 0, x = s)` by linear interpolation.
pub fn hjb_value_terminal<F>(
    objective: &LimitObjective,
    grid: &HjbGrid,
    terminal: F,
) -> Result<f64, LimitError>
where
    F: Fn(f64) -> f64,
{
    objective.validate()?;
    grid.validate(objective)?;
    let nx = grid.nx;
    let dx = grid.dx();
    let dt = grid.dt();
    let z_cap = grid.z_cap(objective);
    let (lo, hi, lambda) = (objective.sigma_lo, objective.sigma_hi, objective.lambda_cost);
    let xs: Vec<f64> = (0..nx).map(|i| grid.x_lo + i as f64 * dx).collect();
    let mut v: Vec<f64> = xs.iter().map(|&x| terminal(x)).collect();
    let mut next = vec![0.0; nx];
    let inv_dx2 = 1.0 / (dx * dx);
    for step in 0..grid.nt {
        for i in 0..nx {
            // One-sided rows at the edges reuse the neighbouring stencil.
            let j = i.clamp(1, nx - 2);
            let q = (v[j + 1] - 2.0 * v[j] + v[j - 1]) * inv_dx2;
            next[i] = v[i] + dt * hamiltonian_capped(q, lo, hi, lambda, z_cap);
        }
        std::mem::swap(&mut v, &mut next);
        if step % 4096 == 0 {
            let worst = v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if !worst.is_finite() || worst > 1e14 {
                return Err(LimitError::UnstableDetected { step });
            }
        }
    }
    // Interpolate at the spot.
    let pos = (objective.s - grid.x_lo) / dx;
    let i = (pos.floor() as usize).min(nx - 2);
    let frac = pos - i as f64;
    let value = (1.0 - frac) * v[i] + frac * v[i + 1];
    if !value.is_finite() {
        return Err(LimitError::UnstableDetected { step: grid.nt });
    }
    Ok(value)
}

/// Limiting value of a terminal-price claim with lookahead: integrates the
/// scheme from `h(x) - (N/4Λ)(x - s)²`.
pub fn hjb_value(objective: &LimitObjective, grid: &HjbGrid) -> Result<f64, LimitError> {
    let terminal = objective.terminal()?;
    hjb_value_terminal(objective, grid, terminal)
}

/// Lookahead accounting: the value with lookahead `N` and the value of the
/// adjusted claim without lookahead coincide by construction; both are
/// reported so downstream checks can diff them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InsiderValueReport {
    pub v_n: f64,
    pub v_0_adjusted: f64,
    pub difference: f64,
}

pub fn insider_value(
    objective: &LimitObjective,
    grid: &HjbGrid,
) -> Result<InsiderValueReport, LimitError> {
    let v_n = hjb_value(objective, grid)?;
    let adjusted_terminal = objective.terminal()?;
    let zero_lookahead = LimitObjective { lookahead: 0, ..objective.clone() };
    let v_0_adjusted = hjb_value_terminal(&zero_lookahead, grid, adjusted_terminal)?;
    Ok(InsiderValueReport { v_n, v_0_adjusted, difference: v_n - v_0_adjusted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Payoff;

    fn objective(payoff: Payoff, lookahead: usize) -> LimitObjective {
        LimitObjective {
            payoff,
            lookahead,
            lambda_cost: 0.5,
            sigma_lo: 1.0,
            sigma_hi: 1.0,
            s: 0.0,
        }
    }

    #[test]
    fn zero_claim_without_lookahead_is_free() {
        let obj = objective(Payoff::constant(0.0), 0);
        let grid = HjbGrid::for_objective(&obj, 201);
        let v = hjb_value(&obj, &grid).unwrap();
        assert!(v.abs() < 1e-3, "value {v}");
    }

    #[test]
    fn zero_claim_with_lookahead_hits_the_floor() {
        let obj = objective(Payoff::constant(0.0), 1);
        let grid = HjbGrid::for_objective(&obj, 201);
        let v = hjb_value(&obj, &grid).unwrap();
        assert!((v + 0.125).abs() < 1e-3, "value {v}");
    }

    #[test]
    fn constant_claim_translates_the_floor() {
        let obj = objective(Payoff::constant(3.0), 1);
        let grid = HjbGrid::for_objective(&obj, 201);
        let v = hjb_value(&obj, &grid).unwrap();
        assert!((v - (3.0 - 0.125)).abs() < 1e-3, "value {v}");
    }

    #[test]
    fn lookahead_report_is_internally_consistent() {
        let obj = objective(Payoff::call(0.0), 1);
        let grid = HjbGrid::for_objective(&obj, 201);
        let report = insider_value(&obj, &grid).unwrap();
        assert_eq!(report.difference, 0.0);
        assert_eq!(report.v_n, report.v_0_adjusted);
    }

    #[test]
    fn lookback_claim_is_rejected() {
        let obj = objective(Payoff::lookback_max(), 0);
        let grid = HjbGrid::for_objective(&obj, 201);
        assert!(matches!(hjb_value(&obj, &grid), Err(LimitError::NonMarkovianPayoff)));
    }

    #[test]
    fn cfl_violation_is_detected() {
        let obj = objective(Payoff::constant(0.0), 0);
        let mut grid = HjbGrid::for_objective(&obj, 201);
        grid.nt = 10;
        assert!(matches!(hjb_value(&obj, &grid), Err(LimitError::CflViolation { .. })));
    }
}
