//! The continuous-time limit of the pricing problem.
//!
//! As the number of periods grows, the super-replication price converges to
//! a stochastic volatility control problem: the adversary chooses a
//! nonnegative volatility process `ν` for the price `S = s + ∫ ν dW` and
//! collects
//!
//! ```text
//! E[ H(S) - (N/4Λ) (S_1 - s)² - (1/16Λ) ∫ G(ν²_t) dt ]
//! ```
//!
//! where the penalty `G` charges the squared deviation of the instantaneous
//! variance outside the band `[σ_lo², σ_hi²]`. For claims on the terminal
//! price the value solves a one-dimensional HJB equation whose Hamiltonian
//! `sup_z { q z / 2 - G(z)/16Λ }` is available in closed form ([`hamiltonian`]),
//! which [`hjb::hjb_value`] integrates with an explicit monotone scheme.
//! [`mc::mc_lower_bound`] estimates the objective of any concrete control by
//! simulation, and [`mc::optimize_control`] searches a parametrized family.

pub mod hjb;
pub mod mc;

pub use hjb::{hjb_value, insider_value, HjbGrid, InsiderValueReport};
pub use mc::{
    bachelier_call, mc_lower_bound, norm_cdf, norm_pdf, optimize_control, ControlFamily, McOpts,
    OptimizerOpts,
};

use serde::Serialize;
use thiserror::Error;

use crate::market::Payoff;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("penalty argument must be nonnegative, got {0}")]
    NegativeInput(f64),
    #[error("time step {dt} violates the monotonicity bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("value blow-up detected at time step {step}")]
    UnstableDetected { step: usize },
    #[error("claim is not a function of the terminal price")]
    NonMarkovianPayoff,
    #[error("optimizer budget {budget} too small for {params} parameters")]
    BudgetExhausted { budget: usize, params: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Variance penalty: zero on the band `[σ_lo², σ_hi²]`, quadratic in the
/// normalized distance outside it.
pub fn g_penalty(z: f64, sigma_lo: f64, sigma_hi: f64) -> Result<f64, LimitError> {
    if z < 0.0 {
        return Err(LimitError::NegativeInput(z));
    }
    let lo2 = sigma_lo * sigma_lo;
    let hi2 = sigma_hi * sigma_hi;
    Ok(if z < lo2 {
        let d = sigma_lo - z / sigma_lo;
        d * d
    } else if z <= hi2 {
        0.0
    } else {
        let d = z / sigma_hi - sigma_hi;
        d * d
    })
}

/// Closed-form pointwise optimization `sup_{z >= 0} { q z / 2 - G(z)/(16Λ) }`,
/// returning the value and a maximizing variance `z*`.
///
/// For `q >= 0` the optimum sits above the band at `z* = σ_hi² (1 + 4Λq)`;
/// for moderately negative `q` it dips below the band symmetrically; once
/// `q < -1/(4Λ)` the optimizer parks at `z* = 0` and the value freezes at
/// `-σ_lo²/(16Λ)`. The value is continuous across both branch points.
pub fn hamiltonian(q: f64, sigma_lo: f64, sigma_hi: f64, lambda: f64) -> (f64, f64) {
    let lo2 = sigma_lo * sigma_lo;
    let hi2 = sigma_hi * sigma_hi;
    if q >= 0.0 {
        (0.5 * hi2 * q + lambda * hi2 * q * q, hi2 * (1.0 + 4.0 * lambda * q))
    } else if q >= -1.0 / (4.0 * lambda) {
        (0.5 * lo2 * q + lambda * lo2 * q * q, lo2 * (1.0 + 4.0 * lambda * q))
    } else {
        (-lo2 / (16.0 * lambda), 0.0)
    }
}

/// The limiting objective for one claim.
#[derive(Debug, Clone, Serialize)]
pub struct LimitObjective {
    pub payoff: Payoff,
    pub lookahead: usize,
    pub lambda_cost: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub s: f64,
}

impl LimitObjective {
    pub fn validate(&self) -> Result<(), LimitError> {
        if !(self.sigma_lo > 0.0 && self.sigma_hi >= self.sigma_lo) {
            return Err(LimitError::InvalidParams("volatility band must be ordered".into()));
        }
        if !(self.lambda_cost > 0.0) {
            return Err(LimitError::InvalidParams("lambda_cost must be positive".into()));
        }
        Ok(())
    }

    /// Terminal condition `h(x) - (N/4Λ)(x - s)²` for Markovian claims.
    pub fn terminal(&self) -> Result<impl Fn(f64) -> f64 + Sync + Send, LimitError> {
        let h = self.payoff.terminal_fn(self.s).ok_or(LimitError::NonMarkovianPayoff)?;
        let weight = self.lookahead as f64 / (4.0 * self.lambda_cost);
        let s = self.s;
        Ok(move |x: f64| h(x) - weight * (x - s) * (x - s))
    }
}

/// Value as the lookahead grows without bound: the claim on the constant
/// path minus `σ_lo²/(16Λ)`.
pub fn large_n_asymptote(payoff: &Payoff, s: f64, sigma_lo: f64, lambda: f64) -> f64 {
    payoff.eval_prices(&[s, s]) - sigma_lo * sigma_lo / (16.0 * lambda)
}
