//! A numerical laboratory for robust super-replication under quadratic
//! transaction costs with forward-looking (insider) information.
//!
//! The market is a discrete Bachelier-type model on `n` periods: returns have
//! magnitude between a lower and an upper volatility bound, prices move by
//! `x / sqrt(n)`, and every rebalancing of the share position by `Δγ` costs
//! `Λ (Δγ)²`. The trader may observe a fixed number of future returns before
//! choosing each position. The crate computes
//!
//! * exact worst-case super-replication prices on finite scenario trees
//!   ([`primal`]),
//! * lower bounds from probability measures on those trees, and the explicit
//!   construction of near-optimal measures from volatility controls
//!   ([`dual`]),
//! * the continuous-time limit value as a stochastic volatility control
//!   problem, via a closed-form Hamiltonian, a monotone finite-difference
//!   scheme and Monte Carlo policy search ([`limit`]),
//! * block trading strategies that exploit the lookahead and realize the
//!   corresponding wealth lower bounds ([`hedging`]).
//!
//! The [`harness`] module and the `quadhedge` binary orchestrate experiments
//! (convergence ladders, insider-value studies, decay scans) and emit CSV
//! tables plus a JSON summary.

pub mod dual;
pub mod harness;
pub mod hedging;
pub mod limit;
pub mod market;
pub mod primal;
pub mod rng;

#[cfg(doctest)]
mod book;
