//! Trading strategies, wealth accounting and the block strategy that turns
//! lookahead into wealth.
//!
//! A strategy holds `γ_i` shares after period `i`; positions must be chosen
//! from the information available at that time, which with lookahead `N`
//! means the first `min(i + N, n)` returns. Rebalancing by `Δγ` costs
//! `Λ (Δγ)²`, so the mark-to-market wealth evolves as
//!
//! ```text
//! Y_0 = 0,   Y_{k+1} - Y_k = γ_k (S_{k+1} - S_k) - Λ (γ_k - γ_{k-1})²
//! ```
//!
//! with `γ_{-1} = 0`. Strategies on a scenario tree store one value per
//! `(time, information node)` slot; large-horizon constructions work with
//! per-path position sequences instead.

use serde::Serialize;
use thiserror::Error;

use crate::market::{stock_prices, DiscretizationParams, ModelParams, ScenarioTree};

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("strategy shape does not match the information structure: {0}")]
    ShapeMismatch(String),
    #[error("decision slots would number {needed}, over the cap {cap}")]
    CapExceeded { needed: u128, cap: u128 },
    #[error("block {block} is too short for ramp/trade/liquidate phases")]
    BlockTooShort { block: usize },
    #[error(transparent)]
    Market(#[from] crate::market::MarketError),
}

/// Decision-slot layout: at time `i` the trader has resolved the first
/// `d(i) = min(i + lookahead, n)` returns, so positions at time `i` are
/// indexed by tree nodes at depth `d(i)`.
#[derive(Debug, Clone)]
pub struct InfoIndex {
    depths: Vec<usize>,
    slot_counts: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
    branching: usize,
    n: usize,
}

/// Cap on the total number of decision slots an exact solve may use.
pub const DEFAULT_SLOT_CAP: u128 = 50_000_000;

impl InfoIndex {
    pub fn new(tree: &ScenarioTree) -> Result<Self, HedgeError> {
        let p = tree.params();
        let b = tree.branching();
        let mut depths = Vec::with_capacity(p.n);
        let mut slot_counts = Vec::with_capacity(p.n);
        let mut offsets = Vec::with_capacity(p.n);
        let mut total: u128 = 0;
        for i in 0..p.n {
            let d = (i + p.lookahead).min(p.n);
            depths.push(d);
            let count = (b as u128).pow(d as u32);
            offsets.push(total as usize);
            total += count;
            if total > DEFAULT_SLOT_CAP {
                return Err(HedgeError::CapExceeded { needed: total, cap: DEFAULT_SLOT_CAP });
            }
            slot_counts.push(count as usize);
        }
        Ok(InfoIndex { depths, slot_counts, offsets, total: total as usize, branching: b, n: p.n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depths[i]
    }

    pub fn slot_count(&self, i: usize) -> usize {
        self.slot_counts[i]
    }

    /// Offset of time `i`'s slots in the flattened decision vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn total_slots(&self) -> usize {
        self.total
    }

    /// Flat slot index for time `i` on the path to `leaf`.
    pub fn slot(&self, i: usize, leaf: usize) -> usize {
        let shift = self.n - self.depths[i];
        self.offsets[i] + leaf / self.branching.pow(shift as u32)
    }
}

/// Positions indexed by `(time, information node)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    per_time: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn zeros(info: &InfoIndex) -> Self {
        Strategy { per_time: (0..info.n()).map(|i| vec![0.0; info.slot_count(i)]).collect() }
    }

    pub fn from_flat(info: &InfoIndex, flat: &[f64]) -> Result<Self, HedgeError> {
        if flat.len() != info.total_slots() {
            return Err(HedgeError::ShapeMismatch(format!(
                "expected {} slots, got {}",
                info.total_slots(),
                flat.len()
            )));
        }
        let per_time = (0..info.n())
            .map(|i| flat[info.offset(i)..info.offset(i) + info.slot_count(i)].to_vec())
            .collect();
        Ok(Strategy { per_time })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.per_time.iter().flatten().cloned().collect()
    }

    pub fn matches(&self, info: &InfoIndex) -> bool {
        self.per_time.len() == info.n()
            && self.per_time.iter().enumerate().all(|(i, v)| v.len() == info.slot_count(i))
    }

    /// Position held at time `i` along the path to `leaf`.
    pub fn position(&self, info: &InfoIndex, i: usize, leaf: usize) -> f64 {
        self.per_time[i][info.slot(i, leaf) - info.offset(i)]
    }

    /// Positions along a full path given by its leaf index.
    pub fn path_positions(&self, info: &InfoIndex, leaf: usize) -> Vec<f64> {
        (0..info.n()).map(|i| self.position(info, i, leaf)).collect()
    }
}

/// Wealth trajectory, cumulative transaction cost and final position.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthLedger {
    pub wealth: Vec<f64>,
    pub total_cost: f64,
    pub final_position: f64,
}

impl WealthLedger {
    pub fn terminal(&self) -> f64 {
        *self.wealth.last().expect("non-empty ledger")
    }
}

/// Wealth of a per-path position sequence along a return sequence.
pub fn wealth_positions(
    params: &ModelParams,
    positions: &[f64],
    returns: &[f64],
) -> Result<WealthLedger, HedgeError> {
    if positions.len() != params.n {
        return Err(HedgeError::ShapeMismatch(format!(
            "expected {} positions, got {}",
            params.n,
            positions.len()
        )));
    }
    let path = stock_prices(params, returns)?;
    let mut wealth = Vec::with_capacity(params.n + 1);
    wealth.push(0.0);
    let mut y = 0.0;
    let mut prev = 0.0;
    let mut cost = 0.0;
    for i in 0..params.n {
        let delta = positions[i] - prev;
        let c = params.lambda_cost * delta * delta;
        y += positions[i] * (path.prices[i + 1] - path.prices[i]) - c;
        cost += c;
        wealth.push(y);
        prev = positions[i];
    }
    Ok(WealthLedger { wealth, total_cost: cost, final_position: prev })
}

/// Wealth of a tree-indexed strategy along a return sequence.
pub fn wealth(
    params: &ModelParams,
    strategy: &Strategy,
    returns: &[f64],
) -> Result<WealthLedger, HedgeError> {
    let tree = crate::market::build_tree(params)?;
    let info = InfoIndex::new(&tree)?;
    if !strategy.matches(&info) {
        return Err(HedgeError::ShapeMismatch("strategy slots do not match the tree".into()));
    }
    let mut leaf = 0usize;
    for (i, &x) in returns.iter().enumerate() {
        let digit = tree.digit_of(x).ok_or(crate::market::MarketError::OutOfOmega {
            index: i,
            value: x,
        })?;
        leaf = leaf * tree.branching() + digit;
    }
    let positions = strategy.path_positions(&info, leaf);
    wealth_positions(params, &positions, returns)
}

/// Integer cube root (largest `r` with `r³ <= n`).
fn floor_cbrt(n: usize) -> usize {
    let mut r = (n as f64).cbrt().floor() as usize;
    while (r + 1).pow(3) <= n {
        r += 1;
    }
    while r.pow(3) > n {
        r -= 1;
    }
    r
}

/// Per-path block strategy built on the stopping-time skeleton.
///
/// On each block between consecutive stopping steps `[a_k, a_{k+1})` the
/// strategy ramps from 0 to `phi[k]` over `[a_k, a_k + r)` at constant speed
/// (`r = floor(n^{1/3})`), then on the middle stretch trades
///
/// ```text
/// Δγ_i = (1/sqrt(n)) ( psi[k] · x_{i+N}  +  (x_{i+1} + ... + x_{i+N}) / (2Λ) )
/// ```
///
/// using the `N` observed future returns, and finally liquidates back to 0 at
/// constant speed over the last `r` steps of the block. Blocks starting after
/// `n - 2 n^{1/3}` do not trade.
pub fn insider_block_strategy(
    params: &ModelParams,
    disc: &DiscretizationParams,
    phi: &[f64],
    psi: &[f64],
    returns: &[f64],
) -> Result<Vec<f64>, HedgeError> {
    if phi.len() != psi.len() {
        return Err(HedgeError::ShapeMismatch("phi and psi must have equal length".into()));
    }
    let n = params.n;
    let nn = params.lookahead;
    let path = stock_prices(params, returns)?;
    let stops = crate::market::stopping_times(&path, disc.eps)?;
    let r = floor_cbrt(n).max(1);
    let scale = params.step_scale();
    let quiet_after = n as f64 - 2.0 * (n as f64).cbrt();

    let mut gamma = vec![0.0; n];
    let mut held = 0.0;
    let blocks = phi.len().min(stops.step_indices.len().saturating_sub(1));
    for k in 0..blocks {
        let a = stops.step_indices[k];
        let a_next = stops.step_indices[k + 1];
        if a >= n {
            break;
        }
        if (a as f64) > quiet_after {
            for slot in gamma.iter_mut().take(a_next.min(n)).skip(a) {
                *slot = held;
            }
            continue;
        }
        let b = a + r;
        let c = a_next.saturating_sub(r);
        if b >= c || c + nn > n + 1 {
            return Err(HedgeError::BlockTooShort { block: k });
        }
        // Ramp: 0 -> phi_k in r equal steps.
        for i in a..b {
            gamma[i] = phi[k] * ((i - a + 1) as f64) / (r as f64);
        }
        held = phi[k];
        // Middle: lookahead-driven trades.
        for i in b..c {
            let future_sum: f64 = returns[i..i + nn].iter().sum();
            let delta =
                scale * (psi[k] * returns[i + nn - 1] + future_sum / (2.0 * params.lambda_cost));
            held += delta;
            gamma[i] = held;
        }
        // Liquidation: back to 0 in a_next - c equal steps.
        let steps = (a_next - c) as f64;
        for i in c..a_next {
            gamma[i] = held * ((a_next - 1 - i) as f64) / steps;
        }
        held = 0.0;
    }
    // Hold whatever is left (zero after a completed block) through the tail.
    let tail_from = stops.step_indices.get(blocks).copied().unwrap_or(n).min(n);
    for slot in gamma.iter_mut().skip(tail_from) {
        *slot = held;
    }
    Ok(gamma)
}

/// Wealth target of the block strategy, expressed through block increments of
/// the price and of its quadratic variation `[S]_k = (1/n) Σ_{i<=k} x_i²`:
///
/// ```text
/// Σ_k phi_k ΔS_k + Σ_k (psi_k/2 + N/(4Λ)) (ΔS_k)² - Σ_k (psi_k/2 + Λ psi_k²) Δ[S]_k
/// ```
pub fn lemma43_rhs(
    params: &ModelParams,
    disc: &DiscretizationParams,
    phi: &[f64],
    psi: &[f64],
    returns: &[f64],
) -> Result<f64, HedgeError> {
    if phi.len() != psi.len() {
        return Err(HedgeError::ShapeMismatch("phi and psi must have equal length".into()));
    }
    let path = stock_prices(params, returns)?;
    let stops = crate::market::stopping_times(&path, disc.eps)?;
    let n = params.n as f64;
    let mut qv = Vec::with_capacity(params.n + 1);
    let mut acc = 0.0;
    qv.push(0.0);
    for &x in returns {
        acc += x * x / n;
        qv.push(acc);
    }
    let nn = params.lookahead as f64;
    let lam = params.lambda_cost;
    let mut total = 0.0;
    for k in 0..phi.len() {
        if k + 1 >= stops.step_indices.len() {
            break;
        }
        let a = stops.step_indices[k];
        let a1 = stops.step_indices[k + 1];
        let ds = path.prices[a1] - path.prices[a];
        let dqv = qv[a1] - qv[a];
        total += phi[k] * ds + (psi[k] / 2.0 + nn / (4.0 * lam)) * ds * ds
            - (psi[k] / 2.0 + lam * psi[k] * psi[k]) * dqv;
    }
    Ok(total)
}
