//! The discrete market: scenario trees, price paths, payoffs and space-time
//! stopping times.
//!
//! An `n`-period market is driven by returns `x_1, ..., x_n` whose magnitudes
//! lie in the volatility band `[sigma_lo, sigma_hi]`. Prices follow
//!
//! ```text
//! S_k = s + (1/sqrt(n)) * (x_1 + ... + x_k)
//! ```
//!
//! For computations the continuum of magnitudes is replaced by the grid
//! `{ (j/k)·sigma_lo + (1 - j/k)·sigma_hi : j = 0..k }`, which turns the
//! market into a finite multinomial tree with `2·(k+1)` children per node
//! (two signs per magnitude), collapsing to the binomial model when the band
//! degenerates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on scenario-tree node counts.
pub const DEFAULT_NODE_CAP: u128 = 20_000_000;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("tree would hold {needed} nodes, over the cap {cap}")]
    CapExceeded { needed: u128, cap: u128 },
    #[error("return {value} at step {index} lies outside the volatility band")]
    OutOfOmega { index: usize, value: f64 },
}

/// The market quintuple plus lookahead and grid resolution.
///
/// * `n` — number of trading periods,
/// * `s` — initial price,
/// * `sigma_lo`, `sigma_hi` — volatility band for return magnitudes,
/// * `lambda_cost` — quadratic cost coefficient `Λ`,
/// * `lookahead` — how many future returns the trader observes,
/// * `grid_k` — resolution of the magnitude grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub s: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub lambda_cost: f64,
    pub lookahead: usize,
    #[serde(default = "default_grid_k")]
    pub grid_k: usize,
}

fn default_grid_k() -> usize {
    1
}

impl ModelParams {
    pub fn new(
        n: usize,
        s: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        lambda_cost: f64,
        lookahead: usize,
        grid_k: usize,
    ) -> Result<Self, MarketError> {
        let p = Self { n, s, sigma_lo, sigma_hi, lambda_cost, lookahead, grid_k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |msg: &str| Err(MarketError::InvalidParams(msg.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if !(self.sigma_lo > 0.0) || !self.sigma_lo.is_finite() {
            return bad("sigma_lo must be positive and finite");
        }
        if !(self.sigma_hi >= self.sigma_lo) || !self.sigma_hi.is_finite() {
            return bad("sigma_hi must satisfy sigma_hi >= sigma_lo");
        }
        if !(self.lambda_cost > 0.0) || !self.lambda_cost.is_finite() {
            return bad("lambda_cost must be positive");
        }
        if self.lookahead > self.n {
            return bad("lookahead must not exceed n");
        }
        if self.grid_k == 0 {
            return bad("grid_k must be at least 1");
        }
        if !self.s.is_finite() {
            return bad("s must be finite");
        }
        Ok(())
    }

    /// Distinct return magnitudes, largest first.
    pub fn magnitudes(&self) -> Vec<f64> {
        let k = self.grid_k as f64;
        let mut mags: Vec<f64> = (0..=self.grid_k)
            .map(|j| (j as f64 / k) * self.sigma_lo + (1.0 - j as f64 / k) * self.sigma_hi)
            .collect();
        mags.dedup();
        mags
    }

    /// Price increment scale `1/sqrt(n)`.
    pub fn step_scale(&self) -> f64 {
        1.0 / (self.n as f64).sqrt()
    }
}

/// Finite scenario tree over the discretized sample space.
///
/// The tree is complete and uniform: every non-leaf node has the same child
/// return set, so the structure is stored implicitly. Node ids are contiguous
/// in breadth-first order; leaves at depth `n` are indexed `0..leaf_count`
/// with base-`branching` digits giving the successive return choices.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    params: ModelParams,
    child_returns: Vec<f64>,
    level_offsets: Vec<u128>,
    node_count: u128,
}

impl ScenarioTree {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Child return values in ascending order.
    pub fn child_returns(&self) -> &[f64] {
        &self.child_returns
    }

    pub fn branching(&self) -> usize {
        self.child_returns.len()
    }

    pub fn depth(&self) -> usize {
        self.params.n
    }

    pub fn node_count(&self) -> u128 {
        self.node_count
    }

    pub fn leaf_count(&self) -> usize {
        self.level_size(self.params.n)
    }

    /// Number of nodes at a given depth.
    pub fn level_size(&self, depth: usize) -> usize {
        self.branching().pow(depth as u32)
    }

    /// Breadth-first id of the node at `(depth, index)`.
    pub fn node_id(&self, depth: usize, index: usize) -> u128 {
        self.level_offsets[depth] + index as u128
    }

    /// Digit (child choice) taken at step `step` (1-based) on the way to `leaf`.
    pub fn leaf_digit(&self, leaf: usize, step: usize) -> usize {
        let b = self.branching();
        (leaf / b.pow((self.params.n - step) as u32)) % b
    }

    /// Index within its level of the depth-`d` ancestor of `leaf`.
    pub fn leaf_prefix(&self, leaf: usize, depth: usize) -> usize {
        leaf / self.branching().pow((self.params.n - depth) as u32)
    }

    /// Return sequence along the path to `leaf`.
    pub fn leaf_returns(&self, leaf: usize) -> Vec<f64> {
        (1..=self.params.n)
            .map(|step| self.child_returns[self.leaf_digit(leaf, step)])
            .collect()
    }

    /// Digit index of a return value, matched within a small tolerance.
    pub fn digit_of(&self, ret: f64) -> Option<usize> {
        self.child_returns
            .iter()
            .position(|&r| (r - ret).abs() <= 1e-12 * (1.0 + r.abs()))
    }
}

/// Builds the scenario tree for `params`, with the default node cap.
pub fn build_tree(params: &ModelParams) -> Result<ScenarioTree, MarketError> {
    build_tree_capped(params, DEFAULT_NODE_CAP)
}

/// Builds the scenario tree, rejecting trees with more than `cap` nodes.
pub fn build_tree_capped(params: &ModelParams, cap: u128) -> Result<ScenarioTree, MarketError> {
    params.validate()?;
    let mags = params.magnitudes();
    let mut child_returns = Vec::with_capacity(2 * mags.len());
    for &m in &mags {
        child_returns.push(-m);
    }
    for &m in mags.iter().rev() {
        child_returns.push(m);
    }
    let b = child_returns.len() as u128;
    let mut level_offsets = Vec::with_capacity(params.n + 2);
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=params.n {
        level_offsets.push(total);
        total = total
            .checked_add(level)
            .ok_or(MarketError::CapExceeded { needed: u128::MAX, cap })?;
        level = level
            .checked_mul(b)
            .ok_or(MarketError::CapExceeded { needed: u128::MAX, cap })?;
    }
    if total > cap {
        return Err(MarketError::CapExceeded { needed: total, cap });
    }
    Ok(ScenarioTree { params: *params, child_returns, level_offsets, node_count: total })
}

/// A realized return sequence together with the price path it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct PathView {
    pub returns: Vec<f64>,
    pub prices: Vec<f64>,
}

impl PathView {
    /// Path of the given leaf of a scenario tree.
    pub fn from_leaf(tree: &ScenarioTree, leaf: usize) -> Self {
        let returns = tree.leaf_returns(leaf);
        stock_prices_unchecked(tree.params(), &returns)
    }

    pub fn terminal(&self) -> f64 {
        *self.prices.last().expect("non-empty path")
    }
}

/// Price path `S_k = s + (1/sqrt(n)) Σ_{i<=k} x_i` for a return sequence.
pub fn stock_prices(params: &ModelParams, returns: &[f64]) -> Result<PathView, MarketError> {
    if returns.len() != params.n {
        return Err(MarketError::InvalidParams(format!(
            "expected {} returns, got {}",
            params.n,
            returns.len()
        )));
    }
    let tol = 1e-12 * (1.0 + params.sigma_hi);
    for (i, &x) in returns.iter().enumerate() {
        let a = x.abs();
        if !(a >= params.sigma_lo - tol && a <= params.sigma_hi + tol) {
            return Err(MarketError::OutOfOmega { index: i, value: x });
        }
    }
    Ok(stock_prices_unchecked(params, returns))
}

fn stock_prices_unchecked(params: &ModelParams, returns: &[f64]) -> PathView {
    let scale = params.step_scale();
    let mut prices = Vec::with_capacity(returns.len() + 1);
    let mut p = params.s;
    prices.push(p);
    for &x in returns {
        p += x * scale;
        prices.push(p);
    }
    PathView { returns: returns.to_vec(), prices }
}

/// European claims evaluated on the right-continuous step embedding of the
/// discrete price path on `[0, 1]` (terminal point at `t = 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Payoff {
    pub kind: PayoffKind,
    /// Declared sup-norm Lipschitz constant of the claim.
    pub lipschitz: f64,
    pub nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PayoffKind {
    /// `(S_n - strike)^+`.
    Call { strike: f64 },
    /// Running maximum of the price path.
    LookbackMax,
    /// Constant claim.
    Constant(f64),
    /// `base(path) - alpha (S_n - S_0)^2`.
    TerminalQuadratic { base: Box<Payoff>, alpha: f64 },
}

impl Payoff {
    pub fn call(strike: f64) -> Self {
        Payoff { kind: PayoffKind::Call { strike }, lipschitz: 1.0, nonnegative: true }
    }

    pub fn lookback_max() -> Self {
        Payoff { kind: PayoffKind::LookbackMax, lipschitz: 1.0, nonnegative: false }
    }

    pub fn constant(c: f64) -> Self {
        Payoff { kind: PayoffKind::Constant(c), lipschitz: 0.0, nonnegative: c >= 0.0 }
    }

    pub fn terminal_quadratic(base: Payoff, alpha: f64) -> Self {
        let lipschitz = base.lipschitz;
        Payoff {
            kind: PayoffKind::TerminalQuadratic { base: Box::new(base), alpha },
            lipschitz,
            nonnegative: false,
        }
    }

    /// Evaluates the claim on a price sequence `S_0..S_n`.
    pub fn eval_prices(&self, prices: &[f64]) -> f64 {
        match &self.kind {
            PayoffKind::Call { strike } => (prices[prices.len() - 1] - strike).max(0.0),
            PayoffKind::LookbackMax => prices.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            PayoffKind::Constant(c) => *c,
            PayoffKind::TerminalQuadratic { base, alpha } => {
                let d = prices[prices.len() - 1] - prices[0];
                base.eval_prices(prices) - alpha * d * d
            }
        }
    }

    /// Terminal-price function `h(x)` when the claim depends on `S_n` only.
    ///
    /// `s0` is the initial price entering the quadratic adjustment. Returns
    /// `None` for path-dependent claims.
    pub fn terminal_fn(&self, s0: f64) -> Option<Box<dyn Fn(f64) -> f64 + Sync + Send>> {
        match &self.kind {
            PayoffKind::Call { strike } => {
                let k = *strike;
                Some(Box::new(move |x| (x - k).max(0.0)))
            }
            PayoffKind::Constant(c) => {
                let c = *c;
                Some(Box::new(move |_| c))
            }
            PayoffKind::TerminalQuadratic { base, alpha } => {
                let inner = base.terminal_fn(s0)?;
                let a = *alpha;
                Some(Box::new(move |x| inner(x) - a * (x - s0) * (x - s0)))
            }
            PayoffKind::LookbackMax => None,
        }
    }

    /// Short identifier used in result tables.
    pub fn label(&self) -> String {
        match &self.kind {
            PayoffKind::Call { strike } => format!("call({strike})"),
            PayoffKind::LookbackMax => "lookback_max".to_string(),
            PayoffKind::Constant(c) => format!("constant({c})"),
            PayoffKind::TerminalQuadratic { base, alpha } => {
                format!("terminal_quadratic({},{alpha})", base.label())
            }
        }
    }
}

/// Evaluates a payoff on a path.
pub fn eval_payoff(payoff: &Payoff, path: &PathView) -> f64 {
    payoff.eval_prices(&path.prices)
}

/// Space-time discretization parameters.
///
/// `K = floor(c_lambda / (eps·lam)^2) + 1` bounds the number of sampling
/// intervals that a claim evaluation has to see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationParams {
    pub eps: f64,
    pub lam: f64,
    pub c_lambda: f64,
    pub big_k: usize,
}

impl DiscretizationParams {
    pub fn new(eps: f64, lam: f64, c_lambda: f64) -> Result<Self, MarketError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(MarketError::InvalidParams("eps must lie in (0,1)".into()));
        }
        if !(lam > 0.0 && lam < 1.0) {
            return Err(MarketError::InvalidParams("lam must lie in (0,1)".into()));
        }
        if !(c_lambda > 2.0) {
            return Err(MarketError::InvalidParams("c_lambda must exceed 2".into()));
        }
        let big_k = (c_lambda / (eps * lam).powi(2)).floor() as usize + 1;
        Ok(Self { eps, lam, c_lambda, big_k })
    }

    /// Derives the growth constant from a payoff's value on the constant path
    /// at `s` and its declared Lipschitz constant: any claim with that
    /// modulus satisfies `H(p) <= c + lam² ||p - p_0||²` once
    /// `c = H(s̄) + L² / (4 lam²)`, by the arithmetic-geometric mean bound.
    pub fn derive(payoff: &Payoff, s: f64, eps: f64, lam: f64) -> Result<Self, MarketError> {
        let at_constant = payoff.eval_prices(&[s, s]);
        let c = at_constant + payoff.lipschitz * payoff.lipschitz / (4.0 * lam * lam);
        Self::new(eps, lam, c.max(2.0 + 1e-9))
    }
}

/// A price path sampled at its space-time stopping times.
///
/// `taus` starts at 0 and ends at 1; the sampled path equals `values[k]` on
/// `[taus[k], taus[k+1])` and `terminal` at `t = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingSample {
    pub taus: Vec<f64>,
    /// Step indices `[n·tau_k]` corresponding to `taus`.
    pub step_indices: Vec<usize>,
    /// Prices at the stopping steps.
    pub values: Vec<f64>,
    pub terminal: f64,
}

impl StoppingSample {
    /// Value of the sampled step path at `t ∈ [0, 1]`.
    pub fn value_at(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return self.terminal;
        }
        let mut k = 0;
        while k + 1 < self.taus.len() && self.taus[k + 1] <= t {
            k += 1;
        }
        self.values[k]
    }
}

/// Successive times at which the price has moved by `eps` or `eps²` time has
/// elapsed, reported on the observation grid `{ k/n }` and capped at 1.
pub fn stopping_times(path: &PathView, eps: f64) -> Result<StoppingSample, MarketError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(MarketError::InvalidParams("eps must lie in (0,1)".into()));
    }
    let n = path.returns.len();
    let nf = n as f64;
    let time_steps = ((nf * eps * eps) - 1e-12).ceil().max(1.0) as usize;
    let mut taus = vec![0.0];
    let mut idx = vec![0usize];
    let mut values = vec![path.prices[0]];
    let mut prev = 0usize;
    while prev < n {
        let anchor = path.prices[prev];
        let mut next = (prev + time_steps).min(n);
        for j in prev + 1..=next {
            if (path.prices[j] - anchor).abs() >= eps - 1e-12 {
                next = j;
                break;
            }
        }
        taus.push(next as f64 / nf);
        idx.push(next);
        values.push(path.prices[next]);
        prev = next;
    }
    Ok(StoppingSample { taus, step_indices: idx, values, terminal: path.prices[n] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, lo: f64, hi: f64, k: usize) -> ModelParams {
        ModelParams::new(n, 0.0, lo, hi, 0.5, 0, k).unwrap()
    }

    #[test]
    fn tree_branching_with_two_magnitudes() {
        let tree = build_tree(&params(1, 1.0, 2.0, 1)).unwrap();
        assert_eq!(tree.branching(), 4);
        assert_eq!(tree.child_returns(), &[-2.0, -1.0, 1.0, 2.0]);
    }

    #[test]
    fn degenerate_band_collapses_to_binomial() {
        let tree = build_tree(&params(1, 1.0, 1.0, 3)).unwrap();
        assert_eq!(tree.branching(), 2);
        assert_eq!(tree.child_returns(), &[-1.0, 1.0]);
    }

    #[test]
    fn magnitude_grid_and_leaf_count() {
        let tree = build_tree(&params(2, 1.0, 2.0, 2)).unwrap();
        assert_eq!(tree.params().magnitudes(), vec![2.0, 1.5, 1.0]);
        assert_eq!(tree.branching(), 6);
        assert_eq!(tree.leaf_count(), 36);
    }

    #[test]
    fn cap_is_enforced() {
        let p = params(20, 1.0, 2.0, 4);
        match build_tree(&p) {
            Err(MarketError::CapExceeded { .. }) => {}
            other => panic!("expected CapExceeded, got {other:?}"),
        }
    }

    #[test]
    fn prices_follow_the_scaled_random_walk() {
        let p = ModelParams::new(4, 0.0, 1.0, 1.0, 0.5, 0, 1).unwrap();
        let path = stock_prices(&p, &[1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(path.prices, vec![0.0, 0.5, 0.0, 0.5, 1.0]);

        let p1 = ModelParams::new(1, 5.0, 1.0, 2.0, 0.5, 0, 1).unwrap();
        let path1 = stock_prices(&p1, &[-2.0]).unwrap();
        assert_eq!(path1.prices, vec![5.0, 3.0]);

        let up = stock_prices(&p, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(up.terminal(), 2.0);
    }

    #[test]
    fn out_of_band_returns_are_rejected() {
        let p = ModelParams::new(2, 0.0, 1.0, 2.0, 0.5, 0, 1).unwrap();
        assert!(matches!(
            stock_prices(&p, &[0.5, 1.0]),
            Err(MarketError::OutOfOmega { index: 0, .. })
        ));
        assert!(matches!(
            stock_prices(&p, &[1.0, 2.5]),
            Err(MarketError::OutOfOmega { index: 1, .. })
        ));
    }

    #[test]
    fn payoff_examples() {
        let p = ModelParams::new(4, 0.0, 1.0, 1.0, 0.5, 0, 1).unwrap();
        let up = stock_prices(&p, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(eval_payoff(&Payoff::call(0.0), &up), 2.0);

        let wobble = stock_prices(&p, &[1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(eval_payoff(&Payoff::lookback_max(), &wobble), 1.0);
        assert_eq!(eval_payoff(&Payoff::constant(7.0), &wobble), 7.0);

        let tq = Payoff::terminal_quadratic(Payoff::constant(3.0), 0.5);
        assert_eq!(eval_payoff(&tq, &up), 3.0 - 0.5 * 4.0);
        assert!(!tq.nonnegative);
    }

    #[test]
    fn stopping_spatial_trigger() {
        let p = ModelParams::new(16, 0.0, 1.0, 1.0, 0.5, 0, 1).unwrap();
        let path = stock_prices(&p, &[1.0; 16]).unwrap();
        let st = stopping_times(&path, 0.5).unwrap();
        // Price moves 0.25 per step: the 0.5 move lands at step 2, before the
        // eps² = 0.25 time bound (step 4).
        assert_eq!(st.taus[1], 2.0 / 16.0);
        assert_eq!(st.step_indices[1], 2);
    }

    #[test]
    fn stopping_caps_at_one() {
        let p = ModelParams::new(4, 0.0, 0.1, 0.1, 0.5, 0, 1).unwrap();
        let path = stock_prices(&p, &[0.1, 0.1, 0.1, 0.1]).unwrap();
        // Total range 0.2 < eps and eps² time bound only reachable at t = 1.
        let st = stopping_times(&path, 0.999).unwrap();
        assert_eq!(st.taus, vec![0.0, 1.0]);
    }

    #[test]
    fn stopping_spatial_beats_time_bound_for_wide_eps() {
        let p = ModelParams::new(16, 0.0, 1.0, 1.0, 0.5, 0, 1).unwrap();
        let path = stock_prices(&p, &[1.0; 16]).unwrap();
        // Spatial trigger: 0.25·j >= 0.9 at j = 4, i.e. t = 0.25; the time
        // trigger eps² = 0.81 would only fire at the 13th grid point.
        let st = stopping_times(&path, 0.9).unwrap();
        assert_eq!(st.taus[1], 4.0 / 16.0);
    }

    #[test]
    fn sampled_path_is_piecewise_constant_with_terminal_point() {
        let p = ModelParams::new(16, 0.0, 1.0, 1.0, 0.5, 0, 1).unwrap();
        let path = stock_prices(&p, &[1.0; 16]).unwrap();
        let st = stopping_times(&path, 0.5).unwrap();
        assert_eq!(st.value_at(0.0), 0.0);
        assert_eq!(st.value_at(st.taus[1] - 1e-9), 0.0);
        assert_eq!(st.value_at(st.taus[1]), path.prices[st.step_indices[1]]);
        assert_eq!(st.value_at(1.0), 4.0);
    }

    #[test]
    fn discretization_count_formula() {
        let d = DiscretizationParams::new(0.5, 0.5, 2.5).unwrap();
        assert_eq!(d.big_k, (2.5_f64 / (0.25 * 0.25)).floor() as usize + 1);
        assert!(DiscretizationParams::new(0.5, 0.5, 1.5).is_err());
    }

    #[test]
    fn derived_growth_constant_dominates_payoff() {
        let payoff = Payoff::call(0.0);
        let d = DiscretizationParams::derive(&payoff, 1.0, 0.3, 0.4).unwrap();
        // H(p) <= c + lam²·||p - p0||² spot-checked on ramp paths.
        for &reach in &[0.0, 0.5, 2.0, 10.0] {
            let h = payoff.eval_prices(&[1.0, 1.0 + reach]);
            assert!(h <= d.c_lambda + d.lam * d.lam * reach * reach + 1e-12);
        }
    }
}
