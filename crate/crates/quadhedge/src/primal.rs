//! Exact robust super-replication prices on finite scenario trees.
//!
//! The price is the convex minimax
//!
//! ```text
//! price = min over strategies γ of  max over leaves ω of  [ Z(ω) - Y_n(γ, ω) ]
//! ```
//!
//! with one decision variable per `(time, information node)` slot. Each
//! leaf's objective is a convex quadratic in the decision vector, so the
//! outer function is a piecewise-quadratic convex max.
//!
//! Because the leaf-weight simplex is compact and the objective is bilinear
//! in (weights, strategy), the minimax equals the concave maximum over leaf
//! measures of
//!
//! ```text
//! g(w) = E_w[Z] - (1/4Λ) Σ_i E_w[ (E_w[S_n | G_i] - S_i)² ],
//! ```
//!
//! whose inner minimizer has the closed form
//! `Δγ_i = (E_w[S_n | G_i] - S_i) / 2Λ` per information slot. The solver
//! runs mirror ascent on `w` — every iterate yields a certified lower bound
//! `g(w)` and, through the induced strategy, an exactly evaluated upper
//! bound — and finishes with a proximal bundle polish of the strategy, whose
//! separation oracle is a full leaf sweep. `certified_gap` is always the
//! distance between an exactly evaluated super-hedge and a genuine
//! measure-based lower bound, independent of the solver's internal state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hedging::{InfoIndex, Strategy};
use crate::market::{build_tree_capped, ModelParams, PathView, Payoff, ScenarioTree};

#[derive(Debug, Error)]
pub enum PrimalError {
    #[error("problem size {needed} exceeds the cap {cap}")]
    CapExceeded { needed: u128, cap: u128 },
    #[error("no convergence after {iterations} iterations (best certified gap {best_gap:.3e})")]
    NoConvergence { iterations: usize, best_gap: f64, report: Box<SolveReport> },
    #[error("strategy shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Market(#[from] crate::market::MarketError),
    #[error(transparent)]
    Hedge(#[from] crate::hedging::HedgeError),
    #[error(transparent)]
    Dual(#[from] crate::dual::DualError),
}

/// Solver options.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOpts {
    /// Certified-gap target.
    pub tolerance: f64,
    /// Total iteration budget (ascent plus polish).
    pub max_iterations: usize,
    pub node_cap: u64,
    /// Bundle size during the polish phase.
    pub cut_cap: usize,
    /// Inner iterations of the bundle master problem.
    pub master_iterations: usize,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            tolerance: 1e-6,
            max_iterations: 5000,
            node_cap: 20_000_000,
            cut_cap: 60,
            master_iterations: 150,
        }
    }
}

/// Outcome of a solve: the price, the strategy achieving it, and an
/// independently certified optimality gap.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Exactly evaluated worst case of `strategy` (an upper bound on the price).
    pub price: f64,
    pub strategy: Strategy,
    pub iterations: usize,
    /// `price - lower_bound`, from the best measure certificate seen.
    pub certified_gap: f64,
    /// Leaves attaining the worst case, lowest id first.
    pub worst_paths: Vec<usize>,
    /// Best measure-based lower bound.
    pub lower_bound: f64,
}

// ---------------------------------------------------------------------------
// Leaf cache: per-leaf slot indices, price increments and payoff values.
// ---------------------------------------------------------------------------

struct LeafCache {
    n: usize,
    leaf_count: usize,
    slots: Vec<u32>,
    ds: Vec<f64>,
    z: Vec<f64>,
}

impl LeafCache {
    fn new(tree: &ScenarioTree, info: &InfoIndex, leaf_values: Vec<f64>) -> Self {
        let n = tree.depth();
        let leaf_count = tree.leaf_count();
        let mut slots = vec![0u32; leaf_count * n];
        let mut ds = vec![0.0; leaf_count * n];
        let scale = tree.params().step_scale();
        for leaf in 0..leaf_count {
            for i in 0..n {
                slots[leaf * n + i] = info.slot(i, leaf) as u32;
                ds[leaf * n + i] = tree.child_returns()[tree.leaf_digit(leaf, i + 1)] * scale;
            }
        }
        LeafCache { n, leaf_count, slots, ds, z: leaf_values }
    }

    /// Shortfall `Z(ω) - Y(γ, ω)` of one leaf.
    fn shortfall(&self, x: &[f64], lambda: f64, leaf: usize) -> f64 {
        let base = leaf * self.n;
        let mut y = 0.0;
        let mut prev = 0.0;
        for i in 0..self.n {
            let g = x[self.slots[base + i] as usize];
            let d = g - prev;
            y += g * self.ds[base + i] - lambda * d * d;
            prev = g;
        }
        self.z[leaf] - y
    }

    /// Worst leaf and its shortfall; ties resolve to the lowest leaf id.
    fn worst(&self, x: &[f64], lambda: f64) -> (usize, f64) {
        let mut best_leaf = 0;
        let mut best = f64::NEG_INFINITY;
        for leaf in 0..self.leaf_count {
            let v = self.shortfall(x, lambda, leaf);
            if v > best {
                best = v;
                best_leaf = leaf;
            }
        }
        (best_leaf, best)
    }

    /// Gradient of one leaf's shortfall, sparse over its `n` slots
    /// (slot indices are strictly increasing along the path).
    fn gradient(&self, x: &[f64], lambda: f64, leaf: usize) -> Vec<(u32, f64)> {
        let base = leaf * self.n;
        let mut grad = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let slot = self.slots[base + i];
            let g = x[slot as usize];
            let prev = if i == 0 { 0.0 } else { x[self.slots[base + i - 1] as usize] };
            let mut v = -self.ds[base + i] + 2.0 * lambda * (g - prev);
            if i + 1 < self.n {
                let next = x[self.slots[base + i + 1] as usize];
                v -= 2.0 * lambda * (next - g);
            }
            grad.push((slot, v));
        }
        grad
    }
}

// ---------------------------------------------------------------------------
// Measure ascent: concave maximization over leaf weights.
// ---------------------------------------------------------------------------

struct MeasureAscent<'a> {
    tree: &'a ScenarioTree,
    info: &'a InfoIndex,
    cache: &'a LeafCache,
    /// Prices of every node, level by level.
    level_prices: Vec<Vec<f64>>,
    /// `pow_b[j] = branching^j`.
    pow_b: Vec<usize>,
}

struct AscentEval {
    value: f64,
    /// Inner-minimizing strategy, flat over information slots.
    gamma: Vec<f64>,
    /// Per-leaf shortfalls of `gamma` (the supergradient of `g`).
    shortfalls: Vec<f64>,
}

impl<'a> MeasureAscent<'a> {
    fn new(tree: &'a ScenarioTree, info: &'a InfoIndex, cache: &'a LeafCache) -> Self {
        let n = tree.depth();
        let b = tree.branching();
        let scale = tree.params().step_scale();
        let mut level_prices: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        level_prices.push(vec![tree.params().s]);
        for d in 1..=n {
            let mut v = vec![0.0; tree.level_size(d)];
            for (idx, item) in v.iter_mut().enumerate() {
                *item =
                    level_prices[d - 1][idx / b] + tree.child_returns()[idx % b] * scale;
            }
            level_prices.push(v);
        }
        let pow_b: Vec<usize> = (0..=n).map(|j| b.pow(j as u32)).collect();
        MeasureAscent { tree, info, cache, level_prices, pow_b }
    }

    /// Dual objective, inner-optimal strategy and supergradient at `w`.
    fn eval(&self, w: &[f64]) -> AscentEval {
        let n = self.tree.depth();
        let b = self.tree.branching();
        let lambda = self.tree.params().lambda_cost;

        // Node mass and weighted terminal-price sums, bottom-up. The
        // unweighted sums provide a fallback mean below zero-mass nodes.
        let mut mass: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        let mut weighted: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        let mut unweighted: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        mass[n] = w.to_vec();
        weighted[n] = w.iter().zip(&self.level_prices[n]).map(|(a, s)| a * s).collect();
        unweighted[n] = self.level_prices[n].clone();
        for d in (0..n).rev() {
            let len = self.tree.level_size(d);
            let mut md = vec![0.0; len];
            let mut wd = vec![0.0; len];
            let mut ud = vec![0.0; len];
            for i in 0..len {
                for j in 0..b {
                    md[i] += mass[d + 1][i * b + j];
                    wd[i] += weighted[d + 1][i * b + j];
                    ud[i] += unweighted[d + 1][i * b + j];
                }
            }
            mass[d] = md;
            weighted[d] = wd;
            unweighted[d] = ud;
        }

        let mut gamma = vec![0.0; self.info.total_slots()];
        let mut penalty = 0.0;
        for i in 0..n {
            let d = self.info.depth(i);
            let len = self.tree.level_size(d);
            let off = self.info.offset(i);
            for j in 0..len {
                let mean = if mass[d][j] > 0.0 {
                    weighted[d][j] / mass[d][j]
                } else {
                    unweighted[d][j] / self.pow_b[n - d] as f64
                };
                let dev = mean - self.level_prices[i][j / self.pow_b[d - i]];
                penalty += mass[d][j] * dev * dev;
                let prev = if i == 0 {
                    0.0
                } else {
                    let dp = self.info.depth(i - 1);
                    gamma[self.info.offset(i - 1) + j / self.pow_b[d - dp]]
                };
                gamma[off + j] = prev + dev / (2.0 * lambda);
            }
        }
        let claim: f64 = w.iter().zip(&self.cache.z).map(|(a, z)| a * z).sum();
        let value = claim - penalty / (4.0 * lambda);
        let shortfalls: Vec<f64> = (0..self.cache.leaf_count)
            .map(|leaf| self.cache.shortfall(&gamma, lambda, leaf))
            .collect();
        AscentEval { value, gamma, shortfalls }
    }
}

// ---------------------------------------------------------------------------
// Proximal bundle polish.
// ---------------------------------------------------------------------------

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn dot_with_dense(sparse: &[(u32, f64)], dense: &[f64]) -> f64 {
    sparse.iter().map(|&(i, v)| v * dense[i as usize]).sum()
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct Cut {
    grad: Vec<(u32, f64)>,
    intercept: f64,
}

struct Bundle<'a> {
    cache: &'a LeafCache,
    lambda_cost: f64,
    cuts: Vec<Cut>,
    weights: Vec<f64>,
    gram: Vec<Vec<f64>>,
}

impl<'a> Bundle<'a> {
    fn new(cache: &'a LeafCache, lambda_cost: f64) -> Self {
        Bundle { cache, lambda_cost, cuts: Vec::new(), weights: Vec::new(), gram: Vec::new() }
    }

    fn add_cut(&mut self, x: &[f64], leaf: usize, value: f64, cap: usize) {
        let grad = self.cache.gradient(x, self.lambda_cost, leaf);
        let intercept = value - dot_with_dense(&grad, x);
        let row: Vec<f64> = self.cuts.iter().map(|c| sparse_dot(&c.grad, &grad)).collect();
        for (i, &q) in row.iter().enumerate() {
            self.gram[i].push(q);
        }
        let mut new_row = row;
        new_row.push(sparse_dot(&grad, &grad));
        self.gram.push(new_row);
        self.cuts.push(Cut { grad, intercept });
        self.weights.push(if self.weights.is_empty() { 1.0 } else { 0.0 });

        if self.cuts.len() > cap {
            // Evict the lowest-weight cut, never the one just added.
            let evict = (0..self.cuts.len() - 1)
                .min_by(|&i, &j| {
                    self.weights[i].partial_cmp(&self.weights[j]).expect("finite weights")
                })
                .expect("non-empty bundle");
            self.cuts.remove(evict);
            self.weights.remove(evict);
            self.gram.remove(evict);
            for row in &mut self.gram {
                row.remove(evict);
            }
            let total: f64 = self.weights.iter().sum();
            if total > 0.0 {
                self.weights.iter_mut().for_each(|w| *w /= total);
            } else if let Some(last) = self.weights.last_mut() {
                *last = 1.0;
            }
        }
    }

    /// Solves the proximal master problem in its simplex dual by accelerated
    /// projected gradient, returning the candidate point, the cutting-plane
    /// model value there and the squared step length.
    fn solve_master(&mut self, center: &[f64], mu: f64, iters: usize) -> (Vec<f64>, f64, f64) {
        let m = self.cuts.len();
        let e: Vec<f64> =
            self.cuts.iter().map(|c| c.intercept + dot_with_dense(&c.grad, center)).collect();
        let lip = {
            let max_row: f64 = self
                .gram
                .iter()
                .map(|row| row.iter().map(|q| q.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            (max_row / mu).max(1e-12)
        };
        let step = 1.0 / lip;
        let mut lam = self.weights.clone();
        let mut lam_prev = lam.clone();
        let mut t_prev: f64 = 1.0;
        for _ in 0..iters {
            let t = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
            let beta = (t_prev - 1.0) / t;
            let mut next = vec![0.0; m];
            for i in 0..m {
                next[i] = lam[i] + beta * (lam[i] - lam_prev[i]);
            }
            let qy: Vec<f64> = (0..m)
                .map(|i| (0..m).map(|j| self.gram[i][j] * next[j]).sum::<f64>())
                .collect();
            for i in 0..m {
                next[i] += step * (e[i] - qy[i] / mu);
            }
            project_simplex(&mut next);
            let moved: f64 = next.iter().zip(lam.iter()).map(|(a, b)| (a - b).abs()).sum();
            lam_prev = lam;
            lam = next;
            t_prev = t;
            if moved < 1e-14 {
                break;
            }
        }
        self.weights = lam;

        // Candidate: center - (1/mu) Σ λ_j g_j.
        let mut candidate = center.to_vec();
        for (j, cut) in self.cuts.iter().enumerate() {
            let w = self.weights[j];
            if w == 0.0 {
                continue;
            }
            for &(idx, v) in &cut.grad {
                candidate[idx as usize] -= w * v / mu;
            }
        }
        let model_at_candidate = self
            .cuts
            .iter()
            .map(|c| c.intercept + dot_with_dense(&c.grad, &candidate))
            .fold(f64::NEG_INFINITY, f64::max);
        let dist2: f64 =
            candidate.iter().zip(center.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        (candidate, model_at_candidate, dist2)
    }
}

/// Per-leaf payoff values for a tree.
pub fn leaf_payoffs(tree: &ScenarioTree, payoff: &Payoff) -> Vec<f64> {
    (0..tree.leaf_count())
        .map(|leaf| payoff.eval_prices(&PathView::from_leaf(tree, leaf).prices))
        .collect()
}

/// Robust super-replication price of a payoff.
pub fn superrep_price(
    params: &ModelParams,
    payoff: &Payoff,
    opts: &SolveOpts,
) -> Result<SolveReport, PrimalError> {
    let tree = build_tree_capped(params, opts.node_cap as u128)?;
    let z = leaf_payoffs(&tree, payoff);
    superrep_price_values(params, &tree, z, opts)
}

/// Same solve with externally supplied per-leaf claim values.
pub fn superrep_price_values(
    params: &ModelParams,
    tree: &ScenarioTree,
    leaf_values: Vec<f64>,
    opts: &SolveOpts,
) -> Result<SolveReport, PrimalError> {
    let info = InfoIndex::new(tree)?;
    if leaf_values.len() != tree.leaf_count() {
        return Err(PrimalError::ShapeMismatch("one value per leaf required".into()));
    }
    let cache = LeafCache::new(tree, &info, leaf_values);
    let ascent = MeasureAscent::new(tree, &info, &cache);
    let leaves = cache.leaf_count;
    let lambda = params.lambda_cost;

    // Phase 1: mirror ascent on leaf weights. Every iterate certifies.
    let mut w = vec![1.0 / leaves as f64; leaves];
    let mut eval = ascent.eval(&w);
    let mut lower = eval.value;
    let mut upper = f64::INFINITY;
    let mut best_gamma = eval.gamma.clone();
    let mut eta = 1.0;
    let mut iterations = 0;
    let ascent_budget = (opts.max_iterations * 4) / 5;
    for _ in 0..ascent_budget {
        iterations += 1;
        let grad_max = eval.shortfalls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if grad_max < upper {
            upper = grad_max;
            best_gamma.copy_from_slice(&eval.gamma);
        }
        if upper - lower <= opts.tolerance {
            break;
        }
        // Backtracking multiplicative step.
        let mut stepped = false;
        while eta >= 1e-12 {
            let mut w_new: Vec<f64> = w
                .iter()
                .zip(&eval.shortfalls)
                .map(|(&wi, &gi)| wi.max(1e-200) * (eta * (gi - grad_max)).exp())
                .collect();
            let total: f64 = w_new.iter().sum();
            w_new.iter_mut().for_each(|x| *x /= total);
            let trial = ascent.eval(&w_new);
            if trial.value >= eval.value - 1e-15 {
                w = w_new;
                eval = trial;
                lower = lower.max(eval.value);
                eta *= 1.2;
                stepped = true;
                break;
            }
            eta *= 0.5;
        }
        if !stepped {
            break;
        }
    }

    // Phase 2: proximal bundle polish of the incumbent strategy.
    let mut center = best_gamma;
    let (mut worst_leaf, mut f_center) = cache.worst(&center, lambda);
    upper = upper.min(f_center);
    if upper - lower > opts.tolerance && iterations < opts.max_iterations {
        let mut bundle = Bundle::new(&cache, lambda);
        bundle.add_cut(&center, worst_leaf, f_center, opts.cut_cap);
        let mut mu = 2.0 * lambda;
        while iterations < opts.max_iterations {
            iterations += 1;
            let (candidate, model_value, dist2) =
                bundle.solve_master(&center, mu, opts.master_iterations);
            let predicted = f_center - (model_value + 0.5 * mu * dist2);
            let (cand_leaf, f_cand) = cache.worst(&candidate, lambda);
            bundle.add_cut(&candidate, cand_leaf, f_cand, opts.cut_cap);
            if f_cand <= f_center - 0.1 * predicted.max(0.0) {
                center = candidate;
                f_center = f_cand;
                worst_leaf = cand_leaf;
                mu = (mu * 0.7).max(1e-8);
            } else {
                mu = (mu * 1.6).min(1e10);
            }
            upper = upper.min(f_center);
            if upper - lower <= opts.tolerance || predicted.abs() < 0.1 * opts.tolerance {
                break;
            }
        }
    }
    let _ = worst_leaf;

    let threshold = upper - 1e-9 * (1.0 + upper.abs());
    let worst_paths: Vec<usize> = (0..leaves)
        .filter(|&leaf| cache.shortfall(&center, lambda, leaf) >= threshold)
        .take(32)
        .collect();
    let report = SolveReport {
        price: upper,
        strategy: Strategy::from_flat(&info, &center)?,
        iterations,
        certified_gap: (upper - lower).max(0.0),
        worst_paths,
        lower_bound: lower,
    };
    if report.certified_gap > opts.tolerance {
        return Err(PrimalError::NoConvergence {
            iterations,
            best_gap: report.certified_gap,
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// Exhaustive minimax over strategies restricted to a position grid.
///
/// An independent upper-bound oracle for tiny trees: every slot ranges over
/// `grid`, the worst case is evaluated by full leaf sweep, and the minimum is
/// returned. Cost grows as `grid^slots`.
pub fn superrep_bruteforce(
    params: &ModelParams,
    payoff: &Payoff,
    position_grid: &[f64],
) -> Result<f64, PrimalError> {
    const COMBO_CAP: u128 = 200_000_000;
    let tree = build_tree_capped(params, crate::market::DEFAULT_NODE_CAP)?;
    let info = InfoIndex::new(&tree)?;
    let dims = info.total_slots();
    (position_grid.len() as u128)
        .checked_pow(dims as u32)
        .filter(|&c| c <= COMBO_CAP)
        .ok_or(PrimalError::CapExceeded { needed: u128::MAX, cap: COMBO_CAP })?;
    let cache = LeafCache::new(&tree, &info, leaf_payoffs(&tree, payoff));
    let g = position_grid.len();

    let best = (0..g)
        .into_par_iter()
        .map(|first| {
            let mut x = vec![0.0; dims];
            x[0] = position_grid[first];
            let mut best = f64::INFINITY;
            let mut idx = vec![0usize; dims];
            loop {
                for (slot, &i) in idx.iter().enumerate().skip(1) {
                    x[slot] = position_grid[i];
                }
                let (_, v) = cache.worst(&x, params.lambda_cost);
                best = best.min(v);
                if dims == 1 {
                    break;
                }
                // Odometer over slots 1..dims.
                let mut carry = 1;
                while carry > 0 && carry < dims {
                    idx[carry] += 1;
                    if idx[carry] == g {
                        idx[carry] = 0;
                        carry += 1;
                    } else {
                        carry = 0;
                    }
                }
                if carry != 0 {
                    break;
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(best)
}

/// Worst shortfall of a super-hedge candidate: `max over leaves of
/// (Z - y - Y)`. Non-positive values certify `(y, strategy)` as a
/// super-hedge.
pub fn verify_superhedge(
    params: &ModelParams,
    payoff: &Payoff,
    strategy: &Strategy,
    y: f64,
) -> Result<f64, PrimalError> {
    let tree = build_tree_capped(params, crate::market::DEFAULT_NODE_CAP)?;
    let info = InfoIndex::new(&tree)?;
    if !strategy.matches(&info) {
        return Err(PrimalError::ShapeMismatch("strategy does not fit the tree".into()));
    }
    let cache = LeafCache::new(&tree, &info, leaf_payoffs(&tree, payoff));
    let flat = strategy.to_flat();
    let (_, worst) = cache.worst(&flat, params.lambda_cost);
    Ok(worst - y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, lambda: f64, lookahead: usize) -> ModelParams {
        ModelParams::new(n, 0.0, 1.0, 1.0, lambda, lookahead, 1).unwrap()
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let mut v = Vec::new();
        let mut x = lo;
        while x <= hi + 1e-12 {
            v.push(x);
            x += step;
        }
        v
    }

    #[test]
    fn one_step_constant_claim_without_lookahead() {
        let p = binom(1, 0.5, 0);
        let report = superrep_price(&p, &Payoff::constant(1.0), &SolveOpts::default()).unwrap();
        assert!((report.price - 1.0).abs() < 1e-6, "price {}", report.price);
        assert!(report.certified_gap <= 1e-6);
    }

    #[test]
    fn one_step_constant_claim_with_lookahead() {
        let p = binom(1, 0.5, 1);
        let report = superrep_price(&p, &Payoff::constant(1.0), &SolveOpts::default()).unwrap();
        assert!((report.price - 0.5).abs() < 1e-6, "price {}", report.price);

        let p2 = binom(1, 1.0, 1);
        let report2 = superrep_price(&p2, &Payoff::constant(1.0), &SolveOpts::default()).unwrap();
        assert!((report2.price - 0.75).abs() < 1e-6, "price {}", report2.price);
    }

    #[test]
    fn two_step_call_reference_values() {
        // Hand-solved minimax: 0.25 with one step of lookahead.
        let p = binom(2, 0.5, 1);
        let report = superrep_price(&p, &Payoff::call(0.0), &SolveOpts::default()).unwrap();
        assert!((report.price - 0.25).abs() < 1e-5, "price {}", report.price);
    }

    #[test]
    fn bruteforce_one_step_examples() {
        let p = binom(1, 0.5, 0);
        let g = grid(-2.0, 2.0, 0.01);
        let bf = superrep_bruteforce(&p, &Payoff::constant(1.0), &g).unwrap();
        assert!((bf - 1.0).abs() <= 0.01);

        let p1 = binom(1, 0.5, 1);
        let bf1 = superrep_bruteforce(&p1, &Payoff::constant(1.0), &g).unwrap();
        assert!((bf1 - 0.5).abs() <= 0.01);

        let zero = superrep_bruteforce(&p, &Payoff::constant(0.0), &g).unwrap();
        assert!(zero.abs() <= 1e-12);
    }

    #[test]
    fn bruteforce_rejects_big_problems() {
        let p = binom(6, 0.5, 0);
        let g = grid(-2.0, 2.0, 0.01);
        assert!(matches!(
            superrep_bruteforce(&p, &Payoff::constant(1.0), &g),
            Err(PrimalError::CapExceeded { .. })
        ));
    }

    #[test]
    fn verify_superhedge_examples() {
        let p = binom(2, 0.5, 0);
        let tree = crate::market::build_tree(&p).unwrap();
        let info = InfoIndex::new(&tree).unwrap();
        let zero = Strategy::zeros(&info);
        let payoff = Payoff::call(0.0);
        let z_max = leaf_payoffs(&tree, &payoff).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let slack0 = verify_superhedge(&p, &payoff, &zero, z_max).unwrap();
        assert!(slack0.abs() < 1e-14);
        let slack = verify_superhedge(&p, &payoff, &zero, z_max + 0.1).unwrap();
        assert!((slack + 0.1).abs() < 1e-14);
    }

    #[test]
    fn solver_certificate_is_a_superhedge() {
        let p = binom(1, 0.5, 1);
        let report = superrep_price(&p, &Payoff::constant(1.0), &SolveOpts::default()).unwrap();
        let slack =
            verify_superhedge(&p, &Payoff::constant(1.0), &report.strategy, report.price)
                .unwrap();
        assert!(slack <= 1e-6, "slack {slack}");
    }

    #[test]
    fn solver_matches_bruteforce_on_two_steps() {
        let p = binom(2, 0.5, 0);
        let payoff = Payoff::call(0.0);
        let g = grid(-1.5, 1.5, 0.02);
        let bf = superrep_bruteforce(&p, &payoff, &g).unwrap();
        let opts = SolveOpts { tolerance: 1e-5, max_iterations: 20_000, ..Default::default() };
        let report = superrep_price(&p, &payoff, &opts).unwrap();
        assert!(
            (report.price - bf).abs() <= 0.02,
            "solver {} vs bruteforce {bf}",
            report.price
        );
    }
}
