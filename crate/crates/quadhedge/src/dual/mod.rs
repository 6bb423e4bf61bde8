//! Measure-based lower bounds for the super-replication price.
//!
//! Any probability measure `P` on the scenario tree yields the bound
//!
//! ```text
//! price >= E_P[ Z ] - (1/4Λ) Σ_{i<n} E_P[ ( E_P[S_n | G_i] - S_i )² ]
//! ```
//!
//! where `G_i` is the information available at time `i` (the first
//! `min(i + N, n)` returns). The conditional expectations are computed
//! exactly by backward induction, so the bound is certifiable. The [`qn`]
//! submodule turns a volatility control into a concrete near-optimal measure;
//! [`dual_search`] improves arbitrary measures by coordinate ascent.

mod control;
mod qn;

pub use control::{PathAt, PathInterp, VolControl, ZeroPath, FEATURE_COUNT};
pub use qn::{qn_from_control, sample_qn_path, QnPath, QnReport, QnWalker};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{ModelParams, Payoff, ScenarioTree};

#[derive(Debug, Error)]
pub enum DualError {
    #[error("measure does not match the market: {0}")]
    ShapeMismatch(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("transition probability outside [0,1] at step {step}, node {node}")]
    InvalidProbability { step: usize, node: usize },
    #[error("tree would hold {needed} nodes, over the cap {cap}")]
    CapExceeded { needed: usize, cap: usize },
    #[error(transparent)]
    Market(#[from] crate::market::MarketError),
}

/// A node of a measured tree: the return on the edge from its parent and the
/// transition probability of that edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredNode {
    pub parent: i64,
    pub ret: f64,
    pub prob: f64,
    pub depth: usize,
    pub first_child: usize,
    pub child_count: usize,
}

/// A finite path tree with one probability per edge.
///
/// Nodes are stored in breadth-first order; children of a node are
/// contiguous. The root carries `parent = -1`, `ret = 0`, `prob = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredTree {
    nodes: Vec<MeasuredNode>,
    depth: usize,
}

impl MeasuredTree {
    pub(crate) fn from_parts(nodes: Vec<MeasuredNode>, depth: usize) -> Self {
        MeasuredTree { nodes, depth }
    }

    pub fn nodes(&self) -> &[MeasuredNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Builds a measured tree on the full scenario tree with per-node child
    /// probabilities supplied by `probs(depth, node_index_in_level)`.
    pub fn on_scenario_tree<F>(tree: &ScenarioTree, mut probs: F) -> Result<Self, DualError>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let n = tree.depth();
        let b = tree.branching();
        let returns = tree.child_returns().to_vec();
        let mut nodes = vec![MeasuredNode {
            parent: -1,
            ret: 0.0,
            prob: 1.0,
            depth: 0,
            first_child: 0,
            child_count: 0,
        }];
        let mut level_start = 0usize;
        for d in 0..n {
            let level_len = tree.level_size(d);
            for idx in 0..level_len {
                let parent_id = level_start + idx;
                let p = probs(d, idx);
                if p.len() != b {
                    return Err(DualError::InvalidMeasure(format!(
                        "expected {b} child probabilities at depth {d}"
                    )));
                }
                let first = nodes.len();
                nodes[parent_id].first_child = first;
                nodes[parent_id].child_count = b;
                for (j, &pj) in p.iter().enumerate() {
                    nodes.push(MeasuredNode {
                        parent: parent_id as i64,
                        ret: returns[j],
                        prob: pj,
                        depth: d + 1,
                        first_child: 0,
                        child_count: 0,
                    });
                }
            }
            level_start += level_len;
        }
        Ok(MeasuredTree { nodes, depth: n })
    }

    /// The measure that splits mass evenly across children everywhere.
    pub fn uniform(tree: &ScenarioTree) -> Result<Self, DualError> {
        let b = tree.branching();
        Self::on_scenario_tree(tree, |_, _| vec![1.0 / b as f64; b])
    }

    /// A random measure: child probabilities drawn from the uniform simplex.
    pub fn random<R: Rng>(tree: &ScenarioTree, rng: &mut R) -> Result<Self, DualError> {
        let b = tree.branching();
        Self::on_scenario_tree(tree, |_, _| {
            let mut w: Vec<f64> = (0..b).map(|_| -(rng.gen::<f64>().max(1e-16)).ln()).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            w
        })
    }

    /// Measure induced by nonnegative leaf weights (normalized internally).
    /// Transitions below zero-mass nodes are uniform.
    pub fn from_leaf_weights(tree: &ScenarioTree, weights: &[f64]) -> Result<Self, DualError> {
        let b = tree.branching();
        if weights.len() != tree.leaf_count() {
            return Err(DualError::ShapeMismatch("one weight per leaf required".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(DualError::InvalidMeasure(
                "weights must be nonnegative, not all zero".into(),
            ));
        }
        // Mass of each node = sum of leaf weights below it, level by level.
        let mut levels: Vec<Vec<f64>> = Vec::new();
        levels.push(weights.iter().map(|w| w / total).collect());
        while levels.last().expect("non-empty").len() > 1 {
            let below = levels.last().expect("non-empty");
            let mut mass = vec![0.0; below.len() / b];
            for (i, m) in mass.iter_mut().enumerate() {
                *m = below[i * b..(i + 1) * b].iter().sum();
            }
            levels.push(mass);
        }
        levels.reverse();
        Self::on_scenario_tree(tree, |d, idx| {
            let parent_mass = levels[d][idx];
            if parent_mass > 0.0 {
                (0..b).map(|j| levels[d + 1][idx * b + j] / parent_mass).collect()
            } else {
                vec![1.0 / b as f64; b]
            }
        })
    }

    /// Checks probabilities and band membership against the market.
    pub fn validate(&self, params: &ModelParams) -> Result<(), DualError> {
        if self.depth != params.n {
            return Err(DualError::ShapeMismatch(format!(
                "measure depth {} vs market horizon {}",
                self.depth, params.n
            )));
        }
        let tol = 1e-12 * (1.0 + params.sigma_hi);
        for (id, node) in self.nodes.iter().enumerate() {
            if node.parent >= 0 {
                let a = node.ret.abs();
                if !(a >= params.sigma_lo - tol && a <= params.sigma_hi + tol) {
                    return Err(DualError::InvalidMeasure(format!(
                        "return {} at node {id} outside the band",
                        node.ret
                    )));
                }
                if !(-1e-12..=1.0 + 1e-12).contains(&node.prob) {
                    return Err(DualError::InvalidMeasure(format!(
                        "probability {} at node {id}",
                        node.prob
                    )));
                }
            }
            if node.child_count > 0 {
                let sum: f64 = self.nodes[node.first_child..node.first_child + node.child_count]
                    .iter()
                    .map(|c| c.prob)
                    .sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(DualError::InvalidMeasure(format!(
                        "child probabilities at node {id} sum to {sum}"
                    )));
                }
            } else if node.depth != self.depth {
                return Err(DualError::InvalidMeasure(format!(
                    "interior node {id} at depth {} has no children",
                    node.depth
                )));
            }
        }
        Ok(())
    }

    /// Line format used for golden files: one `node_id parent_id return
    /// probability` record per node, in id order.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (id, node) in self.nodes.iter().enumerate() {
            out.push_str(&format!("{} {} {} {}\n", id, node.parent, node.ret, node.prob));
        }
        out
    }

    /// Parses the line format produced by [`MeasuredTree::to_lines`].
    pub fn from_lines(text: &str) -> Result<Self, DualError> {
        let mut raw: Vec<(usize, i64, f64, f64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(DualError::InvalidMeasure(format!(
                    "line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let bad = |e: String| DualError::InvalidMeasure(format!("line {}: {e}", lineno + 1));
            raw.push((
                fields[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                fields[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                fields[2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                fields[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            ));
        }
        raw.sort_by_key(|r| r.0);
        let mut nodes: Vec<MeasuredNode> = Vec::with_capacity(raw.len());
        for (expect, (id, parent, ret, prob)) in raw.into_iter().enumerate() {
            if id != expect {
                return Err(DualError::InvalidMeasure(format!("node ids not contiguous at {id}")));
            }
            if parent >= id as i64 || (parent < 0 && id != 0) {
                return Err(DualError::InvalidMeasure(format!("bad parent for node {id}")));
            }
            let depth = if parent < 0 { 0 } else { nodes[parent as usize].depth + 1 };
            nodes.push(MeasuredNode { parent, ret, prob, depth, first_child: 0, child_count: 0 });
        }
        if nodes.is_empty() {
            return Err(DualError::InvalidMeasure("empty tree".into()));
        }
        for id in 1..nodes.len() {
            let parent = nodes[id].parent as usize;
            if nodes[parent].child_count == 0 {
                nodes[parent].first_child = id;
                nodes[parent].child_count = 1;
            } else {
                if nodes[parent].first_child + nodes[parent].child_count != id {
                    return Err(DualError::InvalidMeasure(format!(
                        "children of node {parent} are not contiguous"
                    )));
                }
                nodes[parent].child_count += 1;
            }
        }
        let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        Ok(MeasuredTree { nodes, depth })
    }
}

/// Exact dual objective of a measure: expectation of the claim minus the
/// quadratic information penalty, by backward induction on the tree.
pub fn dual_value(
    params: &ModelParams,
    payoff: &Payoff,
    measure: &MeasuredTree,
) -> Result<f64, DualError> {
    measure.validate(params)?;
    let nodes = measure.nodes();
    let count = nodes.len();
    let scale = params.step_scale();
    let n = params.n;
    let lookahead = params.lookahead;

    // Forward: price and path probability of every node.
    let mut price = vec![0.0; count];
    let mut mass = vec![0.0; count];
    price[0] = params.s;
    mass[0] = 1.0;
    for id in 1..count {
        let parent = nodes[id].parent as usize;
        price[id] = price[parent] + nodes[id].ret * scale;
        mass[id] = mass[parent] * nodes[id].prob;
    }

    // Backward: conditional expectation of the terminal price.
    let mut cond_mean = vec![0.0; count];
    for id in (0..count).rev() {
        let node = &nodes[id];
        if node.child_count == 0 {
            cond_mean[id] = price[id];
        } else {
            cond_mean[id] = (node.first_child..node.first_child + node.child_count)
                .map(|c| nodes[c].prob * cond_mean[c])
                .sum();
        }
    }

    let ancestor_price = |mut id: usize, steps: usize| -> f64 {
        for _ in 0..steps {
            id = nodes[id].parent as usize;
        }
        price[id]
    };

    let mut penalty = 0.0;
    let mut claim = 0.0;
    let mut path_prices = vec![0.0; n + 1];
    for id in 0..count {
        let node = &nodes[id];
        if mass[id] == 0.0 {
            continue;
        }
        let d = node.depth;
        if d < n {
            // An interior node at depth d carries the information of time
            // i = d - N whenever i >= 0 (and i < n holds since d < n).
            if d >= lookahead {
                let dev = cond_mean[id] - ancestor_price(id, lookahead);
                penalty += mass[id] * dev * dev;
            }
        } else {
            // Leaf: claim value plus the saturated times with i + N >= n.
            let mut walk = id;
            for depth in (0..=n).rev() {
                path_prices[depth] = price[walk];
                if depth > 0 {
                    walk = nodes[walk].parent as usize;
                }
            }
            claim += mass[id] * payoff.eval_prices(&path_prices);
            for i in n.saturating_sub(lookahead)..n {
                let dev = price[id] - path_prices[i];
                penalty += mass[id] * dev * dev;
            }
        }
    }
    Ok(claim - penalty / (4.0 * params.lambda_cost))
}

/// Options for the coordinate-ascent measure search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DualSearchOpts {
    pub max_passes: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub node_cap: usize,
}

impl Default for DualSearchOpts {
    fn default() -> Self {
        DualSearchOpts { max_passes: 80, initial_step: 0.3, min_step: 1e-3, node_cap: 20_000 }
    }
}

/// Best-effort maximization of the dual objective over per-node transition
/// probabilities: coordinate ascent toward simplex vertices and the uniform
/// point, with step halving. Monotone in the objective; not globally optimal.
pub fn dual_search(
    params: &ModelParams,
    payoff: &Payoff,
    init: &MeasuredTree,
    opts: &DualSearchOpts,
) -> Result<(MeasuredTree, f64), DualError> {
    if init.node_count() > opts.node_cap {
        return Err(DualError::CapExceeded { needed: init.node_count(), cap: opts.node_cap });
    }
    let mut best = init.clone();
    let mut best_value = dual_value(params, payoff, &best)?;
    let mut step = opts.initial_step;
    let internal: Vec<usize> =
        (0..best.node_count()).filter(|&id| best.nodes[id].child_count > 0).collect();
    for _ in 0..opts.max_passes {
        let mut improved = false;
        for &id in &internal {
            let first = best.nodes[id].first_child;
            let count = best.nodes[id].child_count;
            let current: Vec<f64> = (0..count).map(|j| best.nodes[first + j].prob).collect();
            let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(count + 1);
            for vertex in 0..count {
                let mut c = current.clone();
                for (j, cj) in c.iter_mut().enumerate() {
                    let target = if j == vertex { 1.0 } else { 0.0 };
                    *cj = (1.0 - step) * *cj + step * target;
                }
                candidates.push(c);
            }
            candidates
                .push(current.iter().map(|&p| (1.0 - step) * p + step / count as f64).collect());
            for cand in candidates {
                let mut trial = best.clone();
                for (j, &pj) in cand.iter().enumerate() {
                    trial.nodes[first + j].prob = pj;
                }
                let v = dual_value(params, payoff, &trial)?;
                if v > best_value + 1e-14 {
                    best = trial;
                    best_value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < opts.min_step {
                break;
            }
        }
    }
    Ok((best, best_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{build_tree, Payoff};

    fn binom(n: usize, lambda: f64, lookahead: usize) -> ModelParams {
        ModelParams::new(n, 0.0, 1.0, 1.0, lambda, lookahead, 1).unwrap()
    }

    #[test]
    fn one_step_uniform_without_lookahead() {
        let p = binom(1, 0.5, 0);
        let tree = build_tree(&p).unwrap();
        let m = MeasuredTree::uniform(&tree).unwrap();
        let v = dual_value(&p, &Payoff::constant(1.0), &m).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn one_step_uniform_with_lookahead() {
        let p = binom(1, 0.5, 1);
        let tree = build_tree(&p).unwrap();
        let m = MeasuredTree::uniform(&tree).unwrap();
        let v = dual_value(&p, &Payoff::constant(1.0), &m).unwrap();
        // The observed return makes the conditional mean S_1 itself, so the
        // penalty is E[x²] = 1 and the value drops by 1/(4Λ) = 1/2.
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn deterministic_path_measure_by_hand() {
        let p = binom(2, 0.5, 0);
        let tree = build_tree(&p).unwrap();
        // All mass on the up-up path.
        let m = MeasuredTree::on_scenario_tree(&tree, |_, _| vec![0.0, 1.0]).unwrap();
        let payoff = Payoff::call(0.0);
        let v = dual_value(&p, &payoff, &m).unwrap();
        let root2 = 2.0_f64.sqrt();
        let z = 2.0 / root2;
        let penalty = (2.0 / root2) * (2.0 / root2) + (1.0 / root2) * (1.0 / root2);
        assert!((v - (z - penalty / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn search_respects_weak_monotonicity() {
        let p = binom(2, 0.5, 0);
        let tree = build_tree(&p).unwrap();
        let init = MeasuredTree::uniform(&tree).unwrap();
        let payoff = Payoff::call(0.0);
        let v0 = dual_value(&p, &payoff, &init).unwrap();
        let (_, v) = dual_search(&p, &payoff, &init, &DualSearchOpts::default()).unwrap();
        assert!(v >= v0 - 1e-12);
    }

    #[test]
    fn line_roundtrip_and_golden_format() {
        let p = binom(1, 0.5, 0);
        let tree = build_tree(&p).unwrap();
        let m = MeasuredTree::uniform(&tree).unwrap();
        let text = m.to_lines();
        assert_eq!(text, "0 -1 0 1\n1 0 -1 0.5\n2 0 1 0.5\n");
        let parsed = MeasuredTree::from_lines(&text).unwrap();
        assert_eq!(parsed, m);
    }

    #[test]
    fn leaf_weights_induce_transitions() {
        let p = binom(2, 0.5, 0);
        let tree = build_tree(&p).unwrap();
        let m = MeasuredTree::from_leaf_weights(&tree, &[0.0, 0.0, 1.0, 3.0]).unwrap();
        m.validate(&p).unwrap();
        // Root sends all mass up; the up node splits 1:3.
        assert_eq!(m.nodes()[1].prob, 0.0);
        assert_eq!(m.nodes()[2].prob, 1.0);
        let up = &m.nodes()[2];
        let c0 = m.nodes()[up.first_child].prob;
        let c1 = m.nodes()[up.first_child + 1].prob;
        assert!((c0 - 0.25).abs() < 1e-15 && (c1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn invalid_probability_sum_is_rejected() {
        let p = binom(1, 0.5, 0);
        let tree = build_tree(&p).unwrap();
        let m = MeasuredTree::on_scenario_tree(&tree, |_, _| vec![0.6, 0.6]).unwrap();
        assert!(matches!(m.validate(&p), Err(DualError::InvalidMeasure(_))));
    }
}
