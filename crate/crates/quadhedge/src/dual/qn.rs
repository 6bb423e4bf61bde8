//! Explicit construction of near-optimal measures from volatility controls.
//!
//! Given a control `f`, each step of the binary recursion clamps the control
//! value into the market band, `σ_k = σ_lo ∨ f((k-1)/n, B̃) ∧ σ_hi`, measures
//! the excess through `κ_k = ((f/σ_k)² - 1)/2`, and tilts the coin
//!
//! ```text
//! Q( ξ_k = ±1 | past ) = ( 1 ± κ_{k-1} σ_{k-1} ξ_{k-1} / (σ_k (1 + κ_k)) ) / 2
//! ```
//!
//! driving returns `X_k = ξ_k σ_k`. The driver
//! `B_k = B_{k-1} + ((1+κ_k) X_k - κ_{k-1} X_{k-1}) / (sqrt(n (1+2κ_k)) σ_k)`
//! and the compensated price `M_k = S_k + κ_k X_k / sqrt(n)` are martingales
//! under the tilted coin by construction, and once the control enters its
//! terminal window (`κ = 0`) the compensation vanishes, so `M_n = S_n`.
//!
//! Small horizons enumerate the full non-recombining tree; large horizons use
//! [`QnWalker`]/[`sample_qn_path`], which expose exact one-step conditional
//! moments at any sampled node.

use rand::Rng;

use super::control::{PathInterp, VolControl, ZeroPath};
use super::{DualError, MeasuredNode, MeasuredTree};
use crate::market::ModelParams;
use crate::rng::stream;

/// Node cap for full enumeration of the binary construction.
pub const QN_NODE_CAP: usize = 2_000_000;

/// Per-node diagnostics of the constructed measure.
#[derive(Debug, Clone)]
pub struct QnReport {
    /// Clamped volatility per node.
    pub sigma: Vec<f64>,
    /// Band-excess coefficient per node.
    pub kappa: Vec<f64>,
    /// Driver value per node.
    pub b: Vec<f64>,
    /// Compensated price per node.
    pub m: Vec<f64>,
    /// True when every transition probability was admissible.
    pub valid: bool,
    /// Largest tilt `max |p - 1/2|` over all transitions.
    pub max_prob_dev: f64,
}

#[derive(Debug, Clone, Copy)]
struct StepState {
    sigma: f64,
    kappa: f64,
    xi: f64,
    x: f64,
    s: f64,
    b: f64,
    m: f64,
}

fn root_state(params: &ModelParams, control: &VolControl) -> StepState {
    let f0 = control.value(0.0, &ZeroPath);
    let sigma0 = f0.clamp(params.sigma_lo, params.sigma_hi);
    StepState { sigma: sigma0, kappa: 0.0, xi: 1.0, x: sigma0, s: params.s, b: 0.0, m: params.s }
}

/// Deterministic one-step data at a node: the clamped volatility, the tilt,
/// and both children's increments.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub sigma: f64,
    pub kappa: f64,
    /// Probability of `ξ_k = +1`.
    pub p_up: f64,
    /// Driver increments for `ξ_k = -1` and `ξ_k = +1`.
    pub delta_b: [f64; 2],
    /// Compensated-price increments for `ξ_k = -1` and `ξ_k = +1`.
    pub delta_m: [f64; 2],
}

fn step_stats(
    params: &ModelParams,
    control: &VolControl,
    k: usize,
    history: &[f64],
    prev: &StepState,
) -> Result<StepStats, DualError> {
    let n = params.n as f64;
    let t = (k as f64 - 1.0) / n;
    let f_val = control.value(t, &PathInterp::new(history, 1.0 / n));
    let sigma = f_val.clamp(params.sigma_lo, params.sigma_hi);
    let kappa = 0.5 * ((f_val / sigma) * (f_val / sigma) - 1.0);
    let tilt = prev.kappa * prev.sigma * prev.xi / (sigma * (1.0 + kappa));
    let p_up = 0.5 * (1.0 + tilt);
    if !(-1e-9..=1.0 + 1e-9).contains(&p_up) {
        return Err(DualError::InvalidProbability { step: k, node: usize::MAX });
    }
    let scale = 1.0 / n.sqrt();
    let denom = (1.0 + 2.0 * kappa).sqrt() * sigma * n.sqrt();
    let mut delta_b = [0.0; 2];
    let mut delta_m = [0.0; 2];
    for (slot, xi) in [(0usize, -1.0), (1usize, 1.0)] {
        let x = xi * sigma;
        delta_b[slot] = ((1.0 + kappa) * x - prev.kappa * prev.x) / denom;
        delta_m[slot] = x * scale + kappa * x * scale - prev.kappa * prev.x * scale;
    }
    Ok(StepStats { sigma, kappa, p_up: p_up.clamp(0.0, 1.0), delta_b, delta_m })
}

fn advance(prev: &StepState, stats: &StepStats, up: bool, scale: f64) -> StepState {
    let xi = if up { 1.0 } else { -1.0 };
    let x = xi * stats.sigma;
    let slot = usize::from(up);
    let s = prev.s + x * scale;
    StepState {
        sigma: stats.sigma,
        kappa: stats.kappa,
        xi,
        x,
        s,
        b: prev.b + stats.delta_b[slot],
        m: s + stats.kappa * x * scale,
    }
}

/// Enumerates the full binary measured tree driven by a control.
pub fn qn_from_control(
    params: &ModelParams,
    control: &VolControl,
) -> Result<(MeasuredTree, QnReport), DualError> {
    params.validate()?;
    let n = params.n;
    let needed = (1usize << (n + 1)) - 1;
    if n >= 40 || needed > QN_NODE_CAP {
        return Err(DualError::CapExceeded { needed, cap: QN_NODE_CAP });
    }
    let scale = params.step_scale();
    let root = root_state(params, control);
    let mut nodes = vec![MeasuredNode {
        parent: -1,
        ret: 0.0,
        prob: 1.0,
        depth: 0,
        first_child: 0,
        child_count: 0,
    }];
    let mut states = vec![root];
    let mut report = QnReport {
        sigma: vec![root.sigma],
        kappa: vec![0.0],
        b: vec![0.0],
        m: vec![root.m],
        valid: true,
        max_prob_dev: 0.0,
    };
    let mut level: Vec<usize> = vec![0];
    let mut history = Vec::with_capacity(n + 1);
    for k in 1..=n {
        let mut next_level = Vec::with_capacity(level.len() * 2);
        for &parent_id in &level {
            // Driver history along the path to this node.
            history.clear();
            let mut walk = parent_id;
            loop {
                history.push(states[walk].b);
                if nodes[walk].parent < 0 {
                    break;
                }
                walk = nodes[walk].parent as usize;
            }
            history.reverse();
            let prev = states[parent_id];
            let stats = step_stats(params, control, k, &history, &prev).map_err(|e| match e {
                DualError::InvalidProbability { step, .. } => {
                    DualError::InvalidProbability { step, node: parent_id }
                }
                other => other,
            })?;
            report.max_prob_dev = report.max_prob_dev.max((stats.p_up - 0.5).abs());
            let first = nodes.len();
            nodes[parent_id].first_child = first;
            nodes[parent_id].child_count = 2;
            for up in [false, true] {
                let child = advance(&prev, &stats, up, scale);
                nodes.push(MeasuredNode {
                    parent: parent_id as i64,
                    ret: child.x,
                    prob: if up { stats.p_up } else { 1.0 - stats.p_up },
                    depth: k,
                    first_child: 0,
                    child_count: 0,
                });
                states.push(child);
                report.sigma.push(child.sigma);
                report.kappa.push(child.kappa);
                report.b.push(child.b);
                report.m.push(child.m);
                next_level.push(nodes.len() - 1);
            }
        }
        level = next_level;
    }
    Ok((MeasuredTree::from_parts(nodes, n), report))
}

/// Incremental sampler of the construction for horizons beyond enumeration.
pub struct QnWalker<'a> {
    params: &'a ModelParams,
    control: &'a VolControl,
    state: StepState,
    history: Vec<f64>,
    k: usize,
}

impl<'a> QnWalker<'a> {
    pub fn new(params: &'a ModelParams, control: &'a VolControl) -> Self {
        let state = root_state(params, control);
        QnWalker { params, control, state, history: vec![0.0], k: 0 }
    }

    pub fn step(&self) -> usize {
        self.k
    }

    pub fn done(&self) -> bool {
        self.k == self.params.n
    }

    /// Price, driver and compensated price at the current node.
    pub fn current(&self) -> (f64, f64, f64) {
        (self.state.s, self.state.b, self.state.m)
    }

    /// One-step statistics at the current node.
    pub fn stats(&self) -> Result<StepStats, DualError> {
        step_stats(self.params, self.control, self.k + 1, &self.history, &self.state)
    }

    /// Exact conditional moments of the next increments:
    /// `(E[ΔB], E[ΔM], E[ΔB²])`.
    pub fn conditional_moments(&self) -> Result<(f64, f64, f64), DualError> {
        let st = self.stats()?;
        let p = st.p_up;
        let eb = p * st.delta_b[1] + (1.0 - p) * st.delta_b[0];
        let em = p * st.delta_m[1] + (1.0 - p) * st.delta_m[0];
        let ebb = p * st.delta_b[1] * st.delta_b[1] + (1.0 - p) * st.delta_b[0] * st.delta_b[0];
        Ok((eb, em, ebb))
    }

    pub fn advance(&mut self, up: bool) -> Result<(), DualError> {
        let st = self.stats()?;
        self.state = advance(&self.state, &st, up, self.params.step_scale());
        self.history.push(self.state.b);
        self.k += 1;
        Ok(())
    }
}

/// A sampled path of the construction.
#[derive(Debug, Clone)]
pub struct QnPath {
    pub xs: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub bs: Vec<f64>,
    pub ms: Vec<f64>,
    pub ss: Vec<f64>,
    /// Probability of the transition taken at each step.
    pub probs: Vec<f64>,
}

/// Samples one path under the constructed measure, keyed by `(seed, index)`.
pub fn sample_qn_path(
    params: &ModelParams,
    control: &VolControl,
    seed: u64,
    index: u64,
) -> Result<QnPath, DualError> {
    let mut rng = stream(seed, index);
    let mut walker = QnWalker::new(params, control);
    let n = params.n;
    let mut out = QnPath {
        xs: Vec::with_capacity(n),
        sigmas: vec![walker.state.sigma],
        kappas: vec![0.0],
        bs: vec![0.0],
        ms: vec![walker.state.m],
        ss: vec![walker.state.s],
        probs: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let st = walker.stats()?;
        let up = rng.gen::<f64>() < st.p_up;
        out.probs.push(if up { st.p_up } else { 1.0 - st.p_up });
        walker.advance(up)?;
        out.xs.push(walker.state.x);
        out.sigmas.push(walker.state.sigma);
        out.kappas.push(walker.state.kappa);
        out.bs.push(walker.state.b);
        out.ms.push(walker.state.m);
        out.ss.push(walker.state.s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::dual_value;
    use crate::market::Payoff;

    fn params(n: usize, lookahead: usize) -> ModelParams {
        ModelParams::new(n, 0.0, 1.0, 2.0, 0.5, lookahead, 1).unwrap()
    }

    fn in_band_constant(c: f64) -> VolControl {
        VolControl::constant(c, 0.4, 3.2, 0.25, 2.0).unwrap()
    }

    #[test]
    fn constant_in_band_control_gives_fair_coin() {
        let p = params(6, 0);
        let (tree, report) = qn_from_control(&p, &in_band_constant(1.5)).unwrap();
        assert!(report.valid);
        assert!(report.max_prob_dev < 1e-15);
        for node in tree.nodes().iter().skip(1) {
            assert!((node.prob - 0.5).abs() < 1e-15);
        }
        // κ vanishes in band, so M = S at every node.
        for (id, node) in tree.nodes().iter().enumerate() {
            let _ = node;
            assert!((report.kappa[id]).abs() < 1e-15);
        }
    }

    #[test]
    fn compensated_price_matches_price_for_in_band_controls() {
        let p = params(5, 0);
        let (tree, report) = qn_from_control(&p, &in_band_constant(1.2)).unwrap();
        let scale = p.step_scale();
        let mut price = vec![p.s];
        for node in tree.nodes().iter().skip(1) {
            price.push(price[node.parent as usize] + node.ret * scale);
        }
        for id in 0..tree.node_count() {
            assert!((report.m[id] - price[id]).abs() < 1e-15);
        }
    }

    #[test]
    fn driver_and_compensated_price_are_martingales() {
        let p = params(7, 0);
        let mut rng = stream(11, 0);
        let control = VolControl::sample_random(p.sigma_lo, p.sigma_hi, &mut rng);
        let (tree, report) = qn_from_control(&p, &control).unwrap();
        for (id, node) in tree.nodes().iter().enumerate() {
            if node.child_count == 0 {
                continue;
            }
            let mut eb = 0.0;
            let mut em = 0.0;
            for c in node.first_child..node.first_child + node.child_count {
                eb += tree.nodes()[c].prob * (report.b[c] - report.b[id]);
                em += tree.nodes()[c].prob * (report.m[c] - report.m[id]);
            }
            assert!(eb.abs() < 1e-13, "driver drift {eb} at node {id}");
            assert!(em.abs() < 1e-13, "compensated drift {em} at node {id}");
        }
    }

    #[test]
    fn terminal_window_forces_exact_identity() {
        let p = params(8, 0);
        // Window delta = 0.5 >= 4/n: the last steps run at the upper bound.
        let control = VolControl::new(1.1, [0.2, 0.3, -0.2], 0.4, 3.0, 0.5, 2.0).unwrap();
        let (tree, report) = qn_from_control(&p, &control).unwrap();
        let scale = p.step_scale();
        let mut price = vec![p.s];
        for node in tree.nodes().iter().skip(1) {
            price.push(price[node.parent as usize] + node.ret * scale);
        }
        // Bit-for-bit: the compensation is exactly zero on the window.
        for (id, node) in tree.nodes().iter().enumerate() {
            if node.depth == tree.depth() {
                assert_eq!(report.m[id], price[id], "leaf {id}");
                assert_eq!(report.kappa[id], 0.0);
            }
        }
    }

    #[test]
    fn sampler_agrees_with_enumeration() {
        let p = params(6, 0);
        let mut rng = stream(3, 5);
        let control = VolControl::sample_random(p.sigma_lo, p.sigma_hi, &mut rng);
        let (tree, report) = qn_from_control(&p, &control).unwrap();
        let path = sample_qn_path(&p, &control, 17, 4).unwrap();
        // Follow the sampled signs down the enumerated tree.
        let mut id = 0usize;
        for (k, &x) in path.xs.iter().enumerate() {
            let node = &tree.nodes()[id];
            let child = if x > 0.0 { node.first_child + 1 } else { node.first_child };
            assert!((tree.nodes()[child].ret - x).abs() < 1e-12);
            id = child;
            assert!((report.b[id] - path.bs[k + 1]).abs() < 1e-12);
            assert!((report.m[id] - path.ms[k + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn wild_control_is_rejected_at_small_n() {
        let p = params(4, 0);
        // A violent drop of the control between steps overturns the coin.
        let control = VolControl::new(8.0, [-30.0, 0.0, 0.0], 0.05, 8.0, 0.2, 2.0).unwrap();
        match qn_from_control(&p, &control) {
            Err(DualError::InvalidProbability { .. }) => {}
            other => panic!("expected InvalidProbability, got {other:?}"),
        }
    }

    #[test]
    fn constructed_measure_feeds_the_dual_objective() {
        // Constant at the upper bound: the terminal window changes nothing,
        // |x| = 2 throughout, so with N = 1 the penalty is Σ E (ΔS)² = 4.
        let p = params(5, 1);
        let (tree, _) = qn_from_control(&p, &in_band_constant(2.0)).unwrap();
        let v = dual_value(&p, &Payoff::constant(2.0), &tree).unwrap();
        assert!((v - (2.0 - 4.0 / (4.0 * 0.5))).abs() < 1e-12);
    }
}
