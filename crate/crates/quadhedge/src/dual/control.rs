//! Parametrized volatility controls.
//!
//! A control is a progressively measurable map `f(t, path)` with values in a
//! positive band, Lipschitz in time and in the sup-norm of the path, and
//! pinned to the upper volatility bound on a terminal window `[1 - delta, 1]`.
//! Away from the window the value is an affine function of a few bounded path
//! features, clamped to `[clamp_lo, clamp_hi]`; a linear blend over
//! `[1 - 2 delta, 1 - delta]` keeps the map Lipschitz as it enters the window.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Read access to a continuous path on `[0, t]`.
pub trait PathAt {
    fn at(&self, t: f64) -> f64;
}

/// Piecewise-linear interpolation of grid values with spacing `dt`.
///
/// Matches the interpolation `Ã_t = (nt - [nt]) A_{[nt]+1} + (1 + [nt] - nt) A_{[nt]}`
/// used when lifting a discrete driver to a continuous path.
pub struct PathInterp<'a> {
    values: &'a [f64],
    dt: f64,
}

impl<'a> PathInterp<'a> {
    pub fn new(values: &'a [f64], dt: f64) -> Self {
        PathInterp { values, dt }
    }
}

impl PathAt for PathInterp<'_> {
    fn at(&self, t: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let u = (t / self.dt).max(0.0);
        let i = (u.floor() as usize).min(self.values.len() - 1);
        let frac = u - i as f64;
        if i + 1 >= self.values.len() {
            return self.values[self.values.len() - 1];
        }
        (1.0 - frac) * self.values[i] + frac * self.values[i + 1]
    }
}

/// The constant-zero path (initial condition of the driver).
pub struct ZeroPath;

impl PathAt for ZeroPath {
    fn at(&self, _t: f64) -> f64 {
        0.0
    }
}

/// Number of path features a control may load on.
pub const FEATURE_COUNT: usize = 3;

/// A clamped, path-dependent volatility control with a terminal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolControl {
    /// Level before feature adjustments.
    pub base: f64,
    /// Loadings on `[t, tanh(p_t - p_0), tanh(p_t - p_{(t-0.1)+})]`.
    pub coeffs: [f64; FEATURE_COUNT],
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    /// Width of the terminal window on which the value is `terminal_value`.
    pub terminal_delta: f64,
    /// Value on the terminal window (the upper volatility bound).
    pub terminal_value: f64,
    /// Lipschitz budget of the map in `(t, ||path||)`.
    pub lipschitz: f64,
}

impl VolControl {
    /// Builds a control, deriving its Lipschitz budget from the parameters.
    ///
    /// Requires `0 < clamp_lo <= terminal_value <= clamp_hi` and
    /// `terminal_delta ∈ (0, 1)` so the blend stays inside the clamp range.
    pub fn new(
        base: f64,
        coeffs: [f64; FEATURE_COUNT],
        clamp_lo: f64,
        clamp_hi: f64,
        terminal_delta: f64,
        terminal_value: f64,
    ) -> Result<Self, String> {
        if !(clamp_lo > 0.0 && clamp_lo <= terminal_value && terminal_value <= clamp_hi) {
            return Err("need 0 < clamp_lo <= terminal_value <= clamp_hi".into());
        }
        if !(terminal_delta > 0.0 && terminal_delta < 1.0) {
            return Err("terminal_delta must lie in (0,1)".into());
        }
        let span = clamp_hi - clamp_lo;
        let lipschitz =
            coeffs[0].abs() + coeffs[1].abs() + 2.0 * coeffs[2].abs() + span / terminal_delta;
        Ok(VolControl {
            base,
            coeffs,
            clamp_lo,
            clamp_hi,
            terminal_delta,
            terminal_value,
            lipschitz,
        })
    }

    /// Constant control `c` on `[0, 1 - delta)` (clamped into the band).
    pub fn constant(c: f64, lo: f64, hi: f64, delta: f64, terminal: f64) -> Result<Self, String> {
        Self::new(c, [0.0; FEATURE_COUNT], lo, hi, delta, terminal)
    }

    /// Evaluates the control at time `t` given the driver path so far.
    pub fn value(&self, t: f64, path: &dyn PathAt) -> f64 {
        let window_start = 1.0 - self.terminal_delta;
        if t >= window_start {
            return self.terminal_value;
        }
        let p_t = path.at(t);
        let raw = self.base
            + self.coeffs[0] * t
            + self.coeffs[1] * (p_t - path.at(0.0)).tanh()
            + self.coeffs[2] * (p_t - path.at((t - 0.1).max(0.0))).tanh();
        let clamped = raw.clamp(self.clamp_lo, self.clamp_hi);
        // Linear blend toward the window value keeps the map Lipschitz.
        let w = ((window_start - t) / self.terminal_delta).clamp(0.0, 1.0);
        self.terminal_value + w * (clamped - self.terminal_value)
    }

    /// Draws a moderate random control for a volatility band.
    pub fn sample_random<R: Rng>(sigma_lo: f64, sigma_hi: f64, rng: &mut R) -> Self {
        let lo = 0.4 * sigma_lo;
        let hi = 1.6 * sigma_hi;
        let base = lo + (hi - lo) * rng.gen::<f64>();
        let coeffs = [
            0.3 * (2.0 * rng.gen::<f64>() - 1.0),
            0.4 * sigma_hi * (2.0 * rng.gen::<f64>() - 1.0),
            0.4 * sigma_hi * (2.0 * rng.gen::<f64>() - 1.0),
        ];
        VolControl::new(base, coeffs, lo, hi, 0.1, sigma_hi).expect("valid random control")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_pins_to_terminal_value() {
        let c = VolControl::new(1.3, [0.2, 0.1, -0.1], 0.5, 2.5, 0.2, 2.0).unwrap();
        assert_eq!(c.value(0.85, &ZeroPath), 2.0);
        assert_eq!(c.value(1.0, &ZeroPath), 2.0);
    }

    #[test]
    fn values_stay_in_the_clamp_range() {
        let c = VolControl::new(5.0, [1.0, 1.0, 1.0], 0.5, 2.5, 0.2, 2.0).unwrap();
        let vals = [0.0, 0.3, 0.55, 0.79, 0.81, 1.0];
        for &t in &vals {
            let v = c.value(t, &ZeroPath);
            assert!((0.5..=2.5).contains(&v), "value {v} at t={t}");
        }
    }

    #[test]
    fn interp_hits_grid_points() {
        let vals = [0.0, 1.0, -1.0];
        let p = PathInterp::new(&vals, 0.5);
        assert_eq!(p.at(0.0), 0.0);
        assert_eq!(p.at(0.5), 1.0);
        assert_eq!(p.at(0.25), 0.5);
        assert_eq!(p.at(1.0), -1.0);
        assert_eq!(p.at(2.0), -1.0);
    }

    #[test]
    fn blend_is_continuous_at_the_window() {
        let c = VolControl::new(0.7, [0.0; 3], 0.5, 2.5, 0.2, 2.0).unwrap();
        let just_before = c.value(0.8 - 1e-9, &ZeroPath);
        assert!((just_before - 2.0).abs() < 1e-7);
    }
}
