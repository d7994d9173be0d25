//! Parameters, regime classification, reaction terms and closed-form rates.
//!
//! The original system for `(u, v, w)` is
//!
//! ```text
//! u_t = u_xx + u (1 - u - a1 w)
//! v_t = v_xx + r v (1 - a2 u - v)
//! w_t = w_xx + (v - w) / tau
//! ```
//!
//! and the substitution `u~ = u`, `v~ = 1 - v`, `w~ = 1 - w` turns the wave
//! problem into a cooperative one connecting `(0,0,0)` to `(1,1,1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speeds within this distance of `c_min` are treated as critical.
pub const CRITICAL_TOL: f64 = 1e-9;

/// Speeds below `c_min` by more than this are rejected as oscillatory.
pub const SPEED_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a1: f64,
    pub a2: f64,
    pub r: f64,
    pub tau: f64,
}

impl ModelParams {
    pub fn new(a1: f64, a2: f64, r: f64, tau: f64) -> Result<Self> {
        let p = ModelParams { a1, a2, r, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("a1", self.a1), ("a2", self.a2), ("r", self.r), ("tau", self.tau)] {
            if !x.is_finite() || x <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {x}"
                )));
            }
        }
        Ok(())
    }

    /// Condition H1: `0 < a1 < 1 < a2`.
    pub fn h1(&self) -> bool {
        0.0 < self.a1 && self.a1 < 1.0 && 1.0 < self.a2
    }

    /// `2 sqrt(1 - a1)`, or NaN when `a1 >= 1`.
    pub fn c_min(&self) -> f64 {
        2.0 * (1.0 - self.a1).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeVariant {
    H2a,
    H2b,
    Uncovered,
    H1Violated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub variant: RegimeVariant,
    /// Only meaningful for `H2b`. `None` until the two-species wave has been
    /// computed and `a2 u >= v` checked on it.
    pub h3_satisfied: Option<bool>,
}

impl Regime {
    pub fn with_h3(self, ok: bool) -> Self {
        Regime {
            h3_satisfied: Some(ok),
            ..self
        }
    }
}

/// How `h3_satisfied` is filled in at classification time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum H3Policy {
    /// Leave it unset; the H2b pipeline checks `a2 u >= v` on the computed
    /// two-species wave.
    Deferred,
    /// Declare H3 satisfied iff `a2 >= threshold`.
    Threshold(f64),
}

pub fn classify_regime(p: &ModelParams) -> Regime {
    classify_regime_with(p, H3Policy::Deferred)
}

pub fn classify_regime_with(p: &ModelParams, policy: H3Policy) -> Regime {
    let variant = if !p.h1() {
        RegimeVariant::H1Violated
    } else if p.r * (p.a2 - 1.0) < 1.0 - p.a1 {
        RegimeVariant::H2a
    } else if p.r * (p.a2 - 1.0) >= 1.0 - p.a1 && 1.0 - p.a1 >= p.r * (p.a1 * p.a2 - 1.0) {
        RegimeVariant::H2b
    } else {
        RegimeVariant::Uncovered
    };
    let h3_satisfied = match (variant, policy) {
        (RegimeVariant::H2b, H3Policy::Threshold(t)) => Some(p.a2 >= t),
        _ => None,
    };
    Regime { variant, h3_satisfied }
}

/// Reaction terms of the cooperative (monotone) system.
pub fn reaction_monotone(p: &ModelParams, u: f64, v: f64, w: f64) -> [f64; 3] {
    [
        u * (1.0 - p.a1 - u + p.a1 * w),
        p.r * (1.0 - v) * (p.a2 * u - v),
        (v - w) / p.tau,
    ]
}

/// Jacobian of [`reaction_monotone`], row `i` holding the partials of `f_i`.
pub fn jacobian_monotone(p: &ModelParams, u: f64, v: f64, w: f64) -> [[f64; 3]; 3] {
    [
        [1.0 - p.a1 - 2.0 * u + p.a1 * w, 0.0, p.a1 * u],
        [p.r * p.a2 * (1.0 - v), -p.r * (p.a2 * u - v) - p.r * (1.0 - v), 0.0],
        [0.0, 1.0 / p.tau, -1.0 / p.tau],
    ]
}

/// Reaction terms of the original system.
pub fn reaction_original(p: &ModelParams, u: f64, v: f64, w: f64) -> [f64; 3] {
    [
        u * (1.0 - u - p.a1 * w),
        p.r * v * (1.0 - p.a2 * u - v),
        (v - w) / p.tau,
    ]
}

/// Reaction terms of the cooperative two-species Lotka-Volterra system in
/// which `v` plays the role of both `v~` and `w~`.
pub fn reaction_lv2(p: &ModelParams, u: f64, v: f64) -> [f64; 2] {
    [u * (1.0 - p.a1 - u + p.a1 * v), p.r * (1.0 - v) * (p.a2 * u - v)]
}

pub fn jacobian_lv2(p: &ModelParams, u: f64, v: f64) -> [[f64; 2]; 2] {
    [
        [1.0 - p.a1 - 2.0 * u + p.a1 * v, p.a1 * u],
        [p.r * p.a2 * (1.0 - v), -p.r * (p.a2 * u - v) - p.r * (1.0 - v)],
    ]
}

pub fn to_monotone(u: f64, v: f64, w: f64) -> [f64; 3] {
    [u, 1.0 - v, 1.0 - w]
}

pub fn from_monotone(u: f64, v: f64, w: f64) -> [f64; 3] {
    [u, 1.0 - v, 1.0 - w]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTable {
    pub c: f64,
    pub c_min: f64,
    /// Decay rate at `-inf`; `None` when the roots are complex (`c < c_min`).
    pub lambda_minus: Option<f64>,
    pub complex_roots: bool,
    pub critical: bool,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl RateTable {
    pub fn require_real(&self) -> Result<f64> {
        self.lambda_minus.ok_or(Error::NoMonotoneWave {
            c: self.c,
            c_min: self.c_min,
        })
    }

    /// The slowest approach rate to `(1,1,1)`, i.e. the largest of the three
    /// negative exponents.
    pub fn slowest_plus(&self) -> f64 {
        self.mu1.max(self.mu2).max(self.mu3)
    }
}

/// Negative root of `mu^2 - c mu - kappa = 0` for `kappa > 0`.
pub(crate) fn negative_root(c: f64, kappa: f64) -> f64 {
    (c - (c * c + 4.0 * kappa).sqrt()) / 2.0
}

/// Decay rate `(c - sqrt(c^2 - 4 abar)) / 2` of a KPP front at `-inf`, or
/// `None` if `c` is below `2 sqrt(abar)`.
pub(crate) fn slow_root(c: f64, abar: f64) -> Option<f64> {
    let cmin = 2.0 * abar.sqrt();
    if c < cmin - SPEED_SLACK {
        return None;
    }
    if (c - cmin).abs() < CRITICAL_TOL {
        return Some(abar.sqrt());
    }
    let disc = (c * c - 4.0 * abar).max(0.0);
    Some((c - disc.sqrt()) / 2.0)
}

pub fn rates(p: &ModelParams, c: f64) -> Result<RateTable> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidParameter(format!("speed must be >= 0, got {c}")));
    }
    let abar = 1.0 - p.a1;
    let c_min = 2.0 * abar.max(0.0).sqrt();
    let lambda_minus = if abar > 0.0 { slow_root(c, abar) } else { None };
    Ok(RateTable {
        c,
        c_min,
        lambda_minus,
        complex_roots: lambda_minus.is_none(),
        critical: abar > 0.0 && (c - c_min).abs() < CRITICAL_TOL,
        mu1: negative_root(c, 1.0),
        mu2: negative_root(c, p.r * (p.a2 - 1.0)),
        mu3: negative_root(c, 1.0 / p.tau),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h2a() -> ModelParams {
        ModelParams::new(0.5, 2.0, 0.2, 2.0).unwrap()
    }

    #[test]
    fn worked_classifications() {
        assert_eq!(classify_regime(&h2a()).variant, RegimeVariant::H2a);
        let p = ModelParams::new(0.5, 2.0, 1.0, 2.0).unwrap();
        assert_eq!(classify_regime(&p).variant, RegimeVariant::H2b);
        let p = ModelParams::new(1.5, 2.0, 0.2, 2.0).unwrap();
        assert_eq!(classify_regime(&p).variant, RegimeVariant::H1Violated);
    }

    #[test]
    fn uncovered_is_reported() {
        // r(a2-1) = 3 >= 0.5, but r(a1 a2 - 1) = 0.75 > 0.5.
        let p = ModelParams::new(0.5, 3.0, 1.5, 1.0).unwrap();
        assert_eq!(classify_regime(&p).variant, RegimeVariant::Uncovered);
    }

    #[test]
    fn h3_threshold_policy() {
        let p = ModelParams::new(0.5, 3.0, 0.25, 2.0).unwrap();
        let reg = classify_regime_with(&p, H3Policy::Threshold(2.5));
        assert_eq!(reg.variant, RegimeVariant::H2b);
        assert_eq!(reg.h3_satisfied, Some(true));
        assert_eq!(classify_regime(&p).h3_satisfied, None);
        assert_eq!(
            classify_regime_with(&h2a(), H3Policy::Threshold(0.0)).h3_satisfied,
            None
        );
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(ModelParams::new(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(0.5, 2.0, 1.0, f64::NAN).is_err());
        assert!(ModelParams::new(0.5, -2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn reaction_examples() {
        let p = h2a();
        assert_eq!(reaction_monotone(&p, 0.0, 0.0, 0.0), [0.0; 3]);
        assert_eq!(reaction_monotone(&p, 1.0, 1.0, 1.0), [0.0; 3]);
        let f = reaction_monotone(&p, 0.5, 0.5, 0.5);
        assert!((f[0] - 0.125).abs() < 1e-15);
        assert!((f[1] - 0.05).abs() < 1e-15);
        assert_eq!(f[2], 0.0);
        assert_eq!(reaction_original(&p, 0.0, 1.0, 1.0), [0.0; 3]);
        assert_eq!(reaction_original(&p, 1.0, 0.0, 0.0), [0.0; 3]);
        assert_eq!(reaction_original(&p, 0.0, 0.0, 0.0), [0.0; 3]);
    }

    #[test]
    fn coordinate_change() {
        assert_eq!(to_monotone(0.0, 1.0, 1.0), [0.0, 0.0, 0.0]);
        assert_eq!(to_monotone(1.0, 0.0, 0.0), [1.0, 1.0, 1.0]);
        let m = to_monotone(0.3, 0.6, 0.9);
        assert!((m[1] - 0.4).abs() < 1e-15 && (m[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn monotone_reaction_matches_original_under_substitution() {
        let p = h2a();
        let (u, v, w) = (0.3, 0.45, 0.8);
        let g = reaction_original(&p, u, v, w);
        let m = to_monotone(u, v, w);
        let f = reaction_monotone(&p, m[0], m[1], m[2]);
        assert!((f[0] - g[0]).abs() < 1e-15);
        assert!((f[1] + g[1]).abs() < 1e-15);
        assert!((f[2] + g[2]).abs() < 1e-15);
    }

    #[test]
    fn rate_examples() {
        let t = rates(&h2a(), 1.5).unwrap();
        assert!((t.lambda_minus.unwrap() - 0.5).abs() < 1e-14);
        assert!((t.mu1 + 0.5).abs() < 1e-14);
        assert!((t.mu2 - (1.5 - 3.05f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((t.mu3 - (1.5 - 4.25f64.sqrt()) / 2.0).abs() < 1e-14);
        let p = ModelParams::new(0.75, 2.0, 0.2, 2.0).unwrap();
        let t = rates(&p, 1.0).unwrap();
        assert!((t.c_min - 1.0).abs() < 1e-15);
        assert!(t.critical);
        assert!((t.lambda_minus.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn subcritical_speed_is_flagged() {
        let t = rates(&h2a(), 1.0).unwrap();
        assert!(t.complex_roots);
        assert!(matches!(t.require_real(), Err(Error::NoMonotoneWave { .. })));
    }

    #[test]
    fn lv2_jacobian_matches_differences() {
        let p = ModelParams::new(0.5, 3.0, 0.25, 2.0).unwrap();
        let (u, v) = (0.37, 0.61);
        let j = jacobian_lv2(&p, u, v);
        let e = 1e-6;
        for k in 0..2 {
            let (mut xp, mut xm) = ([u, v], [u, v]);
            xp[k] += e;
            xm[k] -= e;
            let fp = reaction_lv2(&p, xp[0], xp[1]);
            let fm = reaction_lv2(&p, xm[0], xm[1]);
            for i in 0..2 {
                assert!((j[i][k] - (fp[i] - fm[i]) / (2.0 * e)).abs() < 1e-8);
            }
        }
    }
}
