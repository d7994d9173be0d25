//! Tail analysis: exponential and critical polynomial-exponential fits to
//! profile tails, the linearization at `(1,1,1)`, and comparison reports.

use serde::Serialize;

use crate::bvp::Profile;
use crate::error::{Error, Result};
use crate::model::{jacobian_monotone, negative_root, rates, ModelParams};
use crate::system_waves::WaveSolution;

/// Minimum number of nodes a fit window must contain.
pub const MIN_FIT_NODES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

/// Which nodes enter a tail fit: those whose distance to the limit lies in
/// `[lo, hi]` times the jump between the limits, on the requested half of the
/// domain, excluding `edge_fraction * L` next to the truncation end (where the
/// Dirichlet data leave a thin boundary layer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
    pub edge_fraction: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow {
            lo: 1e-8,
            hi: 1e-3,
            edge_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Root-mean-square of the residuals.
    pub rms: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    LinearFit {
        intercept,
        slope,
        rms: (sse / n).sqrt(),
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// Exponent of the tail; positive at `-inf`, negative at `+inf`.
    pub rate: f64,
    /// Signed prefactor: `A` in `A e^{rate xi}`, or the coefficient of `|xi|`
    /// in the polynomial model.
    pub amplitude: f64,
    /// True when the `(A + B xi) e^{rate xi}` model fitted better.
    pub poly_factor: bool,
    /// RMS of the log-space regression of the chosen model.
    pub fit_residual: f64,
    /// RMS of the model that was not chosen, when both were fitted.
    pub rival_residual: Option<f64>,
    /// First and last node index of the window.
    pub window: (usize, usize),
    pub nodes: usize,
}

pub fn fit_tail(profile: &Profile, side: Side, allow_poly: bool) -> Result<DecayFit> {
    fit_tail_with(profile, side, allow_poly, &FitWindow::default())
}

pub fn fit_tail_with(profile: &Profile, side: Side, allow_poly: bool, window: &FitWindow) -> Result<DecayFit> {
    let g = profile.grid;
    let scale = (profile.right_limit - profile.left_limit).abs();
    if scale == 0.0 {
        return Err(Error::PreconditionFailure(
            "tail fit needs distinct limits at the two ends".into(),
        ));
    }
    let limit = match side {
        Side::Minus => profile.left_limit,
        Side::Plus => profile.right_limit,
    };
    let margin = window.edge_fraction * g.half_width;
    let mut idx = Vec::new();
    for (i, v) in profile.values.iter().enumerate() {
        let xi = g.node(i);
        let inside = match side {
            Side::Minus => xi < 0.0 && xi >= -g.half_width + margin,
            Side::Plus => xi > 0.0 && xi <= g.half_width - margin,
        };
        let d = (v - limit).abs();
        if inside && d >= window.lo * scale && d <= window.hi * scale {
            idx.push(i);
        }
    }
    if idx.len() < MIN_FIT_NODES {
        return Err(Error::TailTooShort {
            nodes: idx.len(),
            required: MIN_FIT_NODES,
        });
    }
    let xs: Vec<f64> = idx.iter().map(|&i| g.node(i)).collect();
    let logs: Vec<f64> = idx.iter().map(|&i| (profile.values[i] - limit).abs().ln()).collect();
    let expo = linear_fit(&xs, &logs);
    let poly = allow_poly.then(|| {
        let y: Vec<f64> = logs.iter().zip(&xs).map(|(l, x)| l - x.abs().ln()).collect();
        linear_fit(&xs, &y)
    });
    let mid = idx[idx.len() / 2];
    let sign = match side {
        Side::Minus => (profile.values[mid] - limit).signum(),
        Side::Plus => (limit - profile.values[mid]).signum(),
    };
    let (chosen, poly_factor, rival) = match poly {
        Some(pf) if pf.rms < expo.rms => (pf, true, Some(expo.rms)),
        Some(pf) => (expo, false, Some(pf.rms)),
        None => (expo, false, None),
    };
    Ok(DecayFit {
        rate: chosen.slope,
        amplitude: sign * chosen.intercept.exp(),
        poly_factor,
        fit_residual: chosen.rms,
        rival_residual: rival,
        window: (idx[0], idx[idx.len() - 1]),
        nodes: idx.len(),
    })
}

/// Exponents and eigen-directions of the linearization at `(1,1,1)`:
/// `psi'' - c psi' + J psi = 0` with `J` the Jacobian there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlusInfinityModes {
    pub rates: [f64; 3],
    /// `modes[k]` is the direction belonging to `rates[k]`.
    pub modes: [[f64; 3]; 3],
    /// Matrix with the modes as columns; `None` when two exponents coincide
    /// and the directions are not independent.
    pub transform: Option<[[f64; 3]; 3]>,
    /// True when the closed-form directions were replaced by numerical ones.
    pub numerical: bool,
}

const DEGENERACY_TOL: f64 = 1e-12;

pub fn plus_infinity_modes(p: &ModelParams, c: f64) -> PlusInfinityModes {
    let s = p.r * (1.0 - p.a2);
    let j = jacobian_monotone(p, 1.0, 1.0, 1.0);
    // Eigenvalues of J (it is triangular up to a permutation).
    let kappas = [-1.0, s, -1.0 / p.tau];
    let rates = kappas.map(|k| negative_root(c, -k));
    let degenerate = (p.tau - 1.0).abs() < DEGENERACY_TOL
        || (s + 1.0).abs() < DEGENERACY_TOL
        || (s + 1.0 / p.tau).abs() < DEGENERACY_TOL;
    let modes = if degenerate {
        let mut m = [[0.0; 3]; 3];
        for (k, kappa) in kappas.iter().enumerate() {
            let mut a = j;
            for (d, row) in a.iter_mut().enumerate() {
                row[d] -= kappa;
            }
            m[k] = normalize_mode(null_vector(&a), k);
        }
        m
    } else {
        [
            [1.0, 0.0, 0.0],
            [p.a1 / (s + 1.0), p.tau * s + 1.0, 1.0],
            [p.a1 * p.tau / (p.tau - 1.0), 0.0, 1.0],
        ]
    };
    let transform = if degenerate {
        None
    } else {
        let mut t = [[0.0; 3]; 3];
        for (k, m) in modes.iter().enumerate() {
            for i in 0..3 {
                t[i][k] = m[i];
            }
        }
        Some(t)
    };
    PlusInfinityModes {
        rates,
        modes,
        transform,
        numerical: degenerate,
    }
}

/// Sup-norm of `(mu^2 - c mu) m + J m` for mode `k`; zero for an exact
/// eigen-direction.
pub fn mode_residual(p: &ModelParams, c: f64, modes: &PlusInfinityModes, k: usize) -> f64 {
    let j = jacobian_monotone(p, 1.0, 1.0, 1.0);
    let mu = modes.rates[k];
    let m = modes.modes[k];
    let chi = mu * mu - c * mu;
    (0..3)
        .map(|i| (chi * m[i] + (0..3).map(|l| j[i][l] * m[l]).sum::<f64>()).abs())
        .fold(0.0, f64::max)
}

/// A nonzero vector in the kernel of a singular 3x3 matrix, taken as the
/// largest cross product of two of its rows.
fn null_vector(a: &[[f64; 3]; 3]) -> [f64; 3] {
    let cross = |x: &[f64; 3], y: &[f64; 3]| {
        [
            x[1] * y[2] - x[2] * y[1],
            x[2] * y[0] - x[0] * y[2],
            x[0] * y[1] - x[1] * y[0],
        ]
    };
    let norm = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>();
    let cands = [cross(&a[0], &a[1]), cross(&a[0], &a[2]), cross(&a[1], &a[2])];
    let best = cands
        .iter()
        .copied()
        .max_by(|x, y| norm(x).total_cmp(&norm(y)))
        .unwrap();
    if norm(&best) == 0.0 {
        // Rank at most one: any vector orthogonal to the nonzero row works.
        let row = a.iter().copied().max_by(|x, y| norm(x).total_cmp(&norm(y))).unwrap();
        if norm(&row) == 0.0 {
            return [1.0, 0.0, 0.0];
        }
        let e = if row[0].abs() < row[1].abs().max(row[2].abs()) {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        return cross(&row, &e);
    }
    best
}

/// Scales a mode to the closed-form conventions: first entry 1 for mode 0,
/// last entry 1 for the others when possible.
fn normalize_mode(v: [f64; 3], k: usize) -> [f64; 3] {
    let pivot = if k == 0 || v[2].abs() < 1e-14 {
        *v.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap()
    } else {
        v[2]
    };
    v.map(|x| x / pivot)
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-14 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    Some(inv)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailComparison {
    pub component: usize,
    pub side: Side,
    pub fitted: Option<f64>,
    pub predicted: f64,
    pub relative_error: Option<f64>,
    pub poly_factor: Option<bool>,
    pub amplitude: Option<f64>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsReport {
    pub rows: Vec<TailComparison>,
    /// Fitted mode coefficients `s_k` at `+inf`, when the modes are independent.
    pub projections: Option<[f64; 3]>,
    pub modes: PlusInfinityModes,
}

impl AsymptoticsReport {
    pub fn row(&self, component: usize, side: Side) -> Option<&TailComparison> {
        self.rows.iter().find(|r| r.component == component && r.side == side)
    }
}

/// Fits both tails of every component of a three-species wave and compares
/// them with the rates of the linearizations at the two ends.
pub fn match_wave_asymptotics(wave: &WaveSolution) -> Result<AsymptoticsReport> {
    match_wave_asymptotics_with(wave, &FitWindow::default())
}

pub fn match_wave_asymptotics_with(wave: &WaveSolution, window: &FitWindow) -> Result<AsymptoticsReport> {
    if wave.profiles.len() != 3 {
        return Err(Error::PreconditionFailure(
            "asymptotic matching needs a three-component wave".into(),
        ));
    }
    let p = &wave.params;
    let table = rates(p, wave.c)?;
    let lambda = table.require_real()?;
    let modes = plus_infinity_modes(p, wave.c);
    let projected = modes
        .transform
        .and_then(|t| project_plus_tail(wave, &t, &modes.rates, window));
    // Coinciding rates can come with a Jordan block and a xi e^{mu xi} tail.
    let repeated = (0..3).any(|a| (0..a).any(|b| (modes.rates[a] - modes.rates[b]).abs() < 1e-9));
    let mut rows = Vec::new();
    for (k, prof) in wave.profiles.iter().enumerate() {
        let fit = fit_tail_with(prof, Side::Minus, table.critical, window);
        rows.push(comparison(k, Side::Minus, fit, lambda));
        let predicted = match (&projected, &modes.transform) {
            (Some((s, xi_ref)), Some(t)) => {
                // Size of each mode's contribution at the deep end of the window.
                let weights: Vec<f64> = (0..3)
                    .map(|m| (t[k][m] * s[m]).abs() * (modes.rates[m] * xi_ref).exp())
                    .collect();
                let top = weights.iter().cloned().fold(0.0, f64::max);
                (0..3)
                    .filter(|&m| top > 0.0 && weights[m] > 1e-3 * top)
                    .map(|m| modes.rates[m])
                    .fold(f64::NEG_INFINITY, f64::max)
            }
            _ => table.slowest_plus(),
        };
        let predicted = if predicted.is_finite() {
            predicted
        } else {
            table.slowest_plus()
        };
        let fit = fit_tail_with(prof, Side::Plus, repeated, window);
        rows.push(comparison(k, Side::Plus, fit, predicted));
    }
    Ok(AsymptoticsReport {
        rows,
        projections: projected.map(|(s, _)| s),
        modes,
    })
}

fn comparison(component: usize, side: Side, fit: Result<DecayFit>, predicted: f64) -> TailComparison {
    match fit {
        Ok(f) => TailComparison {
            component,
            side,
            fitted: Some(f.rate),
            predicted,
            relative_error: Some(((f.rate - predicted) / predicted).abs()),
            poly_factor: Some(f.poly_factor),
            amplitude: Some(f.amplitude),
            fit_error: None,
        },
        Err(e) => TailComparison {
            component,
            side,
            fitted: None,
            predicted,
            relative_error: None,
            poly_factor: None,
            amplitude: None,
            fit_error: Some(e.to_string()),
        },
    }
}

/// Least-squares mode coefficients `s_k` from `P^{-1} (1 - U(xi))` on the
/// `+inf` window, with the largest `xi` used.
fn project_plus_tail(
    wave: &WaveSolution,
    transform: &[[f64; 3]; 3],
    mu: &[f64; 3],
    window: &FitWindow,
) -> Option<([f64; 3], f64)> {
    let inv = invert3(transform)?;
    let g = wave.profiles[0].grid;
    let margin = window.edge_fraction * g.half_width;
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    let mut count = 0;
    let mut xi_ref = 0.0;
    for i in 0..g.len() {
        let xi = g.node(i);
        if xi <= 0.0 || xi > g.half_width - margin {
            continue;
        }
        let d: Vec<f64> = wave.profiles.iter().map(|p| 1.0 - p.values[i]).collect();
        let big = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if big > window.hi || big < window.lo {
            continue;
        }
        count += 1;
        xi_ref = xi;
        for k in 0..3 {
            let y: f64 = (0..3).map(|l| inv[k][l] * d[l]).sum();
            let e = (mu[k] * xi).exp();
            num[k] += y * e;
            den[k] += e * e;
        }
    }
    if count < MIN_FIT_NODES {
        return None;
    }
    Some(([0, 1, 2].map(|k| num[k] / den[k]), xi_ref))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::Grid;

    #[test]
    fn pure_exponential_rate() {
        let g = Grid::with_max_spacing(60.0, 0.02).unwrap();
        let p = Profile::from_fn(g, 0.0, 1.0, |x| {
            if x < 0.0 {
                0.5 * (0.5 * x).exp()
            } else {
                1.0 - 0.5 * (-0.5 * x).exp()
            }
        })
        .unwrap();
        let f = fit_tail(&p, Side::Minus, true).unwrap();
        assert!((f.rate - 0.5).abs() < 1e-3, "{}", f.rate);
        assert!(!f.poly_factor);
        assert!((f.amplitude - 0.5).abs() < 1e-6);
        let f = fit_tail(&p, Side::Plus, false).unwrap();
        assert!((f.rate + 0.5).abs() < 1e-3);
        assert!(f.amplitude > 0.0);
    }

    #[test]
    fn critical_form_is_recognized() {
        let g = Grid::with_max_spacing(60.0, 0.02).unwrap();
        let vals: Vec<f64> = g
            .nodes()
            .into_iter()
            .map(|x| {
                if x < 0.0 {
                    (1.0 - 2.0 * x) * (0.7 * x).exp()
                } else {
                    1.0
                }
            })
            .collect();
        let p = Profile::raw(g, vals, 0.0, 1.0);
        let f = fit_tail(&p, Side::Minus, true).unwrap();
        assert!(f.poly_factor);
        assert!((f.rate - 0.7).abs() < 1e-2, "{}", f.rate);
        assert!(f.fit_residual < f.rival_residual.unwrap());
    }

    #[test]
    fn short_tail_is_rejected() {
        let g = Grid::new(5.0, 99).unwrap();
        let p = Profile::raw(
            g,
            g.nodes().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
            0.0,
            1.0,
        );
        assert!(matches!(
            fit_tail(&p, Side::Minus, false),
            Err(Error::TailTooShort { .. })
        ));
    }

    #[test]
    fn shifting_changes_amplitude_only() {
        let g = Grid::with_max_spacing(60.0, 0.02).unwrap();
        let make = |s: f64| {
            Profile::raw(
                g,
                g.nodes().iter().map(|x| ((0.5 * (x - s)).exp()).min(1.0)).collect(),
                0.0,
                1.0,
            )
        };
        let a = fit_tail(&make(0.0), Side::Minus, false).unwrap();
        let b = fit_tail(&make(3.3), Side::Minus, false).unwrap();
        assert!((a.rate - b.rate).abs() < 1e-6);
        assert!((b.amplitude / a.amplitude - (-0.5f64 * 3.3).exp()).abs() < 1e-8);
    }

    #[test]
    fn closed_form_modes() {
        let p = ModelParams::new(0.5, 2.0, 0.2, 2.0).unwrap();
        let m = plus_infinity_modes(&p, 1.5);
        assert!((m.rates[0] + 0.5).abs() < 1e-14);
        assert!((m.rates[1] - (1.5 - 3.05f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((m.rates[2] - (1.5 - 4.25f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!(!m.numerical);
        for k in 0..3 {
            assert!(mode_residual(&p, 1.5, &m, k) < 1e-10);
        }
        assert!(invert3(&m.transform.unwrap()).is_some());
    }

    #[test]
    fn numerical_directions_agree_with_closed_form() {
        let p = ModelParams::new(0.4, 1.7, 0.3, 3.0).unwrap();
        let closed = plus_infinity_modes(&p, 1.2);
        let j = jacobian_monotone(&p, 1.0, 1.0, 1.0);
        let kappas = [-1.0, p.r * (1.0 - p.a2), -1.0 / p.tau];
        for k in 0..3 {
            let mut a = j;
            for (d, row) in a.iter_mut().enumerate() {
                row[d] -= kappas[k];
            }
            let v = normalize_mode(null_vector(&a), k);
            for i in 0..3 {
                assert!((v[i] - closed.modes[k][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_delay_uses_numerical_modes() {
        let p = ModelParams::new(0.5, 2.0, 0.2, 1.0).unwrap();
        let m = plus_infinity_modes(&p, 1.5);
        assert!(m.numerical);
        assert!(m.transform.is_none());
        for k in 0..3 {
            assert!(mode_residual(&p, 1.5, &m, k) < 1e-10);
        }
        // r (1 - a2) = -1/tau.
        let p = ModelParams::new(0.5, 3.0, 0.25, 2.0).unwrap();
        let m = plus_infinity_modes(&p, 1.5);
        assert!(m.numerical);
        for k in 0..3 {
            assert!(mode_residual(&p, 1.5, &m, k) < 1e-10);
        }
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!(f.rms < 1e-14 && (f.r_squared - 1.0).abs() < 1e-14);
    }
}
