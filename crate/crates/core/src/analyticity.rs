//! Quantitative analyticity: space-time bounds for spectral solutions and the
//! derivative interpolation chain.
//!
//! The space-time bound checked by [`fit_rho`] is
//!
//! ```text
//! |∂_x^α ∂_t^p u(x,t)| ≤ e^{1/(ρ t^{1/(2m−1)})} ρ^{−α−p} α! p! t^{−p} ‖u(0)‖,
//! ```
//!
//! compared in logarithmic form so that neither side overflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadGrid;
use crate::spectral::{EigenBasis, SpectralState};

/// `(M, ρ)` with `|∂^α f| ≤ M |α|! ρ^{−|α|}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCert {
    #[serde(rename = "M")]
    pub m: f64,
    pub rho: f64,
}

/// Fitted space-time certificate for one initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeCert {
    pub rho: f64,
    pub m: u32,
    pub norm_u0: f64,
    pub alpha_max: usize,
    pub p_max: usize,
    /// Violations found by the refined recheck at `ρ/2`.
    pub violations: usize,
}

impl SpaceTimeCert {
    /// `"kind, M, rho, alpha_max, p_max, violations"` (M is `‖u(0)‖`).
    pub fn csv_row(&self) -> String {
        format!(
            "spacetime_m{}, {}, {}, {}, {}, {}",
            self.m, self.norm_u0, self.rho, self.alpha_max, self.p_max, self.violations
        )
    }
}

pub const CERT_CSV_HEADER: &str = "kind, M, rho, alpha_max, p_max, violations";

/// Smallest `ρ` tried by [`fit_rho`].
pub const RHO_MIN: f64 = 1e-3;
/// Points per decade of the logarithmic `ρ` grid.
pub const RHO_PER_DECADE: usize = 60;

/// Spatial sample count of the fitting grid (16 panels × 8 Gauss nodes).
const FIT_PANELS: usize = 16;
const FIT_ORDER: usize = 8;

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Logarithm of the right-hand side of the space-time bound.
pub fn ln_spacetime_bound(rho: f64, m: u32, t: f64, alpha: usize, p: usize, norm_u0: f64) -> f64 {
    let s = 1.0 / (2.0 * m as f64 - 1.0);
    1.0 / (rho * t.powf(s)) - (alpha + p) as f64 * rho.ln() + ln_factorial(alpha) + ln_factorial(p)
        - p as f64 * t.ln()
        + norm_u0.ln()
}

fn rho_grid() -> Vec<f64> {
    let n = (RHO_MIN.log10().abs() * RHO_PER_DECADE as f64).round() as usize;
    (0..=n).map(|k| 10f64.powf(-(k as f64) / RHO_PER_DECADE as f64)).collect()
}

/// One sampled quantity: `sup_x |∂_x^α ∂_t^p u(·, t)|`.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeSample {
    pub t: f64,
    pub alpha: usize,
    pub p: usize,
    pub sup: f64,
}

/// Sups over `xs` of every component's derivatives, by mode-matrix products.
fn derivative_sups(
    state0: &SpectralState,
    t_grid: &[f64],
    xs: &[f64],
    alpha_max: usize,
    p_max: usize,
) -> Result<Vec<DerivativeSample>> {
    let basis: &EigenBasis = state0.basis();
    basis.check_order(alpha_max)?;
    let k = basis.len();
    let blocks = basis.state_dim() / k;
    let tables: Vec<Vec<f64>> = (0..=alpha_max)
        .map(|a| {
            let mut v = Vec::with_capacity(xs.len() * k);
            for &x in xs {
                for j in 0..k {
                    v.push(basis.mode(j, x, a));
                }
            }
            v
        })
        .collect();
    let mut out = Vec::new();
    for &t in t_grid {
        let at = basis.propagate(state0.coeffs(), t)?;
        for p in 0..=p_max {
            let c = basis.time_derivative_coeffs(&at, p);
            for (alpha, table) in tables.iter().enumerate() {
                let mut sup = 0f64;
                for b in 0..blocks {
                    let cb = &c[b * k..(b + 1) * k];
                    for row in table.chunks_exact(k) {
                        let v: f64 = row.iter().zip(cb).map(|(e, a)| e * a).sum();
                        sup = sup.max(v.abs());
                    }
                }
                out.push(DerivativeSample { t, alpha, p, sup });
            }
        }
    }
    Ok(out)
}

fn sample_x(length: f64, panels: usize) -> Vec<f64> {
    let mut xs = QuadGrid::composite(0.0, length, panels, FIT_ORDER).nodes;
    xs.push(0.0);
    xs.push(length);
    xs
}

/// Inserts the geometric midpoint between consecutive times.
pub fn refine_times(t_grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * t_grid.len());
    for w in t_grid.windows(2) {
        out.push(w[0]);
        out.push((w[0] * w[1]).sqrt());
    }
    out.extend(t_grid.last());
    out
}

/// Geometric time grid of `n` points on `[lo, hi]`.
pub fn geometric_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Largest `ρ` on the logarithmic grid for which the space-time bound holds
/// at every sampled `(x, t, α, p)`; re-verified at `ρ/2` on a grid twice as
/// dense in `x` and `t` by pointwise evaluation.
pub fn fit_rho(state0: &SpectralState, t_grid: &[f64], alpha_max: usize, p_max: usize) -> Result<SpaceTimeCert> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidArgument("time grid must lie in (0, 1]".into()));
    }
    let norm = state0.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("initial state is zero".into()));
    }
    let m = state0.basis().order();
    let xs = sample_x(state0.basis().length(), FIT_PANELS);
    let samples = derivative_sups(state0, t_grid, &xs, alpha_max, p_max)?;
    let grid = rho_grid();
    let holds = |rho: f64, s: &DerivativeSample| {
        s.sup == 0.0 || s.sup.ln() <= ln_spacetime_bound(rho, m, s.t, s.alpha, s.p, norm)
    };
    // Smaller ρ only enlarges the bound, so each sample has a threshold index.
    let mut worst = 0;
    for s in &samples {
        if !holds(grid[grid.len() - 1], s) {
            return Err(Error::AnalyticityFit { rho_min: RHO_MIN });
        }
        let (mut lo, mut hi) = (0usize, grid.len() - 1);
        if holds(grid[0], s) {
            continue;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if holds(grid[mid], s) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        worst = worst.max(hi);
    }
    let rho = grid[worst];
    let mut cert = SpaceTimeCert {
        rho,
        m,
        norm_u0: norm,
        alpha_max,
        p_max,
        violations: 0,
    };
    cert.violations = recheck(state0, &cert, t_grid, 0.5 * rho)?;
    if cert.violations > 0 {
        return Err(Error::AnalyticityFit { rho_min: 0.5 * rho });
    }
    Ok(cert)
}

/// Counts violations of the bound at `rho` on the refined grid, evaluating
/// each derivative pointwise through [`SpectralState::eval_component`].
pub fn recheck(state0: &SpectralState, cert: &SpaceTimeCert, t_grid: &[f64], rho: f64) -> Result<usize> {
    use crate::spectral::Component;
    let basis = state0.basis();
    let xs = sample_x(basis.length(), 2 * FIT_PANELS);
    let comps: &[Component] = if basis.is_coupled() {
        &[Component::U, Component::V]
    } else {
        &[Component::U]
    };
    let mut violations = 0;
    for t in refine_times(t_grid) {
        let st = state0.evolve(t)?;
        for p in 0..=cert.p_max {
            for alpha in 0..=cert.alpha_max {
                let bound = ln_spacetime_bound(rho, cert.m, t, alpha, p, cert.norm_u0);
                for &x in &xs {
                    for &c in comps {
                        let v = st.eval_component(c, x, alpha, p)?.abs();
                        if v > 0.0 && v.ln() > bound {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(violations)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho={rho} must be positive")));
    }
    if rho > 0.5 {
        return Err(Error::RhoTooLarge(rho));
    }
    Ok(())
}

fn factorial(n: usize) -> f64 {
    (2..=n).map(|k| k as f64).product()
}

/// `(8M(j+1)!ρ^{−j−1})^{1−2^{−j}} · f_sup^{2^{−j}}`: bound on `‖f^{(j)}‖_∞`
/// over `[0, 1]` from `‖f‖_∞` when `|f^{(k)}| ≤ M ρ^{−k} k!`.
pub fn chain_bound(m: f64, rho: f64, j: usize, f_sup: f64) -> Result<f64> {
    check_rho(rho)?;
    let w = 0.5f64.powi(j as i32);
    let c = 8.0 * m * factorial(j + 1) * rho.powi(-(j as i32) - 1);
    Ok(c.powf(1.0 - w) * f_sup.powf(w))
}

/// Step size of the induction step bounding `‖f^{(k)}‖` from `‖f^{(k−1)}‖`:
/// `ε = (2‖f^{(k−1)}‖ / (M(k+1)!ρ^{−k−1}))^{1/2}`. The step needs `ε ≤ 1/2`.
pub fn balancing_epsilon(m: f64, rho: f64, k: usize, prev_sup: f64) -> f64 {
    (2.0 * prev_sup / (m * factorial(k + 1) * rho.powi(-(k as i32) - 1))).sqrt()
}

/// `N·8(k+1)!(ρL)^{−(k+1)}·M^{1−θ/2^k}·E_avg^{θ/2^k}`: bound on `‖f^{(k)}‖_∞`
/// over an interval of length `L` from the average of `|f|` on a subset,
/// given `|f^{(m)}| ≤ M(2ρL)^{−m} m!` and the smallness pair `(N, θ)`.
pub fn chain_bound_scaled(m: f64, rho: f64, length: f64, e_avg: f64, k: usize, n: f64, theta: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(length > 0.0) || !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!("need L > 0 and θ ∈ (0,1], got L={length}, θ={theta}")));
    }
    let w = theta * 0.5f64.powi(k as i32);
    Ok(n * 8.0 * factorial(k + 1) * (rho * length).powi(-(k as i32) - 1) * m.powf(1.0 - w) * e_avg.powf(w))
}

/// `(8Mρ^{−|α|−1}Π(α_i+1)!)^{1−2^{−|α|}} · f_sup^{2^{−|α|}}` on the unit cube.
pub fn multi_chain_bound(m: f64, rho: f64, alpha: &[usize], f_sup: f64) -> Result<f64> {
    check_rho(rho)?;
    let total: usize = alpha.iter().sum();
    let w = 0.5f64.powi(total as i32);
    let prod: f64 = alpha.iter().map(|&a| factorial(a + 1)).product();
    let c = 8.0 * m * rho.powi(-(total as i32) - 1) * prod;
    Ok(c.powf(1.0 - w) * f_sup.powf(w))
}
