//! Null controls by HUM duality, time-optimal horizons and the coupled
//! single-component observation constant.
//!
//! The state solves `∂_t u + A u = χ_D f`. For adjoint final data `φ_T` the
//! adjoint trajectory is `φ(t) = S(T−t)ᵀ φ_T` (the same semigroup for the
//! self-adjoint scalar evolutions, the transposed Galerkin generator for the
//! coupled system), and
//!
//! ```text
//! ⟨u(T), φ_T⟩ = ⟨u_0, φ(0)⟩ + ∫_D f φ.
//! ```
//!
//! The dual functional `J(φ_T) = ½(∫_D |φ|)² + ⟨u_0, φ(0)⟩` is convex. At its
//! minimizer `φ*`, with `λ = ∫_D |φ*|`, the control `f = λ·sgn(φ*)` gives
//! `⟨u(T), ψ_T⟩ = ∇J(φ*)·ψ_T = 0` for every `ψ_T`, so `u(T) = 0`, and
//! `λ² = −⟨u_0, φ*(0)⟩`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observability::{
    count_violations, minimize_observation_ratio, random_states, CertMethod, EmpiricalOptions, ObservabilityCert,
    ObservationOperator, QuadOptions,
};
use crate::sets::{IntervalSet, SpaceTimeSet};
use crate::spectral::{EigenBasis, EvolutionSpec};

#[derive(Debug, Clone, Copy)]
pub struct HumOptions {
    /// Accepted `‖u(T)‖/‖u_0‖`.
    pub tol: f64,
    /// Final smoothing of `|·|`, relative to `max |φ|`.
    pub smoothing: f64,
    pub max_newton: usize,
    pub quad: QuadOptions,
}

impl Default for HumOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            smoothing: 1e-8,
            max_newton: 100,
            quad: QuadOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    /// Control values at `nodes`.
    pub control: Vec<f64>,
    /// `(x, t)` quadrature nodes of `D`.
    pub nodes: Vec<(f64, f64)>,
    /// Quadrature weights of `nodes`.
    pub weights: Vec<f64>,
    /// Level `λ = ∫_D |φ*|`.
    pub lambda: f64,
    /// `‖u(T)‖/‖u_0‖`.
    pub residual: f64,
    pub iterations: usize,
    pub bangbang_fraction: f64,
    /// `|λ − √(−⟨u_0, φ*(0)⟩)| / λ`.
    pub duality_gap: f64,
    /// Optimal adjoint final datum.
    pub adjoint_final: Vec<f64>,
}

pub const CONTROL_CSV_HEADER: &str = "x, t, f";

impl ControlResult {
    pub fn csv_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.nodes
            .iter()
            .zip(&self.control)
            .map(|((x, t), f)| format!("{x}, {t}, {f}"))
    }

    pub fn max_abs_control(&self) -> f64 {
        self.control.iter().fold(0.0, |m, f| m.max(f.abs()))
    }
}

/// Smoothed pieces of `g(b) = Σ w |Φb|`.
struct Smoothed {
    u: DVector<f64>,
    r: DVector<f64>,
    g: f64,
}

fn smoothed(op: &ObservationOperator, b: &DVector<f64>, eps: f64) -> Smoothed {
    let u = &op.phi * b;
    let r = u.map(|v| (v * v + eps * eps).sqrt());
    let g = r.dot(&op.weights);
    Smoothed { u, r, g }
}

/// Minimizes `½ g_ε(b)² + c·b` by damped Newton with continuation in `ε`
/// down to `rel_eps · max|Φb|`. Returns the minimizer, the final `ε` and
/// the Newton iteration count.
pub fn minimize_dual(
    op: &ObservationOperator,
    c: &DVector<f64>,
    rel_eps: f64,
    max_newton: usize,
) -> Result<(DVector<f64>, f64, usize)> {
    let dim = c.len();
    let cn = c.norm();
    if cn == 0.0 {
        return Ok((DVector::zeros(dim), 0.0, 0));
    }
    let g_c = smoothed(op, c, 0.0).g;
    if !(g_c > 0.0) {
        return Err(Error::EmptyObservationSet);
    }
    // Best multiple of −c.
    let mut b = -c * (cn * cn / (g_c * g_c));
    let mut iterations = 0;
    let mut eps_rel = 1e-2;
    let mut eps;
    loop {
        eps = eps_rel * (&op.phi * &b).amax();
        let value = |b: &DVector<f64>| {
            let s = smoothed(op, b, eps);
            0.5 * s.g * s.g + c.dot(b)
        };
        for _ in 0..max_newton {
            iterations += 1;
            let s = smoothed(op, &b, eps);
            let du = s.u.component_div(&s.r).component_mul(&op.weights);
            let dg = op.phi.transpose() * &du;
            let grad = &dg * s.g + c;
            if grad.norm() <= 1e-14 * cn {
                break;
            }
            let curv = s.r.map(|r| eps * eps / (r * r * r)).component_mul(&op.weights);
            let wphi = DMatrix::from_fn(op.phi.nrows(), dim, |i, j| curv[i] * op.phi[(i, j)]);
            let h = op.phi.transpose() * wphi * s.g + &dg * dg.transpose();
            let mut mu = 1e-14 * h.trace().max(f64::MIN_POSITIVE);
            let dir = loop {
                let mut hd = h.clone();
                for i in 0..dim {
                    hd[(i, i)] += mu;
                }
                if let Some(ch) = hd.cholesky() {
                    break -ch.solve(&grad);
                }
                mu *= 100.0;
                if !mu.is_finite() {
                    return Err(Error::HumNotConverged { residual: f64::NAN });
                }
            };
            let v0 = 0.5 * s.g * s.g + c.dot(&b);
            let slope = grad.dot(&dir);
            // Newton decrement below round-off of the objective.
            if -slope <= 1e-24 * v0.abs() {
                break;
            }
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial = &b + &dir * step;
                if value(&trial) <= v0 + 1e-4 * step * slope {
                    b = trial;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if eps_rel <= rel_eps * (1.0 + 1e-9) {
            break;
        }
        eps_rel = (eps_rel * 0.1).max(rel_eps);
    }
    Ok((b, eps, iterations))
}

/// `S(T) u_0` reduced to the pairing with adjoint data.
fn final_free_state(basis: &EigenBasis, u0: &[f64], horizon: f64) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(basis.propagate(u0, horizon)?))
}

/// HUM null control for `u_0` (coefficients at time 0) on `D` over `(0, T)`.
pub fn hum_control(
    basis: &EigenBasis,
    d: &SpaceTimeSet,
    horizon: f64,
    u0: &[f64],
    opts: &HumOptions,
) -> Result<ControlResult> {
    if u0.len() != basis.state_dim() {
        return Err(Error::Dimension {
            expected: basis.state_dim(),
            got: u0.len(),
        });
    }
    let op = ObservationOperator::adjoint(basis, d, horizon, &opts.quad)?;
    let c = final_free_state(basis, u0, horizon)?;
    let norm0 = u0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (b, eps, iterations) = minimize_dual(&op, &c, opts.smoothing, opts.max_newton)?;
    let phi = &op.phi * &b;
    let lambda: f64 = phi.iter().zip(op.weights.iter()).map(|(p, w)| w * p.abs()).sum();
    // λ·sgn(φ*), smoothed only where |φ*| is below the smoothing scale.
    let control: Vec<f64> = if lambda == 0.0 {
        vec![0.0; phi.len()]
    } else {
        phi.iter().map(|p| lambda * p / (p * p + eps * eps).sqrt()).collect()
    };
    let forcing = DVector::from_iterator(control.len(), control.iter().zip(op.weights.iter()).map(|(f, w)| f * w));
    let final_state = &c + op.phi.transpose() * forcing;
    let residual = if norm0 == 0.0 { 0.0 } else { final_state.norm() / norm0 };
    let threshold = 1e-8 * phi.amax();
    let total: f64 = op.weights.sum();
    let active: f64 = phi
        .iter()
        .zip(op.weights.iter())
        .filter(|(p, _)| p.abs() > threshold)
        .map(|(_, w)| w)
        .sum();
    let bangbang_fraction = if lambda == 0.0 { 1.0 } else { active / total };
    let duality_gap = if lambda == 0.0 {
        0.0
    } else {
        (lambda - (-c.dot(&b)).max(0.0).sqrt()).abs() / lambda
    };
    if !(residual <= opts.tol) {
        return Err(Error::HumNotConverged { residual });
    }
    Ok(ControlResult {
        control,
        nodes: op.nodes,
        weights: op.weights.as_slice().to_vec(),
        lambda,
        residual,
        iterations,
        bangbang_fraction,
        duality_gap,
        adjoint_final: b.as_slice().to_vec(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TimeOptimalOptions {
    /// Stop when `(hi − lo) ≤ rel_width · hi`.
    pub rel_width: f64,
    pub cap: f64,
    pub hum: HumOptions,
}

impl Default for TimeOptimalOptions {
    fn default() -> Self {
        Self {
            rel_width: 1e-3,
            cap: 10.0,
            hum: HumOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeOptimalResult {
    #[serde(rename = "M")]
    pub m_bound: f64,
    #[serde(rename = "T_star_bracket")]
    pub t_star_bracket: (f64, f64),
    pub bangbang_fraction: f64,
    /// Minimal level at the accepted horizon.
    pub lambda: f64,
    pub trials: usize,
}

impl TimeOptimalResult {
    pub fn t_star(&self) -> f64 {
        0.5 * (self.t_star_bracket.0 + self.t_star_bracket.1)
    }
}

/// Shortest horizon at which `u_0` can be steered to zero by a control on
/// `ω × (0, T)` bounded by `M`: feasible iff the minimal HUM level is `≤ M`.
pub fn time_optimal(
    basis: &EigenBasis,
    omega: &IntervalSet,
    m_bound: f64,
    u0: &[f64],
    opts: &TimeOptimalOptions,
) -> Result<TimeOptimalResult> {
    if !(m_bound > 0.0) {
        return Err(Error::InvalidArgument(format!("control bound {m_bound} must be positive")));
    }
    if u0.iter().all(|x| *x == 0.0) {
        return Err(Error::InvalidArgument("time-optimal problem needs a nonzero initial state".into()));
    }
    let mut trials = 0;
    let mut level = |t: f64| -> Result<ControlResult> {
        trials += 1;
        let d = SpaceTimeSet::product(omega.clone(), IntervalSet::single(0.0, t)?);
        hum_control(basis, &d, t, u0, &opts.hum)
    };
    let at_cap = level(opts.cap)?;
    if at_cap.lambda > m_bound {
        return Err(Error::HorizonCapExceeded { cap: opts.cap });
    }
    let (mut lo, mut hi) = (0.0, opts.cap);
    let mut accepted = at_cap;
    while hi - lo > opts.rel_width * hi {
        let mid = 0.5 * (lo + hi);
        let r = level(mid)?;
        if r.lambda <= m_bound {
            hi = mid;
            accepted = r;
        } else {
            lo = mid;
        }
    }
    Ok(TimeOptimalResult {
        m_bound,
        t_star_bracket: (lo, hi),
        bangbang_fraction: accepted.bangbang_fraction,
        lambda: accepted.lambda,
        trials,
    })
}

/// Fails with [`Error::CouplingHypothesis`] when `b` vanishes on the grid.
pub fn check_coupling(basis: &EigenBasis) -> Result<()> {
    match basis.spec() {
        EvolutionSpec::Coupled2 { b, .. } => {
            if basis.grid().nodes.iter().all(|&x| b.eval(x) == 0.0) {
                Err(Error::CouplingHypothesis)
            } else {
                Ok(())
            }
        }
        _ => Err(Error::InvalidArgument("single-component observation needs a coupled system".into())),
    }
}

/// Empirical constant of `‖(u, v)(T)‖ ≤ N ∫_D |u|` over the `2K`-dimensional
/// coefficient sphere, checked on `validation` fresh random states.
pub fn coupled_single_observation<R: Rng>(
    basis: &Arc<EigenBasis>,
    d: &SpaceTimeSet,
    horizon: f64,
    opts: &EmpiricalOptions,
    validation: usize,
    rng: &mut R,
) -> Result<ObservabilityCert> {
    check_coupling(basis)?;
    let op = ObservationOperator::interior(basis, d, &opts.quad)?;
    let (ratio, spread, _) = minimize_observation_ratio(basis, &op, horizon, opts, rng)?;
    let mut cert = ObservabilityCert {
        method: CertMethod::Empirical,
        m: 1,
        k: basis.len(),
        horizon,
        set_descriptor: d.descriptor(),
        n: f64::NAN,
        theta: f64::NAN,
        q: f64::NAN,
        l1_minus_l2: f64::NAN,
        lebesgue_point: None,
        l1: None,
        ln_n_obs: -ratio.ln(),
        violations: 0,
        restart_spread: spread,
    };
    let states = random_states(rng, basis.state_dim(), validation);
    cert.violations = count_violations(&cert, basis, &op, &states)?;
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng;
    use crate::spectral::{build_basis, Coefficient};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn heat(k: usize) -> EigenBasis {
        build_basis(&EvolutionSpec::PurePower { m: 1, length: PI }, k).unwrap()
    }

    fn full(t: f64) -> SpaceTimeSet {
        SpaceTimeSet::product(IntervalSet::single(0.0, PI).unwrap(), IntervalSet::single(0.0, t).unwrap())
    }

    #[test]
    fn zero_datum_gives_zero_control() {
        let r = hum_control(&heat(3), &full(1.0), 1.0, &[0.0; 3], &HumOptions::default()).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.control.iter().all(|f| *f == 0.0));
    }

    #[test]
    fn single_mode_matches_scalar_scan() {
        let b = heat(1);
        let t: f64 = 0.7;
        let a = 0.8;
        let r = hum_control(&b, &full(t), t, &[a], &HumOptions::default()).unwrap();
        // G = ∫_0^T ∫_Ω |e_1| e^{−(T−s)}: J(β) = ½G²β² + e^{−T}aβ.
        let g = 2.0 * (2.0 / PI).sqrt() * (1.0 - (-t).exp());
        let c = (-t).exp() * a;
        let (mut best, mut best_j) = (0.0, f64::INFINITY);
        let n = 200_000;
        for i in 0..=n {
            let beta = -2.0 * c / (g * g) * i as f64 / n as f64;
            let j = 0.5 * g * g * beta * beta + c * beta;
            if j < best_j {
                best_j = j;
                best = beta;
            }
        }
        assert_relative_eq!(r.adjoint_final[0], best, max_relative = 1e-5);
        assert_relative_eq!(r.lambda, c / g, max_relative = 1e-6);
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn time_optimal_single_mode_closed_form() {
        let b = heat(1);
        let omega = IntervalSet::single(0.0, PI).unwrap();
        let opts = TimeOptimalOptions { rel_width: 1e-9, ..Default::default() };
        let r = time_optimal(&b, &omega, 1.0, &[2.0], &opts).unwrap();
        let mc = 2.0 * (2.0f64 / PI).sqrt();
        let y = mc / (2.0 + mc);
        assert_relative_eq!(r.t_star(), -y.ln(), max_relative = 1e-6);
    }

    #[test]
    fn horizon_cap() {
        let b = heat(1);
        let omega = IntervalSet::single(0.0, 0.1).unwrap();
        let err = time_optimal(&b, &omega, 1e-9, &[1.0], &TimeOptimalOptions::default()).unwrap_err();
        assert_eq!(err, Error::HorizonCapExceeded { cap: 10.0 });
    }

    #[test]
    fn coupling_hypothesis() {
        let spec = EvolutionSpec::Coupled2 {
            length: PI,
            a: Coefficient::Constant(0.0),
            b: Coefficient::Constant(0.0),
            c: Coefficient::Constant(0.0),
            d: Coefficient::Constant(0.0),
            truncation: 4,
        };
        let basis = Arc::new(build_basis(&spec, 4).unwrap());
        let e = coupled_single_observation(&basis, &full(1.0), 1.0, &EmpiricalOptions::default(), 10, &mut rng(1));
        assert_eq!(e.unwrap_err(), Error::CouplingHypothesis);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn control_respects_level_and_steers(seed in 0u64..1000, scale in 1e-2f64..1e2) {
                let b = heat(4);
                let d = SpaceTimeSet::product(IntervalSet::single(0.4, 1.6).unwrap(), IntervalSet::single(0.3, 1.0).unwrap());
                let u0: Vec<f64> = crate::sampling::unit_sphere(&mut rng(seed), 4).iter().map(|x| x * scale).collect();
                let r = hum_control(&b, &d, 1.0, &u0, &HumOptions::default()).unwrap();
                prop_assert!(r.max_abs_control() <= r.lambda * (1.0 + 1e-12));
                prop_assert!(r.residual.is_finite() && r.residual <= 1e-3);
                prop_assert!(r.duality_gap <= 1e-6);
            }
        }
    }
}
