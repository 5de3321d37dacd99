//! Eigenbases of `(-d²/dx²)^m` on `(0, length)` and exact evolution.
//!
//! `m = 1` uses Dirichlet sine modes. `m = 2` uses clamped modes
//! (`e = e' = 0` at both ends) whose frequencies are the roots of
//! `cos β cosh β = 1`. The coupled 2×2 system is realized by Galerkin
//! projection onto the sine basis and a dense matrix exponential.
//!
//! A [`SpectralState`] stores the expansion coefficients *at its own time*:
//! evolving a state rescales (or propagates) the coefficients and advances
//! `time`. For the coupled system the coefficient vector is laid out as the
//! `u`-block (`K` entries) followed by the `v`-block (`K` entries).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::quadrature::QuadGrid;

/// Highest spatial derivative order the mode evaluators support.
pub const MAX_DERIVATIVE: usize = 16;

/// Total quadrature nodes used for Gram matrices and Galerkin projections.
const GRID_PANELS: usize = 256;
const GRID_ORDER: usize = 16;

/// A coefficient function of the coupled system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Constant(f64),
    /// `c_0 + c_1 x + c_2 x² + …`
    Polynomial(Vec<f64>),
}

impl Coefficient {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
        }
    }
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvolutionSpec {
    /// `∂_t u + (-1)^m ∂_x^{2m} u = 0` with Dirichlet (`m = 1`) or clamped (`m = 2`) ends.
    PurePower { m: u32, length: f64 },
    /// `∂_t u - u'' + a u + b v = 0`, `∂_t v - v'' + c u + d v = 0`, Dirichlet ends.
    Coupled2 {
        length: f64,
        #[serde(default)]
        a: Coefficient,
        #[serde(default)]
        b: Coefficient,
        #[serde(default)]
        c: Coefficient,
        #[serde(default)]
        d: Coefficient,
        truncation: usize,
    },
}

impl EvolutionSpec {
    pub fn length(&self) -> f64 {
        match self {
            EvolutionSpec::PurePower { length, .. } | EvolutionSpec::Coupled2 { length, .. } => *length,
        }
    }

    /// Order parameter `m` (the coupled system is second order).
    pub fn order(&self) -> u32 {
        match self {
            EvolutionSpec::PurePower { m, .. } => *m,
            EvolutionSpec::Coupled2 { .. } => 1,
        }
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self, EvolutionSpec::Coupled2 { .. })
    }
}

#[derive(Debug, Clone)]
enum ModeShape {
    Sine,
    /// `C·[P e^{z-β} + Q e^{-z} - cos z + σ sin z]`, `z = w x`.
    Clamped { beta: f64, sigma: f64, p: f64, q: f64 },
}

#[derive(Debug, Clone)]
enum Dynamics {
    Diagonal,
    /// Galerkin generator `G` with `dU/dt = -G U`.
    Coupled { generator: DMatrix<f64> },
}

/// Orthonormal eigenpairs with the quadrature grid they were normalized on.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    spec: EvolutionSpec,
    freqs: Vec<f64>,
    eigvals: Vec<f64>,
    shapes: Vec<ModeShape>,
    norms: Vec<f64>,
    grid: QuadGrid,
    dynamics: Dynamics,
}

/// Normalized residual `|cos β − 1/cosh β|` of the clamped characteristic equation.
pub fn clamped_residual(beta: f64) -> f64 {
    (beta.cos() - 1.0 / beta.cosh()).abs()
}

/// j-th root (1-based) of `cos β cosh β = 1`, bracketed in `[jπ, (j+1)π]`.
pub fn clamped_root(j: usize) -> Result<f64> {
    let f = |b: f64| b.cos() - 1.0 / b.cosh();
    let mut lo = j as f64 * PI;
    let mut hi = (j + 1) as f64 * PI;
    let (mut flo, fhi) = (f(lo), f(hi));
    if j == 0 || flo * fhi > 0.0 {
        return Err(Error::RootBracketing { index: j });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || hi - lo < 4.0 * f64::EPSILON * mid {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn clamped_shape(beta: f64) -> ModeShape {
    let eb = (-beta).exp();
    let denom = 1.0 - eb * eb - 2.0 * beta.sin() * eb;
    let sigma = (1.0 + eb * eb - 2.0 * beta.cos() * eb) / denom;
    // (1 - σ)/2 · e^β without cancellation.
    let p = (beta.cos() - beta.sin() - eb) / denom;
    let q = 0.5 * (1.0 + sigma);
    ModeShape::Clamped { beta, sigma, p, q }
}

/// `d^k/dz^k cos z` and `d^k/dz^k sin z`.
fn trig_derivs(z: f64, k: usize) -> (f64, f64) {
    let (s, c) = z.sin_cos();
    match k % 4 {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

/// Builds `K` ascending eigenpairs of the spatial operator.
pub fn build_basis(spec: &EvolutionSpec, k: usize) -> Result<EigenBasis> {
    if k == 0 {
        return Err(Error::EmptyBasis);
    }
    let length = spec.length();
    if !(length > 0.0) {
        return Err(Error::InvalidArgument(format!("domain length {length} must be positive")));
    }
    let grid = QuadGrid::composite(0.0, length, GRID_PANELS, GRID_ORDER);
    let (freqs, shapes): (Vec<f64>, Vec<ModeShape>) = match spec {
        EvolutionSpec::PurePower { m: 1, .. } | EvolutionSpec::Coupled2 { .. } => {
            (1..=k).map(|j| (j as f64 * PI / length, ModeShape::Sine)).unzip()
        }
        EvolutionSpec::PurePower { m: 2, .. } => {
            let mut f = Vec::with_capacity(k);
            let mut s = Vec::with_capacity(k);
            for j in 1..=k {
                let beta = clamped_root(j)?;
                f.push(beta / length);
                s.push(clamped_shape(beta));
            }
            (f, s)
        }
        EvolutionSpec::PurePower { m, .. } => {
            return Err(Error::InvalidArgument(format!("order m={m} unsupported (m ∈ {{1,2}})")))
        }
    };
    let order = spec.order() as i32;
    let eigvals = freqs.iter().map(|w| w.powi(2 * order)).collect();
    let mut basis = EigenBasis {
        spec: spec.clone(),
        freqs,
        eigvals,
        shapes,
        norms: vec![1.0; k],
        grid,
        dynamics: Dynamics::Diagonal,
    };
    for j in 0..k {
        let n2 = basis.grid.integrate(|x| basis.mode(j, x, 0).powi(2));
        basis.norms[j] = n2.sqrt();
    }
    if let EvolutionSpec::Coupled2 { a, b, c, d, .. } = spec {
        basis.dynamics = Dynamics::Coupled {
            generator: basis.coupled_generator([a, b, c, d]),
        };
    }
    Ok(basis)
}

impl EigenBasis {
    pub fn spec(&self) -> &EvolutionSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Length of a state's coefficient vector (`2K` for the coupled system).
    pub fn state_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::Diagonal => self.len(),
            Dynamics::Coupled { .. } => 2 * self.len(),
        }
    }

    pub fn length(&self) -> f64 {
        self.spec.length()
    }

    pub fn order(&self) -> u32 {
        self.spec.order()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self.dynamics, Dynamics::Coupled { .. })
    }

    /// Galerkin generator of the coupled system, if any.
    pub fn generator(&self) -> Option<&DMatrix<f64>> {
        match &self.dynamics {
            Dynamics::Coupled { generator } => Some(generator),
            Dynamics::Diagonal => None,
        }
    }

    /// `e_j^{(order)}(x)` for the 0-based mode index `j`.
    pub fn mode(&self, j: usize, x: f64, order: usize) -> f64 {
        let w = self.freqs[j];
        let scale = w.powi(order as i32) / self.norms[j];
        match self.shapes[j] {
            ModeShape::Sine => {
                let (_, s) = trig_derivs(w * x, order);
                scale * s
            }
            ModeShape::Clamped { beta, sigma, p, q } => {
                let z = w * x;
                let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
                let (c, s) = trig_derivs(z, order);
                scale * (p * (z - beta).exp() + sign * q * (-z).exp() - c + sigma * s)
            }
        }
    }

    pub fn check_order(&self, order: usize) -> Result<()> {
        if order > MAX_DERIVATIVE {
            return Err(Error::DerivativeOrder {
                order,
                max: MAX_DERIVATIVE,
            });
        }
        Ok(())
    }

    /// Sup norm of each mode's `order`-th derivative, sampled on the grid
    /// plus the endpoints.
    pub fn mode_sup(&self, j: usize, order: usize) -> f64 {
        let ends = [0.0, self.length()];
        self.grid
            .nodes
            .iter()
            .chain(ends.iter())
            .map(|&x| self.mode(j, x, order).abs())
            .fold(0.0, f64::max)
    }

    /// Gram matrix `⟨e_i, e_j⟩` on the quadrature grid.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.len();
        let vals = self.grid_values(0);
        let mut g = DMatrix::zeros(k, k);
        for (q, &w) in self.grid.weights.iter().enumerate() {
            for i in 0..k {
                let wi = w * vals[(q, i)];
                for j in i..k {
                    g[(i, j)] += wi * vals[(q, j)];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    /// Matrix of mode derivatives at the grid nodes (rows: nodes).
    pub fn grid_values(&self, order: usize) -> DMatrix<f64> {
        let nodes = &self.grid.nodes;
        DMatrix::from_fn(nodes.len(), self.len(), |q, j| self.mode(j, nodes[q], order))
    }

    fn coupled_generator(&self, coefs: [&Coefficient; 4]) -> DMatrix<f64> {
        let k = self.len();
        let vals = self.grid_values(0);
        let mut g = DMatrix::zeros(2 * k, 2 * k);
        for (block, coef) in coefs.iter().enumerate() {
            let (r0, c0) = [(0, 0), (0, k), (k, 0), (k, k)][block];
            for (q, (&x, &w)) in self.grid.nodes.iter().zip(&self.grid.weights).enumerate() {
                let cw = coef.eval(x) * w;
                if cw == 0.0 {
                    continue;
                }
                for i in 0..k {
                    let a = cw * vals[(q, i)];
                    for j in 0..k {
                        g[(r0 + i, c0 + j)] += a * vals[(q, j)];
                    }
                }
            }
        }
        for i in 0..k {
            g[(i, i)] += self.eigvals[i];
            g[(k + i, k + i)] += self.eigvals[i];
        }
        g
    }

    /// Propagator `S(dt)` acting on coefficient vectors.
    pub fn propagator(&self, dt: f64) -> Result<DMatrix<f64>> {
        if dt < 0.0 {
            return Err(Error::BackwardEvolution(dt));
        }
        Ok(match &self.dynamics {
            Dynamics::Diagonal => DMatrix::from_diagonal(&DVector::from_iterator(
                self.len(),
                self.eigvals.iter().map(|l| (-dt * l).exp()),
            )),
            Dynamics::Coupled { generator } => expm(&(generator * (-dt))),
        })
    }

    /// Applies `S(dt)` to a coefficient vector.
    pub fn propagate(&self, coeffs: &[f64], dt: f64) -> Result<Vec<f64>> {
        if dt < 0.0 {
            return Err(Error::BackwardEvolution(dt));
        }
        if coeffs.len() != self.state_dim() {
            return Err(Error::Dimension {
                expected: self.state_dim(),
                got: coeffs.len(),
            });
        }
        Ok(match &self.dynamics {
            Dynamics::Diagonal => coeffs
                .iter()
                .zip(&self.eigvals)
                .map(|(a, l)| a * (-dt * l).exp())
                .collect(),
            Dynamics::Coupled { generator } => {
                let s = expm(&(generator * (-dt)));
                (s * DVector::from_column_slice(coeffs)).as_slice().to_vec()
            }
        })
    }

    /// Coefficients of `(-A)^p U`, i.e. of `∂_t^p u`.
    pub fn time_derivative_coeffs(&self, coeffs: &[f64], p: usize) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Diagonal => coeffs
                .iter()
                .zip(&self.eigvals)
                .map(|(a, l)| a * (-l).powi(p as i32))
                .collect(),
            Dynamics::Coupled { generator } => {
                let mut v = DVector::from_column_slice(coeffs);
                for _ in 0..p {
                    v = -(generator * v);
                }
                v.as_slice().to_vec()
            }
        }
    }

    /// `Σ_j c_j e_j^{(order)}(x)` over one block of coefficients.
    pub fn synthesize(&self, block: &[f64], x: f64, order: usize) -> f64 {
        block
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| c * self.mode(j, x, order))
            .sum()
    }
}

/// Coefficient vector at a given time on a shared basis.
#[derive(Debug, Clone)]
pub struct SpectralState {
    coeffs: Vec<f64>,
    basis: Arc<EigenBasis>,
    time: f64,
}

/// Which component of a coupled state to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U,
    V,
}

/// Boundary trace kinds at an endpoint of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// `∂_ν u''`.
    NormalLaplacian,
    /// `u''`.
    Laplacian,
    /// `∂_ν u`.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Left,
    Right,
}

impl Endpoint {
    /// Outward normal: `-1` at `0`, `+1` at `length`.
    pub fn normal(self) -> f64 {
        match self {
            Endpoint::Left => -1.0,
            Endpoint::Right => 1.0,
        }
    }
}

impl SpectralState {
    pub fn new(basis: Arc<EigenBasis>, coeffs: Vec<f64>, time: f64) -> Result<Self> {
        if coeffs.len() != basis.state_dim() {
            return Err(Error::Dimension {
                expected: basis.state_dim(),
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !(time >= 0.0) {
            return Err(Error::InvalidArgument("state must be finite at a nonnegative time".into()));
        }
        Ok(Self { coeffs, basis, time })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// `L²` norm (product norm for the coupled system).
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
            basis: self.basis.clone(),
            time: self.time,
        }
    }

    pub fn evolve(&self, dt: f64) -> Result<Self> {
        let coeffs = self.basis.propagate(&self.coeffs, dt)?;
        Ok(Self {
            coeffs,
            basis: self.basis.clone(),
            time: self.time + dt,
        })
    }

    fn block(&self, comp: Component) -> &[f64] {
        let k = self.basis.len();
        match comp {
            Component::U => &self.coeffs[..k],
            Component::V => &self.coeffs[k..2 * k],
        }
    }

    /// `∂_x^α ∂_t^p u(x, t)` at the state's time.
    pub fn eval_deriv(&self, x: f64, alpha: usize, p: usize) -> Result<f64> {
        self.eval_component(Component::U, x, alpha, p)
    }

    pub fn eval_component(&self, comp: Component, x: f64, alpha: usize, p: usize) -> Result<f64> {
        self.basis.check_order(alpha)?;
        if !(x >= 0.0 && x <= self.basis.length()) {
            return Err(Error::InvalidArgument(format!("x={x} outside the domain")));
        }
        if comp == Component::V && !self.basis.is_coupled() {
            return Err(Error::InvalidArgument("scalar state has no v component".into()));
        }
        let k = self.basis.len();
        if p == 0 {
            return Ok(self.basis.synthesize(self.block(comp), x, alpha));
        }
        let d = self.basis.time_derivative_coeffs(&self.coeffs, p);
        let block = match comp {
            Component::U => &d[..k],
            Component::V => &d[k..2 * k],
        };
        Ok(self.basis.synthesize(block, x, alpha))
    }

    /// Boundary trace with the outward-normal sign convention.
    pub fn boundary_trace(&self, endpoint: Endpoint, kind: TraceKind) -> Result<f64> {
        let x = match endpoint {
            Endpoint::Left => 0.0,
            Endpoint::Right => self.basis.length(),
        };
        Ok(match kind {
            TraceKind::Laplacian => self.eval_deriv(x, 2, 0)?,
            TraceKind::NormalLaplacian => endpoint.normal() * self.eval_deriv(x, 3, 0)?,
            TraceKind::Normal => endpoint.normal() * self.eval_deriv(x, 1, 0)?,
        })
    }

    /// `"t, a_1, …, a_K"` (coupled: `u`-block then `v`-block).
    pub fn to_csv_line(&self) -> String {
        let mut s = format!("{}", self.time);
        for c in &self.coeffs {
            s.push_str(", ");
            s.push_str(&format!("{c}"));
        }
        s
    }

    pub fn from_csv_line(basis: Arc<EigenBasis>, line: &str) -> Result<Self> {
        let vals = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad state line: {e}")))?;
        let (&t, coeffs) = vals
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("empty state line".into()))?;
        Self::new(basis, coeffs.to_vec(), t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn heat_pi(k: usize) -> Arc<EigenBasis> {
        Arc::new(build_basis(&EvolutionSpec::PurePower { m: 1, length: PI }, k).unwrap())
    }

    fn beam(length: f64, k: usize) -> Arc<EigenBasis> {
        Arc::new(build_basis(&EvolutionSpec::PurePower { m: 2, length }, k).unwrap())
    }

    /// Independent bisection on `cos w cosh w - 1` over a caller-chosen bracket.
    fn oracle_root(mut lo: f64, mut hi: f64) -> f64 {
        let g = |w: f64| w.cos() * w.cosh() - 1.0;
        let glo = g(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (g(mid) > 0.0) == (glo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sine_basis_closed_form() {
        let b = heat_pi(3);
        assert_eq!(b.freqs(), &[1.0, 2.0, 3.0]);
        for j in 0..3 {
            for &x in &[0.3, 1.1, 2.9] {
                let want = (2.0 / PI).sqrt() * ((j + 1) as f64 * x).sin();
                assert_abs_diff_eq!(b.mode(j, x, 0), want, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn first_clamped_frequency() {
        let b = beam(1.0, 1);
        // cos·cosh − 1 changes sign on (3π/2, 2π).
        let oracle = oracle_root(1.5 * PI, 2.0 * PI);
        assert_abs_diff_eq!(b.freqs()[0], oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(b.freqs()[0], 4.7300408, epsilon = 1e-7);
    }

    #[test]
    fn clamped_frequencies_approach_half_integers() {
        let b = beam(1.0, 8);
        for (j, &w) in b.freqs().iter().enumerate() {
            let j = j + 1;
            let asym = (j as f64 + 0.5) * PI;
            let oracle = oracle_root(asym - 0.5, asym + 0.5);
            assert_abs_diff_eq!(w, oracle, epsilon = 1e-11);
            // |β_j − (j+½)π| ≈ 2 e^{−(j+½)π}
            assert!((w - asym).abs() <= 2.1 * (-asym).exp() + 1e-15, "j={j}");
            if j >= 5 {
                assert!((w - asym).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_basis_rejected() {
        assert_eq!(
            build_basis(&EvolutionSpec::PurePower { m: 1, length: 1.0 }, 0).unwrap_err(),
            Error::EmptyBasis
        );
        assert!(build_basis(&EvolutionSpec::PurePower { m: 3, length: 1.0 }, 2).is_err());
    }

    #[test]
    fn clamped_boundary_and_residual() {
        let b = beam(1.0, 40);
        for j in 0..40 {
            for &x in &[0.0, 1.0] {
                assert!(b.mode(j, x, 0).abs() < 1e-8, "j={j} e({x})");
                assert!(b.mode(j, x, 1).abs() < 1e-8 * b.freqs()[j], "j={j} e'({x})");
            }
            let w4 = b.eigvals()[j];
            let sup = b.mode_sup(j, 0);
            let worst = b
                .grid()
                .nodes
                .iter()
                .step_by(7)
                .map(|&x| (b.mode(j, x, 4) - w4 * b.mode(j, x, 0)).abs())
                .fold(0.0, f64::max);
            assert!(worst / (w4 * sup) < 1e-6, "j={j}");
        }
    }

    #[test]
    fn gram_is_identity() {
        for b in [heat_pi(40), beam(1.0, 40), beam(PI, 40)] {
            let g = b.gram();
            let dev = (g - DMatrix::identity(40, 40)).abs().max();
            assert!(dev < 1e-8, "gram deviation {dev}");
        }
    }

    #[test]
    fn single_mode_decay_and_semigroup() {
        let b = heat_pi(3);
        let s = SpectralState::new(b.clone(), vec![1.0, 0.0, 0.0], 0.0).unwrap();
        let t = 0.37;
        assert_abs_diff_eq!(s.evolve(t).unwrap().norm(), (-t).exp(), epsilon = 1e-15);
        let s = SpectralState::new(b, vec![0.3, -1.2, 0.8], 0.0).unwrap();
        let a = s.evolve(0.2).unwrap().evolve(0.5).unwrap();
        let c = s.evolve(0.7).unwrap();
        for (x, y) in a.coeffs().iter().zip(c.coeffs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(a.time(), 0.7, epsilon = 1e-15);
        assert_eq!(s.evolve(-0.1).unwrap_err(), Error::BackwardEvolution(-0.1));
    }

    #[test]
    fn derivative_examples() {
        let b = heat_pi(4);
        let s = SpectralState::new(b.clone(), vec![1.0, 0.0, 0.0, 0.0], 0.0)
            .unwrap()
            .evolve(0.4)
            .unwrap();
        assert_abs_diff_eq!(s.eval_deriv(PI / 2.0, 1, 0).unwrap(), 0.0, epsilon = 1e-15);
        let v0 = s.eval_deriv(1.0, 0, 0).unwrap();
        let v1 = s.eval_deriv(1.0, 0, 1).unwrap();
        assert_abs_diff_eq!(v1, -v0, epsilon = 1e-15);
        assert!(matches!(
            s.eval_deriv(1.0, MAX_DERIVATIVE + 1, 0),
            Err(Error::DerivativeOrder { .. })
        ));
    }

    #[test]
    fn time_derivative_matches_finite_difference() {
        let b = heat_pi(6);
        let coeffs = vec![0.4, -0.3, 0.25, 0.1, -0.6, 0.2];
        let s = SpectralState::new(b, coeffs, 0.0).unwrap();
        let t = 0.3;
        let h = 1e-5;
        for &x in &[0.4, 1.3, 2.2] {
            let exact = s.evolve(t).unwrap().eval_deriv(x, 0, 1).unwrap();
            let fd = (s.evolve(t + h).unwrap().eval_deriv(x, 0, 0).unwrap()
                - s.evolve(t - h).unwrap().eval_deriv(x, 0, 0).unwrap())
                / (2.0 * h);
            assert!((exact - fd).abs() / exact.abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn sine_normal_trace_closed_form() {
        let b = heat_pi(3);
        let t = 0.2;
        let s = SpectralState::new(b, vec![0.0, 0.7, 0.0], 0.0).unwrap().evolve(t).unwrap();
        let want = -(2.0 / PI).sqrt() * 2.0 * (-4.0 * t).exp() * 0.7;
        assert_abs_diff_eq!(s.boundary_trace(Endpoint::Left, TraceKind::Normal).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn clamped_second_derivative_trace_against_fd() {
        let b = beam(1.0, 2);
        let s = SpectralState::new(b.clone(), vec![1.0, 0.0], 0.0).unwrap();
        assert!(s.boundary_trace(Endpoint::Left, TraceKind::Laplacian).unwrap().abs() > 1.0);
        assert!(s.eval_deriv(0.0, 0, 0).unwrap().abs() < 1e-12);
        assert!(s.eval_deriv(0.0, 1, 0).unwrap().abs() < 1e-10);
        // Second-order one-sided difference of the first derivative at 0.
        let h = 1e-5;
        let d1 = |x: f64| b.mode(0, x, 1);
        let fd = (-3.0 * d1(0.0) + 4.0 * d1(h) - d1(2.0 * h)) / (2.0 * h);
        let exact = s.boundary_trace(Endpoint::Left, TraceKind::Laplacian).unwrap();
        assert!((fd - exact).abs() / exact.abs() < 1e-6);
    }

    #[test]
    fn coupled_decoupled_reduction() {
        let spec = EvolutionSpec::Coupled2 {
            length: PI,
            a: Coefficient::Constant(0.0),
            b: Coefficient::Constant(0.0),
            c: Coefficient::Constant(0.0),
            d: Coefficient::Constant(0.0),
            truncation: 5,
        };
        let cb = Arc::new(build_basis(&spec, 5).unwrap());
        let hb = heat_pi(5);
        let u0 = vec![0.5, -0.2, 0.3, 0.0, 0.1];
        let v0 = vec![-0.4, 0.6, 0.0, 0.2, -0.3];
        let coupled = SpectralState::new(cb, [u0.clone(), v0.clone()].concat(), 0.0)
            .unwrap()
            .evolve(0.3)
            .unwrap();
        let hu = SpectralState::new(hb.clone(), u0, 0.0).unwrap().evolve(0.3).unwrap();
        let hv = SpectralState::new(hb, v0, 0.0).unwrap().evolve(0.3).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(coupled.coeffs()[j], hu.coeffs()[j], epsilon = 1e-12);
            assert_abs_diff_eq!(coupled.coeffs()[5 + j], hv.coeffs()[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn coupled_triangular_v_block_is_free_heat() {
        let spec = EvolutionSpec::Coupled2 {
            length: PI,
            a: Coefficient::Constant(0.0),
            b: Coefficient::Polynomial(vec![1.0, 0.5]),
            c: Coefficient::Constant(0.0),
            d: Coefficient::Constant(0.0),
            truncation: 6,
        };
        let cb = Arc::new(build_basis(&spec, 6).unwrap());
        let coeffs: Vec<f64> = (0..12).map(|i| ((i * 5 % 7) as f64 - 3.0) / 4.0).collect();
        let s = SpectralState::new(cb, coeffs.clone(), 0.0).unwrap().evolve(0.25).unwrap();
        for j in 0..6 {
            let lam = ((j + 1) * (j + 1)) as f64;
            assert_abs_diff_eq!(s.coeffs()[6 + j], coeffs[6 + j] * (-0.25 * lam).exp(), epsilon = 1e-12);
        }
        // u-component time derivative obeys ∂_t u = u'' - b v.
        let x = 1.1;
        let ut = s.eval_component(Component::U, x, 0, 1).unwrap();
        let uxx = s.eval_component(Component::U, x, 2, 0).unwrap();
        let v = s.eval_component(Component::V, x, 0, 0).unwrap();
        let proj_bv: f64 = {
            // Galerkin projection of b·v onto the six sine modes, evaluated at x.
            let b = s.basis();
            (0..6)
                .map(|i| {
                    let c = b.grid().integrate(|y| {
                        (1.0 + 0.5 * y) * s.eval_component(Component::V, y, 0, 0).unwrap() * b.mode(i, y, 0)
                    });
                    c * b.mode(i, x, 0)
                })
                .sum()
        };
        assert_abs_diff_eq!(ut, uxx - proj_bv, epsilon = 1e-9);
        assert!(v.abs() > 0.0);
    }

    #[test]
    fn csv_line_round_trip() {
        let b = heat_pi(3);
        let s = SpectralState::new(b.clone(), vec![0.125, -2.5, 3.0], 0.75).unwrap();
        let line = s.to_csv_line();
        assert_eq!(line, "0.75, 0.125, -2.5, 3");
        let back = SpectralState::from_csv_line(b, &line).unwrap();
        assert_eq!(back.coeffs(), s.coeffs());
        assert_eq!(back.time(), 0.75);
    }

    mod props {
        use super::*;
        use crate::sampling::unit_sphere;
        use proptest::prelude::*;
        use rand::SeedableRng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn semigroup_composes(m in 1u32..3, seed in 0u64..1000, t in 0.0f64..1.0, s in 0.0f64..1.0) {
                let b = build_basis(&EvolutionSpec::PurePower { m, length: 1.5 }, 6).unwrap();
                let a = unit_sphere(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), 6);
                let direct = b.propagate(&a, t + s).unwrap();
                let composed = b.propagate(&b.propagate(&a, s).unwrap(), t).unwrap();
                for (x, y) in direct.iter().zip(&composed) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn energy_never_grows(seed in 0u64..1000, t in 0.0f64..2.0, dt in 0.0f64..1.0) {
                let b = heat_pi(8);
                let a = unit_sphere(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), 8);
                let s = SpectralState::new(b, a, 0.0).unwrap();
                let n1 = s.evolve(t).unwrap().norm();
                let n2 = s.evolve(t + dt).unwrap().norm();
                prop_assert!(n2 <= n1 * (1.0 + 1e-14));
            }
        }
    }
}
