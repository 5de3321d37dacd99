//! Test-function families with exactly computable analyticity certificates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analyticity::AnalyticCert;
use crate::quadrature::{GaussLegendre, QuadGrid};
use crate::sampling::unit_sphere;
use crate::sets::{Interval, IntervalSet};

/// Grid size used to bracket extrema before Newton refinement.
const SUP_GRID: usize = 2048;
/// Per-interval quadrature used for averages over `ω` (32 panels × 16 nodes).
const AVG_PANELS: usize = 32;
const AVG_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `Σ_{j=1}^{modes} c_j sin(j·base_freq·x)` with `c` on the unit sphere.
    Sine { modes: usize, base_freq: f64 },
    /// Polynomials of the given degree with monomial coefficients on the unit sphere.
    Polynomial { degree: usize },
    /// Constants drawn from `(0, 1]`.
    Constant,
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::Sine { modes, base_freq } => format!("sine(modes={modes};freq={base_freq})"),
            Family::Polynomial { degree } => format!("poly(degree={degree})"),
            Family::Constant => "constant".into(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Member> {
        (0..n)
            .map(|_| match self {
                Family::Sine { modes, base_freq } => Member::Sine {
                    coeffs: unit_sphere(rng, *modes),
                    base_freq: *base_freq,
                },
                Family::Polynomial { degree } => Member::Poly {
                    coeffs: unit_sphere(rng, degree + 1),
                },
                Family::Constant => Member::Poly {
                    coeffs: vec![1.0 - rng.random::<f64>()],
                },
            })
            .collect()
    }
}

/// One member of a [`Family`].
#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    Sine { coeffs: Vec<f64>, base_freq: f64 },
    Poly { coeffs: Vec<f64> },
}

impl Member {
    /// `f^{(k)}(x)`.
    pub fn eval(&self, x: f64, k: usize) -> f64 {
        match self {
            Member::Sine { coeffs, base_freq } => coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let w = (j + 1) as f64 * base_freq;
                    let (s, co) = (w * x).sin_cos();
                    let d = match k % 4 {
                        0 => s,
                        1 => co,
                        2 => -s,
                        _ => -co,
                    };
                    c * w.powi(k as i32) * d
                })
                .sum(),
            Member::Poly { coeffs } => {
                let mut acc = 0.0;
                for i in (k..coeffs.len()).rev() {
                    let falling: f64 = ((i - k + 1)..=i).map(|v| v as f64).product();
                    acc = acc * x + coeffs[i] * falling;
                }
                acc
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Member {
        match self {
            Member::Sine { coeffs, base_freq } => Member::Sine {
                coeffs: coeffs.iter().map(|c| c * s).collect(),
                base_freq: *base_freq,
            },
            Member::Poly { coeffs } => Member::Poly {
                coeffs: coeffs.iter().map(|c| c * s).collect(),
            },
        }
    }

    /// `(M, ρ)` with `|f^{(k)}| ≤ M ρ^{-k} k!` on `domain`.
    ///
    /// Sine: `M = Σ|c_j|`, `ρ = 1/(top frequency)`. Polynomial of degree `d`
    /// on `[lo, hi]`: `M = Σ|c_i| X^i` with `X = max(1, |lo|, |hi|)` and `ρ = 1/d`.
    /// `ρ` is capped at 1.
    pub fn certificate(&self, domain: Interval) -> AnalyticCert {
        match self {
            Member::Sine { coeffs, base_freq } => {
                let top = coeffs.iter().rposition(|c| *c != 0.0).map_or(1, |j| j + 1);
                AnalyticCert {
                    m: coeffs.iter().map(|c| c.abs()).sum(),
                    rho: (1.0 / (top as f64 * base_freq)).min(1.0),
                }
            }
            Member::Poly { coeffs } => {
                let x = 1f64.max(domain.lo.abs()).max(domain.hi.abs());
                let degree = coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
                AnalyticCert {
                    m: coeffs.iter().enumerate().map(|(i, c)| c.abs() * x.powi(i as i32)).sum(),
                    rho: if degree <= 1 { 1.0 } else { 1.0 / degree as f64 },
                }
            }
        }
    }

    /// `sup_{domain} |f^{(k)}|`: grid bracketing, then Newton on `f^{(k+1)}`
    /// at each interior local maximum.
    pub fn sup_abs(&self, domain: Interval, k: usize) -> f64 {
        let h = domain.len() / SUP_GRID as f64;
        let xs: Vec<f64> = (0..=SUP_GRID).map(|i| domain.lo + i as f64 * h).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| self.eval(x, k).abs()).collect();
        let mut best = vals.iter().cloned().fold(0.0, f64::max);
        for i in 1..SUP_GRID {
            if vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] {
                let (lo, hi) = (xs[i - 1], xs[i + 1]);
                let mut x = xs[i];
                for _ in 0..30 {
                    let d1 = self.eval(x, k + 1);
                    let d2 = self.eval(x, k + 2);
                    if d2 == 0.0 {
                        break;
                    }
                    let next = (x - d1 / d2).clamp(lo, hi);
                    if (next - x).abs() < 1e-15 * (1.0 + x.abs()) {
                        x = next;
                        break;
                    }
                    x = next;
                }
                best = best.max(self.eval(x, k).abs());
            }
        }
        best
    }

    /// `(1/|ω|) ∫_ω |f|`.
    pub fn avg_abs(&self, omega: &IntervalSet) -> f64 {
        avg_abs_on(omega, |x| self.eval(x, 0))
    }
}

/// `(1/|ω|) ∫_ω |g|` with 512 Gauss–Legendre nodes per interval of `ω`.
pub fn avg_abs_on<F: Fn(f64) -> f64>(omega: &IntervalSet, g: F) -> f64 {
    let rule = GaussLegendre::new(AVG_ORDER);
    let total: f64 = omega
        .parts()
        .iter()
        .map(|p| QuadGrid::composite_with(&rule, p.lo, p.hi, AVG_PANELS).integrate(|x| g(x).abs()))
        .sum();
    total / omega.measure()
}
