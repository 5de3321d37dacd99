//! Composite Gauss–Legendre quadrature.
//!
//! Nodes of the reference rule on `[-1, 1]` are found by Newton iteration on
//! the three-term Legendre recurrence; composite rules tile an interval with
//! equal panels, each carrying a copy of the reference rule.

use std::f64::consts::PI;

/// A Gauss–Legendre rule on the reference interval `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi initial guess, then Newton.
            let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Nodes and weights of a composite rule on a concrete interval.
#[derive(Debug, Clone, Default)]
pub struct QuadGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadGrid {
    /// Equal-panel composite rule on `[a, b]`.
    pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Self {
        Self::composite_with(&GaussLegendre::new(order), a, b, panels)
    }

    pub fn composite_with(rule: &GaussLegendre, a: f64, b: f64, panels: usize) -> Self {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut grid = QuadGrid::default();
        grid.nodes.reserve(panels * rule.order());
        grid.weights.reserve(panels * rule.order());
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                grid.nodes.push(mid + 0.5 * h * x);
                grid.weights.push(0.5 * h * w);
            }
        }
        grid
    }

    /// Concatenates the rules of several disjoint pieces.
    pub fn extend(&mut self, other: &QuadGrid) {
        self.nodes.extend_from_slice(&other.nodes);
        self.weights.extend_from_slice(&other.weights);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        for n in 1..=12 {
            let rule = GaussLegendre::new(n);
            for deg in 0..(2 * n) {
                let got = rule.integrate(0.0, 1.0, |x| x.powi(deg as i32));
                assert_abs_diff_eq!(got, 1.0 / (deg as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn composite_sine_integral() {
        let grid = QuadGrid::composite(0.0, PI, 16, 8);
        assert_eq!(grid.len(), 128);
        assert_abs_diff_eq!(grid.integrate(f64::sin), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(grid.total_weight(), PI, epsilon = 1e-13);
    }

    #[test]
    fn high_order_weights_positive_and_sum_to_two() {
        let rule = GaussLegendre::new(64);
        assert!(rule.weights().iter().all(|&w| w > 0.0));
        assert_abs_diff_eq!(rule.weights().iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        assert!(rule.nodes().windows(2).all(|p| p[0] < p[1]));
    }
}
