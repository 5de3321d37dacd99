//! Multi-start projected gradient descent on the unit sphere.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SphereOptions {
    pub max_iter: usize,
    /// Stop once the relative decrease over `stall_window` iterations drops below this.
    pub stall_tol: f64,
    pub stall_window: usize,
}

impl Default for SphereOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            stall_tol: 1e-10,
            stall_window: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SphereRun {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SphereResult {
    /// Best point over all restarts.
    pub best: SphereRun,
    /// Final value of every restart that produced a finite value.
    pub values: Vec<f64>,
}

impl SphereResult {
    /// `(max − min)/|min|` over restart values.
    pub fn spread(&self) -> f64 {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == 0.0 {
            0.0
        } else {
            (hi - lo) / lo.abs()
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over `‖x‖ = 1` from a single start. `f` returns the value
/// and the Euclidean gradient.
pub fn descend<F>(f: &F, start: &[f64], opts: SphereOptions) -> Option<SphereRun>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = start.to_vec();
    if !normalize(&mut x) {
        return None;
    }
    let (mut v, mut g) = f(&x);
    if !v.is_finite() {
        return None;
    }
    let mut step = 1.0;
    let mut history = vec![v];
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let gx = dot(&g, &x);
        let tang: Vec<f64> = g.iter().zip(&x).map(|(gi, xi)| gi - gx * xi).collect();
        let tn2 = dot(&tang, &tang);
        if !(tn2 > 0.0) || tn2.sqrt() <= 1e-14 * v.abs().max(1e-300) {
            break;
        }
        let mut accepted = None;
        let mut eta = step;
        for _ in 0..60 {
            let mut y: Vec<f64> = x.iter().zip(&tang).map(|(xi, ti)| xi - eta * ti).collect();
            if normalize(&mut y) {
                let (vy, gy) = f(&y);
                if vy.is_finite() && vy <= v - 1e-4 * eta * tn2 {
                    accepted = Some((y, vy, gy));
                    break;
                }
            }
            eta *= 0.5;
        }
        let Some((y, vy, gy)) = accepted else { break };
        x = y;
        v = vy;
        g = gy;
        step = eta * 2.0;
        history.push(v);
        if history.len() > opts.stall_window {
            let old = history[history.len() - 1 - opts.stall_window];
            if (old - v) <= opts.stall_tol * old.abs() {
                break;
            }
        }
    }
    Some(SphereRun { x, value: v, iterations: it })
}

/// Runs [`descend`] from every start and keeps the best finite result.
pub fn minimize_on_sphere<F>(f: F, starts: &[Vec<f64>], opts: SphereOptions) -> Result<SphereResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut best: Option<SphereRun> = None;
    let mut values = Vec::new();
    for s in starts {
        if let Some(run) = descend(&f, s, opts) {
            values.push(run.value);
            if best.as_ref().is_none_or(|b| run.value < b.value) {
                best = Some(run);
            }
        }
    }
    match best {
        Some(best) => Ok(SphereResult { best, values }),
        None => Err(Error::OptimizationFailed(format!(
            "all {} restarts produced non-finite objectives",
            starts.len()
        ))),
    }
}

/// Start points whose sign patterns cycle through orthants: restart `r`
/// flips coordinate `i` when bit `i mod 64` of `r` is set.
pub fn orthant_starts<R: rand::Rng>(rng: &mut R, dim: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|r| {
            let mut v = crate::sampling::unit_sphere(rng, dim);
            for (i, x) in v.iter_mut().enumerate() {
                let flip = (r >> (i % 64)) & 1 == 1;
                *x = if flip { -x.abs() } else { x.abs() };
            }
            v
        })
        .collect()
}
