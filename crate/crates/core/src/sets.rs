//! Measurable subsets of the line and of space-time rectangles.
//!
//! [`IntervalSet`] is a finite disjoint union of open intervals, the
//! computable stand-in for a measurable set of positive measure.
//! [`SpaceTimeSet`] covers product sets `ω × E` and arbitrary cell unions.
//! The telescoping sequence anchored at a Lebesgue point lives here as well,
//! since it only consumes the measure of a time set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaps narrower than this (relative to the span) are closed when normalizing.
const MERGE_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    /// Length of the overlap with `(a, b)`.
    pub fn overlap(&self, a: f64, b: f64) -> f64 {
        (self.hi.min(b) - self.lo.max(a)).max(0.0)
    }
}

/// Sorted, pairwise disjoint open intervals with positive gaps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IntervalSet {
    parts: Vec<Interval>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Ok(Self {
            parts: vec![Interval::new(lo, hi)?],
        })
    }

    /// Sorts, merges overlapping or touching intervals, and drops nothing else.
    pub fn normalize(mut parts: Vec<Interval>) -> Self {
        parts.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut out: Vec<Interval> = Vec::with_capacity(parts.len());
        for p in parts {
            match out.last_mut() {
                Some(last) if p.lo <= last.hi + MERGE_EPS * (1.0 + last.hi.abs()) => {
                    last.hi = last.hi.max(p.hi);
                }
                _ => out.push(p),
            }
        }
        Self { parts: out }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let parts = pairs
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::normalize(parts))
    }

    pub fn parts(&self) -> &[Interval] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(Interval::len).sum()
    }

    /// `|(a, b) ∩ self|`.
    pub fn measure_in(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.parts.iter().map(|p| p.overlap(a, b)).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.parts.iter().any(|p| p.contains(x))
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut parts = self.parts.clone();
        parts.extend_from_slice(&other.parts);
        Self::normalize(parts)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut parts = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.parts.len() && j < other.parts.len() {
            let a = self.parts[i];
            let b = other.parts[j];
            let lo = a.lo.max(b.lo);
            let hi = a.hi.min(b.hi);
            if lo < hi {
                parts.push(Interval { lo, hi });
            }
            if a.hi < b.hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self::normalize(parts)
    }

    /// True when every part lies inside `[lo, hi]`.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.parts.iter().all(|p| p.lo >= lo && p.hi <= hi)
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        Some((self.parts.first()?.lo, self.parts.last()?.hi))
    }
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.parts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}-{}", p.lo, p.hi)?;
        }
        Ok(())
    }
}

/// Splits `"lo-hi"` at the separating dash, skipping exponent signs.
fn split_pair(s: &str) -> Option<(&str, &str)> {
    let bytes = s.as_bytes();
    (1..bytes.len())
        .find(|&i| bytes[i] == b'-' && !matches!(bytes[i - 1], b'e' | b'E' | b'-'))
        .map(|i| (&s[..i], &s[i + 1..]))
}

impl FromStr for IntervalSet {
    type Err = Error;

    fn from_str(input: &str) -> Result<Self> {
        let err = |reason: &str| Error::ParseIntervalSet {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = input.trim();
        if trimmed.is_empty() {
            return Ok(Self::empty());
        }
        let mut parts = Vec::new();
        for token in trimmed.split(',') {
            let token = token.trim();
            let (lo, hi) = split_pair(token).ok_or_else(|| err("expected lo-hi"))?;
            let lo: f64 = lo.trim().parse().map_err(|_| err("bad lower bound"))?;
            let hi: f64 = hi.trim().parse().map_err(|_| err("bad upper bound"))?;
            parts.push(Interval::new(lo, hi)?);
        }
        Ok(Self::normalize(parts))
    }
}

impl TryFrom<String> for IntervalSet {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<IntervalSet> for String {
    fn from(s: IntervalSet) -> String {
        s.to_string()
    }
}

/// Uniform cell mask over `(0, domain_length) × (0, horizon)`.
///
/// `mask[i * nt + j]` marks the cell `(x_i, x_{i+1}) × (t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub nx: usize,
    pub nt: usize,
    pub domain_length: f64,
    pub horizon: f64,
    mask: Vec<bool>,
}

impl CellGrid {
    pub fn new(nx: usize, nt: usize, domain_length: f64, horizon: f64, mask: Vec<bool>) -> Result<Self> {
        if nx == 0 || nt == 0 {
            return Err(Error::InvalidCellGrid("nx and nt must be positive".into()));
        }
        if mask.len() != nx * nt {
            return Err(Error::InvalidCellGrid(format!(
                "mask has {} cells, expected {}",
                mask.len(),
                nx * nt
            )));
        }
        if !(domain_length > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidCellGrid("cell sizes must be positive".into()));
        }
        Ok(Self {
            nx,
            nt,
            domain_length,
            horizon,
            mask,
        })
    }

    pub fn from_fn(
        nx: usize,
        nt: usize,
        domain_length: f64,
        horizon: f64,
        f: impl Fn(usize, usize) -> bool,
    ) -> Result<Self> {
        let mask = (0..nx * nt).map(|k| f(k / nt, k % nt)).collect();
        Self::new(nx, nt, domain_length, horizon, mask)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.nt + j]
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// Spatial slice of time column `j`.
    pub fn column(&self, j: usize) -> IntervalSet {
        let dx = self.dx();
        let parts = (0..self.nx)
            .filter(|&i| self.get(i, j))
            .map(|i| Interval {
                lo: i as f64 * dx,
                hi: (i + 1) as f64 * dx,
            })
            .collect();
        IntervalSet::normalize(parts)
    }

    /// Row-major run-length encoding, e.g. `"3f2t11f"`.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let mut iter = self.mask.iter().peekable();
        while let Some(&v) = iter.next() {
            let mut run = 1;
            while iter.peek() == Some(&&v) {
                iter.next();
                run += 1;
            }
            out.push_str(&run.to_string());
            out.push(if v { 't' } else { 'f' });
        }
        out
    }

    pub fn from_rle(nx: usize, nt: usize, domain_length: f64, horizon: f64, rle: &str) -> Result<Self> {
        let mut mask = Vec::with_capacity(nx * nt);
        let mut digits = String::new();
        for c in rle.chars().filter(|c| !c.is_whitespace()) {
            match c {
                '0'..='9' => digits.push(c),
                't' | 'f' => {
                    let run: usize = digits
                        .parse()
                        .map_err(|_| Error::InvalidCellGrid(format!("bad run length in {rle:?}")))?;
                    mask.extend(std::iter::repeat_n(c == 't', run));
                    digits.clear();
                }
                _ => return Err(Error::InvalidCellGrid(format!("unexpected {c:?} in RLE"))),
            }
        }
        if !digits.is_empty() {
            return Err(Error::InvalidCellGrid("dangling run length".into()));
        }
        Self::new(nx, nt, domain_length, horizon, mask)
    }
}

/// Observation region inside `Ω × (0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceTimeSet {
    Product { omega: IntervalSet, times: IntervalSet },
    CellGrid(CellGrid),
}

/// A piece of a space-time set on which the spatial slice is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabPiece {
    pub times: Interval,
    pub omega: IntervalSet,
}

impl SpaceTimeSet {
    pub fn product(omega: IntervalSet, times: IntervalSet) -> Self {
        SpaceTimeSet::Product { omega, times }
    }

    pub fn measure(&self) -> f64 {
        match self {
            SpaceTimeSet::Product { omega, times } => omega.measure() * times.measure(),
            SpaceTimeSet::CellGrid(g) => {
                g.mask.iter().filter(|&&b| b).count() as f64 * g.dx() * g.dt()
            }
        }
    }

    /// `D_t = {x : (x, t) ∈ D}`.
    pub fn slice_at(&self, t: f64) -> IntervalSet {
        match self {
            SpaceTimeSet::Product { omega, times } => {
                if times.contains(t) {
                    omega.clone()
                } else {
                    IntervalSet::empty()
                }
            }
            SpaceTimeSet::CellGrid(g) => {
                if !(t > 0.0 && t < g.horizon) {
                    return IntervalSet::empty();
                }
                let j = ((t / g.dt()) as usize).min(g.nt - 1);
                g.column(j)
            }
        }
    }

    /// Decomposition into time slabs with constant, nonempty spatial slice.
    pub fn pieces(&self) -> Vec<SlabPiece> {
        match self {
            SpaceTimeSet::Product { omega, times } => {
                if omega.is_empty() {
                    return Vec::new();
                }
                times
                    .parts()
                    .iter()
                    .map(|&t| SlabPiece {
                        times: t,
                        omega: omega.clone(),
                    })
                    .collect()
            }
            SpaceTimeSet::CellGrid(g) => {
                let dt = g.dt();
                let mut out: Vec<SlabPiece> = Vec::new();
                for j in 0..g.nt {
                    let col = g.column(j);
                    if col.is_empty() {
                        continue;
                    }
                    let lo = j as f64 * dt;
                    let hi = (j + 1) as f64 * dt;
                    match out.last_mut() {
                        Some(last) if last.omega == col && (last.times.hi - lo).abs() < 1e-12 * g.horizon => {
                            last.times.hi = hi;
                        }
                        _ => out.push(SlabPiece {
                            times: Interval { lo, hi },
                            omega: col,
                        }),
                    }
                }
                out
            }
        }
    }

    /// Canonical one-line descriptor used in reports.
    pub fn descriptor(&self) -> String {
        match self {
            SpaceTimeSet::Product { omega, times } => format!("product[{omega}]x[{times}]"),
            SpaceTimeSet::CellGrid(g) => format!(
                "cells[{}x{};{};{};{}]",
                g.nx,
                g.nt,
                g.domain_length,
                g.horizon,
                g.to_rle()
            ),
        }
    }
}

/// Result of Fubini slicing.
#[derive(Debug, Clone)]
pub struct Slicing {
    pub set: SpaceTimeSet,
    pub measure: f64,
    /// `|D| / (2T)`.
    pub threshold: f64,
    /// `{t : |D_t| ≥ |D|/(2T)}`.
    pub e_good: IntervalSet,
}

impl Slicing {
    pub fn slice_at(&self, t: f64) -> IntervalSet {
        self.set.slice_at(t)
    }
}

/// Slices `D` in time and extracts the set of good times.
pub fn slice(d: &SpaceTimeSet, horizon: f64) -> Result<Slicing> {
    let measure = d.measure();
    if !(measure > 0.0) {
        return Err(Error::EmptyObservationSet);
    }
    let threshold = measure / (2.0 * horizon);
    let parts = d
        .pieces()
        .into_iter()
        .filter(|p| p.omega.measure() >= threshold * (1.0 - 1e-12))
        .map(|p| p.times)
        .collect();
    Ok(Slicing {
        set: d.clone(),
        measure,
        threshold,
        e_good: IntervalSet::normalize(parts),
    })
}

/// Geometric sequence `l_1 > l_2 > … → l` with the density property.
#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeSeq {
    pub l: f64,
    pub q: f64,
    pub points: Vec<f64>,
    pub tau: Vec<f64>,
}

impl TelescopeSeq {
    /// `l_1 - l_2`, the first gap.
    pub fn first_gap(&self) -> f64 {
        self.points[0] - self.points[1]
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| w[0] - w[1])
    }

    /// Windows `(l_{k+1}, l_k)`.
    pub fn windows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[1], w[0]))
    }

    /// Re-checks the defining properties against `e`, independently of
    /// how the sequence was produced. Returns a description of the first
    /// failure.
    pub fn check(&self, e: &IntervalSet) -> std::result::Result<(), String> {
        if self.points.len() < 2 {
            return Err("sequence needs at least two points".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(format!("ratio {} outside (0,1)", self.q));
        }
        let gaps: Vec<f64> = self.gaps().collect();
        for (k, w) in gaps.windows(2).enumerate() {
            let expected = self.q * w[0];
            if (w[1] - expected).abs() > 1e-9 * w[0].max(1e-300) {
                return Err(format!("ratio broken at k={}: {} vs {}", k + 1, w[1], expected));
            }
        }
        for (k, (lo, hi)) in self.windows().enumerate() {
            if !(hi > lo && lo > self.l) {
                return Err(format!("not decreasing above l at k={}", k + 1));
            }
            let dens = e.measure_in(lo, hi);
            if dens < (hi - lo) / 3.0 * (1.0 - 1e-9) {
                return Err(format!("density {dens} < (l_k-l_(k+1))/3 at k={}", k + 1));
            }
        }
        for (k, (&t, (lo, hi))) in self.tau.iter().zip(self.windows()).enumerate() {
            let expected = lo + (hi - lo) / 6.0;
            if (t - expected).abs() > 1e-12 * (1.0 + hi.abs()) {
                return Err(format!("tau mismatch at k={}", k + 1));
            }
        }
        Ok(())
    }
}

/// Gap (relative to the horizon) below which the sequence is truncated.
pub const TRUNCATION_REL: f64 = 1e-6;

fn forced_sequence(l: f64, l1: f64, q: f64, horizon: f64) -> TelescopeSeq {
    let tol = TRUNCATION_REL * horizon;
    let span = l1 - l;
    let mut points = vec![l1];
    let mut k = 1i32;
    loop {
        let next = l + span * q.powi(k);
        let prev = *points.last().unwrap();
        points.push(next);
        k += 1;
        if prev - next < tol || k > 1_000_000 {
            break;
        }
    }
    let tau = points.windows(2).map(|w| w[1] + (w[0] - w[1]) / 6.0).collect();
    TelescopeSeq { l, q, points, tau }
}

fn densities_hold(seq: &TelescopeSeq, e: &IntervalSet) -> bool {
    let tail = *seq.points.last().unwrap();
    // Windows past the truncation must lie in E as well.
    if e.measure_in(seq.l, tail) < (tail - seq.l) * (1.0 - 1e-9) {
        return false;
    }
    seq.windows()
        .all(|(lo, hi)| e.measure_in(lo, hi) >= (hi - lo) / 3.0 * (1.0 - 1e-9))
}

/// Builds the telescoping sequence by scanning candidate Lebesgue points and
/// starting points, preferring the largest span `l_1 - l`.
pub fn telescope(e: &IntervalSet, q: f64, horizon: f64) -> Result<TelescopeSeq> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("telescope ratio q={q} not in (0,1)")));
    }
    if !(e.measure() > 0.0) {
        return Err(Error::EmptyObservationSet);
    }
    if !e.within(0.0, horizon * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("time set {e} not inside (0, {horizon})")));
    }

    // Left endpoints have density one from the right; dyadic points inside
    // E are interior points, hence Lebesgue points.
    let mut anchors: Vec<f64> = e.parts().iter().map(|p| p.lo).collect();
    for level in 1..=10u32 {
        let n = 1usize << level;
        for i in 1..n {
            let t = horizon * i as f64 / n as f64;
            if e.contains(t) {
                anchors.push(t);
            }
        }
    }
    anchors.sort_by(f64::total_cmp);
    anchors.dedup();

    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for &l in &anchors {
        let mut ends: Vec<f64> = vec![horizon];
        ends.extend(e.parts().iter().map(|p| p.hi).filter(|&h| h > l));
        let steps = 64;
        for i in 1..steps {
            ends.push(l + (horizon - l) * (1.0 - i as f64 / steps as f64));
        }
        for l1 in ends {
            if l1 > l && l1 <= horizon {
                candidates.push((l, l1));
            }
        }
    }
    candidates.sort_by(|a, b| (b.1 - b.0).total_cmp(&(a.1 - a.0)).then(a.0.total_cmp(&b.0)));

    for (l, l1) in candidates {
        let seq = forced_sequence(l, l1, q, horizon);
        if densities_hold(&seq, e) {
            return Ok(seq);
        }
    }
    Err(Error::NoLebesguePoint)
}
