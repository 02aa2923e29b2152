//! Compositions of n built by separating sample points with the gaps of a
//! random closed subset of [0, 1].
//!
//! A GapSet describes the complement of the set on [0, frontier]: disjoint
//! ordered open intervals. Points falling in one gap form a block; points
//! falling outside every gap (including exactly on a gap endpoint) are
//! singleton blocks of their own. Blocks are recorded left to right.

use crate::error::{Error, Result};
use crate::levy::ln_choose;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use std::fmt;

/// What is known about [frontier, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    /// Nothing is resolved beyond the frontier.
    Unresolved,
    /// [frontier, 1] is known to contain no gaps.
    InRange,
}

#[derive(Clone, Debug)]
pub struct GapSet {
    /// Disjoint, ordered open intervals (a, b) with b <= frontier.
    pub gaps: Vec<(f64, f64)>,
    /// The structure is fully resolved on [0, frontier].
    pub frontier: f64,
    pub residual: Residual,
}

impl GapSet {
    pub fn new(gaps: Vec<(f64, f64)>, frontier: f64, residual: Residual) -> Result<Self> {
        let set = GapSet { gaps, frontier, residual };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.frontier) {
            return Err(Error::domain(format!("frontier {} outside [0,1]", self.frontier)));
        }
        let mut prev_b = 0.0f64;
        for &(a, b) in &self.gaps {
            if !(a < b) || a < prev_b {
                return Err(Error::domain(format!(
                    "gaps must be disjoint ordered open intervals; offender ({a}, {b})"
                )));
            }
            prev_b = b;
        }
        if prev_b > self.frontier {
            return Err(Error::domain(format!(
                "gap end {prev_b} beyond frontier {}",
                self.frontier
            )));
        }
        Ok(())
    }

    pub fn total_gap_length(&self) -> f64 {
        crate::quad::neumaier_sum(self.gaps.iter().map(|&(a, b)| b - a))
    }

    /// Mass of [0,1] not accounted for by gaps: unresolved region plus any
    /// truncation loss. Zero for an ideal fully-resolved drift-free set.
    pub fn unaccounted_mass(&self) -> f64 {
        (1.0 - self.total_gap_length()).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Composition {
    blocks: Vec<u64>,
}

impl Composition {
    pub fn new(blocks: Vec<u64>) -> Result<Self> {
        if blocks.iter().any(|&b| b == 0) {
            return Err(Error::domain("composition blocks must be positive".to_string()));
        }
        Ok(Composition { blocks })
    }

    pub fn blocks(&self) -> &[u64] {
        &self.blocks
    }

    /// Total weight n.
    pub fn weight(&self) -> u64 {
        self.blocks.iter().sum()
    }

    /// Number of parts K.
    pub fn parts(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Number of parts of size r (K_r).
    pub fn multiplicity(&self, r: u64) -> u64 {
        self.blocks.iter().filter(|&&b| b == r).count() as u64
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for b in &self.blocks {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
            first = false;
        }
        Ok(())
    }
}

fn check_points(gaps: &GapSet, points: &[f64]) -> Result<()> {
    for w in points.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(Error::domain("points must be sorted ascending".to_string()));
        }
    }
    if let Some(&p) = points.first() {
        if !(0.0..=1.0).contains(&p) || !points.last().is_some_and(|&q| q <= 1.0) {
            return Err(Error::domain("points must lie in [0,1]".to_string()));
        }
    }
    if gaps.residual == Residual::Unresolved {
        // The frontier point itself is the current value of the underlying
        // process, hence in the set; only strictly larger points are unknown.
        if let Some(&p) = points.last() {
            if p > gaps.frontier {
                return Err(Error::UnresolvedRegion { point: p, frontier: gaps.frontier });
            }
        }
    }
    Ok(())
}

/// Blocks of sorted sample points separated by the gaps: one block per
/// occupied gap, and a singleton for every point outside all gaps (gap
/// endpoints count as outside).
pub fn compose(gaps: &GapSet, points: &[f64]) -> Result<Composition> {
    check_points(gaps, points)?;
    let mut blocks = Vec::new();
    let mut i = 0usize;
    for &(a, b) in &gaps.gaps {
        while i < points.len() && points[i] <= a {
            blocks.push(1);
            i += 1;
        }
        let start = i;
        while i < points.len() && points[i] < b {
            i += 1;
        }
        if i > start {
            blocks.push((i - start) as u64);
        }
    }
    while i < points.len() {
        blocks.push(1);
        i += 1;
    }
    Ok(Composition { blocks })
}

/// Counts restricted to gaps emitted so far: one block per occupied gap lying
/// entirely in [0, frontier_value]. Points outside those gaps contribute
/// nothing (the straddling or unseen parts of the composition are excluded).
pub fn partial_counts(gaps: &GapSet, frontier_value: f64, points: &[f64]) -> Composition {
    let mut blocks = Vec::new();
    for &(a, b) in &gaps.gaps {
        if b > frontier_value {
            break;
        }
        let lo = points.partition_point(|&p| p <= a);
        let hi = points.partition_point(|&p| p < b);
        if hi > lo {
            blocks.push((hi - lo) as u64);
        }
    }
    Composition { blocks }
}

/// Singleton blocks split into (genuine, occasional): genuine singletons sit
/// outside every gap (the point hit the set), occasional ones are alone in a
/// gap.
pub fn classify_singletons(gaps: &GapSet, points: &[f64]) -> Result<(u64, u64)> {
    check_points(gaps, points)?;
    let mut genuine = 0u64;
    let mut occasional = 0u64;
    let mut i = 0usize;
    for &(a, b) in &gaps.gaps {
        while i < points.len() && points[i] <= a {
            genuine += 1;
            i += 1;
        }
        let start = i;
        while i < points.len() && points[i] < b {
            i += 1;
        }
        if i - start == 1 {
            occasional += 1;
        }
    }
    genuine += (points.len() - i) as u64;
    Ok((genuine, occasional))
}

/// n sorted i.i.d. uniforms on [0, 1].
pub fn sample_uniform<R: Rng + ?Sized>(n: u64, rng: &mut R) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    pts.sort_unstable_by(f64::total_cmp);
    pts
}

/// A Poisson(rho) number of sorted uniforms on [0, 1].
pub fn sample_poisson<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::domain(format!("rate {rho} must be >= 0")));
    }
    if rho == 0.0 {
        return Ok(Vec::new());
    }
    let pois = Poisson::new(rho).map_err(|e| Error::domain(format!("poisson rate: {e}")))?;
    let n = pois.sample(rng) as u64;
    Ok(sample_uniform(n, rng))
}

fn check_resolved(gaps: &GapSet, tol: f64) -> Result<()> {
    let miss = gaps.unaccounted_mass();
    if miss > tol {
        return Err(Error::precondition(format!(
            "gap set not fully resolved: unaccounted mass {miss:.3e} exceeds tolerance {tol:.3e}"
        )));
    }
    Ok(())
}

/// E(K_n | set) = sum_i (1 - (1 - x_i)^n) over gap lengths x_i; requires the
/// gap lengths to account for all of [0,1] up to `tol`.
pub fn conditional_expected_parts(gaps: &GapSet, n: u64, tol: f64) -> Result<f64> {
    check_resolved(gaps, tol)?;
    Ok(crate::quad::neumaier_sum(gaps.gaps.iter().map(|&(a, b)| {
        let len = b - a;
        -f64::exp_m1(n as f64 * (-len).ln_1p())
    })))
}

/// E(K_{n,r} | set) = sum_i C(n,r) x_i^r (1 - x_i)^{n-r}.
pub fn conditional_expected_r_parts(gaps: &GapSet, n: u64, r: u64, tol: f64) -> Result<f64> {
    if r == 0 || r > n {
        return Err(Error::domain(format!("need 1 <= r <= n, got n={n} r={r}")));
    }
    check_resolved(gaps, tol)?;
    let lc = ln_choose(n, r);
    Ok(crate::quad::neumaier_sum(gaps.gaps.iter().map(|&(a, b)| {
        let len = b - a;
        let mut ln_t = lc + r as f64 * len.ln();
        if n > r {
            ln_t += (n - r) as f64 * (-len).ln_1p();
        }
        ln_t.exp()
    })))
}
