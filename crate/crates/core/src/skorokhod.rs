//! One-sided reflection maps with moving barriers, and their exponential smoothing.

use crate::error::Result;
use crate::logspace::{log_cumulative_trapezoid, smoothed_log};
use crate::model::{ensure_same_grid, SamplePath};

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionResult {
    pub path: SamplePath,
    /// Nonnegative, nondecreasing amount pushed so far (upward for
    /// [`reflect_above`], downward for [`reflect_below`]).
    pub push: SamplePath,
    /// `active[i]` iff the push strictly increases at grid point `i`.
    pub active: Vec<bool>,
}

impl ReflectionResult {
    /// Fraction of grid points where the barrier pushes.
    pub fn active_fraction(&self) -> f64 {
        self.active.iter().filter(|&&a| a).count() as f64 / self.active.len() as f64
    }
}

/// Prefix max of `max(x, 0)` plus strict-increase markers.
fn running_positive_max(excess: impl Iterator<Item = f64>) -> (Vec<f64>, Vec<bool>) {
    let mut push = Vec::new();
    let mut active = Vec::new();
    let mut current = 0.0f64;
    for e in excess {
        let grew = e > current;
        if grew {
            current = e;
        }
        push.push(current);
        active.push(grew);
    }
    (push, active)
}

/// Keeps `c + psi` above `barrier`, `c = start - psi(a)`:
/// `out_i = c + psi_i + max_{j<=i} (barrier_j - psi_j - c)_+`.
pub fn reflect_above(
    driver: &SamplePath,
    barrier: &SamplePath,
    start: f64,
) -> Result<ReflectionResult> {
    ensure_same_grid(driver.grid(), barrier.grid())?;
    let psi = driver.values();
    let c = start - psi[0];
    let (push, active) =
        running_positive_max(barrier.values().iter().zip(psi).map(|(b, p)| b - p - c));
    let path = psi.iter().zip(&push).map(|(p, u)| c + p + u).collect();
    let grid = *driver.grid();
    Ok(ReflectionResult {
        path: SamplePath::from_parts_unchecked(grid, path),
        push: SamplePath::from_parts_unchecked(grid, push),
        active,
    })
}

/// Keeps `c + psi` below `barrier`:
/// `out_i = c + psi_i - max_{j<=i} (-(barrier_j - psi_j - c))_+`.
pub fn reflect_below(
    driver: &SamplePath,
    barrier: &SamplePath,
    start: f64,
) -> Result<ReflectionResult> {
    ensure_same_grid(driver.grid(), barrier.grid())?;
    let psi = driver.values();
    let c = start - psi[0];
    let (push, active) =
        running_positive_max(barrier.values().iter().zip(psi).map(|(b, p)| -(b - p - c)));
    let path = psi.iter().zip(&push).map(|(p, u)| c + p - u).collect();
    let grid = *driver.grid();
    Ok(ReflectionResult {
        path: SamplePath::from_parts_unchecked(grid, path),
        push: SamplePath::from_parts_unchecked(grid, push),
        active,
    })
}

/// `V_gamma(t) = (1/gamma) log(1 + gamma * int_a^t exp(gamma h))`, trapezoid in log space.
pub fn smoothed_reflection_term(h: &SamplePath, gamma: f64) -> SamplePath {
    let exponents: Vec<f64> = h.values().iter().map(|v| gamma * v).collect();
    let values = log_cumulative_trapezoid(&exponents, h.grid().dt())
        .into_iter()
        .map(|l| smoothed_log(l, gamma))
        .collect();
    SamplePath::from_parts_unchecked(*h.grid(), values)
}

/// `V_inf(t) = max_{s<=t} h(s)_+`, the limit of [`smoothed_reflection_term`].
pub fn hard_reflection_term(h: &SamplePath) -> SamplePath {
    let (push, _) = running_positive_max(h.values().iter().copied());
    SamplePath::from_parts_unchecked(*h.grid(), push)
}

/// `(1/gamma) log(1 + gamma)`, the gap allowed above `V_inf` on an interval of length at most 1.
pub fn smoothing_bound(gamma: f64) -> f64 {
    gamma.ln_1p() / gamma
}
