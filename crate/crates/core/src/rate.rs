//! Discretized rate functionals.
//!
//! A particle with barriers `upper = T[n-1][k-1]` and `lower = T[n-1][k]` pays,
//! per grid cell of width `dt` and forward difference `v`:
//!
//! | cell                   | penalty      |
//! |------------------------|--------------|
//! | strictly between       | `v^2`        |
//! | glued to `lower`       | `min(v,0)^2` |
//! | glued to `upper`       | `max(v,0)^2` |
//! | glued to both          | `0`          |
//!
//! and the rate is `0.5 * sum(penalty * dt)`. [`Convention::Theorem`] swaps the
//! two one-sided penalties. A crossing or a wrong start gives `+inf`.

use crate::error::{Error, Result};
use crate::model::{ensure_same_grid, indices, PathBundle, SamplePath, TriangularConfiguration};
use crate::skorokhod::reflect_above;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellLabel {
    Interior,
    UpperCoincident,
    LowerCoincident,
    BothCoincident,
    Crossing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceClassification {
    /// One label per cell `[t_i, t_{i+1}]`.
    pub labels: Vec<CellLabel>,
    pub eps: f64,
}

impl CoincidenceClassification {
    pub fn count(&self, label: CellLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn has_crossing(&self) -> bool {
        self.labels.contains(&CellLabel::Crossing)
    }
}

/// Which one-sided penalty goes with which barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Convention {
    /// Lower contact charges descent, upper contact charges ascent.
    #[default]
    Lemma,
    /// Lower contact charges ascent, upper contact charges descent.
    Theorem,
}

impl std::str::FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma" => Ok(Self::Lemma),
            "theorem" => Ok(Self::Theorem),
            other => Err(Error::InvalidParameter(format!(
                "unknown convention {other:?}; expected lemma or theorem"
            ))),
        }
    }
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lemma => "lemma",
            Self::Theorem => "theorem",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InfinityReason {
    Crossing,
    InitialMismatch,
}

impl std::fmt::Display for InfinityReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Crossing => "crossing",
            Self::InitialMismatch => "initial-mismatch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    pub eps: f64,
    pub convention: Convention,
}

impl RateOptions {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        Ok(Self {
            eps,
            convention: Convention::Lemma,
        })
    }

    pub fn with_convention(self, convention: Convention) -> Self {
        Self { convention, ..self }
    }
}

/// `2 sqrt(dt / gamma)`.
pub fn default_coincidence_eps(dt: f64, gamma: f64) -> f64 {
    2.0 * (dt / gamma).sqrt()
}

/// One particle's action split by coincidence class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleRate {
    pub interior: f64,
    pub upper_coincident: f64,
    pub lower_coincident: f64,
    pub interior_measure: f64,
    pub upper_measure: f64,
    pub lower_measure: f64,
    pub both_measure: f64,
    pub crossing_measure: f64,
    /// Sum of the three terms, or `+inf`.
    pub total: f64,
    pub infinity: Option<InfinityReason>,
}

impl ParticleRate {
    fn infinite(mut self, reason: InfinityReason) -> Self {
        self.total = f64::INFINITY;
        self.infinity = Some(reason);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.infinity.is_none()
    }
}

fn midpoint(v: &[f64], i: usize) -> f64 {
    0.5 * (v[i] + v[i + 1])
}

pub fn classify(
    phi: &SamplePath,
    upper: Option<&SamplePath>,
    lower: Option<&SamplePath>,
    eps: f64,
) -> Result<CoincidenceClassification> {
    for b in upper.iter().chain(lower.iter()) {
        ensure_same_grid(phi.grid(), b.grid())?;
    }
    let x = phi.values();
    let up = upper.map(SamplePath::values);
    let lo = lower.map(SamplePath::values);
    let labels = (0..phi.grid().steps())
        .map(|i| {
            let m = midpoint(x, i);
            let above = |u: &[f64]| {
                m > midpoint(u, i) + eps || x[i] > u[i] + eps || x[i + 1] > u[i + 1] + eps
            };
            let below = |l: &[f64]| {
                m < midpoint(l, i) - eps || x[i] < l[i] - eps || x[i + 1] < l[i + 1] - eps
            };
            if up.is_some_and(above) || lo.is_some_and(below) {
                return CellLabel::Crossing;
            }
            let on_upper = up.is_some_and(|u| (m - midpoint(u, i)).abs() <= eps);
            let on_lower = lo.is_some_and(|l| (m - midpoint(l, i)).abs() <= eps);
            match (on_upper, on_lower) {
                (true, true) => CellLabel::BothCoincident,
                (true, false) => CellLabel::UpperCoincident,
                (false, true) => CellLabel::LowerCoincident,
                (false, false) => CellLabel::Interior,
            }
        })
        .collect();
    Ok(CoincidenceClassification { labels, eps })
}

fn neg_part_sq(v: f64) -> f64 {
    let m = v.min(0.0);
    m * m
}

fn pos_part_sq(v: f64) -> f64 {
    let m = v.max(0.0);
    m * m
}

/// Cellwise sum with no start check.
fn cell_rate(
    phi: &SamplePath,
    upper: Option<&SamplePath>,
    lower: Option<&SamplePath>,
    options: &RateOptions,
) -> Result<ParticleRate> {
    let classes = classify(phi, upper, lower, options.eps)?;
    let dt = phi.grid().dt();
    let x = phi.values();
    let mut r = ParticleRate::default();
    type Penalty = fn(f64) -> f64;
    let (lower_pen, upper_pen): (Penalty, Penalty) = match options.convention {
        Convention::Lemma => (neg_part_sq, pos_part_sq),
        Convention::Theorem => (pos_part_sq, neg_part_sq),
    };
    for (i, label) in classes.labels.iter().enumerate() {
        let v = (x[i + 1] - x[i]) / dt;
        match label {
            CellLabel::Interior => {
                r.interior += 0.5 * v * v * dt;
                r.interior_measure += dt;
            }
            CellLabel::LowerCoincident => {
                r.lower_coincident += 0.5 * lower_pen(v) * dt;
                r.lower_measure += dt;
            }
            CellLabel::UpperCoincident => {
                r.upper_coincident += 0.5 * upper_pen(v) * dt;
                r.upper_measure += dt;
            }
            CellLabel::BothCoincident => r.both_measure += dt,
            CellLabel::Crossing => r.crossing_measure += dt,
        }
    }
    r.total = r.interior + r.upper_coincident + r.lower_coincident;
    if classes.has_crossing() {
        return Ok(r.infinite(InfinityReason::Crossing));
    }
    Ok(r)
}

/// Action of `phi` kept above `phi_minus`.
pub fn local_rate_lower(
    phi: &SamplePath,
    phi_minus: &SamplePath,
    eps: f64,
) -> Result<ParticleRate> {
    cell_rate(phi, None, Some(phi_minus), &RateOptions::new(eps)?)
}

/// Action of `phi` kept below `phi_plus`.
pub fn local_rate_upper(phi: &SamplePath, phi_plus: &SamplePath, eps: f64) -> Result<ParticleRate> {
    cell_rate(phi, Some(phi_plus), None, &RateOptions::new(eps)?)
}

pub fn particle_rate(
    phi: &SamplePath,
    upper: Option<&SamplePath>,
    lower: Option<&SamplePath>,
    initial: f64,
    options: &RateOptions,
) -> Result<ParticleRate> {
    let r = cell_rate(phi, upper, lower, options)?;
    if (phi.first() - initial).abs() > options.eps {
        return Ok(r.infinite(InfinityReason::InitialMismatch));
    }
    Ok(r)
}

/// Free Brownian action `0.5 * sum(v^2 dt)`.
pub fn schilder_rate(phi: &SamplePath, initial: f64, eps: f64) -> Result<ParticleRate> {
    particle_rate(phi, None, None, initial, &RateOptions::new(eps)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateBreakdown {
    /// Level-major, one entry per particle.
    pub particles: Vec<ParticleRate>,
    pub total: f64,
    /// First infinite particle's reason, in storage order.
    pub infinity: Option<InfinityReason>,
}

impl RateBreakdown {
    pub fn is_finite(&self) -> bool {
        self.infinity.is_none()
    }
}

/// Sum of particle rates, each particle constrained by its parents on level `n-1`.
pub fn total_rate(
    bundle: &PathBundle,
    initial: &TriangularConfiguration,
    options: &RateOptions,
) -> Result<RateBreakdown> {
    if initial.n() != bundle.n() {
        return Err(Error::ShapeMismatch(format!(
            "bundle has N={}, initial configuration has N={}",
            bundle.n(),
            initial.n()
        )));
    }
    let particles = indices(bundle.n())
        .map(|idx| {
            particle_rate(
                bundle.path(idx),
                idx.upper_barrier().map(|b| bundle.path(b)),
                idx.lower_barrier().map(|b| bundle.path(b)),
                initial.get(idx),
                options,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let infinity = particles.iter().find_map(|p| p.infinity);
    let total = if infinity.is_some() {
        f64::INFINITY
    } else {
        particles.iter().map(|p| p.total).sum()
    };
    Ok(RateBreakdown {
        particles,
        total,
        infinity,
    })
}

/// Largest grid accepted by [`brute_force_local_rate`].
pub const BRUTE_FORCE_MAX_CELLS: usize = 64;

/// Minimal driver action reproducing `phi` as the upward reflection of a
/// piecewise-linear driver off `phi_minus`, found by projected gradient
/// descent over per-cell driver increments and checked by running the map.
///
/// `phi` and `phi_minus` are restricted to `m_coarse` cells by subsampling.
pub fn brute_force_local_rate(
    phi: &SamplePath,
    phi_minus: &SamplePath,
    m_coarse: usize,
) -> Result<f64> {
    ensure_same_grid(phi.grid(), phi_minus.grid())?;
    if m_coarse == 0 || m_coarse > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::InvalidParameter(format!(
            "M_coarse must be in 1..={BRUTE_FORCE_MAX_CELLS}, got {m_coarse}"
        )));
    }
    let fine = phi.grid().steps();
    if !fine.is_multiple_of(m_coarse) {
        return Err(Error::ShapeMismatch(format!(
            "{fine} cells cannot be coarsened to {m_coarse}"
        )));
    }
    let stride = fine / m_coarse;
    let coarse = crate::model::TimeGrid::new(phi.grid().start(), phi.grid().end(), m_coarse)?;
    let sub = |p: &SamplePath| -> Result<SamplePath> {
        SamplePath::new(coarse, p.values().iter().step_by(stride).copied().collect())
    };
    let (phi, barrier) = (sub(phi)?, sub(phi_minus)?);
    let x = phi.values();
    let b = barrier.values();
    let scale = 1.0 + x.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    if let Some(i) = x.iter().zip(b).position(|(x, b)| x < &(b - tol)) {
        return Err(Error::Infeasible(format!(
            "path is below the barrier at grid point {i}"
        )));
    }
    let glued: Vec<bool> = (0..m_coarse)
        .map(|i| (x[i] - b[i]).abs() <= tol && (x[i + 1] - b[i + 1]).abs() <= tol)
        .collect();
    let target: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let dt = coarse.dt();

    // Feasible set: u_i = target_i off contact, u_i <= target_i on glued cells.
    let project = |u: &mut [f64]| {
        for ((u, &t), &g) in u.iter_mut().zip(&target).zip(&glued) {
            *u = if g { u.min(t) } else { t };
        }
    };
    let action = |u: &[f64]| 0.5 * u.iter().map(|v| v * v).sum::<f64>() / dt;
    let mut u = target.clone();
    let mut value = action(&u);
    let mut step = 0.5 * dt;
    for _ in 0..10_000 {
        let mut trial: Vec<f64> = u.iter().map(|v| v - step * v / dt).collect();
        project(&mut trial);
        let next = action(&trial);
        let moved = trial
            .iter()
            .zip(&u)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if next <= value {
            u = trial;
            value = next;
            if moved <= 1e-15 * scale {
                break;
            }
        } else {
            step *= 0.5;
        }
    }

    let mut driver = Vec::with_capacity(x.len());
    let mut acc = x[0];
    driver.push(acc);
    for v in &u {
        acc += v;
        driver.push(acc);
    }
    let reflected = reflect_above(&SamplePath::new(coarse, driver)?, &barrier, x[0])?;
    let miss = reflected.path.sup_distance(&phi)?;
    if miss > 1e-7 * scale {
        return Err(Error::Infeasible(format!(
            "best driver misses the target by {miss:e}"
        )));
    }
    Ok(value)
}
