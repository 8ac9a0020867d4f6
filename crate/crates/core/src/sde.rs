//! Time stepping for the scaled system
//!
//! ```text
//! dT[n][k] = dW/sqrt(gamma) + ( a_n + e^{gamma (T[n-1][k] - T[n][k])} - e^{gamma (T[n][k] - T[n-1][k-1])} ) dt
//! ```
//!
//! where a term is dropped when its neighbour does not exist. Level `n` only
//! reads level `n-1`, so whole paths are produced one level at a time; with an
//! explicit scheme this is bit-identical to stepping all particles together.

use crate::error::{Error, Result};
use crate::logspace::{log_cumulative_trapezoid, smoothed_log};
use crate::model::{
    ensure_same_grid, indices, tri_count, validate_initial, ModelConfig, PathBundle, SamplePath,
    TimeGrid, TriIndex,
};
use crate::noise::{NoiseBundle, NoiseStream, Seed};
use crate::skorokhod::{reflect_above, reflect_below};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Explicit Euler with every exponential term capped at `drift_cap`.
    TamedEuler,
    /// Closed-form quadrature for the one-barrier edge particles, tamed Euler inside.
    ExactEdge,
    /// The `gamma = infinity` limit: exponential repulsion replaced by hard reflection.
    Reflected,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tamed-euler" => Ok(Self::TamedEuler),
            "exact-edge" => Ok(Self::ExactEdge),
            "reflected" => Ok(Self::Reflected),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme {other:?}; expected tamed-euler, exact-edge or reflected"
            ))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TamedEuler => "tamed-euler",
            Self::ExactEdge => "exact-edge",
            Self::Reflected => "reflected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    /// Cap `D` on each exponential drift term.
    pub drift_cap: f64,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, drift_cap: f64) -> Result<Self> {
        if !(drift_cap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "drift cap must be positive, got {drift_cap}"
            )));
        }
        Ok(Self { scheme, drift_cap })
    }

    /// `scheme` with the cap carried by `config`.
    pub fn for_config(config: &ModelConfig, scheme: Scheme) -> Self {
        Self {
            scheme,
            drift_cap: config.drift_cap,
        }
    }
}

/// Cutoffs `L_1 <= L_2 <= ... <= L_N` of the auxiliary Lipschitz system.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationLevels(Vec<f64>);

impl TruncationLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.iter().any(|l| !(*l >= 0.0) || l.is_nan()) {
            return Err(Error::InvalidParameter(
                "truncation levels must be nonnegative".into(),
            ));
        }
        if levels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter(
                "truncation levels must be nondecreasing".into(),
            ));
        }
        Ok(Self(levels))
    }

    pub fn uniform(n: usize, level: f64) -> Result<Self> {
        Self::new(vec![level; n])
    }

    /// Cutoff of level `n` (1-based).
    pub fn level(&self, n: usize) -> f64 {
        self.0[n - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `phi_L(x)`: `x` clipped to `[-L, L]`.
#[inline]
pub fn cutoff(x: f64, l: f64) -> f64 {
    x.clamp(-l, l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub bundle: PathBundle,
    /// Number of exponential terms that hit the cap.
    pub clamps: u64,
}

/// Per-particle increments, either precomputed or generated on demand.
pub(crate) enum Increments<'a> {
    Slice(std::slice::Iter<'a, f64>),
    Stream(NoiseStream),
}

impl Increments<'_> {
    #[inline]
    fn next(&mut self) -> f64 {
        match self {
            Self::Slice(it) => *it.next().expect("increment count matches grid"),
            Self::Stream(s) => s.next_increment(),
        }
    }
}

/// Where increments come from for a whole replicate.
#[derive(Clone, Copy)]
pub(crate) enum NoiseSource<'a> {
    Bundle(&'a NoiseBundle),
    Counter(Seed),
}

impl NoiseSource<'_> {
    fn increments(&self, index: TriIndex, dt: f64) -> Increments<'_> {
        match self {
            Self::Bundle(b) => Increments::Slice(b.increments(index).iter()),
            Self::Counter(seed) => Increments::Stream(NoiseStream::new(*seed, index, dt)),
        }
    }
}

/// Everything a particle needs besides its noise.
pub(crate) struct Particle<'a> {
    pub index: TriIndex,
    pub start: f64,
    pub drift: f64,
    pub upper: Option<&'a [f64]>,
    pub lower: Option<&'a [f64]>,
}

/// Shared stepping parameters.
pub(crate) struct Stepper<'a> {
    pub gamma: f64,
    pub cap: f64,
    pub grid: TimeGrid,
    pub truncation: Option<&'a TruncationLevels>,
}

impl Stepper<'_> {
    #[inline]
    fn capped_exp(&self, x: f64, clamps: &mut u64) -> f64 {
        let e = (self.gamma * x).exp();
        if e > self.cap {
            *clamps += 1;
            self.cap
        } else {
            e
        }
    }

    /// Tamed Euler path; stops early when `keep` returns false. Returns whether it finished.
    pub fn euler(
        &self,
        p: &Particle<'_>,
        noise: &mut Increments<'_>,
        out: &mut Vec<f64>,
        clamps: &mut u64,
        keep: &mut impl FnMut(TriIndex, usize, f64) -> bool,
    ) -> Result<bool> {
        let dt = self.grid.dt();
        let scale = 1.0 / self.gamma.sqrt();
        let level = p.index.level();
        let (own_cut, parent_cut) = match self.truncation {
            Some(t) => (
                t.level(level),
                if level > 1 { t.level(level - 1) } else { 0.0 },
            ),
            None => (f64::INFINITY, f64::INFINITY),
        };
        out.clear();
        let mut x = p.start;
        out.push(x);
        if !keep(p.index, 0, x) {
            return Ok(false);
        }
        for i in 0..self.grid.steps() {
            let here = cutoff(x, own_cut);
            let mut drift = p.drift;
            if let Some(lo) = p.lower {
                drift += self.capped_exp(cutoff(lo[i], parent_cut) - here, clamps);
            }
            if let Some(up) = p.upper {
                drift -= self.capped_exp(here - cutoff(up[i], parent_cut), clamps);
            }
            x += noise.next() * scale + drift * dt;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    step: i + 1,
                    level,
                    pos: p.index.pos(),
                });
            }
            out.push(x);
            if !keep(p.index, i + 1, x) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `D(t_i) = W(t_i)/sqrt(gamma) + a (t_i - t_0)`.
    fn driver(&self, p: &Particle<'_>, noise: &mut Increments<'_>) -> Vec<f64> {
        let scale = 1.0 / self.gamma.sqrt();
        let dt = self.grid.dt();
        let mut w = 0.0;
        let mut d = Vec::with_capacity(self.grid.len());
        d.push(0.0);
        for i in 1..=self.grid.steps() {
            w += noise.next();
            d.push(w * scale + p.drift * i as f64 * dt);
        }
        d
    }

    /// Closed form for the one-barrier edges; anything else falls back to Euler.
    pub fn exact_edge(
        &self,
        p: &Particle<'_>,
        noise: &mut Increments<'_>,
        out: &mut Vec<f64>,
        clamps: &mut u64,
        keep: &mut impl FnMut(TriIndex, usize, f64) -> bool,
    ) -> Result<bool> {
        let path = match (p.lower, p.upper) {
            (None, None) => {
                let d = self.driver(p, noise);
                d.iter().map(|v| p.start + v).collect()
            }
            (Some(lo), None) => {
                let d = self.driver(p, noise);
                closed_form_lower(lo, &d, p.start, self.gamma, self.grid.dt())
            }
            (None, Some(up)) => {
                let d: Vec<f64> = self.driver(p, noise).iter().map(|v| -v).collect();
                let lo: Vec<f64> = up.iter().map(|v| -v).collect();
                closed_form_lower(&lo, &d, -p.start, self.gamma, self.grid.dt())
                    .into_iter()
                    .map(|v| -v)
                    .collect()
            }
            (Some(_), Some(_)) => return self.euler(p, noise, out, clamps, keep),
        };
        emit(p.index, path, out, keep)
    }

    /// Hard reflection off the barriers.
    pub fn reflected(
        &self,
        p: &Particle<'_>,
        noise: &mut Increments<'_>,
        out: &mut Vec<f64>,
        keep: &mut impl FnMut(TriIndex, usize, f64) -> bool,
    ) -> Result<bool> {
        let d = self.driver(p, noise);
        let grid = self.grid;
        let path = match (p.lower, p.upper) {
            (None, None) => d.iter().map(|v| p.start + v).collect(),
            (Some(lo), None) => {
                let driver = SamplePath::from_parts_unchecked(grid, d);
                let barrier = SamplePath::from_parts_unchecked(grid, lo.to_vec());
                reflect_above(&driver, &barrier, p.start)?
                    .path
                    .into_values()
            }
            (None, Some(up)) => {
                let driver = SamplePath::from_parts_unchecked(grid, d);
                let barrier = SamplePath::from_parts_unchecked(grid, up.to_vec());
                reflect_below(&driver, &barrier, p.start)?
                    .path
                    .into_values()
            }
            (Some(lo), Some(up)) => {
                let mut x = p.start;
                let mut path = Vec::with_capacity(d.len());
                path.push(x);
                for i in 1..d.len() {
                    x = (x + d[i] - d[i - 1]).max(lo[i]).min(up[i]);
                    path.push(x);
                }
                path
            }
        };
        emit(p.index, path, out, keep)
    }
}

fn emit(
    index: TriIndex,
    path: Vec<f64>,
    out: &mut Vec<f64>,
    keep: &mut impl FnMut(TriIndex, usize, f64) -> bool,
) -> Result<bool> {
    if let Some(i) = path.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: i,
            level: index.level(),
            pos: index.pos(),
        });
    }
    *out = path;
    Ok(out.iter().enumerate().all(|(i, &v)| keep(index, i, v)))
}

/// `T = start + D + (1/gamma) log(1 + gamma int_a^t e^{gamma (L - D - start)})`, with `D(a) = 0`.
fn closed_form_lower(lower: &[f64], driver: &[f64], start: f64, gamma: f64, dt: f64) -> Vec<f64> {
    let d0 = driver[0];
    let exponents: Vec<f64> = lower
        .iter()
        .zip(driver)
        .map(|(l, d)| gamma * (l - (d - d0) - start))
        .collect();
    log_cumulative_trapezoid(&exponents, dt)
        .into_iter()
        .zip(driver)
        .map(|(log_int, d)| start + (d - d0) + smoothed_log(log_int, gamma))
        .collect()
}

/// Outcome of a replicate that may stop early.
pub(crate) struct Run {
    pub paths: Vec<Vec<f64>>,
    pub clamps: u64,
    pub completed: bool,
}

/// Simulates level by level; `keep(index, i, value)` may abort the replicate.
pub(crate) fn run(
    config: &ModelConfig,
    grid: TimeGrid,
    noise: NoiseSource<'_>,
    spec: &IntegratorSpec,
    truncation: Option<&TruncationLevels>,
    mut keep: impl FnMut(TriIndex, usize, f64) -> bool,
) -> Result<Run> {
    let stepper = Stepper {
        gamma: config.gamma,
        cap: spec.drift_cap,
        grid,
        truncation,
    };
    let mut paths: Vec<Vec<f64>> = Vec::with_capacity(tri_count(config.n()));
    let mut clamps = 0;
    for index in indices(config.n()) {
        let mut out = Vec::with_capacity(grid.len());
        let finished = {
            let p = Particle {
                index,
                start: config.initial.get(index),
                drift: config.drifts[index.level() - 1],
                upper: index.upper_barrier().map(|b| paths[b.flat()].as_slice()),
                lower: index.lower_barrier().map(|b| paths[b.flat()].as_slice()),
            };
            let mut inc = noise.increments(index, grid.dt());
            match spec.scheme {
                Scheme::TamedEuler => {
                    stepper.euler(&p, &mut inc, &mut out, &mut clamps, &mut keep)?
                }
                Scheme::ExactEdge => {
                    stepper.exact_edge(&p, &mut inc, &mut out, &mut clamps, &mut keep)?
                }
                Scheme::Reflected => stepper.reflected(&p, &mut inc, &mut out, &mut keep)?,
            }
        };
        paths.push(out);
        if !finished {
            return Ok(Run {
                paths,
                clamps,
                completed: false,
            });
        }
    }
    Ok(Run {
        paths,
        clamps,
        completed: true,
    })
}

fn check_inputs(config: &ModelConfig, grid: &TimeGrid, noise: &NoiseBundle) -> Result<()> {
    config.check()?;
    ensure_same_grid(grid, noise.grid())?;
    if noise.n() != config.n() {
        return Err(Error::ShapeMismatch(format!(
            "noise has N={}, model has N={}",
            noise.n(),
            config.n()
        )));
    }
    let report = validate_initial(&config.initial);
    if let Some(v) = report.violations().next() {
        return Err(Error::InvalidParameter(format!(
            "initial configuration is not interlaced: T{} - T{} = {}",
            v.big, v.small, v.defect
        )));
    }
    Ok(())
}

fn into_simulation(n: usize, grid: TimeGrid, run: Run) -> Result<Simulation> {
    let paths = run
        .paths
        .into_iter()
        .map(|v| SamplePath::from_parts_unchecked(grid, v))
        .collect();
    Ok(Simulation {
        bundle: PathBundle::new(n, paths)?,
        clamps: run.clamps,
    })
}

pub fn simulate(
    config: &ModelConfig,
    grid: TimeGrid,
    noise: &NoiseBundle,
    spec: &IntegratorSpec,
) -> Result<Simulation> {
    check_inputs(config, &grid, noise)?;
    let run = run(
        config,
        grid,
        NoiseSource::Bundle(noise),
        spec,
        None,
        |_, _, _| true,
    )?;
    into_simulation(config.n(), grid, run)
}

/// Tamed Euler on the auxiliary system whose drift exponents use `phi_L` per level.
pub fn simulate_truncated(
    config: &ModelConfig,
    grid: TimeGrid,
    noise: &NoiseBundle,
    levels: &TruncationLevels,
) -> Result<Simulation> {
    check_inputs(config, &grid, noise)?;
    if levels.len() != config.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} cutoffs for {} levels",
            levels.len(),
            config.n()
        )));
    }
    let spec = IntegratorSpec::for_config(config, Scheme::TamedEuler);
    let run = run(
        config,
        grid,
        NoiseSource::Bundle(noise),
        &spec,
        Some(levels),
        |_, _, _| true,
    )?;
    into_simulation(config.n(), grid, run)
}

/// Closed-form edge particle pushed up by `lower`. `noise` is the unscaled
/// cumulative `W`; the particle sees `W/sqrt(gamma)`.
pub fn solve_edge_exact(
    lower: &SamplePath,
    noise: &SamplePath,
    start: f64,
    gamma: f64,
) -> Result<SamplePath> {
    solve_edge_exact_with_drift(lower, noise, start, gamma, 0.0)
}

pub fn solve_edge_exact_with_drift(
    lower: &SamplePath,
    noise: &SamplePath,
    start: f64,
    gamma: f64,
    drift: f64,
) -> Result<SamplePath> {
    ensure_same_grid(lower.grid(), noise.grid())?;
    check_gamma(gamma)?;
    let grid = *lower.grid();
    let scale = 1.0 / gamma.sqrt();
    let w0 = noise.first();
    let driver: Vec<f64> = noise
        .values()
        .iter()
        .enumerate()
        .map(|(i, w)| (w - w0) * scale + drift * (grid.time(i) - grid.start()))
        .collect();
    let values = closed_form_lower(lower.values(), &driver, start, gamma, grid.dt());
    SamplePath::new(grid, values)
}

/// Mirror of [`solve_edge_exact`] for an edge pushed down by `upper`.
pub fn solve_upper_edge_exact(
    upper: &SamplePath,
    noise: &SamplePath,
    start: f64,
    gamma: f64,
) -> Result<SamplePath> {
    Ok(solve_edge_exact(&upper.neg(), &noise.neg(), -start, gamma)?.neg())
}

/// Single particle repelled only by `phi_minus`, via the closed form.
pub fn simulate_tilde0(
    phi_minus: &SamplePath,
    noise: &SamplePath,
    start: f64,
    gamma: f64,
) -> Result<SamplePath> {
    solve_edge_exact(phi_minus, noise, start, gamma)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )))
    }
}

/// One particle between fixed barriers, tamed Euler. Either barrier may be absent.
#[derive(Debug, Clone, Copy)]
pub struct BarrierParticle<'a> {
    pub lower: Option<&'a SamplePath>,
    pub upper: Option<&'a SamplePath>,
    pub start: f64,
    pub gamma: f64,
    pub drift_cap: f64,
}

impl BarrierParticle<'_> {
    /// Path driven by the unscaled increments `dw`; returns the path and the clamp count.
    pub fn simulate(&self, dw: &[f64]) -> Result<(SamplePath, u64)> {
        check_gamma(self.gamma)?;
        let grid = *self
            .lower
            .or(self.upper)
            .ok_or_else(|| {
                Error::InvalidParameter("a barrier particle needs at least one barrier".into())
            })?
            .grid();
        for b in [self.lower, self.upper].into_iter().flatten() {
            ensure_same_grid(&grid, b.grid())?;
        }
        if dw.len() != grid.steps() {
            return Err(Error::ShapeMismatch(format!(
                "{} increments for {} steps",
                dw.len(),
                grid.steps()
            )));
        }
        let stepper = Stepper {
            gamma: self.gamma,
            cap: self.drift_cap,
            grid,
            truncation: None,
        };
        let p = Particle {
            index: TriIndex::new(2, 1, 2)?,
            start: self.start,
            drift: 0.0,
            upper: self.upper.map(|b| b.values()),
            lower: self.lower.map(|b| b.values()),
        };
        let mut out = Vec::new();
        let mut clamps = 0;
        stepper.euler(
            &p,
            &mut Increments::Slice(dw.iter()),
            &mut out,
            &mut clamps,
            &mut |_, _, _| true,
        )?;
        Ok((SamplePath::from_parts_unchecked(grid, out), clamps))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceGap {
    pub gap: f64,
    pub budget: f64,
    pub within: bool,
}

/// Grid sup-norm gap against the budget `e^{-gamma eta / 2} (b - a)`.
pub fn equivalence_gap(
    a: &SamplePath,
    b: &SamplePath,
    eta: f64,
    gamma: f64,
) -> Result<EquivalenceGap> {
    let gap = a.sup_distance(b)?;
    let budget = equivalence_budget(gamma, eta, a.grid().duration());
    Ok(EquivalenceGap {
        gap,
        budget,
        within: gap <= budget,
    })
}

pub fn equivalence_budget(gamma: f64, eta: f64, duration: f64) -> f64 {
    (-gamma * eta / 2.0).exp() * duration
}

/// `C_1 = 1 + sup_t 2 t e^{C - t} = 1 + 2 e^{C - 1}`.
pub fn moment_constant(c: f64) -> f64 {
    1.0 + 2.0 * (c - 1.0).exp()
}

/// `G / (L^2 - C_1 T - C_0^2)` with `G = C_0^2 T + C_1^2 T^2 / 2`.
pub fn escape_probability_bound(c0: f64, c: f64, l: f64, t: f64) -> Result<f64> {
    let c1 = moment_constant(c);
    let denominator = l * l - c1 * t - c0 * c0;
    if !(denominator > 0.0) {
        return Err(Error::Domain { denominator });
    }
    let g = c0 * c0 * t + 0.5 * c1 * c1 * t * t;
    Ok(g / denominator)
}
