//! Monte Carlo experiments.
//!
//! Replicate `r` of an experiment with seed `s` always draws its noise from
//! `Seed { seed: s, replicate: r }`, so results do not depend on the number
//! of worker threads: replicates are mapped in parallel and reduced with
//! integer counters. The same seed is reused across `gamma` values, so
//! per-gamma estimates share their random numbers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    indices, interlacing_defect, InterlaceBounds, ModelConfig, PathBundle, SamplePath, TimeGrid,
    TriIndex,
};
use crate::noise::{NoiseStream, Seed};
use crate::rate::{default_coincidence_eps, total_rate, RateBreakdown, RateOptions};
use crate::sde::{
    self, equivalence_budget, escape_probability_bound, BarrierParticle, IntegratorSpec,
    NoiseSource, Scheme,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Replicates with clamped drift above this fraction make an estimate untrusted.
pub const CONTAMINATION_LIMIT: f64 = 0.01;

/// Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if hits as f64 == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub p_hat: f64,
    pub wilson_ci: (f64, f64),
    pub hits: u64,
    pub n_samples: u64,
    pub gamma: f64,
    pub delta: f64,
    /// Fraction of replicates in which some drift term hit the cap.
    pub clamp_contamination: f64,
}

impl EstimatorResult {
    fn from_counts(hits: u64, contaminated: u64, n: u64, gamma: f64, delta: f64) -> Self {
        Self {
            p_hat: hits as f64 / n as f64,
            wilson_ci: wilson_interval(hits, n, Z95),
            hits,
            n_samples: n,
            gamma,
            delta,
            clamp_contamination: contaminated as f64 / n as f64,
        }
    }

    pub fn trusted(&self) -> bool {
        self.clamp_contamination <= CONTAMINATION_LIMIT
    }
}

#[derive(Clone, Copy, Default)]
struct Tally {
    hits: u64,
    contaminated: u64,
}

impl Tally {
    fn add(self, other: Tally) -> Tally {
        Tally {
            hits: self.hits + other.hits,
            contaminated: self.contaminated + other.contaminated,
        }
    }
}

fn check_samples(n_samples: u64) -> Result<()> {
    if n_samples == 0 {
        Err(Error::EmptySample)
    } else {
        Ok(())
    }
}

/// Fraction of replicates whose every particle stays within `delta` of `phi`
/// at every grid point. Uses tamed Euler with the configuration's cap.
pub fn smallball_probability(
    config: &ModelConfig,
    phi: &PathBundle,
    delta: f64,
    n_samples: u64,
    seed: u64,
) -> Result<EstimatorResult> {
    let spec = IntegratorSpec::for_config(config, Scheme::TamedEuler);
    smallball_probability_with(config, phi, delta, n_samples, seed, &spec)
}

pub fn smallball_probability_with(
    config: &ModelConfig,
    phi: &PathBundle,
    delta: f64,
    n_samples: u64,
    seed: u64,
    spec: &IntegratorSpec,
) -> Result<EstimatorResult> {
    check_samples(n_samples)?;
    config.check()?;
    if phi.n() != config.n() {
        return Err(Error::ShapeMismatch(format!(
            "target has N={}, model has N={}",
            phi.n(),
            config.n()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let grid = *phi.grid();
    let target: Vec<&[f64]> = phi.paths().iter().map(SamplePath::values).collect();
    let tally = (0..n_samples)
        .into_par_iter()
        .map(|r| {
            let noise = NoiseSource::Counter(Seed::new(seed, r));
            let run = sde::run(config, grid, noise, spec, None, |idx: TriIndex, i, v| {
                (v - target[idx.flat()][i]).abs() <= delta
            })?;
            Ok::<_, Error>(Tally {
                hits: u64::from(run.completed),
                contaminated: u64::from(run.clamps > 0),
            })
        })
        .try_reduce(Tally::default, |a, b| Ok(a.add(b)))?;
    Ok(EstimatorResult::from_counts(
        tally.hits,
        tally.contaminated,
        n_samples,
        config.gamma,
        delta,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub gammas: Vec<f64>,
    pub estimates: Vec<EstimatorResult>,
    /// `-log p_hat` per gamma; `+inf` where no replicate hit.
    pub minus_log_p: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Number of gamma values with `p_hat > 0`.
    pub usable: usize,
    /// Rate of the target bundle, for comparison with `slope`.
    pub predicted: RateBreakdown,
}

impl SlopeFit {
    /// `-(1/gamma) log p_hat` per gamma.
    pub fn per_gamma_slopes(&self) -> Vec<f64> {
        self.minus_log_p
            .iter()
            .zip(&self.gammas)
            .map(|(m, g)| m / g)
            .collect()
    }

    pub fn trusted(&self) -> bool {
        self.estimates.iter().all(EstimatorResult::trusted)
    }
}

/// Unweighted least squares `y = slope * x + intercept`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Small-ball probabilities at each `gamma` and the fitted decay rate of `-log p_hat`.
pub fn ldp_slope(
    template: &ModelConfig,
    phi: &PathBundle,
    delta: f64,
    gammas: &[f64],
    n_samples: u64,
    seed: u64,
) -> Result<SlopeFit> {
    let estimates = gammas
        .iter()
        .map(|&g| smallball_probability(&template.with_gamma(g)?, phi, delta, n_samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let minus_log_p: Vec<f64> = estimates.iter().map(|e| -e.p_hat.ln()).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = gammas
        .iter()
        .zip(&minus_log_p)
        .filter(|(_, m)| m.is_finite())
        .map(|(g, m)| (*g, *m))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::DegenerateFit { usable: xs.len() });
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let max_gamma = gammas.iter().copied().fold(f64::MIN, f64::max);
    let eps = default_coincidence_eps(phi.grid().dt(), max_gamma);
    let predicted = total_rate(phi, &template.initial, &RateOptions::new(eps)?)?;
    Ok(SlopeFit {
        gammas: gammas.to_vec(),
        estimates,
        minus_log_p,
        slope,
        intercept,
        usable: xs.len(),
        predicted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterlaceFrequency {
    pub gamma: f64,
    pub bounds: InterlaceBounds,
    pub n_samples: u64,
    /// Replicates where some `A_n` fails.
    pub a_violations: u64,
    /// Replicates where some existing `B_n` fails.
    pub b_violations: u64,
    /// Replicates where some `C_n` fails.
    pub c_violations: u64,
    /// Replicates where some level has `C_n` but not `B_n`.
    pub c_without_b: u64,
    pub clamp_contamination: f64,
}

impl InterlaceFrequency {
    fn freq(&self, count: u64) -> f64 {
        count as f64 / self.n_samples as f64
    }

    pub fn a_frequency(&self) -> f64 {
        self.freq(self.a_violations)
    }

    pub fn b_frequency(&self) -> f64 {
        self.freq(self.b_violations)
    }

    pub fn c_frequency(&self) -> f64 {
        self.freq(self.c_violations)
    }

    pub fn a_interval(&self) -> (f64, f64) {
        wilson_interval(self.a_violations, self.n_samples, Z95)
    }
}

#[derive(Clone, Copy, Default)]
struct EventTally {
    a: u64,
    b: u64,
    c: u64,
    c_not_b: u64,
    contaminated: u64,
}

impl EventTally {
    fn add(self, o: Self) -> Self {
        Self {
            a: self.a + o.a,
            b: self.b + o.b,
            c: self.c + o.c,
            c_not_b: self.c_not_b + o.c_not_b,
            contaminated: self.contaminated + o.contaminated,
        }
    }
}

/// Violation frequencies of the interlacing events with margins
/// `f = margin_scale / sqrt(gamma)`, `g = 2 f`, grown by `4^(n-1)` per level.
pub fn interlace_event_frequency(
    template: &ModelConfig,
    grid: TimeGrid,
    gammas: &[f64],
    n_samples: u64,
    seed: u64,
    margin_scale: f64,
) -> Result<Vec<InterlaceFrequency>> {
    check_samples(n_samples)?;
    gammas
        .iter()
        .map(|&gamma| {
            let config = template.with_gamma(gamma)?;
            let bounds = InterlaceBounds::for_gamma(gamma)?.scaled(margin_scale)?;
            let spec = IntegratorSpec::for_config(&config, Scheme::TamedEuler);
            let t = (0..n_samples)
                .into_par_iter()
                .map(|r| {
                    let noise = NoiseSource::Counter(Seed::new(seed, r));
                    let run = sde::run(&config, grid, noise, &spec, None, |_, _, _| true)?;
                    let paths = run
                        .paths
                        .into_iter()
                        .map(|v| SamplePath::new(grid, v))
                        .collect::<Result<Vec<_>>>()?;
                    let d = interlacing_defect(&PathBundle::new(config.n(), paths)?, bounds);
                    let any = |f: &dyn Fn(&crate::model::LevelEvents) -> bool| {
                        u64::from(d.events.iter().any(f))
                    };
                    Ok::<_, Error>(EventTally {
                        a: any(&|e| !e.a),
                        b: any(&|e| e.b == Some(false)),
                        c: any(&|e| !e.c),
                        c_not_b: any(&|e| e.c && e.b == Some(false)),
                        contaminated: u64::from(run.clamps > 0),
                    })
                })
                .try_reduce(EventTally::default, |a, b| Ok(a.add(b)))?;
            Ok(InterlaceFrequency {
                gamma,
                bounds,
                n_samples,
                a_violations: t.a,
                b_violations: t.b,
                c_violations: t.c,
                c_without_b: t.c_not_b,
                clamp_contamination: t.contaminated as f64 / n_samples as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub gamma: f64,
    pub eta: f64,
    pub n_samples: u64,
    /// Replicates whose two-barrier path stays at least `eta` below the upper barrier.
    pub in_tube: u64,
    /// In-tube replicates whose gap exceeds the budget.
    pub violations: u64,
    /// In-tube replicates where the one-barrier path dips below the two-barrier path.
    pub order_violations: u64,
    pub max_gap: f64,
    pub budget: f64,
    pub clamp_contamination: f64,
}

#[derive(Clone, Copy, Default)]
struct GapTally {
    in_tube: u64,
    violations: u64,
    order: u64,
    contaminated: u64,
    max_gap: f64,
}

/// Couples the two-barrier particle between `0` and `2 eta` with the
/// one-barrier particle above `0`, both from `0` under the same noise and
/// the same tamed Euler scheme.
pub fn equivalence_experiment(
    gamma: f64,
    eta: f64,
    grid: TimeGrid,
    n_samples: u64,
    seed: u64,
) -> Result<EquivalenceReport> {
    check_samples(n_samples)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let lower = SamplePath::constant(grid, 0.0)?;
    let upper = SamplePath::constant(grid, 2.0 * eta)?;
    let cap = crate::model::default_drift_cap(gamma);
    let both = BarrierParticle {
        lower: Some(&lower),
        upper: Some(&upper),
        start: 0.0,
        gamma,
        drift_cap: cap,
    };
    let one = BarrierParticle {
        upper: None,
        ..both
    };
    let budget = equivalence_budget(gamma, eta, grid.duration());
    let ceiling = eta;
    let t = (0..n_samples)
        .into_par_iter()
        .map(|r| {
            let mut stream =
                NoiseStream::new(Seed::new(seed, r), TriIndex::new(1, 1, 1)?, grid.dt());
            let dw: Vec<f64> = (0..grid.steps()).map(|_| stream.next_increment()).collect();
            let (t, c1) = both.simulate(&dw)?;
            let (t0, c2) = one.simulate(&dw)?;
            let mut tally = GapTally {
                contaminated: u64::from(c1 + c2 > 0),
                ..GapTally::default()
            };
            if t.values().iter().all(|&v| v <= ceiling) {
                let gap = t0.sup_distance(&t)?;
                tally.in_tube = 1;
                tally.violations = u64::from(gap > budget);
                tally.order = u64::from(t0.values().iter().zip(t.values()).any(|(a, b)| a < b));
                tally.max_gap = gap;
            }
            Ok::<_, Error>(tally)
        })
        .try_reduce(GapTally::default, |a, b| {
            Ok(GapTally {
                in_tube: a.in_tube + b.in_tube,
                violations: a.violations + b.violations,
                order: a.order + b.order,
                contaminated: a.contaminated + b.contaminated,
                max_gap: a.max_gap.max(b.max_gap),
            })
        })?;
    Ok(EquivalenceReport {
        gamma,
        eta,
        n_samples,
        in_tube: t.in_tube,
        violations: t.violations,
        order_violations: t.order,
        max_gap: t.max_gap,
        budget,
        clamp_contamination: t.contaminated as f64 / n_samples as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeReport {
    pub n_samples: u64,
    pub escapes: u64,
    pub frequency: f64,
    pub standard_error: f64,
    /// `None` when the bound is vacuous for these parameters.
    pub bound: Option<f64>,
}

/// Unscaled particle `dX = dW + (e^{-C - X} - e^{X - C}) dt` from `X(0) = c0`;
/// counts replicates with `max X^2 >= L^2` on the grid.
pub fn escape_experiment(
    c0: f64,
    c: f64,
    l: f64,
    grid: TimeGrid,
    n_samples: u64,
    seed: u64,
) -> Result<EscapeReport> {
    check_samples(n_samples)?;
    let lower = SamplePath::constant(grid, -c)?;
    let upper = SamplePath::constant(grid, c)?;
    // Keeps the explicit step monotone: dt * cap <= 1/2.
    let cap = 0.5 / grid.dt();
    let particle = BarrierParticle {
        lower: Some(&lower),
        upper: Some(&upper),
        start: c0,
        gamma: 1.0,
        drift_cap: cap,
    };
    let escapes = (0..n_samples)
        .into_par_iter()
        .map(|r| {
            let mut stream =
                NoiseStream::new(Seed::new(seed, r), TriIndex::new(1, 1, 1)?, grid.dt());
            let dw: Vec<f64> = (0..grid.steps()).map(|_| stream.next_increment()).collect();
            let (x, _) = particle.simulate(&dw)?;
            Ok::<_, Error>(u64::from(x.values().iter().any(|v| v * v >= l * l)))
        })
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    let frequency = escapes as f64 / n_samples as f64;
    Ok(EscapeReport {
        n_samples,
        escapes,
        frequency,
        standard_error: (frequency * (1.0 - frequency) / n_samples as f64).sqrt(),
        bound: escape_probability_bound(c0, c, l, grid.duration()).ok(),
    })
}

/// Particles of an `n`-level configuration, in storage order.
pub fn particle_count(n: usize) -> usize {
    indices(n).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TriangularConfiguration;

    #[test]
    fn wilson_contains_estimate() {
        for &(h, n) in &[(0u64, 10u64), (5, 10), (10, 10), (1, 1000)] {
            let (lo, hi) = wilson_interval(h, n, Z95);
            let p = h as f64 / n as f64;
            assert!(lo <= p && p <= hi);
            assert!((0.0..=1.0).contains(&lo) && hi <= 1.0);
        }
        // Reference value for 5 of 10.
        let (lo, hi) = wilson_interval(5, 10, Z95);
        assert!((lo - 0.236_593).abs() < 1e-5 && (hi - 0.763_407).abs() < 1e-5);
    }

    #[test]
    fn least_squares_line() {
        let (s, c) = least_squares(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((s - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huge_tube_always_hits() {
        let grid = TimeGrid::unit(50).unwrap();
        let cfg = ModelConfig::new(TriangularConfiguration::zeros(2).unwrap(), 4.0).unwrap();
        let phi = PathBundle::constant(grid, &cfg.initial).unwrap();
        let est = smallball_probability(&cfg, &phi, 1e3, 64, 1).unwrap();
        assert_eq!(est.p_hat, 1.0);
        assert!(matches!(
            smallball_probability(&cfg, &phi, 1.0, 0, 1),
            Err(Error::EmptySample)
        ));
    }
}
