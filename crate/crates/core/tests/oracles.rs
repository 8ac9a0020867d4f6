//! Simulation and estimator checks against independent closed forms.

mod common;

use whittaker_ldp::mc::{
    equivalence_experiment, interlace_event_frequency, ldp_slope, smallball_probability,
};
use whittaker_ldp::model::{
    indices, interlacing_defect, InterlaceBounds, ModelConfig, PathBundle, SamplePath, TimeGrid,
    TriIndex, TriangularConfiguration,
};
use whittaker_ldp::noise::{cumulative, sample_noise, NoiseBundle, Seed};
use whittaker_ldp::rate::{total_rate, RateOptions};
use whittaker_ldp::sde::{
    simulate, simulate_tilde0, simulate_truncated, solve_edge_exact, IntegratorSpec, Scheme,
    TruncationLevels,
};
use whittaker_ldp::Error;

fn config(n: usize, values: &[f64], gamma: f64) -> ModelConfig {
    ModelConfig::new(
        TriangularConfiguration::new(n, values.to_vec()).unwrap(),
        gamma,
    )
    .unwrap()
}

fn zeros(n: usize, gamma: f64) -> ModelConfig {
    ModelConfig::new(TriangularConfiguration::zeros(n).unwrap(), gamma).unwrap()
}

fn euler(cfg: &ModelConfig) -> IntegratorSpec {
    IntegratorSpec::for_config(cfg, Scheme::TamedEuler)
}

#[test]
fn increments_have_brownian_moments() {
    let grid = TimeGrid::unit(1000).unwrap();
    // 14 levels give 105 paths, so 105 000 increments.
    let noise = sample_noise(Seed::new(7, 0), grid, 14).unwrap();
    let all: Vec<f64> = indices(14)
        .flat_map(|i| noise.increments(i).to_vec())
        .collect();
    let n = all.len() as f64;
    let dt = grid.dt();
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 4.0 * (dt / n).sqrt(), "mean {mean}");
    assert!((var - dt).abs() <= 0.05 * dt, "variance {var}");
}

#[test]
fn single_particle_small_ball_matches_series() {
    let grid = TimeGrid::with_spacing(0.0, 1.0, 1e-4).unwrap();
    let phi = PathBundle::new(1, vec![SamplePath::constant(grid, 0.0).unwrap()]).unwrap();
    let r = smallball_probability(&zeros(1, 16.0), &phi, 0.3, 20_000, 11).unwrap();
    let continuous = common::tube_probability(1.2, 0.0);
    let images = common::tube_probability_images(1.2);
    assert!(
        (continuous - images).abs() < 1e-9,
        "series {continuous} vs images {images}"
    );
    let oracle = common::tube_probability_discrete(1.2, 0.0, grid.dt());
    let (lo, hi) = r.wilson_ci;
    assert!(
        lo <= oracle && oracle <= hi,
        "p_hat {} CI ({lo}, {hi}) oracle {oracle}",
        r.p_hat
    );
}

#[test]
fn drifted_small_ball_matches_girsanov_series() {
    let grid = TimeGrid::unit(1000).unwrap();
    let (c, delta, gamma) = (0.5, 0.25, 16.0);
    let phi = PathBundle::new(1, vec![SamplePath::from_fn(grid, |t| c * t).unwrap()]).unwrap();
    let r = smallball_probability(&zeros(1, gamma), &phi, delta, 100_000, 12).unwrap();
    let oracle =
        common::tube_probability_discrete(delta * gamma.sqrt(), c * gamma.sqrt(), grid.dt());
    let se = (oracle * (1.0 - oracle) / 100_000.0).sqrt();
    assert!(
        (r.p_hat - oracle).abs() <= 4.0 * se,
        "p_hat {} oracle {oracle}",
        r.p_hat
    );
}

#[test]
fn huge_tube_and_empty_sample() {
    let grid = TimeGrid::unit(50).unwrap();
    let phi = PathBundle::constant(grid, &TriangularConfiguration::zeros(2).unwrap()).unwrap();
    let r = smallball_probability(&zeros(2, 4.0), &phi, 1e3, 200, 1).unwrap();
    assert_eq!(r.p_hat, 1.0);
    assert!(matches!(
        smallball_probability(&zeros(2, 4.0), &phi, 0.5, 0, 1),
        Err(Error::EmptySample)
    ));
}

#[test]
fn estimates_are_reproducible_and_thread_independent() {
    let grid = TimeGrid::unit(200).unwrap();
    let cfg = config(2, &[0.0, 0.5, -0.5], 8.0);
    let phi = PathBundle::constant(grid, &cfg.initial).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| smallball_probability(&cfg, &phi, 0.4, 3000, 99).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(4));
}

#[test]
fn estimate_grows_with_delta() {
    let grid = TimeGrid::unit(200).unwrap();
    let cfg = config(2, &[0.0, 0.5, -0.5], 8.0);
    let phi = PathBundle::constant(grid, &cfg.initial).unwrap();
    let p: Vec<f64> = [0.2, 0.3, 0.5, 0.8]
        .iter()
        .map(|&d| smallball_probability(&cfg, &phi, d, 4000, 5).unwrap().p_hat)
        .collect();
    assert!(p.windows(2).all(|w| w[0] <= w[1]), "{p:?}");
}

#[test]
fn zero_rate_target_has_flat_slope() {
    let grid = TimeGrid::unit(500).unwrap();
    let phi = PathBundle::new(1, vec![SamplePath::constant(grid, 0.0).unwrap()]).unwrap();
    let gammas = [8.0, 16.0, 32.0];
    for (delta, tol) in [(0.5, 2e-3), (1.0, 1e-3)] {
        let fit = ldp_slope(&zeros(1, 8.0), &phi, delta, &gammas, 20_000, 3).unwrap();
        assert_eq!(fit.predicted.total, 0.0);
        // Finite delta tilts the fit; the series says by how much.
        let y: Vec<f64> = gammas
            .iter()
            .map(|g| -common::tube_probability_discrete(delta * g.sqrt(), 0.0, grid.dt()).ln())
            .collect();
        let (oracle, _) = whittaker_ldp::mc::least_squares(&gammas, &y);
        assert!(
            (fit.slope - oracle).abs() < tol,
            "delta {delta}: slope {} oracle {oracle}",
            fit.slope
        );
        if delta == 1.0 {
            assert!(fit.slope.abs() < 2e-3, "slope {}", fit.slope);
        }
    }
}

#[test]
fn single_particle_is_initial_plus_scaled_noise() {
    let grid = TimeGrid::unit(100).unwrap();
    let cfg = config(1, &[0.7], 9.0);
    let noise = sample_noise(Seed::new(3, 1), grid, 1).unwrap();
    let sim = simulate(&cfg, grid, &noise, &euler(&cfg)).unwrap();
    let mut x = 0.7;
    for (i, v) in sim.bundle.paths()[0].values().iter().enumerate() {
        assert_eq!(*v, x);
        if i < grid.steps() {
            x += noise.increments(TriIndex::new(1, 1, 1).unwrap())[i] * (1.0 / 9f64.sqrt())
                + 0.0 * grid.dt();
        }
    }
}

#[test]
fn mirrored_start_gives_mirrored_edges() {
    let grid = TimeGrid::unit(1000).unwrap();
    let cfg = config(2, &[0.0, 0.3, -0.3], 2.0);
    let sim = simulate(
        &cfg,
        grid,
        &NoiseBundle::zeros(grid, 2).unwrap(),
        &euler(&cfg),
    )
    .unwrap();
    let top = sim.bundle.path(TriIndex::new(2, 1, 2).unwrap());
    let bottom = sim.bundle.path(TriIndex::new(2, 2, 2).unwrap());
    assert!(top.sup_distance(&bottom.neg()).unwrap() == 0.0);
}

#[test]
fn inactive_truncation_is_bit_identical() {
    let grid = TimeGrid::unit(500).unwrap();
    let cfg = zeros(3, 8.0);
    let noise = sample_noise(Seed::new(21, 0), grid, 3).unwrap();
    let plain = simulate(&cfg, grid, &noise, &euler(&cfg)).unwrap();
    let cut = simulate_truncated(
        &cfg,
        grid,
        &noise,
        &TruncationLevels::uniform(3, 1e6).unwrap(),
    )
    .unwrap();
    assert_eq!(plain.clamps, 0);
    assert_eq!(plain, cut);
}

#[test]
fn tilde0_examples() {
    let grid = TimeGrid::unit(1000).unwrap();
    let noise = cumulative(
        grid,
        sample_noise(Seed::new(8, 0), grid, 1)
            .unwrap()
            .increments(TriIndex::new(1, 1, 1).unwrap()),
    );
    let far = SamplePath::constant(grid, -10.0).unwrap();
    let start = 0.2;
    let out = simulate_tilde0(&far, &noise, start, 4.0).unwrap();
    let free = noise.map(|w| start + w / 2.0).unwrap();
    // Drift is at most e^{4(-10 - min T)}; min T stays far above -5 here.
    assert!(out.sup_distance(&free).unwrap() <= (-4.0f64 * 5.0).exp());

    let zero = SamplePath::constant(grid, 0.0).unwrap();
    let glued = SamplePath::constant(grid, start).unwrap();
    let out = simulate_tilde0(&glued, &zero, start, 8.0).unwrap();
    for (i, v) in out.values().iter().enumerate() {
        let exact = start + (1.0 + 8.0 * grid.time(i)).ln() / 8.0;
        assert!(
            (v - exact).abs() <= 1e-6,
            "t={} {v} vs {exact}",
            grid.time(i)
        );
    }
    assert_eq!(out, solve_edge_exact(&glued, &zero, start, 8.0).unwrap());
}

#[test]
fn exact_edge_with_constant_barrier() {
    let grid = TimeGrid::unit(2000).unwrap();
    let zero = SamplePath::constant(grid, 0.0).unwrap();
    for c in [-1.0, 0.0, 0.5] {
        let lower = SamplePath::constant(grid, c).unwrap();
        let out = solve_edge_exact(&lower, &zero, 0.0, 1.0).unwrap();
        let want = SamplePath::from_fn(grid, |t| (1.0 + t * f64::exp(c)).ln()).unwrap();
        assert!(out.sup_distance(&want).unwrap() <= 1e-12);
    }
}

/// Coarse noise built by summing fine increments, so both grids see one Brownian path.
fn coarsen(fine: &NoiseBundle, factor: usize) -> NoiseBundle {
    let grid = TimeGrid::unit(fine.grid().steps() / factor).unwrap();
    let incs = indices(fine.n())
        .map(|i| {
            fine.increments(i)
                .chunks(factor)
                .map(|c| c.iter().sum())
                .collect()
        })
        .collect();
    NoiseBundle::new(grid, fine.n(), incs).unwrap()
}

#[test]
fn euler_approaches_exact_edge_under_refinement() {
    let fine_grid = TimeGrid::unit(20_000).unwrap();
    let cfg = zeros(2, 8.0);
    let (mut coarse_gap, mut fine_gap) = (0.0, 0.0);
    for r in 0..8 {
        let fine = sample_noise(Seed::new(31, r), fine_grid, 2).unwrap();
        for (noise, acc) in [(coarsen(&fine, 20), &mut coarse_gap), (fine, &mut fine_gap)] {
            let grid = *noise.grid();
            let a = simulate(&cfg, grid, &noise, &euler(&cfg)).unwrap();
            let b = simulate(
                &cfg,
                grid,
                &noise,
                &IntegratorSpec::for_config(&cfg, Scheme::ExactEdge),
            )
            .unwrap();
            *acc += a.bundle.sup_distance(&b.bundle).unwrap();
        }
    }
    // A twentyfold refinement should shrink the gap by far more than 2.
    assert!(
        fine_gap * 2.0 < coarse_gap,
        "coarse {coarse_gap} fine {fine_gap}"
    );
}

#[test]
fn defect_matches_pointwise_scan() {
    let grid = TimeGrid::with_spacing(0.0, 1.0, 1e-4).unwrap();
    let cfg = zeros(3, 64.0);
    let noise = sample_noise(Seed::new(64, 2), grid, 3).unwrap();
    let sim = simulate(&cfg, grid, &noise, &euler(&cfg)).unwrap().bundle;
    let bounds = InterlaceBounds::for_gamma(64.0).unwrap();
    let d = interlacing_defect(&sim, bounds);
    let at = |n: usize, k: usize, i: usize| sim.path(TriIndex::new(n, k, 3).unwrap()).values()[i];
    for n in 1..3 {
        let mut adj = f64::INFINITY;
        let mut gap = f64::INFINITY;
        for i in 0..grid.len() {
            for k in 1..=n {
                adj = adj
                    .min(at(n + 1, k, i) - at(n, k, i))
                    .min(at(n, k, i) - at(n + 1, k + 1, i));
                gap = gap.min(at(n + 1, k, i) - at(n + 1, k + 1, i));
            }
        }
        let scale = 4f64.powi(n as i32 - 1);
        let e = d.events[n - 1];
        assert_eq!(e.a, adj >= -scale * bounds.f());
        assert_eq!(e.c, gap >= -scale * bounds.g());
    }
    let e = d.events[0];
    let mut next = f64::INFINITY;
    for i in 0..grid.len() {
        for k in 1..=2 {
            next = next
                .min(at(3, k, i) - at(2, k, i))
                .min(at(2, k, i) - at(3, k + 1, i));
        }
    }
    assert_eq!(e.b, Some(next >= -2.0 * bounds.g()));
    assert_eq!(d.events[1].b, None);
}

#[test]
fn wider_margins_never_raise_violation_counts() {
    let grid = TimeGrid::unit(2000).unwrap();
    let narrow = interlace_event_frequency(&zeros(3, 8.0), grid, &[4.0], 2000, 17, 0.1).unwrap();
    let wide = interlace_event_frequency(&zeros(3, 8.0), grid, &[4.0], 2000, 17, 1.0).unwrap();
    assert!(
        narrow[0].a_violations > 0,
        "narrow margins should show violations"
    );
    assert!(wide[0].a_violations <= narrow[0].a_violations);
    assert!(wide[0].b_violations <= narrow[0].b_violations);
    assert!(wide[0].c_violations <= narrow[0].c_violations);
}

#[test]
fn touching_barrier_keeps_report_well_defined() {
    let grid = TimeGrid::unit(1000).unwrap();
    let r = equivalence_experiment(16.0, 1e-3, grid, 200, 4).unwrap();
    assert!(r.in_tube <= r.n_samples);
    assert!(r.budget.is_finite() && r.budget > 0.0);
}

#[test]
fn interlaced_linear_bundle_has_schilder_rate() {
    let grid = TimeGrid::unit(100).unwrap();
    let start = TriangularConfiguration::new(2, vec![0.0, 1.0, -1.0]).unwrap();
    let end = TriangularConfiguration::new(2, vec![0.3, 1.5, -1.2]).unwrap();
    let bundle = PathBundle::linear(grid, &start, &end).unwrap();
    let r = total_rate(&bundle, &start, &RateOptions::new(1e-6).unwrap()).unwrap();
    let want = 0.5 * (0.3f64.powi(2) + 0.5f64.powi(2) + 0.2f64.powi(2));
    assert!((r.total - want).abs() <= 1e-12, "{} vs {want}", r.total);
}
