//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use whittaker_ldp::model::{SamplePath, TimeGrid};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Gaussian random walk with step `sigma`, started at `start`.
pub fn random_walk(rng: &mut StdRng, grid: TimeGrid, start: f64, sigma: f64) -> SamplePath {
    let mut x = start;
    let mut v = Vec::with_capacity(grid.len());
    v.push(x);
    for _ in 0..grid.steps() {
        // Sum of uniforms: cheap, symmetric, unit variance.
        let z: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
        x += sigma * z;
        v.push(x);
    }
    SamplePath::new(grid, v).unwrap()
}

/// Piecewise-linear path through `knots[j]` at grid point `j * stride`.
pub fn piecewise_linear(grid: TimeGrid, stride: usize, knots: &[f64]) -> SamplePath {
    assert_eq!((knots.len() - 1) * stride, grid.steps());
    let values = (0..grid.len())
        .map(|i| {
            let j = (i / stride).min(knots.len() - 2);
            let s = (i - j * stride) as f64 / stride as f64;
            knots[j] + (knots[j + 1] - knots[j]) * s
        })
        .collect();
    SamplePath::new(grid, values).unwrap()
}

/// `P(sup_{[0,1]} |B(t) - mu t| <= a)` for standard Brownian motion, by
/// Girsanov plus the sine series of Brownian motion killed outside `(-a, a)`.
pub fn tube_probability(a: f64, mu: f64) -> f64 {
    let mut sum = 0.0;
    for k in 1..=400 {
        let w = k as f64 * std::f64::consts::PI / (2.0 * a);
        let decay = (-0.5 * w * w).exp();
        if decay < 1e-300 {
            break;
        }
        let s = (k as f64 * std::f64::consts::FRAC_PI_2).sin();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let integral =
            (mu * a).exp() * w * (1.0 - sign * (-2.0 * a * mu).exp()) / (mu * mu + w * w);
        sum += s / a * decay * integral;
    }
    (-0.5 * mu * mu).exp() * sum
}

/// Grid-monitored version: the continuous barrier moved out by `0.5826 sqrt(dt)`.
pub fn tube_probability_discrete(a: f64, mu: f64, dt: f64) -> f64 {
    tube_probability(a + 0.5826 * dt.sqrt(), mu)
}

/// `P(sup |B/sqrt(gamma) - c t| <= delta)`.
pub fn schilder_tube(c: f64, delta: f64, gamma: f64) -> f64 {
    tube_probability(delta * gamma.sqrt(), c * gamma.sqrt())
}

/// Second route for the driftless case: the alternating image sum
/// `sum_k (-1)^k [Phi((2k+1)a) - Phi((2k-1)a)]`.
pub fn tube_probability_images(a: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let phi = Normal::standard();
    (-40i32..=40)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (phi.cdf((2 * k + 1) as f64 * a) - phi.cdf((2 * k - 1) as f64 * a))
        })
        .sum()
}
