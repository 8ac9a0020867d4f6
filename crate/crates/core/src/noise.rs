//! Counter-addressed Gaussian increments.
//!
//! Every increment is a pure function of `(seed, replicate, particle, step)`:
//! a splitmix64 key is derived from the first three, and steps `2j`, `2j+1`
//! share one Box-Muller pair drawn from counters `2j`, `2j+1` under that key.

use crate::error::{Error, Result};
use crate::model::{tri_count, SamplePath, TimeGrid, TriIndex};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x6A09_E667_F3BC_C908;
const REPLICATE_MUL: u64 = 0xBB67_AE85_84CA_A73B;
const INDEX_MUL: u64 = 0x3C6E_F372_FE94_F82B;

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Experiment seed plus replicate number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed {
    pub seed: u64,
    pub replicate: u64,
}

impl Seed {
    pub fn new(seed: u64, replicate: u64) -> Self {
        Self { seed, replicate }
    }

    pub fn with_replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }

    /// Stream key of one particle.
    pub fn key(&self, flat_index: usize) -> u64 {
        let k = mix(self.seed ^ SEED_SALT);
        let k = mix(k ^ self.replicate.wrapping_mul(REPLICATE_MUL));
        mix(k ^ (flat_index as u64).wrapping_mul(INDEX_MUL))
    }

    /// `# seed=<u64> replicate=<u64>` without the leading marker.
    pub fn header(&self) -> String {
        format!("seed={} replicate={}", self.seed, self.replicate)
    }
}

#[inline]
fn counter_bits(key: u64, counter: u64) -> u64 {
    mix(key.wrapping_add(counter.wrapping_mul(GOLDEN)))
}

/// Box-Muller pair for `pair`; `u1` is in `(0, 1]` so the log is finite.
#[inline]
fn normal_pair(key: u64, pair: u64) -> (f64, f64) {
    let scale = 1.0 / (1u64 << 53) as f64;
    let u1 = ((counter_bits(key, 2 * pair) >> 11) + 1) as f64 * scale;
    let u2 = (counter_bits(key, 2 * pair + 1) >> 11) as f64 * scale;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Standard normal addressed by `(key, step)`.
pub fn standard_normal(key: u64, step: usize) -> f64 {
    let (c, s) = normal_pair(key, (step / 2) as u64);
    if step.is_multiple_of(2) {
        c
    } else {
        s
    }
}

/// Sequential reader of one particle's increments; bit-identical to [`standard_normal`].
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: u64,
    scale: f64,
    step: usize,
    spare: Option<f64>,
}

impl NoiseStream {
    pub fn new(seed: Seed, index: TriIndex, dt: f64) -> Self {
        Self {
            key: seed.key(index.flat()),
            scale: dt.sqrt(),
            step: 0,
            spare: None,
        }
    }

    /// Next increment `dW ~ N(0, dt)`.
    #[inline]
    pub fn next_increment(&mut self) -> f64 {
        let z = match self.spare.take() {
            Some(z) => z,
            None => {
                let (c, s) = normal_pair(self.key, (self.step / 2) as u64);
                self.spare = Some(s);
                c
            }
        };
        self.step += 1;
        z * self.scale
    }
}

/// Increments `dW_i` for every particle on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    grid: TimeGrid,
    n: usize,
    increments: Vec<Vec<f64>>,
}

impl NoiseBundle {
    pub fn new(grid: TimeGrid, n: usize, increments: Vec<Vec<f64>>) -> Result<Self> {
        if n == 0 || increments.len() != tri_count(n) {
            return Err(Error::ShapeMismatch(format!(
                "N={n} needs {} increment rows, got {}",
                tri_count(n),
                increments.len()
            )));
        }
        for row in &increments {
            if row.len() != grid.steps() {
                return Err(Error::ShapeMismatch(format!(
                    "{} increments for {} steps",
                    row.len(),
                    grid.steps()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("noise increment".into()));
            }
        }
        Ok(Self {
            grid,
            n,
            increments,
        })
    }

    /// Noise-free bundle.
    pub fn zeros(grid: TimeGrid, n: usize) -> Result<Self> {
        Self::new(grid, n, vec![vec![0.0; grid.steps()]; tri_count(n)])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn increments(&self, index: TriIndex) -> &[f64] {
        &self.increments[index.flat()]
    }

    /// `W` on the grid with `W(a) = 0`.
    pub fn cumulative(&self, index: TriIndex) -> SamplePath {
        cumulative(self.grid, self.increments(index))
    }
}

/// Running sum of increments starting from 0.
pub fn cumulative(grid: TimeGrid, increments: &[f64]) -> SamplePath {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut w = 0.0;
    values.push(w);
    for dw in increments {
        w += dw;
        values.push(w);
    }
    SamplePath::from_parts_unchecked(grid, values)
}

pub fn sample_noise(seed: Seed, grid: TimeGrid, n: usize) -> Result<NoiseBundle> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    let increments = crate::model::indices(n)
        .map(|idx| {
            let mut stream = NoiseStream::new(seed, idx, grid.dt());
            (0..grid.steps()).map(|_| stream.next_increment()).collect()
        })
        .collect();
    Ok(NoiseBundle {
        grid,
        n,
        increments,
    })
}
