//! Most-likely bundles between two fixed configurations.
//!
//! Projected gradient descent on the interior grid values of every particle.
//! Each trial step is projected back onto the interlacing cone slice by
//! slice and accepted only if the discretized rate drops.

use crate::error::{Error, Result};
use crate::model::{
    indices, validate_initial, PathBundle, SamplePath, TimeGrid, TriIndex, TriangularConfiguration,
};
use crate::rate::{classify, total_rate, CellLabel, Convention, RateOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalProblem {
    pub grid: TimeGrid,
    pub initial: TriangularConfiguration,
    pub terminal: TriangularConfiguration,
    pub eps: f64,
    pub max_iters: usize,
    /// First trial step; `None` means `dt / 2`.
    pub initial_step: Option<f64>,
    pub convention: Convention,
}

impl VariationalProblem {
    pub fn new(
        grid: TimeGrid,
        initial: TriangularConfiguration,
        terminal: TriangularConfiguration,
    ) -> Result<Self> {
        let p = Self {
            grid,
            initial,
            terminal,
            eps: 1e-9,
            max_iters: 5000,
            initial_step: None,
            convention: Convention::Lemma,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.initial.n() != self.terminal.n() {
            return Err(Error::ShapeMismatch(
                "endpoint configurations differ in N".into(),
            ));
        }
        for (name, c) in [("initial", &self.initial), ("terminal", &self.terminal)] {
            if let Some(v) = validate_initial(c).violations().next() {
                return Err(Error::InvalidParameter(format!(
                    "{name} configuration is not interlaced: T{} - T{} = {}",
                    v.big, v.small, v.defect
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    fn options(&self) -> Result<RateOptions> {
        Ok(RateOptions::new(self.eps)?.with_convention(self.convention))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// Budget exhausted; the best iterate is still returned.
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalResult {
    pub bundle: PathBundle,
    pub rate: f64,
    pub baseline_rate: f64,
    pub iterations: usize,
    pub status: Status,
    /// Rate after each accepted step, starting with the baseline.
    pub history: Vec<f64>,
}

const PROJECTION_SWEEPS: usize = 100;
const PROJECTION_TOL: f64 = 1e-12;

/// Largest interlacing violation over all slices (0 if interlaced).
pub fn max_interlace_violation(paths: &[Vec<f64>], n: usize) -> f64 {
    let len = paths[0].len();
    let mut worst = 0.0f64;
    for level in 1..n {
        for k in 1..=level {
            let here = &paths[TriIndex::unchecked(level, k).flat()];
            let left = &paths[TriIndex::unchecked(level + 1, k).flat()];
            let right = &paths[TriIndex::unchecked(level + 1, k + 1).flat()];
            for i in 0..len {
                worst = worst.max(here[i] - left[i]).max(right[i] - here[i]);
            }
        }
    }
    worst
}

/// Averages each violating pair, levels top-down, until the slice is interlaced.
fn project_slice(paths: &mut [Vec<f64>], n: usize, i: usize) {
    for _ in 0..PROJECTION_SWEEPS {
        let mut residual = 0.0f64;
        for level in 1..n {
            for k in 1..=level {
                let here = TriIndex::unchecked(level, k).flat();
                for (big, small) in [
                    (TriIndex::unchecked(level + 1, k).flat(), here),
                    (here, TriIndex::unchecked(level + 1, k + 1).flat()),
                ] {
                    let gap = paths[small][i] - paths[big][i];
                    if gap > 0.0 {
                        residual = residual.max(gap);
                        let mean = 0.5 * (paths[small][i] + paths[big][i]);
                        paths[small][i] = mean;
                        paths[big][i] = mean;
                    }
                }
            }
        }
        if residual <= PROJECTION_TOL {
            return;
        }
    }
}

fn to_bundle(grid: TimeGrid, n: usize, paths: &[Vec<f64>]) -> Result<PathBundle> {
    let paths = paths
        .iter()
        .map(|v| SamplePath::new(grid, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    PathBundle::new(n, paths)
}

/// Derivative of each cell's penalty with respect to its slope.
fn penalty_slope(label: CellLabel, v: f64, convention: Convention) -> f64 {
    let (lower, upper) = match convention {
        Convention::Lemma => (v.min(0.0), v.max(0.0)),
        Convention::Theorem => (v.max(0.0), v.min(0.0)),
    };
    match label {
        CellLabel::Interior | CellLabel::Crossing => v,
        CellLabel::LowerCoincident => lower,
        CellLabel::UpperCoincident => upper,
        CellLabel::BothCoincident => 0.0,
    }
}

fn gradient(bundle: &PathBundle, problem: &VariationalProblem) -> Result<Vec<Vec<f64>>> {
    let dt = problem.grid.dt();
    indices(bundle.n())
        .map(|idx| {
            let phi = bundle.path(idx);
            let labels = classify(
                phi,
                idx.upper_barrier().map(|b| bundle.path(b)),
                idx.lower_barrier().map(|b| bundle.path(b)),
                problem.eps,
            )?
            .labels;
            let x = phi.values();
            let mut g = vec![0.0; x.len()];
            for (i, label) in labels.iter().enumerate() {
                let s = penalty_slope(*label, (x[i + 1] - x[i]) / dt, problem.convention);
                g[i + 1] += s;
                g[i] -= s;
            }
            let last = g.len() - 1;
            g[0] = 0.0;
            g[last] = 0.0;
            Ok(g)
        })
        .collect()
}

pub fn minimize_rate(problem: &VariationalProblem) -> Result<VariationalResult> {
    problem.check()?;
    let n = problem.initial.n();
    let grid = problem.grid;
    let options = problem.options()?;
    let baseline = PathBundle::linear(grid, &problem.initial, &problem.terminal)?;
    let baseline_rate = total_rate(&baseline, &problem.initial, &options)?.total;

    let mut paths: Vec<Vec<f64>> = baseline
        .paths()
        .iter()
        .map(|p| p.values().to_vec())
        .collect();
    let mut bundle = baseline;
    let mut rate = baseline_rate;
    let mut history = vec![rate];
    let mut step = problem.initial_step.unwrap_or(0.5 * grid.dt());
    let min_step = 1e-12 * grid.dt();
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < problem.max_iters {
        iterations += 1;
        let g = gradient(&bundle, problem)?;
        if g.iter().flatten().all(|v| *v == 0.0) {
            status = Status::Converged;
            break;
        }
        let mut trial: Vec<Vec<f64>> = paths
            .iter()
            .zip(&g)
            .map(|(x, g)| x.iter().zip(g).map(|(x, g)| x - step * g).collect())
            .collect();
        for i in 1..grid.steps() {
            project_slice(&mut trial, n, i);
        }
        let candidate = to_bundle(grid, n, &trial)?;
        let candidate_rate = total_rate(&candidate, &problem.initial, &options)?.total;
        if candidate_rate < rate {
            let drop = rate - candidate_rate;
            paths = trial;
            bundle = candidate;
            rate = candidate_rate;
            history.push(rate);
            step *= 1.5;
            if drop <= 1e-15 * (1.0 + rate) {
                status = Status::Converged;
                break;
            }
        } else {
            step *= 0.5;
            if step < min_step {
                status = Status::Converged;
                break;
            }
        }
    }
    Ok(VariationalResult {
        bundle,
        rate,
        baseline_rate,
        iterations,
        status,
        history,
    })
}
