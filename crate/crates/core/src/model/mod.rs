//! Domain types for the triangular particle array.
//!
//! Particle `(n, k)` lives on level `n` at position `k`, `1 <= k <= n <= N`.
//! Its upper barrier is `(n-1, k-1)` and its lower barrier is `(n-1, k)`, so an
//! interlaced array satisfies
//!
//! ```text
//! T[n-1][k] <= T[n][k] <= T[n-1][k-1]
//! ```
//!
//! Storage is level-major: `(1,1), (2,1), (2,2), (3,1), ...`.

mod interlace;
mod table;

pub use self::interlace::{
    interlacing_defect, validate_initial, InterlaceBounds, InterlaceDiagnostics, InterlaceReport,
    LevelEvents, RelationDefect,
};
pub use self::table::{read_bundle_csv, read_configuration_csv, write_bundle_csv, CsvComments};

use crate::error::{Error, Result};

/// Number of particles in a triangle with `n` levels.
pub fn tri_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position `(n, k)` in the triangular array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriIndex {
    level: usize,
    pos: usize,
}

impl TriIndex {
    pub fn new(level: usize, pos: usize, n: usize) -> Result<Self> {
        if pos == 0 || pos > level || level > n {
            return Err(Error::InvalidIndex { level, pos, n });
        }
        Ok(Self { level, pos })
    }

    /// Index without a bound on the number of levels.
    pub(crate) fn unchecked(level: usize, pos: usize) -> Self {
        debug_assert!(pos >= 1 && pos <= level);
        Self { level, pos }
    }

    pub fn level(self) -> usize {
        self.level
    }

    pub fn pos(self) -> usize {
        self.pos
    }

    /// Offset in level-major storage.
    pub fn flat(self) -> usize {
        tri_count(self.level - 1) + self.pos - 1
    }

    pub fn from_flat(flat: usize) -> Self {
        let mut level = 1;
        while tri_count(level) <= flat {
            level += 1;
        }
        Self {
            level,
            pos: flat - tri_count(level - 1) + 1,
        }
    }

    /// `(n-1, k-1)`, the neighbour that pushes this particle down.
    pub fn upper_barrier(self) -> Option<TriIndex> {
        (self.level > 1 && self.pos > 1).then(|| Self::unchecked(self.level - 1, self.pos - 1))
    }

    /// `(n-1, k)`, the neighbour that pushes this particle up.
    pub fn lower_barrier(self) -> Option<TriIndex> {
        (self.level > 1 && self.pos < self.level).then(|| Self::unchecked(self.level - 1, self.pos))
    }

    /// CSV column name, `T_n_k`.
    pub fn column_name(self) -> String {
        format!("T_{}_{}", self.level, self.pos)
    }
}

impl std::fmt::Display for TriIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.level, self.pos)
    }
}

/// All indices of an `n`-level triangle in storage order.
pub fn indices(n: usize) -> impl Iterator<Item = TriIndex> {
    (1..=n).flat_map(|level| (1..=level).map(move |pos| TriIndex::unchecked(level, pos)))
}

/// Uniform grid `t_i = a + i*dt`, `i = 0..=M`, on `[a, b]` inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "non-finite bounds [{start}, {end}]"
            )));
        }
        if !(0.0 <= start && start < end && end <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "need 0 <= a < b <= 1, got [{start}, {end}]"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        Ok(Self { start, end, steps })
    }

    /// Grid on `[start, end]` whose spacing is as close as possible to `dt`.
    pub fn with_spacing(start: f64, end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let steps = ((end - start) / dt).round().max(1.0) as usize;
        Self::new(start, end, steps)
    }

    /// The unit interval with `steps` cells.
    pub fn unit(steps: usize) -> Result<Self> {
        Self::new(0.0, 1.0, steps)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Grid point `t_i`; the last point is exactly `b`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start + i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|i| self.time(i))
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self == other
    }
}

/// Values of one path on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "path has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "path value {} at grid point {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub(crate) fn from_parts_unchecked(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise negation, used by the mirror identities.
    pub fn neg(&self) -> Self {
        Self::from_parts_unchecked(self.grid, self.values.iter().map(|v| -v).collect())
    }

    /// `sup_i |self_i - other_i|` over the shared grid.
    pub fn sup_distance(&self, other: &SamplePath) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn ensure_same_grid(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "grids differ: {a:?} vs {b:?}"
        )))
    }
}

/// One value per particle at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularConfiguration {
    n: usize,
    entries: Vec<f64>,
}

impl TriangularConfiguration {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("N must be positive".into()));
        }
        if entries.len() != tri_count(n) {
            return Err(Error::ShapeMismatch(format!(
                "N={n} needs {} entries, got {}",
                tri_count(n),
                entries.len()
            )));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "entry {} at {}",
                entries[i],
                TriIndex::from_flat(i)
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; tri_count(n)])
    }

    /// Builds a configuration from `f(level, pos)`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(n, indices(n).map(|i| f(i.level(), i.pos())).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, index: TriIndex) -> f64 {
        self.entries[index.flat()]
    }

    pub fn set(&mut self, index: TriIndex, value: f64) {
        self.entries[index.flat()] = value;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn index(&self, level: usize, pos: usize) -> Result<TriIndex> {
        TriIndex::new(level, pos, self.n)
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v + c).collect(),
        }
    }
}

/// One [`SamplePath`] per particle, all on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    n: usize,
    grid: TimeGrid,
    paths: Vec<SamplePath>,
}

impl PathBundle {
    pub fn new(n: usize, paths: Vec<SamplePath>) -> Result<Self> {
        if n == 0 || paths.len() != tri_count(n) {
            return Err(Error::ShapeMismatch(format!(
                "N={n} needs {} paths, got {}",
                tri_count(n),
                paths.len()
            )));
        }
        let grid = *paths[0].grid();
        for p in &paths {
            ensure_same_grid(&grid, p.grid())?;
        }
        Ok(Self { n, grid, paths })
    }

    /// Every particle held at its value in `config`.
    pub fn constant(grid: TimeGrid, config: &TriangularConfiguration) -> Result<Self> {
        let paths = config
            .entries()
            .iter()
            .map(|&v| SamplePath::constant(grid, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(config.n(), paths)
    }

    /// Straight lines from `from` to `to` over the grid.
    pub fn linear(
        grid: TimeGrid,
        from: &TriangularConfiguration,
        to: &TriangularConfiguration,
    ) -> Result<Self> {
        if from.n() != to.n() {
            return Err(Error::ShapeMismatch(
                "endpoint configurations differ in N".into(),
            ));
        }
        let span = grid.duration();
        let paths = from
            .entries()
            .iter()
            .zip(to.entries())
            .map(|(&x0, &x1)| {
                SamplePath::from_fn(grid, |t| {
                    let s = (t - grid.start()) / span;
                    x0 + (x1 - x0) * s
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(from.n(), paths)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn path(&self, index: TriIndex) -> &SamplePath {
        &self.paths[index.flat()]
    }

    pub fn paths(&self) -> &[SamplePath] {
        &self.paths
    }

    pub fn into_paths(self) -> Vec<SamplePath> {
        self.paths
    }

    /// Configuration at grid point `i`.
    pub fn slice(&self, i: usize) -> TriangularConfiguration {
        TriangularConfiguration {
            n: self.n,
            entries: self.paths.iter().map(|p| p.values()[i]).collect(),
        }
    }

    /// Max over particles of the grid sup-norm distance.
    pub fn sup_distance(&self, other: &PathBundle) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch("bundles differ in N".into()));
        }
        self.paths
            .iter()
            .zip(&other.paths)
            .try_fold(0.0, |acc, (a, b)| Ok(f64::max(acc, a.sup_distance(b)?)))
    }
}

/// Default exponent cap: the exponential drift is clamped at `exp(gamma * 0.25)`.
pub const DEFAULT_CAP_EXPONENT: f64 = 0.25;

/// Parameters of the scaled system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub gamma: f64,
    /// Constant drift `a_k` per level, index 0 is level 1.
    pub drifts: Vec<f64>,
    pub initial: TriangularConfiguration,
    /// Upper bound `D` applied to every exponential drift term.
    pub drift_cap: f64,
}

impl ModelConfig {
    /// Drift-free configuration with the default cap `exp(gamma/4)`.
    pub fn new(initial: TriangularConfiguration, gamma: f64) -> Result<Self> {
        let config = Self {
            gamma,
            drifts: vec![0.0; initial.n()],
            drift_cap: default_drift_cap(gamma),
            initial,
        };
        config.check()?;
        Ok(config)
    }

    pub fn with_drifts(mut self, drifts: Vec<f64>) -> Result<Self> {
        self.drifts = drifts;
        self.check()?;
        Ok(self)
    }

    pub fn with_drift_cap(mut self, cap: f64) -> Result<Self> {
        self.drift_cap = cap;
        self.check()?;
        Ok(self)
    }

    /// Same model at another scaling; the cap follows the default rule.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut next = self.clone();
        next.gamma = gamma;
        next.drift_cap = default_drift_cap(gamma);
        next.check()?;
        Ok(next)
    }

    pub fn n(&self) -> usize {
        self.initial.n()
    }

    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.drift_cap > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "drift cap must be positive, got {}",
                self.drift_cap
            )));
        }
        if self.drifts.len() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} drifts for {} levels",
                self.drifts.len(),
                self.n()
            )));
        }
        if self.drifts.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteInput("drift".into()));
        }
        Ok(())
    }
}

/// `exp(gamma * 0.25)`.
pub fn default_drift_cap(gamma: f64) -> f64 {
    (gamma * DEFAULT_CAP_EXPONENT).exp()
}
