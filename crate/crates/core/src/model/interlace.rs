use super::{tri_count, PathBundle, TriIndex, TriangularConfiguration};
use crate::error::{Error, Result};

/// Margins of the interlacing events: `f` for level-adjacent relations, `g = 2f`
/// for same-level gaps. Level `n` uses `f_n = 4^(n-1) f` and `g_n = 4^(n-1) g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterlaceBounds {
    f: f64,
    g: f64,
}

impl InterlaceBounds {
    pub fn new(f: f64) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "margin f must be positive, got {f}"
            )));
        }
        Ok(Self { f, g: 2.0 * f })
    }

    /// `f = 1/sqrt(gamma)`, `g = 2/sqrt(gamma)`.
    pub fn for_gamma(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Self::new(1.0 / gamma.sqrt())
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.f * factor)
    }

    pub fn f_level(&self, n: usize) -> f64 {
        level_factor(n) * self.f
    }

    pub fn g_level(&self, n: usize) -> f64 {
        level_factor(n) * self.g
    }
}

fn level_factor(n: usize) -> f64 {
    4f64.powi(n as i32 - 1)
}

/// One inequality `big - small >= 0` together with its signed defect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationDefect {
    pub big: TriIndex,
    pub small: TriIndex,
    /// `big - small`; at a fixed time for initial data, the grid minimum for bundles.
    pub defect: f64,
}

impl RelationDefect {
    pub fn holds_with(&self, margin: f64) -> bool {
        self.defect >= -margin
    }
}

/// Level-adjacent relations between levels `n` and `n+1`:
/// `T[n+1][k] >= T[n][k]` and `T[n][k] >= T[n+1][k+1]`.
fn adjacent_pairs(n: usize) -> impl Iterator<Item = (TriIndex, TriIndex)> {
    (1..=n).flat_map(move |k| {
        let here = TriIndex::unchecked(n, k);
        [
            (TriIndex::unchecked(n + 1, k), here),
            (here, TriIndex::unchecked(n + 1, k + 1)),
        ]
    })
}

/// Same-level gaps on level `n+1`: `T[n+1][k] >= T[n+1][k+1]`.
fn same_level_pairs(n: usize) -> impl Iterator<Item = (TriIndex, TriIndex)> {
    (1..=n).map(move |k| {
        (
            TriIndex::unchecked(n + 1, k),
            TriIndex::unchecked(n + 1, k + 1),
        )
    })
}

/// Every interlacing relation of the initial configuration with its defect.
#[derive(Debug, Clone, PartialEq)]
pub struct InterlaceReport {
    pub relations: Vec<RelationDefect>,
}

impl InterlaceReport {
    pub fn is_ok(&self) -> bool {
        self.relations.iter().all(|r| r.defect >= 0.0)
    }

    pub fn violations(&self) -> impl Iterator<Item = &RelationDefect> {
        self.relations.iter().filter(|r| r.defect < 0.0)
    }
}

/// Checks `T[n+1][k+1] <= T[n][k] <= T[n+1][k]` with zero tolerance.
pub fn validate_initial(config: &TriangularConfiguration) -> InterlaceReport {
    let relations = (1..config.n())
        .flat_map(adjacent_pairs)
        .map(|(big, small)| RelationDefect {
            big,
            small,
            defect: config.get(big) - config.get(small),
        })
        .collect();
    InterlaceReport { relations }
}

/// Event flags for level `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelEvents {
    pub n: usize,
    /// Levels `n`, `n+1` interlaced up to `f_n`.
    pub a: bool,
    /// Levels `n+1`, `n+2` interlaced up to `2 g_n`; `None` when `n+2 > N`.
    pub b: Option<bool>,
    /// Level `n+1` ordered up to `g_n`.
    pub c: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterlaceDiagnostics {
    /// Level-adjacent relations, grouped by level pair in increasing order.
    pub adjacent: Vec<RelationDefect>,
    /// Same-level gaps on levels `2..=N`.
    pub same_level: Vec<RelationDefect>,
    /// Index `n - 1` holds the events of level `n`, `n = 1..N-1`.
    pub events: Vec<LevelEvents>,
}

impl InterlaceDiagnostics {
    /// Minimum over all level-adjacent relations.
    pub fn worst_adjacent(&self) -> f64 {
        self.adjacent
            .iter()
            .map(|r| r.defect)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn all_hold(&self) -> bool {
        self.events
            .iter()
            .all(|e| e.a && e.c && e.b.unwrap_or(true))
    }
}

fn worst(bundle: &PathBundle, big: TriIndex, small: TriIndex) -> RelationDefect {
    let defect = bundle
        .path(big)
        .values()
        .iter()
        .zip(bundle.path(small).values())
        .map(|(b, s)| b - s)
        .fold(f64::INFINITY, f64::min);
    RelationDefect { big, small, defect }
}

fn min_defect(relations: &[RelationDefect]) -> f64 {
    relations
        .iter()
        .map(|r| r.defect)
        .fold(f64::INFINITY, f64::min)
}

/// Grid minimum of every relation plus the A/B/C flags for base margin `f`.
pub fn interlacing_defect(bundle: &PathBundle, bounds: InterlaceBounds) -> InterlaceDiagnostics {
    let n_levels = bundle.n();
    let by_level: Vec<Vec<RelationDefect>> = (1..n_levels)
        .map(|n| {
            adjacent_pairs(n)
                .map(|(b, s)| worst(bundle, b, s))
                .collect()
        })
        .collect();
    let gaps: Vec<Vec<RelationDefect>> = (1..n_levels)
        .map(|n| {
            same_level_pairs(n)
                .map(|(b, s)| worst(bundle, b, s))
                .collect()
        })
        .collect();
    let events = (1..n_levels)
        .map(|n| LevelEvents {
            n,
            a: min_defect(&by_level[n - 1]) >= -bounds.f_level(n),
            b: by_level
                .get(n)
                .map(|rel| min_defect(rel) >= -2.0 * bounds.g_level(n)),
            c: min_defect(&gaps[n - 1]) >= -bounds.g_level(n),
        })
        .collect();
    debug_assert_eq!(
        by_level.iter().map(Vec::len).sum::<usize>(),
        2 * (tri_count(n_levels) - n_levels)
    );
    InterlaceDiagnostics {
        adjacent: by_level.into_iter().flatten().collect(),
        same_level: gaps.into_iter().flatten().collect(),
        events,
    }
}
