//! Property tests for the invariants of every module.

use proptest::prelude::*;
use whittaker_ldp::model::{
    indices, interlacing_defect, read_bundle_csv, validate_initial, write_bundle_csv, CsvComments,
    InterlaceBounds, PathBundle, SamplePath, TimeGrid, TriangularConfiguration,
};
use whittaker_ldp::noise::{sample_noise, Seed};
use whittaker_ldp::rate::{
    local_rate_lower, local_rate_upper, particle_rate, schilder_rate, total_rate, InfinityReason,
    RateOptions,
};
use whittaker_ldp::skorokhod::{
    hard_reflection_term, reflect_above, reflect_below, smoothed_reflection_term, smoothing_bound,
};
use whittaker_ldp::varopt::{max_interlace_violation, minimize_rate, VariationalProblem};

const M: usize = 32;

fn grid() -> TimeGrid {
    TimeGrid::unit(M).unwrap()
}

fn walk(start: f64, steps: &[f64]) -> SamplePath {
    let mut x = start;
    let mut v = vec![x];
    for s in steps {
        x += s;
        v.push(x);
    }
    SamplePath::new(grid(), v).unwrap()
}

prop_compose! {
    fn path()(start in -1.0..1.0f64, steps in prop::collection::vec(-0.2..0.2f64, M)) -> SamplePath {
        walk(start, &steps)
    }
}

prop_compose! {
    fn bundle(n: usize)(paths in prop::collection::vec(path(), n * (n + 1) / 2)) -> PathBundle {
        PathBundle::new(n, paths).unwrap()
    }
}

/// Interlaced by construction: the top level is sorted per slice and each
/// lower level holds midpoints of adjacent entries of the level above.
fn interlaced_bundle(n: usize, raw: &[Vec<f64>]) -> PathBundle {
    let len = M + 1;
    let mut paths = vec![vec![0.0; len]; n * (n + 1) / 2];
    for i in 0..len {
        let mut top: Vec<f64> = raw.iter().take(n).map(|r| r[i]).collect();
        top.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut levels = vec![top];
        for _ in 1..n {
            let above = levels.last().unwrap();
            let below: Vec<f64> = above.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            levels.push(below);
        }
        levels.reverse();
        let mut flat = 0;
        for level in &levels {
            for v in level {
                paths[flat][i] = *v;
                flat += 1;
            }
        }
    }
    PathBundle::new(
        n,
        paths
            .into_iter()
            .map(|v| SamplePath::new(grid(), v).unwrap())
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn validation_is_shift_invariant(
        n in 1usize..5,
        raw in prop::collection::vec(-16i32..16, 10),
        shift in -64i32..64,
    ) {
        let entries: Vec<f64> = raw[..n * (n + 1) / 2].iter().map(|&v| v as f64 / 8.0).collect();
        let config = TriangularConfiguration::new(n, entries).unwrap();
        let shifted = config.shifted(shift as f64 / 8.0);
        let a = validate_initial(&config);
        let b = validate_initial(&shifted);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        for (x, y) in a.relations.iter().zip(&b.relations) {
            prop_assert_eq!(x.defect, y.defect);
        }
    }

    #[test]
    fn events_are_monotone_in_margin(b in bundle(3), f1 in 0.01..0.5f64, extra in 0.0..0.5f64) {
        let small = interlacing_defect(&b, InterlaceBounds::new(f1).unwrap());
        let large = interlacing_defect(&b, InterlaceBounds::new(f1 + extra).unwrap());
        for (s, l) in small.events.iter().zip(&large.events) {
            prop_assert!(!s.a || l.a);
            prop_assert!(!s.c || l.c);
            prop_assert!(!s.b.unwrap_or(false) || l.b.unwrap_or(false));
        }
    }

    #[test]
    fn a_event_implies_c_event(b in bundle(3), f in 0.01..1.0f64) {
        let d = interlacing_defect(&b, InterlaceBounds::new(f).unwrap());
        for e in &d.events {
            prop_assert!(!e.a || e.c, "A holds but C fails at level {}", e.n);
        }
    }

    #[test]
    fn interlaced_bundles_hold_every_event(raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, M + 1), 3)) {
        let b = interlaced_bundle(3, &raw);
        let d = interlacing_defect(&b, InterlaceBounds::new(1e-9).unwrap());
        prop_assert!(d.all_hold());
        prop_assert!(d.worst_adjacent() >= 0.0);
    }

    #[test]
    fn reflection_invariants(psi in path(), b1 in path(), b2 in path(), start in -1.0..1.0f64) {
        let r = reflect_above(&psi, &b1, start).unwrap();
        let out = r.path.values();
        let push = r.push.values();
        let c = start - psi.first();
        for i in 0..out.len() {
            prop_assert!(out[i] >= b1.values()[i] - 1e-12);
            prop_assert!(push[i] >= 0.0);
            prop_assert!((out[i] - (c + psi.values()[i] + push[i])).abs() <= 1e-12);
        }
        prop_assert!(push.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((push[0] - (b1.first() - start).max(0.0)).abs() <= 1e-12);
        let r2 = reflect_above(&psi, &b2, start).unwrap();
        prop_assert!(r.path.sup_distance(&r2.path).unwrap() <= b1.sup_distance(&b2).unwrap() + 1e-12);

        let below = reflect_below(&psi, &b1, start).unwrap();
        let mirror = reflect_above(&psi.neg(), &b1.neg(), -start).unwrap();
        prop_assert!(below.path.sup_distance(&mirror.path.neg()).unwrap() <= 1e-12);
        prop_assert!(below.path.values().iter().zip(b1.values()).all(|(o, b)| *o <= b + 1e-12));
    }

    #[test]
    fn active_points_raise_the_push(psi in path(), b in path(), start in -1.0..1.0f64) {
        let r = reflect_above(&psi, &b, start).unwrap();
        let push = r.push.values();
        for i in 1..push.len() {
            prop_assert_eq!(r.active[i], push[i] > push[i - 1]);
        }
    }

    #[test]
    fn smoothed_term_respects_upper_bound(h in path(), gamma in 1.0..200.0f64) {
        let v = smoothed_reflection_term(&h, gamma);
        let vinf = hard_reflection_term(&h);
        let slack = smoothing_bound(gamma);
        for (a, b) in v.values().iter().zip(vinf.values()) {
            prop_assert!(*a <= b + slack + 1e-12);
            prop_assert!(*a >= 0.0);
        }
    }

    #[test]
    fn rates_are_nonnegative_and_below_schilder(b in bundle(2), eps in 1e-3..0.3f64) {
        let opts = RateOptions::new(eps).unwrap();
        for idx in indices(2) {
            let phi = b.path(idx);
            let upper = idx.upper_barrier().map(|x| b.path(x));
            let lower = idx.lower_barrier().map(|x| b.path(x));
            let r = particle_rate(phi, upper, lower, phi.first(), &opts).unwrap();
            let free = schilder_rate(phi, phi.first(), eps).unwrap();
            if r.is_finite() {
                prop_assert!(r.total >= 0.0);
                // Partial sums are accumulated per class, so allow rounding.
                prop_assert!(r.total <= free.total * (1.0 + 1e-12));
            } else {
                prop_assert_eq!(r.infinity, Some(InfinityReason::Crossing));
                prop_assert_eq!(r.total, f64::INFINITY);
            }
        }
    }

    #[test]
    fn total_rate_is_sum_of_particles(raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, M + 1), 3)) {
        let b = interlaced_bundle(3, &raw);
        let init = b.slice(0);
        let opts = RateOptions::new(1e-6).unwrap();
        let breakdown = total_rate(&b, &init, &opts).unwrap();
        let mut sum = 0.0;
        for idx in indices(3) {
            let r = particle_rate(
                b.path(idx),
                idx.upper_barrier().map(|x| b.path(x)),
                idx.lower_barrier().map(|x| b.path(x)),
                init.get(idx),
                &opts,
            ).unwrap();
            prop_assert!(r.is_finite());
            sum += r.total;
        }
        prop_assert_eq!(breakdown.total, sum);
        prop_assert!(breakdown.is_finite());
    }

    #[test]
    fn lower_and_upper_rates_are_dual(phi in path(), barrier in path(), eps in 1e-3..0.3f64) {
        let lower = local_rate_lower(&phi, &barrier, eps).unwrap();
        let upper = local_rate_upper(&phi.neg(), &barrier.neg(), eps).unwrap();
        prop_assert_eq!(lower.infinity, upper.infinity);
        if lower.is_finite() {
            prop_assert!((lower.total - upper.total).abs() <= 1e-12 * (1.0 + lower.total));
        }
    }

    #[test]
    fn sentinels_stay_infinite(phi in path(), bump in 0..=M, eps in 1e-3..0.1f64) {
        let opts = RateOptions::new(eps).unwrap();
        let upper = phi.map(|v| v + 1.0).unwrap();
        let mut crossing = phi.values().to_vec();
        crossing[bump] = upper.values()[bump] + 5.0 * eps;
        let crossing = SamplePath::new(grid(), crossing).unwrap();
        let r = particle_rate(&crossing, Some(&upper), None, crossing.first(), &opts).unwrap();
        prop_assert_eq!(r.infinity, Some(InfinityReason::Crossing));
        let r = particle_rate(&phi, None, None, phi.first() + 2.0 * eps, &opts).unwrap();
        prop_assert_eq!(r.infinity, Some(InfinityReason::InitialMismatch));
        prop_assert_eq!(r.total, f64::INFINITY);
    }

    #[test]
    fn noise_is_deterministic(seed in any::<u64>(), rep in 0u64..1000) {
        let grid = TimeGrid::unit(16).unwrap();
        let a = sample_noise(Seed::new(seed, rep), grid, 2).unwrap();
        let b = sample_noise(Seed::new(seed, rep), grid, 2).unwrap();
        let c = sample_noise(Seed::new(seed, rep + 1), grid, 2).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn csv_round_trip_is_exact(b in bundle(3), seed in any::<u64>()) {
        let comments = CsvComments { header: vec![Seed::new(seed, 0).header()], footer: vec!["clamps=0".into()] };
        let mut buf = Vec::new();
        write_bundle_csv(&mut buf, &b, &comments).unwrap();
        let (back, read_comments) = read_bundle_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, b);
        prop_assert_eq!(read_comments, comments);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimizer_stays_feasible(
        init in prop::collection::vec(-8i32..8, 3),
        term in prop::collection::vec(-8i32..8, 3),
    ) {
        let to_cfg = |v: &[i32]| {
            let mut x: Vec<f64> = v.iter().map(|&a| a as f64 / 8.0).collect();
            x[1..].sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (hi, lo) = (x[1], x[2]);
            x[0] = x[0].clamp(lo, hi);
            TriangularConfiguration::new(2, x).unwrap()
        };
        let mut problem = VariationalProblem::new(TimeGrid::unit(8).unwrap(), to_cfg(&init), to_cfg(&term)).unwrap();
        problem.max_iters = 300;
        let r = minimize_rate(&problem).unwrap();
        let paths: Vec<Vec<f64>> = r.bundle.paths().iter().map(|p| p.values().to_vec()).collect();
        prop_assert!(max_interlace_violation(&paths, 2) <= problem.eps);
        prop_assert!(r.rate <= r.baseline_rate);
        prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
