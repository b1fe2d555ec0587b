//! Shared fixtures and independent oracles for the integration tests.
//!
//! Everything in here is reimplemented from the mathematical definitions
//! rather than by calling the library, so agreement between the two is
//! evidence and not tautology. Precision: oracle arithmetic may differ
//! from the library by rounding order, so comparisons use 1e-9 except
//! where a test pins something exactly.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use relattice::geometry::{LatticeGeometry, Site, TargetPattern};
use relattice::planner::Move;

/// Distance from point `p` to the segment `a..b`, by clamped projection.
pub fn seg_point_dist(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Closest approach of a move's stroke chain to the point `p`.
pub fn move_point_dist(mv: &Move<f64>, p: (f64, f64)) -> f64 {
    let mut best = f64::INFINITY;
    for s in &mv.strokes {
        let d = seg_point_dist((s.from.x, s.from.y), (s.to.x, s.to.y), p);
        if d < best {
            best = d;
        }
    }
    best
}

/// Brute-force clearance replay: every move in order against every
/// occupied storage site, one entry per (move, site) pair whose closest
/// approach is strictly below `d_min`, the move's own source and
/// destination exempt, source removed and destination inserted after each
/// move. Quadratic on purpose.
pub fn dense_violations(
    geo: &LatticeGeometry<f64>,
    moves: &[Move<f64>],
    d_min: f64,
    start: &[Site],
) -> Vec<(usize, Site, f64)> {
    use relattice::geometry::Zone;
    let mut occupied: BTreeSet<Site> = start
        .iter()
        .copied()
        .filter(|&s| geo.zone(s) == Zone::Storage)
        .collect();
    let mut out = Vec::new();
    for (k, mv) in moves.iter().enumerate() {
        for &site in &occupied {
            if site == mv.source || site == mv.destination {
                continue;
            }
            let pos = geo.pos(site);
            let d = move_point_dist(mv, (pos.x, pos.y));
            if d < d_min {
                out.push((k, site, d));
            }
        }
        occupied.remove(&mv.source);
        if geo.zone(mv.destination) == Zone::Storage {
            occupied.insert(mv.destination);
        }
    }
    out
}

/// Minimum total Euclidean pairing cost over every injection of the
/// smaller site set into the larger one. Exponential; callers keep both
/// sides at seven or fewer.
pub fn exhaustive_min_cost(
    geo: &LatticeGeometry<f64>,
    loaded: &[Site],
    vacant: &[Site],
) -> f64 {
    let mut a: Vec<Site> = loaded.to_vec();
    a.sort_unstable();
    a.dedup();
    let mut b: Vec<Site> = vacant.to_vec();
    b.sort_unstable();
    b.dedup();
    let (small, large) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if small.is_empty() {
        return 0.0;
    }
    assert!(small.len() <= 7 && large.len() <= 7, "oracle is exponential");
    let cost = |s: Site, l: Site| {
        let (p, q) = (geo.pos(s), geo.pos(l));
        ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
    };
    fn rec(
        i: usize,
        used: &mut Vec<bool>,
        small: &[Site],
        large: &[Site],
        cost: &dyn Fn(Site, Site) -> f64,
        acc: f64,
        best: &mut f64,
    ) {
        if acc >= *best {
            return;
        }
        if i == small.len() {
            *best = acc;
            return;
        }
        for j in 0..large.len() {
            if !used[j] {
                used[j] = true;
                rec(i + 1, used, small, large, cost, acc + cost(small[i], large[j]), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut used = vec![false; large.len()];
    rec(0, &mut used, small, large, &cost, 0.0, &mut best);
    best
}

/// Summed Euclidean length of an assignment as the library reports pairs.
pub fn pairing_cost(geo: &LatticeGeometry<f64>, pairs: &[(Site, Site)]) -> f64 {
    pairs
        .iter()
        .map(|&(s, d)| {
            let (p, q) = (geo.pos(s), geo.pos(d));
            ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
        })
        .sum()
}

/// Pearson correlation straight from the textbook formula.
pub fn pearson_direct(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// N_i from the closed form of the constant-parameter recurrence, in the
/// product arrangement that avoids cancelling two large terms when the
/// decay factor is still near one.
pub fn closed_form(n0: f64, atoms_loaded: f64, resort_loss: f64, cycle_loss: f64, i: u32) -> f64 {
    let n_inf = (1.0 - resort_loss) * atoms_loaded / cycle_loss;
    let q = (1.0 - cycle_loss).powi(i as i32);
    n_inf * (1.0 - q) + n0 * q
}

/// A randomized planning problem: geometry, register pattern, candidate
/// sources in the loading zone and a register-conforming stored set.
pub struct Instance {
    pub geo: LatticeGeometry<f64>,
    pub pattern: TargetPattern,
    pub loaded: Vec<Site>,
    pub stored: Vec<Site>,
}

/// Draws a geometry up to `max_cols` x `max_rows`, a stride-3/2 register
/// pattern that fits it, up to `max_atoms` loaded atoms anywhere in the
/// loading zone and a random register fill. Every instance satisfies the
/// pattern's own routability validation at d_min = 1.
pub fn random_instance(rng: &mut ChaCha8Rng, max_cols: u32, max_rows: u32, max_atoms: usize) -> Instance {
    let n_cols = rng.random_range(20..=max_cols);
    let n_rows = rng.random_range(14..=max_rows);
    let storage_end = rng.random_range(7..=n_rows - 6);
    let loading_start = storage_end + 2;
    let tweezer_rows = (loading_start + 1).min(n_rows - 1)..n_rows;
    let t0 = rng.random_range(0..n_cols / 2);
    let t1 = rng.random_range(t0 + 2..=n_cols.min(t0 + 14));
    // Register columns stop early enough that the staging lane keeps 2.5
    // column pitches (1.45 um) from the outermost register column.
    let origin = Site {
        row: rng.random_range(1..=2),
        col: rng.random_range(1..=3),
    };
    let max_pat_row = storage_end - 3;
    let pat_rows = rng.random_range(1..=(max_pat_row - origin.row) / 3 + 1);
    let max_pat_col = n_cols - 4;
    let pat_cols = rng.random_range(1..=(max_pat_col - origin.col) / 2 + 1);
    let last_col = origin.col + 2 * (pat_cols - 1);
    let staging_col = rng.random_range(last_col + 2..=n_cols - 2);
    let geo = LatticeGeometry::row_banded(
        0.579,
        1.187,
        n_cols,
        n_rows,
        0..storage_end,
        loading_start..n_rows,
        t0..t1,
        tweezer_rows,
        staging_col,
    )
    .expect("instance layout is valid by construction");
    let pattern = TargetPattern::grid(origin, pat_rows, 3, pat_cols, 2);

    let mut loading: Vec<Site> = geo.loading_zone().to_vec();
    partial_shuffle(rng, &mut loading);
    let n_loaded = rng.random_range(0..=loading.len().min(max_atoms));
    let mut loaded: Vec<Site> = loading[..n_loaded].to_vec();
    loaded.sort_unstable();

    let fill = rng.random_range(0..=100);
    let stored: Vec<Site> = pattern
        .sites()
        .iter()
        .copied()
        .filter(|_| rng.random_range(0..100) < fill)
        .collect();

    Instance {
        geo,
        pattern,
        loaded,
        stored,
    }
}

/// Fisher-Yates; `rand`'s shuffle adapters are version-churny, this is not.
pub fn partial_shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Sorted library violations as comparable tuples.
pub fn violation_tuples(violations: &[relattice::planner::Violation<f64>]) -> Vec<(usize, Site, f64)> {
    violations
        .iter()
        .map(|v| (v.move_index, v.site, v.distance))
        .collect()
}

/// Asserts two (move, site, distance) lists agree: same pairs in the same
/// order, distances within 1e-9.
pub fn assert_violations_match(lib: &[(usize, Site, f64)], oracle: &[(usize, Site, f64)]) {
    assert_eq!(
        lib.len(),
        oracle.len(),
        "violation counts differ: library {lib:?} oracle {oracle:?}"
    );
    for (a, b) in lib.iter().zip(oracle) {
        assert_eq!((a.0, a.1), (b.0, b.1), "violation pair mismatch");
        assert!(
            (a.2 - b.2).abs() < 1e-9,
            "distance mismatch at move {} site {:?}: {} vs {}",
            a.0,
            a.1,
            a.2,
            b.2
        );
    }
}
