//! Source-to-vacancy assignment minimizing total travel distance.

use crate::geometry::{LatticeGeometry, Site};
use crate::num::Scalar;

/// Pairs loaded atoms with vacant target sites, one-to-one over the smaller
/// side, minimizing the summed Euclidean source-to-destination distance.
///
/// Instances with at most `exact_limit_pairs` source-vacancy pairs are
/// solved exactly; larger ones fall back to greedy nearest-neighbor claiming
/// from the smaller side. Both inputs are sorted and deduplicated
/// internally, so the pairing depends only on the site sets, and ties always
/// resolve toward the lower site in row-major order. Returned pairs are
/// sorted by source site.
pub fn assign_targets<F: Scalar>(
    geo: &LatticeGeometry<F>,
    loaded: &[Site],
    vacant: &[Site],
    exact_limit_pairs: usize,
) -> Vec<(Site, Site)> {
    let mut loaded = loaded.to_vec();
    loaded.sort_unstable();
    loaded.dedup();
    let mut vacant = vacant.to_vec();
    vacant.sort_unstable();
    vacant.dedup();
    if loaded.is_empty() || vacant.is_empty() {
        return Vec::new();
    }

    // The solver wants rows to be the smaller side.
    let swapped = loaded.len() > vacant.len();
    let (rows, cols): (&[Site], &[Site]) = if swapped {
        (&vacant, &loaded)
    } else {
        (&loaded, &vacant)
    };

    let pair_count = rows.len() * cols.len();
    let row_to_col = if pair_count <= exact_limit_pairs {
        let cost: Vec<F> = rows
            .iter()
            .flat_map(|&r| {
                let rp = geo.pos(r);
                cols.iter().map(move |&c| rp.distance(geo.pos(c)))
            })
            .collect();
        min_cost_assignment(rows.len(), cols.len(), &cost)
    } else {
        greedy_assignment(geo, rows, cols)
    };

    let mut pairs: Vec<(Site, Site)> = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if swapped {
                (cols[j], rows[i])
            } else {
                (rows[i], cols[j])
            }
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Exact minimum-cost rectangular assignment (n rows <= m columns) by
/// shortest augmenting paths over dual potentials, O(n^2 m). Returns the
/// matched column per row.
fn min_cost_assignment<F: Scalar>(n: usize, m: usize, cost: &[F]) -> Vec<usize> {
    debug_assert!(n <= m && cost.len() == n * m);
    // 1-based with index 0 as the virtual free row/column.
    let mut u = vec![F::zero(); n + 1];
    let mut v = vec![F::zero(); m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![F::infinity(); m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = F::infinity();
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path backwards, flipping matches.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    debug_assert!(row_to_col.iter().all(|&j| j != usize::MAX));
    row_to_col
}

/// Each row claims the nearest still-free column, in row order. Ties go to
/// the lower column index, which is the lower site in row-major order.
fn greedy_assignment<F: Scalar>(
    geo: &LatticeGeometry<F>,
    rows: &[Site],
    cols: &[Site],
) -> Vec<usize> {
    let col_pos: Vec<_> = cols.iter().map(|&c| geo.pos(c)).collect();
    let mut taken = vec![false; cols.len()];
    let mut out = Vec::with_capacity(rows.len());
    for &r in rows {
        let rp = geo.pos(r);
        let mut best = usize::MAX;
        let mut best_d = F::infinity();
        for (j, &cp) in col_pos.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = rp.distance(cp);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        taken[best] = true;
        out.push(best);
    }
    out
}
