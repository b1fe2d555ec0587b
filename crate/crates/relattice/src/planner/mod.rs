//! Collision-aware rearrangement planning: assignment, five-stroke routing,
//! clearance validation and trajectory synthesis.

mod assign;
mod trajectory;

pub use assign::assign_targets;
pub use trajectory::{
    plan_duration, synthesize_trajectory, KinematicParams, TrajectorySample, TweezerTrajectory,
    VelocityProfile,
};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::geometry::{
    segment_point_distance, LatticeGeometry, Point, Polyline, Site, TargetPattern, Zone,
};
use crate::loss::{MoveSuccessModel, TransportMode};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("move endpoints coincide at {0}")]
    SameSite(Site),
    #[error("site {0} is outside the lattice")]
    OutsideLattice(Site),
    #[error("destination {0} is outside the storage zone")]
    DestinationOutsideStorage(Site),
    #[error("no transit corridor fits between {0} and the lattice edge")]
    RouteOutOfBounds(Site),
}

/// One axis-aligned segment of a move, tagged with its transport mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stroke<F> {
    pub from: Point<F>,
    pub to: Point<F>,
    pub mode: TransportMode,
}

impl<F: Scalar> Stroke<F> {
    pub fn length(&self) -> F {
        self.from.distance(self.to)
    }

    pub fn is_horizontal(&self) -> bool {
        self.from.y == self.to.y
    }

    pub fn is_vertical(&self) -> bool {
        self.from.x == self.to.x
    }
}

/// A single atom relocation as a chain of axis-aligned strokes. Generic
/// moves carry five strokes; strokes that would have zero length are
/// dropped, so shorter chains appear exactly when legs degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct Move<F> {
    pub source: Site,
    pub destination: Site,
    pub strokes: Vec<Stroke<F>>,
    pub order_rank: u32,
}

impl<F: Scalar> Move<F> {
    /// The full path from source to destination position.
    pub fn polyline(&self) -> Polyline<F> {
        let mut points = Vec::with_capacity(self.strokes.len() + 1);
        if let Some(first) = self.strokes.first() {
            points.push(first.from);
        }
        for s in &self.strokes {
            points.push(s.to);
        }
        if points.is_empty() {
            // A stationary move still sits somewhere; callers that build
            // such moves by hand get a degenerate path at the origin of
            // nothing useful, so this stays unreachable for routed moves.
            points.push(Point::new(F::zero(), F::zero()));
        }
        Polyline::new(points)
    }

    pub fn total_length(&self) -> F {
        self.strokes
            .iter()
            .map(|s| s.length())
            .fold(F::zero(), |a, b| a + b)
    }

    /// Transport survival composed per stroke from the mode-resolved model.
    pub fn success_probability(&self, model: &MoveSuccessModel<F>) -> F {
        self.strokes
            .iter()
            .map(|s| model.success_prob(s.length(), s.mode))
            .fold(F::one(), |a, b| a * b)
    }
}

/// A clearance breach: some move passes an occupied storage site too
/// closely. One entry per (move, site) pair at the closest approach.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation<F> {
    pub move_index: usize,
    pub site: Site,
    pub distance: F,
}

/// An ordered, clearance-annotated set of moves for one cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct MovePlan<F> {
    pub moves: Vec<Move<F>>,
    pub d_min: F,
    /// Empty when the plan is clean against the occupancy it was planned on.
    pub violations: Vec<Violation<F>>,
}

impl<F: Scalar> MovePlan<F> {
    pub fn empty(d_min: F) -> Self {
        MovePlan {
            moves: Vec::new(),
            d_min,
            violations: Vec::new(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// How far above (or below) the destination row the final approach corridor
/// runs, in units of the row spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
enum InsertionDepth {
    /// Corridor directly adjacent to the destination row, half a spacing
    /// away. Shortest insertion, but the horizontal approach then passes
    /// within half a spacing of every site in the destination row.
    Adjacent,
    /// Corridor one and a half spacings away, between the two rows that a
    /// three-row register stride leaves empty. The horizontal approach then
    /// clears every register row regardless of fill state.
    Cleared,
}

impl InsertionDepth {
    fn rows_away(self) -> u32 {
        match self {
            InsertionDepth::Adjacent => 1,
            InsertionDepth::Cleared => 2,
        }
    }
}

/// Five-stroke route: (1) half-step extraction into the corridor toward the
/// destination, (2) horizontal run along that corridor to the staging lane,
/// (3) vertical run down the lane to the approach corridor, (4) horizontal
/// run to the destination column, (5) vertical insertion. Long legs ride
/// midlines; only the extraction and insertion cross wells.
pub fn route_move<F: Scalar>(
    geo: &LatticeGeometry<F>,
    source: Site,
    destination: Site,
) -> Result<Move<F>, PlanError> {
    build_route(geo, source, destination, InsertionDepth::Adjacent)
}

/// `route_move` with the approach corridor pushed out to the midline one and
/// a half row spacings from the destination, so the horizontal approach and
/// the insertion keep their distance from every register row no matter how
/// the register is filled. This is the route `plan_cycle` emits.
pub fn route_move_cleared<F: Scalar>(
    geo: &LatticeGeometry<F>,
    source: Site,
    destination: Site,
) -> Result<Move<F>, PlanError> {
    build_route(geo, source, destination, InsertionDepth::Cleared)
}

fn build_route<F: Scalar>(
    geo: &LatticeGeometry<F>,
    source: Site,
    destination: Site,
    depth: InsertionDepth,
) -> Result<Move<F>, PlanError> {
    if source == destination {
        return Err(PlanError::SameSite(source));
    }
    for s in [source, destination] {
        if !geo.contains(s) {
            return Err(PlanError::OutsideLattice(s));
        }
    }
    if geo.zone(destination) != Zone::Storage {
        return Err(PlanError::DestinationOutsideStorage(destination));
    }

    // Corridor k is the midline between rows k and k+1; computing y from k
    // with one shared formula keeps coincident corridors bitwise equal, so
    // degenerate strokes cancel exactly.
    let corridor = |k: u32| (F::from_u32(k).expect("small int") + F::of(0.5)) * geo.spacing_y();

    // Extraction corridor: the one toward the destination, falling back to
    // the corridor above when the source sits in the bottom row.
    let exit_k = if destination.row < source.row {
        source.row - 1
    } else if destination.row > source.row {
        source.row
    } else if source.row > 0 {
        source.row - 1
    } else {
        source.row
    };
    if exit_k + 1 >= geo.n_rows() {
        return Err(PlanError::RouteOutOfBounds(source));
    }

    // Approach corridor, on the side we arrive from.
    let from_above = exit_k >= destination.row;
    let steps = depth.rows_away();
    let ins_k = if from_above {
        destination.row + steps - 1
    } else {
        if destination.row < steps {
            return Err(PlanError::RouteOutOfBounds(destination));
        }
        destination.row - steps
    };
    if ins_k + 1 >= geo.n_rows() {
        return Err(PlanError::RouteOutOfBounds(destination));
    }

    let src = geo.pos(source);
    let dst = geo.pos(destination);
    let lane_x = geo.staging_lane_x();
    let y_exit = corridor(exit_k);
    let y_ins = corridor(ins_k);

    let waypoints = [
        src,
        Point::new(src.x, y_exit),
        Point::new(lane_x, y_exit),
        Point::new(lane_x, y_ins),
        Point::new(dst.x, y_ins),
        dst,
    ];
    let modes = [
        TransportMode::Through,
        TransportMode::Between,
        TransportMode::Between,
        TransportMode::Between,
        TransportMode::Through,
    ];
    let mut strokes = Vec::with_capacity(5);
    for (w, &mode) in waypoints.windows(2).zip(modes.iter()) {
        if w[0] != w[1] {
            strokes.push(Stroke {
                from: w[0],
                to: w[1],
                mode,
            });
        }
    }
    Ok(Move {
        source,
        destination,
        strokes,
        order_rank: 0,
    })
}

/// Occupied storage sites bucketed by row for cheap range queries against a
/// stroke's clearance envelope. Only storage-zone sites are tracked; loading
/// traffic shares its corridors with the reservoir by design, and the guard
/// band is never deliberately occupied.
pub(crate) struct ClearanceIndex {
    rows: BTreeMap<u32, BTreeSet<u32>>,
}

impl ClearanceIndex {
    pub(crate) fn new<F: Scalar>(
        geo: &LatticeGeometry<F>,
        occupied: impl IntoIterator<Item = Site>,
    ) -> Self {
        let mut rows: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for s in occupied {
            if geo.zone(s) == Zone::Storage {
                rows.entry(s.row).or_default().insert(s.col);
            }
        }
        ClearanceIndex { rows }
    }

    pub(crate) fn insert<F: Scalar>(&mut self, geo: &LatticeGeometry<F>, s: Site) {
        if geo.zone(s) == Zone::Storage {
            self.rows.entry(s.row).or_default().insert(s.col);
        }
    }

    pub(crate) fn remove(&mut self, s: Site) {
        if let Some(cols) = self.rows.get_mut(&s.row) {
            cols.remove(&s.col);
            if cols.is_empty() {
                self.rows.remove(&s.row);
            }
        }
    }

    /// Tracked sites strictly closer than `d_min` to the segment `a..b`,
    /// found by scanning only the rows and columns whose coordinates fall in
    /// the segment's clearance envelope. Results are row-major sorted.
    pub(crate) fn sites_within<F: Scalar>(
        &self,
        geo: &LatticeGeometry<F>,
        a: Point<F>,
        b: Point<F>,
        d_min: F,
        out: &mut Vec<(Site, F)>,
    ) {
        let ax = geo.spacing_x();
        let ay = geo.spacing_y();
        let (x_lo, x_hi) = if a.x <= b.x { (a.x, b.x) } else { (b.x, a.x) };
        let (y_lo, y_hi) = if a.y <= b.y { (a.y, b.y) } else { (b.y, a.y) };
        let lo_row = (((y_lo - d_min) / ay).ceil().to_f64_lossy()).max(0.0) as u32;
        let hi_row = (((y_hi + d_min) / ay).floor().to_f64_lossy()).max(-1.0) as i64;
        if hi_row < 0 {
            return;
        }
        let lo_col = (((x_lo - d_min) / ax).ceil().to_f64_lossy()).max(0.0) as u32;
        let hi_col = (((x_hi + d_min) / ax).floor().to_f64_lossy()).max(-1.0) as i64;
        if hi_col < 0 {
            return;
        }
        for (&row, cols) in self.rows.range(lo_row..=hi_row as u32) {
            for &col in cols.range(lo_col..=hi_col as u32) {
                let site = Site { row, col };
                let d = segment_point_distance(a, b, geo.pos(site));
                if d < d_min {
                    out.push((site, d));
                }
            }
        }
    }
}

/// Replays the plan move by move against an evolving occupancy, assuming
/// every move lands, and reports each pass of a stroke within `d_min` of an
/// occupied storage site. A move's own source and destination are exempt.
/// Loading-zone occupation is not checked: extraction corridors necessarily
/// thread the reservoir.
pub fn validate_plan<F: Scalar>(
    geo: &LatticeGeometry<F>,
    moves: &[Move<F>],
    d_min: F,
    occupancy_at_start: &[Site],
) -> Vec<Violation<F>> {
    let mut index = ClearanceIndex::new(geo, occupancy_at_start.iter().copied());
    let mut violations = Vec::new();
    let mut hits = Vec::new();
    for (k, mv) in moves.iter().enumerate() {
        let mut per_site: BTreeMap<Site, F> = BTreeMap::new();
        for stroke in &mv.strokes {
            hits.clear();
            index.sites_within(geo, stroke.from, stroke.to, d_min, &mut hits);
            for &(site, d) in &hits {
                if site == mv.source || site == mv.destination {
                    continue;
                }
                per_site
                    .entry(site)
                    .and_modify(|best| {
                        if d < *best {
                            *best = d;
                        }
                    })
                    .or_insert(d);
            }
        }
        for (site, distance) in per_site {
            violations.push(Violation {
                move_index: k,
                site,
                distance,
            });
        }
        index.remove(mv.source);
        index.insert(geo, mv.destination);
    }
    violations
}

/// Plans one cycle: pairs loaded atoms with vacant target sites, routes each
/// pair along cleared corridors, orders moves by destination row-major with
/// the rows farthest from the loading band first, and annotates the plan
/// with any residual clearance violations (off-register strays can make a
/// clean plan impossible; the caller decides what to do with those).
///
/// `loaded` holds the candidate sources, `stored` every occupied site in the
/// storage zone at planning time.
pub fn plan_cycle<F: Scalar>(
    geo: &LatticeGeometry<F>,
    loaded: &[Site],
    stored: &[Site],
    target: &TargetPattern,
    d_min: F,
    exact_assignment_limit: usize,
) -> Result<MovePlan<F>, PlanError> {
    let stored_set: BTreeSet<Site> = stored.iter().copied().collect();
    let vacant: Vec<Site> = target
        .sites()
        .iter()
        .copied()
        .filter(|s| !stored_set.contains(s))
        .collect();
    let mut pairs = assign_targets(geo, loaded, &vacant, exact_assignment_limit);
    pairs.sort_unstable_by_key(|&(_, dest)| dest);

    let mut moves = Vec::with_capacity(pairs.len());
    for (rank, &(src, dest)) in pairs.iter().enumerate() {
        let mut mv = route_move_cleared(geo, src, dest)?;
        mv.order_rank = rank as u32;
        moves.push(mv);
    }
    let violations = validate_plan(geo, &moves, d_min, stored);
    Ok(MovePlan {
        moves,
        d_min,
        violations,
    })
}
