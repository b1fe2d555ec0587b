//! Lattice geometry: anisotropic site grid, zone layout, transit corridors,
//! trapping potential and clearance computations.
//!
//! Lengths are micrometers throughout. The origin sits at site (0, 0), x
//! grows with the column index, y with the row index. Zones are laid out in
//! horizontal bands: the storage register lives in the low rows, the loading
//! area (with its tweezer overlay) in the high rows, separated by a guard
//! band that belongs to neither zone.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::num::Scalar;

/// Grid coordinate of a lattice site. The derived ordering is row-major
/// (row first, then column), so sorted site lists enumerate the bottom row
/// first, left to right. That ordering doubles as the tie-breaker wherever
/// determinism requires one.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Site {
    pub row: u32,
    pub col: u32,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

/// Membership of a site in the operational layout.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Zone {
    /// Reservoir band where new atoms arrive each cycle.
    Loading,
    /// Band holding the maintained array.
    Storage,
    /// Guard band in neither zone; never deliberately occupied.
    Gap,
}

#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct Point<F> {
    pub x: F,
    pub y: F,
}

impl<F: Scalar> Point<F> {
    pub fn new(x: F, y: F) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Self) -> F {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Connected chain of points. Never empty.
#[derive(Clone, PartialEq, Debug)]
pub struct Polyline<F> {
    points: Vec<Point<F>>,
}

impl<F: Scalar> Polyline<F> {
    /// Panics on an empty point list; a path must at least sit somewhere.
    pub fn new(points: Vec<Point<F>>) -> Self {
        assert!(!points.is_empty(), "polyline needs at least one point");
        Polyline { points }
    }

    pub fn points(&self) -> &[Point<F>] {
        &self.points
    }

    pub fn start(&self) -> Point<F> {
        self.points[0]
    }

    pub fn end(&self) -> Point<F> {
        *self.points.last().expect("nonempty")
    }

    pub fn length(&self) -> F {
        self.points
            .windows(2)
            .map(|w| w[0].distance(w[1]))
            .sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point<F>, Point<F>)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// `n` points spaced uniformly by arc length, endpoints included.
    /// A zero-length path yields `n` copies of its single location.
    pub fn sample_by_arc_length(&self, n: usize) -> Vec<Point<F>> {
        assert!(n >= 1);
        let total = self.length();
        if total <= F::zero() || self.points.len() == 1 || n == 1 {
            return vec![self.points[0]; n];
        }
        let mut cumulative = Vec::with_capacity(self.points.len());
        let mut acc = F::zero();
        cumulative.push(acc);
        for w in self.points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        let mut out = Vec::with_capacity(n);
        let denom = F::from_usize(n - 1).expect("small count");
        let mut seg = 0usize;
        for i in 0..n {
            let s = total * F::from_usize(i).expect("small count") / denom;
            while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
                seg += 1;
            }
            let seg_len = cumulative[seg + 1] - cumulative[seg];
            let t = if seg_len > F::zero() {
                ((s - cumulative[seg]) / seg_len).min(F::one()).max(F::zero())
            } else {
                F::zero()
            };
            let a = self.points[seg];
            let b = self.points[seg + 1];
            out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
        out
    }
}

/// Exact distance from point `p` to the segment `a..b` via closed-form
/// projection. Clearance checks gate atom safety, so no sampling here.
pub fn segment_point_distance<F: Scalar>(a: Point<F>, b: Point<F>, p: Point<F>) -> F {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len2 = abx * abx + aby * aby;
    if len2 <= F::zero() {
        return a.distance(p);
    }
    let t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2;
    let t = t.max(F::zero()).min(F::one());
    Point::new(a.x + t * abx, a.y + t * aby).distance(p)
}

pub fn distance_to_polyline<F: Scalar>(path: &Polyline<F>, p: Point<F>) -> F {
    if path.points().len() == 1 {
        return path.start().distance(p);
    }
    let mut best = F::infinity();
    for (a, b) in path.segments() {
        let d = segment_point_distance(a, b, p);
        if d < best {
            best = d;
        }
    }
    best
}

/// Minimum distance from the path to any occupied point not listed in
/// `excluded`. Returns positive infinity when nothing remains to check.
/// Exclusions are matched by exact coordinate equality, so they must come
/// from the same geometry that produced the occupied points.
pub fn min_clearance<F: Scalar>(
    path: &Polyline<F>,
    occupied: &[Point<F>],
    excluded: &[Point<F>],
) -> F {
    let mut best = F::infinity();
    'occupied: for &p in occupied {
        for &e in excluded {
            if p == e {
                continue 'occupied;
            }
        }
        let d = distance_to_polyline(path, p);
        if d < best {
            best = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("column {col} out of range, lattice has {n_cols} columns")]
    ColumnOutOfRange { col: u32, n_cols: u32 },
    #[error("row {row} out of range, lattice has {n_rows} rows")]
    RowOutOfRange { row: u32, n_rows: u32 },
    #[error("lattice spacings must be positive finite numbers")]
    InvalidSpacing,
    #[error("lattice must contain at least one site")]
    EmptyLattice,
    #[error("site {site} lies outside the {n_cols}x{n_rows} lattice")]
    SiteOutsideLattice { site: Site, n_cols: u32, n_rows: u32 },
    #[error("loading and storage zones both claim site {site}")]
    OverlappingZones { site: Site },
    #[error("tweezer overlay site {site} is not in the loading zone")]
    TweezerOutsideLoading { site: Site },
    #[error("staging column {col} leaves no transit lane inside the lattice")]
    InvalidStagingColumn { col: u32 },
    #[error("target site {site} is not in the storage zone")]
    TargetOutsideStorage { site: Site },
    #[error("no transit corridor with {d_min} um clearance above target row {row}")]
    NoTransitCorridor { row: u32, d_min: f64 },
    #[error("target columns in row {row} sit closer than {d_min} um")]
    TargetColumnsTooClose { row: u32, d_min: f64 },
}

/// The site grid with its zone layout and tweezer overlay. Immutable after
/// construction; shared freely across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGeometry<F> {
    spacing_x: F,
    spacing_y: F,
    n_cols: u32,
    n_rows: u32,
    loading_zone: Vec<Site>,
    storage_zone: Vec<Site>,
    tweezer_sites: Vec<Site>,
    /// Vertical transit lane runs between this column and the next.
    staging_col: u32,
    zone_table: Vec<Zone>,
    tweezer_table: Vec<bool>,
}

impl<F: Scalar> LatticeGeometry<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spacing_x: F,
        spacing_y: F,
        n_cols: u32,
        n_rows: u32,
        loading: Vec<Site>,
        storage: Vec<Site>,
        tweezers: Vec<Site>,
        staging_col: u32,
    ) -> Result<Self, GeometryError> {
        let pos_finite = |s: F| s > F::zero() && s.is_finite();
        if !pos_finite(spacing_x) || !pos_finite(spacing_y) {
            return Err(GeometryError::InvalidSpacing);
        }
        if n_cols == 0 || n_rows == 0 {
            return Err(GeometryError::EmptyLattice);
        }
        if staging_col + 1 >= n_cols {
            return Err(GeometryError::InvalidStagingColumn { col: staging_col });
        }

        let sorted = |mut v: Vec<Site>| {
            v.sort_unstable();
            v.dedup();
            v
        };
        let loading = sorted(loading);
        let storage = sorted(storage);
        let tweezers = sorted(tweezers);

        let n_sites = n_cols as usize * n_rows as usize;
        let mut zone_table = vec![Zone::Gap; n_sites];
        let mut tweezer_table = vec![false; n_sites];
        let index = |s: Site| -> Result<usize, GeometryError> {
            if s.col >= n_cols || s.row >= n_rows {
                return Err(GeometryError::SiteOutsideLattice {
                    site: s,
                    n_cols,
                    n_rows,
                });
            }
            Ok(s.row as usize * n_cols as usize + s.col as usize)
        };
        for &s in &storage {
            zone_table[index(s)?] = Zone::Storage;
        }
        for &s in &loading {
            let i = index(s)?;
            if zone_table[i] == Zone::Storage {
                return Err(GeometryError::OverlappingZones { site: s });
            }
            zone_table[i] = Zone::Loading;
        }
        for &s in &tweezers {
            let i = index(s)?;
            if zone_table[i] != Zone::Loading {
                return Err(GeometryError::TweezerOutsideLoading { site: s });
            }
            tweezer_table[i] = true;
        }

        Ok(LatticeGeometry {
            spacing_x,
            spacing_y,
            n_cols,
            n_rows,
            loading_zone: loading,
            storage_zone: storage,
            tweezer_sites: tweezers,
            staging_col,
            zone_table,
            tweezer_table,
        })
    }

    /// Band layout: full-width storage and loading row ranges plus a
    /// rectangular tweezer block inside the loading band.
    #[allow(clippy::too_many_arguments)]
    pub fn row_banded(
        spacing_x: F,
        spacing_y: F,
        n_cols: u32,
        n_rows: u32,
        storage_rows: Range<u32>,
        loading_rows: Range<u32>,
        tweezer_cols: Range<u32>,
        tweezer_rows: Range<u32>,
        staging_col: u32,
    ) -> Result<Self, GeometryError> {
        let block = |rows: Range<u32>, cols: Range<u32>| -> Vec<Site> {
            let mut v = Vec::new();
            for row in rows {
                for col in cols.clone() {
                    v.push(Site { row, col });
                }
            }
            v
        };
        Self::new(
            spacing_x,
            spacing_y,
            n_cols,
            n_rows,
            block(loading_rows, 0..n_cols),
            block(storage_rows, 0..n_cols),
            block(tweezer_rows, tweezer_cols),
            staging_col,
        )
    }

    pub fn spacing_x(&self) -> F {
        self.spacing_x
    }

    pub fn spacing_y(&self) -> F {
        self.spacing_y
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    pub fn n_rows(&self) -> u32 {
        self.n_rows
    }

    pub fn n_sites(&self) -> usize {
        self.n_cols as usize * self.n_rows as usize
    }

    pub fn staging_col(&self) -> u32 {
        self.staging_col
    }

    /// x-coordinate of the vertical transit lane.
    pub fn staging_lane_x(&self) -> F {
        self.lane_x(self.staging_col).expect("validated at construction")
    }

    pub fn contains(&self, s: Site) -> bool {
        s.col < self.n_cols && s.row < self.n_rows
    }

    pub fn index_of(&self, s: Site) -> usize {
        debug_assert!(self.contains(s));
        s.row as usize * self.n_cols as usize + s.col as usize
    }

    pub fn site_from_index(&self, i: usize) -> Site {
        debug_assert!(i < self.n_sites());
        Site {
            row: (i / self.n_cols as usize) as u32,
            col: (i % self.n_cols as usize) as u32,
        }
    }

    pub fn site_position(&self, col: u32, row: u32) -> Result<Point<F>, GeometryError> {
        if col >= self.n_cols {
            return Err(GeometryError::ColumnOutOfRange {
                col,
                n_cols: self.n_cols,
            });
        }
        if row >= self.n_rows {
            return Err(GeometryError::RowOutOfRange {
                row,
                n_rows: self.n_rows,
            });
        }
        Ok(self.pos(Site { row, col }))
    }

    /// Position of an in-bounds site; the unchecked hot-path counterpart of
    /// `site_position`.
    pub fn pos(&self, s: Site) -> Point<F> {
        debug_assert!(self.contains(s));
        Point::new(
            F::from_u32(s.col).expect("small int") * self.spacing_x,
            F::from_u32(s.row).expect("small int") * self.spacing_y,
        )
    }

    /// Midline between `row` and `row + 1`, the horizontal transit corridor.
    pub fn corridor_y(&self, row: u32) -> Result<F, GeometryError> {
        if row + 1 >= self.n_rows {
            return Err(GeometryError::RowOutOfRange {
                row,
                n_rows: self.n_rows,
            });
        }
        Ok((F::from_u32(row).expect("small int") + F::of(0.5)) * self.spacing_y)
    }

    /// Midline between `col` and `col + 1`, the vertical analogue of
    /// `corridor_y`.
    pub fn lane_x(&self, col: u32) -> Result<F, GeometryError> {
        if col + 1 >= self.n_cols {
            return Err(GeometryError::ColumnOutOfRange {
                col,
                n_cols: self.n_cols,
            });
        }
        Ok((F::from_u32(col).expect("small int") + F::of(0.5)) * self.spacing_x)
    }

    pub fn zone(&self, s: Site) -> Zone {
        self.zone_table[self.index_of(s)]
    }

    pub fn is_tweezer(&self, s: Site) -> bool {
        self.tweezer_table[self.index_of(s)]
    }

    pub fn loading_zone(&self) -> &[Site] {
        &self.loading_zone
    }

    pub fn storage_zone(&self) -> &[Site] {
        &self.storage_zone
    }

    pub fn tweezer_sites(&self) -> &[Site] {
        &self.tweezer_sites
    }
}

/// Interference profile of the trapping field.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PotentialForm {
    /// Separable product of squared cosines per axis: wells of the full
    /// depth at every site, exactly flat along corridor midlines. Other
    /// interference models can slot in behind this tag without touching
    /// callers.
    SeparableCosSq,
}

#[derive(Clone, Copy, Debug)]
pub struct PotentialModel<F> {
    /// Well depth in uK; the potential at a site center is minus this.
    pub lattice_depth: F,
    /// Depth of the moving tweezer relative to the lattice wells.
    pub tweezer_depth_ratio: F,
    pub form: PotentialForm,
}

impl<F: Scalar> Default for PotentialModel<F> {
    fn default() -> Self {
        PotentialModel {
            lattice_depth: F::of(200.0),
            tweezer_depth_ratio: F::of(10.0),
            form: PotentialForm::SeparableCosSq,
        }
    }
}

/// Extrema of the potential along a sampled path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathModulation<F> {
    pub min: F,
    pub max: F,
    pub peak_to_peak: F,
}

impl<F: Scalar> PotentialModel<F> {
    /// Trap energy in uK at an arbitrary point. The form is periodic, so
    /// points outside the site grid extend naturally rather than clamping.
    pub fn potential_at(&self, geo: &LatticeGeometry<F>, p: Point<F>) -> F {
        match self.form {
            PotentialForm::SeparableCosSq => {
                let pi = F::of(std::f64::consts::PI);
                let cx = (pi * p.x / geo.spacing_x()).cos();
                let cy = (pi * p.y / geo.spacing_y()).cos();
                -self.lattice_depth * cx * cx * cy * cy
            }
        }
    }

    /// Samples the potential uniformly by arc length along the path.
    pub fn path_modulation(
        &self,
        geo: &LatticeGeometry<F>,
        path: &Polyline<F>,
        n_samples: usize,
    ) -> PathModulation<F> {
        assert!(n_samples >= 2, "need at least two samples");
        let mut min = F::infinity();
        let mut max = F::neg_infinity();
        for p in path.sample_by_arc_length(n_samples) {
            let u = self.potential_at(geo, p);
            if u < min {
                min = u;
            }
            if u > max {
                max = u;
            }
        }
        PathModulation {
            min,
            max,
            peak_to_peak: max - min,
        }
    }
}

/// The register layout inside the storage zone: which sites the planner
/// keeps filled. Sites are held sorted in row-major order; that order is the
/// canonical fill order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetPattern {
    sites: Vec<Site>,
    row_stride: u32,
    col_stride: u32,
}

impl TargetPattern {
    pub fn from_sites(sites: Vec<Site>, row_stride: u32, col_stride: u32) -> Self {
        let mut sites = sites;
        sites.sort_unstable();
        sites.dedup();
        TargetPattern {
            sites,
            row_stride,
            col_stride,
        }
    }

    /// Regular sub-grid anchored at `origin`.
    pub fn grid(
        origin: Site,
        n_pattern_rows: u32,
        row_stride: u32,
        n_pattern_cols: u32,
        col_stride: u32,
    ) -> Self {
        let mut sites = Vec::with_capacity(n_pattern_rows as usize * n_pattern_cols as usize);
        for i in 0..n_pattern_rows {
            for j in 0..n_pattern_cols {
                sites.push(Site {
                    row: origin.row + i * row_stride,
                    col: origin.col + j * col_stride,
                });
            }
        }
        TargetPattern {
            sites,
            row_stride,
            col_stride,
        }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn row_stride(&self) -> u32 {
        self.row_stride
    }

    pub fn col_stride(&self) -> u32 {
        self.col_stride
    }

    pub fn contains(&self, s: Site) -> bool {
        self.sites.binary_search(&s).is_ok()
    }

    /// Per-site membership table indexed like the geometry's site indices.
    pub fn mask<F: Scalar>(&self, geo: &LatticeGeometry<F>) -> Vec<bool> {
        let mut m = vec![false; geo.n_sites()];
        for &s in &self.sites {
            m[geo.index_of(s)] = true;
        }
        m
    }

    /// Checks that the pattern is routable with clearance `d_min`: every
    /// target site is in the storage zone, the insertion corridor 1.5 rows
    /// above each target row keeps `d_min` from all target rows, and columns
    /// within a row are far enough apart that a vertical insertion stroke
    /// clears the neighbors. The insertion corridor is fixed at the midline
    /// between rows r+1 and r+2; a corridor closer to the row is always
    /// within half a row spacing of it, which no useful `d_min` permits.
    pub fn validate<F: Scalar>(
        &self,
        geo: &LatticeGeometry<F>,
        d_min: F,
    ) -> Result<(), GeometryError> {
        let d_min_f = d_min.to_f64_lossy();
        for &s in &self.sites {
            if !geo.contains(s) {
                return Err(GeometryError::SiteOutsideLattice {
                    site: s,
                    n_cols: geo.n_cols(),
                    n_rows: geo.n_rows(),
                });
            }
            if geo.zone(s) != Zone::Storage {
                return Err(GeometryError::TargetOutsideStorage { site: s });
            }
        }

        // Row inventory and per-row minimum column pitch.
        let mut rows: Vec<u32> = Vec::new();
        let mut row_start = 0usize;
        while row_start < self.sites.len() {
            let row = self.sites[row_start].row;
            let mut end = row_start;
            let mut prev_col: Option<u32> = None;
            while end < self.sites.len() && self.sites[end].row == row {
                if let Some(pc) = prev_col {
                    let pitch = F::from_u32(self.sites[end].col - pc).expect("small int")
                        * geo.spacing_x();
                    if pitch < d_min {
                        return Err(GeometryError::TargetColumnsTooClose {
                            row,
                            d_min: d_min_f,
                        });
                    }
                }
                prev_col = Some(self.sites[end].col);
                end += 1;
            }
            rows.push(row);
            row_start = end;
        }

        // Insertion corridor above row r sits at (r + 1.5) spacings; it must
        // exist inside the lattice and keep d_min from rows r and r_next.
        for (i, &r) in rows.iter().enumerate() {
            if r + 2 >= geo.n_rows() {
                return Err(GeometryError::NoTransitCorridor {
                    row: r,
                    d_min: d_min_f,
                });
            }
            let mut margin = F::of(1.5) * geo.spacing_y();
            if let Some(&next) = rows.get(i + 1) {
                let above = (F::from_u32(next - r).expect("small int") - F::of(1.5))
                    * geo.spacing_y();
                margin = margin.min(above);
            }
            if margin < d_min {
                return Err(GeometryError::NoTransitCorridor {
                    row: r,
                    d_min: d_min_f,
                });
            }
        }
        Ok(())
    }
}
