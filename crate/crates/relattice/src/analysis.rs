//! Statistics over recorded run traces: survival and gain fractions between
//! images, per-cycle metric series, stored-count fluctuations, Pearson
//! correlations, log-linear decay fits, and the recurrence overlay.
//!
//! Everything here is a pure function of its inputs; nothing draws random
//! numbers or mutates a trace, so repeated invocation is bit-identical.
//! Fractions whose denominator is empty come back as `None` so downstream
//! aggregation skips them instead of absorbing a fake zero.

use std::ops::Range;

use thiserror::Error;

use crate::geometry::{LatticeGeometry, TargetPattern, Zone};
use crate::loss::iterate_recurrence;
use crate::num::Scalar;
use crate::sim::{BitGrid, ImageTag, OccupancyMatrix, RunTrace};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("need at least {required_cycles} recorded cycles ({required_pairs} consecutive-cycle pairs), trace has {got_cycles}")]
    TooFewCycles {
        required_cycles: usize,
        required_pairs: usize,
        got_cycles: usize,
    },
    #[error("trace holds no cycles")]
    EmptyTrace,
    #[error("image list must pair a first and second frame per cycle, got {count} frames")]
    UnpairedImages { count: usize },
    #[error("image {index} breaks the alternating first/second tag order")]
    TagOrder { index: usize },
    #[error("image {index} does not match the lattice dimensions")]
    ImageShape { index: usize },
    #[error("mask length does not match the lattice site count")]
    MaskShape,
    #[error("mask bit {index} lies outside the storage zone")]
    MaskOutsideStorage { index: usize },
    #[error("fit window {start}..{end} must hold at least 3 points")]
    WindowTooShort { start: usize, end: usize },
    #[error("fit window {start}..{end} exceeds the {len} recorded cycles")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("count at cycle {index} is {value}; the log-linear fit needs positive counts")]
    NonPositiveCount { index: usize, value: f64 },
    #[error("fit window does not decay (fitted survival {survival} exceeds 1)")]
    NotDecaying { survival: f64 },
}

fn f<F: Scalar>(x: u32) -> F {
    F::from_u32(x).expect("count fits any Scalar")
}

/// `popcount(a & b & c)`. All three grids must be the same length.
fn count_and3(a: &BitGrid, b: &BitGrid, c: &BitGrid) -> u32 {
    a.words()
        .iter()
        .zip(b.words())
        .zip(c.words())
        .map(|((x, y), z)| (x & y & z).count_ones())
        .sum()
}

/// `popcount(!a & b & c)`. Stray high bits in `!a` are cleared by `c`,
/// which never has bits past its length.
fn count_absent_then_present(a: &BitGrid, b: &BitGrid, c: &BitGrid) -> u32 {
    a.words()
        .iter()
        .zip(b.words())
        .zip(c.words())
        .map(|((x, y), z)| (!x & y & z).count_ones())
        .sum()
}

/// Fraction of mask sites filled in `image_m` that are still filled in
/// `image_n`, or `None` when `image_m` holds nothing inside the mask.
pub fn survival_fraction<F: Scalar>(
    image_m: &OccupancyMatrix,
    image_n: &OccupancyMatrix,
    mask: &BitGrid,
) -> Option<F> {
    let denom = image_m.count_masked(mask);
    if denom == 0 {
        return None;
    }
    let both = count_and3(image_m.bits(), image_n.bits(), mask);
    Some(f::<F>(both) / f::<F>(denom))
}

/// Fraction of mask sites filled in `image_n` that were empty in
/// `image_m`, or `None` when `image_n` holds nothing inside the mask.
pub fn gain_fraction<F: Scalar>(
    image_m: &OccupancyMatrix,
    image_n: &OccupancyMatrix,
    mask: &BitGrid,
) -> Option<F> {
    let denom = image_n.count_masked(mask);
    if denom == 0 {
        return None;
    }
    let fresh = count_absent_then_present(image_m.bits(), image_n.bits(), mask);
    Some(f::<F>(fresh) / f::<F>(denom))
}

fn pattern_mask<F: Scalar>(geo: &LatticeGeometry<F>, pattern: &TargetPattern) -> BitGrid {
    let mut mask = BitGrid::new(geo.n_sites());
    for &s in pattern.sites() {
        mask.set(geo.index_of(s));
    }
    mask
}

/// The two per-cycle images of a run laid out flat, first image then
/// second, plus the register mask the statistics are taken over.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequence<'a> {
    images: Vec<&'a OccupancyMatrix>,
    mask: BitGrid,
}

impl<'a> ImageSequence<'a> {
    /// Validates an externally assembled sequence: an even number of
    /// frames alternating first/second tags, every frame matching the
    /// lattice, and the mask confined to the storage zone.
    pub fn new<F: Scalar>(
        geo: &LatticeGeometry<F>,
        images: Vec<&'a OccupancyMatrix>,
        mask: BitGrid,
    ) -> Result<Self, AnalysisError> {
        if images.len() % 2 != 0 {
            return Err(AnalysisError::UnpairedImages {
                count: images.len(),
            });
        }
        for (i, img) in images.iter().enumerate() {
            let want = if i % 2 == 0 {
                ImageTag::One
            } else {
                ImageTag::Two
            };
            if img.tag != want {
                return Err(AnalysisError::TagOrder { index: i });
            }
            if img.n_cols() != geo.n_cols() || img.n_rows() != geo.n_rows() {
                return Err(AnalysisError::ImageShape { index: i });
            }
        }
        if mask.len() != geo.n_sites() {
            return Err(AnalysisError::MaskShape);
        }
        for i in mask.iter_ones() {
            if geo.zone(geo.site_from_index(i)) != Zone::Storage {
                return Err(AnalysisError::MaskOutsideStorage { index: i });
            }
        }
        Ok(ImageSequence { images, mask })
    }

    /// Borrows the images straight out of a recorded trace; the simulator
    /// upholds the ordering and mask invariants by construction.
    pub fn from_trace<F: Scalar>(trace: &'a RunTrace<F>) -> Self {
        let mut images = Vec::with_capacity(trace.records.len() * 2);
        for r in &trace.records {
            images.push(&r.image1);
            images.push(&r.image2);
        }
        let mask = pattern_mask(&trace.config.geometry, &trace.config.target_pattern);
        ImageSequence { images, mask }
    }

    pub fn n_cycles(&self) -> usize {
        self.images.len() / 2
    }

    /// First image of cycle `j`, taken right after reload.
    pub fn first(&self, j: usize) -> &OccupancyMatrix {
        self.images[2 * j]
    }

    /// Second image of cycle `j`, taken after the moves.
    pub fn second(&self, j: usize) -> &OccupancyMatrix {
        self.images[2 * j + 1]
    }

    pub fn mask(&self) -> &BitGrid {
        &self.mask
    }
}

/// Per-cycle metric series, one entry per recorded cycle. Quantities that
/// reach into the following cycle carry `None` at the final index, and any
/// empty denominator yields `None` at that cycle.
///
/// All fractions live in [0, 1]. `move_success` is the one ratio whose
/// numerator and denominator come from different images, so observation
/// noise can push the raw value past one; it is clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionSeries<F> {
    /// Occupied tweezer fraction in the first image.
    pub loading_fraction: Vec<Option<F>>,
    /// Move destinations occupied in the second image over atoms loaded.
    pub move_success: Vec<Option<F>>,
    /// Register survival between a cycle's own two images, skipping that
    /// cycle's move destinations: stored atoms that were not themselves
    /// moved.
    pub stored_survival: Vec<Option<F>>,
    /// Register survival from one second image to the next first image,
    /// across the shelving boundary.
    pub shelved_survival: Vec<Option<F>>,
    /// Register survival from second image to next second image, the full
    /// cycle.
    pub cycle_survival: Vec<Option<F>>,
    /// Register sites freshly filled between a cycle's own two images,
    /// skipping that cycle's move destinations.
    pub resort_gain: Vec<Option<F>>,
    /// Register sites freshly filled across the shelving boundary.
    pub boundary_gain: Vec<Option<F>>,
    /// Register sites freshly filled over the full cycle.
    pub cycle_gain: Vec<Option<F>>,
    /// Relative stored-count change to the next cycle,
    /// (N(j+1) - N(j)) / N(j), from second-image register counts.
    pub fluctuation: Vec<Option<F>>,
}

impl<F> FractionSeries<F> {
    pub fn n_cycles(&self) -> usize {
        self.loading_fraction.len()
    }
}

/// Relative stored-count change per consecutive cycle pair, from the
/// second-image register counts; `None` where the earlier count is zero.
pub fn atom_number_fluctuation<F: Scalar>(
    trace: &RunTrace<F>,
) -> Result<Vec<Option<F>>, AnalysisError> {
    let counts = trace.stored_counts();
    if counts.len() < 2 {
        return Err(AnalysisError::TooFewCycles {
            required_cycles: 2,
            required_pairs: 1,
            got_cycles: counts.len(),
        });
    }
    Ok(counts
        .windows(2)
        .map(|w| {
            if w[0] == 0 {
                None
            } else {
                Some((f::<F>(w[1]) - f::<F>(w[0])) / f::<F>(w[0]))
            }
        })
        .collect())
}

/// Extracts every per-cycle metric series from a trace in one pass.
pub fn per_cycle_metrics<F: Scalar>(trace: &RunTrace<F>) -> FractionSeries<F> {
    let geo = &trace.config.geometry;
    let seq = ImageSequence::from_trace(trace);
    let mask = seq.mask().clone();
    let t = seq.n_cycles();

    let mut tweezers = BitGrid::new(geo.n_sites());
    for &s in geo.tweezer_sites() {
        tweezers.set(geo.index_of(s));
    }
    let n_tweezers = geo.tweezer_sites().len() as u32;

    let mut out = FractionSeries {
        loading_fraction: Vec::with_capacity(t),
        move_success: Vec::with_capacity(t),
        stored_survival: Vec::with_capacity(t),
        shelved_survival: Vec::with_capacity(t),
        cycle_survival: Vec::with_capacity(t),
        resort_gain: Vec::with_capacity(t),
        boundary_gain: Vec::with_capacity(t),
        cycle_gain: Vec::with_capacity(t),
        fluctuation: Vec::with_capacity(t),
    };

    for j in 0..t {
        let record = &trace.records[j];
        let img1 = seq.first(j);
        let img2 = seq.second(j);

        let loaded = img1.count_masked(&tweezers);
        out.loading_fraction.push(if n_tweezers == 0 {
            None
        } else {
            Some(f::<F>(loaded) / f::<F>(n_tweezers))
        });

        let arrived = record
            .move_destinations
            .iter()
            .filter(|&&d| img2.get_index(d as usize))
            .count() as u32;
        out.move_success.push(if loaded == 0 {
            None
        } else {
            Some((f::<F>(arrived) / f::<F>(loaded)).min(F::one()))
        });

        // The cycle's own destinations are masked out so these two series
        // describe atoms that sat still while the moves ran.
        let mut unmoved = mask.clone();
        for &d in &record.move_destinations {
            unmoved.clear(d as usize);
        }
        out.stored_survival
            .push(survival_fraction(img1, img2, &unmoved));
        out.resort_gain.push(gain_fraction(img1, img2, &unmoved));

        if j + 1 < t {
            let next1 = seq.first(j + 1);
            let next2 = seq.second(j + 1);
            out.shelved_survival
                .push(survival_fraction(img2, next1, &mask));
            out.cycle_survival
                .push(survival_fraction(img2, next2, &mask));
            out.boundary_gain.push(gain_fraction(img2, next1, &mask));
            out.cycle_gain.push(gain_fraction(img2, next2, &mask));
            let n_now = img2.count_masked(&mask);
            let n_next = next2.count_masked(&mask);
            out.fluctuation.push(if n_now == 0 {
                None
            } else {
                Some((f::<F>(n_next) - f::<F>(n_now)) / f::<F>(n_now))
            });
        } else {
            out.shelved_survival.push(None);
            out.cycle_survival.push(None);
            out.boundary_gain.push(None);
            out.cycle_gain.push(None);
            out.fluctuation.push(None);
        }
    }
    out
}

/// Pearson correlation coefficient with the population convention (divide
/// by N) in both the covariance and the standard deviations; the ratio is
/// convention-independent, the convention is pinned here anyway. `None`
/// when either series has zero variance.
pub fn pearson<F: Scalar>(x: &[F], y: &[F]) -> Result<Option<F>, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            required: 2,
            got: x.len(),
        });
    }
    Ok(pearson_unchecked(x, y))
}

fn pearson_unchecked<F: Scalar>(x: &[F], y: &[F]) -> Option<F> {
    let n = F::from_usize(x.len()).expect("length fits any Scalar");
    let mx = x.iter().copied().sum::<F>() / n;
    let my = y.iter().copied().sum::<F>() / n;
    let mut cov = F::zero();
    let mut vx = F::zero();
    let mut vy = F::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == F::zero() || vy == F::zero() {
        return None;
    }
    // Rounding can push a perfectly correlated pair a hair past +/-1.
    Some((cov / (vx * vy).sqrt()).max(-F::one()).min(F::one()))
}

/// Correlation of each tracked fraction against the stored-count
/// fluctuation, over consecutive-cycle pairs. `None` entries mark
/// coefficients whose inputs had zero variance or fewer than two defined
/// pairs after sentinel skipping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationReport<F> {
    pub n_pairs: usize,
    /// Within the later cycle of each pair, move destinations excluded.
    pub stored_survival: Option<F>,
    /// Across the shelving boundary between the paired cycles.
    pub shelved_survival: Option<F>,
    /// Full-cycle survival between the paired second images.
    pub cycle_survival: Option<F>,
    pub resort_gain: Option<F>,
    pub boundary_gain: Option<F>,
    pub cycle_gain: Option<F>,
}

/// Pairs each fraction at cycle pair (j, j+1) with the fluctuation of the
/// same pair and reports the Pearson coefficients. Within-cycle fractions
/// (stored survival, resort gain) come from the later cycle of the pair;
/// boundary and full-cycle fractions span the pair itself.
pub fn correlation_report<F: Scalar>(
    trace: &RunTrace<F>,
) -> Result<CorrelationReport<F>, AnalysisError> {
    let t = trace.records.len();
    if t < 4 {
        return Err(AnalysisError::TooFewCycles {
            required_cycles: 4,
            required_pairs: 3,
            got_cycles: t,
        });
    }
    let series = per_cycle_metrics(trace);
    let n_pairs = t - 1;

    let correlate = |q: &dyn Fn(usize) -> Option<F>| -> Option<F> {
        let mut xs = Vec::with_capacity(n_pairs);
        let mut ys = Vec::with_capacity(n_pairs);
        for i in 0..n_pairs {
            if let (Some(a), Some(b)) = (q(i), series.fluctuation[i]) {
                xs.push(a);
                ys.push(b);
            }
        }
        if xs.len() < 2 {
            return None;
        }
        pearson_unchecked(&xs, &ys)
    };

    Ok(CorrelationReport {
        n_pairs,
        stored_survival: correlate(&|i| series.stored_survival[i + 1]),
        shelved_survival: correlate(&|i| series.shelved_survival[i]),
        cycle_survival: correlate(&|i| series.cycle_survival[i]),
        resort_gain: correlate(&|i| series.resort_gain[i + 1]),
        boundary_gain: correlate(&|i| series.boundary_gain[i]),
        cycle_gain: correlate(&|i| series.cycle_gain[i]),
    })
}

/// Result of a log-linear fit to a decaying stored-count window.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit<F> {
    /// Per-cycle survival, `exp` of the fitted slope; in (0, 1].
    pub survival: F,
    /// `1 - survival`.
    pub cycle_loss: F,
    /// Cycle-index window the fit ran over.
    pub window: Range<usize>,
    /// Euclidean norm of the log-space residuals.
    pub residual_norm: F,
}

/// Least-squares fit of `log(counts[i])` against the cycle index `i` over
/// `window`. Log-linear rather than a nonlinear exponential fit: it is
/// stable on the short windows this gets used with.
pub fn fit_decay<F: Scalar>(counts: &[F], window: Range<usize>) -> Result<DecayFit<F>, AnalysisError> {
    if window.end > counts.len() || window.start > window.end {
        return Err(AnalysisError::WindowOutOfRange {
            start: window.start,
            end: window.end,
            len: counts.len(),
        });
    }
    if window.len() < 3 {
        return Err(AnalysisError::WindowTooShort {
            start: window.start,
            end: window.end,
        });
    }
    for i in window.clone() {
        if counts[i] <= F::zero() {
            return Err(AnalysisError::NonPositiveCount {
                index: i,
                value: counts[i].to_f64_lossy(),
            });
        }
    }

    let n = F::from_usize(window.len()).expect("length fits any Scalar");
    let xs: Vec<F> = window
        .clone()
        .map(|i| F::from_usize(i).expect("index fits any Scalar"))
        .collect();
    let ys: Vec<F> = window.clone().map(|i| counts[i].ln()).collect();
    let mx = xs.iter().copied().sum::<F>() / n;
    let my = ys.iter().copied().sum::<F>() / n;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let survival = slope.exp();
    if survival > F::one() {
        return Err(AnalysisError::NotDecaying {
            survival: survival.to_f64_lossy(),
        });
    }
    let mut rss = F::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        let r = y - (intercept + slope * x);
        rss += r * r;
    }
    Ok(DecayFit {
        survival,
        cycle_loss: F::one() - survival,
        window,
        residual_norm: rss.sqrt(),
    })
}

/// Overrides for [`model_overlay`]; `None` fields fall back to the value
/// measured from the trace itself.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OverlayParams<F> {
    pub atoms_loaded_per_cycle: Option<F>,
    pub resort_loss: Option<F>,
    pub cycle_loss: Option<F>,
}

/// Time-averaged parameters extracted from (or forced onto) a trace, plus
/// the recurrence they generate. `predicted[j]` estimates the stored count
/// at the end of cycle `j`; `predicted[0]` is anchored to the observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOverlay<F> {
    pub atoms_loaded_per_cycle: F,
    pub resort_loss: F,
    pub cycle_loss: F,
    pub predicted: Vec<F>,
}

/// Runs the constant-parameter recurrence from the first observed stored
/// count, using ratio-of-sums time averages measured over the whole trace:
/// reload from attempted moves, transfer loss from the succeeded/attempted
/// ratio, and cycle loss from boundary-plus-imaging casualties among
/// already-stored atoms over the population at risk. Phase-structured runs
/// (a reload phase followed by a decay phase, say) want the overlay on each
/// phase separately, or the relevant override forced.
pub fn model_overlay<F: Scalar>(
    trace: &RunTrace<F>,
    params: &OverlayParams<F>,
) -> Result<ModelOverlay<F>, AnalysisError> {
    let t = trace.records.len();
    if t == 0 {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut attempted = 0u64;
    let mut succeeded = 0u64;
    let mut old_losses = 0u64;
    let mut at_risk = 0u64;
    let mut prev_true = 0u64;
    for r in &trace.records {
        attempted += u64::from(r.n_moves_attempted);
        succeeded += u64::from(r.n_moves_succeeded);
        if r.cycle_index > 0 {
            old_losses += u64::from(r.n_shelving_losses)
                + u64::from(r.n_vacuum_losses)
                + u64::from(r.n_imaging_losses)
                + u64::from(r.n_collateral_losses);
            at_risk += prev_true + u64::from(r.n_background_gains);
        }
        prev_true = u64::from(r.true_stored_after);
    }
    let wide = |v: u64| F::from_u64(v).expect("tally fits any Scalar");

    let atoms_loaded = params.atoms_loaded_per_cycle.unwrap_or_else(|| {
        wide(attempted) / F::from_usize(t).expect("length fits any Scalar")
    });
    let resort_loss = params.resort_loss.unwrap_or_else(|| {
        if attempted == 0 {
            F::zero()
        } else {
            F::one() - wide(succeeded) / wide(attempted)
        }
    });
    let cycle_loss = params.cycle_loss.unwrap_or_else(|| {
        if at_risk == 0 {
            F::zero()
        } else {
            wide(old_losses) / wide(at_risk)
        }
    });

    let n0 = f::<F>(trace.records[0].stored_count_after);
    let predicted = iterate_recurrence(n0, atoms_loaded, resort_loss, cycle_loss, t - 1);
    Ok(ModelOverlay {
        atoms_loaded_per_cycle: atoms_loaded,
        resort_loss,
        cycle_loss,
        predicted,
    })
}
