//! Seeded Monte Carlo execution of the reload / image / resort / image
//! cycle over a full-lattice occupancy state.
//!
//! The simulator keeps two views of the world apart: the *true* occupancy,
//! which the dynamics act on, and *observed* images, which carry detection
//! noise and are what the analysis layer consumes. Atoms are never created
//! by the dynamics; spurious detections exist only in images.
//!
//! Stage order per cycle:
//!   1. boundary stage (cycles > 0): shelving round trip and vacuum decay
//!      applied to the storage zone while the source refills,
//!   2. reload: tweezer sites fill stochastically (already-held sites are
//!      kept, tweezer light protects them), unprotected residue elsewhere
//!      is purged down to the heating extinction and background refills,
//!   3. first image,
//!   4. planning on the true occupancy (unless resorting is disabled),
//!   5. plan execution with per-move transport survival and collateral
//!      loss around the swept path,
//!   6. second image.
//!
//! Shelving and vacuum losses land in the record of the cycle whose reload
//! they shield, so a cycle's arrivals are imaged at full strength and decay
//! from the following cycle on.

pub mod trace_io;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{GeometryError, LatticeGeometry, Site, TargetPattern, Zone};
use crate::loss::{vacuum_survival, CollateralModel, LossError, LossParameters, MoveSuccessModel};
use crate::num::Scalar;
use crate::planner::{plan_cycle, ClearanceIndex, KinematicParams, MovePlan, PlanError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("plan references an empty source site {0}")]
    EmptySource(Site),
}

/// Dense bitset over site indices; the working representation of one
/// lattice-wide occupancy state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitGrid {
    n_bits: usize,
    words: Vec<u64>,
}

impl BitGrid {
    pub fn new(n_bits: usize) -> Self {
        BitGrid {
            n_bits,
            words: vec![0; n_bits.div_ceil(64)],
        }
    }

    pub fn from_words(n_bits: usize, words: Vec<u64>) -> Result<Self, String> {
        if words.len() != n_bits.div_ceil(64) {
            return Err(format!(
                "expected {} words for {} bits, got {}",
                n_bits.div_ceil(64),
                n_bits,
                words.len()
            ));
        }
        if let Some(last) = words.last() {
            let tail = n_bits % 64;
            if tail != 0 && *last >> tail != 0 {
                return Err("set bits beyond the grid length".to_string());
            }
        }
        Ok(BitGrid { n_bits, words })
    }

    pub fn len(&self) -> usize {
        self.n_bits
    }

    pub fn is_empty(&self) -> bool {
        self.n_bits == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.n_bits);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.n_bits);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        debug_assert!(i < self.n_bits);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Population count of `self & mask`.
    pub fn count_and(&self, mask: &BitGrid) -> u32 {
        debug_assert_eq!(self.n_bits, mask.n_bits);
        self.words
            .iter()
            .zip(&mask.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageTag {
    One,
    Two,
}

impl ImageTag {
    pub fn as_u8(self) -> u8 {
        match self {
            ImageTag::One => 1,
            ImageTag::Two => 2,
        }
    }
}

/// One observed image: per-site detections over the whole lattice, tagged
/// with its position in the two-images-per-cycle sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyMatrix {
    n_cols: u32,
    n_rows: u32,
    pub tag: ImageTag,
    bits: BitGrid,
}

impl OccupancyMatrix {
    pub fn empty(n_cols: u32, n_rows: u32, tag: ImageTag) -> Self {
        OccupancyMatrix {
            n_cols,
            n_rows,
            tag,
            bits: BitGrid::new(n_cols as usize * n_rows as usize),
        }
    }

    pub fn from_bits(n_cols: u32, n_rows: u32, tag: ImageTag, bits: BitGrid) -> Result<Self, String> {
        if bits.len() != n_cols as usize * n_rows as usize {
            return Err(format!(
                "bit grid of {} sites does not match a {n_cols} x {n_rows} lattice",
                bits.len()
            ));
        }
        Ok(OccupancyMatrix {
            n_cols,
            n_rows,
            tag,
            bits,
        })
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    pub fn n_rows(&self) -> u32 {
        self.n_rows
    }

    pub fn get(&self, s: Site) -> bool {
        debug_assert!(s.col < self.n_cols && s.row < self.n_rows);
        self.bits
            .get(s.row as usize * self.n_cols as usize + s.col as usize)
    }

    pub fn get_index(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    pub fn set_index(&mut self, i: usize) {
        self.bits.set(i)
    }

    pub fn count(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn count_masked(&self, mask: &BitGrid) -> u32 {
        self.bits.count_and(mask)
    }

    pub fn bits(&self) -> &BitGrid {
        &self.bits
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig<F> {
    pub geometry: LatticeGeometry<F>,
    pub target_pattern: TargetPattern,
    pub loss_parameters: LossParameters<F>,
    pub move_success_model: MoveSuccessModel<F>,
    pub collateral_model: CollateralModel<F>,
    pub kinematics: KinematicParams<F>,
    pub n_cycles: u32,
    /// Cycle index from which planning is skipped; `None` keeps resorting on.
    pub resort_disable_after: Option<u32>,
    pub rng_seed: u64,
    pub n_replicas: u32,
    /// Assignment instances with at most this many source-target pairs are
    /// solved exactly; larger ones fall back to the greedy matcher.
    pub exact_assignment_limit: usize,
}

impl<F: Scalar> Default for SimulationConfig<F> {
    /// The reference layout: a 224 x 110 anisotropic lattice with a
    /// 323-trap reservoir block in the loading rows and a stride 3 x 2
    /// register of 1404 sites in the storage rows.
    fn default() -> Self {
        let geometry = LatticeGeometry::row_banded(
            F::of(0.579),
            F::of(1.187),
            224,
            110,
            0..88,
            90..110,
            20..37,
            91..110,
            114,
        )
        .expect("reference layout is valid");
        let target_pattern = TargetPattern::grid(Site { row: 9, col: 6 }, 26, 3, 54, 2);
        SimulationConfig {
            geometry,
            target_pattern,
            loss_parameters: LossParameters::default(),
            move_success_model: MoveSuccessModel::default(),
            collateral_model: CollateralModel::default(),
            kinematics: KinematicParams::default(),
            n_cycles: 100,
            resort_disable_after: None,
            rng_seed: 0,
            n_replicas: 1,
            exact_assignment_limit: 10_000,
        }
    }
}

impl<F: Scalar> SimulationConfig<F> {
    pub fn validate(&self) -> Result<(), SimError> {
        self.loss_parameters.validate()?;
        self.move_success_model.validate()?;
        self.collateral_model.validate()?;
        self.kinematics
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        self.target_pattern
            .validate(&self.geometry, self.collateral_model.d_min)?;
        if self.n_cycles == 0 {
            return Err(SimError::Config("n_cycles must be at least 1".into()));
        }
        if let Some(c) = self.resort_disable_after {
            if c > self.n_cycles {
                return Err(SimError::Config(format!(
                    "resort_disable_after ({c}) exceeds n_cycles ({})",
                    self.n_cycles
                )));
            }
        }
        if self.n_replicas == 0 {
            return Err(SimError::Config("n_replicas must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything tallied while simulating one cycle. Counts are on the true
/// state; the images carry the observation noise.
///
/// Loss fields split by target: `n_imaging_losses` and
/// `n_collateral_losses` hit atoms that were already stored when the cycle
/// began (defects included), the `_arrivals` variants hit atoms placed by
/// this cycle's own moves.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle_index: u32,
    pub image1: OccupancyMatrix,
    pub image2: OccupancyMatrix,
    /// Occupied reservoir traps after the reload, leftovers included.
    pub n_loaded: u32,
    pub n_moves_attempted: u32,
    pub n_moves_succeeded: u32,
    pub n_collateral_losses: u32,
    pub n_collateral_losses_arrivals: u32,
    pub n_shelving_losses: u32,
    pub n_vacuum_losses: u32,
    pub n_imaging_losses: u32,
    pub n_imaging_losses_arrivals: u32,
    /// Background atoms surviving into empty storage sites at reload.
    pub n_background_gains: u32,
    /// Occupied register sites in image2: the observed stored count.
    pub stored_count_after: u32,
    /// True storage-zone population at the end of the cycle.
    pub true_stored_after: u32,
    /// Site indices of every attempted destination, ascending.
    pub move_destinations: Vec<u32>,
}

/// Per-cycle emergent loss parameters reconstructed from the tallies:
/// `alpha_r[i]` is the transport loss among attempted moves, `alpha_c[i]`
/// the fraction of previously stored atoms lost to the boundary stage,
/// imaging and collateral damage. `None` where the denominator vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct WallParameters<F> {
    pub alpha_c: Vec<Option<F>>,
    pub alpha_r: Vec<Option<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace<F> {
    pub config: SimulationConfig<F>,
    pub replica: u32,
    pub records: Vec<CycleRecord>,
}

impl<F: Scalar> RunTrace<F> {
    pub fn stored_counts(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.stored_count_after).collect()
    }

    pub fn wall_parameters(&self) -> WallParameters<F> {
        let mut alpha_c = Vec::with_capacity(self.records.len());
        let mut alpha_r = Vec::with_capacity(self.records.len());
        let mut prev_stored: Option<u32> = None;
        for r in &self.records {
            alpha_r.push(if r.n_moves_attempted > 0 {
                let s = F::from_u32(r.n_moves_succeeded).expect("count");
                let a = F::from_u32(r.n_moves_attempted).expect("count");
                Some(F::one() - s / a)
            } else {
                None
            });
            // Atoms at risk through the cycle: last cycle's survivors plus
            // this cycle's background gains.
            let at_risk = prev_stored.map(|p| p + r.n_background_gains);
            alpha_c.push(match at_risk {
                Some(n) if n > 0 => {
                    let lost = r.n_shelving_losses
                        + r.n_vacuum_losses
                        + r.n_imaging_losses
                        + r.n_collateral_losses;
                    Some(F::from_u32(lost).expect("count") / F::from_u32(n).expect("count"))
                }
                _ => None,
            });
            prev_stored = Some(r.true_stored_after);
        }
        WallParameters { alpha_c, alpha_r }
    }
}

#[inline]
fn chance<F: Scalar, R: Rng>(rng: &mut R, p: F) -> bool {
    // Drawn in f64 so that f32 and f64 configs consume identical streams.
    rng.random::<f64>() < p.to_f64_lossy()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOutcome {
    /// Occupied tweezer sites after the reload.
    pub n_loaded: u32,
    /// Background fills that landed in the storage zone.
    pub n_storage_gains: u32,
}

/// One reload: tweezer sites keep their atoms and refill empties with the
/// loading probability; every other site is exposed to the MOT and the
/// heating pulse, so unshelved residue survives only at the extinction
/// level while empty sites pick up background at the post-heating rate.
/// Storage-zone atoms are shelved and therefore kept untouched.
pub fn load_reservoir<F: Scalar, R: Rng>(
    rng: &mut R,
    geo: &LatticeGeometry<F>,
    params: &LossParameters<F>,
    occupied: &mut BitGrid,
) -> LoadOutcome {
    let fill_background = params.mot_background_fill * params.heating_extinction
        + params.accidental_shelving_prob;
    let mut gains = 0;
    for i in 0..geo.n_sites() {
        let site = geo.site_from_index(i);
        if geo.is_tweezer(site) {
            if !occupied.get(i) && chance(rng, params.load_fraction) {
                occupied.set(i);
            }
        } else if geo.zone(site) == Zone::Storage {
            if !occupied.get(i) && chance(rng, fill_background) {
                occupied.set(i);
                gains += 1;
            }
        } else {
            if occupied.get(i) && !chance(rng, params.heating_extinction) {
                occupied.clear(i);
            }
            if !occupied.get(i) && chance(rng, fill_background) {
                occupied.set(i);
            }
        }
    }
    let n_loaded = geo
        .tweezer_sites()
        .iter()
        .filter(|s| occupied.get(geo.index_of(**s)))
        .count() as u32;
    LoadOutcome {
        n_loaded,
        n_storage_gains: gains,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShelvingOutcome {
    pub n_shelving_losses: u32,
    pub n_vacuum_losses: u32,
}

/// The boundary stage between cycles: every storage-zone atom survives the
/// shelving round trip with `shelving_stage_survival` and the cycle's wall
/// time with the vacuum survival, independently.
pub fn apply_shelving_stage<F: Scalar, R: Rng>(
    rng: &mut R,
    geo: &LatticeGeometry<F>,
    params: &LossParameters<F>,
    occupied: &mut BitGrid,
) -> ShelvingOutcome {
    let p_stage = params.shelving_stage_survival();
    let p_vac = vacuum_survival(params.cycle_time_s, params.vacuum_lifetime_s);
    let mut out = ShelvingOutcome::default();
    for &site in geo.storage_zone() {
        let i = geo.index_of(site);
        if !occupied.get(i) {
            continue;
        }
        if !chance(rng, p_stage) {
            occupied.clear(i);
            out.n_shelving_losses += 1;
        } else if !chance(rng, p_vac) {
            occupied.clear(i);
            out.n_vacuum_losses += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureOutcome {
    pub image: OccupancyMatrix,
    /// Site indices of atoms destroyed by this image, ascending.
    pub lost_sites: Vec<u32>,
}

/// Takes one image of the whole lattice. Every atom is recorded unless
/// misclassified (false negative) and is destroyed with the imaging loss
/// probability *after* exposure, so an atom lost here still shows in this
/// image but is gone from the true state. Empty sites show false positives
/// at the misclassification rate.
pub fn capture_image<F: Scalar, R: Rng>(
    rng: &mut R,
    geo: &LatticeGeometry<F>,
    params: &LossParameters<F>,
    occupied: &mut BitGrid,
    tag: ImageTag,
) -> CaptureOutcome {
    let mut image = OccupancyMatrix::empty(geo.n_cols(), geo.n_rows(), tag);
    let mut lost = Vec::new();
    for i in 0..geo.n_sites() {
        if occupied.get(i) {
            if !chance(rng, params.detection_infidelity) {
                image.set_index(i);
            }
            if chance(rng, params.imaging_loss) {
                occupied.clear(i);
                lost.push(i as u32);
            }
        } else if chance(rng, params.detection_infidelity) {
            image.set_index(i);
        }
    }
    CaptureOutcome {
        image,
        lost_sites: lost,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecutionOutcome {
    pub n_attempted: u32,
    pub n_succeeded: u32,
    pub n_collateral: u32,
    /// Collateral victims among atoms placed earlier in this same plan.
    pub n_collateral_arrivals: u32,
    /// Every attempted destination, ascending site index.
    pub destinations: Vec<u32>,
    /// Destinations holding an atom when execution finished, ascending.
    pub arrivals: Vec<u32>,
}

/// Runs the plan against the true occupancy. Moves execute in plan order;
/// each succeeds with its composed transport probability, then every
/// stored atom the swept path approaches closer than the disturbance
/// radius (source and destination of the move itself excepted) draws a
/// loss: certain inside d_min, the shell probability between d_min and
/// the disturbance radius. Collateral fires whether or not the move
/// itself succeeded. The source atom leaves the reservoir either way: a
/// failed move is a lost atom, not a retry.
pub fn execute_plan<F: Scalar, R: Rng>(
    rng: &mut R,
    geo: &LatticeGeometry<F>,
    plan: &MovePlan<F>,
    occupied: &mut BitGrid,
    success: &MoveSuccessModel<F>,
    collateral: &CollateralModel<F>,
) -> Result<ExecutionOutcome, SimError> {
    let mut index = ClearanceIndex::new(
        geo,
        occupied
            .iter_ones()
            .map(|i| geo.site_from_index(i))
            .filter(|s| geo.zone(*s) == Zone::Storage),
    );
    let mut out = ExecutionOutcome::default();
    let mut placed: BTreeSet<u32> = BTreeSet::new();
    let mut hits: Vec<(Site, F)> = Vec::new();
    for mv in &plan.moves {
        let src = geo.index_of(mv.source);
        if !occupied.get(src) {
            return Err(SimError::EmptySource(mv.source));
        }
        out.n_attempted += 1;
        let succeeded = chance(rng, mv.success_probability(success));

        let mut near: BTreeMap<Site, F> = BTreeMap::new();
        for stroke in &mv.strokes {
            hits.clear();
            index.sites_within(geo, stroke.from, stroke.to, collateral.disturbance_radius, &mut hits);
            for &(s, d) in &hits {
                let slot = near.entry(s).or_insert(d);
                if d < *slot {
                    *slot = d;
                }
            }
        }
        for (site, dist) in near {
            if site == mv.source || site == mv.destination {
                continue;
            }
            let p = if dist < collateral.d_min {
                collateral.loss_probability_inside
            } else {
                collateral.disturbance_probability
            };
            if chance(rng, p) {
                let vi = geo.index_of(site) as u32;
                occupied.clear(vi as usize);
                index.remove(site);
                out.n_collateral += 1;
                if placed.remove(&vi) {
                    out.n_collateral_arrivals += 1;
                }
            }
        }

        occupied.clear(src);
        let dst = geo.index_of(mv.destination) as u32;
        out.destinations.push(dst);
        if succeeded {
            occupied.set(dst as usize);
            index.insert(geo, mv.destination);
            placed.insert(dst);
            out.n_succeeded += 1;
        }
    }
    out.destinations.sort_unstable();
    out.arrivals = placed.into_iter().collect();
    Ok(out)
}

fn run_single<F: Scalar>(config: &SimulationConfig<F>, replica: u32) -> Result<RunTrace<F>, SimError> {
    config.validate()?;
    let geo = &config.geometry;
    let params = &config.loss_parameters;
    let mut pattern_mask = BitGrid::new(geo.n_sites());
    for &s in config.target_pattern.sites() {
        pattern_mask.set(geo.index_of(s));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(replica as u64);

    let mut occupied = BitGrid::new(geo.n_sites());
    let mut records: Vec<CycleRecord> = Vec::with_capacity(config.n_cycles as usize);

    for cycle in 0..config.n_cycles {
        let boundary = if cycle > 0 {
            apply_shelving_stage(&mut rng, geo, params, &mut occupied)
        } else {
            ShelvingOutcome::default()
        };

        let load = load_reservoir(&mut rng, geo, params, &mut occupied);

        let shot1 = capture_image(&mut rng, geo, params, &mut occupied, ImageTag::One);
        let mut n_imaging_losses = count_zone(geo, &shot1.lost_sites, Zone::Storage);

        let resort_active = config
            .resort_disable_after
            .map_or(true, |stop| cycle < stop);
        let plan = if resort_active {
            let loaded: Vec<Site> = geo
                .tweezer_sites()
                .iter()
                .copied()
                .filter(|s| occupied.get(geo.index_of(*s)))
                .collect();
            let stored: Vec<Site> = occupied
                .iter_ones()
                .map(|i| geo.site_from_index(i))
                .filter(|s| geo.zone(*s) == Zone::Storage)
                .collect();
            plan_cycle(
                geo,
                &loaded,
                &stored,
                &config.target_pattern,
                config.collateral_model.d_min,
                config.exact_assignment_limit,
            )?
        } else {
            MovePlan::empty(config.collateral_model.d_min)
        };

        let exec = execute_plan(
            &mut rng,
            geo,
            &plan,
            &mut occupied,
            &config.move_success_model,
            &config.collateral_model,
        )?;

        let shot2 = capture_image(&mut rng, geo, params, &mut occupied, ImageTag::Two);
        let mut n_imaging_losses_arrivals = 0;
        for &i in &shot2.lost_sites {
            let site = geo.site_from_index(i as usize);
            if geo.zone(site) != Zone::Storage {
                continue;
            }
            if exec.arrivals.binary_search(&i).is_ok() {
                n_imaging_losses_arrivals += 1;
            } else {
                n_imaging_losses += 1;
            }
        }

        let stored_count_after = shot2.image.count_masked(&pattern_mask);
        let true_stored_after = geo
            .storage_zone()
            .iter()
            .filter(|s| occupied.get(geo.index_of(**s)))
            .count() as u32;

        records.push(CycleRecord {
            cycle_index: cycle,
            image1: shot1.image,
            image2: shot2.image,
            n_loaded: load.n_loaded,
            n_moves_attempted: exec.n_attempted,
            n_moves_succeeded: exec.n_succeeded,
            n_collateral_losses: exec.n_collateral - exec.n_collateral_arrivals,
            n_collateral_losses_arrivals: exec.n_collateral_arrivals,
            n_shelving_losses: boundary.n_shelving_losses,
            n_vacuum_losses: boundary.n_vacuum_losses,
            n_imaging_losses,
            n_imaging_losses_arrivals,
            n_background_gains: load.n_storage_gains,
            stored_count_after,
            true_stored_after,
            move_destinations: exec.destinations,
        });
    }

    Ok(RunTrace {
        config: config.clone(),
        replica,
        records,
    })
}

fn count_zone<F: Scalar>(geo: &LatticeGeometry<F>, sites: &[u32], zone: Zone) -> u32 {
    sites
        .iter()
        .filter(|&&i| geo.zone(geo.site_from_index(i as usize)) == zone)
        .count() as u32
}

/// One full simulation at the configured seed (replica stream 0).
pub fn run<F: Scalar>(config: &SimulationConfig<F>) -> Result<RunTrace<F>, SimError> {
    run_single(config, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<F> {
    pub traces: Vec<RunTrace<F>>,
    /// Per-cycle mean of the observed stored count across replicas.
    pub mean_stored: Vec<F>,
    /// Per-cycle sample standard deviation (n-1); zero for one replica.
    pub std_stored: Vec<F>,
}

/// Independent replicas from one seed: replica r consumes stream r of the
/// generator, so the ensemble is reproducible and embarrassingly parallel
/// in principle while staying deterministic in this sequential form.
pub fn run_replicas<F: Scalar>(config: &SimulationConfig<F>) -> Result<Ensemble<F>, SimError> {
    config.validate()?;
    let mut traces = Vec::with_capacity(config.n_replicas as usize);
    for replica in 0..config.n_replicas {
        traces.push(run_single(config, replica)?);
    }
    let n_cycles = config.n_cycles as usize;
    let n = traces.len();
    let nf = F::from_usize(n).expect("count");
    let mut mean_stored = Vec::with_capacity(n_cycles);
    let mut std_stored = Vec::with_capacity(n_cycles);
    for c in 0..n_cycles {
        let mut sum = F::zero();
        for t in &traces {
            sum += F::from_u32(t.records[c].stored_count_after).expect("count");
        }
        let mean = sum / nf;
        let mut ss = F::zero();
        for t in &traces {
            let d = F::from_u32(t.records[c].stored_count_after).expect("count") - mean;
            ss += d * d;
        }
        let std = if n > 1 {
            (ss / F::from_usize(n - 1).expect("count")).sqrt()
        } else {
            F::zero()
        };
        mean_stored.push(mean);
        std_stored.push(std);
    }
    Ok(Ensemble {
        traces,
        mean_stored,
        std_stored,
    })
}
