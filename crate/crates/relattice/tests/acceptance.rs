//! Release gate: ten numbered end-to-end checks with pinned tolerances.
//! Each test prints exactly one `ACCEPTANCE n (title): PASS|FAIL` line and
//! then asserts, so a scan of the test output reads as a checklist.

mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relattice::analysis::{fit_decay, gain_fraction, pearson, survival_fraction};
use relattice::geometry::{LatticeGeometry, Site, TargetPattern};
use relattice::loss::{amplification_factor, iterate_recurrence, steady_state, IonizationModel};
use relattice::planner::{
    assign_targets, plan_cycle, route_move_cleared, synthesize_trajectory, validate_plan,
    KinematicParams, Move,
};
use relattice::sim::{run_replicas, BitGrid, ImageTag, OccupancyMatrix, SimulationConfig};

fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n} ({title}): {tag} [{detail}]");
    assert!(pass, "ACCEPTANCE {n} ({title}) failed: {detail}");
}

fn default_geometry() -> LatticeGeometry<f64> {
    LatticeGeometry::row_banded(0.579, 1.187, 224, 110, 0..88, 90..110, 20..37, 91..110, 114)
        .unwrap()
}

fn default_pattern() -> TargetPattern {
    TargetPattern::grid(Site { row: 9, col: 6 }, 26, 3, 54, 2)
}

fn tuples_agree(lib: &[(usize, Site, f64)], oracle: &[(usize, Site, f64)]) -> bool {
    lib.len() == oracle.len()
        && lib
            .iter()
            .zip(oracle)
            .all(|(a, b)| a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() < 1e-9)
}

#[test]
fn criterion_01_amplification_and_steady_state() {
    let beta: f64 = amplification_factor(0.02, 0.008).unwrap();
    let n_inf: f64 = steady_state(100.0, 0.02, 0.008).unwrap();
    let pass = beta > 100.0
        && (beta - 122.5).abs() <= 1e-12 * 122.5
        && (n_inf - 12250.0).abs() <= 1e-12 * 12250.0;
    verdict(
        1,
        "amplification factor and steady state",
        pass,
        &format!("beta {beta}, steady state {n_inf}"),
    );
}

#[test]
fn criterion_02_recurrence_matches_the_closed_form() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n0 = rng.random_range(0.0..5000.0);
        let nl = rng.random_range(0.0..500.0);
        let ar = rng.random_range(0.0..1.0);
        let ac = rng.random_range(0.01..1.0);
        let n = rng.random_range(1..=150usize);
        let series: Vec<f64> = iterate_recurrence(n0, nl, ar, ac, n);
        assert_eq!(series.len(), n + 1);
        for (i, &v) in series.iter().enumerate() {
            let want = closed_form(n0, nl, ar, ac, i as u32);
            worst = worst.max((v - want).abs() / want.abs().max(1.0));
        }
    }
    let elapsed = t0.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(1);
    verdict(
        2,
        "recurrence against the closed form",
        pass,
        &format!("1000 parameter sets, worst relative error {worst:.2e}, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_03_ensemble_plateau_and_emergent_prediction() {
    let t0 = Instant::now();
    let mut config = SimulationConfig::<f64>::default();
    config.n_replicas = 50;
    config.rng_seed = 0;
    let ens = run_replicas(&config).unwrap();

    let t = config.n_cycles as usize;
    let q = t.div_ceil(4).max(1);
    let w0 = t - q;

    // Per-replica plateau of the observed stored count over the final
    // quarter; the scatter of these means is the sigma of the comparison.
    let plateaus: Vec<f64> = ens
        .traces
        .iter()
        .map(|tr| {
            tr.records[w0..]
                .iter()
                .map(|r| r.stored_count_after as f64)
                .sum::<f64>()
                / q as f64
        })
        .collect();
    let r = plateaus.len() as f64;
    let plateau = plateaus.iter().sum::<f64>() / r;
    let sigma = (plateaus
        .iter()
        .map(|p| (p - plateau) * (p - plateau))
        .sum::<f64>()
        / (r - 1.0))
        .sqrt();

    let loaded = ens
        .traces
        .iter()
        .flat_map(|tr| &tr.records[w0..])
        .map(|rec| rec.n_loaded as f64)
        .sum::<f64>()
        / (r * q as f64);
    let ratio = plateau / loaded;

    // Emergent averages pooled over every cycle past the first of every
    // replica: arrivals killed in their own cycle count against resorting
    // and background gains credit it, while the cycle loss is old-atom
    // losses over the population at risk (previous survivors plus gains).
    let mut att = 0.0f64;
    let mut arrived = 0.0f64;
    let mut old_losses = 0.0f64;
    let mut at_risk = 0.0f64;
    for tr in &ens.traces {
        for j in 1..t {
            let rec = &tr.records[j];
            att += rec.n_moves_attempted as f64;
            arrived += rec.n_moves_succeeded as f64 + rec.n_background_gains as f64
                - rec.n_collateral_losses_arrivals as f64
                - rec.n_imaging_losses_arrivals as f64;
            old_losses += (rec.n_shelving_losses
                + rec.n_vacuum_losses
                + rec.n_imaging_losses
                + rec.n_collateral_losses) as f64;
            at_risk += tr.records[j - 1].true_stored_after as f64
                + rec.n_background_gains as f64;
        }
    }
    let nl_star = att / (r * (t - 1) as f64);
    let ar_star = 1.0 - arrived / att;
    let ac_star = old_losses / at_risk;
    let predicted = (1.0 - ar_star) * nl_star / ac_star;
    let gap = (plateau - predicted).abs();

    let elapsed = t0.elapsed();
    let pass = plateau > 1000.0
        && (7.0..=10.0).contains(&ratio)
        && gap <= 3.0 * sigma
        && elapsed < Duration::from_secs(120);
    verdict(
        3,
        "ensemble plateau and emergent prediction",
        pass,
        &format!(
            "plateau {plateau:.1} (sigma {sigma:.1}), reload {loaded:.1}, ratio {ratio:.2}, \
             predicted {predicted:.1} from N_L* {nl_star:.2} a_r* {ar_star:.4} a_c* {ac_star:.4}, \
             gap {gap:.1} = {:.2} sigma, {elapsed:.1?}",
            gap / sigma
        ),
    );
}

#[test]
fn criterion_04_free_decay_recovers_the_stored_survival() {
    let t0 = Instant::now();
    let mut config = SimulationConfig::<f64>::default();
    config.n_replicas = 20;
    config.n_cycles = 100;
    config.resort_disable_after = Some(80);
    let ens = run_replicas(&config).unwrap();

    let want: f64 = config.loss_parameters.per_cycle_stored_survival();
    let mut worst = 0.0f64;
    for tr in &ens.traces {
        let counts: Vec<f64> = tr.stored_counts().iter().map(|&c| c as f64).collect();
        let fit = fit_decay(&counts, 81..100).unwrap();
        worst = worst.max((fit.survival - want).abs() / want);
    }
    let elapsed = t0.elapsed();
    let pass = worst <= 0.10 && elapsed < Duration::from_secs(60);
    verdict(
        4,
        "free decay recovers the stored survival",
        pass,
        &format!("configured {want:.5}, worst relative deviation {worst:.4} over 20 runs, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_05_plans_are_clean_and_the_validator_matches_the_replay() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad: Option<String> = None;
    for k in 0..200 {
        let inst = random_instance(&mut rng, 60, 40, 150);
        let plan = plan_cycle(&inst.geo, &inst.loaded, &inst.stored, &inst.pattern, 1.0, 10_000)
            .expect("instances are routable by construction");
        if !plan.violations.is_empty() {
            bad = Some(format!("instance {k}: planned violations {:?}", plan.violations));
            break;
        }
        let oracle = dense_violations(&inst.geo, &plan.moves, 1.0, &inst.stored);
        if !oracle.is_empty() {
            bad = Some(format!("instance {k}: replay disagrees, found {oracle:?}"));
            break;
        }

        // Agreement must also hold when the start occupancy makes the same
        // moves collide: drop strays onto the storage zone and revalidate.
        let storage = inst.geo.storage_zone();
        let mut crowded = inst.stored.clone();
        for _ in 0..rng.random_range(1..=8usize) {
            crowded.push(storage[rng.random_range(0..storage.len())]);
        }
        crowded.sort_unstable();
        crowded.dedup();
        let lib = violation_tuples(&validate_plan(&inst.geo, &plan.moves, 1.0, &crowded));
        let oracle = dense_violations(&inst.geo, &plan.moves, 1.0, &crowded);
        if !tuples_agree(&lib, &oracle) {
            bad = Some(format!(
                "instance {k}: validator {lib:?} vs replay {oracle:?}"
            ));
            break;
        }
    }
    let elapsed = t0.elapsed();
    let pass = bad.is_none() && elapsed < Duration::from_secs(60);
    verdict(
        5,
        "plans are clean and the validator matches the replay",
        pass,
        &format!(
            "200 instances, {elapsed:.1?}{}",
            bad.map(|b| format!(", {b}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_06_small_assignments_are_optimal() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let geo = default_geometry();
    let pattern = default_pattern();
    let mut bad: Option<String> = None;
    for k in 0..1000 {
        let mut loading = geo.loading_zone().to_vec();
        partial_shuffle(&mut rng, &mut loading);
        let mut vacancies = pattern.sites().to_vec();
        partial_shuffle(&mut rng, &mut vacancies);
        let loaded = &loading[..rng.random_range(1..=7usize)];
        let vacant = &vacancies[..rng.random_range(1..=7usize)];

        let pairs = assign_targets(&geo, loaded, vacant, 10_000);
        let cost = pairing_cost(&geo, &pairs);
        let best = exhaustive_min_cost(&geo, loaded, vacant);
        if (cost - best).abs() > 1e-9 {
            bad = Some(format!("instance {k}: cost {cost} vs optimum {best}"));
            break;
        }
    }
    let elapsed = t0.elapsed();
    let pass = bad.is_none() && elapsed < Duration::from_secs(30);
    verdict(
        6,
        "small assignments are optimal",
        pass,
        &format!(
            "1000 instances, {elapsed:.1?}{}",
            bad.map(|b| format!(", {b}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_07_trajectories_respect_the_speed_limit() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let geo = default_geometry();
    let pattern = default_pattern();
    let kin = KinematicParams::<f64>::default();
    let loading = geo.loading_zone();

    let mut bad: Option<String> = None;
    let mut top_speed = 0.0f64;
    'outer: for k in 0..500 {
        let src = loading[rng.random_range(0..loading.len())];
        let dst = pattern.sites()[rng.random_range(0..pattern.len())];
        let mv = route_move_cleared(&geo, src, dst).unwrap();
        let traj = synthesize_trajectory(&mv, &kin);

        for w in traj.samples.windows(2) {
            let dt = w[1].t_ms - w[0].t_ms;
            let dist = w[1].position.distance(w[0].position);
            if dt <= 0.0 {
                if dist > 1e-12 {
                    bad = Some(format!("move {k}: jump of {dist} um in zero time"));
                    break 'outer;
                }
                continue;
            }
            let v = dist / dt;
            top_speed = top_speed.max(v);
            if v > 54.0 * (1.0 + 1e-9) {
                bad = Some(format!("move {k}: sampled speed {v} um/ms"));
                break 'outer;
            }
        }
        let first = traj.samples.first().unwrap();
        let last = traj.samples.last().unwrap();
        if first.position.distance(geo.pos(src)) > 1e-9
            || last.position.distance(geo.pos(dst)) > 1e-9
        {
            bad = Some(format!("move {k}: endpoints off the paired sites"));
            break;
        }
    }

    // A zero-length move still pays both depth ramps, nothing else.
    let site = pattern.sites()[0];
    let hold = Move {
        source: site,
        destination: site,
        strokes: vec![],
        order_rank: 0,
    };
    let dwell = synthesize_trajectory(&hold, &kin);
    if dwell.total_duration_ms != 0.8 {
        bad = Some(format!(
            "zero-length move lasts {} ms, want exactly 0.8",
            dwell.total_duration_ms
        ));
    }

    let elapsed = t0.elapsed();
    let pass = bad.is_none() && elapsed < Duration::from_secs(10);
    verdict(
        7,
        "trajectories respect the speed limit",
        pass,
        &format!(
            "500 moves, top sampled speed {top_speed:.3} um/ms, zero-length duration {} ms, {elapsed:.1?}{}",
            dwell.total_duration_ms,
            bad.map(|b| format!(", {b}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_08_ionization_rates() {
    let model = IonizationModel::<f64>::default();
    let r1: f64 = model.rate(1.0).unwrap();
    let r03: f64 = model.rate(0.3).unwrap();
    let lifetime_ms = 1000.0 / r03;
    let dev = (lifetime_ms - 40.0).abs() / 40.0;
    let pass = r1 == 250.0 && dev <= 0.15;
    verdict(
        8,
        "ionization rates",
        pass,
        &format!(
            "rate(1 mK) {r1} /s, lifetime(0.3 mK) {lifetime_ms:.2} ms ({:.1}% from 40 ms)",
            dev * 100.0
        ),
    );
}

#[test]
fn criterion_09_analysis_against_oracles() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad: Option<String> = None;

    for k in 0..1000 {
        let n = rng.random_range(2..=64usize);
        let x: Vec<f64> = if k % 23 == 1 {
            vec![rng.random_range(-10.0..10.0); n]
        } else {
            (0..n).map(|_| rng.random_range(-100.0..100.0)).collect()
        };
        let y: Vec<f64> = if k % 17 == 0 {
            vec![3.25; n]
        } else {
            (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
        };
        let got: Option<f64> = pearson(&x, &y).unwrap();
        let want = pearson_direct(&x, &y);
        let ok = match (got, want) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        if !ok {
            bad = Some(format!("series {k}: pearson {got:?} vs direct {want:?}"));
            break;
        }
    }

    // Hand-counted fixture on a 6 x 4 grid, mask = row 0. First image fills
    // sites 0,1,2 in the mask (plus 8 outside it), the second keeps 1,2 and
    // adds 4: survival 2/3 of the three masked atoms, gain 1 of the three
    // masked empties.
    if bad.is_none() {
        let mut first = BitGrid::new(24);
        for i in [0usize, 1, 2, 8] {
            first.set(i);
        }
        let mut second = BitGrid::new(24);
        for i in [1usize, 2, 4] {
            second.set(i);
        }
        let mut mask = BitGrid::new(24);
        for i in 0..6 {
            mask.set(i);
        }
        let img1 = OccupancyMatrix::from_bits(6, 4, ImageTag::One, first).unwrap();
        let img2 = OccupancyMatrix::from_bits(6, 4, ImageTag::Two, second).unwrap();
        let s: Option<f64> = survival_fraction(&img1, &img2, &mask);
        let g: Option<f64> = gain_fraction(&img1, &img2, &mask);
        let ok = matches!(s, Some(v) if (v - 2.0 / 3.0).abs() < 1e-15)
            && matches!(g, Some(v) if (v - 1.0 / 3.0).abs() < 1e-15);
        if !ok {
            bad = Some(format!("fixture: survival {s:?} want 2/3, gain {g:?} want 1/3"));
        }
    }

    if bad.is_none() {
        for (n0, s) in [(1024.0f64, 0.5f64), (500.0, 0.9), (333.0, 0.77)] {
            let counts: Vec<f64> = (0..12).map(|i| n0 * s.powi(i)).collect();
            let fit = fit_decay(&counts, 0..12).unwrap();
            if (fit.survival - s).abs() > 1e-9
                || (fit.cycle_loss - (1.0 - s)).abs() > 1e-9
                || fit.residual_norm > 1e-9
            {
                bad = Some(format!(
                    "noise-free decay {n0} x {s}^i: survival {} residual {}",
                    fit.survival, fit.residual_norm
                ));
                break;
            }
        }
    }

    let elapsed = t0.elapsed();
    let pass = bad.is_none() && elapsed < Duration::from_secs(10);
    verdict(
        9,
        "analysis against oracles",
        pass,
        &format!(
            "1000 correlation series, counted fixture, noise-free decay, {elapsed:.1?}{}",
            bad.map(|b| format!(", {b}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_10_identical_runs_are_byte_identical() {
    let t0 = Instant::now();
    let base = std::env::temp_dir().join(format!(
        "relattice-acceptance-{}-determinism",
        std::process::id()
    ));
    let _ = fs::remove_dir_all(&base);
    let (a, b) = (base.join("a"), base.join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let cfg = base.join("run.toml");
    fs::write(&cfg, "[run]\nn_cycles = 40\n").unwrap();

    for out in [&a, &b] {
        let r = Command::new(env!("CARGO_BIN_EXE_relattice"))
            .args([
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                "11",
                "--replicas",
                "2",
                "--format",
                "grid",
                "--out",
                out.to_str().unwrap(),
                "simulate",
            ])
            .output()
            .expect("binary runs");
        assert_eq!(
            r.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }

    let mut bad: Option<String> = None;
    for name in [
        "trace-r0000.txt",
        "trace-r0001.txt",
        "ensemble.txt",
        "final-r0000.grid",
        "final-r0001.grid",
    ] {
        let left = fs::read(a.join(name)).unwrap();
        let right = fs::read(b.join(name)).unwrap();
        if left != right {
            bad = Some(format!("{name} differs between identical runs"));
            break;
        }
    }
    let elapsed = t0.elapsed();
    let pass = bad.is_none() && elapsed < Duration::from_secs(60);
    verdict(
        10,
        "identical runs are byte-identical",
        pass,
        &format!(
            "2 replicas x 40 cycles, 5 files compared, {elapsed:.1?}{}",
            bad.map(|b| format!(", {b}")).unwrap_or_default()
        ),
    );
}
