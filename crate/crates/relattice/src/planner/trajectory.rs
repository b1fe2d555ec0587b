//! Time parameterization of moves: depth ramps and per-stroke velocity
//! profiles sampled into explicit tweezer trajectories.
//!
//! Times are milliseconds, positions micrometers, speeds micrometers per
//! millisecond. Depth is expressed relative to the static lattice wells.

use crate::geometry::Point;
use crate::num::Scalar;
use crate::planner::{Move, MovePlan};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VelocityProfile {
    /// Squared-sine velocity ramps into a flat cruise; degenerates to a
    /// single squared-sine pulse when the stroke is too short to reach the
    /// peak velocity. Velocity is zero at every stroke corner.
    SmoothTrapezoid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicParams<F> {
    /// um/ms
    pub peak_velocity: F,
    /// Duration of each depth ramp and of each velocity ramp, ms.
    pub ramp_duration_ms: F,
    /// Tweezer depth relative to the lattice during motion.
    pub depth_ratio: F,
    pub profile: VelocityProfile,
}

impl<F: Scalar> Default for KinematicParams<F> {
    fn default() -> Self {
        KinematicParams {
            peak_velocity: F::of(54.0),
            ramp_duration_ms: F::of(0.4),
            depth_ratio: F::of(10.0),
            profile: VelocityProfile::SmoothTrapezoid,
        }
    }
}

impl<F: Scalar> KinematicParams<F> {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.peak_velocity > F::zero()) {
            return Err("peak_velocity must be positive");
        }
        if !(self.ramp_duration_ms > F::zero()) {
            return Err("ramp_duration_ms must be positive");
        }
        if self.depth_ratio < F::zero() {
            return Err("depth_ratio must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample<F> {
    pub t_ms: F,
    pub position: Point<F>,
    pub depth: F,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TweezerTrajectory<F> {
    pub samples: Vec<TrajectorySample<F>>,
    pub total_duration_ms: F,
}

/// Duration of one stroke of length `d` under the profile: a single pulse
/// when the peak is unreachable, otherwise ramp + cruise + ramp.
fn stroke_duration<F: Scalar>(d: F, kin: &KinematicParams<F>) -> F {
    if d <= F::zero() {
        return F::zero();
    }
    let v = kin.peak_velocity;
    let tr = kin.ramp_duration_ms;
    if d <= v * tr {
        F::of(2.0) * (d * tr / v).sqrt()
    } else {
        tr + d / v
    }
}

/// Arc length covered after local time `t` within a stroke of length `d`
/// and total duration `big_t`. Piecewise analytic, exact at the ends.
fn stroke_position<F: Scalar>(d: F, big_t: F, t: F, kin: &KinematicParams<F>) -> F {
    let v = kin.peak_velocity;
    let tr = kin.ramp_duration_ms;
    let pi = F::of(std::f64::consts::PI);
    let two = F::of(2.0);
    if d <= v * tr {
        // Single squared-sine pulse, peak speed 2 d / T.
        let vm = two * d / big_t;
        vm * (t / two - big_t / (F::of(4.0) * pi) * (two * pi * t / big_t).sin())
    } else if t <= tr {
        v * (t / two - tr / (two * pi) * (pi * t / tr).sin())
    } else if t <= big_t - tr {
        v * tr / two + v * (t - tr)
    } else {
        let remaining = big_t - t;
        d - v * (remaining / two - tr / (two * pi) * (pi * remaining / tr).sin())
    }
}

/// Expands a move into an explicit trajectory: depth ramp-up at the source,
/// each stroke under the velocity profile with full stops at corners, depth
/// ramp-down at the destination. Total duration is the exact sum of the
/// phase durations.
pub fn synthesize_trajectory<F: Scalar>(
    mv: &Move<F>,
    kin: &KinematicParams<F>,
) -> TweezerTrajectory<F> {
    let dt_target = F::of(0.02);
    let tr = kin.ramp_duration_ms;
    let ratio = kin.depth_ratio;
    let start = mv
        .strokes
        .first()
        .map(|s| s.from)
        .unwrap_or_else(|| Point::new(F::zero(), F::zero()));

    let mut samples = vec![TrajectorySample {
        t_ms: F::zero(),
        position: start,
        depth: F::zero(),
    }];
    let mut t0 = F::zero();

    // Appends one phase, assuming the previous sample already sits at the
    // phase's initial state. `f` maps local time to (position, depth).
    let append_phase =
        |samples: &mut Vec<TrajectorySample<F>>, t0: &mut F, duration: F, f: &dyn Fn(F) -> (Point<F>, F)| {
            if duration <= F::zero() {
                return;
            }
            let steps = (duration / dt_target)
                .ceil()
                .to_f64_lossy()
                .max(1.0) as usize;
            for k in 1..=steps {
                // The final sample sits exactly on the phase boundary.
                let local = if k == steps {
                    duration
                } else {
                    duration * F::from_usize(k).expect("small count")
                        / F::from_usize(steps).expect("small count")
                };
                let (position, depth) = f(local);
                samples.push(TrajectorySample {
                    t_ms: *t0 + local,
                    position,
                    depth,
                });
            }
            *t0 += duration;
        };

    append_phase(&mut samples, &mut t0, tr, &|local| {
        (start, ratio * local / tr)
    });

    for stroke in &mv.strokes {
        let d = stroke.length();
        let duration = stroke_duration(d, kin);
        if duration <= F::zero() {
            continue;
        }
        let from = stroke.from;
        let to = stroke.to;
        let dir = Point::new((to.x - from.x) / d, (to.y - from.y) / d);
        append_phase(&mut samples, &mut t0, duration, &|local| {
            if local >= duration {
                (to, ratio)
            } else {
                let s = stroke_position(d, duration, local, kin);
                (Point::new(from.x + dir.x * s, from.y + dir.y * s), ratio)
            }
        });
    }

    let end = mv.strokes.last().map(|s| s.to).unwrap_or(start);
    append_phase(&mut samples, &mut t0, tr, &|local| {
        (end, ratio * (F::one() - local / tr))
    });

    TweezerTrajectory {
        samples,
        total_duration_ms: t0,
    }
}

/// Wall time of the whole plan under strictly sequential execution.
pub fn plan_duration<F: Scalar>(plan: &MovePlan<F>, kin: &KinematicParams<F>) -> F {
    plan.moves
        .iter()
        .map(|mv| synthesize_trajectory(mv, kin).total_duration_ms)
        .fold(F::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{LatticeGeometry, Site};
    use crate::loss::TransportMode;
    use crate::planner::{route_move_cleared, Stroke};
    use approx::assert_relative_eq;

    fn demo() -> LatticeGeometry<f64> {
        LatticeGeometry::row_banded(
            0.579,
            1.187,
            224,
            110,
            0..88,
            90..110,
            20..37,
            91..110,
            114,
        )
        .unwrap()
    }

    fn stationary_move(at: Point<f64>) -> Move<f64> {
        Move {
            source: Site { row: 0, col: 0 },
            destination: Site { row: 0, col: 0 },
            strokes: vec![Stroke {
                from: at,
                to: at,
                mode: TransportMode::Through,
            }],
            order_rank: 0,
        }
    }

    #[test]
    fn zero_length_move_is_exactly_two_ramps() {
        let kin = KinematicParams::<f64>::default();
        let traj = synthesize_trajectory(&stationary_move(Point::new(3.0, 4.0)), &kin);
        assert_eq!(traj.total_duration_ms, 0.8);
        assert_eq!(traj.samples.first().unwrap().depth, 0.0);
        assert_eq!(traj.samples.last().unwrap().depth, 0.0);
        for s in &traj.samples {
            assert_eq!(s.position, Point::new(3.0, 4.0));
        }
    }

    #[test]
    fn long_stroke_takes_at_least_the_ballistic_time() {
        let kin = KinematicParams::<f64>::default();
        let mv = Move {
            source: Site { row: 0, col: 0 },
            destination: Site { row: 0, col: 1 },
            strokes: vec![Stroke {
                from: Point::new(0.0, 0.5),
                to: Point::new(54.0, 0.5),
                mode: TransportMode::Between,
            }],
            order_rank: 0,
        };
        let traj = synthesize_trajectory(&mv, &kin);
        let motion = traj.total_duration_ms - 0.8;
        assert!(motion >= 54.0 / 54.0);
        assert_relative_eq!(motion, 0.4 + 1.0, max_relative = 1e-12);
    }

    #[test]
    fn sampled_speed_respects_the_cap_and_endpoints_are_exact() {
        let geo = demo();
        let kin = KinematicParams::<f64>::default();
        let mv = route_move_cleared(
            &geo,
            Site { row: 95, col: 25 },
            Site { row: 12, col: 40 },
        )
        .unwrap();
        let traj = synthesize_trajectory(&mv, &kin);
        assert_eq!(traj.samples[0].position, geo.pos(mv.source));
        assert_eq!(
            traj.samples.last().unwrap().position,
            geo.pos(mv.destination)
        );
        assert_eq!(traj.samples.last().unwrap().t_ms, traj.total_duration_ms);
        for w in traj.samples.windows(2) {
            let dt = w[1].t_ms - w[0].t_ms;
            assert!(dt > 0.0, "time must advance");
            let speed = w[0].position.distance(w[1].position) / dt;
            assert!(speed <= 54.0 + 1e-9, "speed {speed}");
        }
    }

    #[test]
    fn depth_holds_during_motion_and_ramps_linearly() {
        let kin = KinematicParams::<f64>::default();
        let mv = Move {
            source: Site { row: 0, col: 0 },
            destination: Site { row: 0, col: 1 },
            strokes: vec![Stroke {
                from: Point::new(0.0, 0.0),
                to: Point::new(10.0, 0.0),
                mode: TransportMode::Between,
            }],
            order_rank: 0,
        };
        let traj = synthesize_trajectory(&mv, &kin);
        // Ramp midpoint.
        let mid = traj
            .samples
            .iter()
            .find(|s| (s.t_ms - 0.2).abs() < 1e-9)
            .expect("sample at half ramp");
        assert_relative_eq!(mid.depth, 5.0, max_relative = 1e-9);
        // Every sample strictly inside the motion window holds full depth.
        let t_down = traj.total_duration_ms - 0.4;
        for s in &traj.samples {
            if s.t_ms > 0.4 + 1e-12 && s.t_ms < t_down - 1e-12 {
                assert_eq!(s.depth, 10.0);
            }
        }
    }

    #[test]
    fn plan_duration_sums_sequentially() {
        let geo = demo();
        let kin = KinematicParams::<f64>::default();
        let mut plan = MovePlan::empty(1.0);
        assert_eq!(plan_duration(&plan, &kin), 0.0);
        let a = route_move_cleared(&geo, Site { row: 95, col: 25 }, Site { row: 12, col: 40 })
            .unwrap();
        let b = route_move_cleared(&geo, Site { row: 93, col: 30 }, Site { row: 15, col: 80 })
            .unwrap();
        let sum = synthesize_trajectory(&a, &kin).total_duration_ms
            + synthesize_trajectory(&b, &kin).total_duration_ms;
        plan.moves = vec![a, b];
        assert_relative_eq!(plan_duration(&plan, &kin), sum, max_relative = 1e-12);
    }
}
