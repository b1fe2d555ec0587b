//! Per-cycle loss channels and the deterministic build-up model.
//!
//! Everything here is a pure function over immutable parameter records. The
//! simulator composes the same channels stochastically; the closed-form
//! operations in this module are what `predict` and the trace overlay use.
//!
//! Probabilities are dimensionless, times carry an `_s` suffix (seconds),
//! lengths are micrometers, trap depths for ionization are millikelvin.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("cycle loss must be positive for a steady state to exist")]
    NonPositiveCycleLoss,
    #[error("{name} must lie in [0, 1], got {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositiveValue { name: &'static str, value: f64 },
    #[error("trap depth must be non-negative, got {0}")]
    NegativeDepth(f64),
    #[error("decay length between sites must exceed the through-site one")]
    DecayLengthOrder,
    #[error("disturbance radius must not be smaller than d_min")]
    DisturbanceRadiusOrder,
    #[error("unknown transport mode '{0}', expected 'between' or 'through'")]
    UnknownTransportMode(String),
}

fn check_prob<F: Scalar>(name: &'static str, value: F) -> Result<(), LossError> {
    if value >= F::zero() && value <= F::one() {
        Ok(())
    } else {
        Err(LossError::ProbabilityOutOfRange {
            name,
            value: value.to_f64_lossy(),
        })
    }
}

fn check_positive<F: Scalar>(name: &'static str, value: F) -> Result<(), LossError> {
    if value > F::zero() {
        Ok(())
    } else {
        Err(LossError::NonPositiveValue {
            name,
            value: value.to_f64_lossy(),
        })
    }
}

/// Every per-cycle loss channel plus the deterministic model inputs.
///
/// The first three fields parameterize the closed-form recurrence; the rest
/// feed the stochastic channels, which the simulator composes explicitly and
/// from which an emergent cycle loss is measured rather than assumed.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParameters<F> {
    /// alpha_r of the deterministic model: probability a moved atom is lost
    /// in transport.
    pub resort_loss: F,
    /// alpha_c of the deterministic model: per-cycle loss of a stored atom.
    pub cycle_loss: F,
    /// N_L of the deterministic model: atoms fed into the register per cycle.
    pub atoms_loaded_per_cycle: F,
    /// Probability that a tweezer site comes up filled after loading.
    pub load_fraction: F,
    pub n_tweezers: u32,
    /// Loss of the shelve-unshelve round trip itself.
    pub shelving_roundtrip_infidelity: F,
    /// Lifetime of the shelved state, seconds.
    pub shelving_lifetime_s: F,
    /// Time spent shelved while the reservoir refills, seconds.
    pub hold_time_s: F,
    /// Residual loss of shelved atoms from light exposure during reloading.
    pub mot_extra_loss: F,
    pub vacuum_lifetime_s: F,
    pub cycle_time_s: F,
    /// Survival probability of a ground-state atom on a lattice-only site
    /// through the removal pulse.
    pub heating_extinction: F,
    /// Probability an image misreports a site (either polarity).
    pub detection_infidelity: F,
    /// Probability imaging physically ejects an atom.
    pub imaging_loss: F,
    /// Fill probability of non-tweezer lattice sites before the removal
    /// pulse runs.
    pub mot_background_fill: F,
    /// Chance a freshly arrived background atom ends up shelved and thus
    /// dodges the removal pulse entirely.
    pub accidental_shelving_prob: F,
}

impl<F: Scalar> Default for LossParameters<F> {
    fn default() -> Self {
        let roundtrip = F::of(0.03);
        let lifetime = F::of(13.0);
        let hold = F::of(0.115);
        // The stage survival is pinned at 0.94; light exposure during
        // reloading absorbs whatever the round trip and the hold leave over.
        let mot_extra =
            F::one() - F::of(0.94) / ((F::one() - roundtrip) * (-hold / lifetime).exp());
        LossParameters {
            resort_loss: F::of(0.05),
            cycle_loss: F::of(0.1),
            atoms_loaded_per_cycle: F::of(130.0),
            load_fraction: F::of(0.40),
            n_tweezers: 323,
            shelving_roundtrip_infidelity: roundtrip,
            shelving_lifetime_s: lifetime,
            hold_time_s: hold,
            mot_extra_loss: mot_extra,
            vacuum_lifetime_s: F::of(273.0),
            cycle_time_s: F::of(2.5),
            heating_extinction: F::of(5e-4),
            detection_infidelity: F::of(0.005),
            imaging_loss: F::of(0.005),
            mot_background_fill: F::of(0.40),
            accidental_shelving_prob: F::zero(),
        }
    }
}

impl<F: Scalar> LossParameters<F> {
    pub fn validate(&self) -> Result<(), LossError> {
        check_prob("resort_loss", self.resort_loss)?;
        check_prob("cycle_loss", self.cycle_loss)?;
        check_prob("load_fraction", self.load_fraction)?;
        check_prob(
            "shelving_roundtrip_infidelity",
            self.shelving_roundtrip_infidelity,
        )?;
        check_prob("mot_extra_loss", self.mot_extra_loss)?;
        check_prob("heating_extinction", self.heating_extinction)?;
        check_prob("detection_infidelity", self.detection_infidelity)?;
        check_prob("imaging_loss", self.imaging_loss)?;
        check_prob("mot_background_fill", self.mot_background_fill)?;
        check_prob("accidental_shelving_prob", self.accidental_shelving_prob)?;
        check_positive("shelving_lifetime_s", self.shelving_lifetime_s)?;
        check_positive("vacuum_lifetime_s", self.vacuum_lifetime_s)?;
        check_positive("cycle_time_s", self.cycle_time_s)?;
        if self.hold_time_s < F::zero() {
            return Err(LossError::NonPositiveValue {
                name: "hold_time_s",
                value: self.hold_time_s.to_f64_lossy(),
            });
        }
        if self.atoms_loaded_per_cycle < F::zero() {
            return Err(LossError::NonPositiveValue {
                name: "atoms_loaded_per_cycle",
                value: self.atoms_loaded_per_cycle.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Survival of a stored atom through shelving, the reloading hold and
    /// unshelving: the whole stage between one resort and the next load.
    pub fn shelving_stage_survival(&self) -> F {
        (F::one() - self.shelving_roundtrip_infidelity)
            * (-self.hold_time_s / self.shelving_lifetime_s).exp()
            * (F::one() - self.mot_extra_loss)
    }

    /// Survival of an undisturbed stored atom across one full cycle, channels
    /// composed exactly as the simulator applies them: shelving stage, vacuum
    /// exposure over the cycle, and two imaging passes.
    pub fn per_cycle_stored_survival(&self) -> F {
        let imaging = F::one() - self.imaging_loss;
        self.shelving_stage_survival()
            * vacuum_survival(self.cycle_time_s, self.vacuum_lifetime_s)
            * imaging
            * imaging
    }
}

/// Amplification factor beta: steady-state register size per atom loaded
/// each cycle.
pub fn amplification_factor<F: Scalar>(resort_loss: F, cycle_loss: F) -> Result<F, LossError> {
    check_prob("resort_loss", resort_loss)?;
    check_prob("cycle_loss", cycle_loss)?;
    if cycle_loss <= F::zero() {
        return Err(LossError::NonPositiveCycleLoss);
    }
    Ok((F::one() - resort_loss) / cycle_loss)
}

/// Fixed point of the build-up recurrence.
pub fn steady_state<F: Scalar>(
    atoms_loaded: F,
    resort_loss: F,
    cycle_loss: F,
) -> Result<F, LossError> {
    Ok(atoms_loaded * amplification_factor(resort_loss, cycle_loss)?)
}

/// N_0..N_n under N_{i+1} = (1 - cycle_loss) N_i + (1 - resort_loss) N_L.
pub fn iterate_recurrence<F: Scalar>(
    n0: F,
    atoms_loaded: F,
    resort_loss: F,
    cycle_loss: F,
    n_cycles: usize,
) -> Vec<F> {
    let mut out = Vec::with_capacity(n_cycles + 1);
    let mut n = n0;
    out.push(n);
    let keep = F::one() - cycle_loss;
    let fed = (F::one() - resort_loss) * atoms_loaded;
    for _ in 0..n_cycles {
        n = keep * n + fed;
        out.push(n);
    }
    out
}

/// Survival against background-gas collisions over `t` seconds.
pub fn vacuum_survival<F: Scalar>(t_s: F, vacuum_lifetime_s: F) -> F {
    debug_assert!(t_s >= F::zero() && vacuum_lifetime_s > F::zero());
    (-t_s / vacuum_lifetime_s).exp()
}

/// Loss rate of trap-light-driven ionization as a polynomial in trap depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IonizationModel<F> {
    /// s^-1 mK^-2
    pub quadratic_coefficient: F,
    /// s^-1 mK^-1
    pub linear_coefficient: F,
    /// s^-1
    pub constant_rate: F,
}

impl<F: Scalar> Default for IonizationModel<F> {
    fn default() -> Self {
        IonizationModel {
            quadratic_coefficient: F::of(250.0),
            linear_coefficient: F::zero(),
            constant_rate: F::zero(),
        }
    }
}

impl<F: Scalar> IonizationModel<F> {
    /// Loss rate in s^-1 at a trap depth given in mK.
    pub fn rate(&self, depth_mk: F) -> Result<F, LossError> {
        if depth_mk < F::zero() {
            return Err(LossError::NegativeDepth(depth_mk.to_f64_lossy()));
        }
        Ok(self.quadratic_coefficient * depth_mk * depth_mk
            + self.linear_coefficient * depth_mk
            + self.constant_rate)
    }
}

/// Whether a stroke runs along corridor midlines or across the wells.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum TransportMode {
    Between,
    Through,
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportMode::Between => "between",
            TransportMode::Through => "through",
        })
    }
}

impl FromStr for TransportMode {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, LossError> {
        match s {
            "between" => Ok(TransportMode::Between),
            "through" => Ok(TransportMode::Through),
            other => Err(LossError::UnknownTransportMode(other.to_string())),
        }
    }
}

/// Distance-dependent transport survival, one decay length per mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveSuccessModel<F> {
    pub p0: F,
    pub decay_length_between: F,
    pub decay_length_through: F,
}

impl<F: Scalar> Default for MoveSuccessModel<F> {
    fn default() -> Self {
        MoveSuccessModel {
            p0: F::of(0.99),
            decay_length_between: F::of(2000.0),
            decay_length_through: F::of(100.0),
        }
    }
}

impl<F: Scalar> MoveSuccessModel<F> {
    pub fn validate(&self) -> Result<(), LossError> {
        check_prob("p0", self.p0)?;
        check_positive("decay_length_between", self.decay_length_between)?;
        check_positive("decay_length_through", self.decay_length_through)?;
        if self.decay_length_between <= self.decay_length_through {
            return Err(LossError::DecayLengthOrder);
        }
        Ok(())
    }

    /// p0 * exp(-distance / decay length of the mode), clamped to [0, 1].
    pub fn success_prob(&self, distance: F, mode: TransportMode) -> F {
        debug_assert!(distance >= F::zero());
        let lambda = match mode {
            TransportMode::Between => self.decay_length_between,
            TransportMode::Through => self.decay_length_through,
        };
        (self.p0 * (-distance / lambda).exp())
            .min(F::one())
            .max(F::zero())
    }
}

/// Disturbance of bystander atoms by a passing tweezer.
///
/// Loss is certain for atoms the sweep approaches closer than `d_min`; in
/// the shell between `d_min` and `disturbance_radius` the perturbation of
/// the trapping site only sometimes ejects the atom. The shell is what
/// makes resorting traffic erode the stored array even when every move
/// honors the planning clearance: register columns sit 1.158 um apart, so
/// each insertion stroke passes its two row neighbors just outside d_min.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollateralModel<F> {
    /// Clearance below which a stored atom counts as disturbed, micrometers.
    pub d_min: F,
    /// Loss probability for a disturbed atom.
    pub loss_probability_inside: F,
    /// Outer edge of the partial-loss shell, micrometers. Must not be
    /// smaller than `d_min`; equal means no shell.
    pub disturbance_radius: F,
    /// Loss probability per passing move for atoms inside the shell.
    pub disturbance_probability: F,
}

impl<F: Scalar> Default for CollateralModel<F> {
    fn default() -> Self {
        CollateralModel {
            d_min: F::one(),
            loss_probability_inside: F::one(),
            disturbance_radius: F::from(1.2).unwrap(),
            disturbance_probability: F::from(0.10).unwrap(),
        }
    }
}

impl<F: Scalar> CollateralModel<F> {
    pub fn validate(&self) -> Result<(), LossError> {
        check_positive("d_min", self.d_min)?;
        check_prob("loss_probability_inside", self.loss_probability_inside)?;
        check_prob("disturbance_probability", self.disturbance_probability)?;
        if self.disturbance_radius < self.d_min {
            return Err(LossError::DisturbanceRadiusOrder);
        }
        Ok(())
    }
}
