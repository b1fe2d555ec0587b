//! On-disk run configuration: one TOML file with nested sections that
//! mirror the library's parameter records. Every field is pre-populated
//! with the reference defaults, so a config file only needs the keys it
//! overrides; unknown keys are rejected so a typo cannot silently fall
//! back to a default. The same serialized form is embedded verbatim in
//! trace files, which is what makes a recorded run re-runnable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, LatticeGeometry, Site, TargetPattern};
use crate::loss::{CollateralModel, LossParameters, MoveSuccessModel};
use crate::planner::{KinematicParams, VelocityProfile};
use crate::sim::{SimError, SimulationConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Lattice layout. Row ranges are half-open `[start, end)`; distances are
/// micrometers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub spacing_x: f64,
    pub spacing_y: f64,
    pub n_cols: u32,
    pub n_rows: u32,
    pub storage_rows: [u32; 2],
    pub loading_rows: [u32; 2],
    pub tweezer_cols: [u32; 2],
    pub tweezer_rows: [u32; 2],
    pub staging_col: u32,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            spacing_x: 0.579,
            spacing_y: 1.187,
            n_cols: 224,
            n_rows: 110,
            storage_rows: [0, 88],
            loading_rows: [90, 110],
            tweezer_cols: [20, 37],
            tweezer_rows: [91, 110],
            staging_col: 114,
        }
    }
}

/// Register of maintained sites: a strided grid anchored at an origin site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSection {
    pub origin_row: u32,
    pub origin_col: u32,
    pub n_rows: u32,
    pub row_stride: u32,
    pub n_cols: u32,
    pub col_stride: u32,
}

impl Default for PatternSection {
    fn default() -> Self {
        PatternSection {
            origin_row: 9,
            origin_col: 6,
            n_rows: 26,
            row_stride: 3,
            n_cols: 54,
            col_stride: 2,
        }
    }
}

/// All stochastic loss and loading parameters. Times are seconds,
/// probabilities dimensionless.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub resort_loss: f64,
    pub cycle_loss: f64,
    pub atoms_loaded_per_cycle: f64,
    pub load_fraction: f64,
    pub n_tweezers: u32,
    pub shelving_roundtrip_infidelity: f64,
    pub shelving_lifetime_s: f64,
    pub hold_time_s: f64,
    pub mot_extra_loss: f64,
    pub vacuum_lifetime_s: f64,
    pub cycle_time_s: f64,
    pub heating_extinction: f64,
    pub detection_infidelity: f64,
    pub imaging_loss: f64,
    pub mot_background_fill: f64,
    pub accidental_shelving_prob: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let p = LossParameters::<f64>::default();
        LossSection {
            resort_loss: p.resort_loss,
            cycle_loss: p.cycle_loss,
            atoms_loaded_per_cycle: p.atoms_loaded_per_cycle,
            load_fraction: p.load_fraction,
            n_tweezers: p.n_tweezers,
            shelving_roundtrip_infidelity: p.shelving_roundtrip_infidelity,
            shelving_lifetime_s: p.shelving_lifetime_s,
            hold_time_s: p.hold_time_s,
            mot_extra_loss: p.mot_extra_loss,
            vacuum_lifetime_s: p.vacuum_lifetime_s,
            cycle_time_s: p.cycle_time_s,
            heating_extinction: p.heating_extinction,
            detection_infidelity: p.detection_infidelity,
            imaging_loss: p.imaging_loss,
            mot_background_fill: p.mot_background_fill,
            accidental_shelving_prob: p.accidental_shelving_prob,
        }
    }
}

/// Transport success: `p0 * exp(-length / decay_length)` per stroke, with
/// separate decay lengths for corridor strokes and row-crossing strokes.
/// Lengths are micrometers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSection {
    pub p0: f64,
    pub decay_length_between: f64,
    pub decay_length_through: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        let m = MoveSuccessModel::<f64>::default();
        TransportSection {
            p0: m.p0,
            decay_length_between: m.decay_length_between,
            decay_length_through: m.decay_length_through,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollateralSection {
    /// Micrometers.
    pub d_min: f64,
    pub loss_probability_inside: f64,
    /// Micrometers.
    pub disturbance_radius: f64,
    pub disturbance_probability: f64,
}

impl Default for CollateralSection {
    fn default() -> Self {
        let c = CollateralModel::<f64>::default();
        CollateralSection {
            d_min: c.d_min,
            loss_probability_inside: c.loss_probability_inside,
            disturbance_radius: c.disturbance_radius,
            disturbance_probability: c.disturbance_probability,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    SmoothTrapezoid,
}

/// Tweezer motion limits: velocity in um/ms, ramp duration in ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsSection {
    pub peak_velocity: f64,
    pub ramp_duration_ms: f64,
    pub depth_ratio: f64,
    pub profile: ProfileName,
}

impl Default for KinematicsSection {
    fn default() -> Self {
        let k = KinematicParams::<f64>::default();
        KinematicsSection {
            peak_velocity: k.peak_velocity,
            ramp_duration_ms: k.ramp_duration_ms,
            depth_ratio: k.depth_ratio,
            profile: ProfileName::SmoothTrapezoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_cycles: u32,
    /// Cycle index from which planning is skipped; absent keeps resorting on.
    pub resort_disable_after: Option<u32>,
    pub rng_seed: u64,
    pub n_replicas: u32,
    pub exact_assignment_limit: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let s = SimulationConfig::<f64>::default();
        RunSection {
            n_cycles: s.n_cycles,
            resort_disable_after: s.resort_disable_after,
            rng_seed: s.rng_seed,
            n_replicas: s.n_replicas,
            exact_assignment_limit: s.exact_assignment_limit,
        }
    }
}

/// The whole configuration file. Sections map one-to-one onto the library
/// parameter records; [`FileConfig::to_simulation_config`] performs the
/// conversion and full validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub geometry: GeometrySection,
    pub pattern: PatternSection,
    pub losses: LossSection,
    pub transport: TransportSection,
    pub collateral: CollateralSection,
    pub kinematics: KinematicsSection,
    pub run: RunSection,
}

impl FileConfig {
    pub fn from_toml_str(text: &str) -> Result<FileConfig, toml::de::Error> {
        toml::from_str(text)
    }

    /// Canonical serialized form; this exact string is echoed into trace
    /// files so recorded runs stay re-runnable byte for byte.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config sections serialize")
    }

    pub fn to_simulation_config(&self) -> Result<SimulationConfig<f64>, ConfigError> {
        let g = &self.geometry;
        let geometry = LatticeGeometry::row_banded(
            g.spacing_x,
            g.spacing_y,
            g.n_cols,
            g.n_rows,
            g.storage_rows[0]..g.storage_rows[1],
            g.loading_rows[0]..g.loading_rows[1],
            g.tweezer_cols[0]..g.tweezer_cols[1],
            g.tweezer_rows[0]..g.tweezer_rows[1],
            g.staging_col,
        )?;
        let p = &self.pattern;
        let target_pattern = TargetPattern::grid(
            Site {
                row: p.origin_row,
                col: p.origin_col,
            },
            p.n_rows,
            p.row_stride,
            p.n_cols,
            p.col_stride,
        );
        let l = &self.losses;
        let loss_parameters = LossParameters {
            resort_loss: l.resort_loss,
            cycle_loss: l.cycle_loss,
            atoms_loaded_per_cycle: l.atoms_loaded_per_cycle,
            load_fraction: l.load_fraction,
            n_tweezers: l.n_tweezers,
            shelving_roundtrip_infidelity: l.shelving_roundtrip_infidelity,
            shelving_lifetime_s: l.shelving_lifetime_s,
            hold_time_s: l.hold_time_s,
            mot_extra_loss: l.mot_extra_loss,
            vacuum_lifetime_s: l.vacuum_lifetime_s,
            cycle_time_s: l.cycle_time_s,
            heating_extinction: l.heating_extinction,
            detection_infidelity: l.detection_infidelity,
            imaging_loss: l.imaging_loss,
            mot_background_fill: l.mot_background_fill,
            accidental_shelving_prob: l.accidental_shelving_prob,
        };
        let t = &self.transport;
        let move_success_model = MoveSuccessModel {
            p0: t.p0,
            decay_length_between: t.decay_length_between,
            decay_length_through: t.decay_length_through,
        };
        let c = &self.collateral;
        let collateral_model = CollateralModel {
            d_min: c.d_min,
            loss_probability_inside: c.loss_probability_inside,
            disturbance_radius: c.disturbance_radius,
            disturbance_probability: c.disturbance_probability,
        };
        let k = &self.kinematics;
        let kinematics = KinematicParams {
            peak_velocity: k.peak_velocity,
            ramp_duration_ms: k.ramp_duration_ms,
            depth_ratio: k.depth_ratio,
            profile: match k.profile {
                ProfileName::SmoothTrapezoid => VelocityProfile::SmoothTrapezoid,
            },
        };
        let r = &self.run;
        let config = SimulationConfig {
            geometry,
            target_pattern,
            loss_parameters,
            move_success_model,
            collateral_model,
            kinematics,
            n_cycles: r.n_cycles,
            resort_disable_after: r.resort_disable_after,
            rng_seed: r.rng_seed,
            n_replicas: r.n_replicas,
            exact_assignment_limit: r.exact_assignment_limit,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_library_defaults_exactly() {
        let from_file = FileConfig::default().to_simulation_config().unwrap();
        assert_eq!(from_file, SimulationConfig::<f64>::default());
    }

    #[test]
    fn empty_toml_is_the_default_config() {
        assert_eq!(FileConfig::from_toml_str("").unwrap(), FileConfig::default());
    }

    #[test]
    fn serialized_defaults_round_trip() {
        let config = FileConfig::default();
        let text = config.to_toml_string();
        assert_eq!(FileConfig::from_toml_str(&text).unwrap(), config);
    }

    #[test]
    fn partial_sections_override_only_their_keys() {
        let text = "[losses]\nload_fraction = 0.25\n\n[run]\nn_cycles = 7\n";
        let config = FileConfig::from_toml_str(text).unwrap();
        assert_eq!(config.losses.load_fraction, 0.25);
        assert_eq!(config.run.n_cycles, 7);
        // Everything else keeps its default.
        assert_eq!(config.losses.n_tweezers, 323);
        assert_eq!(config.geometry, GeometrySection::default());
        assert_eq!(config.run.rng_seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::from_toml_str("[losses]\nload_fracton = 0.25\n").is_err());
        assert!(FileConfig::from_toml_str("[lossess]\nload_fraction = 0.25\n").is_err());
        assert!(FileConfig::from_toml_str("verbosity = 3\n").is_err());
    }

    #[test]
    fn invalid_values_fail_conversion() {
        let mut config = FileConfig::default();
        config.losses.load_fraction = 1.5;
        assert!(config.to_simulation_config().is_err());

        let mut config = FileConfig::default();
        config.geometry.storage_rows = [0, 95]; // overlaps the loading band
        assert!(config.to_simulation_config().is_err());

        let mut config = FileConfig::default();
        config.run.n_replicas = 0;
        assert!(config.to_simulation_config().is_err());
    }

    #[test]
    fn profile_names_use_snake_case() {
        let text = "[kinematics]\nprofile = \"smooth_trapezoid\"\n";
        let config = FileConfig::from_toml_str(text).unwrap();
        assert_eq!(config.kinematics.profile, ProfileName::SmoothTrapezoid);
        assert!(FileConfig::from_toml_str("[kinematics]\nprofile = \"linear\"\n").is_err());
    }
}
