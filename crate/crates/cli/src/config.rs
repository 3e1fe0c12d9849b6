//! Flat `key = value` experiment configs with unit-bearing key names.
//!
//! A config file only lists the keys it changes; everything else comes from
//! the preset defaults. The fully resolved config is what gets hashed.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use kicked_rotor::engine::{BetaSampling, CONTRAST_LATTICE_SIZE, SCALING_LATTICE_SIZE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Pi0Trace,
    ContrastSweep,
    ContrastDynamics,
    BetaG,
    MapCheck,
    Custom,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Pi0Trace => "pi0-trace",
            Preset::ContrastSweep => "contrast-sweep",
            Preset::ContrastDynamics => "contrast-dynamics",
            Preset::BetaG => "beta-g",
            Preset::MapCheck => "map-check",
            Preset::Custom => "custom",
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    /// Period-10 amplitude plus period-2 phase modulation; control phase is φ̃.
    Experimental,
    /// `K[1 + cos(2πt/N + φ)]`; control phase is φ.
    Amplitude,
    /// Constant `K`, i.i.d. phases re-drawn for every disorder realization.
    RandomPhase,
    /// Constant `K`, phase re-drawn at every kick.
    Annealed,
}

/// Every knob of a run. Field names double as config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub sequence: SequenceKind,
    pub kick_strength: f64,
    pub period_kicks: usize,
    pub control_phase_rad: f64,
    pub phase_offset_rad: f64,
    pub antisymmetric: bool,
    pub lattice_sites: usize,
    pub kbar: f64,
    pub n_disorder: usize,
    pub n_beta: usize,
    /// Width of the initial quasi-momentum spread, in units of the zone.
    pub beta_sigma_zone: f64,
    pub beta_sampling: BetaSampling,
    pub decoherence_per_kick: f64,
    pub random_site_phases: bool,
    pub seed: u64,
    pub horizon_kicks: usize,
    pub batches: usize,
    pub pi0_bins_per_site: usize,
    /// 0 disables the momentum histogram.
    pub histogram_stride_kicks: usize,
    pub beta_window_samples: usize,
    pub sweep_points: usize,
    pub sweep_time_kicks: usize,
    pub quasi_energy_rad: f64,
    pub hopping_range_sites: usize,
    pub map_length_sites: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(preset: Preset) -> Self {
        let base = Self {
            preset,
            sequence: SequenceKind::Experimental,
            kick_strength: 4.0,
            period_kicks: 10,
            control_phase_rad: 0.0,
            phase_offset_rad: 0.21 * TAU,
            antisymmetric: false,
            lattice_sites: CONTRAST_LATTICE_SIZE,
            kbar: 1.5,
            n_disorder: 200,
            n_beta: 1,
            beta_sigma_zone: 0.0,
            beta_sampling: BetaSampling::Gaussian,
            decoherence_per_kick: 0.0,
            random_site_phases: true,
            seed: 1,
            horizon_kicks: 100,
            batches: 16,
            pi0_bins_per_site: 1,
            histogram_stride_kicks: 0,
            beta_window_samples: 5,
            sweep_points: 20,
            sweep_time_kicks: 70,
            quasi_energy_rad: 0.1,
            hopping_range_sites: 8,
            map_length_sites: 8,
            output_dir: PathBuf::from(format!("runs/{preset}")),
        };
        match preset {
            Preset::Pi0Trace => Self { histogram_stride_kicks: 10, ..base },
            Preset::ContrastDynamics => Self { n_disorder: 2000, ..base },
            Preset::ContrastSweep | Preset::Custom => base,
            Preset::BetaG => Self {
                sequence: SequenceKind::RandomPhase,
                kick_strength: 4.5,
                period_kicks: 4,
                phase_offset_rad: 0.0,
                antisymmetric: true,
                lattice_sites: SCALING_LATTICE_SIZE,
                kbar: 1.0,
                n_disorder: 100,
                random_site_phases: false,
                horizon_kicks: 1000,
                ..base
            },
            Preset::MapCheck => Self {
                sequence: SequenceKind::Amplitude,
                kick_strength: 1.0,
                period_kicks: 5,
                control_phase_rad: 0.3,
                phase_offset_rad: 0.0,
                kbar: 1.0,
                n_disorder: 1,
                random_site_phases: false,
                ..base
            },
        }
    }

    /// Resolves a config: preset defaults, then the file's keys, then
    /// command-line overrides.
    pub fn resolve(preset: Option<Preset>, text: Option<&str>, overrides: &Overrides) -> Result<Self, CliError> {
        let user: toml::Table = match text {
            Some(t) => t.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        if let Some((key, _)) = user.iter().find(|(_, v)| v.is_table() || v.is_array()) {
            return Err(CliError::Config(format!("key {key:?}: only flat scalar values are allowed")));
        }
        let file_preset = match user.get("preset") {
            Some(v) => Some(
                Preset::deserialize(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            ),
            None => None,
        };
        let preset = match (preset, file_preset) {
            (Some(a), Some(b)) if a != b => {
                return Err(CliError::Config(format!("--preset {a} conflicts with preset = \"{b}\" in the config file")))
            }
            (a, b) => a.or(b).unwrap_or(Preset::Custom),
        };
        let mut table = toml::Table::try_from(Self::defaults(preset)).map_err(|e| CliError::Config(e.to_string()))?;
        table.extend(user);
        let mut config: Self = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.output_dir {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, preset: Option<Preset>, overrides: &Overrides) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?),
            None => None,
        };
        Self::resolve(preset, text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let finite = [
            ("kick_strength", self.kick_strength),
            ("control_phase_rad", self.control_phase_rad),
            ("phase_offset_rad", self.phase_offset_rad),
            ("kbar", self.kbar),
            ("quasi_energy_rad", self.quasi_energy_rad),
        ];
        if let Some((key, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{key} must be finite"));
        }
        if self.sequence == SequenceKind::Experimental && self.period_kicks != 10 {
            return bad(format!("the experimental sequence has period 10, got period_kicks = {}", self.period_kicks));
        }
        if self.preset == Preset::ContrastSweep && self.sweep_points == 0 {
            return bad("sweep_points must be at least 1".into());
        }
        if self.preset == Preset::ContrastSweep && self.sequence != SequenceKind::Experimental {
            return bad("contrast-sweep scans the experimental sequence only".into());
        }
        if self.preset == Preset::MapCheck && self.sequence != SequenceKind::Amplitude {
            return bad("map-check applies to the amplitude sequence only".into());
        }
        if self.preset == Preset::BetaG && self.sequence != SequenceKind::RandomPhase {
            return bad("beta-g runs use random-phase sequences".into());
        }
        Ok(())
    }

    /// Canonical text of the resolved config; the checksum is taken over it.
    pub fn canonical_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }

    /// Symmetric control-phase points nearest to `phi`, for the sweep.
    pub fn nearest_symmetric_phase(phi: f64) -> f64 {
        let step = 2.0 * PI / 5.0;
        (phi / step).round() * step
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        for preset in [
            Preset::Pi0Trace,
            Preset::ContrastSweep,
            Preset::ContrastDynamics,
            Preset::BetaG,
            Preset::MapCheck,
            Preset::Custom,
        ] {
            let config = ExperimentConfig::defaults(preset);
            let again = ExperimentConfig::resolve(None, Some(&config.canonical_text()), &Overrides::default()).unwrap();
            assert_eq!(config, again);
        }
    }

    #[test]
    fn file_keys_override_defaults() {
        let text = "preset = \"beta-g\"\nkick_strength = 2.5\nperiod_kicks = 3\nantisymmetric = false\n";
        let config = ExperimentConfig::resolve(None, Some(text), &Overrides::default()).unwrap();
        assert_eq!(config.kick_strength, 2.5);
        assert_eq!(config.period_kicks, 3);
        assert_eq!(config.lattice_sites, SCALING_LATTICE_SIZE);
        let seeded = ExperimentConfig::resolve(None, Some(text), &Overrides { seed: Some(9), output_dir: None }).unwrap();
        assert_eq!(seeded.seed, 9);
        assert_ne!(config.checksum(), seeded.checksum());
    }

    #[test]
    fn rejects_bad_input() {
        let o = Overrides::default();
        assert!(ExperimentConfig::resolve(None, Some("horizon = 10\n"), &o).is_err());
        assert!(ExperimentConfig::resolve(None, Some("[ensemble]\nseed = 1\n"), &o).is_err());
        assert!(ExperimentConfig::resolve(None, Some("horizon_kicks = \"ten\"\n"), &o).is_err());
        assert!(ExperimentConfig::resolve(Some(Preset::BetaG), Some("preset = \"map-check\"\n"), &o).is_err());
        assert!(ExperimentConfig::resolve(None, Some("period_kicks = 4\n"), &o).is_err());
    }

    #[test]
    fn nearest_symmetric_phase_snaps_to_fifths() {
        assert_eq!(ExperimentConfig::nearest_symmetric_phase(0.1), 0.0);
        let fifth = 2.0 * PI / 5.0;
        assert!((ExperimentConfig::nearest_symmetric_phase(-0.45 * PI) + fifth).abs() < 1e-12);
    }
}
