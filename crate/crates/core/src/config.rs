//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "system": {"S": 1, "g": 1.9, "D_GHz": 21.0, "E_GHz": 1.9},
//!   "spectrum": {"field_T": {"start": 0.0, "stop": 1.4, "points": 1401}, "fwhm_T": 0.01},
//!   "sequence": {"sequence": "hahn", "tau_ns": 300},
//!   "delays": {"start": 50, "stop": 1500, "points": 100},
//!   "relaxation": {"T1_ns": 10000, "T2_ns": 379},
//!   "eseem": {"nuclei": [{"isotope": "1H", "k": 0.3}], "B_T": 0.38988},
//!   "noise": {"sigma": 0.01, "seed": 42},
//!   "output": {"stem": "cr7ni"}
//! }
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::DEFAULT_MW_GHZ;
use crate::error::{invalid, Error, Result};
use crate::eseem::EseemModel;
use crate::powder::{
    GridScheme, Lineshape, OrientationGrid, SearchOptions, SpectrumParams, DEFAULT_MESH_POINTS,
};
use crate::pulse::{DetuningEnsemble, Element, Pulse, PulseSequence, RelaxationParams};
use crate::spin::SpinSystem;
use crate::trace::linspace;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the output directory used when neither the
/// command line nor the config gives one.
pub const OUT_DIR_ENV: &str = "SPINECHO_OUT_DIR";

/// FWHM of a Gaussian over its standard deviation, `2√(2 ln 2)`.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SpinSystem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceConfig>,
    /// Echo delays `τ` for decay curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<AxisRange>,
    /// Recovery delays `T` for inversion recovery.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<AxisRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relaxation: Option<RelaxationParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eseem: Option<EseemModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl AxisRange {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.stop > self.start) {
            return Err(invalid(format!("{what}: need start < stop")));
        }
        if self.points < 2 {
            return Err(invalid(format!("{what}: need at least 2 points")));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "default_scheme")]
    pub scheme: GridScheme,
}

fn default_scheme() -> GridScheme {
    GridScheme::Spiral
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 100,
            scheme: GridScheme::Spiral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(rename = "mw_GHz", default = "default_mw")]
    pub mw_ghz: f64,
    #[serde(rename = "field_T")]
    pub field: AxisRange,
    /// Gaussian standard deviation; give this or `fwhm_T`.
    #[serde(rename = "sigma_T", default, skip_serializing_if = "Option::is_none")]
    pub sigma_t: Option<f64>,
    #[serde(rename = "fwhm_T", default, skip_serializing_if = "Option::is_none")]
    pub fwhm_t: Option<f64>,
    #[serde(default)]
    pub lineshape: Lineshape,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_mesh")]
    pub mesh_points: usize,
    /// Weight transitions by thermal populations at this temperature.
    #[serde(
        rename = "temperature_K",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub temperature_k: Option<f64>,
}

fn default_mw() -> f64 {
    DEFAULT_MW_GHZ
}

fn default_mesh() -> usize {
    DEFAULT_MESH_POINTS
}

impl SpectrumConfig {
    pub fn sigma(&self) -> Result<f64> {
        let sigma = match (self.sigma_t, self.fwhm_t) {
            (Some(s), None) => s,
            (None, Some(w)) => w / GAUSSIAN_FWHM_PER_SIGMA,
            (Some(_), Some(_)) => return Err(invalid("give either sigma_T or fwhm_T, not both")),
            (None, None) => return Err(invalid("spectrum needs sigma_T or fwhm_T")),
        };
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("line width must be positive"));
        }
        Ok(sigma)
    }

    pub fn params(&self) -> Result<SpectrumParams> {
        Ok(SpectrumParams {
            mw_ghz: self.mw_ghz,
            sigma_t: self.sigma()?,
            lineshape: self.lineshape,
            search: SearchOptions {
                mesh_points: self.mesh_points,
                temperature_k: self.temperature_k,
                ..SearchOptions::default()
            },
        })
    }

    pub fn grid(&self) -> Result<OrientationGrid> {
        OrientationGrid::new(self.grid.n, self.grid.scheme)
    }

    fn validate(&self) -> Result<()> {
        self.field.validate("field_T")?;
        if self.field.start < 0.0 {
            return Err(invalid("field_T must start at >= 0 T"));
        }
        if !(self.mw_ghz > 0.0 && self.mw_ghz.is_finite()) {
            return Err(invalid("mw_GHz must be positive"));
        }
        self.sigma()?;
        self.grid()?;
        if self.mesh_points < 2 {
            return Err(invalid("mesh_points must be >= 2"));
        }
        if let Some(t) = self.temperature_k {
            if !(t > 0.0) {
                return Err(invalid("temperature_K must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Hahn,
    InversionRecovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub sequence: SequenceKind,
    pub tau_ns: f64,
    /// Finite pulses in order; empty means ideal instantaneous pulses.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pulses: Vec<Pulse>,
    /// Echo integration window.
    #[serde(default)]
    pub detection_window_ns: f64,
    #[serde(default = "default_efficiency")]
    pub inversion_efficiency: f64,
    /// Detuning ensemble for the time-domain transient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
}

fn default_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(rename = "sigma_MHz")]
    pub sigma_mhz: f64,
    pub count: usize,
}

impl SequenceConfig {
    fn expected_pulses(&self) -> usize {
        match self.sequence {
            SequenceKind::Hahn => 2,
            SequenceKind::InversionRecovery => 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau_ns > 0.0 && self.tau_ns.is_finite()) {
            return Err(invalid("tau_ns must be positive"));
        }
        if !self.pulses.is_empty() && self.pulses.len() != self.expected_pulses() {
            return Err(invalid(format!(
                "{:?} sequence takes {} pulses, got {}",
                self.sequence,
                self.expected_pulses(),
                self.pulses.len()
            )));
        }
        if !(self.detection_window_ns >= 0.0 && self.detection_window_ns.is_finite()) {
            return Err(invalid("detection_window_ns must be >= 0"));
        }
        if !(self.inversion_efficiency > 0.0 && self.inversion_efficiency <= 1.0) {
            return Err(invalid("inversion_efficiency must lie in (0, 1]"));
        }
        self.ensemble().detunings()?;
        Ok(())
    }

    pub fn ensemble(&self) -> DetuningEnsemble {
        self.ensemble
            .map_or(DetuningEnsemble::single(), |e| DetuningEnsemble {
                sigma_mhz: e.sigma_mhz,
                count: e.count,
            })
    }

    fn elements(&self) -> Vec<Element> {
        if self.pulses.is_empty() {
            match self.sequence {
                SequenceKind::Hahn => vec![Element::ideal_half_pi(), Element::ideal_pi()],
                SequenceKind::InversionRecovery => {
                    vec![
                        Element::ideal_pi(),
                        Element::ideal_half_pi(),
                        Element::ideal_pi(),
                    ]
                }
            }
        } else {
            self.pulses.iter().map(|p| Element::Pulse(*p)).collect()
        }
    }

    /// The pulse sequence at this `τ` (and recovery delay, for inversion
    /// recovery).
    pub fn build(&self, recovery_ns: f64) -> Result<PulseSequence> {
        let e = self.elements();
        match self.sequence {
            SequenceKind::Hahn => {
                PulseSequence::hahn(e[0], e[1], self.tau_ns, self.detection_window_ns)
            }
            SequenceKind::InversionRecovery => PulseSequence::inversion_recovery(
                e[0],
                recovery_ns,
                e[1],
                e[2],
                self.tau_ns,
                self.detection_window_ns,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl NoiseConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("noise sigma must be >= 0"));
        }
        if self.sigma > 0.0 && self.seed.is_none() {
            return Err(invalid("noise with sigma > 0 needs an explicit seed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
    /// Also write an SVG plot next to each CSV.
    #[serde(default = "default_true")]
    pub plot: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if let Some(s) = &self.spectrum {
            s.validate()?;
        }
        if let Some(s) = &self.sequence {
            s.validate()?;
        }
        if let Some(d) = &self.delays {
            d.validate("delays")?;
            if d.start < 0.0 {
                return Err(invalid("delays must be >= 0 ns"));
            }
        }
        if let Some(r) = &self.recovery {
            r.validate("recovery")?;
            if r.start < 0.0 {
                return Err(invalid("recovery delays must be >= 0 ns"));
            }
        }
        if let Some(r) = &self.relaxation {
            r.validate()?;
        }
        if let Some(e) = &self.eseem {
            e.validate()?;
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }

    pub fn require<'a, T>(&self, field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| invalid(format!("config is missing the '{name}' section")))
    }

    /// Noise `(sigma, seed)`, if any noise is requested.
    pub fn noise(&self) -> Option<(f64, u64)> {
        self.noise
            .filter(|n| n.sigma > 0.0)
            .map(|n| (n.sigma, n.seed.expect("validated")))
    }

    pub fn stem(&self, default: &str) -> String {
        self.output
            .as_ref()
            .and_then(|o| o.stem.clone())
            .unwrap_or_else(|| default.to_string())
    }

    pub fn plot(&self) -> bool {
        self.output.as_ref().is_none_or(|o| o.plot)
    }

    /// Output directory: explicit argument, then config, then the
    /// environment, then the working directory.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = self.output.as_ref().and_then(|o| o.dir.clone()) {
            return p;
        }
        default_output_dir()
    }
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// Classify an error for reporting.
pub fn is_io(e: &Error) -> bool {
    matches!(e, Error::Io(_))
}
