//! Back-of-envelope estimates for dilute frozen solutions.

use serde::{Deserialize, Serialize};

use crate::constants::{AVOGADRO, DIPOLAR_MHZ_NM3};
use crate::error::{invalid, Result};

/// Solute concentration and molar mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilutionSpec {
    #[serde(rename = "concentration_mg_per_ml")]
    pub concentration: f64,
    #[serde(rename = "molar_mass_g_per_mol")]
    pub molar_mass: f64,
}

impl DilutionSpec {
    pub fn new(concentration: f64, molar_mass: f64) -> Result<Self> {
        let s = DilutionSpec {
            concentration,
            molar_mass,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(invalid(format!(
                "concentration must be > 0 mg/ml, got {}",
                self.concentration
            )));
        }
        if !(self.molar_mass > 0.0 && self.molar_mass.is_finite()) {
            return Err(invalid(format!(
                "molar mass must be > 0 g/mol, got {}",
                self.molar_mass
            )));
        }
        Ok(())
    }

    /// Molecules per cubic metre (mg/ml is g/l).
    pub fn number_density_per_m3(&self) -> f64 {
        self.concentration * 1e3 / self.molar_mass * AVOGADRO
    }
}

/// Mean separation `n^(−1/3)` in nm.
pub fn mean_separation(spec: &DilutionSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.number_density_per_m3().powf(-1.0 / 3.0) * 1e9)
}

/// Point-dipole coupling between two electron spins `r` nm apart, in MHz.
pub fn dipolar_coupling(r_nm: f64) -> Result<f64> {
    if !(r_nm > 0.0) {
        return Err(invalid(format!("distance must be > 0 nm, got {r_nm}")));
    }
    Ok(DIPOLAR_MHZ_NM3 / r_nm.powi(3))
}

/// `1/(2π·T2)` in MHz.
pub fn coherence_bandwidth_mhz(t2_ns: f64) -> Result<f64> {
    if !(t2_ns > 0.0) {
        return Err(invalid("T2 must be positive"));
    }
    Ok(1e3 / (std::f64::consts::TAU * t2_ns))
}

/// Number of operations of length `t_op` that fit in `T2`.
pub fn figure_of_merit(t2_ns: f64, t_op_ns: f64) -> Result<f64> {
    if !(t2_ns > 0.0 && t_op_ns > 0.0) {
        return Err(invalid("T2 and operation time must be positive"));
    }
    Ok(t2_ns / t_op_ns)
}
