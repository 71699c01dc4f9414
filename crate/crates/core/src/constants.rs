//! Physical constants used across the toolkit.
//!
//! Energies are carried in GHz, fields in tesla, times in ns and nuclear
//! frequencies in MHz.

/// Bohr magneton over Planck constant, GHz/T (CODATA 2018).
pub const BOHR_MAGNETON_GHZ_PER_T: f64 = 13.996_244_936_1;

/// Proton gyromagnetic ratio γ/2π, MHz/T (CODATA 2018).
pub const GAMMA_1H_MHZ_PER_T: f64 = 42.577_478_518;

/// Deuteron gyromagnetic ratio γ/2π, MHz/T (CODATA 2018).
pub const GAMMA_2H_MHZ_PER_T: f64 = 6.535_902_875;

/// Avogadro constant, 1/mol.
pub const AVOGADRO: f64 = 6.022_140_76e23;

/// Boltzmann constant over Planck constant, GHz/K.
pub const BOLTZMANN_GHZ_PER_K: f64 = 20.836_619_12;

/// Default X-band microwave frequency, GHz.
pub const DEFAULT_MW_GHZ: f64 = 9.7;

/// Field at which ¹H precesses at 16.6 MHz, T.
pub const DEFAULT_ESEEM_FIELD_T: f64 = 0.389_88;

/// Dipolar coupling prefactor between two free electron spins, MHz·nm³.
pub const DIPOLAR_MHZ_NM3: f64 = 100.0;
