//! Two-pulse electron-spin-echo envelope modulation from weakly coupled
//! nuclei.
//!
//! Each nucleus contributes a modulation at its Zeeman frequency `γ·B` with a
//! phenomenological depth `k`, and optionally a second harmonic of amplitude
//! `k²/8`:
//!
//! ```text
//! V_n(τ) = 1 − (k/2)(1 − cos ωτ) − (k²/8)(1 − cos 2ωτ)
//! ```
//!
//! The total modulation is the product over nuclei.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::constants::{DEFAULT_ESEEM_FIELD_T, GAMMA_1H_MHZ_PER_T, GAMMA_2H_MHZ_PER_T};
use crate::error::{invalid, Error, Result};
use crate::trace::{AxisKind, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Isotope {
    #[serde(rename = "1H")]
    Proton,
    #[serde(rename = "2H")]
    Deuteron,
}

impl Isotope {
    pub fn gamma_mhz_per_t(self) -> f64 {
        match self {
            Isotope::Proton => GAMMA_1H_MHZ_PER_T,
            Isotope::Deuteron => GAMMA_2H_MHZ_PER_T,
        }
    }

    /// Nuclear spin quantum number.
    pub fn spin(self) -> f64 {
        match self {
            Isotope::Proton => 0.5,
            Isotope::Deuteron => 1.0,
        }
    }
}

/// A class of weakly coupled nuclei seen by the electron spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CouplingDoc", into = "CouplingDoc")]
pub struct NuclearCoupling {
    isotope: Option<Isotope>,
    gamma_mhz_per_t: f64,
    spin_i: f64,
    k: f64,
    second_harmonic: bool,
    second_harmonic_amplitude: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    isotope: Option<Isotope>,
    #[serde(
        rename = "gamma_MHz_per_T",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    gamma: Option<f64>,
    #[serde(rename = "spin_I", default, skip_serializing_if = "Option::is_none")]
    spin_i: Option<f64>,
    k: f64,
    #[serde(default)]
    second_harmonic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    second_harmonic_amplitude: Option<f64>,
}

impl TryFrom<CouplingDoc> for NuclearCoupling {
    type Error = Error;

    fn try_from(doc: CouplingDoc) -> Result<Self> {
        let mut c = match (doc.isotope, doc.gamma) {
            (Some(iso), None) => NuclearCoupling::new(iso, doc.k)?,
            (None, Some(gamma)) => {
                NuclearCoupling::custom(gamma, doc.spin_i.unwrap_or(0.5), doc.k)?
            }
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "give either 'isotope' or 'gamma_MHz_per_T', not both",
                ))
            }
            (None, None) => return Err(invalid("nucleus needs 'isotope' or 'gamma_MHz_per_T'")),
        };
        if let (Some(iso), Some(spin)) = (doc.isotope, doc.spin_i) {
            if spin != iso.spin() {
                return Err(invalid("spin_I contradicts isotope"));
            }
        }
        c = c.with_second_harmonic(doc.second_harmonic);
        if let Some(a) = doc.second_harmonic_amplitude {
            c = c.with_second_harmonic_amplitude(a)?;
        }
        Ok(c)
    }
}

impl From<NuclearCoupling> for CouplingDoc {
    fn from(c: NuclearCoupling) -> Self {
        CouplingDoc {
            isotope: c.isotope,
            gamma: c.isotope.is_none().then_some(c.gamma_mhz_per_t),
            spin_i: c.isotope.is_none().then_some(c.spin_i),
            k: c.k,
            second_harmonic: c.second_harmonic,
            second_harmonic_amplitude: c.second_harmonic_amplitude,
        }
    }
}

impl NuclearCoupling {
    pub fn new(isotope: Isotope, k: f64) -> Result<Self> {
        let mut c = Self::custom(isotope.gamma_mhz_per_t(), isotope.spin(), k)?;
        c.isotope = Some(isotope);
        Ok(c)
    }

    pub fn custom(gamma_mhz_per_t: f64, spin_i: f64, k: f64) -> Result<Self> {
        if !(gamma_mhz_per_t > 0.0 && gamma_mhz_per_t.is_finite()) {
            return Err(invalid(format!(
                "gamma must be positive, got {gamma_mhz_per_t}"
            )));
        }
        if spin_i != 0.5 && spin_i != 1.0 {
            return Err(invalid(format!(
                "nuclear spin must be 1/2 or 1, got {spin_i}"
            )));
        }
        if !(0.0..=1.0).contains(&k) {
            return Err(invalid(format!(
                "modulation depth k must lie in [0, 1], got {k}"
            )));
        }
        Ok(NuclearCoupling {
            isotope: None,
            gamma_mhz_per_t,
            spin_i,
            k,
            second_harmonic: false,
            second_harmonic_amplitude: None,
        })
    }

    pub fn with_second_harmonic(mut self, on: bool) -> Self {
        self.second_harmonic = on;
        self
    }

    /// Override the `k²/8` second-harmonic amplitude. Bounded by `k/8` so
    /// the modulation stays within `[0, 1]`.
    pub fn with_second_harmonic_amplitude(mut self, amplitude: f64) -> Result<Self> {
        if !(0.0..=self.k / 8.0).contains(&amplitude) {
            return Err(invalid(format!(
                "second-harmonic amplitude must lie in [0, k/8 = {}], got {amplitude}",
                self.k / 8.0
            )));
        }
        self.second_harmonic = true;
        self.second_harmonic_amplitude = Some(amplitude);
        Ok(self)
    }

    pub fn isotope(&self) -> Option<Isotope> {
        self.isotope
    }
    pub fn gamma_mhz_per_t(&self) -> f64 {
        self.gamma_mhz_per_t
    }
    pub fn spin_i(&self) -> f64 {
        self.spin_i
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn includes_second_harmonic(&self) -> bool {
        self.second_harmonic
    }

    /// Amplitude of the `(1 − cos 2ωτ)` term.
    pub fn second_harmonic_amplitude(&self) -> f64 {
        if !self.second_harmonic {
            0.0
        } else {
            self.second_harmonic_amplitude
                .unwrap_or(self.k * self.k / 8.0)
        }
    }

    /// Modulation from this nucleus alone at Larmor frequency `nu_mhz`.
    /// `window_ns` averages each harmonic over a detection window centred on
    /// the echo; zero means point sampling.
    fn factor(&self, nu_mhz: f64, tau_ns: f64, window_ns: f64) -> f64 {
        let w = TAU * nu_mhz * 1e-3;
        let h = self.second_harmonic_amplitude();
        let c1 = (w * tau_ns).cos() * sinc(w * window_ns / 2.0);
        let c2 = (2.0 * w * tau_ns).cos() * sinc(w * window_ns);
        1.0 - 0.5 * self.k * (1.0 - c1) - h * (1.0 - c2)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EseemModel {
    pub nuclei: Vec<NuclearCoupling>,
    #[serde(rename = "B_T", default = "default_field")]
    pub field_t: f64,
}

fn default_field() -> f64 {
    DEFAULT_ESEEM_FIELD_T
}

impl EseemModel {
    pub fn new(nuclei: Vec<NuclearCoupling>, field_t: f64) -> Result<Self> {
        let m = EseemModel { nuclei, field_t };
        m.validate()?;
        Ok(m)
    }

    pub fn single(nucleus: NuclearCoupling, field_t: f64) -> Result<Self> {
        Self::new(vec![nucleus], field_t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.field_t > 0.0 && self.field_t.is_finite()) {
            return Err(invalid(format!(
                "ESEEM field must be > 0 T, got {}",
                self.field_t
            )));
        }
        Ok(())
    }

    /// Larmor frequencies (MHz) of each nucleus, in order.
    pub fn frequencies_mhz(&self) -> Vec<f64> {
        self.nuclei
            .iter()
            .map(|n| larmor_frequency(n.gamma_mhz_per_t, self.field_t))
            .collect()
    }

    pub fn modulation(&self, tau_ns: f64) -> f64 {
        self.windowed_modulation(tau_ns, 0.0)
    }

    /// Modulation of the echo integrated over a window of `window_ns`
    /// centred on the echo maximum.
    pub fn windowed_modulation(&self, tau_ns: f64, window_ns: f64) -> f64 {
        self.nuclei
            .iter()
            .map(|n| {
                n.factor(
                    larmor_frequency(n.gamma_mhz_per_t, self.field_t),
                    tau_ns,
                    window_ns,
                )
            })
            .product()
    }
}

/// Nuclear Zeeman frequency `γ·B` in MHz.
pub fn larmor_frequency(gamma_mhz_per_t: f64, field_t: f64) -> f64 {
    gamma_mhz_per_t * field_t
}

/// Ratio of the proton to the deuteron gyromagnetic ratio.
pub fn gamma_ratio() -> f64 {
    GAMMA_1H_MHZ_PER_T / GAMMA_2H_MHZ_PER_T
}

pub fn two_pulse_modulation(model: &EseemModel, tau_ns: f64) -> f64 {
    model.modulation(tau_ns)
}

/// `exp(−2τ/T2)·V(τ)` sampled on `taus_ns`.
pub fn modulated_decay(t2_ns: f64, model: &EseemModel, taus_ns: &[f64]) -> Result<Trace> {
    if !(t2_ns > 0.0) {
        return Err(invalid(format!("T2 must be positive, got {t2_ns}")));
    }
    if taus_ns.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("tau list must be ascending"));
    }
    let amp = taus_ns
        .iter()
        .map(|&t| (-2.0 * t / t2_ns).exp() * model.modulation(t))
        .collect();
    Ok(Trace::new(AxisKind::DelayNs, taus_ns.to_vec(), amp)?.with_meta("T2_ns", t2_ns))
}
