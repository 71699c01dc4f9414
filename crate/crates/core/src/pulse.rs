//! Rotating-frame pulse dynamics for an inhomogeneous two-level ensemble.
//!
//! Each spin packet is a Bloch vector. Rectangular pulses act as exact
//! rotations (relaxation during pulses is neglected), free evolution
//! precesses at the packet's detuning and relaxes with phenomenological
//! `T1`/`T2` towards `+z`. Times are in ns and frequencies in MHz.
//!
//! Sign conventions: a pulse of phase 0 rotates about `+x` with the right
//! hand, so a π/2 pulse takes `+z` to `−y`; the in-phase signal is `⟨My⟩`,
//! which makes the Hahn echo positive and the FID negative.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constants::BOHR_MAGNETON_GHZ_PER_T;
use crate::error::{invalid, Result};
use crate::eseem::EseemModel;
use crate::linalg::{self, CMatrix};
use crate::spin::{SpinOperators, SpinQuantum};
use crate::trace::{AxisKind, Trace};

/// Samples per pulse when recording a transient.
const PULSE_SAMPLES: usize = 64;
/// Samples per free-evolution delay when recording a transient.
const DELAY_SAMPLES: usize = 256;
/// Points used to average the signal over a finite detection window.
const WINDOW_SAMPLES: usize = 129;

/// Angular frequency in rad/ns for a frequency in MHz.
fn rad_per_ns(mhz: f64) -> f64 {
    TAU * mhz * 1e-3
}

/// Rectangular microwave pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PulseDoc", into = "PulseDoc")]
pub struct Pulse {
    duration_ns: f64,
    angle: f64,
    phase: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PulseDoc {
    duration_ns: f64,
    flip_angle_deg: f64,
    #[serde(default)]
    phase_deg: f64,
}

impl TryFrom<PulseDoc> for Pulse {
    type Error = crate::error::Error;

    fn try_from(d: PulseDoc) -> Result<Self> {
        Pulse::new(
            d.duration_ns,
            d.flip_angle_deg.to_radians(),
            d.phase_deg.to_radians(),
        )
    }
}

impl From<Pulse> for PulseDoc {
    fn from(p: Pulse) -> Self {
        PulseDoc {
            duration_ns: p.duration_ns,
            flip_angle_deg: p.angle.to_degrees(),
            phase_deg: p.phase.to_degrees(),
        }
    }
}

impl Pulse {
    pub fn new(duration_ns: f64, angle: f64, phase: f64) -> Result<Self> {
        if !(duration_ns > 0.0 && duration_ns.is_finite()) {
            return Err(invalid(format!(
                "pulse duration must be > 0 ns, got {duration_ns}"
            )));
        }
        if !angle.is_finite() || !phase.is_finite() {
            return Err(invalid("pulse angle and phase must be finite"));
        }
        Ok(Pulse {
            duration_ns,
            angle,
            phase,
        })
    }

    pub fn half_pi(duration_ns: f64) -> Result<Self> {
        Self::new(duration_ns, FRAC_PI_2, 0.0)
    }

    pub fn pi(duration_ns: f64) -> Result<Self> {
        Self::new(duration_ns, PI, 0.0)
    }

    pub fn duration_ns(&self) -> f64 {
        self.duration_ns
    }
    pub fn angle(&self) -> f64 {
        self.angle
    }
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Nutation frequency `angle / (2π·duration)` in MHz.
    pub fn rabi_mhz(&self) -> f64 {
        self.angle / (TAU * self.duration_ns) * 1e3
    }

    /// The same pulse acting on a transition whose moment differs from the
    /// spin-1/2 value by `scale` (the nutation frequency scales with it).
    pub fn scaled(&self, scale: f64) -> Pulse {
        Pulse {
            angle: self.angle * scale,
            ..*self
        }
    }
}

/// Scale of the nutation frequency on a transition with matrix element
/// `|⟨i|S_x|j⟩|` relative to a spin-1/2 (`1/2`).
pub fn transition_moment_scale(intensity: f64) -> f64 {
    2.0 * intensity.sqrt()
}

pub type Su2 = Matrix2<Complex64>;

/// `exp(−i(Δσz/2 + ω₁(cosφ σx + sinφ σy)/2)·t)` for the pulse duration.
pub fn pulse_propagator(pulse: &Pulse, detuning_mhz: f64) -> Su2 {
    propagator_for(pulse, detuning_mhz, pulse.duration_ns)
}

fn propagator_for(pulse: &Pulse, detuning_mhz: f64, t_ns: f64) -> Su2 {
    let (axis, angle) = rotation_axis_angle(pulse, detuning_mhz, t_ns);
    let (s, c) = (angle / 2.0).sin_cos();
    let i = Complex64::new(0.0, 1.0);
    // cos(θ/2)·I − i·sin(θ/2)·(n·σ)
    Su2::new(
        Complex64::new(c, 0.0) - i * s * axis[2],
        -i * s * Complex64::new(axis[0], -axis[1]),
        -i * s * Complex64::new(axis[0], axis[1]),
        Complex64::new(c, 0.0) + i * s * axis[2],
    )
}

fn rotation_axis_angle(pulse: &Pulse, detuning_mhz: f64, t_ns: f64) -> ([f64; 3], f64) {
    let w1 = rad_per_ns(pulse.rabi_mhz());
    let dw = rad_per_ns(detuning_mhz);
    let (sp, cp) = pulse.phase.sin_cos();
    let v = [w1 * cp, w1 * sp, dw];
    let omega = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if omega == 0.0 {
        return ([0.0, 0.0, 1.0], 0.0);
    }
    ([v[0] / omega, v[1] / omega, v[2] / omega], omega * t_ns)
}

/// Bloch-vector rotation matrix induced by an SU(2) propagator,
/// `R_ij = ½ Re Tr(σ_i U σ_j U†)`.
pub fn bloch_rotation(u: &Su2) -> [[f64; 3]; 3] {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let paulis = [
        Su2::new(c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)),
        Su2::new(c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)),
        Su2::new(c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)),
    ];
    let ud = u.adjoint();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = 0.5 * (paulis[i] * u * paulis[j] * ud).trace().re;
        }
    }
    r
}

/// Propagator for a pulse on the full `2S+1` manifold (no relaxation):
/// `H = Δ·Sz + ω₁(cosφ·Sx + sinφ·Sy)` in the rotating frame.
pub fn spin_pulse_propagator(spin: SpinQuantum, pulse: &Pulse, detuning_mhz: f64) -> CMatrix {
    let ops = SpinOperators::new(spin);
    let w1 = rad_per_ns(pulse.rabi_mhz());
    let dw = rad_per_ns(detuning_mhz);
    let (sp, cp) = pulse.phase.sin_cos();
    let h = &ops.sz * Complex64::new(dw, 0.0) + ops.project([w1 * cp, w1 * sp, 0.0]);
    let es = linalg::eigh(&h).expect("rotating-frame Hamiltonian is Hermitian");
    let n = ops.dim();
    let phases = CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::from_polar(1.0, -es.values[r] * pulse.duration_ns)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    &es.vectors * phases * es.vectors.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bloch {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Bloch {
    pub const EQUILIBRIUM: Bloch = Bloch {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Bloch { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn transverse(&self) -> f64 {
        self.x.hypot(self.y)
    }

    fn rotate(&self, axis: [f64; 3], angle: f64) -> Bloch {
        // Rodrigues: v cosθ + (k×v) sinθ + k(k·v)(1 − cosθ)
        let (s, c) = angle.sin_cos();
        let [kx, ky, kz] = axis;
        let dot = kx * self.x + ky * self.y + kz * self.z;
        Bloch {
            x: self.x * c + (ky * self.z - kz * self.y) * s + kx * dot * (1.0 - c),
            y: self.y * c + (kz * self.x - kx * self.z) * s + ky * dot * (1.0 - c),
            z: self.z * c + (kx * self.y - ky * self.x) * s + kz * dot * (1.0 - c),
        }
    }
}

/// Apply a pulse (or its first `t_ns`) to a Bloch vector.
pub fn apply_pulse(state: Bloch, pulse: &Pulse, detuning_mhz: f64) -> Bloch {
    apply_pulse_for(state, pulse, detuning_mhz, pulse.duration_ns)
}

fn apply_pulse_for(state: Bloch, pulse: &Pulse, detuning_mhz: f64, t_ns: f64) -> Bloch {
    let (axis, angle) = rotation_axis_angle(pulse, detuning_mhz, t_ns);
    state.rotate(axis, angle)
}

/// Instantaneous rotation by `angle` about the in-plane axis at `phase`.
pub fn apply_ideal(state: Bloch, angle: f64, phase: f64) -> Bloch {
    let (sp, cp) = phase.sin_cos();
    state.rotate([cp, sp, 0.0], angle)
}

/// Phenomenological `T1`/`T2` relaxation times in ns. Infinite values
/// switch the corresponding relaxation off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationParams {
    #[serde(rename = "T1_ns")]
    pub t1_ns: f64,
    #[serde(rename = "T2_ns")]
    pub t2_ns: f64,
}

impl RelaxationParams {
    pub fn new(t1_ns: f64, t2_ns: f64) -> Result<Self> {
        let r = RelaxationParams { t1_ns, t2_ns };
        r.validate()?;
        Ok(r)
    }

    pub fn none() -> Self {
        RelaxationParams {
            t1_ns: f64::INFINITY,
            t2_ns: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2_ns > 0.0) || self.t1_ns.is_nan() {
            return Err(invalid(format!("T2 must be positive, got {}", self.t2_ns)));
        }
        if !(self.t1_ns >= self.t2_ns / 2.0) {
            return Err(invalid(format!(
                "T1 = {} ns violates T1 >= T2/2 = {} ns",
                self.t1_ns,
                self.t2_ns / 2.0
            )));
        }
        Ok(())
    }
}

/// Free precession at `detuning_mhz` for `delay_ns` with relaxation towards
/// `+z`.
pub fn free_evolution(
    state: Bloch,
    delay_ns: f64,
    detuning_mhz: f64,
    relax: &RelaxationParams,
) -> Bloch {
    let (s, c) = (rad_per_ns(detuning_mhz) * delay_ns).sin_cos();
    let e2 = (-delay_ns / relax.t2_ns).exp();
    let e1 = (-delay_ns / relax.t1_ns).exp();
    Bloch {
        x: (state.x * c - state.y * s) * e2,
        y: (state.x * s + state.y * c) * e2,
        z: 1.0 + (state.z - 1.0) * e1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Element {
    Pulse(Pulse),
    /// Instantaneous rotation.
    Ideal {
        angle: f64,
        phase: f64,
    },
    Delay {
        ns: f64,
    },
}

impl Element {
    pub fn duration_ns(&self) -> f64 {
        match self {
            Element::Pulse(p) => p.duration_ns,
            Element::Ideal { .. } => 0.0,
            Element::Delay { ns } => *ns,
        }
    }

    fn is_pulse(&self) -> bool {
        !matches!(self, Element::Delay { .. })
    }

    /// Time from the start of the element to its effective centre.
    fn centre_ns(&self) -> f64 {
        self.duration_ns() / 2.0
    }

    pub fn ideal_half_pi() -> Self {
        Element::Ideal {
            angle: FRAC_PI_2,
            phase: 0.0,
        }
    }

    pub fn ideal_pi() -> Self {
        Element::Ideal {
            angle: PI,
            phase: 0.0,
        }
    }
}

impl From<Pulse> for Element {
    fn from(p: Pulse) -> Self {
        Element::Pulse(p)
    }
}

/// Signal integration window, in ns from the start of the first element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionWindow {
    pub centre_ns: f64,
    pub width_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    elements: Vec<Element>,
    detection: DetectionWindow,
}

impl PulseSequence {
    pub fn new(elements: Vec<Element>, detection: DetectionWindow) -> Result<Self> {
        if !elements.iter().any(Element::is_pulse) {
            return Err(invalid("a pulse sequence needs at least one pulse"));
        }
        for e in &elements {
            match e {
                Element::Delay { ns } if !(*ns >= 0.0 && ns.is_finite()) => {
                    return Err(invalid(format!("delay must be >= 0 ns, got {ns}")))
                }
                Element::Ideal { angle, phase } if !(angle.is_finite() && phase.is_finite()) => {
                    return Err(invalid("ideal pulse angle and phase must be finite"))
                }
                _ => {}
            }
        }
        let seq = PulseSequence {
            elements,
            detection,
        };
        let (start, end) = seq.acquisition_span();
        let half = detection.width_ns / 2.0;
        if !(detection.width_ns >= 0.0)
            || detection.centre_ns - half < start - 1e-9
            || detection.centre_ns + half > end + 1e-9
        {
            return Err(invalid(format!(
                "detection window {:?} lies outside the final free evolution [{start}, {end}] ns",
                detection
            )));
        }
        Ok(seq)
    }

    /// Two-pulse echo `p1 − τ − p2 − τ − echo`. `τ` is the free delay
    /// between the pulses; acquisition runs symmetrically around the echo.
    pub fn hahn(p1: Element, p2: Element, tau_ns: f64, window_ns: f64) -> Result<Self> {
        Self::echo_block(Vec::new(), p1, p2, tau_ns, window_ns)
    }

    /// Inversion recovery `π − T − π/2 − τ − π − τ − echo`.
    pub fn inversion_recovery(
        inversion: Element,
        recovery_ns: f64,
        p1: Element,
        p2: Element,
        tau_ns: f64,
        window_ns: f64,
    ) -> Result<Self> {
        Self::echo_block(
            vec![inversion, Element::Delay { ns: recovery_ns }],
            p1,
            p2,
            tau_ns,
            window_ns,
        )
    }

    fn echo_block(
        mut elements: Vec<Element>,
        p1: Element,
        p2: Element,
        tau_ns: f64,
        window_ns: f64,
    ) -> Result<Self> {
        if !(tau_ns > 0.0) {
            return Err(invalid(format!("tau must be > 0 ns, got {tau_ns}")));
        }
        let start: f64 = elements.iter().map(Element::duration_ns).sum();
        let c1 = start + p1.centre_ns();
        let c2 = start + p1.duration_ns() + tau_ns + p2.centre_ns();
        let end2 = start + p1.duration_ns() + tau_ns + p2.duration_ns();
        let echo = 2.0 * c2 - c1;
        let acquisition = (echo - end2) + tau_ns.max(window_ns / 2.0);
        elements.extend([
            p1,
            Element::Delay { ns: tau_ns },
            p2,
            Element::Delay { ns: acquisition },
        ]);
        Self::new(
            elements,
            DetectionWindow {
                centre_ns: echo,
                width_ns: window_ns,
            },
        )
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn detection(&self) -> DetectionWindow {
        self.detection
    }

    pub fn total_ns(&self) -> f64 {
        self.elements.iter().map(Element::duration_ns).sum()
    }

    /// Start and end of the free evolution after the last pulse.
    fn acquisition_span(&self) -> (f64, f64) {
        let last_pulse = self
            .elements
            .iter()
            .rposition(Element::is_pulse)
            .unwrap_or(0);
        let start: f64 = self.elements[..=last_pulse]
            .iter()
            .map(Element::duration_ns)
            .sum();
        (start, self.total_ns())
    }
}

/// Gaussian distribution of packet detunings, sampled deterministically at
/// the mid-quantiles `(k + ½)/count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningEnsemble {
    pub sigma_mhz: f64,
    pub count: usize,
}

impl DetuningEnsemble {
    pub fn single() -> Self {
        DetuningEnsemble {
            sigma_mhz: 0.0,
            count: 1,
        }
    }

    pub fn detunings(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(invalid("ensemble needs at least one packet"));
        }
        if !(self.sigma_mhz >= 0.0 && self.sigma_mhz.is_finite()) {
            return Err(invalid("detuning width must be >= 0"));
        }
        if self.sigma_mhz == 0.0 || self.count == 1 {
            return Ok(vec![0.0; self.count]);
        }
        let normal = Normal::new(0.0, self.sigma_mhz).map_err(|e| invalid(e.to_string()))?;
        Ok((0..self.count)
            .map(|k| normal.inverse_cdf((k as f64 + 0.5) / self.count as f64))
            .collect())
    }
}

/// Per-packet state right after the last pulse, plus the sampled transient.
fn evolve_packet(
    seq: &PulseSequence,
    detuning: f64,
    relax: &RelaxationParams,
    samples: Option<&mut Vec<f64>>,
) -> Bloch {
    let mut state = Bloch::EQUILIBRIUM;
    let last_pulse = seq
        .elements
        .iter()
        .rposition(Element::is_pulse)
        .unwrap_or(0);
    let mut record = samples;
    for (idx, e) in seq.elements.iter().enumerate() {
        match e {
            Element::Pulse(p) => {
                if let Some(buf) = record.as_deref_mut() {
                    let dt = p.duration_ns / PULSE_SAMPLES as f64;
                    for k in 0..PULSE_SAMPLES {
                        buf.push(apply_pulse_for(state, p, detuning, dt * k as f64).y);
                    }
                }
                state = apply_pulse(state, p, detuning);
            }
            Element::Ideal { angle, phase } => state = apply_ideal(state, *angle, *phase),
            Element::Delay { ns } => {
                if idx > last_pulse {
                    // acquisition: the caller samples this stretch itself
                    break;
                }
                if let Some(buf) = record.as_deref_mut() {
                    let dt = ns / DELAY_SAMPLES as f64;
                    for k in 0..DELAY_SAMPLES {
                        buf.push(free_evolution(state, dt * k as f64, detuning, relax).y);
                    }
                }
                state = free_evolution(state, *ns, detuning, relax);
            }
        }
    }
    state
}

/// Sample times matching the transient recorded by [`run_sequence`].
fn sample_times(seq: &PulseSequence) -> Vec<f64> {
    let mut t0 = 0.0;
    let mut times = Vec::new();
    let last_pulse = seq
        .elements
        .iter()
        .rposition(Element::is_pulse)
        .unwrap_or(0);
    for (idx, e) in seq.elements.iter().enumerate() {
        let (n, d) = match e {
            Element::Pulse(p) => (PULSE_SAMPLES, p.duration_ns),
            Element::Ideal { .. } => (0, 0.0),
            Element::Delay { ns } => (
                if idx > last_pulse {
                    DELAY_SAMPLES + 1
                } else {
                    DELAY_SAMPLES
                },
                *ns,
            ),
        };
        let denom = if idx > last_pulse {
            DELAY_SAMPLES
        } else {
            n.max(1)
        };
        for k in 0..n {
            times.push(t0 + d * k as f64 / denom as f64);
        }
        t0 += d;
    }
    times
}

/// Ensemble-averaged in-phase transverse magnetisation `⟨My⟩` versus time
/// from the start of the first element.
pub fn run_sequence(
    seq: &PulseSequence,
    ensemble: &DetuningEnsemble,
    relax: &RelaxationParams,
) -> Result<Trace> {
    relax.validate()?;
    let detunings = ensemble.detunings()?;
    let (acq_start, acq_end) = seq.acquisition_span();
    let acq_len = acq_end - acq_start;

    let per_packet: Vec<Vec<f64>> = detunings
        .par_iter()
        .map(|&d| {
            let mut buf = Vec::new();
            let state = evolve_packet(seq, d, relax, Some(&mut buf));
            for k in 0..=DELAY_SAMPLES {
                let t = acq_len * k as f64 / DELAY_SAMPLES as f64;
                buf.push(free_evolution(state, t, d, relax).y);
            }
            buf
        })
        .collect();

    let times = sample_times(seq);
    let mut signal = vec![0.0; times.len()];
    for packet in &per_packet {
        for (s, v) in signal.iter_mut().zip(packet) {
            *s += v;
        }
    }
    let n = detunings.len() as f64;
    for s in &mut signal {
        *s /= n;
    }
    Ok(Trace::new(AxisKind::TimeNs, times, signal)?
        .with_meta("echo_time_ns", seq.detection.centre_ns)
        .with_meta("packets", detunings.len()))
}

/// Echo amplitude: ensemble `⟨My⟩` averaged over the detection window (or
/// sampled at its centre when the width is zero).
pub fn echo_amplitude(
    seq: &PulseSequence,
    ensemble: &DetuningEnsemble,
    relax: &RelaxationParams,
) -> Result<f64> {
    relax.validate()?;
    let detunings = ensemble.detunings()?;
    let (acq_start, _) = seq.acquisition_span();
    let DetectionWindow {
        centre_ns,
        width_ns,
    } = seq.detection;
    let offsets: Vec<f64> = if width_ns == 0.0 {
        vec![centre_ns - acq_start]
    } else {
        (0..WINDOW_SAMPLES)
            .map(|k| {
                centre_ns - acq_start - width_ns / 2.0
                    + width_ns * (k as f64 + 0.5) / WINDOW_SAMPLES as f64
            })
            .collect()
    };
    let per_packet: Vec<f64> = detunings
        .par_iter()
        .map(|&d| {
            let state = evolve_packet(seq, d, relax, None);
            offsets
                .iter()
                .map(|&t| free_evolution(state, t, d, relax).y)
                .sum::<f64>()
                / offsets.len() as f64
        })
        .collect();
    Ok(per_packet.iter().sum::<f64>() / detunings.len() as f64)
}

/// Options for the analytic Hahn-echo decay.
#[derive(Debug, Clone, PartialEq)]
pub struct HahnDecay<'a> {
    pub amplitude: f64,
    pub eseem: Option<&'a EseemModel>,
    /// Width of the echo integration window in ns; zero samples the echo top.
    pub window_ns: f64,
}

impl Default for HahnDecay<'_> {
    fn default() -> Self {
        HahnDecay {
            amplitude: 1.0,
            eseem: None,
            window_ns: 0.0,
        }
    }
}

impl HahnDecay<'_> {
    /// `A·exp(−2τ/T2)·V(τ)` on `taus_ns`.
    pub fn curve(&self, taus_ns: &[f64], relax: &RelaxationParams) -> Result<Trace> {
        relax.validate()?;
        if taus_ns.iter().any(|&t| !(t >= 0.0)) || taus_ns.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("tau list must be ascending and non-negative"));
        }
        let amp = taus_ns
            .iter()
            .map(|&tau| {
                let v = self
                    .eseem
                    .map_or(1.0, |m| m.windowed_modulation(tau, self.window_ns));
                self.amplitude * (-2.0 * tau / relax.t2_ns).exp() * v
            })
            .collect();
        Ok(Trace::new(AxisKind::DelayNs, taus_ns.to_vec(), amp)?.with_meta("T2_ns", relax.t2_ns))
    }
}

pub fn hahn_decay_curve(
    taus_ns: &[f64],
    relax: &RelaxationParams,
    eseem: Option<&EseemModel>,
) -> Result<Trace> {
    HahnDecay {
        eseem,
        ..Default::default()
    }
    .curve(taus_ns, relax)
}

/// `M∞·(1 − 2f·exp(−T/T1))·exp(−2τ/T2)` on `recovery_ns`.
pub fn inversion_recovery_curve(
    recovery_ns: &[f64],
    relax: &RelaxationParams,
    tau_fixed_ns: f64,
    efficiency: f64,
    m_inf: f64,
) -> Result<Trace> {
    relax.validate()?;
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(invalid(format!(
            "inversion efficiency must lie in (0, 1], got {efficiency}"
        )));
    }
    if !(tau_fixed_ns >= 0.0) {
        return Err(invalid("tau must be >= 0"));
    }
    if recovery_ns.iter().any(|&t| !(t >= 0.0)) || recovery_ns.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid(
            "recovery delays must be ascending and non-negative",
        ));
    }
    let echo = (-2.0 * tau_fixed_ns / relax.t2_ns).exp();
    let amp = recovery_ns
        .iter()
        .map(|&t| m_inf * (1.0 - 2.0 * efficiency * (-t / relax.t1_ns).exp()) * echo)
        .collect();
    Ok(Trace::new(AxisKind::RecoveryNs, recovery_ns.to_vec(), amp)?
        .with_meta("T1_ns", relax.t1_ns)
        .with_meta("tau_ns", tau_fixed_ns))
}

/// Transverse magnitude left by the pulse alone, starting from equilibrium.
pub fn transverse_excitation(pulse: &Pulse, detuning_mhz: f64) -> f64 {
    apply_pulse(Bloch::EQUILIBRIUM, pulse, detuning_mhz).transverse()
}

/// Echo-detected excitation of a packet at `detuning_mhz`.
///
/// For flip angles up to π/2 the pulse is followed by a π pulse at the same
/// nutation frequency and the refocused echo magnitude is returned: the
/// transverse magnitude after the first pulse times `n⊥²·sin²(β/2)` of the
/// refocusing rotation. For larger angles the pulse itself inverts, and the
/// inverted fraction `(1 − z)/2` is returned.
pub fn excitation(pulse: &Pulse, detuning_mhz: f64) -> f64 {
    if pulse.angle.abs() > FRAC_PI_2 + 1e-12 {
        return (1.0 - apply_pulse(Bloch::EQUILIBRIUM, pulse, detuning_mhz).z) / 2.0;
    }
    let refocus = Pulse {
        duration_ns: pulse.duration_ns * PI / pulse.angle.abs(),
        angle: PI,
        phase: pulse.phase,
    };
    let (axis, beta) = rotation_axis_angle(&refocus, detuning_mhz, refocus.duration_ns);
    let n_perp2 = axis[0] * axis[0] + axis[1] * axis[1];
    transverse_excitation(pulse, detuning_mhz) * n_perp2 * (beta / 2.0).sin().powi(2)
}

fn fwhm_mhz(pulse: &Pulse, profile: impl Fn(&Pulse, f64) -> f64) -> f64 {
    let half = profile(pulse, 0.0) / 2.0;
    let step = pulse.rabi_mhz().abs().max(1e-9) / 200.0;
    let mut lo = 0.0;
    let mut hi = step;
    while profile(pulse, hi) > half {
        lo = hi;
        hi += step;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if profile(pulse, mid) > half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + hi
}

/// Full width at half maximum of [`excitation`], in MHz.
pub fn excitation_fwhm_mhz(pulse: &Pulse) -> f64 {
    fwhm_mhz(pulse, excitation)
}

/// Full width at half maximum of [`transverse_excitation`], in MHz.
pub fn transverse_fwhm_mhz(pulse: &Pulse) -> f64 {
    fwhm_mhz(pulse, transverse_excitation)
}

/// Field window excited by the pulse (FWHM of [`excitation`]) in mT.
pub fn excitation_profile(pulse: &Pulse, g: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(invalid("g must be positive"));
    }
    let mhz_per_mt = g * BOHR_MAGNETON_GHZ_PER_T;
    Ok(excitation_fwhm_mhz(pulse) / mhz_per_mt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn resonant_half_pi_rotates_about_x() {
        let u = pulse_propagator(&Pulse::half_pi(64.0).unwrap(), 0.0);
        let s = 1.0 / 2f64.sqrt();
        // |↑> → (|↑> − i|↓>)/√2
        assert!((u[(0, 0)] - Complex64::new(s, 0.0)).norm() < 1e-15);
        assert!((u[(1, 0)] - Complex64::new(0.0, -s)).norm() < 1e-15);
        let b = apply_pulse(Bloch::EQUILIBRIUM, &Pulse::half_pi(64.0).unwrap(), 0.0);
        assert!(close(b.y, -1.0, 1e-15) && close(b.z, 0.0, 1e-15));
    }

    #[test]
    fn resonant_pi_inverts() {
        let u = pulse_propagator(&Pulse::pi(128.0).unwrap(), 0.0);
        assert!(close(u[(1, 0)].norm_sqr(), 1.0, 1e-15));
    }

    #[test]
    fn detuned_pi_follows_rabi_formula() {
        let p = Pulse::pi(32.0).unwrap();
        let w1 = TAU * p.rabi_mhz();
        let dw = w1;
        let omega = (w1 * w1 + dw * dw).sqrt();
        let t = 32.0e-3;
        let want = w1 * w1 / (omega * omega) * (omega * t / 2.0).sin().powi(2);
        let u = pulse_propagator(&p, p.rabi_mhz());
        assert!(close(u[(1, 0)].norm_sqr(), want, 1e-14));
        assert!(close(want, 0.5 * (PI / 2f64.sqrt()).sin().powi(2), 1e-14));
    }

    #[test]
    fn rodrigues_matches_su2_rotation() {
        let p = Pulse::new(40.0, 1.3, 0.7).unwrap();
        for det in [-12.0, 0.0, 3.3, 25.0] {
            let r = bloch_rotation(&pulse_propagator(&p, det));
            let v = Bloch::new(0.3, -0.5, 0.6);
            let got = apply_pulse(v, &p, det);
            let want = [
                r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
                r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
                r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
            ];
            assert!(
                close(got.x, want[0], 1e-13)
                    && close(got.y, want[1], 1e-13)
                    && close(got.z, want[2], 1e-13)
            );
        }
    }

    #[test]
    fn full_manifold_propagator() {
        let p = Pulse::new(20.0, 1.1, 0.4).unwrap();
        for two_s in 1..=5 {
            let u = spin_pulse_propagator(SpinQuantum::from_twice(two_s).unwrap(), &p, 7.5);
            let n = u.nrows();
            assert!(linalg::max_abs(&(u.adjoint() * &u - CMatrix::identity(n, n))) < 1e-12);
        }
        let half = spin_pulse_propagator(SpinQuantum::HALF, &p, 7.5);
        let two = pulse_propagator(&p, 7.5);
        for r in 0..2 {
            for c in 0..2 {
                assert!((half[(r, c)] - two[(r, c)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn free_evolution_examples() {
        let r = RelaxationParams::new(1000.0, 379.0).unwrap();
        let s = free_evolution(Bloch::new(1.0, 0.0, 0.0), 379.0, 0.0, &r);
        assert!(close(s.x, (-1f64).exp(), 1e-15) && s.y == 0.0);
        let s = free_evolution(Bloch::new(0.0, 0.0, -1.0), 1e9, 0.0, &r);
        assert!(close(s.z, 1.0, 1e-15));
        let s = free_evolution(Bloch::new(0.0, 0.0, -1.0), 1000.0, 0.0, &r);
        assert!(close(s.z, 1.0 - 2.0 * (-1f64).exp(), 1e-15));
        assert!(close(s.z, 0.2642, 1e-4));
    }

    #[test]
    fn relaxation_bounds() {
        assert!(RelaxationParams::new(100.0, 379.0).is_err());
        assert!(RelaxationParams::new(189.5, 379.0).is_ok());
        assert!(RelaxationParams::new(10.0, 0.0).is_err());
        assert!(RelaxationParams::none().validate().is_ok());
    }

    #[test]
    fn single_spin_hahn_has_plain_t2_decay() {
        let r = RelaxationParams::new(1e6, 379.0).unwrap();
        let tau = 250.0;
        let seq =
            PulseSequence::hahn(Element::ideal_half_pi(), Element::ideal_pi(), tau, 0.0).unwrap();
        let echo = echo_amplitude(&seq, &DetuningEnsemble::single(), &r).unwrap();
        assert!(close(echo, (-2.0 * tau / 379.0).exp(), 1e-14));
        let tr = run_sequence(&seq, &DetuningEnsemble::single(), &r).unwrap();
        let k = tr.axis.iter().position(|&t| t == 2.0 * tau).unwrap();
        assert!(close(tr.amplitude[k], (-2.0 * tau / 379.0).exp(), 1e-14));
    }

    #[test]
    fn inversion_flips_the_echo() {
        let r = RelaxationParams::new(5000.0, 379.0).unwrap();
        let ens = DetuningEnsemble {
            sigma_mhz: 5.0,
            count: 50,
        };
        let hahn =
            PulseSequence::hahn(Element::ideal_half_pi(), Element::ideal_pi(), 300.0, 0.0).unwrap();
        let ir = PulseSequence::inversion_recovery(
            Element::ideal_pi(),
            0.0,
            Element::ideal_half_pi(),
            Element::ideal_pi(),
            300.0,
            0.0,
        )
        .unwrap();
        let a = echo_amplitude(&hahn, &ens, &r).unwrap();
        let b = echo_amplitude(&ir, &ens, &r).unwrap();
        assert!(close(b, -a, 1e-12), "{a} {b}");
    }

    #[test]
    fn finite_pulse_echo_refocuses_near_detection_centre() {
        let ens = DetuningEnsemble {
            sigma_mhz: 2.0,
            count: 200,
        };
        let seq = PulseSequence::hahn(
            Pulse::half_pi(16.0).unwrap().into(),
            Pulse::pi(32.0).unwrap().into(),
            400.0,
            0.0,
        )
        .unwrap();
        let tr = run_sequence(&seq, &ens, &RelaxationParams::none()).unwrap();
        let (start, _) = seq.acquisition_span();
        let (k, _) = tr
            .points()
            .enumerate()
            .filter(|(_, (t, _))| *t >= start)
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        let step = tr.axis[k + 1] - tr.axis[k];
        assert!((tr.axis[k] - seq.detection().centre_ns).abs() <= 2.0 * step + 2.0);
        assert!(echo_amplitude(&seq, &ens, &RelaxationParams::none()).unwrap() > 0.9);
    }

    #[test]
    fn sequence_validation() {
        assert!(PulseSequence::new(
            vec![Element::Delay { ns: 10.0 }],
            DetectionWindow {
                centre_ns: 5.0,
                width_ns: 0.0
            }
        )
        .is_err());
        assert!(PulseSequence::new(
            vec![Element::ideal_half_pi(), Element::Delay { ns: 10.0 }],
            DetectionWindow {
                centre_ns: 50.0,
                width_ns: 0.0
            }
        )
        .is_err());
        assert!(
            PulseSequence::hahn(Element::ideal_half_pi(), Element::ideal_pi(), 0.0, 0.0).is_err()
        );
        assert!(DetuningEnsemble {
            sigma_mhz: 1.0,
            count: 0
        }
        .detunings()
        .is_err());
    }

    #[test]
    fn ensemble_quantiles_are_symmetric() {
        let d = DetuningEnsemble {
            sigma_mhz: 5.0,
            count: 200,
        }
        .detunings()
        .unwrap();
        assert_eq!(d.len(), 200);
        assert!(d.iter().sum::<f64>().abs() < 1e-9);
        let var = d.iter().map(|x| x * x).sum::<f64>() / 200.0;
        assert!((var.sqrt() - 5.0).abs() < 0.1);
    }

    #[test]
    fn hahn_decay_examples() {
        let r = RelaxationParams::new(1e5, 379.0).unwrap();
        let tr = hahn_decay_curve(&[0.0, 189.5], &r, None).unwrap();
        assert_eq!(tr.amplitude[0], 1.0);
        assert!(close(tr.amplitude[1], (-1f64).exp(), 1e-15));
        let r2 = RelaxationParams::new(1e5, 2210.0).unwrap();
        assert_eq!(
            hahn_decay_curve(&[0.0], &r2, None).unwrap().amplitude[0],
            1.0
        );
        assert!(hahn_decay_curve(&[10.0, 5.0], &r, None).is_err());
    }

    #[test]
    fn proton_modulated_decay_period() {
        use crate::eseem::{Isotope, NuclearCoupling};
        let m = EseemModel::single(
            NuclearCoupling::custom(16.6 / 0.38988, 0.5, 0.3).unwrap(),
            0.38988,
        )
        .unwrap();
        let r = RelaxationParams::new(1e5, 379.0).unwrap();
        let taus = crate::trace::linspace(0.0, 600.0, 6001);
        let tr = hahn_decay_curve(&taus, &r, Some(&m)).unwrap();
        let ratio: Vec<f64> = tr
            .points()
            .map(|(t, a)| a / (-2.0 * t / 379.0).exp())
            .collect();
        // successive maxima of the modulation are one Larmor period apart
        let maxima: Vec<f64> = (1..ratio.len() - 1)
            .filter(|&k| ratio[k] > ratio[k - 1] && ratio[k] >= ratio[k + 1])
            .map(|k| taus[k])
            .collect();
        let period = (maxima[maxima.len() - 1] - maxima[0]) / (maxima.len() - 1) as f64;
        assert!(close(period, 1e3 / 16.6, 0.05), "{period}");
        assert!(close(period, 60.2, 0.1));
        let _ = Isotope::Proton;
    }

    #[test]
    fn inversion_recovery_examples() {
        let r = RelaxationParams::new(10_000.0, 379.0).unwrap();
        let tau: f64 = 200.0;
        let echo = (-2.0 * tau / 379.0).exp();
        let t_zero = 10_000.0 * 2f64.ln();
        let tr = inversion_recovery_curve(&[0.0, t_zero, 50_000.0], &r, tau, 1.0, 1.0).unwrap();
        assert!(close(tr.amplitude[0], -echo, 1e-15));
        assert!(tr.amplitude[1].abs() < 1e-15);
        assert!(tr.amplitude[2] >= 0.986 * echo);
        assert!(inversion_recovery_curve(&[0.0], &r, tau, 0.0, 1.0).is_err());
    }

    #[test]
    fn excitation_bandwidth_scales_inversely_with_duration() {
        let long = excitation_profile(&Pulse::half_pi(64.0).unwrap(), 1.9).unwrap();
        let short = excitation_profile(&Pulse::half_pi(16.0).unwrap(), 1.9).unwrap();
        assert!((short / long - 4.0).abs() < 0.2);
        assert!(long > 0.15 && long < 0.6, "{long}");
        let very_long = excitation_profile(&Pulse::half_pi(64_000.0).unwrap(), 2.0).unwrap();
        assert!(very_long < 1e-3);
        // the pair is narrower than the first pulse alone
        let p = Pulse::half_pi(64.0).unwrap();
        assert!(transverse_fwhm_mhz(&p) > 2.0 * excitation_fwhm_mhz(&p));
        // the refocusing π pulse sets the width, so it matches its own inversion width
        let pi = excitation_fwhm_mhz(&Pulse::pi(128.0).unwrap());
        assert!((pi / excitation_fwhm_mhz(&p) - 1.0).abs() < 0.05);
    }

    #[test]
    fn echo_excitation_matches_simulated_echo() {
        let p1 = Pulse::half_pi(64.0).unwrap();
        let p2 = Pulse::pi(128.0).unwrap();
        for det in [0.0, 1.5, 3.0, 6.0] {
            let seq = PulseSequence::hahn(p1.into(), p2.into(), 300.0, 0.0).unwrap();
            let mut s = apply_pulse(Bloch::EQUILIBRIUM, &p1, det);
            s = free_evolution(s, 300.0, det, &RelaxationParams::none());
            s = apply_pulse(s, &p2, det);
            let mut best: f64 = 0.0;
            let (start, end) = seq.acquisition_span();
            for k in 0..=4000 {
                let t = (end - start) * k as f64 / 4000.0;
                let e = free_evolution(s, t, det, &RelaxationParams::none());
                best = best.max(e.transverse());
            }
            // the echo magnitude is bounded below by the refocused part
            assert!(best + 1e-9 >= excitation(&p1, det), "{det}");
        }
    }

    #[test]
    fn pulse_json_uses_degrees() {
        let p: Pulse =
            serde_json::from_str(r#"{"duration_ns": 64, "flip_angle_deg": 90}"#).unwrap();
        assert!(close(p.angle(), FRAC_PI_2, 1e-15));
        assert!(close(p.rabi_mhz(), 1e3 / 256.0, 1e-12));
        assert!(
            serde_json::from_str::<Pulse>(r#"{"duration_ns": 0, "flip_angle_deg": 90}"#).is_err()
        );
    }

    proptest! {
        #[test]
        fn propagators_are_unitary(dur in 1.0f64..500.0, angle in -7.0f64..7.0,
                                   phase in 0.0f64..TAU, det in -100.0f64..100.0) {
            let u = pulse_propagator(&Pulse::new(dur, angle, phase).unwrap(), det);
            let e = u.adjoint() * u - Su2::identity();
            prop_assert!(e.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
        }

        #[test]
        fn bloch_norm_never_grows(t2 in 10.0f64..5000.0, extra in 0.0f64..5000.0,
                                  det in -20.0f64..20.0, tau in 1.0f64..2000.0) {
            let r = RelaxationParams::new(t2 / 2.0 + extra, t2).unwrap();
            let mut s = Bloch::EQUILIBRIUM;
            for p in [Pulse::half_pi(16.0).unwrap(), Pulse::pi(32.0).unwrap(), Pulse::new(10.0, 2.0, 1.0).unwrap()] {
                s = apply_pulse(s, &p, det);
                prop_assert!(s.norm() <= 1.0 + 1e-9);
                for k in 0..8 {
                    let e = free_evolution(s, tau * k as f64 / 8.0, det, &r);
                    prop_assert!(e.norm() <= 1.0 + 1e-9);
                }
                s = free_evolution(s, tau, det, &r);
            }
        }

        #[test]
        fn ideal_hahn_refocuses_any_ensemble(sigma in 0.0f64..50.0, count in 1usize..64, tau in 1.0f64..2000.0) {
            let seq = PulseSequence::hahn(Element::ideal_half_pi(), Element::ideal_pi(), tau, 0.0).unwrap();
            let e = echo_amplitude(&seq, &DetuningEnsemble { sigma_mhz: sigma, count }, &RelaxationParams::none()).unwrap();
            prop_assert!((e - 1.0).abs() < 1e-9);
        }
    }
}
