//! Least-squares estimation of relaxation, modulation and line parameters.
//!
//! All fits are unweighted unless per-point weights are supplied. Reported
//! uncertainties are the asymptotic ones, `σ_j² = s²·[(JᵀJ)⁻¹]_jj` with
//! `s² = Σr²/(N − p)`.

pub mod lm;
mod zfs;

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::powder::Spectrum;
use crate::trace::Trace;

use lm::{Bound, LmOptions, LmReport, Residuals};

pub use zfs::{fit_zfs_spectrum, ZfsFitOptions, ZfsGuess};

/// A parameter whose `σ/|value|` exceeds this is flagged.
pub const POORLY_CONSTRAINED_RATIO: f64 = 0.5;
/// `‖r‖/‖y‖` above this flags a fit as a poor description of the data.
pub const LARGE_RESIDUAL_RATIO: f64 = 0.1;

const FOUR_LN2: f64 = 4.0 * LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `A·exp(−2τ/T2)`
    MonoExponential,
    /// `A·exp(−2τ/T2)·(1 − (k/2)(1 − cos 2πντ) [− (k²/8)(1 − cos 4πντ)])`
    ModulatedDecay,
    /// `M∞·(1 − 2f·exp(−T/T1))`
    InversionRecovery,
    /// `a·exp(−4 ln2 (B − c)²/w²)`
    GaussianLine,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MonoExponential => "mono_exponential",
            ModelKind::ModulatedDecay => "modulated_decay",
            ModelKind::InversionRecovery => "inversion_recovery",
            ModelKind::GaussianLine => "gaussian_line",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::MonoExponential => &["A", "T2_ns"],
            ModelKind::ModulatedDecay => &["A", "T2_ns", "k", "nu_MHz"],
            ModelKind::InversionRecovery => &["M_inf", "f", "T1_ns"],
            ModelKind::GaussianLine => &["amplitude", "center_T", "fwhm_T"],
        }
    }

    fn default_bounds(self) -> Vec<Bound> {
        match self {
            ModelKind::MonoExponential => vec![Bound::FREE, Bound::positive()],
            ModelKind::ModulatedDecay => vec![
                Bound::FREE,
                Bound::positive(),
                Bound::new(0.0, 1.0),
                Bound::positive(),
            ],
            ModelKind::InversionRecovery => {
                vec![Bound::FREE, Bound::new(1e-6, 1.0), Bound::positive()]
            }
            ModelKind::GaussianLine => vec![Bound::FREE, Bound::FREE, Bound::positive()],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono_exponential" => Ok(ModelKind::MonoExponential),
            "modulated_decay" => Ok(ModelKind::ModulatedDecay),
            "inversion_recovery" => Ok(ModelKind::InversionRecovery),
            "gaussian_line" => Ok(ModelKind::GaussianLine),
            other => Err(invalid(format!("unknown fit model '{other}'"))),
        }
    }
}

/// A model together with its bounds and (optional) starting values.
#[derive(Debug, Clone, PartialEq)]
pub struct FitModel {
    kind: ModelKind,
    second_harmonic: bool,
    bounds: Vec<Bound>,
    initial: Option<Vec<f64>>,
}

impl FitModel {
    pub fn new(kind: ModelKind) -> Self {
        FitModel {
            kind,
            second_harmonic: false,
            bounds: kind.default_bounds(),
            initial: None,
        }
    }

    /// Include the `k²/8` second harmonic in the modulated decay.
    pub fn with_second_harmonic(mut self, on: bool) -> Self {
        self.second_harmonic = on;
        self
    }

    pub fn with_bounds(mut self, bounds: Vec<Bound>) -> Result<Self> {
        if bounds.len() != self.kind.param_names().len() {
            return Err(invalid("one bound per parameter required"));
        }
        if bounds
            .iter()
            .any(|b| b.lower.is_nan() || b.upper.is_nan() || b.lower > b.upper)
        {
            return Err(invalid("bounds must satisfy lower <= upper"));
        }
        self.bounds = bounds;
        self.check_initial()?;
        Ok(self)
    }

    /// Start from these values instead of the data-driven guess.
    pub fn with_initial(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.kind.param_names().len() {
            return Err(invalid("one initial value per parameter required"));
        }
        self.initial = Some(values);
        self.check_initial()?;
        Ok(self)
    }

    fn check_initial(&self) -> Result<()> {
        if let Some(init) = &self.initial {
            for ((v, b), name) in init.iter().zip(&self.bounds).zip(self.kind.param_names()) {
                if !v.is_finite() || !b.contains(*v) {
                    return Err(invalid(format!(
                        "initial {name} = {v} outside [{}, {}]",
                        b.lower, b.upper
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn eval(&self, x: f64, p: &[f64]) -> f64 {
        match self.kind {
            ModelKind::MonoExponential => p[0] * (-2.0 * x / p[1]).exp(),
            ModelKind::ModulatedDecay => {
                let phi = TAU * p[3] * x * 1e-3;
                p[0] * (-2.0 * x / p[1]).exp() * self.modulation(p[2], phi)
            }
            ModelKind::InversionRecovery => p[0] * (1.0 - 2.0 * p[1] * (-x / p[2]).exp()),
            ModelKind::GaussianLine => {
                let u = (x - p[1]) / p[2];
                p[0] * (-FOUR_LN2 * u * u).exp()
            }
        }
    }

    fn modulation(&self, k: f64, phi: f64) -> f64 {
        let h = if self.second_harmonic {
            k * k / 8.0
        } else {
            0.0
        };
        1.0 - 0.5 * k * (1.0 - phi.cos()) - h * (1.0 - (2.0 * phi).cos())
    }

    /// Analytic partial derivatives of [`FitModel::eval`].
    pub fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::MonoExponential => {
                let e = (-2.0 * x / p[1]).exp();
                out[0] = e;
                out[1] = p[0] * e * 2.0 * x / (p[1] * p[1]);
            }
            ModelKind::ModulatedDecay => {
                let (a, t2, k, nu) = (p[0], p[1], p[2], p[3]);
                let e = (-2.0 * x / t2).exp();
                let dphi = TAU * x * 1e-3;
                let phi = dphi * nu;
                let m = self.modulation(k, phi);
                let (h, dh) = if self.second_harmonic {
                    (k * k / 8.0, k / 4.0)
                } else {
                    (0.0, 0.0)
                };
                out[0] = e * m;
                out[1] = a * e * m * 2.0 * x / (t2 * t2);
                out[2] = a * e * (-0.5 * (1.0 - phi.cos()) - dh * (1.0 - (2.0 * phi).cos()));
                out[3] = a * e * (-0.5 * k * phi.sin() - 2.0 * h * (2.0 * phi).sin()) * dphi;
            }
            ModelKind::InversionRecovery => {
                let e = (-x / p[2]).exp();
                out[0] = 1.0 - 2.0 * p[1] * e;
                out[1] = -2.0 * p[0] * e;
                out[2] = -2.0 * p[0] * p[1] * e * x / (p[2] * p[2]);
            }
            ModelKind::GaussianLine => {
                let d = x - p[1];
                let g = (-FOUR_LN2 * d * d / (p[2] * p[2])).exp();
                out[0] = g;
                out[1] = p[0] * g * 2.0 * FOUR_LN2 * d / (p[2] * p[2]);
                out[2] = p[0] * g * 2.0 * FOUR_LN2 * d * d / p[2].powi(3);
            }
        }
    }

    /// Data-driven starting values, clamped into the bounds.
    pub fn initial_guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let guess = match self.kind {
            ModelKind::MonoExponential => {
                let t2 = one_over_e_t2(x, y);
                vec![y[0] * (2.0 * x[0] / t2).exp(), t2]
            }
            ModelKind::ModulatedDecay => modulated_guess(x, y),
            ModelKind::InversionRecovery => recovery_guess(x, y),
            ModelKind::GaussianLine => gaussian_guess(x, y),
        };
        guess
            .into_iter()
            .zip(&self.bounds)
            .map(|(v, b)| {
                let v = if v.is_finite() { v } else { 1.0 };
                v.max(b.lower).min(b.upper)
            })
            .collect()
    }
}

/// `T2` from the first abscissa where the trace drops below `y₀/e`,
/// falling back to a log-linear regression when it never does.
fn one_over_e_t2(x: &[f64], y: &[f64]) -> f64 {
    let target = y[0] / std::f64::consts::E;
    if y[0] > 0.0 {
        if let Some(i) = y.iter().position(|&v| v < target) {
            let span = x[i] - x[0];
            if span > 0.0 {
                return 2.0 * span;
            }
        }
    }
    log_linear_t2(x, y).unwrap_or(2.0 * (x[x.len() - 1] - x[0]).max(1.0))
}

/// Slope of `ln y` versus `x` over the positive samples, as `T2 = −2/slope`.
fn log_linear_t2(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(a, b)| (*a, b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -2.0 / slope)
}

/// Power `|Σ z·e^{−2πi f x}|²` of a possibly non-uniform trace at `f` (MHz).
fn dft_power(x: &[f64], z: &[f64], f_mhz: f64) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for (&t, &v) in x.iter().zip(z) {
        let (s, c) = (TAU * f_mhz * t * 1e-3).sin_cos();
        re += v * c;
        im -= v * s;
    }
    (re * re + im * im, (re * re + im * im).sqrt())
}

fn modulated_guess(x: &[f64], y: &[f64]) -> Vec<f64> {
    // the tail is mostly noise once the envelope has decayed
    let peak = y.iter().copied().fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(y).filter(|(_, v)| **v > 0.2 * peak).unzip();
    let t2 = log_linear_t2(&xs, &ys).unwrap_or_else(|| one_over_e_t2(x, y));
    let env: Vec<f64> = x.iter().map(|t| (-2.0 * t / t2).exp()).collect();
    let env_sum: f64 = env.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mean = y.iter().sum::<f64>() / env_sum;
    let z: Vec<f64> = y.iter().zip(&env).map(|(v, e)| v - mean * e).collect();

    let span = (x[x.len() - 1] - x[0]).max(f64::MIN_POSITIVE);
    let mut steps: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let dx = steps
        .get(steps.len() / 2)
        .copied()
        .unwrap_or(span)
        .max(f64::MIN_POSITIVE);
    let nyquist = 1e3 / (2.0 * dx);
    let resolution = 1e3 / (8.0 * span);
    let f_min = 1e3 / span;
    let candidates: Vec<f64> = (0..)
        .map(|i| f_min + resolution * i as f64)
        .take_while(|f| *f <= nyquist)
        .collect();
    if candidates.is_empty() {
        return vec![mean, t2, 0.3, f_min];
    }
    let powers: Vec<f64> = candidates.iter().map(|&f| dft_power(x, &z, f).0).collect();
    let best = (0..powers.len())
        .max_by(|&a, &b| powers[a].total_cmp(&powers[b]))
        .unwrap_or(0);
    let mut nu = candidates[best];
    // prefer the fundamental when the peak found is its second harmonic
    let half = nu / 2.0;
    if half >= f_min {
        let support = candidates
            .iter()
            .zip(&powers)
            .filter(|(f, _)| (**f - half).abs() <= resolution)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        if support > 0.25 * powers[best] {
            nu = half;
        }
    }
    let amp = 2.0 * dft_power(x, &z, nu).1 / env_sum;
    let a = mean + amp;
    let k = if a != 0.0 {
        (2.0 * amp / a).clamp(0.01, 0.99)
    } else {
        0.3
    };
    vec![a, t2, k, nu]
}

fn recovery_guess(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m_inf = y
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .abs()
        .max(1e-12);
    let span = (x[x.len() - 1] - x[0]).max(1.0);
    let t1 = y
        .windows(2)
        .zip(x.windows(2))
        .find(|(w, _)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(w, t)| t[0] + (t[1] - t[0]) * (-w[0]) / (w[1] - w[0]))
        .map_or(span / 3.0, |t0| (t0 / LN_2).max(span * 1e-3));
    vec![m_inf, 0.9, t1]
}

fn gaussian_guess(x: &[f64], y: &[f64]) -> Vec<f64> {
    let (imax, &amax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trace");
    let half = amax / 2.0;
    let left = (0..imax)
        .rev()
        .find(|&i| y[i] < half)
        .map_or(x[0], |i| x[i]);
    let right = (imax..y.len())
        .find(|&i| y[i] < half)
        .map_or(x[x.len() - 1], |i| x[i]);
    let step = if x.len() > 1 {
        (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64
    } else {
        1.0
    };
    vec![amax, x[imax], (right - left).max(step)]
}

/// Options shared by the analytic fits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitOptions {
    pub lm: LmOptions,
    /// Per-point weights; residuals are scaled by `√w`.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    /// Non-finite uncertainties serialise as `null`.
    #[serde(deserialize_with = "nullable_values")]
    pub sigmas: BTreeMap<String, f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default)]
    pub flags: Vec<String>,
}

fn nullable_values<'de, D>(d: D) -> std::result::Result<BTreeMap<String, f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, Option<f64>>::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| (k, v.unwrap_or(f64::INFINITY)))
        .collect())
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.sigmas.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn has_flag(&self, prefix: &str) -> bool {
        self.flags.iter().any(|f| f.starts_with(prefix))
    }
}

struct CurveProblem<'a> {
    model: &'a FitModel,
    x: &'a [f64],
    y: &'a [f64],
    sqrt_w: Option<Vec<f64>>,
}

impl Residuals for CurveProblem<'_> {
    fn len(&self) -> usize {
        self.x.len()
    }

    fn eval(&self, p: &[f64], r: &mut [f64]) {
        for i in 0..self.x.len() {
            let w = self.sqrt_w.as_ref().map_or(1.0, |w| w[i]);
            r[i] = w * (self.y[i] - self.model.eval(self.x[i], p));
        }
    }

    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        let mut g = vec![0.0; p.len()];
        for i in 0..self.x.len() {
            let w = self.sqrt_w.as_ref().map_or(1.0, |w| w[i]);
            self.model.gradient(self.x[i], p, &mut g);
            for (c, v) in g.iter().enumerate() {
                j[(i, c)] = -w * v;
            }
        }
    }
}

/// Assemble a [`FitResult`] from an optimiser report.
pub(crate) fn summarise(name: &str, names: &[&str], rep: &LmReport, data_norm: f64) -> FitResult {
    let n = rep.residuals.len();
    let p = rep.params.len();
    let dof = n.saturating_sub(p).max(1) as f64;
    let s2 = rep.cost / dof;
    let jtj = rep.jacobian.transpose() * &rep.jacobian;
    let mut flags = Vec::new();
    let cov = jtj.clone().try_inverse();
    if cov.is_none() {
        flags.push("degenerate_jacobian".to_string());
    }
    let mut params = BTreeMap::new();
    let mut sigmas = BTreeMap::new();
    for (c, &name) in names.iter().enumerate() {
        let value = rep.params[c];
        let sigma = cov
            .as_ref()
            .map_or(f64::INFINITY, |m| (s2 * m[(c, c)]).max(0.0).sqrt());
        let sigma = if sigma.is_finite() {
            sigma
        } else {
            f64::INFINITY
        };
        params.insert(name.to_string(), value);
        sigmas.insert(name.to_string(), sigma);
        if sigma > POORLY_CONSTRAINED_RATIO * value.abs() {
            flags.push(format!("poorly_constrained:{name}"));
        }
        if rep.at_bound[c] {
            flags.push(format!("at_bound:{name}"));
        }
    }
    let residual_norm = rep.cost.sqrt();
    if data_norm > 0.0 && residual_norm > LARGE_RESIDUAL_RATIO * data_norm {
        flags.push("large_residual".to_string());
    }
    match rep.termination {
        lm::Termination::MaxIterations => flags.push("max_iterations".to_string()),
        lm::Termination::Degenerate if cov.is_some() => {
            flags.push("degenerate_jacobian".to_string())
        }
        _ => {}
    }
    FitResult {
        model: name.to_string(),
        params,
        sigmas,
        residual_norm,
        converged: rep.converged,
        iterations: rep.iterations,
        flags,
    }
}

fn check_data(x: &[f64], y: &[f64], n_params: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("abscissa and amplitude lengths differ"));
    }
    if x.len() < n_params + 1 {
        return Err(invalid(format!(
            "need at least {} points to fit {} parameters, got {}",
            n_params + 1,
            n_params,
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("data contain non-finite values"));
    }
    Ok(())
}

/// Fit `model` to the samples `(x, y)`.
pub fn fit_xy(model: &FitModel, x: &[f64], y: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let names = model.kind.param_names();
    check_data(x, y, names.len())?;
    let sqrt_w = match &opts.weights {
        Some(w) if w.len() != x.len() => return Err(invalid("one weight per point required")),
        Some(w) if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) => {
            return Err(invalid("weights must be finite and non-negative"))
        }
        Some(w) => Some(w.iter().map(|v| v.sqrt()).collect::<Vec<_>>()),
        None => None,
    };
    let p0 = match &model.initial {
        Some(v) => v.clone(),
        None => model.initial_guess(x, y),
    };
    let problem = CurveProblem {
        model,
        x,
        y,
        sqrt_w,
    };
    let data_norm = match &problem.sqrt_w {
        Some(w) => y
            .iter()
            .zip(w)
            .map(|(v, s)| (v * s).powi(2))
            .sum::<f64>()
            .sqrt(),
        None => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    // an exact model stalls on roundoff rather than reaching zero
    let lm_opts = lm::LmOptions {
        cost_floor: opts.lm.cost_floor.max((1e-12 * data_norm).powi(2)),
        ..opts.lm
    };
    let rep = lm::minimize(&problem, &p0, &model.bounds, &lm_opts);
    Ok(summarise(model.kind.name(), names, &rep, data_norm))
}

pub fn fit(model: &FitModel, trace: &Trace, opts: &FitOptions) -> Result<FitResult> {
    fit_xy(model, &trace.axis, &trace.amplitude, opts)
}

/// Inversion-recovery fit; `τ_fixed` is recorded but absorbed into `M∞`.
pub fn fit_inversion_recovery(trace: &Trace, tau_fixed_ns: f64) -> Result<FitResult> {
    fit_inversion_recovery_with(trace, tau_fixed_ns, &FitOptions::default())
}

pub fn fit_inversion_recovery_with(
    trace: &Trace,
    tau_fixed_ns: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(tau_fixed_ns >= 0.0) {
        return Err(invalid("tau must be >= 0"));
    }
    let mut res = fit(&FitModel::new(ModelKind::InversionRecovery), trace, opts)?;
    res.params.insert("tau_fixed_ns".into(), tau_fixed_ns);
    Ok(res)
}

/// Zero crossing `T1·ln(2f)` of a fitted recovery curve.
pub fn recovery_zero_crossing(res: &FitResult) -> f64 {
    res.param("T1_ns") * (2.0 * res.param("f")).ln()
}

pub fn fit_gaussian_line(spectrum: &Spectrum) -> Result<FitResult> {
    fit_xy(
        &FitModel::new(ModelKind::GaussianLine),
        &spectrum.field_axis,
        &spectrum.amplitude,
        &FitOptions::default(),
    )
}
