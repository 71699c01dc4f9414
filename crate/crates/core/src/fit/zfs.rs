//! Fit of `g`, `D`, `E` and the line width to an echo-detected spectrum,
//! with the powder simulation as forward model.
//!
//! `E` is carried as `ρ = 3|E|/|D| ∈ [0, 1]`, which keeps the rhombicity
//! constraint a simple box bound. The sign of `E` does not change a powder
//! spectrum, so the reported `E` is non-negative.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{self, Bound, LmOptions, Residuals};
use super::{summarise, FitResult, LARGE_RESIDUAL_RATIO};
use crate::error::{invalid, Result};
use crate::powder::{
    echo_detected_spectrum, GridScheme, OrientationGrid, SearchOptions, Spectrum, SpectrumParams,
};
use crate::spin::{SpinQuantum, SpinSystem};

/// Starting point for [`fit_zfs_spectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZfsGuess {
    #[serde(rename = "S")]
    pub spin: SpinQuantum,
    pub g: f64,
    #[serde(rename = "D_GHz")]
    pub d_ghz: f64,
    #[serde(rename = "E_GHz")]
    pub e_ghz: f64,
    pub sigma_t: f64,
}

impl ZfsGuess {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) {
            return Err(invalid("g must be positive"));
        }
        if !(self.d_ghz.abs() > 0.0 && self.d_ghz.is_finite()) {
            return Err(invalid("D must be non-zero to fit a zero-field splitting"));
        }
        if !(self.e_ghz.abs() <= self.d_ghz.abs() / 3.0) {
            return Err(invalid(format!(
                "initial |E| = {} GHz exceeds |D|/3 = {} GHz",
                self.e_ghz.abs(),
                self.d_ghz.abs() / 3.0
            )));
        }
        if !(self.sigma_t > 0.0 && self.sigma_t.is_finite()) {
            return Err(invalid("initial line width must be positive"));
        }
        if self.spin.twice() < 2 {
            return Err(invalid("zero-field splitting needs S >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZfsFitOptions {
    pub grid: OrientationGrid,
    pub search: SearchOptions,
    pub lm: LmOptions,
    /// Number of starts, the first at the guess and the rest perturbed.
    pub starts: usize,
}

impl Default for ZfsFitOptions {
    fn default() -> Self {
        ZfsFitOptions {
            grid: OrientationGrid::new(20, GridScheme::Spiral).expect("valid grid"),
            search: SearchOptions {
                mesh_points: 400,
                ..SearchOptions::default()
            },
            lm: LmOptions {
                max_iter: 30,
                ftol: 1e-10,
                xtol: 1e-8,
                accept_gtol: 1e-3,
                ..LmOptions::default()
            },
            starts: 5,
        }
    }
}

/// Relative multipliers on `(g, D, ρ)` for the perturbed starts.
const PERTURBATIONS: [(f64, f64, f64); 4] = [
    (1.0, 1.05, 0.9),
    (1.0, 0.95, 1.1),
    (1.01, 1.1, 1.0),
    (0.99, 0.9, 1.0),
];

const NAMES: [&str; 5] = ["g", "D_GHz", "E_GHz", "sigma_T", "scale"];

struct ZfsProblem<'a> {
    target: &'a Spectrum,
    spin: SpinQuantum,
    mw_ghz: f64,
    opts: &'a ZfsFitOptions,
    d_sign: f64,
}

impl ZfsProblem<'_> {
    fn simulate(&self, p: &[f64]) -> Option<Spectrum> {
        let d = self.d_sign * p[1].abs();
        let e = p[2] * p[1].abs() / 3.0;
        let sys = SpinSystem::new(self.spin, p[0], d, e).ok()?;
        let params = SpectrumParams {
            search: self.opts.search,
            ..SpectrumParams::gaussian(self.mw_ghz, p[3])
        };
        echo_detected_spectrum(&sys, &self.opts.grid, &self.target.field_axis, &params).ok()
    }
}

impl Residuals for ZfsProblem<'_> {
    fn len(&self) -> usize {
        self.target.len()
    }

    fn eval(&self, p: &[f64], r: &mut [f64]) {
        match self.simulate(p) {
            Some(s) => {
                for (k, v) in r.iter_mut().enumerate() {
                    *v = self.target.amplitude[k] - p[4] * s.amplitude[k];
                }
            }
            None => r.fill(f64::INFINITY),
        }
    }

    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        let mut r0 = vec![0.0; self.len()];
        self.eval(p, &mut r0);
        lm::forward_difference(self, p, &r0, j, 1e-5);
    }
}

/// Fit `g`, `D`, `E`, `σ` (and an overall scale) of an `S ≥ 1` powder
/// spectrum. Up to `opts.starts` starts are tried until one converges with
/// a small residual; the best is returned.
pub fn fit_zfs_spectrum(
    target: &Spectrum,
    guess: &ZfsGuess,
    mw_ghz: f64,
    opts: &ZfsFitOptions,
) -> Result<FitResult> {
    guess.validate()?;
    if target.len() < NAMES.len() + 1 {
        return Err(invalid("spectrum too short to fit"));
    }
    if opts.starts == 0 {
        return Err(invalid("at least one start required"));
    }
    let problem = ZfsProblem {
        target,
        spin: guess.spin,
        mw_ghz,
        opts,
        d_sign: guess.d_ghz.signum(),
    };
    let bounds = [
        Bound::positive(),
        Bound::positive(),
        Bound::new(0.0, 1.0),
        Bound::positive(),
        Bound::FREE,
    ];
    let peak = target.amplitude.iter().cloned().fold(0.0, f64::max);
    let rho0 = 3.0 * guess.e_ghz.abs() / guess.d_ghz.abs();
    let base = [
        guess.g,
        guess.d_ghz.abs(),
        rho0,
        guess.sigma_t,
        if peak > 0.0 { peak } else { 1.0 },
    ];
    let data_norm = target.amplitude.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut best: Option<lm::LmReport> = None;
    for s in 0..opts.starts {
        let p0 = if s == 0 {
            base.to_vec()
        } else {
            let (fg, fd, fr) = PERTURBATIONS[(s - 1) % PERTURBATIONS.len()];
            vec![
                base[0] * fg,
                base[1] * fd,
                (base[2] * fr).min(1.0),
                base[3],
                base[4],
            ]
        };
        let lm_opts = LmOptions {
            cost_floor: opts.lm.cost_floor.max((1e-12 * data_norm).powi(2)),
            ..opts.lm
        };
        let rep = lm::minimize(&problem, &p0, &bounds, &lm_opts);
        let good = rep.converged && rep.cost.sqrt() <= LARGE_RESIDUAL_RATIO * data_norm;
        if best.as_ref().is_none_or(|b| rep.cost < b.cost) {
            best = Some(rep);
        }
        if good {
            break;
        }
    }
    let mut rep = best.expect("at least one start");
    // report E rather than ρ
    let rho = rep.params[2];
    let d = rep.params[1];
    rep.params[1] = problem.d_sign * d;
    rep.params[2] = rho * d / 3.0;
    let mut j = rep.jacobian.clone();
    // chain rule for (D, ρ) → (D, E): ρ = 3E/D
    for r in 0..j.nrows() {
        let dr_drho = j[(r, 2)];
        let dr_dd = j[(r, 1)];
        j[(r, 2)] = dr_drho * 3.0 / d;
        j[(r, 1)] = problem.d_sign * (dr_dd - dr_drho * rho / d);
    }
    rep.jacobian = j;
    let mut res = summarise("zfs_spectrum", &NAMES, &rep, data_norm);
    res.params.insert("mw_GHz".into(), mw_ghz);
    Ok(res)
}
