//! Powder averaging and echo-detected field-sweep spectra.
//!
//! For every orientation the level gaps are sampled on a uniform field mesh,
//! each sign change of `gap − ν_mw` is bisected to a resonance field, and the
//! transition intensity there is evaluated from the full eigensystem. The
//! spectrum is the weighted sum of line shapes centred on those fields.

mod grid;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN_GHZ_PER_K, DEFAULT_MW_GHZ};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::spin::{self, HamiltonianPencil, Orientation, SpinOperators, SpinSystem};
use crate::trace::{AxisKind, Trace};

pub use grid::{make_grid, GridScheme, OrientationGrid};

pub const DEFAULT_MESH_POINTS: usize = 2000;
pub const DEFAULT_ROOT_TOL_T: f64 = 1e-7;

/// Gaussian line shapes are truncated beyond this many standard deviations.
const GAUSSIAN_CUTOFF_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lineshape {
    #[default]
    Gaussian,
    /// Lorentzian with the same FWHM as the Gaussian of the given σ.
    Lorentzian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub mesh_points: usize,
    pub root_tol_t: f64,
    /// Weight intensities by thermal population differences at this
    /// temperature; `None` treats the spectrum as a pure excitation profile.
    pub temperature_k: Option<f64>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            mesh_points: DEFAULT_MESH_POINTS,
            root_tol_t: DEFAULT_ROOT_TOL_T,
            temperature_k: None,
        }
    }
}

impl SearchOptions {
    fn validate(&self) -> Result<()> {
        if self.mesh_points < 2 {
            return Err(invalid("field mesh needs at least 2 points"));
        }
        if !(self.root_tol_t > 0.0) {
            return Err(invalid("root tolerance must be positive"));
        }
        if let Some(t) = self.temperature_k {
            if !(t > 0.0) {
                return Err(invalid("temperature must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resonance {
    pub field_t: f64,
    pub intensity: f64,
    pub lower: usize,
    pub upper: usize,
}

/// Reusable per-orientation resonance search.
struct Searcher<'a> {
    sys: &'a SpinSystem,
    ops: &'a SpinOperators,
    mw_ghz: f64,
    mesh: Vec<f64>,
    opts: SearchOptions,
}

impl Searcher<'_> {
    fn run(&self, dir: &Orientation, levels: &mut Vec<f64>) -> Vec<Resonance> {
        let pencil = HamiltonianPencil::new(self.sys, self.ops, dir);
        let n = self.sys.dim();
        levels.resize(self.mesh.len() * n, 0.0);
        for (k, &b) in self.mesh.iter().enumerate() {
            pencil.eigenvalues_into(b, &mut levels[k * n..(k + 1) * n]);
        }

        let mut brackets = Vec::new();
        for (i, j) in spin::pairs(n) {
            let offset = |k: usize| levels[k * n + j] - levels[k * n + i] - self.mw_ghz;
            for k in 0..self.mesh.len() {
                let f0 = offset(k);
                if f0 == 0.0 {
                    brackets.push((i, j, self.mesh[k], self.mesh[k]));
                } else if k + 1 < self.mesh.len() && f0 * offset(k + 1) < 0.0 {
                    brackets.push((i, j, self.mesh[k], self.mesh[k + 1]));
                }
            }
        }
        if brackets.is_empty() {
            return Vec::new();
        }

        let transverse = self.ops.project(dir.transverse());
        let mut buf = vec![0.0; n];
        let mut out = Vec::with_capacity(brackets.len());
        for (i, j, lo, hi) in brackets {
            let b = self.bisect(&pencil, i, j, lo, hi, &mut buf);
            let es = linalg::eigh(&pencil.at(b)).expect("Hamiltonian is Hermitian by construction");
            let m = linalg::to_eigenbasis(&transverse, &es.vectors);
            let mut intensity = m[(i, j)].norm_sqr();
            if let Some(t) = self.opts.temperature_k {
                intensity *= population_difference(&es.values, i, j, t);
            }
            out.push(Resonance {
                field_t: b,
                intensity,
                lower: i,
                upper: j,
            });
        }
        out.sort_by(|a, b| a.field_t.total_cmp(&b.field_t));
        out
    }

    fn bisect(
        &self,
        pencil: &HamiltonianPencil,
        i: usize,
        j: usize,
        mut lo: f64,
        mut hi: f64,
        buf: &mut [f64],
    ) -> f64 {
        let mut offset = |b: f64| {
            pencil.eigenvalues_into(b, buf);
            buf[j] - buf[i] - self.mw_ghz
        };
        let mut f_lo = offset(lo);
        let mut f_hi = offset(hi);
        while hi - lo > self.opts.root_tol_t {
            let mid = 0.5 * (lo + hi);
            let f_mid = offset(mid);
            if f_mid == 0.0 {
                return mid;
            }
            if (f_mid < 0.0) == (f_lo < 0.0) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
                f_hi = f_mid;
            }
        }
        // secant through the final bracket keeps the field smooth in the parameters
        if f_hi != f_lo && f_lo * f_hi < 0.0 {
            lo - f_lo * (hi - lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        }
    }
}

fn population_difference(levels: &[f64], i: usize, j: usize, temperature_k: f64) -> f64 {
    let kt = BOLTZMANN_GHZ_PER_K * temperature_k;
    let ground = levels[0];
    let boltz: Vec<f64> = levels.iter().map(|e| (-(e - ground) / kt).exp()).collect();
    let z: f64 = boltz.iter().sum();
    (boltz[i] - boltz[j]) / z
}

fn check_search_inputs(mw_ghz: f64, range: (f64, f64)) -> Result<()> {
    if !(mw_ghz > 0.0 && mw_ghz.is_finite()) {
        return Err(invalid(format!(
            "microwave frequency must be > 0, got {mw_ghz}"
        )));
    }
    let (lo, hi) = range;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid(format!("bad field range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Resonance fields in `range` for a single orientation, ascending.
pub fn resonance_fields(
    sys: &SpinSystem,
    dir: &Orientation,
    mw_ghz: f64,
    range: (f64, f64),
    opts: &SearchOptions,
) -> Result<Vec<Resonance>> {
    check_search_inputs(mw_ghz, range)?;
    opts.validate()?;
    let ops = SpinOperators::new(sys.spin());
    let searcher = Searcher {
        sys,
        ops: &ops,
        mw_ghz,
        mesh: crate::trace::linspace(range.0, range.1, opts.mesh_points),
        opts: *opts,
    };
    Ok(searcher.run(dir, &mut Vec::new()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub mw_ghz: f64,
    pub grid_points: usize,
    pub sigma_t: f64,
    pub lineshape: Lineshape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub field_axis: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.field_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field_axis.is_empty()
    }

    pub fn to_trace(&self) -> Trace {
        let lineshape = match self.meta.lineshape {
            Lineshape::Gaussian => "gaussian",
            Lineshape::Lorentzian => "lorentzian",
        };
        Trace {
            kind: AxisKind::FieldT,
            axis: self.field_axis.clone(),
            amplitude: self.amplitude.clone(),
            meta: BTreeMap::new(),
        }
        .with_meta("mw_GHz", self.meta.mw_ghz)
        .with_meta("grid_points", self.meta.grid_points)
        .with_meta("sigma_T", self.meta.sigma_t)
        .with_meta("lineshape", lineshape)
    }

    /// Rebuild from a field trace; missing metadata falls back to defaults.
    pub fn from_trace(t: &Trace) -> Result<Spectrum> {
        if t.kind != AxisKind::FieldT {
            return Err(invalid(format!(
                "expected a field_T trace, got {}",
                t.kind.label()
            )));
        }
        if t.axis.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("spectrum axis must be strictly ascending"));
        }
        let num = |key: &str, default: f64| -> Result<f64> {
            t.meta.get(key).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| Error::Parse(format!("bad {key} '{v}'")))
            })
        };
        let lineshape = match t.meta.get("lineshape").map(String::as_str) {
            None | Some("gaussian") => Lineshape::Gaussian,
            Some("lorentzian") => Lineshape::Lorentzian,
            Some(other) => return Err(Error::Parse(format!("unknown lineshape '{other}'"))),
        };
        Ok(Spectrum {
            field_axis: t.axis.clone(),
            amplitude: t.amplitude.clone(),
            meta: SpectrumMeta {
                mw_ghz: num("mw_GHz", DEFAULT_MW_GHZ)?,
                grid_points: num("grid_points", 0.0)? as usize,
                sigma_t: num("sigma_T", 0.0)?,
                lineshape,
            },
        })
    }

    /// Field positions of the `count` local maxima with the largest
    /// topographic prominence, most prominent first.
    pub fn prominent_maxima(&self, count: usize) -> Vec<f64> {
        let mut peaks = self.peak_prominences();
        peaks.sort_by(|x, y| y.1.total_cmp(&x.1));
        peaks.into_iter().take(count).map(|p| p.0).collect()
    }

    /// Positions of the `count` strongest spectral features (peaks and
    /// shoulders), found as prominence-ranked maxima of the negative second
    /// derivative of the amplitude.
    pub fn prominent_features(&self, count: usize) -> Vec<f64> {
        let a = &self.amplitude;
        if a.len() < 3 {
            return Vec::new();
        }
        let curvature: Vec<f64> = (0..a.len())
            .map(|k| {
                if k == 0 || k + 1 == a.len() {
                    0.0
                } else {
                    -(a[k + 1] - 2.0 * a[k] + a[k - 1])
                }
            })
            .collect();
        let curved = Spectrum {
            field_axis: self.field_axis.clone(),
            amplitude: curvature,
            meta: self.meta.clone(),
        };
        curved.prominent_maxima(count)
    }

    /// `(field, prominence)` for every interior local maximum. Prominence is
    /// the height above the higher of the two minima separating the peak
    /// from taller terrain on either side.
    pub fn peak_prominences(&self) -> Vec<(f64, f64)> {
        let a = &self.amplitude;
        let n = a.len();
        let mut out = Vec::new();
        for k in 1..n.saturating_sub(1) {
            if !(a[k] > a[k - 1] && a[k] >= a[k + 1]) {
                continue;
            }
            let mut left_min = a[k];
            for &v in a[..k].iter().rev() {
                if v > a[k] {
                    break;
                }
                left_min = left_min.min(v);
            }
            let mut right_min = a[k];
            for &v in &a[k + 1..] {
                if v > a[k] {
                    break;
                }
                right_min = right_min.min(v);
            }
            out.push((self.field_axis[k], a[k] - left_min.max(right_min)));
        }
        out
    }
}

/// Parameters for [`echo_detected_spectrum`] beyond the spin system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumParams {
    pub mw_ghz: f64,
    /// Gaussian standard deviation in tesla.
    pub sigma_t: f64,
    pub lineshape: Lineshape,
    pub search: SearchOptions,
}

impl SpectrumParams {
    pub fn gaussian(mw_ghz: f64, sigma_t: f64) -> Self {
        SpectrumParams {
            mw_ghz,
            sigma_t,
            lineshape: Lineshape::Gaussian,
            search: SearchOptions::default(),
        }
    }
}

fn check_axis(axis: &[f64]) -> Result<f64> {
    if axis.len() < 2 {
        return Err(invalid("field axis needs at least 2 points"));
    }
    let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if !(step > 0.0) || axis[0] < 0.0 {
        return Err(invalid("field axis must be ascending and non-negative"));
    }
    for (k, &b) in axis.iter().enumerate() {
        if (b - (axis[0] + step * k as f64)).abs() > 1e-9 * step.max(b.abs()) + 1e-6 * step {
            return Err(invalid("field axis must be uniform"));
        }
    }
    Ok(step)
}

/// Powder-averaged echo-detected spectrum, peak-normalised to 1.
///
/// The per-orientation work runs in parallel but contributions are summed in
/// grid order, so the result does not depend on the number of threads.
pub fn echo_detected_spectrum(
    sys: &SpinSystem,
    grid: &OrientationGrid,
    axis: &[f64],
    params: &SpectrumParams,
) -> Result<Spectrum> {
    let step = check_axis(axis)?;
    if !(params.sigma_t > 0.0 && params.sigma_t.is_finite()) {
        return Err(invalid(format!(
            "broadening must be > 0 T, got {}",
            params.sigma_t
        )));
    }
    let reach = GAUSSIAN_CUTOFF_SIGMAS * params.sigma_t;
    let range = ((axis[0] - reach).max(0.0), axis[axis.len() - 1] + reach);
    check_search_inputs(params.mw_ghz, range)?;
    params.search.validate()?;

    let ops = SpinOperators::new(sys.spin());
    let searcher = Searcher {
        sys,
        ops: &ops,
        mw_ghz: params.mw_ghz,
        mesh: crate::trace::linspace(range.0, range.1, params.search.mesh_points),
        opts: params.search,
    };

    let per_orientation: Vec<Vec<Resonance>> = grid
        .points()
        .par_iter()
        .map_init(Vec::new, |levels, (dir, _)| searcher.run(dir, levels))
        .collect();

    let mut amplitude = vec![0.0; axis.len()];
    let shape = LineKernel::new(params.lineshape, params.sigma_t);
    for ((_, weight), resonances) in grid.points().iter().zip(&per_orientation) {
        for r in resonances {
            let w = weight * r.intensity;
            if w == 0.0 {
                continue;
            }
            let (k0, k1) = match params.lineshape {
                Lineshape::Gaussian => {
                    let lo = ((r.field_t - reach - axis[0]) / step).floor().max(0.0) as usize;
                    let hi = (((r.field_t + reach - axis[0]) / step).ceil().max(0.0) as usize)
                        .min(axis.len() - 1);
                    (lo, hi)
                }
                Lineshape::Lorentzian => (0, axis.len() - 1),
            };
            if k0 > k1 {
                continue;
            }
            for k in k0..=k1 {
                amplitude[k] += w * shape.eval(axis[k] - r.field_t);
            }
        }
    }
    let peak = amplitude.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        for a in &mut amplitude {
            *a /= peak;
        }
    }
    Ok(Spectrum {
        field_axis: axis.to_vec(),
        amplitude,
        meta: SpectrumMeta {
            mw_ghz: params.mw_ghz,
            grid_points: grid.len(),
            sigma_t: params.sigma_t,
            lineshape: params.lineshape,
        },
    })
}

struct LineKernel {
    shape: Lineshape,
    sigma: f64,
    hwhm: f64,
}

impl LineKernel {
    fn new(shape: Lineshape, sigma: f64) -> Self {
        LineKernel {
            shape,
            sigma,
            hwhm: sigma * (2.0 * std::f64::consts::LN_2).sqrt(),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self.shape {
            Lineshape::Gaussian => {
                let u = x / self.sigma;
                (-0.5 * u * u).exp()
            }
            Lineshape::Lorentzian => {
                let u = x / self.hwhm;
                1.0 / (1.0 + u * u)
            }
        }
    }
}

/// `h·ν / (g·μB)` in tesla.
pub fn resonance_field_isotropic(g: f64, mw_ghz: f64) -> f64 {
    mw_ghz / (g * crate::constants::BOHR_MAGNETON_GHZ_PER_T)
}
