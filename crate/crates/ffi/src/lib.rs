//! C ABI over the `spinecho` library.
//!
//! Every fallible call returns a [`SpinechoStatus`]; on failure the message
//! is available from [`spinecho_last_error_message`] on the same thread.
//! Objects are opaque handles that must be released with their `_free`
//! function. Strings returned by the library are released with
//! [`spinecho_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use spinecho::calc::{self, DilutionSpec};
use spinecho::eseem::{EseemModel, NuclearCoupling};
use spinecho::fit::{self, FitModel, FitOptions, FitResult, ModelKind};
use spinecho::powder::{
    echo_detected_spectrum, GridScheme, OrientationGrid, Spectrum, SpectrumParams,
};
use spinecho::pulse::{HahnDecay, RelaxationParams};
use spinecho::spin::{SpinQuantum, SpinSystem};
use spinecho::trace::{linspace, AxisKind, Trace};
use spinecho::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinechoStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Parse = 3,
    Io = 4,
    /// The fit ran but did not converge; the result handle is still set.
    NotConverged = 5,
    Panic = 6,
}

/// Decay model for [`spinecho_fit_decay`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinechoDecayModel {
    MonoExponential = 0,
    ModulatedDecay = 1,
}

/// Orientation grid for powder averages.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinechoGrid {
    /// Golden-angle spiral, `n²` points.
    Spiral = 0,
    /// Gauss-Legendre in cos θ times `n` uniform φ values.
    Product = 1,
}

pub struct SpinechoSystem(SpinSystem);
pub struct SpinechoSpectrum(Spectrum);
pub struct SpinechoFitResult(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: Error) -> SpinechoStatus {
    let code = match &e {
        Error::InvalidInput(_) | Error::NotHermitian(_) => SpinechoStatus::InvalidArgument,
        Error::Parse(_) | Error::Json(_) => SpinechoStatus::Parse,
        Error::Io(_) => SpinechoStatus::Io,
    };
    set_error(e.to_string());
    code
}

fn null(what: &str) -> SpinechoStatus {
    set_error(format!("{what} is null"));
    SpinechoStatus::NullPointer
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<SpinechoStatus, SpinechoStatus>) -> SpinechoStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) | Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SpinechoStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SpinechoStatus>;
}

impl<T> OrStatus<T> for spinecho::Result<T> {
    fn or_status(self) -> Result<T, SpinechoStatus> {
        self.map_err(status_of)
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], SpinechoStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], SpinechoStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut T, v: T, what: &str) -> Result<(), SpinechoStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn spinecho_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spinecho_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => c"unknown",
        };
    VERSION.as_ptr()
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spinecho_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Create a spin system. `spin` is S (0.5, 1, 1.5, ...).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinecho_system_new(
    spin: f64,
    g: f64,
    d_ghz: f64,
    e_ghz: f64,
    out: *mut *mut SpinechoSystem,
) -> SpinechoStatus {
    guard(|| {
        let s = SpinQuantum::from_f64(spin).or_status()?;
        let sys = SpinSystem::new(s, g, d_ghz, e_ghz).or_status()?;
        store(out, Box::into_raw(Box::new(SpinechoSystem(sys))), "out")?;
        Ok(SpinechoStatus::Ok)
    })
}

/// # Safety
/// `sys` must come from [`spinecho_system_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn spinecho_system_free(sys: *mut SpinechoSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Echo-detected powder spectrum with Gaussian broadening `sigma_t` on
/// `points` fields from `field_start_t` to `field_stop_t`. The grid has
/// `grid_n²` orientations.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinecho_spectrum_simulate(
    sys: *const SpinechoSystem,
    mw_ghz: f64,
    sigma_t: f64,
    grid: SpinechoGrid,
    grid_n: usize,
    field_start_t: f64,
    field_stop_t: f64,
    points: usize,
    out: *mut *mut SpinechoSpectrum,
) -> SpinechoStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("sys"))?;
        if points < 2 {
            return Err(status_of(Error::InvalidInput(
                "need at least two field points".into(),
            )));
        }
        let scheme = match grid {
            SpinechoGrid::Spiral => GridScheme::Spiral,
            SpinechoGrid::Product => GridScheme::Product,
        };
        let grid = OrientationGrid::new(grid_n, scheme).or_status()?;
        let axis = linspace(field_start_t, field_stop_t, points);
        let spec = echo_detected_spectrum(
            &sys.0,
            &grid,
            &axis,
            &SpectrumParams::gaussian(mw_ghz, sigma_t),
        )
        .or_status()?;
        store(out, Box::into_raw(Box::new(SpinechoSpectrum(spec))), "out")?;
        Ok(SpinechoStatus::Ok)
    })
}

/// Number of field points, or 0 for a null handle.
///
/// # Safety
/// `spec` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn spinecho_spectrum_len(spec: *const SpinechoSpectrum) -> usize {
    spec.as_ref().map_or(0, |s| s.0.len())
}

/// Copy the field axis (T) and amplitude into caller buffers of `len`
/// elements; `len` must equal [`spinecho_spectrum_len`]. Either buffer may
/// be null to skip it.
///
/// # Safety
/// Non-null buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn spinecho_spectrum_copy(
    spec: *const SpinechoSpectrum,
    field_t: *mut f64,
    amplitude: *mut f64,
    len: usize,
) -> SpinechoStatus {
    guard(|| {
        let spec = &spec.as_ref().ok_or_else(|| null("spec"))?.0;
        if len != spec.len() {
            return Err(status_of(Error::InvalidInput(format!(
                "buffer length {len} does not match spectrum length {}",
                spec.len()
            ))));
        }
        if !field_t.is_null() {
            output(field_t, len, "field_t")?.copy_from_slice(&spec.field_axis);
        }
        if !amplitude.is_null() {
            output(amplitude, len, "amplitude")?.copy_from_slice(&spec.amplitude);
        }
        Ok(SpinechoStatus::Ok)
    })
}

/// # Safety
/// `spec` must come from [`spinecho_spectrum_simulate`] or be null.
#[no_mangle]
pub unsafe extern "C" fn spinecho_spectrum_free(spec: *mut SpinechoSpectrum) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Hahn-echo decay `exp(−2τ/T2)·V(τ)` at `n` delays. ESEEM from one
/// nucleus is included when `eseem_k > 0` (`gamma_mhz_per_t`, `spin_i` and
/// `field_t` describe it), averaged over a detection window of `window_ns`.
///
/// # Safety
/// `taus_ns` and `out_amplitude` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn spinecho_hahn_decay(
    taus_ns: *const f64,
    n: usize,
    t1_ns: f64,
    t2_ns: f64,
    eseem_k: f64,
    gamma_mhz_per_t: f64,
    spin_i: f64,
    field_t: f64,
    window_ns: f64,
    out_amplitude: *mut f64,
) -> SpinechoStatus {
    guard(|| {
        let taus = input(taus_ns, n, "taus_ns")?;
        let out = output(out_amplitude, n, "out_amplitude")?;
        let relax = RelaxationParams::new(t1_ns, t2_ns).or_status()?;
        let model = if eseem_k > 0.0 {
            let nucleus = NuclearCoupling::custom(gamma_mhz_per_t, spin_i, eseem_k).or_status()?;
            Some(EseemModel::single(nucleus, field_t).or_status()?)
        } else {
            None
        };
        let trace = HahnDecay {
            eseem: model.as_ref(),
            window_ns,
            ..HahnDecay::default()
        }
        .curve(taus, &relax)
        .or_status()?;
        out.copy_from_slice(&trace.amplitude);
        Ok(SpinechoStatus::Ok)
    })
}

unsafe fn finish_fit(
    res: FitResult,
    out: *mut *mut SpinechoFitResult,
) -> Result<SpinechoStatus, SpinechoStatus> {
    let converged = res.converged;
    store(out, Box::into_raw(Box::new(SpinechoFitResult(res))), "out")?;
    if converged {
        Ok(SpinechoStatus::Ok)
    } else {
        set_error("fit did not converge".into());
        Ok(SpinechoStatus::NotConverged)
    }
}

unsafe fn trace_of(
    kind: AxisKind,
    x: *const f64,
    y: *const f64,
    n: usize,
) -> Result<Trace, SpinechoStatus> {
    let x = input(x, n, "x")?;
    let y = input(y, n, "y")?;
    Trace::new(kind, x.to_vec(), y.to_vec()).or_status()
}

/// Fit a decay trace (delays in ns).
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_decay(
    x: *const f64,
    y: *const f64,
    n: usize,
    model: SpinechoDecayModel,
    second_harmonic: bool,
    out: *mut *mut SpinechoFitResult,
) -> SpinechoStatus {
    guard(|| {
        let trace = trace_of(AxisKind::DelayNs, x, y, n)?;
        let kind = match model {
            SpinechoDecayModel::MonoExponential => ModelKind::MonoExponential,
            SpinechoDecayModel::ModulatedDecay => ModelKind::ModulatedDecay,
        };
        let m = FitModel::new(kind).with_second_harmonic(second_harmonic);
        finish_fit(
            fit::fit(&m, &trace, &FitOptions::default()).or_status()?,
            out,
        )
    })
}

/// Fit an inversion-recovery trace measured with a fixed echo delay.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_recovery(
    x: *const f64,
    y: *const f64,
    n: usize,
    tau_fixed_ns: f64,
    out: *mut *mut SpinechoFitResult,
) -> SpinechoStatus {
    guard(|| {
        let trace = trace_of(AxisKind::RecoveryNs, x, y, n)?;
        finish_fit(
            fit::fit_inversion_recovery(&trace, tau_fixed_ns).or_status()?,
            out,
        )
    })
}

/// Fit a single Gaussian line to a field sweep (field in T).
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_gaussian_line(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut SpinechoFitResult,
) -> SpinechoStatus {
    guard(|| {
        let trace = trace_of(AxisKind::FieldT, x, y, n)?;
        let spec = Spectrum::from_trace(&trace).or_status()?;
        finish_fit(fit::fit_gaussian_line(&spec).or_status()?, out)
    })
}

/// Value and standard error of a named parameter. Either output may be
/// null. An unknown name is an error.
///
/// # Safety
/// `res` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_result_param(
    res: *const SpinechoFitResult,
    name: *const c_char,
    value: *mut f64,
    sigma: *mut f64,
) -> SpinechoStatus {
    guard(|| {
        let res = &res.as_ref().ok_or_else(|| null("res"))?.0;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_string_lossy();
        let Some(&v) = res.params.get(name.as_ref()) else {
            return Err(status_of(Error::InvalidInput(format!(
                "no parameter named {name:?}"
            ))));
        };
        if !value.is_null() {
            value.write(v);
        }
        if !sigma.is_null() {
            sigma.write(res.sigma(&name));
        }
        Ok(SpinechoStatus::Ok)
    })
}

/// Whether the fit converged; false for a null handle.
///
/// # Safety
/// `res` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_result_converged(res: *const SpinechoFitResult) -> bool {
    res.as_ref().is_some_and(|r| r.0.converged)
}

/// Whether the result carries `flag` (e.g. `large_residual`).
///
/// # Safety
/// `res` must be a live handle or null; `flag` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_result_has_flag(
    res: *const SpinechoFitResult,
    flag: *const c_char,
) -> bool {
    match (res.as_ref(), flag.is_null()) {
        (Some(r), false) => r.0.has_flag(&CStr::from_ptr(flag).to_string_lossy()),
        _ => false,
    }
}

/// Result as JSON. Release with [`spinecho_string_free`].
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_result_json(
    res: *const SpinechoFitResult,
    out: *mut *mut c_char,
) -> SpinechoStatus {
    guard(|| {
        let res = &res.as_ref().ok_or_else(|| null("res"))?.0;
        let json = res.to_json().or_status()?;
        let c = CString::new(json).map_err(|e| status_of(Error::Parse(e.to_string())))?;
        store(out, c.into_raw(), "out")?;
        Ok(SpinechoStatus::Ok)
    })
}

/// # Safety
/// `res` must come from a fit call or be null.
#[no_mangle]
pub unsafe extern "C" fn spinecho_fit_result_free(res: *mut SpinechoFitResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Mean molecular separation (nm) at a mass concentration in mg/mL.
///
/// # Safety
/// `out_nm` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinecho_mean_separation_nm(
    concentration_mg_ml: f64,
    molar_mass_g_mol: f64,
    out_nm: *mut f64,
) -> SpinechoStatus {
    guard(|| {
        let spec = DilutionSpec::new(concentration_mg_ml, molar_mass_g_mol).or_status()?;
        store(out_nm, calc::mean_separation(&spec).or_status()?, "out_nm")?;
        Ok(SpinechoStatus::Ok)
    })
}

/// Electron-electron dipolar coupling (MHz) at separation `r_nm`.
///
/// # Safety
/// `out_mhz` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinecho_dipolar_coupling_mhz(
    r_nm: f64,
    out_mhz: *mut f64,
) -> SpinechoStatus {
    guard(|| {
        store(
            out_mhz,
            calc::dipolar_coupling(r_nm).or_status()?,
            "out_mhz",
        )?;
        Ok(SpinechoStatus::Ok)
    })
}

/// Coherence figure of merit `T2/t_op`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinecho_figure_of_merit(
    t2_ns: f64,
    top_ns: f64,
    out: *mut f64,
) -> SpinechoStatus {
    guard(|| {
        store(
            out,
            calc::figure_of_merit(t2_ns, top_ns).or_status()?,
            "out",
        )?;
        Ok(SpinechoStatus::Ok)
    })
}
