//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints its PASS/FAIL line regardless of output capture.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinecho::calc::{self, DilutionSpec};
use spinecho::eseem::{gamma_ratio, larmor_frequency, EseemModel, Isotope, NuclearCoupling};
use spinecho::fit::{self, FitModel, FitOptions, ModelKind};
use spinecho::noise::add_noise;
use spinecho::powder::{
    echo_detected_spectrum, GridScheme, OrientationGrid, Spectrum, SpectrumParams,
};
use spinecho::pulse::{
    echo_amplitude, excitation_fwhm_mhz, excitation_profile, inversion_recovery_curve,
    pulse_propagator, run_sequence, spin_pulse_propagator, DetuningEnsemble, Element, HahnDecay,
    Pulse, PulseSequence, RelaxationParams,
};
use spinecho::spin::{SpinQuantum, SpinSystem};
use spinecho::trace::{linspace, AxisKind, Trace};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

// ---------------------------------------------------------------- 1

const MW_GHZ: f64 = 9.7;
const FWHM_T: f64 = 0.010;
const SIGMA_PER_FWHM: f64 = 1.0 / 2.354_820_045_030_949;
const D_GHZ: f64 = 21.0;
const E_GHZ: f64 = 1.9;

/// Brute-force reference: scan the field on a fine mesh for quasi-random
/// orientations, record every mesh point whose gap lies within half a step
/// of the microwave quantum, and convolve the hits with the line shape.
/// Orientations are Halton points on one octant, which the D2h symmetry of
/// the zero-field term makes sufficient.
fn histogram_oracle(
    g: f64,
    orientations: usize,
    step_t: f64,
    axis: &[f64],
    sigma: f64,
) -> Vec<f64> {
    let c = |re: f64| Complex64::new(re, 0.0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let zero = c(0.0);
    let sx = Matrix3::new(zero, c(s), zero, c(s), zero, c(s), zero, c(s), zero);
    let sy = Matrix3::new(
        zero,
        Complex64::new(0.0, -s),
        zero,
        Complex64::new(0.0, s),
        zero,
        Complex64::new(0.0, -s),
        zero,
        Complex64::new(0.0, s),
        zero,
    );
    let sz = Matrix3::from_diagonal(&Vector3::new(c(1.0), zero, c(-1.0)));
    let h0 = sz * sz * c(D_GHZ) + (sx * sx - sy * sy) * c(E_GHZ);
    let mu_b = 9.274_010_078_3e-24 / 6.626_070_15e-34 * 1e-9;

    let halton = |mut i: usize, base: usize| {
        let (mut f, mut r) = (1.0, 0.0);
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    let top = axis[axis.len() - 1] + 6.0 * sigma;
    let mesh = (top / step_t).ceil() as usize + 2;
    let mut out = vec![0.0; axis.len()];
    let sorted = |m: Matrix3<Complex64>| {
        let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        [v[0], v[1], v[2]]
    };
    for idx in 1..=orientations {
        let ct = halton(idx, 2);
        let st = (1.0 - ct * ct).sqrt();
        let phi = std::f64::consts::FRAC_PI_2 * halton(idx, 3);
        let (sp, cp) = phi.sin_cos();
        let zeeman = (sx * c(st * cp) + sy * c(st * sp) + sz * c(ct)) * c(g * mu_b);
        let mw = sx * c(ct * cp) + sy * c(ct * sp) - sz * c(st);
        let levels: Vec<[f64; 3]> = (0..mesh)
            .map(|k| sorted(h0 + zeeman * c(k as f64 * step_t)))
            .collect();
        for k in 1..mesh - 1 {
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let gap = levels[k][j] - levels[k][i];
                let slope = (levels[k + 1][j] - levels[k + 1][i] - levels[k - 1][j]
                    + levels[k - 1][i])
                    / (2.0 * step_t);
                if (gap - MW_GHZ).abs() > slope.abs() * step_t / 2.0 {
                    continue;
                }
                let b = k as f64 * step_t;
                let eig = (h0 + zeeman * c(b)).symmetric_eigen();
                let mut order = [0usize, 1, 2];
                order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
                let vi = eig.eigenvectors.column(order[i]);
                let vj = eig.eigenvectors.column(order[j]);
                let weight = (vi.adjoint() * mw * vj)[(0, 0)].norm_sqr();
                for (a, o) in axis.iter().zip(out.iter_mut()) {
                    let u = (a - b) / sigma;
                    if u.abs() < 6.0 {
                        *o += weight * (-0.5 * u * u).exp();
                    }
                }
            }
        }
    }
    let peak = out.iter().copied().fold(0.0, f64::max);
    out.iter().map(|v| v / peak).collect()
}

fn relative_l2(a: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn powder_fixture(g: f64, n: usize) -> (Spectrum, Duration) {
    let sys = SpinSystem::new(SpinQuantum::ONE, g, D_GHZ, E_GHZ).unwrap();
    let grid = OrientationGrid::new(n, GridScheme::Spiral).unwrap();
    let axis = linspace(0.0, 1.4, 1401);
    let params = SpectrumParams::gaussian(MW_GHZ, FWHM_T * SIGMA_PER_FWHM);
    single_thread(|| {
        let t = Instant::now();
        let s = echo_detected_spectrum(&sys, &grid, &axis, &params).unwrap();
        (s, t.elapsed())
    })
}

fn criterion_1() -> Check {
    let mut notes = Vec::new();
    for g in [1.9, 2.0] {
        let (coarse, t100) = powder_fixture(g, 100);
        let (fine, t200) = powder_fixture(g, 200);
        ensure(
            t100.as_secs_f64() < 60.0 && t200.as_secs_f64() < 60.0,
            format!("g={g}: runtime {t100:?} / {t200:?}"),
        )?;

        let occupied: Vec<f64> = coarse
            .field_axis
            .iter()
            .zip(&coarse.amplitude)
            .filter(|(_, a)| **a > 0.05)
            .map(|(b, _)| *b)
            .collect();
        let span = occupied.last().unwrap_or(&0.0) - occupied.first().unwrap_or(&0.0);
        ensure(
            span > 0.3,
            format!("g={g}: spectrum spans only {span:.3} T"),
        )?;

        let mut a = coarse.prominent_features(3);
        let mut b = fine.prominent_features(3);
        ensure(
            a.len() == 3 && b.len() == 3,
            format!("g={g}: fewer than three features"),
        )?;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let shift = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        ensure(shift < 2e-3, format!("g={g}: features {a:?} vs {b:?}"))?;

        let oracle = histogram_oracle(g, 8000, 5e-4, &coarse.field_axis, FWHM_T * SIGMA_PER_FWHM);
        let err = relative_l2(&coarse.amplitude, &oracle);
        ensure(err < 0.05, format!("g={g}: oracle L2 {err:.4}"))?;
        notes.push(format!(
            "g={g}: features {:?} T, shift {:.1} mT, oracle L2 {:.3}, {:.1}s/{:.1}s",
            a.iter()
                .map(|v| (v * 1e3).round() / 1e3)
                .collect::<Vec<_>>(),
            shift * 1e3,
            err,
            t100.as_secs_f64(),
            t200.as_secs_f64()
        ));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 2

/// g of the S = 1/2 ring.
const CR7NI_G: f64 = 1.78;

fn criterion_2() -> Check {
    let sys = SpinSystem::doublet(CR7NI_G).unwrap();
    let grid = OrientationGrid::new(20, GridScheme::Spiral).unwrap();
    let axis = linspace(0.33, 0.45, 1201);
    let params = SpectrumParams::gaussian(MW_GHZ, FWHM_T * SIGMA_PER_FWHM);
    let spec = echo_detected_spectrum(&sys, &grid, &axis, &params).map_err(|e| e.to_string())?;
    let res = fit::fit_gaussian_line(&spec).map_err(|e| e.to_string())?;
    ensure(res.converged, "fit did not converge")?;
    let fwhm = res.param("fwhm_T");
    let centre = res.param("center_T");
    // h·ν / (g·μB) from SI constants
    let expected = MW_GHZ * 1e9 * 6.626_070_15e-34 / (CR7NI_G * 9.274_010_078_3e-24);
    ensure((fwhm / FWHM_T - 1.0).abs() <= 0.02, format!("FWHM {fwhm}"))?;
    ensure(
        (centre - expected).abs() <= 1e-4,
        format!("centre {centre} vs {expected}"),
    )?;
    Ok(format!(
        "FWHM {:.3} mT, centre {:.4} T (expected {:.4} T)",
        fwhm * 1e3,
        centre,
        expected
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let start = Instant::now();
    let taus = linspace(10.0, 1000.0, 100);
    let relax = RelaxationParams::new(f64::INFINITY, 379.0).unwrap();
    let clean = HahnDecay::default()
        .curve(&taus, &relax)
        .map_err(|e| e.to_string())?;
    let model = FitModel::new(ModelKind::MonoExponential);
    let mut inside = 0;
    for seed in 0..200u64 {
        let noisy = add_noise(&clean, 0.01, seed).map_err(|e| e.to_string())?;
        let r = fit::fit(&model, &noisy, &FitOptions::default()).map_err(|e| e.to_string())?;
        if r.converged && (r.param("T2_ns") - 379.0).abs() <= 3.0 * r.sigma("T2_ns") {
            inside += 1;
        }
    }
    ensure(inside >= 190, format!("only {inside}/200 seeds within 3σ"))?;

    let field = 0.389_88;
    let nu = 2.556;
    let nucleus = NuclearCoupling::custom(nu / field, 1.0, 0.3).map_err(|e| e.to_string())?;
    let eseem = EseemModel::single(nucleus, field).map_err(|e| e.to_string())?;
    let taus = linspace(0.0, 6000.0, 600);
    let relax = RelaxationParams::new(f64::INFINITY, 2210.0).unwrap();
    let clean = HahnDecay {
        eseem: Some(&eseem),
        ..HahnDecay::default()
    }
    .curve(&taus, &relax)
    .map_err(|e| e.to_string())?;
    let noisy = add_noise(&clean, 0.01, 11).map_err(|e| e.to_string())?;
    let r = fit::fit(
        &FitModel::new(ModelKind::ModulatedDecay),
        &noisy,
        &FitOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(r.converged, "deuterated fit did not converge")?;
    let (t2, st2) = (r.param("T2_ns"), r.sigma("T2_ns"));
    let (f, sf) = (r.param("nu_MHz"), r.sigma("nu_MHz"));
    ensure((t2 - 2210.0).abs() <= 3.0 * st2, format!("T2 {t2} ± {st2}"))?;
    ensure((f - nu).abs() <= 3.0 * sf, format!("ν {f} ± {sf}"))?;

    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 10.0, format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "{inside}/200 seeds within 3σ; deuterated T2 {t2:.0} ± {st2:.0} ns, ν {f:.4} ± {sf:.4} MHz; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Check {
    let field = 0.389_88;
    let h = larmor_frequency(Isotope::Proton.gamma_mhz_per_t(), field);
    let d = larmor_frequency(Isotope::Deuteron.gamma_mhz_per_t(), field);
    ensure((h / 16.6 - 1.0).abs() <= 0.005, format!("1H {h} MHz"))?;
    ensure(
        d >= 2.548 * 0.995 && d <= 2.556 * 1.005,
        format!("2H {d} MHz"),
    )?;
    let ratio = gamma_ratio();
    ensure(
        (ratio / 6.514 - 1.0).abs() <= 1e-3,
        format!("γ ratio {ratio}"),
    )?;
    let t2_ratio = 2210.0 / 379.0;
    let dev = (t2_ratio / ratio - 1.0).abs();
    ensure(dev <= 0.12, format!("T2 ratio {t2_ratio:.3} vs {ratio:.3}"))?;
    Ok(format!(
        "1H {h:.3} MHz, 2H {d:.4} MHz, γ ratio {ratio:.4}, T2 ratio {t2_ratio:.3} ({:.1}% off)",
        dev * 100.0
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let pulse = Pulse::new(
            rng.random_range(1.0..200.0),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        )
        .unwrap();
        let det = rng.random_range(-100.0..100.0);
        let u = pulse_propagator(&pulse, det);
        let dev = (u.adjoint() * u - nalgebra::Matrix2::identity()).camax();
        worst = worst.max(dev);
        let spin = SpinQuantum::from_twice(rng.random_range(1..=5)).unwrap();
        let big = spin_pulse_propagator(spin, &pulse, det);
        let id = nalgebra::DMatrix::<Complex64>::identity(big.nrows(), big.ncols());
        worst = worst.max((big.adjoint() * &big - id).camax());
    }
    ensure(worst < 1e-12, format!("unitarity deviation {worst:e}"))?;

    let tau = 200.0;
    let seq = PulseSequence::hahn(Element::ideal_half_pi(), Element::ideal_pi(), tau, 0.0)
        .map_err(|e| e.to_string())?;
    let ens = DetuningEnsemble {
        sigma_mhz: 20.0,
        count: 101,
    };
    let none = RelaxationParams::none();
    let echo = echo_amplitude(&seq, &ens, &none).map_err(|e| e.to_string())?;
    ensure(
        (echo - 1.0).abs() < 1e-9,
        format!("refocused amplitude {echo}"),
    )?;

    let trace = run_sequence(&seq, &ens, &none).map_err(|e| e.to_string())?;
    let peak = (0..trace.len())
        .filter(|&k| trace.axis[k] > tau + 1.0)
        .max_by(|&a, &b| trace.amplitude[a].total_cmp(&trace.amplitude[b]))
        .unwrap();
    let step = trace.axis[peak + 1] - trace.axis[peak];
    let echo_t = trace.axis[peak];
    ensure(
        (echo_t - 2.0 * tau).abs() <= step,
        format!("echo at {echo_t} ns"),
    )?;

    let selective = Pulse::half_pi(64.0).unwrap();
    let window = excitation_profile(&selective, 1.9).map_err(|e| e.to_string())?;
    ensure(
        (0.15..=0.6).contains(&window),
        format!("excitation window {window} mT"),
    )?;
    let ratio =
        excitation_fwhm_mhz(&Pulse::half_pi(16.0).unwrap()) / excitation_fwhm_mhz(&selective);
    ensure(
        (ratio / 4.0 - 1.0).abs() <= 0.05,
        format!("bandwidth ratio {ratio}"),
    )?;
    Ok(format!(
        "max |U†U−I| {worst:.1e}, echo {echo:.12}, echo at {echo_t} ns (step {step:.2}), 64 ns window {window:.3} mT, ratio {ratio:.3}"
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Check {
    let relax = RelaxationParams::new(4000.0, 379.0).unwrap();
    let (tau, m_inf) = (300.0, 0.8);
    let times = vec![0.0, 4000.0 * std::f64::consts::LN_2];
    let curve =
        inversion_recovery_curve(&times, &relax, tau, 1.0, m_inf).map_err(|e| e.to_string())?;
    let m0 = -m_inf * (-2.0 * tau / 379.0f64).exp();
    ensure(
        curve.amplitude[0] == m0,
        format!("M(0) {} vs {m0}", curve.amplitude[0]),
    )?;
    ensure(
        curve.amplitude[1].abs() <= 1e-9,
        format!("M(T1 ln2) {}", curve.amplitude[1]),
    )?;

    let axis = linspace(0.0, 20_000.0, 200);
    let clean =
        inversion_recovery_curve(&axis, &relax, tau, 1.0, m_inf).map_err(|e| e.to_string())?;
    let trace = Trace::new(
        AxisKind::RecoveryNs,
        clean.axis.clone(),
        clean.amplitude.clone(),
    )
    .unwrap();
    let r = fit::fit_inversion_recovery(&trace, tau).map_err(|e| e.to_string())?;
    let t1 = r.param("T1_ns");
    ensure((t1 / 4000.0 - 1.0).abs() <= 1e-6, format!("T1 {t1}"))?;
    let crossing = fit::recovery_zero_crossing(&r);
    Ok(format!(
        "M(0) {m0:.6}, fitted T1 {t1:.6} ns, zero crossing {crossing:.3} ns"
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let r = calc::mean_separation(&DilutionSpec::new(0.2, 1880.0).unwrap())
        .map_err(|e| e.to_string())?;
    ensure((r - 25.0).abs() <= 0.1, format!("separation {r} nm"))?;
    let khz = calc::dipolar_coupling(25.0).map_err(|e| e.to_string())? * 1e3;
    ensure((khz - 6.4).abs() < 0.05, format!("coupling {khz} kHz"))?;
    let fom = calc::figure_of_merit(3800.0, 10.0).map_err(|e| e.to_string())?;
    ensure(fom == 380.0, format!("figure of merit {fom}"))?;
    Ok(format!("{r:.2} nm, {khz:.2} kHz, FoM {fom}"))
}

// ---------------------------------------------------------------- 8

const CONFIG: &str = r#"{
  "schema_version": 1,
  "system": {"S": 1, "g": 1.9, "D_GHz": 21.0, "E_GHz": 1.9},
  "spectrum": {"mw_GHz": 9.7, "field_T": {"start": 0.0, "stop": 1.4, "points": 701},
               "fwhm_T": 0.01, "grid": {"n": 40}},
  "delays": {"start": 10, "stop": 1000, "points": 100},
  "recovery": {"start": 0, "stop": 20000, "points": 100},
  "relaxation": {"T1_ns": 4000, "T2_ns": 379},
  "eseem": {"nuclei": [{"isotope": "1H", "k": 0.2}]},
  "sequence": {"sequence": "hahn", "tau_ns": 300,
               "pulses": [{"duration_ns": 16, "flip_angle_deg": 90}, {"duration_ns": 32, "flip_angle_deg": 180}],
               "ensemble": {"sigma_MHz": 10, "count": 64}},
  "noise": {"sigma": 0.01, "seed": 42},
  "output": {"stem": "det", "plot": false}
}"#;

fn run_cli(dir: &Path, threads: &str, command: &str, config: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spinecho"))
        .args(["--threads", threads, "--out-dir"])
        .arg(dir)
        .args([command, "--config"])
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("{command} failed: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn criterion_8() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("config.json");
    std::fs::write(&config, CONFIG).map_err(|e| e.to_string())?;
    let mut recovery_cfg: serde_json::Value = serde_json::from_str(CONFIG).unwrap();
    recovery_cfg["sequence"] = serde_json::json!({"sequence": "inversion_recovery", "tau_ns": 300});
    let recovery = tmp.path().join("recovery.json");
    std::fs::write(&recovery, recovery_cfg.to_string()).map_err(|e| e.to_string())?;

    let runs = [("1", "a"), ("4", "b"), ("4", "c")];
    let jobs = [
        ("simulate-spectrum", &config, vec!["det_spectrum.csv"]),
        (
            "simulate-decay",
            &config,
            vec!["det_decay.csv", "det_transient.csv"],
        ),
        ("simulate-recovery", &recovery, vec!["det_recovery.csv"]),
    ];
    let mut compared = 0;
    for (cmd, cfg, files) in &jobs {
        for (threads, sub) in runs {
            run_cli(&tmp.path().join(sub), threads, cmd, cfg)?;
        }
        for f in files {
            let a = std::fs::read(tmp.path().join("a").join(f)).map_err(|e| e.to_string())?;
            for other in ["b", "c"] {
                let b = std::fs::read(tmp.path().join(other).join(f)).map_err(|e| e.to_string())?;
                ensure(a == b, format!("{f} differs between runs"))?;
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} CSV outputs byte-identical across 1- and 4-thread runs"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("powder pattern reproduction", criterion_1),
        ("S=1/2 Gaussian line", criterion_2),
        ("Hahn decay round trip", criterion_3),
        ("ESEEM frequencies", criterion_4),
        ("pulse engine", criterion_5),
        ("inversion recovery", criterion_6),
        ("calculators", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
