//! `spinecho` command-line tool.
//!
//! Exit codes: 0 success, 1 bad arguments or configuration, 2 a fit did
//! not converge (results are still written), 3 file I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spinecho::calc::{self, DilutionSpec};
use spinecho::config::{ExperimentConfig, SequenceKind};
use spinecho::eseem::EseemModel;
use spinecho::fit::{self, FitModel, FitOptions, FitResult, ModelKind, ZfsFitOptions, ZfsGuess};
use spinecho::noise::add_noise;
use spinecho::plot::svg_line_plot;
use spinecho::powder::{echo_detected_spectrum, GridScheme, OrientationGrid, Spectrum};
use spinecho::pulse::{inversion_recovery_curve, run_sequence, HahnDecay};
use spinecho::spin::SpinQuantum;
use spinecho::trace::Trace;
use spinecho::Error;

#[derive(Parser)]
#[command(
    name = "spinecho",
    version,
    about = "Pulsed ESR simulation and relaxation fitting"
)]
struct Cli {
    /// Worker threads for powder averaging and ensembles (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides the config and SPINECHO_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Powder-averaged echo-detected field sweep.
    SimulateSpectrum {
        #[arg(long)]
        config: PathBuf,
    },
    /// Hahn-echo decay versus τ, with optional ESEEM.
    SimulateDecay {
        #[arg(long)]
        config: PathBuf,
    },
    /// Inversion-recovery curve versus recovery delay.
    SimulateRecovery {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit a decay trace.
    FitDecay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = DecayModel::MonoExponential)]
        model: DecayModel,
        /// Include the second ESEEM harmonic in modulated_decay.
        #[arg(long)]
        second_harmonic: bool,
        /// File with one non-negative weight per data point.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Where to write the result JSON (default: next to the outputs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an inversion-recovery trace.
    FitRecovery {
        #[arg(long = "in")]
        input: PathBuf,
        /// Fixed echo delay used during the measurement.
        #[arg(long, default_value_t = 0.0)]
        tau_ns: f64,
        /// File with one non-negative weight per data point.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a field-sweep spectrum.
    FitSpectrum {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = SpectrumModel::GaussianLine)]
        model: SpectrumModel,
        /// Starting values for the zfs model.
        #[arg(long, default_value_t = 1.0)]
        spin: f64,
        #[arg(long, default_value_t = 2.0)]
        g: f64,
        #[arg(long)]
        d_ghz: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        e_ghz: f64,
        #[arg(long)]
        sigma_t: Option<f64>,
        /// Microwave frequency (default: from the spectrum header).
        #[arg(long)]
        mw_ghz: Option<f64>,
        /// Spiral grid resolution of the zfs forward model, n² orientations
        /// (default: from the spectrum header, else 20).
        #[arg(long)]
        grid_n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean separation and dipolar coupling of dissolved molecules.
    CalcDilution {
        #[arg(long)]
        concentration_mg_ml: f64,
        /// Molar mass; there is no default.
        #[arg(long)]
        molar_mass_g_mol: f64,
    },
    /// Coherence figure of merit T2/t_op.
    CalcFom {
        #[arg(long)]
        t2_ns: f64,
        #[arg(long)]
        top_ns: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayModel {
    MonoExponential,
    ModulatedDecay,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpectrumModel {
    GaussianLine,
    Zfs,
}

enum Failure {
    Usage(String),
    Config(Error),
    Io(String),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Config(other),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: fit did not converge");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let out_dir = cli.out_dir.as_deref();
    match &cli.command {
        Command::SimulateSpectrum { config } => simulate_spectrum(&load(config)?, out_dir),
        Command::SimulateDecay { config } => simulate_decay(&load(config)?, out_dir),
        Command::SimulateRecovery { config } => simulate_recovery(&load(config)?, out_dir),
        Command::FitDecay {
            input,
            model,
            second_harmonic,
            weights,
            out,
        } => {
            let trace = read_trace(input)?;
            let kind = match model {
                DecayModel::MonoExponential => ModelKind::MonoExponential,
                DecayModel::ModulatedDecay => ModelKind::ModulatedDecay,
            };
            let model = FitModel::new(kind).with_second_harmonic(*second_harmonic);
            let res = fit::fit(&model, &trace, &fit_options(weights.as_deref())?)?;
            report(&res, input, out.as_deref(), out_dir)
        }
        Command::FitRecovery {
            input,
            tau_ns,
            weights,
            out,
        } => {
            let trace = read_trace(input)?;
            let res = fit::fit_inversion_recovery_with(
                &trace,
                *tau_ns,
                &fit_options(weights.as_deref())?,
            )?;
            report(&res, input, out.as_deref(), out_dir)
        }
        Command::FitSpectrum {
            input,
            model,
            spin,
            g,
            d_ghz,
            e_ghz,
            sigma_t,
            mw_ghz,
            grid_n,
            out,
        } => {
            let spectrum = Spectrum::from_trace(&read_trace(input)?)?;
            let res = match model {
                SpectrumModel::GaussianLine => fit::fit_gaussian_line(&spectrum)?,
                SpectrumModel::Zfs => {
                    let d = d_ghz.ok_or_else(|| {
                        Failure::Usage("--d-ghz is required for the zfs model".into())
                    })?;
                    let guess = ZfsGuess {
                        spin: SpinQuantum::from_f64(*spin)?,
                        g: *g,
                        d_ghz: d,
                        e_ghz: *e_ghz,
                        sigma_t: sigma_t.unwrap_or(spectrum.meta.sigma_t),
                    };
                    let mw = mw_ghz.unwrap_or(spectrum.meta.mw_ghz);
                    let mut opts = ZfsFitOptions::default();
                    // match the simulation that produced the spectrum when the header says so
                    let header_n = (spectrum.meta.grid_points as f64).sqrt().round() as usize;
                    if let Some(n) = grid_n.or((header_n > 0).then_some(header_n)) {
                        opts.grid = OrientationGrid::new(n, GridScheme::Spiral)?;
                    }
                    fit::fit_zfs_spectrum(&spectrum, &guess, mw, &opts)?
                }
            };
            report(&res, input, out.as_deref(), out_dir)
        }
        Command::CalcDilution {
            concentration_mg_ml,
            molar_mass_g_mol,
        } => {
            let spec = DilutionSpec::new(*concentration_mg_ml, *molar_mass_g_mol)?;
            let r = calc::mean_separation(&spec)?;
            let coupling = calc::dipolar_coupling(r)?;
            let doc = serde_json::json!({
                "mean_separation_nm": r,
                "dipolar_coupling_MHz": coupling,
                "dipolar_coupling_kHz": coupling * 1e3,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).map_err(Error::from)?
            );
            Ok(())
        }
        Command::CalcFom { t2_ns, top_ns } => {
            println!("{}", calc::figure_of_merit(*t2_ns, *top_ns)?);
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn read_trace(path: &Path) -> Result<Trace, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(Trace::from_csv(&text)?)
}

/// Weights file: one number per line; blank lines and `#` comments skipped.
fn fit_options(weights: Option<&Path>) -> Result<FitOptions, Failure> {
    let Some(path) = weights else {
        return Ok(FitOptions::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let values = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>().map_err(|_| {
                Failure::Config(Error::Parse(format!(
                    "{}: bad weight {l:?}",
                    path.display()
                )))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FitOptions {
        weights: Some(values),
        ..FitOptions::default()
    })
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

/// Write `<stem>_<suffix>.csv` (and the SVG unless disabled).
fn emit(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    suffix: &str,
    trace: &Trace,
    title: &str,
) -> Outcome {
    let dir = cfg.output_dir(out_dir);
    let stem = format!("{}_{suffix}", cfg.stem("spinecho"));
    write_file(&dir.join(format!("{stem}.csv")), &trace.to_csv())?;
    if cfg.plot() {
        write_file(
            &dir.join(format!("{stem}.svg")),
            &svg_line_plot(trace, title),
        )?;
    }
    Ok(())
}

fn with_noise(cfg: &ExperimentConfig, trace: Trace) -> Result<Trace, Failure> {
    Ok(match cfg.noise() {
        Some((sigma, seed)) => add_noise(&trace, sigma, seed)?,
        None => trace,
    })
}

fn simulate_spectrum(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Outcome {
    let sys = cfg.require(&cfg.system, "system")?;
    let sc = cfg.require(&cfg.spectrum, "spectrum")?;
    let spectrum = echo_detected_spectrum(sys, &sc.grid()?, &sc.field.values(), &sc.params()?)?;
    let trace = with_noise(cfg, spectrum.to_trace())?;
    emit(
        cfg,
        out_dir,
        "spectrum",
        &trace,
        "echo-detected field sweep",
    )
}

fn simulate_decay(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Outcome {
    let relax = cfg.require(&cfg.relaxation, "relaxation")?;
    let delays = cfg.require(&cfg.delays, "delays")?;
    let window = cfg.sequence.as_ref().map_or(0.0, |s| s.detection_window_ns);
    let eseem: Option<&EseemModel> = cfg.eseem.as_ref();
    let decay = HahnDecay {
        eseem,
        window_ns: window,
        ..HahnDecay::default()
    }
    .curve(&delays.values(), relax)?;
    let trace = with_noise(cfg, decay)?;
    emit(cfg, out_dir, "decay", &trace, "Hahn echo decay")?;

    if let Some(seq) = &cfg.sequence {
        if seq.sequence != SequenceKind::Hahn {
            return Err(Failure::Usage(
                "simulate-decay needs a hahn sequence".into(),
            ));
        }
        let transient = run_sequence(&seq.build(0.0)?, &seq.ensemble(), relax)?;
        emit(cfg, out_dir, "transient", &transient, "Hahn echo transient")?;
    }
    Ok(())
}

fn simulate_recovery(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Outcome {
    let relax = cfg.require(&cfg.relaxation, "relaxation")?;
    let recovery = cfg.require(&cfg.recovery, "recovery")?;
    let seq = cfg.require(&cfg.sequence, "sequence")?;
    if seq.sequence != SequenceKind::InversionRecovery {
        return Err(Failure::Usage(
            "simulate-recovery needs an inversion_recovery sequence".into(),
        ));
    }
    let curve = inversion_recovery_curve(
        &recovery.values(),
        relax,
        seq.tau_ns,
        seq.inversion_efficiency,
        1.0,
    )?;
    let trace = with_noise(cfg, curve)?;
    emit(cfg, out_dir, "recovery", &trace, "inversion recovery")
}

fn report(res: &FitResult, input: &Path, out: Option<&Path>, out_dir: Option<&Path>) -> Outcome {
    let json = res.to_json()?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input
                .file_stem()
                .map_or("trace".into(), |s| s.to_string_lossy().into_owned());
            out_dir
                .map(Path::to_path_buf)
                .unwrap_or_else(spinecho::config::default_output_dir)
                .join(format!("{stem}_fit.json"))
        }
    };
    write_file(&path, &format!("{json}\n"))?;
    eprintln!("{json}");
    if res.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}
