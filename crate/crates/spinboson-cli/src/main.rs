//! Command-line front end: scenario runs, spectral-density fits, bath
//! correlation checks, pulse calibration scans, and unit mapping.
//!
//! Exit codes: 0 on success, 1 for usage and config mistakes, 2 when a
//! simulation or an output write fails.

mod config;
mod output;
mod presets;
mod run;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use spinboson::correlation::{corr2_analytic, corr2_numeric, corr4_closed, corr4_numeric, Corr2Params};
use spinboson::exec::{map_indexed, Execution};
use spinboson::hilbert::C64;
use spinboson::models::{
    beta_of, lorentzian_density, map_parameters, map_to_ion, nbar_of, DissipationKind,
    LorentzianPeak, OscillatorMode, SpectralDensity, UnitlessParams,
};
use spinboson::pulses::{
    calibrate_light_shift_scan, calibrate_motion_freq_scan, calibrate_spin_phase_scan, scan_width,
};
use spinboson::specfit::{fit_lorentzians, FitProblem, ObjectiveKind, ParamBounds};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "spinboson",
    version,
    about = "spin-boson dynamics with structured baths: simulation, fitting, calibration"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or a built-in preset
    Simulate {
        /// Scenario config file
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in preset name (see `presets --list`)
        #[arg(long)]
        preset: Option<String>,
        /// Output directory for CSV/JSON pairs
        #[arg(long)]
        out: PathBuf,
        /// Override the [run] seed (sampled methods only)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a bank of Lorentzian peaks to a target spectral density
    FitSpectral {
        #[arg(long, value_parser = ["leggett", "lorentzian-file"])]
        target: String,
        /// Spectral exponent of the leggett target
        #[arg(long)]
        s: Option<f64>,
        /// Amplitude of the leggett target
        #[arg(long = "A")]
        amplitude: Option<f64>,
        /// Exponential cutoff of the leggett target
        #[arg(long)]
        omega_c: Option<f64>,
        /// CSV of kappa,gamma,nu rows defining the lorentzian-file target
        #[arg(long)]
        file: Option<PathBuf>,
        /// Number of peaks to fit
        #[arg(long)]
        peaks: usize,
        /// Fit band LO:HI
        #[arg(long)]
        band: String,
        #[arg(long, default_value = "sd", value_parser = ["sd", "corr"])]
        objective: String,
        /// Target inverse temperature (corr objective only)
        #[arg(long)]
        beta: Option<f64>,
        /// Objective evaluation budget
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare numeric and closed-form bath correlation functions
    Correlate {
        #[arg(long, value_parser = ["damped", "dephased"])]
        kind: String,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        nbar: f64,
        #[arg(long, default_value_t = 20)]
        fock_dim: usize,
        #[arg(long, default_value_t = 25.0)]
        t_max: f64,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        /// Also sample the four-point function on the diagonal (t, t, 0, 0)
        #[arg(long)]
        four_point: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pulse-level calibration scans around the ideal settings
    Calibrate {
        #[arg(long, value_parser = ["spin-phase", "light-shift", "motion-freq"])]
        scan: String,
        /// Sample grid LO:HI:N
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Kick duration
        #[arg(long)]
        tau: f64,
        /// Kick count (spin-phase and light-shift scans; default 5)
        #[arg(long)]
        kicks: Option<usize>,
        #[arg(long)]
        fock_dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print unit mappings between unitless, wavenumber, and trap scales
    MapParams {
        /// Built-in demonstration mapping (s1: three modes, s2: biased mode)
        #[arg(long, value_parser = ["s1", "s2"])]
        table: Option<String>,
        /// Pin the exchange splitting of --config to this many wavenumbers
        #[arg(long)]
        delta_cm: Option<f64>,
        /// Unitless scenario to map
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Built-in scenarios
    Presets {
        /// List every preset with a one-line description
        #[arg(long, required = true)]
        list: bool,
    },
}

enum CliError {
    Usage(anyhow::Error),
    Engine(anyhow::Error),
}

fn usage<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Usage(e.into())
}

fn engine<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Engine(e.into())
}

/// SPINBOSON_THREADS: 0 or unset uses every core, 1 forces the sequential
/// path, larger values cap the worker pool (read at first parallel use).
fn execution() -> Execution {
    match std::env::var("SPINBOSON_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(1) => Execution::Sequential,
        Some(n) if n > 1 => {
            std::env::set_var("RAYON_NUM_THREADS", n.to_string());
            Execution::Parallel
        }
        _ => Execution::Parallel,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; only real mistakes exit 1
            let is_usage = e.use_stderr();
            let _ = e.print();
            return if is_usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Engine(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let exec = execution();
    match cli.cmd {
        Cmd::Simulate { config, preset, out, seed } => cmd_simulate(config, preset, &out, seed, exec),
        Cmd::FitSpectral {
            target,
            s,
            amplitude,
            omega_c,
            file,
            peaks,
            band,
            objective,
            beta,
            budget,
            seed,
            out,
        } => cmd_fit_spectral(FitArgs {
            target,
            s,
            amplitude,
            omega_c,
            file,
            peaks,
            band,
            objective,
            beta,
            budget,
            seed,
            out,
        }),
        Cmd::Correlate { kind, nu, kappa, gamma, nbar, fock_dim, t_max, samples, four_point, out } => {
            cmd_correlate(&kind, nu, kappa, gamma, nbar, fock_dim, t_max, samples, four_point, &out, exec)
        }
        Cmd::Calibrate { scan, grid, tau, kicks, fock_dim, out } => {
            cmd_calibrate(&scan, &grid, tau, kicks, fock_dim, &out, exec)
        }
        Cmd::MapParams { table, delta_cm, config } => cmd_map_params(table, delta_cm, config),
        Cmd::Presets { list: _ } => {
            for p in presets::all() {
                println!("{:<12} {}", p.name, p.about);
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(
    config: Option<PathBuf>,
    preset: Option<String>,
    out: &Path,
    seed: Option<u64>,
    exec: Execution,
) -> Result<(), CliError> {
    let from_preset = preset.is_some();
    let items: Vec<(String, config::ScenarioConfig)> = match (config, preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(usage)?;
            let cfg = parse_with_path(&text, &path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            vec![(stem, cfg)]
        }
        (None, Some(name)) => {
            let p = presets::find(&name).ok_or_else(|| {
                usage(anyhow!("unknown preset \"{name}\"; see `spinboson presets --list`"))
            })?;
            let mut items = Vec::new();
            for i in &p.items {
                let cfg = config::parse_config(&i.text)
                    .map_err(|e| engine(anyhow!("embedded preset {}/{}: {e}", p.name, i.label)))?;
                items.push((format!("{}-{}", p.name, i.label), cfg));
            }
            items
        }
        _ => return Err(usage(anyhow!("pass exactly one of --config or --preset"))),
    };
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(engine)?;
    for (stem, mut cfg) in items {
        if let Some(s) = seed {
            if !cfg.run.method.is_sampled() {
                return Err(usage(anyhow!(
                    "--seed has no effect on method = {}; it applies to trajectories and pulse runs",
                    cfg.run.method.as_str()
                )));
            }
            cfg.run.seed = Some(s);
        }
        if from_preset {
            // materialize the embedded scenario, defaults and overrides
            // included, so a preset run can be tweaked and repeated
            output::atomic_write(
                &out.join(format!("{stem}.conf")),
                config::emit_config(&cfg).as_bytes(),
            )
            .map_err(engine)?;
        }
        let artifact = run::run_scenario(&cfg, out, &stem, exec).map_err(engine)?;
        println!("wrote {} and {}", artifact.csv.display(), artifact.json.display());
    }
    Ok(())
}

fn parse_with_path(text: &str, path: &Path) -> Result<config::ScenarioConfig, CliError> {
    config::parse_config(text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// fit-spectral

struct FitArgs {
    target: String,
    s: Option<f64>,
    amplitude: Option<f64>,
    omega_c: Option<f64>,
    file: Option<PathBuf>,
    peaks: usize,
    band: String,
    objective: String,
    beta: Option<f64>,
    budget: usize,
    seed: u64,
    out: PathBuf,
}

#[derive(Serialize)]
struct PeakJson {
    kappa: f64,
    gamma: f64,
    nu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nbar: Option<f64>,
}

#[derive(Serialize)]
struct FitJson<'a> {
    target: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    band: [f64; 2],
    objective_kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_beta: Option<f64>,
    peaks_requested: usize,
    budget: usize,
    seed: u64,
    n_grid: usize,
    peaks: Vec<PeakJson>,
    objective: f64,
    evaluations: usize,
    constraints_ok: bool,
    runtime_s: f64,
    version: &'static str,
}

fn cmd_fit_spectral(args: FitArgs) -> Result<(), CliError> {
    let band = parse_pair(&args.band).map_err(usage)?;
    let target = match args.target.as_str() {
        "leggett" => {
            let (s, a, omega_c) = match (args.s, args.amplitude, args.omega_c) {
                (Some(s), Some(a), Some(w)) => (s, a, w),
                _ => {
                    return Err(usage(anyhow!(
                        "--target leggett needs --s, --A, and --omega-c"
                    )))
                }
            };
            SpectralDensity::Leggett { a, s, omega_c }
        }
        _ => {
            let path = args
                .file
                .as_ref()
                .ok_or_else(|| usage(anyhow!("--target lorentzian-file needs --file")))?;
            SpectralDensity::LorentzianSum { peaks: read_peak_file(path)? }
        }
    };
    let kind = match args.objective.as_str() {
        "sd" => ObjectiveKind::SpectralDensity,
        _ => ObjectiveKind::Correlation,
    };
    if kind == ObjectiveKind::Correlation && args.beta.is_none() {
        return Err(usage(anyhow!("--objective corr needs --beta")));
    }

    let bounds = default_bounds(band, args.beta);
    let nu_bounds = bounds.nu;
    let mut problem =
        FitProblem::new(target.clone(), band, args.peaks, bounds, args.budget, args.seed);
    problem.target_beta = args.beta;

    let started = Instant::now();
    let result = fit_lorentzians(&problem, kind).map_err(engine)?;
    let runtime_s = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(engine)?;

    // fitted vs target density over the search window
    let fitted: Vec<LorentzianPeak> = result.peaks.iter().map(|f| f.peak).collect();
    let mut csv = String::from("omega,target,fit\n");
    let n_plot = 200;
    for i in 0..n_plot {
        let w = nu_bounds.0 + (nu_bounds.1 - nu_bounds.0) * i as f64 / (n_plot - 1) as f64;
        csv += &format!("{w},{},{}\n", target.eval(w), lorentzian_density(&fitted, w));
    }
    output::atomic_write(&args.out.join("density.csv"), csv.as_bytes()).map_err(engine)?;

    let peaks_json = result
        .peaks
        .iter()
        .map(|f| PeakJson {
            kappa: f.peak.kappa,
            gamma: f.peak.gamma,
            nu: f.peak.nu,
            beta: f.beta,
            nbar: f.beta.and_then(|b| nbar_of(b, f.peak.nu).ok()),
        })
        .collect();
    output::write_json(
        &args.out.join("fit.json"),
        &FitJson {
            target: &args.target,
            s: args.s,
            amplitude: args.amplitude,
            omega_c: args.omega_c,
            file: args.file.as_ref().map(|p| p.display().to_string()),
            band: [band.0, band.1],
            objective_kind: &args.objective,
            target_beta: args.beta,
            peaks_requested: args.peaks,
            budget: args.budget,
            seed: args.seed,
            n_grid: problem.n_grid,
            peaks: peaks_json,
            objective: result.objective,
            evaluations: result.evaluations,
            constraints_ok: result.constraints_ok,
            runtime_s,
            version: VERSION,
        },
    )
    .map_err(engine)?;
    println!(
        "fit objective {:.6e} after {} evaluations; wrote {}",
        result.objective,
        result.evaluations,
        args.out.join("fit.json").display()
    );
    Ok(())
}

/// Search box derived from the band: peak positions may straddle the band by
/// half its width, widths stay strictly inside the underdamped regime for
/// every admissible position, and amplitudes are effectively unconstrained.
fn default_bounds(band: (f64, f64), beta: Option<f64>) -> ParamBounds {
    let w = band.1 - band.0;
    let nu_lo = (band.0 - 0.5 * w).max(0.25 * band.0);
    let nu_hi = band.1 + 0.5 * w;
    ParamBounds {
        kappa: (1e-3, 5.0),
        gamma: (1e-3, 0.49 * nu_lo),
        nu: (nu_lo, nu_hi),
        beta: beta.map(|b| (0.1 * b, 10.0 * b)),
    }
}

fn read_peak_file(path: &Path) -> Result<Vec<LorentzianPeak>, CliError> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    let mut peaks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with("kappa") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(usage(anyhow!(
                "{}:{}: expected kappa,gamma,nu, got \"{line}\"",
                path.display(),
                i + 1
            )));
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage(anyhow!("{}:{}: {e}", path.display(), i + 1)))?;
        peaks.push(LorentzianPeak { kappa: nums[0], gamma: nums[1], nu: nums[2] });
    }
    if peaks.is_empty() {
        return Err(usage(anyhow!("{} holds no peaks", path.display())));
    }
    Ok(peaks)
}

// ---------------------------------------------------------------------------
// correlate

#[derive(Serialize)]
struct CorrJson<'a> {
    kind: &'a str,
    nu: f64,
    kappa: f64,
    gamma: f64,
    nbar: f64,
    fock_dim: usize,
    t_max: f64,
    samples: usize,
    four_point: bool,
    max_c2_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_c4_deviation: Option<f64>,
    runtime_s: f64,
    version: &'static str,
}

#[allow(clippy::too_many_arguments)]
fn cmd_correlate(
    kind_name: &str,
    nu: f64,
    kappa: f64,
    gamma: f64,
    nbar: f64,
    fock_dim: usize,
    t_max: f64,
    samples: usize,
    four_point: bool,
    out: &Path,
    exec: Execution,
) -> Result<(), CliError> {
    if samples < 2 || !(t_max > 0.0) {
        return Err(usage(anyhow!("need --samples >= 2 and --t-max > 0")));
    }
    let kind = match kind_name {
        "damped" => DissipationKind::Damped,
        _ => DissipationKind::Dephased,
    };
    let mode = OscillatorMode { nu, kappa, gamma, nbar, fock_dim };
    let beta = if nbar > 0.0 { beta_of(nbar, nu).map_err(usage)? } else { f64::INFINITY };
    let params = Corr2Params::new(kappa, gamma, nu, beta).map_err(usage)?;
    let grid: Vec<f64> =
        (0..samples).map(|i| t_max * i as f64 / (samples - 1) as f64).collect();

    let started = Instant::now();
    let numeric = corr2_numeric(&mode, kind, &grid).map_err(engine)?;
    let closed: Vec<C64> = grid.iter().map(|&t| corr2_analytic(&params, t)).collect();
    let max_c2 = numeric
        .values
        .iter()
        .zip(&closed)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);

    let four = if four_point {
        let results = map_indexed(exec, grid.len(), |i| {
            corr4_numeric(&mode, kind, grid[i], grid[i], 0.0, 0.0)
        });
        let numeric4: Vec<C64> =
            results.into_iter().collect::<spinboson::Result<_>>().map_err(engine)?;
        let closed4: Vec<C64> =
            grid.iter().map(|&t| corr4_closed(kind, &params, t, t, 0.0, 0.0)).collect();
        Some((numeric4, closed4))
    } else {
        None
    };
    let runtime_s = started.elapsed().as_secs_f64();

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(engine)?;
    let mut csv = String::from("time,c2_re,c2_im,c2_closed_re,c2_closed_im");
    if four_point {
        csv += ",c4_re,c4_im,c4_closed_re,c4_closed_im";
    }
    csv.push('\n');
    for i in 0..grid.len() {
        let (n2, c2) = (numeric.values[i], closed[i]);
        csv += &format!("{},{},{},{},{}", grid[i], n2.re, n2.im, c2.re, c2.im);
        if let Some((n4, c4)) = &four {
            csv += &format!(",{},{},{},{}", n4[i].re, n4[i].im, c4[i].re, c4[i].im);
        }
        csv.push('\n');
    }
    output::atomic_write(&out.join("correlation.csv"), csv.as_bytes()).map_err(engine)?;

    let max_c4 = four.as_ref().map(|(n4, c4)| {
        n4.iter().zip(c4).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    });
    output::write_json(
        &out.join("correlation.json"),
        &CorrJson {
            kind: kind_name,
            nu,
            kappa,
            gamma,
            nbar,
            fock_dim,
            t_max,
            samples,
            four_point,
            max_c2_deviation: max_c2,
            max_c4_deviation: max_c4,
            runtime_s,
            version: VERSION,
        },
    )
    .map_err(engine)?;
    println!("max two-point deviation {max_c2:.3e}; wrote {}", out.join("correlation.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Serialize)]
struct ScanJson<'a> {
    scan: &'a str,
    tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kicks: Option<usize>,
    fock_dim: usize,
    n_points: usize,
    peak_offset: f64,
    peak_p0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    width_note: Option<String>,
    runtime_s: f64,
    version: &'static str,
}

fn cmd_calibrate(
    scan: &str,
    grid_spec: &str,
    tau: f64,
    kicks: Option<usize>,
    fock_dim: Option<usize>,
    out: &Path,
    exec: Execution,
) -> Result<(), CliError> {
    let grid = parse_grid(grid_spec).map_err(usage)?;
    let started = Instant::now();
    let (values, kicks_used, fock_used) = match scan {
        "spin-phase" => {
            let k = kicks.unwrap_or(5);
            let d = fock_dim.unwrap_or(20);
            (calibrate_spin_phase_scan(&grid, tau, k, d, exec).map_err(engine)?, Some(k), d)
        }
        "light-shift" => {
            let k = kicks.unwrap_or(5);
            let d = fock_dim.unwrap_or(20);
            (calibrate_light_shift_scan(&grid, tau, k, d, exec).map_err(engine)?, Some(k), d)
        }
        _ => {
            if kicks.is_some() {
                return Err(usage(anyhow!(
                    "the motion-frequency loop always uses four kicks; drop --kicks"
                )));
            }
            let d = fock_dim.unwrap_or(64);
            (calibrate_motion_freq_scan(&grid, tau, d, exec).map_err(engine)?, None, d)
        }
    };
    let runtime_s = started.elapsed().as_secs_f64();

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(engine)?;
    let mut csv = String::from("offset,P0\n");
    for (x, p) in grid.iter().zip(&values) {
        csv += &format!("{x},{p}\n");
    }
    output::atomic_write(&out.join("scan.csv"), csv.as_bytes()).map_err(engine)?;

    let (i_peak, &peak_p0) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    let (width, width_note) = match scan_width(&grid, &values) {
        Ok(w) => (Some(w), None),
        Err(e) => (None, Some(e.to_string())),
    };
    output::write_json(
        &out.join("scan.json"),
        &ScanJson {
            scan,
            tau,
            kicks: kicks_used,
            fock_dim: fock_used,
            n_points: grid.len(),
            peak_offset: grid[i_peak],
            peak_p0,
            width,
            width_note,
            runtime_s,
            version: VERSION,
        },
    )
    .map_err(engine)?;
    println!(
        "peak P0 = {peak_p0:.6} at offset {}; wrote {}",
        grid[i_peak],
        out.join("scan.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// map-params

/// Demonstration trap rates (2 pi kHz): per-mode sideband couplings for the
/// three-mode mapping, carrier and sideband for the biased single mode.
const S1_SIDEBAND_KHZ: [f64; 3] = [2.13, 1.43, 1.19];
const S2_CARRIER_KHZ: f64 = 49.82;
const S2_SIDEBAND_KHZ: f64 = 8.0;

fn cmd_map_params(
    table: Option<String>,
    delta_cm: Option<f64>,
    config: Option<PathBuf>,
) -> Result<(), CliError> {
    match (table, delta_cm, config) {
        (Some(t), None, None) => print_builtin(&t).map_err(engine),
        (None, Some(reference), Some(path)) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(usage)?;
            let cfg = parse_with_path(&text, &path)?;
            if cfg.units.is_some() {
                return Err(usage(anyhow!(
                    "{} already carries wavenumber units; map a unitless scenario",
                    path.display()
                )));
            }
            let u = UnitlessParams {
                epsilon: cfg.spin.epsilon,
                delta: cfg.spin.delta,
                kappas: cfg.modes.iter().map(|m| m.kappa).collect(),
                nus: cfg.modes.iter().map(|m| m.nu).collect(),
                t_total: cfg.run.t_max,
            };
            let mol = map_parameters(&u, reference).map_err(engine)?;
            println!("wavenumbers (cm^-1), spin splitting pinned to {reference}:");
            println!("  epsilon = {:.4}", mol.epsilon_cm);
            println!("  delta   = {:.4}", mol.delta_cm);
            for (l, (kappa, nu)) in mol.kappas_cm.iter().zip(&mol.nus_cm).enumerate() {
                println!("  mode {}: kappa = {kappa:.4}, nu = {nu:.4}", l + 1);
            }
            println!("  T       = {:.6e} s", mol.t_total_s);
            Ok(())
        }
        _ => Err(usage(anyhow!("pass either --table s1|s2, or --delta-cm together with --config"))),
    }
}

fn print_builtin(table: &str) -> anyhow::Result<()> {
    let tau = std::f64::consts::TAU;
    if table == "s1" {
        let u = UnitlessParams {
            epsilon: 0.0,
            delta: 1.0,
            kappas: vec![0.1; 3],
            nus: vec![1.01, 0.99, 0.97],
            t_total: 80.4247719318987,
        };
        let mol = map_parameters(&u, 500.0)?;
        let kappa_ion: Vec<f64> = S1_SIDEBAND_KHZ.iter().map(|k| tau * k * 1e3).collect();
        let ion = map_to_ion(&u, &kappa_ion)?;
        println!("three near-resonant modes");
        println!(
            "  unitless     delta = {}  kappa = {:?}  nu = {:?}  T = {:.4}",
            u.delta, u.kappas, u.nus, u.t_total
        );
        println!(
            "  wavenumbers  delta = {} cm^-1  kappa = {:?} cm^-1  nu = {:?} cm^-1  T = {:.4} fs",
            mol.delta_cm,
            mol.kappas_cm,
            mol.nus_cm,
            mol.t_total_s * 1e15
        );
        for (l, m) in ion.iter().enumerate() {
            println!(
                "  trap mode {}  delta = 2pi x {:.3} kHz  kappa = 2pi x {:.3} kHz  nu = 2pi x {:.3} kHz  T = {:.4} ms",
                l + 1,
                m.delta_ion / (tau * 1e3),
                kappa_ion[l] / (tau * 1e3),
                m.nu_ion / (tau * 1e3),
                m.t_ion_s * 1e3
            );
        }
    } else {
        let u = UnitlessParams {
            epsilon: 1.0,
            delta: 0.3,
            kappas: vec![0.3],
            nus: vec![1.04],
            t_total: 75.39822368615503,
        };
        let mol = map_parameters(&u, 30.0)?;
        let ion = map_to_ion(&u, &[tau * S2_SIDEBAND_KHZ * 1e3])?;
        // bias pulse length from the carrier rate: eps_ul T_ul = eps_ion T_bias
        let t_bias = u.epsilon * u.t_total / (tau * S2_CARRIER_KHZ * 1e3);
        println!("single resonant mode with bias");
        println!(
            "  unitless     epsilon = {}  delta = {}  kappa = {}  nu = {}  T = {:.4}",
            u.epsilon, u.delta, u.kappas[0], u.nus[0], u.t_total
        );
        println!(
            "  wavenumbers  epsilon = {} cm^-1  delta = {} cm^-1  kappa = {} cm^-1  nu = {} cm^-1  T = {:.4} ps",
            mol.epsilon_cm,
            mol.delta_cm,
            mol.kappas_cm[0],
            mol.nus_cm[0],
            mol.t_total_s * 1e12
        );
        println!(
            "  trap         epsilon = 2pi x {:.3} kHz  delta = 2pi x {:.3} kHz  kappa = 2pi x {:.3} kHz  nu = 2pi x {:.3} kHz  T_bias = {:.4} ms  T_kick = {:.4} ms",
            S2_CARRIER_KHZ,
            ion[0].delta_ion / (tau * 1e3),
            S2_SIDEBAND_KHZ,
            ion[0].nu_ion / (tau * 1e3),
            t_bias * 1e3,
            ion[0].t_ion_s * 1e3
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// argument helpers

fn parse_pair(spec: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 2 {
        return Err(anyhow!("expected LO:HI, got \"{spec}\""));
    }
    let lo: f64 = parts[0].trim().parse().context("bad LO")?;
    let hi: f64 = parts[1].trim().parse().context("bad HI")?;
    if !(lo < hi) {
        return Err(anyhow!("need LO < HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(anyhow!("expected LO:HI:N, got \"{spec}\""));
    }
    let lo: f64 = parts[0].trim().parse().context("bad LO")?;
    let hi: f64 = parts[1].trim().parse().context("bad HI")?;
    let n: usize = parts[2].trim().parse().context("bad N")?;
    if !(lo < hi) || n < 2 {
        return Err(anyhow!("need LO < HI and N >= 2, got \"{spec}\""));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}
