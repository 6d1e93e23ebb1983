//! Scenario execution: map a parsed config onto the solver that realizes it
//! and write the sampled series plus a JSON summary.

use crate::config::{Dissipation, Method, ScenarioConfig};
use crate::output::{self, Column};
use anyhow::Context;
use serde::Serialize;
use spinboson::correlation::{corr2_analytic, Corr2Params};
use spinboson::exec::Execution;
use spinboson::hilbert::{StateVector, C64};
use spinboson::models::{
    beta_of, build_model, donor_thermal_state, OscillatorMode, SpinParams, SPEED_OF_LIGHT_CM_PER_S,
};
use spinboson::propagate::{lindblad_evolve, tcl2_evolve, Observable, TimeGrid};
use spinboson::pulses::{run_trotter_ensemble, trotterize, RabiMap};
use spinboson::stochastic::{run_detuned_ensemble, DetunedScenario, EnsembleSeries, ThermalPrepConfig};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// A config reduced to solver inputs.  Frequencies are in units of the
/// reference splitting and times are dimensionless; `time_unit` converts
/// sampled times back to the config's own unit for the CSV.
pub struct Core {
    pub spin: SpinParams,
    pub modes: Vec<OscillatorMode>,
    pub t_max: f64,
    pub samples: usize,
    pub prep: Option<ThermalPrepConfig>,
    pub time_unit: f64,
}

pub fn to_core(cfg: &ScenarioConfig) -> anyhow::Result<Core> {
    // With [units], frequency-valued keys are wavenumbers and t_max (and the
    // kick duration) are seconds: omega_ul = omega_cm / ref and
    // t_ul = t_s * 2 pi c ref, with c in cm/s.
    let (inv_ref, t_scale) = match &cfg.units {
        Some(u) => {
            let r = u.reference_delta_cm;
            (1.0 / r, std::f64::consts::TAU * SPEED_OF_LIGHT_CM_PER_S * r)
        }
        None => (1.0, 1.0),
    };
    let modes = cfg
        .modes
        .iter()
        .map(|m| OscillatorMode {
            nu: m.nu * inv_ref,
            kappa: m.kappa * inv_ref,
            gamma: m.gamma * inv_ref,
            nbar: m.nbar,
            fock_dim: m.fock_dim,
        })
        .collect();
    let prep = cfg
        .prep
        .as_ref()
        .map(|p| ThermalPrepConfig::new(p.n_kicks, p.kick_duration * t_scale, p.rabi * inv_ref))
        .transpose()?;
    Ok(Core {
        spin: SpinParams { epsilon: cfg.spin.epsilon * inv_ref, delta: cfg.spin.delta * inv_ref },
        modes,
        t_max: cfg.run.t_max * t_scale,
        samples: cfg.run.samples,
        prep,
        time_unit: 1.0 / t_scale,
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ScenarioConfig,
    fitted: serde_json::Value,
    seed: Option<u64>,
    runtime_s: f64,
    truncation_ok: bool,
    version: &'static str,
}

pub struct Artifact {
    pub csv: PathBuf,
    pub json: PathBuf,
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    stem: &str,
    exec: Execution,
) -> anyhow::Result<Artifact> {
    let core = to_core(cfg)?;
    let started = Instant::now();
    let (times_ul, columns, truncation_ok) = match cfg.run.method {
        Method::Lindblad => run_lindblad(cfg, &core)?,
        Method::Tcl2 => run_tcl2(cfg, &core)?,
        Method::Trajectories => run_trajectories(cfg, &core, exec)?,
        Method::Pulse => run_pulse(&core, cfg, exec)?,
    };
    let times: Vec<f64> = times_ul.iter().map(|t| t * core.time_unit).collect();
    let csv = out_dir.join(format!("{stem}.csv"));
    let json = out_dir.join(format!("{stem}.json"));
    output::write_csv(&csv, &times, &columns)?;
    output::write_json(
        &json,
        &Summary {
            config: cfg,
            fitted: serde_json::Value::Null,
            seed: cfg.run.seed,
            runtime_s: started.elapsed().as_secs_f64(),
            truncation_ok,
            version: env!("CARGO_PKG_VERSION"),
        },
    )?;
    if !truncation_ok {
        eprintln!(
            "warning: {stem}: population reached the top Fock level; raise fock_dim before trusting this run"
        );
    }
    Ok(Artifact { csv, json })
}

type SampledRun = (Vec<f64>, Vec<Column>, bool);

fn exact(label: String, values: &[f64]) -> Column {
    Column { label, mean: values.to_vec(), std: vec![0.0; values.len()] }
}

fn sampled(label: String, s: &EnsembleSeries) -> Column {
    Column { label, mean: s.mean.clone(), std: s.std.clone() }
}

fn run_lindblad(cfg: &ScenarioConfig, core: &Core) -> anyhow::Result<SampledRun> {
    let model = build_model(core.spin, &core.modes, cfg.run.dissipation.kind())?;
    let rho0 = donor_thermal_state(&core.modes)?;
    let grid = TimeGrid::new(core.t_max, core.samples)?;
    let extra: Vec<Observable> =
        (0..core.modes.len()).map(|mode| Observable::ModeOccupation { mode }).collect();
    let res = lindblad_evolve(&model, &rho0, &grid, &extra)?;
    let mut columns =
        vec![exact("P0".into(), res.donor_population().context("donor series missing")?)];
    for l in 0..core.modes.len() {
        let series = res
            .series(&format!("n_mode{l}"))
            .with_context(|| format!("occupation series for mode {l} missing"))?;
        // config sections are 1-based, so the CSV is too
        columns.push(exact(format!("n_mode{}", l + 1), series));
    }
    Ok((res.times, columns, res.truncation_ok))
}

fn run_tcl2(cfg: &ScenarioConfig, core: &Core) -> anyhow::Result<SampledRun> {
    // The second-order kernel sees the bath only through the summed two-point
    // function.  dissipation = none zeroes the decay envelopes; uncoupled
    // modes carry no kernel weight at all.
    let mut terms = Vec::new();
    for m in &core.modes {
        if m.kappa == 0.0 {
            continue;
        }
        let gamma = if cfg.run.dissipation == Dissipation::None { 0.0 } else { m.gamma };
        let beta = if m.nbar > 0.0 { beta_of(m.nbar, m.nu)? } else { f64::INFINITY };
        terms.push(Corr2Params::new(m.kappa, gamma, m.nu, beta)?);
    }
    let corr = move |t: f64| terms.iter().map(|p| corr2_analytic(p, t)).sum::<C64>();
    let rho0 = StateVector::basis(2, 0)?.to_density();
    let grid = TimeGrid::new(core.t_max, core.samples)?;
    let res = tcl2_evolve(&core.spin, corr, &rho0, &grid)?;
    let columns =
        vec![exact("P0".into(), res.donor_population().context("donor series missing")?)];
    Ok((res.times, columns, res.truncation_ok))
}

fn run_trajectories(cfg: &ScenarioConfig, core: &Core, exec: Execution) -> anyhow::Result<SampledRun> {
    // presence of trotter_steps/trajectories/seed is validated at parse time
    let steps = cfg.run.trotter_steps.expect("validated");
    let trials = cfg.run.trajectories.expect("validated");
    let seed = cfg.run.seed.expect("validated");
    let mut scenario = DetunedScenario::new(core.spin, core.modes.clone(), core.t_max, steps)?;
    scenario.record_occupations = true;
    if let Some(p) = core.prep {
        for l in 0..core.modes.len() {
            scenario = scenario.with_prep(l, p)?;
        }
    }
    let res = run_detuned_ensemble(&scenario, trials, seed, exec)?;
    let mut columns =
        vec![sampled("P0".into(), res.donor().context("donor series missing")?)];
    for l in 0..core.modes.len() {
        let s = res
            .series(&format!("n_mode{l}"))
            .with_context(|| format!("occupation series for mode {l} missing"))?;
        columns.push(sampled(format!("n_mode{}", l + 1), s));
    }
    Ok((res.times, columns, res.truncation_ok))
}

fn run_pulse(core: &Core, cfg: &ScenarioConfig, exec: Execution) -> anyhow::Result<SampledRun> {
    let steps = cfg.run.trotter_steps.expect("validated");
    let trials = cfg.run.trajectories.expect("validated");
    let seed = cfg.run.seed.expect("validated");
    // Unit Rabi rates: the compiled pulse areas already carry the couplings.
    let rabi = RabiMap { carrier: 1.0, sideband: vec![1.0; core.modes.len()] };
    let sched = trotterize(core.spin, &core.modes, core.t_max, steps, &rabi)?;
    let prep: Vec<Option<ThermalPrepConfig>> = vec![core.prep; core.modes.len()];
    let res = run_trotter_ensemble(&sched, &prep, trials, seed, exec)?;
    let columns =
        vec![sampled("P0".into(), res.donor().context("donor series missing")?)];
    Ok((res.times, columns, res.truncation_ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn wavenumber_configs_reduce_to_unitless_solver_inputs() {
        let cfg = parse_config(
            "[spin]\nepsilon = 100\ndelta = 30\n\n\
             [mode.1]\nnu = 104\nkappa = 30\ngamma = 10\nnbar = 0\n\n\
             [run]\nt_max = 4.0027691423778245e-12\nmethod = lindblad\n\n\
             [units]\nreference_delta_cm = 30\n",
        )
        .unwrap();
        let core = to_core(&cfg).unwrap();
        assert!((core.spin.epsilon - 100.0 / 30.0).abs() < 1e-12);
        assert!((core.modes[0].nu - 104.0 / 30.0).abs() < 1e-12);
        assert!((core.modes[0].gamma - 1.0 / 3.0).abs() < 1e-12);
        // 12 bias periods: with epsilon as the clock, t = 12 * 2 pi / eps_ul
        assert!((core.t_max - 0.3 * 75.39822368615503).abs() < 1e-9);
        // CSV times come back out in seconds
        assert!((core.t_max * core.time_unit - 4.0027691423778245e-12).abs() < 1e-22);
    }

    #[test]
    fn lindblad_run_emits_occupation_columns() {
        let cfg = parse_config(
            "[spin]\nepsilon = 0\ndelta = 1\n\n\
             [mode.1]\nnu = 1\nkappa = 0.1\ngamma = 0.2\nnbar = 0\nfock_dim = 6\n\n\
             [run]\nt_max = 3\nsamples = 7\nmethod = lindblad\n",
        )
        .unwrap();
        let core = to_core(&cfg).unwrap();
        let (times, columns, ok) = run_lindblad(&cfg, &core).unwrap();
        assert!(ok);
        assert_eq!(times.len(), 7);
        assert_eq!(columns.len(), 2);
        assert_eq!(columns[1].label, "n_mode1");
        assert!((columns[0].mean[0] - 1.0).abs() < 1e-10);
        assert!(columns.iter().all(|c| c.std.iter().all(|&s| s == 0.0)));
    }
}
