//! Stochastic unraveling of the open-system dynamics: randomized thermal
//! state preparation, random-detuning dephasing ensembles, sampling noise,
//! and recovery of model parameters from ensemble data.
//!
//! Two randomization mechanisms stand in for the Lindblad channels:
//!
//! * Thermal preparation: N' resonant drive segments of duration tau' and
//!   Rabi frequency Omega~, each with an independent uniform phase, displace
//!   the oscillator along a random walk.  The trial average is a thermal
//!   state with nbar = N' (Omega~ tau' / 2)^2.
//! * Number dephasing: each of N evolution steps carries a constant detuning
//!   offset drawn from N(0, delta_std^2) with delta_std^2 tau^2 = Gamma T/N,
//!   so the trial average reproduces L = sqrt(Gamma) b†b over the total time.
//!
//! Everything is deterministic given a master seed.  Trial i seeds its own
//! ChaCha8 stream from the i-th output of a splitmix64 counter started at the
//! master seed, so results are bitwise reproducible regardless of execution
//! strategy, and the first k trials of an ensemble never depend on how many
//! trials follow them.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::hilbert::{
    coherent_state, coherent_tail_mass, fidelity, thermal_state, top_level_occupancy_pure,
    DensityMatrix, Operator, StateVector, C64,
};
use crate::models::{
    build_model, donor_thermal_state, DissipationKind, LindbladModel, OscillatorMode, SpinParams,
};
use crate::propagate::{hermitian_propagator, lindblad_evolve, TimeGrid, TRUNCATION_THRESHOLD};

/// Trial count used by the numerical studies in this crate.
pub const DEFAULT_TRIALS: usize = 2000;
/// Trial count of the trapped-ion hardware runs, each trial repeated
/// [`HARDWARE_REPETITIONS`] times to beat projection noise.
pub const HARDWARE_TRIALS: usize = 20;
/// Measurement repetitions per hardware trial.
pub const HARDWARE_REPETITIONS: usize = 100;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// splitmix64 increment; odd, so distinct counters give distinct states.
const SEED_STEP: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
fn mix64(x: u64) -> u64 {
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The RNG of trial `trial` under `master_seed`: ChaCha8 seeded by the
/// (trial+1)-th splitmix64 output.  Pure function of its arguments, so any
/// trial can be replayed in isolation.
pub fn trial_rng(master_seed: u64, trial: usize) -> ChaCha8Rng {
    let counter = master_seed.wrapping_add((trial as u64 + 1).wrapping_mul(SEED_STEP));
    ChaCha8Rng::seed_from_u64(mix64(counter))
}

/// A decorrelated master seed for an independent ensemble lane (one lane per
/// parameter combination in sweeps, so adding combinations never reshuffles
/// existing ones).
fn lane_seed(master_seed: u64, lane: u64) -> u64 {
    mix64(master_seed ^ mix64(lane.wrapping_add(SEED_STEP)))
}

// ---------------------------------------------------------------------------
// Randomized thermal preparation

/// Randomized preparation protocol: `n_kicks` resonant drive segments of
/// duration `kick_duration`, Rabi frequency `rabi`, one uniform random phase
/// each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalPrepConfig {
    pub n_kicks: usize,
    pub kick_duration: f64,
    pub rabi: f64,
}

impl ThermalPrepConfig {
    pub fn new(n_kicks: usize, kick_duration: f64, rabi: f64) -> Result<Self> {
        if n_kicks < 1 {
            return Err(Error::InvalidParameter("need at least one kick".into()));
        }
        if !(kick_duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kick duration must be > 0, got {kick_duration}"
            )));
        }
        if !(rabi > 0.0) {
            return Err(Error::InvalidParameter(format!("Rabi rate must be > 0, got {rabi}")));
        }
        Ok(Self { n_kicks, kick_duration, rabi })
    }

    /// Solve N' (Omega~ tau'/2)^2 = nbar for the Rabi rate at fixed kick
    /// count and duration.
    pub fn from_target(n_kicks: usize, kick_duration: f64, nbar: f64) -> Result<Self> {
        if !(nbar > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target nbar must be > 0, got {nbar}"
            )));
        }
        let rabi = 2.0 * (nbar / n_kicks as f64).sqrt() / kick_duration;
        Self::new(n_kicks, kick_duration, rabi)
    }

    /// Ensemble-averaged phonon number of the prepared states,
    /// nbar = N' (Omega~ tau'/2)^2.
    pub fn implied_nbar(&self) -> f64 {
        let step = 0.5 * self.rabi * self.kick_duration;
        self.n_kicks as f64 * step * step
    }
}

/// Draw one uniform phase in [0, 2pi) per kick.
pub fn sample_kick_phases(cfg: &ThermalPrepConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..cfg.n_kicks).map(|_| std::f64::consts::TAU * rng.gen::<f64>()).collect()
}

/// The oscillator state after the kick sequence with the given phases.
///
/// Each segment H = (Omega~/2)(b e^{-i phi} + b† e^{i phi}) applied for tau'
/// is exactly the displacement D(alpha_k) with
/// alpha_k = -i (Omega~ tau'/2) e^{i phi_k}, and displacements compose by
/// adding amplitudes (up to a global phase), so the final state is the
/// coherent state of the summed amplitude.
pub fn thermal_prep_trajectory(
    cfg: &ThermalPrepConfig,
    phases: &[f64],
    fock_dim: usize,
) -> Result<StateVector> {
    if phases.len() != cfg.n_kicks {
        return Err(Error::InvalidParameter(format!(
            "{} phases for {} kicks",
            phases.len(),
            cfg.n_kicks
        )));
    }
    let step = 0.5 * cfg.rabi * cfg.kick_duration;
    let mut alpha = C64::new(0.0, 0.0);
    for &phi in phases {
        alpha += C64::new(0.0, -step) * C64::new(0.0, phi).exp();
    }
    let tail = coherent_tail_mass(alpha, fock_dim);
    if tail > TRUNCATION_THRESHOLD {
        return Err(Error::InvalidState(format!(
            "|alpha|^2 = {:.3} leaves {tail:.2e} above {fock_dim} levels",
            alpha.norm_sqr()
        )));
    }
    coherent_state(alpha, fock_dim)
}

// ---------------------------------------------------------------------------
// Randomized number dephasing

/// Random-detuning protocol targeting a number-dephasing rate `gamma_target`:
/// the evolution over `sim_time` is cut into `n_steps` segments of duration
/// `step_duration`, each with one constant frequency offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasingConfig {
    pub gamma_target: f64,
    pub sim_time: f64,
    pub n_steps: usize,
    pub step_duration: f64,
}

impl DephasingConfig {
    pub fn new(gamma_target: f64, sim_time: f64, n_steps: usize, step_duration: f64) -> Result<Self> {
        if !(gamma_target >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma target must be >= 0, got {gamma_target}"
            )));
        }
        if !(sim_time > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "simulated time must be > 0, got {sim_time}"
            )));
        }
        if n_steps < 1 {
            return Err(Error::InvalidParameter("need at least one step".into()));
        }
        if !(step_duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step duration must be > 0, got {step_duration}"
            )));
        }
        Ok(Self { gamma_target, sim_time, n_steps, step_duration })
    }

    /// Offset scale delta_std = sqrt(Gamma T / N) / tau, from requiring the
    /// accumulated phase variance per step, delta_std^2 tau^2, to equal the
    /// dephasing exponent Gamma T/N it replaces.
    pub fn detuning_std(&self) -> f64 {
        (self.gamma_target * self.sim_time / self.n_steps as f64).sqrt() / self.step_duration
    }
}

/// Draw one Gaussian frequency offset per step; exactly zero at zero target.
pub fn sample_detuning_offsets(cfg: &DephasingConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, cfg.detuning_std())
        .map_err(|e| Error::InvalidParameter(format!("offset distribution: {e}")))?;
    Ok((0..cfg.n_steps).map(|_| normal.sample(rng)).collect())
}

// ---------------------------------------------------------------------------
// Ensembles

/// Per-trial output of an ensemble run: one value row per recorded series.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    /// values[s][t] is series s at sample time t.
    pub values: Vec<Vec<f64>>,
    /// False when the trial ever pushed noticeable population into a mode's
    /// top Fock level.
    pub truncation_ok: bool,
}

/// Mean and across-trial standard deviation of one recorded series.
#[derive(Debug, Clone)]
pub struct EnsembleSeries {
    pub label: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Aggregated ensemble statistics, deterministic in (inputs, master_seed).
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub series: Vec<EnsembleSeries>,
    pub n_trials: usize,
    pub master_seed: u64,
    pub truncation_ok: bool,
}

impl EnsembleResult {
    pub fn series(&self, label: &str) -> Option<&EnsembleSeries> {
        self.series.iter().find(|s| s.label == label)
    }

    /// The donor-population series; present on every spin-carrying scenario.
    pub fn donor(&self) -> Option<&EnsembleSeries> {
        self.series("P0")
    }
}

/// Run `trial` for every index in 0..n_trials, each with its own derived RNG,
/// and collect the outputs in trial order.  The first failure aborts the run,
/// tagged with its trial index.
pub fn ensemble_map<T, F>(n_trials: usize, master_seed: u64, exec: Execution, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync + Send,
{
    if n_trials < 1 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let raw = map_indexed(exec, n_trials, |i| trial(i, &mut trial_rng(master_seed, i)));
    let mut out = Vec::with_capacity(n_trials);
    for (i, r) in raw.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => return Err(Error::TrialFailure { trial: i, source: Box::new(e) }),
        }
    }
    Ok(out)
}

/// Ensemble-average arbitrary per-trial series.  `trial` must return one row
/// per label, each row sampled on `times`.  The standard deviation uses the
/// n-1 normalization (zero for a single trial).
pub fn run_ensemble<F>(
    times: Vec<f64>,
    labels: Vec<String>,
    n_trials: usize,
    master_seed: u64,
    exec: Execution,
    trial: F,
) -> Result<EnsembleResult>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<TrialOutput> + Sync + Send,
{
    if labels.is_empty() || times.is_empty() {
        return Err(Error::InvalidParameter("need at least one series and one sample".into()));
    }
    let outputs = ensemble_map(n_trials, master_seed, exec, trial)?;
    for (i, o) in outputs.iter().enumerate() {
        if o.values.len() != labels.len() || o.values.iter().any(|row| row.len() != times.len()) {
            return Err(Error::TrialFailure {
                trial: i,
                source: Box::new(Error::DimensionMismatch(format!(
                    "trial produced {} series, expected {} of length {}",
                    o.values.len(),
                    labels.len(),
                    times.len()
                ))),
            });
        }
    }
    let truncation_ok = outputs.iter().all(|o| o.truncation_ok);
    let n = n_trials as f64;
    let series = labels
        .into_iter()
        .enumerate()
        .map(|(s, label)| {
            let mut mean = vec![0.0; times.len()];
            for o in &outputs {
                for (m, v) in mean.iter_mut().zip(&o.values[s]) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            let mut std = vec![0.0; times.len()];
            if n_trials > 1 {
                for o in &outputs {
                    for (q, (v, m)) in o.values[s].iter().zip(&mean).enumerate() {
                        std[q] += (v - m) * (v - m);
                    }
                }
                for q in &mut std {
                    *q = (*q / (n - 1.0)).sqrt();
                }
            }
            EnsembleSeries { label, mean, std }
        })
        .collect();
    Ok(EnsembleResult { times, series, n_trials, master_seed, truncation_ok })
}

/// A spin-oscillator scenario unraveled by randomized operations: optional
/// kick preparation per mode, then piecewise-constant evolution where every
/// step adds one random detuning offset per dephased mode.
///
/// Each mode's `gamma` is the dephasing rate its random detunings target;
/// its `nbar` is the occupation the preparation targets and is what the
/// reference Lindblad model starts from, so a prep config should satisfy
/// `implied_nbar() == nbar` unless the mismatch is the point of the study.
#[derive(Debug, Clone)]
pub struct DetunedScenario {
    pub spin: SpinParams,
    pub modes: Vec<OscillatorMode>,
    /// One entry per mode; None starts that mode in its ground state.
    pub prep: Vec<Option<ThermalPrepConfig>>,
    pub sim_time: f64,
    pub n_steps: usize,
    /// Also record <b†b> of every mode, labeled like the Lindblad solver.
    pub record_occupations: bool,
}

impl DetunedScenario {
    pub fn new(
        spin: SpinParams,
        modes: Vec<OscillatorMode>,
        sim_time: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidParameter("mode list must be nonempty".into()));
        }
        if !(sim_time > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "simulated time must be > 0, got {sim_time}"
            )));
        }
        if n_steps < 1 {
            return Err(Error::InvalidParameter("need at least one step".into()));
        }
        let prep = vec![None; modes.len()];
        Ok(Self { spin, modes, prep, sim_time, n_steps, record_occupations: false })
    }

    pub fn with_prep(mut self, mode: usize, cfg: ThermalPrepConfig) -> Result<Self> {
        if mode >= self.modes.len() {
            return Err(Error::InvalidParameter(format!(
                "prep on mode {mode} of {}",
                self.modes.len()
            )));
        }
        self.prep[mode] = Some(cfg);
        Ok(self)
    }

    pub fn step_duration(&self) -> f64 {
        self.sim_time / self.n_steps as f64
    }

    /// Sample times of the recorded series: every step boundary.
    pub fn boundary_times(&self) -> Vec<f64> {
        let tau = self.step_duration();
        (0..=self.n_steps).map(|k| k as f64 * tau).collect()
    }

    fn dephasing_config(&self, mode: usize) -> Result<DephasingConfig> {
        DephasingConfig::new(
            self.modes[mode].gamma,
            self.sim_time,
            self.n_steps,
            self.step_duration(),
        )
    }

    /// The Lindblad model this unraveling converges to, with its initial
    /// state |0><0| (x) thermal(nbar_l).
    pub fn reference_model(&self) -> Result<(LindbladModel, DensityMatrix)> {
        let model = build_model(self.spin, &self.modes, DissipationKind::Dephased)?;
        let rho0 = donor_thermal_state(&self.modes)?;
        Ok((model, rho0))
    }
}

/// Occupancy of each mode's Fock index as a diagonal weight vector on the
/// full space; index order is spin-major as in the layout.
fn occupancy_weights(dims: &[usize]) -> Vec<Vec<f64>> {
    let total: usize = dims.iter().product();
    let mut w = vec![vec![0.0; total]; dims.len() - 1];
    for i in 0..total {
        let mut rem = i;
        for s in (1..dims.len()).rev() {
            w[s - 1][i] = (rem % dims[s]) as f64;
            rem /= dims[s];
        }
    }
    w
}

/// Run the randomized-operations ensemble of a [`DetunedScenario`].
///
/// Per trial, the RNG is consumed in a fixed order: kick phases mode by
/// mode, then detuning offsets mode by mode.  One trial with no preparation
/// and zero gamma targets is plain unitary evolution.
pub fn run_detuned_ensemble(
    scenario: &DetunedScenario,
    n_trials: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<EnsembleResult> {
    if scenario.prep.len() != scenario.modes.len() {
        return Err(Error::InvalidParameter(format!(
            "{} prep entries for {} modes",
            scenario.prep.len(),
            scenario.modes.len()
        )));
    }
    let base = build_model(scenario.spin, &scenario.modes, DissipationKind::None)?;
    let dims: Vec<usize> = std::iter::once(2)
        .chain(scenario.modes.iter().map(|m| m.fock_dim))
        .collect();
    let weights = occupancy_weights(&dims);
    let dim = base.layout.total_dim();
    let tau = scenario.step_duration();
    let dephasing: Vec<DephasingConfig> = (0..scenario.modes.len())
        .map(|l| scenario.dephasing_config(l))
        .collect::<Result<_>>()?;

    let mut labels = vec!["P0".to_string()];
    if scenario.record_occupations {
        labels.extend((0..scenario.modes.len()).map(|l| format!("n_mode{l}")));
    }
    let times = scenario.boundary_times();
    let n_samples = times.len();

    run_ensemble(times, labels, n_trials, master_seed, exec, |_, rng| {
        let mut psi = StateVector::basis(2, 0)?;
        for (m, p) in scenario.modes.iter().zip(&scenario.prep) {
            let state = match p {
                Some(cfg) => {
                    let phases = sample_kick_phases(cfg, rng);
                    thermal_prep_trajectory(cfg, &phases, m.fock_dim)?
                }
                None => StateVector::basis(m.fock_dim, 0)?,
            };
            psi = psi.kron(&state);
        }
        let offsets: Vec<Vec<f64>> = dephasing
            .iter()
            .map(|cfg| sample_detuning_offsets(cfg, rng))
            .collect::<Result<_>>()?;

        let mut v = psi.into_vector();
        let mut rows = vec![Vec::with_capacity(n_samples); if scenario.record_occupations { 1 + weights.len() } else { 1 }];
        let mut truncation_ok = true;
        let record = |v: &crate::hilbert::CVector, rows: &mut Vec<Vec<f64>>, truncation_ok: &mut bool| {
            rows[0].push((0..dim / 2).map(|i| v[i].norm_sqr()).sum());
            if scenario.record_occupations {
                for (l, w) in weights.iter().enumerate() {
                    rows[l + 1].push(v.iter().zip(w).map(|(z, wi)| z.norm_sqr() * wi).sum());
                }
            }
            if top_level_occupancy_pure(v, &base.layout) > TRUNCATION_THRESHOLD {
                *truncation_ok = false;
            }
        };
        record(&v, &mut rows, &mut truncation_ok);
        for k in 0..scenario.n_steps {
            let mut h = base.hamiltonian.clone();
            for (l, offs) in offsets.iter().enumerate() {
                let delta = offs[k];
                if delta != 0.0 {
                    for i in 0..dim {
                        h[(i, i)] += c(delta * weights[l][i]);
                    }
                }
            }
            v = hermitian_propagator(&h, tau)? * v;
            record(&v, &mut rows, &mut truncation_ok);
        }
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::IntegrationFailure(format!("trial norm drifted to {norm}")));
        }
        Ok(TrialOutput { values: rows, truncation_ok })
    })
}

// ---------------------------------------------------------------------------
// Measurement noise

/// Projection noise of single-shot population measurements: one Bernoulli
/// draw per trial and time.  Values may stray outside [0, 1] by at most 1e-9
/// (roundoff slack); anything further is an error.
pub fn shot_noise(
    trial_populations: &[Vec<f64>],
    master_seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<u8>>> {
    if trial_populations.is_empty() {
        return Err(Error::InvalidParameter("need at least one trial series".into()));
    }
    ensemble_map(trial_populations.len(), master_seed, exec, |i, rng| {
        trial_populations[i]
            .iter()
            .map(|&p| {
                if !(-1e-9..=1.0 + 1e-9).contains(&p) {
                    return Err(Error::InvalidParameter(format!(
                        "population {p} is not a probability"
                    )));
                }
                Ok(u8::from(rng.gen::<f64>() < p.clamp(0.0, 1.0)))
            })
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Parameter recovery

/// Result of a one-parameter least-squares fit.
#[derive(Debug, Clone, Copy)]
pub struct ScalarFit {
    pub value: f64,
    /// Bootstrap standard deviation when trial-level data was available.
    pub uncertainty: Option<f64>,
    /// Sum of squared residuals at `value`.
    pub objective: f64,
    pub evaluations: usize,
}

const GOLDEN_RATIO: f64 = 0.618_033_988_749_894_8;
/// Width of the final golden-section interval relative to the minimizer.
const FIT_RELATIVE_TOL: f64 = 1e-4;
/// Coarse-scan intervals used to bracket the minimum.
const FIT_COARSE_POINTS: usize = 8;

fn sum_sq_residual(target: &[f64], curve: &[f64]) -> Result<f64> {
    if curve.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "model curve has {} samples, target {}",
            curve.len(),
            target.len()
        )));
    }
    Ok(target.iter().zip(curve).map(|(t, m)| (t - m) * (t - m)).sum())
}

/// Least-squares fit of a single parameter by coarse scan plus golden-section
/// refinement.  The objective minimum must sit strictly inside `bracket`;
/// an edge minimum means the bracket does not contain the answer.
pub fn fit_scalar<F>(
    target: &[f64],
    mut family: F,
    bracket: (f64, f64),
    n_coarse: usize,
) -> Result<ScalarFit>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if target.is_empty() {
        return Err(Error::FitSetup("empty target series".into()));
    }
    if !(bracket.0 < bracket.1) || !bracket.0.is_finite() || !bracket.1.is_finite() {
        return Err(Error::FitSetup(format!("bad bracket [{}, {}]", bracket.0, bracket.1)));
    }
    if n_coarse < 2 {
        return Err(Error::FitSetup("coarse scan needs at least 2 intervals".into()));
    }
    let mut evaluations = 0;
    let mut best = (f64::NAN, f64::INFINITY);
    let eval = |x: f64, family: &mut F, best: &mut (f64, f64), evals: &mut usize| -> Result<f64> {
        let obj = sum_sq_residual(target, &family(x)?)?;
        *evals += 1;
        if obj.is_nan() {
            return Err(Error::IntegrationFailure(format!("objective is NaN at {x}")));
        }
        if obj < best.1 {
            *best = (x, obj);
        }
        Ok(obj)
    };

    let width = bracket.1 - bracket.0;
    let xs: Vec<f64> =
        (0..=n_coarse).map(|i| bracket.0 + width * i as f64 / n_coarse as f64).collect();
    let mut objs = Vec::with_capacity(xs.len());
    for &x in &xs {
        objs.push(eval(x, &mut family, &mut best, &mut evaluations)?);
    }
    let argmin = objs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if argmin == 0 || argmin == n_coarse {
        return Err(Error::NoBracket(format!(
            "objective decreases toward the bracket edge at {}",
            xs[argmin]
        )));
    }

    let (mut a, mut b) = (xs[argmin - 1], xs[argmin + 1]);
    let mut x1 = b - GOLDEN_RATIO * (b - a);
    let mut x2 = a + GOLDEN_RATIO * (b - a);
    let mut f1 = eval(x1, &mut family, &mut best, &mut evaluations)?;
    let mut f2 = eval(x2, &mut family, &mut best, &mut evaluations)?;
    // Linear convergence: 128 contractions by 0.618 reach machine precision
    // from any starting width, so the loop terminates on tolerance first.
    for _ in 0..128 {
        let mid = 0.5 * (a + b);
        if b - a <= FIT_RELATIVE_TOL * mid.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN_RATIO * (b - a);
            f1 = eval(x1, &mut family, &mut best, &mut evaluations)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN_RATIO * (b - a);
            f2 = eval(x2, &mut family, &mut best, &mut evaluations)?;
        }
    }
    Ok(ScalarFit { value: best.0, uncertainty: None, objective: best.1, evaluations })
}

/// The one-parameter model families used to read dephasing rates and initial
/// occupations off measured donor-population curves: a single dephased mode
/// with every other parameter frozen.
#[derive(Debug, Clone)]
pub struct SingleModeFamily {
    pub spin: SpinParams,
    pub nu: f64,
    pub kappa: f64,
    pub fock_dim: usize,
    pub grid: TimeGrid,
}

impl SingleModeFamily {
    /// Donor population of the dephased Lindblad model at (gamma, nbar),
    /// starting from |0><0| (x) thermal(nbar).
    pub fn donor_curve(&self, gamma: f64, nbar: f64) -> Result<Vec<f64>> {
        let mode = OscillatorMode {
            nu: self.nu,
            kappa: self.kappa,
            gamma,
            nbar,
            fock_dim: self.fock_dim,
        };
        let model = build_model(self.spin, &[mode], DissipationKind::Dephased)?;
        let rho0 = donor_thermal_state(&[mode])?;
        let res = lindblad_evolve(&model, &rho0, &self.grid, &[])?;
        Ok(res.donor_population().expect("P0 is always recorded").to_vec())
    }
}

/// Fit the dephasing rate to a donor-population series at fixed `nbar`.
pub fn fit_gamma(
    series: &[f64],
    family: &SingleModeFamily,
    nbar: f64,
    bracket: (f64, f64),
) -> Result<ScalarFit> {
    fit_scalar(series, |g| family.donor_curve(g, nbar), bracket, FIT_COARSE_POINTS)
}

/// Fit the initial occupation to a donor-population series at fixed `gamma`.
pub fn fit_nbar(
    series: &[f64],
    family: &SingleModeFamily,
    gamma: f64,
    bracket: (f64, f64),
) -> Result<ScalarFit> {
    fit_scalar(series, |n| family.donor_curve(gamma, n), bracket, FIT_COARSE_POINTS)
}

/// Peak-to-trough spread of a series inside a time window; the revival
/// amplitude when the window isolates one revival of the donor population.
pub fn revival_amplitude(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} times vs {} values",
            times.len(),
            values.len()
        )));
    }
    if !(window.0 < window.1) {
        return Err(Error::InvalidParameter(format!(
            "empty window [{}, {}]",
            window.0, window.1
        )));
    }
    let inside: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| (window.0..=window.1).contains(*t))
        .map(|(_, v)| *v)
        .collect();
    if inside.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "window [{}, {}] covers {} samples; need at least 2",
            window.0,
            window.1,
            inside.len()
        )));
    }
    let hi = inside.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lo = inside.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    Ok(hi - lo)
}

fn bootstrap_estimates(
    trial_series: &[Vec<f64>],
    curves: &[(f64, Vec<f64>)],
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = trial_series.len();
    let len = trial_series[0].len();
    let mut estimates = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let mut rng = trial_rng(seed, r);
        let mut mean = vec![0.0; len];
        for _ in 0..n {
            let pick = &trial_series[rng.gen_range(0..n)];
            for (m, v) in mean.iter_mut().zip(pick) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let objs: Vec<f64> = curves
            .iter()
            .map(|(_, c)| mean.iter().zip(c).map(|(t, m)| (t - m) * (t - m)).sum())
            .collect();
        let j = objs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        // Parabolic vertex through the best cached point and its neighbors;
        // edge minima keep the grid point itself.
        let est = if j > 0 && j + 1 < curves.len() {
            let (x1, y1) = (curves[j - 1].0, objs[j - 1]);
            let (x2, y2) = (curves[j].0, objs[j]);
            let (x3, y3) = (curves[j + 1].0, objs[j + 1]);
            let num = (x2 - x1).powi(2) * (y2 - y3) - (x2 - x3).powi(2) * (y2 - y1);
            let den = (x2 - x1) * (y2 - y3) - (x2 - x3) * (y2 - y1);
            if den.abs() > 1e-300 {
                (x2 - 0.5 * num / den).clamp(x1, x3)
            } else {
                x2
            }
        } else {
            curves[j].0
        };
        estimates.push(est);
    }
    Ok(estimates)
}

fn fit_bootstrap<F>(
    trial_series: &[Vec<f64>],
    curve_at: F,
    bracket: (f64, f64),
    resamples: usize,
    seed: u64,
) -> Result<ScalarFit>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if trial_series.len() < 2 {
        return Err(Error::FitSetup("bootstrap needs at least 2 trials".into()));
    }
    if resamples < 2 {
        return Err(Error::FitSetup("need at least 2 resamples".into()));
    }
    let len = trial_series[0].len();
    if len == 0 || trial_series.iter().any(|s| s.len() != len) {
        return Err(Error::DimensionMismatch("ragged trial series".into()));
    }
    if bracket.0 < 0.0 {
        // Cached curves are keyed by the parameter's bit pattern, which only
        // sorts numerically for non-negative values (rates, occupations).
        return Err(Error::FitSetup("bootstrap fits need a non-negative bracket".into()));
    }
    let n = trial_series.len() as f64;
    let mut mean = vec![0.0; len];
    for s in trial_series {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let cache: RefCell<BTreeMap<u64, Vec<f64>>> = RefCell::new(BTreeMap::new());
    let base = fit_scalar(
        &mean,
        |x| {
            if let Some(c) = cache.borrow().get(&x.to_bits()) {
                return Ok(c.clone());
            }
            let c = curve_at(x)?;
            cache.borrow_mut().insert(x.to_bits(), c.clone());
            Ok(c)
        },
        bracket,
        FIT_COARSE_POINTS,
    )?;
    let curves: Vec<(f64, Vec<f64>)> =
        cache.into_inner().into_iter().map(|(bits, c)| (f64::from_bits(bits), c)).collect();
    let estimates = bootstrap_estimates(trial_series, &curves, resamples, seed)?;
    let avg = estimates.iter().sum::<f64>() / resamples as f64;
    let var =
        estimates.iter().map(|e| (e - avg) * (e - avg)).sum::<f64>() / (resamples as f64 - 1.0);
    Ok(ScalarFit { uncertainty: Some(var.sqrt()), ..base })
}

/// Number of bootstrap resamples behind a reported fit uncertainty.
pub const BOOTSTRAP_RESAMPLES: usize = 100;

/// [`fit_gamma`] on per-trial series; the uncertainty is the standard
/// deviation of refits across [`BOOTSTRAP_RESAMPLES`] resamplings of the
/// trial set (with replacement), each refit reusing the family curves cached
/// during the base fit.
pub fn fit_gamma_bootstrap(
    trial_series: &[Vec<f64>],
    family: &SingleModeFamily,
    nbar: f64,
    bracket: (f64, f64),
    seed: u64,
) -> Result<ScalarFit> {
    fit_bootstrap(trial_series, |g| family.donor_curve(g, nbar), bracket, BOOTSTRAP_RESAMPLES, seed)
}

/// [`fit_nbar`] on per-trial series with bootstrap uncertainty.
pub fn fit_nbar_bootstrap(
    trial_series: &[Vec<f64>],
    family: &SingleModeFamily,
    gamma: f64,
    bracket: (f64, f64),
    seed: u64,
) -> Result<ScalarFit> {
    fit_bootstrap(trial_series, |n| family.donor_curve(gamma, n), bracket, BOOTSTRAP_RESAMPLES, seed)
}

// ---------------------------------------------------------------------------
// Preparation quality sweeps

/// One row of a preparation-fidelity sweep.
#[derive(Debug, Clone, Copy)]
pub struct ThermalFidelityEntry {
    pub n_kicks: usize,
    pub nbar: f64,
    pub n_trials: usize,
    /// 1 - F between the trial-averaged state and the target thermal state.
    pub infidelity: f64,
}

/// Infidelity of kick-prepared ensembles against their target thermal states,
/// for every combination of kick count, target occupation and trial count.
///
/// Each (nbar, n_kicks) pair runs on its own seed lane and the trial counts
/// are prefixes of one trial sequence, so a 20-trial row is exactly the first
/// 20 trials of the 2000-trial row next to it.  Rows are ordered by
/// (nbar, n_kicks, n_trials), trial counts ascending.
pub fn ensemble_thermal_fidelity(
    kick_counts: &[usize],
    nbar_targets: &[f64],
    trial_counts: &[usize],
    fock_dim: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<Vec<ThermalFidelityEntry>> {
    if kick_counts.is_empty() || nbar_targets.is_empty() || trial_counts.is_empty() {
        return Err(Error::InvalidParameter("empty sweep axis".into()));
    }
    if trial_counts.contains(&0) {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let mut counts = trial_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let max_trials = *counts.last().unwrap();

    let mut entries = Vec::new();
    let mut lane = 0u64;
    for &nbar in nbar_targets {
        for &n_kicks in kick_counts {
            // The kick duration drops out of the displacement amplitudes;
            // only the pulse area Omega~ tau' matters.
            let cfg = ThermalPrepConfig::from_target(n_kicks, 1.0, nbar)?;
            let seed = lane_seed(master_seed, lane);
            lane += 1;
            let states = ensemble_map(max_trials, seed, exec, |_, rng| {
                let phases = sample_kick_phases(&cfg, rng);
                thermal_prep_trajectory(&cfg, &phases, fock_dim)
            })?;
            let target = thermal_state(nbar, fock_dim)?;
            let mut acc = Operator::zeros(fock_dim, fock_dim);
            let mut done = 0;
            for &n in &counts {
                for psi in &states[done..n] {
                    let v = psi.vector();
                    acc += v * v.adjoint();
                }
                done = n;
                let rho = DensityMatrix::try_new(&acc / c(n as f64))?;
                entries.push(ThermalFidelityEntry {
                    n_kicks,
                    nbar,
                    n_trials: n,
                    infidelity: (1.0 - fidelity(&rho, &target)?).max(0.0),
                });
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fock_operators, trace_distance};
    use crate::propagate::{
        evolve_sampled, unitary_evolve_sampled, Direction, IntegratorOptions, LindbladGenerator,
    };
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    fn fig2_spin() -> SpinParams {
        SpinParams { epsilon: 0.0, delta: 1.0 }
    }

    fn fig2_mode(gamma: f64, nbar: f64, fock_dim: usize) -> OscillatorMode {
        OscillatorMode { nu: 1.0, kappa: 0.1, gamma, nbar, fock_dim }
    }

    #[test]
    fn trial_streams_are_stable_and_disjoint() {
        let a: Vec<u64> = (0..4).map(|_| trial_rng(7, 3).gen::<u64>()).collect();
        assert!(a.iter().all(|&x| x == a[0]));
        let firsts: Vec<u64> = (0..100).map(|i| trial_rng(7, i).gen::<u64>()).collect();
        let mut dedup = firsts.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), firsts.len());
        assert_ne!(trial_rng(7, 0).gen::<u64>(), trial_rng(8, 0).gen::<u64>());
    }

    #[test]
    fn kick_phases_are_uniform() {
        let cfg = ThermalPrepConfig::new(100_000, 1.0, 0.01).unwrap();
        let mut rng = trial_rng(42, 0);
        let mut phases = sample_kick_phases(&cfg, &mut rng);
        assert!(phases.iter().all(|&p| (0.0..TAU).contains(&p)));
        // replay is exact
        let again = sample_kick_phases(&cfg, &mut trial_rng(42, 0));
        assert_eq!(phases, again);
        // Kolmogorov-Smirnov distance against the uniform CDF; the
        // 1.36/sqrt(n) rule puts the 95% quantile near 0.0043 here.
        phases.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = phases.len() as f64;
        let ks = phases
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let f = p / TAU;
                (((i + 1) as f64) / n - f).max(f - i as f64 / n)
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn kick_sequence_is_the_composed_displacement() {
        let cfg = ThermalPrepConfig::new(3, 1.0, 0.6).unwrap();
        let phases = [0.3, 2.0, 4.4];
        let closed = thermal_prep_trajectory(&cfg, &phases, 25).unwrap();
        // same sequence as exponentiated drive segments
        let (b, bdag, _) = fock_operators(25).unwrap();
        let mut psi = StateVector::basis(25, 0).unwrap().into_vector();
        for &phi in &phases {
            let h = (&b * C64::new(0.0, -phi).exp() + &bdag * C64::new(0.0, phi).exp())
                * c(0.5 * cfg.rabi);
            psi = hermitian_propagator(&h, cfg.kick_duration).unwrap() * psi;
        }
        let overlap = closed.vector().dotc(&psi).norm();
        assert!(overlap > 1.0 - 1e-10, "overlap {overlap}");
    }

    #[test]
    fn kick_amplitudes_compose_and_average_to_nbar() {
        // equal phases add coherently: |alpha| = N' Omega~ tau' / 2
        let cfg = ThermalPrepConfig::new(9, 0.5, 0.8).unwrap();
        let phases = vec![std::f64::consts::FRAC_PI_2; 9];
        let psi = thermal_prep_trajectory(&cfg, &phases, 30).unwrap();
        let occupation: f64 =
            psi.vector().iter().enumerate().map(|(n, z)| n as f64 * z.norm_sqr()).sum();
        let alpha_max = 9.0 * 0.5 * 0.8 * 0.5;
        assert_abs_diff_eq!(occupation, alpha_max * alpha_max, epsilon = 1e-6);

        // random phases average to the target occupation
        let cfg = ThermalPrepConfig::from_target(9, 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(cfg.implied_nbar(), 2.0, epsilon = 1e-12);
        let occ: Vec<f64> = ensemble_map(2000, 11, Execution::Sequential, |_, rng| {
            let phases = sample_kick_phases(&cfg, rng);
            let step = 0.5 * cfg.rabi * cfg.kick_duration;
            let (mut re, mut im) = (0.0, 0.0);
            for p in phases {
                re += step * p.sin();
                im -= step * p.cos();
            }
            Ok(re * re + im * im)
        })
        .unwrap();
        let mean = occ.iter().sum::<f64>() / occ.len() as f64;
        assert!((mean - 2.0).abs() < 0.1, "ensemble nbar {mean}");
    }

    #[test]
    fn prep_config_and_trajectory_validation() {
        assert!(ThermalPrepConfig::new(0, 1.0, 1.0).is_err());
        assert!(ThermalPrepConfig::new(3, 0.0, 1.0).is_err());
        assert!(ThermalPrepConfig::new(3, 1.0, -1.0).is_err());
        assert!(ThermalPrepConfig::from_target(3, 1.0, 0.0).is_err());
        let cfg = ThermalPrepConfig::new(4, 1.0, 6.0).unwrap();
        assert!(thermal_prep_trajectory(&cfg, &[0.0; 3], 20).is_err());
        // all kicks aligned: |alpha|^2 = 144 cannot fit in 20 levels
        let err = thermal_prep_trajectory(&cfg, &[0.0; 4], 20).unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
    }

    #[test]
    fn detuning_offsets_match_the_dephasing_budget() {
        let cfg = DephasingConfig::new(0.4, 10.0, 100, 0.01).unwrap();
        assert_abs_diff_eq!(cfg.detuning_std(), 20.0, epsilon = 1e-12);

        // sample variance at the same std, 1e5 draws
        let wide = DephasingConfig::new(0.4, 10_000.0, 100_000, 0.01).unwrap();
        assert_abs_diff_eq!(wide.detuning_std(), 20.0, epsilon = 1e-12);
        let offs = sample_detuning_offsets(&wide, &mut trial_rng(3, 0)).unwrap();
        let var = offs.iter().map(|d| d * d).sum::<f64>() / offs.len() as f64;
        assert!((var / 400.0 - 1.0).abs() < 0.02, "variance {var}");

        let silent = DephasingConfig::new(0.0, 10.0, 50, 0.01).unwrap();
        let offs = sample_detuning_offsets(&silent, &mut trial_rng(3, 0)).unwrap();
        assert!(offs.iter().all(|&d| d == 0.0));

        assert!(DephasingConfig::new(-0.1, 10.0, 10, 0.01).is_err());
        assert!(DephasingConfig::new(0.1, 0.0, 10, 0.01).is_err());
        assert!(DephasingConfig::new(0.1, 10.0, 0, 0.01).is_err());
        assert!(DephasingConfig::new(0.1, 10.0, 10, 0.0).is_err());
    }

    #[test]
    fn ensembles_are_deterministic_and_tag_failures() {
        let trial = |i: usize, rng: &mut ChaCha8Rng| {
            Ok(TrialOutput {
                values: vec![vec![rng.gen::<f64>(), i as f64]],
                truncation_ok: true,
            })
        };
        let times = vec![0.0, 1.0];
        let labels = vec!["x".to_string()];
        let a = run_ensemble(times.clone(), labels.clone(), 16, 5, Execution::Sequential, trial)
            .unwrap();
        let b = run_ensemble(times.clone(), labels.clone(), 16, 5, Execution::Parallel, trial)
            .unwrap();
        assert_eq!(a.series[0].mean, b.series[0].mean);
        assert_eq!(a.series[0].std, b.series[0].std);

        // the first trials of a longer run are unchanged
        let short = ensemble_map(4, 5, Execution::Sequential, |_, rng| Ok(rng.gen::<u64>())).unwrap();
        let long = ensemble_map(8, 5, Execution::Sequential, |_, rng| Ok(rng.gen::<u64>())).unwrap();
        assert_eq!(short[..], long[..4]);

        let err = run_ensemble(times, labels, 16, 5, Execution::Sequential, |i, rng| {
            if i == 5 {
                return Err(Error::InvalidState("boom".into()));
            }
            trial(i, rng)
        })
        .unwrap_err();
        match err {
            Error::TrialFailure { trial, .. } => assert_eq!(trial, 5),
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn noiseless_single_trial_is_unitary_evolution() {
        let scenario = DetunedScenario::new(
            fig2_spin(),
            vec![fig2_mode(0.0, 0.0, 6)],
            5.0,
            16,
        )
        .unwrap();
        let res = run_detuned_ensemble(&scenario, 1, 99, Execution::Sequential).unwrap();
        assert!(res.truncation_ok);
        let donor = res.donor().unwrap();
        assert!(donor.std.iter().all(|&s| s == 0.0));

        let model = build_model(fig2_spin(), &scenario.modes, DissipationKind::None).unwrap();
        let psi0 = StateVector::basis(2, 0).unwrap().kron(&StateVector::basis(6, 0).unwrap());
        let states =
            unitary_evolve_sampled(&model.hamiltonian, &psi0, &scenario.boundary_times()).unwrap();
        for (k, s) in states.iter().enumerate() {
            let p0: f64 = (0..6).map(|i| s.vector()[i].norm_sqr()).sum();
            assert_abs_diff_eq!(donor.mean[k], p0, epsilon = 1e-9);
        }
    }

    #[test]
    fn detuned_ensemble_tracks_the_dephased_model() {
        let scenario = DetunedScenario::new(
            fig2_spin(),
            vec![fig2_mode(0.3, 0.0, 8)],
            TAU * 5.0,
            64,
        )
        .unwrap();
        let n_trials = 240;
        let res = run_detuned_ensemble(&scenario, n_trials, 17, Execution::Parallel).unwrap();
        assert!(res.truncation_ok);
        let donor = res.donor().unwrap();

        let (model, rho0) = scenario.reference_model().unwrap();
        let grid = TimeGrid::new(scenario.sim_time, scenario.n_steps + 1).unwrap();
        let reference = lindblad_evolve(&model, &rho0, &grid, &[]).unwrap();
        let target = reference.donor_population().unwrap();

        // worst deviation stays within a few ensemble standard errors
        let mut worst: f64 = 0.0;
        for (k, (m, t)) in donor.mean.iter().zip(target).enumerate() {
            let se = donor.std[k] / (n_trials as f64).sqrt();
            let dev = (m - t).abs();
            worst = worst.max(dev - 4.0 * se);
        }
        assert!(worst < 0.01, "deviation beyond 4 standard errors by {worst}");

        // same master seed, both execution strategies: bitwise identical
        let seq = run_detuned_ensemble(&scenario, 24, 17, Execution::Sequential).unwrap();
        let par = run_detuned_ensemble(&scenario, 24, 17, Execution::Parallel).unwrap();
        assert_eq!(seq.donor().unwrap().mean, par.donor().unwrap().mean);
        assert_eq!(seq.donor().unwrap().std, par.donor().unwrap().std);
    }

    #[test]
    fn detuning_unraveling_converges_to_the_lindblad_state() {
        let scenario = DetunedScenario::new(
            fig2_spin(),
            vec![fig2_mode(0.3, 0.0, 8)],
            TAU * 2.0,
            48,
        )
        .unwrap();
        let states = ensemble_map(2000, 23, Execution::Parallel, |i, rng| {
            let _ = i;
            detuned_final_state(&scenario, rng)
        })
        .unwrap();
        let dim = 16;
        let mut acc = Operator::zeros(dim, dim);
        for v in &states {
            acc += v * v.adjoint();
        }
        acc /= c(states.len() as f64);

        let (model, rho0) = scenario.reference_model().unwrap();
        let grid = TimeGrid::new(scenario.sim_time, 2).unwrap();
        let reference = lindblad_evolve(&model, &rho0, &grid, &[]).unwrap();
        let rho_t = match reference.final_state {
            crate::propagate::FinalState::Density(d) => d,
            _ => unreachable!(),
        };
        let dist = trace_distance(&acc, rho_t.matrix());
        assert!(dist < 0.02, "trace distance {dist}");
    }

    // One trial of `scenario`, returning only the final state vector.
    fn detuned_final_state(
        scenario: &DetunedScenario,
        rng: &mut ChaCha8Rng,
    ) -> Result<crate::hilbert::CVector> {
        let base = build_model(scenario.spin, &scenario.modes, DissipationKind::None)?;
        let dims: Vec<usize> =
            std::iter::once(2).chain(scenario.modes.iter().map(|m| m.fock_dim)).collect();
        let weights = occupancy_weights(&dims);
        let tau = scenario.step_duration();
        let cfg = DephasingConfig::new(
            scenario.modes[0].gamma,
            scenario.sim_time,
            scenario.n_steps,
            tau,
        )?;
        let offsets = sample_detuning_offsets(&cfg, rng)?;
        let mut v = StateVector::basis(2, 0)?
            .kron(&StateVector::basis(scenario.modes[0].fock_dim, 0)?)
            .into_vector();
        for &delta in &offsets {
            let mut h = base.hamiltonian.clone();
            for i in 0..h.nrows() {
                h[(i, i)] += c(delta * weights[0][i]);
            }
            v = hermitian_propagator(&h, tau)? * v;
        }
        Ok(v)
    }

    #[test]
    fn kick_unraveling_converges_to_the_heating_channel() {
        // nbar = 1/2 in N' = 9 unit-duration kicks: heating rate 1/18.
        // The 2000-trial mean carries sampling noise that grows with the
        // occupied support, so the 0.02 bound needs a small target occupation;
        // this point measures 0.008-0.016 across seeds.
        let (n_kicks, nbar, d) = (9usize, 0.5, 25usize);
        let cfg = ThermalPrepConfig::from_target(n_kicks, 1.0, nbar).unwrap();
        let states = ensemble_map(2000, 29, Execution::Parallel, |_, rng| {
            let phases = sample_kick_phases(&cfg, rng);
            thermal_prep_trajectory(&cfg, &phases, d)
        })
        .unwrap();
        let mut acc = Operator::zeros(d, d);
        for psi in &states {
            let v = psi.vector();
            acc += v * v.adjoint();
        }
        acc /= c(states.len() as f64);

        let rate = nbar / n_kicks as f64;
        let (b, bdag, _) = fock_operators(d).unwrap();
        let generator = LindbladGenerator::new(
            Operator::zeros(d, d),
            vec![&b * c(rate.sqrt()), &bdag * c(rate.sqrt())],
        )
        .unwrap();
        let vacuum = DensityMatrix::from_pure(&StateVector::basis(d, 0).unwrap());
        let opts = IntegratorOptions { rel_tol: 1e-6, ..Default::default() };
        let evolved = evolve_sampled(
            &generator,
            Direction::Forward,
            vacuum.matrix(),
            &[0.0, n_kicks as f64],
            &opts,
        )
        .unwrap();
        let rho_heat = &evolved[1];

        // the heating channel drives the vacuum to the thermal state
        let thermal = thermal_state(nbar, d).unwrap();
        assert!(trace_distance(rho_heat, thermal.matrix()) < 1e-9);
        let dist = trace_distance(&acc, rho_heat);
        assert!(dist < 0.02, "trace distance {dist}");
    }

    #[test]
    fn ensemble_mean_error_scales_as_inverse_sqrt_trials() {
        // scalar observable: prepared |alpha|^2 against its known mean
        let cfg = ThermalPrepConfig::from_target(5, 1.0, 1.0).unwrap();
        let step = 0.5 * cfg.rabi * cfg.kick_duration;
        let counts = [40usize, 80, 160, 320, 640];
        let replicas = 16;
        let mut stds = Vec::new();
        for (ci, &n) in counts.iter().enumerate() {
            let mut means = Vec::new();
            for r in 0..replicas {
                let seed = lane_seed(1000 + r, ci as u64);
                let occ: Vec<f64> = ensemble_map(n, seed, Execution::Sequential, |_, rng| {
                    let phases = sample_kick_phases(&cfg, rng);
                    let (mut re, mut im) = (0.0, 0.0);
                    for p in phases {
                        re += step * p.sin();
                        im -= step * p.cos();
                    }
                    Ok(re * re + im * im)
                })
                .unwrap();
                means.push(occ.iter().sum::<f64>() / n as f64);
            }
            let avg = means.iter().sum::<f64>() / replicas as f64;
            let var = means.iter().map(|m| (m - avg) * (m - avg)).sum::<f64>()
                / (replicas as f64 - 1.0);
            stds.push(var.sqrt());
        }
        // least-squares slope of ln(std) against ln(n)
        let xs: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = stds.iter().map(|s| s.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(
            (-0.6..=-0.4).contains(&slope),
            "standard error scaling exponent {slope}"
        );
    }

    #[test]
    fn shot_noise_is_binomial_and_validates_probabilities() {
        let trials = vec![vec![0.5]; 2000];
        let bits = shot_noise(&trials, 7, Execution::Parallel).unwrap();
        let mean = bits.iter().map(|b| b[0] as f64).sum::<f64>() / 2000.0;
        assert!((mean - 0.5).abs() < 0.034, "mean {mean}");
        // deterministic replay
        let again = shot_noise(&trials, 7, Execution::Sequential).unwrap();
        assert_eq!(bits, again);

        // exact endpoints never flip
        let sure = shot_noise(&vec![vec![0.0, 1.0]; 10], 1, Execution::Sequential).unwrap();
        assert!(sure.iter().all(|b| b == &[0, 1]));
        // roundoff slack is clamped, real violations are errors
        assert!(shot_noise(&[vec![1.0 + 5e-10]], 1, Execution::Sequential).is_ok());
        let err = shot_noise(&[vec![0.2], vec![-0.01]], 1, Execution::Sequential).unwrap_err();
        match err {
            Error::TrialFailure { trial, .. } => assert_eq!(trial, 1),
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn scalar_fit_recovers_a_toy_minimum() {
        let family = |x: f64| Ok(vec![x, 2.0 * x]);
        let target = [0.37, 0.74];
        let fit = fit_scalar(&target, family, (0.0, 1.0), 8).unwrap();
        assert!((fit.value - 0.37).abs() < 1e-4 * 0.37);
        assert!(fit.objective < 1e-8);
        assert!(fit.evaluations > 9);

        assert!(matches!(
            fit_scalar(&target, family, (1.0, 2.0), 8).unwrap_err(),
            Error::NoBracket(_)
        ));
        assert!(fit_scalar(&target, family, (1.0, 1.0), 8).is_err());
        assert!(fit_scalar::<fn(f64) -> Result<Vec<f64>>>(&[], |x| Ok(vec![x]), (0.0, 1.0), 8)
            .is_err());
        assert!(fit_scalar(&target, |x| Ok(vec![x]), (0.0, 1.0), 8).is_err());
    }

    #[test]
    fn gamma_fit_recovers_the_generating_rate() {
        let family = SingleModeFamily {
            spin: fig2_spin(),
            nu: 1.0,
            kappa: 0.1,
            fock_dim: 8,
            grid: TimeGrid::new(TAU * 6.0, 61).unwrap(),
        };
        let target = family.donor_curve(0.25, 0.0).unwrap();
        let fit = fit_gamma(&target, &family, 0.0, (0.05, 0.6)).unwrap();
        assert!((fit.value - 0.25).abs() < 1e-3, "gamma {}", fit.value);
        assert!(fit.objective < 1e-10);
        assert!(fit.uncertainty.is_none());

        // a bracket that excludes the answer reports the edge
        assert!(matches!(
            fit_gamma(&target, &family, 0.0, (0.5, 1.0)).unwrap_err(),
            Error::NoBracket(_)
        ));
    }

    #[test]
    fn nbar_fit_recovers_the_generating_occupation() {
        let family = SingleModeFamily {
            spin: fig2_spin(),
            nu: 1.0,
            kappa: 0.1,
            fock_dim: 10,
            grid: TimeGrid::new(TAU * 5.0, 51).unwrap(),
        };
        let target = family.donor_curve(0.0, 0.5).unwrap();
        let fit = fit_nbar(&target, &family, 0.0, (0.05, 1.5)).unwrap();
        assert!((fit.value - 0.5).abs() < 1e-2, "nbar {}", fit.value);
    }

    #[test]
    fn bootstrap_uncertainty_matches_the_spread_of_the_mean() {
        // family linear in the parameter; trials scatter around theta = 0.3
        let family = |x: f64| Ok(vec![x; 4]);
        let mut rng = trial_rng(55, 0);
        let trials: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let noise = 0.05 * (rng.gen::<f64>() - 0.5);
                vec![0.3 + noise; 4]
            })
            .collect();
        let fit = fit_bootstrap(&trials, family, (0.0, 1.0), 100, 9).unwrap();
        assert!((fit.value - 0.3).abs() < 0.01);
        let sigma = fit.uncertainty.unwrap();
        // standard error of the mean: 0.05/sqrt(12)/sqrt(200) = 1.0e-3
        assert!(sigma > 2e-4 && sigma < 5e-3, "uncertainty {sigma}");
        assert!(fit_bootstrap(&trials, family, (-1.0, 1.0), 10, 9).is_err());
        assert!(fit_bootstrap(&trials[..1], family, (0.0, 1.0), 10, 9).is_err());
    }

    #[test]
    fn revival_amplitude_reads_peak_to_trough() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let values: Vec<f64> = times.iter().map(|t| 0.5 + 0.2 * (t * 3.0).cos()).collect();
        let amp = revival_amplitude(&times, &values, (5.0, 10.0)).unwrap();
        assert_abs_diff_eq!(amp, 0.4, epsilon = 1e-3);
        assert!(revival_amplitude(&times, &values[..10], (5.0, 10.0)).is_err());
        assert!(revival_amplitude(&times, &values, (10.0, 5.0)).is_err());
        assert!(revival_amplitude(&times, &values, (100.0, 101.0)).is_err());
    }

    #[test]
    fn revivals_shrink_with_initial_temperature() {
        let family = SingleModeFamily {
            spin: fig2_spin(),
            nu: 1.0,
            kappa: 0.1,
            fock_dim: 14,
            grid: TimeGrid::new(TAU * 12.0, 145).unwrap(),
        };
        let times = family.grid.times();
        let window = (TAU * 9.0, TAU * 12.0);
        let amps: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&nbar| {
                let curve = family.donor_curve(0.0, nbar).unwrap();
                revival_amplitude(&times, &curve, window).unwrap()
            })
            .collect();
        assert!(amps[0] > amps[1] && amps[1] > amps[2], "amplitudes {amps:?}");
    }

    #[test]
    fn thermal_fidelity_sweep_is_deterministic_and_prefix_stable() {
        let table = ensemble_thermal_fidelity(
            &[1, 6],
            &[0.8],
            &[800, 100],
            25,
            77,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(table.len(), 4);
        // rows ordered by (nbar, n_kicks, n_trials ascending)
        assert_eq!(table[0].n_kicks, 1);
        assert_eq!(table[0].n_trials, 100);
        assert_eq!(table[1].n_trials, 800);
        assert!(table.iter().all(|e| (0.0..=1.0).contains(&e.infidelity)));

        // a single fixed-length kick cannot mimic a thermal state
        let single = table[1].infidelity;
        let multi = table[3].infidelity;
        assert!(multi < single, "N'=6 {multi} vs N'=1 {single}");

        let again = ensemble_thermal_fidelity(
            &[1, 6],
            &[0.8],
            &[800, 100],
            25,
            77,
            Execution::Sequential,
        )
        .unwrap();
        for (a, b) in table.iter().zip(&again) {
            assert_eq!(a.infidelity, b.infidelity);
        }

        assert!(ensemble_thermal_fidelity(&[], &[1.0], &[10], 25, 1, Execution::Sequential)
            .is_err());
        assert!(ensemble_thermal_fidelity(&[1], &[1.0], &[0], 25, 1, Execution::Sequential)
            .is_err());
    }

    #[test]
    fn scenario_validation_and_reference_model() {
        assert!(DetunedScenario::new(fig2_spin(), vec![], 1.0, 4).is_err());
        assert!(DetunedScenario::new(fig2_spin(), vec![fig2_mode(0.1, 0.0, 4)], 0.0, 4).is_err());
        assert!(DetunedScenario::new(fig2_spin(), vec![fig2_mode(0.1, 0.0, 4)], 1.0, 0).is_err());
        let s = DetunedScenario::new(fig2_spin(), vec![fig2_mode(0.1, 0.5, 6)], 1.0, 4).unwrap();
        assert!(s.clone().with_prep(1, ThermalPrepConfig::new(1, 1.0, 1.0).unwrap()).is_err());
        let (model, rho0) = s.reference_model().unwrap();
        assert_eq!(model.lindblad_ops.len(), 1);
        assert_eq!(rho0.dim(), 12);
        assert_abs_diff_eq!(s.step_duration(), 0.25, epsilon = 1e-15);
        assert_eq!(s.boundary_times().len(), 5);
    }
}
