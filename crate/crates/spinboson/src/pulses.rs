//! Pulse-level layer: SDK/SQ Hamiltonians, Trotterized schedule compilation,
//! phase tracking with light-shift offsets, and simulated calibration scans.
//!
//! The compiler works in the simulated target frame.  Conjugating the model
//! H_D = (eps/2) sigma_Z + (Delta/2) sigma_X + sum_l (kappa_l/2) sigma_Z (b_l + b_l^dag)
//!       + sum_l nu_l n_l
//! by the pi/2 spin rotation that swaps sigma_Z <-> sigma_X, and moving to the
//! interaction picture of H_0 = (Delta/2) sigma_Z + sum_l nu_l n_l, leaves
//!   H_I(t) = (eps/2) sigma_{Delta t}
//!          + sum_l (kappa_l/2) sigma_{Delta t} (b_l e^{-i nu_l t} + b_l^dag e^{i nu_l t}),
//! where sigma_phi = e^{i phi} |0><1| + e^{-i phi} |1><0| attaches the phase to
//! the energy-raising part (the donor sits at +Delta/2 after the rotation).
//! Each Trotter step realizes H_I at the midpoint t_j = (j - 1/2) T / N with
//! one SQ rotation and one SDK per mode; pulse areas carry the step weight, so
//! the gate depends only on the product rabi * duration, never on the split.
//! The donor population in the original frame is read back through the
//! rotating measurement operator M(t) = (I + sigma_{Delta t})/2 (x) I, which
//! the closing rotation at phase Delta T + pi/2 maps onto the |0> projector.
//!
//! Schedules export as plain text, one record per line in the field order
//! kind, duration, rabi, spin phase, motion phase, motion detuning, mode,
//! offset; SQ lines fill the motion fields with zeros and the mode with "-".

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::hilbert::{
    fock_operators, top_level_occupancy_pure, CVector, HilbertLayout, Operator, StateVector,
};
use crate::models::{OscillatorMode, SpinParams};
use crate::propagate::{
    hermitian_propagator, EvolutionResult, FinalState, Series, TRUNCATION_THRESHOLD,
};
use crate::stochastic::{
    run_ensemble, sample_detuning_offsets, sample_kick_phases, thermal_prep_trajectory,
    DephasingConfig, EnsembleResult, ThermalPrepConfig, TrialOutput,
};

/// Pulse area of the opening and closing spin rotations.
pub const ROTATION_AREA: f64 = FRAC_PI_2;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Pulse flavor: carrier single-qubit rotation or spin-dependent kick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    Sq,
    Sdk,
}

/// One hardware pulse.  `rabi` is the carrier Rabi frequency Omega for SQ and
/// the sideband Rabi frequency Omega-tilde for SDK; the motion fields and the
/// mode index are meaningful for SDK records only.  `phase_offset` is the
/// blue-tone correction filled in by [`phase_track`]; the red tone takes the
/// spin part minus the motion part.  Simulation ignores it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRecord {
    pub kind: PulseKind,
    pub duration: f64,
    pub rabi: f64,
    pub spin_phase: f64,
    pub motion_phase: f64,
    pub motion_detuning: f64,
    pub mode_index: Option<usize>,
    pub phase_offset: f64,
}

impl PulseRecord {
    pub fn sq(duration: f64, rabi: f64, spin_phase: f64) -> Self {
        Self {
            kind: PulseKind::Sq,
            duration,
            rabi,
            spin_phase,
            motion_phase: 0.0,
            motion_detuning: 0.0,
            mode_index: None,
            phase_offset: 0.0,
        }
    }

    pub fn sdk(
        duration: f64,
        rabi: f64,
        spin_phase: f64,
        motion_phase: f64,
        motion_detuning: f64,
        mode_index: usize,
    ) -> Self {
        Self {
            kind: PulseKind::Sdk,
            duration,
            rabi,
            spin_phase,
            motion_phase,
            motion_detuning,
            mode_index: Some(mode_index),
            phase_offset: 0.0,
        }
    }

    fn validate(&self, n_modes: usize) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pulse duration {} must be finite and nonnegative",
                self.duration
            )));
        }
        if !(self.rabi >= 0.0 && self.rabi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Rabi frequency {} must be finite and nonnegative",
                self.rabi
            )));
        }
        for (name, v) in [
            ("spin phase", self.spin_phase),
            ("motion phase", self.motion_phase),
            ("motion detuning", self.motion_detuning),
            ("phase offset", self.phase_offset),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} {v} must be finite")));
            }
        }
        match (self.kind, self.mode_index) {
            (PulseKind::Sq, None) => Ok(()),
            (PulseKind::Sq, Some(_)) => {
                Err(Error::InvalidParameter("SQ record carries a mode index".into()))
            }
            (PulseKind::Sdk, Some(m)) if m < n_modes => Ok(()),
            (PulseKind::Sdk, Some(m)) => {
                Err(Error::SlotOutOfRange { slot: m, n_slots: n_modes })
            }
            (PulseKind::Sdk, None) => {
                Err(Error::InvalidParameter("SDK record lacks a mode index".into()))
            }
        }
    }
}

/// An ordered pulse list together with the target model it compiles and the
/// record indices after which the simulated-frame observables are sampled.
/// `sample_times[k]` is the simulated-model time of mark k.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    pub records: Vec<PulseRecord>,
    pub spin: SpinParams,
    pub modes: Vec<OscillatorMode>,
    pub t_total: f64,
    pub n_steps: usize,
    pub sample_marks: Vec<usize>,
    pub sample_times: Vec<f64>,
}

impl PulseSchedule {
    pub fn layout(&self) -> Result<HilbertLayout> {
        HilbertLayout::new(self.modes.iter().map(|m| m.fock_dim).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Schedule("schedule has no records".into()));
        }
        for rec in &self.records {
            rec.validate(self.modes.len())?;
        }
        if self.sample_marks.len() != self.sample_times.len() {
            return Err(Error::Schedule(format!(
                "{} sample marks but {} sample times",
                self.sample_marks.len(),
                self.sample_times.len()
            )));
        }
        for (k, &m) in self.sample_marks.iter().enumerate() {
            if m >= self.records.len() {
                return Err(Error::Schedule(format!("mark {m} past the last record")));
            }
            if k > 0 && m <= self.sample_marks[k - 1] {
                return Err(Error::Schedule("sample marks must increase strictly".into()));
            }
        }
        if self.sample_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Schedule("sample times must be finite".into()));
        }
        Ok(())
    }

    /// Total wall-clock time of the pulse train.
    pub fn wall_duration(&self) -> f64 {
        self.records.iter().map(|r| r.duration).sum()
    }
}

/// Hardware drive strengths available to the compiler: the carrier Rabi
/// frequency and one sideband Rabi frequency per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiMap {
    pub carrier: f64,
    pub sideband: Vec<f64>,
}

impl RabiMap {
    fn validate(&self, n_modes: usize) -> Result<()> {
        if !(self.carrier > 0.0 && self.carrier.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "carrier Rabi frequency {} must be positive",
                self.carrier
            )));
        }
        if self.sideband.len() != n_modes {
            return Err(Error::DimensionMismatch(format!(
                "{} sideband Rabi frequencies for {} modes",
                self.sideband.len(),
                n_modes
            )));
        }
        if self.sideband.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(
                "every sideband Rabi frequency must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Calibrated hardware-frame corrections: the constant spin-phase difference
/// between SQ and SDK pulses, the light-shift difference that tilts the ion
/// spin phase during kicks, and per-mode detuning errors of the sideband
/// tones.
#[derive(Debug, Clone, PartialEq)]
pub struct LightShiftModel {
    pub sq_sdk_phase_diff: f64,
    pub sq_sdk_shift_diff: f64,
    pub mode_detuning_errors: Vec<f64>,
}

impl LightShiftModel {
    fn validate(&self, n_modes: usize) -> Result<()> {
        if !self.sq_sdk_phase_diff.is_finite() || !self.sq_sdk_shift_diff.is_finite() {
            return Err(Error::InvalidParameter("light-shift model must be finite".into()));
        }
        if self.mode_detuning_errors.len() != n_modes {
            return Err(Error::DimensionMismatch(format!(
                "{} detuning errors for {} modes",
                self.mode_detuning_errors.len(),
                n_modes
            )));
        }
        if self.mode_detuning_errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter("detuning errors must be finite".into()));
        }
        Ok(())
    }
}

/// sigma_phi = e^{i phi} |0><1| + e^{-i phi} |1><0|.
fn sigma_phi(phi: f64) -> Operator {
    let z = C64::new(0.0, phi).exp();
    Operator::from_row_slice(2, 2, &[c(0.0), z, z.conj(), c(0.0)])
}

/// b e^{-i phi} + b^dag e^{i phi} on `d` levels.
fn displacement_quadrature(phi: f64, d: usize) -> Result<Operator> {
    let (b, bdag, _) = fock_operators(d)?;
    let z = C64::new(0.0, phi).exp();
    Ok(b * z.conj() + bdag * z)
}

/// (Omega/2) sigma_{phi_s} on the spin slot.
fn sq_block(rec: &PulseRecord) -> Operator {
    sigma_phi(rec.spin_phase) * c(0.5 * rec.rabi)
}

/// (Omega-tilde/2) sigma_{phi_s} (x) (b e^{-i phi_m} + b^dag e^{i phi_m})
/// + delta_m n on the (spin, mode) pair, dimension 2d x 2d.
fn sdk_block(rec: &PulseRecord, d: usize) -> Result<Operator> {
    let quad = displacement_quadrature(rec.motion_phase, d)?;
    let (_, _, num) = fock_operators(d)?;
    let id2 = Operator::identity(2, 2);
    Ok(sigma_phi(rec.spin_phase).kronecker(&quad) * c(0.5 * rec.rabi)
        + id2.kronecker(&num) * c(rec.motion_detuning))
}

/// Full-space SQ Hamiltonian (Omega/2) sigma_{phi_s}.
pub fn sq_hamiltonian(rec: &PulseRecord, layout: &HilbertLayout) -> Result<Operator> {
    if rec.kind != PulseKind::Sq {
        return Err(Error::InvalidParameter("record is not an SQ pulse".into()));
    }
    rec.validate(layout.n_modes())?;
    crate::hilbert::embed(&sq_block(rec), 0, layout)
}

/// Full-space SDK Hamiltonian on the addressed mode.
pub fn sdk_hamiltonian(rec: &PulseRecord, layout: &HilbertLayout) -> Result<Operator> {
    if rec.kind != PulseKind::Sdk {
        return Err(Error::InvalidParameter("record is not an SDK pulse".into()));
    }
    rec.validate(layout.n_modes())?;
    let m = rec.mode_index.expect("validated SDK record has a mode");
    let d = layout.slot_dim(m + 1)?;
    let spin = crate::hilbert::embed(&sigma_phi(rec.spin_phase), 0, layout)?;
    let quad = crate::hilbert::embed(&displacement_quadrature(rec.motion_phase, d)?, m + 1, layout)?;
    let (_, _, num) = fock_operators(d)?;
    let number = crate::hilbert::embed(&num, m + 1, layout)?;
    Ok(spin * quad * c(0.5 * rec.rabi) + number * c(rec.motion_detuning))
}

/// Compile the model into a pulse train: an opening pi/2 rotation at spin
/// phase -pi/2, then per step j an SQ record (dropped when eps = 0) and one
/// SDK record per mode at the midpoint phases Delta t_j and nu_l t_j, then a
/// closing pi/2 rotation at spin phase Delta T + pi/2.  Pulse durations follow
/// from the area conditions Omega tau_sq = eps T/N and
/// Omega-tilde_l tau_sdk,l = kappa_l T/N.
pub fn trotterize(
    spin: SpinParams,
    modes: &[OscillatorMode],
    t_total: f64,
    n_steps: usize,
    rabi: &RabiMap,
) -> Result<PulseSchedule> {
    if !(t_total > 0.0 && t_total.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "total time {t_total} must be positive"
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidParameter("need at least one Trotter step".into()));
    }
    if !spin.delta.is_finite() || !spin.epsilon.is_finite() {
        return Err(Error::InvalidParameter("spin parameters must be finite".into()));
    }
    if spin.epsilon < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative bias {} gives a negative SQ duration",
            spin.epsilon
        )));
    }
    rabi.validate(modes.len())?;
    for mode in modes {
        mode.validate()?;
        if mode.kappa < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative coupling {} gives a negative SDK duration",
                mode.kappa
            )));
        }
    }

    let dt = t_total / n_steps as f64;
    let tau_h = ROTATION_AREA / rabi.carrier;
    let mut records = vec![PulseRecord::sq(tau_h, rabi.carrier, -FRAC_PI_2)];
    let mut marks = vec![0];
    for j in 1..=n_steps {
        let tj = (j as f64 - 0.5) * dt;
        let phi_s = spin.delta * tj;
        if spin.epsilon > 0.0 {
            records.push(PulseRecord::sq(spin.epsilon * dt / rabi.carrier, rabi.carrier, phi_s));
        }
        for (l, mode) in modes.iter().enumerate() {
            if mode.kappa > 0.0 {
                records.push(PulseRecord::sdk(
                    mode.kappa * dt / rabi.sideband[l],
                    rabi.sideband[l],
                    phi_s,
                    mode.nu * tj,
                    0.0,
                    l,
                ));
            }
        }
        marks.push(records.len() - 1);
    }
    records.push(PulseRecord::sq(tau_h, rabi.carrier, spin.delta * t_total + FRAC_PI_2));

    let sched = PulseSchedule {
        records,
        spin,
        modes: modes.to_vec(),
        t_total,
        n_steps,
        sample_marks: marks,
        sample_times: (0..=n_steps).map(|k| k as f64 * dt).collect(),
    };
    sched.validate()?;
    Ok(sched)
}

/// Apply a 2x2 spin gate in place.  `p` is the mode-space dimension.
fn apply_spin_gate(psi: &mut CVector, u: &Operator, p: usize) {
    for m in 0..p {
        let a = psi[m];
        let b = psi[p + m];
        psi[m] = u[(0, 0)] * a + u[(0, 1)] * b;
        psi[p + m] = u[(1, 0)] * a + u[(1, 1)] * b;
    }
}

/// Apply a 2d x 2d gate on the (spin, mode) pair in place.  Gate indices are
/// g = s d + n; the full space is spin-major with mode strides from `layout`.
fn apply_pair_gate(psi: &mut CVector, u: &Operator, layout: &HilbertLayout, mode: usize) {
    let dims = layout.fock_dims();
    let d = dims[mode];
    let p: usize = dims.iter().product();
    let stride: usize = dims[mode + 1..].iter().product();
    let block = d * stride;
    let mut buf = vec![C64::new(0.0, 0.0); 2 * d];
    let mut out = vec![C64::new(0.0, 0.0); 2 * d];
    for hi in 0..p / block {
        for lo in 0..stride {
            let base = hi * block + lo;
            for s in 0..2 {
                for n in 0..d {
                    buf[s * d + n] = psi[s * p + base + n * stride];
                }
            }
            for (g, slot) in out.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (gp, &amp) in buf.iter().enumerate() {
                    acc += u[(g, gp)] * amp;
                }
                *slot = acc;
            }
            for s in 0..2 {
                for n in 0..d {
                    psi[s * p + base + n * stride] = out[s * d + n];
                }
            }
        }
    }
}

/// Donor population in the simulated frame at model time `t`:
/// Tr[(I + sigma_{Delta t})/2 (x) I rho] = 1/2 + Re(e^{i Delta t} S) with
/// S = sum_m conj(psi[0, m]) psi[1, m].
fn donor_population_rotating(psi: &CVector, delta: f64, t: f64) -> f64 {
    let p = psi.len() / 2;
    let mut s = C64::new(0.0, 0.0);
    for m in 0..p {
        s += psi[m].conj() * psi[p + m];
    }
    0.5 + (C64::new(0.0, delta * t).exp() * s).re
}

/// Run the pulse train on `psi0` by exact per-record exponentials, sampling
/// the rotating-frame donor population at each sample mark.
pub fn simulate_schedule(sched: &PulseSchedule, psi0: &StateVector) -> Result<EvolutionResult> {
    sched.validate()?;
    let layout = sched.layout()?;
    let dim = layout.total_dim();
    if psi0.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "initial state has dimension {} but the schedule needs {dim}",
            psi0.dim()
        )));
    }
    let p = dim / 2;
    let mut psi = psi0.vector().clone();
    let mut p0 = Vec::with_capacity(sched.sample_marks.len());
    let mut truncation_ok = true;
    let mut next_mark = 0;
    for (i, rec) in sched.records.iter().enumerate() {
        match rec.kind {
            PulseKind::Sq => {
                let u = hermitian_propagator(&sq_block(rec), rec.duration)?;
                apply_spin_gate(&mut psi, &u, p);
            }
            PulseKind::Sdk => {
                let m = rec.mode_index.expect("validated SDK record has a mode");
                let d = layout.fock_dims()[m];
                let u = hermitian_propagator(&sdk_block(rec, d)?, rec.duration)?;
                apply_pair_gate(&mut psi, &u, &layout, m);
            }
        }
        if next_mark < sched.sample_marks.len() && sched.sample_marks[next_mark] == i {
            let t = sched.sample_times[next_mark];
            p0.push(donor_population_rotating(&psi, sched.spin.delta, t));
            if top_level_occupancy_pure(&psi, &layout) > TRUNCATION_THRESHOLD {
                truncation_ok = false;
            }
            next_mark += 1;
        }
    }
    // per-record exponentials are unitary up to roundoff
    let budget = 1e-10 * sched.records.len() as f64;
    if (psi.norm() - 1.0).abs() > budget {
        return Err(Error::IntegrationFailure(format!(
            "norm drifted to {} over {} pulses",
            psi.norm(),
            sched.records.len()
        )));
    }
    Ok(EvolutionResult {
        times: sched.sample_times.clone(),
        observables: vec![Series { label: "P0".into(), values: p0 }],
        final_state: FinalState::Pure(StateVector::normalized(psi)?),
        truncation_ok,
    })
}

/// Copy of the schedule with `offsets[l][k]` added to the motion detuning of
/// the k-th SDK record addressing mode l.
pub fn apply_detuning_offsets(
    sched: &PulseSchedule,
    offsets: &[Vec<f64>],
) -> Result<PulseSchedule> {
    sched.validate()?;
    if offsets.len() != sched.modes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} offset lanes for {} modes",
            offsets.len(),
            sched.modes.len()
        )));
    }
    let mut out = sched.clone();
    let mut seen = vec![0usize; sched.modes.len()];
    for rec in &mut out.records {
        if rec.kind != PulseKind::Sdk {
            continue;
        }
        let l = rec.mode_index.expect("validated SDK record has a mode");
        let k = seen[l];
        if k >= offsets[l].len() {
            return Err(Error::DimensionMismatch(format!(
                "mode {l} has more SDK records than the {} offsets supplied",
                offsets[l].len()
            )));
        }
        rec.motion_detuning += offsets[l][k];
        seen[l] += 1;
    }
    for (l, (&used, lane)) in seen.iter().zip(offsets).enumerate() {
        if used != lane.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} offsets supplied for mode {l} but only {used} SDK records",
                lane.len()
            )));
        }
    }
    Ok(out)
}

/// Fill in `phase_offset` for every record: target minus free-running phase
/// at the record's wall-clock start.  The free-running tones are flat in the
/// carrier frame except for their programmed detuning errors, so the SDK
/// blue-tone offset carries the full motional tracking (nu_l - err_l) t plus
/// the accumulated spin corrections; SQ offsets carry the spin corrections
/// alone.  The ion spin phase accrues slope `sq_sdk_shift_diff` during every
/// SDK pulse.
pub fn phase_track(sched: &PulseSchedule, ls: &LightShiftModel) -> Result<PulseSchedule> {
    sched.validate()?;
    ls.validate(sched.modes.len())?;
    let mut out = sched.clone();
    let mut wall = 0.0;
    let mut spin_corr = 0.0;
    for rec in &mut out.records {
        rec.phase_offset = match rec.kind {
            PulseKind::Sq => spin_corr,
            PulseKind::Sdk => {
                let l = rec.mode_index.expect("validated SDK record has a mode");
                spin_corr
                    + ls.sq_sdk_phase_diff
                    + (sched.modes[l].nu - ls.mode_detuning_errors[l]) * wall
            }
        };
        if rec.kind == PulseKind::Sdk {
            spin_corr += ls.sq_sdk_shift_diff * rec.duration;
        }
        wall += rec.duration;
    }
    Ok(out)
}

/// Per-trial schedule ensemble: each trial optionally prepares every mode by
/// randomized kicks, then runs the schedule with random per-step motion
/// detunings drawn from N(0, sqrt(Gamma_l T / N) / tau_l), where Gamma_l is
/// the mode's dephasing rate and tau_l its SDK duration in the schedule.  The
/// per-trial draw order is kick phases mode by mode, then detunings mode by
/// mode, matching [`crate::stochastic::run_detuned_ensemble`].
pub fn run_trotter_ensemble(
    sched: &PulseSchedule,
    prep: &[Option<ThermalPrepConfig>],
    n_trials: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<EnsembleResult> {
    sched.validate()?;
    if prep.len() != sched.modes.len() {
        return Err(Error::InvalidParameter(format!(
            "{} prep entries for {} modes",
            prep.len(),
            sched.modes.len()
        )));
    }
    // dephasing needs SDK records of one positive duration per mode
    let mut tau = vec![None::<f64>; sched.modes.len()];
    let mut uniform = vec![true; sched.modes.len()];
    let mut counts = vec![0usize; sched.modes.len()];
    for rec in &sched.records {
        if rec.kind == PulseKind::Sdk {
            let l = rec.mode_index.expect("validated SDK record has a mode");
            counts[l] += 1;
            match tau[l] {
                None => tau[l] = Some(rec.duration),
                Some(t) if t == rec.duration => {}
                Some(_) => uniform[l] = false,
            }
        }
    }
    let dephasing: Vec<Option<DephasingConfig>> = sched
        .modes
        .iter()
        .enumerate()
        .map(|(l, m)| {
            if m.gamma == 0.0 {
                return Ok(None);
            }
            match tau[l] {
                Some(t) if t > 0.0 && uniform[l] => {
                    DephasingConfig::new(m.gamma, sched.t_total, counts[l], t).map(Some)
                }
                _ => Err(Error::Schedule(format!(
                    "dephasing rate {} on mode {l} needs SDK records of one positive duration",
                    m.gamma
                ))),
            }
        })
        .collect::<Result<_>>()?;

    let times = sched.sample_times.clone();
    run_ensemble(times, vec!["P0".into()], n_trials, master_seed, exec, |_, rng| {
        let mut psi = StateVector::basis(2, 0)?;
        for (mode, p) in sched.modes.iter().zip(prep) {
            let state = match p {
                Some(cfg) => {
                    let phases = sample_kick_phases(cfg, rng);
                    thermal_prep_trajectory(cfg, &phases, mode.fock_dim)?
                }
                None => StateVector::basis(mode.fock_dim, 0)?,
            };
            psi = psi.kron(&state);
        }
        let offsets: Vec<Vec<f64>> = dephasing
            .iter()
            .zip(&counts)
            .map(|(cfg, &n)| match cfg {
                Some(cfg) => sample_detuning_offsets(cfg, rng),
                None => Ok(vec![0.0; n]),
            })
            .collect::<Result<_>>()?;
        let trial_sched = apply_detuning_offsets(sched, &offsets)?;
        let run = simulate_schedule(&trial_sched, &psi)?;
        Ok(TrialOutput {
            values: vec![run.series("P0").expect("P0 is always recorded").to_vec()],
            truncation_ok: run.truncation_ok,
        })
    })
}

/// Kick-train population: |0, n=0>, kicks at unit sideband Rabi frequency
/// with the given motion phases, then the |0> population.  `rotations` wraps
/// the train in opening and closing pi/2 rotations (the Hadamard pair of the
/// phase-referenced scans).  `shift` adds (shift/2) sigma_Z during kicks;
/// `detuning` adds detuning * n.
fn kick_train_population(
    spin_phase: f64,
    shift: f64,
    detuning: f64,
    motion_phases: &[f64],
    tau: f64,
    d: usize,
    rotations: bool,
) -> Result<f64> {
    let id2 = Operator::identity(2, 2);
    let idd = Operator::identity(d, d);
    let (_, _, num) = fock_operators(d)?;
    let sigma_z =
        Operator::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]);
    let mut psi = CVector::zeros(2 * d);
    psi[0] = c(1.0);
    if rotations {
        let open = hermitian_propagator(&(sigma_phi(-FRAC_PI_2) * c(0.5)), ROTATION_AREA)?;
        apply_spin_gate(&mut psi, &open, d);
    }
    for &phi_m in motion_phases {
        let h = sigma_phi(spin_phase).kronecker(&displacement_quadrature(phi_m, d)?) * c(0.5)
            + sigma_z.kronecker(&idd) * c(0.5 * shift)
            + id2.kronecker(&num) * c(detuning);
        let u = hermitian_propagator(&h, tau)?;
        psi = u * psi;
    }
    if rotations {
        let close = hermitian_propagator(&(sigma_phi(FRAC_PI_2) * c(0.5)), ROTATION_AREA)?;
        apply_spin_gate(&mut psi, &close, d);
    }
    Ok((0..d).map(|i| psi[i].norm_sqr()).sum())
}

fn validate_scan(grid: &[f64], tau_per_kick: f64, fock_dim: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("scan grid is empty".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("scan grid must be finite".into()));
    }
    if !(tau_per_kick > 0.0 && tau_per_kick.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "kick duration {tau_per_kick} must be positive"
        )));
    }
    if fock_dim < 2 {
        return Err(Error::InvalidDimension("scan needs at least 2 Fock levels".into()));
    }
    Ok(())
}

/// Spin-phase calibration: pi/2 rotation, `n_kicks` kicks at alternating
/// motion phases [0, pi, 0, pi, ...] and scanned spin phase phi_0, pi/2
/// rotation.  The |0> population peaks at 1 exactly when phi_0 = 0, where the
/// prepared spin state is an eigenstate of the kick operator.  In closed
/// form the curve is 1 - (1 - e^{-a^2/2}) sin^2(phi_0)/2 with a the area of
/// one kick, so the dip deepens toward the mixed-state floor as the kick
/// duration grows.
pub fn calibrate_spin_phase_scan(
    phi0_grid: &[f64],
    tau_per_kick: f64,
    n_kicks: usize,
    fock_dim: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    validate_scan(phi0_grid, tau_per_kick, fock_dim)?;
    if n_kicks == 0 {
        return Err(Error::InvalidParameter("need at least one kick".into()));
    }
    let phases: Vec<f64> = (0..n_kicks).map(|k| if k % 2 == 0 { 0.0 } else { PI }).collect();
    map_indexed(exec, phi0_grid.len(), |i| {
        kick_train_population(phi0_grid[i], 0.0, 0.0, &phases, tau_per_kick, fock_dim, true)
    })
    .into_iter()
    .collect()
}

/// Light-shift calibration: the spin-phase sequence at phi_0 = 0 with the
/// scanned shift acting as (shift/2) sigma_Z during every kick.
pub fn calibrate_light_shift_scan(
    shift_grid: &[f64],
    tau_per_kick: f64,
    n_kicks: usize,
    fock_dim: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    validate_scan(shift_grid, tau_per_kick, fock_dim)?;
    if n_kicks == 0 {
        return Err(Error::InvalidParameter("need at least one kick".into()));
    }
    let phases: Vec<f64> = (0..n_kicks).map(|k| if k % 2 == 0 { 0.0 } else { PI }).collect();
    map_indexed(exec, shift_grid.len(), |i| {
        kick_train_population(0.0, shift_grid[i], 0.0, &phases, tau_per_kick, fock_dim, true)
    })
    .into_iter()
    .collect()
}

/// Motional-frequency calibration: from |0, n=0>, four kicks at motion
/// phases 0, pi/2, pi, 3pi/2 with the scanned detuning, then a direct |0>
/// measurement with no spin rotations.  On resonance the four kicks close a
/// square phase-space loop in both kick-eigenstate sectors with equal
/// geometric phases, so the state returns to |0, n=0> and P0 = 1; a detuning
/// leaves opposite residual displacements entangled with the spin.  The
/// rotations are deliberately absent: sandwiching the train in a Hadamard
/// pair prepares an exact eigenstate of the kick spin operator, which keeps
/// the spin pure at every detuning and flattens the scan.
///
/// The loop is traversed with a fixed orientation, so the curve is not an
/// even function of the detuning: near delta = -pi/(2 tau) the accumulated
/// frame rotation walks all four kicks into alignment (a deep dip saturating
/// at P0 = 1/2), while at +pi/(2 tau) they cancel pairwise and the curve
/// revives to 1.  Scans meant to locate the resonance should stay inside
/// the first revival.
pub fn calibrate_motion_freq_scan(
    detuning_grid: &[f64],
    tau_per_kick: f64,
    fock_dim: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    validate_scan(detuning_grid, tau_per_kick, fock_dim)?;
    let phases: Vec<f64> = (0..4).map(|k| k as f64 * TAU / 4.0).collect();
    map_indexed(exec, detuning_grid.len(), |i| {
        kick_train_population(0.0, 0.0, detuning_grid[i], &phases, tau_per_kick, fock_dim, false)
    })
    .into_iter()
    .collect()
}

/// Width of a calibration curve: the distance between the first crossings of
/// the level halfway between the peak and the fully mixed population 1/2, on
/// either side of the peak sample.  The fixed baseline (rather than the
/// curve's own minimum) keeps the width comparable across kick durations; a
/// deeper dip then reads as a narrower line.  Errors when a side never
/// crosses, i.e. the curve is too shallow to calibrate against.
pub fn scan_width(grid: &[f64], values: &[f64]) -> Result<f64> {
    if grid.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} grid points for {} values",
            grid.len(),
            values.len()
        )));
    }
    if grid.len() < 3 {
        return Err(Error::InvalidParameter("width needs at least 3 samples".into()));
    }
    let peak = (0..values.len())
        .max_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite scan values"))
        .expect("nonempty scan");
    let level = 0.5 * (values[peak] + 0.5);
    let cross = |mut i: usize, step: isize| -> Result<f64> {
        loop {
            let j = i as isize + step;
            if j < 0 || j as usize >= values.len() {
                return Err(Error::NoBracket(format!(
                    "scan curve never falls below {level} on one side of the peak"
                )));
            }
            let j = j as usize;
            if values[j] <= level {
                let f = (values[i] - level) / (values[i] - values[j]);
                return Ok(grid[i] + f * (grid[j] - grid[i]));
            }
            i = j;
        }
    };
    Ok(cross(peak, 1)? - cross(peak, -1)?)
}

fn fmt_f64(x: f64) -> String {
    // Display round-trips f64 exactly
    format!("{x}")
}

/// Plain-text schedule dump; see the module docs for the record field order.
pub fn export_schedule(sched: &PulseSchedule) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "spin {} {}\n",
        fmt_f64(sched.spin.epsilon),
        fmt_f64(sched.spin.delta)
    ));
    out.push_str(&format!(
        "time {} {}\n",
        fmt_f64(sched.t_total),
        sched.n_steps
    ));
    for m in &sched.modes {
        out.push_str(&format!(
            "mode {} {} {} {} {}\n",
            fmt_f64(m.nu),
            fmt_f64(m.kappa),
            fmt_f64(m.gamma),
            fmt_f64(m.nbar),
            m.fock_dim
        ));
    }
    for (&mark, &t) in sched.sample_marks.iter().zip(&sched.sample_times) {
        out.push_str(&format!("mark {mark} {}\n", fmt_f64(t)));
    }
    for r in &sched.records {
        let kind = match r.kind {
            PulseKind::Sq => "SQ",
            PulseKind::Sdk => "SDK",
        };
        let mode = r.mode_index.map_or_else(|| "-".into(), |m| m.to_string());
        out.push_str(&format!(
            "pulse {kind} {} {} {} {} {} {mode} {}\n",
            fmt_f64(r.duration),
            fmt_f64(r.rabi),
            fmt_f64(r.spin_phase),
            fmt_f64(r.motion_phase),
            fmt_f64(r.motion_detuning),
            fmt_f64(r.phase_offset),
        ));
    }
    out
}

/// Inverse of [`export_schedule`].  Strict: every line must parse, and the
/// result must pass schedule validation.
pub fn parse_schedule(text: &str) -> Result<PulseSchedule> {
    let bad = |line: usize, what: &str| Error::Schedule(format!("line {line}: {what}"));
    let float = |line: usize, tok: &str| -> Result<f64> {
        tok.parse::<f64>().map_err(|_| bad(line, &format!("bad number {tok:?}")))
    };
    let int = |line: usize, tok: &str| -> Result<usize> {
        tok.parse::<usize>().map_err(|_| bad(line, &format!("bad integer {tok:?}")))
    };
    let mut spin = None;
    let mut time = None;
    let mut modes = Vec::new();
    let mut marks = Vec::new();
    let mut times = Vec::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["spin", e, d] => spin = Some(SpinParams { epsilon: float(line, e)?, delta: float(line, d)? }),
            ["time", t, n] => time = Some((float(line, t)?, int(line, n)?)),
            ["mode", nu, kappa, gamma, nbar, fd] => modes.push(OscillatorMode {
                nu: float(line, nu)?,
                kappa: float(line, kappa)?,
                gamma: float(line, gamma)?,
                nbar: float(line, nbar)?,
                fock_dim: int(line, fd)?,
            }),
            ["mark", m, t] => {
                marks.push(int(line, m)?);
                times.push(float(line, t)?);
            }
            ["pulse", kind, dur, rabi, ps, pm, dm, mode, off] => {
                let kind = match *kind {
                    "SQ" => PulseKind::Sq,
                    "SDK" => PulseKind::Sdk,
                    other => return Err(bad(line, &format!("unknown pulse kind {other:?}"))),
                };
                let mode_index = match (*mode, kind) {
                    ("-", PulseKind::Sq) => None,
                    ("-", PulseKind::Sdk) => {
                        return Err(bad(line, "SDK record lacks a mode index"))
                    }
                    (tok, _) => Some(int(line, tok)?),
                };
                records.push(PulseRecord {
                    kind,
                    duration: float(line, dur)?,
                    rabi: float(line, rabi)?,
                    spin_phase: float(line, ps)?,
                    motion_phase: float(line, pm)?,
                    motion_detuning: float(line, dm)?,
                    mode_index,
                    phase_offset: float(line, off)?,
                });
            }
            _ => return Err(bad(line, &format!("unrecognized line {raw:?}"))),
        }
    }
    let spin = spin.ok_or_else(|| Error::Schedule("missing spin line".into()))?;
    let (t_total, n_steps) = time.ok_or_else(|| Error::Schedule("missing time line".into()))?;
    let sched = PulseSchedule {
        records,
        spin,
        modes,
        t_total,
        n_steps,
        sample_marks: marks,
        sample_times: times,
    };
    sched.validate()?;
    Ok(sched)
}
