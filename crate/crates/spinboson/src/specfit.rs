//! Spectral-density discretization and Lorentzian-sum fitting.
//!
//! A target density J(omega) is discretized on a Gauss-Legendre grid over
//! the resonance band and fitted by M Lorentzian peaks under the physical
//! constraint gamma_m <= nu_m/2, using a seeded derivative-free population
//! search.  Two objectives are available: matching the spectral density
//! itself, or matching both frequency-domain conditions that the bath
//! correlation function imposes (real and imaginary part separately, with a
//! per-peak effective temperature as an extra degree of freedom).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{lorentzian_density, LorentzianPeak, SpectralDensity};

/// Gauss-Legendre quadrature nodes and weights on [omega_l, omega_r].
#[derive(Debug, Clone)]
pub struct QuadGrid {
    pub omega_l: f64,
    pub omega_r: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadGrid {
    pub fn n_points(&self) -> usize {
        self.nodes.len()
    }

    /// Quadrature sum of `f` over the band.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss-Legendre grid with `n` nodes, affinely mapped from [-1, 1].
/// Exact for polynomials of degree <= 2n-1.
pub fn legendre_grid(n: usize, omega_l: f64, omega_r: f64) -> Result<QuadGrid> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one quadrature node".into()));
    }
    if !(omega_l >= 0.0) || !(omega_r > omega_l) {
        return Err(Error::InvalidParameter(format!(
            "invalid band [{omega_l}, {omega_r}]"
        )));
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mid = 0.5 * (omega_l + omega_r);
    let half = 0.5 * (omega_r - omega_l);
    for i in 0..n {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(mid - half * x); // descending x maps to ascending omega
        weights.push(w * half);
    }
    Ok(QuadGrid { omega_l, omega_r, nodes, weights })
}

/// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p_next = ((2 * k + 1) as f64 * x * p - k as f64 * p_prev) / (k + 1) as f64;
        p_prev = p;
        p = p_next;
    }
    let d = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, d)
}

/// Discretized couplings V_n^2 = J(omega_n) w_n / pi of a density on a grid.
pub fn discretize_density(j: impl Fn(f64) -> f64, grid: &QuadGrid) -> Vec<f64> {
    grid.nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&x, &w)| j(x) * w / std::f64::consts::PI)
        .collect()
}

/// An objective value together with the number of grid points that had to be
/// excluded because the target vanished there (relative error undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub excluded: usize,
}

/// Sum of relative coupling deviations, sum_n |V_n^2 - V~_n^2| / |V_n^2|,
/// between the discretized target and the trial Lorentzian sum.
pub fn sd_objective(
    target_v2: &[f64],
    trial: &[LorentzianPeak],
    grid: &QuadGrid,
) -> Result<ObjectiveValue> {
    if target_v2.len() != grid.n_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} target couplings on a {}-point grid",
            target_v2.len(),
            grid.n_points()
        )));
    }
    let trial_v2 = discretize_density(|w| lorentzian_density(trial, w), grid);
    let mut value = 0.0;
    let mut excluded = 0;
    for (t, v) in target_v2.iter().zip(&trial_v2) {
        if *t == 0.0 {
            excluded += 1;
            continue;
        }
        value += (t - v).abs() / t.abs();
    }
    Ok(ObjectiveValue { value, excluded })
}

/// The two discretized residuals of the correlation-function conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrResiduals {
    /// Real-part condition, J(w)/tanh(beta w/2) vs
    /// sum_m J_Lo,m(w)/tanh(beta_m nu_m/2).
    pub real: f64,
    /// Imaginary-part condition, J(w) vs sum_m J_Lo,m(w); identical in form
    /// to the spectral-density objective.
    pub imag: f64,
    pub excluded: usize,
}

impl CorrResiduals {
    pub fn total(&self) -> f64 {
        self.real + self.imag
    }
}

/// Real-part weight of one Lindblad oscillator at inverse temperature beta:
/// its correlation function carries J_Lo(omega)/tanh(beta nu/2) on the
/// cosine line, so the oscillator's effective density there is the peak
/// divided by tanh(beta nu/2).
fn real_part_density(peaks: &[(LorentzianPeak, f64)], omega: f64) -> f64 {
    peaks
        .iter()
        .map(|(p, beta)| lorentzian_density(std::slice::from_ref(p), omega) / (beta * p.nu / 2.0).tanh())
        .sum()
}

/// Residuals of both correlation-matching conditions on the grid.
///
/// The target's real-part line is J(w)/tanh(beta w/2) for a continuous
/// density; a Lorentzian-sum target is itself a set of Lindblad oscillators
/// at the target temperature, so its real part uses the oscillator form
/// (making the degenerate self-fit exactly zero).
pub fn corr_objective(
    target: &SpectralDensity,
    target_beta: f64,
    trial: &[(LorentzianPeak, f64)],
    grid: &QuadGrid,
) -> Result<CorrResiduals> {
    if !(target_beta > 0.0) || trial.iter().any(|(_, b)| !(*b > 0.0)) {
        return Err(Error::InvalidParameter("temperatures must be positive".into()));
    }
    let real_target: Vec<f64> = match target {
        SpectralDensity::LorentzianSum { peaks } => {
            let with_beta: Vec<(LorentzianPeak, f64)> =
                peaks.iter().map(|p| (*p, target_beta)).collect();
            grid.nodes.iter().map(|&w| real_part_density(&with_beta, w)).collect()
        }
        _ => grid.nodes.iter().map(|&w| target.eval(w) / (target_beta * w / 2.0).tanh()).collect(),
    };
    let imag_target: Vec<f64> = grid.nodes.iter().map(|&w| target.eval(w)).collect();
    let trial_peaks: Vec<LorentzianPeak> = trial.iter().map(|(p, _)| *p).collect();

    let mut real = 0.0;
    let mut imag = 0.0;
    let mut excluded = 0;
    for ((&w, rt), it) in grid.nodes.iter().zip(&real_target).zip(&imag_target) {
        let r_trial = real_part_density(trial, w);
        let i_trial = lorentzian_density(&trial_peaks, w);
        if *rt == 0.0 || *it == 0.0 {
            excluded += 1;
            continue;
        }
        real += (rt - r_trial).abs() / rt.abs();
        imag += (it - i_trial).abs() / it.abs();
    }
    Ok(CorrResiduals { real, imag, excluded })
}

/// Box bounds for each peak parameter; `beta` present only for the
/// correlation objective's per-peak temperatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub kappa: (f64, f64),
    pub gamma: (f64, f64),
    pub nu: (f64, f64),
    pub beta: Option<(f64, f64)>,
}

/// Which residual the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    SpectralDensity,
    Correlation,
}

/// A bounded Lorentzian-sum fitting task.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub target: SpectralDensity,
    /// Target inverse temperature; required by the correlation objective.
    pub target_beta: Option<f64>,
    pub band: (f64, f64),
    pub n_peaks: usize,
    pub bounds: ParamBounds,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Grid size over the band; 64 is insensitive at the percent level.
    pub n_grid: usize,
}

impl FitProblem {
    pub fn new(
        target: SpectralDensity,
        band: (f64, f64),
        n_peaks: usize,
        bounds: ParamBounds,
        budget: usize,
        seed: u64,
    ) -> Self {
        Self { target, target_beta: None, band, n_peaks, bounds, budget, seed, n_grid: 64 }
    }
}

/// One fitted peak, with its effective temperature when the correlation
/// objective was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedPeak {
    pub peak: LorentzianPeak,
    pub beta: Option<f64>,
}

/// Best parameters found by [`fit_lorentzians`], peaks sorted by nu.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub peaks: Vec<FittedPeak>,
    pub objective: f64,
    /// Separate residuals when the correlation objective was used, so a fit
    /// that satisfies one condition but not the other is visible.
    pub residuals: Option<CorrResiduals>,
    pub evaluations: usize,
    pub constraints_ok: bool,
}

const POPULATION: usize = 32;
const DIFFERENTIAL_WEIGHT: f64 = 0.7;
const CROSSOVER_RATE: f64 = 0.9;
/// Generations without improvement before the population is redrawn.
const STAGNATION_LIMIT: usize = 60;

struct Encoding {
    n_peaks: usize,
    with_beta: bool,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Encoding {
    fn new(problem: &FitProblem, kind: ObjectiveKind) -> Result<Self> {
        let with_beta = matches!(kind, ObjectiveKind::Correlation);
        if with_beta && problem.bounds.beta.is_none() {
            return Err(Error::FitSetup(
                "correlation objective needs beta bounds per peak".into(),
            ));
        }
        let per = if with_beta { 4 } else { 3 };
        let mut lo = Vec::with_capacity(per * problem.n_peaks);
        let mut hi = Vec::with_capacity(per * problem.n_peaks);
        for _ in 0..problem.n_peaks {
            let b = &problem.bounds;
            for (l, h) in [b.kappa, b.gamma, b.nu] {
                lo.push(l);
                hi.push(h);
            }
            if with_beta {
                let (l, h) = b.beta.unwrap();
                lo.push(l);
                hi.push(h);
            }
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && h > l)) {
            return Err(Error::FitSetup("bounds must be finite with hi > lo".into()));
        }
        Ok(Self { n_peaks: problem.n_peaks, with_beta, lo, hi })
    }

    fn dims(&self) -> usize {
        self.lo.len()
    }

    fn per_peak(&self) -> usize {
        if self.with_beta {
            4
        } else {
            3
        }
    }

    /// Clamp into the box, then enforce gamma <= nu/2 by projection.
    fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
        let per = self.per_peak();
        for m in 0..self.n_peaks {
            let nu = x[per * m + 2];
            let g = &mut x[per * m + 1];
            *g = g.min(nu / 2.0);
        }
    }

    fn decode(&self, x: &[f64]) -> Vec<FittedPeak> {
        let per = self.per_peak();
        (0..self.n_peaks)
            .map(|m| FittedPeak {
                peak: LorentzianPeak { kappa: x[per * m], gamma: x[per * m + 1], nu: x[per * m + 2] },
                beta: if self.with_beta { Some(x[per * m + 3]) } else { None },
            })
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.gen::<f64>())
            .collect();
        self.project(&mut x);
        x
    }
}

/// Fit `problem.n_peaks` Lorentzian peaks to the target density by a seeded
/// differential-evolution search (rand/1/bin, projection onto the bounds and
/// the gamma <= nu/2 constraint, stagnation-triggered restarts).  The search
/// is deterministic for a given seed and budget.
pub fn fit_lorentzians(problem: &FitProblem, kind: ObjectiveKind) -> Result<FitResult> {
    fit_lorentzians_traced(problem, kind).map(|(result, _)| result)
}

/// [`fit_lorentzians`] returning the best-so-far objective after every
/// evaluation, for convergence diagnostics.
pub fn fit_lorentzians_traced(
    problem: &FitProblem,
    kind: ObjectiveKind,
) -> Result<(FitResult, Vec<f64>)> {
    let enc = Encoding::new(problem, kind)?;
    let grid = legendre_grid(problem.n_grid, problem.band.0, problem.band.1)?;
    let target_v2 = discretize_density(|w| problem.target.eval(w), &grid);
    if matches!(kind, ObjectiveKind::Correlation) && problem.target_beta.is_none() {
        return Err(Error::FitSetup("correlation objective needs target_beta".into()));
    }

    let evaluate = |x: &[f64]| -> f64 {
        let decoded = enc.decode(x);
        let value = match kind {
            ObjectiveKind::SpectralDensity => {
                let peaks: Vec<LorentzianPeak> = decoded.iter().map(|f| f.peak).collect();
                sd_objective(&target_v2, &peaks, &grid).map(|o| o.value)
            }
            ObjectiveKind::Correlation => {
                let trial: Vec<(LorentzianPeak, f64)> =
                    decoded.iter().map(|f| (f.peak, f.beta.unwrap())).collect();
                corr_objective(&problem.target, problem.target_beta.unwrap(), &trial, &grid)
                    .map(|r| r.total())
            }
        };
        match value {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };

    if problem.budget == 0 {
        return Err(Error::BudgetExhausted("zero evaluation budget".into()));
    }
    if problem.n_peaks == 0 {
        return Err(Error::FitSetup("need at least one peak".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut evaluations = 0usize;
    let mut best_x: Option<Vec<f64>> = None;
    let mut best_f = f64::INFINITY;
    let mut trace = Vec::with_capacity(problem.budget);

    'outer: loop {
        // (re)draw a population
        let mut pop: Vec<Vec<f64>> = Vec::with_capacity(POPULATION);
        let mut fit: Vec<f64> = Vec::with_capacity(POPULATION);
        for _ in 0..POPULATION {
            if evaluations >= problem.budget {
                break 'outer;
            }
            let x = enc.sample(&mut rng);
            let f = evaluate(&x);
            evaluations += 1;
            if f < best_f {
                best_f = f;
                best_x = Some(x.clone());
            }
            trace.push(best_f);
            pop.push(x);
            fit.push(f);
        }

        let mut stagnant = 0usize;
        while evaluations < problem.budget {
            let mut improved = false;
            for i in 0..pop.len() {
                if evaluations >= problem.budget {
                    break;
                }
                // rand/1/bin mutation and crossover
                let pick = |rng: &mut ChaCha8Rng, exclude: &[usize]| loop {
                    let r = rng.gen_range(0..pop.len());
                    if !exclude.contains(&r) {
                        return r;
                    }
                };
                let r1 = pick(&mut rng, &[i]);
                let r2 = pick(&mut rng, &[i, r1]);
                let r3 = pick(&mut rng, &[i, r1, r2]);
                let j_rand = rng.gen_range(0..enc.dims());
                let mut trial = pop[i].clone();
                for j in 0..enc.dims() {
                    if j == j_rand || rng.gen::<f64>() < CROSSOVER_RATE {
                        trial[j] =
                            pop[r1][j] + DIFFERENTIAL_WEIGHT * (pop[r2][j] - pop[r3][j]);
                    }
                }
                enc.project(&mut trial);
                let f = evaluate(&trial);
                evaluations += 1;
                if f <= fit[i] {
                    pop[i] = trial.clone();
                    fit[i] = f;
                }
                if f < best_f {
                    best_f = f;
                    best_x = Some(trial);
                    improved = true;
                }
                trace.push(best_f);
            }
            stagnant = if improved { 0 } else { stagnant + 1 };
            if stagnant >= STAGNATION_LIMIT {
                continue 'outer; // restart with a fresh population
            }
        }
        break;
    }

    let best_x = best_x.filter(|_| best_f.is_finite()).ok_or_else(|| {
        Error::BudgetExhausted(format!("no feasible evaluation in {evaluations} tries"))
    })?;
    let mut peaks = enc.decode(&best_x);
    peaks.sort_by(|a, b| a.peak.nu.partial_cmp(&b.peak.nu).unwrap());
    let constraints_ok = peaks.iter().all(|f| {
        let p = &f.peak;
        p.gamma <= p.nu / 2.0 + 1e-12
            && (enc.lo[0]..=enc.hi[0]).contains(&p.kappa)
            && (enc.lo[2]..=enc.hi[2]).contains(&p.nu)
    });
    let residuals = match kind {
        ObjectiveKind::Correlation => {
            let trial: Vec<(LorentzianPeak, f64)> =
                peaks.iter().map(|f| (f.peak, f.beta.unwrap())).collect();
            Some(corr_objective(&problem.target, problem.target_beta.unwrap(), &trial, &grid)?)
        }
        ObjectiveKind::SpectralDensity => None,
    };
    Ok((
        FitResult { peaks, objective: best_f, residuals, evaluations, constraints_ok },
        trace,
    ))
}
