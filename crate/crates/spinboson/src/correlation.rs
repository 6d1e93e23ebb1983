//! Bath correlation functions of a damped or dephased oscillator.
//!
//! The 2-point function C(t) = tr{F(t) F rho_O} with F = kappa (b + b†) is
//! available in closed form, by adjoint propagation of F, and from a
//! spectral density via C(t) = int dw J(w)/pi (coth(bw/2) cos wt - i sin wt).
//! Both dissipation kinds share C(t); they part ways at the 4-point level,
//! where only damping factorizes into pair products (Gaussian statistics).
//! The difference of the 4-point functions bounds how far spin observables
//! of the two models can drift apart.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{fock_operators, thermal_state, thermal_tail_mass, Operator, C64};
use crate::models::{DissipationKind, OscillatorMode, SpectralDensity};
use crate::propagate::{evolve_sampled, Direction, IntegratorOptions, LindbladGenerator};
use crate::specfit::legendre_grid;

/// Parameters of the closed-form 2-point correlation.  `beta` is the inverse
/// temperature; `f64::INFINITY` selects the zero-temperature limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corr2Params {
    pub kappa: f64,
    pub gamma: f64,
    pub nu: f64,
    pub beta: f64,
}

impl Corr2Params {
    pub fn new(kappa: f64, gamma: f64, nu: f64, beta: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(nu > 0.0) || !(gamma >= 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need kappa, nu, beta > 0 and gamma >= 0, got kappa={kappa}, gamma={gamma}, nu={nu}, beta={beta}"
            )));
        }
        Ok(Self { kappa, gamma, nu, beta })
    }
}

/// A sampled complex correlation function.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrSeries {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
}

impl CorrSeries {
    pub fn new(times: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        Ok(Self { times, values })
    }
}

/// C(t) = kappa^2 e^{-Gamma t/2} (coth(beta nu/2) cos nu t - i sin nu t).
pub fn corr2_analytic(p: &Corr2Params, t: f64) -> C64 {
    // tanh saturates at 1 for beta = inf, giving the zero-temperature coth
    let coth = 1.0 / (p.beta * p.nu / 2.0).tanh();
    let damp = (-p.gamma * t / 2.0).exp();
    p.kappa * p.kappa * damp * Complex64::new(coth * (p.nu * t).cos(), -(p.nu * t).sin())
}

/// Oscillator-only generator, coupling operator F = kappa (b + b†) and the
/// stationary thermal initial state for one dissipation kind.
fn mode_generator(
    mode: &OscillatorMode,
    kind: DissipationKind,
) -> Result<(LindbladGenerator, Operator, Operator)> {
    let d = mode.fock_dim;
    let tail = thermal_tail_mass(mode.nbar, d);
    if tail > 1e-6 {
        return Err(Error::InvalidState(format!(
            "thermal occupation tail mass {tail:.2e} beyond {d} levels distorts the correlation"
        )));
    }
    let (b, bdag, n) = fock_operators(d)?;
    let h = &n * Complex64::new(mode.nu, 0.0);
    let ls = match kind {
        DissipationKind::Damped => {
            let mut ls = vec![&b * Complex64::new((mode.gamma * (mode.nbar + 1.0)).sqrt(), 0.0)];
            if mode.nbar > 0.0 {
                ls.push(&bdag * Complex64::new((mode.gamma * mode.nbar).sqrt(), 0.0));
            }
            ls
        }
        DissipationKind::Dephased => vec![&n * Complex64::new(mode.gamma.sqrt(), 0.0)],
        DissipationKind::None => {
            return Err(Error::InvalidParameter(
                "correlation functions are defined for the damped or dephased kinds".into(),
            ))
        }
    };
    let f = (&b + &bdag) * Complex64::new(mode.kappa, 0.0);
    let rho = thermal_state(mode.nbar, d)?;
    Ok((LindbladGenerator::new(h, ls)?, f, rho.into_matrix()))
}

/// C(t_k) = tr{(e^{L† t_k}[F]) F rho_th} on the given sample times by dense
/// adjoint propagation.  Damped and dephased kinds give the same series.
pub fn corr2_numeric(
    mode: &OscillatorMode,
    kind: DissipationKind,
    t_grid: &[f64],
) -> Result<CorrSeries> {
    if t_grid.is_empty() || t_grid[0] < 0.0 || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("sample times must be ascending and >= 0".into()));
    }
    let (gen, f, rho) = mode_generator(mode, kind)?;
    let prepend = t_grid[0] > 0.0;
    let mut times = Vec::with_capacity(t_grid.len() + 1);
    if prepend {
        times.push(0.0);
    }
    times.extend_from_slice(t_grid);
    let evolved = evolve_sampled(&gen, Direction::Adjoint, &f, &times, &IntegratorOptions::default())?;
    let f_rho = &f * &rho;
    let values = evolved[if prepend { 1 } else { 0 }..]
        .iter()
        .map(|ft| (ft * &f_rho).trace())
        .collect();
    CorrSeries::new(t_grid.to_vec(), values)
}

/// C(t) = int_0^wmax dw J(w)/pi (coth(beta w/2) cos wt - i sin wt) by
/// Gauss-Legendre quadrature, cross-checked against the doubled node count.
pub fn corr_from_density(
    j: &SpectralDensity,
    beta: f64,
    t_grid: &[f64],
    omega_max: f64,
    n_quad: usize,
) -> Result<CorrSeries> {
    if n_quad < 64 {
        return Err(Error::InvalidParameter(format!(
            "need at least 64 quadrature nodes, got {n_quad}"
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let eval = |n: usize| -> Result<Vec<C64>> {
        let grid = legendre_grid(n, 0.0, omega_max)?;
        // per-node weight J(w) w_n / pi and thermal factor, reused across times
        let jw: Vec<f64> =
            grid.nodes.iter().zip(&grid.weights).map(|(&w, &q)| j.eval(w) * q / std::f64::consts::PI).collect();
        let coth: Vec<f64> = grid.nodes.iter().map(|&w| 1.0 / (beta * w / 2.0).tanh()).collect();
        Ok(t_grid
            .iter()
            .map(|&t| {
                let mut c = Complex64::new(0.0, 0.0);
                for ((&w, &a), &cth) in grid.nodes.iter().zip(&jw).zip(&coth) {
                    c += Complex64::new(a * cth * (w * t).cos(), -a * (w * t).sin());
                }
                c
            })
            .collect())
    };
    let coarse = eval(n_quad)?;
    let fine = eval(2 * n_quad)?;
    let drift = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);
    if drift > 1e-6 {
        return Err(Error::IntegrationFailure(format!(
            "quadrature not converged: doubling {n_quad} nodes moves values by {drift:.2e}"
        )));
    }
    CorrSeries::new(t_grid.to_vec(), fine)
}

/// C4(t0..t3) = tr{F e^{L d0}[F e^{L d1}[F e^{L d2}[F rho_th]]]} with
/// d_k = t_k - t_{k+1}, for descending times.
pub fn corr4_numeric(
    mode: &OscillatorMode,
    kind: DissipationKind,
    t0: f64,
    t1: f64,
    t2: f64,
    t3: f64,
) -> Result<C64> {
    if !(t0 >= t1 && t1 >= t2 && t2 >= t3 && t3 >= 0.0) {
        return Err(Error::OrderingViolation(format!(
            "need t0 >= t1 >= t2 >= t3 >= 0, got ({t0}, {t1}, {t2}, {t3})"
        )));
    }
    let (gen, f, rho) = mode_generator(mode, kind)?;
    let mut x = &f * &rho;
    for dt in [t2 - t3, t1 - t2, t0 - t1] {
        if dt > 0.0 {
            let states =
                evolve_sampled(&gen, Direction::Forward, &x, &[0.0, dt], &IntegratorOptions::default())?;
            x = states.into_iter().next_back().unwrap();
        }
        x = &f * &x;
    }
    Ok(x.trace())
}

/// Zero-temperature closed forms of the 4-point function.  The expressions
/// are entire in the four times; descending order is where they equal the
/// propagated correlation.  The closed (undissipated) kind coincides with
/// the damped form, which at gamma = 0 is the same as the dephased one.
pub fn corr4_closed(
    kind: DissipationKind,
    p: &Corr2Params,
    t0: f64,
    t1: f64,
    t2: f64,
    t3: f64,
) -> C64 {
    let k4 = p.kappa.powi(4);
    let z = Complex64::new(-p.gamma / 2.0, -p.nu);
    let first = (z * (t0 - t1 + t2 - t3)).exp();
    let mut second = 2.0 * (z * (t0 + t1 - t2 - t3)).exp();
    if matches!(kind, DissipationKind::Dephased) {
        second *= (-p.gamma * (t1 - t2)).exp();
    }
    k4 * (first + second)
}

/// Damped minus dephased closed form,
/// 2 kappa^4 e^{z(t0+t1-t2-t3)} (1 - e^{-Gamma(t1-t2)}).
pub fn corr4_delta_closed(p: &Corr2Params, t0: f64, t1: f64, t2: f64, t3: f64) -> C64 {
    let z = Complex64::new(-p.gamma / 2.0, -p.nu);
    2.0 * p.kappa.powi(4)
        * (z * (t0 + t1 - t2 - t3)).exp()
        * (1.0 - (-p.gamma * (t1 - t2)).exp())
}

/// Pair factorization C(t0,t1)C(t2,t3) + C(t0,t2)C(t1,t3) + C(t0,t3)C(t1,t2)
/// with C(a,b) = c2(a - b).  Equals the damped 4-point function exactly; the
/// dephased one escapes this form.
pub fn gaussian_factorization_check(
    c2: impl Fn(f64) -> C64,
    t0: f64,
    t1: f64,
    t2: f64,
    t3: f64,
) -> C64 {
    c2(t0 - t1) * c2(t2 - t3) + c2(t0 - t2) * c2(t1 - t3) + c2(t0 - t3) * c2(t1 - t2)
}

/// Upper bound on |Delta <O_S(t)>| from the 4-point difference:
/// (|O|/4) times the integral over the descending-time simplex of
/// |dC(u0,u1,u2,u3)| + |dC(u2,u0,u1,u3)| + |dC(u1,u0,u2,u3)| + |dC(u2,u1,u0,u3)|.
///
/// Midpoint rule over the hypercube with each sample sorted into descending
/// order; the 1/4! multiplicity makes the simplex volume exact, so doubling
/// `n_grid` moves the value only through integrand curvature.
pub fn corr4_bound(
    delta_c4: impl Fn(f64, f64, f64, f64) -> C64,
    o_norm: f64,
    t: f64,
    n_grid: usize,
) -> Result<f64> {
    if n_grid < 8 {
        return Err(Error::InvalidParameter(format!("need n_grid >= 8, got {n_grid}")));
    }
    if !(t >= 0.0) || !(o_norm >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need t >= 0 and o_norm >= 0, got t={t}, o_norm={o_norm}"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let n = n_grid;
    let h = t / n as f64;
    let mids: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
    let mut total = 0.0;
    for &a in &mids {
        for &b in &mids {
            for &c in &mids {
                for &d in &mids {
                    let mut u = [a, b, c, d];
                    u.sort_by(|x, y| y.partial_cmp(x).unwrap());
                    let [u0, u1, u2, u3] = u;
                    total += delta_c4(u0, u1, u2, u3).norm()
                        + delta_c4(u2, u0, u1, u3).norm()
                        + delta_c4(u1, u0, u2, u3).norm()
                        + delta_c4(u2, u1, u0, u3).norm();
                }
            }
        }
    }
    Ok(o_norm / 4.0 * total * h.powi(4) / 24.0)
}
