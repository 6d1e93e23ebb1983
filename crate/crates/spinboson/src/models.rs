//! Model definitions: spin and mode parameters, spectral densities,
//! thermodynamic relations, Lindblad assembly and unit mapping.
//!
//! Everything in the numerics core is dimensionless with the spin coupling
//! Delta as the natural unit (Delta = 1 unless stated otherwise).  Physical
//! units enter only through [`map_parameters`] (molecular, cm^-1 and
//! seconds) and [`map_to_ion`] (trap frequencies and gate times).

use crate::error::{Error, Result};
use crate::hilbert::{
    embed, fock_operators, hermiticity_defect, sigma_x, sigma_z, thermal_state, DensityMatrix,
    HilbertLayout, Operator, C64,
};

/// Speed of light in cm/s; converts wavenumbers to angular frequencies via
/// omega = 2 pi c nu_tilde.
pub const SPEED_OF_LIGHT_CM_PER_S: f64 = 2.99792458e10;

/// Second radiation constant hc/k_B in cm K; beta*omega = C2 * nu_tilde / T.
pub const SECOND_RADIATION_CM_K: f64 = 1.4387769;

/// Spin parameters of H_S = (epsilon/2) sigma_z + (delta/2) sigma_x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinParams {
    /// Detuning epsilon (angular frequency).
    pub epsilon: f64,
    /// Coupling delta (angular frequency); the default unit scale.
    pub delta: f64,
}

/// One harmonic mode: frequency, spin coupling, dissipation rate and initial
/// thermal occupation, truncated to `fock_dim` levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorMode {
    pub nu: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub fock_dim: usize,
}

impl OscillatorMode {
    /// The identification of (kappa, gamma, nu) with a Lorentzian peak of the
    /// spectral density assumes an underdamped mode, gamma < nu/2.  Outside
    /// that regime the model still runs but the peak picture is unreliable.
    pub fn outside_lorentzian_regime(&self) -> bool {
        self.gamma >= self.nu / 2.0
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::InvalidParameter(format!("mode frequency must be > 0, got {}", self.nu)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.nbar >= 0.0) {
            return Err(Error::InvalidParameter(format!("nbar must be >= 0, got {}", self.nbar)));
        }
        if self.fock_dim < 2 {
            return Err(Error::InvalidDimension(format!(
                "fock_dim must be >= 2, got {}",
                self.fock_dim
            )));
        }
        Ok(())
    }
}

/// How each mode dissipates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipationKind {
    /// Closed system; no Lindblad operators.
    None,
    /// Number dephasing, L = sqrt(gamma) b†b.
    Dephased,
    /// Thermal damping pair, L1 = sqrt(gamma (nbar+1)) b, L2 = sqrt(gamma nbar) b†.
    Damped,
}

/// A single Lorentzian peak of the spectral density: center nu, FWHM gamma,
/// weight kappa^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianPeak {
    pub kappa: f64,
    pub gamma: f64,
    pub nu: f64,
}

/// Bath spectral density J(omega).
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralDensity {
    LorentzianSum { peaks: Vec<LorentzianPeak> },
    Leggett { a: f64, s: f64, omega_c: f64 },
}

impl SpectralDensity {
    pub fn eval(&self, omega: f64) -> f64 {
        match self {
            SpectralDensity::LorentzianSum { peaks } => lorentzian_density(peaks, omega),
            SpectralDensity::Leggett { a, s, omega_c } => leggett_density(*a, *s, *omega_c, omega),
        }
    }
}

/// Assembled Lindblad model on a spin (x) modes layout: the time-independent
/// Hamiltonian, the dissipators and descriptive labels (including regime
/// warnings from the mode parameters).
#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub layout: HilbertLayout,
    pub hamiltonian: Operator,
    pub lindblad_ops: Vec<Operator>,
    pub labels: Vec<String>,
}

/// Build H = (eps/2) sigma_z + (delta/2) sigma_x
///           + sum_l (kappa_l/2) sigma_z (b_l + b_l†) + sum_l nu_l b_l†b_l
/// with Lindblad operators chosen by `kind`.  Operators with a vanishing
/// prefactor (gamma = 0, or nbar = 0 for the damped b† channel) are dropped.
pub fn build_model(
    spin: SpinParams,
    modes: &[OscillatorMode],
    kind: DissipationKind,
) -> Result<LindbladModel> {
    if modes.is_empty() {
        return Err(Error::InvalidParameter("mode list must be nonempty".into()));
    }
    for m in modes {
        m.validate()?;
    }
    let layout = HilbertLayout::new(modes.iter().map(|m| m.fock_dim).collect())?;
    let dim = layout.total_dim();

    let mut h = embed(&sigma_z(), 0, &layout)? * C64::new(0.5 * spin.epsilon, 0.0)
        + embed(&sigma_x(), 0, &layout)? * C64::new(0.5 * spin.delta, 0.0);
    let sz_full = embed(&sigma_z(), 0, &layout)?;
    let mut lindblad_ops = Vec::new();
    let mut labels = Vec::new();

    for (l, m) in modes.iter().enumerate() {
        let (b, bdag, num) = fock_operators(m.fock_dim)?;
        let x = &b + &bdag;
        h += embed(&x, l + 1, &layout)? * &sz_full * C64::new(0.5 * m.kappa, 0.0);
        h += embed(&num, l + 1, &layout)? * C64::new(m.nu, 0.0);

        match kind {
            DissipationKind::None => {}
            DissipationKind::Dephased => {
                if m.gamma > 0.0 {
                    lindblad_ops.push(embed(&num, l + 1, &layout)? * C64::new(m.gamma.sqrt(), 0.0));
                    labels.push(format!("mode {l}: number dephasing, rate {}", m.gamma));
                }
            }
            DissipationKind::Damped => {
                if m.gamma > 0.0 {
                    let down = (m.gamma * (m.nbar + 1.0)).sqrt();
                    lindblad_ops.push(embed(&b, l + 1, &layout)? * C64::new(down, 0.0));
                    labels.push(format!("mode {l}: damping, rate {}, nbar {}", m.gamma, m.nbar));
                    if m.nbar > 0.0 {
                        let up = (m.gamma * m.nbar).sqrt();
                        lindblad_ops.push(embed(&bdag, l + 1, &layout)? * C64::new(up, 0.0));
                        labels.push(format!("mode {l}: thermal excitation, nbar {}", m.nbar));
                    }
                }
            }
        }
        if m.outside_lorentzian_regime() {
            labels.push(format!(
                "warning: mode {l} has gamma = {} >= nu/2 = {}, outside the Lorentzian-peak regime",
                m.gamma,
                m.nu / 2.0
            ));
        }
    }

    debug_assert!(hermiticity_defect(&h) < 1e-12);
    debug_assert!(h.nrows() == dim);
    Ok(LindbladModel { layout, hamiltonian: h, lindblad_ops, labels })
}

/// The standard initial state |0><0| (x) rho_th(nbar_1) (x) ... with each
/// mode thermal at its own `nbar`.
pub fn donor_thermal_state(modes: &[OscillatorMode]) -> Result<DensityMatrix> {
    if modes.is_empty() {
        return Err(Error::InvalidParameter("mode list must be nonempty".into()));
    }
    let mut m = crate::hilbert::donor_projector();
    for mode in modes {
        mode.validate()?;
        m = m.kronecker(thermal_state(mode.nbar, mode.fock_dim)?.matrix());
    }
    DensityMatrix::try_new(m)
}

/// Bose-Einstein occupation nbar(omega) = 1/(e^{beta omega} - 1).
pub fn nbar_of(beta: f64, omega: f64) -> Result<f64> {
    if !(beta > 0.0) || !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nbar_of needs beta > 0 and omega > 0, got beta={beta}, omega={omega}"
        )));
    }
    Ok(1.0 / ((beta * omega).exp_m1()))
}

/// Inverse temperature from occupation: beta = log(1 + 1/nbar)/nu.
pub fn beta_of(nbar: f64, nu: f64) -> Result<f64> {
    if !(nbar > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta_of needs nbar > 0 and nu > 0, got nbar={nbar}, nu={nu}"
        )));
    }
    // ln_1p keeps full relative precision in the high-temperature limit
    Ok((1.0 / nbar).ln_1p() / nu)
}

/// Occupation of a mode at `nu_wavenumber` cm^-1 in a bath at `temp_kelvin`.
pub fn nbar_at_temperature(nu_wavenumber: f64, temp_kelvin: f64) -> Result<f64> {
    if !(nu_wavenumber > 0.0) || !(temp_kelvin > 0.0) {
        return Err(Error::InvalidParameter(
            "nbar_at_temperature needs positive wavenumber and temperature".into(),
        ));
    }
    let x = SECOND_RADIATION_CM_K * nu_wavenumber / temp_kelvin;
    Ok(1.0 / x.exp_m1())
}

/// Sum of antisymmetrized Lorentzian peaks,
/// J(omega) = sum_m kappa_m^2 [ (G/2)/((G/2)^2+(omega-nu_m)^2)
///                            - (G/2)/((G/2)^2+(omega+nu_m)^2) ],  G = gamma_m.
/// Vanishes at omega = 0 and is odd under omega -> -omega.
pub fn lorentzian_density(peaks: &[LorentzianPeak], omega: f64) -> f64 {
    peaks
        .iter()
        .map(|p| {
            let hw = p.gamma / 2.0;
            let plus = hw / (hw * hw + (omega - p.nu).powi(2));
            let minus = hw / (hw * hw + (omega + p.nu).powi(2));
            p.kappa * p.kappa * (plus - minus)
        })
        .sum()
}

/// Power-law density with exponential cutoff,
/// J(omega) = A omega^s omega_c^{1-s} e^{-omega/omega_c}.
/// s < 1 sub-Ohmic, s = 1 Ohmic, s > 1 super-Ohmic.
pub fn leggett_density(a: f64, s: f64, omega_c: f64, omega: f64) -> f64 {
    a * omega.powf(s) * omega_c.powf(1.0 - s) * (-omega / omega_c).exp()
}

/// Adjust modes for known hardware noise: raise every nbar by `nbar_offset`
/// and lift gamma to at least `gamma_floor`.
pub fn noise_aware(modes: &[OscillatorMode], nbar_offset: f64, gamma_floor: f64) -> Result<Vec<OscillatorMode>> {
    if !(nbar_offset >= 0.0) || !(gamma_floor >= 0.0) {
        return Err(Error::InvalidParameter("noise offsets must be >= 0".into()));
    }
    Ok(modes
        .iter()
        .map(|m| OscillatorMode {
            nbar: m.nbar + nbar_offset,
            gamma: m.gamma.max(gamma_floor),
            ..*m
        })
        .collect())
}

/// A unitless scenario: all frequencies in units where delta (or another
/// chosen anchor) is order one, total time in the same inverse units.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitlessParams {
    pub epsilon: f64,
    pub delta: f64,
    pub kappas: Vec<f64>,
    pub nus: Vec<f64>,
    /// Total evolution time (dimensionless; an omega t product).
    pub t_total: f64,
}

/// Molecular-scale realization of a unitless scenario: wavenumbers and a
/// total time in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularParams {
    pub epsilon_cm: f64,
    pub delta_cm: f64,
    pub kappas_cm: Vec<f64>,
    pub nus_cm: Vec<f64>,
    pub t_total_s: f64,
}

/// Map a unitless scenario to molecular units by pinning the spin coupling to
/// `delta_reference_cm` wavenumbers.  Every frequency scales by
/// delta_reference/delta_ul and the total time follows from keeping
/// delta_mol t_mol = delta_ul t_ul, with omega = 2 pi c (cm^-1 value).
pub fn map_parameters(unitless: &UnitlessParams, delta_reference_cm: f64) -> Result<MolecularParams> {
    if !(delta_reference_cm > 0.0) {
        return Err(Error::InvalidParameter("delta reference must be positive".into()));
    }
    if !(unitless.delta > 0.0) {
        return Err(Error::InvalidParameter("unitless delta must be positive".into()));
    }
    let scale = delta_reference_cm / unitless.delta;
    let to_angular = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_S;
    let t_total_s = unitless.delta * unitless.t_total / (to_angular * delta_reference_cm);
    Ok(MolecularParams {
        epsilon_cm: unitless.epsilon * scale,
        delta_cm: unitless.delta * scale,
        kappas_cm: unitless.kappas.iter().map(|k| k * scale).collect(),
        nus_cm: unitless.nus.iter().map(|n| n * scale).collect(),
        t_total_s,
    })
}

/// Trapped-ion realization of one mode: interaction time in seconds, mode
/// frequency and per-mode spin coupling share in angular frequency (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonModeParams {
    pub t_ion_s: f64,
    pub nu_ion: f64,
    pub delta_ion: f64,
}

/// Map a unitless scenario onto per-mode ion parameters given each mode's
/// achievable sideband coupling `kappa_ion` (rad/s).
///
/// Each mode keeps its dimensionless products: kappa_ul,l t_ul = kappa_ion,l
/// t_ion,l fixes t_ion,l, then nu_ion,l = nu_ul,l t_ul / t_ion,l.  The spin
/// coupling is interleaved across modes, so only the sum is constrained:
/// sum_l delta_ion,l t_ion,l = delta_ul t_ul.  We split it proportionally to
/// 1/t_ion,l (each mode contributes the same delta_ion t_ion product), which
/// is the unique symmetric choice.
pub fn map_to_ion(unitless: &UnitlessParams, kappa_ion: &[f64]) -> Result<Vec<IonModeParams>> {
    if kappa_ion.len() != unitless.kappas.len() || kappa_ion.len() != unitless.nus.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ion couplings for {} modes",
            kappa_ion.len(),
            unitless.kappas.len()
        )));
    }
    if kappa_ion.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::InvalidParameter("every kappa_ion must be positive".into()));
    }
    let n = kappa_ion.len() as f64;
    Ok(kappa_ion
        .iter()
        .zip(unitless.kappas.iter().zip(&unitless.nus))
        .map(|(&k_ion, (&k_ul, &nu_ul))| {
            let t_ion_s = k_ul * unitless.t_total / k_ion;
            IonModeParams {
                t_ion_s,
                nu_ion: nu_ul * unitless.t_total / t_ion_s,
                delta_ion: unitless.delta * unitless.t_total / (n * t_ion_s),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fidelity, thermal_state};
    use approx::assert_abs_diff_eq;

    fn single_mode(gamma: f64, nbar: f64) -> OscillatorMode {
        OscillatorMode { nu: 1.0, kappa: 0.1, gamma, nbar, fock_dim: 6 }
    }

    #[test]
    fn hamiltonian_is_hermitian_and_decouples_at_zero_coupling() {
        let spin = SpinParams { epsilon: 0.3, delta: 1.0 };
        let mode = OscillatorMode { kappa: 0.0, ..single_mode(0.0, 0.0) };
        let model = build_model(spin, &[mode], DissipationKind::None).unwrap();
        assert!(hermiticity_defect(&model.hamiltonian) < 1e-12);
        // with kappa = 0 the Hamiltonian is a pure sum of slot-local terms
        let layout = &model.layout;
        let h_spin = sigma_z() * C64::new(0.15, 0.0) + sigma_x() * C64::new(0.5, 0.0);
        let (_, _, num) = fock_operators(6).unwrap();
        let expect =
            embed(&h_spin, 0, layout).unwrap() + embed(&num, 1, layout).unwrap() * C64::new(1.0, 0.0);
        assert!((&model.hamiltonian - expect).iter().all(|z| z.norm() < 1e-14));
        assert!(model.lindblad_ops.is_empty());
    }

    #[test]
    fn dissipator_selection_per_kind() {
        let spin = SpinParams { epsilon: 0.0, delta: 1.0 };
        let deph = build_model(spin, &[single_mode(0.2, 0.0)], DissipationKind::Dephased).unwrap();
        assert_eq!(deph.lindblad_ops.len(), 1);
        // sqrt(gamma) n has largest entry sqrt(0.2)*(d-1) on the top level
        let top = deph.lindblad_ops[0].iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert_abs_diff_eq!(top, 0.2f64.sqrt() * 5.0, epsilon = 1e-12);

        // damped at nbar = 0 keeps only the decay channel
        let damp0 = build_model(spin, &[single_mode(0.2, 0.0)], DissipationKind::Damped).unwrap();
        assert_eq!(damp0.lindblad_ops.len(), 1);
        let damp = build_model(spin, &[single_mode(0.2, 0.5)], DissipationKind::Damped).unwrap();
        assert_eq!(damp.lindblad_ops.len(), 2);

        // gamma = 0 drops everything
        let none = build_model(spin, &[single_mode(0.0, 0.5)], DissipationKind::Damped).unwrap();
        assert!(none.lindblad_ops.is_empty());
    }

    #[test]
    fn lorentzian_regime_warning_is_flagged() {
        let spin = SpinParams { epsilon: 0.0, delta: 1.0 };
        let ok = build_model(spin, &[single_mode(0.4, 0.0)], DissipationKind::Dephased).unwrap();
        assert!(!ok.labels.iter().any(|l| l.starts_with("warning")));
        let bad = build_model(spin, &[single_mode(0.6, 0.0)], DissipationKind::Dephased).unwrap();
        assert!(bad.labels.iter().any(|l| l.starts_with("warning")));
        assert!(single_mode(0.5, 0.0).outside_lorentzian_regime());
    }

    #[test]
    fn build_model_rejects_bad_input() {
        let spin = SpinParams { epsilon: 0.0, delta: 1.0 };
        assert!(build_model(spin, &[], DissipationKind::None).is_err());
        let bad = OscillatorMode { nu: -1.0, ..single_mode(0.0, 0.0) };
        assert!(build_model(spin, &[bad], DissipationKind::None).is_err());
        let bad = OscillatorMode { fock_dim: 1, ..single_mode(0.0, 0.0) };
        assert!(build_model(spin, &[bad], DissipationKind::None).is_err());
    }

    #[test]
    fn bose_einstein_occupation_values() {
        // beta = 3.36 at nu = 1: 1/(e^3.36 - 1)
        let n = nbar_of(3.36, 1.0).unwrap();
        assert_abs_diff_eq!(n, 0.036, epsilon = 5e-4);
        assert_abs_diff_eq!(n, 1.0 / 3.36f64.exp_m1(), epsilon = 1e-15);
        // zero-temperature limit
        assert!(nbar_of(500.0, 1.0).unwrap() < 1e-200);
        assert!(nbar_of(0.0, 1.0).is_err());
    }

    #[test]
    fn beta_of_inverts_nbar_of() {
        assert_abs_diff_eq!(beta_of(0.036, 1.0).unwrap(), 3.36, epsilon = 5e-3);
        assert_abs_diff_eq!(beta_of(1.0, 2.0).unwrap(), 2f64.ln() / 2.0, epsilon = 1e-15);
        // mutual inverses on a log-spaced grid
        for k in -6..=6 {
            let nbar = 10f64.powi(k) * 3.3;
            for nu in [0.5, 1.0, 7.0] {
                let beta = beta_of(nbar, nu).unwrap();
                let back = nbar_of(beta, nu).unwrap();
                assert!((back - nbar).abs() <= 1e-12 * nbar.max(1.0), "nbar={nbar}, back={back}");
            }
        }
        assert!(beta_of(0.0, 1.0).is_err());
    }

    #[test]
    fn thermal_occupation_at_room_temperature() {
        // 104 cm^-1 at 300 K: x = 1.4387769*104/300, nbar = 1/(e^x - 1)
        let n = nbar_at_temperature(104.0, 300.0).unwrap();
        assert_abs_diff_eq!(n, 1.546, epsilon = 1e-3);
        // the occupation grows roughly linearly with T well above the gap
        assert!(nbar_at_temperature(104.0, 600.0).unwrap() > 1.9 * n);
    }

    #[test]
    fn lorentzian_density_single_peak_values() {
        let peaks = [LorentzianPeak { kappa: 0.1, gamma: 0.1, nu: 1.0 }];
        // omega = 0: resonant and counter-rotating terms cancel exactly
        assert_abs_diff_eq!(lorentzian_density(&peaks, 0.0), 0.0, epsilon = 1e-18);
        // on resonance: 0.01*(1/0.05 - 0.05/(0.0025+4)) = 0.1998751...
        let j = lorentzian_density(&peaks, 1.0);
        assert_abs_diff_eq!(j, 0.01 * (1.0 / 0.05 - 0.05 / 4.0025), epsilon = 1e-15);
        assert_abs_diff_eq!(j, 0.1998751, epsilon = 1e-7);
        // gamma is the FWHM of the on-resonance peak, counter-rotating part aside:
        // at omega = nu +- gamma/2 the resonant term halves
        let half = lorentzian_density(&peaks, 1.05);
        assert_abs_diff_eq!(half, 0.5 * j, epsilon = 2e-3 * j);
    }

    #[test]
    fn lorentzian_density_nonneg_in_regime() {
        let peaks = [
            LorentzianPeak { kappa: 0.3, gamma: 0.5, nu: 0.9 },
            LorentzianPeak { kappa: 0.1, gamma: 0.2, nu: 2.0 },
        ];
        for i in 0..=400 {
            let omega = i as f64 * 0.02;
            assert!(
                lorentzian_density(&peaks, omega) >= -1e-15,
                "negative density at omega={omega}"
            );
        }
    }

    #[test]
    fn leggett_density_values() {
        assert_abs_diff_eq!(leggett_density(0.1, 0.5, 10.0, 0.0), 0.0, epsilon = 1e-18);
        // s = 1 at omega = omega_c: A omega_c / e
        let a = 0.3;
        let wc = 4.0;
        assert_abs_diff_eq!(
            leggett_density(a, 1.0, wc, wc),
            a * wc * (-1.0f64).exp(),
            epsilon = 1e-15
        );
        // sub-Ohmic dominates near zero, super-Ohmic dominates past the peak
        assert!(leggett_density(0.1, 0.5, 10.0, 0.01) > leggett_density(0.1, 2.0, 10.0, 0.01));
    }

    #[test]
    fn noise_aware_adjustment() {
        let modes = [single_mode(0.0, 0.0), single_mode(0.01, 0.1)];
        let adj = noise_aware(&modes, 0.036, 0.0022).unwrap();
        assert_abs_diff_eq!(adj[0].nbar, 0.036, epsilon = 1e-15);
        assert_abs_diff_eq!(adj[0].gamma, 0.0022, epsilon = 1e-15);
        // gamma already above the floor is untouched
        assert_abs_diff_eq!(adj[1].gamma, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(adj[1].nbar, 0.136, epsilon = 1e-15);
        // zero offsets are the identity
        let same = noise_aware(&modes, 0.0, 0.0).unwrap();
        assert_eq!(&same[..], &modes[..]);
    }

    #[test]
    fn donor_thermal_state_structure() {
        let modes = [single_mode(0.0, 0.5), single_mode(0.0, 0.0)];
        let rho = donor_thermal_state(&modes).unwrap();
        assert_eq!(rho.dim(), 2 * 6 * 6);
        assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-14);
        // acceptor block empty, mode 2 in its ground state
        let m = rho.matrix();
        let acceptor: f64 = (36..72).map(|i| m[(i, i)].re).sum();
        assert_abs_diff_eq!(acceptor, 0.0, epsilon = 1e-15);
        // mode 1 occupation matches the truncated geometric mean
        let p0: f64 = m[(0, 0)].re; // |0, n1=0, n2=0>
        let p1: f64 = m[(6, 6)].re; // |0, n1=1, n2=0>
        assert_abs_diff_eq!(p1 / p0, 0.5 / 1.5, epsilon = 1e-12);
        assert!(donor_thermal_state(&[]).is_err());
    }

    #[test]
    fn molecular_mapping_reproduces_reference_times() {
        let tau = 2.0 * std::f64::consts::PI;
        // delta_ul = 1, T = 12.8 periods, anchor 500 cm^-1
        let ul = UnitlessParams {
            epsilon: 0.0,
            delta: 1.0,
            kappas: vec![0.1],
            nus: vec![1.01],
            t_total: 12.8 * tau,
        };
        let mol = map_parameters(&ul, 500.0).unwrap();
        assert_abs_diff_eq!(mol.t_total_s * 1e15, 853.9, epsilon = 0.05);
        assert_abs_diff_eq!(mol.kappas_cm[0], 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mol.nus_cm[0], 505.0, epsilon = 1e-12);

        // epsilon-anchored scenario: delta_ul = 0.3 pinned to 30 cm^-1
        let ul = UnitlessParams {
            epsilon: 1.0,
            delta: 0.3,
            kappas: vec![0.3],
            nus: vec![1.04],
            t_total: 12.0 * tau,
        };
        let mol = map_parameters(&ul, 30.0).unwrap();
        assert_abs_diff_eq!(mol.epsilon_cm, 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mol.t_total_s * 1e12, 4.003, epsilon = 5e-4);
    }

    #[test]
    fn molecular_mapping_preserves_dimensionless_products() {
        let ul = UnitlessParams {
            epsilon: 0.7,
            delta: 0.3,
            kappas: vec![0.1, 0.25],
            nus: vec![1.04, 0.9],
            t_total: 77.0,
        };
        let mol = map_parameters(&ul, 42.0).unwrap();
        let to_angular = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_S;
        let products_ul: Vec<f64> = [ul.epsilon, ul.delta, ul.kappas[0], ul.kappas[1], ul.nus[0], ul.nus[1]]
            .iter()
            .map(|w| w * ul.t_total)
            .collect();
        let products_mol: Vec<f64> =
            [mol.epsilon_cm, mol.delta_cm, mol.kappas_cm[0], mol.kappas_cm[1], mol.nus_cm[0], mol.nus_cm[1]]
                .iter()
                .map(|w| w * to_angular * mol.t_total_s)
                .collect();
        for (a, b) in products_ul.iter().zip(&products_mol) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        assert!(map_parameters(&ul, -1.0).is_err());
    }

    #[test]
    fn ion_mapping_matches_reference_column() {
        let tau = 2.0 * std::f64::consts::PI;
        let ul = UnitlessParams {
            epsilon: 0.0,
            delta: 1.0,
            kappas: vec![0.1, 0.1, 0.1],
            nus: vec![1.01, 1.0, 0.99],
            t_total: 12.8 * tau,
        };
        // printed coupling 2pi x 2.13 kHz carries a half-ulp of rounding that
        // propagates into every derived cell; tolerances below account for it
        let k1 = tau * 2130.0;
        let ion = map_to_ion(&ul, &[k1, tau * 1430.0, tau * 1190.0]).unwrap();
        assert_abs_diff_eq!(ion[0].t_ion_s * 1e3, 0.60, epsilon = 0.005);
        assert_abs_diff_eq!(ion[0].nu_ion / (tau * 1e3), 21.54, epsilon = 0.06);
        assert_abs_diff_eq!(ion[0].delta_ion / (tau * 1e3), 7.11, epsilon = 0.04);
        // defining relation round-trips exactly
        for (m, &k_ion) in ion.iter().zip(&[k1, tau * 1430.0, tau * 1190.0]) {
            assert_abs_diff_eq!(k_ion * m.t_ion_s / ul.t_total, 0.1, epsilon = 1e-12);
        }
        // the delta split satisfies the sum constraint
        let sum: f64 = ion.iter().map(|m| m.delta_ion * m.t_ion_s).sum();
        assert_abs_diff_eq!(sum, ul.delta * ul.t_total, epsilon = 1e-10);
    }

    #[test]
    fn ion_mapping_single_mode_and_errors() {
        let ul = UnitlessParams {
            epsilon: 1.0,
            delta: 0.3,
            kappas: vec![0.3],
            nus: vec![1.04],
            t_total: 12.0 * 2.0 * std::f64::consts::PI,
        };
        let ion = map_to_ion(&ul, &[2.0 * std::f64::consts::PI * 8000.0]).unwrap();
        // one-term sum: delta_ion = delta_ul t_ul / t_ion
        assert_abs_diff_eq!(ion[0].delta_ion * ion[0].t_ion_s, ul.delta * ul.t_total, epsilon = 1e-10);
        assert!(map_to_ion(&ul, &[]).is_err());
        assert!(map_to_ion(&ul, &[0.0]).is_err());
    }

    #[test]
    fn spectral_density_eval_dispatch() {
        let sd = SpectralDensity::LorentzianSum {
            peaks: vec![LorentzianPeak { kappa: 0.1, gamma: 0.1, nu: 1.0 }],
        };
        assert_abs_diff_eq!(sd.eval(1.0), 0.1998751, epsilon = 1e-7);
        let sd = SpectralDensity::Leggett { a: 0.1, s: 1.0, omega_c: 10.0 };
        assert_abs_diff_eq!(sd.eval(10.0), leggett_density(0.1, 1.0, 10.0, 10.0), epsilon = 1e-16);
    }

    #[test]
    fn thermal_state_from_beta_matches_occupation() {
        // glue check across modules: thermal_state(nbar_of(beta, nu)) is the
        // Gibbs state of nu b†b at that beta
        let beta = 3.36;
        let nu = 1.0;
        let nbar = nbar_of(beta, nu).unwrap();
        let rho = thermal_state(nbar, 12).unwrap();
        let mut gibbs = Operator::zeros(12, 12);
        let z: f64 = (0..12).map(|n| (-beta * nu * n as f64).exp()).sum();
        for n in 0..12 {
            gibbs[(n, n)] = C64::new((-beta * nu * n as f64).exp() / z, 0.0);
        }
        let gibbs = crate::hilbert::DensityMatrix::try_new(gibbs).unwrap();
        assert!(fidelity(&rho, &gibbs).unwrap() > 1.0 - 1e-12);
    }
}
