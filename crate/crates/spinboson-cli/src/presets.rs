//! Built-in scenarios.  Each preset is one or more complete config files;
//! `simulate --preset NAME` runs every item and writes one CSV/JSON pair per
//! label.  Multi-mode spectral-density surrogates carry fitted peak
//! parameters frozen from `fit-spectral` runs (seed 11, band-averaged
//! spectral-density objective) so the presets stay deterministic.

pub struct PresetItem {
    pub label: String,
    pub text: String,
}

pub struct Preset {
    pub name: &'static str,
    pub about: &'static str,
    pub items: Vec<PresetItem>,
}

/// 12 periods of the bare exchange splitting, 2 pi * 12.
const T_EXCHANGE: f64 = 75.39822368615503;
/// 12.8 periods, the three-mode interferometry window, 2 pi * 12.8.
const T_THREE_MODE: f64 = 80.4247719318987;
/// The assisted-transfer window in seconds: 3.6 / (30 c) with the exchange
/// splitting pinned at 30 cm^-1.
const T_VAET_S: f64 = 4.0027691423778245e-12;

fn item(label: &str, text: String) -> PresetItem {
    PresetItem { label: label.to_string(), text }
}

/// One oscillator, linear exchange, everything else defaulted.
fn single_mode(
    epsilon: f64,
    nu: f64,
    kappa: f64,
    gamma: f64,
    nbar: f64,
    fock_dim: usize,
    dissipation: &str,
    t_max: f64,
) -> String {
    format!(
        "[spin]\n\
         epsilon = {epsilon}\n\
         delta = 1\n\
         \n\
         [mode.1]\n\
         nu = {nu}\n\
         kappa = {kappa}\n\
         gamma = {gamma}\n\
         nbar = {nbar}\n\
         fock_dim = {fock_dim}\n\
         \n\
         [run]\n\
         t_max = {t_max}\n\
         samples = 200\n\
         method = lindblad\n\
         dissipation = {dissipation}\n"
    )
}

fn fig2a() -> Preset {
    let items = [(0.0, 15, "nbar0"), (0.5, 25, "nbar0.5"), (1.0, 30, "nbar1"), (2.0, 35, "nbar2")]
        .map(|(nbar, fock, label)| {
            item(label, single_mode(0.0, 1.0, 0.1, 0.0, nbar, fock, "none", T_EXCHANGE))
        });
    Preset {
        name: "fig2a",
        about: "coherent donor-acceptor exchange at increasing thermal occupation",
        items: items.into(),
    }
}

fn fig2b() -> Preset {
    let items = [0.0, 0.1, 0.2, 0.3, 0.4].map(|gamma| {
        item(&format!("g{gamma}"), single_mode(0.0, 1.0, 0.1, gamma, 0.0, 15, "dephased", T_EXCHANGE))
    });
    Preset {
        name: "fig2b",
        about: "dephasing-rate ladder from coherent to overdamped transfer",
        items: items.into(),
    }
}

/// Near-resonant vibronic modes driven as a randomized pulse ensemble.  The
/// kick train implies nbar = 5 (rabi * tau / 2)^2 = 0.1 per mode.
fn fig3(n_modes: usize) -> Preset {
    let nus = [1.01, 0.99, 0.97];
    let mut text = String::from("[spin]\nepsilon = 0\ndelta = 1\n");
    for (l, nu) in nus.iter().take(n_modes).enumerate() {
        text += &format!(
            "\n[mode.{}]\nnu = {nu}\nkappa = 0.1\ngamma = 0.1\nnbar = 0.1\nfock_dim = 8\n",
            l + 1
        );
    }
    text += &format!(
        "\n[run]\n\
         t_max = {T_THREE_MODE}\n\
         samples = 161\n\
         method = pulse\n\
         dissipation = dephased\n\
         trajectories = 20\n\
         trotter_steps = 160\n\
         seed = 2401\n\
         \n\
         [prep]\n\
         n_kicks = 5\n\
         kick_duration = 0.2\n\
         rabi = 1.414213562373095\n"
    );
    let (name, about): (&'static str, &'static str) = if n_modes == 2 {
        ("fig3-2mode", "two near-resonant vibronic modes, randomized-pulse ensemble")
    } else {
        ("fig3-3mode", "three near-resonant vibronic modes, randomized-pulse ensemble")
    };
    Preset { name, about, items: vec![item("ensemble", text)] }
}

/// Two fitted peaks standing in for a continuous spectral density
/// A omega^s exp(-omega/10) on the band [0.9, 1.1].
fn fig4(name: &'static str, about: &'static str, peaks: [(f64, f64); 2]) -> Preset {
    let mut text = String::from("[spin]\nepsilon = 0\ndelta = 1\n");
    for (l, (kappa, nu)) in peaks.iter().enumerate() {
        text += &format!(
            "\n[mode.{}]\nnu = {nu}\nkappa = {kappa}\ngamma = 0.4\nnbar = 0\nfock_dim = 10\n",
            l + 1
        );
    }
    text += &format!(
        "\n[run]\nt_max = {T_EXCHANGE}\nsamples = 200\nmethod = lindblad\ndissipation = dephased\n"
    );
    Preset { name, about, items: vec![item("surrogate", text)] }
}

/// Energy-gap units: the exchange splitting is 30 cm^-1, frequencies are
/// wavenumbers, t_max is seconds.
fn vaet_mode(nu_cm: f64, kappa_cm: f64, gamma_cm: f64, nbar: f64, fock: usize, dissipation: &str) -> String {
    format!(
        "[spin]\n\
         epsilon = 100\n\
         delta = 30\n\
         \n\
         [mode.1]\n\
         nu = {nu_cm}\n\
         kappa = {kappa_cm}\n\
         gamma = {gamma_cm}\n\
         nbar = {nbar}\n\
         fock_dim = {fock}\n\
         \n\
         [run]\n\
         t_max = {T_VAET_S}\n\
         samples = 200\n\
         method = lindblad\n\
         dissipation = {dissipation}\n\
         \n\
         [units]\n\
         reference_delta_cm = 30\n"
    )
}

fn fig5a() -> Preset {
    Preset {
        name: "fig5a",
        about: "vibrationally assisted transfer on and off the energy-gap resonance",
        items: vec![
            item("resonant", vaet_mode(104.0, 30.0, 0.0, 0.0, 20, "none")),
            item("detuned", vaet_mode(90.0, 30.0, 0.0, 0.0, 20, "none")),
        ],
    }
}

fn fig5b() -> Preset {
    Preset {
        name: "fig5b",
        about: "vibrationally assisted transfer, cold vs hot resonant mode",
        items: vec![
            item("cold", vaet_mode(104.0, 30.0, 0.0, 0.0, 20, "none")),
            item("hot", vaet_mode(104.0, 30.0, 0.0, 2.0, 40, "none")),
        ],
    }
}

fn fig5c() -> Preset {
    let mut items = vec![item("k0", vaet_mode(104.0, 0.0, 10.0, 0.0, 20, "dephased"))];
    for kappa in [10.0, 20.0] {
        for kind in ["dephased", "damped"] {
            items.push(item(
                &format!("k{kappa}-{kind}"),
                vaet_mode(104.0, kappa, 10.0, 0.0, 20, kind),
            ));
        }
    }
    Preset {
        name: "fig5c",
        about: "assisted transfer under growing coupling, dephased vs damped",
        items,
    }
}

fn supp_s6() -> Preset {
    // nbar = 1/(e^3.36 - 1), the calibration point of the correlation checks.
    let text = single_mode(0.0, 1.0, 0.1, 0.4, 0.035985214695364046, 15, "dephased", 25.0);
    Preset {
        name: "suppS6",
        about: "single dephased mode for two-point correlation checks",
        items: vec![item("mode", text)],
    }
}

fn supp_s7a() -> Preset {
    // 9 kicks at rabi * tau / 2 = sqrt(2)/3 prepare nbar = 2 on average.
    let text = format!(
        "[spin]\n\
         epsilon = 0\n\
         delta = 1\n\
         \n\
         [mode.1]\n\
         nu = 1\n\
         kappa = 0.1\n\
         gamma = 0\n\
         nbar = 2\n\
         fock_dim = 35\n\
         \n\
         [run]\n\
         t_max = {T_EXCHANGE}\n\
         samples = 121\n\
         method = trajectories\n\
         dissipation = dephased\n\
         trajectories = 100\n\
         trotter_steps = 120\n\
         seed = 5501\n\
         \n\
         [prep]\n\
         n_kicks = 9\n\
         kick_duration = 0.5\n\
         rabi = 1.8856180831641267\n"
    );
    Preset {
        name: "suppS7a",
        about: "randomized thermal preparation of a hot mode, free evolution",
        items: vec![item("ensemble", text)],
    }
}

fn supp_s7b() -> Preset {
    let items = [0.25, 0.4].map(|gamma| {
        item(
            &format!("g{gamma}"),
            format!(
                "[spin]\n\
                 epsilon = 0\n\
                 delta = 1\n\
                 \n\
                 [mode.1]\n\
                 nu = 1\n\
                 kappa = 0.1\n\
                 gamma = {gamma}\n\
                 nbar = 0\n\
                 fock_dim = 15\n\
                 \n\
                 [run]\n\
                 t_max = {T_EXCHANGE}\n\
                 samples = 161\n\
                 method = trajectories\n\
                 dissipation = dephased\n\
                 trajectories = 400\n\
                 trotter_steps = 160\n\
                 seed = 7702\n"
            ),
        )
    });
    Preset {
        name: "suppS7b",
        about: "random-detuning ensembles for dephasing-rate refitting",
        items: items.into(),
    }
}

/// Three fitted peaks per target; amplitudes chosen so every target has the
/// same on-resonance weight J(1) = 1.57.
fn supp_s8() -> Preset {
    let fits: [(&str, [(f64, f64); 3]); 3] = [
        ("s0.3", [(0.448425, 0.588595), (0.483796, 1.001737), (0.493799, 1.416112)]),
        ("s1", [(0.367943, 0.614685), (0.484236, 1.030942), (0.562677, 1.421785)]),
        ("s3", [(0.291299, 0.839080), (0.527770, 1.181852), (0.790513, 1.470822)]),
    ];
    let items = fits
        .into_iter()
        .map(|(label, peaks)| {
            let mut text = String::from("[spin]\nepsilon = 0\ndelta = 1\n");
            for (l, (kappa, nu)) in peaks.iter().enumerate() {
                text += &format!(
                    "\n[mode.{}]\nnu = {nu}\nkappa = {kappa}\ngamma = 0.27\nnbar = 0\nfock_dim = 12\n",
                    l + 1
                );
            }
            text += &format!(
                "\n[run]\n\
                 t_max = {T_EXCHANGE}\n\
                 samples = 257\n\
                 method = pulse\n\
                 dissipation = dephased\n\
                 trajectories = 256\n\
                 trotter_steps = 256\n\
                 seed = 8803\n"
            );
            item(label, text)
        })
        .collect();
    Preset {
        name: "suppS8",
        about: "three-peak surrogates of sharp, flat, and steep spectral densities",
        items,
    }
}

pub fn all() -> Vec<Preset> {
    vec![
        fig2a(),
        fig2b(),
        fig3(2),
        fig3(3),
        fig4(
            "fig4-s0.5",
            "two-peak surrogate of a sub-Ohmic environment",
            [(0.192865, 0.878681), (0.210958, 1.134627)],
        ),
        fig4(
            "fig4-s1.0",
            "two-peak surrogate of an Ohmic environment",
            [(0.101648, 0.887102), (0.125248, 1.141695)],
        ),
        fig4(
            "fig4-s2.0",
            "two-peak surrogate of a super-Ohmic environment",
            [(0.027781, 0.904217), (0.043932, 1.155844)],
        ),
        fig5a(),
        fig5b(),
        fig5c(),
        supp_s6(),
        supp_s7a(),
        supp_s7b(),
        supp_s8(),
    ]
}

/// Look a preset up by name.  `vaet-resonance` is an alias for the
/// on/off-resonance transfer pair.
pub fn find(name: &str) -> Option<Preset> {
    let canonical = if name == "vaet-resonance" { "fig5a" } else { name };
    all().into_iter().find(|p| p.name == canonical)
}
