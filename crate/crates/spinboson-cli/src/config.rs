//! Scenario files: a small INI dialect, strict about what it accepts.
//!
//! A scenario is `[spin]`, one `[mode.k]` per oscillator (k = 1..K,
//! consecutive), `[run]`, and optionally `[prep]` and `[units]`.  Keys are
//! `name = value`, `#` starts a comment, unknown keys and sections are
//! errors with line numbers.  `emit` writes a file that parses back to an
//! equal config, defaults filled in.

use serde::Serialize;
use spinboson::models::DissipationKind;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line: Some(line), message: message.into() }
}

fn nowhere(message: impl Into<String>) -> ConfigError {
    ConfigError { line: None, message: message.into() }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lindblad,
    Trajectories,
    Tcl2,
    Pulse,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lindblad => "lindblad",
            Method::Trajectories => "trajectories",
            Method::Tcl2 => "tcl2",
            Method::Pulse => "pulse",
        }
    }

    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "lindblad" => Ok(Method::Lindblad),
            "trajectories" => Ok(Method::Trajectories),
            "tcl2" => Ok(Method::Tcl2),
            "pulse" => Ok(Method::Pulse),
            other => Err(at(
                line,
                format!("unknown method \"{other}\" (lindblad, trajectories, tcl2, pulse)"),
            )),
        }
    }

    /// Trial-sampling methods: require a seed, a trial count, and a step grid.
    pub fn is_sampled(self) -> bool {
        matches!(self, Method::Trajectories | Method::Pulse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dissipation {
    None,
    Dephased,
    Damped,
}

impl Dissipation {
    pub fn as_str(self) -> &'static str {
        match self {
            Dissipation::None => "none",
            Dissipation::Dephased => "dephased",
            Dissipation::Damped => "damped",
        }
    }

    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "none" => Ok(Dissipation::None),
            "dephased" => Ok(Dissipation::Dephased),
            "damped" => Ok(Dissipation::Damped),
            other => Err(at(
                line,
                format!("unknown dissipation \"{other}\" (none, dephased, damped)"),
            )),
        }
    }

    pub fn kind(self) -> DissipationKind {
        match self {
            Dissipation::None => DissipationKind::None,
            Dissipation::Dephased => DissipationKind::Dephased,
            Dissipation::Damped => DissipationKind::Damped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinSection {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeSection {
    pub nu: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub nbar: f64,
    pub fock_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSection {
    pub t_max: f64,
    pub samples: usize,
    pub method: Method,
    pub dissipation: Dissipation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trotter_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrepSection {
    pub n_kicks: usize,
    pub kick_duration: f64,
    pub rabi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitsSection {
    pub reference_delta_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub spin: SpinSection,
    pub modes: Vec<ModeSection>,
    pub run: RunSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prep: Option<PrepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<UnitsSection>,
}

pub const DEFAULT_FOCK_DIM: usize = 15;
pub const DEFAULT_SAMPLES: usize = 200;

/// One section's raw `key = (value, line)` pairs, plus the header line.
struct RawSection {
    header_line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

impl RawSection {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    /// After all known keys are taken, anything left is a typo.
    fn reject_leftovers(&self, name: &str) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.iter().next() {
            return Err(at(*line, format!("unknown key \"{key}\" in [{name}]")));
        }
        Ok(())
    }
}

fn parse_f64(name: &str, raw: (String, usize)) -> Result<f64> {
    let (s, line) = raw;
    s.parse::<f64>()
        .map_err(|_| at(line, format!("expected a number for {name}, got \"{s}\"")))
}

fn parse_usize(name: &str, raw: (String, usize)) -> Result<usize> {
    let (s, line) = raw;
    s.parse::<usize>()
        .map_err(|_| at(line, format!("expected a non-negative integer for {name}, got \"{s}\"")))
}

fn parse_u64(name: &str, raw: (String, usize)) -> Result<u64> {
    let (s, line) = raw;
    s.parse::<u64>()
        .map_err(|_| at(line, format!("expected a non-negative integer for {name}, got \"{s}\"")))
}

fn require(section: &str, key: &str, raw: Option<(String, usize)>, header: usize) -> Result<(String, usize)> {
    raw.ok_or_else(|| at(header, format!("[{section}] is missing required key \"{key}\"")))
}

/// Parse and validate a scenario.  The returned config always has defaults
/// filled in, so `parse(emit(c)) == c`.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut sections: Vec<(String, RawSection)> = Vec::new();
    let mut current: Option<usize> = None;

    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| at(lineno, format!("unterminated section header \"{line}\"")))?
                .trim()
                .to_string();
            if sections.iter().any(|(n, _)| *n == name) {
                return Err(at(lineno, format!("duplicate section [{name}]")));
            }
            current = Some(sections.len());
            sections.push((name, RawSection { header_line: lineno, entries: BTreeMap::new() }));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(lineno, format!("expected \"key = value\", got \"{line}\"")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(at(lineno, format!("expected \"key = value\", got \"{line}\"")));
        }
        let idx = current.ok_or_else(|| at(lineno, format!("key \"{key}\" before any section")))?;
        let section = &mut sections[idx].1;
        if section.entries.insert(key.clone(), (value, lineno)).is_some() {
            return Err(at(lineno, format!("duplicate key \"{key}\"")));
        }
    }

    let mut spin: Option<SpinSection> = None;
    let mut run: Option<RunSection> = None;
    let mut prep: Option<PrepSection> = None;
    let mut units: Option<UnitsSection> = None;
    let mut modes: Vec<(usize, ModeSection)> = Vec::new();

    for (name, mut sec) in sections {
        let header = sec.header_line;
        match name.as_str() {
            "spin" => {
                let epsilon = sec.take("epsilon");
                let delta = sec.take("delta");
                sec.reject_leftovers("spin")?;
                spin = Some(SpinSection {
                    epsilon: parse_f64("epsilon", require("spin", "epsilon", epsilon, header)?)?,
                    delta: parse_f64("delta", require("spin", "delta", delta, header)?)?,
                });
            }
            "run" => {
                let t_max_raw = sec.take("t_max");
                let samples_raw = sec.take("samples");
                let method_raw = sec.take("method");
                let dissipation_raw = sec.take("dissipation");
                let trajectories_raw = sec.take("trajectories");
                let trotter_raw = sec.take("trotter_steps");
                let seed_raw = sec.take("seed");
                sec.reject_leftovers("run")?;
                let (m, mline) = require("run", "method", method_raw, header)?;
                run = Some(RunSection {
                    t_max: parse_f64("t_max", require("run", "t_max", t_max_raw, header)?)?,
                    samples: match samples_raw {
                        Some(raw) => parse_usize("samples", raw)?,
                        None => DEFAULT_SAMPLES,
                    },
                    method: Method::parse(&m, mline)?,
                    dissipation: match dissipation_raw {
                        Some((d, dline)) => Dissipation::parse(&d, dline)?,
                        None => Dissipation::Dephased,
                    },
                    trajectories: trajectories_raw.map(|r| parse_usize("trajectories", r)).transpose()?,
                    trotter_steps: trotter_raw.map(|r| parse_usize("trotter_steps", r)).transpose()?,
                    seed: seed_raw.map(|r| parse_u64("seed", r)).transpose()?,
                });
            }
            "prep" => {
                let n_kicks = sec.take("n_kicks");
                let kick_duration = sec.take("kick_duration");
                let rabi = sec.take("rabi");
                sec.reject_leftovers("prep")?;
                prep = Some(PrepSection {
                    n_kicks: parse_usize("n_kicks", require("prep", "n_kicks", n_kicks, header)?)?,
                    kick_duration: parse_f64(
                        "kick_duration",
                        require("prep", "kick_duration", kick_duration, header)?,
                    )?,
                    rabi: parse_f64("rabi", require("prep", "rabi", rabi, header)?)?,
                });
            }
            "units" => {
                let reference = sec.take("reference_delta_cm");
                sec.reject_leftovers("units")?;
                units = Some(UnitsSection {
                    reference_delta_cm: parse_f64(
                        "reference_delta_cm",
                        require("units", "reference_delta_cm", reference, header)?,
                    )?,
                });
            }
            other => {
                let k = other
                    .strip_prefix("mode.")
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| at(header, format!("unknown section [{other}]")))?;
                let sect = format!("mode.{k}");
                let nu = sec.take("nu");
                let kappa = sec.take("kappa");
                let gamma = sec.take("gamma");
                let nbar = sec.take("nbar");
                let fock_dim = sec.take("fock_dim");
                sec.reject_leftovers(&sect)?;
                let m = ModeSection {
                    nu: parse_f64("nu", require(&sect, "nu", nu, header)?)?,
                    kappa: parse_f64("kappa", require(&sect, "kappa", kappa, header)?)?,
                    gamma: parse_f64("gamma", require(&sect, "gamma", gamma, header)?)?,
                    nbar: parse_f64("nbar", require(&sect, "nbar", nbar, header)?)?,
                    fock_dim: match fock_dim {
                        Some(raw) => parse_usize("fock_dim", raw)?,
                        None => DEFAULT_FOCK_DIM,
                    },
                };
                if k != modes.len() + 1 {
                    return Err(at(
                        header,
                        format!("mode sections must be numbered consecutively from 1, got [mode.{k}]"),
                    ));
                }
                modes.push((k, m));
            }
        }
    }

    let cfg = ScenarioConfig {
        spin: spin.ok_or_else(|| nowhere("missing [spin] section"))?,
        modes: modes.into_iter().map(|(_, m)| m).collect(),
        run: run.ok_or_else(|| nowhere("missing [run] section"))?,
        prep,
        units,
    };
    validate(&cfg)?;
    Ok(cfg)
}

/// Cross-field invariants that a section-local parse cannot see.
pub fn validate(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.modes.is_empty() {
        return Err(nowhere("at least one [mode.k] section is required"));
    }
    for (l, m) in cfg.modes.iter().enumerate() {
        let sect = format!("mode.{}", l + 1);
        if !(m.nu > 0.0) {
            return Err(nowhere(format!("[{sect}] nu must be > 0, got {}", m.nu)));
        }
        if m.kappa < 0.0 || m.gamma < 0.0 || m.nbar < 0.0 {
            return Err(nowhere(format!("[{sect}] kappa, gamma, nbar must be >= 0")));
        }
        if m.fock_dim < 2 {
            return Err(nowhere(format!("[{sect}] fock_dim must be >= 2, got {}", m.fock_dim)));
        }
    }
    let run = &cfg.run;
    if !(run.t_max > 0.0) {
        return Err(nowhere(format!("[run] t_max must be > 0, got {}", run.t_max)));
    }
    if run.samples < 2 {
        return Err(nowhere(format!("[run] samples must be >= 2, got {}", run.samples)));
    }
    if let Some(u) = &cfg.units {
        if !(u.reference_delta_cm > 0.0) {
            return Err(nowhere(format!(
                "[units] reference_delta_cm must be > 0, got {}",
                u.reference_delta_cm
            )));
        }
    }

    if run.method.is_sampled() {
        let steps = run.trotter_steps.ok_or_else(|| {
            nowhere(format!("method = {} requires [run] trotter_steps", run.method.as_str()))
        })?;
        let trials = run.trajectories.ok_or_else(|| {
            nowhere(format!("method = {} requires [run] trajectories", run.method.as_str()))
        })?;
        if run.seed.is_none() {
            return Err(nowhere(format!("method = {} requires [run] seed", run.method.as_str())));
        }
        if steps < 1 || trials < 1 {
            return Err(nowhere("[run] trotter_steps and trajectories must be >= 1"));
        }
        // One output row per step boundary.
        if run.samples != steps + 1 {
            return Err(nowhere(format!(
                "method = {} samples every step boundary: samples must equal trotter_steps + 1 = {}",
                run.method.as_str(),
                steps + 1
            )));
        }
        if run.dissipation != Dissipation::Dephased {
            return Err(nowhere(format!(
                "method = {} realizes number dephasing; set dissipation = dephased",
                run.method.as_str()
            )));
        }
    } else {
        for key in ["trajectories", "trotter_steps", "seed"] {
            let set = match key {
                "trajectories" => run.trajectories.is_some(),
                "trotter_steps" => run.trotter_steps.is_some(),
                _ => run.seed.is_some(),
            };
            if set {
                return Err(nowhere(format!(
                    "[run] {key} is only meaningful for method = trajectories or pulse"
                )));
            }
        }
    }

    match &cfg.prep {
        Some(p) => {
            if !run.method.is_sampled() {
                return Err(nowhere("[prep] randomized kicks require method = trajectories or pulse"));
            }
            if p.n_kicks < 1 || !(p.kick_duration > 0.0) || !(p.rabi > 0.0) {
                return Err(nowhere("[prep] needs n_kicks >= 1, kick_duration > 0, rabi > 0"));
            }
            // nbar = N' (Omega tau / 2)^2; the declared per-mode nbar must
            // agree with what the kick train actually prepares.
            let step = 0.5 * p.rabi * p.kick_duration;
            let implied = p.n_kicks as f64 * step * step;
            for (l, m) in cfg.modes.iter().enumerate() {
                let tol = 1e-9 * implied.max(1.0);
                if (m.nbar - implied).abs() > tol {
                    return Err(nowhere(format!(
                        "[mode.{}] nbar = {} but [prep] implies nbar = {implied}",
                        l + 1,
                        m.nbar
                    )));
                }
            }
        }
        None => {
            if run.method.is_sampled() {
                if let Some((l, m)) = cfg.modes.iter().enumerate().find(|(_, m)| m.nbar > 0.0) {
                    return Err(nowhere(format!(
                        "[mode.{}] nbar = {} but there is no [prep]: method = {} realizes \
                         thermal occupation through randomized kicks",
                        l + 1,
                        m.nbar,
                        run.method.as_str()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Write a config back out.  Floats go through `Display`, which round-trips
/// f64 exactly, so `parse(emit(c)) == c`.
pub fn emit_config(cfg: &ScenarioConfig) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "[spin]").unwrap();
    writeln!(w, "epsilon = {}", cfg.spin.epsilon).unwrap();
    writeln!(w, "delta = {}", cfg.spin.delta).unwrap();
    for (l, m) in cfg.modes.iter().enumerate() {
        writeln!(w, "\n[mode.{}]", l + 1).unwrap();
        writeln!(w, "nu = {}", m.nu).unwrap();
        writeln!(w, "kappa = {}", m.kappa).unwrap();
        writeln!(w, "gamma = {}", m.gamma).unwrap();
        writeln!(w, "nbar = {}", m.nbar).unwrap();
        writeln!(w, "fock_dim = {}", m.fock_dim).unwrap();
    }
    writeln!(w, "\n[run]").unwrap();
    writeln!(w, "t_max = {}", cfg.run.t_max).unwrap();
    writeln!(w, "samples = {}", cfg.run.samples).unwrap();
    writeln!(w, "method = {}", cfg.run.method.as_str()).unwrap();
    writeln!(w, "dissipation = {}", cfg.run.dissipation.as_str()).unwrap();
    if let Some(n) = cfg.run.trajectories {
        writeln!(w, "trajectories = {n}").unwrap();
    }
    if let Some(n) = cfg.run.trotter_steps {
        writeln!(w, "trotter_steps = {n}").unwrap();
    }
    if let Some(s) = cfg.run.seed {
        writeln!(w, "seed = {s}").unwrap();
    }
    if let Some(p) = &cfg.prep {
        writeln!(w, "\n[prep]").unwrap();
        writeln!(w, "n_kicks = {}", p.n_kicks).unwrap();
        writeln!(w, "kick_duration = {}", p.kick_duration).unwrap();
        writeln!(w, "rabi = {}", p.rabi).unwrap();
    }
    if let Some(u) = &cfg.units {
        writeln!(w, "\n[units]").unwrap();
        writeln!(w, "reference_delta_cm = {}", u.reference_delta_cm).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[spin]
epsilon = 0
delta = 1

[mode.1]
nu = 1
kappa = 0.1
gamma = 0.4
nbar = 0

[run]
t_max = 25
method = lindblad
";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.modes.len(), 1);
        assert_eq!(cfg.modes[0].fock_dim, DEFAULT_FOCK_DIM);
        assert_eq!(cfg.run.samples, DEFAULT_SAMPLES);
        assert_eq!(cfg.run.dissipation, Dissipation::Dephased);
        assert_eq!(cfg.run.method, Method::Lindblad);
        assert!(cfg.prep.is_none() && cfg.units.is_none());
    }

    #[test]
    fn emit_parse_round_trip() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.run.method = Method::Trajectories;
        cfg.run.trajectories = Some(50);
        cfg.run.trotter_steps = Some(160);
        cfg.run.samples = 161;
        cfg.run.seed = Some(7);
        cfg.modes[0].nbar = 0.09999999999999998;
        cfg.prep = Some(PrepSection { n_kicks: 5, kick_duration: 0.2, rabi: 1.414213562373095 });
        cfg.units = Some(UnitsSection { reference_delta_cm: 500.0 });
        validate(&cfg).unwrap();
        let text = emit_config(&cfg);
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let bad = MINIMAL.replace("kappa = 0.1", "kapa = 0.1");
        let err = parse_config(&bad).unwrap_err();
        assert!(err.message.contains("kapa"), "{err}");
        // Typos are caught at their own line, before any missing-key check.
        let kappa_line = bad.lines().position(|l| l.contains("kapa")).unwrap() + 1;
        assert_eq!(err.line, Some(kappa_line));
    }

    #[test]
    fn mode_indices_must_be_consecutive() {
        let bad = MINIMAL.replace("[mode.1]", "[mode.2]");
        let err = parse_config(&bad).unwrap_err();
        assert!(err.message.contains("consecutively"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = MINIMAL.replace("t_max = 25", "t_max = 25  # one period batch");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn sampled_methods_need_seed_steps_and_matching_samples() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.run.method = Method::Pulse;
        assert!(validate(&cfg).is_err());
        cfg.run.trajectories = Some(10);
        cfg.run.trotter_steps = Some(100);
        cfg.run.seed = Some(1);
        cfg.run.samples = 200;
        let err = validate(&cfg).unwrap_err();
        assert!(err.message.contains("trotter_steps + 1"), "{err}");
        cfg.run.samples = 101;
        validate(&cfg).unwrap();
    }

    #[test]
    fn deterministic_methods_reject_sampling_keys() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.run.seed = Some(3);
        let err = validate(&cfg).unwrap_err();
        assert!(err.message.contains("only meaningful"), "{err}");
    }

    #[test]
    fn declared_nbar_must_match_the_kick_train() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.run.method = Method::Trajectories;
        cfg.run.trajectories = Some(10);
        cfg.run.trotter_steps = Some(100);
        cfg.run.samples = 101;
        cfg.run.seed = Some(1);
        cfg.modes[0].nbar = 0.5;
        cfg.prep = Some(PrepSection { n_kicks: 5, kick_duration: 0.2, rabi: 1.414213562373095 });
        let err = validate(&cfg).unwrap_err();
        assert!(err.message.contains("implies nbar"), "{err}");
    }
}
