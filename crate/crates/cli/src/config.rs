//! Run configuration: a flat `section.key = value` file plus flag overrides.
//!
//! Lines starting with `#` and blank lines are ignored. Values may be quoted.
//! Every key has a default matching the reference rotating-trap experiment
//! (half-widths 6, beta 100, Omega 1.2, anisotropic harmonic trap 0.9/1.2,
//! vortex initial profile), except the mesh size which defaults to a quick
//! desk-scale value.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rgpe_core::linalg::{PrecondKind, SolveOptions};
use rgpe_core::solver::{StepMode, StepPolicy, StopCriteria};
use rgpe_core::{ModelParams, Potential};

use crate::error::CliError;

/// Mesh size used when neither the file nor a flag sets one.
pub const DEFAULT_N: usize = 128;
/// Default mesh size of the `check` command.
pub const CHECK_DEFAULT_N: usize = 16;
/// Largest mesh size accepted without `mesh.allow_large`.
pub const LARGE_MESH_THRESHOLD: usize = 128;

/// Keys accepted in configuration files, with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("mesh.lx", "half-width of the domain in x"),
    ("mesh.ly", "half-width of the domain in y"),
    ("mesh.n", "subdivisions per side"),
    ("mesh.allow_large", "permit n above 128"),
    ("model.beta", "interaction strength"),
    ("model.omega", "rotation speed"),
    ("model.potential", "harmonic(ax, ay) | zero"),
    ("model.trap_margin_k", "margin K of the trapping check"),
    ("model.strict", "fail instead of warn when the trapping check fails"),
    ("initial.profile", "vortex | gaussian"),
    ("initial.state", "state file used as initial guess"),
    ("policy.kind", "adaptive | fixed"),
    ("policy.tau", "step size of the fixed policy"),
    ("policy.bracket_lo", "lower end of the adaptive step bracket"),
    ("policy.bracket_hi", "upper end of the adaptive step bracket"),
    ("policy.scalar_tol", "tolerance of the scalar minimization"),
    ("stop.energy_tol", "energy decrement tolerance"),
    ("stop.residual_tol", "eigen-residual tolerance"),
    ("stop.max_iters", "iteration cap"),
    ("stop.reference_tol", "stop once the energy error drops below this"),
    ("reference.state", "state file of the reference ground state"),
    ("reference.energy", "reference energy, if no state file is given"),
    ("linear.tol", "relative tolerance of inner solves"),
    ("linear.max_iter", "iteration cap of inner solves"),
    ("linear.precond", "jacobi | none"),
    ("outputs.dir", "output directory"),
    ("outputs.retain_states", "keep every iterate in memory"),
    ("outputs.emit_rates", "write rates.csv after solve"),
    ("outputs.emit_spectral", "write a spectral report after solve"),
    ("outputs.svg", "write SVG line plots"),
    ("run.seed", "seed of every random choice"),
    ("run.threads", "worker threads for assembly and mat-vecs"),
    ("spectral.k_a_u", "number of A_u eigenvalues"),
    ("spectral.k_hessian", "number of Hessian eigenvalues"),
    ("spectral.k_mu", "number of weighted eigenvalues"),
    ("spectral.coercivity_samples", "random tangent vectors of the coercivity probe"),
    ("spectral.residual_gate", "largest residual accepted by the spectrum command"),
    ("rates.floor", "error level below which rates are not recorded"),
    ("rates.tail_fraction", "fraction of the series averaged as the tail rate"),
    ("check.steps", "steps of the invariant battery"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Profile(String),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub lx: f64,
    pub ly: f64,
    pub n: Option<usize>,
    pub allow_large: bool,
    pub beta: f64,
    pub omega: f64,
    pub potential: String,
    pub trap_margin_k: f64,
    pub strict: bool,
    pub initial: InitialState,
    pub fixed_tau: Option<f64>,
    pub bracket: (f64, f64),
    pub scalar_tol: f64,
    pub stop: StopCriteria,
    pub reference_state: Option<PathBuf>,
    pub reference_energy: Option<f64>,
    pub linear: SolveOptions,
    pub precond: PrecondKind,
    pub out_dir: PathBuf,
    pub retain_states: bool,
    pub emit_rates: bool,
    pub emit_spectral: bool,
    pub svg: bool,
    pub seed: u64,
    pub threads: Option<usize>,
    pub k_a_u: usize,
    pub k_hessian: usize,
    pub k_mu: usize,
    pub coercivity_samples: usize,
    pub residual_gate: f64,
    pub rates_floor: f64,
    pub tail_fraction: f64,
    pub check_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reference = ModelParams::rotating_reference();
        Self {
            lx: 6.0,
            ly: 6.0,
            n: None,
            allow_large: false,
            beta: reference.beta,
            omega: reference.omega,
            potential: "harmonic(0.9, 1.2)".into(),
            trap_margin_k: ModelParams::DEFAULT_K,
            strict: false,
            initial: InitialState::Profile("vortex".into()),
            fixed_tau: None,
            bracket: StepPolicy::DEFAULT_BRACKET,
            scalar_tol: 1e-10,
            stop: StopCriteria::default(),
            reference_state: None,
            reference_energy: None,
            linear: SolveOptions::default(),
            precond: PrecondKind::Jacobi,
            out_dir: PathBuf::from("out"),
            retain_states: false,
            emit_rates: false,
            emit_spectral: false,
            svg: false,
            seed: 0,
            threads: None,
            k_a_u: 20,
            k_hessian: 6,
            k_mu: 5,
            coercivity_samples: 50,
            residual_gate: 1e-6,
            rates_floor: 1e-10,
            tail_fraction: 0.2,
            check_steps: 20,
        }
    }
}

/// Command line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub policy: Option<String>,
    pub mesh_n: Option<usize>,
    pub max_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub retain_states: bool,
    pub strict_admissibility: bool,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub svg: bool,
    pub large_mesh: bool,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .map_err(|_| config_err(format!("{key}: expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.parse::<usize>()
        .map_err(|_| config_err(format!("{key}: expected a non-negative integer, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(config_err(format!("{key}: expected true or false, got `{v}`"))),
    }
}

/// Splits a file into `key -> value` pairs, rejecting malformed lines,
/// duplicates and unknown keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(config_err(format!(
                "line {}: expected `section.key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        let mut value = v.trim();
        if let Some(stripped) = value.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
            value = stripped;
        }
        if !KEYS.iter().any(|(name, _)| *name == key) {
            return Err(config_err(format!(
                "line {}: unknown key `{key}`; run `rgpe keys` for the list",
                lineno + 1
            )));
        }
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(config_err(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut c = Self::default();
        let mut kind: Option<String> = None;
        for (key, v) in pairs {
            let v = v.as_str();
            match key.as_str() {
                "mesh.lx" => c.lx = parse_f64(key, v)?,
                "mesh.ly" => c.ly = parse_f64(key, v)?,
                "mesh.n" => c.n = Some(parse_usize(key, v)?),
                "mesh.allow_large" => c.allow_large = parse_bool(key, v)?,
                "model.beta" => c.beta = parse_f64(key, v)?,
                "model.omega" => c.omega = parse_f64(key, v)?,
                "model.potential" => c.potential = v.to_string(),
                "model.trap_margin_k" => c.trap_margin_k = parse_f64(key, v)?,
                "model.strict" => c.strict = parse_bool(key, v)?,
                "initial.profile" => c.initial = InitialState::Profile(v.to_string()),
                "initial.state" => c.initial = InitialState::File(PathBuf::from(v)),
                "policy.kind" => kind = Some(v.to_string()),
                "policy.tau" => c.fixed_tau = Some(parse_f64(key, v)?),
                "policy.bracket_lo" => c.bracket.0 = parse_f64(key, v)?,
                "policy.bracket_hi" => c.bracket.1 = parse_f64(key, v)?,
                "policy.scalar_tol" => c.scalar_tol = parse_f64(key, v)?,
                "stop.energy_tol" => c.stop.energy_tol = parse_f64(key, v)?,
                "stop.residual_tol" => c.stop.residual_tol = parse_f64(key, v)?,
                "stop.max_iters" => c.stop.max_iters = parse_usize(key, v)?,
                "stop.reference_tol" => c.stop.reference_tol = parse_f64(key, v)?,
                "reference.state" => c.reference_state = Some(PathBuf::from(v)),
                "reference.energy" => c.reference_energy = Some(parse_f64(key, v)?),
                "linear.tol" => c.linear.tol = parse_f64(key, v)?,
                "linear.max_iter" => c.linear.max_iter = parse_usize(key, v)?,
                "linear.precond" => {
                    c.precond = PrecondKind::parse(v)
                        .ok_or_else(|| config_err(format!("linear.precond: unknown preconditioner `{v}` (jacobi | none)")))?
                }
                "outputs.dir" => c.out_dir = PathBuf::from(v),
                "outputs.retain_states" => c.retain_states = parse_bool(key, v)?,
                "outputs.emit_rates" => c.emit_rates = parse_bool(key, v)?,
                "outputs.emit_spectral" => c.emit_spectral = parse_bool(key, v)?,
                "outputs.svg" => c.svg = parse_bool(key, v)?,
                "run.seed" => c.seed = parse_usize(key, v)? as u64,
                "run.threads" => c.threads = Some(parse_usize(key, v)?),
                "spectral.k_a_u" => c.k_a_u = parse_usize(key, v)?,
                "spectral.k_hessian" => c.k_hessian = parse_usize(key, v)?,
                "spectral.k_mu" => c.k_mu = parse_usize(key, v)?,
                "spectral.coercivity_samples" => c.coercivity_samples = parse_usize(key, v)?,
                "spectral.residual_gate" => c.residual_gate = parse_f64(key, v)?,
                "rates.floor" => c.rates_floor = parse_f64(key, v)?,
                "rates.tail_fraction" => c.tail_fraction = parse_f64(key, v)?,
                "check.steps" => c.check_steps = parse_usize(key, v)?,
                _ => unreachable!("keys are validated by parse_pairs"),
            }
        }
        c.apply_policy_kind(kind.as_deref())?;
        Ok(c)
    }

    fn apply_policy_kind(&mut self, kind: Option<&str>) -> Result<(), CliError> {
        match kind {
            None => {}
            Some("adaptive") => {
                if self.fixed_tau.is_some() {
                    return Err(config_err("policy.tau is set but policy.kind = adaptive; drop one of them"));
                }
            }
            Some("fixed") => {
                if self.fixed_tau.is_none() {
                    self.fixed_tau = Some(1.0);
                }
            }
            Some(other) => {
                return Err(config_err(format!("policy.kind: expected adaptive or fixed, got `{other}`")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_pairs(&parse_pairs(&text)?)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(p) = &o.policy {
            match p.as_str() {
                "adaptive" => {
                    if o.tau.is_some() {
                        return Err(config_err("--tau conflicts with --policy adaptive"));
                    }
                    self.fixed_tau = None;
                }
                "fixed" => {
                    if self.fixed_tau.is_none() && o.tau.is_none() {
                        self.fixed_tau = Some(1.0);
                    }
                }
                other => return Err(config_err(format!("--policy: expected adaptive or fixed, got `{other}`"))),
            }
        }
        if let Some(t) = o.tau {
            self.fixed_tau = Some(t);
        }
        if let Some(n) = o.mesh_n {
            self.n = Some(n);
        }
        if let Some(m) = o.max_iters {
            self.stop.max_iters = m;
        }
        if let Some(d) = &o.out {
            self.out_dir = d.clone();
        }
        self.retain_states |= o.retain_states;
        self.strict |= o.strict_admissibility;
        self.svg |= o.svg;
        self.allow_large |= o.large_mesh;
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        Ok(())
    }

    /// Mesh size with the command-specific default, after the size gate.
    pub fn mesh_n(&self, default: usize) -> Result<usize, CliError> {
        let n = self.n.unwrap_or(default);
        if n < 2 {
            return Err(config_err(format!("mesh.n must be at least 2, got {n}")));
        }
        if n > LARGE_MESH_THRESHOLD && !self.allow_large {
            return Err(config_err(format!(
                "mesh.n = {n} exceeds {LARGE_MESH_THRESHOLD}; pass --large-mesh or set mesh.allow_large = true"
            )));
        }
        Ok(n)
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        parse_potential(&self.potential)
    }

    pub fn model(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams {
            beta: self.beta,
            omega: self.omega,
            potential: self.potential()?,
            trap_margin_k: Some(self.trap_margin_k),
            strict: self.strict,
        })
    }

    pub fn policy(&self) -> StepPolicy {
        let mut p = StepPolicy::adaptive();
        if let Some(t) = self.fixed_tau {
            p.mode = StepMode::Fixed(t);
        }
        p.bracket = self.bracket;
        p.scalar_min_tol = self.scalar_tol;
        p
    }

    /// Positivity and range checks that do not need the mesh.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("mesh.lx", self.lx),
            ("mesh.ly", self.ly),
            ("stop.energy_tol", self.stop.energy_tol),
            ("stop.residual_tol", self.stop.residual_tol),
            ("stop.reference_tol", self.stop.reference_tol),
            ("linear.tol", self.linear.tol),
            ("spectral.residual_gate", self.residual_gate),
            ("rates.floor", self.rates_floor),
            ("policy.scalar_tol", self.scalar_tol),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(config_err(format!(
                "rates.tail_fraction must lie in (0, 1], got {}",
                self.tail_fraction
            )));
        }
        if self.threads == Some(0) {
            return Err(config_err("run.threads must be at least 1"));
        }
        self.potential()?;
        self.policy().validate()?;
        Ok(())
    }
}

/// `harmonic(ax, ay)` or `zero`. Expression potentials are not supported.
pub fn parse_potential(spec: &str) -> Result<Potential, CliError> {
    let s = spec.trim();
    if s == "zero" {
        return Ok(Potential::Zero);
    }
    if let Some(args) = s.strip_prefix("harmonic(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(config_err(format!("model.potential: harmonic takes two arguments, got `{s}`")));
        }
        let ax = parse_f64("model.potential", parts[0])?;
        let ay = parse_f64("model.potential", parts[1])?;
        return Ok(Potential::Harmonic { ax, ay });
    }
    if s.starts_with("expr") {
        return Err(config_err(
            "model.potential: expression potentials are not implemented; use harmonic(ax, ay) or zero",
        ));
    }
    Err(config_err(format!(
        "model.potential: unknown potential `{s}` (harmonic(ax, ay) | zero)"
    )))
}
