//! The five experiment pipelines.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgpe_core::checks::{auxiliary_defect, gauge_defect, line_search_defect, step_defects};
use rgpe_core::mesh::{gaussian_profile, vortex_profile};
use rgpe_core::solver::{
    contraction_rates, gp_residual, run, tail_mean, IterationRecord, Method, Reference, RunOptions, StepMode,
    StopCriteria, StopReason, Trace,
};
use rgpe_core::spectral::{hessian_spectrum, spectral_report, weighted_evp, SpectralOptions, SpectralReport};
use rgpe_core::{assemble_base, build_mesh, interpolate, FormSet, Mesh, State};

use crate::config::{InitialState, RunConfig, CHECK_DEFAULT_N, DEFAULT_N, LARGE_MESH_THRESHOLD};
use crate::error::CliError;
use crate::output::{ensure_dir, line_plot_svg, num, opt_num, write_file, Series, Summary, Table};
use crate::statefile::StateFile;

/// Tolerances of the invariant battery.
pub const TOL_IDENTITY: f64 = 1e-11;
pub const TOL_TANGENCY: f64 = 1e-10;
pub const TOL_MASS: f64 = 1e-12;
pub const TOL_PYTHAGORAS: f64 = 1e-12;
pub const TOL_GAUGE: f64 = 1e-9;
pub const TOL_AUXILIARY: f64 = 1e-10;
pub const TOL_LINE_SEARCH: f64 = 1e-11;

/// Threshold on `|E(u^{n+1}) - E(u^n)|` that delimits energy plateaus.
pub const PLATEAU_THRESHOLD: f64 = 1e-6;

pub struct Setup {
    pub mesh: Arc<Mesh>,
    pub forms: FormSet,
    pub u0: State,
}

/// Builds the mesh, assembles the forms and prepares the initial state.
pub fn setup(cfg: &RunConfig, default_n: usize) -> Result<Setup, CliError> {
    cfg.validate()?;
    let n = cfg.mesh_n(default_n)?;
    if n > LARGE_MESH_THRESHOLD {
        eprintln!("warning: mesh n = {n}; runs at this size take minutes to tens of minutes");
    }
    let mesh = Arc::new(build_mesh(cfg.lx, cfg.ly, n)?);
    let mut forms = assemble_base(mesh.clone(), cfg.model()?)?;
    forms.linear = cfg.linear;
    forms.precond = cfg.precond;
    if !forms.admissibility_ok {
        eprintln!(
            "warning: trapping condition fails (margin {:.3e} with K = {}); results may not be meaningful",
            forms.admissibility_margin, cfg.trap_margin_k
        );
    }
    let u0 = match &cfg.initial {
        InitialState::Profile(p) => match p.as_str() {
            "vortex" => interpolate(&mesh, vortex_profile)?,
            "gaussian" => interpolate(&mesh, gaussian_profile)?,
            other => {
                return Err(CliError::Config(format!(
                    "initial.profile: unknown profile `{other}` (vortex | gaussian)"
                )))
            }
        },
        InitialState::File(path) => StateFile::read(path)?.into_state(&mesh, path)?,
    };
    let u0 = forms.normalize(&u0)?;
    Ok(Setup { mesh, forms, u0 })
}

fn load_state(s: &Setup, path: &Path) -> Result<State, CliError> {
    let u = StateFile::read(path)?.into_state(&s.mesh, path)?;
    Ok(s.forms.normalize(&u)?)
}

/// Reference for energy errors plus a provenance note.
fn load_reference(cfg: &RunConfig, s: &Setup) -> Result<Option<(Reference, String)>, CliError> {
    if let Some(path) = &cfg.reference_state {
        let u = load_state(s, path)?;
        let res = gp_residual(&s.forms, &u)?;
        let note = format!(
            "self-hosted reference from {} (this solver, same mesh, residual {:.3e}); not an independent solver",
            path.display(),
            res.res_l2
        );
        return Ok(Some((
            Reference {
                energy: s.forms.energy(&u),
                state: Some(u),
            },
            note,
        )));
    }
    if let Some(e) = cfg.reference_energy {
        return Ok(Some((
            Reference { energy: e, state: None },
            "energy value from configuration".into(),
        )));
    }
    Ok(None)
}

fn policy_name(cfg: &RunConfig) -> String {
    match cfg.policy().mode {
        StepMode::Adaptive => "adaptive".into(),
        StepMode::Fixed(t) => format!("fixed({t})"),
    }
}

fn base_summary(cfg: &RunConfig, s: &Setup) -> Summary {
    let mut m = Summary::default();
    m.add("mesh.lx", cfg.lx);
    m.add("mesh.ly", cfg.ly);
    m.add("mesh.n", s.mesh.subdivisions);
    m.add("mesh.split", s.mesh.split.name());
    m.add("mesh.unknowns", s.mesh.n_dofs());
    m.add("model.beta", cfg.beta);
    m.add("model.omega", cfg.omega);
    m.add("model.potential", &cfg.potential);
    m.add("model.admissible", s.forms.admissibility_ok);
    m.add("model.admissibility_margin", num(s.forms.admissibility_margin));
    m.add("policy", policy_name(cfg));
    m.add("linear.precond", format!("{:?}", cfg.precond).to_lowercase());
    m.add("run.seed", cfg.seed);
    m
}

/// Row `k` describes the step from `u^{k-1}` to `u^k`.
pub fn trace_table(records: &[IterationRecord]) -> Table {
    let mut t = Table::new(&[
        "n",
        "energy",
        "energy_error",
        "residual",
        "tau",
        "gamma",
        "mass_intermediate",
        "identity_gap",
    ]);
    for r in records {
        t.push(vec![
            (r.n + 1).to_string(),
            num(r.energy),
            opt_num(r.energy_error),
            num(r.residual),
            num(r.tau),
            num(r.gamma),
            num(r.mass_intermediate),
            num(r.energy_identity_gap),
        ]);
    }
    t
}

/// Longest stretch of steps with `|dE| < threshold` that is followed by a
/// larger step, as `(first step, length)`.
pub fn plateau(records: &[IterationRecord], threshold: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, r) in records.iter().enumerate() {
        let small = (r.energy - r.energy_prev).abs() < threshold;
        match (small, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let len = i - s;
                if best.is_none_or(|(_, l)| len > l) {
                    best = Some((s + 1, len));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

fn energy_series(records: &[IterationRecord]) -> Vec<(f64, f64)> {
    let e_min = records.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min);
    records
        .iter()
        .map(|r| ((r.n + 1) as f64, r.energy_error.unwrap_or(r.energy - e_min)))
        .collect()
}

fn run_summary(m: &mut Summary, prefix: &str, trace: &Trace, reference_tol: f64) {
    let last = trace.records.last();
    m.add(&format!("{prefix}energy"), last.map_or("".into(), |r| num(r.energy)));
    m.add(&format!("{prefix}lambda"), num(trace.final_lambda));
    m.add(&format!("{prefix}iterations"), trace.records.len());
    m.add(&format!("{prefix}stop_reason"), trace.stop_reason.as_str());
    m.add(&format!("{prefix}residual"), last.map_or("".into(), |r| num(r.residual)));
    m.add(&format!("{prefix}residual_max"), last.map_or("".into(), |r| num(r.residual_max)));
    if last.is_some_and(|r| r.energy_error.is_some()) {
        m.add(
            &format!("{prefix}iterations_to_energy_error"),
            trace
                .iterations_to_energy_error(reference_tol)
                .map_or("not reached".into(), |k| k.to_string()),
        );
        m.add(&format!("{prefix}energy_error_tol"), reference_tol);
    }
}

fn not_converged(trace: &Trace, what: &str) -> Option<CliError> {
    match trace.stop_reason {
        StopReason::TolReached => None,
        reason => Some(CliError::NotConverged(format!(
            "{what} stopped with {} after {} iterations",
            reason.as_str(),
            trace.records.len()
        ))),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let s = setup(cfg, DEFAULT_N)?;
    let reference = load_reference(cfg, &s)?;
    if cfg.emit_rates && !(cfg.retain_states && cfg.reference_state.is_some()) {
        return Err(CliError::Config(
            "outputs.emit_rates needs outputs.retain_states = true and reference.state".into(),
        ));
    }
    let opts = RunOptions {
        method: Method::Adaptive,
        retain_states: cfg.retain_states,
        ..Default::default()
    };
    let trace = run(
        &s.forms,
        &s.u0,
        &cfg.policy(),
        &cfg.stop,
        reference.as_ref().map(|r| &r.0),
        &opts,
    )?;
    ensure_dir(&cfg.out_dir)?;
    write_file(&out_path(cfg, "trace.csv"), &trace_table(&trace.records).render())?;
    StateFile::new(&s.mesh, &trace.final_state).write(&out_path(cfg, "final_state.gpst"))?;

    let mut m = base_summary(cfg, &s);
    m.add(
        "reference",
        reference.as_ref().map_or("none".to_string(), |r| r.1.clone()),
    );
    run_summary(&mut m, "", &trace, cfg.stop.reference_tol);

    if cfg.svg {
        let svg = line_plot_svg(
            "energy error",
            "iteration n",
            if reference.is_some() { "E(u^n) - E_ref" } else { "E(u^n) - min E" },
            &[Series {
                label: "adaptive metric",
                points: energy_series(&trace.records),
            }],
            true,
        );
        write_file(&out_path(cfg, "energy_error.svg"), &svg)?;
    }
    if cfg.emit_rates {
        let (r, _) = reference.as_ref().expect("checked above");
        let u_ref = r.state.as_ref().expect("reference state checked above");
        let states = trace.states.as_deref().unwrap_or(&[]);
        let rates = contraction_rates(&s.forms, states, u_ref, cfg.rates_floor);
        write_file(&out_path(cfg, "rates.csv"), &rates_table(&rates).render())?;
        m.add("rates.tail_mean", opt_num(tail_mean(&rates, cfg.tail_fraction)));
    }
    if cfg.emit_spectral {
        let res = trace.records.last().map_or(f64::INFINITY, |r| r.residual);
        if res <= cfg.residual_gate {
            let rep = spectral_report(&s.forms, &trace.final_state, &spectral_options(cfg))?;
            write_spectral(cfg, &rep)?;
            m.add("spectral.checks_pass", rep.checks.all());
        } else {
            m.add("spectral", format!("skipped, residual {} above gate {}", num(res), cfg.residual_gate));
        }
    }
    m.add("wall_seconds", format!("{:.3}", started.elapsed().as_secs_f64()));
    write_file(&out_path(cfg, "summary.txt"), &m.render())?;
    print!("{}", m.render());
    match not_converged(&trace, "solve") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let s = setup(cfg, DEFAULT_N)?;
    let Some((reference, note)) = load_reference(cfg, &s)? else {
        return Err(CliError::Config(
            "compare needs reference.state or reference.energy; produce a reference with `rgpe solve` and a tight stop.residual_tol".into(),
        ));
    };
    let mut traces = Vec::new();
    for method in [Method::Adaptive, Method::H1] {
        let opts = RunOptions {
            method,
            ..Default::default()
        };
        traces.push(run(&s.forms, &s.u0, &cfg.policy(), &cfg.stop, Some(&reference), &opts)?);
    }
    let (ta, th) = (&traces[0], &traces[1]);
    ensure_dir(&cfg.out_dir)?;
    write_file(&out_path(cfg, "trace_adaptive.csv"), &trace_table(&ta.records).render())?;
    write_file(&out_path(cfg, "trace_h1.csv"), &trace_table(&th.records).render())?;

    let mut cmp = Table::new(&["n", "energy_error_adaptive", "energy_error_h1"]);
    for k in 0..ta.records.len().max(th.records.len()) {
        let e = |t: &Trace| t.records.get(k).and_then(|r| r.energy_error);
        cmp.push(vec![(k + 1).to_string(), opt_num(e(ta)), opt_num(e(th))]);
    }
    write_file(&out_path(cfg, "comparison.csv"), &cmp.render())?;

    let mut m = base_summary(cfg, &s);
    m.add("reference", note);
    m.add("reference.energy", num(reference.energy));
    run_summary(&mut m, "adaptive.", ta, cfg.stop.reference_tol);
    run_summary(&mut m, "h1.", th, cfg.stop.reference_tol);
    let ia = ta.iterations_to_energy_error(cfg.stop.reference_tol);
    let ih = th.iterations_to_energy_error(cfg.stop.reference_tol);
    if let (Some(a), Some(h)) = (ia, ih) {
        m.add("iteration_ratio_h1_over_adaptive", format!("{:.4}", h as f64 / a as f64));
    }
    for (name, t) in [("adaptive", ta), ("h1", th)] {
        m.add(
            &format!("{name}.plateau"),
            plateau(&t.records, PLATEAU_THRESHOLD)
                .map_or("none".into(), |(s0, len)| format!("steps {s0}..{} ({len} steps)", s0 + len - 1)),
        );
    }
    if cfg.svg {
        let svg = line_plot_svg(
            "energy error: adaptive vs H1 metric",
            "iteration n",
            "E(u^n) - E_ref",
            &[
                Series {
                    label: "adaptive metric",
                    points: energy_series(&ta.records),
                },
                Series {
                    label: "H1 metric",
                    points: energy_series(&th.records),
                },
            ],
            true,
        );
        write_file(&out_path(cfg, "comparison.svg"), &svg)?;
    }
    m.add("wall_seconds", format!("{:.3}", started.elapsed().as_secs_f64()));
    write_file(&out_path(cfg, "summary.txt"), &m.render())?;
    print!("{}", m.render());
    if let Some(e) = not_converged(ta, "adaptive run").or_else(|| not_converged(th, "H1 run")) {
        return Err(e);
    }
    Ok(())
}

fn spectral_options(cfg: &RunConfig) -> SpectralOptions {
    SpectralOptions {
        k_a_u: cfg.k_a_u,
        k_hessian: cfg.k_hessian,
        k_mu: cfg.k_mu,
        coercivity_samples: cfg.coercivity_samples,
        seed: cfg.seed,
        ..Default::default()
    }
}

pub fn render_report(rep: &SpectralReport) -> String {
    let mut s = String::new();
    let pf = |b: bool| if b { "PASS" } else { "FAIL" };
    let _ = writeln!(s, "lambda = {}", num(rep.lambda));
    let _ = writeln!(s, "residual = {}", num(rep.residual));
    let _ = writeln!(s, "\nA_u eigenvalues (complex count):");
    for (i, (e, r)) in rep.a_u.eigs.iter().zip(&rep.a_u.residuals).enumerate() {
        let mark = if rep.a_u.lambda_index == Some(i + 1) { "  <- lambda" } else { "" };
        let _ = writeln!(s, "  {:>3}  {}  (residual {:.1e}){mark}", i + 1, num(*e), r);
    }
    let _ = writeln!(
        s,
        "lambda index = {}",
        rep.a_u
            .lambda_index
            .map_or("not found among computed values".into(), |i| i.to_string())
    );
    let _ = writeln!(s, "\nHessian eigenvalues on the tangent space:");
    for (i, (e, r)) in rep.hess_eigs.iter().zip(&rep.hess_residuals).enumerate() {
        let _ = writeln!(s, "  {:>3}  {}  (residual {:.1e})", i + 1, num(*e), r);
    }
    let _ = writeln!(s, "alignment of first mode with iu = {}", num(rep.alignment));
    let _ = writeln!(s, "lambda_1 / lambda_2 = {}", num(rep.lambda1 / rep.lambda2));
    let _ = writeln!(s, "\nweighted eigenvalues mu (by magnitude):");
    for (i, (e, r)) in rep.mu.iter().zip(&rep.mu_residuals).enumerate() {
        let _ = writeln!(s, "  {:>3}  {}  (residual {:.1e})", i + 1, num(*e), r);
    }
    let _ = writeln!(s, "mu_min = {}", num(rep.mu_min));
    let _ = writeln!(s, "mu_max = {}", num(rep.mu_max));
    if let Some(m1) = rep.mu.first() {
        let _ = writeln!(s, "|mu_1| - lambda_1/lambda_2 = {:.3e}", m1.abs() - rep.lambda1 / rep.lambda2);
    }
    let _ = writeln!(s, "delta_1 = {}", num(rep.delta1));
    let _ = writeln!(s, "rho*(1) = {}", num(rep.rho_star_1));
    let _ = writeln!(
        s,
        "tau limits: positive branch {}, negative branch {}, active {}",
        num(rep.tau_limits.tau_pos),
        num(rep.tau_limits.tau_neg),
        if rep.tau_limits.positive_active { "positive" } else { "negative" }
    );
    let _ = writeln!(
        s,
        "coercivity: worst margin {} over {} samples (constant {})",
        num(rep.coercivity.worst_margin),
        rep.coercivity.samples,
        num(rep.coercivity.constant)
    );
    let c = &rep.checks;
    let _ = writeln!(s, "\nchecks:");
    let _ = writeln!(s, "  {} mu upper bound lambda_1/lambda_2", pf(c.mu_upper));
    let _ = writeln!(s, "  {} mu lower bound -lambda_1/(lambda_1 + delta_1)", pf(c.mu_lower));
    let _ = writeln!(s, "  {} lambda_1 equals lambda", pf(c.lambda1_matches));
    let _ = writeln!(s, "  {} first Hessian mode is the phase mode iu", pf(c.first_mode_is_phase));
    let _ = writeln!(s, "  {} coercivity on the tangent space", pf(c.coercivity));
    s
}

pub fn report_table(rep: &SpectralReport) -> Table {
    let mut t = Table::new(&["quantity", "index", "value", "residual"]);
    let mut add = |q: &str, i: usize, v: f64, r: Option<f64>| t.push(vec![q.into(), i.to_string(), num(v), opt_num(r)]);
    add("lambda", 0, rep.lambda, Some(rep.residual));
    for (i, (e, r)) in rep.a_u.eigs.iter().zip(&rep.a_u.residuals).enumerate() {
        add("a_u", i + 1, *e, Some(*r));
    }
    add("lambda_index", 0, rep.a_u.lambda_index.map_or(f64::NAN, |i| i as f64), None);
    for (i, (e, r)) in rep.hess_eigs.iter().zip(&rep.hess_residuals).enumerate() {
        add("hessian", i + 1, *e, Some(*r));
    }
    add("alignment", 0, rep.alignment, None);
    for (i, (e, r)) in rep.mu.iter().zip(&rep.mu_residuals).enumerate() {
        add("mu", i + 1, *e, Some(*r));
    }
    add("mu_min", 0, rep.mu_min, None);
    add("mu_max", 0, rep.mu_max, None);
    add("delta1", 0, rep.delta1, None);
    add("rho_star_1", 0, rep.rho_star_1, None);
    add("tau_pos", 0, rep.tau_limits.tau_pos, None);
    add("tau_neg", 0, rep.tau_limits.tau_neg, None);
    add("coercivity_margin", 0, rep.coercivity.worst_margin, None);
    for (t_, r) in &rep.rho_star_samples {
        add("rho_star_curve", 0, *r, Some(*t_));
    }
    t
}

fn write_spectral(cfg: &RunConfig, rep: &SpectralReport) -> Result<(), CliError> {
    ensure_dir(&cfg.out_dir)?;
    write_file(&out_path(cfg, "spectral_report.txt"), &render_report(rep))?;
    write_file(&out_path(cfg, "spectral.csv"), &report_table(rep).render())
}

pub fn cmd_spectrum(cfg: &RunConfig, state: &Path) -> Result<(), CliError> {
    let s = setup(cfg, DEFAULT_N)?;
    let u = load_state(&s, state)?;
    let res = gp_residual(&s.forms, &u)?;
    if res.res_l2 > cfg.residual_gate {
        return Err(CliError::NotConverged(format!(
            "state residual {:.3e} exceeds the gate {:.1e}; converge it further with `rgpe solve`",
            res.res_l2, cfg.residual_gate
        )));
    }
    let rep = spectral_report(&s.forms, &u, &spectral_options(cfg))?;
    write_spectral(cfg, &rep)?;
    print!("{}", render_report(&rep));
    if !rep.checks.all() {
        return Err(CliError::Invariant(format!("spectral bound checks failed: {:?}", rep.checks)));
    }
    Ok(())
}

pub fn rates_table(rates: &[rgpe_core::solver::RatePoint]) -> Table {
    let mut t = Table::new(&["n", "rate", "omega", "error"]);
    for r in rates {
        t.push(vec![r.n.to_string(), num(r.rate), num(r.omega), num(r.error)]);
    }
    t
}

pub fn cmd_rates(cfg: &RunConfig, state: &Path) -> Result<(), CliError> {
    if !cfg.retain_states {
        return Err(CliError::Config(
            "rates needs the iterates: pass --retain-states or set outputs.retain_states = true".into(),
        ));
    }
    let s = setup(cfg, DEFAULT_N)?;
    let u_ref = load_state(&s, state)?;
    let res = gp_residual(&s.forms, &u_ref)?;
    if res.res_l2 > cfg.residual_gate {
        return Err(CliError::NotConverged(format!(
            "reference residual {:.3e} exceeds the gate {:.1e}",
            res.res_l2, cfg.residual_gate
        )));
    }
    let opts = RunOptions {
        retain_states: true,
        ..Default::default()
    };
    let trace = run(&s.forms, &s.u0, &cfg.policy(), &cfg.stop, None, &opts)?;
    let states = trace.states.as_deref().unwrap_or(&[]);
    let rates = contraction_rates(&s.forms, states, &u_ref, cfg.rates_floor);

    let ws = weighted_evp(&s.forms, &u_ref, res.lambda, 1)?;
    let hs = hessian_spectrum(&s.forms, &u_ref, 2)?;
    let mu1 = ws.mu.first().copied().unwrap_or(f64::NAN).abs();
    let l12 = hs.pairs[0].value / hs.pairs[1].value;

    ensure_dir(&cfg.out_dir)?;
    write_file(&out_path(cfg, "rates.csv"), &rates_table(&rates).render())?;
    let mut m = base_summary(cfg, &s);
    m.add("reference", format!("{} (residual {:.3e})", state.display(), res.res_l2));
    m.add("rates.points", rates.len());
    m.add("rates.floor", cfg.rates_floor);
    m.add("rates.tail_fraction", cfg.tail_fraction);
    m.add("rates.tail_mean", opt_num(tail_mean(&rates, cfg.tail_fraction)));
    m.add("line.mu1_abs", num(mu1));
    m.add("line.lambda1_over_lambda2", num(l12));
    m.add("run.iterations", trace.records.len());
    m.add("run.stop_reason", trace.stop_reason.as_str());
    write_file(&out_path(cfg, "rates_meta.txt"), &m.render())?;
    if cfg.svg {
        let svg = line_plot_svg(
            "contraction rate",
            "iteration n",
            "r(n)",
            &[
                Series {
                    label: "r(n)",
                    points: rates.iter().map(|r| (r.n as f64, r.rate)).collect(),
                },
                Series {
                    label: "|mu_1|",
                    points: rates.iter().map(|r| (r.n as f64, mu1)).collect(),
                },
                Series {
                    label: "lambda_1/lambda_2",
                    points: rates.iter().map(|r| (r.n as f64, l12)).collect(),
                },
            ],
            false,
        );
        write_file(&out_path(cfg, "rates.svg"), &svg)?;
    }
    print!("{}", m.render());
    Ok(())
}

/// One named measurement of the invariant battery.
#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub defect: f64,
    pub tol: f64,
}

impl CheckLine {
    pub fn pass(&self) -> bool {
        self.defect <= self.tol
    }
}

/// Runs the invariant battery and returns one line per invariant.
pub fn invariant_battery(cfg: &RunConfig) -> Result<Vec<CheckLine>, CliError> {
    let s = setup(cfg, CHECK_DEFAULT_N)?;
    let policy = cfg.policy();
    let steps = cfg.check_steps.max(1);
    let stop = StopCriteria {
        max_iters: steps,
        ..cfg.stop
    };
    let trace = run(&s.forms, &s.u0, &policy, &stop, None, &RunOptions::default())?;
    let d = step_defects(&trace.records);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let omega = rng.gen_range(0.0..2.0 * PI);
    let tau_aux = match policy.mode {
        StepMode::Fixed(t) => t,
        StepMode::Adaptive => 1.0,
    };
    let line = |name, defect, tol| CheckLine { name, defect, tol };
    Ok(vec![
        line("mass", d.mass, TOL_MASS),
        line("tangency", d.tangency, TOL_TANGENCY),
        line("energy_identity", d.identity, TOL_IDENTITY),
        line("pythagoras", d.pythagoras, TOL_PYTHAGORAS),
        line("gauge", gauge_defect(&s.forms, &s.u0, omega, &policy, steps)?, TOL_GAUGE),
        line("auxiliary", auxiliary_defect(&s.forms, &s.u0, &s.u0, tau_aux, steps)?, TOL_AUXILIARY),
        line(
            "line_search",
            line_search_defect(&s.forms, &s.u0, &[0.3, 0.8, 1.2, 1.7])?,
            TOL_LINE_SEARCH,
        ),
    ])
}

pub fn cmd_check(cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let lines = invariant_battery(cfg)?;
    for l in &lines {
        println!(
            "{} {:<16} defect {:.3e} (tol {:.0e})",
            if l.pass() { "PASS" } else { "FAIL" },
            l.name,
            l.defect,
            l.tol
        );
    }
    println!("elapsed {:.2} s", started.elapsed().as_secs_f64());
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.pass())
        .map(|l| format!("{} defect {:.3e} > {:.0e}", l.name, l.defect, l.tol))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failed.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize, e_prev: f64, e: f64) -> IterationRecord {
        IterationRecord {
            n,
            energy: e,
            energy_prev: e_prev,
            gamma: 1.0,
            tau: 1.0,
            mass_after: 1.0,
            mass_intermediate: 1.0,
            step_norm_r: 0.0,
            residual: 0.0,
            residual_max: 0.0,
            lambda: 0.0,
            energy_identity_gap: 0.0,
            tangency: 0.0,
            pythagoras_gap: 0.0,
            stationary: false,
            energy_error: None,
            h1_error: None,
        }
    }

    #[test]
    fn plateau_ignores_tail() {
        let es = [1.0, 0.5, 0.5 - 1e-8, 0.5 - 2e-8, 0.5 - 3e-8, 0.1, 0.1 - 1e-9, 0.1 - 2e-9];
        let recs: Vec<_> = es.windows(2).enumerate().map(|(i, w)| rec(i, w[0], w[1])).collect();
        assert_eq!(plateau(&recs, 1e-6), Some((2, 3)));
        assert_eq!(plateau(&recs[..1], 1e-6), None);
    }
}
