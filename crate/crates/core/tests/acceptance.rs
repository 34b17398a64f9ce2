//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 1 3 8`. The large-mesh
//! criterion 7 needs `RGPE_PAPER_SCALE=1`.

use std::process::ExitCode;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgpe_core::checks::{auxiliary_defect, gauge_defect, line_search_defect, step_defects};
use rgpe_core::mesh::{gaussian_profile, vortex_profile};
use rgpe_core::solver::{
    contraction_rates, gradient_step, phase_align, psi, psi_derivative, psi_tau,
    psi_tau_derivative, run, theta, theta_derivative, Method, Metric, Reference,
    RunOptions, StepPolicy, StopCriteria, StopReason,
};
use rgpe_core::spectral::{a_u_spectrum, base_spectrum, spectral_report, SpectralOptions, SpectralReport};
use rgpe_core::{assemble_base, build_mesh, interpolate, Error, FormSet, ModelParams, State};

const HALF_WIDTH: f64 = 6.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn rotating(n: usize) -> (FormSet, State) {
    let mesh = Arc::new(build_mesh(HALF_WIDTH, HALF_WIDTH, n).unwrap());
    let forms = assemble_base(mesh.clone(), ModelParams::rotating_reference()).unwrap();
    let u0 = forms.normalize(&interpolate(&mesh, vortex_profile).unwrap()).unwrap();
    (forms, u0)
}

fn ground_state(forms: &FormSet, u0: &State, residual_tol: f64, energy_tol: f64) -> State {
    let stop = StopCriteria {
        residual_tol,
        energy_tol,
        max_iters: 50_000,
        ..Default::default()
    };
    let tr = run(forms, u0, &StepPolicy::adaptive(), &stop, None, &RunOptions::default()).unwrap();
    assert_eq!(tr.stop_reason, StopReason::TolReached, "ground state run did not converge");
    tr.final_state
}

fn worst_ratio_band(errors: &[f64]) -> (Vec<f64>, bool) {
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (3.7..=4.3).contains(r));
    (ratios, ok)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let (forms, u0) = rotating(32);
    let tr = run(
        &forms,
        &u0,
        &StepPolicy::adaptive(),
        &StopCriteria::default(),
        None,
        &RunOptions::default(),
    )
    .unwrap();
    let d = step_defects(&tr.records);
    let taus = [0.3, 0.8, 1.2, 1.7];
    let ls = line_search_defect(&forms, &u0, &taus)
        .unwrap()
        .max(line_search_defect(&forms, &tr.final_state, &taus).unwrap());
    let secs = t.elapsed().as_secs_f64();
    let pass = d.identity <= 1e-11
        && d.tangency <= 1e-10
        && d.mass <= 1e-12
        && d.pythagoras <= 1e-12
        && ls <= 1e-11
        && secs < 30.0;
    Outcome::new(
        pass,
        format!(
            "{} steps: identity {:.1e} (<=1e-11), tangency {:.1e} (<=1e-10), mass {:.1e} (<=1e-12), \
             pythagoras {:.1e} (<=1e-12), g vs direct {:.1e} (<=1e-11), {secs:.1}s (<30s)",
            tr.records.len(),
            d.identity,
            d.tangency,
            d.mass,
            d.pythagoras,
            ls
        ),
    )
}

/// Off-centre Gaussian. A centred one is even under the point reflection
/// that maps the mesh onto itself, while both second Dirichlet modes are odd,
/// so its iteration would contract with `theta_1 / theta_4` instead.
fn shifted_gaussian(x: f64, y: f64) -> Complex64 {
    gaussian_profile(x - 0.2, y + 0.1) * (1.0 + 0.3 * x)
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let half = std::f64::consts::FRAC_PI_2;
    let mut errors = Vec::new();
    let mut rate_line = String::new();
    let mut rate_ok = true;
    for n in [16usize, 32, 64] {
        let mesh = Arc::new(build_mesh(half, half, n).unwrap());
        let forms = assemble_base(mesh.clone(), ModelParams::linear_free()).unwrap();
        let u0 = interpolate(&mesh, shifted_gaussian).unwrap();
        let stop = StopCriteria {
            residual_tol: 1e-11,
            energy_tol: 1e-15,
            max_iters: 500,
            ..Default::default()
        };
        let opts = RunOptions {
            retain_states: true,
            ..Default::default()
        };
        let tr = run(&forms, &u0, &StepPolicy::fixed(1.0), &stop, None, &opts).unwrap();
        errors.push((tr.final_lambda - 2.0).abs());

        // discrete pencil: each complex eigenvalue appears twice in the real
        // splitting, the second one (double in the continuum) four times
        let pairs = base_spectrum(&forms, 6).unwrap();
        let theta1 = pairs[0].value;
        let theta2 = pairs
            .iter()
            .map(|p| p.value)
            .find(|v| *v > theta1 * (1.0 + 1e-6))
            .unwrap();
        let ground = State::from_coeffs(pairs[0].vector.clone());
        let ground = forms.normalize(&ground).unwrap();
        let rates = contraction_rates(&forms, tr.states.as_ref().unwrap(), &ground, 1e-7);
        let last: Vec<f64> = rates.iter().rev().take(5).map(|r| r.rate).collect();
        let r_inf = last.iter().sum::<f64>() / last.len().max(1) as f64;
        let predicted = theta1 / theta2;
        rate_ok &= !last.is_empty() && (r_inf - predicted).abs() <= 0.005;
        rate_line.push_str(&format!(" n={n}: r {r_inf:.5} vs {predicted:.5};"));
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let order_ok = orders.iter().all(|p| *p >= 1.9);
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        order_ok && rate_ok && secs < 60.0,
        format!(
            "|lambda-2| {:.3e} {:.3e} {:.3e}, orders {:.3} {:.3} (>=1.9);{rate_line} {secs:.1}s (<60s)",
            errors[0], errors[1], errors[2], orders[0], orders[1]
        ),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let (forms, u0) = rotating(32);
    let gauge = gauge_defect(&forms, &u0, 0.937, &StepPolicy::adaptive(), 50).unwrap();
    let u_ref = ground_state(&forms, &u0, 1e-9, 1e-12);
    let aux = auxiliary_defect(&forms, &u0, &u_ref, 1.0, 50).unwrap();
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        gauge <= 1e-9 && aux <= 1e-10 && secs < 60.0,
        format!("gauge {gauge:.1e} (<=1e-9), auxiliary {aux:.1e} (<=1e-10), {secs:.1}s (<60s)"),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let (mut forms, u0) = rotating(24);
    forms.linear.tol = 1e-14;
    let u = ground_state(&forms, &u0, 1e-12, 1e-15);
    let lambda = rgpe_core::solver::gp_residual(&forms, &u).unwrap().lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = interpolate(&forms.mesh, |x, y| {
        let bump = (-(x * x + y * y) / 8.0).exp();
        Complex64::new(0.7 * x + 0.2, 0.5 * y - 0.3 * x * y) * bump
    })
    .unwrap();
    let h = h.axpy(0.05, &State::from_coeffs((0..u.len()).map(|_| rng.gen::<f64>() - 0.5).collect()));
    let tau = 1.0;
    let eps = [1e-3, 5e-4, 2.5e-4];

    let d_psi = psi_derivative(&forms, &u, &h).unwrap();
    let d_psi_tau = psi_tau_derivative(&forms, &u, lambda, &h, tau).unwrap();
    let d_theta = theta_derivative(&forms, &u, lambda, &h, tau).unwrap();
    let (mut e_psi, mut e_psi_tau, mut e_theta) = (Vec::new(), Vec::new(), Vec::new());
    for &e in &eps {
        let up = u.axpy(e, &h);
        let um = u.axpy(-e, &h);
        let fd = psi(&forms, &up).unwrap().sub(&psi(&forms, &um).unwrap()).scaled(0.5 / e);
        e_psi.push(forms.l2_norm(&fd.sub(&d_psi)));
        let fd = psi_tau(&forms, &up, tau)
            .unwrap()
            .sub(&psi_tau(&forms, &um, tau).unwrap())
            .scaled(0.5 / e);
        e_psi_tau.push(forms.l2_norm(&fd.sub(&d_psi_tau)));
        let fd = (theta(&forms, &up, &u, tau).unwrap() - theta(&forms, &um, &u, tau).unwrap()) / (2.0 * e);
        e_theta.push((fd - d_theta).norm());
    }
    let (r1, ok1) = worst_ratio_band(&e_psi);
    let (r2, ok2) = worst_ratio_band(&e_psi_tau);
    let (r3, ok3) = worst_ratio_band(&e_theta);
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        ok1 && ok2 && ok3 && secs < 60.0,
        format!(
            "ratios psi' {:.3} {:.3}, psi_tau' {:.3} {:.3}, theta' {:.3} {:.3} (3.7..4.3), {secs:.1}s (<60s)",
            r1[0], r1[1], r2[0], r2[1], r3[0], r3[1]
        ),
    )
}

struct Converged64 {
    forms: FormSet,
    u0: State,
    state: State,
    report: SpectralReport,
    solve_time: Duration,
    spectral_time: Duration,
}

fn converged_64() -> &'static Converged64 {
    static CELL: OnceLock<Converged64> = OnceLock::new();
    CELL.get_or_init(|| {
        let (forms, u0) = rotating(64);
        let t = Instant::now();
        let state = ground_state(&forms, &u0, 1e-9, 1e-12);
        let solve_time = t.elapsed();
        let t = Instant::now();
        let opts = SpectralOptions {
            lambda_tol: 1e-7,
            alignment_tol: 1e-7,
            bound_slack: 1e-7,
            coercivity_samples: 50,
            ..Default::default()
        };
        let report = spectral_report(&forms, &state, &opts).unwrap();
        Converged64 {
            forms,
            u0,
            state,
            report,
            solve_time,
            spectral_time: t.elapsed(),
        }
    })
}

fn criterion_5() -> Outcome {
    let c = converged_64();
    let r = &c.report;
    let secs = (c.solve_time + c.spectral_time).as_secs_f64();
    let index = r.a_u.lambda_index;
    let pass = r.checks.lambda1_matches
        && r.checks.first_mode_is_phase
        && index.is_some_and(|i| i > 1)
        && r.checks.mu_upper
        && r.checks.mu_lower
        && r.checks.coercivity
        && r.coercivity.samples == 50
        && secs < 600.0;
    Outcome::new(
        pass,
        format!(
            "residual {:.1e}, lambda {:.10}, lambda_1 rel gap {:.1e} (<=1e-7), 1-alignment {:.1e} (<=1e-7), \
             A_u index {:?} (>1), mu in [{:.6}, {:.6}] vs bounds [{:.6}, {:.6}], coercivity margin {:.3e} \
             over {} samples, {secs:.1}s (<600s)",
            r.residual,
            r.lambda,
            (r.lambda1 - r.lambda).abs() / r.lambda,
            1.0 - r.alignment,
            index,
            r.mu_min,
            r.mu_max,
            -r.lambda1 / (r.lambda1 + r.delta1),
            r.lambda1 / r.lambda2,
            r.coercivity.worst_margin,
            r.coercivity.samples
        ),
    )
}

fn criterion_6() -> Outcome {
    let c = converged_64();
    let t = Instant::now();
    let forms = &c.forms;
    // tighter reference, continued from the converged state
    let u_ref = ground_state(forms, &c.state, 1e-11, 1e-15);
    let floor = 1e-7;

    // plain tau = 1 iteration, phase-aligned H1 errors recorded on the fly
    let policy = StepPolicy::fixed(1.0);
    let mut u = c.u0.clone();
    let mut m_u = forms.weighted_mass(&u).unwrap();
    let mut errors = vec![phase_align(forms, &u, &u_ref, Metric::H1).1];
    while errors.len() < 20_000 && *errors.last().unwrap() >= floor {
        let out = gradient_step(forms, &u, &policy, &m_u, None).unwrap();
        u = out.state;
        m_u = out.m_u;
        errors.push(phase_align(forms, &u, &u_ref, Metric::H1).1);
    }
    let rates: Vec<f64> = errors
        .windows(2)
        .take_while(|w| w[1] >= floor)
        .map(|w| w[1] / w[0])
        .collect();
    let tail = {
        let m = (rates.len() / 5).max(1);
        rates[rates.len() - m..].iter().sum::<f64>() / m as f64
    };
    let r_inf = {
        let m = rates.len().min(10);
        rates[rates.len() - m..].iter().sum::<f64>() / m as f64
    };
    let mu1 = c.report.mu_max.abs().max(c.report.mu_min.abs());
    let l12 = c.report.lambda1 / c.report.lambda2;
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        tail <= mu1 + 0.002 && r_inf <= l12 + 0.002 && secs < 600.0,
        format!(
            "{} steps to H1 error {floor:.0e}: tail mean {tail:.6} vs |mu_1| {mu1:.6} (+0.002), \
             r(inf) {r_inf:.6} vs lambda_1/lambda_2 {l12:.6} (+0.002), {secs:.1}s (<600s)",
            rates.len()
        ),
    )
}

fn criterion_7() -> Option<Outcome> {
    if std::env::var("RGPE_PAPER_SCALE").map_or(true, |v| v.is_empty() || v == "0") {
        return None;
    }
    let t = Instant::now();
    let (forms, u0) = rotating(256);
    let u_ref = ground_state(&forms, &u0, 1e-10, 1e-15);
    let reference = Reference {
        energy: forms.energy(&u_ref),
        state: None,
    };
    let stop = StopCriteria {
        residual_tol: 0.0,
        energy_tol: 0.0,
        max_iters: 40_000,
        reference_tol: 1e-9,
    };
    let count = |policy: StepPolicy, method: Method| {
        let opts = RunOptions {
            method,
            ..Default::default()
        };
        let tr = run(&forms, &u0, &policy, &stop, Some(&reference), &opts).unwrap();
        tr.iterations_to_energy_error(1e-9)
    };
    let adaptive = count(StepPolicy::adaptive(), Method::Adaptive);
    let fixed = count(StepPolicy::fixed(1.0), Method::Adaptive);
    let h1 = count(StepPolicy::adaptive(), Method::H1);
    let spec = a_u_spectrum(&forms, &u_ref, 24).unwrap();
    let e = reference.energy;
    let lambda = spec.lambda;
    let target = 1292.0 / 1958.0;
    let ratio = match (adaptive, fixed) {
        (Some(a), Some(f)) => a as f64 / f as f64,
        _ => f64::NAN,
    };
    let h1_factor = match (adaptive, h1) {
        (Some(a), Some(h)) => h as f64 / a as f64,
        _ => f64::NAN,
    };
    let pass = (e - 1.64547132).abs() <= 5e-4
        && (lambda - 4.451867515).abs() <= 5e-3
        && spec.lambda_index.is_some_and(|i| (14..=20).contains(&i))
        && (ratio / target - 1.0).abs() <= 0.15
        && h1_factor >= 3.0;
    Some(Outcome::new(
        pass,
        format!(
            "E {e:.8} (1.64547132 +-5e-4), lambda {lambda:.9} (4.451867515 +-5e-3), index {:?} (14..20), \
             iterations adaptive {adaptive:?} tau=1 {fixed:?} H1 {h1:?}, ratio {ratio:.3} ({target:.3} +-15%), \
             H1/adaptive {h1_factor:.2} (>=3), {:.0}s",
            spec.lambda_index,
            t.elapsed().as_secs_f64()
        ),
    ))
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let (forms, u0) = rotating(32);
    let stop = StopCriteria {
        max_iters: 2000,
        ..Default::default()
    };
    let tr = run(&forms, &u0, &StepPolicy::fixed(1.95), &stop, None, &RunOptions::default()).unwrap();
    let d = step_defects(&tr.records);
    let monotone = d.max_increase <= 1e-12;
    let flagged = tr.stop_reason == StopReason::Diverged;
    let rejected = matches!(
        run(&forms, &u0, &StepPolicy::fixed(2.2), &stop, None, &RunOptions::default()),
        Err(Error::Policy(_))
    );
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        (monotone || flagged) && rejected && secs < 60.0,
        format!(
            "tau=1.95: {} steps, stop {}, largest increase {:.2e} (monotone {monotone}, flagged {flagged}); \
             tau=2.2 rejected {rejected}, {secs:.1}s (<60s)",
            tr.records.len(),
            tr.stop_reason.as_str(),
            d.max_increase
        ),
    )
}

fn main() -> ExitCode {
    // libtest-style flags (e.g. from `cargo test -- --nocapture`) are ignored
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let names = [
        (1, "algebraic identities"),
        (2, "linear oracle"),
        (3, "gauge and auxiliary"),
        (4, "derivative checks"),
        (5, "spectral structure"),
        (6, "rate prediction"),
        (7, "large-mesh reproduction"),
        (8, "dissipation and divergence"),
    ];
    let mut failed = 0;
    for (k, name) in names {
        if !wanted(k) {
            continue;
        }
        let outcome = match k {
            1 => Some(criterion_1()),
            2 => Some(criterion_2()),
            3 => Some(criterion_3()),
            4 => Some(criterion_4()),
            5 => Some(criterion_5()),
            6 => Some(criterion_6()),
            7 => criterion_7(),
            _ => Some(criterion_8()),
        };
        match outcome {
            None => println!("SKIP criterion {k} ({name}): set RGPE_PAPER_SCALE=1 to run"),
            Some(o) => {
                println!("{} criterion {k} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
                if !o.pass {
                    failed += 1;
                }
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
