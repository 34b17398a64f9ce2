//! Energy-adaptive Riemannian gradient method and its companions.
//!
//! One step maps a normalized iterate `u` to
//!
//! ```text
//! q = A_u^{-1} M u,   gamma = 1 / (u^T M q),   d = -u + gamma q,
//! u_hat = u + tau d,  u_next = u_hat / ||u_hat||_{L2},
//! ```
//!
//! where `A_u = S + beta M_u`. `tau = 1` is the nonlinear inverse iteration;
//! the adaptive policy minimizes the energy along the retraction exactly,
//! using the rational function of `tau` assembled from `M_u`, `Xi_ud` and
//! `Xi_dd`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forms::{FormSet, LineCoeffs};
use crate::sparse::CsrMatrix;
use crate::state::{dot, State};

/// Absolute energy increase tolerated before a step counts as an increase.
pub const ENERGY_INCREASE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Fixed(f64),
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    pub mode: StepMode,
    pub bracket: (f64, f64),
    /// Absolute tolerance of the scalar minimization in `tau`.
    pub scalar_min_tol: f64,
    /// Raise [`Error::Dissipation`] when a step increases the energy.
    pub check_dissipation: bool,
}

impl StepPolicy {
    pub const DEFAULT_BRACKET: (f64, f64) = (1e-3, 2.0 - 1e-3);

    pub fn adaptive() -> Self {
        Self {
            mode: StepMode::Adaptive,
            bracket: Self::DEFAULT_BRACKET,
            scalar_min_tol: 1e-10,
            check_dissipation: false,
        }
    }

    pub fn fixed(tau: f64) -> Self {
        Self {
            mode: StepMode::Fixed(tau),
            ..Self::adaptive()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let StepMode::Fixed(tau) = self.mode {
            if !(tau > 0.0 && tau < 2.0) {
                return Err(Error::Policy(format!("fixed step {tau} outside (0, 2)")));
            }
        }
        let (lo, hi) = self.bracket;
        if !(lo > 0.0 && hi < 2.0 && lo < hi) {
            return Err(Error::Policy(format!("bracket ({lo}, {hi}) not inside (0, 2)")));
        }
        if !(self.scalar_min_tol > 0.0) {
            return Err(Error::Policy("scalar minimization tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    /// Energy after the step, `E(u^{n+1})`.
    pub energy: f64,
    /// Energy before the step, `E(u^n)`.
    pub energy_prev: f64,
    pub gamma: f64,
    pub tau: f64,
    pub mass_after: f64,
    pub mass_intermediate: f64,
    pub step_norm_r: f64,
    /// Discrete L2 eigen-residual of `u^{n+1}`.
    pub residual: f64,
    /// Nodal maximum of the mass-solved residual field of `u^{n+1}`.
    pub residual_max: f64,
    /// Rayleigh quotient of `u^{n+1}`.
    pub lambda: f64,
    /// Defect of the exact energy-decay identity (NaN for steps where it
    /// does not apply).
    pub energy_identity_gap: f64,
    /// `(u_hat - u)^T M u`.
    pub tangency: f64,
    /// `||u_hat||^2 - 1 - ||u_hat - u||^2`.
    pub pythagoras_gap: f64,
    pub stationary: bool,
    pub energy_error: Option<f64>,
    pub h1_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TolReached,
    MaxIters,
    Diverged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::TolReached => "tol_reached",
            StopReason::MaxIters => "max_iters",
            StopReason::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub initial_state: State,
    pub final_state: State,
    pub final_lambda: f64,
    pub stop_reason: StopReason,
    /// `u^0, u^1, ...` when retention is enabled.
    pub states: Option<Vec<State>>,
}

impl Trace {
    /// First iteration count at which the reference energy error drops
    /// below `tol`, counted as the number of steps taken.
    pub fn iterations_to_energy_error(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.energy_error.is_some_and(|e| e.abs() < tol))
            .map(|r| r.n + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    pub energy_tol: f64,
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Stop once `|E(u^n) - E_ref|` falls below this, when a reference is given.
    pub reference_tol: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            energy_tol: 1e-12,
            residual_tol: 1e-9,
            max_iters: 10_000,
            reference_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub energy: f64,
    pub state: Option<State>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Gradient in the `A_u` metric.
    Adaptive,
    /// Gradient in the fixed H1 metric.
    H1,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub method: Method,
    pub retain_states: bool,
    /// Reassemble `M_u` from scratch every this many steps.
    pub refresh_every: usize,
    /// Energy increases that declare divergence, either consecutive or
    /// within the last `divergence_window` steps. The windowed count catches
    /// period-two oscillations that alternate increases and decreases.
    pub divergence_streak: usize,
    pub divergence_window: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            method: Method::Adaptive,
            retain_states: false,
            refresh_every: 500,
            divergence_streak: 10,
            divergence_window: 20,
        }
    }
}

/// `gamma = 1 / (u^T M q)`.
pub fn gamma(forms: &FormSet, u: &State, q: &State) -> Result<f64> {
    let uq = forms.m.form(u.coeffs(), q.coeffs());
    if !(uq > 0.0 && uq.is_finite()) {
        return Err(Error::DegenerateIterate(uq));
    }
    Ok(1.0 / uq)
}

#[derive(Debug, Clone)]
pub struct Direction {
    pub d: State,
    pub q: State,
    pub gamma: f64,
}

/// Descent direction `d = -u + gamma A_u^{-1} M u`.
pub fn descent_direction(forms: &FormSet, u: &State) -> Result<Direction> {
    let m_u = forms.weighted_mass(u)?;
    descent_direction_with(forms, u, &m_u, None)
}

/// As [`descent_direction`] with a precomputed `M_u` and an optional
/// starting guess for the inner solve.
pub fn descent_direction_with(
    forms: &FormSet,
    u: &State,
    m_u: &CsrMatrix,
    warm: Option<&[f64]>,
) -> Result<Direction> {
    u.check_len(forms.n_dofs())?;
    let a = forms.a_u(m_u);
    let mu = forms.m.apply(u.coeffs());
    let q = State::from_coeffs(forms.solve(&a, &mu, warm)?);
    let g = gamma(forms, u, &q)?;
    let d = q.scaled(g).sub(u);
    Ok(Direction { d, q, gamma: g })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub tau: f64,
    pub value: f64,
    pub stationary: bool,
}

/// Minimizes `g` over the policy bracket: a uniform scan locates the best
/// sub-interval, which is then refined by Brent's method. The search works
/// on `g(tau) - g(0)` to stay resolved once energy changes reach rounding
/// level.
pub fn line_search(coeffs: &LineCoeffs, policy: &StepPolicy) -> LineSearchResult {
    let (lo, hi) = policy.bracket;
    if coeffs.eta2 == 0.0 && coeffs.zeta[2] == 0.0 {
        return LineSearchResult {
            tau: lo,
            value: coeffs.g(lo),
            stationary: true,
        };
    }
    let g = |t: f64| coeffs.delta(t);
    const SAMPLES: usize = 64;
    let h = (hi - lo) / SAMPLES as f64;
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for i in 0..=SAMPLES {
        let v = g(lo + h * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + h * best_i.saturating_sub(1) as f64;
    let b = (lo + h * (best_i + 1) as f64).min(hi);
    let (t, v) = brent_min(g, a, b, policy.scalar_min_tol);
    let (mut tau, mut value) = (t, v);
    // The minimizer of a sampled function is only resolved to about the
    // square root of the rounding level; the root of g' is resolved to the
    // rounding level itself.
    if let Some(r) = refine_stationary(coeffs, t, lo, hi) {
        tau = r;
        value = g(r).min(value);
    }
    let grid_best = lo + h * best_i as f64;
    if best_v < value {
        tau = grid_best;
        value = best_v;
    }
    for end in [lo, hi] {
        let ve = g(end);
        if ve < value {
            tau = end;
            value = ve;
        }
    }
    LineSearchResult {
        tau,
        value: coeffs.g(tau),
        stationary: false,
    }
}

/// Bisection on `g'` around an approximate interior minimizer `t`.
fn refine_stationary(coeffs: &LineCoeffs, t: f64, lo: f64, hi: f64) -> Option<f64> {
    const WIDTH: f64 = 1e-6;
    let (mut a, mut b) = ((t - WIDTH).max(lo), (t + WIDTH).min(hi));
    if !(coeffs.slope(a) < 0.0 && coeffs.slope(b) > 0.0) {
        return None;
    }
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if coeffs.slope(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Brent's parabolic/golden-section minimization on `[a, b]`.
pub fn brent_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let eps = f64::EPSILON.sqrt() * 1e-3;
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: State,
    pub record: IterationRecord,
    /// `M_{u^{n+1}}` obtained from the rank-structured update.
    pub m_u: CsrMatrix,
    pub q: State,
    pub coeffs: LineCoeffs,
}

/// Residual of the discrete eigenvalue equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub lambda: f64,
    pub res_l2: f64,
    pub res_max: f64,
}

/// `lambda = u^T A_u u / u^T M u` and the L2 norm of `M^{-1}(A_u u - lambda M u)`.
pub fn gp_residual(forms: &FormSet, u: &State) -> Result<Residual> {
    let m_u = forms.weighted_mass(u)?;
    gp_residual_with(forms, u, &m_u)
}

pub fn gp_residual_with(forms: &FormSet, u: &State, m_u: &CsrMatrix) -> Result<Residual> {
    u.check_len(forms.n_dofs())?;
    let uc = u.coeffs();
    let mut au = forms.s.apply(uc);
    let beta = forms.beta();
    if beta != 0.0 {
        for (a, b) in au.iter_mut().zip(m_u.apply(uc)) {
            *a += beta * b;
        }
    }
    let mu = forms.m.apply(uc);
    let lambda = dot(uc, &au) / dot(uc, &mu);
    let r: Vec<f64> = au.iter().zip(&mu).map(|(a, m)| a - lambda * m).collect();
    let y = forms.mass_solve(&r)?;
    let res_l2 = dot(&y, &r).max(0.0).sqrt();
    let res_max = y
        .chunks_exact(2)
        .map(|c| c[0].hypot(c[1]))
        .fold(0.0, f64::max);
    Ok(Residual {
        lambda,
        res_l2,
        res_max,
    })
}

fn exact_identity_gap(forms: &FormSet, u: &State, u_hat: &State, a_u: &CsrMatrix, tau: f64, e_u: f64) -> f64 {
    let e_hat = forms.energy(u_hat);
    let diff = u_hat.sub(u);
    let rhs = -0.25 * forms.beta() * forms.density_gap(u_hat, u)
        + (1.0 / tau - 0.5) * a_u.form(diff.coeffs(), diff.coeffs());
    ((e_u - e_hat) - rhs).abs()
}

/// Shared tail of both gradient steps: choose `tau`, retract, update `M_u`.
#[allow(clippy::too_many_arguments)]
fn finish_step(
    forms: &FormSet,
    u: &State,
    d: &State,
    q: State,
    gamma: f64,
    policy: &StepPolicy,
    m_u: &CsrMatrix,
    identity_applies: bool,
) -> Result<StepOutput> {
    policy.validate()?;
    let (coeffs, xud, xdd) = forms.quartic_integrals(u, d, m_u)?;
    let (tau, stationary) = match policy.mode {
        StepMode::Fixed(t) => (t, false),
        StepMode::Adaptive => {
            let ls = line_search(&coeffs, policy);
            (ls.tau, ls.stationary)
        }
    };
    let u_hat = u.axpy(tau, d);
    let mass_hat2 = forms.mass(&u_hat);
    let mass_hat = mass_hat2.sqrt();
    let next = u_hat.scaled(1.0 / mass_hat);

    let mut m_next = CsrMatrix::combination(&[(1.0, m_u), (2.0 * tau, &xud), (tau * tau, &xdd)]);
    m_next.scale(1.0 / mass_hat2);

    let e_u = forms.energy(u);
    let e_next = forms.energy(&next);
    let a_u = forms.a_u(m_u);
    let gap = if identity_applies {
        exact_identity_gap(forms, u, &u_hat, &a_u, tau, e_u)
    } else {
        f64::NAN
    };
    let diff = u_hat.sub(u);
    let diff_mass = forms.mass(&diff);
    let tangency = forms.m.form(diff.coeffs(), u.coeffs());
    let res = gp_residual_with(forms, &next, &m_next)?;

    if policy.check_dissipation && e_next > e_u + ENERGY_INCREASE_TOL {
        return Err(Error::Dissipation {
            iteration: 0,
            tau,
            increase: e_next - e_u,
        });
    }

    let record = IterationRecord {
        n: 0,
        energy: e_next,
        energy_prev: e_u,
        gamma,
        tau,
        mass_after: forms.l2_norm(&next),
        mass_intermediate: mass_hat,
        step_norm_r: forms.r_norm(&diff),
        residual: res.res_l2,
        residual_max: res.res_max,
        lambda: res.lambda,
        energy_identity_gap: gap,
        tangency,
        pythagoras_gap: mass_hat2 - forms.mass(u) - diff_mass,
        stationary,
        energy_error: None,
        h1_error: None,
    };
    Ok(StepOutput {
        state: next,
        record,
        m_u: m_next,
        q,
        coeffs,
    })
}

/// One step of the energy-adaptive gradient method.
pub fn gradient_step(
    forms: &FormSet,
    u: &State,
    policy: &StepPolicy,
    m_u: &CsrMatrix,
    warm: Option<&[f64]>,
) -> Result<StepOutput> {
    policy.validate()?;
    let dir = descent_direction_with(forms, u, m_u, warm)?;
    finish_step(forms, u, &dir.d, dir.q, dir.gamma, policy, m_u, true)
}

/// Projected Sobolev gradient in the H1 metric `X = M + K`.
#[derive(Debug, Clone)]
pub struct H1Direction {
    pub d: State,
    pub g: State,
    pub z: State,
}

pub fn h1_direction(forms: &FormSet, u: &State, m_u: &CsrMatrix, x: &CsrMatrix, z_warm: Option<&[f64]>) -> Result<H1Direction> {
    u.check_len(forms.n_dofs())?;
    let a = forms.a_u(m_u);
    let e_prime = a.apply(u.coeffs());
    let g = State::from_coeffs(forms.solve(x, &e_prime, None)?);
    let mu = forms.m.apply(u.coeffs());
    let z = State::from_coeffs(forms.solve(x, &mu, z_warm)?);
    let ug = dot(&mu, g.coeffs());
    let uz = dot(&mu, z.coeffs());
    if !(uz > 0.0) {
        return Err(Error::DegenerateIterate(uz));
    }
    let pg = g.axpy(-ug / uz, &z);
    Ok(H1Direction {
        d: pg.scaled(-1.0),
        g,
        z,
    })
}

/// One step of the H1-metric gradient method with the same retraction and
/// line search.
pub fn h1_gradient_step(forms: &FormSet, u: &State, policy: &StepPolicy, m_u: &CsrMatrix) -> Result<StepOutput> {
    let x = forms.h1_matrix();
    h1_gradient_step_with(forms, u, policy, m_u, &x)
}

pub fn h1_gradient_step_with(
    forms: &FormSet,
    u: &State,
    policy: &StepPolicy,
    m_u: &CsrMatrix,
    x: &CsrMatrix,
) -> Result<StepOutput> {
    policy.validate()?;
    let dir = h1_direction(forms, u, m_u, x, None)?;
    finish_step(forms, u, &dir.d, dir.z, f64::NAN, policy, m_u, false)
}

/// Runs the chosen method from `u0` until a stopping criterion holds.
pub fn run(
    forms: &FormSet,
    u0: &State,
    policy: &StepPolicy,
    stop: &StopCriteria,
    reference: Option<&Reference>,
    opts: &RunOptions,
) -> Result<Trace> {
    policy.validate()?;
    if !u0.is_finite() {
        return Err(Error::InvalidParams("initial state has non-finite entries".into()));
    }
    let mut u = forms.normalize(u0)?;
    let initial_state = u.clone();
    let mut m_u = forms.weighted_mass(&u)?;
    let x_h1 = match opts.method {
        Method::H1 => Some(forms.h1_matrix()),
        Method::Adaptive => None,
    };
    let mut states = opts.retain_states.then(|| vec![u.clone()]);
    let mut records = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    let mut increases = 0usize;
    let mut recent: std::collections::VecDeque<bool> = std::collections::VecDeque::new();
    let mut stop_reason = StopReason::MaxIters;
    let mut lambda = f64::NAN;

    for n in 0..stop.max_iters {
        if n > 0 && opts.refresh_every > 0 && n % opts.refresh_every == 0 {
            m_u = forms.weighted_mass(&u)?;
        }
        let out = match &x_h1 {
            None => gradient_step(forms, &u, policy, &m_u, warm.as_deref())?,
            Some(x) => h1_gradient_step_with(forms, &u, policy, &m_u, x)?,
        };
        let StepOutput {
            state,
            mut record,
            m_u: m_next,
            ..
        } = out;
        record.n = n;
        if let Some(r) = reference {
            record.energy_error = Some(record.energy - r.energy);
            if let Some(us) = &r.state {
                record.h1_error = Some(phase_align(forms, &state, us, Metric::H1).1);
            }
        }
        if opts.method == Method::Adaptive {
            // A_u^{-1} M u is close to u / gamma near convergence.
            warm = Some(state.scaled(1.0 / record.gamma).into_coeffs());
        }
        let decrement = record.energy_prev - record.energy;
        let increased = decrement < -ENERGY_INCREASE_TOL;
        increases = if increased { increases + 1 } else { 0 };
        recent.push_back(increased);
        if recent.len() > opts.divergence_window {
            recent.pop_front();
        }
        let windowed = recent.iter().filter(|&&b| b).count();
        lambda = record.lambda;
        let intrinsic = decrement.abs() < stop.energy_tol && record.residual < stop.residual_tol;
        let by_reference = record
            .energy_error
            .is_some_and(|e| e.abs() < stop.reference_tol);
        u = state;
        m_u = m_next;
        if let Some(s) = states.as_mut() {
            s.push(u.clone());
        }
        records.push(record);
        if intrinsic || by_reference {
            stop_reason = StopReason::TolReached;
            break;
        }
        if increases >= opts.divergence_streak || windowed >= opts.divergence_streak {
            stop_reason = StopReason::Diverged;
            break;
        }
    }

    Ok(Trace {
        records,
        initial_state,
        final_state: u,
        final_lambda: lambda,
        stop_reason,
        states,
    })
}

/// `psi(v) = A_v^{-1} M v`.
pub fn psi(forms: &FormSet, v: &State) -> Result<State> {
    let m_v = forms.weighted_mass(v)?;
    let a = forms.a_u(&m_v);
    Ok(State::from_coeffs(forms.solve(&a, &forms.m.apply(v.coeffs()), None)?))
}

/// `psi_tau(v) = (1 - tau) v + tau gamma(v) psi(v)`, the unnormalized update.
pub fn psi_tau(forms: &FormSet, v: &State, tau: f64) -> Result<State> {
    let p = psi(forms, v)?;
    let g = gamma(forms, v, &p)?;
    Ok(v.scaled(1.0 - tau).axpy(tau * g, &p))
}

/// One plain step with fixed `tau`: `psi_tau(v) / ||psi_tau(v)||`.
pub fn phi_tau(forms: &FormSet, v: &State, tau: f64) -> Result<State> {
    forms.normalize(&psi_tau(forms, v, tau)?)
}

/// `theta_u(v) = conj(int psi_tau(v) conj(u))`.
pub fn theta(forms: &FormSet, v: &State, u_ref: &State, tau: f64) -> Result<Complex64> {
    let p = psi_tau(forms, v, tau)?;
    Ok(forms.complex_l2(&p, u_ref).conj())
}

pub const PHASE_THRESHOLD: f64 = 1e-14;

/// Phase-locked step `Theta_u(v) phi_tau(v)` with `Theta = theta / |theta|`.
pub fn auxiliary_step(forms: &FormSet, v: &State, u_ref: &State, tau: f64) -> Result<State> {
    let p = psi_tau(forms, v, tau)?;
    let th = forms.complex_l2(&p, u_ref).conj();
    if th.norm() <= PHASE_THRESHOLD {
        return Err(Error::PhaseDegenerate(th.norm()));
    }
    let phi = forms.normalize(&p)?;
    Ok(phi.scale_complex(th / th.norm()))
}

/// `Theta_u(v) = theta_u(v) / |theta_u(v)|`.
pub fn phase_factor(forms: &FormSet, v: &State, u_ref: &State, tau: f64) -> Result<Complex64> {
    let th = theta(forms, v, u_ref, tau)?;
    if th.norm() <= PHASE_THRESHOLD {
        return Err(Error::PhaseDegenerate(th.norm()));
    }
    Ok(th / th.norm())
}

/// `psi'(v) h = A_v^{-1} (M h - 2 beta Xi_{vh} psi(v))`.
pub fn psi_derivative(forms: &FormSet, v: &State, h: &State) -> Result<State> {
    let m_v = forms.weighted_mass(v)?;
    let a = forms.a_u(&m_v);
    let p = State::from_coeffs(forms.solve(&a, &forms.m.apply(v.coeffs()), None)?);
    let (xvh, _) = forms.xi_matrices(v, h)?;
    let mut rhs = forms.m.apply(h.coeffs());
    for (r, x) in rhs.iter_mut().zip(xvh.apply(p.coeffs())) {
        *r -= 2.0 * forms.beta() * x;
    }
    Ok(State::from_coeffs(forms.solve(&a, &rhs, None)?))
}

/// Derivative of `psi_tau` at a discrete fixed point `u` with eigenvalue
/// `lambda`:
/// `(1 - tau) h - 2 tau <h - (beta/lambda) Re(u conj h) u, u> u
///  + tau lambda A_u^{-1} (h - 2 (beta/lambda) Re(u conj h) u)`.
pub fn psi_tau_derivative(forms: &FormSet, u: &State, lambda: f64, h: &State, tau: f64) -> Result<State> {
    let beta = forms.beta();
    let m_u = forms.weighted_mass(u)?;
    let a = forms.a_u(&m_u);
    let (xuh, _) = forms.xi_matrices(u, h)?;
    let xu = xuh.apply(u.coeffs());
    let mh = forms.m.apply(h.coeffs());
    let pair = dot(&mh, u.coeffs()) - beta / lambda * dot(&xu, u.coeffs());
    let rhs: Vec<f64> = mh
        .iter()
        .zip(&xu)
        .map(|(m, x)| m - 2.0 * beta / lambda * x)
        .collect();
    let sol = State::from_coeffs(forms.solve(&a, &rhs, None)?);
    Ok(h
        .scaled(1.0 - tau)
        .axpy(-2.0 * tau * pair, u)
        .axpy(tau * lambda, &sol))
}

/// `theta_u'(u) h = conj(int (psi_tau'(u) h) conj(u))`.
pub fn theta_derivative(forms: &FormSet, u: &State, lambda: f64, h: &State, tau: f64) -> Result<Complex64> {
    let dp = psi_tau_derivative(forms, u, lambda, h, tau)?;
    Ok(forms.complex_l2(&dp, u).conj())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    H1,
}

/// Optimal phase `omega` minimizing `||a - exp(i omega) b||` and the
/// minimal distance, in the chosen metric.
pub fn phase_align(forms: &FormSet, a: &State, b: &State, metric: Metric) -> (f64, f64) {
    let gram = |x: &[f64]| -> Vec<f64> {
        match metric {
            Metric::L2 => forms.m.apply(x),
            Metric::H1 => {
                let mut y = forms.m.apply(x);
                for (yi, ki) in y.iter_mut().zip(forms.k.apply(x)) {
                    *yi += ki;
                }
                y
            }
        }
    };
    let gb = gram(b.coeffs());
    let gib = gram(b.times_i().coeffs());
    let c = Complex64::new(dot(a.coeffs(), &gb), dot(a.coeffs(), &gib));
    let omega = if c.norm() == 0.0 { 0.0 } else { c.arg() };
    let diff = a.sub(&b.rotate(omega));
    let err = dot(diff.coeffs(), &gram(diff.coeffs())).max(0.0).sqrt();
    (omega, err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub n: usize,
    pub rate: f64,
    pub omega: f64,
    pub error: f64,
}

/// Contraction rates `r(n) = e(n+1) / e(n)` of phase-aligned H1 errors
/// against `u_ref`; the series stops at the first error below `floor`, where
/// the accuracy of `u_ref` itself starts to dominate.
pub fn contraction_rates(forms: &FormSet, states: &[State], u_ref: &State, floor: f64) -> Vec<RatePoint> {
    let aligned: Vec<(f64, f64)> = states
        .iter()
        .map(|s| phase_align(forms, s, u_ref, Metric::H1))
        .collect();
    let mut out = Vec::new();
    for n in 0..aligned.len().saturating_sub(1) {
        let (omega, e) = aligned[n];
        if e < floor || aligned[n + 1].1 < floor {
            break;
        }
        out.push(RatePoint {
            n,
            rate: aligned[n + 1].1 / e,
            omega,
            error: e,
        });
    }
    out
}

/// Mean of the last `frac` portion of a rate series.
pub fn tail_mean(rates: &[RatePoint], frac: f64) -> Option<f64> {
    if rates.is_empty() {
        return None;
    }
    let m = ((rates.len() as f64 * frac).ceil() as usize).clamp(1, rates.len());
    let tail = &rates[rates.len() - m..];
    Some(tail.iter().map(|r| r.rate).sum::<f64>() / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_quadratic_minimum() {
        let (x, fx) = brent_min(|t| (t - 0.73).powi(2) + 1.0, 0.0, 2.0, 1e-10);
        assert!((x - 0.73).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn policy_bounds() {
        assert!(StepPolicy::fixed(1.0).validate().is_ok());
        assert!(matches!(StepPolicy::fixed(2.2).validate(), Err(Error::Policy(_))));
        assert!(matches!(StepPolicy::fixed(0.0).validate(), Err(Error::Policy(_))));
        let mut p = StepPolicy::adaptive();
        p.bracket = (0.5, 2.5);
        assert!(p.validate().is_err());
        p.bracket = (1.0, 0.5);
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_direction_is_stationary() {
        let c = LineCoeffs {
            beta: 1.0,
            xi: [2.0, 0.0, 0.0, 0.0, 0.0],
            eta0: 1.0,
            eta1: 0.0,
            eta2: 0.0,
            zeta: [3.0, 0.0, 0.0],
        };
        let r = line_search(&c, &StepPolicy::adaptive());
        assert!(r.stationary);
        assert_eq!(r.tau, StepPolicy::DEFAULT_BRACKET.0);
        assert_eq!(r.value, 1.5 + 0.5);
    }
}
