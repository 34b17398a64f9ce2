//! Spectral diagnostics at a converged ground state.
//!
//! All eigenproblems are posed on the real coefficient space with the mass
//! matrix (or `A_u`) as the definite form, and tangent-space restrictions
//! are imposed as exact linear constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forms::FormSet;
use crate::linalg::{smallest_eigenpairs, ConstraintSet, EigenMode, EigenOptions, EigenPair, Which};
use crate::solver::gp_residual_with;
use crate::sparse::CsrMatrix;
use crate::state::{dot, State};

/// Relative tolerance for locating the ground state eigenvalue in a list.
pub const LAMBDA_MATCH_TOL: f64 = 1e-6;

/// `E''(u) = S + beta M_u + 2 beta N_u`.
pub fn hessian_operator(forms: &FormSet, u: &State) -> Result<CsrMatrix> {
    let m_u = forms.weighted_mass(u)?;
    let n_u = forms.n_matrix(u)?;
    let b = forms.beta();
    Ok(CsrMatrix::combination(&[(1.0, &forms.s), (b, &m_u), (2.0 * b, &n_u)]))
}

fn eig_opts(forms: &FormSet, k: usize, sigma: f64) -> EigenOptions {
    let mut o = EigenOptions::smallest(k);
    o.mode = EigenMode::ShiftInvert { sigma };
    o.inner = forms.linear;
    o.precond = forms.precond;
    o
}

/// Smallest eigenvalue of the pencil `(S, M)`.
pub fn delta1(forms: &FormSet) -> Result<f64> {
    let pairs = smallest_eigenpairs(&forms.s, &forms.m, &ConstraintSet::empty(), &eig_opts(forms, 1, 0.0))?;
    Ok(pairs[0].value)
}

/// Eigenpairs of `(S, M)`, smallest first.
pub fn base_spectrum(forms: &FormSet, k: usize) -> Result<Vec<EigenPair>> {
    smallest_eigenpairs(&forms.s, &forms.m, &ConstraintSet::empty(), &eig_opts(forms, k, 0.0))
}

/// A shift safely below the spectrum of `A_u`, which bounds the spectra of
/// `A_u` and `E''(u)` from below.
fn lower_shift(forms: &FormSet, a_u: &CsrMatrix) -> Result<f64> {
    let mut o = eig_opts(forms, 1, 0.0);
    o.tol = 1e-6;
    let p = smallest_eigenpairs(a_u, &forms.m, &ConstraintSet::empty(), &o)?;
    Ok(0.9 * p[0].value)
}

#[derive(Debug, Clone)]
pub struct AuSpectrum {
    /// Eigenvalues of the complex operator, each listed once.
    pub eigs: Vec<f64>,
    /// Worse residual of the two real eigenpairs behind each entry.
    pub residuals: Vec<f64>,
    /// Largest relative gap between the two copies of a doubled eigenvalue.
    pub pairing_defect: f64,
    pub lambda: f64,
    /// 1-based position of `lambda` in `eigs`, if present.
    pub lambda_index: Option<usize>,
}

/// Position (1-based) of the entry closest to `lambda` within the match
/// tolerance.
pub fn locate(eigs: &[f64], lambda: f64) -> Option<usize> {
    eigs.iter()
        .enumerate()
        .filter(|(_, e)| (*e - lambda).abs() <= LAMBDA_MATCH_TOL * lambda.abs())
        .min_by(|a, b| (a.1 - lambda).abs().total_cmp(&(b.1 - lambda).abs()))
        .map(|(i, _)| i + 1)
}

/// `k` smallest eigenvalues of `(S + beta M_u, M)` and the position of the
/// ground state eigenvalue among them.
///
/// `A_u` commutes with multiplication by `i`, so in the real splitting every
/// eigenvalue appears twice (`v` and `iv`). The `2k` smallest real pairs are
/// computed and folded back into `k` complex eigenvalues.
pub fn a_u_spectrum(forms: &FormSet, u: &State, k: usize) -> Result<AuSpectrum> {
    let m_u = forms.weighted_mass(u)?;
    let a = forms.a_u(&m_u);
    let lambda = gp_residual_with(forms, u, &m_u)?.lambda;
    let sigma = lower_shift(forms, &a)?;
    let pairs = smallest_eigenpairs(
        &a,
        &forms.m,
        &ConstraintSet::empty(),
        &eig_opts(forms, 2 * k, sigma),
    )?;
    let mut eigs = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    let mut pairing_defect: f64 = 0.0;
    for c in pairs.chunks_exact(2) {
        eigs.push(0.5 * (c[0].value + c[1].value));
        residuals.push(c[0].residual.max(c[1].residual));
        pairing_defect = pairing_defect.max((c[1].value - c[0].value).abs() / c[0].value.abs());
    }
    Ok(AuSpectrum {
        lambda_index: locate(&eigs, lambda),
        residuals,
        pairing_defect,
        eigs,
        lambda,
    })
}

#[derive(Debug, Clone)]
pub struct HessianSpectrum {
    pub pairs: Vec<EigenPair>,
    /// `|<v_1, iu>_M| / (||v_1||_M ||iu||_M)`.
    pub alignment: f64,
}

impl HessianSpectrum {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }
}

/// `k` smallest eigenpairs of `E''(u)` on the M-orthogonal complement of `u`.
pub fn hessian_spectrum(forms: &FormSet, u: &State, k: usize) -> Result<HessianSpectrum> {
    let h = hessian_operator(forms, u)?;
    let a = forms.a_u(&forms.weighted_mass(u)?);
    let sigma = lower_shift(forms, &a)?;
    let cs = ConstraintSet::new(vec![u.coeffs().to_vec()], &forms.m)?;
    let pairs = smallest_eigenpairs(&h, &forms.m, &cs, &eig_opts(forms, k, sigma))?;
    let iu = u.times_i();
    let v1 = &pairs[0].vector;
    let miu = forms.m.apply(iu.coeffs());
    let alignment = dot(v1, &miu).abs() / (forms.m.form(v1, v1).sqrt() * dot(iu.coeffs(), &miu).sqrt());
    Ok(HessianSpectrum { pairs, alignment })
}

#[derive(Debug, Clone)]
pub struct WeightedSpectrum {
    /// Largest-magnitude eigenvalues, by decreasing `|mu|`.
    pub mu: Vec<f64>,
    /// Eigenvectors, M-normalized.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Most negative eigenvalue (lower end of the spectrum).
    pub mu_min: f64,
    /// Largest eigenvalue (upper end of the spectrum).
    pub mu_max: f64,
}

/// The weighted problem `lambda (v, w) - 2 beta (Re(u conj v) u, w) =
/// mu <A_u v, w>` on the M-orthogonal complement of `{u, iu}`.
pub fn weighted_evp(forms: &FormSet, u: &State, lambda: f64, k: usize) -> Result<WeightedSpectrum> {
    let m_u = forms.weighted_mass(u)?;
    let a_u = forms.a_u(&m_u);
    let n_u = forms.n_matrix(u)?;
    let b_w = CsrMatrix::combination(&[(lambda, &forms.m), (-2.0 * forms.beta(), &n_u)]);
    let cs = ConstraintSet::new(vec![u.coeffs().to_vec(), u.times_i().into_coeffs()], &forms.m)?;

    let mut o = eig_opts(forms, k, 0.0);
    o.mode = EigenMode::Direct;
    o.which = Which::LargestMagnitude;
    let top = smallest_eigenpairs(&b_w, &a_u, &cs, &o)?;

    let mut lo = eig_opts(forms, 1, 0.0);
    lo.mode = EigenMode::Direct;
    lo.which = Which::Smallest;
    let bottom = smallest_eigenpairs(&b_w, &a_u, &cs, &lo)?;
    let mut hi = lo.clone();
    hi.which = Which::Largest;
    let upper = smallest_eigenpairs(&b_w, &a_u, &cs, &hi)?;

    let vectors = top
        .iter()
        .map(|p| {
            let nrm = forms.m.form(&p.vector, &p.vector).sqrt();
            p.vector.iter().map(|x| x / nrm).collect()
        })
        .collect();
    Ok(WeightedSpectrum {
        mu: top.iter().map(|p| p.value).collect(),
        vectors,
        residuals: top.iter().map(|p| p.residual).collect(),
        mu_min: bottom[0].value,
        mu_max: upper[0].value,
    })
}

/// `rho*(tau) = max_i |1 - tau + tau mu_i|`.
pub fn rho_star(mu: &[f64], tau: f64) -> f64 {
    mu.iter()
        .map(|m| (1.0 - tau + tau * m).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauLimits {
    /// `1 + (lambda_2 - lambda_1) / (lambda_2 + lambda_1)`, for `mu_1 > 0`.
    pub tau_pos: f64,
    /// `1 + delta_1 / (2 lambda_1 + delta_1)`, for `mu_1 < 0`.
    pub tau_neg: f64,
    /// True when the largest-magnitude `mu` is positive, so `tau_pos` applies.
    pub positive_active: bool,
}

impl TauLimits {
    pub fn active(&self) -> f64 {
        if self.positive_active {
            self.tau_pos
        } else {
            self.tau_neg
        }
    }
}

pub fn tau_limits(mu: &[f64], lambda1: f64, lambda2: f64, delta1: f64) -> TauLimits {
    let lead = mu
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    TauLimits {
        tau_pos: 1.0 + (lambda2 - lambda1) / (lambda2 + lambda1),
        tau_neg: 1.0 + delta1 / (2.0 * lambda1 + delta1),
        positive_active: lead >= 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityProbe {
    /// `min_w [<E''w, w> - lambda ||w||^2 - c ||w||_R^2] / ||w||_R^2`.
    pub worst_margin: f64,
    pub constant: f64,
    pub samples: usize,
}

/// Evaluates `<E''(u) w, w> - lambda ||w||^2 >= c ||w||_R^2`,
/// `c = min{1, lambda_2/lambda_1 - 1} / 2`, on random `w` in the
/// M-orthogonal complement of `{u, iu}`.
pub fn coercivity_probe(
    forms: &FormSet,
    u: &State,
    lambda: f64,
    lambda1: f64,
    lambda2: f64,
    samples: usize,
    seed: u64,
) -> Result<CoercivityProbe> {
    let h = hessian_operator(forms, u)?;
    let c = 0.5 * (lambda2 / lambda1 - 1.0).min(1.0);
    let n = forms.n_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = [u.clone(), u.times_i()];
    let mut worst = f64::INFINITY;
    for s in 0..samples {
        // mix rough and smooth samples: raw noise and a smoothed version
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut w = if s % 2 == 0 {
            raw
        } else {
            forms.solve(&forms.s, &forms.m.apply(&raw), None)?
        };
        // M-orthogonalize against u and iu (they are M-orthogonal to each other)
        for b in &basis {
            let mb = forms.m.apply(b.coeffs());
            let coef = dot(&w, &mb) / dot(b.coeffs(), &mb);
            for (wi, bi) in w.iter_mut().zip(b.coeffs()) {
                *wi -= coef * bi;
            }
        }
        let hw = h.form(&w, &w);
        let mw = forms.m.form(&w, &w);
        let rw = forms.s.form(&w, &w);
        let margin = (hw - lambda * mw - c * rw) / rw;
        worst = worst.min(margin);
    }
    Ok(CoercivityProbe {
        worst_margin: worst,
        constant: c,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundChecks {
    pub mu_upper: bool,
    pub mu_lower: bool,
    pub lambda1_matches: bool,
    pub first_mode_is_phase: bool,
    pub coercivity: bool,
}

impl BoundChecks {
    pub fn all(&self) -> bool {
        self.mu_upper && self.mu_lower && self.lambda1_matches && self.first_mode_is_phase && self.coercivity
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub k_a_u: usize,
    pub k_hessian: usize,
    pub k_mu: usize,
    pub coercivity_samples: usize,
    pub seed: u64,
    /// Slack for the `mu` bounds.
    pub bound_slack: f64,
    /// Relative tolerance for `lambda_1 = lambda`.
    pub lambda_tol: f64,
    /// Tolerance on `1 - alignment` of the first Hessian mode with `iu`.
    pub alignment_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            k_a_u: 20,
            k_hessian: 6,
            k_mu: 5,
            coercivity_samples: 50,
            seed: 7,
            bound_slack: 1e-7,
            lambda_tol: 1e-8,
            alignment_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub lambda: f64,
    pub residual: f64,
    pub a_u: AuSpectrum,
    pub hess_eigs: Vec<f64>,
    pub hess_residuals: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alignment: f64,
    pub mu: Vec<f64>,
    pub mu_residuals: Vec<f64>,
    pub mu_min: f64,
    pub mu_max: f64,
    pub delta1: f64,
    pub rho_star_1: f64,
    pub rho_star_samples: Vec<(f64, f64)>,
    pub tau_limits: TauLimits,
    pub coercivity: CoercivityProbe,
    pub checks: BoundChecks,
}

pub fn spectral_report(forms: &FormSet, u: &State, opts: &SpectralOptions) -> Result<SpectralReport> {
    let m_u = forms.weighted_mass(u)?;
    let res = gp_residual_with(forms, u, &m_u)?;
    let lambda = res.lambda;
    let a_u = a_u_spectrum(forms, u, opts.k_a_u)?;
    let hs = hessian_spectrum(forms, u, opts.k_hessian.max(2))?;
    let hess_eigs = hs.values();
    let (lambda1, lambda2) = (hess_eigs[0], hess_eigs[1]);
    let d1 = delta1(forms)?;
    let ws = weighted_evp(forms, u, lambda, opts.k_mu)?;
    let coerc = coercivity_probe(forms, u, lambda, lambda1, lambda2, opts.coercivity_samples, opts.seed)?;
    let upper = lambda1 / lambda2;
    let lower = -lambda1 / (lambda1 + d1);
    let checks = BoundChecks {
        mu_upper: ws.mu_max <= upper + opts.bound_slack && ws.mu.iter().all(|m| *m <= upper + opts.bound_slack),
        mu_lower: ws.mu_min >= lower - opts.bound_slack && ws.mu.iter().all(|m| *m >= lower - opts.bound_slack),
        lambda1_matches: (lambda1 - lambda).abs() <= opts.lambda_tol * lambda.abs(),
        first_mode_is_phase: hs.alignment >= 1.0 - opts.alignment_tol,
        coercivity: coerc.worst_margin >= -1e-8,
    };
    let mut all_mu = ws.mu.clone();
    all_mu.push(ws.mu_min);
    all_mu.push(ws.mu_max);
    let rho_star_samples = (0..=40)
        .map(|i| {
            let t = 2.0 * i as f64 / 40.0;
            (t, rho_star(&all_mu, t))
        })
        .collect();
    if ws.mu.is_empty() {
        return Err(Error::InvalidParams("weighted eigenproblem returned no values".into()));
    }
    Ok(SpectralReport {
        lambda,
        residual: res.res_l2,
        hess_residuals: hs.pairs.iter().map(|p| p.residual).collect(),
        a_u,
        hess_eigs,
        lambda1,
        lambda2,
        alignment: hs.alignment,
        rho_star_1: rho_star(&all_mu, 1.0),
        mu: ws.mu.clone(),
        mu_residuals: ws.residuals.clone(),
        mu_min: ws.mu_min,
        mu_max: ws.mu_max,
        delta1: d1,
        rho_star_samples,
        tau_limits: tau_limits(&ws.mu, lambda1, lambda2, d1),
        coercivity: coerc,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_star_edge_cases() {
        let mu = [0.99726, -0.3, 0.5];
        assert!((rho_star(&mu, 1.0) - 0.99726).abs() < 1e-15);
        assert_eq!(rho_star(&mu, 0.0), 1.0);
        let zero = [0.0, 0.0];
        for t in [0.2, 1.0, 1.7] {
            assert!((rho_star(&zero, t) - (1.0 - t).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn tau_limit_formulas() {
        let l = tau_limits(&[0.9, -0.2], 4.0, 5.0, 2.0);
        assert!((l.tau_pos - (1.0 + 1.0 / 9.0)).abs() < 1e-15);
        assert!((l.tau_neg - (1.0 + 2.0 / 10.0)).abs() < 1e-15);
        assert!(l.positive_active);
        let l = tau_limits(&[0.1, -0.5], 4.0, 5.0, 2.0);
        assert!(!l.positive_active);
        assert_eq!(l.active(), l.tau_neg);
    }

    #[test]
    fn locate_lambda() {
        let e = [1.0, 2.0, 4.451867515, 5.0];
        assert_eq!(locate(&e, 4.4518675), Some(3));
        assert_eq!(locate(&e, 3.0), None);
    }
}
