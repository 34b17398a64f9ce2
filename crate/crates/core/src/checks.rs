//! Invariant battery shared by the `check` command and the test suites.
//!
//! Every function returns a measured defect; callers compare against their
//! own tolerances.

use crate::error::Result;
use crate::forms::FormSet;
use crate::solver::{
    auxiliary_step, descent_direction, gradient_step, phase_factor, phi_tau, IterationRecord,
    StepPolicy,
};
use crate::state::State;

/// Worst per-step defects over a sequence of iteration records.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDefects {
    pub identity: f64,
    pub tangency: f64,
    /// `max |  ||u^{n+1}|| - 1 |`.
    pub mass: f64,
    pub pythagoras: f64,
    /// Largest energy increase `E(u^{n+1}) - E(u^n)` (negative if every
    /// step decreased the energy).
    pub max_increase: f64,
}

pub fn step_defects(records: &[IterationRecord]) -> StepDefects {
    let mut d = StepDefects {
        max_increase: f64::NEG_INFINITY,
        ..Default::default()
    };
    for r in records {
        if r.energy_identity_gap.is_finite() {
            d.identity = d.identity.max(r.energy_identity_gap);
        }
        d.tangency = d.tangency.max(r.tangency.abs());
        d.mass = d.mass.max((r.mass_after - 1.0).abs());
        d.pythagoras = d.pythagoras.max(r.pythagoras_gap.abs());
        d.max_increase = d.max_increase.max(r.energy - r.energy_prev);
    }
    d
}

/// Largest `|g(tau) - E(R(u + tau d))|` over `taus`, where `g` is the
/// closed-form energy along the retraction and the right side is evaluated
/// by direct quadrature of the retracted state.
pub fn line_search_defect(forms: &FormSet, u: &State, taus: &[f64]) -> Result<f64> {
    let dir = descent_direction(forms, u)?;
    let m_u = forms.weighted_mass(u)?;
    let (coeffs, _, _) = forms.quartic_integrals(u, &dir.d, &m_u)?;
    let mut worst: f64 = 0.0;
    for &t in taus {
        let direct = forms.energy(&forms.normalize(&u.axpy(t, &dir.d))?);
        worst = worst.max((coeffs.g(t) - direct).abs());
    }
    Ok(worst)
}

/// Runs `steps` iterations from `u0` and, independently, from
/// `exp(i omega) u0`, and returns the largest M-norm distance between the
/// rotated run's `n`-th iterate and `exp(i omega) u^n`.
pub fn gauge_defect(forms: &FormSet, u0: &State, omega: f64, policy: &StepPolicy, steps: usize) -> Result<f64> {
    let mut u = forms.normalize(u0)?;
    let mut v = u.rotate(omega);
    let mut m_u = forms.weighted_mass(&u)?;
    let mut m_v = forms.weighted_mass(&v)?;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let a = gradient_step(forms, &u, policy, &m_u, None)?;
        let b = gradient_step(forms, &v, policy, &m_v, None)?;
        u = a.state;
        v = b.state;
        m_u = a.m_u;
        m_v = b.m_u;
        worst = worst.max(forms.l2_norm(&v.sub(&u.rotate(omega))));
    }
    Ok(worst)
}

/// Compares the phase-locked iteration `v^{n+1} = Theta_u(v^n) phi_tau(v^n)`
/// started at `u0` with the plain iterates through
/// `v^{n+1} = Theta_u(u^n) u^{n+1}`, returning the worst M-norm defect.
pub fn auxiliary_defect(forms: &FormSet, u0: &State, u_ref: &State, tau: f64, steps: usize) -> Result<f64> {
    let mut u = forms.normalize(u0)?;
    let mut v = u.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let theta = phase_factor(forms, &u, u_ref, tau)?;
        let u_next = phi_tau(forms, &u, tau)?;
        v = auxiliary_step(forms, &v, u_ref, tau)?;
        worst = worst.max(forms.l2_norm(&v.sub(&u_next.scale_complex(theta))));
        u = u_next;
    }
    Ok(worst)
}
