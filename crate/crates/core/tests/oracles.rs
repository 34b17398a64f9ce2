//! Independent dense and quadrature oracles for the assembled forms, the
//! linear solver and the constrained eigensolver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgpe_core::mesh::vortex_profile;
use rgpe_core::solver::{run, RunOptions, StepPolicy, StopCriteria};
use rgpe_core::spectral::{a_u_spectrum, hessian_operator, hessian_spectrum};
use rgpe_core::{assemble_base, build_mesh, interpolate, FormSet, ModelParams, State};

fn forms(n: usize, params: ModelParams) -> FormSet {
    assemble_base(Arc::new(build_mesh(6.0, 6.0, n).unwrap()), params).unwrap()
}

fn random_state(n_dofs: usize, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    State::from_coeffs((0..n_dofs).map(|_| rng.gen::<f64>() - 0.5).collect())
}

/// Gauss-Legendre nodes and weights on [0, 1], five points.
fn gauss5() -> [(f64, f64); 5] {
    let x = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    let w = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    std::array::from_fn(|i| (0.5 * (x[i] + 1.0), 0.5 * w[i]))
}

/// Energy `1/2 int |grad v|^2 + V |v|^2 - Omega conj(v) L v + beta/2 |v|^4`
/// and mass, integrated with a collapsed tensor Gauss rule on every triangle
/// straight from the node values.
fn oracle_energy_mass(f: &FormSet, v: &State) -> (f64, f64) {
    let mesh = &f.mesh;
    let p = &f.params;
    let value = |node: usize| mesh.interior_index[node].map_or(Complex64::new(0.0, 0.0), |k| v.node_value(k));
    let rule = gauss5();
    let (mut energy, mut mass) = (0.0, 0.0);
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| mesh.node_coords[i]);
        let [va, vb, vc] = tri.map(value);
        let (e1, e2) = ([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]);
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        // v = va + (vb - va) s + (vc - va) t in reference coordinates
        let (ds, dt) = (vb - va, vc - va);
        let vx = (ds * e2[1] - dt * e1[1]) / det;
        let vy = (dt * e1[0] - ds * e2[0]) / det;
        let grad2 = vx.norm_sqr() + vy.norm_sqr();
        for &(xi, wi) in &rule {
            for &(eta, wj) in &rule {
                let (s, t) = (xi, eta * (1.0 - xi));
                let w = wi * wj * (1.0 - xi) * det.abs();
                let x = a[0] + s * e1[0] + t * e2[0];
                let y = a[1] + s * e1[1] + t * e2[1];
                let val = va + ds * s + dt * t;
                let lv = Complex64::new(0.0, -1.0) * (x * vy - y * vx);
                let density = val.norm_sqr();
                let rot = (val.conj() * lv).re;
                energy += 0.5
                    * w
                    * (grad2 + p.potential.eval(x, y) * density - p.omega * rot + 0.5 * p.beta * density * density);
                mass += w * density;
            }
        }
    }
    (energy, mass)
}

#[test]
fn energy_and_mass_match_quadrature_oracle() {
    for (n, params) in [
        (6, ModelParams::rotating_reference()),
        (9, ModelParams::rotating_reference()),
        (7, ModelParams::linear_free()),
    ] {
        let f = forms(n, params);
        for seed in 0..3 {
            let v = random_state(f.n_dofs(), seed);
            let (e, m) = oracle_energy_mass(&f, &v);
            assert!((f.energy(&v) - e).abs() <= 1e-12 * e.abs(), "n={n}: {} vs {e}", f.energy(&v));
            assert!((f.mass(&v) - m).abs() <= 1e-13 * m, "n={n}: {} vs {m}", f.mass(&v));
        }
    }
}

#[test]
fn energy_of_interpolated_vortex_matches_oracle() {
    let f = forms(16, ModelParams::rotating_reference());
    let v = f.normalize(&interpolate(&f.mesh, vortex_profile).unwrap()).unwrap();
    let (e, m) = oracle_energy_mass(&f, &v);
    assert!((f.energy(&v) - e).abs() <= 1e-12 * e);
    assert!((m - 1.0).abs() <= 1e-13);
}

#[test]
fn assembled_matrices_are_symmetric() {
    let f = forms(8, ModelParams::rotating_reference());
    let u = random_state(f.n_dofs(), 4);
    for m in [&f.s, &f.m, &f.k, &f.weighted_mass(&u).unwrap(), &f.n_matrix(&u).unwrap()] {
        assert!(m.asymmetry() <= 1e-14 * m.max_abs());
    }
}

#[test]
fn pcg_solve_matches_dense_lu() {
    let f = forms(10, ModelParams::rotating_reference());
    let u = f.normalize(&interpolate(&f.mesh, vortex_profile).unwrap()).unwrap();
    let a = f.a_u(&f.weighted_mass(&u).unwrap());
    let b = f.m.apply(random_state(f.n_dofs(), 9).coeffs());
    let x = f.solve(&a, &b, None).unwrap();
    let dense = a.to_dense().lu().solve(&DVector::from_column_slice(&b)).unwrap();
    let err = (DVector::from_column_slice(&x) - &dense).norm() / dense.norm();
    assert!(err <= 1e-10, "relative error {err:e}");
}

/// Orthonormal basis of `{x : c^T x = 0}` from a Householder reflector.
fn complement_basis(c: &DVector<f64>) -> DMatrix<f64> {
    let n = c.len();
    let mut w = c.clone();
    w[0] -= c.norm();
    let h = if w.norm() == 0.0 {
        DMatrix::identity(n, n)
    } else {
        let w = w.normalize();
        DMatrix::identity(n, n) - 2.0 * &w * w.transpose()
    };
    h.columns(1, n - 1).into_owned()
}

/// Eigenvalues of the symmetric pencil `(A, B)` restricted to the range of
/// `q`, ascending.
fn dense_pencil(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>) -> Vec<f64> {
    let ar = q.transpose() * a * q;
    let br = q.transpose() * b * q;
    let l = br.cholesky().unwrap().l();
    let li = l.clone().try_inverse().unwrap();
    let c = &li * ar * li.transpose();
    let c = 0.5 * (&c + c.transpose());
    let mut e: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn settled_state(f: &FormSet) -> State {
    let u0 = interpolate(&f.mesh, vortex_profile).unwrap();
    let stop = StopCriteria {
        max_iters: 30,
        ..Default::default()
    };
    run(f, &u0, &StepPolicy::adaptive(), &stop, None, &RunOptions::default())
        .unwrap()
        .final_state
}

#[test]
fn constrained_hessian_spectrum_matches_dense() {
    let f = forms(10, ModelParams::rotating_reference());
    let u = settled_state(&f);
    let h = hessian_operator(&f, &u).unwrap().to_dense();
    let m = f.m.to_dense();
    let c = &m * DVector::from_column_slice(u.coeffs());
    let expect = dense_pencil(&h, &m, &complement_basis(&c));
    let got = hessian_spectrum(&f, &u, 5).unwrap().values();
    for (g, e) in got.iter().zip(&expect) {
        assert!((g - e).abs() <= 1e-8 * e.abs(), "{got:?} vs {:?}", &expect[..5]);
    }
}

#[test]
fn a_u_spectrum_matches_dense_and_pairs() {
    let f = forms(10, ModelParams::rotating_reference());
    let u = settled_state(&f);
    let a = f.a_u(&f.weighted_mass(&u).unwrap()).to_dense();
    let m = f.m.to_dense();
    let n = m.nrows();
    let expect = dense_pencil(&a, &m, &DMatrix::identity(n, n));
    let spec = a_u_spectrum(&f, &u, 4).unwrap();
    for (k, g) in spec.eigs.iter().enumerate() {
        // complex eigenvalue k appears as real eigenvalues 2k and 2k + 1
        assert!((g - expect[2 * k]).abs() <= 1e-8 * g.abs());
        assert!((g - expect[2 * k + 1]).abs() <= 1e-8 * g.abs());
    }
    assert!(spec.pairing_defect <= 1e-8);
}
