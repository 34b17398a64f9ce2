//! Symmetric linear solves and constrained generalized eigenproblems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::state::{dot, norm2};

/// A symmetric linear map on real coefficient vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        CsrMatrix::dim(self)
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y)
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

/// `sum_k c_k A_k`, applied term by term.
pub struct WeightedSum<'a> {
    pub terms: Vec<(f64, &'a dyn LinearOperator)>,
}

impl<'a> WeightedSum<'a> {
    pub fn new(terms: Vec<(f64, &'a dyn LinearOperator)>) -> Self {
        assert!(!terms.is_empty());
        Self { terms }
    }
}

impl LinearOperator for WeightedSum<'_> {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut tmp = vec![0.0; y.len()];
        for (c, op) in &self.terms {
            op.apply_into(x, &mut tmp);
            for (yi, ti) in y.iter_mut().zip(&tmp) {
                *yi += c * ti;
            }
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for (c, op) in &self.terms {
            for (di, oi) in d.iter_mut().zip(op.diagonal()) {
                *di += c * oi;
            }
        }
        d
    }
}

pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(op: &dyn LinearOperator) -> Self {
        let inv_diag = op
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    None,
    Jacobi,
}

impl PrecondKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "jacobi" => Some(Self::Jacobi),
            _ => None,
        }
    }

    pub fn build(self, op: &dyn LinearOperator) -> Box<dyn Preconditioner + '_> {
        match self {
            PrecondKind::None => Box::new(Identity),
            PrecondKind::Jacobi => Box::new(Jacobi::new(op)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative residual target `||Ax - b|| <= tol ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator. `x0` is an optional starting guess.
pub fn solve_spd(
    a: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolveOptions,
    pc: &dyn Preconditioner,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let target = opts.tol * bnorm;

    let mut x = match x0 {
        Some(g) if g.len() == n => g.to_vec(),
        _ => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    // The recursive residual drifts from the true one; on apparent
    // convergence the true residual is recomputed and CG restarted if needed.
    for _restart in 0..4 {
        a.apply_into(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let true_res = norm2(&r);
        if true_res <= target {
            return Ok((
                x,
                SolveStats {
                    iterations,
                    residual: true_res / bnorm,
                },
            ));
        }
        pc.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        loop {
            if iterations >= opts.max_iter {
                a.apply_into(&x, &mut r);
                let res = r.iter().zip(b).map(|(ri, bi)| (bi - ri).powi(2)).sum::<f64>().sqrt();
                return Err(Error::Convergence {
                    iterations,
                    residual: res / bnorm,
                    best: x,
                });
            }
            a.apply_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                return Err(Error::Convergence {
                    iterations,
                    residual: norm2(&r) / bnorm,
                    best: x,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if norm2(&r) <= target {
                break;
            }
            pc.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    a.apply_into(&x, &mut r);
    let res = r.iter().zip(b).map(|(ri, bi)| (bi - ri).powi(2)).sum::<f64>().sqrt() / bnorm;
    if res <= opts.tol * 10.0 {
        Ok((
            x,
            SolveStats {
                iterations,
                residual: res,
            },
        ))
    } else {
        Err(Error::Convergence {
            iterations,
            residual: res,
            best: x,
        })
    }
}

/// Jacobi-preconditioned solve with default options.
pub fn solve(a: &dyn LinearOperator, b: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>> {
    let pc = Jacobi::new(a);
    solve_spd(a, b, x0, &SolveOptions::default(), &pc).map(|(x, _)| x)
}

/// Linear constraints `x^T (metric c_j) = 0`, stored as the functionals
/// `f_j = metric c_j`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub vectors: Vec<Vec<f64>>,
    pub functionals: Vec<Vec<f64>>,
    pub gram_condition: f64,
}

impl ConstraintSet {
    pub const MAX_CONDITION: f64 = 1e12;

    pub fn empty() -> Self {
        Self {
            vectors: Vec::new(),
            functionals: Vec::new(),
            gram_condition: 1.0,
        }
    }

    pub fn new(vectors: Vec<Vec<f64>>, metric: &dyn LinearOperator) -> Result<Self> {
        let functionals: Vec<Vec<f64>> = vectors.iter().map(|c| metric.apply(c)).collect();
        let m = vectors.len();
        if m == 0 {
            return Ok(Self::empty());
        }
        let gram = DMatrix::from_fn(m, m, |i, j| dot(&vectors[i], &functionals[j]));
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 0.0 || max / min > Self::MAX_CONDITION {
            return Err(Error::Constraint(format!(
                "Gram matrix in the constraint metric has eigenvalues in [{min:.3e}, {max:.3e}]"
            )));
        }
        Ok(Self {
            vectors,
            functionals,
            gram_condition: max / min,
        })
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    /// Removes the component of `r` in the span of the functionals
    /// (Euclidean least squares).
    pub fn project_out_functionals(&self, r: &mut [f64]) {
        let m = self.len();
        if m == 0 {
            return;
        }
        let g = DMatrix::from_fn(m, m, |i, j| dot(&self.functionals[i], &self.functionals[j]));
        let rhs = DVector::from_fn(m, |i, _| dot(&self.functionals[i], r));
        let alpha = g.lu().solve(&rhs).expect("independent functionals");
        for (j, f) in self.functionals.iter().enumerate() {
            for (ri, fi) in r.iter_mut().zip(f) {
                *ri -= alpha[j] * fi;
            }
        }
    }

    /// Removes the component of `x` along the constraint vectors so that
    /// `F^T x = 0` (oblique projection along the span of the vectors).
    pub fn project_into(&self, x: &mut [f64]) {
        let m = self.len();
        if m == 0 {
            return;
        }
        let g = DMatrix::from_fn(m, m, |i, j| dot(&self.functionals[i], &self.vectors[j]));
        let rhs = DVector::from_fn(m, |i, _| dot(&self.functionals[i], x));
        let alpha = g.lu().solve(&rhs).expect("nonsingular constraint Gram matrix");
        for (j, c) in self.vectors.iter().enumerate() {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi -= alpha[j] * ci;
            }
        }
    }

    /// Largest `|x^T f_j| / (||x||_B ||c_j||_B)`.
    pub fn violation(&self, x: &[f64], b: &dyn LinearOperator) -> f64 {
        let xb = dot(x, &b.apply(x)).sqrt();
        self.vectors
            .iter()
            .zip(&self.functionals)
            .map(|(c, f)| dot(x, f).abs() / (xb * dot(c, &b.apply(c)).sqrt()))
            .fold(0.0, f64::max)
    }
}

/// Projector onto `{x : F^T x = 0}` along the range of `K F`.
struct KProjector {
    z: Vec<Vec<f64>>,
    functionals: Vec<Vec<f64>>,
    g_inv: DMatrix<f64>,
}

impl KProjector {
    fn new(cs: &ConstraintSet, inner: &InnerSolver) -> Result<Self> {
        let z: Vec<Vec<f64>> = cs
            .functionals
            .iter()
            .map(|f| inner.solve(f, None))
            .collect::<Result<_>>()?;
        let m = z.len();
        let g = DMatrix::from_fn(m, m, |i, j| dot(&cs.functionals[i], &z[j]));
        let g = (&g + g.transpose()) * 0.5;
        let g_inv = g
            .try_inverse()
            .ok_or_else(|| Error::Constraint("singular projected Gram matrix".into()))?;
        Ok(Self {
            z,
            functionals: cs.functionals.clone(),
            g_inv,
        })
    }

    fn apply(&self, y: &mut [f64]) {
        let m = self.z.len();
        if m == 0 {
            return;
        }
        let ft = DVector::from_fn(m, |i, _| dot(&self.functionals[i], y));
        let coef = &self.g_inv * ft;
        for (j, zj) in self.z.iter().enumerate() {
            for (yi, zi) in y.iter_mut().zip(zj) {
                *yi -= coef[j] * zi;
            }
        }
    }
}

struct InnerSolver<'a> {
    op: &'a dyn LinearOperator,
    pc: Box<dyn Preconditioner + 'a>,
    opts: SolveOptions,
}

impl InnerSolver<'_> {
    fn solve(&self, b: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>> {
        solve_spd(self.op, b, x0, &self.opts, &*self.pc).map(|(x, _)| x)
    }
}

struct Shifted<'a> {
    a: &'a dyn LinearOperator,
    b: &'a dyn LinearOperator,
    sigma: f64,
}

impl LinearOperator for Shifted<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.a.apply_into(x, y);
        if self.sigma != 0.0 {
            let bx = self.b.apply(x);
            for (yi, bi) in y.iter_mut().zip(bx) {
                *yi -= self.sigma * bi;
            }
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        let da = self.a.diagonal();
        if self.sigma == 0.0 {
            return da;
        }
        da.into_iter()
            .zip(self.b.diagonal())
            .map(|(a, b)| a - self.sigma * b)
            .collect()
    }
}

/// How the Krylov space is generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenMode {
    /// Inner solves with `A - sigma B`, which must be positive definite.
    ShiftInvert { sigma: f64 },
    /// Inner solves with `B`; reaches both ends of the spectrum.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
    LargestMagnitude,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub k: usize,
    pub tol: f64,
    pub mode: EigenMode,
    pub which: Which,
    pub block: usize,
    pub max_basis: usize,
    pub max_expansions: usize,
    pub seed: u64,
    pub inner: SolveOptions,
    pub precond: PrecondKind,
}

impl EigenOptions {
    pub fn smallest(k: usize) -> Self {
        Self {
            k,
            tol: 1e-9,
            mode: EigenMode::ShiftInvert { sigma: 0.0 },
            which: Which::Smallest,
            block: 4,
            max_basis: (2 * k + 24).max(40),
            max_expansions: 4000,
            seed: 0x5eed,
            inner: SolveOptions::default(),
            precond: PrecondKind::Jacobi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// `||A x - theta B x||` (constraint-projected) divided by `||B x||`.
    pub residual: f64,
}

/// Eigenpairs of `A x = theta B x` restricted to the constraint subspace,
/// `B` positive definite. Returned vectors are B-orthonormal and ordered
/// ascending by value (`Smallest`, `Largest`) or by descending magnitude
/// (`LargestMagnitude`).
///
/// The method is a thick-restarted block Krylov-Schur-type iteration:
/// expansion vectors are `P K (A x - theta B x)` with `K` the inverse of the
/// inner operator and `P` the `K`-oblique projector onto the constraint
/// subspace, followed by Rayleigh-Ritz on the explicit pencil.
pub fn smallest_eigenpairs(
    a: &dyn LinearOperator,
    b: &dyn LinearOperator,
    constraints: &ConstraintSet,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.dim(),
        });
    }
    let k = opts.k;
    if k == 0 {
        return Err(Error::InvalidParams("eigenpair count must be at least 1".into()));
    }
    let avail = n.saturating_sub(constraints.len());
    if k > avail {
        return Err(Error::InvalidParams(format!(
            "requested {k} eigenpairs from a space of dimension {avail}"
        )));
    }
    if avail <= opts.max_basis.max(k + 2 * opts.block) {
        return dense_eigenpairs(a, b, constraints, opts);
    }

    let shifted;
    let inner_op: &dyn LinearOperator = match opts.mode {
        EigenMode::ShiftInvert { sigma } => {
            shifted = Shifted { a, b, sigma };
            &shifted
        }
        EigenMode::Direct => b,
    };
    let inner = InnerSolver {
        op: inner_op,
        pc: opts.precond.build(inner_op),
        opts: opts.inner,
    };
    let proj = KProjector::new(constraints, &inner)?;

    let block = opts.block.max(1).min(avail);
    let max_basis = opts.max_basis.max(k + 2 * block).min(avail);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut basis = Basis::default();
    // Starting block: smoothed random vectors inside the constraint subspace.
    for _ in 0..(k + block).min(max_basis) {
        let r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut v = match opts.mode {
            EigenMode::ShiftInvert { .. } => inner.solve(&b.apply(&r), None)?,
            EigenMode::Direct => r,
        };
        proj.apply(&mut v);
        basis.push(v, a, b, constraints);
    }

    let mut expansions = 0usize;
    let mut worst;
    loop {
        let ritz = basis.rayleigh_ritz(opts.which, constraints);
        let wanted = &ritz[..k.min(ritz.len())];
        let n_conv = wanted.iter().filter(|p| p.residual <= opts.tol).count();
        worst = wanted.iter().map(|p| p.residual).fold(0.0, f64::max);
        if wanted.len() == k && n_conv == k {
            let mut out: Vec<EigenPair> = wanted.to_vec();
            if opts.which == Which::Smallest || opts.which == Which::Largest {
                out.sort_by(|x, y| x.value.total_cmp(&y.value));
            }
            return Ok(out);
        }
        if expansions >= opts.max_expansions {
            return Err(Error::EigenConvergence {
                requested: k,
                converged: n_conv,
                worst_residual: worst,
                partial: wanted.iter().map(|p| (p.value, p.vector.clone())).collect(),
            });
        }

        // Expansion directions from the leading unconverged Ritz pairs.
        let targets: Vec<&EigenPair> = ritz
            .iter()
            .take(k + block)
            .filter(|p| p.residual > opts.tol)
            .take(block)
            .collect();
        let mut new_dirs = Vec::with_capacity(targets.len());
        for p in targets {
            let ax = a.apply(&p.vector);
            let bx = b.apply(&p.vector);
            let r: Vec<f64> = ax.iter().zip(&bx).map(|(x, y)| x - p.value * y).collect();
            let mut t = inner.solve(&r, None)?;
            proj.apply(&mut t);
            new_dirs.push(t);
            expansions += 1;
        }

        if basis.len() + new_dirs.len() > max_basis {
            let keep = (max_basis - new_dirs.len()).max(k).min(ritz.len());
            basis.restart(&ritz[..keep], a, b, constraints);
        }
        let mut added = 0;
        for t in new_dirs {
            if basis.push(t, a, b, constraints) {
                added += 1;
            }
        }
        if added == 0 {
            // Stagnation: inject a fresh random direction.
            let r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut v = inner.solve(&b.apply(&r), None)?;
            proj.apply(&mut v);
            if !basis.push(v, a, b, constraints) {
                return Err(Error::EigenConvergence {
                    requested: k,
                    converged: n_conv,
                    worst_residual: worst,
                    partial: wanted.iter().map(|p| (p.value, p.vector.clone())).collect(),
                });
            }
        }
    }
}

/// B-orthonormal search space with cached operator images.
#[derive(Default)]
struct Basis {
    v: Vec<Vec<f64>>,
    av: Vec<Vec<f64>>,
    bv: Vec<Vec<f64>>,
}

impl Basis {
    fn len(&self) -> usize {
        self.v.len()
    }

    /// B-orthogonalizes `x` against the basis (two passes) and appends it.
    /// Returns false when `x` is numerically dependent.
    fn push(
        &mut self,
        mut x: Vec<f64>,
        a: &dyn LinearOperator,
        b: &dyn LinearOperator,
        cs: &ConstraintSet,
    ) -> bool {
        // Rounding in the expansion drifts out of the constraint subspace;
        // even a tiny drift pollutes residuals through stiff directions.
        cs.project_into(&mut x);
        let mut bx = b.apply(&x);
        let norm0 = dot(&x, &bx).max(0.0).sqrt();
        if norm0 == 0.0 || !norm0.is_finite() {
            return false;
        }
        for _ in 0..2 {
            for (vj, bvj) in self.v.iter().zip(&self.bv) {
                let c = dot(bvj, &x);
                for (xi, vi) in x.iter_mut().zip(vj) {
                    *xi -= c * vi;
                }
                for (bi, bvi) in bx.iter_mut().zip(bvj) {
                    *bi -= c * bvi;
                }
            }
        }
        bx = b.apply(&x);
        let nrm = dot(&x, &bx).max(0.0).sqrt();
        if nrm <= 1e-10 * norm0 {
            return false;
        }
        let inv = 1.0 / nrm;
        x.iter_mut().for_each(|xi| *xi *= inv);
        bx.iter_mut().for_each(|bi| *bi *= inv);
        self.av.push(a.apply(&x));
        self.bv.push(bx);
        self.v.push(x);
        true
    }

    fn restart(
        &mut self,
        keep: &[EigenPair],
        a: &dyn LinearOperator,
        b: &dyn LinearOperator,
        cs: &ConstraintSet,
    ) {
        self.v.clear();
        self.av.clear();
        self.bv.clear();
        for p in keep {
            self.push(p.vector.clone(), a, b, cs);
        }
    }

    fn rayleigh_ritz(&self, which: Which, cs: &ConstraintSet) -> Vec<EigenPair> {
        let m = self.len();
        let h = DMatrix::from_fn(m, m, |i, j| dot(&self.v[i], &self.av[j]));
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        match which {
            Which::Smallest => order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])),
            Which::Largest => order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i])),
            Which::LargestMagnitude => order.sort_by(|&i, &j| {
                eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs())
            }),
        }
        let n = self.v[0].len();
        let mut pairs = Vec::with_capacity(m);
        for &c in &order {
            let theta = eig.eigenvalues[c];
            let y = eig.eigenvectors.column(c);
            let mut x = vec![0.0; n];
            let mut ax = vec![0.0; n];
            let mut bx = vec![0.0; n];
            for j in 0..m {
                let yj = y[j];
                for i in 0..n {
                    x[i] += yj * self.v[j][i];
                    ax[i] += yj * self.av[j][i];
                    bx[i] += yj * self.bv[j][i];
                }
            }
            let mut r: Vec<f64> = ax.iter().zip(&bx).map(|(p, q)| p - theta * q).collect();
            cs.project_out_functionals(&mut r);
            let residual = norm2(&r) / norm2(&bx);
            pairs.push(EigenPair {
                value: theta,
                vector: x,
                residual,
            });
        }
        pairs
    }
}

/// Dense fallback for small systems: explicit basis of the constraint
/// subspace, Cholesky reduction and a symmetric eigendecomposition.
fn dense_eigenpairs(
    a: &dyn LinearOperator,
    b: &dyn LinearOperator,
    cs: &ConstraintSet,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    let to_dense = |op: &dyn LinearOperator| {
        let mut d = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = op.apply(&e);
            e[j] = 0.0;
            for i in 0..n {
                d[(i, j)] = col[i];
            }
        }
        (&d + d.transpose()) * 0.5
    };
    let ad = to_dense(a);
    let bd = to_dense(b);
    let q = null_space_basis(cs, n);
    let at = q.transpose() * &ad * &q;
    let bt = q.transpose() * &bd * &q;
    let chol = bt
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParams("B is not positive definite on the constraint subspace".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParams("singular Cholesky factor".into()))?;
    let c = &linv * at * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let m = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    match opts.which {
        Which::Smallest => order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])),
        Which::Largest => order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i])),
        Which::LargestMagnitude => {
            order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()))
        }
    }
    let mut out = Vec::with_capacity(opts.k);
    for &c in order.iter().take(opts.k) {
        let y = linv.transpose() * eig.eigenvectors.column(c);
        let x = &q * y;
        let mut x: Vec<f64> = x.iter().copied().collect();
        let bx = b.apply(&x);
        let nb = dot(&x, &bx).sqrt();
        x.iter_mut().for_each(|v| *v /= nb);
        let theta = eig.eigenvalues[c];
        let ax = a.apply(&x);
        let bx = b.apply(&x);
        let mut r: Vec<f64> = ax.iter().zip(&bx).map(|(p, q)| p - theta * q).collect();
        cs.project_out_functionals(&mut r);
        out.push(EigenPair {
            value: theta,
            vector: x,
            residual: norm2(&r) / norm2(&bx),
        });
    }
    if opts.which != Which::LargestMagnitude {
        out.sort_by(|x, y| x.value.total_cmp(&y.value));
    }
    Ok(out)
}

/// Orthonormal basis (columns) of `{x : f_j^T x = 0}`.
fn null_space_basis(cs: &ConstraintSet, n: usize) -> DMatrix<f64> {
    let m = cs.len();
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    let f = DMatrix::from_fn(n, m, |i, j| cs.functionals[j][i]);
    let mut q = DMatrix::<f64>::identity(n, n);
    f.qr().q_tr_mul(&mut q);
    // rows of Q^T are the full orthonormal basis; the trailing ones span the null space
    q.rows(m, n - m).transpose()
}
