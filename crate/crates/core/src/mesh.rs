//! Structured P1 triangulation of a centered rectangle `[-Lx, Lx] x [-Ly, Ly]`.
//!
//! Nodes are numbered row-major by `(y, x)`. Only interior nodes carry degrees
//! of freedom (homogeneous Dirichlet data); each interior node owns two real
//! coefficients, the real and the imaginary part of the nodal value, stored
//! interleaved as `[re_0, im_0, re_1, im_1, ...]`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::state::State;

/// How each square cell of the grid is cut into two triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalSplit {
    /// Every cell is cut along the diagonal from its lower-left to its
    /// upper-right corner.
    Right,
}

impl DiagonalSplit {
    pub fn tag(self) -> u32 {
        match self {
            DiagonalSplit::Right => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(DiagonalSplit::Right),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DiagonalSplit::Right => "right-diagonal",
        }
    }
}

/// Symmetric quadrature rule on the reference triangle, given in barycentric
/// coordinates with weights normalized to sum to one (multiply by the element
/// area to integrate).
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl Quadrature {
    /// Six-point rule of polynomial order four. Every product of four P1
    /// functions is integrated exactly.
    pub fn order4() -> Self {
        const A1: f64 = 0.445_948_490_915_964_886_318_329_253_883_05;
        const W1: f64 = 0.223_381_589_678_011_465_695_007_008_433_12;
        const A2: f64 = 0.091_576_213_509_770_743_459_571_463_402_202;
        const W2: f64 = 0.109_951_743_655_321_867_638_326_324_900_21;
        let b1 = 1.0 - 2.0 * A1;
        let b2 = 1.0 - 2.0 * A2;
        Self {
            points: vec![
                [A1, A1, b1],
                [A1, b1, A1],
                [b1, A1, A1],
                [A2, A2, b2],
                [A2, b2, A2],
                [b2, A2, A2],
            ],
            weights: vec![W1, W1, W1, W2, W2, W2],
            order: 4,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Precomputed per-element data: vertex indices, area, constant gradients of
/// the three barycentric hat functions.
#[derive(Debug, Clone)]
pub struct Element {
    pub nodes: [usize; 3],
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub half_widths: (f64, f64),
    /// Number of cells per axis.
    pub subdivisions: usize,
    /// Interior grid lines per axis, `(n - 1, n - 1)`.
    pub nodes_per_side: (usize, usize),
    pub node_coords: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// `Some(k)` for the k-th interior node, `None` on the boundary.
    pub interior_index: Vec<Option<usize>>,
    /// Inverse of `interior_index`.
    pub interior_nodes: Vec<usize>,
    pub split: DiagonalSplit,
    pub elements: Vec<Element>,
}

/// Builds the uniform mesh of `[-lx, lx] x [-ly, ly]` with `n` cells per axis.
pub fn build_mesh(lx: f64, ly: f64, n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidMesh(format!(
            "need at least 2 subdivisions per axis, got {n}"
        )));
    }
    if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
        return Err(Error::InvalidMesh(format!(
            "half widths must be positive and finite, got ({lx}, {ly})"
        )));
    }

    let side = n + 1;
    let hx = 2.0 * lx / n as f64;
    let hy = 2.0 * ly / n as f64;

    let mut node_coords = Vec::with_capacity(side * side);
    let mut interior_index = Vec::with_capacity(side * side);
    let mut interior_nodes = Vec::with_capacity((n - 1) * (n - 1));
    for j in 0..side {
        for i in 0..side {
            node_coords.push([-lx + hx * i as f64, -ly + hy * j as f64]);
            let boundary = i == 0 || j == 0 || i == n || j == n;
            if boundary {
                interior_index.push(None);
            } else {
                interior_index.push(Some(interior_nodes.len()));
                interior_nodes.push(j * side + i);
            }
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let p00 = j * side + i;
            let p10 = p00 + 1;
            let p01 = p00 + side;
            let p11 = p01 + 1;
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }

    let elements = triangles
        .iter()
        .map(|&t| element_geometry(&node_coords, t))
        .collect();

    Ok(Mesh {
        half_widths: (lx, ly),
        subdivisions: n,
        nodes_per_side: (n - 1, n - 1),
        node_coords,
        triangles,
        interior_index,
        interior_nodes,
        split: DiagonalSplit::Right,
        elements,
    })
}

fn element_geometry(coords: &[[f64; 2]], t: [usize; 3]) -> Element {
    let [a, b, c] = t.map(|k| coords[k]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let area = 0.5 * det;
    // grad(lambda_k) = rot90(opposite edge) / det
    let grads = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    Element {
        nodes: t,
        area,
        grads,
    }
}

impl Mesh {
    /// Number of interior nodes.
    pub fn n_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Number of real degrees of freedom, `2 * n_interior`.
    pub fn n_dofs(&self) -> usize {
        2 * self.interior_nodes.len()
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }

    pub fn mesh_size(&self) -> f64 {
        2.0 * self.half_widths.0.max(self.half_widths.1) / self.subdivisions as f64
    }

    /// Physical coordinates of a point given in barycentric coordinates of
    /// element `e`.
    pub fn map_point(&self, e: usize, bary: &[f64; 3]) -> [f64; 2] {
        let t = &self.triangles[e];
        let mut p = [0.0; 2];
        for (k, &node) in t.iter().enumerate() {
            p[0] += bary[k] * self.node_coords[node][0];
            p[1] += bary[k] * self.node_coords[node][1];
        }
        p
    }

    /// Nodal values of a state on the three vertices of an element (zero on
    /// boundary vertices).
    pub fn element_values(&self, e: usize, coeffs: &[f64]) -> [Complex64; 3] {
        let t = &self.triangles[e];
        let mut vals = [Complex64::new(0.0, 0.0); 3];
        for (k, &node) in t.iter().enumerate() {
            if let Some(i) = self.interior_index[node] {
                vals[k] = Complex64::new(coeffs[2 * i], coeffs[2 * i + 1]);
            }
        }
        vals
    }

    /// Interior edges and the number of triangles attached to each.
    pub fn edge_multiplicity(&self) -> std::collections::HashMap<(usize, usize), usize> {
        let mut edges = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        edges
    }
}

/// Nodal interpolation of `f` on interior nodes. The result is not normalized.
pub fn interpolate<F>(mesh: &Mesh, f: F) -> Result<State>
where
    F: Fn(f64, f64) -> Complex64,
{
    let mut coeffs = vec![0.0; mesh.n_dofs()];
    for (k, &node) in mesh.interior_nodes.iter().enumerate() {
        let [x, y] = mesh.node_coords[node];
        let v = f(x, y);
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Interpolation { node, x, y });
        }
        coeffs[2 * k] = v.re;
        coeffs[2 * k + 1] = v.im;
    }
    Ok(State::from_coeffs(coeffs))
}

/// The vortex-carrying starting profile `(x + iy)/sqrt(pi) * exp(-(x^2+y^2)/2)`.
pub fn vortex_profile(x: f64, y: f64) -> Complex64 {
    Complex64::new(x, y) / std::f64::consts::PI.sqrt() * (-(x * x + y * y) / 2.0).exp()
}

/// Vortex-free Gaussian `exp(-(x^2+y^2)/2) / sqrt(pi)`.
pub fn gaussian_profile(x: f64, y: f64) -> Complex64 {
    Complex64::new((-(x * x + y * y) / 2.0).exp() / std::f64::consts::PI.sqrt(), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_mesh() {
        let mesh = build_mesh(1.0, 1.0, 2).unwrap();
        assert_eq!(mesh.n_interior(), 1);
        assert_eq!(mesh.triangles.len(), 8);
        let node = mesh.interior_nodes[0];
        assert_eq!(mesh.node_coords[node], [0.0, 0.0]);
    }

    #[test]
    fn rejects_single_cell() {
        assert!(matches!(build_mesh(1.0, 1.0, 1), Err(Error::InvalidMesh(_))));
        assert!(matches!(build_mesh(0.0, 1.0, 4), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn paper_scale_dof_count() {
        let mesh = build_mesh(6.0, 6.0, 256).unwrap();
        assert_eq!(mesh.n_interior(), 65025);
        assert_eq!(mesh.nodes_per_side, (255, 255));
    }

    #[test]
    fn orientation_and_area() {
        let h = std::f64::consts::FRAC_PI_2;
        let mesh = build_mesh(h, h, 64).unwrap();
        assert!(mesh.elements.iter().all(|e| e.area > 0.0));
        let area = mesh.total_area();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((area - pi2).abs() <= 1e-12 * pi2);
    }

    #[test]
    fn interior_edges_shared_twice() {
        let mesh = build_mesh(1.0, 2.0, 7).unwrap();
        let on_boundary = |p: usize| mesh.interior_index[p].is_none();
        for ((a, b), count) in mesh.edge_multiplicity() {
            let boundary_edge = on_boundary(a) && on_boundary(b) && {
                let [xa, ya] = mesh.node_coords[a];
                let [xb, yb] = mesh.node_coords[b];
                (xa == xb && (xa.abs() - 1.0).abs() < 1e-14)
                    || (ya == yb && (ya.abs() - 2.0).abs() < 1e-14)
            };
            if boundary_edge {
                assert_eq!(count, 1);
            } else {
                assert_eq!(count, 2, "edge ({a},{b})");
            }
        }
    }

    #[test]
    fn quadrature_weights_sum_to_one() {
        let q = Quadrature::order4();
        let s: f64 = q.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        for p in &q.points {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn quadrature_exact_to_order_four() {
        // reference triangle (0,0),(1,0),(0,1): int x^a y^b = a! b! / (a+b+2)!
        let q = Quadrature::order4();
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let approx: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(p, w)| 0.5 * w * p[1].powi(a as i32) * p[2].powi(b as i32))
                    .sum();
                assert!(
                    (approx - exact).abs() <= 1e-14 * exact,
                    "x^{a} y^{b}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn interpolation_is_nodal() {
        let h = std::f64::consts::FRAC_PI_2;
        let mesh = build_mesh(h, h, 16).unwrap();
        let f = |x: f64, y: f64| Complex64::new((x + h).sin() * (y + h).sin(), 0.0);
        let s = interpolate(&mesh, f).unwrap();
        for (k, &node) in mesh.interior_nodes.iter().enumerate() {
            let [x, y] = mesh.node_coords[node];
            assert_eq!(s.coeffs()[2 * k], f(x, y).re);
            assert_eq!(s.coeffs()[2 * k + 1], 0.0);
        }
    }

    #[test]
    fn interpolation_rejects_nan() {
        let mesh = build_mesh(1.0, 1.0, 4).unwrap();
        let r = interpolate(&mesh, |x, _| Complex64::new(if x == 0.0 { f64::NAN } else { 1.0 }, 0.0));
        assert!(matches!(r, Err(Error::Interpolation { .. })));
    }

    #[test]
    fn zero_function_gives_zero_state() {
        let mesh = build_mesh(1.0, 1.0, 5).unwrap();
        let s = interpolate(&mesh, |_, _| Complex64::new(0.0, 0.0)).unwrap();
        assert!(s.coeffs().iter().all(|&c| c == 0.0));
    }
}
