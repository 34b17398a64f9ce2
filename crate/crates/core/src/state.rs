//! Discrete complex-valued functions in real coefficient form.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A P1 function with homogeneous Dirichlet data, stored as interleaved real
/// and imaginary nodal values of the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    coeffs: Vec<f64>,
}

impl State {
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.len() % 2 == 0);
        Self { coeffs }
    }

    pub fn zeros(n_dofs: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_dofs],
        }
    }

    pub fn from_complex(values: &[Complex64]) -> Self {
        let mut coeffs = Vec::with_capacity(2 * values.len());
        for v in values {
            coeffs.push(v.re);
            coeffs.push(v.im);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn node_value(&self, k: usize) -> Complex64 {
        Complex64::new(self.coeffs[2 * k], self.coeffs[2 * k + 1])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.coeffs
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.coeffs.len() == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected,
                got: self.coeffs.len(),
            })
        }
    }

    /// Multiplication by the imaginary unit.
    pub fn times_i(&self) -> State {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for c in self.coeffs.chunks_exact(2) {
            out.push(-c[1]);
            out.push(c[0]);
        }
        State { coeffs: out }
    }

    /// Multiplication by a complex constant.
    pub fn scale_complex(&self, z: Complex64) -> State {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for c in self.coeffs.chunks_exact(2) {
            out.push(z.re * c[0] - z.im * c[1]);
            out.push(z.re * c[1] + z.im * c[0]);
        }
        State { coeffs: out }
    }

    /// Gauge transform `v -> exp(i omega) v`.
    pub fn rotate(&self, omega: f64) -> State {
        self.scale_complex(Complex64::from_polar(1.0, omega))
    }

    pub fn scaled(&self, a: f64) -> State {
        State {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &State) -> State {
        State {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    pub fn sub(&self, other: &State) -> State {
        self.axpy(-1.0, other)
    }
}

/// Plain Euclidean dot product of coefficient vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_i_squares_to_minus_one() {
        let s = State::from_coeffs(vec![1.0, 2.0, -3.0, 0.5]);
        let t = s.times_i().times_i();
        assert_eq!(t.coeffs(), s.scaled(-1.0).coeffs());
    }

    #[test]
    fn rotation_composes() {
        let s = State::from_coeffs(vec![0.3, -1.2, 2.0, 0.7]);
        let a = s.rotate(0.4).rotate(0.9);
        let b = s.rotate(1.3);
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((x - y).abs() < 1e-15);
        }
        let q = s.rotate(std::f64::consts::FRAC_PI_2);
        for (x, y) in q.coeffs().iter().zip(s.times_i().coeffs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn complex_round_trip() {
        let v = vec![Complex64::new(1.0, -2.0), Complex64::new(0.25, 4.0)];
        let s = State::from_complex(&v);
        assert_eq!(s.to_complex(), v);
        assert_eq!(s.node_value(1), v[1]);
    }
}
