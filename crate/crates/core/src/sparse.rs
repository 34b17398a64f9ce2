//! Compressed sparse row storage sharing one sparsity pattern.
//!
//! Every matrix assembled on a mesh couples the real and imaginary parts of
//! neighbouring interior nodes, so all of them live on the same pattern: the
//! node adjacency graph with each entry expanded to a dense 2x2 block. Linear
//! combinations then reduce to combinations of value arrays.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::mesh::Mesh;

const PAR_MIN_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl Pattern {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    /// Pattern from sorted, deduplicated column lists per row.
    pub fn from_rows(rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows {
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        Self {
            n: rows.len(),
            row_ptr,
            col_idx,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub pattern: Arc<Pattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        debug_assert_eq!(x.len(), p.n);
        debug_assert_eq!(y.len(), p.n);
        let row = |i: usize| -> f64 {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            s
        };
        if p.n >= PAR_MIN_ROWS && rayon::current_num_threads() > 1 {
            y.par_iter_mut()
                .with_min_len(1024)
                .enumerate()
                .for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec(x, &mut y);
        y
    }

    /// `x^T A y`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &*self.pattern;
        let mut s = 0.0;
        for i in 0..p.n {
            let mut r = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                r += self.values[k] * y[p.col_idx[k]];
            }
            s += x[i] * r;
        }
        s
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let p = &*self.pattern;
        (0..p.n)
            .map(|i| p.find(i, i).map_or(0.0, |k| self.values[k]))
            .collect()
    }

    /// `sum_k c_k A_k` over matrices sharing this pattern.
    pub fn combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let first = terms.first().expect("at least one term").1;
        let mut values = vec![0.0; first.values.len()];
        for (c, m) in terms {
            assert!(Arc::ptr_eq(&m.pattern, &first.pattern) || *m.pattern == *first.pattern);
            for (v, a) in values.iter_mut().zip(&m.values) {
                *v += c * a;
            }
        }
        CsrMatrix {
            pattern: first.pattern.clone(),
            values,
        }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &CsrMatrix) {
        for (v, a) in self.values.iter_mut().zip(&other.values) {
            *v += c * a;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = &*self.pattern;
        let mut d = DMatrix::zeros(p.n, p.n);
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                d[(i, p.col_idx[k])] += self.values[k];
            }
        }
        d
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let p = &*self.pattern;
        let mut worst: f64 = 0.0;
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                let t = p.find(j, i).map_or(0.0, |kt| self.values[kt]);
                worst = worst.max((self.values[k] - t).abs());
            }
        }
        worst
    }
}

/// Local-to-global scatter map for element block matrices.
///
/// Row `2i` of the pattern lists the columns `2j, 2j+1` of every neighbour
/// `j` of node `i` in ascending order, and row `2i+1` lists the same columns.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub pattern: Arc<Pattern>,
    /// Per element, per local pair `(a, b)`, the value index of entry
    /// `(2i, 2j)`, or `usize::MAX` when either node is on the boundary.
    pub elem_map: Vec<[[usize; 3]; 3]>,
    /// Offset between rows `2i` and `2i+1`, i.e. twice the degree of node `i`.
    pub row_stride: Vec<usize>,
}

impl BlockLayout {
    pub fn new(mesh: &Mesh) -> Self {
        let nn = mesh.n_interior();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for t in &mesh.triangles {
            for &a in t {
                let Some(i) = mesh.interior_index[a] else { continue };
                for &b in t {
                    if let Some(j) = mesh.interior_index[b] {
                        adj[i].push(j);
                    }
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        let mut rows = Vec::with_capacity(2 * nn);
        for a in &adj {
            let cols: Vec<usize> = a.iter().flat_map(|&j| [2 * j, 2 * j + 1]).collect();
            rows.push(cols.clone());
            rows.push(cols);
        }
        let pattern = Arc::new(Pattern::from_rows(&rows));
        let row_stride: Vec<usize> = adj.iter().map(|a| 2 * a.len()).collect();

        let elem_map = mesh
            .triangles
            .iter()
            .map(|t| {
                let mut m = [[usize::MAX; 3]; 3];
                for (la, &a) in t.iter().enumerate() {
                    let Some(i) = mesh.interior_index[a] else { continue };
                    for (lb, &b) in t.iter().enumerate() {
                        if let Some(j) = mesh.interior_index[b] {
                            m[la][lb] = pattern.find(2 * i, 2 * j).expect("entry in pattern");
                        }
                    }
                }
                m
            })
            .collect();

        Self {
            pattern,
            elem_map,
            row_stride,
        }
    }

    /// Adds element block matrices into a fresh matrix. `blocks[e][a][b]`
    /// is the 2x2 block `[rr, ri, ir, ii]` coupling local row node `a` with
    /// local column node `b`.
    pub fn scatter(&self, mesh: &Mesh, blocks: &[[[[f64; 4]; 3]; 3]]) -> CsrMatrix {
        let mut out = CsrMatrix::zeros(self.pattern.clone());
        let v = &mut out.values;
        for (e, local) in blocks.iter().enumerate() {
            let map = &self.elem_map[e];
            let t = &mesh.triangles[e];
            for a in 0..3 {
                let Some(i) = mesh.interior_index[t[a]] else { continue };
                let stride = self.row_stride[i];
                for b in 0..3 {
                    let k = map[a][b];
                    if k == usize::MAX {
                        continue;
                    }
                    let blk = &local[a][b];
                    v[k] += blk[0];
                    v[k + 1] += blk[1];
                    v[k + stride] += blk[2];
                    v[k + stride + 1] += blk[3];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn pattern_rows_sorted_and_symmetric() {
        let mesh = build_mesh(1.0, 1.0, 6).unwrap();
        let layout = BlockLayout::new(&mesh);
        let p = &layout.pattern;
        assert_eq!(p.n, mesh.n_dofs());
        for i in 0..p.n {
            let row = &p.col_idx[p.row_ptr[i]..p.row_ptr[i + 1]];
            assert!(row.windows(2).all(|w| w[0] < w[1]));
            for &j in row {
                assert!(p.find(j, i).is_some());
            }
        }
        // interior node away from the boundary has 7 neighbours including itself
        assert_eq!(layout.row_stride.iter().max(), Some(&14));
    }

    #[test]
    fn combination_and_forms() {
        let rows = vec![vec![0, 1], vec![0, 1]];
        let pat = Arc::new(Pattern::from_rows(&rows));
        let a = CsrMatrix {
            pattern: pat.clone(),
            values: vec![2.0, 1.0, 1.0, 3.0],
        };
        let b = CsrMatrix {
            pattern: pat,
            values: vec![1.0, 0.0, 0.0, 1.0],
        };
        let c = CsrMatrix::combination(&[(1.0, &a), (-2.0, &b)]);
        assert_eq!(c.values, vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(a.form(&[1.0, 1.0], &[1.0, -1.0]), 2.0 - 1.0 + 1.0 - 3.0);
        assert_eq!(a.diagonal(), vec![2.0, 3.0]);
        assert_eq!(a.asymmetry(), 0.0);
    }
}
