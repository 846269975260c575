//! Compressed-row sparse matrices and a reusable sparse LU factorization.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Coordinate-format accumulator; duplicates are summed on [`build`](Self::build).
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, val));
    }

    /// Append `scale · a` with its origin shifted to `(row0, col0)`.
    pub fn add_block(&mut self, a: &CsrMatrix, row0: usize, col0: usize, scale: f64) {
        for i in 0..a.nrows {
            for k in a.indptr[i]..a.indptr[i + 1] {
                self.push(row0 + i, col0 + a.indices[k], scale * a.values[k]);
            }
        }
    }

    /// Concatenate another builder (in order) into this one.
    pub fn append(&mut self, other: TripletBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn build(self) -> CsrMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.entries.len()];
        let mut vals = vec![0.0; self.entries.len()];
        for &(r, c, v) in &self.entries {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            // Stable sort keeps the summation order deterministic.
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut s = 0.0;
                while k < row.len() && row[k].0 == c {
                    s += row[k].1;
                    k += 1;
                }
                indices.push(c);
                values.push(s);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

/// Real sparse matrix in compressed-row storage with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut b = TripletBuilder::new(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    b.push(i, j, a[(i, j)]);
                }
            }
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[(i, j)] += v;
            }
        }
        a
    }

    /// `y = alpha · A x + beta · y`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64], alpha: f64, beta: f64) {
        assert_eq!(x.len(), self.ncols, "matvec: x has wrong length");
        assert_eq!(y.len(), self.nrows, "matvec: y has wrong length");
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi = alpha * s + if beta == 0.0 { 0.0 } else { beta * *yi };
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y, 1.0, 0.0);
        y
    }

    /// `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "transposed matvec: x has wrong length");
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.values[k] * xi;
            }
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                b.push(self.indices[k], i, self.values[k]);
            }
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a · self + b · other`.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "shape mismatch");
        let mut t = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        t.add_block(self, 0, 0, a);
        t.add_block(other, 0, 0, b);
        t.build()
    }

    /// Sub-matrix keeping rows `rows` and columns `cols` (new → old maps).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = col_map[self.indices[k]];
                if c != usize::MAX {
                    indices.push(c);
                    values.push(self.values[k]);
                }
            }
            indptr.push(indices.len());
        }
        // Column maps that are not increasing would break the sorted-row invariant.
        let mut out = CsrMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            indptr,
            indices,
            values,
        };
        if !cols.windows(2).all(|w| w[0] < w[1]) {
            out = out.transpose().transpose();
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖A − Aᵀ‖_F`.
    pub fn asymmetry(&self) -> f64 {
        self.linear_combination(1.0, &self.transpose(), -1.0).frobenius_norm()
    }

    /// Rows with at least one nonzero value.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.nrows)
            .filter(|&i| self.row(i).1.iter().any(|&v| v != 0.0))
            .collect()
    }

    /// Write in MatrixMarket coordinate format (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
            }
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Sparse LU of a square matrix with row/column equilibration.
///
/// The matrix is scaled as `D_r A D_c` by a few Ruiz sweeps before the
/// factorization so that blocks with very different physical units pivot
/// sensibly. One factorization serves any number of solves.
pub struct SparseLu {
    n: usize,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish_non_exhaustive()
    }
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("LU of a {}x{} matrix", a.nrows(), a.ncols())));
        }
        if n == 0 {
            return Err(Error::Factorization("empty matrix".into()));
        }
        if a.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("matrix has non-finite entries".into()));
        }
        let (row_scale, col_scale) = ruiz_scaling(a)?;

        // CSC of D_r A D_c is the CSR of its transpose.
        let mut scaled = a.clone();
        for i in 0..n {
            for k in scaled.indptr[i]..scaled.indptr[i + 1] {
                scaled.values[k] *= row_scale[i] * col_scale[scaled.indices[k]];
            }
        }
        let t = scaled.transpose();
        let symbolic = SymbolicSparseColMat::new_checked(n, n, t.indptr, None, t.indices);
        let mat = SparseColMat::new(symbolic, t.values);
        let sym = SymbolicLu::try_new(mat.symbolic())
            .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(sym, mat.as_ref())
            .map_err(|e| Error::Factorization(format!("numeric factorization: {e:?}")))?;
        let this = Self {
            n,
            row_scale,
            col_scale,
            lu,
        };

        // Probe: recover a known solution; a singular matrix cannot.
        let probe: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (i as f64).sin()).collect();
        let mut x = a.mul_vec(&probe);
        this.solve_in_place(&mut x);
        let err = x
            .iter()
            .zip(&probe)
            .map(|(v, p)| (v - p).abs())
            .fold(0.0f64, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
        if !(err < 1e-1) {
            return Err(Error::Factorization(format!(
                "matrix is singular to working precision (probe error {err:.1e})"
            )));
        }
        Ok(this)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "rhs length");
        for (v, s) in b.iter_mut().zip(&self.row_scale) {
            *v *= s;
        }
        let mat = faer::MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.lu.solve_in_place(mat);
        for (v, s) in b.iter_mut().zip(&self.col_scale) {
            *v *= s;
        }
    }

    /// Solve for `k` right-hand sides stored column-major in `b`.
    pub fn solve_many_in_place(&self, b: &mut [f64], k: usize) {
        assert_eq!(b.len(), self.n * k, "rhs block size");
        for col in b.chunks_mut(self.n) {
            for (v, s) in col.iter_mut().zip(&self.row_scale) {
                *v *= s;
            }
        }
        let mat = faer::MatMut::from_column_major_slice_mut(b, self.n, k);
        self.lu.solve_in_place(mat);
        for col in b.chunks_mut(self.n) {
            for (v, s) in col.iter_mut().zip(&self.col_scale) {
                *v *= s;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn ruiz_scaling(a: &CsrMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.nrows();
    let mut dr = vec![1.0; n];
    let mut dc = vec![1.0; n];
    for _ in 0..20 {
        let mut rmax = vec![0.0f64; n];
        let mut cmax = vec![0.0f64; n];
        for i in 0..n {
            for k in a.indptr[i]..a.indptr[i + 1] {
                let j = a.indices[k];
                let v = (a.values[k] * dr[i] * dc[j]).abs();
                rmax[i] = rmax[i].max(v);
                cmax[j] = cmax[j].max(v);
            }
        }
        if let Some(i) = rmax.iter().position(|&m| m == 0.0) {
            return Err(Error::Factorization(format!("row {i} is structurally zero")));
        }
        if let Some(j) = cmax.iter().position(|&m| m == 0.0) {
            return Err(Error::Factorization(format!("column {j} is structurally zero")));
        }
        let spread = rmax
            .iter()
            .chain(&cmax)
            .fold(0.0f64, |m, &v| m.max((v.ln()).abs()));
        if spread < 1e-3 {
            break;
        }
        for i in 0..n {
            dr[i] /= rmax[i].sqrt();
            dc[i] /= cmax[i].sqrt();
        }
    }
    Ok((dr, dc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> CsrMatrix {
        let mut b = TripletBuilder::new(3, 3);
        b.push(0, 0, 4.0);
        b.push(0, 1, 1.0);
        b.push(1, 0, 1.0);
        b.push(1, 1, 3.0);
        b.push(2, 2, 2.0);
        b.push(2, 2, 0.5);
        b.push(1, 2, -1.0);
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let a = example();
        assert_eq!(a.get(2, 2), 2.5);
        assert_eq!(a.nnz(), 6);
    }

    #[test]
    fn matvec_matches_dense() {
        let a = example();
        let x = [1.0, -2.0, 0.5];
        let y = a.mul_vec(&x);
        let yd = a.to_dense() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-15);
        }
        let yt = a.tr_mul_vec(&x);
        let ytd = a.to_dense().transpose() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((yt[i] - ytd[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn select_submatrix() {
        let a = example();
        let s = a.select(&[1, 2], &[1, 2]);
        assert_eq!(s.to_dense(), nalgebra::dmatrix![3.0, -1.0; 0.0, 2.5]);
    }

    #[test]
    fn lu_handles_badly_scaled_blocks() {
        let mut b = TripletBuilder::new(3, 3);
        b.push(0, 0, 1e11);
        b.push(0, 1, 1e-2);
        b.push(1, 0, -1e-2);
        b.push(1, 1, 1e-9);
        b.push(1, 2, -1e-9);
        b.push(2, 1, 1e-9);
        b.push(2, 2, -1e-13);
        let a = b.build();
        let lu = SparseLu::new(&a).unwrap();
        let x_true = [1e-4, 3.0, -2.0];
        let x = lu.solve(&a.mul_vec(&x_true));
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-9 * x_true[i].abs(), "{x:?}");
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_dense(&nalgebra::dmatrix![1.0, 1.0; 1.0, 1.0]);
        assert!(matches!(SparseLu::new(&a), Err(Error::Factorization(_))));
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        assert!(SparseLu::new(&b.build()).is_err());
    }

    proptest! {
        #[test]
        fn lu_solves_diagonally_dominant(vals in proptest::collection::vec(-1.0f64..1.0, 36), rhs in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let mut d = DMatrix::from_row_slice(6, 6, &vals);
            for i in 0..6 { d[(i, i)] += 7.0; }
            let a = CsrMatrix::from_dense(&d);
            let lu = SparseLu::new(&a).unwrap();
            let x = lu.solve(&rhs);
            let r = a.mul_vec(&x);
            for i in 0..6 { prop_assert!((r[i] - rhs[i]).abs() < 1e-12); }
            let mut many: Vec<f64> = rhs.iter().chain(rhs.iter()).map(|v| 2.0 * v).collect();
            lu.solve_many_in_place(&mut many, 2);
            for i in 0..6 { prop_assert!((many[i] - 2.0 * x[i]).abs() < 1e-12 && (many[6 + i] - 2.0 * x[i]).abs() < 1e-12); }
        }

        #[test]
        fn transpose_is_involution(vals in proptest::collection::vec(-1.0f64..1.0, 12)) {
            let d = DMatrix::from_row_slice(3, 4, &vals);
            let a = CsrMatrix::from_dense(&d);
            prop_assert_eq!(a.transpose().transpose(), a.clone());
            prop_assert_eq!(a.transpose().to_dense(), d.transpose());
        }
    }
}
