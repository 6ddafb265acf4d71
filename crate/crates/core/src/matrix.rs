//! Dense row-major matrices and the handful of factorizations the Hessian
//! analysis needs.
//!
//! Storage is row-major so that [`vec_row`] is a plain copy of the backing
//! buffer, and the derivative identity `vec_r(A W B) = (A ⊗ Bᵀ) vec_r(W)`
//! holds without any permutation. SVD and symmetric eigendecomposition are
//! delegated to `faer`; products go through `matrixmultiply`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Largest Kronecker product (in entries) [`kron`] will materialize.
pub const DEFAULT_KRON_CAP: usize = 10_000_000;

/// Relative asymmetry [`sym_eig`] tolerates before refusing its input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries. Rejects a length mismatch and
    /// any non-finite entry.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite entry {bad} in matrix input")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Matrix product. Panics when the inner dimensions disagree.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        if m == 0 || n == 0 || k == 0 {
            return out;
        }
        // SAFETY: the three buffers are dense row-major with the strides
        // given, and `out` does not alias either input.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                rhs.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec: {}x{} times {}", self.rows, self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest entrywise gap `max |self - other|`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max |s - sᵀ|` over all entries.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square(), "asymmetry of a non-square matrix");
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// `(s + sᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrizing a non-square matrix");
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                out.data[i * n + j] = avg;
                out.data[j * n + i] = avg;
            }
        }
        out
    }

    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "submatrix out of range");
        Matrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_submatrix(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "set_submatrix out of range"
        );
        for i in 0..block.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub(crate) fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "sub: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;

    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

/// Kronecker product with the default size cap.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    kron_capped(a, b, DEFAULT_KRON_CAP)
}

/// Kronecker product: block `(i, j)` of the result is `a[i, j] · b`.
pub fn kron_capped(a: &Matrix, b: &Matrix, cap: usize) -> Result<Matrix> {
    let rows = a.rows.checked_mul(b.rows);
    let cols = a.cols.checked_mul(b.cols);
    let entries = rows.zip(cols).and_then(|(r, c)| r.checked_mul(c));
    let (rows, cols) = match (rows, cols, entries) {
        (Some(r), Some(c), Some(n)) if n <= cap => (r, c),
        _ => {
            return Err(Error::Dimension(format!(
                "kron of {}x{} and {}x{} exceeds the {cap}-entry cap",
                a.rows, a.cols, b.rows, b.cols
            )))
        }
    };
    let mut out = Matrix::zeros(rows, cols);
    for ai in 0..a.rows {
        for bi in 0..b.rows {
            let dst = (ai * b.rows + bi) * cols;
            let brow = b.row(bi);
            for aj in 0..a.cols {
                let s = a[(ai, aj)];
                let seg = &mut out.data[dst + aj * b.cols..dst + (aj + 1) * b.cols];
                for (o, x) in seg.iter_mut().zip(brow) {
                    *o = s * x;
                }
            }
        }
    }
    Ok(out)
}

/// Row-wise vectorization: the rows of `a` concatenated.
pub fn vec_row(a: &Matrix) -> Vec<f64> {
    a.data.clone()
}

/// Inverse of [`vec_row`].
pub fn unvec_row(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot be reshaped to {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix {
        rows,
        cols,
        data: v.to_vec(),
    })
}

/// The zero-padding embedding: `b` in the top-left corner of a
/// `rows x cols` zero matrix.
pub fn pad_embed(b: &Matrix, rows: usize, cols: usize) -> Result<Matrix> {
    if rows < b.rows || cols < b.cols {
        return Err(Error::Dimension(format!(
            "cannot pad {}x{} into smaller {rows}x{cols}",
            b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(rows, cols);
    out.set_submatrix(0, 0, b);
    Ok(out)
}

/// Thin singular value decomposition `a = u · diag(sigma) · vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows x k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Descending, nonnegative.
    pub sigma: Vec<f64>,
    /// `cols x k` with orthonormal columns.
    pub v: Matrix,
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numerical("svd of a matrix with non-finite entries".into()));
    }
    let k = a.rows.min(a.cols);
    if k == 0 {
        return Ok(Svd {
            u: Matrix::zeros(a.rows, 0),
            sigma: Vec::new(),
            v: Matrix::zeros(a.cols, 0),
        });
    }
    let dec = a
        .to_faer()
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd of {}x{} failed: {e:?}", a.rows, a.cols)))?;
    let s = dec.S().column_vector();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let sigma = order.iter().map(|&i| s[i].max(0.0)).collect();
    let (u, v) = (dec.U(), dec.V());
    let u = Matrix::from_fn(a.rows, k, |i, c| u[(i, order[c])]);
    let v = Matrix::from_fn(a.cols, k, |i, c| v[(i, order[c])]);
    Ok(Svd { u, sigma, v })
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending and
/// eigenvectors in the matching columns.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Dimension(format!(
            "symmetric eigendecomposition needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if !s.is_finite() {
        return Err(Error::Numerical("eigendecomposition of non-finite input".into()));
    }
    let scale = s.max_abs();
    let asym = s.asymmetry();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Contract(format!(
            "input asymmetry {asym:e} exceeds {SYMMETRY_TOLERANCE:e} x max entry {scale:e}; symmetrize first"
        )));
    }
    Ok(())
}

pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    check_symmetric(s)?;
    let n = s.rows;
    if n == 0 {
        return Ok(SymEig {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let dec = s
        .to_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolver failed on {n}x{n} input: {e:?}")))?;
    let raw = dec.S().column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let values: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite eigenvalues".into()));
    }
    let u = dec.U();
    let vectors = Matrix::from_fn(n, n, |i, c| u[(i, order[c])]);
    Ok(SymEig { values, vectors })
}

/// Eigenvalues only, descending. Several times cheaper than [`sym_eig`] on
/// the large assembled Hessians.
pub fn sym_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(s)?;
    if s.rows == 0 {
        return Ok(Vec::new());
    }
    let mut values = s.to_faer().self_adjoint_eigenvalues(Side::Lower).map_err(|e| {
        Error::Numerical(format!("symmetric eigensolver failed on {0}x{0} input: {e:?}", s.rows))
    })?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite eigenvalues".into()));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.rows == 0 || a.cols == 0 {
        return 0.0;
    }
    // A failed factorization has no meaningful norm; callers see NaN.
    match a.to_faer().singular_values() {
        Ok(values) => values.iter().fold(0.0, |m: f64, s| m.max(*s)),
        Err(_) => f64::NAN,
    }
}

/// Spectral norm of a symmetric matrix as its largest absolute eigenvalue.
pub fn sym_spectral_norm(s: &Matrix) -> Result<f64> {
    let values = sym_eigenvalues(s)?;
    Ok(values.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
}

/// Extends `q` (n x k, orthonormal columns) to an n x n orthogonal matrix
/// whose first k columns are `q`.
pub fn orthonormal_completion(q: &Matrix) -> Result<Matrix> {
    let (n, k) = q.shape();
    if k > n {
        return Err(Error::Dimension(format!("{k} columns cannot be orthonormal in R^{n}")));
    }
    let mut out = Matrix::zeros(n, n);
    out.set_submatrix(0, 0, q);
    if k == n {
        return Ok(out);
    }
    let projector = &Matrix::identity(n) - &(q * &q.transpose());
    let eig = sym_eig(&projector.symmetrized())?;
    // The complement spans the unit eigenvalues, which sort first.
    for c in 0..(n - k) {
        for i in 0..n {
            out[(i, k + c)] = eig.vectors[(i, c)];
        }
    }
    Ok(out)
}

/// `max |qᵀq - I|`: how far the columns of `q` are from orthonormal.
pub fn orthonormality_defect(q: &Matrix) -> f64 {
    let gram = &q.transpose() * q;
    gram.max_abs_diff(&Matrix::identity(q.cols()))
}

/// Product of a chain of matrices, left to right. `None` for an empty chain.
pub fn chain_product<'a>(factors: impl IntoIterator<Item = &'a Matrix>) -> Option<Matrix> {
    let mut iter = factors.into_iter();
    let first = iter.next()?.clone();
    Some(iter.fold(first, |acc, m| &acc * m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let k = kron(&Matrix::identity(2), &Matrix::identity(3)).unwrap();
        assert_eq!(k, Matrix::identity(6));
    }

    #[test]
    fn kron_with_scalar_scales() {
        let b = lcg_matrix(3, 4, 1);
        let k = kron(&Matrix::from_rows(&[[2.0]]).unwrap(), &b).unwrap();
        assert_eq!(k, b.scale(2.0));
    }

    #[test]
    fn kron_block_layout() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 5.0], [6.0, 7.0]]).unwrap();
        let k = kron(&a, &b).unwrap();
        let expected = Matrix::from_rows(&[
            [0.0, 5.0, 0.0, 10.0],
            [6.0, 7.0, 12.0, 14.0],
            [0.0, 15.0, 0.0, 20.0],
            [18.0, 21.0, 24.0, 28.0],
        ])
        .unwrap();
        assert_eq!(k, expected);
    }

    #[test]
    fn kron_cap_is_enforced() {
        let a = Matrix::zeros(100, 100);
        let err = kron_capped(&a, &a, 1000).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn vec_row_unrolls_rows() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(vec_row(&a), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(unvec_row(&[1.0, 2.0, 3.0], 2, 2).is_err());
    }

    #[test]
    fn pad_embed_places_top_left() {
        let p = pad_embed(&Matrix::from_rows(&[[5.0]]).unwrap(), 2, 3).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[5.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap());
        assert_eq!(pad_embed(&Matrix::identity(2), 2, 2).unwrap(), Matrix::identity(2));
        assert!(pad_embed(&Matrix::identity(3), 2, 4).is_err());
    }

    #[test]
    fn svd_of_diagonal_and_identity() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma.len(), 3);
        for x in &s.sigma {
            assert!((x - 1.0).abs() < 1e-14);
        }
        let d = svd(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap();
        for (x, e) in d.sigma.iter().zip([3.0, 2.0, 1.0]) {
            assert!((x - e).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_frames_are_orthonormal_and_reconstruct() {
        let a = lcg_matrix(8, 5, 7);
        let s = svd(&a).unwrap();
        assert!(orthonormality_defect(&s.u) < 1e-12);
        assert!(orthonormality_defect(&s.v) < 1e-12);
        let recon = &(&s.u * &Matrix::from_diag(&s.sigma)) * &s.v.transpose();
        assert!(recon.max_abs_diff(&a) < 1e-10 * a.max_abs());
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a.as_mut_slice()[1] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::Numerical(_))));
        assert!(Matrix::from_vec(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn sym_eig_orders_descending() {
        let e = sym_eig(&Matrix::from_diag(&[5.0, -1.0, 0.0])).unwrap();
        assert_eq!(e.values, vec![5.0, 0.0, -1.0]);
        let id = sym_eig(&Matrix::identity(4)).unwrap();
        assert_eq!(id.values, vec![1.0; 4]);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
        assert!(matches!(sym_eigenvalues(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn sym_eig_reconstructs_random_symmetric() {
        let a = lcg_matrix(20, 20, 3).symmetrized();
        let e = sym_eig(&a).unwrap();
        let recon = &(&e.vectors * &Matrix::from_diag(&e.values)) * &e.vectors.transpose();
        assert!(recon.max_abs_diff(&a) < 1e-9);
        assert!(orthonormality_defect(&e.vectors) < 1e-12);
        let vals = sym_eigenvalues(&a).unwrap();
        for (x, y) in vals.iter().zip(&e.values) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&Matrix::identity(4)) - 1.0).abs() < 1e-14);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)), 0.0);
        let a = lcg_matrix(6, 4, 11);
        let s = svd(&a).unwrap();
        assert!((spectral_norm(&a) - s.sigma[0]).abs() < 1e-12);
        let sym = lcg_matrix(7, 7, 5).symmetrized();
        assert!((sym_spectral_norm(&sym).unwrap() - spectral_norm(&sym)).abs() < 1e-12);
    }

    #[test]
    fn completion_is_orthogonal_and_keeps_prefix() {
        let q = svd(&lcg_matrix(6, 2, 9)).unwrap().u;
        let full = orthonormal_completion(&q).unwrap();
        assert!(orthonormality_defect(&full) < 1e-12);
        assert_eq!(full.submatrix(0, 0, 6, 2), q);
    }
}
