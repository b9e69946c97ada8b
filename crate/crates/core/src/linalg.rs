//! Dense row-major matrices and the handful of kernels the Fisher machinery
//! needs: products, Hadamard / Kronecker / column-wise Khatri-Rao structure,
//! and Cholesky-based SPD solves.
//!
//! Vectorization is row-major throughout: for `W` of shape `r × c`,
//! `vec(W)[i * c + j] = W[i, j]`, so that `vec(u vᵀ) = u ⊗ v`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Condition estimates above this are reported as singular by [`spd_inverse`].
pub const MAX_CONDITION: f64 = 1e14;

/// Relative jitter added to the diagonal when a Cholesky factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Number of jittered retries before a factorization is declared singular.
pub const CHOLESKY_RETRIES: usize = 3;

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
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(
                "Matrix::from_vec",
                "positive dimensions",
                format!("{rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                format!("{cols} columns"),
                format!("{} columns", bad.len()),
            ));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// A `n × 1` column vector.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major storage, which is also `vec(self)`.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
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

    /// Reinterprets the storage with a new shape of equal size.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows * cols != self.data.len() {
            return Err(Error::shape(
                "Matrix::reshape",
                format!("{} entries", self.data.len()),
                format!("{rows}x{cols}"),
            ));
        }
        Ok(Matrix {
            rows,
            cols,
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Row vector of column sums, i.e. `1ᵀ A` laid out as a `Vec`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Matrix) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Returns `self + shift·I` for a square matrix.
    pub fn add_diagonal(&self, shift: f64) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::shape("add_diagonal", "square matrix", dims(self)));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += shift;
        }
        Ok(out)
    }

    /// Checks `|a_ij - a_ji| <= tol * max|a|`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let bound = tol * self.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..self.rows {
            for j in 0..i {
                if (self.data[i * self.cols + j] - self.data[j * self.cols + i]).abs() > bound {
                    return false;
                }
            }
        }
        true
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, dims(self), dims(other)));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn dims(m: &Matrix) -> String {
    format!("{}x{}", m.rows, m.cols)
}

/// Dot product with four independent accumulators; the summation order is
/// fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy_slice(y: &mut [f64], factor: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += factor * xi;
    }
}

/// `A · B`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} · {}x_", a.rows, a.cols, a.cols),
            format!("{} · {}", dims(a), dims(b)),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik != 0.0 {
                axpy_slice(c_row, aik, b.row(k));
            }
        }
    }
    Ok(c)
}

/// `Aᵀ · B` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("{} rows in both operands", a.rows),
            format!("{} and {}", dims(a), dims(b)),
        ));
    }
    let mut c = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki != 0.0 {
                axpy_slice(&mut c.data[i * b.cols..(i + 1) * b.cols], aki, b_row);
            }
        }
    }
    Ok(c)
}

/// `A · Bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_nt",
            format!("{} columns in both operands", a.cols),
            format!("{} and {}", dims(a), dims(b)),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            c.data[i * b.rows + j] = dot(a_row, b.row(j));
        }
    }
    Ok(c)
}

/// Matrix-vector product `A · x`.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::shape(
            "matvec",
            format!("{} entries", a.cols),
            format!("{}", x.len()),
        ));
    }
    Ok((0..a.rows).map(|i| dot(a.row(i), x)).collect())
}

/// Elementwise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}

/// Kronecker product of two column vectors: entry `i·q + j` is `u[i]·v[j]`.
pub fn kron(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    if u.cols != 1 || v.cols != 1 {
        return Err(Error::shape(
            "kron",
            "two column vectors",
            format!("{} and {}", dims(u), dims(v)),
        ));
    }
    let mut out = Vec::with_capacity(u.rows * v.rows);
    for &ui in &u.data {
        out.extend(v.data.iter().map(|&vj| ui * vj));
    }
    Matrix::from_vec(u.rows * v.rows, 1, out)
}

/// Column-wise Khatri-Rao product: column `j` is `A[:, j] ⊗ B[:, j]`.
pub fn khatri_rao_cols(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "khatri_rao_cols",
            format!("{} columns in both operands", a.cols),
            format!("{} and {}", dims(a), dims(b)),
        ));
    }
    let m = a.cols;
    let mut out = Matrix::zeros(a.rows * b.rows, m);
    for i in 0..a.rows {
        for k in 0..b.rows {
            let dst = out.row_mut(i * b.rows + k);
            let (ar, br) = (&a.data[i * m..(i + 1) * m], &b.data[k * m..(k + 1) * m]);
            for ((d, x), y) in dst.iter_mut().zip(ar).zip(br) {
                *d = x * y;
            }
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor `L` with `S = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// Factors an SPD matrix, retrying with escalating diagonal jitter
    /// (`1e-10 · trace/n`, then ×10 per retry) when a pivot is not positive.
    pub fn factor(s: &Matrix) -> Result<Self> {
        if s.rows != s.cols {
            return Err(Error::shape("cholesky", "square matrix", dims(s)));
        }
        if !s.is_symmetric(1e-10) {
            return Err(Error::NotSymmetric("cholesky".into()));
        }
        if !s.is_finite() {
            return Err(Error::Numeric("cholesky input".into()));
        }
        if let Some(lower) = factor_lower(s, 0.0) {
            return Ok(Cholesky { lower, jitter: 0.0 });
        }
        let base = CHOLESKY_JITTER * (s.trace() / s.rows as f64).abs();
        let mut jitter = base;
        for _ in 0..CHOLESKY_RETRIES {
            if jitter > 0.0 {
                if let Some(lower) = factor_lower(s, jitter) {
                    return Ok(Cholesky { lower, jitter });
                }
            }
            jitter *= 10.0;
        }
        Err(Error::Singular {
            context: "cholesky".into(),
            condition: f64::INFINITY,
        })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Diagonal jitter that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Cheap lower bound on the 2-norm condition number: `(max l_ii / min l_ii)²`.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.lower.rows;
        let (lo, hi) = (0..n)
            .map(|i| self.lower.data[i * n + i])
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo).powi(2)
    }

    /// Solves `S X = B` for a block of right-hand sides.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows;
        if b.rows != n {
            return Err(Error::shape("cholesky_solve", format!("{n} rows"), dims(b)));
        }
        let l = &self.lower;
        let k = b.cols;
        let mut x = b.clone();
        // forward: L Y = B
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * k);
            let row = &mut rest[..k];
            for j in 0..i {
                let lij = l.data[i * n + j];
                if lij != 0.0 {
                    axpy_slice(row, -lij, &done[j * k..(j + 1) * k]);
                }
            }
            let d = l.data[i * n + i];
            row.iter_mut().for_each(|v| *v /= d);
        }
        // backward: Lᵀ X = Y
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * k);
            let row = &mut head[i * k..];
            for j in i + 1..n {
                let lji = l.data[j * n + i];
                if lji != 0.0 {
                    axpy_slice(row, -lji, &tail[(j - i - 1) * k..(j - i) * k]);
                }
            }
            let d = l.data[i * n + i];
            row.iter_mut().for_each(|v| *v /= d);
        }
        Ok(x)
    }

    /// `S⁻¹` assembled as `L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> Matrix {
        let n = self.lower.rows;
        let l = &self.lower;
        // rows of L⁻¹ (lower triangular), computed by forward substitution on I
        let mut linv = Matrix::zeros(n, n);
        for i in 0..n {
            let (done, rest) = linv.data.split_at_mut(i * n);
            let row = &mut rest[..n];
            row[i] = 1.0;
            for j in 0..i {
                let lij = l.data[i * n + j];
                if lij != 0.0 {
                    axpy_slice(&mut row[..=j], -lij, &done[j * n..j * n + j + 1]);
                }
            }
            let d = l.data[i * n + i];
            row[..=i].iter_mut().for_each(|v| *v /= d);
        }
        // S⁻¹ = L⁻ᵀ L⁻¹, accumulated row by row of L⁻¹
        let mut inv = Matrix::zeros(n, n);
        for k in 0..n {
            let r = &linv.data[k * n..k * n + k + 1];
            for (i, &rki) in r.iter().enumerate() {
                if rki != 0.0 {
                    axpy_slice(&mut inv.data[i * n..i * n + k + 1], rki, r);
                }
            }
        }
        // only the lower triangle was accumulated
        for i in 0..n {
            for j in 0..i {
                inv.data[j * n + i] = inv.data[i * n + j];
            }
        }
        inv
    }
}

fn factor_lower(s: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = s.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            let mut v = s.data[i * n + j] - dot(li, lj);
            if i == j {
                v += jitter;
                if !v.is_finite() || v <= 0.0 {
                    return None;
                }
                l.data[i * n + i] = v.sqrt();
            } else {
                l.data[i * n + j] = v / l.data[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `S X = B` for symmetric positive definite `S`.
pub fn cholesky_solve(s: &Matrix, b: &Matrix) -> Result<Matrix> {
    Cholesky::factor(s)?.solve(b)
}

/// Explicit inverse of a symmetric positive definite matrix.
pub fn spd_inverse(s: &Matrix) -> Result<Matrix> {
    let chol = Cholesky::factor(s)?;
    let condition = chol.condition_estimate();
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::Singular {
            context: "spd_inverse".into(),
            condition,
        });
    }
    Ok(chol.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = random(rng, n, n);
        matmul_tn(&a, &a).unwrap().add_diagonal(1.0).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
        let z = Matrix::zeros(2, 2);
        assert_eq!(matmul(&z, &m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap(), z);
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(
            matmul(&a, &Matrix::column(&[5.0, 6.0])).unwrap(),
            Matrix::column(&[17.0, 39.0])
        );
        assert!(matches!(matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 5, 3);
        let b = random(&mut rng, 5, 4);
        let c = random(&mut rng, 7, 3);
        let tn = matmul_tn(&a, &b).unwrap();
        let explicit = matmul(&a.transpose(), &b).unwrap();
        assert!(tn.sub(&explicit).unwrap().max_abs() < 1e-14);
        let nt = matmul_nt(&a, &c).unwrap();
        let explicit = matmul(&a, &c.transpose()).unwrap();
        assert!(nt.sub(&explicit).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn hadamard_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(hadamard(&a, &Matrix::filled(2, 2, 1.0)).unwrap(), a);
        assert_eq!(hadamard(&a, &Matrix::zeros(2, 2)).unwrap(), Matrix::zeros(2, 2));
        let b = m(&[&[2.0, 2.0], &[3.0, 3.0]]);
        assert_eq!(hadamard(&a, &b).unwrap(), m(&[&[2.0, 4.0], &[9.0, 12.0]]));
        assert!(hadamard(&a, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn kron_examples() {
        let e1 = Matrix::column(&[1.0, 0.0]);
        let v = Matrix::column(&[7.0, -2.0, 3.0]);
        assert_eq!(kron(&e1, &v).unwrap().as_slice(), &[7.0, -2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(kron(&Matrix::column(&[1.0]), &v).unwrap(), v);
        let u = Matrix::column(&[2.0, 3.0]);
        let w = Matrix::column(&[1.0, 4.0]);
        assert_eq!(kron(&u, &w).unwrap().as_slice(), &[2.0, 8.0, 3.0, 12.0]);
    }

    #[test]
    fn khatri_rao_examples() {
        let a = Matrix::column(&[1.0, 2.0]);
        let b = Matrix::column(&[3.0, 4.0, 5.0]);
        assert_eq!(
            khatri_rao_cols(&a, &b).unwrap().as_slice(),
            &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]
        );

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random(&mut rng, 3, 4);
        let kr = khatri_rao_cols(&Matrix::filled(2, 4, 1.0), &b).unwrap();
        for j in 0..4 {
            let col = kr.col(j);
            assert_eq!(&col[..3], &b.col(j)[..]);
            assert_eq!(&col[3..], &b.col(j)[..]);
        }
        assert!(khatri_rao_cols(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn vec_of_outer_product_is_kron() {
        let u = Matrix::column(&[1.0, -2.0, 0.5]);
        let v = Matrix::column(&[3.0, 4.0]);
        let outer = matmul_nt(&u, &v).unwrap();
        assert_eq!(outer.as_slice(), kron(&u, &v).unwrap().as_slice());
    }

    #[test]
    fn cholesky_solve_examples() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(cholesky_solve(&Matrix::identity(2), &b).unwrap(), b);
        let x = cholesky_solve(&Matrix::identity(2).scale(2.0), &Matrix::column(&[4.0, 6.0])).unwrap();
        // √2 on the diagonal rounds, so the result is exact only to a few ulps
        assert!(x.sub(&Matrix::column(&[2.0, 3.0])).unwrap().max_abs() <= 4.0 * f64::EPSILON * 3.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 3, 8, 20] {
            let s = random_spd(&mut rng, n);
            let b = random(&mut rng, n, 3);
            let x = cholesky_solve(&s, &b).unwrap();
            let resid = matmul(&s, &x).unwrap().sub(&b).unwrap().max_abs();
            assert!(resid <= 1e-10 * b.max_abs(), "n={n} resid={resid}");
        }
    }

    #[test]
    fn cholesky_jitters_semidefinite_gram() {
        // rank-1 PSD matrix: fails without jitter, succeeds with it
        let v = Matrix::column(&[1.0, 2.0, 3.0]);
        let s = matmul_nt(&v, &v).unwrap();
        let chol = Cholesky::factor(&s).unwrap();
        assert!(chol.jitter() > 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let s = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(Cholesky::factor(&s), Err(Error::Singular { .. })));
        let s = m(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(Cholesky::factor(&s), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn spd_inverse_examples() {
        assert_eq!(spd_inverse(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let inv = spd_inverse(&Matrix::diag(&[2.0, 4.0])).unwrap();
        assert!(inv.sub(&Matrix::diag(&[0.5, 0.25])).unwrap().max_abs() <= 4.0 * f64::EPSILON * 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [2, 5, 17, 40] {
            let s = random_spd(&mut rng, n);
            let inv = spd_inverse(&s).unwrap();
            let err = matmul(&s, &inv).unwrap().sub(&Matrix::identity(n)).unwrap().max_abs();
            assert!(err <= 1e-9, "n={n} err={err}");
        }
    }

    #[test]
    fn spd_inverse_reports_near_singular() {
        let s = Matrix::diag(&[1.0, 1e-16]);
        match spd_inverse(&s) {
            Err(Error::Singular { condition, .. }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn int_matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-50i32..50, r * c)
                .prop_map(move |v| Matrix::from_vec(r, c, v.into_iter().map(f64::from).collect()).unwrap())
        }

        proptest! {
            #[test]
            fn khatri_rao_columns_are_krons(
                (a, b) in (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(p, q, m)| (int_matrix(p, m), int_matrix(q, m)))
            ) {
                let kr = khatri_rao_cols(&a, &b).unwrap();
                for j in 0..a.cols() {
                    let expect = kron(&Matrix::column(&a.col(j)), &Matrix::column(&b.col(j))).unwrap();
                    prop_assert_eq!(kr.col(j), expect.into_vec());
                }
            }

            #[test]
            fn integer_products_are_exact(
                (a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(p, q, r)| (int_matrix(p, q), int_matrix(q, r)))
            ) {
                let c = matmul(&a, &b).unwrap();
                for i in 0..a.rows() {
                    for j in 0..b.cols() {
                        let mut s = 0i64;
                        for k in 0..a.cols() {
                            s += a[(i, k)] as i64 * b[(k, j)] as i64;
                        }
                        prop_assert_eq!(c[(i, j)], s as f64);
                    }
                }
                let h = hadamard(&a, &a).unwrap();
                for (x, y) in h.as_slice().iter().zip(a.as_slice()) {
                    prop_assert_eq!(*x, y * y);
                }
            }

            #[test]
            fn solve_multiply_back(seed in any::<u64>(), n in 1usize..12) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_spd(&mut rng, n);
                let b = random(&mut rng, n, 2);
                let x = cholesky_solve(&s, &b).unwrap();
                let resid = matmul(&s, &x).unwrap().sub(&b).unwrap().max_abs();
                prop_assert!(resid <= 1e-10 * b.max_abs().max(1.0));
            }
        }
    }
}
