//! Dense real linear algebra: Cholesky, SPD inversion, seeded random
//! orthogonal blocks and block-diagonal assembly.

use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BaqError, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    /// Wraps row-major `data`. Rejects length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BaqError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(BaqError::NonFinite(idx));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(BaqError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(BaqError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, |a, b| a + b)
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(BaqError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Symmetric within `rel_tol` relative to the largest entry magnitude.
    pub fn is_symmetric(&self, rel_tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs().max(T::min_positive_value());
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// `‖selfᵀ·self − I‖_F`, the orthogonality residual of a square matrix.
    pub fn orthogonality_residual(&self) -> T {
        let gram = self.transpose().matmul(self).expect("square by construction");
        gram.sub(&Self::identity(self.cols)).expect("same shape").frobenius_norm()
    }

    /// Casts every entry to another real type.
    pub fn cast<U: Real>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular<T> {
    inner: DenseMatrix<T>,
}

impl<T: Real> LowerTriangular<T> {
    pub fn dim(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.inner[(i, j)]
    }

    pub fn diag(&self) -> Vec<T> {
        self.inner.diag()
    }

    pub fn as_matrix(&self) -> &DenseMatrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.inner
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let n = self.dim();
        DenseMatrix::from_fn(n, n, |i, j| {
            let k_max = i.min(j) + 1;
            (0..k_max).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }

    /// `L⁻¹` by forward substitution, column by column.
    pub fn inverse(&self) -> DenseMatrix<T> {
        let n = self.dim();
        let mut inv = DenseMatrix::zeros(n, n);
        for col in 0..n {
            for i in col..n {
                let mut s = if i == col { T::one() } else { T::zero() };
                for k in col..i {
                    s -= self.get(i, k) * inv[(k, col)];
                }
                inv[(i, col)] = s / self.get(i, i);
            }
        }
        inv
    }
}

/// Left-looking Cholesky factorization `a = L·Lᵀ`, no pivoting.
pub fn cholesky<T: Real>(a: &DenseMatrix<T>) -> Result<LowerTriangular<T>> {
    if !a.is_square() {
        return Err(BaqError::DimensionMismatch(format!(
            "cholesky of non-square {}x{}",
            a.rows, a.cols
        )));
    }
    if !a.is_symmetric(T::lit(1e-8)) {
        return Err(BaqError::InvalidArgument("cholesky input is not symmetric".into()));
    }
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        // pivots lost to cancellation count as singular
        let floor = T::epsilon() * T::from_usize(n).unwrap() * a[(j, j)].abs();
        if pivot <= floor || !pivot.is_finite() {
            return Err(BaqError::NotPositiveDefinite { pivot: j, value: pivot.as_f64() });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(LowerTriangular { inner: l })
}

/// Inverse of a symmetric positive definite matrix via `a⁻¹ = L⁻ᵀ·L⁻¹`.
pub fn invert_spd<T: Real>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let l_inv = cholesky(a)?.inverse();
    let n = a.rows;
    // (L⁻ᵀ L⁻¹)_ij = Σ_k L⁻¹_ki L⁻¹_kj, lower-triangular L⁻¹ so k ≥ max(i, j)
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: T = (i..n).map(|k| l_inv[(k, i)] * l_inv[(k, j)]).sum();
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// How far a random orthogonal block strays from the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformMode {
    /// QR of `I + 0.01·G`.
    Mild,
    /// QR of `I + 0.1·G`.
    Moderate,
    /// QR of a standard Gaussian matrix (Haar measure).
    Haar,
}

impl TransformMode {
    pub const ALL: [TransformMode; 3] = [TransformMode::Mild, TransformMode::Moderate, TransformMode::Haar];

    /// Perturbation scale; `None` for the Haar limit.
    pub fn sigma(self) -> Option<f64> {
        match self {
            TransformMode::Mild => Some(1e-2),
            TransformMode::Moderate => Some(1e-1),
            TransformMode::Haar => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformMode::Mild => "mild",
            TransformMode::Moderate => "moderate",
            TransformMode::Haar => "haar",
        }
    }
}

impl std::str::FromStr for TransformMode {
    type Err = BaqError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mild" => Ok(TransformMode::Mild),
            "moderate" => Ok(TransformMode::Moderate),
            "haar" | "random" | "randomized" => Ok(TransformMode::Haar),
            other => Err(BaqError::InvalidArgument(format!("unknown transform mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TransformMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Seeded `p×p` orthogonal block. See [`random_orthogonal_block_with_rng`].
pub fn random_orthogonal_block<T: Real>(p: usize, mode: TransformMode, seed: u64) -> Result<DenseMatrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_orthogonal_block_with_rng(p, mode, &mut rng)
}

/// Orthogonal factor of the QR decomposition of `I + σG` (or `G` for Haar),
/// with the sign ambiguity fixed so that `R` has a positive diagonal.
pub fn random_orthogonal_block_with_rng<T: Real, R: Rng + ?Sized>(
    p: usize,
    mode: TransformMode,
    rng: &mut R,
) -> Result<DenseMatrix<T>> {
    if p == 0 {
        return Err(BaqError::InvalidArgument("orthogonal block size must be >= 1".into()));
    }
    let mut g = DenseMatrix::<f64>::zeros(p, p);
    for v in g.data.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    if let Some(sigma) = mode.sigma() {
        for v in g.data.iter_mut() {
            *v *= sigma;
        }
        for i in 0..p {
            g[(i, i)] += 1.0;
        }
    }
    Ok(householder_q_positive(g).cast())
}

/// Householder QR, returning `Q` scaled so that `R_kk > 0`.
fn householder_q_positive(mut a: DenseMatrix<f64>) -> DenseMatrix<f64> {
    let n = a.rows;
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut r_diag = vec![0.0; n];
    for k in 0..n {
        let norm = (k..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            r_diag[k] = 0.0;
            continue;
        }
        let alpha = if a[(k, k)] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(None);
            r_diag[k] = a[(k, k)];
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        for j in k..n {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * a[(k + t, j)]).sum();
            for (t, vi) in v.iter().enumerate() {
                a[(k + t, j)] -= 2.0 * vi * dot;
            }
        }
        r_diag[k] = a[(k, k)];
        reflectors.push(Some(v));
    }
    // Q = H_0 H_1 … H_{n-1}, applied to the identity from the right-most reflector.
    let mut q = DenseMatrix::<f64>::identity(n);
    for (k, v) in reflectors.iter().enumerate().rev() {
        let Some(v) = v else { continue };
        for j in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * q[(k + t, j)]).sum();
            for (t, vi) in v.iter().enumerate() {
                q[(k + t, j)] -= 2.0 * vi * dot;
            }
        }
    }
    for (k, &rk) in r_diag.iter().enumerate() {
        if rk < 0.0 {
            for i in 0..n {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    q
}

/// Assembles `diag(B_1, …, B_k)` from square blocks.
pub fn block_diagonal<T: Real>(blocks: &[DenseMatrix<T>]) -> Result<DenseMatrix<T>> {
    if let Some(b) = blocks.iter().find(|b| !b.is_square()) {
        return Err(BaqError::DimensionMismatch(format!(
            "block_diagonal needs square blocks, got {}x{}",
            b.rows, b.cols
        )));
    }
    let n: usize = blocks.iter().map(|b| b.rows).sum();
    let mut out = DenseMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        for i in 0..b.rows {
            for j in 0..b.cols {
                out[(offset + i, offset + j)] = b[(i, j)];
            }
        }
        offset += b.rows;
    }
    Ok(out)
}
