//! Proxy Hessian `H = 2·X·Xᵀ` from calibration activations, damping, and the
//! inverse-Hessian diagonals used by the sensitivity model and the
//! error-compensation loop.

use crate::error::{BaqError, Result};
use crate::linalg::{cholesky, invert_spd, DenseMatrix};
use crate::scalar::Real;

/// Streaming accumulation of `X·Xᵀ` for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationGram<T> {
    gram: DenseMatrix<T>,
    samples: usize,
}

impl<T: Real> CalibrationGram<T> {
    pub fn new(dim: usize) -> Self {
        Self { gram: DenseMatrix::zeros(dim, dim), samples: 0 }
    }

    /// Gram of a full `N×P` activation matrix.
    pub fn from_activations(x: &DenseMatrix<T>) -> Self {
        let mut g = Self::new(x.rows());
        g.accumulate(x).expect("dimension matches by construction");
        g
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn gram(&self) -> &DenseMatrix<T> {
        &self.gram
    }

    /// `gram += x·xᵀ`, `samples += x.cols()`. `x` is `dim × k`.
    pub fn accumulate(&mut self, x: &DenseMatrix<T>) -> Result<()> {
        let n = self.dim();
        if x.rows() != n {
            return Err(BaqError::DimensionMismatch(format!(
                "calibration chunk has {} rows, gram dimension is {n}",
                x.rows()
            )));
        }
        for i in 0..n {
            let xi = x.row(i);
            for j in 0..=i {
                let s: T = xi.iter().zip(x.row(j)).map(|(&a, &b)| a * b).sum();
                self.gram[(i, j)] += s;
                if i != j {
                    self.gram[(j, i)] += s;
                }
            }
        }
        self.samples += x.cols();
        Ok(())
    }
}

/// Damped proxy Hessian together with the Cholesky factor of its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBundle<T> {
    hessian: DenseMatrix<T>,
    /// Upper factor `U` with `H⁻¹ = Uᵀ·U`; row `q` drives the compensation
    /// update after quantizing column `q`.
    inv_factor: DenseMatrix<T>,
    inv_diag: Vec<T>,
    damping_used: T,
}

impl<T: Real> HessianBundle<T> {
    /// Uses `hessian` as given (no damping). It must be SPD.
    pub fn from_hessian(hessian: DenseMatrix<T>) -> Result<Self> {
        Self::assemble(hessian, T::zero())
    }

    fn assemble(hessian: DenseMatrix<T>, damping_used: T) -> Result<Self> {
        let inverse = invert_spd(&hessian)?;
        let inv_factor = cholesky(&inverse)?.into_matrix().transpose();
        let inv_diag = (0..hessian.rows()).map(|q| inv_factor[(q, q)] * inv_factor[(q, q)]).collect();
        Ok(Self { hessian, inv_factor, inv_diag, damping_used })
    }

    pub fn dim(&self) -> usize {
        self.hessian.rows()
    }

    pub fn hessian(&self) -> &DenseMatrix<T> {
        &self.hessian
    }

    /// `d_q = U_qq²`: the `(0,0)` entry of the inverse of the trailing
    /// submatrix `H[q.., q..]`, i.e. the inverse-Hessian diagonal restricted
    /// to the columns not yet quantized when column `q` is reached.
    pub fn inv_diag(&self) -> &[T] {
        &self.inv_diag
    }

    pub fn damping_used(&self) -> T {
        self.damping_used
    }

    pub fn inv_factor(&self) -> &DenseMatrix<T> {
        &self.inv_factor
    }

    #[inline]
    pub(crate) fn update_row(&self, q: usize) -> &[T] {
        self.inv_factor.row(q)
    }
}

/// `H = 2·gram + λI` with `λ = percdamp · mean(diag(2·gram))`.
pub fn build_hessian<T: Real>(gram: &CalibrationGram<T>, percdamp: T) -> Result<HessianBundle<T>> {
    if gram.samples() == 0 {
        return Err(BaqError::InvalidArgument("calibration gram has no samples".into()));
    }
    if !(percdamp >= T::zero()) {
        return Err(BaqError::InvalidArgument(format!("percdamp must be >= 0, got {percdamp}")));
    }
    let n = gram.dim();
    let mut h = gram.gram().scale(T::lit(2.0));
    let mean_diag = h.diag().into_iter().sum::<T>() / T::from_usize(n.max(1)).unwrap();
    let damping = percdamp * mean_diag;
    for i in 0..n {
        h[(i, i)] += damping;
    }
    HessianBundle::assemble(h, damping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_chunk_only_counts_samples() {
        let mut g = CalibrationGram::<f64>::new(3);
        g.accumulate(&DenseMatrix::zeros(3, 4)).unwrap();
        assert_eq!(g.samples(), 4);
        assert_eq!(g.gram(), &DenseMatrix::zeros(3, 3));
    }

    #[test]
    fn rank_one_chunk() {
        let mut g = CalibrationGram::<f64>::new(2);
        g.accumulate(&DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap()).unwrap();
        assert_eq!(g.gram(), &DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert_eq!(g.samples(), 1);
    }

    #[test]
    fn chunked_equals_concatenated() {
        let a = random_matrix(5, 7, 1);
        let b = random_matrix(5, 3, 2);
        let joined = DenseMatrix::from_fn(5, 10, |i, j| if j < 7 { a[(i, j)] } else { b[(i, j - 7)] });
        let mut chunked = CalibrationGram::new(5);
        chunked.accumulate(&b).unwrap();
        chunked.accumulate(&a).unwrap();
        let whole = CalibrationGram::from_activations(&joined);
        assert_eq!(chunked.samples(), whole.samples());
        let diff = chunked.gram().sub(whole.gram()).unwrap().frobenius_norm();
        assert!(diff <= 1e-9 * whole.gram().frobenius_norm());
    }

    #[test]
    fn accumulate_checks_dimension() {
        let mut g = CalibrationGram::<f64>::new(3);
        assert!(matches!(g.accumulate(&DenseMatrix::zeros(2, 1)), Err(BaqError::DimensionMismatch(_))));
    }

    fn gram_from(m: DenseMatrix<f64>) -> CalibrationGram<f64> {
        CalibrationGram { gram: m, samples: 1 }
    }

    #[test]
    fn half_identity_gives_identity_hessian() {
        let h = build_hessian(&gram_from(DenseMatrix::identity(3).scale(0.5)), 0.0).unwrap();
        assert_eq!(h.hessian(), &DenseMatrix::identity(3));
        assert_eq!(h.inv_diag(), &[1.0, 1.0, 1.0]);
        assert_eq!(h.damping_used(), 0.0);
    }

    #[test]
    fn diagonal_gram_inv_diag() {
        let (a, b) = (3.0, 0.25);
        let h = build_hessian(&gram_from(DenseMatrix::from_diag(&[0.5 * a, 0.5 * b])), 0.0).unwrap();
        assert!((h.inv_diag()[0] - 1.0 / a).abs() < 1e-12);
        assert!((h.inv_diag()[1] - 1.0 / b).abs() < 1e-12);
    }

    #[test]
    fn damping_restores_definiteness() {
        let singular = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            build_hessian(&gram_from(singular.clone()), 0.0),
            Err(BaqError::NotPositiveDefinite { .. })
        ));
        let h = build_hessian(&gram_from(singular), 0.01).unwrap();
        assert!((h.damping_used() - 0.02).abs() < 1e-15);
        assert!(h.inv_diag().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn first_inv_diag_matches_full_inverse() {
        let x = random_matrix(6, 20, 9);
        let h = build_hessian(&CalibrationGram::from_activations(&x), 0.01).unwrap();
        let inv = invert_spd(h.hessian()).unwrap();
        assert!((h.inv_diag()[0] - inv[(0, 0)]).abs() <= 1e-9 * inv[(0, 0)]);
    }

    #[test]
    fn inv_diag_is_trailing_submatrix_inverse() {
        let x = random_matrix(5, 12, 4);
        let h = build_hessian(&CalibrationGram::from_activations(&x), 0.01).unwrap();
        for q in 0..5 {
            let sub = DenseMatrix::from_fn(5 - q, 5 - q, |i, j| h.hessian()[(q + i, q + j)]);
            let expected = invert_spd(&sub).unwrap()[(0, 0)];
            assert!((h.inv_diag()[q] - expected).abs() <= 1e-9 * expected, "q = {q}");
        }
    }

    #[test]
    fn rejects_empty_and_negative_damping() {
        let g = CalibrationGram::<f64>::new(2);
        assert!(build_hessian(&g, 0.01).is_err());
        let g = gram_from(DenseMatrix::identity(2));
        assert!(build_hessian(&g, -1.0).is_err());
    }
}
