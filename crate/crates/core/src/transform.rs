//! Block-diagonal orthogonal changes of basis `(W, H) ↦ (UᵀWV, VᵀHV)` and
//! empirical re-estimation of column sensitivities in the rotated domain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocator::loss_ratio;
use crate::error::{BaqError, Result};
use crate::hessian::HessianBundle;
use crate::linalg::{block_diagonal, random_orthogonal_block_with_rng, DenseMatrix, TransformMode};
use crate::quantizer::{quantize_layer_gptq_with_losses, LayerWeights};
use crate::scalar::Real;

/// Default orthogonal block size.
pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Losses below this are floored before inverting the loss model.
pub const LOSS_FLOOR: f64 = 1e-30;

/// Output-side `u` (`M×M`) and input-side `v` (`N×N`) orthogonal transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPair<T> {
    pub u: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
    pub block_size: usize,
    /// `None` for the identity control.
    pub mode: Option<TransformMode>,
    pub seed: u64,
}

impl<T: Real> TransformPair<T> {
    pub fn identity(m: usize, n: usize) -> Self {
        Self {
            u: DenseMatrix::identity(m),
            v: DenseMatrix::identity(n),
            block_size: 1,
            mode: None,
            seed: 0,
        }
    }

    /// `U·Ŵ′·Vᵀ`: maps a matrix from the transformed domain back.
    pub fn restore_weights(&self, transformed: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.u.matmul(transformed)?.matmul(&self.v.transpose())
    }
}

fn block_sizes(dim: usize, p: usize) -> impl Iterator<Item = usize> {
    (0..dim).step_by(p).map(move |start| p.min(dim - start))
}

/// Block-diagonal pair with `p×p` blocks; a trailing block takes the remainder.
/// `u` blocks are drawn first, then `v` blocks, from one seeded stream.
pub fn build_transforms<T: Real>(m: usize, n: usize, p: usize, mode: TransformMode, seed: u64) -> Result<TransformPair<T>> {
    if p == 0 || p > m.min(n) {
        return Err(BaqError::InvalidArgument(format!("block size {p} must lie in [1, {}]", m.min(n))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |dim: usize| -> Result<DenseMatrix<T>> {
        let blocks = block_sizes(dim, p)
            .map(|size| random_orthogonal_block_with_rng(size, mode, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        block_diagonal(&blocks)
    };
    let u = draw(m)?;
    let v = draw(n)?;
    Ok(TransformPair { u, v, block_size: p, mode: Some(mode), seed })
}

/// `(UᵀWV, VᵀHV)`. Grid bounds are recomputed from the rotated weights and
/// the inverse-Hessian factor from the rotated Hessian.
pub fn apply_transform<T: Real>(
    w: &LayerWeights<T>,
    h: &HessianBundle<T>,
    t: &TransformPair<T>,
) -> Result<(LayerWeights<T>, HessianBundle<T>)> {
    let (m, n) = (w.rows(), w.cols());
    if t.u.rows() != m || t.v.rows() != n || h.dim() != n {
        return Err(BaqError::DimensionMismatch(format!(
            "transform pair ({}, {}) for a {m}x{n} layer with hessian dimension {}",
            t.u.rows(),
            t.v.rows(),
            h.dim()
        )));
    }
    let w_t = t.u.transpose().matmul(w.matrix())?.matmul(&t.v)?;
    let h_t = t.v.transpose().matmul(h.hessian())?.matmul(&t.v)?;
    let half = T::lit(0.5);
    let h_t = DenseMatrix::from_fn(n, n, |i, j| (h_t[(i, j)] + h_t[(j, i)]) * half);
    Ok((LayerWeights::from_matrix(w_t), HessianBundle::from_hessian(h_t)?))
}

/// Inverts the per-column loss model at a uniform width: `C_j = L_j · 2^(2r)`.
pub fn estimate_sensitivity_from_loss<T: Real>(per_column_loss: &[T], r: T) -> Result<Vec<T>> {
    if !(r >= T::zero()) {
        return Err(BaqError::InvalidArgument(format!("probe width must be >= 0, got {r}")));
    }
    let gain = T::lit(2.0).powf(r + r);
    let floor = T::lit(LOSS_FLOOR);
    Ok(per_column_loss.iter().map(|&l| l.max(floor) * gain).collect())
}

/// Quantizes every column at `bits` with error compensation and converts the
/// measured per-column losses into sensitivities.
pub fn probe_column_sensitivities<T: Real>(w: &LayerWeights<T>, h: &HessianBundle<T>, bits: u8) -> Result<Vec<T>> {
    let (_, losses) = quantize_layer_gptq_with_losses(w, h, &vec![bits; w.cols()])?;
    estimate_sensitivity_from_loss(&losses, T::from_u8(bits).unwrap())
}

/// Ratio of geometric to arithmetic mean of the probed sensitivities after
/// applying `t`.
pub fn transformed_ratio_c<T: Real>(
    w: &LayerWeights<T>,
    h: &HessianBundle<T>,
    t: &TransformPair<T>,
    probe_bits: u8,
) -> Result<T> {
    let (w_t, h_t) = apply_transform(w, h, t)?;
    loss_ratio(&probe_column_sensitivities(&w_t, &h_t, probe_bits)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::DegenerateRows;
    use crate::linalg::cholesky;
    use crate::quantizer::column_sensitivities;
    use rand::Rng;

    fn layer(m: usize, n: usize, seed: u64) -> LayerWeights<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayerWeights::from_matrix(DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)))
    }

    /// Diagonal Hessian spanning four decades: strongly heterogeneous columns.
    fn spread_hessian(n: usize) -> HessianBundle<f64> {
        let d: Vec<f64> = (0..n).map(|j| 10f64.powf(4.0 * ((j * 7) % n) as f64 / (n - 1) as f64)).collect();
        HessianBundle::from_hessian(DenseMatrix::from_diag(&d)).unwrap()
    }

    #[test]
    fn unit_blocks_are_signs() {
        for mode in TransformMode::ALL {
            let t: TransformPair<f64> = build_transforms(3, 4, 1, mode, 5).unwrap();
            for (mat, dim) in [(&t.u, 3), (&t.v, 4)] {
                for i in 0..dim {
                    for j in 0..dim {
                        let x = mat[(i, j)];
                        if i == j {
                            assert_eq!(x.abs(), 1.0);
                        } else {
                            assert_eq!(x, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mild_blocks_stay_near_identity() {
        let t: TransformPair<f64> = build_transforms(16, 16, 8, TransformMode::Mild, 2).unwrap();
        for start in [0, 8] {
            let block = DenseMatrix::from_fn(8, 8, |i, j| t.u[(start + i, start + j)]);
            assert!(block.sub(&DenseMatrix::identity(8)).unwrap().frobenius_norm() < 0.2);
        }
    }

    #[test]
    fn haar_pair_is_orthogonal() {
        let t: TransformPair<f64> = build_transforms(128, 130, 64, TransformMode::Haar, 9).unwrap();
        assert!(t.u.orthogonality_residual() <= 1e-10);
        assert!(t.v.orthogonality_residual() <= 1e-10);
        assert_eq!(t.v.rows(), 130);
    }

    #[test]
    fn invalid_block_size() {
        assert!(build_transforms::<f64>(4, 4, 0, TransformMode::Haar, 0).is_err());
        assert!(build_transforms::<f64>(4, 8, 5, TransformMode::Haar, 0).is_err());
    }

    #[test]
    fn identity_transform_is_noop() {
        let w = layer(5, 6, 1);
        let h = spread_hessian(6);
        let (w_t, h_t) = apply_transform(&w, &h, &TransformPair::identity(5, 6)).unwrap();
        assert_eq!(w_t, w);
        assert_eq!(h_t.hessian(), h.hessian());
    }

    #[test]
    fn transform_roundtrip_and_energy() {
        let w = layer(12, 16, 2);
        let h = spread_hessian(16);
        let t: TransformPair<f64> = build_transforms(12, 16, 4, TransformMode::Haar, 3).unwrap();
        let (w_t, h_t) = apply_transform(&w, &h, &t).unwrap();
        let back = t.restore_weights(w_t.matrix()).unwrap();
        assert!(back.sub(w.matrix()).unwrap().max_abs() <= 1e-10);
        assert!((w_t.matrix().frobenius_norm() - w.matrix().frobenius_norm()).abs() <= 1e-9);
        assert!(cholesky(h_t.hessian()).is_ok());
    }

    #[test]
    fn haar_homogenizes_sensitivities() {
        let w = layer(32, 32, 4);
        let h = spread_hessian(32);
        let before = loss_ratio(&column_sensitivities(&w, &h, DegenerateRows::Floor).unwrap()).unwrap();
        let t: TransformPair<f64> = build_transforms(32, 32, 32, TransformMode::Haar, 5).unwrap();
        let (w_t, h_t) = apply_transform(&w, &h, &t).unwrap();
        let after = loss_ratio(&column_sensitivities(&w_t, &h_t, DegenerateRows::Floor).unwrap()).unwrap();
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn sensitivity_from_loss() {
        assert_eq!(estimate_sensitivity_from_loss(&[0.25], 1.0).unwrap(), vec![1.0]);
        assert_eq!(estimate_sensitivity_from_loss(&[0.7], 0.0).unwrap(), vec![0.7]);
        assert_eq!(estimate_sensitivity_from_loss(&[0.0], 0.0).unwrap(), vec![LOSS_FLOOR]);
        let c = [3.0, 0.125, 17.5];
        let r = 3.0;
        let losses: Vec<f64> = c.iter().map(|v| v * 2f64.powf(-2.0 * r)).collect();
        assert_eq!(estimate_sensitivity_from_loss(&losses, r).unwrap(), c.to_vec());
        assert!(estimate_sensitivity_from_loss(&[1.0], -1.0).is_err());
    }

    #[test]
    fn identity_control_matches_untransformed_probe() {
        let w = layer(16, 16, 6);
        let h = spread_hessian(16);
        let direct = loss_ratio(&probe_column_sensitivities(&w, &h, 2).unwrap()).unwrap();
        let control = transformed_ratio_c(&w, &h, &TransformPair::identity(16, 16), 2).unwrap();
        assert_eq!(direct, control);
    }
}
