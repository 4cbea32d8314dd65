//! Seeded synthetic layers: weights with log-uniform row ranges and
//! calibration activations whose Gram matrix has a prescribed spectrum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BaqError, Result};
use crate::linalg::{random_orthogonal_block_with_rng, DenseMatrix, TransformMode};

/// Eigenvalues of the calibration Gram matrix, before shuffling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spectrum {
    /// Log-spaced from 1 down to `1/condition`.
    LogSpaced { condition: f64 },
    /// `count` outlier channels at energy `gain`, the rest at 1.
    Outliers { count: usize, gain: f64 },
}

impl Spectrum {
    fn values(&self, n: usize) -> Result<Vec<f64>> {
        match *self {
            Spectrum::LogSpaced { condition } => {
                if !(condition >= 1.0) || !condition.is_finite() {
                    return Err(BaqError::InvalidArgument(format!("condition number must be >= 1, got {condition}")));
                }
                Ok((0..n)
                    .map(|k| if n == 1 { 1.0 } else { condition.powf(-(k as f64) / (n - 1) as f64) })
                    .collect())
            }
            Spectrum::Outliers { count, gain } => {
                if count > n || !(gain >= 1.0) || !gain.is_finite() {
                    return Err(BaqError::InvalidArgument(format!(
                        "need at most {n} outlier channels with gain >= 1, got {count} at {gain}"
                    )));
                }
                Ok((0..n).map(|k| if k < count { gain } else { 1.0 }).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    /// Row ranges span `10^0 … 10^decades`.
    pub decades: f64,
    pub spectrum: Spectrum,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayer {
    /// `rows × cols`.
    pub weights: DenseMatrix<f64>,
    /// `cols × cols` activations; their Gram matrix is `Q·diag(s)·Qᵀ`.
    pub calibration: DenseMatrix<f64>,
}

/// Generates one layer.
///
/// The spectrum `s` is shuffled across input channels; the basis `Q` is a near-identity orthogonal matrix,
/// so channel `j` keeps roughly eigenvalue `s_j` on the Gram diagonal and the
/// column sensitivities inherit the spread of the spectrum.
pub fn synth_layer(cfg: &SynthConfig) -> Result<SynthLayer> {
    let SynthConfig { rows, cols, decades, spectrum, seed } = *cfg;
    if rows == 0 || cols == 0 {
        return Err(BaqError::InvalidArgument("synthetic layer needs at least one row and column".into()));
    }
    if !(decades >= 0.0) || !decades.is_finite() {
        return Err(BaqError::InvalidArgument(format!("decades must be >= 0, got {decades}")));
    }
    let mut spectrum = spectrum.values(cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut weights = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        let half_range = 0.5 * 10f64.powf(decades * rng.random::<f64>());
        for v in weights.row_mut(i) {
            *v = half_range * rng.random_range(-1.0..=1.0);
        }
    }

    spectrum.shuffle(&mut rng);
    let basis: DenseMatrix<f64> = random_orthogonal_block_with_rng(cols, TransformMode::Mild, &mut rng)?;
    let mixing: DenseMatrix<f64> = random_orthogonal_block_with_rng(cols, TransformMode::Haar, &mut rng)?;
    let scaled = DenseMatrix::from_fn(cols, cols, |i, k| basis[(i, k)] * spectrum[k].sqrt());
    let calibration = scaled.matmul(&mixing.transpose())?;
    Ok(SynthLayer { weights, calibration })
}
