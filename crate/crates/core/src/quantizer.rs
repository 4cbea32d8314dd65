//! Mid-rise uniform quantizer, the error-compensated column-sequential
//! quantization loop, and the end-to-end allocation + quantization workflow.

use crate::allocator::{
    allocate_given_ref_loss, default_initial_loss, estimate_ref_loss, estimate_ref_loss_iterated,
    weight_sensitivities, BitAllocation, DegenerateRows, RefLossIteration, MAX_BITS,
};
use crate::error::{BaqError, Result};
use crate::hessian::HessianBundle;
use crate::linalg::DenseMatrix;
use crate::scalar::{pow2, Real};

/// Weight matrix with frozen per-row grid bounds.
///
/// Bounds are narrowed outward to `f32` on construction so that the packed
/// file (which stores them as `f32`) reconstructs bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    matrix: DenseMatrix<T>,
    row_min: Vec<T>,
    row_max: Vec<T>,
}

fn narrow_down<T: Real>(x: T) -> T {
    let v = x.as_f64();
    let f = v as f32;
    let f = if f as f64 > v { f.next_down() } else { f };
    T::lit(f as f64)
}

fn narrow_up<T: Real>(x: T) -> T {
    let v = x.as_f64();
    let f = v as f32;
    let f = if (f as f64) < v { f.next_up() } else { f };
    T::lit(f as f64)
}

impl<T: Real> LayerWeights<T> {
    /// Grid bounds are each row's exact min and max.
    pub fn from_matrix(matrix: DenseMatrix<T>) -> Self {
        let (row_min, row_max) = (0..matrix.rows())
            .map(|i| {
                let row = matrix.row(i);
                let lo = row.iter().copied().fold(T::infinity(), T::min);
                let hi = row.iter().copied().fold(T::neg_infinity(), T::max);
                if row.is_empty() {
                    (T::zero(), T::zero())
                } else {
                    (narrow_down(lo), narrow_up(hi))
                }
            })
            .unzip();
        Self { matrix, row_min, row_max }
    }

    /// Explicit bounds; they must cover every entry of their row.
    pub fn with_bounds(matrix: DenseMatrix<T>, row_min: Vec<T>, row_max: Vec<T>) -> Result<Self> {
        if row_min.len() != matrix.rows() || row_max.len() != matrix.rows() {
            return Err(BaqError::DimensionMismatch("one (min, max) pair per row required".into()));
        }
        let row_min: Vec<T> = row_min.into_iter().map(narrow_down).collect();
        let row_max: Vec<T> = row_max.into_iter().map(narrow_up).collect();
        for i in 0..matrix.rows() {
            let (lo, hi) = (row_min[i], row_max[i]);
            if !(lo <= hi) || matrix.row(i).iter().any(|&v| v < lo || v > hi) {
                return Err(BaqError::InvalidRange { lo: lo.as_f64(), hi: hi.as_f64() });
            }
        }
        Ok(Self { matrix, row_min, row_max })
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.matrix
    }

    pub fn row_min(&self) -> &[T] {
        &self.row_min
    }

    pub fn row_max(&self) -> &[T] {
        &self.row_max
    }
}

/// Reconstruction level of `code` on the `2^bits`-cell grid over `[lo, hi]`.
#[inline]
pub fn dequantize_code<T: Real>(lo: T, hi: T, bits: u8, code: u32) -> T {
    if hi <= lo {
        return lo;
    }
    let step = (hi - lo) * pow2::<T>(-(bits as i32));
    lo + (T::from_u32(code).unwrap() + T::lit(0.5)) * step
}

#[inline]
fn quantize_on_grid<T: Real>(value: T, lo: T, hi: T, bits: u8) -> (u32, T) {
    if hi <= lo {
        return (0, lo);
    }
    let levels = 1u32 << bits;
    let step = (hi - lo) * pow2::<T>(-(bits as i32));
    let cell = ((value - lo) / step).floor();
    let code = if cell.is_nan() || cell <= T::zero() {
        0
    } else {
        cell.to_u32().unwrap_or(u32::MAX).min(levels - 1)
    };
    (code, lo + (T::from_u32(code).unwrap() + T::lit(0.5)) * step)
}

/// Mid-rise quantization of one value: `2^bits` equal cells on `[lo, hi]`,
/// reconstruction at the cell midpoint. Values outside the range clamp to
/// the edge cells.
pub fn uniform_quantize<T: Real>(value: T, lo: T, hi: T, bits: u8) -> Result<(u32, T)> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(BaqError::InvalidRange { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    if bits > MAX_BITS {
        return Err(BaqError::InvalidArgument(format!("bitwidth {bits} exceeds {MAX_BITS}")));
    }
    Ok(quantize_on_grid(value, lo, hi, bits))
}

/// Integer codes with their per-column widths and per-row grids.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer<T> {
    rows: usize,
    cols: usize,
    codes: Vec<u16>,
    per_column_bits: Vec<u8>,
    row_min: Vec<T>,
    row_max: Vec<T>,
    dequantized: DenseMatrix<T>,
}

impl<T: Real> QuantizedLayer<T> {
    /// Validates code ranges and rebuilds the dequantized matrix.
    pub fn from_codes(
        rows: usize,
        cols: usize,
        codes: Vec<u16>,
        per_column_bits: Vec<u8>,
        row_min: Vec<T>,
        row_max: Vec<T>,
    ) -> Result<Self> {
        if codes.len() != rows * cols || per_column_bits.len() != cols || row_min.len() != rows || row_max.len() != rows
        {
            return Err(BaqError::DimensionMismatch(format!("inconsistent quantized layer of shape {rows}x{cols}")));
        }
        if let Some(&b) = per_column_bits.iter().find(|&&b| b > MAX_BITS) {
            return Err(BaqError::InvalidArgument(format!("bitwidth {b} exceeds {MAX_BITS}")));
        }
        for i in 0..rows {
            for (j, &bits) in per_column_bits.iter().enumerate() {
                let code = codes[i * cols + j] as u32;
                if code >> bits != 0 {
                    return Err(BaqError::CodeOverflow { row: i, col: j, code, bits });
                }
            }
        }
        let dequantized = DenseMatrix::from_fn(rows, cols, |i, j| {
            dequantize_code(row_min[i], row_max[i], per_column_bits[j], codes[i * cols + j] as u32)
        });
        Ok(Self { rows, cols, codes, per_column_bits, row_min, row_max, dequantized })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize) -> u16 {
        self.codes[i * self.cols + j]
    }

    /// Row-major codes.
    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn per_column_bits(&self) -> &[u8] {
        &self.per_column_bits
    }

    pub fn row_min(&self) -> &[T] {
        &self.row_min
    }

    pub fn row_max(&self) -> &[T] {
        &self.row_max
    }

    pub fn dequantized(&self) -> &DenseMatrix<T> {
        &self.dequantized
    }

    /// Code bits actually stored, excluding headers and padding.
    pub fn code_bits(&self) -> usize {
        self.per_column_bits.iter().map(|&b| b as usize * self.rows).sum()
    }
}

fn check_bits(cols: usize, bits: &[u8]) -> Result<()> {
    if bits.len() != cols {
        return Err(BaqError::DimensionMismatch(format!("{} widths for {cols} columns", bits.len())));
    }
    if let Some(&b) = bits.iter().find(|&&b| b > MAX_BITS) {
        return Err(BaqError::InvalidArgument(format!("bitwidth {b} exceeds {MAX_BITS}")));
    }
    Ok(())
}

/// Error-compensated quantization at the given per-column widths.
pub fn quantize_layer_gptq<T: Real>(
    w: &LayerWeights<T>,
    h: &HessianBundle<T>,
    bits: &[u8],
) -> Result<QuantizedLayer<T>> {
    quantize_layer_gptq_with_losses(w, h, bits).map(|(q, _)| q)
}

/// Like [`quantize_layer_gptq`], also returning the per-column proxy loss
/// `L_j = Σ_i (w̃_ij − ŵ_ij)² / d_j`, where `w̃` is the compensated weight at
/// the moment column `j` is quantized. The column losses sum to the layer's
/// measured proxy loss.
///
/// Columns are visited left to right. After column `q`, each row's scaled
/// residual `(w̃_iq − ŵ_iq)/U_qq` is pushed into the remaining columns along
/// row `q` of the upper Cholesky factor `U` of `H⁻¹`. Rows never interact,
/// so the loop runs row by row.
pub fn quantize_layer_gptq_with_losses<T: Real>(
    w: &LayerWeights<T>,
    h: &HessianBundle<T>,
    bits: &[u8],
) -> Result<(QuantizedLayer<T>, Vec<T>)> {
    let (m, n) = (w.rows(), w.cols());
    if h.dim() != n {
        return Err(BaqError::DimensionMismatch(format!("hessian of dimension {} for {n} columns", h.dim())));
    }
    check_bits(n, bits)?;
    let mut codes = vec![0u16; m * n];
    let mut column_loss = vec![T::zero(); n];
    let mut dequantized = DenseMatrix::zeros(m, n);
    let mut work = vec![T::zero(); n];
    for i in 0..m {
        let (lo, hi) = (w.row_min[i], w.row_max[i]);
        work.copy_from_slice(w.matrix.row(i));
        for q in 0..n {
            let u = h.update_row(q);
            let d = u[q];
            let (code, recon) = quantize_on_grid(work[q], lo, hi, bits[q]);
            codes[i * n + q] = code as u16;
            dequantized[(i, q)] = recon;
            let residual = work[q] - recon;
            column_loss[q] += residual * residual / (d * d);
            if residual != T::zero() {
                let e = residual / d;
                for (wr, &ur) in work[q + 1..].iter_mut().zip(&u[q + 1..]) {
                    *wr -= e * ur;
                }
            }
        }
    }
    let layer = QuantizedLayer {
        rows: m,
        cols: n,
        codes,
        per_column_bits: bits.to_vec(),
        row_min: w.row_min.clone(),
        row_max: w.row_max.clone(),
        dequantized,
    };
    Ok((layer, column_loss))
}

/// Plain rounding of every weight to its grid, no error compensation.
pub fn quantize_layer_independent<T: Real>(w: &LayerWeights<T>, bits: &[u8]) -> Result<QuantizedLayer<T>> {
    let (m, n) = (w.rows(), w.cols());
    check_bits(n, bits)?;
    let mut codes = vec![0u16; m * n];
    let mut dequantized = DenseMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let (code, recon) = quantize_on_grid(w.matrix[(i, j)], w.row_min[i], w.row_max[i], bits[j]);
            codes[i * n + j] = code as u16;
            dequantized[(i, j)] = recon;
        }
    }
    Ok(QuantizedLayer {
        rows: m,
        cols: n,
        codes,
        per_column_bits: bits.to_vec(),
        row_min: w.row_min.clone(),
        row_max: w.row_max.clone(),
        dequantized,
    })
}

/// `Σ_i Δw_iᵀ · H · Δw_i` over the rows of the reconstruction error.
pub fn measured_layer_loss<T: Real>(
    original: &LayerWeights<T>,
    quantized: &QuantizedLayer<T>,
    h: &HessianBundle<T>,
) -> Result<T> {
    let (m, n) = (original.rows(), original.cols());
    if quantized.rows != m || quantized.cols != n || h.dim() != n {
        return Err(BaqError::DimensionMismatch("layer, quantized layer and hessian disagree".into()));
    }
    let hess = h.hessian();
    let mut total = T::zero();
    let mut delta = vec![T::zero(); n];
    for i in 0..m {
        for ((d, &a), &b) in delta.iter_mut().zip(original.matrix.row(i)).zip(quantized.dequantized.row(i)) {
            *d = a - b;
        }
        for (r, &dr) in delta.iter().enumerate() {
            if dr == T::zero() {
                continue;
            }
            let hr: T = hess.row(r).iter().zip(&delta).map(|(&x, &y)| x * y).sum();
            total += dr * hr;
        }
    }
    Ok(total.max(T::zero()))
}

/// How the reference loss is tuned to the target average width.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RefLossMode {
    /// A single correction step.
    #[default]
    SingleStep,
    /// Repeat the correction until the average is within tolerance.
    Iterate(RefLossIteration),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaqOptions<T> {
    pub target_bits: T,
    /// Starting reference loss; defaults to `gm(C_j)·2^(−2·target)`.
    pub initial_loss: Option<T>,
    pub ref_loss: RefLossMode,
    pub degenerate_rows: DegenerateRows,
}

impl<T: Real> BaqOptions<T> {
    pub fn new(target_bits: T) -> Self {
        Self {
            target_bits,
            initial_loss: None,
            ref_loss: RefLossMode::SingleStep,
            degenerate_rows: DegenerateRows::Floor,
        }
    }

    pub fn iterate(mut self) -> Self {
        self.ref_loss = RefLossMode::Iterate(RefLossIteration::default());
        self
    }
}

/// Result of [`baq_quantize_layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaqOutcome<T> {
    pub layer: QuantizedLayer<T>,
    pub allocation: BitAllocation<T>,
    /// Column sensitivities `C_j` the allocation was computed from.
    pub column_sensitivities: Vec<T>,
    pub column_loss: Vec<T>,
}

/// Column sensitivities `C_j` of a layer under a given Hessian.
pub fn column_sensitivities<T: Real>(
    w: &LayerWeights<T>,
    h: &HessianBundle<T>,
    degenerate: DegenerateRows,
) -> Result<Vec<T>> {
    Ok(weight_sensitivities(w, h.inv_diag(), degenerate)?.per_column)
}

/// Column sensitivities → reference loss → integer widths → compensated
/// quantization at those widths.
pub fn baq_quantize_layer<T: Real>(
    w: &LayerWeights<T>,
    h: &HessianBundle<T>,
    options: &BaqOptions<T>,
) -> Result<BaqOutcome<T>> {
    let target = options.target_bits;
    if !(target >= T::zero()) || target > T::from_u8(MAX_BITS).unwrap() {
        return Err(BaqError::InvalidArgument(format!("target bits must lie in [0, {MAX_BITS}], got {target}")));
    }
    if h.dim() != w.cols() {
        return Err(BaqError::DimensionMismatch(format!("hessian of dimension {} for {} columns", h.dim(), w.cols())));
    }
    let c_cols = column_sensitivities(w, h, options.degenerate_rows)?;
    let l_init = options.initial_loss.unwrap_or_else(|| default_initial_loss(&c_cols, target));
    let l_ref = match options.ref_loss {
        RefLossMode::SingleStep => estimate_ref_loss(&c_cols, l_init, target)?,
        RefLossMode::Iterate(settings) => estimate_ref_loss_iterated(&c_cols, l_init, target, settings)?,
    };
    let allocation = allocate_given_ref_loss(&c_cols, l_ref)?;
    let (layer, column_loss) = quantize_layer_gptq_with_losses(w, h, &allocation.per_column_bits)?;
    Ok(BaqOutcome { layer, allocation, column_sensitivities: c_cols, column_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::{build_hessian, CalibrationGram};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(m: usize, n: usize, seed: u64) -> LayerWeights<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayerWeights::from_matrix(DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)))
    }

    fn correlated_hessian(n: usize, seed: u64) -> HessianBundle<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared: Vec<f64> = (0..4 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = DenseMatrix::from_fn(n, 4 * n, |_, p| shared[p] + 0.3 * rng.random_range(-1.0..1.0));
        build_hessian(&CalibrationGram::from_activations(&x), 0.01).unwrap()
    }

    #[test]
    fn uniform_quantize_examples() {
        assert_eq!(uniform_quantize(0.3, -1.0, 1.0, 1).unwrap(), (1, 0.5));
        assert_eq!(uniform_quantize(-0.3, -1.0, 1.0, 1).unwrap(), (0, -0.5));
        assert_eq!(uniform_quantize(0.9, -1.0, 3.0, 0).unwrap(), (0, 1.0));
        let (code, recon) = uniform_quantize(-1.0, -1.0, 1.0, 4).unwrap();
        assert_eq!(code, 0);
        assert_eq!(recon, -1.0 + 0.0625);
        // the right edge lands in the last cell
        assert_eq!(uniform_quantize(1.0, -1.0, 1.0, 4).unwrap().0, 15);
        assert_eq!(uniform_quantize(7.0, -1.0, 1.0, 2).unwrap().0, 3);
        assert_eq!(uniform_quantize(-7.0, -1.0, 1.0, 2).unwrap().0, 0);
    }

    #[test]
    fn uniform_quantize_errors() {
        assert!(matches!(uniform_quantize(0.0, 1.0, 1.0, 2), Err(BaqError::InvalidRange { .. })));
        assert!(matches!(uniform_quantize(0.0, 2.0, 1.0, 2), Err(BaqError::InvalidRange { .. })));
        assert!(uniform_quantize(0.0, 0.0, 1.0, 16).is_err());
    }

    #[test]
    fn bounds_cover_rows_after_narrowing() {
        let w = random_layer(8, 9, 3);
        for i in 0..8 {
            let lo = w.row_min()[i];
            let hi = w.row_max()[i];
            assert_eq!(lo, lo as f32 as f64);
            assert_eq!(hi, hi as f32 as f64);
            assert!(w.matrix().row(i).iter().all(|&v| lo <= v && v <= hi));
        }
    }

    #[test]
    fn with_bounds_validates() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(LayerWeights::with_bounds(m.clone(), vec![0.5], vec![1.0]).is_err());
        assert!(LayerWeights::with_bounds(m.clone(), vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(LayerWeights::with_bounds(m, vec![-1.0], vec![1.0]).is_ok());
    }

    #[test]
    fn diagonal_hessian_means_no_propagation() {
        let w = random_layer(5, 6, 1);
        let h = HessianBundle::from_hessian(DenseMatrix::from_diag(&[1.0, 2.0, 3.0, 0.5, 4.0, 1.5])).unwrap();
        let bits = [2, 3, 1, 0, 4, 2];
        let gptq = quantize_layer_gptq(&w, &h, &bits).unwrap();
        let plain = quantize_layer_independent(&w, &bits).unwrap();
        assert_eq!(gptq, plain);
    }

    #[test]
    fn representable_input_is_exact() {
        // 4-bit grid over [0, 16]: midpoints are k + 0.5
        let m = DenseMatrix::from_fn(3, 4, |i, j| ((i * 5 + j * 3) % 16) as f64 + 0.5);
        let w = LayerWeights::with_bounds(m.clone(), vec![0.0; 3], vec![16.0; 3]).unwrap();
        let h = correlated_hessian(4, 2);
        let q = quantize_layer_gptq(&w, &h, &[4; 4]).unwrap();
        assert_eq!(q.dequantized(), &m);
        assert_eq!(measured_layer_loss(&w, &q, &h).unwrap(), 0.0);
    }

    #[test]
    fn compensation_beats_rounding_on_correlated_pair() {
        let w = LayerWeights::with_bounds(
            DenseMatrix::from_rows(&[vec![0.3, 0.05], vec![-0.3, -0.05]]).unwrap(),
            vec![-1.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        let h = HessianBundle::from_hessian(DenseMatrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap()).unwrap();
        let gptq = quantize_layer_gptq(&w, &h, &[1, 1]).unwrap();
        let plain = quantize_layer_independent(&w, &[1, 1]).unwrap();
        let l_gptq = measured_layer_loss(&w, &gptq, &h).unwrap();
        let l_plain = measured_layer_loss(&w, &plain, &h).unwrap();
        assert!(l_gptq < l_plain, "{l_gptq} vs {l_plain}");
    }

    #[test]
    fn measured_loss_identity_is_squared_frobenius() {
        let w = random_layer(4, 5, 8);
        let h = HessianBundle::from_hessian(DenseMatrix::identity(5)).unwrap();
        let q = quantize_layer_gptq(&w, &h, &[2; 5]).unwrap();
        let err = w.matrix().sub(q.dequantized()).unwrap().frobenius_norm();
        let loss = measured_layer_loss(&w, &q, &h).unwrap();
        assert!((loss - err * err).abs() <= 1e-12 * loss);
    }

    #[test]
    fn measured_loss_diagonal_matches_weightwise_sum() {
        let w = random_layer(6, 4, 12);
        let diag = [0.5, 2.0, 1.25, 3.0];
        let h = HessianBundle::from_hessian(DenseMatrix::from_diag(&diag)).unwrap();
        let q = quantize_layer_gptq(&w, &h, &[1, 2, 3, 2]).unwrap();
        let mut expected = 0.0;
        for i in 0..6 {
            for j in 0..4 {
                let e = w.matrix()[(i, j)] - q.dequantized()[(i, j)];
                expected += e * e / h.inv_diag()[j];
            }
        }
        let loss = measured_layer_loss(&w, &q, &h).unwrap();
        assert!((loss - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn column_losses_sum_to_measured_loss() {
        let w = random_layer(7, 10, 5);
        let h = correlated_hessian(10, 6);
        let bits = [2, 0, 3, 1, 2, 4, 2, 1, 0, 3];
        let (q, losses) = quantize_layer_gptq_with_losses(&w, &h, &bits).unwrap();
        let total: f64 = losses.iter().sum();
        let measured = measured_layer_loss(&w, &q, &h).unwrap();
        assert!((total - measured).abs() <= 1e-9 * measured, "{total} vs {measured}");
    }

    #[test]
    fn codes_fit_and_roundtrip() {
        let w = random_layer(6, 8, 2);
        let h = correlated_hessian(8, 3);
        let bits = [0, 1, 2, 3, 4, 8, 15, 2];
        let q = quantize_layer_gptq(&w, &h, &bits).unwrap();
        for i in 0..6 {
            for (j, &b) in bits.iter().enumerate() {
                assert!((q.code(i, j) as u32) < (1u32 << b));
            }
        }
        let rebuilt = QuantizedLayer::from_codes(
            6,
            8,
            q.codes().to_vec(),
            bits.to_vec(),
            q.row_min().to_vec(),
            q.row_max().to_vec(),
        )
        .unwrap();
        assert_eq!(rebuilt, q);
    }

    #[test]
    fn from_codes_rejects_overflow() {
        let r = QuantizedLayer::<f64>::from_codes(1, 1, vec![4], vec![2], vec![0.0], vec![1.0]);
        assert!(matches!(r, Err(BaqError::CodeOverflow { code: 4, bits: 2, .. })));
    }

    #[test]
    fn gptq_checks_dimensions() {
        let w = random_layer(2, 3, 0);
        let h = HessianBundle::from_hessian(DenseMatrix::identity(2)).unwrap();
        assert!(matches!(quantize_layer_gptq(&w, &h, &[2; 3]), Err(BaqError::DimensionMismatch(_))));
        let h = HessianBundle::from_hessian(DenseMatrix::identity(3)).unwrap();
        assert!(matches!(quantize_layer_gptq(&w, &h, &[2; 2]), Err(BaqError::DimensionMismatch(_))));
    }

    #[test]
    fn constant_rows_quantize_exactly() {
        let m = DenseMatrix::from_rows(&[vec![0.25; 3], vec![-1.0, 0.0, 1.0]]).unwrap();
        let w = LayerWeights::from_matrix(m);
        let h = correlated_hessian(3, 4);
        let out = baq_quantize_layer(&w, &h, &BaqOptions::new(2.0)).unwrap();
        assert_eq!(out.layer.dequantized().row(0), &[0.25; 3]);
    }

    #[test]
    fn homogeneous_layer_matches_fixed_bits() {
        let row: Vec<f64> = (0..6).map(|j| j as f64 * 0.37 - 1.0).collect();
        let w = LayerWeights::from_matrix(DenseMatrix::from_rows(&vec![row; 4]).unwrap());
        let h = HessianBundle::from_hessian(DenseMatrix::identity(6)).unwrap();
        let out = baq_quantize_layer(&w, &h, &BaqOptions::new(3.0)).unwrap();
        assert_eq!(out.allocation.per_column_bits, vec![3; 6]);
        assert_eq!(out.layer, quantize_layer_gptq(&w, &h, &[3; 6]).unwrap());
    }

    #[test]
    fn high_rate_is_near_lossless() {
        let w = random_layer(16, 16, 21);
        let h = correlated_hessian(16, 22);
        let out = baq_quantize_layer(&w, &h, &BaqOptions::new(15.0)).unwrap();
        let rel = w.matrix().sub(out.layer.dequantized()).unwrap().frobenius_norm() / w.matrix().frobenius_norm();
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn baq_rejects_bad_target() {
        let w = random_layer(2, 2, 0);
        let h = HessianBundle::from_hessian(DenseMatrix::identity(2)).unwrap();
        assert!(baq_quantize_layer(&w, &h, &BaqOptions::new(16.0)).is_err());
        assert!(baq_quantize_layer(&w, &h, &BaqOptions::new(-1.0)).is_err());
    }

    #[test]
    fn deterministic() {
        let w = random_layer(8, 12, 30);
        let h = correlated_hessian(12, 31);
        let a = baq_quantize_layer(&w, &h, &BaqOptions::new(2.0)).unwrap();
        let b = baq_quantize_layer(&w, &h, &BaqOptions::new(2.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_precision_pipeline() {
        let w64 = random_layer(4, 6, 40);
        let w = LayerWeights::from_matrix(w64.matrix().cast::<f32>());
        let h = HessianBundle::from_hessian(DenseMatrix::<f32>::identity(6)).unwrap();
        let out = baq_quantize_layer(&w, &h, &BaqOptions::new(2.0f32)).unwrap();
        assert_eq!(out.layer.cols(), 6);
        assert!(out.allocation.average_bits > 1.0);
    }
}
