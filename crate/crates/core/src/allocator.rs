//! Bit-allocation mathematics.
//!
//! The layer loss model is `Σ_k c_k · 2^(−2·R_k)`: each weight (or column)
//! contributes a sensitivity `c_k` times the variance reduction bought with
//! `R_k` bits. Minimizing it under `Σ R_k ≤ R_sum, R_k ≥ 0` gives the
//! water-filling solution `R_k = max(0, ½·log₂(c_k / λ′))`, in which every
//! index holding bits ends up with the same loss `λ′`.
//!
//! The production path shares one bitwidth per column: column sensitivities
//! `C_j` are mapped to integer widths by targeting a common reference loss
//! (`R_j = round(½·log₂(C_j / L_ref))`), and the reference loss is tuned so
//! that the average width hits a target.

use crate::error::{BaqError, Result};
use crate::linalg::DenseMatrix;
use crate::quantizer::LayerWeights;
use crate::scalar::{pow2, Real};

/// Widest column bitwidth; it must fit the 4-bit per-column header.
pub const MAX_BITS: u8 = 15;

/// Sensitivity substituted for rows whose quantizer range is zero.
pub const DEGENERATE_FLOOR: f64 = 1e-30;

/// Per-weight sensitivities `c_ij` and their column sums `C_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityProfile<T> {
    pub per_weight: DenseMatrix<T>,
    pub per_column: Vec<T>,
}

/// What to do with a row whose grid range is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateRows {
    /// Fail with [`BaqError::DegenerateRow`].
    Reject,
    /// Give every weight in the row sensitivity [`DEGENERATE_FLOOR`].
    #[default]
    Floor,
}

/// `c_ij = (row_max_i − row_min_i)² / (12 · inv_diag_j)`.
pub fn weight_sensitivities<T: Real>(
    w: &LayerWeights<T>,
    inv_diag: &[T],
    degenerate: DegenerateRows,
) -> Result<SensitivityProfile<T>> {
    let (m, n) = (w.rows(), w.cols());
    if inv_diag.len() != n {
        return Err(BaqError::DimensionMismatch(format!(
            "{} inverse-Hessian diagonals for {n} columns",
            inv_diag.len()
        )));
    }
    if let Some(q) = inv_diag.iter().position(|&d| !(d > T::zero()) || !d.is_finite()) {
        return Err(BaqError::InvalidArgument(format!("inverse-Hessian diagonal {q} is not positive")));
    }
    let twelve = T::lit(12.0);
    let floor = T::lit(DEGENERATE_FLOOR);
    let mut per_weight = DenseMatrix::zeros(m, n);
    for i in 0..m {
        let range = w.row_max()[i] - w.row_min()[i];
        if range <= T::zero() {
            match degenerate {
                DegenerateRows::Reject => return Err(BaqError::DegenerateRow { row: i }),
                DegenerateRows::Floor => {
                    per_weight.row_mut(i).iter_mut().for_each(|c| *c = floor);
                    continue;
                }
            }
        }
        let num = range * range;
        for (c, &d) in per_weight.row_mut(i).iter_mut().zip(inv_diag) {
            *c = (num / (twelve * d)).max(floor);
        }
    }
    let per_column = (0..n).map(|j| (0..m).map(|i| per_weight[(i, j)]).sum()).collect();
    Ok(SensitivityProfile { per_weight, per_column })
}

/// Integer per-column widths and the losses they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct BitAllocation<T> {
    pub per_column_bits: Vec<u8>,
    pub average_bits: T,
    /// `Σ_j C_j · 2^(−2·R_j)`.
    pub predicted_loss: T,
    /// Reference loss the widths were derived from.
    pub reference_loss: T,
}

impl<T: Real> BitAllocation<T> {
    fn from_bits(c_cols: &[T], bits: Vec<u8>, reference_loss: T) -> Self {
        let average_bits = mean_bits(&bits);
        let predicted_loss = predicted_loss_integer(c_cols, &bits);
        Self { per_column_bits: bits, average_bits, predicted_loss, reference_loss }
    }

    /// Every column at `bits`; the reference loss is the mean column loss.
    pub fn uniform(c_cols: &[T], bits: u8) -> Result<Self> {
        check_width(bits)?;
        let n = T::from_usize(c_cols.len().max(1)).unwrap();
        let mean = c_cols.iter().copied().sum::<T>() / n;
        Ok(Self::from_bits(c_cols, vec![bits; c_cols.len()], mean * pow2::<T>(-2 * bits as i32)))
    }

    /// Number of columns.
    pub fn len(&self) -> usize {
        self.per_column_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_column_bits.is_empty()
    }

    pub fn total_bits(&self) -> usize {
        self.per_column_bits.iter().map(|&b| b as usize).sum()
    }
}

fn check_width(bits: u8) -> Result<()> {
    if bits > MAX_BITS {
        return Err(BaqError::InvalidArgument(format!("bitwidth {bits} exceeds {MAX_BITS}")));
    }
    Ok(())
}

fn mean_bits<T: Real>(bits: &[u8]) -> T {
    if bits.is_empty() {
        return T::zero();
    }
    let total: usize = bits.iter().map(|&b| b as usize).sum();
    T::from_usize(total).unwrap() / T::from_usize(bits.len()).unwrap()
}

fn predicted_loss_integer<T: Real>(c: &[T], bits: &[u8]) -> T {
    c.iter().zip(bits).map(|(&ck, &b)| ck * pow2::<T>(-2 * b as i32)).sum()
}

/// Continuous optimum of the budgeted loss model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedAllocation<T> {
    pub per_index_bits: Vec<T>,
    /// `λ′`: the common loss of every index holding bits.
    pub water_level: T,
    pub total_budget: T,
}

impl<T: Real> RelaxedAllocation<T> {
    pub fn losses(&self, c: &[T]) -> Vec<T> {
        c.iter().zip(&self.per_index_bits).map(|(&ck, &r)| ck * T::lit(2.0).powf(-(r + r))).collect()
    }
}

fn check_sensitivities<T: Real>(c: &[T]) -> Result<()> {
    if c.is_empty() {
        return Err(BaqError::InvalidArgument("empty sensitivity vector".into()));
    }
    if let Some(k) = c.iter().position(|&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(BaqError::InvalidArgument(format!("sensitivity {k} is not a positive finite value")));
    }
    Ok(())
}

/// Exact solution of `min Σ c_k 2^(−2R_k)` s.t. `Σ R_k ≤ r_sum`, `R_k ≥ 0`.
///
/// Sorting the sensitivities makes the active set explicit: with the `k`
/// largest indices active, the level is `log₂λ′ = (Σ_top-k log₂ c − 2·r_sum)/k`,
/// and the right `k` is the largest one whose smallest member still sits
/// above that level.
pub fn relaxed_allocation<T: Real>(c: &[T], r_sum: T) -> Result<RelaxedAllocation<T>> {
    check_sensitivities(c)?;
    if !(r_sum >= T::zero()) || !r_sum.is_finite() {
        return Err(BaqError::InvalidArgument(format!("budget must be finite and >= 0, got {r_sum}")));
    }
    let n = c.len();
    let logs: Vec<T> = c.iter().map(|v| v.log2()).collect();
    if r_sum == T::zero() {
        let water_level = c.iter().copied().fold(T::neg_infinity(), T::max);
        return Ok(RelaxedAllocation { per_index_bits: vec![T::zero(); n], water_level, total_budget: r_sum });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| logs[b].partial_cmp(&logs[a]).unwrap());

    let two_r = r_sum + r_sum;
    let mut prefix = T::zero();
    let mut level = logs[order[0]] - two_r;
    for (k, &idx) in order.iter().enumerate() {
        prefix += logs[idx];
        let candidate = (prefix - two_r) / T::from_usize(k + 1).unwrap();
        if logs[idx] > candidate {
            level = candidate;
        } else {
            break;
        }
    }
    let half = T::lit(0.5);
    let per_index_bits = logs.iter().map(|&l| ((l - level) * half).max(T::zero())).collect();
    Ok(RelaxedAllocation { per_index_bits, water_level: level.exp2(), total_budget: r_sum })
}

/// Rounds `½·log₂(C_j / l_ref)` half away from zero and clamps to `[0, 15]`.
pub fn allocate_given_ref_loss<T: Real>(c_cols: &[T], l_ref: T) -> Result<BitAllocation<T>> {
    if !(l_ref > T::zero()) || !l_ref.is_finite() {
        return Err(BaqError::InvalidArgument(format!("reference loss must be positive, got {l_ref}")));
    }
    let bits = c_cols.iter().map(|&c| width_for(c, l_ref)).collect();
    Ok(BitAllocation::from_bits(c_cols, bits, l_ref))
}

#[inline]
fn width_for<T: Real>(c: T, l_ref: T) -> u8 {
    let raw = (T::lit(0.5) * (c / l_ref).log2()).round();
    raw.max(T::zero()).min(T::from_u8(MAX_BITS).unwrap()).to_u8().unwrap_or(0)
}

/// `L_init = gm(C_j) · 2^(−2·r_ref)`, the per-index loss of the unclamped
/// optimum at average `r_ref`. Non-positive entries are skipped.
pub fn default_initial_loss<T: Real>(c_cols: &[T], r_ref: T) -> T {
    let logs: Vec<T> = c_cols.iter().filter(|&&c| c > T::zero()).map(|&c| c.log2()).collect();
    if logs.is_empty() {
        return T::lit(2.0).powf(-(r_ref + r_ref));
    }
    let mean_log = logs.iter().copied().sum::<T>() / T::from_usize(logs.len()).unwrap();
    T::lit(2.0).powf(mean_log - (r_ref + r_ref))
}

fn check_target<T: Real>(r_ref: T) -> Result<()> {
    if !(r_ref >= T::zero()) || r_ref > T::from_u8(MAX_BITS).unwrap() {
        return Err(BaqError::InvalidArgument(format!("target bits must lie in [0, {MAX_BITS}], got {r_ref}")));
    }
    Ok(())
}

/// One correction step: allocate at `l_init`, measure the average width
/// `R_init`, return `l_init · 2^(2·(R_init − r_ref))`.
pub fn estimate_ref_loss<T: Real>(c_cols: &[T], l_init: T, r_ref: T) -> Result<T> {
    check_target(r_ref)?;
    let r_init = allocate_given_ref_loss(c_cols, l_init)?.average_bits;
    Ok(rescale_ref_loss(l_init, r_init, r_ref))
}

#[inline]
fn rescale_ref_loss<T: Real>(l: T, r_avg: T, r_ref: T) -> T {
    let e = r_avg - r_ref;
    l * T::lit(2.0).powf(e + e)
}

/// Settings for the repeated correction of [`estimate_ref_loss_iterated`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefLossIteration {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RefLossIteration {
    fn default() -> Self {
        Self { tolerance: 0.05, max_iterations: 10 }
    }
}

/// Applies the correction step, then repeats it while the achieved average
/// width is more than `tolerance` away from `r_ref`, returning the reference loss whose allocation came
/// closest when the budget of iterations runs out.
pub fn estimate_ref_loss_iterated<T: Real>(
    c_cols: &[T],
    l_init: T,
    r_ref: T,
    settings: RefLossIteration,
) -> Result<T> {
    check_target(r_ref)?;
    let tol = T::lit(settings.tolerance);
    let mut l = estimate_ref_loss(c_cols, l_init, r_ref)?;
    let mut r_avg = allocate_given_ref_loss(c_cols, l)?.average_bits;
    let mut best = (l, (r_avg - r_ref).abs());
    for _ in 1..settings.max_iterations {
        if best.1 <= tol {
            break;
        }
        l = rescale_ref_loss(l, r_avg, r_ref);
        r_avg = allocate_given_ref_loss(c_cols, l)?.average_bits;
        let err = (r_avg - r_ref).abs();
        if err < best.1 {
            best = (l, err);
        }
    }
    Ok(best.0)
}

/// Integer allocation through the reference-loss rule with the smallest
/// reference loss whose widths still sum to at most `budget` bits.
pub fn allocate_within_budget<T: Real>(c_cols: &[T], budget: usize) -> Result<BitAllocation<T>> {
    check_sensitivities(c_cols)?;
    let total = |l: T| c_cols.iter().map(|&c| width_for(c, l) as usize).sum::<usize>();
    let (lo_c, hi_c) = c_cols
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    // At 2^lo every column gets 15 bits; at 2^hi every column gets 0.
    let mut lo = lo_c.log2() - T::lit(2.0 * MAX_BITS as f64 + 2.0);
    let mut hi = hi_c.log2() + T::lit(2.0);
    if total(lo.exp2()) <= budget {
        return allocate_given_ref_loss(c_cols, lo.exp2());
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid.exp2()) <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    allocate_given_ref_loss(c_cols, hi.exp2())
}

/// `Σ_k c_k · 2^(−2·bits_k)`.
pub fn predicted_total_loss<T: Real>(c: &[T], bits: &[T]) -> Result<T> {
    if c.len() != bits.len() {
        return Err(BaqError::DimensionMismatch(format!("{} sensitivities, {} widths", c.len(), bits.len())));
    }
    Ok(c.iter().zip(bits).map(|(&ck, &r)| ck * T::lit(2.0).powf(-(r + r))).sum())
}

/// Geometric over arithmetic mean of `c`, in `(0, 1]`.
pub fn loss_ratio<T: Real>(c: &[T]) -> Result<T> {
    check_sensitivities(c)?;
    let n = T::from_usize(c.len()).unwrap();
    let max = c.iter().copied().fold(T::zero(), T::max);
    let ln_gm = c.iter().map(|v| v.ln()).sum::<T>() / n;
    let ln_am = max.ln() + (c.iter().map(|&v| v / max).sum::<T>() / n).ln();
    Ok((ln_gm - ln_am).exp().min(T::one()))
}
