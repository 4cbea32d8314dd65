//! Sensitivity-driven mixed-precision weight quantization.
//!
//! Each column of a layer's weight matrix gets its own integer bitwidth,
//! chosen so that every column contributes the same modelled quantization
//! loss; the widths then drive an error-compensated (inverse-Hessian)
//! column-sequential quantizer. All numerics are generic over [`Real`]
//! (`f32` or `f64`); the aliases below fix the scalar for common use.

// `!(x >= 0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod diagnostics;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod packfmt;
pub mod quantizer;
pub mod scalar;
pub mod synth;
pub mod transform;

pub use allocator::{
    allocate_given_ref_loss, allocate_within_budget, default_initial_loss, estimate_ref_loss,
    estimate_ref_loss_iterated, loss_ratio, predicted_total_loss, relaxed_allocation, weight_sensitivities,
    DegenerateRows, RefLossIteration, MAX_BITS,
};
pub use error::{BaqError, Result};
pub use hessian::build_hessian;
pub use linalg::{block_diagonal, cholesky, invert_spd, random_orthogonal_block, TransformMode};
pub use quantizer::{
    baq_quantize_layer, column_sensitivities, measured_layer_loss, quantize_layer_gptq, uniform_quantize,
    BaqOptions, RefLossMode,
};
pub use scalar::Real;
pub use transform::{apply_transform, build_transforms, estimate_sensitivity_from_loss};

pub type DenseMatrix = linalg::DenseMatrix<f64>;
pub type LowerTriangular = linalg::LowerTriangular<f64>;
pub type CalibrationGram = hessian::CalibrationGram<f64>;
pub type HessianBundle = hessian::HessianBundle<f64>;
pub type SensitivityProfile = allocator::SensitivityProfile<f64>;
pub type BitAllocation = allocator::BitAllocation<f64>;
pub type RelaxedAllocation = allocator::RelaxedAllocation<f64>;
pub type LayerWeights = quantizer::LayerWeights<f64>;
pub type QuantizedLayer = quantizer::QuantizedLayer<f64>;
pub type BaqOutcome = quantizer::BaqOutcome<f64>;
pub type TransformPair = transform::TransformPair<f64>;
pub type LayerReport = diagnostics::LayerReport<f64>;

pub type DenseMatrixF32 = linalg::DenseMatrix<f32>;
pub type LayerWeightsF32 = quantizer::LayerWeights<f32>;
pub type QuantizedLayerF32 = quantizer::QuantizedLayer<f32>;
pub type HessianBundleF32 = hessian::HessianBundle<f32>;
