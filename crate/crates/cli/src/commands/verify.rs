use std::path::Path;

use anyhow::{bail, Context};
use baq_core::hessian::{build_hessian, CalibrationGram};
use baq_core::packfmt::{read_layer, unpack_quantized, PackedLayout};
use baq_core::quantizer::{measured_layer_loss, LayerWeights, QuantizedLayer};

use crate::failure::CliResult;

pub fn run(packed: &Path, reference: &Path, calib: Option<&Path>, percdamp: f64) -> CliResult<()> {
    Ok(inspect(packed, reference, calib, percdamp)?)
}

fn inspect(packed: &Path, reference: &Path, calib: Option<&Path>, percdamp: f64) -> anyhow::Result<()> {
    let bytes = std::fs::read(packed).with_context(|| format!("reading {}", packed.display()))?;
    let q: QuantizedLayer<f64> = unpack_quantized(&bytes).with_context(|| format!("{} is malformed", packed.display()))?;
    let w = read_layer(reference).with_context(|| format!("reading {}", reference.display()))?;
    if (w.rows(), w.cols()) != (q.rows(), q.cols()) {
        bail!("reference is {}x{} but the packed layer is {}x{}", w.rows(), w.cols(), q.rows(), q.cols());
    }
    let w: LayerWeights<f64> = LayerWeights::from_matrix(w.cast());
    let (m, n) = (q.rows(), q.cols());
    let layout = PackedLayout::new(m, q.per_column_bits());
    let widths_avg = q.per_column_bits().iter().map(|&b| b as f64).sum::<f64>() / n as f64;
    let diff = w.matrix().sub(q.dequantized())?.frobenius_norm();
    let norm = w.matrix().frobenius_norm();
    let rel = if norm > 0.0 { diff / norm } else { diff };

    println!("shape: {m}x{n}");
    println!("file_bytes: {}", bytes.len());
    println!("avg_bits_widths: {widths_avg:.6}");
    println!("code_bits_per_weight: {:.6}", layout.code_bits_per_weight());
    println!("total_bits_per_weight: {:.6}", 8.0 * bytes.len() as f64 / (m * n) as f64);
    println!("relative_frobenius_error: {rel:.6e}");
    if let Some(path) = calib {
        let x = read_layer(path).with_context(|| format!("reading {}", path.display()))?;
        if x.rows() != n {
            bail!("calibration has {} channels but the layer has {n} columns", x.rows());
        }
        let h = build_hessian(&CalibrationGram::from_activations(&x.cast()), percdamp)?;
        println!("proxy_loss: {:.6e}", measured_layer_loss(&w, &q, &h)?);
    }
    Ok(())
}
