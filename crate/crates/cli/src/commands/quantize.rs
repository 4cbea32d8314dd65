use std::path::Path;

use anyhow::Context;
use baq_core::allocator::{BitAllocation, DegenerateRows};
use baq_core::diagnostics::{layer_report, write_report_csv, LayerReport};
use baq_core::packfmt::{pack_quantized, unpack_quantized, write_atomic};
use baq_core::quantizer::{
    baq_quantize_layer, column_sensitivities, measured_layer_loss, quantize_layer_gptq, BaqOptions, QuantizedLayer,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};
use crate::layers::{load_all, worker_pool, LayerInput};

pub const REPORT_FILE: &str = "report.csv";

pub struct LayerResult {
    pub packed: Vec<u8>,
    pub report: LayerReport<f64>,
}

pub fn baq_options(cfg: &RunConfig) -> BaqOptions<f64> {
    let options = BaqOptions::new(cfg.target_bits);
    if cfg.ref_loss_iterate {
        options.iterate()
    } else {
        options
    }
}

/// Width used for the fixed-width baseline and for `--uniform`.
fn baseline_width(target: f64) -> u8 {
    target.round().clamp(0.0, baq_core::MAX_BITS as f64) as u8
}

fn quantize_one(layer: &LayerInput, cfg: &RunConfig, uniform: bool) -> CliResult<LayerResult> {
    let w = layer.weights();
    let h = layer.hessian(cfg.percdamp)?;
    let base = baseline_width(cfg.target_bits);
    let fixed = quantize_layer_gptq(&w, &h, &vec![base; w.cols()])?;
    let loss_fixed = measured_layer_loss(&w, &fixed, &h)?;
    let (quantized, c_cols, allocation): (QuantizedLayer<f64>, _, _) = if uniform {
        let c_cols = column_sensitivities(&w, &h, DegenerateRows::Floor)?;
        let allocation = BitAllocation::uniform(&c_cols, base)?;
        (fixed, c_cols, allocation)
    } else {
        let outcome = baq_quantize_layer(&w, &h, &baq_options(cfg))?;
        (outcome.layer, outcome.column_sensitivities, outcome.allocation)
    };
    let loss = measured_layer_loss(&w, &quantized, &h)?;
    let report = layer_report(layer.id.clone(), &c_cols, &allocation, loss, loss_fixed)
        .with_context(|| format!("layer {}", layer.id))?;
    let packed = pack_quantized(&quantized)?;
    let back: QuantizedLayer<f64> = unpack_quantized(&packed).map_err(Failure::invariant)?;
    if back.codes() != quantized.codes() || back.per_column_bits() != quantized.per_column_bits() {
        return Err(Failure::invariant(format!("layer {}: packed file does not round-trip", layer.id)));
    }
    Ok(LayerResult { packed, report })
}

pub fn run(input: &Path, output: &Path, cfg: &RunConfig, uniform: bool) -> CliResult<()> {
    if uniform && cfg.target_bits.fract() != 0.0 {
        return Err(anyhow::anyhow!("--uniform needs an integer target width, got {}", cfg.target_bits).into());
    }
    let layers = load_all(input)?;
    let pool = worker_pool(cfg.jobs)?;
    let results: Vec<LayerResult> =
        pool.install(|| layers.par_iter().map(|l| quantize_one(l, cfg, uniform)).collect::<CliResult<_>>())?;

    if output.exists() && !output.is_dir() {
        return Err(anyhow::anyhow!("{} exists and is not a directory", output.display()).into());
    }
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    for r in &results {
        write_atomic(output.join(format!("{}.baqp", r.report.layer_id)), &r.packed)?;
    }
    let reports: Vec<LayerReport<f64>> = results.into_iter().map(|r| r.report).collect();
    write_report_csv(&reports, output.join(REPORT_FILE))?;
    for r in &reports {
        println!(
            "{}: avg_bits {:.4} ratio_c {:.4} ratio_l {:.4}",
            r.layer_id, r.avg_bits, r.ratio_c, r.ratio_l
        );
    }
    Ok(())
}
