use std::io::Write;
use std::path::Path;

use baq_core::allocator::{allocate_given_ref_loss, default_initial_loss, estimate_ref_loss, estimate_ref_loss_iterated};
use baq_core::diagnostics::{bitwidth_histogram, format_real};
use baq_core::packfmt::write_atomic;
use baq_core::quantizer::column_sensitivities;
use baq_core::{loss_ratio, DegenerateRows, RefLossIteration};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::failure::CliResult;
use crate::layers::{load_all, worker_pool, LayerInput};

pub const HEADER: [&str; 6] =
    ["layer_id", "ratio_c", "avg_bits", "predicted_loss_baq", "predicted_loss_uniform", "bit_histogram"];

fn allocate_one(layer: &LayerInput, cfg: &RunConfig) -> CliResult<[String; 6]> {
    let w = layer.weights();
    let h = layer.hessian(cfg.percdamp)?;
    let c = column_sensitivities(&w, &h, DegenerateRows::Floor)?;
    let target = cfg.target_bits;
    let l_init = default_initial_loss(&c, target);
    let l_ref = if cfg.ref_loss_iterate {
        estimate_ref_loss_iterated(&c, l_init, target, RefLossIteration::default())?
    } else {
        estimate_ref_loss(&c, l_init, target)?
    };
    let alloc = allocate_given_ref_loss(&c, l_ref)?;
    let uniform = c.iter().sum::<f64>() * 2f64.powf(-2.0 * alloc.average_bits);
    let histogram = bitwidth_histogram(&alloc.per_column_bits)?
        .iter()
        .map(|(b, n)| format!("{b}:{n}"))
        .collect::<Vec<_>>()
        .join(" ");
    Ok([
        layer.id.clone(),
        format_real(loss_ratio(&c)?),
        format_real(alloc.average_bits),
        format_real(alloc.predicted_loss),
        format_real(uniform),
        histogram,
    ])
}

pub fn run(input: &Path, output: Option<&Path>, cfg: &RunConfig) -> CliResult<()> {
    let layers = load_all(input)?;
    let pool = worker_pool(cfg.jobs)?;
    let rows: Vec<[String; 6]> =
        pool.install(|| layers.par_iter().map(|l| allocate_one(l, cfg)).collect::<CliResult<_>>())?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for row in &rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    match output {
        Some(path) => write_atomic(path, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}
