use std::path::Path;

use anyhow::Context;
use baq_core::diagnostics::{format_real, median};
use baq_core::hessian::HessianBundle;
use baq_core::linalg::TransformMode;
use baq_core::packfmt::write_atomic;
use baq_core::quantizer::LayerWeights;
use baq_core::synth::synth_layer;
use baq_core::transform::{build_transforms, transformed_ratio_c, TransformPair};
use rayon::prelude::*;

use crate::args::LayerShape;
use crate::config::RunConfig;
use crate::failure::CliResult;
use crate::layers::{load_all, worker_pool};

struct BenchLayer {
    id: String,
    w: LayerWeights<f64>,
    h: HessianBundle<f64>,
}

/// `None` is the identity control.
type Mode = Option<TransformMode>;

fn mode_name(mode: Mode) -> &'static str {
    mode.map_or("identity", TransformMode::name)
}

fn load_layers(input: Option<&Path>, shape: &LayerShape, cfg: &RunConfig) -> anyhow::Result<Vec<BenchLayer>> {
    match input {
        Some(dir) => load_all(dir)?
            .into_iter()
            .map(|l| Ok(BenchLayer { w: l.weights(), h: l.hessian(cfg.percdamp)?, id: l.id }))
            .collect(),
        None => {
            let layer = synth_layer(&super::synth::config_for(shape, cfg.seed))?;
            let gram = baq_core::hessian::CalibrationGram::from_activations(&layer.calibration);
            let h = baq_core::build_hessian(&gram, cfg.percdamp).context("synthetic layer")?;
            Ok(vec![BenchLayer { id: "synth".into(), w: LayerWeights::from_matrix(layer.weights), h }])
        }
    }
}

fn write_mode_csv(path: &Path, rows: &[(String, u64, f64)]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["layer_id", "seed", "ratio_c"])?;
    for (id, seed, ratio) in rows {
        w.write_record([id.clone(), seed.to_string(), format_real(*ratio)])?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    Ok(())
}

pub fn run(input: Option<&Path>, output: &Path, shape: &LayerShape, seeds: u64, cfg: &RunConfig) -> CliResult<()> {
    if seeds == 0 {
        return Err(anyhow::anyhow!("--seeds must be positive").into());
    }
    let layers = load_layers(input, shape, cfg)?;
    let modes: Vec<Mode> = match cfg.transform_mode {
        Some(m) => vec![None, Some(m)],
        None => std::iter::once(None).chain(TransformMode::ALL.map(Some)).collect(),
    };
    let mut tasks = Vec::new();
    for (li, _) in layers.iter().enumerate() {
        for &mode in &modes {
            match mode {
                None => tasks.push((li, mode, 0)),
                Some(_) => tasks.extend((cfg.seed..cfg.seed + seeds).map(|s| (li, mode, s))),
            }
        }
    }
    let pool = worker_pool(cfg.jobs)?;
    let ratios: Vec<f64> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(li, mode, seed)| {
                let BenchLayer { id, w, h } = &layers[li];
                let t = match mode {
                    None => TransformPair::identity(w.rows(), w.cols()),
                    Some(m) => build_transforms(w.rows(), w.cols(), cfg.block_size, m, seed)?,
                };
                transformed_ratio_c(w, h, &t, cfg.probe_bits)
                    .with_context(|| format!("layer {id}, {} seed {seed}", mode_name(mode)))
            })
            .collect::<anyhow::Result<_>>()
    })?;

    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let mut summary = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    summary.write_record(["mode", "median_ratio_c", "samples"])?;
    let mut medians = Vec::new();
    for &mode in &modes {
        let rows: Vec<(String, u64, f64)> = tasks
            .iter()
            .zip(&ratios)
            .filter(|((_, m, _), _)| *m == mode)
            .map(|(&(li, _, seed), &r)| (layers[li].id.clone(), seed, r))
            .collect();
        write_mode_csv(&output.join(format!("{}.csv", mode_name(mode))), &rows)?;
        let values: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let med = median(&values).expect("at least one sample per mode");
        summary.write_record([mode_name(mode).to_string(), format_real(med), values.len().to_string()])?;
        println!("{:<9} median ratio_c {med:.4} over {} samples", mode_name(mode), values.len());
        medians.push((mode, med));
    }
    write_atomic(output.join("summary.csv"), &summary.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;

    let get = |m: TransformMode| medians.iter().find(|(k, _)| *k == Some(m)).map(|p| p.1);
    if let (Some(mild), Some(moderate), Some(haar)) =
        (get(TransformMode::Mild), get(TransformMode::Moderate), get(TransformMode::Haar))
    {
        let holds = haar > moderate && moderate > mild;
        println!("ordering haar > moderate > mild: {}", if holds { "holds" } else { "violated" });
    }
    Ok(())
}
