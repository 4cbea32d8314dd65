use std::path::Path;

use baq_core::synth::{synth_layer, Spectrum, SynthConfig};

use crate::args::LayerShape;
use crate::failure::CliResult;
use crate::layers::write_layer_dir;

pub fn config_for(shape: &LayerShape, seed: u64) -> SynthConfig {
    let spectrum = match shape.outliers {
        Some(count) => Spectrum::Outliers { count, gain: shape.outlier_gain },
        None => Spectrum::LogSpaced { condition: shape.condition },
    };
    SynthConfig { rows: shape.rows, cols: shape.cols, decades: shape.decades, spectrum, seed }
}

pub fn layer_name(k: usize) -> String {
    format!("layer_{k:03}")
}

pub fn run(output: &Path, shape: &LayerShape, layers: usize, seed: u64) -> CliResult<()> {
    if layers == 0 {
        return Err(anyhow::anyhow!("--layers must be positive").into());
    }
    // generate everything first so a bad configuration writes nothing
    let generated = (0..layers)
        .map(|k| synth_layer(&config_for(shape, seed + k as u64)))
        .collect::<baq_core::Result<Vec<_>>>()?;
    for (k, layer) in generated.iter().enumerate() {
        write_layer_dir(&output.join(layer_name(k)), &layer.weights, &layer.calibration)?;
    }
    println!("wrote {layers} layer(s) to {}", output.display());
    Ok(())
}
