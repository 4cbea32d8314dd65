use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use baq_core::hessian::{build_hessian, CalibrationGram, HessianBundle};
use baq_core::linalg::DenseMatrix;
use baq_core::packfmt::{read_layer, write_layer};
use baq_core::quantizer::LayerWeights;

pub const WEIGHTS_FILE: &str = "weights.baqt";
pub const CALIB_FILE: &str = "calib.baqt";

/// A parsed layer directory: `M×N` weights and `N×P` calibration activations.
#[derive(Debug, Clone)]
pub struct LayerInput {
    pub id: String,
    pub weights: DenseMatrix<f32>,
    pub calibration: DenseMatrix<f32>,
}

impl LayerInput {
    pub fn weights(&self) -> LayerWeights<f64> {
        LayerWeights::from_matrix(self.weights.cast())
    }

    pub fn hessian(&self, percdamp: f64) -> anyhow::Result<HessianBundle<f64>> {
        let gram = CalibrationGram::from_activations(&self.calibration.cast());
        build_hessian(&gram, percdamp).with_context(|| format!("layer {}", self.id))
    }
}

fn is_layer_dir(dir: &Path) -> bool {
    dir.join(WEIGHTS_FILE).is_file()
}

/// Layer directories under `root` in name order; `root` itself when it is one.
pub fn discover(root: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    if is_layer_dir(root) {
        let id = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "layer".into());
        return Ok(vec![(id, root.to_path_buf())]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() && is_layer_dir(&path) {
            found.push((path.file_name().unwrap().to_string_lossy().into_owned(), path));
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no layer directories (containing {WEIGHTS_FILE}) under {}", root.display());
    }
    Ok(found)
}

/// Reads and cross-checks every layer before any work starts.
pub fn load_all(root: &Path) -> anyhow::Result<Vec<LayerInput>> {
    discover(root)?
        .into_iter()
        .map(|(id, dir)| {
            let weights = read_layer(dir.join(WEIGHTS_FILE))
                .with_context(|| format!("layer {id}: reading {}", dir.join(WEIGHTS_FILE).display()))?;
            let calib_path = dir.join(CALIB_FILE);
            let calibration =
                read_layer(&calib_path).with_context(|| format!("layer {id}: reading {}", calib_path.display()))?;
            if calibration.rows() != weights.cols() {
                bail!(
                    "layer {id}: calibration has {} channels but weights have {} columns",
                    calibration.rows(),
                    weights.cols()
                );
            }
            if weights.rows() == 0 || weights.cols() == 0 || calibration.cols() == 0 {
                bail!("layer {id}: empty tensor");
            }
            Ok(LayerInput { id, weights, calibration })
        })
        .collect()
}

pub fn write_layer_dir(dir: &Path, weights: &DenseMatrix<f64>, calibration: &DenseMatrix<f64>) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_layer(dir.join(WEIGHTS_FILE), &weights.cast())?;
    write_layer(dir.join(CALIB_FILE), &calibration.cast())?;
    Ok(())
}

pub fn worker_pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}
