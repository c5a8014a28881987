pub mod eval;
pub mod flops;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod matching;
pub mod stats;

use std::path::Path;

use calibnet::io::Raster;
use calibnet::{CalibNet, Tensor};

use crate::error::CliError;

/// Reads an RGB (`P6`) and depth (`P5`) pair as `[0, 1]` tensors.
pub fn read_pair(rgb: &Path, depth: &Path) -> Result<(Tensor<f64>, Tensor<f64>), CliError> {
    let rgb_r = Raster::read(rgb)?;
    let depth_r = Raster::read(depth)?;
    if rgb_r.channels != 3 {
        return Err(CliError::Data(format!("{}: expected a P6 color raster", rgb.display())));
    }
    if depth_r.channels != 1 {
        return Err(CliError::Data(format!("{}: expected a P5 grayscale raster", depth.display())));
    }
    pair_tensors(&rgb_r, &depth_r)
}

pub fn pair_tensors(rgb: &Raster, depth: &Raster) -> Result<(Tensor<f64>, Tensor<f64>), CliError> {
    if (rgb.width, rgb.height) != (depth.width, depth.height) {
        return Err(CliError::Data(format!(
            "rgb is {}×{} but depth is {}×{}",
            rgb.width, rgb.height, depth.width, depth.height
        )));
    }
    let s = CalibNet::<f64>::STRIDE;
    if rgb.width == 0 || rgb.height == 0 || rgb.width % s != 0 || rgb.height % s != 0 {
        return Err(CliError::Data(format!("image size {}×{} must be a nonzero multiple of {s}", rgb.width, rgb.height)));
    }
    Ok((rgb.to_tensor(), depth.to_tensor()))
}
