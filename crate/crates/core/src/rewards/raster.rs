//! Rasterization and compressed-size rewards.
//!
//! Point positions are binned into an 8-bit count grid; the reward is the
//! signed ratio of DEFLATE-compressed bytes to raw bytes at a fixed
//! compression level. Lower-entropy rasters compress smaller, which is the
//! ordering the compressibility objective exploits.

use flate2::write::ZlibEncoder;
use flate2::Compression;
use std::io::Write;

use super::points::PointSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RasterSpec {
    pub height: usize,
    pub width: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Default for RasterSpec {
    fn default() -> Self {
        RasterSpec {
            height: 32,
            width: 32,
            x_range: (-1.0, 1.0),
            y_range: (-1.0, 1.0),
        }
    }
}

impl RasterSpec {
    pub fn raw_len(&self) -> usize {
        self.height * self.width
    }
}

/// Deterministic histogram binning with clamping at the borders and at the
/// 8-bit count ceiling.
pub fn render_raster(samples: &PointSet, spec: &RasterSpec) -> Result<Vec<u8>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot rasterize an empty set".into()));
    }
    let mut img = vec![0u8; spec.raw_len()];
    let (x0, x1) = spec.x_range;
    let (y0, y1) = spec.y_range;
    for p in &samples.points {
        let fx = (p[0] - x0) / (x1 - x0);
        let fy = (p[1] - y0) / (y1 - y0);
        let ix = ((fx * spec.width as f64).floor() as i64).clamp(0, spec.width as i64 - 1) as usize;
        let iy =
            ((fy * spec.height as f64).floor() as i64).clamp(0, spec.height as i64 - 1) as usize;
        let cell = &mut img[iy * spec.width + ix];
        *cell = cell.saturating_add(1);
    }
    Ok(img)
}

/// Compressor fixed bit-exactly by (library, level) in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CompressorConfig {
    pub level: u32,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        CompressorConfig { level: 6 }
    }
}

pub fn compressed_len(data: &[u8], cfg: &CompressorConfig) -> usize {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(cfg.level));
    enc.write_all(data).expect("in-memory compression");
    enc.finish().expect("in-memory compression").len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressSign {
    /// Reward smaller compressed size.
    Compressible,
    /// Reward larger compressed size.
    Incompressible,
}

/// Signed compressed-to-raw byte ratio of the rendered raster.
pub fn compressibility_reward(
    samples: &PointSet,
    spec: &RasterSpec,
    sign: CompressSign,
    cfg: &CompressorConfig,
) -> Result<f64> {
    let raster = render_raster(samples, spec)?;
    let ratio = compressed_len(&raster, cfg) as f64 / spec.raw_len() as f64;
    Ok(match sign {
        CompressSign::Compressible => -ratio,
        CompressSign::Incompressible => ratio,
    })
}
