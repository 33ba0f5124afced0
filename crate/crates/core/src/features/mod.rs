//! Image preprocessing and the feature maps consumed by the predictor and
//! the classifier.
//!
//! Features come either from [`TinyCnn`] or from TNSR files computed
//! elsewhere. Deepest maps are `C x 8 x 8`; classifier pooling can work on
//! the 2x upscaled `C x 16 x 16` map, whose cells line up one-to-one with
//! the 16x16 patch grid.

mod cnn;
pub mod pgm;
mod preprocess;

use std::path::Path;

pub use cnn::{extract_features, CnnConfig, TinyCnn};
pub use preprocess::{preprocess_image, CoordTransform};

use crate::error::{Error, Result};
use crate::numerics::{blob, Graph, Tensor, Var};
use crate::scanpath::{Key, GRID};

pub const CANONICAL_SIDE: usize = 256;
/// Spatial side of the deepest feature map.
pub const DEEP_SIDE: usize = 8;

/// Row-major grey image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("image must be at least 1x1"));
        }
        if data.len() != height * width {
            return Err(Error::contract(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Preprocessed `1 x 256 x 256` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("image intensities must lie in [0, 1]"));
        }
        Ok(Self(Tensor::new(vec![1, CANONICAL_SIDE, CANONICAL_SIDE], data)?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.data()[row * CANONICAL_SIDE + col]
    }
}

/// `C x H x W` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::contract(format!(
                "feature map must be rank 3, got {:?}",
                t.dims()
            )));
        }
        Ok(Self(t))
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.0.data()[(c * self.height() + row) * self.width() + col]
    }
}

/// Load a `C x 8 x 8` map from a TNSR file, optionally pinning `C`.
pub fn load_feature_file(path: &Path, channels: Option<usize>) -> Result<FeatureMap> {
    let t = blob::load(path)?;
    let what = format!("feature file {}", path.display());
    if t.rank() != 3 {
        return Err(Error::format(what, "rank", format!("expected 3, found {}", t.rank())));
    }
    let d = t.dims();
    if let Some(c) = channels {
        if d[0] != c {
            return Err(Error::format(
                what,
                "dims[0]",
                format!("expected {c} channels, found {}", d[0]),
            ));
        }
    }
    if d[1] != DEEP_SIDE || d[2] != DEEP_SIDE {
        return Err(Error::format(
            what,
            "dims[1..3]",
            format!("expected {DEEP_SIDE}x{DEEP_SIDE}, found {}x{}", d[1], d[2]),
        ));
    }
    FeatureMap::new(t)
}

pub fn save_feature_file(path: &Path, map: &FeatureMap) -> Result<()> {
    blob::save(path, map.tensor())
}

/// Bilinear 2x upscale (half-pixel centres).
pub fn upscale2x(map: &FeatureMap) -> Result<FeatureMap> {
    if map.height() != DEEP_SIDE || map.width() != DEEP_SIDE {
        return Err(Error::contract(format!(
            "upscale2x expects an {DEEP_SIDE}x{DEEP_SIDE} map, got {}x{}",
            map.height(),
            map.width()
        )));
    }
    let mut g = Graph::new();
    let v = g.input(map.tensor().clone());
    let u = g.upscale2x(v);
    FeatureMap::new(g.value(u).clone())
}

/// Feature-map cell that holds a patch key on a `grid x grid` map.
pub fn key_cell(key: Key, grid: usize) -> Result<(usize, usize)> {
    let (row, col) = key.cell().ok_or_else(|| Error::contract("END has no feature cell"))?;
    match grid {
        GRID => Ok((row, col)),
        g if g > 0 && GRID.is_multiple_of(g) => Ok((row / (GRID / g), col / (GRID / g))),
        g => Err(Error::contract(format!("pooling grid {g} does not divide {GRID}"))),
    }
}

/// Channel vector at the cell of `key`.
pub fn pool_at(map: &FeatureMap, key: Key) -> Result<Vec<f64>> {
    if map.height() != map.width() {
        return Err(Error::contract("pool_at needs a square map"));
    }
    let (row, col) = key_cell(key, map.height())?;
    Ok((0..map.channels()).map(|c| map.get(c, row, col)).collect())
}

/// Graph version of [`pool_at`] for a square map node.
pub fn pool_at_var(g: &mut Graph, map: Var, key: Key) -> Result<Var> {
    let side = g.dims(map)[1];
    let (row, col) = key_cell(key, side)?;
    Ok(g.pick_spatial(map, row, col))
}

/// Per-channel spatial mean.
pub fn global_avg_pool(map: &FeatureMap) -> Vec<f64> {
    let hw = (map.height() * map.width()) as f64;
    map.tensor()
        .data()
        .chunks(map.height() * map.width())
        .map(|c| c.iter().sum::<f64>() / hw)
        .collect()
}
