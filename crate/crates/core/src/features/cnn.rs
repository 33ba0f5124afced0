use serde::{Deserialize, Serialize};

use super::{FeatureMap, ImageTensor};
use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Rng, Var};

/// Channel widths of the stride-2 conv blocks. Five blocks take a 256-pixel
/// input down to 8x8.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32, 64, 128],
        }
    }
}

impl CnnConfig {
    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&1)
    }
}

/// Stack of `conv3x3/stride2 -> tanh` blocks over a single-channel image.
#[derive(Clone, Debug)]
pub struct TinyCnn {
    blocks: Vec<(ParamId, ParamId)>,
}

impl TinyCnn {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &CnnConfig, rng: &mut Rng) -> Result<Self> {
        let mut cin = 1;
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        for (i, &cout) in cfg.channels.iter().enumerate() {
            let bound = (6.0 / ((cin + cout) * 9) as f64).sqrt();
            let w = store.add_uniform(&format!("{prefix}.conv{i}.weight"), &[cout, cin, 3, 3], bound, rng)?;
            let b = store.add_zeros(&format!("{prefix}.conv{i}.bias"), &[cout])?;
            blocks.push((w, b));
            cin = cout;
        }
        Ok(Self { blocks })
    }

    /// Returns `(feature map, spatially pooled vector)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: Var) -> (Var, Var) {
        let mut x = image;
        for &(w, b) in &self.blocks {
            let (wv, bv) = (g.param(store, w), g.param(store, b));
            let y = g.conv3x3s2(x, wv, bv);
            x = g.tanh(y);
        }
        let pooled = g.spatial_mean(x);
        (x, pooled)
    }
}

/// Run the CNN on one preprocessed image.
pub fn extract_features(img: &ImageTensor, cnn: &TinyCnn, store: &ParamStore) -> Result<(FeatureMap, Vec<f64>)> {
    let mut g = Graph::new();
    let x = g.input(img.tensor().clone());
    let (map, pooled) = cnn.forward(&mut g, store, x);
    g.check()?;
    let fm = FeatureMap::new(g.value(map).clone())?;
    Ok((fm, g.value(pooled).data().to_vec()))
}
