//! Dense tensors, reverse-mode differentiation, Adam and gradient checking.
//!
//! Everything is `f64`. Tensors are plain values; a [`Graph`] owns the
//! intermediate results of one forward pass and is discarded after
//! backward. Independent graphs can be built on separate threads.

pub mod adam;
pub mod blob;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, GradCheckReport, ParamCheck};
pub use graph::{reverse_grad, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Numerically stable softmax of a finite vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::contract("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            node: "softmax".into(),
            detail: "non-finite input".into(),
        });
    }
    Ok(graph::softmax_raw(v))
}

pub fn sigmoid(x: f64) -> f64 {
    graph::sigmoid(x)
}
