//! Attention captioner with an attribute predictor, and the text-CNN
//! category classifier.

mod captioner;
mod classifier;

use rand::Rng;

pub(crate) use captioner::sample_log_probs;
pub use captioner::{
    AttributeOutput, Captioner, CaptionerConfig, DecoderState, Encoded, SampledBatch,
    SampledSequence, StepOutput,
};
pub use classifier::{ClassifierConfig, TextClassifier};

use crate::dataset::FeatureGrid;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Bound of the uniform word-embedding initialization.
pub const EMBED_INIT: f64 = 0.1;

/// Weight `[fan_in, fan_out]` with Glorot init plus a zero bias `[fan_out]`.
pub(crate) fn dense<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    let w = store.glorot(format!("{name}.w"), fan_in, fan_out, rng)?;
    let b = store.zeros(format!("{name}.b"), &[fan_out])?;
    Ok((w, b))
}

/// Stacks grids into one `[N * B, D]` tensor.
pub fn stack_grids(grids: &[&FeatureGrid]) -> Result<Tensor> {
    let first = grids.first().ok_or(Error::Empty("feature batch"))?;
    let (b, d) = (first.cells(), first.dim());
    let mut data = Vec::with_capacity(grids.len() * b * d);
    for g in grids {
        if g.cells() != b || g.dim() != d {
            return Err(Error::Shape {
                op: "stack_grids",
                detail: format!("{}x{} grid in a batch of {b}x{d}", g.cells(), g.dim()),
            });
        }
        data.extend_from_slice(g.data());
    }
    Tensor::matrix(grids.len() * b, d, data)
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
