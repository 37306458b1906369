//! Dense tensors, reverse-mode differentiation, Adam, and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod value;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader,
    ParamEntry,
};
pub use optim::{adam_step, Adam, AdamConfig, AdamMoments};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;
