//! Dense tensors, reverse-mode differentiation, layers and optimization.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod store;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, MAX_CHECKED_COORDS};
pub use layers::{mlp_apply, mlp_forward, mlp_init, Activation};
pub use store::{Init, Param, ParamStore};
pub use tape::{PoolSource, Tape, Var};
pub use tensor::Tensor;
