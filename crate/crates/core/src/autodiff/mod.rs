//! Reverse-mode differentiation over the operations the matching network
//! and its losses use, plus the AdamW optimizer.

mod optim;
mod tape;

pub use optim::{lr_schedule, AdamW, OptimizerState};
pub use tape::{
    leaky_relu, logistic, softplus, Gradients, SparseMap, SparseMapBuilder, Tape, TapeError, Var,
    DEFAULT_LEAKY_SLOPE,
};
