//! Differentiable building blocks with explicit forward and backward passes.
//!
//! Layers cache whatever their backward pass needs during `forward`; calling
//! `backward` consumes that cache and *adds* parameter gradients into the
//! owning [`Param`]s. Gradients are cleared by the optimizer.

pub mod checkpoint;
pub mod gradcheck;
mod grid;
mod linear;
mod mlp;
mod norm;
pub mod ops;
pub mod optim;
mod param;

pub use grid::ValueGrid;
pub(crate) use grid::{matmul_acc, matmul_at_acc, matmul_bt_acc};
pub use linear::Linear;
pub use mlp::Mlp;
pub use norm::{PointNorm, NORM_EPS};
pub use optim::{Sgd, SgdConfig};
pub use param::{uniform_init, visit_child, Param, Parameterized};

/// Whether layers with batch statistics use the current points or their
/// running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn take_cache<T>(slot: &mut Option<T>, layer: &str) -> crate::Result<T> {
    slot.take().ok_or_else(|| {
        crate::Error::InvalidState(format!("{layer}: backward called without a cached forward"))
    })
}
