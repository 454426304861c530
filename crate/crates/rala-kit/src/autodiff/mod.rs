//! Reverse-mode automatic differentiation over the linalg primitives. The op
//! set is closed: every op here has a forward, a backward, and a gradcheck
//! registration (see the crate-level `gradcheck` module).

mod gradcheck;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use tape::{gelu_scalar, layer_norm_forward, Gradients, NodeId, Tape};

pub const LAYER_NORM_EPS: f64 = 1e-6;
