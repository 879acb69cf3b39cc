//! Minimal feed-forward network toolkit with exact analytic gradients.
//!
//! Networks are batched: inputs are [`Matrix`] values with one row per
//! example. Besides the usual forward/backward pair, a network can push an
//! input-space tangent through itself ([`DenseNet::forward_dual`]) and
//! back-propagate through that tangent computation
//! ([`DenseNet::backward_dual`]), which is what a gradient penalty on
//! `‖∇ₓ·‖` needs for its parameter gradient.

mod adam;
mod gradcheck;
mod layer_norm;
mod matrix;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, numeric_gradient, relative_error, GradCheckReport, FD_ABS_FLOOR, FD_STEP};
pub use layer_norm::{layer_norm_forward, LAYER_NORM_EPS};
pub use matrix::Matrix;
pub use net::{Arch, DenseNet, DualTape, GradientTape, Gradients, NetSpec, ParamBlock};
