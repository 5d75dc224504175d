//! Dense optical flow, differentiable bilinear warping and the
//! self-supervision losses.
//!
//! The photometric losses compare a target frame against the next frame
//! warped backwards by a flow field; the projection loss compares a flow
//! field against its resynthesized ego-motion projection. All losses are
//! means over valid pixels so values are comparable across resolutions and
//! mask sizes.

mod loss;
mod variational;
mod warp;

pub use loss::{loss_mf, loss_of, loss_op, LossReport, LossWeights};
pub use variational::{compute_flow, FlowConfig};
pub use warp::{warp_gradient, warp_image};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("loss support is empty: no valid pixels")]
    EmptySupport,
    #[error("image dimensions {w}x{h} below the pyramid minimum of {min} px")]
    ImageTooSmall { w: usize, h: usize, min: usize },
    #[error("image/flow dimensions do not match")]
    ShapeMismatch,
    #[error("invalid flow configuration: {0}")]
    BadConfig(&'static str),
}
