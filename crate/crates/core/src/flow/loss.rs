//! Photometric and projection losses.

use crate::flow::warp::warp_image;
use crate::flow::FlowError;
use crate::grid::{FlowField, Image, Mask};

/// Weights of the combined loss; the experimental defaults are
/// `(1, 0.1, 0.1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub of: f64,
    pub mf: f64,
    pub op: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            of: 1.0,
            mf: 0.1,
            op: 0.1,
        }
    }
}

/// The three loss terms and their exact weighted combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_of: f64,
    pub l_mf: f64,
    pub l_op: f64,
    pub l_final: f64,
    pub weights: LossWeights,
}

impl LossReport {
    /// `l_final = w_of * l_of + w_mf * l_mf + w_op * l_op`, exactly.
    pub fn compose(l_of: f64, l_mf: f64, l_op: f64, weights: LossWeights) -> Self {
        Self {
            l_of,
            l_mf,
            l_op,
            l_final: weights.of * l_of + weights.mf * l_mf + weights.op * l_op,
            weights,
        }
    }

    pub fn composition_holds(&self) -> bool {
        self.l_final
            == self.weights.of * self.l_of + self.weights.mf * self.l_mf + self.weights.op * self.l_op
    }
}

fn mean_photometric(i_t: &Image, i_next: &Image, flow: &FlowField, mask: Option<&Mask>) -> Result<f64, FlowError> {
    if i_t.dims() != i_next.dims() || i_t.dims() != flow.dims() {
        return Err(FlowError::ShapeMismatch);
    }
    if let Some(m) = mask {
        if m.dims() != i_t.dims() {
            return Err(FlowError::ShapeMismatch);
        }
    }
    let (warped, warp_valid) = warp_image(i_next, flow);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y, &ok) in warp_valid.enumerate() {
        if !ok {
            continue;
        }
        if let Some(m) = mask {
            if !m[(x, y)] {
                continue;
            }
        }
        sum += (i_t[(x, y)] - warped[(x, y)]).abs();
        count += 1;
    }
    if count == 0 {
        return Err(FlowError::EmptySupport);
    }
    Ok(sum / count as f64)
}

/// Mean L1 photometric error between `i_t` and `i_next` warped back by the
/// predicted flow, over warp-valid pixels.
pub fn loss_of(i_t: &Image, i_next: &Image, flow: &FlowField) -> Result<f64, FlowError> {
    mean_photometric(i_t, i_next, flow, None)
}

/// Photometric error of the resynthesized motion field (already converted
/// to pixel units), restricted to pixels with valid depth.
pub fn loss_mf(
    i_t: &Image,
    i_next: &Image,
    motion_pixel_flow: &FlowField,
    depth_valid: &Mask,
) -> Result<f64, FlowError> {
    mean_photometric(i_t, i_next, motion_pixel_flow, Some(depth_valid))
}

/// Mean L1 distance between a flow field and its ego-motion projection
/// (both in pixel units), over jointly valid pixels. Zero exactly when the
/// flow already lies in the ego-motion subspace on that support.
pub fn loss_op(flow: &FlowField, motion_pixel_flow: &FlowField) -> Result<f64, FlowError> {
    if flow.dims() != motion_pixel_flow.dims() {
        return Err(FlowError::ShapeMismatch);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y, &ok) in flow.0.valid.enumerate() {
        if !ok || !motion_pixel_flow.0.valid[(x, y)] {
            continue;
        }
        let d = flow.0.vectors[(x, y)] - motion_pixel_flow.0.vectors[(x, y)];
        sum += d.x.abs() + d.y.abs();
        count += 1;
    }
    if count == 0 {
        return Err(FlowError::EmptySupport);
    }
    Ok(sum / count as f64)
}
