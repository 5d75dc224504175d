//! Image exports for inspection: flow color-wheel visualization, 8-bit
//! segmentation masks and warped-difference maps.

use std::path::Path;

use egoflow_core::grid::{FlowField, Image};
use egoflow_core::layers::SegmentationMask;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

/// The standard optical-flow color wheel (55 hue bins over six arcs).
fn color_wheel() -> Vec<[f64; 3]> {
    const RY: usize = 15;
    const YG: usize = 6;
    const GC: usize = 4;
    const CB: usize = 11;
    const BM: usize = 13;
    const MR: usize = 6;
    let mut wheel = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    for i in 0..RY {
        wheel.push([255.0, 255.0 * i as f64 / RY as f64, 0.0]);
    }
    for i in 0..YG {
        wheel.push([255.0 - 255.0 * i as f64 / YG as f64, 255.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 255.0, 255.0 * i as f64 / GC as f64]);
    }
    for i in 0..CB {
        wheel.push([0.0, 255.0 - 255.0 * i as f64 / CB as f64, 255.0]);
    }
    for i in 0..BM {
        wheel.push([255.0 * i as f64 / BM as f64, 0.0, 255.0]);
    }
    for i in 0..MR {
        wheel.push([255.0, 0.0, 255.0 - 255.0 * i as f64 / MR as f64]);
    }
    wheel
}

/// Color-wheel encoding of a flow field. Magnitudes are normalized by
/// `max_flow` (or the field's own maximum); invalid pixels are black.
pub fn flow_to_color(flow: &FlowField, max_flow: Option<f64>) -> RgbImage {
    let (w, h) = flow.dims();
    let wheel = color_wheel();
    let n = wheel.len() as f64;
    let max_mag = max_flow.unwrap_or_else(|| {
        flow.0
            .vectors
            .iter()
            .zip(flow.0.valid.iter())
            .filter(|(_, &v)| v)
            .map(|(f, _)| f.norm())
            .fold(0.0f64, f64::max)
    });
    let scale = if max_mag > 0.0 { 1.0 / max_mag } else { 0.0 };
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if !flow.0.valid[(x, y)] {
            return Rgb([0, 0, 0]);
        }
        let f = flow.0.vectors[(x, y)];
        let mag = (f.norm() * scale).min(1.0);
        let angle = f.y.atan2(f.x) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (n - 1.0);
        let k0 = fk.floor() as usize % wheel.len();
        let k1 = (k0 + 1) % wheel.len();
        let t = fk - fk.floor();
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let col = (1.0 - t) * wheel[k0][c] / 255.0 + t * wheel[k1][c] / 255.0;
            // Saturate toward white at low magnitude.
            let col = 1.0 - mag * (1.0 - col);
            rgb[c] = (col * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(rgb)
    })
}

/// 8-bit mask export: 0 = dynamic, 255 = static, 128 = invalid pixel.
pub fn mask_to_gray(mask: &SegmentationMask) -> GrayImage {
    let (w, h) = mask.valid.dims();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if !mask.valid[(x, y)] {
            Luma([128])
        } else if mask.is_static[(x, y)] {
            Luma([255])
        } else {
            Luma([0])
        }
    })
}

/// Absolute-difference map scaled to 8 bits.
pub fn difference_to_gray(a: &Image, b: &Image) -> GrayImage {
    let (w, h) = a.dims();
    assert_eq!(a.dims(), b.dims());
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let d = (a[(x, y)] - b[(x, y)]).abs();
        Luma([(d * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// `[0, 1]` intensity image to 8-bit grayscale.
pub fn intensity_to_gray(img: &Image) -> GrayImage {
    let (w, h) = img.dims();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(img[(x as usize, y as usize)] * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

pub fn save_png(path: &Path, img: &GrayImage) -> image::ImageResult<()> {
    img.save(path)
}
