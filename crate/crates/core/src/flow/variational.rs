//! Coarse-to-fine variational optical flow (Horn-Schunck data term plus
//! quadratic smoothness, incremental warping).
//!
//! The solver is intentionally classical: an image pyramid, a few warps per
//! level, and Jacobi relaxation of the linearized brightness-constancy
//! equations. Everything is sequential and deterministic for a fixed
//! configuration.

use alloc::vec::Vec;

use nalgebra::Vector2;

use crate::flow::warp::warp_image;
use crate::flow::FlowError;
use crate::grid::{FlowField, Grid, Image, Mask, VectorField};

/// Smallest image side allowed at the bottom of the pyramid.
const MIN_DIM: usize = 16;

/// Configuration for [`compute_flow`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub pyramid_levels: usize,
    /// Per-level downscale factor, in `(0, 1)`.
    pub level_scale: f64,
    /// Jacobi iterations per warp.
    pub iterations: usize,
    /// Smoothness weight, calibrated to 8-bit intensity units; `[0, 1]`
    /// images are rescaled internally.
    pub alpha: f64,
    /// Warp/relinearization steps per level.
    pub warps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            level_scale: 0.5,
            iterations: 100,
            alpha: 15.0,
            warps: 3,
        }
    }
}

fn blur3(img: &Image) -> Image {
    let (w, h) = img.dims();
    let horizontal = Grid::from_fn(w, h, |x, y| {
        let l = img[(x.saturating_sub(1), y)];
        let r = img[((x + 1).min(w - 1), y)];
        0.25 * l + 0.5 * img[(x, y)] + 0.25 * r
    });
    Grid::from_fn(w, h, |x, y| {
        let u = horizontal[(x, y.saturating_sub(1))];
        let d = horizontal[(x, (y + 1).min(h - 1))];
        0.25 * u + 0.5 * horizontal[(x, y)] + 0.25 * d
    })
}

fn resize_bilinear(img: &Image, nw: usize, nh: usize) -> Image {
    let (w, h) = img.dims();
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    Grid::from_fn(nw, nh, |x, y| {
        // Pixel-center alignment, clamped to the source rectangle.
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = (libm::floor(fx) as usize).min(w.saturating_sub(2));
        let y0 = (libm::floor(fy) as usize).min(h.saturating_sub(2));
        let a = fx - x0 as f64;
        let b = fy - y0 as f64;
        (1.0 - b) * ((1.0 - a) * img[(x0, y0)] + a * img[(x0 + 1, y0)])
            + b * ((1.0 - a) * img[(x0, y0 + 1)] + a * img[(x0 + 1, y0 + 1)])
    })
}

fn central_gradient(img: &Image) -> (Grid<f64>, Grid<f64>) {
    let (w, h) = img.dims();
    let gx = Grid::from_fn(w, h, |x, y| {
        let l = img[(x.saturating_sub(1), y)];
        let r = img[((x + 1).min(w - 1), y)];
        0.5 * (r - l)
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        let u = img[(x, y.saturating_sub(1))];
        let d = img[(x, (y + 1).min(h - 1))];
        0.5 * (d - u)
    });
    (gx, gy)
}

fn neighbor_average(field: &Grid<f64>, x: usize, y: usize) -> f64 {
    let (w, h) = field.dims();
    let mut sum = 0.0;
    let mut n = 0.0;
    if x > 0 {
        sum += field[(x - 1, y)];
        n += 1.0;
    }
    if x + 1 < w {
        sum += field[(x + 1, y)];
        n += 1.0;
    }
    if y > 0 {
        sum += field[(x, y - 1)];
        n += 1.0;
    }
    if y + 1 < h {
        sum += field[(x, y + 1)];
        n += 1.0;
    }
    sum / n
}

struct LevelData {
    i1: Image,
    i2: Image,
}

/// One warp step: relinearize around the current total flow, then relax.
fn relax(
    level: &LevelData,
    u: &mut Grid<f64>,
    v: &mut Grid<f64>,
    iterations: usize,
    alpha2: f64,
) {
    let (w, h) = level.i1.dims();
    let flow = FlowField(VectorField::from_fn(w, h, |x, y| {
        Some(Vector2::new(u[(x, y)], v[(x, y)]))
    }));
    let (i2w, data_valid): (Image, Mask) = warp_image(&level.i2, &flow);
    let (g1x, g1y) = central_gradient(&level.i1);
    let (g2x, g2y) = central_gradient(&i2w);

    // Linearization point: the flow used for warping.
    let fu = u.clone();
    let fv = v.clone();
    let mut ix = Grid::new(w, h, 0.0);
    let mut iy = Grid::new(w, h, 0.0);
    let mut it = Grid::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if data_valid[(x, y)] {
                ix[(x, y)] = 0.5 * (g1x[(x, y)] + g2x[(x, y)]);
                iy[(x, y)] = 0.5 * (g1y[(x, y)] + g2y[(x, y)]);
                it[(x, y)] = i2w[(x, y)] - level.i1[(x, y)];
            }
        }
    }

    let mut u_next = u.clone();
    let mut v_next = v.clone();
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let ubar = neighbor_average(u, x, y);
                let vbar = neighbor_average(v, x, y);
                if data_valid[(x, y)] {
                    let gx = ix[(x, y)];
                    let gy = iy[(x, y)];
                    let residual =
                        gx * (ubar - fu[(x, y)]) + gy * (vbar - fv[(x, y)]) + it[(x, y)];
                    let denom = alpha2 + gx * gx + gy * gy;
                    u_next[(x, y)] = ubar - gx * residual / denom;
                    v_next[(x, y)] = vbar - gy * residual / denom;
                } else {
                    u_next[(x, y)] = ubar;
                    v_next[(x, y)] = vbar;
                }
            }
        }
        core::mem::swap(u, &mut u_next);
        core::mem::swap(v, &mut v_next);
    }
}

/// Dense two-frame optical flow in pixel units.
pub fn compute_flow(i_t: &Image, i_next: &Image, config: &FlowConfig) -> Result<FlowField, FlowError> {
    let (w, h) = i_t.dims();
    if i_next.dims() != (w, h) {
        return Err(FlowError::ShapeMismatch);
    }
    if w < MIN_DIM || h < MIN_DIM {
        return Err(FlowError::ImageTooSmall {
            w,
            h,
            min: MIN_DIM,
        });
    }
    if !(config.level_scale > 0.0 && config.level_scale < 1.0) {
        return Err(FlowError::BadConfig("level_scale must lie in (0, 1)"));
    }
    if config.pyramid_levels == 0 {
        return Err(FlowError::BadConfig("pyramid_levels must be at least 1"));
    }

    // The data term is calibrated to 8-bit intensities.
    let mut levels: Vec<LevelData> = Vec::new();
    levels.push(LevelData {
        i1: i_t.map(|&p| p * 255.0),
        i2: i_next.map(|&p| p * 255.0),
    });
    for _ in 1..config.pyramid_levels {
        let prev = levels.last().expect("at least one level");
        let (pw, ph) = prev.i1.dims();
        let nw = libm::round(pw as f64 * config.level_scale) as usize;
        let nh = libm::round(ph as f64 * config.level_scale) as usize;
        if nw < MIN_DIM || nh < MIN_DIM {
            break;
        }
        levels.push(LevelData {
            i1: resize_bilinear(&blur3(&prev.i1), nw, nh),
            i2: resize_bilinear(&blur3(&prev.i2), nw, nh),
        });
    }

    // Coarse to fine.
    let coarsest = levels.last().expect("at least one level");
    let (cw, ch) = coarsest.i1.dims();
    let mut u = Grid::new(cw, ch, 0.0);
    let mut v = Grid::new(cw, ch, 0.0);
    let alpha2 = config.alpha * config.alpha;
    for level in levels.iter().rev() {
        let (lw, lh) = level.i1.dims();
        if u.dims() != (lw, lh) {
            let (ow, oh) = u.dims();
            let su = lw as f64 / ow as f64;
            let sv = lh as f64 / oh as f64;
            u = resize_bilinear(&u, lw, lh).map(|&p| p * su);
            v = resize_bilinear(&v, lw, lh).map(|&p| p * sv);
        }
        for _ in 0..config.warps.max(1) {
            relax(level, &mut u, &mut v, config.iterations, alpha2);
        }
    }

    Ok(FlowField(VectorField::from_fn(w, h, |x, y| {
        Some(Vector2::new(u[(x, y)], v[(x, y)]))
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic band-limited texture, evaluable at continuous positions.
    fn texture(x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        let waves = [
            (0.35, 0.12, 0.9, 0.11),
            (0.10, 0.42, 2.3, 0.09),
            (0.27, -0.31, 4.1, 0.08),
            (-0.17, 0.23, 1.7, 0.10),
            (0.44, 0.05, 0.3, 0.07),
            (-0.05, -0.47, 5.5, 0.06),
        ];
        for (fx, fy, phase, amp) in waves {
            v += amp * libm::sin(fx * x + fy * y + phase);
        }
        v.clamp(0.0, 1.0)
    }

    fn textured_image(w: usize, h: usize, dx: f64, dy: f64) -> Image {
        Grid::from_fn(w, h, |x, y| texture(x as f64 + dx, y as f64 + dy))
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let img = textured_image(64, 48, 0.0, 0.0);
        let flow = compute_flow(&img, &img, &FlowConfig::default()).unwrap();
        let mean: f64 = flow.0.vectors.iter().map(|v| v.norm()).sum::<f64>()
            / flow.0.vectors.len() as f64;
        assert!(mean < 1e-3, "mean magnitude {mean}");
    }

    #[test]
    fn recovers_global_translation() {
        let (w, h) = (128, 96);
        // i_next shifted so that the true flow is (+3, 0):
        // i_t(x) = i_next(x + 3) with i_next = texture.
        let i_next = textured_image(w, h, 0.0, 0.0);
        let i_t = textured_image(w, h, 3.0, 0.0);
        let flow = compute_flow(&i_t, &i_next, &FlowConfig::default()).unwrap();
        let mut err = 0.0;
        let mut n = 0usize;
        for y in 10..h - 10 {
            for x in 10..w - 10 {
                let f = flow.0.vectors[(x, y)];
                err += (f - Vector2::new(3.0, 0.0)).norm();
                n += 1;
            }
        }
        let mean = err / n as f64;
        assert!(mean < 0.3, "mean endpoint error {mean}");
    }

    #[test]
    fn swap_symmetry_for_translation() {
        let (w, h) = (96, 80);
        let i_next = textured_image(w, h, 0.0, 0.0);
        let i_t = textured_image(w, h, 2.0, 1.0);
        let forward = compute_flow(&i_t, &i_next, &FlowConfig::default()).unwrap();
        let backward = compute_flow(&i_next, &i_t, &FlowConfig::default()).unwrap();
        let mut diff = 0.0;
        let mut n = 0usize;
        for y in 10..h - 10 {
            for x in 10..w - 10 {
                diff += (forward.0.vectors[(x, y)] + backward.0.vectors[(x, y)]).norm();
                n += 1;
            }
        }
        let mean = diff / n as f64;
        assert!(mean < 0.1, "forward/backward asymmetry {mean}");
    }

    #[test]
    fn small_images_rejected() {
        let img = Grid::new(8, 8, 0.5);
        assert!(matches!(
            compute_flow(&img, &img, &FlowConfig::default()),
            Err(FlowError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn deterministic_for_fixed_config() {
        let i_next = textured_image(64, 48, 0.0, 0.0);
        let i_t = textured_image(64, 48, 1.0, -0.5);
        let a = compute_flow(&i_t, &i_next, &FlowConfig::default()).unwrap();
        let b = compute_flow(&i_t, &i_next, &FlowConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
