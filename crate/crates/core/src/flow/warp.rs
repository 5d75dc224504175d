//! Bilinear warping and its analytic gradient.

use nalgebra::Vector2;

use crate::grid::{FlowField, Grid, Image, Mask, VectorField};

/// Bilinear sample at continuous coordinates, assuming
/// `0 <= sx <= w-1`, `0 <= sy <= h-1`. Returns the value and the two
/// spatial partials.
#[inline]
fn sample_bilinear(img: &Image, sx: f64, sy: f64) -> (f64, f64, f64) {
    let (w, h) = img.dims();
    // Clamp the base index so exact right/bottom edge samples stay valid.
    let x0 = (libm::floor(sx) as usize).min(w.saturating_sub(2));
    let y0 = (libm::floor(sy) as usize).min(h.saturating_sub(2));
    let a = sx - x0 as f64;
    let b = sy - y0 as f64;
    let p00 = img[(x0, y0)];
    let p01 = img[(x0 + 1, y0)];
    let p10 = img[(x0, y0 + 1)];
    let p11 = img[(x0 + 1, y0 + 1)];
    let value = (1.0 - b) * ((1.0 - a) * p00 + a * p01) + b * ((1.0 - a) * p10 + a * p11);
    let dx = (1.0 - b) * (p01 - p00) + b * (p11 - p10);
    let dy = (1.0 - a) * (p10 - p00) + a * (p11 - p01);
    (value, dx, dy)
}

#[inline]
fn in_bounds(sx: f64, sy: f64, w: usize, h: usize) -> bool {
    sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64
}

/// Warp `source` backwards by `flow`: output pixel `x` samples
/// `source(x + flow(x))` bilinearly. Samples falling outside the image, and
/// pixels with invalid flow, are masked out instead of clamped.
///
/// Zero flow reproduces the source exactly, and bilinear sampling is exact
/// on images that are affine in the pixel coordinates.
pub fn warp_image(source: &Image, flow: &FlowField) -> (Image, Mask) {
    let (w, h) = source.dims();
    assert!(
        flow.dims() == (w, h),
        "flow dimensions {:?} do not match image {:?}",
        flow.dims(),
        (w, h)
    );
    let mut out = Grid::new(w, h, 0.0);
    let mut valid = Grid::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !flow.0.valid[(x, y)] {
                continue;
            }
            let f = flow.0.vectors[(x, y)];
            let sx = x as f64 + f.x;
            let sy = y as f64 + f.y;
            if !in_bounds(sx, sy, w, h) {
                continue;
            }
            let (v, _, _) = sample_bilinear(source, sx, sy);
            out[(x, y)] = v;
            valid[(x, y)] = true;
        }
    }
    (out, valid)
}

/// Per-pixel gradient of the L1 photometric loss
/// `|target(x) - source(x + flow(x))|` with respect to the flow vector,
/// using the bilinear partials. The subgradient at zero residual is zero.
/// Pixels whose sample leaves the image carry no gradient and are marked
/// invalid.
pub fn warp_gradient(source: &Image, flow: &FlowField, target: &Image) -> FlowField {
    let (w, h) = source.dims();
    assert!(flow.dims() == (w, h) && target.dims() == (w, h));
    FlowField(VectorField::from_fn(w, h, |x, y| {
        if !flow.0.valid[(x, y)] {
            return None;
        }
        let f = flow.0.vectors[(x, y)];
        let sx = x as f64 + f.x;
        let sy = y as f64 + f.y;
        if !in_bounds(sx, sy, w, h) {
            return None;
        }
        let (value, dx, dy) = sample_bilinear(source, sx, sy);
        let residual = target[(x, y)] - value;
        let sign = if residual > 0.0 {
            1.0
        } else if residual < 0.0 {
            -1.0
        } else {
            0.0
        };
        // d|target - warped|/dflow = -sign(residual) * dwarped/dflow
        Some(Vector2::new(-sign * dx, -sign * dy))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ramp(w: usize, h: usize) -> Image {
        Grid::from_fn(w, h, |x, _| x as f64 * 0.01)
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = Grid::from_fn(8, 6, |x, y| (x * 7 + y * 3) as f64 / 100.0);
        let flow = FlowField::zeros(8, 6);
        let (warped, valid) = warp_image(&img, &flow);
        assert_eq!(warped, img);
        assert_eq!(valid.count_true(), 48);
    }

    #[test]
    fn integer_shift_matches_translated_image() {
        let (w, h) = (16, 12);
        let target = Grid::from_fn(w, h, |x, y| ((x * 13 + y * 29) % 97) as f64 / 97.0);
        // source(x) = target(x - 2) horizontally, so sampling source at
        // x + 2 recovers the target... build source shifted by +2.
        let source = Grid::from_fn(w, h, |x, y| {
            let sx = (x + w - 2) % w;
            target[(sx, y)]
        });
        // source(x + 2) == target(x) away from the wrap column.
        let flow = FlowField(VectorField::from_fn(w, h, |_, _| {
            Some(Vector2::new(2.0, 0.0))
        }));
        let (warped, valid) = warp_image(&source, &flow);
        for y in 0..h {
            for x in 0..w - 2 {
                if x + 2 < w - 2 {
                    assert!(valid[(x, y)]);
                    assert_relative_eq!(warped[(x, y)], target[(x, y)], epsilon = 1e-15);
                }
            }
            // Samples past the right edge are masked, not clamped.
            assert!(!valid[(w - 1, y)]);
        }
    }

    #[test]
    fn half_pixel_shift_exact_on_ramp() {
        let img = ramp(10, 4);
        let flow = FlowField(VectorField::from_fn(10, 4, |_, _| {
            Some(Vector2::new(0.5, 0.0))
        }));
        let (warped, valid) = warp_image(&img, &flow);
        for y in 0..4 {
            for x in 0..9 {
                assert!(valid[(x, y)]);
                assert_relative_eq!(warped[(x, y)], (x as f64 + 0.5) * 0.01, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn constant_image_zero_gradient() {
        let img = Grid::new(8, 8, 0.4);
        let flow = FlowField(VectorField::from_fn(8, 8, |_, _| {
            Some(Vector2::new(0.3, -0.2))
        }));
        let g = warp_gradient(&img, &flow, &img);
        for (_, _, v) in g.0.vectors.enumerate() {
            assert_eq!(*v, Vector2::zeros());
        }
    }

    #[test]
    fn aligned_pair_zero_gradient() {
        let img = Grid::from_fn(8, 8, |x, y| (x + y) as f64 / 16.0);
        let flow = FlowField::zeros(8, 8);
        let g = warp_gradient(&img, &flow, &img);
        for (_, _, v) in g.0.vectors.enumerate() {
            assert_eq!(*v, Vector2::zeros());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Smooth band-limited image, sub-pixel flow, away from cell edges.
        let (w, h) = (24, 20);
        let img = Grid::from_fn(w, h, |x, y| {
            0.5 + 0.25 * libm::sin(0.37 * x as f64 + 0.11 * y as f64)
                + 0.2 * libm::cos(0.23 * y as f64 - 0.05 * x as f64)
        });
        let target = Grid::from_fn(w, h, |x, y| {
            0.5 + 0.3 * libm::cos(0.19 * x as f64 + 0.07 * y as f64)
        });
        let flow = FlowField(VectorField::from_fn(w, h, |x, y| {
            Some(Vector2::new(
                0.31 + 0.1 * libm::sin(0.4 * y as f64),
                -0.27 + 0.1 * libm::cos(0.3 * x as f64),
            ))
        }));
        let analytic = warp_gradient(&img, &flow, &target);
        let step = 1e-5;
        let mut max_dev = 0.0f64;
        for y in 2..h - 2 {
            for x in 2..w - 2 {
                let loss = |du: f64, dv: f64| {
                    let f = flow.0.vectors[(x, y)];
                    let (v, _, _) =
                        sample_bilinear(&img, x as f64 + f.x + du, y as f64 + f.y + dv);
                    (target[(x, y)] - v).abs()
                };
                let fd_x = (loss(step, 0.0) - loss(-step, 0.0)) / (2.0 * step);
                let fd_y = (loss(0.0, step) - loss(0.0, -step)) / (2.0 * step);
                let a = analytic.0.vectors[(x, y)];
                max_dev = max_dev.max((a.x - fd_x).abs()).max((a.y - fd_y).abs());
            }
        }
        assert!(max_dev < 1e-4, "max deviation {max_dev}");
    }
}
