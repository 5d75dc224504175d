//! Static/dynamic two-layer motion decomposition.
//!
//! A dynamic scene is modelled as two rigid motion fields with a hard
//! per-pixel mask: the composite field equals the field of the layer that
//! owns each pixel. [`fit_two_layers`] alternates per-layer least-squares
//! fits with argmin reassignment, a deterministic replacement for a learned
//! segmentation, and [`resolve_static_layer`] applies the label-symmetry
//! policy afterwards.

use thiserror::Error;

use crate::egomotion::{
    fit_egomotion, irls_fit, joint_validity, residual_norms, EgoError, EgoFit, PixelWeights,
    RobustConfig,
};
use crate::geometry::{synthesize_motion_field, CameraIntrinsics, CameraVelocity};
use crate::grid::{Grid, InverseDepthMap, Mask, MotionField, VectorField};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("static layer has no estimable background: {0}")]
    NoStaticSupport(EgoError),
    #[error(transparent)]
    Ego(#[from] EgoError),
}

/// Hard two-way segmentation over the valid pixel set.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    /// `true` = static layer. Meaningful only where `valid` is set.
    pub is_static: Grid<bool>,
    pub valid: Mask,
}

impl SegmentationMask {
    pub fn all_static(valid: &Mask) -> Self {
        let (w, h) = valid.dims();
        Self {
            is_static: Grid::new(w, h, true),
            valid: valid.clone(),
        }
    }

    pub fn static_count(&self) -> usize {
        self.is_static.and(&self.valid).count_true()
    }

    pub fn dynamic_count(&self) -> usize {
        self.valid.count_true() - self.static_count()
    }

    /// Swap the two labels.
    pub fn flipped(&self) -> Self {
        Self {
            is_static: self.is_static.map(|&s| !s),
            valid: self.valid.clone(),
        }
    }

    /// First valid pixel in row-major order, the deterministic tie-breaker.
    pub fn first_valid_pixel(&self) -> Option<(usize, usize)> {
        self.valid
            .enumerate()
            .find(|(_, _, &v)| v)
            .map(|(x, y, _)| (x, y))
    }
}

/// Configuration for [`fit_two_layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub max_outer_iterations: usize,
    /// Hysteresis: a pixel switches layers only if the other layer improves
    /// its residual by more than this margin (squared-norm units).
    pub assignment_margin: f64,
    /// Below this many dynamic pixels the fit degrades to a single layer.
    pub min_dynamic_support: usize,
    /// Robust configuration for the initialization fit.
    pub robust: RobustConfig,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 10,
            assignment_margin: 0.0,
            min_dynamic_support: 50,
            robust: RobustConfig::default(),
        }
    }
}

/// Result of the alternating two-layer fit.
#[derive(Debug, Clone)]
pub struct LayeredFit {
    /// Ego-motion estimate: the fit of the static layer.
    pub static_fit: EgoFit,
    /// Absent when the scene degraded to a single layer.
    pub dynamic_fit: Option<EgoFit>,
    pub mask: SegmentationMask,
    /// Per-pixel selection of the two synthesized fields.
    pub composite_field: MotionField,
    pub iterations: usize,
    pub converged: bool,
}

impl LayeredFit {
    pub fn is_single_layer(&self) -> bool {
        self.dynamic_fit.is_none()
    }
}

/// Label-symmetry policy: which of the two fitted layers is "static".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymmetryPolicy {
    /// The layer owning more pixels (default).
    LargerSupport,
    /// The layer with smaller `||(tau, rotation_scale * omega)||`.
    SmallerMotion { rotation_scale: f64 },
}

impl Default for SymmetryPolicy {
    fn default() -> Self {
        SymmetryPolicy::LargerSupport
    }
}

fn weights_for(mask: &Mask, select: &Grid<bool>, keep_static: bool) -> PixelWeights {
    let (w, h) = mask.dims();
    PixelWeights(Grid::from_fn(w, h, |x, y| {
        if mask[(x, y)] && (select[(x, y)] == keep_static) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Per-pixel selection of the two synthesized fields, so reconstruction
/// from `(mask, T_static, T_dynamic)` is bit-exact against
/// [`synthesize_motion_field`].
fn synthesize_composite(
    rho: &InverseDepthMap,
    mask: &SegmentationMask,
    static_vel: &CameraVelocity,
    dynamic_vel: Option<&CameraVelocity>,
    intrinsics: &CameraIntrinsics,
) -> MotionField {
    let (w, h) = rho.dims();
    let f_static = synthesize_motion_field(rho, static_vel, intrinsics)
        .expect("shapes validated by the caller");
    let f_dynamic = dynamic_vel
        .map(|v| synthesize_motion_field(rho, v, intrinsics).expect("shapes validated"));
    MotionField(VectorField::from_fn(w, h, |x, y| {
        if !mask.valid[(x, y)] || !rho.valid[(x, y)] {
            return None;
        }
        let field = if mask.is_static[(x, y)] {
            &f_static
        } else {
            f_dynamic.as_ref().unwrap_or(&f_static)
        };
        Some(field.0.vectors[(x, y)])
    }))
}

/// Sum over valid pixels of the squared residual under the owning layer.
fn total_assigned_residual(
    mask: &SegmentationMask,
    r_static: &Grid<f64>,
    r_dynamic: &Grid<f64>,
) -> f64 {
    let mut total = 0.0;
    for (x, y, &v) in mask.valid.enumerate() {
        if !v {
            continue;
        }
        let r = if mask.is_static[(x, y)] {
            r_static[(x, y)]
        } else {
            r_dynamic[(x, y)]
        };
        total += r * r;
    }
    total
}

fn single_layer_result(
    rho: &InverseDepthMap,
    intrinsics: &CameraIntrinsics,
    fit: EgoFit,
    valid: &Mask,
    iterations: usize,
) -> LayeredFit {
    let mask = SegmentationMask::all_static(valid);
    let composite = synthesize_composite(rho, &mask, &fit.velocity, None, intrinsics);
    LayeredFit {
        static_fit: fit,
        dynamic_fit: None,
        mask,
        composite_field: composite,
        iterations,
        converged: true,
    }
}

/// Alternating hard-assignment fit of a static and a pooled dynamic layer.
///
/// Initialization is a robust IRLS fit of all pixels; pixels whose residual
/// sits more than the robust scale above the bulk median seed the dynamic
/// layer (the same centering the MAD scale itself uses, so a residual
/// distribution that is merely offset by the robust fit's small bias does
/// not flood the dynamic layer). Each outer iteration refits both layers by
/// least squares on their own pixels and reassigns every pixel to the layer
/// with the smaller residual, so the total assigned residual is
/// non-increasing. Terminates when the mask stops changing.
pub fn fit_two_layers(
    rho: &InverseDepthMap,
    flow: &MotionField,
    intrinsics: &CameraIntrinsics,
    config: &LayerConfig,
) -> Result<LayeredFit, LayerError> {
    let valid = joint_validity(rho, flow);

    let init = irls_fit(rho, flow, intrinsics, &config.robust)
        .map_err(LayerError::NoStaticSupport)?;
    let init_norms = residual_norms(rho, flow, intrinsics, &init.fit.velocity);
    let mut bulk: alloc::vec::Vec<f64> = init_norms
        .enumerate()
        .filter(|(x, y, _)| valid[(*x, *y)])
        .map(|(_, _, &r)| r)
        .collect();
    let bulk_median = crate::egomotion::median(&mut bulk).unwrap_or(0.0);

    let (w, h) = rho.dims();
    let mut mask = SegmentationMask {
        is_static: Grid::from_fn(w, h, |x, y| {
            !(valid[(x, y)] && init_norms[(x, y)] - bulk_median > init.scale)
        }),
        valid: valid.clone(),
    };

    if mask.dynamic_count() < config.min_dynamic_support {
        return Ok(single_layer_result(rho, intrinsics, init.fit, &valid, 1));
    }

    let mut static_fit = init.fit;
    let mut dynamic_fit: Option<EgoFit> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_total = f64::INFINITY;

    while iterations < config.max_outer_iterations.max(1) {
        iterations += 1;

        let static_weights = weights_for(&valid, &mask.is_static, true);
        static_fit = fit_egomotion(rho, flow, &static_weights, intrinsics, &config.robust.fit)
            .map_err(LayerError::NoStaticSupport)?;

        let dynamic_weights = weights_for(&valid, &mask.is_static, false);
        dynamic_fit = match fit_egomotion(rho, flow, &dynamic_weights, intrinsics, &config.robust.fit)
        {
            Ok(fit) => Some(fit),
            // The dynamic layer shrank below a solvable size.
            Err(EgoError::InsufficientSupport { .. }) => {
                return Ok(single_layer_result(rho, intrinsics, static_fit, &valid, iterations));
            }
            Err(e) => return Err(e.into()),
        };

        let r_static = residual_norms(rho, flow, intrinsics, &static_fit.velocity);
        let r_dynamic = residual_norms(
            rho,
            flow,
            intrinsics,
            &dynamic_fit.as_ref().expect("dynamic fit present").velocity,
        );

        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if !valid[(x, y)] {
                    continue;
                }
                let rs = r_static[(x, y)] * r_static[(x, y)];
                let rd = r_dynamic[(x, y)] * r_dynamic[(x, y)];
                let current = mask.is_static[(x, y)];
                // Switch only on strict improvement beyond the margin.
                let next = if current {
                    !(rd + config.assignment_margin < rs)
                } else {
                    rs + config.assignment_margin < rd
                };
                if next != current {
                    mask.is_static[(x, y)] = next;
                    changed = true;
                }
            }
        }

        // Non-increasing up to the hysteresis margin: each refit minimizes
        // its own layer's residual and each reassignment minimizes per
        // pixel.
        let total = total_assigned_residual(&mask, &r_static, &r_dynamic);
        let slack = config.assignment_margin * valid.count_true() as f64;
        debug_assert!(total <= last_total + slack + 1e-9 * (1.0 + last_total.min(1e300)));
        last_total = total;

        if mask.dynamic_count() < config.min_dynamic_support {
            // Dynamic layer collapsed; refit the background on everything.
            let all = PixelWeights::from_mask(&valid);
            let fit = fit_egomotion(rho, flow, &all, intrinsics, &config.robust.fit)
                .map_err(LayerError::NoStaticSupport)?;
            return Ok(single_layer_result(rho, intrinsics, fit, &valid, iterations));
        }

        if !changed {
            converged = true;
            break;
        }
    }

    let composite = synthesize_composite(
        rho,
        &mask,
        &static_fit.velocity,
        dynamic_fit.as_ref().map(|f| &f.velocity),
        intrinsics,
    );

    Ok(LayeredFit {
        static_fit,
        dynamic_fit,
        mask,
        composite_field: composite,
        iterations,
        converged,
    })
}

/// Relabel the two layers so "static" is the one selected by the policy.
///
/// Ties break deterministically: the layer containing the first valid pixel
/// in row-major order becomes static.
pub fn resolve_static_layer(fit: LayeredFit, policy: SymmetryPolicy) -> LayeredFit {
    let Some(dynamic_fit) = fit.dynamic_fit.clone() else {
        return fit;
    };

    let static_wins = match policy {
        SymmetryPolicy::LargerSupport => {
            let s = fit.mask.static_count();
            let d = fit.mask.dynamic_count();
            if s != d {
                s > d
            } else {
                tie_break_static(&fit.mask)
            }
        }
        SymmetryPolicy::SmallerMotion { rotation_scale } => {
            let ms = weighted_motion_norm(&fit.static_fit.velocity, rotation_scale);
            let md = weighted_motion_norm(&dynamic_fit.velocity, rotation_scale);
            if ms != md {
                ms < md
            } else {
                tie_break_static(&fit.mask)
            }
        }
    };

    if static_wins {
        fit
    } else {
        LayeredFit {
            static_fit: dynamic_fit,
            dynamic_fit: Some(fit.static_fit),
            mask: fit.mask.flipped(),
            composite_field: fit.composite_field,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

fn tie_break_static(mask: &SegmentationMask) -> bool {
    mask.first_valid_pixel()
        .map(|(x, y)| mask.is_static[(x, y)])
        .unwrap_or(true)
}

fn weighted_motion_norm(velocity: &CameraVelocity, rotation_scale: f64) -> f64 {
    let t = velocity.tau.norm_squared();
    let r = velocity.omega.norm_squared() * rotation_scale * rotation_scale;
    libm::sqrt(t + r)
}

/// Per-pixel residual optimality certificate: every valid pixel's residual
/// under its assigned layer is within `margin` of the other layer's.
pub fn assignment_is_optimal(
    rho: &InverseDepthMap,
    flow: &MotionField,
    intrinsics: &CameraIntrinsics,
    fit: &LayeredFit,
    margin: f64,
) -> bool {
    let Some(dynamic) = fit.dynamic_fit.as_ref() else {
        return true;
    };
    let r_static = residual_norms(rho, flow, intrinsics, &fit.static_fit.velocity);
    let r_dynamic = residual_norms(rho, flow, intrinsics, &dynamic.velocity);
    for (x, y, &v) in fit.mask.valid.enumerate() {
        if !v {
            continue;
        }
        let rs = r_static[(x, y)] * r_static[(x, y)];
        let rd = r_dynamic[(x, y)] * r_dynamic[(x, y)];
        let (own, other) = if fit.mask.is_static[(x, y)] {
            (rs, rd)
        } else {
            (rd, rs)
        };
        if own > other + margin {
            return false;
        }
    }
    true
}

/// Pixel agreement between a mask and a reference static/dynamic labelling,
/// over the valid set.
pub fn label_accuracy(mask: &SegmentationMask, reference_static: &Grid<bool>) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for (x, y, &v) in mask.valid.enumerate() {
        if !v {
            continue;
        }
        total += 1;
        if mask.is_static[(x, y)] == reference_static[(x, y)] {
            agree += 1;
        }
    }
    if total == 0 {
        return 1.0;
    }
    agree as f64 / total as f64
}
