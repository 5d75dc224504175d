//! Weighted least-squares twist estimation and flow projection.
//!
//! `fit_egomotion` solves the 6x6 normal equations
//! `(Q^T W Q) T = Q^T W U` accumulated over valid pixels, where each pixel
//! contributes a 2x6 block `Q(x) = [rho A | B]`. `project_flow` composes
//! the fit with motion-field resynthesis, a linear projection of the flow
//! onto the ego-motion subspace. `irls_fit` wraps the solve in classical
//! iteratively reweighted least squares so the per-pixel weights retain
//! their reliability role without a learned predictor.

use alloc::vec::Vec;

use nalgebra::{Matrix6, Vector2, Vector6};
use thiserror::Error;

use crate::geometry::{
    matrix_q, synthesize_motion_field, CameraIntrinsics, CameraVelocity, GeometryError,
};
use crate::grid::{Grid, InverseDepthMap, Mask, MotionField};

#[derive(Debug, Error)]
pub enum EgoError {
    #[error("only {support} pixels with positive weight and valid depth; at least {min} required")]
    InsufficientSupport { support: usize, min: usize },
    #[error(
        "degenerate geometry: condition estimate {condition:.3e} exceeds {threshold:.3e}; \
         near-null twist direction [{d0:.3}, {d1:.3}, {d2:.3}, {d3:.3}, {d4:.3}, {d5:.3}]"
    )]
    DegenerateGeometry {
        condition: f64,
        threshold: f64,
        d0: f64,
        d1: f64,
        d2: f64,
        d3: f64,
        d4: f64,
        d5: f64,
    },
    #[error("field/weight dimensions do not match the depth map")]
    ShapeMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl EgoError {
    pub(crate) fn degenerate(condition: f64, threshold: f64, dir: &Vector6<f64>) -> Self {
        EgoError::DegenerateGeometry {
            condition,
            threshold,
            d0: dir[0],
            d1: dir[1],
            d2: dir[2],
            d3: dir[3],
            d4: dir[4],
            d5: dir[5],
        }
    }
}

/// Per-pixel non-negative reliability weights; zero wherever depth is
/// invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeights(pub Grid<f64>);

impl PixelWeights {
    /// Weight 1 on the given validity mask, 0 elsewhere.
    pub fn from_mask(mask: &Mask) -> Self {
        Self(mask.map(|&v| if v { 1.0 } else { 0.0 }))
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self(Grid::new(width, height, 1.0))
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

/// Result of a single weighted solve.
#[derive(Debug, Clone)]
pub struct EgoFit {
    pub velocity: CameraVelocity,
    /// `Q^T W Q`, symmetric 6x6.
    pub normal_matrix: Matrix6<f64>,
    /// Weighted RMS of the per-pixel residual norms, in normalized
    /// coordinates per frame interval.
    pub residual_rms: f64,
    /// Pixels with positive weight and valid depth and flow.
    pub support: usize,
    /// Eigenvalue ratio of the normal matrix.
    pub condition_estimate: f64,
}

/// Knobs shared by every solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Subsample the grid: only pixels with `x % stride == 0 && y % stride == 0`
    /// enter the normal equations.
    pub stride: usize,
    /// Condition estimates above this value are reported as degenerate
    /// geometry.
    pub condition_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            condition_threshold: 1e10,
        }
    }
}

const MIN_SUPPORT: usize = 6;
/// Relative eigenvalue cutoff below which the solve switches to the
/// pseudo-inverse (zero component along the near-null direction).
const NULLSPACE_EIGENVALUE_RATIO: f64 = 1e-12;

/// Joint validity of depth and flow.
pub fn joint_validity(rho: &InverseDepthMap, flow: &MotionField) -> Mask {
    rho.valid.and(&flow.0.valid)
}

/// Per-pixel residual norms `||v(x) - Q(x) T||` on the joint valid set
/// (zero elsewhere).
pub fn residual_norms(
    rho: &InverseDepthMap,
    flow: &MotionField,
    intrinsics: &CameraIntrinsics,
    velocity: &CameraVelocity,
) -> Grid<f64> {
    let t = velocity.to_vector();
    let (w, h) = rho.dims();
    Grid::from_fn(w, h, |x, y| {
        if !(rho.valid[(x, y)] && flow.0.valid[(x, y)]) {
            return 0.0;
        }
        let n = intrinsics.normalized_at(x as f64, y as f64);
        let q = matrix_q(&n, rho.rho[(x, y)]);
        let predicted = q * t;
        (flow.0.vectors[(x, y)] - Vector2::new(predicted.x, predicted.y)).norm()
    })
}

fn check_shapes(
    rho: &InverseDepthMap,
    flow: &MotionField,
    weights: &PixelWeights,
    intrinsics: &CameraIntrinsics,
) -> Result<(), EgoError> {
    let (w, h) = rho.dims();
    if flow.dims() != (w, h) || weights.dims() != (w, h) {
        return Err(EgoError::ShapeMismatch);
    }
    if w != intrinsics.width || h != intrinsics.height {
        return Err(EgoError::ShapeMismatch);
    }
    Ok(())
}

/// Solve `argmin_T sum_i w(x_i) ||v(x_i) - Q(x_i) T||^2`.
///
/// Deterministic: accumulation runs in row-major order, so identical inputs
/// produce bit-identical twists.
pub fn fit_egomotion(
    rho: &InverseDepthMap,
    flow: &MotionField,
    weights: &PixelWeights,
    intrinsics: &CameraIntrinsics,
    options: &FitOptions,
) -> Result<EgoFit, EgoError> {
    check_shapes(rho, flow, weights, intrinsics)?;
    let stride = options.stride.max(1);
    let (width, height) = rho.dims();

    let mut normal = Matrix6::<f64>::zeros();
    let mut rhs = Vector6::<f64>::zeros();
    let mut support = 0usize;
    for y in (0..height).step_by(stride) {
        for x in (0..width).step_by(stride) {
            let w = weights.0[(x, y)];
            if w <= 0.0 || !rho.valid[(x, y)] || !flow.0.valid[(x, y)] {
                continue;
            }
            support += 1;
            let n = intrinsics.normalized_at(x as f64, y as f64);
            let q = matrix_q(&n, rho.rho[(x, y)]);
            let qt = q.transpose();
            normal += qt * q * w;
            rhs += qt * flow.0.vectors[(x, y)] * w;
        }
    }
    if support < MIN_SUPPORT {
        return Err(EgoError::InsufficientSupport {
            support,
            min: MIN_SUPPORT,
        });
    }

    let eigen = normal.symmetric_eigen();
    let mut lambda_max = 0.0f64;
    let mut lambda_min = f64::INFINITY;
    let mut min_index = 0;
    for (i, &l) in eigen.eigenvalues.iter().enumerate() {
        let l = l.max(0.0);
        if l > lambda_max {
            lambda_max = l;
        }
        if l < lambda_min {
            lambda_min = l;
            min_index = i;
        }
    }
    let condition = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    if condition > options.condition_threshold {
        let dir = eigen.eigenvectors.column(min_index).into_owned();
        return Err(EgoError::degenerate(condition, options.condition_threshold, &dir));
    }

    let solution = if lambda_min > NULLSPACE_EIGENVALUE_RATIO * lambda_max {
        match normal.cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => pseudo_solve(&eigen, &rhs, lambda_max),
        }
    } else {
        pseudo_solve(&eigen, &rhs, lambda_max)
    };

    let velocity = CameraVelocity::from_vector(&solution);
    let (residual_rms, _) = weighted_residual_rms(rho, flow, weights, intrinsics, &velocity, stride);

    Ok(EgoFit {
        velocity,
        normal_matrix: normal,
        residual_rms,
        support,
        condition_estimate: condition,
    })
}

fn pseudo_solve(
    eigen: &nalgebra::SymmetricEigen<f64, nalgebra::Const<6>>,
    rhs: &Vector6<f64>,
    lambda_max: f64,
) -> Vector6<f64> {
    let mut t = Vector6::zeros();
    for i in 0..6 {
        let l = eigen.eigenvalues[i];
        if l > NULLSPACE_EIGENVALUE_RATIO * lambda_max {
            let v = eigen.eigenvectors.column(i);
            t += v * (v.dot(rhs) / l);
        }
    }
    t
}

fn weighted_residual_rms(
    rho: &InverseDepthMap,
    flow: &MotionField,
    weights: &PixelWeights,
    intrinsics: &CameraIntrinsics,
    velocity: &CameraVelocity,
    stride: usize,
) -> (f64, f64) {
    let t = velocity.to_vector();
    let (width, height) = rho.dims();
    let mut num = 0.0;
    let mut den = 0.0;
    for y in (0..height).step_by(stride) {
        for x in (0..width).step_by(stride) {
            let w = weights.0[(x, y)];
            if w <= 0.0 || !rho.valid[(x, y)] || !flow.0.valid[(x, y)] {
                continue;
            }
            let n = intrinsics.normalized_at(x as f64, y as f64);
            let q = matrix_q(&n, rho.rho[(x, y)]);
            let predicted = q * t;
            let r = flow.0.vectors[(x, y)] - Vector2::new(predicted.x, predicted.y);
            num += w * r.norm_squared();
            den += w;
        }
    }
    if den > 0.0 {
        (libm::sqrt(num / den), den)
    } else {
        (0.0, 0.0)
    }
}

/// Fit a twist, then resynthesize the corresponding motion field.
///
/// The map `U -> MF(rho, MF_pinv(rho, U, w))` is the W-orthogonal projection
/// of the flow onto the span of the six columns of `Q`: it is idempotent and
/// leaves residuals W-orthogonal to that span.
pub fn project_flow(
    rho: &InverseDepthMap,
    flow: &MotionField,
    weights: &PixelWeights,
    intrinsics: &CameraIntrinsics,
    options: &FitOptions,
) -> Result<(EgoFit, MotionField), EgoError> {
    let fit = fit_egomotion(rho, flow, weights, intrinsics, options)?;
    let field = synthesize_motion_field(rho, &fit.velocity, intrinsics)?;
    Ok((fit, field))
}

/// Robust loss kernel mapping a scaled residual `u = r / scale` to a weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustKernel {
    /// Weight 1 up to `k`, then `k / u`.
    Huber { k: f64 },
    /// Biweight `(1 - (u/c)^2)^2` up to `c`, then 0.
    Tukey { c: f64 },
}

impl RobustKernel {
    pub fn huber() -> Self {
        RobustKernel::Huber { k: 1.345 }
    }

    pub fn tukey() -> Self {
        RobustKernel::Tukey { c: 4.685 }
    }

    /// Non-increasing in `u`; equals 1 at `u = 0`.
    pub fn weight(&self, u: f64) -> f64 {
        match *self {
            RobustKernel::Huber { k } => {
                if u <= k {
                    1.0
                } else {
                    k / u
                }
            }
            RobustKernel::Tukey { c } => {
                if u <= c {
                    let s = 1.0 - (u / c) * (u / c);
                    s * s
                } else {
                    0.0
                }
            }
        }
    }
}

/// Configuration for [`irls_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig {
    pub kernel: RobustKernel,
    pub max_iterations: usize,
    /// Convergence tolerance on the twist update norm.
    pub tolerance: f64,
    /// Floor for the residual scale so noiseless fits do not divide by zero.
    pub min_scale: f64,
    pub fit: FitOptions,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            kernel: RobustKernel::huber(),
            max_iterations: 20,
            tolerance: 1e-8,
            min_scale: 1e-12,
            fit: FitOptions::default(),
        }
    }
}

/// Robust fit outcome: the final solve plus the weights that produced it.
#[derive(Debug, Clone)]
pub struct RobustFit {
    pub fit: EgoFit,
    pub weights: PixelWeights,
    pub iterations: usize,
    pub converged: bool,
    /// Final residual scale, `1.4826 * MAD` of the residual norms.
    pub scale: f64,
}

/// Median of a slice; `None` when empty. Deterministic total order.
pub(crate) fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// `1.4826 * median(|r - median(r)|)`, the usual consistent scale estimate.
pub(crate) fn mad_scale(residuals: &[f64]) -> f64 {
    let mut v: Vec<f64> = residuals.to_vec();
    let Some(med) = median(&mut v) else {
        return 0.0;
    };
    let mut dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
    let mad = median(&mut dev).unwrap_or(0.0);
    1.4826 * mad
}

/// Iteratively reweighted least squares: alternate the weighted solve with
/// residual-driven reweighting until the twist stops moving.
pub fn irls_fit(
    rho: &InverseDepthMap,
    flow: &MotionField,
    intrinsics: &CameraIntrinsics,
    config: &RobustConfig,
) -> Result<RobustFit, EgoError> {
    let valid = joint_validity(rho, flow);
    let mut weights = PixelWeights::from_mask(&valid);
    let stride = config.fit.stride.max(1);

    let mut previous: Option<Vector6<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut scale = config.min_scale;
    let mut fit = None;

    while iterations < config.max_iterations.max(1) {
        iterations += 1;
        let current = fit_egomotion(rho, flow, &weights, intrinsics, &config.fit)?;
        let t = current.velocity.to_vector();

        let norms = residual_norms(rho, flow, intrinsics, &current.velocity);
        let sampled: Vec<f64> = sampled_residuals(&norms, &valid, stride);
        scale = mad_scale(&sampled).max(config.min_scale);
        weights = kernel_weights(&norms, &valid, config.kernel, scale);

        let done = previous.is_some_and(|p| (t - p).norm() <= config.tolerance);
        previous = Some(t);
        fit = Some(current);
        if done {
            converged = true;
            break;
        }
    }

    Ok(RobustFit {
        fit: fit.expect("at least one IRLS iteration runs"),
        weights,
        iterations,
        converged,
        scale,
    })
}

fn sampled_residuals(norms: &Grid<f64>, valid: &Mask, stride: usize) -> Vec<f64> {
    let (width, height) = norms.dims();
    let mut out = Vec::new();
    for y in (0..height).step_by(stride) {
        for x in (0..width).step_by(stride) {
            if valid[(x, y)] {
                out.push(norms[(x, y)]);
            }
        }
    }
    out
}

fn kernel_weights(norms: &Grid<f64>, valid: &Mask, kernel: RobustKernel, scale: f64) -> PixelWeights {
    let (width, height) = norms.dims();
    PixelWeights(Grid::from_fn(width, height, |x, y| {
        if valid[(x, y)] {
            kernel.weight(norms[(x, y)] / scale)
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::synthesize_motion_field;
    use nalgebra::Vector3;

    fn test_intrinsics(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(0.8 * w as f64, 0.8 * w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h)
            .unwrap()
    }

    fn ramp_depth(w: usize, h: usize) -> InverseDepthMap {
        let depth = Grid::from_fn(w, h, |x, y| {
            1.0 + 0.5 * libm::sin(0.3 * x as f64) + 0.3 * libm::cos(0.2 * y as f64)
        });
        InverseDepthMap::from_depth(&depth)
    }

    #[test]
    fn zero_flow_gives_zero_twist() {
        let intr = test_intrinsics(32, 24);
        let rho = ramp_depth(32, 24);
        let flow = MotionField::zeros(32, 24);
        let weights = PixelWeights::from_mask(&rho.valid);
        let fit = fit_egomotion(&rho, &flow, &weights, &intr, &FitOptions::default()).unwrap();
        assert_eq!(fit.velocity.to_vector(), Vector6::zeros());
        assert_eq!(fit.residual_rms, 0.0);
        assert_eq!(fit.support, 32 * 24);
    }

    #[test]
    fn synthesize_then_fit_round_trip() {
        let intr = test_intrinsics(48, 36);
        let rho = ramp_depth(48, 36);
        let vel = CameraVelocity::new(
            Vector3::new(0.02, -0.01, 0.03),
            Vector3::new(-0.005, 0.01, 0.02),
        );
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        let weights = PixelWeights::from_mask(&rho.valid);
        let fit = fit_egomotion(&rho, &field, &weights, &intr, &FitOptions::default()).unwrap();
        let err = (fit.velocity.to_vector() - vel.to_vector()).norm() / vel.norm();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn recovery_is_weight_independent() {
        let intr = test_intrinsics(32, 24);
        let rho = ramp_depth(32, 24);
        let vel = CameraVelocity::new(Vector3::new(0.01, 0.0, -0.02), Vector3::new(0.0, 0.01, 0.0));
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        // Arbitrary strictly positive weights must not change the optimum.
        let weights = PixelWeights(Grid::from_fn(32, 24, |x, y| 0.1 + ((x * 7 + y * 13) % 10) as f64));
        let fit = fit_egomotion(&rho, &field, &weights, &intr, &FitOptions::default()).unwrap();
        let err = (fit.velocity.to_vector() - vel.to_vector()).norm() / vel.norm();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn insufficient_support_detected() {
        let intr = test_intrinsics(8, 8);
        let mut depth = Grid::new(8, 8, 0.0);
        for i in 0..5 {
            depth[(i, 0)] = 1.0;
        }
        let rho = InverseDepthMap::from_depth(&depth);
        let flow = MotionField::zeros(8, 8);
        let weights = PixelWeights::from_mask(&rho.valid);
        match fit_egomotion(&rho, &flow, &weights, &intr, &FitOptions::default()) {
            Err(EgoError::InsufficientSupport { support, min }) => {
                assert_eq!(support, 5);
                assert_eq!(min, 6);
            }
            other => panic!("expected insufficient support, got {other:?}"),
        }
    }

    #[test]
    fn depth_scale_equivariance() {
        let intr = test_intrinsics(32, 24);
        let rho = ramp_depth(32, 24);
        let vel = CameraVelocity::new(Vector3::new(0.02, 0.01, -0.01), Vector3::new(0.01, -0.02, 0.005));
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        let weights = PixelWeights::from_mask(&rho.valid);
        let s = 3.0;
        let scaled = InverseDepthMap {
            rho: rho.rho.map(|&r| r / s),
            valid: rho.valid.clone(),
        };
        let fit = fit_egomotion(&scaled, &field, &weights, &intr, &FitOptions::default()).unwrap();
        assert!((fit.velocity.tau - vel.tau * s).norm() < 1e-9 * vel.tau.norm() * s);
        assert!((fit.velocity.omega - vel.omega).norm() < 1e-9 * vel.omega.norm());
    }

    #[test]
    fn projection_fixes_exact_fields() {
        let intr = test_intrinsics(32, 24);
        let rho = ramp_depth(32, 24);
        let vel = CameraVelocity::new(Vector3::new(0.0, 0.02, 0.01), Vector3::new(0.005, 0.0, -0.01));
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        let weights = PixelWeights::from_mask(&rho.valid);
        let (_, projected) =
            project_flow(&rho, &field, &weights, &intr, &FitOptions::default()).unwrap();
        for ((_, _, a), (_, _, b)) in field
            .0
            .vectors
            .enumerate()
            .zip(projected.0.vectors.enumerate())
        {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn degenerate_plane_is_flagged_or_consistent() {
        // Constant depth, tiny forward translation: the classic
        // translation/rotation ambiguity for a narrow field of view.
        let w = 32;
        let h = 24;
        let intr = CameraIntrinsics::new(
            20.0 * w as f64,
            20.0 * w as f64,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
        )
        .unwrap();
        let rho = InverseDepthMap::uniform(w, h, 1.0);
        let vel = CameraVelocity::new(Vector3::new(0.0, 0.0, 1e-4), Vector3::zeros());
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        let weights = PixelWeights::from_mask(&rho.valid);
        match fit_egomotion(&rho, &field, &weights, &intr, &FitOptions::default()) {
            Ok(fit) => {
                assert!(fit.velocity.is_finite());
                assert!(fit.condition_estimate.is_finite());
            }
            Err(EgoError::DegenerateGeometry { condition, .. }) => {
                assert!(condition > 1e10);
            }
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stride_subsampling_is_consistent() {
        let intr = test_intrinsics(32, 24);
        let rho = ramp_depth(32, 24);
        let vel = CameraVelocity::new(Vector3::new(0.01, -0.02, 0.03), Vector3::new(0.02, 0.0, -0.01));
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        let weights = PixelWeights::from_mask(&rho.valid);
        let opts = FitOptions {
            stride: 3,
            ..FitOptions::default()
        };
        let fit = fit_egomotion(&rho, &field, &weights, &intr, &opts).unwrap();
        assert_eq!(fit.support, 11 * 8);
        let err = (fit.velocity.to_vector() - vel.to_vector()).norm() / vel.norm();
        assert!(err < 1e-9);
    }

    #[test]
    fn huber_weights_monotone() {
        let k = RobustKernel::huber();
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let w = k.weight(i as f64 * 0.1);
            assert!(w <= prev);
            prev = w;
        }
        assert_eq!(k.weight(0.0), 1.0);
    }

    #[test]
    fn irls_clean_field_matches_plain_fit() {
        let intr = test_intrinsics(32, 24);
        let rho = ramp_depth(32, 24);
        let vel = CameraVelocity::new(Vector3::new(0.02, -0.01, 0.0), Vector3::new(0.0, 0.0, 0.015));
        let field = synthesize_motion_field(&rho, &vel, &intr).unwrap();
        let robust = irls_fit(&rho, &field, &intr, &RobustConfig::default()).unwrap();
        assert!(robust.converged);
        assert!(robust.iterations <= 2, "iterations {}", robust.iterations);
        let err = (robust.fit.velocity.to_vector() - vel.to_vector()).norm() / vel.norm();
        assert!(err < 1e-9);
    }

    #[test]
    fn irls_rejects_planted_outliers() {
        let intr = test_intrinsics(48, 36);
        let rho = ramp_depth(48, 36);
        let majority = CameraVelocity::new(Vector3::new(0.02, 0.0, 0.01), Vector3::new(0.0, 0.01, 0.0));
        let outlier = CameraVelocity::new(Vector3::new(-0.06, 0.05, 0.0), Vector3::new(0.02, 0.0, -0.03));
        let f_major = synthesize_motion_field(&rho, &majority, &intr).unwrap();
        let f_out = synthesize_motion_field(&rho, &outlier, &intr).unwrap();
        // Deterministic 20% outlier pattern.
        let mut field = f_major.clone();
        let mut is_outlier = Grid::new(48, 36, false);
        for (i, v) in field.0.vectors.as_mut_slice().iter_mut().enumerate() {
            if i % 5 == 0 {
                *v = f_out.0.vectors.as_slice()[i];
                is_outlier.as_mut_slice()[i] = true;
            }
        }
        let robust = irls_fit(&rho, &field, &intr, &RobustConfig::default()).unwrap();
        let err = (robust.fit.velocity.to_vector() - majority.to_vector()).norm() / majority.norm();
        assert!(err < 1e-3, "relative error {err}");

        let mut inlier_weights: Vec<f64> = Vec::new();
        let mut low_outliers = 0usize;
        let mut outliers = 0usize;
        for (x, y, &o) in is_outlier.enumerate() {
            if o {
                outliers += 1;
            } else {
                inlier_weights.push(robust.weights.0[(x, y)]);
            }
        }
        let med = median(&mut inlier_weights).unwrap();
        for (x, y, &o) in is_outlier.enumerate() {
            if o && robust.weights.0[(x, y)] < 0.1 * med {
                low_outliers += 1;
            }
        }
        assert!(
            low_outliers as f64 >= 0.9 * outliers as f64,
            "{low_outliers}/{outliers} outliers downweighted"
        );
    }

    #[test]
    fn equal_residuals_equal_weights() {
        let k = RobustKernel::huber();
        let w: Vec<f64> = (0..10).map(|_| k.weight(2.0 / 1.0)).collect();
        assert!(w.windows(2).all(|p| p[0] == p[1]));
    }
}
