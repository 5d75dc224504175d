//! Benchmark-protocol evaluation: per-pair relative pose error, trajectory
//! integration from per-pair velocities, and short-snippet ATE with rigid
//! alignment.

use alloc::vec::Vec;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::egomotion::median;
use crate::geometry::{twist_to_pose, CameraVelocity, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("timestamps must be strictly increasing (offender at index {0})")]
    NonMonotonic(usize),
    #[error("need at least {needed} associated frames, found {found}")]
    TooFewFrames { needed: usize, found: usize },
    #[error("no timestamp associations within the tolerance")]
    NoAssociation,
}

/// Per-pair translation and rotation error.
///
/// `trans_error` is in scene length units per pair; `rot_error` is the
/// rotation angle in radians (reports convert to degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairError {
    pub timestamp: f64,
    pub trans_error: f64,
    pub rot_error: f64,
}

/// Error of a predicted relative pose against ground truth:
/// `R_d = pred^-1 * gt`, translation norm plus the clamped trace-angle.
///
/// The caller owns the timestamp; it defaults to zero here.
pub fn relative_pose_error(pred: &Pose, gt: &Pose) -> PairError {
    let diff = pred.inverse().compose(gt);
    PairError {
        timestamp: 0.0,
        trans_error: diff.translation.norm(),
        rot_error: rotation_angle(&diff.rotation),
    }
}

/// `arccos(clamp((tr(R) - 1) / 2))`; the clamp absorbs numerical trace
/// drift.
pub fn rotation_angle(rotation: &Matrix3<f64>) -> f64 {
    let c = ((rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    libm::acos(c)
}

/// Scalar statistics of a nonnegative error population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub count: usize,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / n;
        let rmse = libm::sqrt(mean_sq);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        let median = median(&mut sorted).expect("non-empty");
        Ok(Stats {
            rmse,
            mean,
            median,
            std: libm::sqrt(var),
            count: values.len(),
        })
    }
}

/// Translation and rotation statistics over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub translation: Stats,
    pub rotation: Stats,
}

pub fn summarize(pairs: &[PairError]) -> Result<ErrorSummary, EvalError> {
    let trans: Vec<f64> = pairs.iter().map(|p| p.trans_error).collect();
    let rot: Vec<f64> = pairs.iter().map(|p| p.rot_error).collect();
    Ok(ErrorSummary {
        translation: Stats::from_values(&trans)?,
        rotation: Stats::from_values(&rot)?,
    })
}

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

impl Trajectory {
    pub fn new() -> Self {
        Self {
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<(), EvalError> {
        if let Some(&(last, _)) = self.samples.last() {
            if timestamp <= last {
                return Err(EvalError::NonMonotonic(self.samples.len()));
            }
        }
        self.samples.push((timestamp, pose));
        Ok(())
    }

    pub fn from_samples(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        let mut t = Self::new();
        for (ts, pose) in samples {
            t.push(ts, pose)?;
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Pose)> {
        self.samples.iter()
    }

    pub fn get(&self, i: usize) -> Option<&(f64, Pose)> {
        self.samples.get(i)
    }

    /// Index of the sample with timestamp nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let idx = self
            .samples
            .partition_point(|&(ts, _)| ts < t)
            .min(self.samples.len() - 1);
        let better_left = idx > 0
            && (t - self.samples[idx - 1].0).abs() <= (self.samples[idx].0 - t).abs();
        Some(if better_left { idx - 1 } else { idx })
    }

    /// Pose at `t`: linear interpolation of position, spherical
    /// interpolation of orientation between bracketing samples. `None`
    /// when `t` is farther than `max_diff` from the nearest bracketing
    /// sample.
    pub fn sample_interpolated(&self, t: f64, max_diff: f64) -> Option<Pose> {
        if self.samples.is_empty() {
            return None;
        }
        let right = self.samples.partition_point(|&(ts, _)| ts < t);
        if right == 0 {
            let (ts, pose) = self.samples[0];
            return ((ts - t).abs() <= max_diff).then_some(pose);
        }
        if right == self.samples.len() {
            let (ts, pose) = self.samples[self.samples.len() - 1];
            return ((t - ts).abs() <= max_diff).then_some(pose);
        }
        let (t0, p0) = self.samples[right - 1];
        let (t1, p1) = self.samples[right];
        if (t - t0).min(t1 - t) > max_diff {
            return None;
        }
        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let translation = p0.translation * (1.0 - s) + p1.translation * s;
        let q0 = p0.rotation_quaternion();
        let mut q1 = p1.rotation_quaternion();
        if q0.coords.dot(&q1.coords) < 0.0 {
            q1 = UnitQuaternion::new_unchecked(-q1.into_inner());
        }
        let q = q0
            .try_slerp(&q1, s, 1e-12)
            .unwrap_or(if s < 0.5 { q0 } else { q1 });
        Some(Pose::from_quaternion(&q, translation))
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|(_, p)| p.translation).collect()
    }
}

/// Chain per-pair twists into a global track: `pose_0 = I`,
/// `pose_{k+1} = pose_k * twist_to_pose(T_k, delta_k)`.
pub fn integrate_trajectory(
    velocities: &[(f64, CameraVelocity, f64)],
) -> Result<Trajectory, EvalError> {
    if velocities.is_empty() {
        return Err(EvalError::Empty);
    }
    for (i, w) in velocities.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(EvalError::NonMonotonic(i + 1));
        }
    }
    let mut trajectory = Trajectory::new();
    let mut pose = Pose::identity();
    trajectory.push(velocities[0].0, pose)?;
    for &(ts, vel, delta) in velocities {
        pose = pose.compose(&twist_to_pose(&vel, delta));
        trajectory.push(ts + delta, pose)?;
    }
    Ok(trajectory)
}

/// Least-squares rigid alignment (orthogonal Procrustes): the rotation and
/// translation minimizing `sum ||R src_i + t - dst_i||^2`.
///
/// Uses the quaternion eigenvalue formulation rather than an SVD of the
/// cross-covariance: for (near-)collinear point sets the SVD's null-space
/// pairing is arbitrary and leaks into the residual, while the dominant
/// eigenvector of the symmetric 4x4 system stays a near-exact minimizer.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    assert_eq!(src.len(), dst.len());
    assert!(!src.is_empty());
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut s = Matrix3::<f64>::zeros();
    for (p, q) in src.iter().zip(dst.iter()) {
        s += (p - mu_s) * (q - mu_d).transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let n4 = nalgebra::Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eigen = n4.symmetric_eigen();
    let mut best = 0;
    for i in 1..4 {
        if eigen.eigenvalues[i] > eigen.eigenvalues[best] {
            best = i;
        }
    }
    let q = eigen.eigenvectors.column(best);
    let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    let rotation = quat.to_rotation_matrix().into_inner();
    let translation = mu_d - rotation * mu_s;
    (rotation, translation)
}

/// Absolute trajectory error over sliding fixed-length snippets.
///
/// Prediction samples are associated to ground truth by nearest timestamp
/// within `max_diff`; every window of `snippet_len` consecutive associated
/// frames is rigidly aligned to ground truth (rotation + translation, unit
/// scale) and contributes its position RMSE. The returned statistics are
/// over the per-window RMSEs.
pub fn ate_snippets(
    pred: &Trajectory,
    gt: &Trajectory,
    snippet_len: usize,
    max_diff: f64,
) -> Result<Stats, EvalError> {
    if snippet_len < 2 {
        return Err(EvalError::TooFewFrames {
            needed: 2,
            found: snippet_len,
        });
    }
    let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for &(t, pose) in pred.iter() {
        let Some(i) = gt.nearest(t) else { continue };
        let (gt_t, gt_pose) = gt.get(i).expect("nearest index in range");
        if (gt_t - t).abs() <= max_diff {
            pairs.push((pose.translation, gt_pose.translation));
        }
    }
    if pairs.len() < snippet_len {
        return Err(EvalError::TooFewFrames {
            needed: snippet_len,
            found: pairs.len(),
        });
    }
    let mut window_rmse = Vec::new();
    for window in pairs.windows(snippet_len) {
        let src: Vec<Vector3<f64>> = window.iter().map(|(p, _)| *p).collect();
        let dst: Vec<Vector3<f64>> = window.iter().map(|(_, g)| *g).collect();
        let (r, t) = align_rigid(&src, &dst);
        let sq: f64 = src
            .iter()
            .zip(dst.iter())
            .map(|(s, d)| (r * s + t - d).norm_squared())
            .sum();
        window_rmse.push(libm::sqrt(sq / snippet_len as f64));
    }
    Stats::from_values(&window_rmse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_exp;
    use approx::assert_relative_eq;

    #[test]
    fn identical_poses_zero_error() {
        let p = twist_to_pose(
            &CameraVelocity::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.2, -0.1, 0.05)),
            1.0,
        );
        let e = relative_pose_error(&p, &p);
        assert_eq!(e.trans_error, 0.0);
        assert!(e.rot_error < 1e-9);
    }

    #[test]
    fn pure_translation_error() {
        let gt = Pose::from_parts(Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0));
        let e = relative_pose_error(&Pose::identity(), &gt);
        assert_relative_eq!(e.trans_error, 0.1);
        assert_eq!(e.rot_error, 0.0);
    }

    #[test]
    fn rotation_error_matches_angle() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let gt = Pose::from_parts(rotation_exp(&(axis * 0.3)), Vector3::zeros());
        let e = relative_pose_error(&Pose::identity(), &gt);
        assert!((e.rot_error - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rotation_error_symmetric_under_swap() {
        let a = Pose::from_parts(rotation_exp(&Vector3::new(0.2, -0.1, 0.3)), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_parts(rotation_exp(&Vector3::new(-0.1, 0.4, 0.1)), Vector3::new(0.0, 2.0, 0.0));
        let e1 = relative_pose_error(&a, &b);
        let e2 = relative_pose_error(&b, &a);
        assert_relative_eq!(e1.rot_error, e2.rot_error, epsilon = 1e-12);
    }

    #[test]
    fn left_invariance_under_rotation() {
        let a = Pose::from_parts(rotation_exp(&Vector3::new(0.1, 0.2, -0.1)), Vector3::new(0.5, 0.0, 0.2));
        let b = Pose::from_parts(rotation_exp(&Vector3::new(-0.2, 0.1, 0.3)), Vector3::new(0.1, 0.4, 0.0));
        let q = Pose::from_parts(rotation_exp(&Vector3::new(0.3, -0.4, 0.2)), Vector3::zeros());
        let e = relative_pose_error(&a, &b);
        let e_moved = relative_pose_error(&q.compose(&a), &q.compose(&b));
        assert_relative_eq!(e.rot_error, e_moved.rot_error, epsilon = 1e-12);
        assert_relative_eq!(e.trans_error, e_moved.trans_error, epsilon = 1e-12);
    }

    #[test]
    fn integrate_constant_translation() {
        let vel = CameraVelocity::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let input: Vec<(f64, CameraVelocity, f64)> =
            (0..5).map(|k| (k as f64, vel, 1.0)).collect();
        let traj = integrate_trajectory(&input).unwrap();
        assert_eq!(traj.len(), 6);
        for (k, (ts, pose)) in traj.iter().enumerate() {
            assert_relative_eq!(*ts, k as f64);
            assert_relative_eq!(pose.translation.x, k as f64);
            assert_eq!(pose.translation.y, 0.0);
        }
    }

    #[test]
    fn four_quarter_turns_return_home() {
        use core::f64::consts::FRAC_PI_2;
        let vel = CameraVelocity::new(Vector3::zeros(), Vector3::new(0.0, 0.0, FRAC_PI_2));
        let input: Vec<(f64, CameraVelocity, f64)> =
            (0..4).map(|k| (k as f64, vel, 1.0)).collect();
        let traj = integrate_trajectory(&input).unwrap();
        let (_, last) = traj.iter().last().unwrap();
        let defect = (last.rotation - Matrix3::identity()).norm();
        assert!(defect < 1e-9, "defect {defect}");
    }

    #[test]
    fn integration_round_trips_twists() {
        let vels = [
            CameraVelocity::new(Vector3::new(0.1, 0.0, -0.05), Vector3::new(0.02, 0.1, 0.0)),
            CameraVelocity::new(Vector3::new(-0.02, 0.08, 0.01), Vector3::new(0.0, -0.05, 0.03)),
            CameraVelocity::new(Vector3::new(0.0, 0.0, 0.2), Vector3::new(0.1, 0.0, -0.1)),
        ];
        let input: Vec<(f64, CameraVelocity, f64)> = vels
            .iter()
            .enumerate()
            .map(|(k, v)| (k as f64, *v, 1.0))
            .collect();
        let traj = integrate_trajectory(&input).unwrap();
        for (k, vel) in vels.iter().enumerate() {
            let (_, a) = traj.get(k).unwrap();
            let (_, b) = traj.get(k + 1).unwrap();
            let rel = a.inverse().compose(b);
            assert!((rel.translation - vel.tau).norm() < 1e-9);
            let omega = rel.rotation_quaternion().scaled_axis();
            assert!((omega - vel.omega).norm() < 1e-9);
        }
    }

    #[test]
    fn non_monotonic_rejected() {
        let vel = CameraVelocity::zero();
        let input = [(1.0, vel, 1.0), (0.5, vel, 1.0)];
        let result = integrate_trajectory(&input);
        assert!(matches!(result, Err(EvalError::NonMonotonic(_))));
        // Overlapping intervals also break pose ordering.
        let overlap = [(0.0, vel, 1.0), (0.1, vel, 0.05)];
        assert!(matches!(
            integrate_trajectory(&overlap),
            Err(EvalError::NonMonotonic(_))
        ));
    }

    #[test]
    fn summarize_matches_by_hand() {
        let pairs = [
            PairError {
                timestamp: 0.0,
                trans_error: 0.0,
                rot_error: 0.0,
            },
            PairError {
                timestamp: 1.0,
                trans_error: 0.4,
                rot_error: 0.2,
            },
        ];
        let s = summarize(&pairs).unwrap();
        assert_relative_eq!(s.translation.mean, 0.2);
        assert_relative_eq!(s.translation.rmse, 0.4 / libm::sqrt(2.0), epsilon = 1e-15);
        assert_eq!(s.translation.count, 2);
        // rmse^2 == mean of squares
        assert_relative_eq!(
            s.rotation.rmse * s.rotation.rmse,
            0.5 * (0.2 * 0.2),
            epsilon = 1e-15
        );
    }

    #[test]
    fn single_pair_stats() {
        let pairs = [PairError {
            timestamp: 0.0,
            trans_error: 0.1,
            rot_error: 0.2,
        }];
        let s = summarize(&pairs).unwrap();
        assert_relative_eq!(s.translation.mean, 0.1);
        assert_relative_eq!(s.translation.rmse, 0.1);
        assert_relative_eq!(s.rotation.mean, 0.2);
        assert_relative_eq!(s.rotation.rmse, 0.2);
    }

    #[test]
    fn ate_zero_for_identical_trajectories() {
        let vel = CameraVelocity::new(Vector3::new(0.1, 0.05, 0.0), Vector3::new(0.0, 0.0, 0.1));
        let input: Vec<(f64, CameraVelocity, f64)> =
            (0..10).map(|k| (k as f64 * 0.1, vel, 0.1)).collect();
        let traj = integrate_trajectory(&input).unwrap();
        let stats = ate_snippets(&traj, &traj, 5, 0.02).unwrap();
        assert!(stats.mean < 1e-12);
        assert!(stats.std < 1e-12);
    }

    #[test]
    fn ate_invariant_to_global_rigid_transform() {
        let vel = CameraVelocity::new(Vector3::new(0.1, -0.02, 0.05), Vector3::new(0.05, 0.0, 0.02));
        let input: Vec<(f64, CameraVelocity, f64)> =
            (0..12).map(|k| (k as f64 * 0.1, vel, 0.1)).collect();
        let gt = integrate_trajectory(&input).unwrap();
        let offset = Pose::from_parts(
            rotation_exp(&Vector3::new(0.4, -0.3, 0.8)),
            Vector3::new(5.0, -2.0, 1.0),
        );
        let moved = Trajectory::from_samples(
            gt.iter().map(|(t, p)| (*t, offset.compose(p))).collect(),
        )
        .unwrap();
        let stats = ate_snippets(&moved, &gt, 5, 0.02).unwrap();
        assert!(stats.mean <= 1e-12, "mean {}", stats.mean);
        assert!(stats.rmse <= 1e-12);
    }

    #[test]
    fn ate_needs_enough_frames() {
        let vel = CameraVelocity::zero();
        let input: Vec<(f64, CameraVelocity, f64)> =
            (0..3).map(|k| (k as f64, vel, 1.0)).collect();
        let traj = integrate_trajectory(&input).unwrap();
        assert!(matches!(
            ate_snippets(&traj, &traj, 5, 0.02),
            Err(EvalError::TooFewFrames { .. })
        ));
    }

    #[test]
    fn align_rigid_recovers_transform() {
        let pts: Vec<Vector3<f64>> = (0..6)
            .map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, -(i as f64) * 0.3))
            .collect();
        let r = rotation_exp(&Vector3::new(0.2, 0.5, -0.3));
        let t = Vector3::new(1.0, -2.0, 0.5);
        let moved: Vec<Vector3<f64>> = pts.iter().map(|p| r * p + t).collect();
        let (r_est, t_est) = align_rigid(&pts, &moved);
        assert!((r_est - r).norm() < 1e-10);
        assert!((t_est - t).norm() < 1e-10);
    }

    #[test]
    fn interpolation_blends_position_and_orientation() {
        let mut gt = Trajectory::new();
        gt.push(0.0, Pose::identity()).unwrap();
        gt.push(
            1.0,
            Pose::from_parts(rotation_exp(&Vector3::new(0.0, 0.0, 0.4)), Vector3::new(2.0, 0.0, 0.0)),
        )
        .unwrap();
        let mid = gt.sample_interpolated(0.5, 0.6).unwrap();
        assert_relative_eq!(mid.translation.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(rotation_angle(&mid.rotation), 0.2, epsilon = 1e-12);
        assert!(gt.sample_interpolated(5.0, 0.02).is_none());
    }
}
