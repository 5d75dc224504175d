//! The estimation and evaluation pipelines behind the CLI commands.

use std::fs;
use std::path::{Path, PathBuf};

use egoflow_core::egomotion::{irls_fit, EgoError, EgoFit};
use egoflow_core::eval::{
    ate_snippets, relative_pose_error, EvalError, PairError, Stats, Trajectory,
};
use egoflow_core::flow::{compute_flow, loss_mf, loss_of, loss_op, FlowError, LossReport};
use egoflow_core::geometry::{
    synthesize_motion_field, twist_to_camera_pose, CameraIntrinsics, CameraVelocity, Pose,
};
use egoflow_core::grid::{FlowField, MotionField};
use egoflow_core::layers::{fit_two_layers, resolve_static_layer, LayerError};
use thiserror::Error;

use crate::config::{ConfigError, FlowSource, IntrinsicsSource, LayerMode, RunConfig};
use crate::dataset::{self, DatasetError, FramePair, LoadConfig};
use crate::flo::{self, FloError};
use crate::report::{write_report, PairRecord, ReportError};
use crate::trajfile::{self, TrajError};
use crate::viz;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Flo(#[from] FloError),
    #[error(transparent)]
    Trajectory(#[from] TrajError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("flow estimation failed: {0}")]
    Flow(#[from] FlowError),
    #[error("frame {0:?} has no flow file within the association tolerance")]
    MissingFlowFile(f64),
    #[error("image size {got_w}x{got_h} does not match intrinsics {want_w}x{want_h}")]
    SizeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("static background unestimable on pair at {0}: {1}")]
    FatalPair(f64, String),
    #[error("{failed} of {total} pairs failed with degenerate geometry")]
    MajorityDegenerate { failed: usize, total: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl PipelineError {
    /// CLI exit category: 3 for a majority of degenerate pairs, 2 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MajorityDegenerate { .. } => 3,
            _ => 2,
        }
    }
}

#[derive(Debug)]
pub struct EstimateOutcome {
    pub records: Vec<PairRecord>,
    pub pairs_failed: usize,
    pub trajectory_path: PathBuf,
    pub report_path: PathBuf,
}

/// Index of `.flo` files in a directory keyed by the timestamp encoded in
/// the file stem.
fn scan_flow_dir(dir: &Path) -> Result<Vec<(f64, PathBuf)>, PipelineError> {
    let mut files = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "flo") {
            if let Some(ts) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<f64>().ok())
            {
                files.push((ts, path));
            }
        }
    }
    files.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(files)
}

fn lookup_flow(files: &[(f64, PathBuf)], ts: f64, max_diff: f64) -> Option<&PathBuf> {
    if files.is_empty() {
        return None;
    }
    let idx = files
        .partition_point(|(t, _)| *t < ts)
        .min(files.len() - 1);
    let mut best = idx;
    if idx > 0 && (ts - files[idx - 1].0).abs() < (files[idx].0 - ts).abs() {
        best = idx - 1;
    }
    ((files[best].0 - ts).abs() <= max_diff).then(|| &files[best].1)
}

struct PairEstimate {
    fit: EgoFit,
    iterations: usize,
    converged: bool,
    losses: Option<LossReport>,
    static_support: usize,
    dynamic_support: usize,
    mask_png: Option<image::GrayImage>,
}

fn losses_for(
    pair: &FramePair,
    flow_px: &FlowField,
    field: &MotionField,
    intrinsics: &CameraIntrinsics,
    weights: &egoflow_core::flow::LossWeights,
) -> Option<LossReport> {
    let field_px = field.to_pixel_flow(intrinsics);
    let l_of = loss_of(&pair.i_t, &pair.i_next, flow_px).ok()?;
    let l_mf = loss_mf(&pair.i_t, &pair.i_next, &field_px, &pair.depth_t.valid).ok()?;
    let l_op = loss_op(flow_px, &field_px).ok()?;
    Some(LossReport::compose(l_of, l_mf, l_op, *weights))
}

fn estimate_pair(
    config: &RunConfig,
    intrinsics: &CameraIntrinsics,
    pair: &FramePair,
    flow_px: &FlowField,
) -> Result<PairEstimate, EgoError> {
    let flow_n = flow_px.to_normalized(intrinsics);
    match config.layer_mode {
        LayerMode::Single => {
            let robust = irls_fit(&pair.depth_t, &flow_n, intrinsics, &config.robust)?;
            let field = synthesize_motion_field(&pair.depth_t, &robust.fit.velocity, intrinsics)
                .expect("validated shapes");
            let losses = losses_for(pair, flow_px, &field, intrinsics, &config.loss_weights);
            let support = robust.fit.support;
            Ok(PairEstimate {
                fit: robust.fit,
                iterations: robust.iterations,
                converged: robust.converged,
                losses,
                static_support: support,
                dynamic_support: 0,
                mask_png: None,
            })
        }
        LayerMode::TwoLayer => {
            let layered = fit_two_layers(&pair.depth_t, &flow_n, intrinsics, &config.layers)
                .map_err(|e| match e {
                    LayerError::NoStaticSupport(inner) | LayerError::Ego(inner) => inner,
                })?;
            let layered = resolve_static_layer(layered, config.symmetry_policy);
            // The composite field drives the photometric losses; the static
            // fit is the ego-motion estimate.
            let losses = losses_for(
                pair,
                flow_px,
                &layered.composite_field,
                intrinsics,
                &config.loss_weights,
            );
            let mask_png = config.write_masks.then(|| viz::mask_to_gray(&layered.mask));
            Ok(PairEstimate {
                static_support: layered.mask.static_count(),
                dynamic_support: layered.mask.dynamic_count(),
                iterations: layered.iterations,
                converged: layered.converged,
                fit: layered.static_fit,
                losses,
                mask_png,
            })
        }
    }
}

/// Run the full estimation pipeline: load, per-pair fit with
/// constant-velocity fallback, trajectory integration and report output.
pub fn run_estimate(config: &RunConfig) -> Result<EstimateOutcome, PipelineError> {
    config.validate_paths()?;
    let intrinsics = config.resolve_intrinsics()?;
    let sequence = dataset::load_tum_sequence(
        &config.dataset,
        &LoadConfig {
            max_diff: config.max_diff,
            max_pairs: config.max_pairs,
        },
    )?;
    fs::create_dir_all(&config.output_dir).map_err(|e| PipelineError::Io {
        path: config.output_dir.clone(),
        source: e,
    })?;
    let mask_dir = config.output_dir.join("masks");
    if config.write_masks {
        fs::create_dir_all(&mask_dir).map_err(|e| PipelineError::Io {
            path: mask_dir.clone(),
            source: e,
        })?;
    }

    let flow_files = match &config.flow_source {
        FlowSource::Computed => None,
        FlowSource::Directory(dir) => Some(scan_flow_dir(dir)?),
    };

    let mut records: Vec<PairRecord> = Vec::new();
    let mut velocities: Vec<(f64, CameraVelocity, f64)> = Vec::new();
    let mut previous_per_second = CameraVelocity::zero();
    let mut failed = 0usize;
    let mut total = 0usize;

    for pair in sequence.pairs() {
        let pair = pair?;
        total += 1;
        let delta = pair.delta();
        let (w, h) = pair.i_t.dims();
        if (w, h) != (intrinsics.width, intrinsics.height) {
            return Err(PipelineError::SizeMismatch {
                got_w: w,
                got_h: h,
                want_w: intrinsics.width,
                want_h: intrinsics.height,
            });
        }

        let flow_px = match &flow_files {
            None => compute_flow(&pair.i_t, &pair.i_next, &config.flow)?,
            Some(files) => {
                let path = lookup_flow(files, pair.t, config.max_diff)
                    .ok_or(PipelineError::MissingFlowFile(pair.t))?;
                flo::read_flo(path)?
            }
        };

        match estimate_pair(config, &intrinsics, &pair, &flow_px) {
            Ok(estimate) => {
                let per_second = estimate.fit.velocity.scaled(1.0 / delta);
                if let Some(mask) = &estimate.mask_png {
                    let path = mask_dir.join(format!("{:.6}.png", pair.t));
                    mask.save(&path)?;
                }
                records.push(PairRecord {
                    timestamp: pair.t,
                    delta,
                    velocity: per_second,
                    residual_rms: estimate.fit.residual_rms,
                    support: estimate.fit.support,
                    condition: estimate.fit.condition_estimate,
                    iterations: estimate.iterations,
                    converged: estimate.converged,
                    interpolated: false,
                    losses: estimate.losses,
                    static_support: estimate.static_support,
                    dynamic_support: estimate.dynamic_support,
                });
                velocities.push((pair.t, per_second, delta));
                previous_per_second = per_second;
            }
            Err(_) => {
                // Odometry must emit a pose per frame: reuse the previous
                // twist and flag the record.
                failed += 1;
                records.push(PairRecord {
                    timestamp: pair.t,
                    delta,
                    velocity: previous_per_second,
                    residual_rms: f64::NAN,
                    support: 0,
                    condition: f64::NAN,
                    iterations: 0,
                    converged: false,
                    interpolated: true,
                    losses: None,
                    static_support: 0,
                    dynamic_support: 0,
                });
                velocities.push((pair.t, previous_per_second, delta));
            }
        }
    }

    // Integrate camera poses from the per-second twists.
    let mut trajectory = Trajectory::new();
    let mut pose = Pose::identity();
    if let Some(&(t0, _, _)) = velocities.first() {
        trajectory.push(t0, pose).expect("first sample");
    }
    for &(ts, vel, delta) in &velocities {
        pose = pose.compose(&twist_to_camera_pose(&vel, delta));
        trajectory
            .push(ts + delta, pose)
            .map_err(PipelineError::Eval)?;
    }

    let trajectory_path = config.output_dir.join("trajectory.txt");
    trajfile::save_trajectory(&trajectory_path, &trajectory)?;
    let report_path = config.output_dir.join("report.tsv");
    write_report(&report_path, &config.echo(), &records)?;

    if failed * 2 > total {
        return Err(PipelineError::MajorityDegenerate { failed, total });
    }

    Ok(EstimateOutcome {
        records,
        pairs_failed: failed,
        trajectory_path,
        report_path,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EvaluateOptions {
    pub max_diff: f64,
    pub snippet_len: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            max_diff: dataset::DEFAULT_MAX_DIFF,
            snippet_len: 5,
        }
    }
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    /// Per-pair errors (translation meters, rotation radians).
    pub pairs: Vec<PairError>,
    /// Per-pair errors normalized to one second.
    pub pairs_per_second: Vec<PairError>,
    pub rpe: egoflow_core::eval::ErrorSummary,
    pub rpe_per_second: egoflow_core::eval::ErrorSummary,
    pub ate: Stats,
    pub snippet_len: usize,
}

impl EvaluateOutcome {
    /// Human-readable summary table.
    pub fn table(&self) -> String {
        fn block(name: &str, s: &Stats, unit: &str, scale: f64) -> String {
            format!(
                "{name:<24} rmse {rmse:.6} {unit}  mean {mean:.6}  median {median:.6}  std {std:.6}\n",
                rmse = s.rmse * scale,
                mean = s.mean * scale,
                median = s.median * scale,
                std = s.std * scale,
            )
        }
        let deg = 180.0 / std::f64::consts::PI;
        let mut out = String::new();
        out.push_str(&format!("pairs evaluated          {}\n", self.rpe.translation.count));
        out.push_str(&block("RPE translation/pair", &self.rpe.translation, "m", 1.0));
        out.push_str(&block("RPE rotation/pair", &self.rpe.rotation, "deg", deg));
        out.push_str(&block(
            "RPE translation/second",
            &self.rpe_per_second.translation,
            "m/s",
            1.0,
        ));
        out.push_str(&block(
            "RPE rotation/second",
            &self.rpe_per_second.rotation,
            "deg/s",
            deg,
        ));
        out.push_str(&format!(
            "ATE {}-frame snippets     {:.6} +/- {:.6} m over {} windows\n",
            self.snippet_len, self.ate.mean, self.ate.std, self.ate.count
        ));
        out
    }

    /// Structured per-pair report: one record per line.
    pub fn structured_report(&self) -> String {
        let mut out = String::from(
            "timestamp\ttrans_error_m\trot_error_rad\ttrans_error_m_per_s\trot_error_rad_per_s\n",
        );
        for (pair, per_sec) in self.pairs.iter().zip(self.pairs_per_second.iter()) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                pair.timestamp, pair.trans_error, pair.rot_error, per_sec.trans_error, per_sec.rot_error
            ));
        }
        out
    }
}

/// Relative pose error of consecutive predicted poses against interpolated
/// ground truth, plus snippet ATE.
pub fn run_evaluate(
    pred_path: &Path,
    gt_path: &Path,
    options: &EvaluateOptions,
) -> Result<EvaluateOutcome, PipelineError> {
    let pred = trajfile::load_trajectory(pred_path)?;
    let gt = trajfile::load_trajectory(gt_path)?;

    let mut pairs = Vec::new();
    let mut pairs_per_second = Vec::new();
    let samples: Vec<&(f64, Pose)> = pred.iter().collect();
    for window in samples.windows(2) {
        let (t0, p0) = *window[0];
        let (t1, p1) = *window[1];
        let (Some(g0), Some(g1)) = (
            gt.sample_interpolated(t0, options.max_diff),
            gt.sample_interpolated(t1, options.max_diff),
        ) else {
            continue;
        };
        let pred_rel = p0.inverse().compose(&p1);
        let gt_rel = g0.inverse().compose(&g1);
        let mut err = relative_pose_error(&pred_rel, &gt_rel);
        err.timestamp = t0;
        let delta = t1 - t0;
        pairs.push(err);
        pairs_per_second.push(PairError {
            timestamp: t0,
            trans_error: err.trans_error / delta,
            rot_error: err.rot_error / delta,
        });
    }
    if pairs.is_empty() {
        return Err(PipelineError::Eval(EvalError::NoAssociation));
    }
    let rpe = egoflow_core::eval::summarize(&pairs)?;
    let rpe_per_second = egoflow_core::eval::summarize(&pairs_per_second)?;
    let ate = ate_snippets(&pred, &gt, options.snippet_len, options.max_diff)?;

    Ok(EvaluateOutcome {
        pairs,
        pairs_per_second,
        rpe,
        rpe_per_second,
        ate,
        snippet_len: options.snippet_len,
    })
}

/// Single-pair inspection: fit, losses and optional image dumps.
pub struct ProjectInputs {
    pub image_t: PathBuf,
    pub image_next: PathBuf,
    pub depth: PathBuf,
    pub flow_file: Option<PathBuf>,
    pub intrinsics: IntrinsicsSource,
    pub dump_dir: Option<PathBuf>,
    pub config: RunConfig,
}

pub struct ProjectOutcome {
    pub fit: EgoFit,
    pub iterations: usize,
    pub converged: bool,
    pub losses: Option<LossReport>,
    pub dumped: Vec<PathBuf>,
}

pub fn run_project(inputs: &ProjectInputs) -> Result<ProjectOutcome, PipelineError> {
    let i_t = dataset::load_intensity_image(&inputs.image_t)?;
    let i_next = dataset::load_intensity_image(&inputs.image_next)?;
    let depth = dataset::load_depth_image(&inputs.depth)?;
    let (w, h) = i_t.dims();
    let intrinsics = match &inputs.intrinsics {
        IntrinsicsSource::Preset(name) => {
            let base = CameraIntrinsics::preset(name)
                .ok_or_else(|| ConfigError::UnknownPreset(name.clone()))?;
            // Presets are 640x480; follow the actual image size.
            if (base.width, base.height) != (w, h) {
                base.scaled_to(w, h)
            } else {
                base
            }
        }
        IntrinsicsSource::File(path) => crate::config::read_intrinsics_file(path)?,
    };
    if (intrinsics.width, intrinsics.height) != (w, h) {
        return Err(PipelineError::SizeMismatch {
            got_w: w,
            got_h: h,
            want_w: intrinsics.width,
            want_h: intrinsics.height,
        });
    }

    let flow_px = match &inputs.flow_file {
        Some(path) => flo::read_flo(path)?,
        None => compute_flow(&i_t, &i_next, &inputs.config.flow)?,
    };
    let flow_n = flow_px.to_normalized(&intrinsics);
    let robust = irls_fit(&depth, &flow_n, &intrinsics, &inputs.config.robust)
        .map_err(|e| PipelineError::FatalPair(0.0, e.to_string()))?;
    let field = synthesize_motion_field(&depth, &robust.fit.velocity, &intrinsics)
        .expect("validated shapes");
    let field_px = field.to_pixel_flow(&intrinsics);

    let pair = FramePair {
        i_t: i_t.clone(),
        i_next: i_next.clone(),
        depth_t: depth,
        t: 0.0,
        t_next: 1.0,
    };
    let losses = losses_for(&pair, &flow_px, &field, &intrinsics, &inputs.config.loss_weights);

    let mut dumped = Vec::new();
    if let Some(dir) = &inputs.dump_dir {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
            path: dir.clone(),
            source: e,
        })?;
        let flow_file = dir.join("flow.flo");
        flo::write_flo(&flow_file, &flow_px)?;
        dumped.push(flow_file);
        let flow_viz = dir.join("flow.png");
        viz::flow_to_color(&flow_px, None).save(&flow_viz)?;
        dumped.push(flow_viz);
        let field_viz = dir.join("motion_field.png");
        viz::flow_to_color(&field_px, None).save(&field_viz)?;
        dumped.push(field_viz);
        let before = dir.join("diff_before.png");
        viz::save_png(&before, &viz::difference_to_gray(&pair.i_t, &pair.i_next))?;
        dumped.push(before);
        let (warped, _valid) = egoflow_core::flow::warp_image(&pair.i_next, &field_px);
        let after = dir.join("diff_after.png");
        viz::save_png(&after, &viz::difference_to_gray(&pair.i_t, &warped))?;
        dumped.push(after);
    }

    Ok(ProjectOutcome {
        fit: robust.fit,
        iterations: robust.iterations,
        converged: robust.converged,
        losses,
        dumped,
    })
}
