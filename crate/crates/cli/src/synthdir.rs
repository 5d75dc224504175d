//! Write a synthetic scene as a TUM-format sequence directory so the full
//! pipeline can be exercised through the real ingestion path.
//!
//! Layout: `rgb.txt` / `depth.txt` / `groundtruth.txt` index files, 8-bit
//! grayscale frames under `rgb/`, 16-bit depth under `depth/`, exact
//! ground-truth flow as `flow/<timestamp>.flo`, and `intrinsics.txt`.
//!
//! Frames chain through the accumulated inverse displacement of the
//! per-pair field, so every consecutive pair is photometrically consistent
//! with the planted flow to first order; the flow files themselves are the
//! exact per-pair fields, and `groundtruth.txt` holds the background
//! camera trajectory only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use egoflow_core::eval::Trajectory;
use egoflow_core::geometry::{twist_to_camera_pose, Pose};
use egoflow_core::grid::{Grid, Image};
use egoflow_core::synth::{make_scene, SceneConfig, SynthError, SyntheticScene};
use image::{ImageBuffer, Luma};
use thiserror::Error;

use crate::config::write_intrinsics_file;
use crate::dataset::DEPTH_SCALE;
use crate::flo;
use crate::trajfile;

#[derive(Debug, Error)]
pub enum SynthDirError {
    #[error(transparent)]
    Scene(#[from] SynthError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image encode error: {0}")]
    Encode(#[from] image::ImageError),
    #[error(transparent)]
    Flow(#[from] flo::FloError),
    #[error(transparent)]
    Trajectory(#[from] trajfile::TrajError),
    #[error("sequence needs at least 2 frames, requested {0}")]
    TooFewFrames(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthDirError + '_ {
    move |source| SynthDirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct SynthSequenceConfig {
    pub scene: SceneConfig,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    /// Write exact per-pair flow files under `flow/`.
    pub write_flow: bool,
}

impl Default for SynthSequenceConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            frames: 30,
            fps: 30.0,
            seed: 0,
            write_flow: true,
        }
    }
}

#[derive(Debug)]
pub struct SynthSummary {
    pub frames: usize,
    pub pairs: usize,
    pub dir: PathBuf,
    pub scene: SyntheticScene,
}

fn timestamp(k: usize, fps: f64) -> f64 {
    k as f64 / fps
}

/// Bilinear lookup with border clamping.
fn sample_clamped(grid: &Grid<f64>, x: f64, y: f64) -> f64 {
    let (w, h) = grid.dims();
    let fx = x.clamp(0.0, (w - 1) as f64);
    let fy = y.clamp(0.0, (h - 1) as f64);
    let x0 = (fx.floor() as usize).min(w.saturating_sub(2));
    let y0 = (fy.floor() as usize).min(h.saturating_sub(2));
    let a = fx - x0 as f64;
    let b = fy - y0 as f64;
    (1.0 - b) * ((1.0 - a) * grid[(x0, y0)] + a * grid[(x0 + 1, y0)])
        + b * ((1.0 - a) * grid[(x0, y0 + 1)] + a * grid[(x0 + 1, y0 + 1)])
}

pub fn write_synth_sequence(
    dir: &Path,
    config: &SynthSequenceConfig,
) -> Result<SynthSummary, SynthDirError> {
    if config.frames < 2 {
        return Err(SynthDirError::TooFewFrames(config.frames));
    }
    let scene = make_scene(&config.scene, config.seed)?;
    let (w, h) = scene.dims();
    let gt_field = scene.ground_truth_field()?;
    let gt_flow = gt_field.to_pixel_flow(&scene.intrinsics);
    // Reuse render_pair's displacement guard.
    egoflow_core::synth::render_pair(&scene)?;

    for sub in ["rgb", "depth", "flow"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }

    // Accumulated displacement into the texture for each frame: frame k is
    // texture(x + e_k(x)) and e advances by the inverse per-pair flow.
    let mut ex = Grid::new(w, h, 0.0);
    let mut ey = Grid::new(w, h, 0.0);

    let depth_png: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(
        w as u32,
        h as u32,
        |x, y| {
            let rho = scene.depth.rho[(x as usize, y as usize)];
            let z = if rho > 0.0 { 1.0 / rho } else { 0.0 };
            Luma([(z * DEPTH_SCALE).round().clamp(0.0, 65535.0) as u16])
        },
    );

    let mut rgb_index = String::new();
    let mut depth_index = String::new();
    let mut gt = Trajectory::new();
    let mut pose = Pose::identity();

    for k in 0..config.frames {
        let ts = timestamp(k, config.fps);
        let name = format!("{ts:.6}.png");

        let frame: Image = Grid::from_fn(w, h, |x, y| {
            scene.texture_at(x as f64 + ex[(x, y)], y as f64 + ey[(x, y)])
        });
        let rgb_png: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(
            w as u32,
            h as u32,
            |x, y| Luma([(frame[(x as usize, y as usize)] * 255.0).round().clamp(0.0, 255.0) as u8]),
        );
        let rgb_path = dir.join("rgb").join(&name);
        rgb_png.save(&rgb_path)?;
        let depth_path = dir.join("depth").join(&name);
        depth_png.save(&depth_path)?;
        writeln!(rgb_index, "{ts:.6} rgb/{name}").unwrap();
        writeln!(depth_index, "{ts:.6} depth/{name}").unwrap();

        gt.push(ts, pose).expect("timestamps increase");

        if k + 1 < config.frames {
            if config.write_flow {
                let flow_path = dir.join("flow").join(format!("{ts:.6}.flo"));
                flo::write_flo(&flow_path, &gt_flow)?;
            }
            // Advance the accumulated displacement by the inverse flow.
            let mut nex = Grid::new(w, h, 0.0);
            let mut ney = Grid::new(w, h, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let f = gt_flow.0.vectors[(x, y)];
                    let gx = -f.x;
                    let gy = -f.y;
                    nex[(x, y)] = gx + sample_clamped(&ex, x as f64 + gx, y as f64 + gy);
                    ney[(x, y)] = gy + sample_clamped(&ey, x as f64 + gx, y as f64 + gy);
                }
            }
            ex = nex;
            ey = ney;
            // Per-interval twist; the camera pose advances by its inverse
            // image effect.
            pose = pose.compose(&twist_to_camera_pose(&scene.camera_twist, 1.0));
        }
    }

    let rgb_txt = dir.join("rgb.txt");
    fs::write(&rgb_txt, &rgb_index).map_err(io_err(&rgb_txt))?;
    let depth_txt = dir.join("depth.txt");
    fs::write(&depth_txt, &depth_index).map_err(io_err(&depth_txt))?;
    trajfile::save_trajectory(&dir.join("groundtruth.txt"), &gt)?;
    write_intrinsics_file(&dir.join("intrinsics.txt"), &scene.intrinsics)
        .map_err(io_err(&dir.join("intrinsics.txt")))?;

    Ok(SynthSummary {
        frames: config.frames,
        pairs: config.frames - 1,
        dir: dir.to_path_buf(),
        scene,
    })
}

/// Per-pair ground-truth flow lookup for estimate runs on synthetic data.
pub fn flow_file_for(dir: &Path, ts: f64) -> PathBuf {
    dir.join("flow").join(format!("{ts:.6}.flo"))
}
