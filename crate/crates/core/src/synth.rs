//! Synthetic scene oracle: procedural depth, band-limited texture, known
//! twists and exact ground-truth motion fields.
//!
//! The texture is an analytic sum of sinusoids, so the second frame can be
//! evaluated exactly at warped positions instead of being resampled from a
//! discrete image. Rendering therefore agrees with the linearized motion
//! model up to bilinear interpolation error only, which keeps oracle
//! tolerances tight.

use alloc::vec::Vec;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    synthesize_motion_field, CameraIntrinsics, CameraVelocity, GeometryError,
};
use crate::grid::{FlowField, Grid, Image, InverseDepthMap, MotionField, VectorField};

/// Per-pixel displacement cap as a fraction of image width; beyond this the
/// first-order motion model stops being a faithful description of the pair.
pub const CONTINUOUS_REGIME_FRAC: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("scene resolution {w}x{h} below the 32x32 minimum")]
    ResolutionTooSmall { w: usize, h: usize },
    #[error("invalid scene configuration: {0}")]
    BadConfig(&'static str),
    #[error(
        "twist displaces pixels by {max_px:.2} px, beyond {limit:.2} px \
         (5% of width): outside the continuous-motion regime"
    )]
    TwistTooLarge { max_px: f64, limit: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Two-body extension: a compact dynamic region with its own rigid twist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBodyConfig {
    /// Fraction of the image area covered by the dynamic disk.
    pub area_fraction: f64,
    /// Fixed dynamic twist; drawn from the seed when absent.
    pub twist: Option<CameraVelocity>,
}

impl Default for TwoBodyConfig {
    fn default() -> Self {
        Self {
            area_fraction: 0.3,
            twist: None,
        }
    }
}

/// Configuration for [`make_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Depth values are mapped into this range (scene units).
    pub depth_range: (f64, f64),
    /// Fixed camera twist; drawn from the seed when absent.
    pub camera_twist: Option<CameraVelocity>,
    /// Target peak displacement for seed-drawn twists, as a fraction of
    /// width. Must stay at or below [`CONTINUOUS_REGIME_FRAC`].
    pub max_displacement_frac: f64,
    pub two_body: Option<TwoBodyConfig>,
    /// Number of texture sinusoids.
    pub texture_waves: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            depth_range: (0.5, 5.0),
            camera_twist: None,
            max_displacement_frac: 0.02,
            two_body: None,
            texture_waves: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amplitude: f64,
}

/// A generated scene: analytic texture and depth, per-layer twists, and the
/// planted mask for two-body scenes. Regenerating from the same seed is
/// bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub intrinsics: CameraIntrinsics,
    pub depth: InverseDepthMap,
    pub camera_twist: CameraVelocity,
    pub dynamic_twist: Option<CameraVelocity>,
    /// `true` = background pixel; present only for two-body scenes.
    pub planted_static: Option<Grid<bool>>,
    /// The second frame of the pair, sampled from the analytic texture.
    pub texture: Image,
    pub seed: u64,
    waves: Vec<Wave>,
}

impl SyntheticScene {
    /// Evaluate the analytic texture at a continuous position.
    pub fn texture_at(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for w in &self.waves {
            v += w.amplitude * libm::sin(w.fx * x + w.fy * y + w.phase);
        }
        v.clamp(0.0, 1.0)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.intrinsics.width, self.intrinsics.height)
    }

    /// Exact composite motion field of the planted twists (normalized
    /// units).
    pub fn ground_truth_field(&self) -> Result<MotionField, SynthError> {
        let background = synthesize_motion_field(&self.depth, &self.camera_twist, &self.intrinsics)?;
        let Some(dynamic_twist) = self.dynamic_twist else {
            return Ok(background);
        };
        let dynamic = synthesize_motion_field(&self.depth, &dynamic_twist, &self.intrinsics)?;
        let is_static = self
            .planted_static
            .as_ref()
            .expect("two-body scenes carry a planted mask");
        let (w, h) = self.dims();
        Ok(MotionField(VectorField::from_fn(w, h, |x, y| {
            if !self.depth.valid[(x, y)] {
                return None;
            }
            Some(if is_static[(x, y)] {
                background.0.vectors[(x, y)]
            } else {
                dynamic.0.vectors[(x, y)]
            })
        })))
    }
}

fn draw_twist(rng: &mut ChaCha8Rng) -> CameraVelocity {
    let mut c = [0.0f64; 6];
    for v in c.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    CameraVelocity::new(Vector3::new(c[0], c[1], c[2]), Vector3::new(c[3], c[4], c[5]))
}

fn max_pixel_displacement(
    depth: &InverseDepthMap,
    twist: &CameraVelocity,
    intrinsics: &CameraIntrinsics,
) -> Result<f64, GeometryError> {
    let field = synthesize_motion_field(depth, twist, intrinsics)?;
    let flow = field.to_pixel_flow(intrinsics);
    Ok(flow
        .0
        .vectors
        .iter()
        .fold(0.0f64, |m, v| m.max(v.norm())))
}

/// Rescale a raw twist so its peak displacement hits the target exactly;
/// the motion field is linear in the twist, so one synthesis suffices.
fn scale_twist_to(
    raw: CameraVelocity,
    target_px: f64,
    depth: &InverseDepthMap,
    intrinsics: &CameraIntrinsics,
) -> Result<CameraVelocity, GeometryError> {
    let max_px = max_pixel_displacement(depth, &raw, intrinsics)?;
    if max_px == 0.0 {
        return Ok(raw);
    }
    Ok(raw.scaled(target_px / max_px))
}

/// Generate a scene from a config and seed: smooth low-frequency depth,
/// band-limited texture, and twists bounded to the continuous regime.
pub fn make_scene(config: &SceneConfig, seed: u64) -> Result<SyntheticScene, SynthError> {
    let (w, h) = (config.width, config.height);
    if w < 32 || h < 32 {
        return Err(SynthError::ResolutionTooSmall { w, h });
    }
    let (dmin, dmax) = config.depth_range;
    if !(dmin > 0.0 && dmax > dmin) {
        return Err(SynthError::BadConfig("depth range must satisfy 0 < min < max"));
    }
    if config.max_displacement_frac > CONTINUOUS_REGIME_FRAC {
        return Err(SynthError::BadConfig(
            "max_displacement_frac exceeds the continuous-motion guard",
        ));
    }
    if config.texture_waves == 0 {
        return Err(SynthError::BadConfig("texture_waves must be positive"));
    }

    // A wide field of view keeps the translation/rotation ambiguity well
    // conditioned, which is what oracle scenes are for.
    let intrinsics = CameraIntrinsics::new(
        0.6 * w as f64,
        0.6 * w as f64,
        w as f64 / 2.0,
        h as f64 / 2.0,
        w,
        h,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Low-frequency depth: a few long waves mapped exactly into the range.
    let depth_waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            fx: rng.random_range(-1.5..1.5) * core::f64::consts::TAU / w as f64,
            fy: rng.random_range(-1.5..1.5) * core::f64::consts::TAU / h as f64,
            phase: rng.random_range(0.0..core::f64::consts::TAU),
            amplitude: rng.random_range(0.5..1.0),
        })
        .collect();
    // Min-max normalize the wave sum so every scene spans the full
    // configured depth range.
    let wave_sum = Grid::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        for wave in &depth_waves {
            s += wave.amplitude * libm::sin(wave.fx * x as f64 + wave.fy * y as f64 + wave.phase);
        }
        s
    });
    let s_min = wave_sum.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let s_max = wave_sum.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let span = (s_max - s_min).max(1e-12);
    let depth_grid = wave_sum.map(|&s| dmin + (dmax - dmin) * (s - s_min) / span);
    let depth = InverseDepthMap::from_depth(&depth_grid);

    // Band-limited texture: wavenumbers below ~0.5 rad/px keep bilinear
    // interpolation error under the rendering floor.
    let per_wave = 0.42 / config.texture_waves as f64;
    let waves: Vec<Wave> = (0..config.texture_waves)
        .map(|_| {
            let k = rng.random_range(0.06..0.5);
            let theta = rng.random_range(0.0..core::f64::consts::TAU);
            Wave {
                fx: k * libm::cos(theta),
                fy: k * libm::sin(theta),
                phase: rng.random_range(0.0..core::f64::consts::TAU),
                amplitude: per_wave * rng.random_range(0.6..1.4),
            }
        })
        .collect();

    let target_px = config.max_displacement_frac * w as f64;
    let camera_twist = match config.camera_twist {
        Some(t) => t,
        None => scale_twist_to(draw_twist(&mut rng), target_px, &depth, &intrinsics)?,
    };

    let (dynamic_twist, planted_static) = match &config.two_body {
        None => (None, None),
        Some(tb) => {
            if !(tb.area_fraction > 0.0 && tb.area_fraction < 0.5) {
                return Err(SynthError::BadConfig("dynamic area fraction must be in (0, 0.5)"));
            }
            let twist = match tb.twist {
                Some(t) => t,
                None => scale_twist_to(draw_twist(&mut rng), target_px, &depth, &intrinsics)?,
            };
            // Compact dynamic region: a disk of exactly the requested area,
            // placed fully inside the image.
            let radius = libm::sqrt(tb.area_fraction * (w * h) as f64 / core::f64::consts::PI);
            if 2.0 * radius + 2.0 >= w.min(h) as f64 {
                return Err(SynthError::BadConfig("dynamic disk does not fit in the image"));
            }
            let cx = rng.random_range(radius + 1.0..w as f64 - radius - 1.0);
            let cy = rng.random_range(radius + 1.0..h as f64 - radius - 1.0);
            let r2 = radius * radius;
            let mask = Grid::from_fn(w, h, |x, y| {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                dx * dx + dy * dy > r2
            });
            (Some(twist), Some(mask))
        }
    };

    let texture_wave_params = waves.clone();
    let mut scene = SyntheticScene {
        intrinsics,
        depth,
        camera_twist,
        dynamic_twist,
        planted_static,
        texture: Grid::new(w, h, 0.0),
        seed,
        waves: texture_wave_params,
    };
    scene.texture = Grid::from_fn(w, h, |x, y| scene.texture_at(x as f64, y as f64));
    Ok(scene)
}

/// A rendered frame pair with exact ground truth.
#[derive(Debug, Clone)]
pub struct RenderedPair {
    pub i_t: Image,
    pub i_next: Image,
    /// Exact per-pixel flow in pixel units.
    pub gt_flow: FlowField,
    /// The same field in normalized units (composite for two-body scenes).
    pub gt_field: MotionField,
}

/// Render the frame pair: the second frame is the texture itself, the first
/// samples the analytic texture at `x + flow(x)`, so the returned flow maps
/// the pair exactly.
pub fn render_pair(scene: &SyntheticScene) -> Result<RenderedPair, SynthError> {
    let (w, h) = scene.dims();
    let gt_field = scene.ground_truth_field()?;
    let gt_flow = gt_field.to_pixel_flow(&scene.intrinsics);

    let limit = CONTINUOUS_REGIME_FRAC * w as f64;
    let max_px = gt_flow
        .0
        .vectors
        .iter()
        .fold(0.0f64, |m, v| m.max(v.norm()));
    if max_px > limit {
        return Err(SynthError::TwistTooLarge { max_px, limit });
    }

    let i_next = scene.texture.clone();
    let i_t = Grid::from_fn(w, h, |x, y| {
        let f = gt_flow.0.vectors[(x, y)];
        scene.texture_at(x as f64 + f.x, y as f64 + f.y)
    });

    Ok(RenderedPair {
        i_t,
        i_next,
        gt_flow,
        gt_field,
    })
}
