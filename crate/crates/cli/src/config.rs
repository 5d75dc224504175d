//! Run configuration: defaults, key=value config files, intrinsics files
//! and the resolved-config echo embedded in every report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use egoflow_core::egomotion::{RobustConfig, RobustKernel};
use egoflow_core::flow::{FlowConfig, LossWeights};
use egoflow_core::geometry::CameraIntrinsics;
use egoflow_core::layers::{LayerConfig, SymmetryPolicy};
use thiserror::Error;

use crate::dataset::DEFAULT_MAX_DIFF;

/// Environment variable naming the default dataset root; relative dataset
/// paths are resolved against it.
pub const DATASET_ROOT_ENV: &str = "EGOFLOW_DATASET_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected key=value")]
    BadLine { path: String, line: usize },
    #[error("{path}:{line}: unknown key {key:?}")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}:{line}: bad value for {key}: {reason}")]
    BadValue {
        path: String,
        line: usize,
        key: String,
        reason: String,
    },
    #[error("unknown intrinsics preset {0:?} (expected fr1, fr2, fr3 or default)")]
    UnknownPreset(String),
    #[error("intrinsics file {path} missing key {key}")]
    MissingIntrinsicsKey { path: String, key: String },
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(#[from] egoflow_core::geometry::GeometryError),
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntrinsicsSource {
    Preset(String),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowSource {
    /// Classical variational flow computed from the frames.
    Computed,
    /// Directory of `.flo` files named by frame timestamp.
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerMode {
    Single,
    TwoLayer,
}

/// Fully resolved run configuration for `estimate` (and, partially,
/// `project`).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub intrinsics: IntrinsicsSource,
    pub flow_source: FlowSource,
    pub flow: FlowConfig,
    pub robust: RobustConfig,
    pub layer_mode: LayerMode,
    pub layers: LayerConfig,
    pub symmetry_policy: SymmetryPolicy,
    pub output_dir: PathBuf,
    pub loss_weights: LossWeights,
    pub max_pairs: Option<usize>,
    pub max_diff: f64,
    pub write_masks: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            intrinsics: IntrinsicsSource::Preset("default".to_string()),
            flow_source: FlowSource::Computed,
            flow: FlowConfig::default(),
            robust: RobustConfig::default(),
            layer_mode: LayerMode::Single,
            layers: LayerConfig::default(),
            symmetry_policy: SymmetryPolicy::LargerSupport,
            output_dir: PathBuf::from("egoflow-out"),
            loss_weights: LossWeights::default(),
            max_pairs: None,
            max_diff: DEFAULT_MAX_DIFF,
            write_masks: false,
        }
    }
}

impl RunConfig {
    /// Resolve the dataset path against [`DATASET_ROOT_ENV`] when relative.
    pub fn resolve_dataset_root(&mut self) {
        if self.dataset.is_relative() {
            if let Ok(root) = std::env::var(DATASET_ROOT_ENV) {
                if !root.is_empty() {
                    self.dataset = Path::new(&root).join(&self.dataset);
                }
            }
        }
    }

    pub fn resolve_intrinsics(&self) -> Result<CameraIntrinsics, ConfigError> {
        match &self.intrinsics {
            IntrinsicsSource::Preset(name) => CameraIntrinsics::preset(name)
                .ok_or_else(|| ConfigError::UnknownPreset(name.clone())),
            IntrinsicsSource::File(path) => read_intrinsics_file(path),
        }
    }

    /// Validate that every referenced path exists.
    pub fn validate_paths(&self) -> Result<(), ConfigError> {
        if !self.dataset.is_dir() {
            return Err(ConfigError::MissingPath(self.dataset.clone()));
        }
        if let FlowSource::Directory(dir) = &self.flow_source {
            if !dir.is_dir() {
                return Err(ConfigError::MissingPath(dir.clone()));
            }
        }
        if let IntrinsicsSource::File(path) = &self.intrinsics {
            if !path.is_file() {
                return Err(ConfigError::MissingPath(path.clone()));
            }
        }
        Ok(())
    }

    /// Apply `key=value` overrides from a config file on top of this
    /// configuration (the file wins over flags).
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let content = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let pathname = path.display().to_string();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    path: pathname.clone(),
                    line: i + 1,
                });
            };
            self.apply_key(key.trim(), value.trim())
                .map_err(|reason| match reason {
                    KeyError::Unknown => ConfigError::UnknownKey {
                        path: pathname.clone(),
                        line: i + 1,
                        key: key.trim().to_string(),
                    },
                    KeyError::Bad(reason) => ConfigError::BadValue {
                        path: pathname.clone(),
                        line: i + 1,
                        key: key.trim().to_string(),
                        reason,
                    },
                })?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<(), KeyError> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T, KeyError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| KeyError::Bad(e.to_string()))
        }
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "intrinsics" => {
                self.intrinsics = if value.contains('/') || value.ends_with(".txt") {
                    IntrinsicsSource::File(PathBuf::from(value))
                } else {
                    IntrinsicsSource::Preset(value.to_string())
                }
            }
            "flow_source" => {
                self.flow_source = if value == "computed" {
                    FlowSource::Computed
                } else {
                    FlowSource::Directory(PathBuf::from(value))
                }
            }
            "flow.pyramid_levels" => self.flow.pyramid_levels = num(value)?,
            "flow.level_scale" => self.flow.level_scale = num(value)?,
            "flow.iterations" => self.flow.iterations = num(value)?,
            "flow.alpha" => self.flow.alpha = num(value)?,
            "flow.warps" => self.flow.warps = num(value)?,
            "robust.kernel" => {
                self.robust.kernel = match value {
                    "huber" => RobustKernel::huber(),
                    "tukey" => RobustKernel::tukey(),
                    _ => return Err(KeyError::Bad("expected huber or tukey".to_string())),
                }
            }
            "robust.max_iterations" => self.robust.max_iterations = num(value)?,
            "robust.tolerance" => self.robust.tolerance = num(value)?,
            "stride" => {
                let stride: usize = num(value)?;
                self.robust.fit.stride = stride;
                self.layers.robust.fit.stride = stride;
            }
            "condition_threshold" => {
                let threshold: f64 = num(value)?;
                self.robust.fit.condition_threshold = threshold;
                self.layers.robust.fit.condition_threshold = threshold;
            }
            "layer_mode" => {
                self.layer_mode = match value {
                    "single" => LayerMode::Single,
                    "two-layer" => LayerMode::TwoLayer,
                    _ => return Err(KeyError::Bad("expected single or two-layer".to_string())),
                }
            }
            "layers.max_outer_iterations" => self.layers.max_outer_iterations = num(value)?,
            "layers.assignment_margin" => self.layers.assignment_margin = num(value)?,
            "layers.min_dynamic_support" => self.layers.min_dynamic_support = num(value)?,
            "symmetry_policy" => {
                self.symmetry_policy = match value {
                    "larger-support" => SymmetryPolicy::LargerSupport,
                    "smaller-motion" => SymmetryPolicy::SmallerMotion { rotation_scale: 1.0 },
                    _ => {
                        return Err(KeyError::Bad(
                            "expected larger-support or smaller-motion".to_string(),
                        ))
                    }
                }
            }
            "lambda_of" => self.loss_weights.of = num(value)?,
            "lambda_mf" => self.loss_weights.mf = num(value)?,
            "lambda_op" => self.loss_weights.op = num(value)?,
            "max_pairs" => self.max_pairs = Some(num(value)?),
            "max_diff" => self.max_diff = num(value)?,
            "write_masks" => self.write_masks = num::<bool>(value)?,
            _ => return Err(KeyError::Unknown),
        }
        Ok(())
    }

    /// Every resolved value, one `key=value` per line in fixed order, so a
    /// run is reproducible from its report alone.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let kernel = match self.robust.kernel {
            RobustKernel::Huber { k } => format!("huber(k={k})"),
            RobustKernel::Tukey { c } => format!("tukey(c={c})"),
        };
        let intrinsics = match &self.intrinsics {
            IntrinsicsSource::Preset(p) => p.clone(),
            IntrinsicsSource::File(f) => f.display().to_string(),
        };
        let flow_source = match &self.flow_source {
            FlowSource::Computed => "computed".to_string(),
            FlowSource::Directory(d) => d.display().to_string(),
        };
        let policy = match self.symmetry_policy {
            SymmetryPolicy::LargerSupport => "larger-support".to_string(),
            SymmetryPolicy::SmallerMotion { rotation_scale } => {
                format!("smaller-motion(rotation_scale={rotation_scale})")
            }
        };
        let mode = match self.layer_mode {
            LayerMode::Single => "single",
            LayerMode::TwoLayer => "two-layer",
        };
        writeln!(s, "dataset={}", self.dataset.display()).unwrap();
        writeln!(s, "output_dir={}", self.output_dir.display()).unwrap();
        writeln!(s, "intrinsics={intrinsics}").unwrap();
        writeln!(s, "flow_source={flow_source}").unwrap();
        writeln!(s, "flow.pyramid_levels={}", self.flow.pyramid_levels).unwrap();
        writeln!(s, "flow.level_scale={}", self.flow.level_scale).unwrap();
        writeln!(s, "flow.iterations={}", self.flow.iterations).unwrap();
        writeln!(s, "flow.alpha={}", self.flow.alpha).unwrap();
        writeln!(s, "flow.warps={}", self.flow.warps).unwrap();
        writeln!(s, "robust.kernel={kernel}").unwrap();
        writeln!(s, "robust.max_iterations={}", self.robust.max_iterations).unwrap();
        writeln!(s, "robust.tolerance={}", self.robust.tolerance).unwrap();
        writeln!(s, "stride={}", self.robust.fit.stride).unwrap();
        writeln!(s, "condition_threshold={}", self.robust.fit.condition_threshold).unwrap();
        writeln!(s, "layer_mode={mode}").unwrap();
        writeln!(s, "layers.max_outer_iterations={}", self.layers.max_outer_iterations).unwrap();
        writeln!(s, "layers.assignment_margin={}", self.layers.assignment_margin).unwrap();
        writeln!(s, "layers.min_dynamic_support={}", self.layers.min_dynamic_support).unwrap();
        writeln!(s, "symmetry_policy={policy}").unwrap();
        writeln!(s, "lambda_of={}", self.loss_weights.of).unwrap();
        writeln!(s, "lambda_mf={}", self.loss_weights.mf).unwrap();
        writeln!(s, "lambda_op={}", self.loss_weights.op).unwrap();
        match self.max_pairs {
            Some(n) => writeln!(s, "max_pairs={n}").unwrap(),
            None => writeln!(s, "max_pairs=all").unwrap(),
        }
        writeln!(s, "max_diff={}", self.max_diff).unwrap();
        writeln!(s, "write_masks={}", self.write_masks).unwrap();
        s
    }
}

enum KeyError {
    Unknown,
    Bad(String),
}

/// Plain-text intrinsics file: `fx`, `fy`, `cx`, `cy`, `width`, `height`
/// as key=value lines.
pub fn read_intrinsics_file(path: &Path) -> Result<CameraIntrinsics, ConfigError> {
    let content = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let pathname = path.display().to_string();
    let mut fx = None;
    let mut fy = None;
    let mut cx = None;
    let mut cy = None;
    let mut width = None;
    let mut height = None;
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                path: pathname.clone(),
                line: i + 1,
            });
        };
        let value = value.trim();
        let parse = |key: &str| -> Result<f64, ConfigError> {
            value.parse().map_err(|e: std::num::ParseFloatError| ConfigError::BadValue {
                path: pathname.clone(),
                line: i + 1,
                key: key.to_string(),
                reason: e.to_string(),
            })
        };
        match key.trim() {
            "fx" => fx = Some(parse("fx")?),
            "fy" => fy = Some(parse("fy")?),
            "cx" => cx = Some(parse("cx")?),
            "cy" => cy = Some(parse("cy")?),
            "width" => width = Some(parse("width")? as usize),
            "height" => height = Some(parse("height")? as usize),
            other => {
                return Err(ConfigError::UnknownKey {
                    path: pathname.clone(),
                    line: i + 1,
                    key: other.to_string(),
                })
            }
        }
    }
    let need = |opt: Option<f64>, key: &str| {
        opt.ok_or_else(|| ConfigError::MissingIntrinsicsKey {
            path: pathname.clone(),
            key: key.to_string(),
        })
    };
    let fx = need(fx, "fx")?;
    let fy = need(fy, "fy")?;
    let cx = need(cx, "cx")?;
    let cy = need(cy, "cy")?;
    let width = width.ok_or_else(|| ConfigError::MissingIntrinsicsKey {
        path: pathname.clone(),
        key: "width".to_string(),
    })?;
    let height = height.ok_or_else(|| ConfigError::MissingIntrinsicsKey {
        path: pathname.clone(),
        key: "height".to_string(),
    })?;
    Ok(CameraIntrinsics::new(fx, fy, cx, cy, width, height)?)
}

pub fn write_intrinsics_file(path: &Path, intr: &CameraIntrinsics) -> std::io::Result<()> {
    fs::write(
        path,
        format!(
            "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\n",
            intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(
            &path,
            "# comment\nlayer_mode=two-layer\nstride=2\nlambda_mf=0.25\nrobust.kernel=tukey\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.layer_mode, LayerMode::TwoLayer);
        assert_eq!(cfg.robust.fit.stride, 2);
        assert_eq!(cfg.loss_weights.mf, 0.25);
        assert!(matches!(cfg.robust.kernel, RobustKernel::Tukey { .. }));
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "no_such_option=1\n").unwrap();
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply_file(&path),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn intrinsics_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intr.txt");
        let intr = CameraIntrinsics::tum_fr2();
        write_intrinsics_file(&path, &intr).unwrap();
        let back = read_intrinsics_file(&path).unwrap();
        assert_eq!(back, intr);
    }

    #[test]
    fn echo_lists_defaults() {
        let echo = RunConfig::default().echo();
        assert!(echo.contains("lambda_of=1"));
        assert!(echo.contains("lambda_mf=0.1"));
        assert!(echo.contains("lambda_op=0.1"));
        assert!(echo.contains("robust.kernel=huber(k=1.345)"));
        assert!(echo.contains("layers.min_dynamic_support=50"));
    }

    #[test]
    fn presets_resolve() {
        for name in ["fr1", "fr2", "fr3", "default"] {
            let cfg = RunConfig {
                intrinsics: IntrinsicsSource::Preset(name.to_string()),
                ..RunConfig::default()
            };
            assert!(cfg.resolve_intrinsics().is_ok());
        }
        let cfg = RunConfig {
            intrinsics: IntrinsicsSource::Preset("fr9".to_string()),
            ..RunConfig::default()
        };
        assert!(matches!(
            cfg.resolve_intrinsics(),
            Err(ConfigError::UnknownPreset(_))
        ));
    }
}
