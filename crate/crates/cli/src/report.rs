//! Per-pair report records: tab-separated with the resolved configuration
//! echoed in `#` comment lines, so a run is reproducible from its report.
//!
//! Floats are written with Rust's shortest round-trip formatting, which
//! keeps the written values bit-exact on re-parse and the file
//! byte-identical across reruns of the same inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use egoflow_core::flow::LossReport;
use egoflow_core::geometry::CameraVelocity;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed report record")]
    Parse { path: String, line: usize },
}

/// One estimated frame pair.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub timestamp: f64,
    pub delta: f64,
    /// Fitted twist normalized to per-second units.
    pub velocity: CameraVelocity,
    pub residual_rms: f64,
    pub support: usize,
    pub condition: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True when the pair failed and the previous twist was reused.
    pub interpolated: bool,
    pub losses: Option<LossReport>,
    pub static_support: usize,
    pub dynamic_support: usize,
}

const COLUMNS: &str = "timestamp\tdelta\ttau_x\ttau_y\ttau_z\tomega_x\tomega_y\tomega_z\t\
residual_rms\tsupport\tcondition\titerations\tconverged\tinterpolated\t\
l_of\tl_mf\tl_op\tl_final\tstatic_support\tdynamic_support";

pub fn format_report(config_echo: &str, records: &[PairRecord]) -> String {
    let mut out = String::new();
    for line in config_echo.lines() {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "{COLUMNS}").unwrap();
    for r in records {
        let (l_of, l_mf, l_op, l_final) = match &r.losses {
            Some(l) => (l.l_of, l.l_mf, l.l_op, l.l_final),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.timestamp,
            r.delta,
            r.velocity.tau.x,
            r.velocity.tau.y,
            r.velocity.tau.z,
            r.velocity.omega.x,
            r.velocity.omega.y,
            r.velocity.omega.z,
            r.residual_rms,
            r.support,
            r.condition,
            r.iterations,
            r.converged,
            r.interpolated,
            l_of,
            l_mf,
            l_op,
            l_final,
            r.static_support,
            r.dynamic_support,
        )
        .unwrap();
    }
    out
}

pub fn write_report(path: &Path, config_echo: &str, records: &[PairRecord]) -> Result<(), ReportError> {
    fs::write(path, format_report(config_echo, records)).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Re-parse a report written by [`write_report`] (comments and the header
/// are skipped). Used by the acceptance suite to audit emitted records.
pub fn parse_report(content: &str, path: &str) -> Result<Vec<PairRecord>, ReportError> {
    let mut records = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("timestamp") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 20 {
            return Err(ReportError::Parse {
                path: path.to_string(),
                line: i + 1,
            });
        }
        let parse_err = || ReportError::Parse {
            path: path.to_string(),
            line: i + 1,
        };
        let f = |j: usize| -> Result<f64, ReportError> {
            fields[j].parse().map_err(|_| parse_err())
        };
        let u = |j: usize| -> Result<usize, ReportError> {
            fields[j].parse().map_err(|_| parse_err())
        };
        let b = |j: usize| -> Result<bool, ReportError> {
            fields[j].parse().map_err(|_| parse_err())
        };
        let losses_raw = (f(14)?, f(15)?, f(16)?, f(17)?);
        let losses = if losses_raw.0.is_nan() {
            None
        } else {
            Some(LossReport {
                l_of: losses_raw.0,
                l_mf: losses_raw.1,
                l_op: losses_raw.2,
                l_final: losses_raw.3,
                weights: egoflow_core::flow::LossWeights::default(),
            })
        };
        records.push(PairRecord {
            timestamp: f(0)?,
            delta: f(1)?,
            velocity: CameraVelocity::new(
                Vector3::new(f(2)?, f(3)?, f(4)?),
                Vector3::new(f(5)?, f(6)?, f(7)?),
            ),
            residual_rms: f(8)?,
            support: u(9)?,
            condition: f(10)?,
            iterations: u(11)?,
            converged: b(12)?,
            interpolated: b(13)?,
            losses,
            static_support: u(18)?,
            dynamic_support: u(19)?,
        });
    }
    Ok(records)
}
