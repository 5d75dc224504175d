//! Middlebury-style `.flo` flow files: little-endian, "PIEH" float tag,
//! width, height, then interleaved `(u, v)` float32 pairs in row-major
//! order. Values with magnitude above 1e9 mark unknown flow.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use egoflow_core::grid::{FlowField, VectorField};
use nalgebra::Vector2;
use thiserror::Error;

/// The float whose little-endian bytes spell "PIEH".
const TAG: f32 = 202021.25;
/// Sentinel written for invalid pixels.
const UNKNOWN: f32 = 1e10;
const UNKNOWN_THRESHOLD: f32 = 1e9;

#[derive(Debug, Error)]
pub enum FloError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {got}, not a PIEH flow file")]
    BadMagic { path: String, got: f32 },
    #[error("{path}: implausible dimensions {w}x{h}")]
    BadDims { path: String, w: i32, h: i32 },
}

fn io_err(path: &Path, source: std::io::Error) -> FloError {
    FloError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), FloError> {
    let (w, h) = flow.dims();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_f32::<LittleEndian>(TAG).map_err(|e| io_err(path, e))?;
    out.write_i32::<LittleEndian>(w as i32).map_err(|e| io_err(path, e))?;
    out.write_i32::<LittleEndian>(h as i32).map_err(|e| io_err(path, e))?;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = if flow.0.valid[(x, y)] {
                let f = flow.0.vectors[(x, y)];
                (f.x as f32, f.y as f32)
            } else {
                (UNKNOWN, UNKNOWN)
            };
            out.write_f32::<LittleEndian>(u).map_err(|e| io_err(path, e))?;
            out.write_f32::<LittleEndian>(v).map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField, FloError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut input = BufReader::new(file);
    let tag = input.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if tag != TAG {
        return Err(FloError::BadMagic {
            path: path.display().to_string(),
            got: tag,
        });
    }
    let w = input.read_i32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let h = input.read_i32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if !(1..=100_000).contains(&w) || !(1..=100_000).contains(&h) {
        return Err(FloError::BadDims {
            path: path.display().to_string(),
            w,
            h,
        });
    }
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; w * h * 2];
    let mut bytes = vec![0u8; w * h * 8];
    input.read_exact(&mut bytes).map_err(|e| io_err(path, e))?;
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    let mut field = VectorField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = 2 * (y * w + x);
            let (u, v) = (data[i], data[i + 1]);
            if u.abs() > UNKNOWN_THRESHOLD || v.abs() > UNKNOWN_THRESHOLD || !u.is_finite() || !v.is_finite() {
                field.valid[(x, y)] = false;
            } else {
                field.vectors[(x, y)] = Vector2::new(u as f64, v as f64);
                field.valid[(x, y)] = true;
            }
        }
    }
    Ok(FlowField(field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use egoflow_core::grid::VectorField;

    #[test]
    fn round_trip_is_bit_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.flo");
        let mut field = VectorField::zeros(7, 5);
        for y in 0..5 {
            for x in 0..7 {
                field.vectors[(x, y)] = Vector2::new(x as f64 * 0.37, -(y as f64) * 1.21);
            }
        }
        field.valid[(3, 2)] = false;
        let flow = FlowField(field);
        write_flo(&path, &flow).unwrap();
        let back = read_flo(&path).unwrap();
        assert_eq!(back.dims(), (7, 5));
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(back.0.valid[(x, y)], flow.0.valid[(x, y)]);
                if flow.0.valid[(x, y)] {
                    // Exact at f32 precision.
                    let orig = flow.0.vectors[(x, y)];
                    let got = back.0.vectors[(x, y)];
                    assert_eq!(got.x, orig.x as f32 as f64);
                    assert_eq!(got.y, orig.y as f32 as f64);
                }
            }
        }
        // Second write round-trips byte-identically.
        let path2 = dir.path().join("test2.flo");
        write_flo(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn magic_bytes_spell_pieh() {
        assert_eq!(&TAG.to_le_bytes(), b"PIEH");
    }

    #[test]
    fn rejects_non_flow_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.flo");
        std::fs::write(&path, b"not a flow file at all").unwrap();
        assert!(matches!(read_flo(&path), Err(FloError::BadMagic { .. })));
    }
}
