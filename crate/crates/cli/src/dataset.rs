//! TUM RGB-D sequence ingestion: index parsing, nearest-timestamp
//! association, image and depth decoding, and streaming frame pairs.
//!
//! A sequence directory holds `rgb.txt`, `depth.txt` and `groundtruth.txt`
//! index files plus the image files they reference. Depth images are
//! 16-bit with 5000 raw units per meter; raw zero means no reading and
//! becomes an invalid pixel, the single source of the depth validity mask
//! used downstream.

use std::fs;
use std::path::{Path, PathBuf};

use egoflow_core::eval::Trajectory;
use egoflow_core::grid::{Grid, Image, InverseDepthMap};
use thiserror::Error;

use crate::trajfile;

/// TUM depth scale: raw 16-bit units per meter.
pub const DEPTH_SCALE: f64 = 5000.0;
/// Default association tolerance in seconds.
pub const DEFAULT_MAX_DIFF: f64 = 0.02;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing index file {0}")]
    MissingIndex(PathBuf),
    #[error("{path}:{line}: malformed index line")]
    BadIndexLine { path: String, line: usize },
    #[error("no rgb/depth pairs could be associated in {0}")]
    EmptySequence(PathBuf),
    #[error("cannot decode image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },
    #[error("depth image {0} is not 16-bit grayscale")]
    BadDepthFormat(PathBuf),
    #[error(transparent)]
    Trajectory(#[from] trajfile::TrajError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct LoadConfig {
    /// Maximum rgb/depth timestamp distance for association, seconds.
    pub max_diff: f64,
    /// Keep at most this many frame pairs.
    pub max_pairs: Option<usize>,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            max_diff: DEFAULT_MAX_DIFF,
            max_pairs: None,
        }
    }
}

/// One associated frame: rgb timestamp plus the two files backing it.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

/// Two consecutive decoded frames sharing the first frame's depth.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub i_t: Image,
    pub i_next: Image,
    pub depth_t: InverseDepthMap,
    pub t: f64,
    pub t_next: f64,
}

impl FramePair {
    pub fn delta(&self) -> f64 {
        self.t_next - self.t
    }
}

/// An associated sequence; frames decode lazily through [`Self::pairs`].
#[derive(Debug)]
pub struct TumSequence {
    pub frames: Vec<FrameRecord>,
    pub groundtruth: Option<Trajectory>,
    /// Frames dropped because no depth timestamp was close enough.
    pub skipped: usize,
}

impl TumSequence {
    pub fn pair_count(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    /// Stream consecutive frame pairs, decoding each frame once.
    pub fn pairs(&self) -> PairIter<'_> {
        PairIter {
            frames: &self.frames,
            next_index: 0,
            previous: None,
        }
    }
}

pub struct PairIter<'a> {
    frames: &'a [FrameRecord],
    next_index: usize,
    previous: Option<(f64, Image, InverseDepthMap)>,
}

impl Iterator for PairIter<'_> {
    type Item = Result<FramePair, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.next_index >= self.frames.len() {
                return None;
            }
            let record = &self.frames[self.next_index];
            self.next_index += 1;
            let decoded = match decode_frame(record) {
                Ok(d) => d,
                Err(e) => return Some(Err(e)),
            };
            let (image, depth) = decoded;
            if let Some((t, prev_image, prev_depth)) = self.previous.take() {
                let pair = FramePair {
                    i_t: prev_image,
                    i_next: image.clone(),
                    depth_t: prev_depth,
                    t,
                    t_next: record.timestamp,
                };
                self.previous = Some((record.timestamp, image, depth));
                return Some(Ok(pair));
            }
            self.previous = Some((record.timestamp, image, depth));
        }
    }
}

fn decode_frame(record: &FrameRecord) -> Result<(Image, InverseDepthMap), DatasetError> {
    let image = load_intensity_image(&record.rgb_path)?;
    let depth = load_depth_image(&record.depth_path)?;
    Ok((image, depth))
}

/// Decode to `[0, 1]` intensities, converting color via Rec. 601 luma.
pub fn load_intensity_image(path: &Path) -> Result<Image, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::BadImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Grid::from_fn(w, h, |x, y| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            })
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Grid::from_fn(w, h, |x, y| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 65535.0
            })
        }
        other => {
            let buf = other.to_rgb8();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Grid::from_fn(w, h, |x, y| {
                let p = buf.get_pixel(x as u32, y as u32).0;
                (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
            })
        }
    })
}

/// Decode a 16-bit depth image; raw units are `DEPTH_SCALE` per meter and
/// raw zero marks missing depth.
pub fn load_depth_image(path: &Path) -> Result<InverseDepthMap, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::BadImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(DatasetError::BadDepthFormat(path.to_path_buf()));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let depth = Grid::from_fn(w, h, |x, y| {
        buf.get_pixel(x as u32, y as u32).0[0] as f64 / DEPTH_SCALE
    });
    Ok(InverseDepthMap::from_depth(&depth))
}

/// Parse a TUM index file: `timestamp path` per line, `#` comments.
pub fn parse_index(path: &Path) -> Result<Vec<(f64, PathBuf)>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingIndex(path.to_path_buf()));
    }
    let content = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(ts), Some(rel)) = (fields.next(), fields.next()) else {
            return Err(DatasetError::BadIndexLine {
                path: path.display().to_string(),
                line: i + 1,
            });
        };
        let ts: f64 = ts.parse().map_err(|_| DatasetError::BadIndexLine {
            path: path.display().to_string(),
            line: i + 1,
        })?;
        records.push((ts, PathBuf::from(rel)));
    }
    Ok(records)
}

/// Index of the nearest value in a sorted slice, or `None` when empty.
fn nearest_sorted(haystack: &[f64], needle: f64) -> Option<usize> {
    if haystack.is_empty() {
        return None;
    }
    let idx = haystack
        .partition_point(|&t| t < needle)
        .min(haystack.len() - 1);
    let better_left = idx > 0 && (needle - haystack[idx - 1]).abs() <= (haystack[idx] - needle).abs();
    Some(if better_left { idx - 1 } else { idx })
}

/// Associate rgb records to depth records by nearest timestamp within
/// `max_diff`; unmatched rgb frames are skipped and counted.
pub fn load_tum_sequence(dir: &Path, config: &LoadConfig) -> Result<TumSequence, DatasetError> {
    let rgb = parse_index(&dir.join("rgb.txt"))?;
    let depth = parse_index(&dir.join("depth.txt"))?;
    let depth_ts: Vec<f64> = depth.iter().map(|(t, _)| *t).collect();

    let mut frames = Vec::new();
    let mut skipped = 0usize;
    for (ts, rgb_rel) in &rgb {
        match nearest_sorted(&depth_ts, *ts) {
            Some(i) if (depth_ts[i] - ts).abs() <= config.max_diff => {
                frames.push(FrameRecord {
                    timestamp: *ts,
                    rgb_path: dir.join(rgb_rel),
                    depth_path: dir.join(&depth[i].1),
                });
            }
            _ => skipped += 1,
        }
    }
    if let Some(max_pairs) = config.max_pairs {
        frames.truncate(max_pairs + 1);
    }
    if frames.len() < 2 {
        return Err(DatasetError::EmptySequence(dir.to_path_buf()));
    }

    let gt_path = dir.join("groundtruth.txt");
    let groundtruth = if gt_path.is_file() {
        Some(trajfile::load_trajectory(&gt_path)?)
    } else {
        None
    };

    Ok(TumSequence {
        frames,
        groundtruth,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma};

    fn write_fixture(dir: &Path, depth_offsets: &[f64]) {
        fs::create_dir_all(dir.join("rgb")).unwrap();
        fs::create_dir_all(dir.join("depth")).unwrap();
        let mut rgb_index = String::from("# rgb\n");
        let mut depth_index = String::from("# depth\n");
        for (k, off) in depth_offsets.iter().enumerate() {
            let ts = k as f64;
            let rgb_name = format!("rgb/{ts:.6}.png");
            let depth_name = format!("depth/{ts:.6}.png");
            let gray: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_fn(8, 6, |x, y| Luma([(x * 20 + y * 10 + k as u32) as u8]));
            gray.save(dir.join(&rgb_name)).unwrap();
            let depth_img: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(8, 6, |x, _| Luma([if x == 0 { 0 } else { 5000 }]));
            depth_img.save(dir.join(&depth_name)).unwrap();
            rgb_index.push_str(&format!("{ts:.6} {rgb_name}\n"));
            depth_index.push_str(&format!("{:.6} {depth_name}\n", ts + off));
        }
        fs::write(dir.join("rgb.txt"), rgb_index).unwrap();
        fs::write(dir.join("depth.txt"), depth_index).unwrap();
        fs::write(
            dir.join("groundtruth.txt"),
            "0.0 0 0 0 0 0 0 1\n1.0 0.1 0 0 0 0 0 1\n2.0 0.2 0 0 0 0 0 1\n",
        )
        .unwrap();
    }

    #[test]
    fn aligned_fixture_yields_pairs() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.0, 0.0, 0.0]);
        let seq = load_tum_sequence(dir.path(), &LoadConfig::default()).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert_eq!(seq.skipped, 0);
        assert_eq!(seq.pair_count(), 2);
        let pairs: Vec<_> = seq.pairs().collect::<Result<_, _>>().unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].t, 0.0);
        assert_eq!(pairs[0].t_next, 1.0);
        assert!((pairs[0].delta() - 1.0).abs() < 1e-12);
        // Raw depth 5000 -> 1 m -> rho = 1; raw 0 -> invalid.
        let d = &pairs[0].depth_t;
        assert!(!d.valid[(0, 0)]);
        assert!(d.valid[(1, 0)]);
        assert!((d.rho[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_depth_frame_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.0, 0.05, 0.0]);
        let seq = load_tum_sequence(dir.path(), &LoadConfig::default()).unwrap();
        assert_eq!(seq.frames.len(), 2);
        assert_eq!(seq.skipped, 1);
    }

    #[test]
    fn missing_index_reported() {
        let dir = tempfile::tempdir().unwrap();
        match load_tum_sequence(dir.path(), &LoadConfig::default()) {
            Err(DatasetError::MissingIndex(p)) => {
                assert!(p.ends_with("rgb.txt"));
            }
            other => panic!("expected missing index, got {other:?}"),
        }
    }

    #[test]
    fn association_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[0.004, -0.003, 0.01]);
        let a = load_tum_sequence(dir.path(), &LoadConfig::default()).unwrap();
        let b = load_tum_sequence(dir.path(), &LoadConfig::default()).unwrap();
        let pa: Vec<_> = a.frames.iter().map(|f| f.depth_path.clone()).collect();
        let pb: Vec<_> = b.frames.iter().map(|f| f.depth_path.clone()).collect();
        assert_eq!(pa, pb);
    }
}
