//! Patrol feed records and their line-delimited wire encoding.
//!
//! A feed is a sequence of newline-terminated JSON objects. On the wire every
//! line carries a `type` tag (`header`, `frame` or `gps`); the first line of a
//! live stream should be a header naming the schema version and the camera
//! geometry. Simulator output directories hold the untagged form: one
//! `frames.jsonl` with a [`FrameDetections`] per line and one `gps.jsonl` with
//! a [`GpsFix`] per line, next to a `camera.json` with the [`FeedHeader`].

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEED_SCHEMA: &str = "darts-feed";
pub const FEED_VERSION: u32 = 1;

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const GPS_FILE: &str = "gps.jsonl";
pub const CAMERA_FILE: &str = "camera.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unsupported feed schema {schema} v{version}")]
    Unsupported { schema: String, version: u32 },
    #[error("invalid value in record: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One detected vehicle centroid in camera pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle_id: Option<u64>,
    pub x_px: f64,
    pub y_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub timestamp: f64,
    pub detections: Vec<Detection>,
}

/// Drone position, reported once per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub timestamp: f64,
    pub latitude: f64,
    pub longitude: f64,
    /// Projection of the drone position onto the road axis, miles.
    pub milepost: f64,
    pub altitude_ft: f64,
}

/// Camera geometry and cadence of a feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedHeader {
    pub schema: String,
    pub version: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    pub fps: f64,
    pub gsd_ft: f64,
}

impl FeedHeader {
    pub fn new(frame_width: u32, frame_height: u32, fps: f64, gsd_ft: f64) -> Self {
        Self {
            schema: FEED_SCHEMA.to_string(),
            version: FEED_VERSION,
            frame_width,
            frame_height,
            fps,
            gsd_ft,
        }
    }

    fn validate(&self) -> Result<(), FeedError> {
        if self.schema != FEED_SCHEMA || self.version != FEED_VERSION {
            return Err(FeedError::Unsupported {
                schema: self.schema.clone(),
                version: self.version,
            });
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err(FeedError::Invalid("zero frame size".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) || !(self.gsd_ft.is_finite() && self.gsd_ft > 0.0) {
            return Err(FeedError::Invalid("fps and gsd must be positive".into()));
        }
        Ok(())
    }
}

impl Default for FeedHeader {
    fn default() -> Self {
        FeedHeader::new(640, 512, 10.0, 0.6)
    }
}

/// One line of the wire protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeedRecord {
    Header(FeedHeader),
    Frame(FrameDetections),
    Gps(GpsFix),
}

impl FeedRecord {
    pub fn timestamp(&self) -> Option<f64> {
        match self {
            FeedRecord::Header(_) => None,
            FeedRecord::Frame(f) => Some(f.timestamp),
            FeedRecord::Gps(g) => Some(g.timestamp),
        }
    }

    /// Decode and validate one wire line. Surrounding whitespace is ignored.
    pub fn decode_line(line: &str) -> Result<Self, FeedError> {
        let record: FeedRecord =
            serde_json::from_str(line.trim()).map_err(|e| FeedError::Malformed(e.to_string()))?;
        match &record {
            FeedRecord::Header(h) => h.validate()?,
            FeedRecord::Frame(f) => validate_frame(f)?,
            FeedRecord::Gps(g) => validate_gps(g)?,
        }
        Ok(record)
    }

    pub fn encode_line(&self) -> String {
        serde_json::to_string(self).expect("feed records always serialize")
    }
}

fn finite(v: f64, what: &str) -> Result<(), FeedError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(FeedError::Invalid(format!("{what} is not finite")))
    }
}

fn validate_frame(f: &FrameDetections) -> Result<(), FeedError> {
    finite(f.timestamp, "frame timestamp")?;
    for d in &f.detections {
        finite(d.x_px, "x_px")?;
        finite(d.y_px, "y_px")?;
    }
    Ok(())
}

fn validate_gps(g: &GpsFix) -> Result<(), FeedError> {
    finite(g.timestamp, "gps timestamp")?;
    finite(g.latitude, "latitude")?;
    finite(g.longitude, "longitude")?;
    finite(g.milepost, "milepost")?;
    finite(g.altitude_ft, "altitude")?;
    if !(-90.0..=90.0).contains(&g.latitude) || !(-180.0..=180.0).contains(&g.longitude) {
        return Err(FeedError::Invalid("coordinates out of range".into()));
    }
    Ok(())
}

/// Parse one untagged `frames.jsonl` line.
pub fn parse_frame_line(line: &str) -> Result<FrameDetections, FeedError> {
    let f: FrameDetections =
        serde_json::from_str(line.trim()).map_err(|e| FeedError::Malformed(e.to_string()))?;
    validate_frame(&f)?;
    Ok(f)
}

/// Parse one untagged `gps.jsonl` line.
pub fn parse_gps_line(line: &str) -> Result<GpsFix, FeedError> {
    let g: GpsFix = serde_json::from_str(line.trim()).map_err(|e| FeedError::Malformed(e.to_string()))?;
    validate_gps(&g)?;
    Ok(g)
}

/// Parse a `camera.json` header.
pub fn parse_header(text: &str) -> Result<FeedHeader, FeedError> {
    let h: FeedHeader = serde_json::from_str(text).map_err(|e| FeedError::Malformed(e.to_string()))?;
    h.validate()?;
    Ok(h)
}

/// Frames, GPS and camera geometry of one recorded patrol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Feed {
    pub header: FeedHeader,
    pub frames: Vec<FrameDetections>,
    pub gps: Vec<GpsFix>,
}

/// Outcome of a lenient load: lines that failed to decode are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub malformed: usize,
}

impl LoadStats {
    pub fn malformed_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.malformed as f64 / self.lines as f64
        }
    }
}

impl Feed {
    /// All records in timestamp order, preceded by the header. A GPS fix
    /// sorts before a frame carrying the same timestamp.
    pub fn records(&self) -> Vec<FeedRecord> {
        let mut out = Vec::with_capacity(self.frames.len() + self.gps.len() + 1);
        out.push(FeedRecord::Header(self.header.clone()));
        let (mut i, mut j) = (0, 0);
        while i < self.frames.len() || j < self.gps.len() {
            let take_gps = match (self.frames.get(i), self.gps.get(j)) {
                (Some(f), Some(g)) => g.timestamp <= f.timestamp,
                (None, Some(_)) => true,
                _ => false,
            };
            if take_gps {
                out.push(FeedRecord::Gps(self.gps[j]));
                j += 1;
            } else {
                out.push(FeedRecord::Frame(self.frames[i].clone()));
                i += 1;
            }
        }
        out
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), FeedError> {
        fs::create_dir_all(dir)?;
        let mut frames = std::io::BufWriter::new(fs::File::create(dir.join(FRAMES_FILE))?);
        for f in &self.frames {
            serde_json::to_writer(&mut frames, f).map_err(|e| FeedError::Malformed(e.to_string()))?;
            frames.write_all(b"\n")?;
        }
        frames.flush()?;
        let mut gps = std::io::BufWriter::new(fs::File::create(dir.join(GPS_FILE))?);
        for g in &self.gps {
            serde_json::to_writer(&mut gps, g).map_err(|e| FeedError::Malformed(e.to_string()))?;
            gps.write_all(b"\n")?;
        }
        gps.flush()?;
        fs::write(
            dir.join(CAMERA_FILE),
            serde_json::to_string_pretty(&self.header).expect("header serializes"),
        )?;
        Ok(())
    }

    /// Load a feed directory, skipping lines that fail to decode.
    pub fn read_dir_lenient(dir: &Path) -> Result<(Feed, LoadStats), FeedError> {
        let header = match fs::read_to_string(dir.join(CAMERA_FILE)) {
            Ok(text) => parse_header(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => FeedHeader::default(),
            Err(e) => return Err(e.into()),
        };
        let mut stats = LoadStats::default();
        let frames = read_lines(&dir.join(FRAMES_FILE), parse_frame_line, &mut stats)?;
        let gps = read_lines(&dir.join(GPS_FILE), parse_gps_line, &mut stats)?;
        Ok((Feed { header, frames, gps }, stats))
    }
}

fn read_lines<T>(
    path: &Path,
    parse: fn(&str) -> Result<T, FeedError>,
    stats: &mut LoadStats,
) -> Result<Vec<T>, FeedError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        match parse(&line) {
            Ok(v) => out.push(v),
            Err(e) => {
                stats.malformed += 1;
                tracing::warn!(file = %path.display(), "skipping feed line: {e}");
            }
        }
    }
    Ok(out)
}
