//! Feed to trajectory images: association, drone-motion compensation,
//! opposing-lane exclusion, sliding-window rasterization and dataset
//! assembly.

mod associate;
mod compensate;
pub mod dataset;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use associate::{associate, AssociationConfig, PixelPoint, PixelTrack};
pub use compensate::{compensate, compensate_track, drone_milepost_at, filter_direction, net_displacement};
pub use dataset::{build_dataset, split_sizes, stratified_allocation, Dataset, DatasetManifest, LabeledVideo, Split};
pub use render::{draw_line, render_window, render_windows, window_starts, Canvas};

use crate::condition::Condition;
use crate::sim::EXTRACTION_PERIODS;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("track {track} at t={t:.3} is outside GPS coverage [{from:.3}, {to:.3}]")]
    OutsideGps { track: u64, t: f64, from: f64, to: f64 },
    #[error("no GPS fixes")]
    NoGps,
    #[error("label {label} has only {count} images (minimum 5)")]
    TooFewImages { label: Condition, count: usize },
    #[error("image: {0}")]
    Image(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    Monochrome,
    Color,
}

impl ImageMode {
    pub fn channels(self) -> usize {
        match self {
            ImageMode::Monochrome => 1,
            ImageMode::Color => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageMode::Monochrome => "mono",
            ImageMode::Color => "color",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub extraction_period_s: u32,
    pub slide_step_s: u32,
    pub image_mode: ImageMode,
    pub canvas_width: u32,
    pub canvas_height: u32,
    /// Net along-road displacement below `-direction_epsilon_ft` marks an
    /// opposing-lane trajectory.
    pub direction_epsilon_ft: f64,
    /// Cross-road band `[lo, hi]` (ft from the image top edge) mapped onto
    /// the canvas height; the whole frame height when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lateral_band_ft: Option<[f64; 2]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extraction_period_s: 20,
            slide_step_s: 1,
            image_mode: ImageMode::Monochrome,
            canvas_width: 160,
            canvas_height: 128,
            direction_epsilon_ft: 10.0,
            lateral_band_ft: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !EXTRACTION_PERIODS.contains(&self.extraction_period_s) {
            return Err(PipelineError::Config(format!(
                "extraction period {} s is not one of 3, 5, 10, 15, 20",
                self.extraction_period_s
            )));
        }
        if self.slide_step_s != 1 {
            return Err(PipelineError::Config("slide step is fixed at 1 s".into()));
        }
        if self.canvas_width < 2 || self.canvas_height < 2 {
            return Err(PipelineError::Config("canvas must be at least 2x2".into()));
        }
        if !(self.direction_epsilon_ft >= 0.0) {
            return Err(PipelineError::Config("direction epsilon must be non-negative".into()));
        }
        if let Some([lo, hi]) = self.lateral_band_ft {
            if !(hi > lo) {
                return Err(PipelineError::Config("lateral band must have positive width".into()));
            }
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        self.extraction_period_s as f64
    }
}

/// Sample of a compensated trajectory in the road frame, ft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSample {
    pub t: f64,
    pub road_x: f64,
    pub road_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: u64,
    pub samples: Vec<RoadSample>,
}

/// One rasterized extraction window. Pixels are planar (channel-major),
/// row-major within a channel, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryImage {
    pub window_start: f64,
    pub window_end: f64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    pub label: Option<Condition>,
    pub source_segment_id: Option<u32>,
}

impl TrajectoryImage {
    pub fn blank(window_start: f64, window_end: f64, width: usize, height: usize, channels: usize) -> Self {
        Self {
            window_start,
            window_end,
            width,
            height,
            channels,
            pixels: vec![0.0; width * height * channels],
            label: None,
            source_segment_id: None,
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn mass(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum()
    }

    /// Bounding box `(x0, y0, x1, y1)` of pixels above `threshold` in any
    /// channel.
    pub fn bounding_box(&self, threshold: f32) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    if self.get(c, y, x) > threshold {
                        bb = Some(match bb {
                            None => (x, y, x, y),
                            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                        });
                    }
                }
            }
        }
        bb
    }

    pub fn to_dynamic_image(&self) -> image::DynamicImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            let buf = image::GrayImage::from_fn(w, h, |x, y| image::Luma([q(self.get(0, y as usize, x as usize))]));
            image::DynamicImage::ImageLuma8(buf)
        } else {
            let buf = image::RgbImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([q(self.get(0, y, x)), q(self.get(1, y, x)), q(self.get(2, y, x))])
            });
            image::DynamicImage::ImageRgb8(buf)
        }
    }

    pub fn from_dynamic_image(img: &image::DynamicImage, channels: usize) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = TrajectoryImage::blank(0.0, 0.0, w, h, channels);
        if channels == 1 {
            let g = img.to_luma8();
            for (x, y, p) in g.enumerate_pixels() {
                out.pixels[y as usize * w + x as usize] = p.0[0] as f32 / 255.0;
            }
        } else {
            let rgb = img.to_rgb8();
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    out.pixels[(c * h + y as usize) * w + x as usize] = p.0[c] as f32 / 255.0;
                }
            }
        }
        out
    }
}

/// Full chain for one stretch of feed: associate, compensate, drop opposing
/// trajectories and render every window of `[t_start, t_end]`.
pub fn feed_to_images(
    frames: &[crate::feed::FrameDetections],
    gps: &[crate::feed::GpsFix],
    header: &crate::feed::FeedHeader,
    config: &PipelineConfig,
    direction: crate::sim::AxisDirection,
    t_start: f64,
    t_end: f64,
) -> Result<Vec<TrajectoryImage>, PipelineError> {
    config.validate()?;
    let tracks = associate(frames, &AssociationConfig::for_header(header));
    let (trajs, rejected) = compensate(&tracks, gps, header.gsd_ft);
    for r in &rejected {
        tracing::warn!("{r}");
    }
    let kept = filter_direction(trajs, direction, config.direction_epsilon_ft);
    render_windows(&kept, gps, header, config, t_start, t_end)
}
