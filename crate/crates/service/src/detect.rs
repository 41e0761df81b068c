//! One raw segment to one verdict, plus the preview strip stored with it.

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};

use darts_core::aggregation::{AggregationPolicy, SegmentResult};
use darts_core::condition::Condition;
use darts_core::feed::FeedHeader;
use darts_core::pipeline::{drone_milepost_at, feed_to_images, PipelineConfig, PipelineError, TrajectoryImage};
use darts_core::sim::AxisDirection;
use darts_tcdnet::{Model, Scalar};
use image::{DynamicImage, ImageFormat};
use thiserror::Error;

use crate::lanes::RawSegment;

/// Per-image classifier shared by all lanes; calls must be reentrant.
pub trait Classifier: Send + Sync {
    fn channels(&self) -> usize;
    fn classify(&self, images: &[TrajectoryImage]) -> Result<Vec<Condition>, String>;
}

impl<T: Scalar + Send + Sync> Classifier for Model<T> {
    fn channels(&self) -> usize {
        self.config.input_channels
    }

    fn classify(&self, images: &[TrajectoryImage]) -> Result<Vec<Condition>, String> {
        self.classify_batch(images)
            .map(|v| v.into_iter().map(|(c, _)| c).collect())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("corrupt frame {frame}: {reason}")]
    CorruptFrame { frame: u64, reason: String },
    #[error("no GPS fix near t={0:.1}")]
    NoGps(f64),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("classifier: {0}")]
    Classifier(String),
    #[error("aggregation: {0}")]
    Aggregation(String),
    #[error("preview: {0}")]
    Preview(String),
    #[error("detection panicked: {0}")]
    Panic(String),
}

#[derive(Debug, Clone)]
pub struct DetectContext {
    pub header: FeedHeader,
    pub pipeline: PipelineConfig,
    pub policy: AggregationPolicy,
    pub direction: AxisDirection,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub result: SegmentResult,
    pub images: Vec<TrajectoryImage>,
}

fn check_frames(seg: &RawSegment, header: &FeedHeader) -> Result<(), DetectError> {
    let (w, h) = (header.frame_width as f64, header.frame_height as f64);
    for f in &seg.frames {
        for d in &f.detections {
            if !(d.x_px >= 0.0 && d.x_px <= w && d.y_px >= 0.0 && d.y_px <= h) {
                return Err(DetectError::CorruptFrame {
                    frame: f.frame_index,
                    reason: format!("centroid ({}, {}) outside the {w}x{h} frame", d.x_px, d.y_px),
                });
            }
        }
    }
    Ok(())
}

pub fn detect_segment(
    seg: &RawSegment,
    ctx: &DetectContext,
    classifier: &dyn Classifier,
) -> Result<Detection, DetectError> {
    check_frames(seg, &ctx.header)?;
    let (start, end) = (seg.bounds.start, seg.bounds.end);
    let m0 = drone_milepost_at(&seg.gps, start).ok_or(DetectError::NoGps(seg.stream_span.0))?;
    let m1 = drone_milepost_at(&seg.gps, end).ok_or(DetectError::NoGps(seg.stream_span.1))?;
    let images = feed_to_images(&seg.frames, &seg.gps, &ctx.header, &ctx.pipeline, ctx.direction, start, end)?;
    let labels = classifier.classify(&images).map_err(DetectError::Classifier)?;
    if labels.len() != images.len() {
        return Err(DetectError::Classifier(format!("{} labels for {} images", labels.len(), images.len())));
    }
    let result = SegmentResult::new(seg.bounds.segment_id, seg.bounds.lane, seg.stream_span, (m0, m1), labels, &ctx.policy)
        .map_err(|e| DetectError::Aggregation(e.to_string()))?;
    Ok(Detection { result, images })
}

/// `detect_segment` with panics turned into errors, so one bad segment
/// cannot take its lane down.
pub fn detect_isolated(
    seg: &RawSegment,
    ctx: &DetectContext,
    classifier: &dyn Classifier,
) -> Result<Detection, DetectError> {
    match catch_unwind(AssertUnwindSafe(|| detect_segment(seg, ctx, classifier))) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err(DetectError::Panic(msg))
        }
    }
}

/// Frames side by side in one PNG.
pub fn preview_strip(images: &[TrajectoryImage]) -> Result<Vec<u8>, DetectError> {
    let Some(first) = images.first() else {
        return Err(DetectError::Preview("no frames".into()));
    };
    let (w, h) = (first.width as u32, first.height as u32);
    let mut strip = if first.channels == 1 {
        DynamicImage::new_luma8(w * images.len() as u32, h)
    } else {
        DynamicImage::new_rgb8(w * images.len() as u32, h)
    };
    for (i, img) in images.iter().enumerate() {
        image::imageops::replace(&mut strip, &img.to_dynamic_image(), (i as u32 * w) as i64, 0);
    }
    encode_png(&strip)
}

/// Frame `index` of a strip holding `frames` equal-width frames.
pub fn preview_frame(strip_png: &[u8], frames: usize, index: usize) -> Result<Vec<u8>, DetectError> {
    let strip = image::load_from_memory_with_format(strip_png, ImageFormat::Png)
        .map_err(|e| DetectError::Preview(e.to_string()))?;
    if frames == 0 || index >= frames || strip.width() as usize % frames != 0 {
        return Err(DetectError::Preview(format!("frame {index} of {frames} not in strip")));
    }
    let w = strip.width() / frames as u32;
    encode_png(&strip.crop_imm(index as u32 * w, 0, w, strip.height()))
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, DetectError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| DetectError::Preview(e.to_string()))?;
    Ok(out.into_inner())
}
