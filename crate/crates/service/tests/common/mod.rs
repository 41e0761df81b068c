#![allow(dead_code)]

use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};

use darts_core::aggregation::AggregationPolicy;
use darts_core::condition::Condition;
use darts_core::feed::{Detection, Feed, FeedHeader, FeedRecord, FrameDetections, GpsFix};
use darts_core::pipeline::{PipelineConfig, TrajectoryImage};
use darts_core::sim::AxisDirection;
use darts_service::{Classifier, FlightArchive, LaneConfig, Service, Settings};

/// Fixed epoch base so flight dates are stable.
pub const T0: f64 = 1_713_448_800.0;

/// Four vehicles crossing the frame, drone at 10 mph, `secs` long.
pub fn synthetic_feed(secs: u32, t0: f64) -> Feed {
    let header = FeedHeader::default();
    let gps = (0..secs)
        .map(|s| GpsFix {
            timestamp: t0 + s as f64,
            latitude: 28.0,
            longitude: -82.0,
            milepost: 1.0 + s as f64 * 0.0028,
            altitude_ft: 200.0,
        })
        .collect();
    let frames = (0..secs * 10)
        .map(|i| {
            let t = i as f64 / 10.0;
            let detections = (0..4)
                .map(|v| Detection { vehicle_id: None, x_px: (v as f64 * 160.0 + t * 40.0) % 640.0, y_px: 100.0 + 60.0 * v as f64 })
                .collect();
            FrameDetections { frame_index: i as u64, timestamp: t0 + t, detections }
        })
        .collect();
    Feed { header, frames, gps }
}

/// Incident for windows starting at or after `from` (lane clock), normal before.
pub struct ByTime {
    pub from: f64,
}

impl Classifier for ByTime {
    fn channels(&self) -> usize {
        1
    }

    fn classify(&self, images: &[TrajectoryImage]) -> Result<Vec<Condition>, String> {
        Ok(images
            .iter()
            .map(|i| if i.window_start >= self.from { Condition::Incident } else { Condition::Normal })
            .collect())
    }
}

pub fn settings() -> Settings {
    Settings {
        lanes: LaneConfig::default(),
        policy: AggregationPolicy::default(),
        pipeline: PipelineConfig { canvas_width: 32, canvas_height: 24, ..Default::default() },
        direction: AxisDirection::Increasing,
    }
}

pub fn service(dir: &Path, classifier: Arc<dyn Classifier>) -> Service {
    Service::new(settings(), classifier, FlightArchive::open(dir).unwrap()).unwrap()
}

pub fn normal_service(dir: &Path) -> Service {
    service(dir, Arc::new(ByTime { from: f64::INFINITY }))
}

pub fn push_all(svc: &Service, records: impl IntoIterator<Item = FeedRecord>) {
    for r in records {
        svc.ingest(r).unwrap();
    }
}

/// Blocks every classification until opened.
#[derive(Default)]
pub struct Gate {
    open: Mutex<bool>,
    cv: Condvar,
}

impl Gate {
    pub fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl Classifier for Gate {
    fn channels(&self) -> usize {
        1
    }

    fn classify(&self, images: &[TrajectoryImage]) -> Result<Vec<Condition>, String> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        Ok(vec![Condition::Normal; images.len()])
    }
}
