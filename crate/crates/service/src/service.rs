//! Service core: control state machine, feed ingest, lane workers and
//! publication. HTTP lives in `api`; this module is usable in-process.
//!
//! One mutex guards mode, the active flight, the archive and the result log,
//! so control transitions, publication and archiving never interleave. Lane
//! workers run detection outside it and only take it to publish.

use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use darts_core::aggregation::AggregationPolicy;
use darts_core::features::FeatureBlock;
use darts_core::feed::{FeedHeader, FeedRecord};
use darts_core::pipeline::PipelineConfig;
use darts_core::sim::AxisDirection;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::archive::{FlightArchive, FlightMeta, FlightSummary, PublishedSegment, SegmentStatus};
use crate::config::{LaneConfig, ServiceConfig};
use crate::detect::{detect_isolated, preview_strip, Classifier, DetectContext};
use crate::lanes::{Disposition, LaneState, RawSegment, SegmentBounds, Segmenter};
use crate::logs::{now_epoch, Level, LogHub};
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Idle,
    Detecting,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub mode: Mode,
    pub flight_id: Option<String>,
    pub lanes: Vec<LaneState>,
    /// Wall clock of the last publication in this flight.
    pub last_publication: Option<f64>,
    pub completed: u32,
    pub published: u32,
    /// Finished while paused, published on resume.
    pub held: u32,
    /// Last publication sequence number, service-wide.
    pub last_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    #[serde(default)]
    pub freeway: String,
    #[serde(default)]
    pub direction: Option<AxisDirection>,
    /// Patrol start, epoch seconds.
    #[serde(default)]
    pub start_time: Option<f64>,
    #[serde(default)]
    pub notes: Option<String>,
}

/// One publication: the segment and the flight features recomputed with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEvent {
    pub segment: PublishedSegment,
    pub features: FeatureBlock,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub lanes: LaneConfig,
    pub policy: AggregationPolicy,
    pub pipeline: PipelineConfig,
    pub direction: AxisDirection,
}

struct Job {
    raw: RawSegment,
    ctx: Arc<DetectContext>,
}

struct Outcome {
    bounds: SegmentBounds,
    stream_span: (f64, f64),
    detection: Result<(darts_core::aggregation::SegmentResult, Vec<u8>, usize), String>,
}

struct ActiveFlight {
    meta: FlightMeta,
    header: Option<FeedHeader>,
    segmenter: Segmenter,
    accepting: bool,
    senders: Vec<mpsc::Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    held: Vec<Outcome>,
    completed: u32,
    published: u32,
    last_publication: Option<f64>,
}

struct Shared {
    mode: Mode,
    flight: Option<ActiveFlight>,
    archive: FlightArchive,
    events: Vec<ResultEvent>,
    last_seq: u64,
}

struct Inner {
    settings: Settings,
    classifier: Arc<dyn Classifier>,
    shared: Mutex<Shared>,
    control: tokio::sync::Mutex<()>,
    results: watch::Sender<u64>,
    logs: Arc<LogHub>,
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn run_job(job: &Job, classifier: &dyn Classifier) -> Outcome {
    let detection = detect_isolated(&job.raw, &job.ctx, classifier).map_err(|e| e.to_string()).and_then(|d| {
        let png = preview_strip(&d.images).map_err(|e| e.to_string())?;
        Ok((d.result, png, d.images.len()))
    });
    Outcome { bounds: job.raw.bounds, stream_span: job.raw.stream_span, detection }
}

impl Service {
    pub fn new(settings: Settings, classifier: Arc<dyn Classifier>, archive: FlightArchive) -> Result<Self, ServiceError> {
        settings.lanes.validate()?;
        settings.pipeline.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if classifier.channels() != settings.pipeline.image_mode.channels() {
            return Err(ServiceError::Config(format!(
                "model takes {} channels but the pipeline renders {} images",
                classifier.channels(),
                settings.pipeline.image_mode.name()
            )));
        }
        let shared = Shared { mode: Mode::Idle, flight: None, archive, events: Vec::new(), last_seq: 0 };
        Ok(Self {
            inner: Arc::new(Inner {
                settings,
                classifier,
                shared: Mutex::new(shared),
                control: tokio::sync::Mutex::new(()),
                results: watch::channel(0).0,
                logs: Arc::new(LogHub::default()),
            }),
        })
    }

    /// Load the checkpoint and archive named by a config file. The pipeline
    /// comes from the config when given, else from the checkpoint.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let (model, header) = darts_tcdnet::load_checkpoint::<f32>(&config.checkpoint)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", config.checkpoint.display())))?;
        let pipeline = config.pipeline.clone().or(header.pipeline).unwrap_or_default();
        let settings = Settings { lanes: config.lanes, policy: config.policy, pipeline, direction: config.direction };
        let archive = FlightArchive::open(&config.data_dir)?;
        Self::new(settings, Arc::new(model), archive)
    }

    pub fn settings(&self) -> &Settings {
        &self.inner.settings
    }

    pub fn logs(&self) -> &Arc<LogHub> {
        &self.inner.logs
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.inner.shared.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Log to the hub and, during a flight, to the flight record.
    fn log_locked(&self, shared: &mut Shared, level: Level, message: String) {
        let line = self.inner.logs.push(level, "service", message);
        if let Some(id) = shared.flight.as_ref().map(|f| f.meta.flight_id.clone()) {
            let _ = shared.archive.append_log(&id, line);
        }
    }

    pub fn log(&self, level: Level, message: impl Into<String>) {
        let mut shared = self.lock();
        self.log_locked(&mut shared, level, message.into());
    }

    pub fn with_archive<R>(&self, f: impl FnOnce(&FlightArchive) -> R) -> R {
        f(&self.lock().archive)
    }

    pub fn state(&self) -> ServiceState {
        let shared = self.lock();
        let f = shared.flight.as_ref();
        ServiceState {
            mode: shared.mode,
            flight_id: f.map(|f| f.meta.flight_id.clone()),
            lanes: f.map(|f| f.segmenter.lane_states()).unwrap_or_default(),
            last_publication: f.and_then(|f| f.last_publication),
            completed: f.map_or(0, |f| f.completed),
            published: f.map_or(0, |f| f.published),
            held: f.map_or(0, |f| f.held.len() as u32),
            last_seq: shared.last_seq,
        }
    }

    pub fn results_since(&self, after: u64) -> Vec<ResultEvent> {
        let shared = self.lock();
        let from = shared.events.partition_point(|e| e.segment.seq <= after);
        shared.events[from..].to_vec()
    }

    pub fn subscribe_results(&self) -> watch::Receiver<u64> {
        self.inner.results.subscribe()
    }

    pub async fn start(&self, req: StartRequest) -> Result<ServiceState, ServiceError> {
        let _g = self.inner.control.lock().await;
        {
            let mut shared = self.lock();
            match shared.mode {
                Mode::Detecting => return Err(ServiceError::State("already detecting".into())),
                Mode::Paused => {
                    shared.mode = Mode::Detecting;
                    let f = shared.flight.as_mut().expect("paused with a flight");
                    f.segmenter.resume();
                    let held = std::mem::take(&mut f.held);
                    let id = f.meta.flight_id.clone();
                    for o in held {
                        self.publish_locked(&mut shared, o);
                    }
                    self.log_locked(&mut shared, Level::Info, format!("flight {id} resumed"));
                }
                Mode::Idle => {
                    let freeway = req.freeway.trim();
                    if freeway.is_empty() {
                        return Err(ServiceError::BadRequest("freeway label is required".into()));
                    }
                    let meta = FlightMeta {
                        flight_id: uuid::Uuid::new_v4().simple().to_string(),
                        freeway: freeway.to_string(),
                        direction: req.direction.unwrap_or(self.inner.settings.direction),
                        started_at: now_epoch(),
                        start_time: req.start_time,
                        extraction_period_s: self.inner.settings.pipeline.extraction_period_s,
                        notes: req.notes,
                    };
                    shared.archive.begin(meta.clone())?;
                    let (senders, workers) = self.spawn_lanes(&meta.flight_id);
                    shared.flight = Some(ActiveFlight {
                        meta: meta.clone(),
                        header: None,
                        segmenter: Segmenter::new(self.inner.settings.lanes, FeedHeader::default().fps),
                        accepting: true,
                        senders,
                        workers,
                        held: Vec::new(),
                        completed: 0,
                        published: 0,
                        last_publication: None,
                    });
                    shared.mode = Mode::Detecting;
                    let msg = format!("flight {} started on {}", meta.flight_id, meta.freeway);
                    self.log_locked(&mut shared, Level::Info, msg);
                }
            }
        }
        Ok(self.state())
    }

    pub async fn pause(&self) -> Result<ServiceState, ServiceError> {
        let _g = self.inner.control.lock().await;
        {
            let mut shared = self.lock();
            match shared.mode {
                Mode::Idle => return Err(ServiceError::State("nothing to pause: no active flight".into())),
                Mode::Paused => return Err(ServiceError::State("already paused".into())),
                Mode::Detecting => {}
            }
            shared.mode = Mode::Paused;
            shared.flight.as_mut().unwrap().segmenter.pause();
            self.log_locked(&mut shared, Level::Info, "detection paused; incoming feed is discarded".into());
        }
        Ok(self.state())
    }

    /// Finish the active flight: incomplete segments are dropped, segments
    /// already cut are detected and published, then the flight is archived.
    pub async fn stop(&self) -> Result<(ServiceState, FlightSummary), ServiceError> {
        let _g = self.inner.control.lock().await;
        let workers = {
            let mut shared = self.lock();
            if shared.mode == Mode::Idle {
                return Err(ServiceError::State("nothing to stop: no active flight".into()));
            }
            let f = shared.flight.as_mut().unwrap();
            f.accepting = false;
            f.senders.clear();
            std::mem::take(&mut f.workers)
        };
        tokio::task::spawn_blocking(move || {
            for w in workers {
                let _ = w.join();
            }
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let summary = {
            let mut shared = self.lock();
            let held = std::mem::take(&mut shared.flight.as_mut().unwrap().held);
            for o in held {
                self.publish_locked(&mut shared, o);
            }
            let f = shared.flight.as_ref().unwrap();
            let msg = format!("flight {} stopped: {} segments published", f.meta.flight_id, f.published);
            self.log_locked(&mut shared, Level::Info, msg);
            let summary = shared.archive.finish(now_epoch())?;
            shared.flight = None;
            shared.mode = Mode::Idle;
            summary
        };
        Ok((self.state(), summary))
    }

    fn spawn_lanes(&self, flight_id: &str) -> (Vec<mpsc::Sender<Job>>, Vec<JoinHandle<()>>) {
        (0..self.inner.settings.lanes.count)
            .map(|lane| {
                let (tx, rx) = mpsc::channel::<Job>();
                let svc = self.clone();
                let id = flight_id.to_string();
                let handle = std::thread::Builder::new()
                    .name(format!("lane-{lane}"))
                    .spawn(move || {
                        for job in rx {
                            let outcome = run_job(&job, svc.inner.classifier.as_ref());
                            svc.deliver(&id, outcome);
                        }
                    })
                    .expect("spawn lane worker");
                (tx, handle)
            })
            .unzip()
    }

    fn deliver(&self, flight_id: &str, outcome: Outcome) {
        let mut shared = self.lock();
        let paused = shared.mode == Mode::Paused;
        let Some(f) = shared.flight.as_mut().filter(|f| f.meta.flight_id == flight_id) else {
            return;
        };
        if paused {
            f.held.push(outcome);
        } else {
            self.publish_locked(&mut shared, outcome);
        }
    }

    fn publish_locked(&self, shared: &mut Shared, o: Outcome) {
        let seq = shared.last_seq + 1;
        let f = shared.flight.as_mut().expect("publishing needs a flight");
        let id = f.meta.flight_id.clone();
        let now = now_epoch();
        let base = PublishedSegment {
            seq,
            flight_id: id.clone(),
            segment_id: o.bounds.segment_id,
            lane: o.bounds.lane,
            time_span: o.stream_span,
            gps_span: None,
            status: SegmentStatus::Error,
            verdict: None,
            color: None,
            tau: None,
            image_labels: Vec::new(),
            error: None,
            preview_frames: 0,
            published_at: now,
        };
        let (seg, png, msg, level) = match o.detection {
            Ok((r, png, frames)) => {
                let msg = format!(
                    "segment {} lane {} [{:.0}, {:.0}]: {} (incident {:.2}, normal {:.2})",
                    r.segment_id, r.lane, r.time_span.0, r.time_span.1, r.verdict, r.tau.incident, r.tau.normal
                );
                let seg = PublishedSegment {
                    gps_span: Some(r.gps_span),
                    status: SegmentStatus::Ok,
                    verdict: Some(r.verdict),
                    color: Some(r.verdict.color().to_string()),
                    tau: Some(r.tau),
                    image_labels: r.image_labels,
                    preview_frames: frames,
                    ..base
                };
                (seg, Some(png), msg, Level::Info)
            }
            Err(e) => {
                let msg = format!("segment {} lane {} failed: {e}", o.bounds.segment_id, o.bounds.lane);
                (PublishedSegment { error: Some(e), ..base }, None, msg, Level::Error)
            }
        };
        f.published += 1;
        f.last_publication = Some(now);
        if let Err(e) = shared.archive.append_segment(seg.clone(), png.as_deref()) {
            self.inner.logs.error("archive", format!("segment {} not stored: {e}", seg.segment_id));
        }
        let features = shared.archive.features(&id).unwrap_or_default();
        shared.last_seq = seq;
        shared.events.push(ResultEvent { segment: seg, features });
        self.log_locked(shared, level, msg);
        self.inner.results.send_replace(seq);
    }

    /// Feed one wire record into the active flight.
    pub fn ingest(&self, record: FeedRecord) -> Result<Disposition, ServiceError> {
        let mut shared = self.lock();
        let shared = &mut *shared;
        let f = shared
            .flight
            .as_mut()
            .filter(|f| f.accepting)
            .ok_or_else(|| ServiceError::State("no active flight accepting feed".into()))?;
        let id = f.meta.flight_id.clone();
        if let FeedRecord::Header(h) = &record {
            f.segmenter.set_fps(h.fps);
            f.header = Some(h.clone());
            return Ok(Disposition::Ignored);
        }
        let mut warn = None;
        if f.header.is_none() {
            f.header = Some(FeedHeader::default());
            warn = Some("feed started without a header; assuming the default camera".to_string());
        }
        let fix = match &record {
            FeedRecord::Gps(g) => Some(*g),
            _ => None,
        };
        let first = f.segmenter.t0().is_none();
        let ts = record.timestamp();
        let (disp, segs) = f.segmenter.push(record);
        let header = f.header.clone().unwrap();
        for raw in segs {
            f.completed += 1;
            self.dispatch(f, raw, &header);
        }
        if disp == Disposition::Buffered {
            if first {
                let _ = shared.archive.record_stream_start(&id, ts.unwrap());
            }
            if let Some(g) = fix {
                let _ = shared.archive.append_gps(&id, g);
            }
        }
        if let Some(w) = warn {
            self.log_locked(shared, Level::Warn, w);
        }
        Ok(disp)
    }

    /// The feed connection closed: cut whatever the stream fully covered.
    pub fn end_of_stream(&self) -> Result<u32, ServiceError> {
        let mut shared = self.lock();
        let f = shared
            .flight
            .as_mut()
            .filter(|f| f.accepting)
            .ok_or_else(|| ServiceError::State("no active flight accepting feed".into()))?;
        let segs = f.segmenter.end_of_stream();
        let header = f.header.clone().unwrap_or_default();
        for raw in segs {
            f.completed += 1;
            self.dispatch(f, raw, &header);
        }
        let completed = f.completed;
        if completed == 0 {
            let msg = format!(
                "feed ended before the first {:.0} s segment completed; no segments",
                self.inner.settings.lanes.segment_s
            );
            self.log_locked(&mut shared, Level::Warn, msg);
        }
        Ok(completed)
    }

    fn dispatch(&self, f: &mut ActiveFlight, raw: RawSegment, header: &FeedHeader) {
        let ctx = Arc::new(DetectContext {
            header: header.clone(),
            pipeline: self.inner.settings.pipeline.clone(),
            policy: self.inner.settings.policy,
            direction: f.meta.direction,
        });
        let lane = raw.bounds.lane as usize;
        if f.senders[lane].send(Job { raw, ctx }).is_err() {
            self.inner.logs.error("service", format!("lane {lane} worker is gone"));
        }
    }
}
