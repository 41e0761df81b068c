//! Workstation-side detection service: ingest the drone feed, cut it into
//! staggered lanes of fixed-length segments, classify each segment, archive
//! the flight and serve the operator API.

pub mod api;
pub mod archive;
pub mod auth;
pub mod config;
pub mod detect;
pub mod lanes;
pub mod logs;
pub mod replay;
pub mod service;

use thiserror::Error;

pub use api::{router, serve, AppState, IngestReport};
pub use archive::{FlightArchive, FlightDetail, FlightQuery, FlightSummary, PublishedSegment, SegmentStatus};
pub use config::{LaneConfig, ServiceConfig};
pub use detect::{detect_segment, Classifier, DetectContext};
pub use lanes::{segment_lanes, RawSegment, SegmentBounds, Segmenter};
pub use replay::{replay_dir, ReplayError, ReplayStats};
pub use service::{Mode, ResultEvent, Service, ServiceState, Settings, StartRequest};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    State(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("archive: {0}")]
    Archive(#[from] archive::ArchiveError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal: {0}")]
    Internal(String),
}
