//! Desk-scale drone patrol incident detection: a freeway patrol simulator
//! standing in for the aircraft and thermal camera, the trajectory-image
//! pipeline, image-to-segment aggregation and incident feature extraction.
//!
//! The classifier lives in the `tcdnet` crate and the operator service in
//! `darts-service`; both consume the types defined here.

pub mod aggregation;
pub mod condition;
pub mod feed;
pub mod features;
pub mod pipeline;
pub mod sim;
pub mod units;

pub use aggregation::{AggregationPolicy, SegmentResult, Tau};
pub use condition::Condition;
pub use feed::{Detection, FeedRecord, FrameDetections, GpsFix};
