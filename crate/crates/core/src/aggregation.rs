//! Image-to-segment aggregation: the proportions of a segment's trajectory
//! images classified incident / recurrent / normal decide the verdict, and a
//! grid sweep over the two thresholds selects the operating policy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::Condition;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("segment has no classified images")]
    Empty,
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("sweep table is empty")]
    EmptySweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub incident_threshold: f64,
    pub normal_threshold: f64,
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        Self { incident_threshold: 0.1, normal_threshold: 0.6 }
    }
}

impl AggregationPolicy {
    pub fn new(incident_threshold: f64, normal_threshold: f64) -> Result<Self, AggregationError> {
        for t in [incident_threshold, normal_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(AggregationError::BadThreshold(t));
            }
        }
        Ok(Self { incident_threshold, normal_threshold })
    }

    /// Verdict for given proportions. Both comparisons are strict; the
    /// recurrent share never gates the decision.
    pub fn decide(&self, tau: &Tau) -> Condition {
        if tau.incident > self.incident_threshold {
            Condition::Incident
        } else if tau.normal > self.normal_threshold {
            Condition::Normal
        } else {
            Condition::Recurrent
        }
    }
}

/// Class proportions of one segment's image labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau {
    pub incident: f64,
    pub recurrent: f64,
    pub normal: f64,
}

impl Tau {
    pub fn from_labels(labels: &[Condition]) -> Result<Self, AggregationError> {
        if labels.is_empty() {
            return Err(AggregationError::Empty);
        }
        let mut counts = [0usize; 3];
        for c in labels {
            counts[c.index()] += 1;
        }
        let n = labels.len() as f64;
        Ok(Tau {
            normal: counts[0] as f64 / n,
            recurrent: counts[1] as f64 / n,
            incident: counts[2] as f64 / n,
        })
    }
}

pub fn aggregate(labels: &[Condition], policy: &AggregationPolicy) -> Result<(Condition, Tau), AggregationError> {
    let tau = Tau::from_labels(labels)?;
    Ok((policy.decide(&tau), tau))
}

/// Detection result of one segment of the patrol feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment_id: u32,
    pub lane: u8,
    /// Epoch seconds.
    pub time_span: (f64, f64),
    /// Drone milepost at segment start and end.
    pub gps_span: (f64, f64),
    /// Classified images, one per 1 s window start from `time_span.0`.
    pub image_labels: Vec<Condition>,
    pub tau: Tau,
    pub verdict: Condition,
}

impl SegmentResult {
    pub fn new(
        segment_id: u32,
        lane: u8,
        time_span: (f64, f64),
        gps_span: (f64, f64),
        image_labels: Vec<Condition>,
        policy: &AggregationPolicy,
    ) -> Result<Self, AggregationError> {
        let (verdict, tau) = aggregate(&image_labels, policy)?;
        Ok(Self { segment_id, lane, time_span, gps_span, image_labels, tau, verdict })
    }

    /// Window start time of image `i`.
    pub fn image_start(&self, i: usize) -> f64 {
        self.time_span.0 + i as f64
    }
}

/// One row of the threshold sweep, in the published column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub incident_threshold: f64,
    pub normal_threshold: f64,
    pub accuracy: f64,
    pub correct: usize,
}

/// Thresholds 0.1 ..= 0.9 in steps of 0.1.
pub fn sweep_grid() -> impl Iterator<Item = f64> {
    (1..=9).map(|k| k as f64 / 10.0)
}

/// Video-level accuracy for each of the 81 threshold combinations, incident
/// threshold in the outer loop.
pub fn sweep(videos: &[(Vec<Condition>, Condition)]) -> Result<Vec<SweepRow>, AggregationError> {
    let taus = videos
        .iter()
        .map(|(labels, truth)| Ok((Tau::from_labels(labels)?, *truth)))
        .collect::<Result<Vec<_>, AggregationError>>()?;
    let mut rows = Vec::with_capacity(81);
    for ti in sweep_grid() {
        for tn in sweep_grid() {
            let policy = AggregationPolicy { incident_threshold: ti, normal_threshold: tn };
            let correct = taus.iter().filter(|(tau, truth)| policy.decide(tau) == *truth).count();
            let accuracy = if taus.is_empty() { 0.0 } else { correct as f64 / taus.len() as f64 };
            rows.push(SweepRow { index: rows.len() + 1, incident_threshold: ti, normal_threshold: tn, accuracy, correct });
        }
    }
    Ok(rows)
}

/// Among the rows with maximal accuracy pick the lowest incident threshold,
/// then the lowest normal threshold.
pub fn select_policy(rows: &[SweepRow]) -> Result<AggregationPolicy, AggregationError> {
    let best = rows
        .iter()
        .map(|r| r.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    rows.iter()
        .filter(|r| r.accuracy == best)
        .min_by(|a, b| {
            a.incident_threshold
                .total_cmp(&b.incident_threshold)
                .then(a.normal_threshold.total_cmp(&b.normal_threshold))
        })
        .map(|r| AggregationPolicy { incident_threshold: r.incident_threshold, normal_threshold: r.normal_threshold })
        .ok_or(AggregationError::EmptySweep)
}

pub const SWEEP_COLUMNS: [&str; 5] =
    ["Index", "Incident Threshold", "Normal Threshold", "Accuracy", "Correctly Classified Videos"];

/// Tab-separated sweep table with a header line.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = SWEEP_COLUMNS.join("\t");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.1}\t{:.1}\t{:.2}\t{}",
            r.index, r.incident_threshold, r.normal_threshold, r.accuracy, r.correct
        );
    }
    out
}
