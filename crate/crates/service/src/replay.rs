//! Drone-side stand-in: stream a recorded feed directory to the service at
//! its original cadence, optionally sped up.

use std::path::Path;
use std::time::Duration;

use darts_core::feed::{Feed, FeedError, FeedRecord, LoadStats};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use crate::api::IngestReport;

/// Share of undecodable lines above which a replay is refused.
pub const MAX_MALFORMED: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("feed: {0}")]
    Feed(#[from] FeedError),
    #[error("{malformed} of {lines} feed lines are malformed (limit 5%)")]
    TooMalformed { malformed: usize, lines: usize },
    #[error("speed factor must be at least 1, got {0}")]
    BadSpeed(f64),
    #[error("http: {0}")]
    Http(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub lines: usize,
    pub malformed: usize,
    pub frames: usize,
    pub gps: usize,
    /// Feed duration from first to last record, stream seconds.
    pub span_s: f64,
    pub wall_s: f64,
}

/// Header plus time-ordered records of a feed directory.
pub fn load(dir: &Path) -> Result<(Vec<FeedRecord>, LoadStats), ReplayError> {
    let (feed, stats) = Feed::read_dir_lenient(dir)?;
    if stats.malformed_fraction() > MAX_MALFORMED {
        return Err(ReplayError::TooMalformed { malformed: stats.malformed, lines: stats.lines });
    }
    if stats.malformed > 0 {
        tracing::warn!("{} of {} feed lines skipped as malformed", stats.malformed, stats.lines);
    }
    Ok((feed.records(), stats))
}

/// Emit each record when `(t - t_first) / speed` has elapsed since the first.
/// Deadlines are absolute, so sleeping never accumulates drift.
pub fn paced(records: Vec<FeedRecord>, speed: f64) -> impl Stream<Item = FeedRecord> {
    let t_first = records.iter().find_map(|r| r.timestamp()).unwrap_or(0.0);
    let start = Instant::now();
    futures::stream::iter(records).then(move |r| async move {
        if let Some(t) = r.timestamp() {
            let at = start + Duration::from_secs_f64(((t - t_first) / speed).max(0.0));
            tokio::time::sleep_until(at).await;
        }
        r
    })
}

fn check_speed(speed: f64) -> Result<(), ReplayError> {
    if speed.is_finite() && speed >= 1.0 {
        Ok(())
    } else {
        Err(ReplayError::BadSpeed(speed))
    }
}

fn stats_of(records: &[FeedRecord], load: LoadStats) -> ReplayStats {
    let times: Vec<f64> = records.iter().filter_map(|r| r.timestamp()).collect();
    ReplayStats {
        lines: load.lines,
        malformed: load.malformed,
        frames: records.iter().filter(|r| matches!(r, FeedRecord::Frame(_))).count(),
        gps: records.iter().filter(|r| matches!(r, FeedRecord::Gps(_))).count(),
        span_s: match (times.first(), times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        },
        wall_s: 0.0,
    }
}

/// Replay into an in-process sink; the sink sees records in cadence.
pub async fn replay_into(
    dir: &Path,
    speed: f64,
    mut sink: impl FnMut(FeedRecord),
) -> Result<ReplayStats, ReplayError> {
    check_speed(speed)?;
    let (records, load_stats) = load(dir)?;
    let mut stats = stats_of(&records, load_stats);
    let t = std::time::Instant::now();
    let mut s = std::pin::pin!(paced(records, speed));
    while let Some(r) = s.next().await {
        sink(r);
    }
    stats.wall_s = t.elapsed().as_secs_f64();
    Ok(stats)
}

/// Stream a feed directory to `POST {target}/feed` as one chunked request.
/// The body ends when the feed does, which the service treats as the end of
/// the stream.
pub async fn replay_dir(
    dir: &Path,
    speed: f64,
    target: &str,
    key: &str,
) -> Result<(ReplayStats, IngestReport), ReplayError> {
    check_speed(speed)?;
    let (records, load_stats) = load(dir)?;
    let mut stats = stats_of(&records, load_stats);
    let t = std::time::Instant::now();
    let body = paced(records, speed).map(|r| {
        let mut line = r.encode_line();
        line.push('\n');
        Ok::<_, std::io::Error>(line)
    });
    let url = format!("{}/feed", target.trim_end_matches('/'));
    let resp = reqwest::Client::new()
        .post(url)
        .bearer_auth(key)
        .header(reqwest::header::CONTENT_TYPE, "application/x-ndjson")
        .body(reqwest::Body::wrap_stream(body))
        .send()
        .await
        .map_err(|e| ReplayError::Http(e.to_string()))?;
    stats.wall_s = t.elapsed().as_secs_f64();
    let status = resp.status();
    if !status.is_success() {
        let text = resp.text().await.unwrap_or_default();
        return Err(ReplayError::Http(format!("{status}: {text}")));
    }
    let report = resp.json::<IngestReport>().await.map_err(|e| ReplayError::Http(e.to_string()))?;
    Ok((stats, report))
}
