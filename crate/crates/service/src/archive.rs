//! Flight archive: one append-only JSONL record log per flight plus an
//! index of finished flights. Everything is rebuilt from the logs on open,
//! and a flight whose log has no stop entry (the service died mid-flight) is
//! closed as recovered.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use darts_core::aggregation::{SegmentResult, Tau};
use darts_core::condition::Condition;
use darts_core::features::{propagation_speed, FeatureBlock, FlightReport, TimeBase};
use darts_core::feed::GpsFix;
use darts_core::sim::AxisDirection;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logs::LogLine;

pub const INDEX_FILE: &str = "index.jsonl";
pub const FLIGHTS_DIR: &str = "flights";
pub const LOG_FILE: &str = "log.jsonl";
pub const PREVIEW_DIR: &str = "previews";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("flight {0} is already active")]
    Busy(String),
    #[error("flight {0} already exists")]
    Exists(String),
    #[error("flight {0} is closed")]
    Immutable(String),
    #[error("no active flight")]
    NoActive,
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightMeta {
    pub flight_id: String,
    pub freeway: String,
    pub direction: AxisDirection,
    /// Wall clock at start, epoch seconds.
    pub started_at: f64,
    /// Patrol start, epoch seconds; when absent the first feed record's time
    /// is used.
    #[serde(default)]
    pub start_time: Option<f64>,
    pub extraction_period_s: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentStatus {
    Ok,
    Error,
}

/// A segment outcome as pushed to subscribers and stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedSegment {
    /// Publication sequence number, unique across the service lifetime.
    pub seq: u64,
    pub flight_id: String,
    pub segment_id: u32,
    pub lane: u8,
    /// Stream time, epoch seconds.
    pub time_span: (f64, f64),
    /// Drone milepost at segment start and end.
    pub gps_span: Option<(f64, f64)>,
    pub status: SegmentStatus,
    pub verdict: Option<Condition>,
    pub color: Option<String>,
    pub tau: Option<Tau>,
    #[serde(default)]
    pub image_labels: Vec<Condition>,
    pub error: Option<String>,
    pub preview_frames: usize,
    /// Wall clock, epoch seconds.
    pub published_at: f64,
}

impl PublishedSegment {
    pub fn result(&self) -> Option<SegmentResult> {
        if self.status != SegmentStatus::Ok {
            return None;
        }
        Some(SegmentResult {
            segment_id: self.segment_id,
            lane: self.lane,
            time_span: self.time_span,
            gps_span: self.gps_span?,
            image_labels: self.image_labels.clone(),
            tau: self.tau?,
            verdict: self.verdict?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Entry {
    Started(FlightMeta),
    StreamStart { time: f64 },
    Gps(GpsFix),
    Segment(PublishedSegment),
    Log(LogLine),
    Stopped { stopped_at: f64, recovered: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlightStatus {
    Active,
    Archived,
    Recovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSummary {
    pub flight_id: String,
    pub freeway: String,
    pub direction: AxisDirection,
    pub start_time: f64,
    /// UTC, `YYYY-MM-DDTHH:MM:SSZ`.
    pub start_iso: String,
    pub date: String,
    pub stopped_at: Option<f64>,
    pub segments: usize,
    pub errored: usize,
    pub status: FlightStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightDetail {
    pub summary: FlightSummary,
    pub segments: Vec<PublishedSegment>,
    pub features: FeatureBlock,
    pub gps_track: Vec<GpsFix>,
    pub logs: Vec<LogLine>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlightQuery {
    pub freeway: Option<String>,
    /// `YYYY-MM-DD`, UTC.
    pub date: Option<String>,
    /// Start time to the second: RFC 3339 or `YYYY-MM-DDTHH:MM:SS` (UTC).
    pub datetime: Option<String>,
}

#[derive(Debug, Clone)]
struct Flight {
    meta: FlightMeta,
    stream_start: Option<f64>,
    gps: Vec<GpsFix>,
    segments: Vec<PublishedSegment>,
    logs: Vec<LogLine>,
    stopped: Option<(f64, bool)>,
}

impl Flight {
    fn new(meta: FlightMeta) -> Self {
        Self { meta, stream_start: None, gps: Vec::new(), segments: Vec::new(), logs: Vec::new(), stopped: None }
    }

    fn apply(&mut self, e: Entry) {
        match e {
            Entry::Started(m) => self.meta = m,
            Entry::StreamStart { time } => self.stream_start = Some(time),
            Entry::Gps(g) => self.gps.push(g),
            Entry::Segment(s) => self.segments.push(s),
            Entry::Log(l) => self.logs.push(l),
            Entry::Stopped { stopped_at, recovered } => self.stopped = Some((stopped_at, recovered)),
        }
    }

    fn start_time(&self) -> f64 {
        self.meta.start_time.or(self.stream_start).unwrap_or(self.meta.started_at)
    }

    fn summary(&self) -> FlightSummary {
        let start = self.start_time();
        let dt = epoch_to_utc(start);
        FlightSummary {
            flight_id: self.meta.flight_id.clone(),
            freeway: self.meta.freeway.clone(),
            direction: self.meta.direction,
            start_time: start,
            start_iso: dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            date: dt.format("%Y-%m-%d").to_string(),
            stopped_at: self.stopped.map(|s| s.0),
            segments: self.segments.len(),
            errored: self.segments.iter().filter(|s| s.status == SegmentStatus::Error).count(),
            status: match self.stopped {
                None => FlightStatus::Active,
                Some((_, false)) => FlightStatus::Archived,
                Some((_, true)) => FlightStatus::Recovered,
            },
        }
    }

    fn report(&self) -> FlightReport {
        let mut r = FlightReport::new(&self.meta.flight_id, self.start_time(), self.meta.extraction_period_s);
        r.segments = self.segments.iter().filter_map(|s| s.result()).collect();
        r
    }
}

fn epoch_to_utc(t: f64) -> DateTime<Utc> {
    DateTime::from_timestamp(t.floor() as i64, 0).unwrap_or_default()
}

pub fn parse_datetime(s: &str) -> Option<i64> {
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|d| d.and_utc().timestamp())
}

struct ActiveLog {
    id: String,
    file: File,
}

pub struct FlightArchive {
    root: PathBuf,
    flights: BTreeMap<String, Flight>,
    active: Option<ActiveLog>,
}

fn read_entries(path: &Path) -> Result<(Vec<Entry>, usize), ArchiveError> {
    let reader = BufReader::new(File::open(path)?);
    let (mut out, mut bad) = (Vec::new(), 0);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(e) => out.push(e),
            Err(_) => bad += 1,
        }
    }
    Ok((out, bad))
}

fn append_line(file: &mut File, value: &impl Serialize) -> Result<(), ArchiveError> {
    let mut line = serde_json::to_string(value).map_err(|e| ArchiveError::Corrupt(e.to_string()))?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Open for append, starting on a fresh line if the last write was torn.
fn open_append(path: &Path) -> Result<File, ArchiveError> {
    let mut f = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let len = f.metadata()?.len();
    if len > 0 {
        f.seek(SeekFrom::Start(len - 1))?;
        let mut last = [0u8];
        f.read_exact(&mut last)?;
        if last[0] != b'\n' {
            f.write_all(b"\n")?;
        }
    }
    Ok(f)
}

impl FlightArchive {
    pub fn open(root: &Path) -> Result<Self, ArchiveError> {
        fs::create_dir_all(root.join(FLIGHTS_DIR))?;
        let index_path = root.join(INDEX_FILE);
        let mut indexed = std::collections::HashSet::new();
        if index_path.exists() {
            for line in BufReader::new(File::open(&index_path)?).lines() {
                if let Ok(s) = serde_json::from_str::<FlightSummary>(&line?) {
                    indexed.insert(s.flight_id);
                }
            }
        }
        let mut archive = Self { root: root.to_path_buf(), flights: BTreeMap::new(), active: None };
        let mut dirs: Vec<PathBuf> = fs::read_dir(root.join(FLIGHTS_DIR))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(LOG_FILE).exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let log = dir.join(LOG_FILE);
            let (entries, bad) = read_entries(&log)?;
            let Some(Entry::Started(meta)) = entries.first().cloned() else {
                tracing::warn!("skipping {}: no start entry", log.display());
                continue;
            };
            if bad > 0 {
                tracing::warn!("{}: {bad} unreadable lines skipped", log.display());
            }
            let mut flight = Flight::new(meta);
            entries.into_iter().skip(1).for_each(|e| flight.apply(e));
            if flight.stopped.is_none() {
                let stop = Entry::Stopped { stopped_at: crate::logs::now_epoch(), recovered: true };
                append_line(&mut open_append(&log)?, &stop)?;
                flight.apply(stop);
            }
            if !indexed.contains(&flight.meta.flight_id) {
                append_line(&mut open_append(&index_path)?, &flight.summary())?;
            }
            archive.flights.insert(flight.meta.flight_id.clone(), flight);
        }
        Ok(archive)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn flight_dir(&self, id: &str) -> PathBuf {
        self.root.join(FLIGHTS_DIR).join(id)
    }

    pub fn active_id(&self) -> Option<&str> {
        self.active.as_ref().map(|a| a.id.as_str())
    }

    pub fn begin(&mut self, meta: FlightMeta) -> Result<(), ArchiveError> {
        if let Some(a) = &self.active {
            return Err(ArchiveError::Busy(a.id.clone()));
        }
        let id = meta.flight_id.clone();
        if id.is_empty() || id.contains(['/', '\\', '.']) {
            return Err(ArchiveError::Corrupt(format!("bad flight id {id:?}")));
        }
        if self.flights.contains_key(&id) {
            return Err(ArchiveError::Exists(id));
        }
        let dir = self.flight_dir(&id);
        fs::create_dir_all(dir.join(PREVIEW_DIR))?;
        let mut file = open_append(&dir.join(LOG_FILE))?;
        let entry = Entry::Started(meta.clone());
        append_line(&mut file, &entry)?;
        self.flights.insert(id.clone(), Flight::new(meta));
        self.active = Some(ActiveLog { id, file });
        Ok(())
    }

    fn append(&mut self, id: &str, entry: Entry) -> Result<(), ArchiveError> {
        let active = self.active.as_mut().filter(|a| a.id == id).ok_or_else(|| ArchiveError::Immutable(id.into()))?;
        append_line(&mut active.file, &entry)?;
        self.flights.get_mut(id).expect("active flight is loaded").apply(entry);
        Ok(())
    }

    pub fn record_stream_start(&mut self, id: &str, time: f64) -> Result<(), ArchiveError> {
        if self.flights.get(id).is_some_and(|f| f.stream_start.is_some()) {
            return Ok(());
        }
        self.append(id, Entry::StreamStart { time })
    }

    pub fn append_gps(&mut self, id: &str, fix: GpsFix) -> Result<(), ArchiveError> {
        self.append(id, Entry::Gps(fix))
    }

    pub fn append_log(&mut self, id: &str, line: LogLine) -> Result<(), ArchiveError> {
        self.append(id, Entry::Log(line))
    }

    /// Store a segment and its preview strip; the preview is written first
    /// so a stored segment never points at a missing file.
    pub fn append_segment(&mut self, seg: PublishedSegment, preview_png: Option<&[u8]>) -> Result<(), ArchiveError> {
        let id = seg.flight_id.clone();
        if self.active_id() != Some(id.as_str()) {
            return Err(ArchiveError::Immutable(id));
        }
        if let Some(png) = preview_png {
            let path = self.flight_dir(&id).join(PREVIEW_DIR).join(format!("{}.png", seg.segment_id));
            let tmp = path.with_extension("png.tmp");
            fs::write(&tmp, png)?;
            fs::rename(&tmp, &path)?;
        }
        self.append(&id, Entry::Segment(seg))
    }

    pub fn finish(&mut self, stopped_at: f64) -> Result<FlightSummary, ArchiveError> {
        let id = self.active.as_ref().ok_or(ArchiveError::NoActive)?.id.clone();
        self.append(&id, Entry::Stopped { stopped_at, recovered: false })?;
        let active = self.active.take().unwrap();
        active.file.sync_all()?;
        let summary = self.flights[&id].summary();
        let mut index = open_append(&self.root.join(INDEX_FILE))?;
        append_line(&mut index, &summary)?;
        index.sync_all()?;
        Ok(summary)
    }

    /// Matching flights by start time. Misses give an empty list.
    pub fn query(&self, q: &FlightQuery) -> Vec<FlightSummary> {
        let date = q.date.as_deref().map(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok());
        let exact = q.datetime.as_deref().map(parse_datetime);
        let mut out: Vec<FlightSummary> = self
            .flights
            .values()
            .map(Flight::summary)
            .filter(|s| q.freeway.as_deref().is_none_or(|f| s.freeway.eq_ignore_ascii_case(f)))
            .filter(|s| match date {
                None => true,
                Some(None) => false,
                Some(Some(d)) => epoch_to_utc(s.start_time).date_naive() == d,
            })
            .filter(|s| match exact {
                None => true,
                Some(None) => false,
                Some(Some(t)) => s.start_time.floor() as i64 == t,
            })
            .collect();
        out.sort_by(|a, b| a.start_time.total_cmp(&b.start_time).then(a.flight_id.cmp(&b.flight_id)));
        out
    }

    pub fn summary(&self, id: &str) -> Option<FlightSummary> {
        self.flights.get(id).map(Flight::summary)
    }

    pub fn report(&self, id: &str) -> Option<FlightReport> {
        self.flights.get(id).map(Flight::report)
    }

    /// Features of a flight, with propagation from the latest earlier pass on
    /// the same freeway when both passes saw congestion.
    pub fn features(&self, id: &str) -> Option<FeatureBlock> {
        let f = self.flights.get(id)?;
        let report = f.report();
        let block = report.features();
        let earlier = self
            .flights
            .values()
            .filter(|o| o.meta.flight_id != id && o.meta.freeway.eq_ignore_ascii_case(&f.meta.freeway))
            .filter(|o| o.start_time() < f.start_time())
            .max_by(|a, b| a.start_time().total_cmp(&b.start_time()));
        Some(match earlier.and_then(|o| propagation_speed(&o.report(), &report, TimeBase::TailObservation).ok()) {
            Some(p) => block.with_propagation(p),
            None => block,
        })
    }

    pub fn detail(&self, id: &str) -> Option<FlightDetail> {
        let f = self.flights.get(id)?;
        Some(FlightDetail {
            summary: f.summary(),
            segments: f.segments.clone(),
            features: self.features(id)?,
            gps_track: f.gps.clone(),
            logs: f.logs.clone(),
        })
    }

    pub fn segment(&self, id: &str, segment_id: u32) -> Option<PublishedSegment> {
        self.flights.get(id)?.segments.iter().find(|s| s.segment_id == segment_id).cloned()
    }

    pub fn preview_path(&self, id: &str, segment_id: u32) -> Option<PathBuf> {
        self.flights.get(id)?;
        let p = self.flight_dir(id).join(PREVIEW_DIR).join(format!("{segment_id}.png"));
        p.exists().then_some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, freeway: &str, start: f64) -> FlightMeta {
        FlightMeta {
            flight_id: id.into(),
            freeway: freeway.into(),
            direction: AxisDirection::Increasing,
            started_at: 1.0,
            start_time: Some(start),
            extraction_period_s: 20,
            notes: None,
        }
    }

    fn seg(flight: &str, id: u32, verdict: Condition, span: (f64, f64), t: f64) -> PublishedSegment {
        let r = SegmentResult::new(
            id,
            (id % 3) as u8,
            (t + 40.0 * id as f64, t + 120.0 + 40.0 * id as f64),
            span,
            vec![verdict; 101],
            &Default::default(),
        )
        .unwrap();
        PublishedSegment {
            seq: id as u64,
            flight_id: flight.into(),
            segment_id: id,
            lane: r.lane,
            time_span: r.time_span,
            gps_span: Some(r.gps_span),
            status: SegmentStatus::Ok,
            verdict: Some(r.verdict),
            color: Some(r.verdict.color().into()),
            tau: Some(r.tau),
            image_labels: r.image_labels,
            error: None,
            preview_frames: 0,
            published_at: 0.0,
        }
    }

    // 2024-04-18T14:00:00Z and 11 and 23 minutes later
    const T0: f64 = 1_713_448_800.0;

    #[test]
    fn three_flights_one_exact_datetime_hit() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FlightArchive::open(dir.path()).unwrap();
        for (i, dt) in [0.0, 660.0, 1380.0].into_iter().enumerate() {
            a.begin(meta(&format!("f{i}"), "I-75", T0 + dt)).unwrap();
            a.finish(T0 + dt + 300.0).unwrap();
        }
        let q = |freeway: Option<&str>, date: Option<&str>, datetime: Option<&str>| {
            a.query(&FlightQuery { freeway: freeway.map(Into::into), date: date.map(Into::into), datetime: datetime.map(Into::into) })
        };
        assert_eq!(q(Some("i-75"), Some("2024-04-18"), None).len(), 3);
        let hit = q(Some("I-75"), None, Some("2024-04-18T14:11:00Z"));
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].flight_id, "f1");
        assert_eq!(q(None, None, Some("2024-04-18 14:23:00")).len(), 1);
        assert!(q(Some("I-4"), None, None).is_empty());
        assert!(q(None, Some("2024-04-19"), None).is_empty());
        assert!(q(None, Some("not a date"), None).is_empty());
    }

    #[test]
    fn closed_flights_refuse_appends() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FlightArchive::open(dir.path()).unwrap();
        a.begin(meta("f0", "I-75", T0)).unwrap();
        assert!(matches!(a.begin(meta("f1", "I-75", T0)), Err(ArchiveError::Busy(_))));
        a.append_segment(seg("f0", 0, Condition::Normal, (1.0, 1.3), T0), Some(b"png")).unwrap();
        a.finish(T0 + 10.0).unwrap();
        assert!(matches!(a.append_segment(seg("f0", 1, Condition::Normal, (1.0, 1.3), T0), None), Err(ArchiveError::Immutable(_))));
        assert!(matches!(a.finish(T0), Err(ArchiveError::NoActive)));
        assert!(matches!(a.begin(meta("f0", "I-75", T0)), Err(ArchiveError::Exists(_))));
        assert_eq!(fs::read(a.preview_path("f0", 0).unwrap()).unwrap(), b"png");
        assert!(a.preview_path("f0", 1).is_none());
    }

    #[test]
    fn reopen_restores_flights_and_recovers_interrupted_ones() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut a = FlightArchive::open(dir.path()).unwrap();
            a.begin(meta("done", "I-75", T0)).unwrap();
            a.append_segment(seg("done", 0, Condition::Incident, (1.0, 1.3), T0), None).unwrap();
            a.finish(T0 + 100.0).unwrap();
            a.begin(meta("crashed", "I-75", T0 + 660.0)).unwrap();
            a.append_segment(seg("crashed", 0, Condition::Incident, (1.0, 1.4), T0 + 660.0), None).unwrap();
        }
        // torn final write
        let log = dir.path().join(FLIGHTS_DIR).join("crashed").join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"kind\":\"gps\",\"timest").unwrap();
        drop(f);

        let a = FlightArchive::open(dir.path()).unwrap();
        let all = a.query(&FlightQuery::default());
        assert_eq!(all.iter().map(|s| (s.flight_id.as_str(), s.status)).collect::<Vec<_>>(), vec![
            ("done", FlightStatus::Archived),
            ("crashed", FlightStatus::Recovered),
        ]);
        assert_eq!(all[1].segments, 1);
        let index = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(index.lines().count(), 2);
        // second open appends nothing
        drop(a);
        let a = FlightArchive::open(dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap(), index);
        assert!(a.active_id().is_none());
        let feats = a.features("crashed").unwrap();
        assert_eq!(feats.congestion_length_mi, Some(0.4));
        let p = feats.propagation.unwrap();
        // 0.3 mi to 0.4 mi over 11 minutes of tail observations
        assert_eq!(p.flight_pair, ("done".to_string(), "crashed".to_string()));
        assert_eq!(p.speed_ft_per_min, 48.0);
    }
}
