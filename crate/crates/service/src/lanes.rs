//! Staggered lane segmentation of the live feed.
//!
//! Segments are cut on a lane clock. It equals stream time until the first
//! pause; the feed gap spent paused is then removed, so a lane resumes cutting
//! where it stopped instead of losing the segment it was filling.

use std::collections::VecDeque;

use darts_core::feed::{FeedRecord, FrameDetections, GpsFix};
use serde::{Deserialize, Serialize};

use crate::config::LaneConfig;

const EPS: f64 = 1e-9;
/// GPS margin kept around a segment so its endpoints can be interpolated.
const GPS_MARGIN_S: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBounds {
    /// `index * lanes + lane`, which is start-time order when the stagger
    /// tiles the segment length.
    pub segment_id: u32,
    pub lane: u8,
    pub index: u32,
    pub start: f64,
    pub end: f64,
}

impl LaneConfig {
    pub fn bounds(&self, t0: f64, lane: u8, index: u32) -> SegmentBounds {
        let start = t0 + lane as f64 * self.stagger_s + index as f64 * self.segment_s;
        SegmentBounds {
            segment_id: index * self.count as u32 + lane as u32,
            lane,
            index,
            start,
            end: start + self.segment_s,
        }
    }
}

/// Complete segments of a stream spanning `[t0, t_end]`, in completion
/// order (end time, then lane).
pub fn segment_lanes(t0: f64, t_end: f64, lanes: &LaneConfig) -> Vec<SegmentBounds> {
    let mut out = Vec::new();
    for lane in 0..lanes.count {
        let mut index = 0;
        loop {
            let b = lanes.bounds(t0, lane, index);
            if b.end > t_end + EPS {
                break;
            }
            out.push(b);
            index += 1;
        }
    }
    sort_completion(&mut out);
    out
}

fn sort_completion(v: &mut [SegmentBounds]) {
    v.sort_by(|a, b| a.end.total_cmp(&b.end).then(a.lane.cmp(&b.lane)));
}

/// A completed segment with its buffered feed, timestamps on the lane clock.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub bounds: SegmentBounds,
    /// `[start, end]` mapped back to stream time.
    pub stream_span: (f64, f64),
    pub frames: Vec<FrameDetections>,
    pub gps: Vec<GpsFix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Buffered,
    /// Arrived while paused.
    DiscardedPaused,
    /// Older than an already accepted record.
    Late,
    /// Header lines carry no time.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneState {
    pub lane: u8,
    pub completed: u32,
    /// Segment currently filling, stream time; absent before the first record.
    pub filling: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    lanes: LaneConfig,
    frame_dt: f64,
    t0: Option<f64>,
    offset: f64,
    /// `(lane time, offset)` from which each offset applies.
    shifts: Vec<(f64, f64)>,
    last_lane_t: Option<f64>,
    last_stream_t: Option<f64>,
    paused: bool,
    rejoin: bool,
    next_index: Vec<u32>,
    frames: VecDeque<FrameDetections>,
    gps: VecDeque<GpsFix>,
}

impl Segmenter {
    pub fn new(lanes: LaneConfig, fps: f64) -> Self {
        Self {
            lanes,
            frame_dt: 1.0 / fps,
            t0: None,
            offset: 0.0,
            shifts: Vec::new(),
            last_lane_t: None,
            last_stream_t: None,
            paused: false,
            rejoin: false,
            next_index: vec![0; lanes.count as usize],
            frames: VecDeque::new(),
            gps: VecDeque::new(),
        }
    }

    pub fn set_fps(&mut self, fps: f64) {
        self.frame_dt = 1.0 / fps;
    }

    pub fn t0(&self) -> Option<f64> {
        self.t0
    }

    pub fn completed(&self) -> u32 {
        self.next_index.iter().sum()
    }

    pub fn pause(&mut self) {
        self.paused = true;
    }

    pub fn resume(&mut self) {
        if self.paused {
            self.paused = false;
            self.rejoin = self.last_stream_t.is_some();
        }
    }

    pub fn push(&mut self, record: FeedRecord) -> (Disposition, Vec<RawSegment>) {
        let Some(ts) = record.timestamp() else {
            return (Disposition::Ignored, Vec::new());
        };
        if self.paused {
            return (Disposition::DiscardedPaused, Vec::new());
        }
        if self.last_stream_t.is_some_and(|last| ts < last) {
            return (Disposition::Late, Vec::new());
        }
        if self.rejoin {
            self.rejoin = false;
            let (last_s, last_l) = (self.last_stream_t.unwrap(), self.last_lane_t.unwrap());
            // microsecond rounding keeps the lane clock on the frame grid
            let removed = (((ts - last_s - self.frame_dt) * 1e6).round() / 1e6).max(0.0);
            if removed > 0.0 {
                self.offset += removed;
                self.shifts.push((last_l + self.frame_dt, self.offset));
            }
        }
        let lane_t = ts - self.offset;
        self.t0.get_or_insert(lane_t);
        match record {
            FeedRecord::Frame(mut f) => {
                f.timestamp = lane_t;
                self.frames.push_back(f);
            }
            FeedRecord::Gps(mut g) => {
                g.timestamp = lane_t;
                self.gps.push_back(g);
            }
            FeedRecord::Header(_) => unreachable!(),
        }
        self.last_lane_t = Some(lane_t);
        self.last_stream_t = Some(ts);
        (Disposition::Buffered, self.cut(lane_t + EPS))
    }

    /// Flush segments the stream has fully covered: the last record counts as
    /// lasting one frame interval.
    pub fn end_of_stream(&mut self) -> Vec<RawSegment> {
        match self.last_lane_t {
            Some(t) => self.cut(t + self.frame_dt + 1e-6),
            None => Vec::new(),
        }
    }

    pub fn lane_states(&self) -> Vec<LaneState> {
        (0..self.lanes.count)
            .map(|lane| LaneState {
                lane,
                completed: self.next_index[lane as usize],
                filling: self.t0.map(|t0| {
                    let b = self.lanes.bounds(t0, lane, self.next_index[lane as usize]);
                    (self.to_stream(b.start), self.to_stream(b.end))
                }),
            })
            .collect()
    }

    fn to_stream(&self, lane_t: f64) -> f64 {
        let off = self.shifts.iter().rev().find(|(from, _)| *from <= lane_t + EPS).map_or(0.0, |s| s.1);
        lane_t + off
    }

    fn cut(&mut self, covered: f64) -> Vec<RawSegment> {
        let Some(t0) = self.t0 else { return Vec::new() };
        let mut done = Vec::new();
        for lane in 0..self.lanes.count {
            loop {
                let b = self.lanes.bounds(t0, lane, self.next_index[lane as usize]);
                if b.end > covered {
                    break;
                }
                done.push(b);
                self.next_index[lane as usize] += 1;
            }
        }
        sort_completion(&mut done);
        let out = done
            .into_iter()
            .map(|b| RawSegment {
                bounds: b,
                stream_span: (self.to_stream(b.start), self.to_stream(b.end)),
                frames: self.frames.iter().filter(|f| f.timestamp >= b.start && f.timestamp < b.end).cloned().collect(),
                gps: self
                    .gps
                    .iter()
                    .filter(|g| g.timestamp >= b.start - GPS_MARGIN_S && g.timestamp <= b.end + GPS_MARGIN_S)
                    .copied()
                    .collect(),
            })
            .collect();
        self.prune(t0);
        out
    }

    fn prune(&mut self, t0: f64) {
        let keep_from = (0..self.lanes.count)
            .map(|lane| self.lanes.bounds(t0, lane, self.next_index[lane as usize]).start)
            .fold(f64::INFINITY, f64::min);
        while self.frames.front().is_some_and(|f| f.timestamp < keep_from) {
            self.frames.pop_front();
        }
        while self.gps.front().is_some_and(|g| g.timestamp < keep_from - GPS_MARGIN_S) {
            self.gps.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lanes() -> LaneConfig {
        LaneConfig::default()
    }

    fn spans(v: &[SegmentBounds]) -> Vec<(u8, f64, f64)> {
        v.iter().map(|b| (b.lane, b.start, b.end)).collect()
    }

    /// Frames at 10 fps and GPS at 1 Hz over `[t0, t0 + secs)`, GPS first on
    /// shared timestamps.
    fn stream(t0: f64, secs: u32) -> Vec<FeedRecord> {
        let mut out = Vec::new();
        for s in 0..secs {
            out.push(FeedRecord::Gps(GpsFix {
                timestamp: t0 + s as f64,
                latitude: 0.0,
                longitude: 0.0,
                milepost: s as f64 * 0.003,
                altitude_ft: 200.0,
            }));
            for k in 0..10 {
                out.push(FeedRecord::Frame(FrameDetections {
                    frame_index: (s * 10 + k) as u64,
                    timestamp: t0 + s as f64 + k as f64 / 10.0,
                    detections: Vec::new(),
                }));
            }
        }
        out
    }

    fn run(seg: &mut Segmenter, records: Vec<FeedRecord>) -> Vec<(f64, RawSegment)> {
        let mut out = Vec::new();
        for r in records {
            let t = r.timestamp().unwrap();
            out.extend(seg.push(r).1.into_iter().map(|s| (t, s)));
        }
        out
    }

    #[test]
    fn six_minute_stream_gives_the_staggered_schedule() {
        let got = segment_lanes(0.0, 360.0, &lanes());
        let mut by_lane = spans(&got);
        by_lane.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        assert_eq!(
            by_lane,
            vec![
                (0, 0.0, 120.0),
                (0, 120.0, 240.0),
                (0, 240.0, 360.0),
                (1, 40.0, 160.0),
                (1, 160.0, 280.0),
                (2, 80.0, 200.0),
                (2, 200.0, 320.0),
            ]
        );
        let ends: Vec<f64> = got.iter().map(|b| b.end).collect();
        assert_eq!(ends, vec![120.0, 160.0, 200.0, 240.0, 280.0, 320.0, 360.0]);
        let ids: Vec<u32> = got.iter().map(|b| b.segment_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn short_stream_completes_nothing() {
        assert!(segment_lanes(0.0, 119.0, &lanes()).is_empty());
        let mut seg = Segmenter::new(lanes(), 10.0);
        assert!(run(&mut seg, stream(0.0, 119)).is_empty());
        assert!(seg.end_of_stream().is_empty());
        assert_eq!(seg.completed(), 0);
    }

    #[test]
    fn live_stream_completes_on_schedule() {
        let mut seg = Segmenter::new(lanes(), 10.0);
        let mut got = run(&mut seg, stream(1000.0, 360));
        // the final frame is at 359.9; the end of the stream covers 360
        assert_eq!(got.len(), 6);
        got.extend(seg.end_of_stream().into_iter().map(|s| (1360.0, s)));
        let at: Vec<f64> = got.iter().map(|(t, _)| t - 1000.0).collect();
        assert_eq!(at, vec![120.0, 160.0, 200.0, 240.0, 280.0, 320.0, 360.0]);
        for (_, s) in &got {
            assert_eq!(s.frames.len(), 1200);
            assert_eq!(s.frames[0].timestamp, s.bounds.start);
            assert_eq!(s.stream_span, (s.bounds.start, s.bounds.end));
            assert!(s.gps.first().unwrap().timestamp <= s.bounds.start);
            assert!(s.gps.last().unwrap().timestamp >= s.bounds.end - 1.0);
        }
    }

    #[test]
    fn pause_discards_feed_and_shifts_the_lane_clock() {
        let mut seg = Segmenter::new(lanes(), 10.0);
        let records = stream(0.0, 400);
        let (before, rest): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.timestamp().unwrap() < 100.0);
        let (during, after): (Vec<_>, Vec<_>) = rest.into_iter().partition(|r| r.timestamp().unwrap() < 150.0);
        assert!(run(&mut seg, before).is_empty());
        seg.pause();
        for r in during {
            assert_eq!(seg.push(r).0, Disposition::DiscardedPaused);
        }
        seg.resume();
        let got = run(&mut seg, after);
        // 50 s removed: lane 0 closes [0,120) when the stream reaches 170
        let (t, first) = &got[0];
        assert_eq!(*t, 170.0);
        assert_eq!((first.bounds.start, first.bounds.end), (0.0, 120.0));
        assert_eq!(first.stream_span, (0.0, 170.0));
        assert_eq!(first.frames.len(), 1200);
        let times: Vec<f64> = first.frames.iter().map(|f| f.timestamp).collect();
        assert!(times.windows(2).all(|w| (w[1] - w[0] - 0.1).abs() < 1e-6), "lane clock has no hole");
        let lane1 = got.iter().find(|(_, s)| s.bounds.lane == 1).unwrap();
        assert_eq!(lane1.1.stream_span, (40.0, 210.0));
    }

    #[test]
    fn late_records_are_dropped() {
        let mut seg = Segmenter::new(lanes(), 10.0);
        run(&mut seg, stream(0.0, 5));
        let late = FeedRecord::Frame(FrameDetections { frame_index: 0, timestamp: 1.0, detections: vec![] });
        assert_eq!(seg.push(late).0, Disposition::Late);
    }

    proptest! {
        #[test]
        fn every_instant_after_warmup_is_in_one_segment_per_lane(t0 in -1e4f64..1e4, dt in 80.0f64..2000.0) {
            let l = lanes();
            let t = t0 + dt;
            for lane in 0..l.count {
                let hits = (0..40).map(|j| l.bounds(t0, lane, j)).filter(|b| b.start <= t && t < b.end).count();
                prop_assert_eq!(hits, 1);
            }
        }

        #[test]
        fn completions_follow_the_schedule(secs in 100u32..700) {
            let mut seg = Segmenter::new(lanes(), 10.0);
            let mut got = run(&mut seg, stream(50.0, secs));
            got.extend(seg.end_of_stream().into_iter().map(|s| (f64::INFINITY, s)));
            let want = segment_lanes(50.0, 50.0 + secs as f64, &lanes());
            let bounds: Vec<SegmentBounds> = got.iter().map(|(_, s)| s.bounds).collect();
            prop_assert_eq!(&bounds, &want);
            for (t, s) in &got {
                prop_assert!(s.bounds.end <= *t);
                prop_assert_eq!(s.frames.len(), 1200);
            }
            if want.len() > 1 {
                let gaps: Vec<f64> = want.windows(2).map(|w| w[1].end - w[0].end).collect();
                prop_assert!(gaps.iter().all(|g| (g - 40.0).abs() < 1e-9));
            }
        }
    }
}
