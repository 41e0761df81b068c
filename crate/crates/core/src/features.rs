//! Incident features from classified segments: congestion length, its
//! propagation between patrol passes, the scene window and the moment of
//! first detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::SegmentResult;
use crate::condition::Condition;
use crate::units::FT_PER_MILE;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("flight {0} has no congestion length")]
    MissingLength(String),
    #[error("flights {0} and {1} share the same observation time")]
    ZeroInterval(String, String),
}

/// A maximal run of consecutive incident-verdict segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionRun {
    pub segment_ids: Vec<u32>,
    /// Lowest and highest milepost covered.
    pub span: (f64, f64),
    /// Measure of the union of the segments' GPS spans, miles.
    pub length_mi: f64,
    /// When the drone reached the upstream end of the run, epoch seconds.
    pub tail_observed_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneWindow {
    pub t0: f64,
    pub t1: f64,
    pub segment_id: u32,
}

/// Segment results of one patrol pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightReport {
    pub flight_id: String,
    /// Epoch seconds.
    pub start_time: f64,
    pub period_s: u32,
    pub segments: Vec<SegmentResult>,
}

impl FlightReport {
    pub fn new(flight_id: impl Into<String>, start_time: f64, period_s: u32) -> Self {
        Self { flight_id: flight_id.into(), start_time, period_s, segments: Vec::new() }
    }

    /// Segments by start time, lane breaking ties.
    pub fn ordered(&self) -> Vec<&SegmentResult> {
        let mut v: Vec<&SegmentResult> = self.segments.iter().collect();
        v.sort_by(|a, b| a.time_span.0.total_cmp(&b.time_span.0).then(a.lane.cmp(&b.lane)));
        v
    }

    /// All maximal incident runs in time order.
    pub fn incident_runs(&self) -> Vec<CongestionRun> {
        let mut runs = Vec::new();
        let mut current: Vec<&SegmentResult> = Vec::new();
        for s in self.ordered() {
            if s.verdict == Condition::Incident {
                current.push(s);
            } else if !current.is_empty() {
                runs.push(make_run(&current));
                current.clear();
            }
        }
        if !current.is_empty() {
            runs.push(make_run(&current));
        }
        runs
    }

    /// The longest incident run, earliest on ties, and the remaining runs.
    pub fn congestion(&self) -> Option<(CongestionRun, Vec<CongestionRun>)> {
        let mut runs = self.incident_runs();
        let best = runs
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
                Some((_, l)) if l >= r.length_mi => acc,
                _ => Some((i, r.length_mi)),
            })?
            .0;
        let primary = runs.remove(best);
        Some((primary, runs))
    }

    pub fn congestion_length(&self) -> Option<(f64, (f64, f64))> {
        self.congestion().map(|(r, _)| (r.length_mi, r.span))
    }

    /// Window covering the longest run of incident images in the last
    /// segment of the primary incident run; later run on ties.
    pub fn scene_window(&self) -> Option<SceneWindow> {
        let (run, _) = self.congestion()?;
        let seg = self
            .segments
            .iter()
            .filter(|s| run.segment_ids.contains(&s.segment_id))
            .max_by(|a, b| a.time_span.1.total_cmp(&b.time_span.1).then(a.time_span.0.total_cmp(&b.time_span.0)))?;
        let (first, last) = longest_label_run(&seg.image_labels, Condition::Incident)?;
        Some(SceneWindow {
            t0: seg.image_start(first),
            t1: seg.image_start(last) + self.period_s as f64,
            segment_id: seg.segment_id,
        })
    }

    /// Window start of the first incident image in the first
    /// incident-verdict segment.
    pub fn detection_timestamp(&self) -> Option<f64> {
        let seg = self.ordered().into_iter().find(|s| s.verdict == Condition::Incident)?;
        let i = seg.image_labels.iter().position(|&l| l == Condition::Incident)?;
        Some(seg.image_start(i))
    }

    pub fn features(&self) -> FeatureBlock {
        let congestion = self.congestion();
        let scene = self.scene_window();
        FeatureBlock {
            congestion_length_mi: congestion.as_ref().map(|(r, _)| round_to(r.length_mi, 4)),
            congestion_span: congestion.as_ref().map(|(r, _)| (round_to(r.span.0, 4), round_to(r.span.1, 4))),
            tail_observed_at: congestion.as_ref().map(|(r, _)| r.tail_observed_at),
            other_runs: congestion.map(|(_, others)| others).unwrap_or_default(),
            scene_window: scene.as_ref().map(|s| (s.t0, s.t1)),
            scene_segment_id: scene.map(|s| s.segment_id),
            detection_timestamp: self.detection_timestamp(),
            propagation: None,
        }
    }
}

fn make_run(segs: &[&SegmentResult]) -> CongestionRun {
    let spans: Vec<(f64, f64)> = segs.iter().map(|s| ordered_span(s.gps_span)).collect();
    let lo = spans.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = spans.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    CongestionRun {
        segment_ids: segs.iter().map(|s| s.segment_id).collect(),
        span: (lo, hi),
        length_mi: union_length(&spans),
        tail_observed_at: segs[0].time_span.0,
    }
}

fn ordered_span((a, b): (f64, f64)) -> (f64, f64) {
    (a.min(b), a.max(b))
}

/// Total length covered by a set of intervals.
pub fn union_length(spans: &[(f64, f64)]) -> f64 {
    let mut v: Vec<(f64, f64)> = spans.iter().map(|&s| ordered_span(s)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in v {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total
}

/// Inclusive index range of the longest run of `label`, later run on ties.
pub fn longest_label_run(labels: &[Condition], label: Condition) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for i in 0..=labels.len() {
        let hit = labels.get(i) == Some(&label);
        match (hit, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| i - s >= b - a + 1) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBase {
    /// Times at which each pass observed the upstream end of the congestion.
    TailObservation,
    /// Flight start times.
    FlightStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationDirection {
    /// Congestion growing against the direction of travel.
    Upstream,
    /// Congestion dissipating.
    Downstream,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationEstimate {
    pub flight_pair: (String, String),
    pub delta_length_ft: f64,
    pub delta_time_min: f64,
    pub speed_ft_per_min: f64,
    pub direction: PropagationDirection,
}

/// Rate of change of congestion length from pass `a` to pass `b`.
pub fn propagation_speed(a: &FlightReport, b: &FlightReport, base: TimeBase) -> Result<PropagationEstimate, FeatureError> {
    let ra = a.congestion().ok_or_else(|| FeatureError::MissingLength(a.flight_id.clone()))?.0;
    let rb = b.congestion().ok_or_else(|| FeatureError::MissingLength(b.flight_id.clone()))?.0;
    let (ta, tb) = match base {
        TimeBase::TailObservation => (ra.tail_observed_at, rb.tail_observed_at),
        TimeBase::FlightStart => (a.start_time, b.start_time),
    };
    estimate(
        (a.flight_id.clone(), b.flight_id.clone()),
        ra.length_mi,
        rb.length_mi,
        (tb - ta) / 60.0,
    )
}

/// Propagation from two congestion lengths (miles) observed `delta_time_min`
/// apart.
pub fn estimate(
    flight_pair: (String, String),
    length_a_mi: f64,
    length_b_mi: f64,
    delta_time_min: f64,
) -> Result<PropagationEstimate, FeatureError> {
    if delta_time_min == 0.0 {
        return Err(FeatureError::ZeroInterval(flight_pair.0, flight_pair.1));
    }
    let delta_length_ft = (length_b_mi - length_a_mi) * FT_PER_MILE;
    let speed = delta_length_ft / delta_time_min;
    let direction = if speed > 0.0 {
        PropagationDirection::Upstream
    } else if speed < 0.0 {
        PropagationDirection::Downstream
    } else {
        PropagationDirection::Stationary
    };
    Ok(PropagationEstimate { flight_pair, delta_length_ft, delta_time_min, speed_ft_per_min: speed, direction })
}

/// Feature block stored with a flight record, at display precision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub congestion_length_mi: Option<f64>,
    pub congestion_span: Option<(f64, f64)>,
    pub tail_observed_at: Option<f64>,
    #[serde(default)]
    pub other_runs: Vec<CongestionRun>,
    pub scene_window: Option<(f64, f64)>,
    pub scene_segment_id: Option<u32>,
    pub detection_timestamp: Option<f64>,
    pub propagation: Option<PropagationEstimate>,
}

impl FeatureBlock {
    /// Attach the propagation from an earlier pass, speed to 2 decimals.
    pub fn with_propagation(mut self, mut p: PropagationEstimate) -> Self {
        p.speed_ft_per_min = round_to(p.speed_ft_per_min, 2);
        p.delta_length_ft = round_to(p.delta_length_ft, 2);
        self.propagation = Some(p);
        self
    }
}

pub fn round_to(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (v * k).round() / k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{AggregationPolicy, Tau};
    use Condition::*;

    fn seg(id: u32, start: f64, span: (f64, f64), labels: Vec<Condition>) -> SegmentResult {
        SegmentResult::new(id, (id % 3) as u8, (start, start + 120.0), span, labels, &AggregationPolicy::default()).unwrap()
    }

    fn fixed(id: u32, start: f64, span: (f64, f64), verdict: Condition) -> SegmentResult {
        let labels = vec![verdict; 101];
        let tau = Tau::from_labels(&labels).unwrap();
        SegmentResult { segment_id: id, lane: 0, time_span: (start, start + 120.0), gps_span: span, image_labels: labels, tau, verdict }
    }

    fn report(segments: Vec<SegmentResult>) -> FlightReport {
        FlightReport { flight_id: "f".into(), start_time: 0.0, period_s: 20, segments }
    }

    #[test]
    fn union_of_staggered_spans() {
        let r = report(vec![
            fixed(0, 0.0, (0.0, 0.10), Incident),
            fixed(1, 40.0, (0.08, 0.18), Incident),
            fixed(2, 80.0, (0.16, 0.26), Incident),
        ]);
        let (len, span) = r.congestion_length().unwrap();
        assert!((len - 0.26).abs() < 1e-12);
        assert_eq!(span, (0.0, 0.26));
    }

    #[test]
    fn single_segment_and_none() {
        let r = report(vec![fixed(0, 0.0, (0.3, 0.4), Incident)]);
        assert!((r.congestion_length().unwrap().0 - 0.1).abs() < 1e-12);
        let r = report(vec![fixed(0, 0.0, (0.3, 0.4), Normal)]);
        assert!(r.congestion_length().is_none());
        assert!(r.detection_timestamp().is_none());
        assert!(r.scene_window().is_none());
    }

    #[test]
    fn disjoint_runs_report_longest() {
        let r = report(vec![
            fixed(0, 0.0, (0.0, 0.1), Incident),
            fixed(1, 40.0, (0.1, 0.2), Normal),
            fixed(2, 80.0, (0.2, 0.3), Incident),
            fixed(3, 120.0, (0.28, 0.45), Incident),
        ]);
        let (main, others) = r.congestion().unwrap();
        assert_eq!(main.segment_ids, vec![2, 3]);
        assert!((main.length_mi - 0.25).abs() < 1e-12);
        assert_eq!(others.len(), 1);
        assert_eq!(main.tail_observed_at, 80.0);
    }

    #[test]
    fn propagation_hand_cases() {
        let p = estimate(("a".into(), "b".into()), 1000.0 / FT_PER_MILE, 2000.0 / FT_PER_MILE, 10.0).unwrap();
        assert!((p.speed_ft_per_min - 100.0).abs() < 1e-9);
        assert_eq!(p.direction, PropagationDirection::Upstream);
        let p = estimate(("a".into(), "b".into()), 0.3, 0.3, 10.0).unwrap();
        assert_eq!(p.speed_ft_per_min, 0.0);
        let p = estimate(("a".into(), "b".into()), 0.5, 0.3, 10.0).unwrap();
        assert_eq!(p.direction, PropagationDirection::Downstream);
        assert!(estimate(("a".into(), "b".into()), 0.3, 0.5, 0.0).is_err());
    }

    #[test]
    fn field_worked_example() {
        // lengths of the second and third passes and the reported speed
        let (la, lb, reported) = (0.265, 0.5032, 101.02);
        let dl = (lb - la) * FT_PER_MILE;
        assert!((dl - 1257.696).abs() < 1e-6);
        let implied_min = dl / reported;
        assert!((implied_min - 12.45).abs() < 0.005, "{implied_min}");
        let flight_start = estimate(("2".into(), "3".into()), la, lb, 12.0).unwrap();
        assert_eq!(round_to(flight_start.speed_ft_per_min, 2), 104.81);
        let tail = estimate(("2".into(), "3".into()), la, lb, implied_min).unwrap();
        assert_eq!(round_to(tail.speed_ft_per_min, 2), 101.02);
    }

    #[test]
    fn missing_length_is_an_error() {
        let a = report(vec![fixed(0, 0.0, (0.0, 0.1), Normal)]);
        let b = report(vec![fixed(0, 600.0, (0.0, 0.1), Incident)]);
        assert!(matches!(propagation_speed(&a, &b, TimeBase::TailObservation), Err(FeatureError::MissingLength(_))));
    }

    #[test]
    fn scene_window_examples() {
        let labels = vec![Incident, Incident, Normal, Incident, Incident, Incident, Incident, Recurrent];
        let r = report(vec![seg(5, 1000.0, (0.0, 0.1), labels)]);
        assert_eq!(r.segments[0].verdict, Incident);
        let w = r.scene_window().unwrap();
        assert_eq!((w.t0, w.t1, w.segment_id), (1003.0, 1026.0, 5));

        let r = report(vec![fixed(1, 500.0, (0.0, 0.1), Incident)]);
        let w = r.scene_window().unwrap();
        assert_eq!((w.t0, w.t1), (500.0, 620.0));
    }

    #[test]
    fn scene_window_prefers_later_equal_run() {
        assert_eq!(longest_label_run(&[Incident, Incident, Normal, Incident, Incident], Incident), Some((3, 4)));
        assert_eq!(longest_label_run(&[Normal], Incident), None);
    }

    #[test]
    fn scene_uses_last_segment_of_run() {
        let mut late = vec![Normal; 101];
        for l in late.iter_mut().skip(40).take(30) {
            *l = Incident;
        }
        let r = report(vec![
            fixed(0, 0.0, (0.0, 0.1), Incident),
            seg(1, 40.0, (0.05, 0.15), late),
            fixed(2, 80.0, (0.1, 0.2), Normal),
        ]);
        let w = r.scene_window().unwrap();
        assert_eq!((w.t0, w.t1, w.segment_id), (80.0, 129.0, 1));
    }

    #[test]
    fn detection_timestamp_is_first_incident_image() {
        let mut labels = vec![Normal; 101];
        for l in labels.iter_mut().skip(14).take(20) {
            *l = Incident;
        }
        let r = report(vec![fixed(0, 0.0, (0.0, 0.1), Normal), seg(1, 40.0, (0.05, 0.15), labels)]);
        assert_eq!(r.detection_timestamp(), Some(54.0));
    }

    #[test]
    fn features_round_for_display() {
        let r = report(vec![fixed(0, 0.0, (0.0, 0.123456), Incident)]);
        let f = r.features();
        assert_eq!(f.congestion_length_mi, Some(0.1235));
        assert_eq!(f.scene_window, Some((0.0, 120.0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn union_never_exceeds_sum(spans in proptest::collection::vec((0.0f64..2.0, 0.0f64..0.4), 1..8)) {
                let spans: Vec<(f64, f64)> = spans.into_iter().map(|(a, l)| (a, a + l)).collect();
                let sum: f64 = spans.iter().map(|s| s.1 - s.0).sum();
                let u = union_length(&spans);
                prop_assert!(u <= sum + 1e-12);
                let mut sorted = spans.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let disjoint = sorted.windows(2).all(|w| w[1].0 >= w[0].1);
                if disjoint {
                    prop_assert!((u - sum).abs() < 1e-9);
                } else {
                    prop_assert!(u < sum);
                }
            }

            #[test]
            fn swapping_passes_flips_length_change(la in 0.0f64..1.0, lb in 0.0f64..1.0, dt in 1.0f64..30.0) {
                let ab = estimate(("a".into(), "b".into()), la, lb, dt).unwrap();
                let ba = estimate(("b".into(), "a".into()), lb, la, -dt).unwrap();
                prop_assert_eq!(ab.delta_length_ft, -ba.delta_length_ft);
                prop_assert!((ab.speed_ft_per_min - ba.speed_ft_per_min).abs() < 1e-9);
            }

            #[test]
            fn scene_window_inside_segment(labels in proptest::collection::vec(
                prop_oneof![Just(Normal), Just(Recurrent), Just(Incident)], 101..=101)) {
                let r = report(vec![SegmentResult::new(0, 0, (1000.0, 1120.0), (0.0, 0.3), labels, &AggregationPolicy::default()).unwrap()]);
                if let Some(w) = r.scene_window() {
                    prop_assert!(w.t0 >= 1000.0 && w.t1 <= 1120.0);
                    prop_assert!(w.t1 - w.t0 >= 20.0);
                }
            }
        }
    }
}
