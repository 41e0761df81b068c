//! The patrolling aircraft: flight plan, nadir camera model, detection noise
//! and the 1 Hz GPS track.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::log::GroundTruthLog;
use super::scenario::AxisDirection;
use super::SimError;
use crate::feed::{Detection, Feed, FeedHeader, FrameDetections, GpsFix};
use crate::units::{mph_to_fps, FT_PER_MILE, M_PER_MILE};

/// Reference point the road-aligned frame is pinned to for map display.
pub const ANCHOR_LATITUDE: f64 = 28.1920;
pub const ANCHOR_LONGITUDE: f64 = -82.3550;
const METRES_PER_DEGREE_LAT: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DronePlan {
    pub altitude_ft: f64,
    pub cruise_speed_mph: f64,
    pub camera_pitch_deg: f64,
    pub camera_azimuth_deg: f64,
    /// Simulation time at which the patrol begins, s.
    pub start_time_s: f64,
    pub start_milepost: f64,
    /// Upper bound on the flight duration; otherwise the drone flies until
    /// it reaches the end of the road or of the simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl Default for DronePlan {
    fn default() -> Self {
        Self {
            altitude_ft: 200.0,
            cruise_speed_mph: 10.0,
            camera_pitch_deg: 90.0,
            camera_azimuth_deg: 90.0,
            start_time_s: 0.0,
            start_milepost: 0.0,
            duration_s: None,
        }
    }
}

impl DronePlan {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidPlan(m.to_string()));
        if !(self.altitude_ft > 0.0) {
            return bad("altitude must be positive");
        }
        if !(self.cruise_speed_mph >= 0.0) {
            return bad("cruise speed must be non-negative");
        }
        if !(70.0..=90.0).contains(&self.camera_pitch_deg) {
            return bad("camera pitch must lie in [70, 90] degrees");
        }
        if self.camera_azimuth_deg != 90.0 {
            return bad("camera azimuth must be 90 degrees");
        }
        if !(self.start_time_s >= 0.0) {
            return bad("start time must be non-negative");
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0) {
                return bad("duration must be positive");
            }
        }
        Ok(())
    }

    /// Drone milepost at simulation time `t`.
    pub fn milepost_at(&self, t: f64, direction: AxisDirection) -> f64 {
        let dt = (t - self.start_time_s).max(0.0);
        self.start_milepost + direction.sign() * mph_to_fps(self.cruise_speed_mph) * dt / FT_PER_MILE
    }

    /// Time at which the flight ends for a road of `road_length_mi` and a
    /// simulation horizon of `horizon_s`.
    pub fn end_time(&self, road_length_mi: f64, direction: AxisDirection, horizon_s: f64) -> f64 {
        let mut end = horizon_s;
        if let Some(d) = self.duration_s {
            end = end.min(self.start_time_s + d);
        }
        let speed_mi_s = mph_to_fps(self.cruise_speed_mph) / FT_PER_MILE;
        if speed_mi_s > 0.0 {
            let remaining = match direction {
                AxisDirection::Increasing => road_length_mi - self.start_milepost,
                AxisDirection::Decreasing => self.start_milepost,
            };
            end = end.min(self.start_time_s + remaining.max(0.0) / speed_mi_s);
        }
        end
    }
}

/// Nadir camera. The ground sampling distance is specified at 200 ft and
/// scales with altitude. Image x runs along the road axis (increasing
/// milepost) starting at the drone's GPS position; image y runs across it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub frame_width: u32,
    pub frame_height: u32,
    pub gsd_ft: f64,
    pub fps: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { frame_width: 640, frame_height: 512, gsd_ft: 0.6, fps: 10.0 }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frame_width == 0 || self.frame_height == 0 || !(self.gsd_ft > 0.0) || !(self.fps > 0.0) {
            return Err(SimError::InvalidPlan("camera geometry must be positive".into()));
        }
        Ok(())
    }

    pub fn gsd_at(&self, altitude_ft: f64) -> f64 {
        self.gsd_ft * altitude_ft / 200.0
    }

    pub fn footprint_ft(&self, altitude_ft: f64) -> (f64, f64) {
        let g = self.gsd_at(altitude_ft);
        (self.frame_width as f64 * g, self.frame_height as f64 * g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian centroid jitter, px.
    pub sigma_px: f64,
    /// Probability that a visible vehicle is missing from a frame.
    pub miss_probability: f64,
    /// Whether detections carry simulator vehicle ids.
    pub emit_ids: bool,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_px: 1.0, miss_probability: 0.05, emit_ids: false, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { sigma_px: 0.0, miss_probability: 0.0, emit_ids: true, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sigma_px >= 0.0) || !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(SimError::InvalidPlan("noise parameters out of range".into()));
        }
        Ok(())
    }
}

pub fn gps_coordinates(milepost: f64) -> (f64, f64) {
    (ANCHOR_LATITUDE + milepost * M_PER_MILE / METRES_PER_DEGREE_LAT, ANCHOR_LONGITUDE)
}

pub(super) fn fly(
    log: &GroundTruthLog,
    plan: &DronePlan,
    camera: &CameraConfig,
    noise: &NoiseConfig,
) -> Result<Feed, SimError> {
    plan.validate()?;
    camera.validate()?;
    noise.validate()?;
    let spec = &log.spec;
    let horizon = log.duration();
    if plan.start_time_s >= horizon {
        return Err(SimError::PlanOutsideHorizon { start: plan.start_time_s, horizon });
    }
    if let Some(d) = plan.duration_s {
        if plan.start_time_s + d > horizon + 1e-9 {
            return Err(SimError::PlanOutsideHorizon { start: plan.start_time_s + d, horizon });
        }
    }
    let dir = spec.patrol_direction;
    let end = plan.end_time(spec.road_length_mi, dir, horizon);
    let gsd = camera.gsd_at(plan.altitude_ft);
    let (w, h) = (camera.frame_width as f64, camera.frame_height as f64);
    let epoch = spec.epoch_start;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ noise.seed.rotate_left(17) ^ 0x5eed_d20e);
    let jitter = Normal::new(0.0, noise.sigma_px.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut frames = Vec::new();
    let frame_dt = 1.0 / camera.fps;
    let mut k: u64 = 0;
    loop {
        let t = plan.start_time_s + k as f64 * frame_dt;
        if t > end + 1e-9 {
            break;
        }
        let drone_ft = plan.milepost_at(t, dir) * FT_PER_MILE;
        let mut detections = Vec::new();
        for track in &log.vehicles {
            let Some((mp, lateral)) = track.position_at(t) else { continue };
            let x = (mp * FT_PER_MILE - drone_ft) / gsd;
            let y = h / 2.0 + lateral / gsd;
            if !(0.0..w).contains(&x) || !(0.0..h).contains(&y) {
                continue;
            }
            if noise.miss_probability > 0.0 && rng.random::<f64>() < noise.miss_probability {
                continue;
            }
            let (mut xn, mut yn) = (x, y);
            if noise.sigma_px > 0.0 {
                xn += jitter.sample(&mut rng);
                yn += jitter.sample(&mut rng);
            }
            detections.push(Detection {
                vehicle_id: noise.emit_ids.then_some(track.id),
                x_px: xn.clamp(0.0, w - 1e-6),
                y_px: yn.clamp(0.0, h - 1e-6),
            });
        }
        if !noise.emit_ids {
            detections.sort_by(|a, b| a.x_px.total_cmp(&b.x_px));
        }
        frames.push(FrameDetections { frame_index: k, timestamp: epoch + t, detections });
        k += 1;
    }

    let mut gps = Vec::new();
    let mut j = 0u64;
    loop {
        let t = plan.start_time_s + j as f64;
        if t > end + 1e-9 {
            break;
        }
        let milepost = plan.milepost_at(t, dir);
        let (latitude, longitude) = gps_coordinates(milepost);
        gps.push(GpsFix { timestamp: epoch + t, latitude, longitude, milepost, altitude_ft: plan.altitude_ft });
        j += 1;
    }

    Ok(Feed { header: FeedHeader::new(camera.frame_width, camera.frame_height, camera.fps, gsd), frames, gps })
}
