//! Synthetic GPS traces along great-circle legs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::{from_tangent_offset, haversine_distance, interpolate, GeoPoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("a trace needs at least two waypoints")]
    TooFewWaypoints,
    #[error("speed must be positive and finite")]
    Speed,
    #[error("sample period must be positive")]
    Period,
    #[error("noise sigma must be finite and non-negative")]
    Noise,
    #[error("dwell times must be finite and non-negative, one per waypoint at most")]
    Dwell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub waypoints: Vec<GeoPoint>,
    pub speed_mps: f64,
    pub sample_period_ms: u64,
    pub gps_noise_sigma_m: f64,
    pub seed: u64,
    /// Loitering time at each waypoint, in waypoint order; missing entries
    /// are zero.
    #[serde(default)]
    pub dwell_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Milliseconds since the start of the trace.
    pub offset_ms: i64,
    /// Reported (noisy) position.
    pub point: GeoPoint,
    /// Noise-free position.
    pub true_point: GeoPoint,
    /// Set while the participant is at a waypoint: on arrival and while
    /// dwelling there.
    pub at_waypoint: Option<usize>,
}

enum Leg {
    Dwell { at: usize, ms: i64 },
    Travel { from: usize, ms: i64 },
}

/// Samples the route every `sample_period_ms`, starting at the first
/// waypoint. Arrivals and departures at waypoints are always included, so a
/// noise-free trace passes exactly through every waypoint.
pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<TracePoint>, TraceError> {
    if spec.waypoints.len() < 2 {
        return Err(TraceError::TooFewWaypoints);
    }
    if !(spec.speed_mps.is_finite() && spec.speed_mps > 0.0) {
        return Err(TraceError::Speed);
    }
    if spec.sample_period_ms == 0 {
        return Err(TraceError::Period);
    }
    if !(spec.gps_noise_sigma_m.is_finite() && spec.gps_noise_sigma_m >= 0.0) {
        return Err(TraceError::Noise);
    }
    if spec.dwell_s.len() > spec.waypoints.len() || spec.dwell_s.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(TraceError::Dwell);
    }
    let wp = &spec.waypoints;
    let mut legs = Vec::new();
    for i in 0..wp.len() {
        let dwell = spec.dwell_s.get(i).copied().unwrap_or(0.0);
        legs.push(Leg::Dwell { at: i, ms: (dwell * 1000.0).round() as i64 });
        if i + 1 < wp.len() {
            let ms = (haversine_distance(wp[i], wp[i + 1]) / spec.speed_mps * 1000.0).round() as i64;
            legs.push(Leg::Travel { from: i, ms });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.gps_noise_sigma_m.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = Vec::new();
    let mut emit = |offset_ms: i64, true_point: GeoPoint, at_waypoint: Option<usize>| {
        if out.last().is_some_and(|p: &TracePoint| p.offset_ms == offset_ms) {
            return;
        }
        let point = if spec.gps_noise_sigma_m > 0.0 {
            from_tangent_offset(true_point, noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            true_point
        };
        out.push(TracePoint { offset_ms, point, true_point, at_waypoint });
    };

    let period = spec.sample_period_ms as i64;
    let mut t0 = 0i64;
    let mut next_tick = 0i64;
    for leg in &legs {
        match *leg {
            Leg::Dwell { at, ms } => {
                emit(t0, wp[at], Some(at));
                while next_tick <= t0 {
                    next_tick += period;
                }
                while next_tick < t0 + ms {
                    emit(next_tick, wp[at], Some(at));
                    next_tick += period;
                }
                emit(t0 + ms, wp[at], Some(at));
                t0 += ms;
            }
            Leg::Travel { from, ms } => {
                while next_tick <= t0 {
                    next_tick += period;
                }
                while next_tick < t0 + ms {
                    let f = (next_tick - t0) as f64 / ms as f64;
                    emit(next_tick, interpolate(wp[from], wp[from + 1], f), None);
                    next_tick += period;
                }
                t0 += ms;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::zurich;
    use crate::geo::destination;

    fn spec(sigma: f64, seed: u64) -> TraceSpec {
        TraceSpec {
            waypoints: vec![zurich(), destination(zurich(), 90.0, 100.0)],
            speed_mps: 5.0,
            sample_period_ms: 1000,
            gps_noise_sigma_m: sigma,
            seed,
            dwell_s: vec![],
        }
    }

    #[test]
    fn hundred_metres_at_five_mps() {
        let t = generate_trace(&spec(0.0, 1)).unwrap();
        assert_eq!(t.len(), 21);
        assert_eq!(t.last().unwrap().offset_ms, 20_000);
        assert_eq!(t.last().unwrap().point, destination(zurich(), 90.0, 100.0));
        assert_eq!(t[0].point, zurich());
    }

    #[test]
    fn noiseless_trace_hits_every_waypoint() {
        let wps: Vec<_> = (0..4).map(|i| destination(zurich(), 30.0 * i as f64, 137.0 * i as f64)).collect();
        let s = TraceSpec { waypoints: wps.clone(), speed_mps: 3.3, sample_period_ms: 700, gps_noise_sigma_m: 0.0, seed: 0, dwell_s: vec![0.0, 5.0, 2.5] };
        let t = generate_trace(&s).unwrap();
        for (i, w) in wps.iter().enumerate() {
            assert!(t.iter().any(|p| p.point == *w && p.at_waypoint == Some(i)), "waypoint {i}");
        }
        assert!(t.windows(2).all(|w| w[0].offset_ms < w[1].offset_ms));
    }

    #[test]
    fn dwell_adds_loitering_points() {
        let mut s = spec(0.0, 1);
        s.dwell_s = vec![0.0, 10.0];
        let t = generate_trace(&s).unwrap();
        assert_eq!(t.len(), 31);
        assert_eq!(t.iter().filter(|p| p.at_waypoint == Some(1)).count(), 11);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let a = generate_trace(&spec(5.0, 9)).unwrap();
        assert_eq!(a, generate_trace(&spec(5.0, 9)).unwrap());
        assert_ne!(a, generate_trace(&spec(5.0, 10)).unwrap());
        assert!(a.iter().any(|p| p.point != p.true_point));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(0.0, 0);
        s.waypoints.pop();
        assert_eq!(generate_trace(&s), Err(TraceError::TooFewWaypoints));
        assert_eq!(generate_trace(&TraceSpec { speed_mps: 0.0, ..spec(0.0, 0) }), Err(TraceError::Speed));
        assert_eq!(generate_trace(&TraceSpec { gps_noise_sigma_m: -1.0, ..spec(0.0, 0) }), Err(TraceError::Noise));
    }
}
