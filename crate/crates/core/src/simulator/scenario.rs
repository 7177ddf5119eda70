//! Scenario files: cohort size, route shape, behavior and seed.
//!
//! ```toml
//! name = "cycling-risk"
//! seed = 2021
//! start = "2021-06-12T08:00:00.000Z"
//! asset = "cycling_asset.json"   # relative to the scenario file
//! participants = 11
//! stagger_s = 90                 # start offset between participants
//!
//! [trace]
//! speed_mps = 4.0
//! sample_period_ms = 1000
//! gps_noise_sigma_m = 0.0
//! dwell_s = 20                   # loitering at each point of interest
//! lead_in_m = 120                # route starts and ends this far outside
//!
//! [policy]
//! default = { categorical = [0.1, 0.2, 0.4, 0.2, 0.1] }
//! proof = "none"
//!
//! [[participant]]                # optional, one table per participant in order
//! vicinity_m = 30                # per-participant localization radius
//! policy = { default = { fixed = 6 } }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::policy::{BehaviorPolicy, PolicyError};
use super::trace::TraceSpec;
use crate::asset::{parse_asset, AssetError};
use crate::geo::{destination, initial_bearing, GeoPoint};
use crate::time::Timestamp;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario asset: {0}")]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub speed_mps: f64,
    #[serde(default = "default_period")]
    pub sample_period_ms: u64,
    #[serde(default)]
    pub gps_noise_sigma_m: f64,
    #[serde(default)]
    pub dwell_s: f64,
    #[serde(default = "default_lead_in")]
    pub lead_in_m: f64,
}

fn default_period() -> u64 {
    1000
}

fn default_lead_in() -> f64 {
    100.0
}

fn default_stagger() -> u64 {
    60
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantOverride {
    #[serde(default)]
    pub vicinity_m: Option<f64>,
    #[serde(default)]
    pub policy: Option<BehaviorPolicy>,
    #[serde(default)]
    pub speed_mps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub start: Timestamp,
    pub asset: String,
    pub participants: usize,
    #[serde(default = "default_stagger")]
    pub stagger_s: u64,
    pub trace: TraceConfig,
    pub policy: BehaviorPolicy,
    #[serde(default, rename = "participant")]
    pub overrides: Vec<ParticipantOverride>,
}

/// One simulated participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantPlan {
    pub policy: BehaviorPolicy,
    pub trace: TraceSpec,
    /// Replaces every question's vicinity in this participant's asset copy.
    pub vicinity_m: Option<f64>,
}

/// Everything `run_cohort` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub asset_document: String,
    pub seed: u64,
    pub start: Timestamp,
    pub stagger_ms: i64,
    pub participants: Vec<ParticipantPlan>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    /// Loads a scenario and the asset document it names.
    pub fn load(path: &Path) -> Result<(Self, String), ScenarioError> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|source| ScenarioError::Io { path: p.into(), source });
        let s = Scenario::from_toml(&read(path)?)?;
        let asset_path = path.parent().unwrap_or(Path::new(".")).join(&s.asset);
        let doc = read(&asset_path)?;
        Ok((s, doc))
    }

    fn check(&self) -> Result<(), ScenarioError> {
        if self.participants == 0 {
            return Err(ScenarioError::Invalid("participants must be positive".into()));
        }
        if self.overrides.len() > self.participants {
            return Err(ScenarioError::Invalid("more [[participant]] tables than participants".into()));
        }
        let t = &self.trace;
        if !(t.dwell_s.is_finite() && t.dwell_s >= 0.0 && t.lead_in_m.is_finite() && t.lead_in_m > 0.0) {
            return Err(ScenarioError::Invalid("dwell_s must be >= 0 and lead_in_m > 0".into()));
        }
        self.policy.validate()?;
        for o in &self.overrides {
            if let Some(p) = &o.policy {
                p.validate()?;
            }
            if o.vicinity_m.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                return Err(ScenarioError::Invalid("vicinity_m must be positive".into()));
            }
        }
        Ok(())
    }

    /// Expands the scenario into per-participant plans. Every route starts
    /// `lead_in_m` before the first point of interest, visits the points in
    /// ascending question id order and ends `lead_in_m` past the last one.
    pub fn cohort(&self, asset_document: &str) -> Result<CohortSpec, ScenarioError> {
        let asset = parse_asset(asset_document)?;
        let pois: Vec<GeoPoint> = asset.ordered_ids().iter().map(|&q| asset.question(q).expect("id").location).collect();
        if pois.is_empty() {
            return Err(ScenarioError::Invalid("asset has no points of interest".into()));
        }
        let first = pois[0];
        let last = *pois.last().expect("non-empty");
        let back = pois.get(1).and_then(|&p| initial_bearing(p, first).ok()).unwrap_or(270.0);
        let forward = pois.len().checked_sub(2).and_then(|i| initial_bearing(pois[i], last).ok()).unwrap_or(90.0);
        let mut waypoints = vec![destination(first, back, self.trace.lead_in_m)];
        waypoints.extend(pois.iter().copied());
        waypoints.push(destination(last, forward, self.trace.lead_in_m));
        let mut dwell = vec![0.0];
        dwell.extend(std::iter::repeat_n(self.trace.dwell_s, pois.len()));
        dwell.push(0.0);

        let participants = (0..self.participants)
            .map(|i| {
                let o = self.overrides.get(i).cloned().unwrap_or_default();
                ParticipantPlan {
                    policy: o.policy.unwrap_or_else(|| self.policy.clone()),
                    trace: TraceSpec {
                        waypoints: waypoints.clone(),
                        speed_mps: o.speed_mps.unwrap_or(self.trace.speed_mps),
                        sample_period_ms: self.trace.sample_period_ms,
                        gps_noise_sigma_m: self.trace.gps_noise_sigma_m,
                        seed: participant_seed(self.seed, i),
                        dwell_s: dwell.clone(),
                    },
                    vicinity_m: o.vicinity_m,
                }
            })
            .collect();
        Ok(CohortSpec {
            name: self.name.clone(),
            asset_document: asset_document.to_string(),
            seed: self.seed,
            start: self.start,
            stagger_ms: self.stagger_s as i64 * 1000,
            participants,
        })
    }
}

pub(crate) fn participant_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64 + 1)
}
