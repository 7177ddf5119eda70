//! Data collection assets: geolocated questions, options, sensors and the
//! navigation modality, plus the JSON interchange codec.

mod codec;
mod validate;

pub use codec::{normalize_lenient_json, parse_asset, serialize_asset, serialize_asset_pretty, AssetError};
pub use validate::{validate_asset, Finding, ValidationReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::geo::{self, GeoError, GeoPoint, LocalizationZone};

pub type QuestionId = u32;
pub type OptionId = u32;

/// Order in which points of interest may be visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Simple,
    Sequential,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Radio,
    Checkbox,
    Likert,
    Textbox,
}

impl QuestionType {
    pub fn is_choice(self) -> bool {
        !matches!(self, QuestionType::Textbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Light,
    Gyroscope,
    Proximity,
    Accelerometer,
    Location,
    Noise,
}

impl SensorKind {
    pub const ALL: [SensorKind; 6] = [
        SensorKind::Light,
        SensorKind::Gyroscope,
        SensorKind::Proximity,
        SensorKind::Accelerometer,
        SensorKind::Location,
        SensorKind::Noise,
    ];

    /// Number of numeric values in one reading.
    /// Location readings carry lat, lon and an optional accuracy.
    pub fn arity(self) -> std::ops::RangeInclusive<usize> {
        match self {
            SensorKind::Light | SensorKind::Proximity | SensorKind::Noise => 1..=1,
            SensorKind::Gyroscope | SensorKind::Accelerometer => 3..=3,
            SensorKind::Location => 2..=3,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            SensorKind::Light => "Light",
            SensorKind::Gyroscope => "Gyroscope",
            SensorKind::Proximity => "Proximity",
            SensorKind::Accelerometer => "Accelerometer",
            SensorKind::Location => "Location",
            SensorKind::Noise => "Noise",
        }
    }
}

impl FromStr for SensorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "light" => Ok(SensorKind::Light),
            "gyroscope" => Ok(SensorKind::Gyroscope),
            "proximity" => Ok(SensorKind::Proximity),
            "accelerometer" => Ok(SensorKind::Accelerometer),
            "location" | "gps" | "gps location" => Ok(SensorKind::Location),
            "noise" => Ok(SensorKind::Noise),
            other => Err(format!("unknown sensor {other:?}")),
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Sensor sampling frequency. The three levels are the only ones that exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frequency {
    Low,
    Medium,
    High,
}

impl Frequency {
    pub fn period_ms(self) -> u32 {
        match self {
            Frequency::Low => 2000,
            Frequency::Medium => 250,
            Frequency::High => 200,
        }
    }
}

/// Which geofence shape the asset uses for its points of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZoneKind {
    Circle,
    Ellipse,
}

/// Which questions require a witnessed-presence proof before an answer is
/// accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProofPolicy {
    None,
    AllMandatory,
    All,
    Questions(std::collections::BTreeSet<QuestionId>),
}

impl ProofPolicy {
    pub fn requires(&self, q: &PoiQuestion) -> bool {
        match self {
            ProofPolicy::None => false,
            ProofPolicy::AllMandatory => q.mandatory,
            ProofPolicy::All => true,
            ProofPolicy::Questions(ids) => ids.contains(&q.id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: u32,
    pub kind: SensorKind,
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub id: OptionId,
    pub name: String,
    pub next_question: Option<QuestionId>,
    pub credits: Option<u32>,
    /// Position on a likert scale; defaults to the option id when absent.
    pub scale: Option<i64>,
    pub extra: Map<String, Value>,
}

impl QuestionOption {
    pub fn scale_position(&self) -> i64 {
        self.scale.unwrap_or(self.id as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiQuestion {
    pub id: QuestionId,
    pub text: String,
    pub qtype: QuestionType,
    pub location: GeoPoint,
    pub sensors: Vec<SensorSpec>,
    /// Minutes of sensor collection after entering the zone.
    pub time_min: f64,
    pub frequency: Frequency,
    /// Kept for round-trip only; the asset mode decides navigation.
    pub sequence_flag: bool,
    pub visibility: bool,
    pub mandatory: bool,
    pub options: Vec<QuestionOption>,
    /// Preserved verbatim, never interpreted.
    pub combination: Value,
    pub vicinity_m: f64,
    pub extra: Map<String, Value>,
}

impl PoiQuestion {
    pub fn option(&self, id: OptionId) -> Option<&QuestionOption> {
        self.options.iter().find(|o| o.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub id: String,
    pub name: String,
    pub url: String,
    pub mode: Mode,
    pub default_credit: u32,
    pub start: Option<GeoPoint>,
    pub destination: Option<GeoPoint>,
    pub questions: Vec<PoiQuestion>,
    pub localization: Option<ZoneKind>,
    pub proof_policy: Option<ProofPolicy>,
    /// Unknown keys, per nesting level, kept for round-trip.
    pub extra: AssetExtras,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssetExtras {
    pub root: Map<String, Value>,
    pub metadata: Map<String, Value>,
    pub record: Map<String, Value>,
    pub start_and_destination: Map<String, Value>,
}

impl Asset {
    pub fn question(&self, id: QuestionId) -> Option<&PoiQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Question ids in ascending order; this is the visit order in
    /// Sequential mode.
    pub fn ordered_ids(&self) -> Vec<QuestionId> {
        let mut ids: Vec<_> = self.questions.iter().map(|q| q.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Entry point of the Dynamic option graph: question 1, or the lowest id
    /// when there is no question 1.
    pub fn root_question(&self) -> Option<QuestionId> {
        if self.question(1).is_some() {
            Some(1)
        } else {
            self.ordered_ids().first().copied()
        }
    }

    pub fn zone_kind(&self) -> ZoneKind {
        self.localization.unwrap_or(ZoneKind::Circle)
    }

    pub fn proof_policy(&self) -> ProofPolicy {
        self.proof_policy.clone().unwrap_or(ProofPolicy::None)
    }

    /// The point of interest that follows `id`: the first option edge in
    /// Dynamic mode, otherwise the next id in ascending order.
    pub fn next_poi(&self, id: QuestionId) -> Option<&PoiQuestion> {
        let q = self.question(id)?;
        if self.mode == Mode::Dynamic {
            if let Some(next) = q.options.iter().find_map(|o| o.next_question) {
                return self.question(next);
            }
        }
        let ids = self.ordered_ids();
        let pos = ids.iter().position(|&x| x == id)?;
        ids.get(pos + 1).and_then(|&n| self.question(n))
    }

    /// Geofence for a question. Ellipse assets orient the minor axis at the
    /// next point of interest (semi-major = vicinity, semi-minor = half of
    /// it); a question without a distinct next point falls back to a circle.
    pub fn zone_for(&self, id: QuestionId) -> Result<LocalizationZone, GeoError> {
        let q = self
            .question(id)
            .ok_or(GeoError::InvalidZone("unknown question"))?;
        if self.zone_kind() == ZoneKind::Ellipse {
            if let Some(next) = self.next_poi(id) {
                if next.location != q.location {
                    return geo::ellipse_toward(q.location, next.location, q.vicinity_m, q.vicinity_m / 2.0);
                }
            }
        }
        LocalizationZone::circle(q.location, q.vicinity_m)
    }
}
