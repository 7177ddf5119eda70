//! Asset interchange documents.
//!
//! The layout is the dashboard's JSON export: string-encoded numbers and
//! booleans, `""` meaning "absent", and all question data nested under
//! `Metadata.record`. Dashboard exports are not always strict JSON (trailing
//! commas, raw tabs inside strings), so documents go through
//! [`normalize_lenient_json`] before parsing.

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use super::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssetError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("range error at {path}: {message}")]
    Range { path: String, message: String },
}

impl AssetError {
    pub fn path(&self) -> Option<&str> {
        match self {
            AssetError::Syntax { .. } => None,
            AssetError::Schema { path, .. } | AssetError::Range { path, .. } => Some(path),
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        AssetError::Schema { path: path.into(), message: message.into() }
    }

    fn range(path: impl Into<String>, message: impl Into<String>) -> Self {
        AssetError::Range { path: path.into(), message: message.into() }
    }
}

/// Rewrites near-JSON into strict JSON: drops trailing commas before `]` or
/// `}` and escapes raw control characters inside string literals.
pub fn normalize_lenient_json(text: &str) -> String {
    let chars: Vec<char> = text.trim_start_matches('\u{feff}').chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            if escaped {
                escaped = false;
                out.push(c);
            } else if c == '\\' {
                escaped = true;
                out.push(c);
            } else if c == '"' {
                in_string = false;
                out.push(c);
            } else if (c as u32) < 0x20 {
                match c {
                    '\t' => out.push_str("\\t"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    _ => out.push_str(&format!("\\u{:04x}", c as u32)),
                }
            } else {
                out.push(c);
            }
        } else if c == '"' {
            in_string = true;
            out.push(c);
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if !matches!(next, Some(']') | Some('}')) {
                out.push(c);
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

pub fn parse_asset(document: &str) -> Result<Asset, AssetError> {
    let normalized = normalize_lenient_json(document);
    let value: Value = serde_json::from_str(&normalized).map_err(|e| AssetError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    asset_from_value(value)
}

pub fn serialize_asset(a: &Asset) -> String {
    asset_to_value(a).to_string()
}

pub fn serialize_asset_pretty(a: &Asset) -> String {
    serde_json::to_string_pretty(&asset_to_value(a)).expect("asset value serializes")
}

struct Obj {
    map: Map<String, Value>,
    path: String,
}

impl Obj {
    fn new(v: Value, path: &str) -> Result<Obj, AssetError> {
        match v {
            Value::Object(map) => Ok(Obj { map, path: path.to_string() }),
            _ => Err(AssetError::schema(display_path(path), "expected an object")),
        }
    }

    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.path, key)
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.shift_remove(key)
    }

    fn require(&mut self, key: &str) -> Result<Value, AssetError> {
        match self.take(key) {
            Some(v) => Ok(v),
            None => Err(AssetError::schema(self.at(key), "missing field")),
        }
    }

    fn string(&mut self, key: &str) -> Result<String, AssetError> {
        let path = self.at(key);
        match self.require(key)? {
            Value::String(s) => Ok(s),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(AssetError::schema(path, "expected a string")),
        }
    }

    fn opt_string(&mut self, key: &str) -> Result<Option<String>, AssetError> {
        let path = self.at(key);
        match self.take(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(_) => Err(AssetError::schema(path, "expected a string")),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, AssetError> {
        let path = self.at(key);
        match self.take(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => n
                .as_f64()
                .map(Some)
                .ok_or_else(|| AssetError::schema(path, "not representable as a number")),
            Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
            Some(Value::String(s)) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| AssetError::schema(path, format!("expected a number, got {s:?}"))),
            Some(_) => Err(AssetError::schema(path, "expected a number")),
        }
    }

    fn f64(&mut self, key: &str) -> Result<f64, AssetError> {
        let path = self.at(key);
        self.opt_f64(key)?
            .ok_or_else(|| AssetError::schema(path, "missing value"))
    }

    fn opt_u32(&mut self, key: &str) -> Result<Option<u32>, AssetError> {
        let path = self.at(key);
        match self.opt_f64(key)? {
            None => Ok(None),
            Some(x) if x.fract() != 0.0 => Err(AssetError::schema(path, "expected an integer")),
            Some(x) if x < 0.0 || x > u32::MAX as f64 => {
                Err(AssetError::range(path, format!("{x} is not a non-negative integer")))
            }
            Some(x) => Ok(Some(x as u32)),
        }
    }

    fn u32(&mut self, key: &str) -> Result<u32, AssetError> {
        let path = self.at(key);
        self.opt_u32(key)?
            .ok_or_else(|| AssetError::schema(path, "missing value"))
    }

    fn boolean(&mut self, key: &str, default: bool) -> Result<bool, AssetError> {
        let path = self.at(key);
        match self.take(key) {
            None | Some(Value::Null) => Ok(default),
            Some(Value::Bool(b)) => Ok(b),
            Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "enable" | "enabled" | "yes" | "1" => Ok(true),
                "false" | "disable" | "disabled" | "no" | "0" => Ok(false),
                "" => Ok(default),
                _ => Err(AssetError::schema(path, format!("expected a boolean, got {s:?}"))),
            },
            Some(_) => Err(AssetError::schema(path, "expected a boolean")),
        }
    }

    fn array(&mut self, key: &str) -> Result<Vec<Value>, AssetError> {
        let path = self.at(key);
        match self.take(key) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(items)) => Ok(items),
            Some(_) => Err(AssetError::schema(path, "expected an array")),
        }
    }

    fn rest(self) -> Map<String, Value> {
        self.map
    }
}

fn display_path(p: &str) -> String {
    if p.is_empty() {
        "$".into()
    } else {
        p.into()
    }
}

fn point(lat: Option<f64>, lon: Option<f64>, lat_path: String, lon_path: String) -> Result<Option<GeoPoint>, AssetError> {
    match (lat, lon) {
        (None, None) => Ok(None),
        (Some(la), Some(lo)) => {
            if !(-90.0..=90.0).contains(&la) {
                return Err(AssetError::range(lat_path, format!("latitude {la} outside [-90, 90]")));
            }
            GeoPoint::new(la, lo)
                .map(Some)
                .map_err(|e| AssetError::range(lon_path, e.to_string()))
        }
        (None, Some(_)) => Err(AssetError::schema(lat_path, "latitude missing while longitude is set")),
        (Some(_), None) => Err(AssetError::schema(lon_path, "longitude missing while latitude is set")),
    }
}

fn asset_from_value(v: Value) -> Result<Asset, AssetError> {
    let mut root = Obj::new(v, "")?;
    let id = root.string("Id")?;
    let name = root.string("Name")?;
    let url = root.opt_string("Url")?.unwrap_or_default();
    let mut metadata = Obj::new(root.require("Metadata")?, "Metadata")?;
    let mut record = Obj::new(metadata.require("record")?, "Metadata.record")?;
    // Paths inside the record are reported relative to it.
    record.path.clear();

    let mut sd = Obj::new(record.require("StartAndDestinationModel")?, "StartAndDestinationModel")?;
    let start_lat = sd.opt_f64("StartLatitude")?;
    let start_lon = sd.opt_f64("StartLongitude")?;
    let start = point(start_lat, start_lon, sd.at("StartLatitude"), sd.at("StartLongitude"))?;
    let dest_lat = sd.opt_f64("DestinationLatitude")?;
    let dest_lon = sd.opt_f64("DestinationLongitude")?;
    let destination = point(dest_lat, dest_lon, sd.at("DestinationLatitude"), sd.at("DestinationLongitude"))?;
    let mode_path = sd.at("Mode");
    let mode = match sd.string("Mode")?.trim().to_ascii_lowercase().as_str() {
        "simple" => Mode::Simple,
        "sequential" => Mode::Sequential,
        "dynamic" => Mode::Dynamic,
        other => return Err(AssetError::schema(mode_path, format!("unknown mode {other:?}"))),
    };
    let default_credit = sd.opt_u32("DefaultCredit")?.unwrap_or(0);
    let loc_path = sd.at("Localization");
    let localization = match sd.opt_string("Localization")? {
        None => None,
        Some(s) => Some(match s.trim().to_ascii_lowercase().as_str() {
            "circle" => ZoneKind::Circle,
            "ellipse" => ZoneKind::Ellipse,
            other => return Err(AssetError::schema(loc_path, format!("unknown localization {other:?}"))),
        }),
    };
    let policy_path = sd.at("ProofPolicy");
    let proof_policy = match sd.opt_string("ProofPolicy")? {
        None => None,
        Some(s) => Some(parse_policy(&s).ok_or_else(|| {
            AssetError::schema(policy_path, format!("unknown proof policy {s:?}"))
        })?),
    };

    let items = match record.require("SampleDataModel")? {
        Value::Array(items) => items,
        _ => return Err(AssetError::schema("SampleDataModel", "expected an array")),
    };
    let questions = items
        .into_iter()
        .enumerate()
        .map(|(i, item)| question_from_value(item, &format!("SampleDataModel[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Asset {
        id,
        name,
        url,
        mode,
        default_credit,
        start,
        destination,
        questions,
        localization,
        proof_policy,
        extra: AssetExtras {
            start_and_destination: sd.rest(),
            record: record.rest(),
            metadata: metadata.rest(),
            root: root.rest(),
        },
    })
}

fn parse_policy(s: &str) -> Option<ProofPolicy> {
    match s.trim().to_ascii_lowercase().as_str() {
        "none" => Some(ProofPolicy::None),
        "mandatory" => Some(ProofPolicy::AllMandatory),
        "all" => Some(ProofPolicy::All),
        list => list
            .split(',')
            .map(|x| x.trim().parse::<QuestionId>().ok())
            .collect::<Option<BTreeSet<_>>>()
            .map(ProofPolicy::Questions),
    }
}

fn policy_to_string(p: &ProofPolicy) -> String {
    match p {
        ProofPolicy::None => "None".into(),
        ProofPolicy::AllMandatory => "Mandatory".into(),
        ProofPolicy::All => "All".into(),
        ProofPolicy::Questions(ids) => ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
    }
}

fn question_from_value(v: Value, path: &str) -> Result<PoiQuestion, AssetError> {
    let mut o = Obj::new(v, path)?;
    let id = o.u32("id")?;
    let text = o.string("Question")?;
    let type_path = o.at("Type");
    let qtype = match o.string("Type")?.trim().to_ascii_lowercase().as_str() {
        "radio" => QuestionType::Radio,
        "checkbox" => QuestionType::Checkbox,
        "likert" => QuestionType::Likert,
        "textbox" | "text" | "text box" => QuestionType::Textbox,
        other => return Err(AssetError::schema(type_path, format!("unknown question type {other:?}"))),
    };
    let lat_path = o.at("Latitude");
    let lon_path = o.at("Longitude");
    let lat = o.f64("Latitude")?;
    let lon = o.f64("Longitude")?;
    let location = point(Some(lat), Some(lon), lat_path, lon_path)?.expect("both coordinates present");

    let sensor_path = o.at("Sensor");
    let sensors = o
        .array("Sensor")?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut so = Obj::new(s, &format!("{sensor_path}[{i}]"))?;
            let sid = so.opt_u32("id")?.unwrap_or(i as u32 + 1);
            let name_path = so.at("Name");
            let kind = so
                .string("Name")?
                .parse::<SensorKind>()
                .map_err(|m| AssetError::schema(name_path, m))?;
            Ok(SensorSpec { id: sid, kind, extra: so.rest() })
        })
        .collect::<Result<Vec<_>, AssetError>>()?;

    let time_path = o.at("Time");
    let time_min = o.opt_f64("Time")?.unwrap_or(0.0);
    if time_min < 0.0 {
        return Err(AssetError::range(time_path, "duration must be non-negative"));
    }
    let freq_path = o.at("Frequency");
    let frequency = match o.opt_string("Frequency")? {
        None => Frequency::Medium,
        Some(f) => match f.trim().to_ascii_lowercase().as_str() {
            "low" => Frequency::Low,
            "medium" => Frequency::Medium,
            "high" => Frequency::High,
            other => return Err(AssetError::schema(freq_path, format!("unknown frequency {other:?}"))),
        },
    };
    let sequence_flag = o.boolean("Sequence", false)?;
    let visibility = o.boolean("Visibility", true)?;
    let mandatory = o.boolean("Mandatory", false)?;

    let option_path = o.at("Option");
    let options = o
        .array("Option")?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut oo = Obj::new(v, &format!("{option_path}[{i}]"))?;
            let oid = oo.u32("id")?;
            let name = oo.opt_string("Name")?.unwrap_or_default();
            let next_question = oo.opt_u32("NextQuestion")?;
            let credits = oo.opt_u32("Credits")?;
            let scale_path = oo.at("Scale");
            let scale = match oo.opt_f64("Scale")? {
                None => None,
                Some(x) if x.fract() == 0.0 => Some(x as i64),
                Some(_) => return Err(AssetError::schema(scale_path, "expected an integer")),
            };
            Ok(QuestionOption { id: oid, name, next_question, credits, scale, extra: oo.rest() })
        })
        .collect::<Result<Vec<_>, AssetError>>()?;

    let combination = o.take("Combination").unwrap_or(Value::Null);
    let vic_path = o.at("Vicinity");
    let vicinity_m = o.f64("Vicinity")?;
    if vicinity_m <= 0.0 {
        return Err(AssetError::range(vic_path, "vicinity must be positive"));
    }

    Ok(PoiQuestion {
        id,
        text,
        qtype,
        location,
        sensors,
        time_min,
        frequency,
        sequence_flag,
        visibility,
        mandatory,
        options,
        combination,
        vicinity_m,
        extra: o.rest(),
    })
}

fn num_str(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> Value {
    x.map(|v| Value::String(num_str(v))).unwrap_or(Value::Null)
}

fn extend(target: &mut Map<String, Value>, extra: &Map<String, Value>) {
    for (k, v) in extra {
        target.insert(k.clone(), v.clone());
    }
}

fn asset_to_value(a: &Asset) -> Value {
    let mut sd = Map::new();
    sd.insert("StartLatitude".into(), opt_num(a.start.map(|p| p.lat_deg())));
    sd.insert("StartLongitude".into(), opt_num(a.start.map(|p| p.lon_deg())));
    sd.insert("DestinationLatitude".into(), opt_num(a.destination.map(|p| p.lat_deg())));
    sd.insert("DestinationLongitude".into(), opt_num(a.destination.map(|p| p.lon_deg())));
    let mode = match a.mode {
        Mode::Simple => "Simple",
        Mode::Sequential => "Sequential",
        Mode::Dynamic => "Dynamic",
    };
    sd.insert("Mode".into(), json!(mode));
    sd.insert("DefaultCredit".into(), json!(a.default_credit.to_string()));
    if let Some(kind) = a.localization {
        let k = match kind {
            ZoneKind::Circle => "Circle",
            ZoneKind::Ellipse => "Ellipse",
        };
        sd.insert("Localization".into(), json!(k));
    }
    if let Some(p) = &a.proof_policy {
        sd.insert("ProofPolicy".into(), json!(policy_to_string(p)));
    }
    extend(&mut sd, &a.extra.start_and_destination);

    let questions: Vec<Value> = a.questions.iter().map(question_to_value).collect();

    let mut record = Map::new();
    record.insert("StartAndDestinationModel".into(), Value::Object(sd));
    record.insert("SampleDataModel".into(), Value::Array(questions));
    extend(&mut record, &a.extra.record);

    let mut metadata = Map::new();
    metadata.insert("record".into(), Value::Object(record));
    extend(&mut metadata, &a.extra.metadata);

    let mut root = Map::new();
    root.insert("Id".into(), json!(a.id));
    root.insert("Name".into(), json!(a.name));
    root.insert("Url".into(), json!(a.url));
    root.insert("Metadata".into(), Value::Object(metadata));
    extend(&mut root, &a.extra.root);
    Value::Object(root)
}

fn question_to_value(q: &PoiQuestion) -> Value {
    let mut m = Map::new();
    m.insert("id".into(), json!(q.id));
    m.insert("Question".into(), json!(q.text));
    let t = match q.qtype {
        QuestionType::Radio => "radio",
        QuestionType::Checkbox => "checkbox",
        QuestionType::Likert => "likert",
        QuestionType::Textbox => "textbox",
    };
    m.insert("Type".into(), json!(t));
    m.insert("Latitude".into(), json!(num_str(q.location.lat_deg())));
    m.insert("Longitude".into(), json!(num_str(q.location.lon_deg())));
    let sensors: Vec<Value> = q
        .sensors
        .iter()
        .map(|s| {
            let mut sm = Map::new();
            sm.insert("id".into(), json!(s.id));
            sm.insert("Name".into(), json!(s.kind.display_name()));
            extend(&mut sm, &s.extra);
            Value::Object(sm)
        })
        .collect();
    m.insert("Sensor".into(), Value::Array(sensors));
    m.insert("Time".into(), json!(num_str(q.time_min)));
    let freq = match q.frequency {
        Frequency::Low => "Low",
        Frequency::Medium => "Medium",
        Frequency::High => "High",
    };
    m.insert("Frequency".into(), json!(freq));
    m.insert("Sequence".into(), json!(if q.sequence_flag { "Enable" } else { "Disable" }));
    m.insert("Visibility".into(), json!(q.visibility.to_string()));
    m.insert("Mandatory".into(), json!(q.mandatory.to_string()));
    let options: Vec<Value> = q
        .options
        .iter()
        .map(|o| {
            let mut om = Map::new();
            om.insert("id".into(), json!(o.id));
            om.insert("Name".into(), json!(o.name));
            om.insert("NextQuestion".into(), o.next_question.map(|n| json!(n)).unwrap_or(Value::Null));
            om.insert("Credits".into(), json!(o.credits.map(|c| c.to_string()).unwrap_or_default()));
            if let Some(s) = o.scale {
                om.insert("Scale".into(), json!(s.to_string()));
            }
            extend(&mut om, &o.extra);
            Value::Object(om)
        })
        .collect();
    m.insert("Option".into(), Value::Array(options));
    m.insert("Combination".into(), q.combination.clone());
    m.insert("Vicinity".into(), json!(num_str(q.vicinity_m)));
    extend(&mut m, &q.extra);
    Value::Object(m)
}
