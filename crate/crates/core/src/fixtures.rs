//! Checked-in asset documents and small asset builders shared by tests,
//! scenarios and the bindings.

use serde_json::{Map, Value};

use crate::asset::{Asset, Frequency, Mode, PoiQuestion, QuestionOption, QuestionType, SensorKind, SensorSpec};
use crate::geo::{destination, GeoPoint};

/// The dashboard export used as the golden interchange document, verbatim
/// (including its trailing comma and the tab inside the question text).
pub const LISTING_1: &str = include_str!("../fixtures/listing1.json");

pub const CYCLING_ASSET: &str = include_str!("../fixtures/cycling_asset.json");
pub const CYCLING_SCENARIO: &str = include_str!("../fixtures/cycling_scenario.toml");
pub const SUSTAINABILITY_ASSET: &str = include_str!("../fixtures/sustainability_asset.json");
pub const SUSTAINABILITY_SCENARIO: &str = include_str!("../fixtures/sustainability_scenario.toml");

/// Zurich main station; stand-in origin for synthetic points of interest.
pub fn zurich() -> GeoPoint {
    GeoPoint::new(47.3779, 8.5403).expect("valid")
}

/// Two radio questions 200 m apart. `next1`/`next2` set the NextQuestion of
/// the first option of question 1 and 2.
pub fn two_question_document(mode: &str, next1: Option<u32>, next2: Option<u32>) -> String {
    let n = |x: Option<u32>| x.map(|v| v.to_string()).unwrap_or_else(|| "null".into());
    format!(
        r#"{{"Id": "two", "Name": "two", "Url": "",
  "Metadata": {{"record": {{
    "StartAndDestinationModel": {{"StartLatitude": null, "StartLongitude": null,
      "DestinationLatitude": null, "DestinationLongitude": null, "Mode": "{mode}", "DefaultCredit": "2"}},
    "SampleDataModel": [
      {{"id": 1, "Question": "q1", "Type": "radio", "Latitude": "47.3779", "Longitude": "8.5403",
        "Sensor": [], "Time": "0", "Frequency": "Low", "Sequence": "Disable", "Visibility": "true",
        "Mandatory": "true", "Option": [{{"id": 1, "Name": "a", "NextQuestion": {}, "Credits": ""}},
        {{"id": 2, "Name": "b", "NextQuestion": null, "Credits": "5"}}], "Combination": null, "Vicinity": "25"}},
      {{"id": 2, "Question": "q2", "Type": "radio", "Latitude": "47.3797", "Longitude": "8.5403",
        "Sensor": [], "Time": "0", "Frequency": "Low", "Sequence": "Disable", "Visibility": "true",
        "Mandatory": "true", "Option": [{{"id": 1, "Name": "a", "NextQuestion": {}, "Credits": ""}},
        {{"id": 2, "Name": "b", "NextQuestion": null, "Credits": ""}}], "Combination": null, "Vicinity": "25"}}
    ]}}}}}}"#,
        n(next1),
        n(next2)
    )
}

fn question(id: u32, qtype: QuestionType, location: GeoPoint, options: Vec<QuestionOption>) -> PoiQuestion {
    PoiQuestion {
        id,
        text: format!("question {id}"),
        qtype,
        location,
        sensors: vec![],
        time_min: 0.0,
        frequency: Frequency::Low,
        sequence_flag: false,
        visibility: true,
        mandatory: true,
        options,
        combination: Value::Null,
        vicinity_m: 25.0,
        extra: Map::new(),
    }
}

pub fn option(id: u32, next_question: Option<u32>, credits: Option<u32>) -> QuestionOption {
    QuestionOption {
        id,
        name: format!("option {id}"),
        next_question,
        credits,
        scale: None,
        extra: Map::new(),
    }
}

fn empty_asset(name: &str, mode: Mode, questions: Vec<PoiQuestion>) -> Asset {
    Asset {
        id: name.into(),
        name: name.into(),
        url: String::new(),
        mode,
        default_credit: 3,
        start: None,
        destination: None,
        questions,
        localization: None,
        proof_policy: None,
        extra: Default::default(),
    }
}

/// Four likert (1..5) points of interest 300 m apart heading east, with
/// gyroscope and location sensors at medium frequency for one minute.
pub fn four_poi_asset(mode: Mode) -> Asset {
    let questions = (1..=4)
        .map(|id| {
            let loc = destination(zurich(), 90.0, 300.0 * id as f64);
            let opts = (1..=5).map(|o| option(o, None, None)).collect();
            let mut q = question(id, QuestionType::Likert, loc, opts);
            q.sensors = vec![
                SensorSpec { id: 1, kind: SensorKind::Gyroscope, extra: Map::new() },
                SensorSpec { id: 2, kind: SensorKind::Location, extra: Map::new() },
            ];
            q.time_min = 1.0;
            q.frequency = Frequency::Medium;
            q
        })
        .collect();
    empty_asset("four-poi", mode, questions)
}

/// Dynamic asset of radio questions; `spec` lists each question id with the
/// NextQuestion of its options. Questions are placed 200 m apart.
pub fn dynamic_asset(spec: &[(u32, &[Option<u32>])]) -> Asset {
    let questions = spec
        .iter()
        .map(|(id, nexts)| {
            let loc = destination(zurich(), 0.0, 200.0 * *id as f64);
            let opts = nexts
                .iter()
                .enumerate()
                .map(|(i, n)| option(i as u32 + 1, *n, None))
                .collect();
            question(*id, QuestionType::Radio, loc, opts)
        })
        .collect();
    empty_asset("dynamic", Mode::Dynamic, questions)
}

/// Five-node option graph used by the Dynamic modality suite:
/// 1 → {2, 3}, 2 → {4, 5}, 3 → {5, end}, 4 → end, 5 → end.
pub fn five_node_dynamic_asset() -> Asset {
    dynamic_asset(&[
        (1, &[Some(2), Some(3)]),
        (2, &[Some(4), Some(5)]),
        (3, &[Some(5), None]),
        (4, &[None, None]),
        (5, &[None, None]),
    ])
}

/// Single textbox question, the smallest valid asset.
pub fn minimal_textbox_asset() -> Asset {
    empty_asset("minimal", Mode::Simple, vec![question(1, QuestionType::Textbox, zurich(), vec![])])
}

pub fn cycling_scenario() -> crate::simulator::Scenario {
    crate::simulator::Scenario::from_toml(CYCLING_SCENARIO).expect("fixture scenario parses")
}

pub fn sustainability_scenario() -> crate::simulator::Scenario {
    crate::simulator::Scenario::from_toml(SUSTAINABILITY_SCENARIO).expect("fixture scenario parses")
}
