//! Python bindings: asset codec and validation, geodesy, the modality
//! engine, localized aggregation, an in-memory service and the simulator.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fieldlab::aggregation::{self as agg, AggEvent, AggregateFn, EventKind};
use fieldlab::asset;
use fieldlab::geo::{self, LocalizationZone};
use fieldlab::modality::{AnswerPayload, TaskSession, ZoneEvent};
use fieldlab::service::{ApiRequest, ServiceConfig};
use fieldlab::simulator::{self, Scenario, SimulationLog};
use fieldlab::time::{Timestamp, VirtualClock};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn py_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    json_to_py(py, &serde_json::to_value(v).map_err(value_err)?)
}

fn point(lat: f64, lon: f64) -> PyResult<geo::GeoPoint> {
    geo::GeoPoint::new(lat, lon).map_err(value_err)
}

fn parse_fn(name: &str) -> PyResult<AggregateFn> {
    name.parse().map_err(value_err)
}

/// Great-circle distance in metres.
#[pyfunction]
fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> PyResult<f64> {
    Ok(geo::haversine_distance(point(lat1, lon1)?, point(lat2, lon2)?))
}

/// Point reached from (lat, lon) after `distance_m` along `bearing_deg`.
#[pyfunction]
fn destination(lat: f64, lon: f64, bearing_deg: f64, distance_m: f64) -> PyResult<(f64, f64)> {
    let p = geo::destination(point(lat, lon)?, bearing_deg, distance_m);
    Ok((p.lat_deg(), p.lon_deg()))
}

#[pyclass(name = "Zone", module = "fieldlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyZone(LocalizationZone);

#[pymethods]
impl PyZone {
    #[staticmethod]
    fn circle(lat: f64, lon: f64, radius_m: f64) -> PyResult<Self> {
        Ok(PyZone(LocalizationZone::circle(point(lat, lon)?, radius_m).map_err(value_err)?))
    }

    #[staticmethod]
    fn ellipse(lat: f64, lon: f64, semi_major_m: f64, semi_minor_m: f64, minor_axis_bearing_deg: f64) -> PyResult<Self> {
        LocalizationZone::ellipse(point(lat, lon)?, semi_major_m, semi_minor_m, minor_axis_bearing_deg)
            .map(PyZone)
            .map_err(value_err)
    }

    fn contains(&self, lat: f64, lon: f64) -> PyResult<bool> {
        Ok(geo::zone_contains(&self.0, point(lat, lon)?))
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        serde_json::to_string(&self.0).unwrap_or_default()
    }
}

#[pyclass(name = "Asset", module = "fieldlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyAsset(asset::Asset);

#[pymethods]
impl PyAsset {
    /// Parses an interchange document; raises ValueError on syntax, schema
    /// or range errors.
    #[staticmethod]
    fn parse(document: &str) -> PyResult<Self> {
        asset::parse_asset(document).map(PyAsset).map_err(value_err)
    }

    #[pyo3(signature = (pretty = false))]
    fn to_json(&self, pretty: bool) -> String {
        if pretty {
            asset::serialize_asset_pretty(&self.0)
        } else {
            asset::serialize_asset(&self.0)
        }
    }

    /// Validation report as `{"findings": [...], "notes": [...]}`.
    fn validate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &asset::validate_asset(&self.0))
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn mode(&self) -> String {
        format!("{:?}", self.0.mode)
    }

    #[getter]
    fn question_ids(&self) -> Vec<u32> {
        self.0.ordered_ids()
    }

    fn question(&self, py: Python<'_>, qid: u32) -> PyResult<Py<PyAny>> {
        let q = self.0.question(qid).ok_or_else(|| PyKeyError::new_err(qid))?;
        to_py(py, q)
    }

    fn zone(&self, qid: u32) -> PyResult<PyZone> {
        if self.0.question(qid).is_none() {
            return Err(PyKeyError::new_err(qid));
        }
        self.0.zone_for(qid).map(PyZone).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Asset(id={:?}, mode={:?}, questions={})", self.0.id, self.0.mode, self.0.questions.len())
    }
}

/// Validates a document without raising: parse errors become findings.
#[pyfunction]
fn validate_document(py: Python<'_>, document: &str) -> PyResult<Py<PyAny>> {
    let report = match asset::parse_asset(document) {
        Ok(a) => asset::validate_asset(&a),
        Err(e) => asset::ValidationReport {
            findings: vec![asset::Finding { path: e.path().unwrap_or("").to_string(), message: e.to_string() }],
            notes: vec![],
        },
    };
    to_py(py, &report)
}

/// One participant working through one asset, driven by explicit location
/// updates and answers. Times are milliseconds since the epoch.
#[pyclass(name = "Session", module = "fieldlab")]
struct PySession(TaskSession);

fn zone_event(e: ZoneEvent) -> (&'static str, u32) {
    match e {
        ZoneEvent::Entered(q) => ("entered", q),
        ZoneEvent::Left(q) => ("left", q),
    }
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (asset, participant = "p-1", start_ms = 0))]
    fn new(asset: &PyAsset, participant: &str, start_ms: i64) -> PyResult<Self> {
        TaskSession::new(
            "ses-1".into(),
            participant.into(),
            "asg-1".into(),
            "tsk-1".into(),
            asset.0.clone(),
            Timestamp(start_ms),
        )
        .map(PySession)
        .map_err(value_err)
    }

    /// Feeds a location fix; returns `[("entered"|"left", question_id), ...]`.
    fn move_to(&mut self, lat: f64, lon: f64, t_ms: i64) -> PyResult<Vec<(&'static str, u32)>> {
        let events = self.0.on_location_update(point(lat, lon)?, Timestamp(t_ms)).map_err(value_err)?;
        Ok(events.into_iter().map(zone_event).collect())
    }

    /// Answers with either `options` (choice questions) or `text`.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (question_id, lat, lon, t_ms, options = None, text = None))]
    fn answer(
        &mut self,
        py: Python<'_>,
        question_id: u32,
        lat: f64,
        lon: f64,
        t_ms: i64,
        options: Option<Vec<u32>>,
        text: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let payload = match (options, text) {
            (Some(o), None) => AnswerPayload::Options(o),
            (None, Some(t)) => AnswerPayload::Text(t),
            _ => return Err(PyValueError::new_err("pass exactly one of options or text")),
        };
        let outcome = self
            .0
            .submit_answer(question_id, payload, point(lat, lon)?, None, Timestamp(t_ms))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &outcome)
    }

    fn status(&self, question_id: u32) -> PyResult<String> {
        self.0
            .status(question_id)
            .map(|s| format!("{s:?}").to_lowercase())
            .ok_or_else(|| PyKeyError::new_err(question_id))
    }

    #[getter]
    fn unlocked(&self) -> Vec<u32> {
        self.0.unlocked_pois().into_iter().collect()
    }

    #[getter]
    fn is_complete(&self) -> bool {
        self.0.is_complete()
    }

    #[getter]
    fn credits(&self) -> u64 {
        self.0.credits_earned
    }

    fn answers(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.answers)
    }
}

/// Live aggregate over one task. Every mutation is also kept as an event so
/// that the result can be checked against the oracle.
#[pyclass(name = "AggregateState", module = "fieldlab")]
struct PyAggregateState {
    state: agg::AggregateState,
    log: Vec<AggEvent>,
}

impl PyAggregateState {
    fn record(&mut self, t_ms: i64, kind: EventKind, participant: &str, value: Option<f64>) -> PyResult<()> {
        let e = AggEvent { t: Timestamp(t_ms), kind, participant: participant.into(), value };
        self.state.apply(&e).map_err(value_err)?;
        self.log.push(e);
        Ok(())
    }
}

#[pymethods]
impl PyAggregateState {
    #[new]
    #[pyo3(signature = (task = "tsk-1"))]
    fn new(task: &str) -> Self {
        PyAggregateState { state: agg::AggregateState::new(task), log: vec![] }
    }

    #[pyo3(signature = (participant, value, t_ms = 0))]
    fn join(&mut self, participant: &str, value: f64, t_ms: i64) -> PyResult<()> {
        self.record(t_ms, EventKind::Join, participant, Some(value))
    }

    #[pyo3(signature = (participant, value, t_ms = 0))]
    fn update(&mut self, participant: &str, value: f64, t_ms: i64) -> PyResult<()> {
        self.record(t_ms, EventKind::Update, participant, Some(value))
    }

    #[pyo3(signature = (participant, t_ms = 0))]
    fn leave(&mut self, participant: &str, t_ms: i64) -> PyResult<()> {
        self.record(t_ms, EventKind::Leave, participant, None)
    }

    /// `sum`, `avg`, `max`, `min` or `count`; None when undefined.
    #[pyo3(signature = (function = "avg"))]
    fn read(&self, function: &str) -> PyResult<Option<f64>> {
        Ok(self.state.read(parse_fn(function)?))
    }

    #[getter]
    fn count(&self) -> u64 {
        self.state.count()
    }

    /// Event log as NDJSON, readable by `oracle_aggregate`.
    fn event_log(&self) -> String {
        agg::write_event_log(&self.log)
    }
}

/// Recomputes an aggregate from scratch over an NDJSON event log.
#[pyfunction]
#[pyo3(signature = (event_log, function = "avg"))]
fn oracle_aggregate(event_log: &str, function: &str) -> PyResult<Option<f64>> {
    let events = agg::parse_event_log(event_log).map_err(value_err)?;
    agg::oracle_aggregate(&events, parse_fn(function)?).map_err(value_err)
}

/// In-memory service on a virtual clock. Requests and responses are plain
/// dicts in the shape of the HTTP API's operations.
#[pyclass(name = "Service", module = "fieldlab")]
struct PyService {
    svc: fieldlab::service::Service,
    clock: VirtualClock,
}

#[pymethods]
impl PyService {
    #[new]
    #[pyo3(signature = (secret_key = "fieldlab-secret", designer_token = "designer-token", start_ms = 0))]
    fn new(secret_key: &str, designer_token: &str, start_ms: i64) -> PyResult<Self> {
        let clock = VirtualClock::new(Timestamp(start_ms));
        let config = ServiceConfig::ephemeral(secret_key, "designer", designer_token);
        let svc = fieldlab::service::Service::new(config, Arc::new(clock.clone())).map_err(value_err)?;
        Ok(PyService { svc, clock })
    }

    fn advance_ms(&self, ms: i64) {
        self.clock.advance_ms(ms);
    }

    /// Handles one request such as `{"op": "create_project", "name": "x"}`;
    /// returns `(status, body)`.
    #[pyo3(signature = (request, bearer = None))]
    fn request(&self, py: Python<'_>, request: &Bound<'_, PyAny>, bearer: Option<&str>) -> PyResult<(u16, Py<PyAny>)> {
        let req: ApiRequest = serde_json::from_value(py_to_json(py, request)?).map_err(value_err)?;
        let resp = self.svc.handle(bearer, req);
        Ok((resp.status, json_to_py(py, &resp.body)?))
    }

    /// The event log as NDJSON.
    fn event_log(&self) -> String {
        fieldlab::service::write_event_log(&self.svc.events())
    }

    fn export(&self, task_id: &str) -> PyResult<String> {
        self.svc.export_task(task_id).ok_or_else(|| PyKeyError::new_err(task_id.to_string()))
    }
}

/// Result of a simulated cohort.
#[pyclass(name = "SimulationRun", module = "fieldlab", frozen)]
struct PySimulationRun {
    #[pyo3(get)]
    task_id: String,
    #[pyo3(get)]
    log: String,
    #[pyo3(get)]
    export: String,
}

/// Runs a scenario (TOML text) against an asset document.
#[pyfunction]
fn simulate(scenario_toml: &str, asset_document: &str) -> PyResult<PySimulationRun> {
    let scenario = Scenario::from_toml(scenario_toml).map_err(value_err)?;
    let spec = scenario.cohort(asset_document).map_err(value_err)?;
    let run = simulator::run_cohort(&spec).map_err(value_err)?;
    Ok(PySimulationRun { export: run.export(), log: run.log.to_ndjson(), task_id: run.task_id })
}

/// Re-issues every request of a simulation log; returns the export of each
/// task, or raises RuntimeError on divergence.
#[pyfunction]
fn replay(log: &str) -> PyResult<BTreeMap<String, String>> {
    let log = SimulationLog::from_ndjson(log).map_err(value_err)?;
    simulator::replay(&log).map(|o| o.exports).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "fieldlab")]
fn fieldlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyZone>()?;
    m.add_class::<PyAsset>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyAggregateState>()?;
    m.add_class::<PyService>()?;
    m.add_class::<PySimulationRun>()?;
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(destination, m)?)?;
    m.add_function(wrap_pyfunction!(validate_document, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add("LISTING_1", fieldlab::fixtures::LISTING_1)?;
    m.add("SUSTAINABILITY_ASSET", fieldlab::fixtures::SUSTAINABILITY_ASSET)?;
    m.add("SUSTAINABILITY_SCENARIO", fieldlab::fixtures::SUSTAINABILITY_SCENARIO)?;
    Ok(())
}
