use std::sync::Arc;

use fieldlab::fixtures::{self, LISTING_1};
use fieldlab::geo::{destination, GeoPoint};
use fieldlab::modality::AnswerPayload;
use fieldlab::presence::ChallengeSpec;
use fieldlab::service::{fold, ApiRequest, ApiResponse, Service, ServiceConfig};
use fieldlab::time::{Timestamp, VirtualClock};
use serde_json::Value;

const DESIGNER: &str = "designer-token";

struct Harness {
    svc: Service,
    clock: VirtualClock,
}

impl Harness {
    fn new() -> Self {
        let clock = VirtualClock::new(Timestamp(1_612_878_327_000));
        let svc = Service::new(ServiceConfig::ephemeral("test-secret", "alice", DESIGNER), Arc::new(clock.clone())).unwrap();
        Harness { svc, clock }
    }

    fn designer(&self, req: ApiRequest) -> ApiResponse {
        self.svc.handle(Some(DESIGNER), req)
    }

    fn ok(&self, token: Option<&str>, req: ApiRequest) -> Value {
        let res = self.svc.handle(token, req.clone());
        assert!(res.is_success(), "{req:?} -> {res:?}");
        res.body
    }

    fn project(&self, auto_assign: bool) -> String {
        let res = self.designer(ApiRequest::CreateProject { name: "p".into(), auto_assign });
        assert_eq!(res.status, 201);
        res.body["id"].as_str().unwrap().to_string()
    }

    /// Project, task, Listing 1 asset, activated task, one participant with
    /// an open session. Returns (task, asset, participant token, session).
    fn listing_session(&self) -> (String, String, String, String) {
        let p = self.project(true);
        let task = self.ok(Some(DESIGNER), ApiRequest::CreateTask { project_id: p.clone(), name: "t".into() })["id"]
            .as_str()
            .unwrap()
            .to_string();
        let up = self.ok(Some(DESIGNER), ApiRequest::UploadAsset { project_id: p.clone(), document: LISTING_1.into() });
        let asset = up["asset_id"].as_str().unwrap().to_string();
        let assignment = up["assignment_id"].as_str().unwrap().to_string();
        self.ok(Some(DESIGNER), ApiRequest::ActivateTask { task_id: task.clone() });
        let code = self.ok(Some(DESIGNER), ApiRequest::CreateAccessCode { project_id: p, max_uses: None, ttl_s: None })["code"]
            .as_str()
            .unwrap()
            .to_string();
        let sub = self.ok(None, ApiRequest::Subscribe { code, pseudonym: None });
        let token = sub["token"].as_str().unwrap().to_string();
        let ses = self.ok(Some(&token), ApiRequest::StartSession { assignment_id: assignment })["session_id"]
            .as_str()
            .unwrap()
            .to_string();
        (task, asset, token, ses)
    }
}

fn poi() -> GeoPoint {
    GeoPoint::new(47.3715915, 8.538603799999999).unwrap()
}

#[test]
fn listing_upload_returns_created() {
    let h = Harness::new();
    let p = h.project(false);
    let res = h.designer(ApiRequest::UploadAsset { project_id: p, document: LISTING_1.into() });
    assert_eq!(res.status, 201);
    assert_eq!(res.body["asset_id"], "ast-1");
    assert!(res.body["assignment_id"].is_null());
}

#[test]
fn schema_error_reports_path() {
    let h = Harness::new();
    let p = h.project(false);
    let doc = LISTING_1.replace("\"Latitude\": \"47.3715915\"", "\"Latitude\": \"north\"");
    let res = h.designer(ApiRequest::UploadAsset { project_id: p, document: doc });
    assert_eq!(res.status, 400);
    assert_eq!(res.error_kind(), Some("SchemaError"));
    assert_eq!(res.body["path"], "SampleDataModel[0].Latitude");
}

#[test]
fn validation_findings_reject_upload() {
    let h = Harness::new();
    let p = h.project(false);
    let doc = fixtures::two_question_document("Dynamic", Some(9), None);
    let res = h.designer(ApiRequest::UploadAsset { project_id: p, document: doc });
    assert_eq!(res.status, 400);
    assert_eq!(res.error_kind(), Some("ValidationFailed"));
    assert!(res.body["findings"].to_string().contains("dangling NextQuestion 9"));
}

#[test]
fn authentication_is_required() {
    let h = Harness::new();
    assert_eq!(h.svc.handle(None, ApiRequest::CreateProject { name: "x".into(), auto_assign: false }).status, 401);
    assert_eq!(h.svc.handle(Some("nope"), ApiRequest::CreateProject { name: "x".into(), auto_assign: false }).status, 401);
}

#[test]
fn cross_project_assignment_conflicts() {
    let h = Harness::new();
    let a = h.project(false);
    let b = h.project(false);
    let asset = h.ok(Some(DESIGNER), ApiRequest::UploadAsset { project_id: a, document: LISTING_1.into() })["asset_id"]
        .as_str()
        .unwrap()
        .to_string();
    let task = h.ok(Some(DESIGNER), ApiRequest::CreateTask { project_id: b, name: "t".into() })["id"]
        .as_str()
        .unwrap()
        .to_string();
    let res = h.designer(ApiRequest::CreateAssignment { asset_id: asset, task_id: task, participants: Default::default() });
    assert_eq!(res.status, 409);
    assert_eq!(res.error_kind(), Some("CrossProject"));
    assert!(h.svc.state().assignments.is_empty());
}

#[test]
fn auto_assign_links_latest_task() {
    let h = Harness::new();
    let p = h.project(true);
    h.ok(Some(DESIGNER), ApiRequest::CreateTask { project_id: p.clone(), name: "first".into() });
    h.ok(Some(DESIGNER), ApiRequest::CreateTask { project_id: p.clone(), name: "second".into() });
    let up = h.ok(Some(DESIGNER), ApiRequest::UploadAsset { project_id: p, document: LISTING_1.into() });
    let st = h.svc.state();
    let a = &st.assignments[up["assignment_id"].as_str().unwrap()];
    assert_eq!(a.task_id, "tsk-2");
    assert_eq!(a.asset_id, "ast-1");
}

#[test]
fn activation_freezes_snapshot() {
    let h = Harness::new();
    let (_task, asset, token, _ses) = h.listing_session();
    let edited = LISTING_1.replace("\"DefaultCredit\": \"3\"", "\"DefaultCredit\": \"7\"");
    h.ok(Some(DESIGNER), ApiRequest::ReplaceAsset { asset_id: asset, document: edited });
    let pid = token.split('.').next().unwrap().to_string();
    let tasks = h.ok(Some(&token), ApiRequest::ListTasks { participant_id: pid });
    let doc = &tasks["tasks"][0]["asset"];
    assert_eq!(doc["Metadata"]["record"]["StartAndDestinationModel"]["DefaultCredit"], "3");
}

#[test]
fn subscription_codes() {
    let h = Harness::new();
    let p = h.project(false);
    let res = h.svc.handle(None, ApiRequest::Subscribe { code: "ZZZZZZZZ".into(), pseudonym: None });
    assert_eq!((res.status, res.error_kind()), (403, Some("InvalidCode")));

    let code = h.ok(Some(DESIGNER), ApiRequest::CreateAccessCode { project_id: p.clone(), max_uses: Some(1), ttl_s: Some(60) });
    let code = code["code"].as_str().unwrap().to_string();
    assert_eq!(code.len(), 8);
    assert!(code.chars().all(|c| c.is_ascii_alphanumeric()));
    let sub = h.svc.handle(None, ApiRequest::Subscribe { code: code.clone(), pseudonym: Some("rider".into()) });
    assert_eq!(sub.status, 200);
    assert_eq!(sub.body["participant_id"], "par-1");
    let again = h.svc.handle(None, ApiRequest::Subscribe { code, pseudonym: None });
    assert_eq!((again.status, again.error_kind()), (403, Some("ExhaustedCode")));

    let short = h.ok(Some(DESIGNER), ApiRequest::CreateAccessCode { project_id: p, max_uses: None, ttl_s: Some(60) });
    h.clock.advance_ms(61_000);
    let late = h.svc.handle(None, ApiRequest::Subscribe { code: short["code"].as_str().unwrap().into(), pseudonym: None });
    assert_eq!((late.status, late.error_kind()), (403, Some("ExpiredCode")));
}

#[test]
fn concurrent_subscriptions_respect_max_uses() {
    let h = Arc::new(Harness::new());
    let p = h.project(false);
    let code = h.ok(Some(DESIGNER), ApiRequest::CreateAccessCode { project_id: p, max_uses: Some(5), ttl_s: None })["code"]
        .as_str()
        .unwrap()
        .to_string();
    let handles: Vec<_> = (0..32)
        .map(|_| {
            let h = h.clone();
            let code = code.clone();
            std::thread::spawn(move || h.svc.handle(None, ApiRequest::Subscribe { code, pseudonym: None }).status)
        })
        .collect();
    let statuses: Vec<u16> = handles.into_iter().map(|t| t.join().unwrap()).collect();
    assert_eq!(statuses.iter().filter(|s| **s == 200).count(), 5);
    assert_eq!(statuses.iter().filter(|s| **s == 403).count(), 27);
    assert_eq!(h.svc.state().codes[&code].uses, 5);
}

#[test]
fn answer_outside_vicinity_is_not_localized() {
    let h = Harness::new();
    let (_, _, token, ses) = h.listing_session();
    let far = destination(poi(), 0.0, 100.0);
    h.ok(Some(&token), ApiRequest::PostLocation { session_id: ses.clone(), lat: far.lat_deg(), lon: far.lon_deg() });
    let res = h.svc.handle(
        Some(&token),
        ApiRequest::PostAnswer {
            session_id: ses,
            question_id: 1,
            payload: AnswerPayload::Options(vec![1]),
            lat: far.lat_deg(),
            lon: far.lon_deg(),
            proof: None,
        },
    );
    assert_eq!((res.status, res.error_kind()), (409, Some("NotLocalized")));
}

#[test]
fn answer_inside_with_proof_earns_default_credit() {
    let h = Harness::new();
    let (_, asset, token, ses) = h.listing_session();
    let ch = h.ok(
        Some(DESIGNER),
        ApiRequest::IssueChallenge { asset_id: asset, question_id: 1, spec: ChallengeSpec::QrToken, ttl_s: 600 },
    );
    let qr = ch["payload"]["token"].as_str().unwrap().to_string();
    let chl = ch["id"].as_str().unwrap().to_string();
    let loc = h.ok(Some(&token), ApiRequest::PostLocation { session_id: ses.clone(), lat: poi().lat_deg(), lon: poi().lon_deg() });
    assert_eq!(loc["events"][0]["event"], "Entered");

    let wrong = h.svc.handle(
        Some(&token),
        ApiRequest::PostAnswer {
            session_id: ses.clone(),
            question_id: 1,
            payload: AnswerPayload::Text("Safe".into()),
            lat: poi().lat_deg(),
            lon: poi().lon_deg(),
            proof: None,
        },
    );
    assert_eq!((wrong.status, wrong.error_kind()), (422, Some("PayloadMismatch")));

    let answer = |chl: &str, qr: &str| {
        h.svc.handle(
            Some(&token),
            ApiRequest::PostAnswer {
                session_id: ses.clone(),
                question_id: 1,
                payload: AnswerPayload::Options(vec![2]),
                lat: poi().lat_deg(),
                lon: poi().lon_deg(),
                proof: Some(fieldlab::service::ProofSubmission { challenge_id: chl.into(), response: qr.into() }),
            },
        )
    };
    let ok = answer(&chl, &qr);
    assert_eq!(ok.status, 200, "{ok:?}");
    assert_eq!(ok.body["credits"], 3);
    assert_eq!(ok.body["completed"], true);
    let reuse = answer(&chl, &qr);
    assert_eq!((reuse.status, reuse.error_kind()), (409, Some("ProofReused")));
}

#[test]
fn aggregates_and_export() {
    let h = Harness::new();
    let (task, _, token, ses) = h.listing_session();
    let count = h.ok(Some(DESIGNER), ApiRequest::GetAggregate { task_id: task.clone(), function: "count".into() });
    assert_eq!(count["value"], 0.0);
    let avg = h.ok(Some(DESIGNER), ApiRequest::GetAggregate { task_id: task.clone(), function: "avg".into() });
    assert!(avg["value"].is_null());
    let bad = h.designer(ApiRequest::GetAggregate { task_id: task.clone(), function: "median".into() });
    assert_eq!((bad.status, bad.error_kind()), (400, Some("UnknownFunction")));
    let missing = h.designer(ApiRequest::GetAggregate { task_id: "tsk-99".into(), function: "avg".into() });
    assert_eq!(missing.status, 404);

    h.ok(Some(&token), ApiRequest::PostLocation { session_id: ses.clone(), lat: poi().lat_deg(), lon: poi().lon_deg() });
    h.ok(
        Some(&token),
        ApiRequest::PostAnswer {
            session_id: ses.clone(),
            question_id: 1,
            payload: AnswerPayload::Options(vec![2]),
            lat: poi().lat_deg(),
            lon: poi().lon_deg(),
            proof: None,
        },
    );
    let avg = h.ok(Some(DESIGNER), ApiRequest::GetAggregate { task_id: task.clone(), function: "avg".into() });
    assert_eq!(avg["value"], 2.0);
    let away = destination(poi(), 0.0, 200.0);
    let left = h.ok(Some(&token), ApiRequest::PostLocation { session_id: ses.clone(), lat: away.lat_deg(), lon: away.lon_deg() });
    assert_eq!(left["events"][0]["event"], "Left");
    let count = h.ok(Some(DESIGNER), ApiRequest::GetAggregate { task_id: task.clone(), function: "count".into() });
    assert_eq!(count["value"], 0.0);
    let done = h.svc.handle(Some(&token), ApiRequest::PostLocation { session_id: ses, lat: away.lat_deg(), lon: away.lon_deg() });
    assert_eq!((done.status, done.error_kind()), (409, Some("SessionComplete")));

    let export = h.ok(Some(DESIGNER), ApiRequest::Export { task_id: task });
    let lines: Vec<Value> = export.as_str().unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = lines.iter().map(|l| l["record"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["answer", "aggregate", "aggregate"]);
    assert_eq!(lines[1]["kind"], "join");
    assert_eq!(lines[2]["kind"], "leave");
}

#[test]
fn state_equals_fold_of_log() {
    let h = Harness::new();
    let (task, _, token, ses) = h.listing_session();
    h.ok(Some(&token), ApiRequest::PostLocation { session_id: ses.clone(), lat: poi().lat_deg(), lon: poi().lon_deg() });
    h.ok(
        Some(&token),
        ApiRequest::PostAnswer {
            session_id: ses,
            question_id: 1,
            payload: AnswerPayload::Options(vec![1]),
            lat: poi().lat_deg(),
            lon: poi().lon_deg(),
            proof: None,
        },
    );
    let events = h.svc.events();
    assert!(events.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    let refolded = fold(&events).unwrap();
    assert_eq!(*h.svc.state(), refolded);
    assert_eq!(refolded.export_task(&task), h.svc.export_task(&task));
}

#[test]
fn data_dir_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::ephemeral("k", "alice", DESIGNER);
    config.data_dir = Some(dir.path().to_path_buf());
    config.snapshot_every = 3;
    let clock = Arc::new(VirtualClock::new(Timestamp(0)));
    let before = {
        let svc = Service::new(config.clone(), clock.clone()).unwrap();
        for i in 0..5 {
            svc.handle(Some(DESIGNER), ApiRequest::CreateProject { name: format!("p{i}"), auto_assign: false });
        }
        let st = svc.state().clone();
        st
    };
    assert!(dir.path().join("snapshot.json").exists());
    let svc = Service::new(config, clock).unwrap();
    assert_eq!(*svc.state(), before);
    assert_eq!(svc.events().len(), 5);
    let res = svc.handle(Some(DESIGNER), ApiRequest::CreateProject { name: "next".into(), auto_assign: false });
    assert_eq!(res.body["id"], "prj-6");
}
