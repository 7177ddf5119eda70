//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fieldlab::aggregation::{
    gossip_round, AggEvent, AggregateFn, AggregateState, EventKind, GossipNetwork, Topology,
};
use fieldlab::asset::{parse_asset, serialize_asset, Frequency, Mode, QuestionType, SensorKind};
use fieldlab::fixtures::{self, CYCLING_ASSET, CYCLING_SCENARIO, LISTING_1, SUSTAINABILITY_ASSET};
use fieldlab::geo::{destination, zone_contains, GeoPoint, LocalizationZone};
use fieldlab::modality::{AnswerPayload, ModalityError, PoiStatus, TaskSession};
use fieldlab::presence::{ChallengeSpec, PresenceError, PresenceRegistry, TokenKey, Verdict};
use fieldlab::sensing::plans_for_asset;
use fieldlab::service::{fold, ApiRequest, DomainEvent, ProofSubmission, ServiceState};
use fieldlab::simulator::{replay, run_cohort, Scenario, SimulationLog, SimulationRun};
use fieldlab::time::Timestamp;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {:.2} s, budget {:.0} s", elapsed.as_secs_f64(), b.as_secs_f64())),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name} [{:.2} s] {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                self.failed += 1;
                println!("FAIL {name} [{:.2} s] {why}", elapsed.as_secs_f64());
            }
        }
    }
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    suite.run("golden-codec", Some(Duration::from_secs(1)), golden_codec);
    suite.run("frequency-table", None, frequency_table);
    suite.run("modality-suite", Some(Duration::from_secs(10)), modality_suite);
    suite.run("localization-gating", None, localization_gating);
    suite.run("aggregation-oracle", Some(Duration::from_secs(30)), aggregation_oracle);
    suite.run("gossip-convergence", None, gossip_convergence);
    suite.run("scenario-cycling", Some(Duration::from_secs(60)), scenario_cycling);
    suite.run("scenario-sustainability", Some(Duration::from_secs(60)), scenario_sustainability);
    suite.run("determinism", None, determinism);
    suite.run("verification", None, verification);
    if suite.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", suite.failed);
        ExitCode::FAILURE
    }
}

// Independent geometry used as oracles.

const R: f64 = 6_371_008.8;

/// Great-circle distance from the chord between unit vectors.
fn chord_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let v = |p: GeoPoint| {
        let (la, lo) = (p.lat_deg().to_radians(), p.lon_deg().to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (u, w) = (v(a), v(b));
    let chord = ((u[0] - w[0]).powi(2) + (u[1] - w[1]).powi(2) + (u[2] - w[2]).powi(2)).sqrt();
    2.0 * R * (chord / 2.0).min(1.0).asin()
}

/// Signed margin of `p` against a zone in metres; positive means inside.
/// Ellipses use the two-foci definition in a local east/north plane.
fn zone_margin(zone: &LocalizationZone, p: GeoPoint) -> f64 {
    match *zone {
        LocalizationZone::Circle { center, radius_m } => radius_m - chord_distance(center, p),
        LocalizationZone::Ellipse { center, semi_major_m, semi_minor_m, minor_axis_bearing_deg } => {
            let mut dlon = p.lon_deg() - center.lon_deg();
            if dlon > 180.0 {
                dlon -= 360.0;
            } else if dlon < -180.0 {
                dlon += 360.0;
            }
            let x = R * center.lat_deg().to_radians().cos() * dlon.to_radians();
            let y = R * (p.lat_deg() - center.lat_deg()).to_radians();
            let major = (minor_axis_bearing_deg + 90.0).to_radians();
            let (ux, uy) = (major.sin(), major.cos());
            let c = (semi_major_m * semi_major_m - semi_minor_m * semi_minor_m).sqrt();
            let d1 = ((x - c * ux).powi(2) + (y - c * uy).powi(2)).sqrt();
            let d2 = ((x + c * ux).powi(2) + (y + c * uy).powi(2)).sqrt();
            (2.0 * semi_major_m - (d1 + d2)) / 2.0
        }
    }
}

// Criteria.

fn golden_codec() -> Outcome {
    let a = parse_asset(LISTING_1).map_err(|e| e.to_string())?;
    ensure!(a.id == "AXeG00HIQMa8aD8nfimV", "id {}", a.id);
    ensure!(a.name == "Simple_09022021_134527", "name {}", a.name);
    ensure!(a.url == "http://smart-agora.org", "url {}", a.url);
    ensure!(a.mode == Mode::Simple, "mode {:?}", a.mode);
    ensure!(a.default_credit == 3, "default credit {}", a.default_credit);
    ensure!(a.start.is_none() && a.destination.is_none(), "start/destination should be null");
    ensure!(a.questions.len() == 1, "{} questions", a.questions.len());
    let q = &a.questions[0];
    ensure!(q.id == 1 && q.qtype == QuestionType::Radio, "question header");
    ensure!(q.text == "How dangerous for bikers was the last section?\t", "question text {:?}", q.text);
    ensure!(q.location.lat_deg() == 47.3715915 && q.location.lon_deg() == 8.538603799999999, "location");
    ensure!(q.vicinity_m == 25.0, "vicinity {}", q.vicinity_m);
    ensure!(q.frequency == Frequency::Medium, "frequency {:?}", q.frequency);
    ensure!(q.time_min == 3.0, "time {}", q.time_min);
    ensure!(!q.sequence_flag && q.visibility && q.mandatory, "flags");
    let sensors: Vec<(u32, SensorKind)> = q.sensors.iter().map(|s| (s.id, s.kind)).collect();
    ensure!(sensors == [(1, SensorKind::Gyroscope), (2, SensorKind::Location)], "sensors {sensors:?}");
    let options: Vec<(u32, &str, Option<u32>, Option<u32>)> =
        q.options.iter().map(|o| (o.id, o.name.as_str(), o.next_question, o.credits)).collect();
    ensure!(options == [(1, "Safe", None, None), (2, "Dangerous", None, None)], "options {options:?}");
    ensure!(q.combination.is_null(), "combination");

    let text = serialize_asset(&a);
    let b = parse_asset(&text).map_err(|e| format!("reparse: {e}"))?;
    ensure!(a == b, "serialize then parse changed the asset");
    ensure!(serialize_asset(&b) == text, "serialization is not stable");
    Ok("Listing 1 fields exact; serialize/parse round trip stable".into())
}

fn frequency_table() -> Outcome {
    // Exhaustive match: adding a variant breaks compilation here.
    let period = |f: Frequency| match f {
        Frequency::Low => 2000,
        Frequency::Medium => 250,
        Frequency::High => 200,
    };
    for f in [Frequency::Low, Frequency::Medium, Frequency::High] {
        ensure!(f.period_ms() == period(f), "{f:?} period {}", f.period_ms());
    }
    let mut seen = BTreeSet::new();
    // A blank level reads as absent and falls back to Medium.
    let blank = parse_asset(&LISTING_1.replace("\"Frequency\": \"Medium\"", "\"Frequency\": \"\""))
        .map_err(|e| format!("blank frequency: {e}"))?;
    ensure!(blank.questions[0].frequency == Frequency::Medium, "blank frequency gave {:?}", blank.questions[0].frequency);
    for word in ["Low", "Medium", "High", "VeryHigh", "Ultra", "Fast", "1000", "Highest", "Med", "none"] {
        let doc = LISTING_1.replace("\"Frequency\": \"Medium\"", &format!("\"Frequency\": \"{word}\""));
        match parse_asset(&doc) {
            Ok(a) => {
                let plans = plans_for_asset(&a);
                ensure!(!plans.is_empty(), "no sampling plans");
                seen.extend(plans.iter().map(|p| p.period_ms()));
                ensure!(["Low", "Medium", "High"].contains(&word), "{word:?} was accepted");
            }
            Err(_) => ensure!(!["Low", "Medium", "High"].contains(&word), "{word:?} was rejected"),
        }
    }
    ensure!(seen == BTreeSet::from([200, 250, 2000]), "periods {seen:?}");
    Ok("Low 2000 ms, Medium 250 ms, High 200 ms; 7 other levels rejected, blank means Medium".into())
}

fn far() -> GeoPoint {
    destination(fixtures::zurich(), 180.0, 5_000.0)
}

struct Walker {
    t: i64,
}

impl Walker {
    fn tick(&mut self) -> Timestamp {
        self.t += 1_000;
        Timestamp(self.t)
    }

    /// Walks into the zone of `q`, answers, and walks away again.
    fn visit(&mut self, s: &mut TaskSession, q: u32, payload: AnswerPayload) -> Result<fieldlab::modality::AnswerOutcome, ModalityError> {
        let at = s.asset.question(q).expect("question").location;
        let t = self.tick();
        s.on_location_update(at, t).expect("location accepted");
        let out = s.submit_answer(q, payload, at, None, self.tick());
        let t = self.tick();
        s.on_location_update(far(), t).expect("location accepted");
        out
    }
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn new_session(asset: fieldlab::asset::Asset) -> TaskSession {
    TaskSession::new("ses-1".into(), "par-1".into(), "asg-1".into(), "tsk-1".into(), asset, Timestamp(0)).expect("session")
}

fn modality_suite() -> Outcome {
    let orders = permutations(&[1, 2, 3, 4]);
    ensure!(orders.len() == 24, "{} orderings", orders.len());
    let option = |q: u32| AnswerPayload::Options(vec![q % 5 + 1]);

    let mut out_of_order = 0;
    for order in &orders {
        let mut s = new_session(fixtures::four_poi_asset(Mode::Sequential));
        let mut w = Walker { t: 0 };
        let mut expected_next = 1;
        for &q in order {
            let accepted = w.visit(&mut s, q, option(q)).is_ok();
            let should = q == expected_next;
            ensure!(accepted == should, "sequential order {order:?}: question {q} accepted={accepted}");
            if should {
                expected_next += 1;
            } else {
                out_of_order += 1;
            }
        }
        // Finish in order; every remaining answer must now be accepted.
        while expected_next <= 4 {
            ensure!(w.visit(&mut s, expected_next, option(expected_next)).is_ok(), "in-order completion");
            expected_next += 1;
        }
        ensure!(s.is_complete(), "sequential session incomplete");
    }

    let mut finals = BTreeSet::new();
    for order in &orders {
        let mut s = new_session(fixtures::four_poi_asset(Mode::Simple));
        let mut w = Walker { t: 0 };
        for &q in order {
            w.visit(&mut s, q, option(q)).map_err(|e| format!("simple order {order:?}: {e}"))?;
        }
        ensure!(s.is_complete(), "simple session incomplete for {order:?}");
        let mut answers: Vec<(u32, String, u32)> =
            s.answers.iter().map(|a| (a.question_id, format!("{:?}", a.payload), a.credits)).collect();
        answers.sort();
        let status: Vec<(u32, PoiStatus)> = s.poi_status.iter().map(|(k, v)| (*k, *v)).collect();
        finals.insert(format!("{}|{status:?}|{answers:?}", s.credits_earned));
    }
    ensure!(finals.len() == 1, "simple final states differ: {finals:?}");

    // Option graph 1 -> {2, 3}, 2 -> {4, 5}, 3 -> {5, end}, 4 -> end, 5 -> end.
    let graph: BTreeMap<u32, [Option<u32>; 2]> = BTreeMap::from([
        (1, [Some(2), Some(3)]),
        (2, [Some(4), Some(5)]),
        (3, [Some(5), None]),
        (4, [None, None]),
        (5, [None, None]),
    ]);
    let mut paths: Vec<Vec<(u32, u32)>> = Vec::new();
    fn walk(graph: &BTreeMap<u32, [Option<u32>; 2]>, q: u32, prefix: Vec<(u32, u32)>, out: &mut Vec<Vec<(u32, u32)>>) {
        for (i, next) in graph[&q].iter().enumerate() {
            let mut p = prefix.clone();
            p.push((q, i as u32 + 1));
            match next {
                Some(n) => walk(graph, *n, p, out),
                None => out.push(p),
            }
        }
    }
    walk(&graph, 1, vec![], &mut paths);
    for path in &paths {
        let mut s = new_session(fixtures::five_node_dynamic_asset());
        let mut w = Walker { t: 0 };
        for (step, &(q, opt)) in path.iter().enumerate() {
            ensure!(s.unlocked_pois() == BTreeSet::from([q]), "path {path:?} step {step}: unlocked {:?}", s.unlocked_pois());
            let others: Vec<u32> = graph.keys().copied().filter(|o| *o != q && s.status(*o) != Some(PoiStatus::Answered)).collect();
            for other in others {
                ensure!(w.visit(&mut s, other, AnswerPayload::Options(vec![1])).is_err(), "path {path:?}: {other} accepted off-path");
            }
            let out = w.visit(&mut s, q, AnswerPayload::Options(vec![opt])).map_err(|e| format!("path {path:?}: {e}"))?;
            let next = graph[&q][opt as usize - 1];
            ensure!(out.unlocked == next, "path {path:?}: unlocked {:?}, expected {next:?}", out.unlocked);
            ensure!(out.completed == next.is_none(), "path {path:?}: completion at step {step}");
        }
        ensure!(s.is_complete(), "path {path:?} did not complete");
    }
    Ok(format!(
        "24 sequential orderings ({out_of_order} out-of-order answers rejected), 24 simple orderings with one final state, {} dynamic paths",
        paths.len()
    ))
}

fn zone_strategy() -> impl Strategy<Value = LocalizationZone> {
    let center = (-60.0..60.0f64, -179.0..179.0f64);
    let circle = (center.clone(), 5.0..100.0f64)
        .prop_map(|((la, lo), r)| LocalizationZone::circle(GeoPoint::new(la, lo).unwrap(), r).unwrap());
    let ellipse = (center, 5.0..100.0f64, 0.2..=1.0f64, 0.0..360.0f64).prop_map(|((la, lo), a, ratio, bearing)| {
        LocalizationZone::ellipse(GeoPoint::new(la, lo).unwrap(), a, a * ratio, bearing).unwrap()
    });
    prop_oneof![circle, ellipse]
}

fn localization_gating() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 10_000, failure_persistence: None, ..Config::default() },
        TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]),
    );
    let counts = [Cell::new(0u32), Cell::new(0u32), Cell::new(0u32)];
    let strategy = (zone_strategy(), 0.0..360.0f64, 0.0..1.6f64);
    runner
        .run(&strategy, |(zone, bearing, frac)| {
            let p = destination(zone.center(), bearing, frac * zone.outer_radius_m());
            let mut asset = fixtures::minimal_textbox_asset();
            asset.questions[0].location = zone.center();
            let mut s = new_session(asset);
            s.zones.insert(1, zone);
            s.on_location_update(p, Timestamp(1)).unwrap();
            let accepted = s.submit_answer(1, AnswerPayload::Text("ok".into()), p, None, Timestamp(2)).is_ok();
            let inside = zone_contains(&zone, p);
            prop_assert_eq!(accepted, inside);
            let margin = zone_margin(&zone, p);
            if margin.abs() > 0.01 {
                prop_assert_eq!(inside, margin > 0.0, "oracle margin {}", margin);
            } else {
                counts[2].set(counts[2].get() + 1);
            }
            if accepted {
                counts[0].set(counts[0].get() + 1);
            } else {
                counts[1].set(counts[1].get() + 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let counts = counts.map(Cell::into_inner);
    ensure!(counts[0] > 1000 && counts[1] > 1000, "unbalanced sample: {counts:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut compared, mut banded) = (0, 0);
    for _ in 0..10_000 {
        let center = GeoPoint::new(rng.random_range(-60.0..60.0), rng.random_range(-179.0..179.0)).unwrap();
        let r = rng.random_range(5.0..100.0);
        let circle = LocalizationZone::circle(center, r).unwrap();
        let ellipse = LocalizationZone::ellipse(center, r, r, rng.random_range(0.0..360.0)).unwrap();
        let p = destination(center, rng.random_range(0.0..360.0), rng.random_range(0.0..2.0 * r));
        if (chord_distance(center, p) - r).abs() <= 0.1 {
            banded += 1;
            continue;
        }
        compared += 1;
        ensure!(
            zone_contains(&circle, p) == zone_contains(&ellipse, p),
            "circle and equal-axis ellipse disagree at {p:?} (r {r})"
        );
    }
    Ok(format!(
        "10000 cases: {} accepted, {} rejected, all iff zone_contains ({} within 1 cm of the boundary); circle/ellipse agree on {compared} points ({banded} in the 0.1 m band)",
        counts[0], counts[1], counts[2]
    ))
}

fn naive_aggregate(events: &[AggEvent], f: AggregateFn) -> Option<f64> {
    let i = AggregateFn::ALL.iter().position(|g| *g == f).expect("known function");
    naive_all(events)[i]
}

/// Recomputes every function, in `AggregateFn::ALL` order, from scratch over
/// a prefix of events.
fn naive_all(events: &[AggEvent]) -> Vec<Option<f64>> {
    let mut live: HashMap<&str, f64> = HashMap::new();
    for e in events {
        match e.kind {
            EventKind::Join | EventKind::Update => {
                live.insert(&e.participant, e.value.expect("value"));
            }
            EventKind::Leave => {
                live.remove(e.participant.as_str());
            }
        }
    }
    let values: Vec<f64> = live.into_values().collect();
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    AggregateFn::ALL
        .iter()
        .map(|f| match f {
            AggregateFn::Count => Some(n),
            AggregateFn::Sum => Some(sum),
            AggregateFn::Avg => (n > 0.0).then(|| sum / n),
            AggregateFn::Max => values.iter().copied().reduce(f64::max),
            AggregateFn::Min => values.iter().copied().reduce(f64::min),
        })
        .collect()
}

fn reads(s: &AggregateState) -> Vec<Option<f64>> {
    AggregateFn::ALL.iter().map(|f| s.read(*f)).collect()
}

fn aggregation_oracle() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 1_000, failure_persistence: None, ..Config::default() },
        TestRng::from_seed(RngAlgorithm::ChaCha, &[3; 32]),
    );
    let ops = proptest::collection::vec((0..12usize, 0..3u8, 0..=5u8), 0..=200);
    let total_events = Cell::new(0usize);
    let rollbacks = Cell::new(0usize);
    runner
        .run(&(ops, 0..=200usize, 0..=5u8), |(ops, rollback_at, fresh_value)| {
            let mut live = BTreeSet::new();
            let mut events = Vec::new();
            for (i, (p, op, v)) in ops.iter().enumerate() {
                let participant = format!("u{p}");
                let kind = match (live.contains(p), op) {
                    (false, _) => EventKind::Join,
                    (true, 0) => EventKind::Leave,
                    (true, _) => EventKind::Update,
                };
                match kind {
                    EventKind::Leave => live.remove(p),
                    _ => live.insert(*p),
                };
                let value = (kind != EventKind::Leave).then_some(*v as f64);
                events.push(AggEvent { t: Timestamp(i as i64), kind, participant, value });
            }
            let mut engine = AggregateState::new("t");
            for k in 0..events.len() {
                engine.apply(&events[k]).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(reads(&engine), naive_all(&events[..=k]), "prefix {}", k);
                if k == rollback_at.min(events.len() - 1) {
                    // A participant that never appeared, and one that already left.
                    let before = reads(&engine);
                    let mut probe = engine.clone();
                    probe.join("fresh", fresh_value as f64).map_err(|e| TestCaseError::fail(e.to_string()))?;
                    probe.leave("fresh").map_err(|e| TestCaseError::fail(e.to_string()))?;
                    prop_assert_eq!(reads(&probe), before.clone());
                    if let Some(gone) = (0..12).find(|p| !live_at(&events[..=k], *p) && seen(&events[..=k], *p)) {
                        let name = format!("u{gone}");
                        let mut probe = engine.clone();
                        probe.join(&name, fresh_value as f64).map_err(|e| TestCaseError::fail(e.to_string()))?;
                        probe.leave(&name).map_err(|e| TestCaseError::fail(e.to_string()))?;
                        prop_assert_eq!(reads(&probe), before);
                    }
                    rollbacks.set(rollbacks.get() + 1);
                }
            }
            total_events.set(total_events.get() + events.len());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "1000 sequences, {} events, every prefix exact for 5 functions; {} rollback probes",
        total_events.get(),
        rollbacks.get()
    ))
}

fn live_at(events: &[AggEvent], p: usize) -> bool {
    let name = format!("u{p}");
    events.iter().rev().find(|e| e.participant == name).is_some_and(|e| e.kind != EventKind::Leave)
}

fn seen(events: &[AggEvent], p: usize) -> bool {
    let name = format!("u{p}");
    events.iter().any(|e| e.participant == name)
}

fn gossip_trial(n: usize, topology: Topology, seed: u64) -> Result<(u64, u64), String> {
    let mut net = GossipNetwork::new(n, topology, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &i in &order {
        let value = rng.random_range(0..=5) as f64;
        net.local_event(i, EventKind::Join, &format!("u{i}"), Some(value)).map_err(|e| e.to_string())?;
        events.push(AggEvent { t: Timestamp(0), kind: EventKind::Join, participant: format!("u{i}"), value: Some(value) });
        for _ in 0..rng.random_range(0..=1) {
            gossip_round(&mut net, seed);
        }
    }
    let first = rng.random_range(0..n);
    let second = (first + rng.random_range(1..n)) % n;
    for who in [first, second] {
        net.local_event(who, EventKind::Leave, &format!("u{who}"), None).map_err(|e| e.to_string())?;
        events.push(AggEvent { t: Timestamp(0), kind: EventKind::Leave, participant: format!("u{who}"), value: None });
        for _ in 0..rng.random_range(0..=1) {
            gossip_round(&mut net, seed);
        }
    }
    let bound = (3.0 * net.diameter() as f64 * (n as f64).log2()).floor() as u64;
    let expected: Vec<(AggregateFn, Option<f64>)> =
        AggregateFn::ALL.iter().map(|f| (*f, naive_aggregate(&events, *f))).collect();
    for r in 0..=bound {
        if expected.iter().all(|(f, v)| net.nodes.iter().all(|node| node.read(*f) == *v)) {
            return Ok((r, bound));
        }
        gossip_round(&mut net, seed);
    }
    Err(format!("seed {seed}: no convergence within {bound} rounds"))
}

fn gossip_convergence() -> Outcome {
    let mut report = Vec::new();
    for (label, n, topology, diameter) in [("complete n=8", 8, Topology::Complete, 1), ("ring n=6", 6, Topology::Ring, 3)] {
        ensure!(GossipNetwork::new(n, topology, 0).diameter() == diameter, "{label} diameter");
        let mut worst = 0;
        let mut bound = 0;
        for seed in 0..100 {
            let (r, b) = gossip_trial(n, topology, seed)?;
            worst = worst.max(r);
            bound = b;
        }
        report.push(format!("{label}: 100/100 within {bound} rounds (worst {worst})"));
    }
    Ok(report.join("; "))
}

fn export_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).expect("export line is JSON")).collect()
}

fn run_scenario(scenario: &Scenario, asset: &str) -> Result<SimulationRun, String> {
    let spec = scenario.cohort(asset).map_err(|e| e.to_string())?;
    run_cohort(&spec).map_err(|e| e.to_string())
}

fn scenario_cycling() -> Outcome {
    let scenario = fixtures::cycling_scenario();
    let asset = parse_asset(CYCLING_ASSET).map_err(|e| e.to_string())?;
    let run = run_scenario(&scenario, CYCLING_ASSET)?;
    let lines = export_lines(&run.export());
    let answers: Vec<_> = lines.iter().filter(|l| l["record"] == "answer").collect();
    ensure!(answers.len() == 44, "{} answer records", answers.len());
    let mut pairs = BTreeSet::new();
    for a in &answers {
        ensure!(a["type"] == "likert", "type {}", a["type"]);
        let opt = a["payload"]["options"][0].as_u64().unwrap_or(0);
        ensure!((1..=5).contains(&opt) && a["payload"]["options"].as_array().map(Vec::len) == Some(1), "payload {}", a["payload"]);
        let q = a["question"].as_u64().unwrap() as u32;
        let poi = asset.question(q).ok_or("unknown question")?;
        let p = GeoPoint::new(a["lat"].as_f64().unwrap(), a["lon"].as_f64().unwrap()).unwrap();
        let d = chord_distance(poi.location, p);
        ensure!(d <= poi.vicinity_m, "answer to {q} given {d:.2} m away");
        pairs.insert((a["participant"].as_str().unwrap().to_string(), q));
    }
    ensure!(pairs.len() == 44, "duplicate (participant, question) pairs");
    let participants: BTreeSet<_> = pairs.iter().map(|(p, _)| p.clone()).collect();
    ensure!(participants.len() == 11, "{} participants answered", participants.len());
    Ok("44 answers = 11 participants x 4 POIs, all likert 1-5, all within their 25 m zone".into())
}

fn scenario_sustainability() -> Outcome {
    let run = run_scenario(&fixtures::sustainability_scenario(), SUSTAINABILITY_ASSET)?;
    let task = run.task_id.clone();
    // Refold the service log event by event and read the live aggregate
    // whenever the aggregation log grows.
    let mut st = ServiceState::default();
    let mut checked = 0;
    let mut departures_moved = 0;
    let mut series = Vec::new();
    for rec in run.service.events() {
        let before_len = st.aggregate_log.get(&task).map_or(0, Vec::len);
        let before = st.aggregates.get(&task).and_then(|a| a.read(AggregateFn::Avg));
        st.apply(&rec).map_err(|e| e.to_string())?;
        let log = st.aggregate_log.get(&task).cloned().unwrap_or_default();
        for k in before_len..log.len() {
            let oracle = naive_aggregate(&log[..=k], AggregateFn::Avg);
            if k + 1 == log.len() {
                let live = st.aggregates[&task].read(AggregateFn::Avg);
                ensure!(close(live, oracle), "event {k}: live {live:?} oracle {oracle:?}");
                if log[k].kind == EventKind::Leave && live != before {
                    departures_moved += 1;
                }
                series.push(live);
            }
            checked += 1;
        }
    }
    ensure!(checked > 0, "no aggregation events");
    ensure!(departures_moved > 0, "no departure changed the average");
    let peak = series.iter().flatten().copied().fold(f64::MIN, f64::max);
    Ok(format!(
        "{checked} aggregation events, live avg equals oracle at each; {departures_moved} departures moved the average (peak {peak:.3})"
    ))
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(1.0),
        (x, y) => x == y,
    }
}

fn determinism() -> Outcome {
    let mut detail = Vec::new();
    for (name, scenario, asset) in [
        ("cycling", fixtures::cycling_scenario(), CYCLING_ASSET),
        ("sustainability", fixtures::sustainability_scenario(), SUSTAINABILITY_ASSET),
    ] {
        let run = run_scenario(&scenario, asset)?;
        let log = SimulationLog::from_ndjson(&run.log.to_ndjson()).map_err(|e| e.to_string())?;
        let out = replay(&log).map_err(|e| format!("{name}: {e}"))?;
        let original = run.export();
        let replayed = out.exports.get(&run.task_id).ok_or("replay lost the task")?;
        ensure!(original.as_bytes() == replayed.as_bytes(), "{name}: exports differ");
        let refold = fold(&out.service.events()).map_err(|e| e.to_string())?;
        ensure!(refold == *out.service.state(), "{name}: refold of the replayed log differs from state");
        let refold = fold(&run.service.events()).map_err(|e| e.to_string())?;
        ensure!(refold == *run.service.state(), "{name}: refold of the original log differs from state");
        let again = run_scenario(&scenario, asset)?;
        ensure!(again.log.to_ndjson() == run.log.to_ndjson(), "{name}: same seed, different log");
        detail.push(format!("{name} {} bytes", original.len()));
    }
    Ok(format!("replayed exports byte-equal and refolds equal state ({})", detail.join(", ")))
}

const URL_SAFE: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

fn verification() -> Outcome {
    let asset = fixtures::four_poi_asset(Mode::Simple);
    let mut reg = PresenceRegistry::new(TokenKey::new("acceptance-secret"));
    let now = Timestamp(1_000);
    let ch = reg.issue_challenge(&asset, 2, ChallengeSpec::QrToken, 600, now).map_err(|e| e.to_string())?;
    let token = match &ch.payload {
        fieldlab::presence::ChallengePayload::QrToken { token } => token.clone(),
        _ => return Err("not a QR challenge".into()),
    };
    ensure!(reg.check(&ch, &token, now) == Ok(Verdict::Verified), "genuine token does not verify");
    let mut mutations = 0;
    let bytes = token.as_bytes();
    for i in 0..bytes.len() {
        for &c in URL_SAFE.iter().filter(|c| **c != bytes[i]) {
            let mut m = bytes.to_vec();
            m[i] = c;
            let m = String::from_utf8(m).unwrap();
            ensure!(reg.check(&ch, &m, now) == Ok(Verdict::Rejected), "substitution at {i} accepted");
            mutations += 1;
        }
        let mut m = bytes.to_vec();
        m.remove(i);
        ensure!(reg.check(&ch, std::str::from_utf8(&m).unwrap(), now) == Ok(Verdict::Rejected), "deletion at {i} accepted");
        mutations += 1;
    }
    let other = reg.issue_challenge(&asset, 3, ChallengeSpec::QrToken, 600, now).map_err(|e| e.to_string())?;
    ensure!(reg.check(&other, &token, now) == Ok(Verdict::Rejected), "token accepted for another challenge");
    ensure!(reg.verify(&ch, &token, now) == Ok(Verdict::Verified), "first use rejected");
    ensure!(reg.verify(&ch, &token, now) == Err(PresenceError::AlreadyUsed), "reuse accepted");

    // Cohort with every question behind a QR proof; the first participant
    // never presents one.
    let asset_doc = CYCLING_ASSET.replace("\"Localization\": \"Circle\"", "\"Localization\": \"Circle\", \"ProofPolicy\": \"All\"");
    ensure!(asset_doc != CYCLING_ASSET, "could not set the proof policy");
    let scenario_text = CYCLING_SCENARIO.replace("participants = 11", "participants = 4").replace("proof = \"none\"", "proof = \"valid_token\"")
        + "\n[[participant]]\npolicy = { default = { fixed = 2 }, proof = \"none\" }\n";
    let scenario = Scenario::from_toml(&scenario_text).map_err(|e| e.to_string())?;
    let run = run_scenario(&scenario, &asset_doc)?;
    let log = SimulationLog::from_ndjson(&run.log.to_ndjson()).map_err(|e| e.to_string())?;
    let out = replay(&log).map_err(|e| e.to_string())?;
    let key = TokenKey::new(&log.header.secret_key);

    let events = out.service.events();
    let mut issued = BTreeMap::new();
    let mut used = BTreeSet::new();
    let mut audited = 0;
    for rec in &events {
        match &rec.event {
            DomainEvent::ChallengeIssued { challenge, .. } => {
                issued.insert(challenge.id.clone(), challenge.clone());
            }
            DomainEvent::AnswerAccepted { question_id, proof, .. } => {
                let proof = proof.as_ref().ok_or(format!("seq {}: answer without proof", rec.seq))?;
                ensure!(proof.verdict == Verdict::Verified, "seq {}: verdict {:?}", rec.seq, proof.verdict);
                let ch = issued.get(&proof.challenge_id).ok_or(format!("seq {}: proof for unknown challenge", rec.seq))?;
                ensure!(ch.question_id == *question_id && proof.question_id == *question_id, "seq {}: proof for another question", rec.seq);
                let claims = key.open(&proof.response).ok_or(format!("seq {}: token does not open", rec.seq))?;
                let nonce: String = claims.nonce.iter().map(|b| format!("{b:02x}")).collect();
                ensure!(claims.question_id == *question_id && nonce == ch.nonce, "seq {}: token bound elsewhere", rec.seq);
                ensure!(rec.t <= claims.expires_at, "seq {}: expired token", rec.seq);
                ensure!(used.insert(proof.challenge_id.clone()), "seq {}: challenge used twice", rec.seq);
                audited += 1;
            }
            _ => {}
        }
    }
    let st = out.service.state();
    for s in st.sessions.values() {
        for (q, status) in &s.poi_status {
            if *status == PoiStatus::Answered {
                let ok = st.proofs.iter().any(|p| p.session_id == s.id && p.proof.question_id == *q && p.proof.verdict == Verdict::Verified);
                ensure!(ok, "{} reached Answered at {q} without a verified proof", s.id);
            }
        }
    }
    let refused = log
        .entries
        .iter()
        .filter(|e| e.response.status == 403 && e.response.body["error"] == "ProofRequired")
        .count();
    ensure!(audited == 12, "{audited} proven answers, expected 3 participants x 4 POIs");
    ensure!(refused >= 1, "the participant without proofs was never refused");
    let first = st.participants.keys().next().cloned().ok_or("no participants")?;
    ensure!(st.sessions.values().all(|s| s.participant_id != first || s.answers.is_empty()), "unproven participant has answers");

    // Present an already consumed token again through the API.
    let (session, q, proof) = st
        .proofs
        .iter()
        .find(|p| p.proof.verdict == Verdict::Verified)
        .map(|p| (p.session_id.clone(), p.proof.question_id, p.proof.clone()))
        .ok_or("no verified proof")?;
    let owner = st.sessions[&session].participant_id.clone();
    let loc = parse_asset(&asset_doc).unwrap().question(q).unwrap().location;
    drop(st);
    let res = out.service.handle(
        Some(&out.service.participant_token(&owner)),
        ApiRequest::PostAnswer {
            session_id: session,
            question_id: q,
            payload: AnswerPayload::Options(vec![1]),
            lat: loc.lat_deg(),
            lon: loc.lon_deg(),
            proof: Some(ProofSubmission { challenge_id: proof.challenge_id, response: proof.response }),
        },
    );
    ensure!(res.status == 409 && res.error_kind() == Some("ProofReused"), "reused proof answered {} {}", res.status, res.body);
    Ok(format!(
        "{mutations} token mutations rejected; reuse rejected in registry and API; {audited} replayed answers each backed by a fresh verified token, {refused} unproven attempts refused"
    ))
}
