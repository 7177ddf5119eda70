//! Brute-force reference for aggregation: replays events into a plain list
//! of live values and computes each function directly.

use super::{AggEvent, AggregateFn, AggregationError, EventKind};

/// Ground truth for `f` after applying all of `events`.
pub fn oracle_aggregate(events: &[AggEvent], f: AggregateFn) -> Result<Option<f64>, AggregationError> {
    let mut live: Vec<(String, f64)> = Vec::new();
    for e in events {
        let pos = live.iter().position(|(p, _)| *p == e.participant);
        match (e.kind, pos) {
            (EventKind::Join, Some(_)) => return Err(AggregationError::AlreadyJoined(e.participant.clone())),
            (EventKind::Join, None) => {
                let v = e.value.filter(|v| v.is_finite()).ok_or(AggregationError::InvalidValue)?;
                live.push((e.participant.clone(), v));
            }
            (EventKind::Update, Some(i)) => {
                live[i].1 = e.value.filter(|v| v.is_finite()).ok_or(AggregationError::InvalidValue)?;
            }
            (EventKind::Leave, Some(i)) => {
                live.remove(i);
            }
            (EventKind::Update | EventKind::Leave, None) => {
                return Err(AggregationError::NotJoined(e.participant.clone()))
            }
        }
    }
    let values: Vec<f64> = live.into_iter().map(|(_, v)| v).collect();
    let n = values.len();
    Ok(match f {
        AggregateFn::Count => Some(n as f64),
        AggregateFn::Sum => Some(values.iter().sum()),
        AggregateFn::Avg if n == 0 => None,
        AggregateFn::Avg => Some(values.iter().sum::<f64>() / n as f64),
        AggregateFn::Max => values.iter().copied().reduce(f64::max),
        AggregateFn::Min => values.iter().copied().reduce(f64::min),
    })
}

/// Replays `events` through both the engine and the oracle; returns
/// `(engine, oracle)`.
pub fn engine_and_oracle(events: &[AggEvent], f: AggregateFn) -> Result<(Option<f64>, Option<f64>), AggregationError> {
    let mut engine = super::AggregateState::new("replay");
    for e in events {
        engine.apply(e)?;
    }
    Ok((engine.read(f), oracle_aggregate(events, f)?))
}

/// Newline-delimited `{t, kind, participant, value?}` records.
pub fn write_event_log(events: &[AggEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

pub fn parse_event_log(text: &str) -> Result<Vec<AggEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
