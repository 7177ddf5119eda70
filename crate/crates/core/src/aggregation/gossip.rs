//! Round-based push-pull gossip simulator for decentralized aggregation.
//!
//! Every node keeps, per participant, the highest-version contribution it
//! has seen, tombstones included. Merging takes the per-participant maximum,
//! which makes node stores a join-semilattice: merges commute, associate and
//! tolerate duplicates, so departures propagate like any other update.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AggregateFn, AggregationError, Contribution, EventKind};

pub type Store = BTreeMap<String, Contribution>;

/// Folds `other` into `mine`, keeping the highest version per participant.
pub fn merge_stores(mine: &mut Store, other: &Store) {
    for (p, theirs) in other {
        match mine.get(p) {
            Some(c) if c.precedence() >= theirs.precedence() => {}
            _ => {
                mine.insert(p.clone(), theirs.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipNode {
    pub id: usize,
    pub store: Store,
    pub neighbors: Vec<usize>,
}

impl GossipNode {
    fn live_values(&self) -> Vec<f64> {
        self.store.values().filter(|c| !c.tombstone).map(|c| c.value).collect()
    }

    /// Node-local view of an aggregate.
    pub fn read(&self, f: AggregateFn) -> Option<f64> {
        let values = self.live_values();
        let n = values.len();
        let sum: f64 = values.iter().sum();
        match f {
            AggregateFn::Count => Some(n as f64),
            AggregateFn::Sum => Some(sum),
            AggregateFn::Avg => (n > 0).then(|| sum / n as f64),
            AggregateFn::Max => values.iter().copied().reduce(f64::max),
            AggregateFn::Min => values.iter().copied().reduce(f64::min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Complete,
    Ring,
    /// Random d-regular graph (configuration model, retried until simple and
    /// connected).
    RandomRegular { degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipNetwork {
    pub nodes: Vec<GossipNode>,
    pub task: String,
    pub rounds: u64,
}

impl GossipNetwork {
    pub fn new(n: usize, topology: Topology, seed: u64) -> Self {
        let adjacency: Vec<BTreeSet<usize>> = match topology {
            Topology::Complete => (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
            Topology::Ring => (0..n)
                .map(|i| {
                    let mut s = BTreeSet::new();
                    if n > 1 {
                        s.insert((i + 1) % n);
                        s.insert((i + n - 1) % n);
                    }
                    s
                })
                .collect(),
            Topology::RandomRegular { degree } => random_regular(n, degree, seed),
        };
        let nodes = adjacency
            .into_iter()
            .enumerate()
            .map(|(id, nb)| GossipNode { id, store: Store::new(), neighbors: nb.into_iter().collect() })
            .collect();
        GossipNetwork { nodes, task: "gossip".into(), rounds: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn diameter(&self) -> usize {
        let mut best = 0;
        for s in 0..self.nodes.len() {
            let mut dist = vec![usize::MAX; self.nodes.len()];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &self.nodes[u].neighbors {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            best = best.max(dist.into_iter().max().unwrap_or(0));
        }
        best
    }

    pub fn is_connected(&self) -> bool {
        self.diameter() != usize::MAX
    }

    /// A participant's own device records a join, update or leave.
    pub fn local_event(
        &mut self,
        node: usize,
        kind: EventKind,
        participant: &str,
        value: Option<f64>,
    ) -> Result<(), AggregationError> {
        let task = self.task.clone();
        let store = &mut self.nodes[node].store;
        let current = store.get(participant);
        let live = current.filter(|c| !c.tombstone);
        let version = current.map_or(1, |c| c.version + 1);
        let next = match (kind, live) {
            (EventKind::Join, Some(_)) => return Err(AggregationError::AlreadyJoined(participant.into())),
            (EventKind::Update | EventKind::Leave, None) => return Err(AggregationError::NotJoined(participant.into())),
            (EventKind::Join | EventKind::Update, _) => Contribution {
                participant: participant.into(),
                task,
                value: value.filter(|v| v.is_finite()).ok_or(AggregationError::InvalidValue)?,
                version,
                tombstone: false,
            },
            (EventKind::Leave, Some(c)) => Contribution { version, tombstone: true, ..c.clone() },
        };
        store.insert(participant.into(), next);
        Ok(())
    }

    /// One synchronous round: each node in turn push-pulls with one
    /// uniformly chosen neighbor.
    pub fn round<R: Rng>(&mut self, rng: &mut R) {
        for i in 0..self.nodes.len() {
            let Some(&j) = self.nodes[i].neighbors.choose(rng) else { continue };
            let theirs = self.nodes[j].store.clone();
            merge_stores(&mut self.nodes[i].store, &theirs);
            let mine = self.nodes[i].store.clone();
            merge_stores(&mut self.nodes[j].store, &mine);
        }
        self.rounds += 1;
    }

    pub fn agrees(&self, f: AggregateFn, expected: Option<f64>) -> bool {
        self.nodes.iter().all(|n| n.read(f) == expected)
    }
}

/// One round seeded by `seed` and the network's round counter.
pub fn gossip_round(network: &mut GossipNetwork, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ network.rounds.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    network.round(&mut rng);
}

fn random_regular(n: usize, d: usize, seed: u64) -> Vec<BTreeSet<usize>> {
    assert!(d < n && (n * d).is_multiple_of(2), "no simple {d}-regular graph on {n} nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, d)).collect();
        rand::seq::SliceRandom::shuffle(stubs.as_mut_slice(), &mut rng);
        let mut adj = vec![BTreeSet::new(); n];
        let ok = stubs.chunks(2).all(|pair| {
            let (a, b) = (pair[0], pair[1]);
            a != b && adj[a].insert(b) && adj[b].insert(a)
        });
        if ok {
            let net = GossipNetwork {
                nodes: adj
                    .iter()
                    .enumerate()
                    .map(|(id, nb)| GossipNode { id, store: Store::new(), neighbors: nb.iter().copied().collect() })
                    .collect(),
                task: String::new(),
                rounds: 0,
            };
            if net.is_connected() {
                return adj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{oracle_aggregate, AggEvent};
    use crate::time::Timestamp;
    use proptest::prelude::*;

    fn converge(net: &mut GossipNetwork, seed: u64, expected: &[(AggregateFn, Option<f64>)], limit: u64) -> Option<u64> {
        for r in 0..=limit {
            if expected.iter().all(|(f, v)| net.agrees(*f, *v)) {
                return Some(r);
            }
            gossip_round(net, seed);
        }
        None
    }

    #[test]
    fn two_nodes_agree_after_one_round() {
        let mut net = GossipNetwork::new(2, Topology::Complete, 0);
        net.local_event(0, EventKind::Join, "a", Some(3.0)).unwrap();
        gossip_round(&mut net, 1);
        assert_eq!(net.nodes[1].read(AggregateFn::Avg), Some(3.0));
        assert!(net.agrees(AggregateFn::Count, Some(1.0)));
    }

    #[test]
    fn complete_graph_eight_contributions() {
        for seed in 0..20 {
            let mut net = GossipNetwork::new(8, Topology::Complete, seed);
            let mut events = Vec::new();
            for i in 0..8 {
                let v = (i % 6) as f64;
                net.local_event(i, EventKind::Join, &format!("u{i}"), Some(v)).unwrap();
                events.push(AggEvent { t: Timestamp(0), kind: EventKind::Join, participant: format!("u{i}"), value: Some(v) });
            }
            let expected: Vec<_> = AggregateFn::ALL.iter().map(|f| (*f, oracle_aggregate(&events, *f).unwrap())).collect();
            let rounds = converge(&mut net, seed, &expected, 10);
            assert!(rounds.is_some(), "seed {seed} did not converge");
        }
    }

    #[test]
    fn ring_propagates_tombstone() {
        for seed in 0..20 {
            let mut net = GossipNetwork::new(6, Topology::Ring, seed);
            assert_eq!(net.diameter(), 3);
            let mut events = Vec::new();
            for i in 0..6 {
                net.local_event(i, EventKind::Join, &format!("u{i}"), Some(i as f64)).unwrap();
                events.push(AggEvent { t: Timestamp(0), kind: EventKind::Join, participant: format!("u{i}"), value: Some(i as f64) });
            }
            for _ in 0..3 {
                gossip_round(&mut net, seed);
            }
            net.local_event(5, EventKind::Leave, "u5", None).unwrap();
            events.push(AggEvent { t: Timestamp(0), kind: EventKind::Leave, participant: "u5".into(), value: None });
            let expected: Vec<_> = AggregateFn::ALL.iter().map(|f| (*f, oracle_aggregate(&events, *f).unwrap())).collect();
            assert!(converge(&mut net, seed, &expected, 12).is_some(), "seed {seed}");
        }
    }

    #[test]
    fn random_regular_is_regular_and_connected() {
        let net = GossipNetwork::new(10, Topology::RandomRegular { degree: 3 }, 42);
        assert!(net.nodes.iter().all(|n| n.neighbors.len() == 3));
        assert!(net.is_connected());
        assert_eq!(net, GossipNetwork::new(10, Topology::RandomRegular { degree: 3 }, 42));
    }

    #[test]
    fn local_event_errors() {
        let mut net = GossipNetwork::new(3, Topology::Ring, 0);
        assert!(matches!(net.local_event(0, EventKind::Leave, "a", None), Err(AggregationError::NotJoined(_))));
        net.local_event(0, EventKind::Join, "a", Some(1.0)).unwrap();
        assert!(matches!(net.local_event(0, EventKind::Join, "a", Some(1.0)), Err(AggregationError::AlreadyJoined(_))));
    }

    fn arb_store() -> impl Strategy<Value = Store> {
        proptest::collection::btree_map(
            "[a-d]",
            (1u64..5, any::<bool>(), 0u8..6),
            0..5,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|(p, (version, tombstone, v))| {
                    (p.clone(), Contribution { participant: p, task: "t".into(), value: v as f64, version, tombstone })
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_is_a_semilattice(a in arb_store(), b in arb_store(), c in arb_store()) {
            let merge = |x: &Store, y: &Store| { let mut m = x.clone(); merge_stores(&mut m, y); m };
            prop_assert_eq!(merge(&a, &b), merge(&b, &a));
            prop_assert_eq!(merge(&merge(&a, &b), &c), merge(&a, &merge(&b, &c)));
            prop_assert_eq!(merge(&merge(&a, &b), &b), merge(&a, &b));
            prop_assert_eq!(merge(&a, &a), a.clone());
        }
    }
}
