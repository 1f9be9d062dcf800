//! Constellation snapshots and path extraction.
//!
//! A snapshot is an undirected graph of UEs, satellites, gateways and core
//! network functions. Where the AMF sits (ground, LEO, higher orbit) is only
//! a matter of which node carries the `core_nf` role and how it is linked.
//!
//! Snapshot JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "timestamp": 0.0,
//!   "nodes": [
//!     { "id": "ue", "role": "ue",
//!       "load": { "service_rate": 1000.0, "steady_arrival": 0.0,
//!                 "total_arrival": 0.0, "burst_window": 0.0 } }
//!   ],
//!   "links": [
//!     { "a": "ue", "b": "sat-0", "delay_s": 0.0025 },
//!     { "a": "sat-0", "b": "sat-1", "distance_km": 1800.0 }
//!   ]
//! }
//! ```
//!
//! `version` and `timestamp` are optional; every other field shown is
//! required except `load.total_arrival` (defaults to `steady_arrival`) and
//! `load.burst_window` (defaults to 0). Unrecognized keys are ignored.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timer_model::{ModelError, NodeLoadProfile, PathSpec};

/// Speed of light in vacuum, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),
    #[error("link {a} <-> {b}: {reason}")]
    InvalidLink {
        a: String,
        b: String,
        reason: String,
    },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
    #[error("no route from {origin:?} to {responder:?}")]
    Disconnected { origin: String, responder: String },
    #[error("origin and responder are the same node {0:?}")]
    SameEndpoints(String),
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("node {id:?}: {source}")]
    Load { id: String, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot read snapshot: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed snapshot: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Ue,
    LeoSatellite,
    SpaceGateway,
    GroundGateway,
    CoreNf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub role: NodeRole,
    #[serde(with = "load_serde")]
    pub load: NodeLoadProfile,
}

/// How a link's propagation delay is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LinkDelay {
    #[serde(rename = "delay_s")]
    Seconds(f64),
    #[serde(rename = "distance_km")]
    DistanceKm(f64),
}

impl LinkDelay {
    pub fn seconds(&self) -> Result<f64, TopologyError> {
        match *self {
            LinkDelay::Seconds(s) if s.is_finite() && s > 0.0 => Ok(s),
            LinkDelay::Seconds(s) => Err(TopologyError::InvalidLink {
                a: String::new(),
                b: String::new(),
                reason: format!("delay must be positive, got {s} s"),
            }),
            LinkDelay::DistanceKm(km) => prop_delay_from_distance(km),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLink {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub delay: LinkDelay,
}

/// Immutable graph of one instant of the constellation.
#[derive(Debug, Clone)]
pub struct ConstellationSnapshot {
    timestamp: f64,
    nodes: Vec<NetworkNode>,
    index: HashMap<String, usize>,
    /// Adjacency: (neighbor, delay seconds). Links are undirected.
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// A path plus the node ids it traverses.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub node_ids: Vec<String>,
    pub path: PathSpec,
}

/// Free-space propagation delay over `distance_km`.
pub fn prop_delay_from_distance(distance_km: f64) -> Result<f64, TopologyError> {
    if !(distance_km.is_finite() && distance_km > 0.0) {
        return Err(TopologyError::NonPositiveDistance(distance_km));
    }
    Ok(distance_km / SPEED_OF_LIGHT_KM_S)
}

#[derive(Deserialize)]
struct SnapshotDoc {
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    timestamp: f64,
    nodes: Vec<NetworkNode>,
    links: Vec<NetworkLink>,
}

#[derive(Serialize)]
struct SnapshotDocRef<'a> {
    version: u32,
    timestamp: f64,
    nodes: &'a [NetworkNode],
    links: Vec<NetworkLink>,
}

mod load_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct LoadDoc {
        service_rate: f64,
        steady_arrival: f64,
        #[serde(default)]
        total_arrival: Option<f64>,
        #[serde(default)]
        burst_window: f64,
    }

    pub fn serialize<S: Serializer>(p: &NodeLoadProfile, s: S) -> Result<S::Ok, S::Error> {
        LoadDoc {
            service_rate: p.service_rate,
            steady_arrival: p.steady_arrival,
            total_arrival: Some(p.total_arrival),
            burst_window: p.burst_window,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NodeLoadProfile, D::Error> {
        let doc = LoadDoc::deserialize(d)?;
        Ok(NodeLoadProfile {
            service_rate: doc.service_rate,
            steady_arrival: doc.steady_arrival,
            total_arrival: doc.total_arrival.unwrap_or(doc.steady_arrival),
            burst_window: doc.burst_window,
        })
    }
}

impl ConstellationSnapshot {
    pub fn new(
        timestamp: f64,
        nodes: Vec<NetworkNode>,
        links: Vec<NetworkLink>,
    ) -> Result<Self, TopologyError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            node.load.validate().map_err(|source| TopologyError::Load {
                id: node.id.clone(),
                source,
            })?;
            if index.insert(node.id.clone(), i).is_some() {
                return Err(TopologyError::DuplicateNode(node.id.clone()));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for link in &links {
            let a = *index
                .get(&link.a)
                .ok_or_else(|| TopologyError::UnknownNode(link.a.clone()))?;
            let b = *index
                .get(&link.b)
                .ok_or_else(|| TopologyError::UnknownNode(link.b.clone()))?;
            if a == b {
                return Err(TopologyError::InvalidLink {
                    a: link.a.clone(),
                    b: link.b.clone(),
                    reason: "endpoints must differ".into(),
                });
            }
            let delay = link
                .delay
                .seconds()
                .map_err(|e| TopologyError::InvalidLink {
                    a: link.a.clone(),
                    b: link.b.clone(),
                    reason: e.to_string(),
                })?;
            adjacency[a].push((b, delay));
            adjacency[b].push((a, delay));
        }
        Ok(ConstellationSnapshot {
            timestamp,
            nodes,
            index,
            adjacency,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let doc: SnapshotDoc = serde_json::from_str(text)?;
        if let Some(v) = doc.version {
            if v != SNAPSHOT_VERSION {
                return Err(TopologyError::UnsupportedVersion(v));
            }
        }
        Self::new(doc.timestamp, doc.nodes, doc.links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut links = Vec::new();
        for (a, adj) in self.adjacency.iter().enumerate() {
            for &(b, delay) in adj {
                if a < b {
                    links.push(NetworkLink {
                        a: self.nodes[a].id.clone(),
                        b: self.nodes[b].id.clone(),
                        delay: LinkDelay::Seconds(delay),
                    });
                }
            }
        }
        serde_json::to_string_pretty(&SnapshotDocRef {
            version: SNAPSHOT_VERSION,
            timestamp: self.timestamp,
            nodes: &self.nodes,
            links,
        })
        .expect("snapshot serializes")
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn nodes(&self) -> &[NetworkNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&NetworkNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// Neighbors of `id` with their link delays.
    pub fn neighbors(&self, id: &str) -> Option<impl Iterator<Item = (&str, f64)>> {
        let i = *self.index.get(id)?;
        Some(
            self.adjacency[i]
                .iter()
                .map(move |&(j, d)| (self.nodes[j].id.as_str(), d)),
        )
    }

    /// Minimum-propagation-delay route from `origin` to `responder`.
    pub fn build_route(&self, origin: &str, responder: &str) -> Result<Route, TopologyError> {
        let src = *self
            .index
            .get(origin)
            .ok_or_else(|| TopologyError::UnknownNode(origin.into()))?;
        let dst = *self
            .index
            .get(responder)
            .ok_or_else(|| TopologyError::UnknownNode(responder.into()))?;
        if src == dst {
            return Err(TopologyError::SameEndpoints(origin.into()));
        }

        // Labels are (distance, hop ids) compared lexicographically so equal
        // delay routes resolve the same way on every run.
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Reverse(HeapEntry {
            dist: 0.0,
            id: &self.nodes[src].id,
            node: src,
        }));
        while let Some(Reverse(entry)) = heap.pop() {
            let u = entry.node;
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == dst {
                break;
            }
            for &(v, delay) in &self.adjacency[u] {
                if done[v] {
                    continue;
                }
                let candidate = dist[u] + delay;
                let better = match candidate.total_cmp(&dist[v]) {
                    Ordering::Less => true,
                    Ordering::Equal => pred[v]
                        .map(|p| self.nodes[u].id < self.nodes[p].id)
                        .unwrap_or(true),
                    Ordering::Greater => false,
                };
                if better {
                    dist[v] = candidate;
                    pred[v] = Some(u);
                    heap.push(Reverse(HeapEntry {
                        dist: candidate,
                        id: &self.nodes[v].id,
                        node: v,
                    }));
                }
            }
        }
        if !done[dst] {
            return Err(TopologyError::Disconnected {
                origin: origin.into(),
                responder: responder.into(),
            });
        }

        let mut hops = vec![dst];
        let mut cur = dst;
        while let Some(p) = pred[cur] {
            hops.push(p);
            cur = p;
        }
        hops.reverse();
        let link_delays = hops
            .windows(2)
            .map(|w| self.link_delay(w[0], w[1]))
            .collect();
        let profiles = hops.iter().map(|&i| self.nodes[i].load).collect();
        Ok(Route {
            node_ids: hops.iter().map(|&i| self.nodes[i].id.clone()).collect(),
            path: PathSpec::new(profiles, link_delays)?,
        })
    }

    pub fn build_path(&self, origin: &str, responder: &str) -> Result<PathSpec, TopologyError> {
        Ok(self.build_route(origin, responder)?.path)
    }

    fn link_delay(&self, a: usize, b: usize) -> f64 {
        // parallel links: the cheapest one is the one the route used
        self.adjacency[a]
            .iter()
            .filter(|&&(v, _)| v == b)
            .map(|&(_, d)| d)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug)]
struct HeapEntry<'a> {
    dist: f64,
    id: &'a str,
    node: usize,
}

impl PartialEq for HeapEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry<'_> {}

impl PartialOrd for HeapEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(other.id))
    }
}

/// Uniform chain: origin, `n_hops - 1` identical relays, responder.
pub fn synth_path(
    n_hops: usize,
    link_delay: f64,
    hop_profile: NodeLoadProfile,
    origin: NodeLoadProfile,
    responder: NodeLoadProfile,
) -> Result<PathSpec, ModelError> {
    if n_hops == 0 {
        return Err(ModelError::InvalidPath("need at least one hop".into()));
    }
    let mut nodes = Vec::with_capacity(n_hops + 1);
    nodes.push(origin);
    nodes.extend(std::iter::repeat_n(hop_profile, n_hops - 1));
    nodes.push(responder);
    PathSpec::new(nodes, vec![link_delay; n_hops])
}

/// Builds a snapshot of a straight chain, mostly for tests and examples.
pub fn chain_snapshot(
    ids: &[&str],
    roles: &[NodeRole],
    loads: &[NodeLoadProfile],
    delays: &[f64],
) -> Result<ConstellationSnapshot, TopologyError> {
    let nodes = ids
        .iter()
        .zip(roles)
        .zip(loads)
        .map(|((id, role), load)| NetworkNode {
            id: id.to_string(),
            role: *role,
            load: *load,
        })
        .collect();
    let links = ids
        .windows(2)
        .zip(delays)
        .map(|(w, d)| NetworkLink {
            a: w[0].to_string(),
            b: w[1].to_string(),
            delay: LinkDelay::Seconds(*d),
        })
        .collect();
    ConstellationSnapshot::new(0.0, nodes, links)
}
