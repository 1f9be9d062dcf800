//! Closed-form sizing of NAS watchdog and backoff timers.
//!
//! A timer guarding `R` message rounds over a path of nodes `0..=N` is
//!
//! ```text
//! T = R * (sum of link propagation delays + sum of D_agg over intermediate nodes)
//!   + (floor(R / 2) + 1) * (alpha * D_agg[0] + beta * D_agg[N])
//! ```
//!
//! where each node's aggregated delay `D_agg = D_ss + D_brs` is the M/M/1
//! steady-state sojourn `1 / (mu - lambda_ss)` plus the time needed to drain
//! the backlog a burst leaves behind, `(lambda_brs - mu) * t_brs / mu`.
//!
//! Every sizing is a single pass over the hops. All values are `f64` seconds
//! or events per second.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid load profile: {0}")]
    InvalidProfile(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid endpoint weights: alpha={alpha}, beta={beta}")]
    InvalidWeights { alpha: f64, beta: f64 },
    /// The node cannot sustain its steady load (`mu <= lambda_ss`).
    #[error("unstable queue at node {node}: service rate {service_rate}/s <= steady arrival {steady_arrival}/s")]
    UnstableQueue {
        node: usize,
        service_rate: f64,
        steady_arrival: f64,
    },
}

/// Per-node arrival and service rates.
///
/// `total_arrival` includes the steady load plus whatever a burst adds
/// during `burst_window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLoadProfile {
    pub service_rate: f64,
    pub steady_arrival: f64,
    pub total_arrival: f64,
    pub burst_window: f64,
}

impl NodeLoadProfile {
    pub fn new(
        service_rate: f64,
        steady_arrival: f64,
        total_arrival: f64,
        burst_window: f64,
    ) -> Result<Self, ModelError> {
        let p = NodeLoadProfile {
            service_rate,
            steady_arrival,
            total_arrival,
            burst_window,
        };
        p.validate()?;
        Ok(p)
    }

    /// A node carrying only steady load, no burst.
    pub fn steady(service_rate: f64, steady_arrival: f64) -> Result<Self, ModelError> {
        Self::new(service_rate, steady_arrival, steady_arrival, 0.0)
    }

    /// A node at `load_fraction` of its capacity that additionally receives
    /// `burst_jobs` arrivals spread over `burst_window` seconds.
    pub fn with_burst(
        service_rate: f64,
        load_fraction: f64,
        burst_jobs: f64,
        burst_window: f64,
    ) -> Result<Self, ModelError> {
        if !(burst_window > 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "burst window must be positive, got {burst_window}"
            )));
        }
        let steady = load_fraction * service_rate;
        Self::new(
            service_rate,
            steady,
            steady + burst_jobs / burst_window,
            burst_window,
        )
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_finite = [
            self.service_rate,
            self.steady_arrival,
            self.total_arrival,
            self.burst_window,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(ModelError::InvalidProfile("non-finite field".into()));
        }
        if self.service_rate <= 0.0 {
            return Err(ModelError::InvalidProfile(format!(
                "service rate must be positive, got {}",
                self.service_rate
            )));
        }
        if self.steady_arrival < 0.0 || self.total_arrival < self.steady_arrival {
            return Err(ModelError::InvalidProfile(format!(
                "need total arrival ({}) >= steady arrival ({}) >= 0",
                self.total_arrival, self.steady_arrival
            )));
        }
        if self.burst_window < 0.0 {
            return Err(ModelError::InvalidProfile(format!(
                "burst window must be nonnegative, got {}",
                self.burst_window
            )));
        }
        Ok(())
    }

    pub fn steady_state_delay(&self) -> Result<f64, ModelError> {
        steady_state_delay(self)
    }

    pub fn burst_arrival_rate(&self) -> f64 {
        burst_arrival_rate(self)
    }

    pub fn burst_delay(&self) -> BurstDelay {
        burst_delay(self)
    }

    pub fn aggregated_delay(&self) -> Result<AggregatedDelay, ModelError> {
        aggregated_delay(self)
    }
}

/// M/M/1 sojourn time `1 / (mu - lambda_ss)`.
pub fn steady_state_delay(p: &NodeLoadProfile) -> Result<f64, ModelError> {
    steady_state_delay_at(p, 0)
}

fn steady_state_delay_at(p: &NodeLoadProfile, node: usize) -> Result<f64, ModelError> {
    let headroom = p.service_rate - p.steady_arrival;
    if !(headroom > 0.0) {
        return Err(ModelError::UnstableQueue {
            node,
            service_rate: p.service_rate,
            steady_arrival: p.steady_arrival,
        });
    }
    Ok(1.0 / headroom)
}

/// Arrival rate attributed to a burst: zero unless the total arrival rate
/// reaches the service rate.
pub fn burst_arrival_rate(p: &NodeLoadProfile) -> f64 {
    if p.total_arrival < p.service_rate {
        0.0
    } else {
        p.total_arrival - p.steady_arrival
    }
}

/// Result of the burst backlog computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstDelay {
    pub delay: f64,
    /// Set when the node is overloaded (`lambda >= mu`) but the burst share
    /// alone does not exceed `mu`, so the raw backlog expression would be
    /// negative and was clamped to zero.
    pub clamped: bool,
}

/// Time to drain the backlog a burst leaves behind, `(lambda_brs - mu) t_brs / mu`.
pub fn burst_delay(p: &NodeLoadProfile) -> BurstDelay {
    let burst_rate = burst_arrival_rate(p);
    if burst_rate == 0.0 {
        return BurstDelay {
            delay: 0.0,
            clamped: false,
        };
    }
    let raw = (burst_rate - p.service_rate) * p.burst_window / p.service_rate;
    if burst_rate <= p.service_rate {
        BurstDelay {
            delay: 0.0,
            clamped: raw < 0.0,
        }
    } else {
        BurstDelay {
            delay: raw,
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDelay {
    pub steady: f64,
    pub burst: f64,
    pub burst_clamped: bool,
}

impl AggregatedDelay {
    pub fn total(&self) -> f64 {
        self.steady + self.burst
    }
}

pub fn aggregated_delay(p: &NodeLoadProfile) -> Result<AggregatedDelay, ModelError> {
    aggregated_delay_at(p, 0)
}

fn aggregated_delay_at(p: &NodeLoadProfile, node: usize) -> Result<AggregatedDelay, ModelError> {
    let steady = steady_state_delay_at(p, node)?;
    let burst = burst_delay(p);
    Ok(AggregatedDelay {
        steady,
        burst: burst.delay,
        burst_clamped: burst.clamped,
    })
}

/// Ordered path from the timer's origin (index 0) to its responder (index N).
///
/// `link_delays[i]` is the one-way propagation delay between node `i` and
/// node `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    nodes: Vec<NodeLoadProfile>,
    link_delays: Vec<f64>,
}

impl PathSpec {
    pub fn new(nodes: Vec<NodeLoadProfile>, link_delays: Vec<f64>) -> Result<Self, ModelError> {
        if nodes.len() < 2 {
            return Err(ModelError::InvalidPath(format!(
                "need at least origin and responder, got {} node(s)",
                nodes.len()
            )));
        }
        if link_delays.len() + 1 != nodes.len() {
            return Err(ModelError::InvalidPath(format!(
                "{} nodes need {} link delays, got {}",
                nodes.len(),
                nodes.len() - 1,
                link_delays.len()
            )));
        }
        if let Some((i, d)) = link_delays
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.is_finite() && **d >= 0.0))
        {
            return Err(ModelError::InvalidPath(format!(
                "link {i} has invalid delay {d}"
            )));
        }
        for node in &nodes {
            node.validate()?;
        }
        Ok(PathSpec { nodes, link_delays })
    }

    pub fn nodes(&self) -> &[NodeLoadProfile] {
        &self.nodes
    }

    pub fn link_delays(&self) -> &[f64] {
        &self.link_delays
    }

    /// Number of hops, `N`.
    pub fn hops(&self) -> usize {
        self.link_delays.len()
    }

    pub fn origin(&self) -> &NodeLoadProfile {
        &self.nodes[0]
    }

    pub fn responder(&self) -> &NodeLoadProfile {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn intermediates(&self) -> &[NodeLoadProfile] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    pub fn total_propagation(&self) -> f64 {
        self.link_delays.iter().sum()
    }

    /// One-way transit time between the endpoints: all links plus the
    /// aggregated delay of every intermediate node.
    pub fn one_way_transit(&self) -> Result<f64, ModelError> {
        let mut total = self.total_propagation();
        for (i, node) in self.intermediates().iter().enumerate() {
            total += aggregated_delay_at(node, i + 1)?.total();
        }
        Ok(total)
    }

    /// The same path seen from the responder.
    pub fn reversed(&self) -> PathSpec {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        let mut link_delays = self.link_delays.clone();
        link_delays.reverse();
        PathSpec { nodes, link_delays }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl EndpointWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(alpha) && ok(beta)) {
            return Err(ModelError::InvalidWeights { alpha, beta });
        }
        Ok(EndpointWeights { alpha, beta })
    }

    /// Swap roles so each weight keeps applying to the same physical node
    /// when the path is reversed.
    pub fn swapped(&self) -> Self {
        EndpointWeights {
            alpha: self.beta,
            beta: self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimerKind {
    Watchdog,
    Backoff,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizedTimer {
    pub name: String,
    pub kind: TimerKind,
    pub handshake_rounds: u32,
    pub value: f64,
}

/// The four timers of the registration procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizedTimerSuite {
    pub t3510: SizedTimer,
    pub t3511: SizedTimer,
    pub t3550: SizedTimer,
    pub t3560: SizedTimer,
}

/// Rounds covered by the UE's registration watchdog.
pub const T3510_ROUNDS: u32 = 5;
/// Rounds covered by each AMF-side watchdog.
pub const AMF_WATCHDOG_ROUNDS: u32 = 2;

impl SizedTimerSuite {
    /// Builds a suite from fixed values (no sizing), e.g. reference timers.
    pub fn fixed(t3510: f64, t3511: f64, t3550: f64, t3560: f64) -> Self {
        SizedTimerSuite {
            t3510: SizedTimer {
                name: "T3510".into(),
                kind: TimerKind::Watchdog,
                handshake_rounds: T3510_ROUNDS,
                value: t3510,
            },
            t3511: SizedTimer {
                name: "T3511".into(),
                kind: TimerKind::Backoff,
                handshake_rounds: 0,
                value: t3511,
            },
            t3550: SizedTimer {
                name: "T3550".into(),
                kind: TimerKind::Watchdog,
                handshake_rounds: AMF_WATCHDOG_ROUNDS,
                value: t3550,
            },
            t3560: SizedTimer {
                name: "T3560".into(),
                kind: TimerKind::Watchdog,
                handshake_rounds: AMF_WATCHDOG_ROUNDS,
                value: t3560,
            },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &SizedTimer> {
        [&self.t3510, &self.t3511, &self.t3550, &self.t3560].into_iter()
    }
}

/// Sized value of a timer covering `rounds` message rounds.
///
/// Single pass over the path; allocation free.
pub fn size_timer(path: &PathSpec, rounds: u32, w: EndpointWeights) -> Result<f64, ModelError> {
    let n = path.hops();
    let mut transit = 0.0;
    for (i, delay) in path.link_delays.iter().enumerate() {
        transit += delay;
        if i + 1 < n {
            transit += aggregated_delay_at(&path.nodes[i + 1], i + 1)?.total();
        }
    }
    let origin = aggregated_delay_at(&path.nodes[0], 0)?.total();
    let responder = aggregated_delay_at(&path.nodes[n], n)?.total();
    Ok(rounds as f64 * transit
        + endpoint_multiplier(rounds) * (w.alpha * origin + w.beta * responder))
}

/// `floor(R / 2) + 1`: endpoint processing happens once per request/response pair.
pub fn endpoint_multiplier(rounds: u32) -> f64 {
    (rounds / 2 + 1) as f64
}

/// Term-by-term decomposition of one sizing, for operator reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerBreakdown {
    pub rounds: u32,
    pub propagation: f64,
    /// Aggregated delay of each intermediate node, in path order.
    pub hop_delays: Vec<f64>,
    pub origin_delay: f64,
    pub responder_delay: f64,
    pub transit_term: f64,
    pub endpoint_term: f64,
    /// Path indices whose burst term was clamped to zero.
    pub clamped_nodes: Vec<usize>,
    pub value: f64,
}

/// Same value as [`size_timer`] plus the individual terms.
pub fn explain_timer(
    path: &PathSpec,
    rounds: u32,
    w: EndpointWeights,
) -> Result<TimerBreakdown, ModelError> {
    let n = path.hops();
    let mut clamped_nodes = Vec::new();
    let mut agg = |i: usize| -> Result<f64, ModelError> {
        let d = aggregated_delay_at(&path.nodes[i], i)?;
        if d.burst_clamped {
            clamped_nodes.push(i);
        }
        Ok(d.total())
    };
    let origin_delay = agg(0)?;
    let hop_delays = (1..n).map(&mut agg).collect::<Result<Vec<_>, _>>()?;
    let responder_delay = agg(n)?;
    let propagation = path.total_propagation();
    let transit_term = rounds as f64 * (propagation + hop_delays.iter().sum::<f64>());
    let endpoint_term =
        endpoint_multiplier(rounds) * (w.alpha * origin_delay + w.beta * responder_delay);
    Ok(TimerBreakdown {
        rounds,
        propagation,
        hop_delays,
        origin_delay,
        responder_delay,
        transit_term,
        endpoint_term,
        clamped_nodes,
        value: transit_term + endpoint_term,
    })
}

/// Sizes T3510, T3511, T3550 and T3560 for a UE -> AMF path.
///
/// The AMF-side watchdogs run on the responder, so they are sized over the
/// reversed path with the weights swapped to stay attached to the same node.
pub fn size_registration_suite(
    path: &PathSpec,
    w: EndpointWeights,
) -> Result<SizedTimerSuite, ModelError> {
    let t3510 = size_timer(path, T3510_ROUNDS, w)?;
    let t3511 = size_timer(path, 0, w)?;
    let amf_side =
        size_timer(&path.reversed(), AMF_WATCHDOG_ROUNDS, w.swapped()).map_err(|e| match e {
            ModelError::UnstableQueue {
                node,
                service_rate,
                steady_arrival,
            } => ModelError::UnstableQueue {
                node: path.hops() - node,
                service_rate,
                steady_arrival,
            },
            other => other,
        })?;
    Ok(SizedTimerSuite::fixed(t3510, t3511, amf_side, amf_side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn node(mu: f64, lss: f64) -> NodeLoadProfile {
        NodeLoadProfile::steady(mu, lss).unwrap()
    }

    #[test]
    fn steady_state_examples() {
        let mu = 5.0e7 / 3.0;
        let p = NodeLoadProfile::steady(mu, 0.8 * mu).unwrap();
        assert_relative_eq!(
            p.steady_state_delay().unwrap(),
            3.0e-7,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            node(25.0, 20.0).steady_state_delay().unwrap(),
            0.2,
            max_relative = 1e-12
        );
        assert_eq!(node(1.0, 0.0).steady_state_delay().unwrap(), 1.0);
    }

    #[test]
    fn unstable_node_is_an_error() {
        let err = node(10.0, 10.0).steady_state_delay().unwrap_err();
        assert!(matches!(err, ModelError::UnstableQueue { node: 0, .. }));
    }

    #[test]
    fn burst_rate_cases() {
        assert_eq!(
            NodeLoadProfile::new(100.0, 0.0, 10.0, 1e-3)
                .unwrap()
                .burst_arrival_rate(),
            0.0
        );
        let lss = 260.0;
        let p = NodeLoadProfile::new(325.2, lss, 4.0e6 + lss, 1e-3).unwrap();
        assert_relative_eq!(p.burst_arrival_rate(), 4.0e6, max_relative = 1e-12);
        // lambda == mu is a burst by definition; here lambda_ss absorbs all of it
        let p = NodeLoadProfile::new(50.0, 50.0, 50.0, 1e-3).unwrap();
        assert_eq!(p.burst_arrival_rate(), 0.0);
        let p = NodeLoadProfile::new(50.0, 20.0, 50.0, 1e-3).unwrap();
        assert_eq!(p.burst_arrival_rate(), 30.0);
    }

    #[test]
    fn burst_delay_cases() {
        let p = NodeLoadProfile::new(325.2, 0.0, 4.0e6, 1e-3).unwrap();
        let d = p.burst_delay();
        assert!(!d.clamped);
        assert_relative_eq!(
            d.delay,
            (4.0e6 - 325.2) * 1e-3 / 325.2,
            max_relative = 1e-12
        );
        assert!((d.delay - 12.3).abs() < 0.05);

        let idle = NodeLoadProfile::new(100.0, 0.0, 10.0, 1e-3).unwrap();
        assert_eq!(
            idle.burst_delay(),
            BurstDelay {
                delay: 0.0,
                clamped: false
            }
        );

        // burst share exactly equal to mu: zero backlog, nothing to clamp
        let edge = NodeLoadProfile::new(100.0, 0.0, 100.0, 1e-3).unwrap();
        assert_eq!(
            edge.burst_delay(),
            BurstDelay {
                delay: 0.0,
                clamped: false
            }
        );

        // overloaded overall but the burst share alone is below mu
        let clamped = NodeLoadProfile::new(100.0, 60.0, 120.0, 1e-3).unwrap();
        assert_eq!(
            clamped.burst_delay(),
            BurstDelay {
                delay: 0.0,
                clamped: true
            }
        );
    }

    #[test]
    fn aggregated_is_sum() {
        let p = NodeLoadProfile::new(325.2, 0.8 * 325.2, 0.8 * 325.2 + 4.0e6, 1e-3).unwrap();
        let a = p.aggregated_delay().unwrap();
        assert_relative_eq!(
            a.total(),
            p.steady_state_delay().unwrap() + p.burst_delay().delay
        );
        let calm = node(40.0, 10.0);
        assert_eq!(
            calm.aggregated_delay().unwrap().total(),
            calm.steady_state_delay().unwrap()
        );
    }

    #[test]
    fn path_validation() {
        assert!(PathSpec::new(vec![node(1.0, 0.0)], vec![]).is_err());
        assert!(PathSpec::new(vec![node(1.0, 0.0); 2], vec![]).is_err());
        assert!(PathSpec::new(vec![node(1.0, 0.0); 2], vec![-1.0]).is_err());
        assert!(PathSpec::new(vec![node(1.0, 0.0); 2], vec![f64::NAN]).is_err());
        assert!(EndpointWeights::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn backoff_form_has_no_transit_term() {
        let path = PathSpec::new(
            vec![node(10.0, 5.0), node(1e6, 0.0), node(4.0, 2.0)],
            vec![0.01, 0.02],
        )
        .unwrap();
        let w = EndpointWeights::new(0.3, 0.7).unwrap();
        let expected = 0.3 * 0.2 + 0.7 * 0.5;
        assert_eq!(size_timer(&path, 0, w).unwrap(), expected);
    }

    #[test]
    fn unstable_intermediate_names_index() {
        let path = PathSpec::new(
            vec![
                node(10.0, 5.0),
                node(1e6, 0.0),
                node(3.0, 3.0),
                node(4.0, 2.0),
            ],
            vec![0.01, 0.02, 0.03],
        )
        .unwrap();
        let w = EndpointWeights::new(1.0, 1.0).unwrap();
        let err = size_timer(&path, 2, w).unwrap_err();
        assert!(matches!(err, ModelError::UnstableQueue { node: 2, .. }));
        // the AMF-side sizing reports indices in the original orientation too
        let err = size_registration_suite(&path, w).unwrap_err();
        assert!(matches!(err, ModelError::UnstableQueue { node: 2, .. }));
    }

    #[test]
    fn explain_matches_size() {
        let path = PathSpec::new(
            vec![
                node(10.0, 5.0),
                node(1e6, 0.0),
                node(2e6, 1e6),
                node(4.0, 2.0),
            ],
            vec![0.01, 0.02, 0.005],
        )
        .unwrap();
        let w = EndpointWeights::new(0.2, 0.9).unwrap();
        for r in 0..7 {
            let b = explain_timer(&path, r, w).unwrap();
            assert_relative_eq!(
                b.value,
                size_timer(&path, r, w).unwrap(),
                max_relative = 1e-14
            );
            assert_eq!(b.hop_delays.len(), 2);
        }
    }

    #[test]
    fn clamp_recorded_in_breakdown() {
        let path = PathSpec::new(
            vec![
                node(10.0, 5.0),
                NodeLoadProfile::new(100.0, 60.0, 120.0, 1e-3).unwrap(),
                node(4.0, 2.0),
            ],
            vec![0.01, 0.02],
        )
        .unwrap();
        let b = explain_timer(&path, 5, EndpointWeights::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(b.clamped_nodes, vec![1]);
    }

    #[test]
    fn suite_kinds_and_rounds() {
        let path = PathSpec::new(vec![node(10.0, 5.0), node(4.0, 2.0)], vec![0.0]).unwrap();
        let suite =
            size_registration_suite(&path, EndpointWeights::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(suite.t3510.handshake_rounds, 5);
        assert_eq!(suite.t3511.handshake_rounds, 0);
        assert_eq!(suite.t3511.kind, TimerKind::Backoff);
        assert_eq!(suite.t3550.handshake_rounds, 2);
        assert_eq!(suite.t3560.handshake_rounds, 2);
        assert_eq!(suite.t3550.value, suite.t3560.value);
    }
}
