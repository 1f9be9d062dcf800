use nas_timer::timer_model::{
    burst_delay, explain_timer, size_registration_suite, size_timer, EndpointWeights, ModelError,
    NodeLoadProfile, PathSpec,
};
use proptest::prelude::*;

/// Aggregated node delay written out from the queueing definitions.
fn oracle_node_delay(p: &NodeLoadProfile) -> f64 {
    let mu = p.service_rate;
    let steady = 1.0 / (mu - p.steady_arrival);
    let burst_rate = if p.total_arrival < mu {
        0.0
    } else {
        p.total_arrival - p.steady_arrival
    };
    let backlog = ((burst_rate - mu) * p.burst_window / mu).max(0.0);
    steady + backlog
}

/// Timer value by naive re-summation over every node and link.
fn oracle_timer(
    nodes: &[NodeLoadProfile],
    links: &[f64],
    rounds: u32,
    alpha: f64,
    beta: f64,
) -> f64 {
    let n = links.len();
    let mut one_way = 0.0;
    for l in links {
        one_way += l;
    }
    for node in &nodes[1..n] {
        one_way += oracle_node_delay(node);
    }
    let pairs = (rounds / 2 + 1) as f64;
    rounds as f64 * one_way
        + pairs * (alpha * oracle_node_delay(&nodes[0]) + beta * oracle_node_delay(&nodes[n]))
}

fn profile() -> impl Strategy<Value = NodeLoadProfile> {
    (1.0f64..1e6, 0.0f64..0.95, 0.0f64..20.0, 0.0f64..0.01).prop_map(|(mu, frac, extra, window)| {
        let steady = frac * mu;
        NodeLoadProfile::new(mu, steady, steady + extra * mu, window).unwrap()
    })
}

fn path_parts(max_hops: usize) -> impl Strategy<Value = (Vec<NodeLoadProfile>, Vec<f64>)> {
    (1..=max_hops).prop_flat_map(|n| {
        (
            prop::collection::vec(profile(), n + 1),
            prop::collection::vec(0.0f64..0.05, n),
        )
    })
}

fn weights() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..1.0, 0.0f64..1.0)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #[test]
    fn matches_naive_resummation((nodes, links) in path_parts(40), rounds in 0u32..12, (a, b) in weights()) {
        let path = PathSpec::new(nodes.clone(), links.clone()).unwrap();
        let w = EndpointWeights::new(a, b).unwrap();
        let got = size_timer(&path, rounds, w).unwrap();
        let want = oracle_timer(&nodes, &links, rounds, a, b);
        prop_assert!(rel_close(got, want, 1e-9), "{got} vs {want}");
        let explained = explain_timer(&path, rounds, w).unwrap();
        prop_assert!(rel_close(explained.value, got, 1e-12));
    }

    #[test]
    fn affine_in_rounds((nodes, links) in path_parts(20), (a, b) in weights(), rounds in 0u32..30) {
        let path = PathSpec::new(nodes, links).unwrap();
        let w = EndpointWeights::new(a, b).unwrap();
        // R = 0 isolates the endpoint term, R = 1 adds one transit
        let endpoint = size_timer(&path, 0, w).unwrap();
        let transit = size_timer(&path, 1, w).unwrap() - endpoint;
        let expected = rounds as f64 * transit + (rounds / 2 + 1) as f64 * endpoint;
        let got = size_timer(&path, rounds, w).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn backoff_ignores_the_transit((nodes, links) in path_parts(20), (a, b) in weights(), scale in 1.0f64..10.0) {
        let w = EndpointWeights::new(a, b).unwrap();
        let base = size_timer(&PathSpec::new(nodes.clone(), links.clone()).unwrap(), 0, w).unwrap();
        let mut middle = nodes.clone();
        let last = middle.len() - 1;
        for node in &mut middle[1..last] {
            node.steady_arrival *= 0.5;
        }
        let stretched: Vec<f64> = links.iter().map(|l| l * scale).collect();
        let other = size_timer(&PathSpec::new(middle, stretched).unwrap(), 0, w).unwrap();
        prop_assert_eq!(base, other);
        let want = a * oracle_node_delay(&nodes[0]) + b * oracle_node_delay(&nodes[nodes.len() - 1]);
        prop_assert!(rel_close(base, want, 1e-12));
    }

    #[test]
    fn monotone_in_every_input(
        (nodes, links) in path_parts(20),
        (a, b) in weights(),
        rounds in 0u32..10,
        which in any::<prop::sample::Index>(),
        bump in 0.0f64..0.05,
    ) {
        let w = EndpointWeights::new(a, b).unwrap();
        let path = PathSpec::new(nodes.clone(), links.clone()).unwrap();
        let base = size_timer(&path, rounds, w).unwrap();
        let slack = 1e-12 * base.max(1.0);

        prop_assert!(size_timer(&path, rounds + 1, w).unwrap() >= base - slack);
        prop_assert!(size_timer(&path, rounds, EndpointWeights::new(a + bump, b).unwrap()).unwrap() >= base - slack);
        prop_assert!(size_timer(&path, rounds, EndpointWeights::new(a, b + bump).unwrap()).unwrap() >= base - slack);

        let mut longer = links.clone();
        longer[which.index(links.len())] += bump;
        let p = PathSpec::new(nodes.clone(), longer).unwrap();
        prop_assert!(size_timer(&p, rounds, w).unwrap() >= base - slack);

        // extra steady load on one node, on top of its burst, still below its service rate
        let mut loaded = nodes.clone();
        let i = which.index(nodes.len());
        let node = &mut loaded[i];
        let extra = 0.5 * (node.service_rate - node.steady_arrival) * bump / 0.05;
        node.steady_arrival += extra;
        node.total_arrival += extra;
        let p = PathSpec::new(loaded, links.clone()).unwrap();
        prop_assert!(size_timer(&p, rounds, w).unwrap() >= base - slack);
    }

    #[test]
    fn reversed_path_with_swapped_weights_is_the_same_timer(
        (nodes, links) in path_parts(20),
        (a, b) in weights(),
        rounds in 0u32..10,
    ) {
        let path = PathSpec::new(nodes, links).unwrap();
        let w = EndpointWeights::new(a, b).unwrap();
        let fwd = size_timer(&path, rounds, w).unwrap();
        let back = size_timer(&path.reversed(), rounds, w.swapped()).unwrap();
        prop_assert!(rel_close(fwd, back, 1e-12));
        prop_assert_eq!(path.reversed().reversed(), path);
    }

    #[test]
    fn doubling_beta_adds_one_responder_term_per_pair((nodes, links) in path_parts(20), (a, b) in weights()) {
        let path = PathSpec::new(nodes.clone(), links).unwrap();
        let s1 = size_registration_suite(&path, EndpointWeights::new(a, b).unwrap()).unwrap();
        let s2 = size_registration_suite(&path, EndpointWeights::new(a, 2.0 * b).unwrap()).unwrap();
        let amf = oracle_node_delay(&nodes[nodes.len() - 1]);
        let tol = |x: f64| 1e-9 * x.max(1.0);
        prop_assert!((s2.t3510.value - s1.t3510.value - 3.0 * b * amf).abs() <= tol(s2.t3510.value));
        prop_assert!((s2.t3511.value - s1.t3511.value - b * amf).abs() <= tol(s2.t3511.value));
        prop_assert!((s2.t3560.value - s1.t3560.value - 2.0 * b * amf).abs() <= tol(s2.t3560.value));
        prop_assert_eq!(s1.t3550.value, s1.t3560.value);
    }

    #[test]
    fn burst_backlog_is_nonnegative_and_clamp_flag_is_exact(p in profile()) {
        let d = burst_delay(&p);
        prop_assert!(d.delay >= 0.0);
        let burst_rate = if p.total_arrival < p.service_rate { 0.0 } else { p.total_arrival - p.steady_arrival };
        prop_assert_eq!(d.clamped, burst_rate > 0.0 && burst_rate < p.service_rate);
        if burst_rate > p.service_rate {
            prop_assert!(rel_close(d.delay, (burst_rate - p.service_rate) * p.burst_window / p.service_rate, 1e-12));
        }
    }

    #[test]
    fn unstable_node_is_reported_by_position((nodes, links) in path_parts(10), pick in any::<prop::sample::Index>()) {
        let mut nodes = nodes;
        let i = pick.index(nodes.len());
        nodes[i].steady_arrival = nodes[i].service_rate;
        nodes[i].total_arrival = nodes[i].total_arrival.max(nodes[i].service_rate);
        let path = PathSpec::new(nodes, links).unwrap();
        let w = EndpointWeights::new(0.1, 0.64).unwrap();
        match size_timer(&path, 5, w) {
            Err(ModelError::UnstableQueue { node, .. }) => prop_assert_eq!(node, i),
            other => prop_assert!(false, "expected unstable queue, got {other:?}"),
        }
        match size_registration_suite(&path, w) {
            Err(ModelError::UnstableQueue { node, .. }) => prop_assert_eq!(node, i),
            other => prop_assert!(false, "expected unstable queue, got {other:?}"),
        }
    }
}
