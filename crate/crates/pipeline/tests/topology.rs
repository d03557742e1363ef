mod common;

use std::time::Duration;

use dualest_core::{
    optimize_on_node, run_filter, Criterion, Measurement64, OptimizerConfig, Params64, StopRule,
};
use dualest_pipeline::{
    channel_link, node_loop, run_topology, server_loop, Epoch, ExperimentTrace, FeedRate, FinalPolicy, Inbound,
    Message, NodeSettings, Outbound, PipelineError, ServerSettings, Timing, Topology, TransportKind,
};

const LOGICAL: Timing = Timing::Logical { step_cost: 1e-4 };

fn topology(nodes: usize) -> Topology {
    Topology::uniform(nodes, OptimizerConfig::default(), 20, 30, LOGICAL)
}

/// Everything in a trace except wall-clock durations.
fn fingerprint(trace: &ExperimentTrace) -> String {
    let mut out = String::new();
    for p in trace.passes() {
        out += &format!(
            "{} {} {:?} {:?} {} {:?} {:?} {} {:?} {:?}\n",
            p.node,
            p.pass,
            p.start,
            p.end,
            p.data_len,
            p.seed.as_vector().as_slice(),
            p.theta.as_vector().as_slice(),
            p.report.iterations,
            p.report.criterion,
            p.report.cost_trace
        );
    }
    let server = trace.server.as_ref().unwrap();
    for e in &server.theta_events {
        out += &format!("{:?} {} {} {:?}\n", e.time, e.source, e.data_len, e.theta.as_vector().as_slice());
    }
    for s in &server.steps {
        out += &format!("{} {:?} {} {:?}\n", s.k, s.time, s.theta_source, s.xhat.as_slice());
    }
    out
}

fn distance(a: &Params64, b: &Params64) -> f64 {
    (a.as_vector() - b.as_vector()).norm()
}

#[test]
fn tracking_final_node_equals_sequential_prefix_optimization() {
    let problem = common::problem();
    let data = common::dataset(3, 150);
    let mut topo = topology(1);
    topo.final_policy = FinalPolicy::Track;
    let trace = run_topology(&topo, &problem, &data).unwrap();
    let passes = trace.passes();
    assert!(passes.len() > 1, "node 1 should re-run on growing data");

    let config = OptimizerConfig::default();
    let mut theta = problem.prior.theta0().clone();
    for pass in &passes {
        assert_eq!(pass.seed, theta);
        theta = optimize_on_node(&problem, &theta, &data[..pass.data_len], &config, StopRule::Final).unwrap().0;
        assert!((theta.as_vector() - pass.theta.as_vector()).amax() <= 1e-12);
    }
    assert_eq!(passes.last().unwrap().data_len, data.len());
    assert!(distance(trace.final_theta().unwrap(), &theta) <= 1e-12);
}

#[test]
fn whole_stream_chain_equals_sequential_oracle() {
    let problem = common::problem();
    let data = common::dataset(4, 150);
    let trace = run_topology(&topology(2), &problem, &data).unwrap();
    let passes = trace.passes();
    assert_eq!(passes.len(), 2);
    let config = OptimizerConfig::default();
    let (theta1, _) =
        optimize_on_node(&problem, problem.prior.theta0(), &data[..passes[0].data_len], &config, StopRule::Greedy)
            .unwrap();
    assert_eq!(passes[0].data_len, 30);
    assert_eq!(passes[0].theta, theta1);
    let (theta2, _) = optimize_on_node(&problem, &theta1, &data, &config, StopRule::Final).unwrap();
    assert_eq!(passes[1].data_len, 150);
    assert_eq!(trace.final_theta().unwrap(), &theta2);
}

#[test]
fn socket_and_channel_transports_agree() {
    let problem = common::problem();
    let data = common::dataset(5, 150);
    for nodes in [0, 1, 3] {
        let inproc = run_topology(&topology(nodes), &problem, &data).unwrap();
        let mut topo = topology(nodes);
        topo.transport = TransportKind::Socket;
        let socket = run_topology(&topo, &problem, &data).unwrap();
        assert_eq!(fingerprint(&inproc), fingerprint(&socket), "L = {nodes}");
    }
}

#[test]
fn logical_runs_are_repeatable() {
    let problem = common::problem();
    let data = common::dataset(6, 150);
    let a = run_topology(&topology(4), &problem, &data).unwrap();
    let b = run_topology(&topology(4), &problem, &data).unwrap();
    assert_eq!(fingerprint(&a), fingerprint(&b));
}

#[test]
fn server_only_baseline_equals_direct_optimization() {
    let problem = common::problem();
    let data = common::dataset(7, 150);
    let trace = run_topology(&topology(0), &problem, &data).unwrap();
    let (direct, report) =
        optimize_on_node(&problem, problem.prior.theta0(), &data, &OptimizerConfig::default(), StopRule::Final).unwrap();
    assert_eq!(trace.final_theta().unwrap(), &direct);
    assert_eq!(trace.node_iterations(), vec![report.iterations]);
    let pass = trace.passes()[0];
    assert_eq!(pass.start, data.last().unwrap().timestamp);
    assert!((trace.convergence_time().unwrap() - (pass.end - data[0].timestamp)).abs() < 1e-15);
}

#[test]
fn final_estimates_agree_across_chain_lengths() {
    let problem = common::problem();
    let o_min = OptimizerConfig::default().o_min;
    for seed in [8, 9, 20] {
        let data = common::dataset(seed, 150);
        let baseline = run_topology(&topology(0), &problem, &data).unwrap();
        let reference = baseline.final_theta().unwrap().clone();
        for nodes in 1..=6 {
            let trace = run_topology(&topology(nodes), &problem, &data).unwrap();
            let gap = distance(trace.final_theta().unwrap(), &reference);
            assert!(gap <= 10.0 * o_min, "seed {seed} L={nodes}: gap {gap}");
        }
    }
}

#[test]
fn routing_is_transparent_and_timeline_ordered() {
    let problem = common::problem();
    let data = common::dataset(10, 150);
    let trace = run_topology(&topology(5), &problem, &data).unwrap();
    let server = trace.server.as_ref().unwrap();
    assert_eq!(trace.generated, data.len());
    assert_eq!(server.received, data.len());
    for report in &trace.node_reports {
        assert_eq!(report.forwarded, data.len());
    }
    let ks: Vec<usize> = server.steps.iter().map(|s| s.k).collect();
    assert_eq!(ks, data.iter().map(|m| m.k).collect::<Vec<_>>());
    for pair in server.theta_events.windows(2) {
        assert!(pair[0].time <= pair[1].time);
        assert!(pair[0].source <= pair[1].source);
    }
    for pair in server.steps.windows(2) {
        assert!(pair[0].theta_source <= pair[1].theta_source);
    }
}

#[test]
fn growing_strategy_and_prefixes() {
    let problem = common::problem();
    let data = common::dataset(11, 150);
    let trace = run_topology(&topology(6), &problem, &data).unwrap();
    let first: Vec<_> = trace.node_reports.iter().filter_map(|r| r.passes.first()).collect();
    for pair in first.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.node != trace.nodes {
            assert!(b.data_len >= a.data_len + 20, "node {} K={} after K={}", b.node, b.data_len, a.data_len);
        }
        assert!(b.data_len >= a.data_len);
        assert!(b.start >= a.end);
        assert_eq!(b.seed, a.theta);
    }
    assert_eq!(first[0].data_len, 30);
    for pass in &first {
        if pass.node < trace.nodes {
            assert!(matches!(pass.report.criterion, Criterion::ParamChange | Criterion::GradientNorm));
        }
    }
}

#[test]
fn unreachable_threshold_means_no_intermediate_work() {
    let problem = common::problem();
    let data = common::dataset(12, 80);
    let mut topo = topology(2);
    topo.beta1 = 1000;
    let trace = run_topology(&topo, &problem, &data).unwrap();
    assert!(trace.node_reports[0].passes.is_empty());
    assert_eq!(trace.node_reports[0].forwarded, 80);
    let last = &trace.node_reports[1].passes;
    assert_eq!(last.len(), 1);
    assert_eq!(last[0].data_len, 80);
    assert_eq!(&last[0].seed, problem.prior.theta0());
    assert!(trace.theta_events().iter().all(|e| e.source == 2));
}

fn settings(index: usize, threshold: usize) -> NodeSettings {
    topology(2).node_settings(index).clone_with_threshold(threshold)
}

trait WithThreshold {
    fn clone_with_threshold(self, threshold: usize) -> Self;
}

impl WithThreshold for NodeSettings {
    fn clone_with_threshold(mut self, threshold: usize) -> Self {
        self.initial_threshold = Some(threshold);
        self
    }
}

fn drain(mut rx: impl Inbound) -> Vec<Message> {
    let mut out = Vec::new();
    while let Some(m) = rx.recv().unwrap() {
        let done = m == Message::Shutdown;
        out.push(m);
        if done {
            break;
        }
    }
    out
}

#[test]
fn threshold_message_follows_growing_strategy() {
    let problem = common::problem();
    let data = common::dataset(13, 130);
    let (mut up_tx, up_rx) = channel_link();
    let (down_tx, down_rx) = channel_link();
    for m in &data {
        up_tx.send(&Message::Measurement(m.clone())).unwrap();
    }
    up_tx.send(&Message::Shutdown).unwrap();
    let report =
        node_loop(&settings(1, 120), &problem, Box::new(up_rx), Box::new(down_tx), Epoch::new(0.01)).unwrap();
    assert_eq!(report.passes[0].data_len, 120);
    let out = drain(down_rx);
    assert_eq!(out.iter().filter(|m| matches!(m, Message::Measurement(_))).count(), 130);
    assert!(out.iter().any(|m| matches!(m, Message::ParamUpdate { source: 1, data_len: 120, .. })));
    assert!(out.iter().any(|m| matches!(m, Message::Threshold { beta: 140, .. })));
    assert_eq!(out.last(), Some(&Message::Shutdown));
}

#[test]
fn node_rejects_out_of_order_measurements() {
    let problem = common::problem();
    let data = common::dataset(14, 5);
    let (mut up_tx, up_rx) = channel_link();
    let (down_tx, _down_rx) = channel_link();
    up_tx.send(&Message::Measurement(data[1].clone())).unwrap();
    up_tx.send(&Message::Measurement(data[0].clone())).unwrap();
    up_tx.send(&Message::Shutdown).unwrap();
    let err = node_loop(&settings(1, 3), &problem, Box::new(up_rx), Box::new(down_tx), Epoch::new(0.01)).unwrap_err();
    assert!(matches!(err, PipelineError::Protocol(_)), "{err}");
}

#[test]
fn node_reports_upstream_disconnect() {
    let problem = common::problem();
    let data = common::dataset(15, 5);
    let (mut up_tx, up_rx) = channel_link();
    let (down_tx, _down_rx) = channel_link();
    up_tx.send(&Message::Measurement(data[0].clone())).unwrap();
    drop(up_tx);
    let err = node_loop(&settings(1, 3), &problem, Box::new(up_rx), Box::new(down_tx), Epoch::new(0.01)).unwrap_err();
    assert!(matches!(err, PipelineError::Disconnected(_)), "{err}");
}

fn server_settings(nodes: usize) -> ServerSettings {
    topology(nodes).server_settings()
}

#[test]
fn server_without_updates_matches_batch_filter() {
    let problem = common::problem();
    let data = common::dataset(16, 60);
    let (mut tx, rx) = channel_link();
    for m in &data {
        tx.send(&Message::Measurement(m.clone())).unwrap();
    }
    tx.send(&Message::Shutdown).unwrap();
    let report = server_loop(&server_settings(1), &problem, Box::new(rx), Epoch::new(0.01)).unwrap();
    let run = run_filter(&problem.chain, problem.prior.theta0(), &data, &problem.initial, &problem.filter).unwrap();
    assert_eq!(report.steps.len(), 60);
    for (step, belief) in report.steps.iter().zip(&run.beliefs[1..]) {
        assert_eq!(step.xhat, belief.xhat);
        assert_eq!(step.theta_source, 0);
    }
    assert_eq!(&report.final_belief, run.last());
}

#[test]
fn server_switches_parameters_between_steps() {
    let problem = common::problem();
    let data = common::dataset(17, 80);
    let theta = common::theta_true();
    let (mut tx, rx) = channel_link();
    // Arrives at 0.505 s: after sample 50 (0.50 s), before sample 51 (0.51 s).
    let update = Message::ParamUpdate { source: 1, data_len: 50, clock: 0.505, theta: theta.clone() };
    for m in &data {
        tx.send(&Message::Measurement(m.clone())).unwrap();
        if m.k == 70 {
            // Logical order, not wire order, decides when the swap happens.
            tx.send(&update).unwrap();
        }
    }
    tx.send(&Message::Shutdown).unwrap();
    let report = server_loop(&server_settings(1), &problem, Box::new(rx), Epoch::new(0.01)).unwrap();

    let before = run_filter(&problem.chain, problem.prior.theta0(), &data[..50], &problem.initial, &problem.filter)
        .unwrap();
    let after = run_filter(&problem.chain, &theta, &data[50..], before.last(), &problem.filter).unwrap();
    let expected: Vec<_> = before.beliefs[1..].iter().chain(&after.beliefs[1..]).collect();
    for (step, belief) in report.steps.iter().zip(expected) {
        assert_eq!(step.xhat, belief.xhat, "step {}", step.k);
        assert_eq!(step.theta_source, if step.k <= 50 { 0 } else { 1 });
    }
    assert_eq!(report.theta_events.len(), 1);
}

#[test]
fn failing_node_aborts_with_partial_trace() {
    let problem = common::problem();
    let mut data: Vec<Measurement64> = common::dataset(18, 60);
    for m in &mut data {
        m.y = m.y.rows(0, 6).into_owned();
    }
    let err = run_topology(&topology(2), &problem, &data).unwrap_err();
    match err {
        PipelineError::Aborted { role, partial, .. } => {
            assert_ne!(role, "source");
            assert_eq!(partial.nodes, 2);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn wall_clock_run_with_link_delay_completes() {
    let problem = common::problem();
    let data = common::dataset(19, 60);
    for transport in [TransportKind::Inproc, TransportKind::Socket] {
        let mut topo = Topology::uniform(2, OptimizerConfig::default(), 20, 30, Timing::Wall);
        topo.hop_delay = 0.002;
        topo.feed = FeedRate::Realtime;
        topo.transport = transport;
        let trace = run_topology(&topo, &problem, &data).unwrap();
        let server = trace.server.as_ref().unwrap();
        assert_eq!(server.received, 60);
        assert!(trace.final_theta().is_some());
        // Real-time feeding alone takes 0.59 s.
        assert!(trace.convergence_time().unwrap() >= 0.59);
        assert!(trace.wall_time >= Duration::from_millis(590));
    }
}
