//! Wiring of source, intermediate nodes and server into one run.

use std::thread;
use std::time::{Duration, Instant};

use dualest_core::{check_ordering, Measurement64, OptimizerConfig, Params64, Problem64};
use serde::{Deserialize, Serialize};

use crate::clock::{Epoch, Timing};
use crate::error::{PipelineError, Result};
use crate::node::{node_loop, FinalPolicy, NodePass, NodeReport, NodeSettings};
use crate::server::{server_loop, ServerReport, ServerSettings, ThetaEvent};
use crate::transport::{link, DelayedInbound, Inbound, Outbound, TransportKind};
use crate::wire::Message;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub optimizer: OptimizerConfig,
    pub alpha: usize,
}

/// How the source emits measurements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedRate {
    /// Each sample is released at its timestamp (wall-clock runs).
    Realtime,
    /// Everything is sent immediately.
    #[default]
    Burst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// One entry per intermediate node; empty for the server-only baseline.
    pub nodes: Vec<NodeConfig>,
    /// Activation threshold of node 1.
    pub beta1: usize,
    pub final_policy: FinalPolicy,
    /// Optimizer of the server in the server-only topology.
    pub server_optimizer: OptimizerConfig,
    pub transport: TransportKind,
    /// First TCP port for socket links (hop `h` uses `port_base + h`); 0 picks ephemeral ports.
    pub port_base: u16,
    /// Per-hop link delay, seconds.
    pub hop_delay: f64,
    pub timing: Timing,
    pub feed: FeedRate,
}

impl Topology {
    /// `nodes` identical intermediate nodes, in-process links, no delay.
    pub fn uniform(nodes: usize, optimizer: OptimizerConfig, alpha: usize, beta1: usize, timing: Timing) -> Self {
        Self {
            nodes: vec![NodeConfig { optimizer: optimizer.clone(), alpha }; nodes],
            beta1,
            final_policy: FinalPolicy::default(),
            server_optimizer: optimizer,
            transport: TransportKind::Inproc,
            port_base: 0,
            hop_delay: 0.0,
            timing,
            feed: FeedRate::Burst,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_settings(&self, index: usize) -> NodeSettings {
        let config = &self.nodes[index - 1];
        NodeSettings {
            index,
            is_final: index == self.nodes.len(),
            final_policy: self.final_policy,
            initial_threshold: (index == 1).then_some(self.beta1),
            alpha: config.alpha,
            optimizer: config.optimizer.clone(),
            hop_delay: self.hop_delay,
            timing: self.timing,
        }
    }

    pub fn server_settings(&self) -> ServerSettings {
        ServerSettings {
            nodes: self.nodes.len(),
            hop_delay: self.hop_delay,
            timing: self.timing,
            optimizer: self.server_optimizer.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta1 == 0 {
            return Err(PipelineError::Config("beta1 must be at least 1".into()));
        }
        if self.transport == TransportKind::Socket && self.port_base != 0 {
            let top = self.port_base as usize + self.nodes.len();
            if top > u16::MAX as usize {
                return Err(PipelineError::Config("port range exceeds 65535".into()));
            }
        }
        for index in 1..=self.nodes.len() {
            self.node_settings(index).validate()?;
        }
        self.server_optimizer.validate()?;
        Ok(())
    }
}

/// Everything observed during one topology run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentTrace {
    pub nodes: usize,
    pub timing: Timing,
    /// Timestamp of the first generated measurement; times are measured from here.
    pub first_timestamp: f64,
    pub generated: usize,
    pub node_reports: Vec<NodeReport>,
    pub server: Option<ServerReport>,
    pub wall_time: Duration,
}

impl ExperimentTrace {
    /// Every optimization pass, ordered by node then pass.
    pub fn passes(&self) -> Vec<&NodePass> {
        let mut passes: Vec<&NodePass> = self.node_reports.iter().flat_map(|r| r.passes.iter()).collect();
        if let Some(server) = &self.server {
            passes.extend(server.passes.iter());
        }
        passes
    }

    pub fn theta_events(&self) -> &[ThetaEvent] {
        self.server.as_ref().map(|s| s.theta_events.as_slice()).unwrap_or(&[])
    }

    /// The last estimate of the final estimating node as seen by the server.
    pub fn final_event(&self) -> Option<&ThetaEvent> {
        self.theta_events().iter().rev().find(|e| e.source == self.nodes)
    }

    /// `θ*_L`.
    pub fn final_theta(&self) -> Option<&Params64> {
        self.final_event().map(|e| &e.theta)
    }

    /// `T`: from generation of the first measurement until `θ*_L` reaches the server.
    pub fn convergence_time(&self) -> Option<f64> {
        self.final_event().map(|e| e.time - self.first_timestamp)
    }

    /// Iteration count of each estimating node, node 1 first (node 0 for the baseline).
    pub fn node_iterations(&self) -> Vec<usize> {
        if self.nodes == 0 {
            return vec![self.server.as_ref().map_or(0, |s| s.passes.iter().map(|p| p.report.iterations).sum())];
        }
        self.node_reports.iter().map(NodeReport::iterations).collect()
    }
}

fn feed(out: &mut dyn Outbound, data: &[Measurement64], realtime: bool, epoch: Epoch) -> Result<usize> {
    for m in data {
        if realtime {
            let due = epoch.start + Duration::from_secs_f64((m.timestamp - epoch.offset).max(0.0));
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        out.send(&Message::Measurement(m.clone()))?;
    }
    out.send(&Message::Shutdown)?;
    Ok(data.len())
}

/// Runs source → node 1 → … → node L → server to completion.
pub fn run_topology(topology: &Topology, problem: &Problem64, data: &[Measurement64]) -> Result<ExperimentTrace> {
    topology.validate()?;
    check_ordering(data)?;
    let hops = topology.len() + 1;
    let mut senders: Vec<Box<dyn Outbound>> = Vec::with_capacity(hops);
    let mut receivers: Vec<Box<dyn Inbound>> = Vec::with_capacity(hops);
    for hop in 0..hops {
        let port = if topology.port_base == 0 { 0 } else { topology.port_base + hop as u16 };
        let (tx, rx) = link(topology.transport, port)?;
        senders.push(tx);
        let rx: Box<dyn Inbound> = if topology.timing == Timing::Wall && topology.hop_delay > 0.0 {
            Box::new(DelayedInbound::new(rx, Duration::from_secs_f64(topology.hop_delay)))
        } else {
            rx
        };
        receivers.push(rx);
    }

    let first_timestamp = data.first().map_or(0.0, |m| m.timestamp);
    let realtime = topology.feed == FeedRate::Realtime && topology.timing == Timing::Wall;
    let started = Instant::now();
    let epoch = Epoch::new(first_timestamp);

    let (fed, node_results, server_result) = thread::scope(|scope| {
        let mut senders = senders.into_iter();
        let mut receivers = receivers.into_iter();
        let mut source_out = senders.next().expect("at least one link");
        let source = scope.spawn(move || feed(source_out.as_mut(), data, realtime, epoch));
        let mut nodes = Vec::new();
        for index in 1..=topology.len() {
            let settings = topology.node_settings(index);
            let inbound = receivers.next().expect("link per hop");
            let outbound = senders.next().expect("link per hop");
            nodes.push(scope.spawn(move || node_loop(&settings, problem, inbound, outbound, epoch)));
        }
        let server_in = receivers.next().expect("server link");
        let settings = topology.server_settings();
        let server = scope.spawn(move || server_loop(&settings, problem, server_in, epoch));
        let panicked = |role: String| PipelineError::Protocol(format!("{role} panicked"));
        let fed = source.join().unwrap_or_else(|_| Err(panicked("source".into())));
        let node_results: Vec<Result<NodeReport>> = nodes
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.join().unwrap_or_else(|_| Err(panicked(format!("node {}", i + 1)))))
            .collect();
        let server_result = server.join().unwrap_or_else(|_| Err(panicked("server".into())));
        (fed, node_results, server_result)
    });

    let mut failures: Vec<(String, PipelineError)> = Vec::new();
    let generated = match fed {
        Ok(n) => n,
        Err(e) => {
            failures.push(("source".into(), e));
            0
        }
    };
    let mut node_reports = Vec::new();
    for (i, result) in node_results.into_iter().enumerate() {
        match result {
            Ok(report) => node_reports.push(report),
            Err(e) => failures.push((format!("node {}", i + 1), e)),
        }
    }
    let server = match server_result {
        Ok(report) => Some(report),
        Err(e) => {
            failures.push(("server".into(), e));
            None
        }
    };
    let trace = ExperimentTrace {
        nodes: topology.len(),
        timing: topology.timing,
        first_timestamp,
        generated,
        node_reports,
        server,
        wall_time: started.elapsed(),
    };
    if failures.is_empty() {
        return Ok(trace);
    }
    // Disconnections are usually fallout from the failure that caused them.
    let root = failures
        .iter()
        .position(|(_, e)| !matches!(e, PipelineError::Disconnected(_)))
        .unwrap_or(0);
    let (role, cause) = failures.swap_remove(root);
    Err(PipelineError::Aborted { role, cause: cause.to_string(), partial: Box::new(trace) })
}
