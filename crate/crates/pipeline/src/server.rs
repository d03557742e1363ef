//! Server: real-time state filtering with the freshest parameters, and the
//! server-only baseline optimization when there are no intermediate nodes.

use dualest_core::{
    build_transition, filter_step, optimize_on_node, Belief64, Measurement64, OptimizerConfig, Params64, Problem64,
    StopRule,
};
use nalgebra::DVector;

use crate::clock::{Epoch, Timing};
use crate::error::{PipelineError, Result};
use crate::node::NodePass;
use crate::transport::Inbound;
use crate::wire::Message;

#[derive(Clone, Debug, PartialEq)]
pub struct ServerSettings {
    /// Number of intermediate nodes `L`; the server is hop `L + 1`.
    pub nodes: usize,
    pub hop_delay: f64,
    pub timing: Timing,
    /// Used only when `nodes == 0`.
    pub optimizer: OptimizerConfig,
}

/// One filter update performed by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerStep {
    pub k: usize,
    pub time: f64,
    /// Node whose estimate was in use (0: prior mean or the server itself).
    pub theta_source: usize,
    pub xhat: DVector<f64>,
}

/// A parameter estimate becoming available at the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEvent {
    pub time: f64,
    pub source: usize,
    pub data_len: usize,
    pub theta: Params64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerReport {
    pub steps: Vec<ServerStep>,
    pub theta_events: Vec<ThetaEvent>,
    /// Baseline optimization passes (server-only topology).
    pub passes: Vec<NodePass>,
    pub received: usize,
    pub final_belief: Belief64,
}

struct RealTimeFilter<'a> {
    problem: &'a Problem64,
    belief: Belief64,
    theta: Params64,
    source: usize,
    steps: Vec<ServerStep>,
    events: Vec<ThetaEvent>,
}

impl RealTimeFilter<'_> {
    fn sample(&mut self, time: f64, m: &Measurement64) -> Result<()> {
        let filter = &self.problem.filter;
        let model = build_transition(self.problem.chain.dof(), m.timestamp - self.belief.time, &filter.jerk_variance)?;
        let (next, _) = filter_step(&self.belief, m, &self.theta, &self.problem.chain, &model, filter)?;
        self.steps.push(ServerStep { k: m.k, time, theta_source: self.source, xhat: next.xhat.clone() });
        self.belief = next;
        Ok(())
    }

    fn parameters(&mut self, event: ThetaEvent) {
        self.theta = event.theta.clone();
        self.source = event.source;
        self.events.push(event);
    }
}

enum Pending {
    Sample(Measurement64),
    Theta(ThetaEvent),
}

/// Consumes the stream until shutdown. In logical mode arrivals are replayed in
/// logical-time order once the stream has ended; measurements go first on ties.
pub fn server_loop(
    settings: &ServerSettings,
    problem: &Problem64,
    mut inbound: Box<dyn Inbound>,
    epoch: Epoch,
) -> Result<ServerReport> {
    let logical = settings.timing.is_logical();
    let d = settings.hop_delay;
    let hops = (settings.nodes + 1) as f64;
    let mut rt = RealTimeFilter {
        problem,
        belief: problem.initial.clone(),
        theta: problem.prior.theta0().clone(),
        source: 0,
        steps: Vec::new(),
        events: Vec::new(),
    };
    let mut pending: Vec<(f64, u8, usize, Pending)> = Vec::new();
    let mut data: Vec<Measurement64> = Vec::new();
    let mut last_arrival = f64::NEG_INFINITY;

    loop {
        let msg = inbound.recv()?.ok_or_else(|| PipelineError::Disconnected("upstream of server".into()))?;
        let now = epoch.now();
        match msg {
            Message::Measurement(m) => {
                if let Some(prev) = data.last() {
                    if m.k <= prev.k || m.timestamp <= prev.timestamp {
                        return Err(PipelineError::Protocol(format!(
                            "server: measurement {} arrived after {}",
                            m.k, prev.k
                        )));
                    }
                }
                let arrival = if logical { m.timestamp + hops * d } else { now };
                last_arrival = arrival;
                if logical {
                    pending.push((arrival, 0, pending.len(), Pending::Sample(m.clone())));
                } else {
                    rt.sample(arrival, &m)?;
                }
                data.push(m);
            }
            Message::ParamUpdate { source, data_len, clock, theta } => {
                let time = if logical { clock + d } else { now };
                let event = ThetaEvent { time, source, data_len, theta };
                if logical {
                    pending.push((time, 1, pending.len(), Pending::Theta(event)));
                } else {
                    rt.parameters(event);
                }
            }
            Message::Threshold { beta, .. } => {
                log::warn!("server ignores threshold message (beta {beta})");
            }
            Message::Shutdown => break,
        }
    }

    pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (time, _, _, item) in pending {
        match item {
            Pending::Sample(m) => rt.sample(time, &m)?,
            Pending::Theta(event) => rt.parameters(event),
        }
    }

    let mut passes = Vec::new();
    if settings.nodes == 0 && !data.is_empty() {
        let start = if logical { last_arrival } else { epoch.now() };
        let seed = problem.prior.theta0().clone();
        let (theta, report) = optimize_on_node(problem, &seed, &data, &settings.optimizer, StopRule::Final)?;
        let end = match settings.timing {
            Timing::Logical { step_cost } => start + report.filter_steps as f64 * step_cost,
            Timing::Wall => epoch.now(),
        };
        rt.parameters(ThetaEvent { time: end, source: 0, data_len: data.len(), theta: theta.clone() });
        passes.push(NodePass { node: 0, pass: 0, start, end, data_len: data.len(), seed, theta, report });
    }

    Ok(ServerReport {
        steps: rt.steps,
        theta_events: rt.events,
        passes,
        received: data.len(),
        final_belief: rt.belief,
    })
}
