//! Intermediate node: a router that forwards traffic downstream without waiting,
//! plus a parameter-estimation worker fed by the router.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;

use dualest_core::{optimize_on_node, Measurement64, OptimizerConfig, Params64, Problem64, StopRule, TerminationReport};

use serde::{Deserialize, Serialize};

use crate::clock::{Epoch, Timing};
use crate::error::{PipelineError, Result};
use crate::transport::{Inbound, Outbound};
use crate::wire::Message;

/// When the final node optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalPolicy {
    /// Wait until the whole stream has arrived, then run one pass on all of it,
    /// seeded with the predecessor's estimate.
    #[default]
    WholeStream,
    /// Start at the activation threshold like any other node and re-run on the grown
    /// data set after every pass until a pass has covered the whole stream.
    Track,
}

/// Static configuration of node `index` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSettings {
    pub index: usize,
    /// The last node before the server keeps re-optimizing until the stream ends.
    pub is_final: bool,
    pub final_policy: FinalPolicy,
    /// Activation threshold known up front (node 1 only); other nodes wait for a
    /// threshold message from their predecessor.
    pub initial_threshold: Option<usize>,
    /// Growing increment: the successor's threshold is `K + alpha`.
    pub alpha: usize,
    pub optimizer: OptimizerConfig,
    /// Per-hop link delay, seconds.
    pub hop_delay: f64,
    pub timing: Timing,
}

impl NodeSettings {
    pub fn validate(&self) -> Result<()> {
        if self.index == 0 {
            return Err(PipelineError::Config("node indices start at 1".into()));
        }
        if self.initial_threshold == Some(0) {
            return Err(PipelineError::Config("activation threshold must be at least 1".into()));
        }
        if !(self.hop_delay.is_finite() && self.hop_delay >= 0.0) {
            return Err(PipelineError::Config("hop delay must be finite and nonnegative".into()));
        }
        if let Timing::Logical { step_cost } = self.timing {
            if !(step_cost.is_finite() && step_cost > 0.0) {
                return Err(PipelineError::Config("logical step cost must be positive".into()));
            }
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// One optimization run on a node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodePass {
    /// Node index; 0 is the server in the server-only topology.
    pub node: usize,
    /// Pass number on this node, from 0.
    pub pass: usize,
    pub start: f64,
    pub end: f64,
    pub data_len: usize,
    pub seed: Params64,
    pub theta: Params64,
    pub report: TerminationReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeReport {
    pub node: usize,
    /// Measurements routed downstream.
    pub forwarded: usize,
    pub passes: Vec<NodePass>,
}

impl NodeReport {
    pub fn iterations(&self) -> usize {
        self.passes.iter().map(|p| p.report.iterations).sum()
    }
}

enum Event {
    Sample(f64, Measurement64),
    Param { arrival: f64, source: usize, theta: Params64 },
    Threshold { arrival: f64, beta: usize },
    Eos,
}

/// Worker-side view of everything the router has delivered so far.
struct Inbox {
    rx: Receiver<Event>,
    logical: bool,
    epoch: Epoch,
    data: Vec<Measurement64>,
    arrivals: Vec<f64>,
    params: Vec<(usize, f64, Params64)>,
    threshold: Option<(usize, f64)>,
    eos: bool,
}

impl Inbox {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Sample(arrival, m) => {
                self.arrivals.push(arrival);
                self.data.push(m);
            }
            Event::Param { arrival, source, theta } => self.params.push((source, arrival, theta)),
            Event::Threshold { arrival, beta } => self.threshold = Some((beta.max(1), arrival)),
            Event::Eos => self.eos = true,
        }
    }

    /// Blocks for the next event.
    fn pull(&mut self) -> Result<()> {
        if self.eos {
            return Ok(());
        }
        match self.rx.recv() {
            Ok(event) => {
                self.apply(event);
                Ok(())
            }
            Err(_) => Err(PipelineError::Disconnected("router".into())),
        }
    }

    /// Makes sure every sample arriving at or before `t` has been seen.
    fn settle(&mut self, t: f64) -> Result<()> {
        if self.logical {
            while !self.eos && self.arrivals.last().is_none_or(|a| *a <= t) {
                self.pull()?;
            }
        } else {
            while let Ok(event) = self.rx.try_recv() {
                self.apply(event);
            }
        }
        Ok(())
    }

    fn count_until(&self, t: f64) -> usize {
        self.arrivals.partition_point(|a| *a <= t)
    }

    /// Logical mode keeps `t`; wall mode reads the clock.
    fn stamp(&self, t: f64) -> f64 {
        if self.logical {
            t
        } else {
            self.epoch.now()
        }
    }

    /// Estimate from the most downstream predecessor that reached this node by `t`.
    fn latest_theta(&self, t: f64) -> Option<Params64> {
        self.params
            .iter()
            .filter(|(_, arrival, _)| *arrival <= t)
            .max_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
            .map(|(_, _, theta)| theta.clone())
    }
}

fn send(out: &Mutex<Box<dyn Outbound>>, msg: &Message) -> Result<()> {
    out.lock().map_err(|_| PipelineError::Protocol("outbound link poisoned".into()))?.send(msg)
}

fn run_worker(
    settings: &NodeSettings,
    problem: &Problem64,
    inbox: &mut Inbox,
    out: &Mutex<Box<dyn Outbound>>,
) -> Result<Vec<NodePass>> {
    if let Some(beta) = settings.initial_threshold {
        inbox.threshold = Some((beta, f64::NEG_INFINITY));
    }
    let waits_for_stream = settings.is_final && settings.final_policy == FinalPolicy::WholeStream;
    let activation = loop {
        if waits_for_stream {
            while !inbox.eos {
                inbox.pull()?;
            }
            break None;
        }
        if let Some((beta, at)) = inbox.threshold {
            if inbox.data.len() >= beta {
                break Some(at.max(inbox.arrivals[beta - 1]));
            }
        }
        if inbox.eos {
            break None;
        }
        inbox.pull()?;
    };
    let first_start = match activation {
        Some(t) => t,
        // The stream has ended (below the threshold, or the final node waited for it):
        // only the final node still owes an estimate.
        None if !settings.is_final || inbox.data.is_empty() => return Ok(Vec::new()),
        None => {
            let mut t = *inbox.arrivals.last().expect("nonempty data");
            if let Some((_, at)) = inbox.threshold {
                t = t.max(at);
            }
            inbox.params.iter().fold(t, |acc, p| acc.max(p.1))
        }
    };

    let rule = if settings.is_final { StopRule::Final } else { StopRule::Greedy };
    let mut start = inbox.stamp(first_start);
    inbox.settle(start)?;
    let mut seed = inbox.latest_theta(start).unwrap_or_else(|| problem.prior.theta0().clone());
    let mut passes = Vec::new();
    loop {
        inbox.settle(start)?;
        let k = inbox.count_until(start);
        let (theta, report) = optimize_on_node(problem, &seed, &inbox.data[..k], &settings.optimizer, rule)?;
        let end = match settings.timing {
            Timing::Logical { step_cost } => start + report.filter_steps as f64 * step_cost,
            Timing::Wall => inbox.epoch.now(),
        };
        log::debug!(
            "node {} pass {}: K={} iterations={} stop={}",
            settings.index,
            passes.len(),
            k,
            report.iterations,
            report.criterion.as_str()
        );
        send(out, &Message::ParamUpdate { source: settings.index, data_len: k, clock: end, theta: theta.clone() })?;
        passes.push(NodePass {
            node: settings.index,
            pass: passes.len(),
            start,
            end,
            data_len: k,
            seed,
            theta: theta.clone(),
            report,
        });
        if !settings.is_final {
            send(out, &Message::Threshold { beta: k + settings.alpha, clock: end })?;
            return Ok(passes);
        }

        // Re-run on the grown data set, or stop once a pass covered the whole stream.
        let next = loop {
            inbox.settle(end)?;
            if inbox.count_until(end) > k {
                break Some(end);
            }
            if inbox.data.len() > k {
                break Some(inbox.arrivals[k]);
            }
            if inbox.eos {
                break None;
            }
            inbox.pull()?;
        };
        match next {
            Some(t) => {
                start = inbox.stamp(t);
                seed = theta;
            }
            None => return Ok(passes),
        }
    }
}

fn route(
    settings: &NodeSettings,
    inbound: &mut dyn Inbound,
    out: &Mutex<Box<dyn Outbound>>,
    tx: &Sender<Event>,
    worker_failed: &AtomicBool,
    epoch: Epoch,
) -> Result<usize> {
    let logical = settings.timing.is_logical();
    let d = settings.hop_delay;
    let mut last: Option<(usize, f64)> = None;
    let mut forwarded = 0;
    loop {
        let msg = inbound
            .recv()?
            .ok_or_else(|| PipelineError::Disconnected(format!("upstream of node {}", settings.index)))?;
        let now = epoch.now();
        let event = match msg {
            Message::Measurement(m) => {
                if let Some((k, t)) = last {
                    if m.k <= k || m.timestamp <= t {
                        return Err(PipelineError::Protocol(format!(
                            "node {}: measurement {} arrived after {}",
                            settings.index, m.k, k
                        )));
                    }
                }
                last = Some((m.k, m.timestamp));
                let arrival = if logical { m.timestamp + settings.index as f64 * d } else { now };
                let msg = Message::Measurement(m);
                send(out, &msg)?;
                forwarded += 1;
                let Message::Measurement(m) = msg else { unreachable!() };
                Event::Sample(arrival, m)
            }
            Message::ParamUpdate { source, data_len, clock, theta } => {
                let arrival = if logical { clock + d } else { now };
                send(out, &Message::ParamUpdate { source, data_len, clock: arrival, theta: theta.clone() })?;
                Event::Param { arrival, source, theta }
            }
            Message::Threshold { beta, clock } => {
                Event::Threshold { arrival: if logical { clock + d } else { now }, beta }
            }
            Message::Shutdown => {
                let _ = tx.send(Event::Eos);
                return Ok(forwarded);
            }
        };
        // Once the worker has finished, routing carries on without it; if it failed,
        // the node stops and the caller reports the worker's error.
        if tx.send(event).is_err() && worker_failed.load(Ordering::Acquire) {
            return Ok(forwarded);
        }
    }
}

/// Runs node `settings.index` until upstream shuts down and its own work is done,
/// then forwards the shutdown.
pub fn node_loop(
    settings: &NodeSettings,
    problem: &Problem64,
    mut inbound: Box<dyn Inbound>,
    outbound: Box<dyn Outbound>,
    epoch: Epoch,
) -> Result<NodeReport> {
    settings.validate()?;
    let out = Mutex::new(outbound);
    let (tx, rx) = mpsc::channel();
    let worker_failed = AtomicBool::new(false);
    thread::scope(|scope| {
        let out = &out;
        let worker_failed = &worker_failed;
        let worker = scope.spawn(move || {
            let mut inbox = Inbox {
                rx,
                logical: settings.timing.is_logical(),
                epoch,
                data: Vec::new(),
                arrivals: Vec::new(),
                params: Vec::new(),
                threshold: None,
                eos: false,
            };
            let result = run_worker(settings, problem, &mut inbox, out);
            if result.is_err() {
                worker_failed.store(true, Ordering::Release);
            }
            result
        });
        let routed = route(settings, inbound.as_mut(), out, &tx, worker_failed, epoch);
        drop(tx);
        let passes = worker
            .join()
            .map_err(|_| PipelineError::Protocol(format!("node {} worker panicked", settings.index)))?;
        let forwarded = routed?;
        let passes = passes?;
        send(out, &Message::Shutdown)?;
        Ok(NodeReport { node: settings.index, forwarded, passes })
    })
}
