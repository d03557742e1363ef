//! L-sweeps with repeated seeded trials.

use std::collections::BTreeSet;

use anyhow::Result;
use dualest_core::{cost_s, Measurement64, Problem64};
use dualest_pipeline::{run_topology, ExperimentTrace};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TimingMode};
use crate::dataset::{synthesize_dataset, trial_seed};

/// One point of the `e_θ` timeline: time since the first sample and `‖θ - θ*_L‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub time: f64,
    pub error: f64,
}

/// Outcome of one topology run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub nodes: usize,
    pub trial: usize,
    pub seed: u64,
    /// Convergence time `T`, seconds.
    pub convergence_time: Option<f64>,
    /// Final error `‖θ*_L - θ_true‖`.
    pub final_error: Option<f64>,
    /// Cost of `θ*_L` on the whole stream.
    pub final_cost: Option<f64>,
    /// Iterations per estimating node, node 1 first.
    pub node_iterations: Vec<usize>,
    pub timeline: Vec<TimelinePoint>,
    /// `None` on success, otherwise the failure.
    pub failure: Option<String>,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    /// Whether `e_θ` never grows between successive parameter arrivals.
    pub fn timeline_nonincreasing(&self) -> bool {
        self.timeline.windows(2).all(|w| w[1].error <= w[0].error)
    }

    fn failed(nodes: usize, trial: usize, seed: u64, cause: String) -> Self {
        Self {
            nodes,
            trial,
            seed,
            convergence_time: None,
            final_error: None,
            final_cost: None,
            node_iterations: Vec::new(),
            timeline: Vec::new(),
            failure: Some(cause),
        }
    }
}

/// Builds the metrics of a completed run.
pub fn metrics_from_trace(
    config: &ExperimentConfig,
    problem: &Problem64,
    data: &[Measurement64],
    trace: &ExperimentTrace,
    trial: usize,
    seed: u64,
) -> Result<MetricsRow> {
    let Some(theta_star) = trace.final_theta() else {
        return Ok(MetricsRow::failed(trace.nodes, trial, seed, "no final estimate".into()));
    };
    let theta_true = config.theta_true();
    let timeline = trace
        .theta_events()
        .iter()
        .map(|e| TimelinePoint {
            time: e.time - trace.first_timestamp,
            error: (e.theta.as_vector() - theta_star.as_vector()).norm(),
        })
        .collect();
    Ok(MetricsRow {
        nodes: trace.nodes,
        trial,
        seed,
        convergence_time: trace.convergence_time(),
        final_error: Some((theta_star.as_vector() - theta_true.as_vector()).norm()),
        final_cost: Some(cost_s(problem, theta_star, data)?),
        node_iterations: trace.node_iterations(),
        timeline,
        failure: None,
    })
}

/// Runs one topology with `nodes` intermediate nodes on the data of trial `trial`.
pub fn run_trial(config: &ExperimentConfig, nodes: usize, trial: usize) -> MetricsRow {
    let seed = trial_seed(config.seed, trial);
    let attempt = || -> Result<MetricsRow> {
        let problem = config.problem()?;
        let data = synthesize_dataset(config, seed)?;
        let trace = run_topology(&config.topology(nodes), &problem, &data)?;
        metrics_from_trace(config, &problem, &data, &trace, trial, seed)
    };
    match attempt() {
        Ok(row) => row,
        Err(err) => {
            warn!("L={nodes} trial {trial}: {err:#}");
            MetricsRow::failed(nodes, trial, seed, format!("{err:#}"))
        }
    }
}

/// Every configured chain length × trial, ordered by `(L, trial)`.
///
/// Logical-time runs execute in parallel. Wall-clock runs are sequential so they
/// do not compete for cores.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let lengths: BTreeSet<usize> = config.nodes.iter().copied().collect();
    let jobs: Vec<(usize, usize)> =
        lengths.iter().flat_map(|&l| (0..config.trials).map(move |t| (l, t))).collect();
    info!("sweep: {} runs over L = {:?}", jobs.len(), lengths);
    let parallel = config.timing == TimingMode::Logical;
    let mut rows: Vec<MetricsRow> = if parallel {
        // Trials block on their topology threads, whose gradient probes run on the
        // global pool, so trials get a pool of their own.
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        pool.install(|| jobs.par_iter().map(|&(l, t)| run_trial(config, l, t)).collect())
    } else {
        jobs.iter().map(|&(l, t)| run_trial(config, l, t)).collect()
    };
    rows.sort_by_key(|r| (r.nodes, r.trial));
    Ok(rows)
}
