//! Experiment configuration. Defaults reproduce the reference evaluation setting.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dualest_core::{
    default_initial_covariance, BaseMotion, EstimationProblem, FilterBelief, FilterConfig, GeneralizedState,
    ImuMounting, KinematicChain, NoiseSpec, OptimizerConfig, ParameterVector, Params64, Prior, Problem64,
};
use dualest_pipeline::{FinalPolicy, Timing, Topology, TransportKind};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::trajectory::QuinticTrajectory;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    Wall,
    #[default]
    Logical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountingConfig {
    pub body: usize,
    /// Position in the body frame, metres.
    pub position: [f64; 3],
    /// Axis-angle orientation relative to the body frame, radians.
    pub orientation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Joint count `n` (one link per joint).
    pub dof: usize,
    pub sample_period: f64,
    pub eps_fd: f64,
    pub lambda: f64,
    pub o_min: f64,
    pub odelta_min: f64,
    pub max_iterations: usize,
    /// Accelerometer noise variance, (m/s²)².
    pub accel_variance: f64,
    /// Gyroscope noise variance in (deg/s)²; converted to rad for the model.
    pub gyro_variance_deg2: f64,
    /// Jerk noise variance per joint.
    pub jerk_variance: f64,
    pub theta_true: Vec<f64>,
    pub theta0: Vec<f64>,
    /// Prior covariance, row-major.
    pub sigma0: Vec<Vec<f64>>,
    pub q0: Vec<f64>,
    pub qe: Vec<f64>,
    /// Duration of the reaching motion, seconds.
    pub t_e: f64,
    pub joint_axes: Vec<[f64; 3]>,
    pub link_offsets: Vec<[f64; 3]>,
    pub gravity: [f64; 3],
    pub mountings: Vec<MountingConfig>,

    /// Intermediate node counts `L` to run.
    pub nodes: Vec<usize>,
    pub trials: usize,
    pub alpha: usize,
    pub beta1: usize,
    /// Length of the recorded stream, seconds.
    pub duration: f64,
    pub seed: u64,
    pub transport: TransportKind,
    pub timing: TimingMode,
    /// Logical seconds per filter step.
    pub step_cost: f64,
    pub final_policy: FinalPolicy,
    /// Per-hop link delay, seconds.
    pub hop_delay: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dof: 2,
            sample_period: 0.01,
            eps_fd: 1e-6,
            lambda: 1e-4,
            o_min: 2e-4,
            odelta_min: 30.0,
            max_iterations: 5000,
            accel_variance: 0.005,
            gyro_variance_deg2: 0.002,
            jerk_variance: 0.5,
            theta_true: vec![0.05, 0.0, 0.03],
            theta0: vec![0.0, 0.0, 0.0],
            sigma0: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            q0: vec![0.0, 0.0],
            qe: vec![PI / 4.0, PI / 2.0],
            t_e: 1.0,
            joint_axes: vec![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            link_offsets: vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]],
            gravity: [0.0, 0.0, dualest_core::STANDARD_GRAVITY],
            mountings: vec![
                MountingConfig { body: 1, position: [0.1, 0.0, 0.05], orientation: [0.0, PI, 0.0] },
                MountingConfig { body: 2, position: [0.1, 0.0, 0.05], orientation: [0.0, PI, 0.0] },
            ],
            nodes: (0..=6).collect(),
            trials: 50,
            alpha: 20,
            beta1: 30,
            duration: 1.5,
            seed: 0,
            transport: TransportKind::Inproc,
            timing: TimingMode::Logical,
            step_cost: 1e-4,
            final_policy: FinalPolicy::WholeStream,
            hop_delay: 0.0,
        }
    }
}

fn vec3(v: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Serialized configuration preceded by the unit conversions applied to it.
    pub fn echo(&self) -> Result<String> {
        Ok(format!(
            "# gyro_variance_deg2 = {} (deg/s)^2 -> {:e} (rad/s)^2\n# samples = {}, imus = {}, param_len = {}\n{}",
            self.gyro_variance_deg2,
            self.gyro_variance_rad2(),
            self.sample_count(),
            self.mountings.len(),
            self.param_len(),
            self.to_toml()?
        ))
    }

    pub fn gyro_variance_rad2(&self) -> f64 {
        self.gyro_variance_deg2 * (PI / 180.0).powi(2)
    }

    pub fn sample_count(&self) -> usize {
        (self.duration / self.sample_period + 1e-9).floor() as usize
    }

    pub fn param_len(&self) -> usize {
        3 * self.dof.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.dof >= 1, "dof must be at least 1");
        ensure!(self.sample_period > 0.0, "sample_period must be positive");
        ensure!(self.duration > 0.0, "duration must be positive");
        ensure!(self.t_e > 0.0, "t_e must be positive");
        ensure!(self.trials >= 1, "trials must be at least 1");
        ensure!(self.step_cost > 0.0, "step_cost must be positive");
        ensure!(self.hop_delay >= 0.0, "hop_delay must be non-negative");
        ensure!(self.accel_variance >= 0.0 && self.gyro_variance_deg2 >= 0.0, "noise variances must be non-negative");
        for (name, len, want) in [
            ("theta_true", self.theta_true.len(), self.param_len()),
            ("theta0", self.theta0.len(), self.param_len()),
            ("sigma0", self.sigma0.len(), self.param_len()),
            ("q0", self.q0.len(), self.dof),
            ("qe", self.qe.len(), self.dof),
            ("joint_axes", self.joint_axes.len(), self.dof),
            ("link_offsets", self.link_offsets.len(), self.dof),
        ] {
            if len != want {
                bail!("{name} has {len} entries, expected {want}");
            }
        }
        ensure!(self.sigma0.iter().all(|row| row.len() == self.param_len()), "sigma0 must be square");
        ensure!(!self.mountings.is_empty(), "at least one IMU is required");
        self.optimizer().validate()?;
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lambda: self.lambda,
            eps_fd: self.eps_fd,
            o_min: self.o_min,
            odelta_min: self.odelta_min,
            max_iterations: self.max_iterations,
        }
    }

    pub fn pipeline_timing(&self) -> Timing {
        match self.timing {
            TimingMode::Wall => Timing::Wall,
            TimingMode::Logical => Timing::Logical { step_cost: self.step_cost },
        }
    }

    pub fn chain(&self) -> Result<KinematicChain<f64>> {
        let mountings = self
            .mountings
            .iter()
            .map(|m| ImuMounting::new(m.body, vec3(&m.position), vec3(&m.orientation)))
            .collect();
        Ok(KinematicChain::new(
            self.joint_axes.iter().map(vec3).collect(),
            self.link_offsets.iter().map(vec3).collect(),
            BaseMotion::default(),
            mountings,
            vec3(&self.gravity),
        )?)
    }

    pub fn noise(&self) -> NoiseSpec<f64> {
        NoiseSpec::uniform(self.mountings.len(), self.accel_variance, self.gyro_variance_rad2())
    }

    pub fn theta_true(&self) -> Params64 {
        ParameterVector::from_slice(&self.theta_true)
    }

    pub fn theta0(&self) -> Params64 {
        ParameterVector::from_slice(&self.theta0)
    }

    pub fn trajectory(&self) -> Result<QuinticTrajectory> {
        Ok(QuinticTrajectory::new(
            DVector::from_column_slice(&self.q0),
            DVector::from_column_slice(&self.qe),
            self.t_e,
        )?)
    }

    /// Estimation problem shared by every node: the arm starts at rest in `q0`.
    pub fn problem(&self) -> Result<Problem64> {
        let chain = self.chain()?;
        let filter = FilterConfig::new(self.noise(), DVector::repeat(self.dof, self.jerk_variance));
        let mut x0 = GeneralizedState::zeros(self.dof);
        x0.q = DVector::from_column_slice(&self.q0);
        let initial = FilterBelief::initial(&x0, default_initial_covariance(self.dof), 0.0);
        let p = self.param_len();
        let sigma0 = DMatrix::from_fn(p, p, |i, j| self.sigma0[i][j]);
        let prior = Prior::new(self.theta0(), sigma0)?;
        Ok(EstimationProblem::new(chain, filter, initial, prior)?)
    }

    pub fn topology(&self, nodes: usize) -> Topology {
        let mut topology = Topology::uniform(nodes, self.optimizer(), self.alpha, self.beta1, self.pipeline_timing());
        topology.transport = self.transport;
        topology.final_policy = self.final_policy;
        topology.hop_delay = self.hop_delay;
        if self.timing == TimingMode::Wall {
            topology.feed = dualest_pipeline::FeedRate::Realtime;
        }
        topology
    }
}
