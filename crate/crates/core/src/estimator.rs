//! MAP estimation of the link-offset parameters.
//!
//! The cost of a parameter vector re-runs the state filter over the whole data
//! window and adds the Gaussian prior:
//!
//! `S(θ) = log|Σ₀| + (θ-θ₀)ᵀ Σ₀⁻¹ (θ-θ₀) + Σ_κ (log|W_κ| + Δy_κᵀ W_κ⁻¹ Δy_κ)`
//!
//! It is minimized by plain gradient descent with a one-sided finite-difference
//! gradient and a learning rate inversely proportional to the window length.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{fold_steps, FilterBelief, FilterConfig};
use crate::imu::MeasurementVector;
use crate::kinematics::{KinematicChain, ParameterVector};
use crate::scalar::{lit, to_f64, Real};

/// Gradient-descent and stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// `λ` in the learning rate `γ = λ / K`.
    pub lambda: f64,
    /// Finite-difference step `ε`.
    pub eps_fd: f64,
    /// Parameter-change bound on `‖θ_{p+1} - θ_p‖_∞`.
    pub o_min: f64,
    /// Gradient-norm bound on `‖Δθ_p‖₂`.
    pub odelta_min: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            eps_fd: 1e-6,
            o_min: 2e-4,
            odelta_min: 30.0,
            max_iterations: 5000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda, self.eps_fd, self.o_min, self.odelta_min]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(Error::InvalidConfig("lambda, eps_fd, o_min and odelta_min must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// `γ = λ / K`.
    pub fn learning_rate(&self, data_len: usize) -> f64 {
        self.lambda / data_len as f64
    }
}

/// Which stopping tests a node applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// Intermediate node: stop on a small parameter change or a small gradient.
    Greedy,
    /// Final node: only a small parameter change counts as converged.
    Final,
}

/// Why a node optimization stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    ParamChange,
    GradientNorm,
    IterationCap,
}

impl Criterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::ParamChange => "param_change",
            Criterion::GradientNorm => "gradient_norm",
            Criterion::IterationCap => "iteration_cap",
        }
    }
}

/// Outcome of one node optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub iterations: usize,
    /// Last `‖θ_{p+1} - θ_p‖_∞`.
    pub step_inf: f64,
    /// Last `‖Δθ_p‖₂`.
    pub gradient_norm: f64,
    pub criterion: Criterion,
    /// Number of data points `K` the node optimized on.
    pub data_len: usize,
    pub cost_evaluations: usize,
    /// Filter steps executed, `cost_evaluations * K`.
    pub filter_steps: usize,
    /// Cost at each gradient base point `θ_p`.
    pub cost_trace: Vec<f64>,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}

/// Gaussian prior `N(θ₀, Σ₀)` with cached inverse and log-determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior<T: Real> {
    theta0: ParameterVector<T>,
    sigma0: DMatrix<T>,
    sigma0_inv: DMatrix<T>,
    log_det: T,
}

impl<T: Real> Prior<T> {
    pub fn new(theta0: ParameterVector<T>, sigma0: DMatrix<T>) -> Result<Self> {
        let dim = theta0.len();
        if sigma0.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch { what: "prior covariance", expected: dim, actual: sigma0.nrows() });
        }
        let asym = (&sigma0 - sigma0.transpose()).amax();
        if asym > lit::<T>(1e-12) * (T::one() + sigma0.amax()) {
            return Err(Error::InvalidPrior);
        }
        let chol = sigma0.clone().cholesky().ok_or(Error::InvalidPrior)?;
        let log_det = chol.l_dirty().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * lit(2.0);
        let sigma0_inv = chol.inverse();
        Ok(Self { theta0, sigma0, sigma0_inv, log_det })
    }

    pub fn theta0(&self) -> &ParameterVector<T> {
        &self.theta0
    }

    pub fn sigma0(&self) -> &DMatrix<T> {
        &self.sigma0
    }

    /// `log|Σ₀| + (θ-θ₀)ᵀ Σ₀⁻¹ (θ-θ₀)`.
    pub fn cost(&self, theta: &ParameterVector<T>) -> T {
        let d = theta.as_vector() - self.theta0.as_vector();
        self.log_det + d.dot(&(&self.sigma0_inv * &d))
    }
}

/// Everything needed to evaluate the parameter cost apart from `θ` and the data.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationProblem<T: Real> {
    pub chain: KinematicChain<T>,
    pub filter: FilterConfig<T>,
    /// Belief at the start of the data window (known initial state).
    pub initial: FilterBelief<T>,
    pub prior: Prior<T>,
}

impl<T: Real> EstimationProblem<T> {
    pub fn new(
        chain: KinematicChain<T>,
        filter: FilterConfig<T>,
        initial: FilterBelief<T>,
        prior: Prior<T>,
    ) -> Result<Self> {
        if prior.theta0().len() != chain.param_len() {
            return Err(Error::DimensionMismatch {
                what: "prior mean",
                expected: chain.param_len(),
                actual: prior.theta0().len(),
            });
        }
        if initial.xhat.len() != chain.state_len() || initial.p.shape() != (chain.state_len(), chain.state_len()) {
            return Err(Error::DimensionMismatch {
                what: "initial belief",
                expected: chain.state_len(),
                actual: initial.xhat.len(),
            });
        }
        if filter.measurement_noise.imu_count() != chain.imu_count() {
            return Err(Error::DimensionMismatch {
                what: "measurement noise",
                expected: chain.imu_count(),
                actual: filter.measurement_noise.imu_count(),
            });
        }
        filter.measurement_noise.validate()?;
        Ok(Self { chain, filter, initial, prior })
    }

    pub fn param_len(&self) -> usize {
        self.chain.param_len()
    }
}

/// Parameter cost `S_K(θ)` over the data window `data` (K = `data.len()`, may be 0).
pub fn cost_s<T: Real>(
    problem: &EstimationProblem<T>,
    theta: &ParameterVector<T>,
    data: &[MeasurementVector<T>],
) -> Result<T> {
    problem.chain.check_params(theta)?;
    let mut total = problem.prior.cost(theta);
    fold_steps(&problem.chain, theta, data, &problem.initial, &problem.filter, |_, record| {
        total += record.cost_term();
    })?;
    Ok(total)
}

/// One-sided finite-difference gradient together with the base cost.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate<T: Real> {
    pub gradient: DVector<T>,
    /// `S(θ)` at the base point.
    pub cost: T,
    /// Cost evaluations spent, `3(N-1) + 1`.
    pub evaluations: usize,
}

/// `Δθ_i = (S(θ + ε s_i) - S(θ)) / ε`. The base and probe evaluations run in parallel.
pub fn fd_gradient<T: Real>(
    problem: &EstimationProblem<T>,
    theta: &ParameterVector<T>,
    data: &[MeasurementVector<T>],
    eps: T,
) -> Result<GradientEstimate<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let dim = theta.len();
    let costs: Vec<T> = (0..=dim)
        .into_par_iter()
        .map(|probe| {
            if probe == 0 {
                cost_s(problem, theta, data)
            } else {
                let mut shifted = theta.clone();
                shifted.0[probe - 1] += eps;
                cost_s(problem, &shifted, data)
            }
        })
        .collect::<Result<_>>()?;
    let base = costs[0];
    let gradient = DVector::from_iterator(dim, costs[1..].iter().map(|c| (*c - base) / eps));
    Ok(GradientEstimate { gradient, cost: base, evaluations: dim + 1 })
}

/// Gradient descent on one node, seeded with `theta_init`.
///
/// Iterates `θ_{p+1} = θ_p - (λ/K) Δθ_p` and returns the last iterate once the stop
/// rule fires or the iteration cap is hit. Under [`StopRule::Greedy`] the gradient
/// test is checked before the parameter-change test.
pub fn optimize_on_node<T: Real>(
    problem: &EstimationProblem<T>,
    theta_init: &ParameterVector<T>,
    data: &[MeasurementVector<T>],
    config: &OptimizerConfig,
    rule: StopRule,
) -> Result<(ParameterVector<T>, TerminationReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    problem.chain.check_params(theta_init)?;
    let started = Instant::now();
    let gamma: T = lit(config.learning_rate(data.len()));
    let eps: T = lit(config.eps_fd);

    let mut theta = theta_init.clone();
    let mut cost_trace = Vec::new();
    let mut evaluations = 0;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let estimate = fd_gradient(problem, &theta, data, eps)?;
        evaluations += estimate.evaluations;
        cost_trace.push(to_f64(estimate.cost));

        let next = ParameterVector(theta.as_vector() - &estimate.gradient * gamma);
        if !next.as_vector().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient step"));
        }
        let step_inf = to_f64((next.as_vector() - theta.as_vector()).amax());
        let gradient_norm = to_f64(estimate.gradient.norm());
        theta = next;

        let criterion = if rule == StopRule::Greedy && gradient_norm <= config.odelta_min {
            Some(Criterion::GradientNorm)
        } else if step_inf <= config.o_min {
            Some(Criterion::ParamChange)
        } else if iterations >= config.max_iterations {
            Some(Criterion::IterationCap)
        } else {
            None
        };
        if let Some(criterion) = criterion {
            let report = TerminationReport {
                iterations,
                step_inf,
                gradient_norm,
                criterion,
                data_len: data.len(),
                cost_evaluations: evaluations,
                filter_steps: evaluations * data.len(),
                cost_trace,
                wall_time: started.elapsed(),
            };
            return Ok((theta, report));
        }
    }
}
