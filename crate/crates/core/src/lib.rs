//! Rigid-body kinematics of a serial revolute chain carrying IMUs, an extended
//! Kalman filter over the joint state, and MAP estimation of the link offsets.
//!
//! All math is generic over the scalar type ([`Real`], implemented for `f32` and
//! `f64`). The `*64` aliases below name the `f64` instantiations used by the
//! pipeline and the experiment harness.

pub mod error;
pub mod estimator;
pub mod filter;
pub mod imu;
pub mod jacobians;
pub mod kinematics;
pub mod scalar;

pub use error::{Error, Result};
pub use estimator::{
    cost_s, fd_gradient, optimize_on_node, Criterion, EstimationProblem, GradientEstimate, OptimizerConfig, Prior,
    StopRule, TerminationReport,
};
pub use filter::{
    build_transition, default_initial_covariance, filter_step, fold_steps, run_filter, CovarianceUpdate, FilterBelief,
    FilterConfig, FilterRun, StepRecord, TransitionModel,
};
pub use imu::{check_ordering, measure, measure_motion, synthesize, ImuMounting, MeasurementVector, NoiseSpec};
pub use jacobians::{linearize, propagate_body_jacobians, sensor_jacobians, BodyJacobians, SensorJacobians};
pub use kinematics::{
    forward_kinematics, rodrigues, skew, BaseMotion, BodyMotion, GeneralizedState, KinematicChain, ParameterVector,
    STANDARD_GRAVITY,
};
pub use scalar::Real;

pub type Chain64 = KinematicChain<f64>;
pub type State64 = GeneralizedState<f64>;
pub type Params64 = ParameterVector<f64>;
pub type Measurement64 = MeasurementVector<f64>;
pub type Belief64 = FilterBelief<f64>;
pub type Problem64 = EstimationProblem<f64>;

pub type Chain32 = KinematicChain<f32>;
pub type State32 = GeneralizedState<f32>;
pub type Params32 = ParameterVector<f32>;
