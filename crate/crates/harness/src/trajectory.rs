//! Rest-to-rest fifth-order joint trajectories.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory duration must be positive, got {0}")]
    Duration(f64),
    #[error("start and end poses differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("trajectory evaluated at negative time {0}")]
    NegativeTime(f64),
}

/// Quintic from `q0` to `qe` over `[0, t_e]` with zero velocity and acceleration at
/// both ends, holding `qe` afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct QuinticTrajectory {
    q0: DVector<f64>,
    qe: DVector<f64>,
    t_e: f64,
}

impl QuinticTrajectory {
    pub fn new(q0: DVector<f64>, qe: DVector<f64>, t_e: f64) -> Result<Self, TrajectoryError> {
        if !(t_e > 0.0) || !t_e.is_finite() {
            return Err(TrajectoryError::Duration(t_e));
        }
        if q0.len() != qe.len() {
            return Err(TrajectoryError::Length(q0.len(), qe.len()));
        }
        Ok(Self { q0, qe, t_e })
    }

    pub fn duration(&self) -> f64 {
        self.t_e
    }

    /// `(q, q̇, q̈)` at time `t`.
    pub fn evaluate(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), TrajectoryError> {
        let (p, v, a) = quintic(self.t_e, t)?;
        let span = &self.qe - &self.q0;
        Ok((&self.q0 + &span * p, &span * v, &span * a))
    }
}

/// Normalized blend `s(t)` and its first two time derivatives.
fn quintic(t_e: f64, t: f64) -> Result<(f64, f64, f64), TrajectoryError> {
    if t < 0.0 {
        return Err(TrajectoryError::NegativeTime(t));
    }
    if t >= t_e {
        return Ok((1.0, 0.0, 0.0));
    }
    let s = t / t_e;
    let (s2, s3) = (s * s, s * s * s);
    let p = s3 * (10.0 - 15.0 * s + 6.0 * s2);
    let v = s2 * (30.0 - 60.0 * s + 30.0 * s2) / t_e;
    let a = s * (60.0 - 180.0 * s + 120.0 * s2) / (t_e * t_e);
    Ok((p, v, a))
}

/// Scalar convenience form.
pub fn quintic_scalar(q0: f64, qe: f64, t_e: f64, t: f64) -> Result<(f64, f64, f64), TrajectoryError> {
    if !(t_e > 0.0) || !t_e.is_finite() {
        return Err(TrajectoryError::Duration(t_e));
    }
    let (p, v, a) = quintic(t_e, t)?;
    Ok((q0 + (qe - q0) * p, (qe - q0) * v, (qe - q0) * a))
}
