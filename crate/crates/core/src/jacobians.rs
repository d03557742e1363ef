//! Analytic output Jacobian `H = ∂h/∂x` by recursive propagation along the chain.
//!
//! Every body carries eight `3 x n` blocks. The rotational set is expressed in the
//! body frame, the translational set in the inertial frame:
//!
//! | field                | derivative                               |
//! |----------------------|------------------------------------------|
//! | `rate`               | ∂ω/∂q̇ = ∂ω̇/∂q̈ (also the orientation differential w.r.t. q) |
//! | `rate_q`             | ∂ω/∂q                                    |
//! | `angular_accel_qdot` | ∂ω̇/∂q̇                                   |
//! | `angular_accel_q`    | ∂ω̇/∂q                                   |
//! | `position`           | ∂r/∂q = ∂ṙ/∂q̇ = ∂r̈/∂q̈                  |
//! | `velocity_q`         | ∂ṙ/∂q                                    |
//! | `accel_qdot`         | ∂r̈/∂q̇                                   |
//! | `accel_q`            | ∂r̈/∂q                                    |
//!
//! The base body has all blocks zero. A sensor is treated as a rigidly attached
//! point with its own frame, using the same translational transfer as a link.
//!
//! The transfer terms are the exact derivatives of the forward recursions; every
//! block is pinned against central finite differences of [`forward_kinematics`] and
//! [`crate::imu::measure`] in the tests, including on non-planar chains.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};

use crate::error::{Error, Result};
use crate::imu::{measure_motion, ImuMounting};
use crate::kinematics::{forward_kinematics, skew, BodyMotion, GeneralizedState, KinematicChain, ParameterVector};
use crate::scalar::Real;

/// Rotational Jacobian blocks, body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationalJacobians<T: Real> {
    pub rate: Matrix3xX<T>,
    pub rate_q: Matrix3xX<T>,
    pub angular_accel_qdot: Matrix3xX<T>,
    pub angular_accel_q: Matrix3xX<T>,
}

/// Translational Jacobian blocks, inertial frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationalJacobians<T: Real> {
    pub position: Matrix3xX<T>,
    pub velocity_q: Matrix3xX<T>,
    pub accel_qdot: Matrix3xX<T>,
    pub accel_q: Matrix3xX<T>,
}

/// Jacobians of one body (or one sensor) with respect to `q`, `q̇`, `q̈`.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyJacobians<T: Real> {
    pub rotational: RotationalJacobians<T>,
    pub translational: TranslationalJacobians<T>,
}

impl<T: Real> BodyJacobians<T> {
    pub fn zeros(n: usize) -> Self {
        let z = || Matrix3xX::zeros(n);
        Self {
            rotational: RotationalJacobians { rate: z(), rate_q: z(), angular_accel_qdot: z(), angular_accel_q: z() },
            translational: TranslationalJacobians { position: z(), velocity_q: z(), accel_qdot: z(), accel_q: z() },
        }
    }

    pub fn is_zero(&self) -> bool {
        let r = &self.rotational;
        let t = &self.translational;
        [&r.rate, &r.rate_q, &r.angular_accel_qdot, &r.angular_accel_q, &t.position, &t.velocity_q, &t.accel_qdot, &t.accel_q]
            .iter()
            .all(|m| m.iter().all(|v| *v == T::zero()))
    }
}

/// Output Jacobian `H`, `6M x 3n`, rows per IMU `(accel, gyro)`, columns `(q, q̇, q̈)`.
pub type OutputJacobian<T> = DMatrix<T>;

/// Translational transfer from a frame point to a rigidly attached point at `offset`.
///
/// `rotation`, `omega`, `omega_dot` describe the carrying body; `rot` its rotational
/// Jacobians; `trans` the translational Jacobians of its origin.
fn transfer_translation<T: Real>(
    rotation: &Matrix3<T>,
    omega: &Vector3<T>,
    omega_dot: &Vector3<T>,
    offset: &Vector3<T>,
    rot: &RotationalJacobians<T>,
    trans: &TranslationalJacobians<T>,
) -> TranslationalJacobians<T> {
    let offset_x = skew(offset);
    let omega_x = skew(omega);
    let tangential = omega.cross(offset);
    let tangential_x = skew(&tangential);
    // ∂(ω × (ω × ρ) + ω̇ × ρ)/∂ω
    let lambda = tangential_x + omega_x * offset_x;
    let lever_accel = omega.cross(&tangential) + omega_dot.cross(offset);
    let lever_accel_x = skew(&lever_accel);

    TranslationalJacobians {
        position: &trans.position - rotation * (offset_x * &rot.rate),
        velocity_q: &trans.velocity_q - rotation * (tangential_x * &rot.rate + offset_x * &rot.rate_q),
        accel_qdot: &trans.accel_qdot - rotation * (offset_x * &rot.angular_accel_qdot + lambda * &rot.rate),
        accel_q: &trans.accel_q
            - rotation * (offset_x * &rot.angular_accel_q + lambda * &rot.rate_q + lever_accel_x * &rot.rate),
    }
}

/// Propagates the Jacobian blocks of every body from the base outwards.
pub fn propagate_body_jacobians<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    x: &GeneralizedState<T>,
    motion: &BodyMotion<T>,
) -> Result<Vec<BodyJacobians<T>>> {
    chain.check_state(x)?;
    chain.check_params(theta)?;
    if motion.body_count() != chain.body_count() {
        return Err(Error::DimensionMismatch {
            what: "body motion",
            expected: chain.body_count(),
            actual: motion.body_count(),
        });
    }
    let n = chain.dof();
    let mut out: Vec<BodyJacobians<T>> = Vec::with_capacity(chain.body_count());
    out.push(BodyJacobians::zeros(n));

    for i in 1..=n {
        let col = i - 1;
        let axis = chain.joint_axes()[col];
        let axis_x = skew(&axis);
        let qdot = x.qdot[col];
        let prev_motion = &motion.rotational[i - 1];
        let this_motion = &motion.rotational[i];
        let back = this_motion.joint_rotation.transpose();
        let prev = &out[i - 1];

        let mut rate = back * &prev.rotational.rate;
        rate.column_mut(col).axpy(T::one(), &axis, T::one());

        let omega_cross_axis = this_motion.omega.cross(&axis);
        let mut rate_q = back * &prev.rotational.rate_q;
        rate_q.column_mut(col).axpy(T::one(), &omega_cross_axis, T::one());

        let mut angular_accel_qdot = back * &prev.rotational.angular_accel_qdot - axis_x * &rate * qdot;
        angular_accel_qdot.column_mut(col).axpy(T::one(), &omega_cross_axis, T::one());

        let carried_accel = (back * prev_motion.omega_dot).cross(&axis);
        let mut angular_accel_q = back * &prev.rotational.angular_accel_q - axis_x * &rate_q * qdot;
        angular_accel_q.column_mut(col).axpy(T::one(), &carried_accel, T::one());

        // Origin of body i hangs off body i - 1.
        let prev_rot = &prev.rotational;
        let offset = chain.effective_offset(theta, i - 1);
        let translational = transfer_translation(
            &prev_motion.rotation,
            &prev_motion.omega,
            &prev_motion.omega_dot,
            &offset,
            prev_rot,
            &prev.translational,
        );

        out.push(BodyJacobians {
            rotational: RotationalJacobians { rate, rate_q, angular_accel_qdot, angular_accel_q },
            translational,
        });
    }
    Ok(out)
}

/// Jacobian blocks of one IMU, plus its frame rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorJacobians<T: Real> {
    /// `R_j`, sensor frame to inertial frame.
    pub rotation: Matrix3<T>,
    /// Linear acceleration of the sensor origin, inertial frame.
    pub acceleration: Vector3<T>,
    pub jacobians: BodyJacobians<T>,
}

/// Transfers the Jacobians of the carrying body to the sensor frame and origin.
pub fn sensor_jacobians<T: Real>(
    body_jacobians: &[BodyJacobians<T>],
    motion: &BodyMotion<T>,
    mounting: &ImuMounting<T>,
) -> Result<SensorJacobians<T>> {
    let last = motion.body_count() - 1;
    if body_jacobians.len() != motion.body_count() {
        return Err(Error::DimensionMismatch {
            what: "body jacobians",
            expected: motion.body_count(),
            actual: body_jacobians.len(),
        });
    }
    if mounting.body > last {
        return Err(Error::InvalidBody { body: mounting.body, last });
    }
    let body = &body_jacobians[mounting.body];
    let rot = &motion.rotational[mounting.body];
    let trans = &motion.translational[mounting.body];
    let sensor_rotation = mounting.rotation();
    let back = sensor_rotation.transpose();

    // Rigid attachment: the correction `R_sᵀ ω× - (R_sᵀ ω)× R_sᵀ` vanishes identically,
    // it is kept so the transfer reads the same as the joint case.
    let omega_sensor = back * rot.omega;
    let correction = back * skew(&rot.omega) - skew(&omega_sensor) * back;
    let b = &body.rotational;
    let rotational = RotationalJacobians {
        rate: back * &b.rate,
        rate_q: back * &b.rate_q,
        angular_accel_qdot: back * &b.angular_accel_qdot + correction * &b.rate,
        angular_accel_q: back * &b.angular_accel_q + correction * &b.rate_q,
    };
    let translational = transfer_translation(
        &rot.rotation,
        &rot.omega,
        &rot.omega_dot,
        &mounting.position,
        b,
        &body.translational,
    );
    let r = &mounting.position;
    let acceleration = trans.acceleration
        + rot.rotation * (rot.omega_dot.cross(r) + rot.omega.cross(&rot.omega.cross(r)));
    Ok(SensorJacobians {
        rotation: rot.rotation * sensor_rotation,
        acceleration,
        jacobians: BodyJacobians { rotational, translational },
    })
}

/// Writes the `6 x 3n` block of one IMU into `h` at row `row`.
fn write_sensor_rows<T: Real>(h: &mut DMatrix<T>, row: usize, n: usize, sensor: &SensorJacobians<T>, gravity: &Vector3<T>) {
    let to_sensor = sensor.rotation.transpose();
    let rot = &sensor.jacobians.rotational;
    let trans = &sensor.jacobians.translational;
    let specific_force = to_sensor * (sensor.acceleration + gravity);

    let accel_q = to_sensor * &trans.accel_q + skew(&specific_force) * &rot.rate;
    let accel_qdot = to_sensor * &trans.accel_qdot;
    let accel_qddot = to_sensor * &trans.position;

    h.view_mut((row, 0), (3, n)).copy_from(&accel_q);
    h.view_mut((row, n), (3, n)).copy_from(&accel_qdot);
    h.view_mut((row, 2 * n), (3, n)).copy_from(&accel_qddot);
    h.view_mut((row + 3, 0), (3, n)).copy_from(&rot.rate_q);
    h.view_mut((row + 3, n), (3, n)).copy_from(&rot.rate);
    h.view_mut((row + 3, 2 * n), (3, n)).fill(T::zero());
}

/// Output and its Jacobian evaluated together, sharing one kinematics pass.
pub fn linearize<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    x: &GeneralizedState<T>,
) -> Result<(DVector<T>, OutputJacobian<T>)> {
    let motion = forward_kinematics(chain, theta, x)?;
    let y = measure_motion(chain, &motion)?;
    let bodies = propagate_body_jacobians(chain, theta, x, &motion)?;
    let n = chain.dof();
    let mut h = DMatrix::zeros(chain.output_len(), 3 * n);
    for (j, mounting) in chain.mountings().iter().enumerate() {
        let sensor = sensor_jacobians(&bodies, &motion, mounting)?;
        write_sensor_rows(&mut h, 6 * j, n, &sensor, chain.gravity());
    }
    Ok((y, h))
}

/// Output Jacobian `H(theta)` at state `x`.
pub fn assemble_h<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    x: &GeneralizedState<T>,
) -> Result<OutputJacobian<T>> {
    linearize(chain, theta, x).map(|(_, h)| h)
}
