//! Serial revolute chain model and its forward kinematics.
//!
//! Bodies are indexed `0..=N`: body 0 is the base (trunk) whose motion is
//! prescribed, body `i >= 1` is attached to body `i - 1` through revolute joint
//! `i`. The joint axis of joint `i` is fixed in the frame of body `i - 1`, so a
//! chain with `n` joints has `N = n` moving links.
//!
//! Offsets: `nominal_offsets[i]` is the position of the origin of body `i + 1`
//! expressed in body `i`. The base offset `nominal_offsets[0]` is known; the
//! offsets of links `1..N-1` receive the additive correction `theta`.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::ImuMounting;
use crate::scalar::{lit, Real};

/// Below this rotation angle the Rodrigues coefficients switch to their Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Standard gravity, as a specific-force bias along inertial +z.
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Skew-symmetric matrix `a×` with `skew(a) * b == a.cross(b)`.
#[inline]
pub fn skew<T: Real>(a: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

/// Rotation matrix of an axis-angle vector.
///
/// `R = I + (sin t / t) φ× + ((1 - cos t) / t²) φ×φ×` with `t = |φ|`. The second
/// coefficient is evaluated as `½ (sin(t/2) / (t/2))²` to avoid cancellation, and
/// both coefficients use second-order series below [`SERIES_THRESHOLD`].
pub fn rodrigues<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let angle_sq = phi.norm_squared();
    let angle = angle_sq.sqrt();
    let (a, b) = if angle < lit(SERIES_THRESHOLD) {
        (
            T::one() - angle_sq / lit(6.0),
            lit::<T>(0.5) - angle_sq / lit(24.0),
        )
    } else {
        let half = angle * lit(0.5);
        let sinc_half = half.sin() / half;
        (angle.sin() / angle, lit::<T>(0.5) * sinc_half * sinc_half)
    };
    let k = skew(phi);
    Matrix3::identity() + k * a + k * k * b
}

fn orthonormality_error<T: Real>(r: &Matrix3<T>) -> T {
    let gram = r.transpose() * r - Matrix3::identity();
    let det = r.determinant() - T::one();
    gram.amax().max(det.abs())
}

/// Tolerance used for unit-norm and orthonormality checks on chain inputs.
fn input_tolerance<T: Real>() -> T {
    lit::<T>(1e-12).max(T::EPSILON * lit(100.0))
}

/// Prescribed motion of the base body (body 0).
#[derive(Clone, Debug, PartialEq)]
pub struct BaseMotion<T: Real> {
    /// `R0`, orientation of the base frame in the inertial frame.
    pub rotation: Matrix3<T>,
    /// Base origin in the inertial frame.
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub acceleration: Vector3<T>,
    /// Angular velocity of the base, base frame.
    pub angular_velocity: Vector3<T>,
    /// Angular acceleration of the base, base frame.
    pub angular_acceleration: Vector3<T>,
}

impl<T: Real> Default for BaseMotion<T> {
    fn default() -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            angular_acceleration: Vector3::zeros(),
        }
    }
}

/// Immutable description of a serial revolute chain with body-mounted IMUs.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain<T: Real> {
    joint_axes: Vec<Vector3<T>>,
    nominal_offsets: Vec<Vector3<T>>,
    base: BaseMotion<T>,
    mountings: Vec<ImuMounting<T>>,
    gravity: Vector3<T>,
}

impl<T: Real> KinematicChain<T> {
    /// Builds and validates a chain.
    ///
    /// `joint_axes` and `nominal_offsets` both have one entry per joint.
    pub fn new(
        joint_axes: Vec<Vector3<T>>,
        nominal_offsets: Vec<Vector3<T>>,
        base: BaseMotion<T>,
        mountings: Vec<ImuMounting<T>>,
        gravity: Vector3<T>,
    ) -> Result<Self> {
        let tol = input_tolerance::<T>();
        if joint_axes.is_empty() {
            return Err(Error::InvalidChain("chain needs at least one joint".into()));
        }
        if nominal_offsets.len() != joint_axes.len() {
            return Err(Error::DimensionMismatch {
                what: "nominal offsets",
                expected: joint_axes.len(),
                actual: nominal_offsets.len(),
            });
        }
        for (i, axis) in joint_axes.iter().enumerate() {
            if (axis.norm() - T::one()).abs() > tol {
                return Err(Error::InvalidChain(format!("joint axis {} is not unit length", i + 1)));
            }
        }
        if orthonormality_error(&base.rotation) > tol {
            return Err(Error::InvalidChain("base rotation is not a proper rotation".into()));
        }
        let last = joint_axes.len();
        for m in &mountings {
            if m.body > last {
                return Err(Error::InvalidBody { body: m.body, last });
            }
        }
        let chain = Self {
            joint_axes,
            nominal_offsets,
            base,
            mountings,
            gravity,
        };
        let finite = chain.nominal_offsets.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && chain.gravity.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidChain("non-finite geometry".into()));
        }
        Ok(chain)
    }

    /// Number of joints `n`.
    pub fn dof(&self) -> usize {
        self.joint_axes.len()
    }

    /// Number of moving links `N` (equal to `n` for a serial revolute chain).
    pub fn link_count(&self) -> usize {
        self.joint_axes.len()
    }

    /// Number of bodies including the base, `N + 1`.
    pub fn body_count(&self) -> usize {
        self.joint_axes.len() + 1
    }

    /// Length of the parameter vector, `3(N - 1)`.
    pub fn param_len(&self) -> usize {
        3 * (self.link_count() - 1)
    }

    /// Number of IMUs `M`.
    pub fn imu_count(&self) -> usize {
        self.mountings.len()
    }

    /// Length of the stacked measurement vector, `6M`.
    pub fn output_len(&self) -> usize {
        6 * self.mountings.len()
    }

    /// Length of the stacked state, `3n`.
    pub fn state_len(&self) -> usize {
        3 * self.dof()
    }

    pub fn joint_axes(&self) -> &[Vector3<T>] {
        &self.joint_axes
    }

    pub fn nominal_offsets(&self) -> &[Vector3<T>] {
        &self.nominal_offsets
    }

    pub fn base(&self) -> &BaseMotion<T> {
        &self.base
    }

    pub fn mountings(&self) -> &[ImuMounting<T>] {
        &self.mountings
    }

    pub fn gravity(&self) -> &Vector3<T> {
        &self.gravity
    }

    /// Offset from body `i` to body `i + 1` in frame `i`, including the correction `theta`.
    pub fn effective_offset(&self, theta: &ParameterVector<T>, i: usize) -> Vector3<T> {
        let nominal = self.nominal_offsets[i];
        if i == 0 {
            nominal
        } else {
            nominal + theta.block(i)
        }
    }

    pub(crate) fn check_state(&self, x: &GeneralizedState<T>) -> Result<()> {
        if x.dof() != self.dof() {
            return Err(Error::DimensionMismatch {
                what: "generalized state",
                expected: self.dof(),
                actual: x.dof(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_params(&self, theta: &ParameterVector<T>) -> Result<()> {
        if theta.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_len(),
                actual: theta.len(),
            });
        }
        Ok(())
    }
}

/// Joint positions, rates and accelerations, stacked as `[q; q̇; q̈]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState<T: Real> {
    pub q: DVector<T>,
    pub qdot: DVector<T>,
    pub qddot: DVector<T>,
}

impl<T: Real> GeneralizedState<T> {
    pub fn new(q: DVector<T>, qdot: DVector<T>, qddot: DVector<T>) -> Result<Self> {
        let n = q.len();
        for (what, v) in [("joint rates", &qdot), ("joint accelerations", &qddot)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { what, expected: n, actual: v.len() });
            }
        }
        Ok(Self { q, qdot, qddot })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            qdot: DVector::zeros(n),
            qddot: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Splits a stacked `3n` vector.
    pub fn from_stacked(x: &DVector<T>) -> Result<Self> {
        if x.len() % 3 != 0 || x.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "stacked state",
                expected: 3 * (x.len() / 3).max(1),
                actual: x.len(),
            });
        }
        let n = x.len() / 3;
        Ok(Self {
            q: x.rows(0, n).into_owned(),
            qdot: x.rows(n, n).into_owned(),
            qddot: x.rows(2 * n, n).into_owned(),
        })
    }

    pub fn stacked(&self) -> DVector<T> {
        let n = self.dof();
        let mut x = DVector::zeros(3 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qdot);
        x.rows_mut(2 * n, n).copy_from(&self.qddot);
        x
    }
}

/// Link-offset corrections `theta`, three entries per parameterized link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector<T: Real>(pub DVector<T>);

impl<T: Real> ParameterVector<T> {
    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn from_slice(values: &[T]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.0
    }

    /// Correction for the offset of link `link` (1-based, `1..N`).
    pub fn block(&self, link: usize) -> Vector3<T> {
        let start = 3 * (link - 1);
        Vector3::new(self.0[start], self.0[start + 1], self.0[start + 2])
    }
}

/// Rotational quantities of one body.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationalMotion<T: Real> {
    /// `R_i`, body frame to inertial frame.
    pub rotation: Matrix3<T>,
    /// Relative joint rotation `R_{q,i}` (identity for the base).
    pub joint_rotation: Matrix3<T>,
    /// Angular velocity, body frame.
    pub omega: Vector3<T>,
    /// Angular acceleration, body frame.
    pub omega_dot: Vector3<T>,
}

/// Translational quantities of one body origin, inertial frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationalMotion<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub acceleration: Vector3<T>,
}

/// Full motion of every body of a chain at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyMotion<T: Real> {
    pub rotational: Vec<RotationalMotion<T>>,
    pub translational: Vec<TranslationalMotion<T>>,
}

impl<T: Real> BodyMotion<T> {
    pub fn body_count(&self) -> usize {
        self.rotational.len()
    }
}

/// Propagates orientation, angular velocity and angular acceleration from the base outwards.
pub fn forward_rotational<T: Real>(
    chain: &KinematicChain<T>,
    x: &GeneralizedState<T>,
) -> Result<Vec<RotationalMotion<T>>> {
    chain.check_state(x)?;
    let base = chain.base();
    let mut bodies = Vec::with_capacity(chain.body_count());
    bodies.push(RotationalMotion {
        rotation: base.rotation,
        joint_rotation: Matrix3::identity(),
        omega: base.angular_velocity,
        omega_dot: base.angular_acceleration,
    });
    for (j, axis) in chain.joint_axes().iter().enumerate() {
        let prev = &bodies[j];
        let joint_rotation = rodrigues(&(axis * x.q[j]));
        let back = joint_rotation.transpose();
        let omega = back * prev.omega + axis * x.qdot[j];
        let omega_dot = back * prev.omega_dot + omega.cross(axis) * x.qdot[j] + axis * x.qddot[j];
        bodies.push(RotationalMotion {
            rotation: prev.rotation * joint_rotation,
            joint_rotation,
            omega,
            omega_dot,
        });
    }
    Ok(bodies)
}

/// Propagates body-origin position, velocity and acceleration, using offsets corrected by `theta`.
pub fn forward_translational<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    rotational: &[RotationalMotion<T>],
) -> Result<Vec<TranslationalMotion<T>>> {
    chain.check_params(theta)?;
    if rotational.len() != chain.body_count() {
        return Err(Error::DimensionMismatch {
            what: "rotational motion",
            expected: chain.body_count(),
            actual: rotational.len(),
        });
    }
    let base = chain.base();
    let mut bodies = Vec::with_capacity(chain.body_count());
    bodies.push(TranslationalMotion {
        position: base.position,
        velocity: base.velocity,
        acceleration: base.acceleration,
    });
    for i in 0..chain.link_count() {
        let rot = &rotational[i];
        let prev = &bodies[i];
        let offset = chain.effective_offset(theta, i);
        let tangential = rot.omega.cross(&offset);
        let accel_local = rot.omega.cross(&tangential) + rot.omega_dot.cross(&offset);
        bodies.push(TranslationalMotion {
            position: prev.position + rot.rotation * offset,
            velocity: prev.velocity + rot.rotation * tangential,
            acceleration: prev.acceleration + rot.rotation * accel_local,
        });
    }
    Ok(bodies)
}

/// Runs both recursions.
pub fn forward_kinematics<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    x: &GeneralizedState<T>,
) -> Result<BodyMotion<T>> {
    let rotational = forward_rotational(chain, x)?;
    let translational = forward_translational(chain, theta, &rotational)?;
    let motion = BodyMotion { rotational, translational };
    let finite = motion.rotational.iter().all(|b| {
        b.rotation.iter().chain(b.omega.iter()).chain(b.omega_dot.iter()).all(|v| v.is_finite())
    }) && motion.translational.iter().all(|b| {
        b.position.iter().chain(b.velocity.iter()).chain(b.acceleration.iter()).all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::NonFinite("forward kinematics"));
    }
    Ok(motion)
}
