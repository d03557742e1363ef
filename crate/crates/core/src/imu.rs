//! Gyroscope and accelerometer measurement model.
//!
//! Every IMU contributes a 6-vector `[a; ω]`: specific force (including the gravity
//! term) followed by angular rate, both in the sensor frame. IMU blocks are stacked
//! in mounting order.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, rodrigues, BodyMotion, GeneralizedState, KinematicChain, ParameterVector};
use crate::scalar::{lit, Real};

/// Rigid attachment of an IMU to a body.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuMounting<T: Real> {
    /// Index of the carrying body (0 is the base).
    pub body: usize,
    /// Sensor origin in the body frame, metres.
    pub position: Vector3<T>,
    /// Sensor orientation relative to the body frame, axis-angle.
    pub orientation: Vector3<T>,
}

impl<T: Real> ImuMounting<T> {
    pub fn new(body: usize, position: Vector3<T>, orientation: Vector3<T>) -> Self {
        Self { body, position, orientation }
    }

    /// `R(φ_s)`, sensor frame to body frame.
    pub fn rotation(&self) -> Matrix3<T> {
        rodrigues(&self.orientation)
    }
}

/// Diagonal white-noise variances of every IMU channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec<T: Real> {
    /// Accelerometer variances per IMU, (m/s²)².
    pub accel_variance: Vec<Vector3<T>>,
    /// Gyroscope variances per IMU, (rad/s)².
    pub gyro_variance: Vec<Vector3<T>>,
}

impl<T: Real> NoiseSpec<T> {
    /// Same isotropic variances on every IMU.
    pub fn uniform(imu_count: usize, accel_variance: T, gyro_variance: T) -> Self {
        Self {
            accel_variance: vec![Vector3::repeat(accel_variance); imu_count],
            gyro_variance: vec![Vector3::repeat(gyro_variance); imu_count],
        }
    }

    pub fn zero(imu_count: usize) -> Self {
        Self::uniform(imu_count, T::zero(), T::zero())
    }

    pub fn imu_count(&self) -> usize {
        self.accel_variance.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.accel_variance.len() != self.gyro_variance.len() {
            return Err(Error::DimensionMismatch {
                what: "gyro variances",
                expected: self.accel_variance.len(),
                actual: self.gyro_variance.len(),
            });
        }
        let ok = self
            .accel_variance
            .iter()
            .chain(self.gyro_variance.iter())
            .flat_map(|v| v.iter())
            .all(|v| v.is_finite() && *v >= T::zero());
        if !ok {
            return Err(Error::InvalidConfig("noise variances must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Diagonal of `Q_v` in measurement order.
    pub fn diagonal(&self) -> DVector<T> {
        let mut d = DVector::zeros(6 * self.imu_count());
        for (j, (a, g)) in self.accel_variance.iter().zip(&self.gyro_variance).enumerate() {
            d.fixed_rows_mut::<3>(6 * j).copy_from(a);
            d.fixed_rows_mut::<3>(6 * j + 3).copy_from(g);
        }
        d
    }

    /// Block-diagonal measurement covariance `Q_v`, `6M x 6M`.
    pub fn covariance(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.diagonal())
    }
}

/// One stacked IMU sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementVector<T: Real> {
    /// Sample index, starting at 1.
    pub k: usize,
    /// Sample time, seconds.
    pub timestamp: T,
    pub y: DVector<T>,
}

impl<T: Real> MeasurementVector<T> {
    pub fn new(k: usize, timestamp: T, y: DVector<T>) -> Self {
        Self { k, timestamp, y }
    }
}

/// Checks that indices and timestamps strictly increase.
pub fn check_ordering<T: Real>(batch: &[MeasurementVector<T>]) -> Result<()> {
    for pair in batch.windows(2) {
        if pair[1].k <= pair[0].k || pair[1].timestamp <= pair[0].timestamp {
            return Err(Error::OutOfOrder { previous: pair[0].k, index: pair[1].k });
        }
    }
    Ok(())
}

/// Noise-free output `h` for an already propagated body motion.
pub fn measure_motion<T: Real>(chain: &KinematicChain<T>, motion: &BodyMotion<T>) -> Result<DVector<T>> {
    let mut y = DVector::zeros(chain.output_len());
    for (j, mounting) in chain.mountings().iter().enumerate() {
        let last = motion.body_count() - 1;
        if mounting.body > last {
            return Err(Error::InvalidBody { body: mounting.body, last });
        }
        let rot = &motion.rotational[mounting.body];
        let trans = &motion.translational[mounting.body];
        let sensor_rotation = mounting.rotation();
        let to_sensor = (rot.rotation * sensor_rotation).transpose();
        let r = &mounting.position;
        let lever = rot.omega_dot.cross(r) + rot.omega.cross(&rot.omega.cross(r));
        let specific_force = to_sensor * (trans.acceleration + rot.rotation * lever + chain.gravity());
        let rate = sensor_rotation.transpose() * rot.omega;
        y.fixed_rows_mut::<3>(6 * j).copy_from(&specific_force);
        y.fixed_rows_mut::<3>(6 * j + 3).copy_from(&rate);
    }
    Ok(y)
}

/// Noise-free output `h(x, theta)`.
pub fn measure<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    x: &GeneralizedState<T>,
) -> Result<DVector<T>> {
    let motion = forward_kinematics(chain, theta, x)?;
    measure_motion(chain, &motion)
}

/// `h(x, theta)` plus independent zero-mean Gaussian noise drawn from `rng`.
pub fn synthesize<T: Real, R: Rng + ?Sized>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    x: &GeneralizedState<T>,
    noise: &NoiseSpec<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    if noise.imu_count() != chain.imu_count() {
        return Err(Error::DimensionMismatch {
            what: "noise specification",
            expected: chain.imu_count(),
            actual: noise.imu_count(),
        });
    }
    let mut y = measure(chain, theta, x)?;
    for (value, variance) in y.iter_mut().zip(noise.diagonal().iter()) {
        let draw: f64 = rng.sample(StandardNormal);
        *value += variance.sqrt() * lit::<T>(draw);
    }
    Ok(y)
}
