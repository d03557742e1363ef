#![allow(dead_code)]

use std::f64::consts::PI;

use dualest_core::{BaseMotion, ImuMounting, KinematicChain, ParameterVector, STANDARD_GRAVITY};
use nalgebra::{DVector, Matrix3, Vector3};
use rand::Rng;

/// Two-link planar arm with one IMU per link.
pub fn planar_arm() -> KinematicChain<f64> {
    let mount = |body| ImuMounting::new(body, Vector3::new(0.1, 0.0, 0.05), Vector3::new(0.0, PI, 0.0));
    KinematicChain::new(
        vec![Vector3::y(), Vector3::y()],
        vec![Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0)],
        BaseMotion::default(),
        vec![mount(1), mount(2)],
        Vector3::new(0.0, 0.0, STANDARD_GRAVITY),
    )
    .unwrap()
}

/// Three joints with skewed axes, a rotating and accelerating base, and IMUs on every body.
pub fn spatial_arm() -> KinematicChain<f64> {
    let base = BaseMotion {
        rotation: dualest_core::rodrigues(&Vector3::new(0.2, -0.1, 0.3)),
        position: Vector3::new(0.1, 0.2, 0.3),
        velocity: Vector3::new(0.3, -0.2, 0.1),
        acceleration: Vector3::new(-0.4, 0.5, 0.2),
        angular_velocity: Vector3::new(0.3, -0.5, 0.7),
        angular_acceleration: Vector3::new(-0.2, 0.4, 0.1),
    };
    KinematicChain::new(
        vec![
            Vector3::z(),
            Vector3::new(1.0, 1.0, 0.0).normalize(),
            Vector3::new(0.2, -0.3, 0.9).normalize(),
        ],
        vec![Vector3::new(0.0, 0.0, 0.1), Vector3::new(0.25, 0.05, -0.02), Vector3::new(0.1, -0.2, 0.15)],
        base,
        vec![
            ImuMounting::new(0, Vector3::new(0.05, 0.0, 0.0), Vector3::new(0.1, 0.2, 0.3)),
            ImuMounting::new(1, Vector3::new(0.1, -0.03, 0.02), Vector3::new(0.0, PI, 0.0)),
            ImuMounting::new(2, Vector3::new(-0.04, 0.07, 0.1), Vector3::new(-0.5, 0.3, 1.2)),
            ImuMounting::new(3, Vector3::new(0.02, 0.02, -0.06), Vector3::new(1.0, 0.0, -0.4)),
        ],
        Vector3::new(0.0, 0.0, STANDARD_GRAVITY),
    )
    .unwrap()
}

pub fn random_vector<R: Rng>(rng: &mut R, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Parameter vector with `‖θ‖ ≤ radius`.
pub fn random_theta<R: Rng>(rng: &mut R, len: usize, radius: f64) -> ParameterVector<f64> {
    let v = random_vector(rng, len, 1.0);
    let norm = v.norm().max(1e-12);
    let r = radius * rng.random_range(0.0..1.0);
    ParameterVector(v * (r / norm))
}

/// Rotation matrix from a unit quaternion built by composing half-angle rotations,
/// an independent route to the axis-angle map.
pub fn quaternion_rotation(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    let axis = phi / angle;
    let (s, c) = (angle / 2.0).sin_cos();
    let (w, x, y, z) = (c, axis.x * s, axis.y * s, axis.z * s);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

use dualest_core::{
    default_initial_covariance, measure, synthesize, EstimationProblem, FilterBelief, FilterConfig, GeneralizedState,
    MeasurementVector, NoiseSpec, Prior,
};
use nalgebra::DMatrix;

pub const SAMPLE_PERIOD: f64 = 0.01;

pub fn planar_noise() -> NoiseSpec<f64> {
    NoiseSpec::uniform(2, 0.005, 0.002 * (PI / 180.0).powi(2))
}

/// Samples at `t = dt, 2dt, ...` along a constant-acceleration joint path from `x0`.
pub fn constant_acceleration_data<R: Rng>(
    chain: &KinematicChain<f64>,
    theta: &ParameterVector<f64>,
    x0: &GeneralizedState<f64>,
    samples: usize,
    noise: &NoiseSpec<f64>,
    rng: &mut R,
) -> Vec<MeasurementVector<f64>> {
    (1..=samples)
        .map(|k| {
            let t = k as f64 * SAMPLE_PERIOD;
            let x = GeneralizedState::new(
                &x0.q + &x0.qdot * t + &x0.qddot * (0.5 * t * t),
                &x0.qdot + &x0.qddot * t,
                x0.qddot.clone(),
            )
            .unwrap();
            let y = if noise.diagonal().iter().all(|v| *v == 0.0) {
                measure(chain, theta, &x).unwrap()
            } else {
                synthesize(chain, theta, &x, noise, rng).unwrap()
            };
            MeasurementVector::new(k, t, y)
        })
        .collect()
}

pub fn planar_problem(x0: &GeneralizedState<f64>) -> EstimationProblem<f64> {
    let chain = planar_arm();
    let filter = FilterConfig::new(planar_noise(), DVector::repeat(2, 0.5));
    let initial = FilterBelief::initial(x0, default_initial_covariance(2), 0.0);
    let prior = Prior::new(ParameterVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
    EstimationProblem::new(chain, filter, initial, prior).unwrap()
}

pub fn theta_true() -> ParameterVector<f64> {
    ParameterVector::from_slice(&[0.05, 0.0, 0.03])
}

/// Rest-to-rest quintic from 0 to `qe` over one second, holding afterwards.
fn quintic(qe: f64, t: f64) -> (f64, f64, f64) {
    if t >= 1.0 {
        return (qe, 0.0, 0.0);
    }
    let p = 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5);
    let v = 30.0 * t.powi(2) - 60.0 * t.powi(3) + 30.0 * t.powi(4);
    let a = 60.0 * t - 180.0 * t.powi(2) + 120.0 * t.powi(3);
    (qe * p, qe * v, qe * a)
}

/// Noisy planar-arm samples along the reference reach, starting from rest at zero.
pub fn reach_data(seed: u64, samples: usize) -> Vec<MeasurementVector<f64>> {
    use rand::SeedableRng;
    let chain = planar_arm();
    let qe = [PI / 4.0, PI / 2.0];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (1..=samples)
        .map(|k| {
            let t = k as f64 * SAMPLE_PERIOD;
            let mut x = GeneralizedState::zeros(2);
            for j in 0..2 {
                (x.q[j], x.qdot[j], x.qddot[j]) = quintic(qe[j], t);
            }
            MeasurementVector::new(k, t, synthesize(&chain, &theta_true(), &x, &planar_noise(), &mut rng).unwrap())
        })
        .collect()
}
