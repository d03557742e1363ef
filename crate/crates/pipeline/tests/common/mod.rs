#![allow(dead_code)]

use std::f64::consts::PI;

use dualest_core::{
    default_initial_covariance, synthesize, BaseMotion, EstimationProblem, FilterBelief, FilterConfig,
    GeneralizedState, ImuMounting, KinematicChain, Measurement64, NoiseSpec, ParameterVector, Params64, Prior,
    Problem64, STANDARD_GRAVITY,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn theta_true() -> Params64 {
    ParameterVector::from_slice(&[0.05, 0.0, 0.03])
}

pub fn arm() -> KinematicChain<f64> {
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

pub fn noise() -> NoiseSpec<f64> {
    NoiseSpec::uniform(2, 0.005, 0.002 * (PI / 180.0).powi(2))
}

pub fn problem() -> Problem64 {
    let filter = FilterConfig::new(noise(), DVector::repeat(2, 0.5));
    let initial = FilterBelief::initial(&GeneralizedState::zeros(2), default_initial_covariance(2), 0.0);
    let prior = Prior::new(ParameterVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
    EstimationProblem::new(arm(), filter, initial, prior).unwrap()
}

/// Rest-to-rest quintic from 0 to `qe` over one second, then holding.
fn quintic(qe: f64, t: f64) -> (f64, f64, f64) {
    if t >= 1.0 {
        return (qe, 0.0, 0.0);
    }
    let p = 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5);
    let v = 30.0 * t.powi(2) - 60.0 * t.powi(3) + 30.0 * t.powi(4);
    let a = 60.0 * t - 180.0 * t.powi(2) + 120.0 * t.powi(3);
    (qe * p, qe * v, qe * a)
}

pub fn dataset(seed: u64, samples: usize) -> Vec<Measurement64> {
    let chain = arm();
    let qe = [PI / 4.0, PI / 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=samples)
        .map(|k| {
            let t = k as f64 * 0.01;
            let mut x = GeneralizedState::zeros(2);
            for j in 0..2 {
                (x.q[j], x.qdot[j], x.qddot[j]) = quintic(qe[j], t);
            }
            Measurement64::new(k, t, synthesize(&chain, &theta_true(), &x, &noise(), &mut rng).unwrap())
        })
        .collect()
}
