//! Synthetic IMU streams along the configured reaching motion.

use anyhow::Result;
use dualest_core::{synthesize, GeneralizedState, Measurement64};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;

/// Samples `t = Δt, 2Δt, …` up to the configured duration, noisy IMU readings at `θ_true`.
pub fn synthesize_dataset(config: &ExperimentConfig, seed: u64) -> Result<Vec<Measurement64>> {
    let chain = config.chain()?;
    let trajectory = config.trajectory()?;
    let theta = config.theta_true();
    let noise = config.noise();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=config.sample_count())
        .map(|k| {
            let t = k as f64 * config.sample_period;
            let (q, qdot, qddot) = trajectory.evaluate(t)?;
            let x = GeneralizedState::new(q, qdot, qddot)?;
            Ok(Measurement64::new(k, t, synthesize(&chain, &theta, &x, &noise, &mut rng)?))
        })
        .collect()
}

/// Seed of trial `trial` in a sweep started from `base`. Every chain length sees the same data.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(trial as u64)
}
