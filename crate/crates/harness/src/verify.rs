//! Self-checks run by `dualest verify` against the configured arm.

use std::time::Instant;

use anyhow::Result;
use dualest_core::{
    cost_s, fd_gradient, linearize, measure, optimize_on_node, run_filter, Criterion, GeneralizedState,
    Measurement64, OptimizerConfig, ParameterVector, StopRule,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::synthesize_dataset;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&ExperimentConfig) -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 6] = [
    ("jacobian_vs_central_differences", jacobian),
    ("noiseless_self_consistency", noiseless),
    ("gradient_vs_central_differences", gradient),
    ("learning_rate_scaling", learning_rate),
    ("termination_under_cap", termination),
    ("covariance_psd", covariance),
];

pub fn run_checks(config: &ExperimentConfig) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| match check(config) {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(err) => CheckResult { name, passed: false, detail: format!("error: {err:#}") },
        })
        .collect()
}

fn jacobian(config: &ExperimentConfig) -> Result<(bool, String)> {
    let chain = config.chain()?;
    let n = chain.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let started = Instant::now();
    let step = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut theta: DVector<f64> = DVector::from_fn(chain.param_len(), |_, _| rng.random_range(-1.0..1.0));
        let norm = theta.norm().max(1e-12);
        theta *= 0.2 * rng.random_range(0.0..1.0) / norm;
        let theta = ParameterVector(theta);
        let x = DVector::from_fn(3 * n, |i, _| rng.random_range(-1.0..1.0) * [3.0, 3.0, 10.0][i / n]);
        let (_, h) = linearize(&chain, &theta, &GeneralizedState::from_stacked(&x)?)?;
        for c in 0..3 * n {
            let (mut plus, mut minus) = (x.clone(), x.clone());
            plus[c] += step;
            minus[c] -= step;
            let yp = measure(&chain, &theta, &GeneralizedState::from_stacked(&plus)?)?;
            let ym = measure(&chain, &theta, &GeneralizedState::from_stacked(&minus)?)?;
            for (r, fd) in ((yp - ym) / (2.0 * step)).iter().enumerate() {
                worst = worst.max((h[(r, c)] - fd).abs() / f64::max(1e-6, 1e-5 * fd.abs()));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((worst <= 1.0 && secs < 30.0, format!("worst tolerance ratio {worst:.3}, {secs:.2} s")))
}

fn noiseless(config: &ExperimentConfig) -> Result<(bool, String)> {
    let chain = config.chain()?;
    let n = config.dof;
    let mut x0 = GeneralizedState::zeros(n);
    x0.q = DVector::from_column_slice(&config.q0);
    x0.qdot = DVector::from_fn(n, |i, _| 0.3 + 0.3 * i as f64);
    x0.qddot = DVector::from_fn(n, |i, _| if i % 2 == 0 { -1.0 } else { 0.5 });
    let theta = config.theta_true();
    let data: Vec<Measurement64> = (1..=config.sample_count())
        .map(|k| {
            let t = k as f64 * config.sample_period;
            let x = GeneralizedState::new(
                &x0.q + &x0.qdot * t + &x0.qddot * (0.5 * t * t),
                &x0.qdot + &x0.qddot * t,
                x0.qddot.clone(),
            )?;
            Ok(Measurement64::new(k, t, measure(&chain, &theta, &x)?))
        })
        .collect::<Result<_>>()?;
    let mut problem = config.problem()?;
    problem.initial.xhat = x0.stacked();
    let run = run_filter(&chain, &theta, &data, &problem.initial, &problem.filter)?;
    let worst = run.records.iter().skip(1).map(|r| r.innovation.norm()).fold(0.0, f64::max);
    let centre = cost_s(&problem, &theta, &data)?;
    let mut strict = true;
    for axis in 0..theta.len() {
        for delta in [-0.01, 0.01] {
            let mut shifted = theta.clone();
            shifted.0[axis] += delta;
            strict &= centre < cost_s(&problem, &shifted, &data)?;
        }
    }
    Ok((worst <= 1e-8 && strict, format!("max innovation {worst:.2e}, strict minimum {strict}")))
}

fn gradient(config: &ExperimentConfig) -> Result<(bool, String)> {
    let problem = config.problem()?;
    let data = synthesize_dataset(config, config.seed)?;
    let theta = config.theta0();
    let estimate = fd_gradient(&problem, &theta, &data, config.eps_fd)?;
    let h = 1e-5;
    let central = DVector::from_fn(theta.len(), |i, _| {
        let (mut plus, mut minus) = (theta.clone(), theta.clone());
        plus.0[i] += h;
        minus.0[i] -= h;
        match (cost_s(&problem, &plus, &data), cost_s(&problem, &minus, &data)) {
            (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
            _ => f64::NAN,
        }
    });
    let rel = (&estimate.gradient - &central).norm() / central.norm();
    Ok((rel < 1e-2, format!("relative gap {rel:.2e}")))
}

fn learning_rate(config: &ExperimentConfig) -> Result<(bool, String)> {
    let opt = config.optimizer();
    let ok = [1usize, 10, 150, 4096].iter().all(|&k| opt.learning_rate(2 * k) * 2.0 == opt.learning_rate(k));
    Ok((ok, format!("gamma(K=100) = {:e}", opt.learning_rate(100))))
}

fn termination(config: &ExperimentConfig) -> Result<(bool, String)> {
    let problem = config.problem()?;
    let data = synthesize_dataset(config, config.seed)?;
    let capped = OptimizerConfig { o_min: 1e-30, odelta_min: 1e-30, max_iterations: 5, ..config.optimizer() };
    let (_, report) = optimize_on_node(&problem, &config.theta0(), &data, &capped, StopRule::Final)?;
    let ok = report.iterations == 5 && report.criterion == Criterion::IterationCap;
    Ok((ok, format!("{} iterations, {}", report.iterations, report.criterion.as_str())))
}

fn covariance(config: &ExperimentConfig) -> Result<(bool, String)> {
    let problem = config.problem()?;
    let data = synthesize_dataset(config, config.seed)?;
    let run = run_filter(&problem.chain, &config.theta_true(), &data, &problem.initial, &problem.filter)?;
    let mut worst_asym = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for belief in &run.beliefs {
        let p: &DMatrix<f64> = &belief.p;
        worst_asym = worst_asym.max((p - p.transpose()).amax());
        min_eig = min_eig.min(p.clone().symmetric_eigen().eigenvalues.min());
    }
    let ok = worst_asym <= 1e-12 && min_eig >= -1e-12;
    Ok((ok, format!("max asymmetry {worst_asym:.1e}, min eigenvalue {min_eig:.2e}")))
}
