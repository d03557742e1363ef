use std::f64::consts::PI;

use dualest_harness::{
    quintic_scalar, read_csv, run_sweep, run_trial, spearman, summarize, synthesize_dataset, write_csv,
    ExperimentConfig, MetricsRow, QuinticTrajectory, TimelinePoint, TrajectoryError, CSV_HEADER,
};
use dualest_pipeline::TransportKind;
use nalgebra::DVector;

fn quick_config() -> ExperimentConfig {
    ExperimentConfig { trials: 1, nodes: vec![0, 1], ..ExperimentConfig::default() }
}

#[test]
fn quintic_meets_its_boundary_conditions() {
    let traj = QuinticTrajectory::new(DVector::from_vec(vec![0.3, -1.0]), DVector::from_vec(vec![1.1, 2.0]), 0.8).unwrap();
    let (q, v, a) = traj.evaluate(0.0).unwrap();
    assert_eq!(q, DVector::from_vec(vec![0.3, -1.0]));
    assert!(v.amax() <= 1e-12 && a.amax() <= 1e-12);
    let (q, v, a) = traj.evaluate(0.8).unwrap();
    assert!((q - DVector::from_vec(vec![1.1, 2.0])).amax() <= 1e-12);
    assert!(v.amax() <= 1e-12 && a.amax() <= 1e-12);
    let (q, v, a) = traj.evaluate(5.0).unwrap();
    assert_eq!((q[1], v[1], a[1]), (2.0, 0.0, 0.0));
    // Derivatives just inside the end point also vanish to first order.
    let (_, v, a) = traj.evaluate(0.8 - 1e-9).unwrap();
    assert!(v.amax() < 1e-12 && a.amax() < 1e-6);
}

#[test]
fn quintic_passes_the_midpoint_of_the_motion() {
    let (q, _, _) = quintic_scalar(0.2, 1.4, 2.0, 1.0).unwrap();
    assert!((q - 0.8).abs() < 1e-15);
}

#[test]
fn quintic_velocity_integrates_to_the_displacement() {
    let (q0, qe, t_e) = (-0.4, PI / 2.0, 1.0);
    let n = 20_000;
    let h = t_e / n as f64;
    let mut integral = 0.0;
    for i in 0..n {
        let (_, v0, _) = quintic_scalar(q0, qe, t_e, i as f64 * h).unwrap();
        let (_, v1, _) = quintic_scalar(q0, qe, t_e, (i + 1) as f64 * h).unwrap();
        integral += 0.5 * h * (v0 + v1);
    }
    assert!((integral - (qe - q0)).abs() < 1e-6);
    // Same oracle on the acceleration.
    let mut integral = 0.0;
    for i in 0..n {
        let (_, _, a0) = quintic_scalar(q0, qe, t_e, i as f64 * h).unwrap();
        let (_, _, a1) = quintic_scalar(q0, qe, t_e, (i + 1) as f64 * h).unwrap();
        integral += 0.5 * h * (a0 + a1);
    }
    assert!(integral.abs() < 1e-6);
}

#[test]
fn quintic_rejects_bad_inputs() {
    assert_eq!(quintic_scalar(0.0, 1.0, 0.0, 0.5), Err(TrajectoryError::Duration(0.0)));
    assert!(QuinticTrajectory::new(DVector::zeros(2), DVector::zeros(2), -1.0).is_err());
    assert!(QuinticTrajectory::new(DVector::zeros(2), DVector::zeros(3), 1.0).is_err());
    assert_eq!(quintic_scalar(0.0, 1.0, 1.0, -0.1), Err(TrajectoryError::NegativeTime(-0.1)));
}

#[test]
fn dataset_has_one_vector_per_sample() {
    let config = ExperimentConfig::default();
    let data = synthesize_dataset(&config, 1).unwrap();
    assert_eq!(data.len(), 150);
    assert!(data.iter().all(|m| m.y.len() == 12));
    assert_eq!(data[0].k, 1);
    assert!((data[149].timestamp - 1.5).abs() < 1e-12);
    assert_eq!(data, synthesize_dataset(&config, 1).unwrap());
}

#[test]
fn noiseless_static_segment_repeats_exactly() {
    let config = ExperimentConfig { accel_variance: 0.0, gyro_variance_deg2: 0.0, ..ExperimentConfig::default() };
    let data = synthesize_dataset(&config, 3).unwrap();
    let static_part: Vec<_> = data.iter().filter(|m| m.timestamp > config.t_e).collect();
    assert!(static_part.len() >= 49);
    for pair in static_part.windows(2) {
        assert_eq!(pair[0].y, pair[1].y);
    }
}

#[test]
fn static_segment_averages_to_the_gravity_projection() {
    let config = ExperimentConfig::default();
    let data = synthesize_dataset(&config, 17).unwrap();
    let static_part: Vec<_> = data.iter().filter(|m| m.timestamp > config.t_e).collect();
    let n = static_part.len() as f64;
    let g = dualest_core::STANDARD_GRAVITY;
    // Both links rotate about y and both sensors are flipped by π about y, so the
    // sensor sees gravity rotated by the link angle: [g sin φ, 0, -g cos φ].
    let mut expected = Vec::new();
    for phi in [PI / 4.0, PI / 4.0 + PI / 2.0] {
        expected.extend([g * phi.sin(), 0.0, -g * phi.cos(), 0.0, 0.0, 0.0]);
    }
    let sigma: Vec<f64> = (0..12)
        .map(|c| if c % 6 < 3 { config.accel_variance.sqrt() } else { config.gyro_variance_rad2().sqrt() })
        .collect();
    for c in 0..12 {
        let mean = static_part.iter().map(|m| m.y[c]).sum::<f64>() / n;
        assert!((mean - expected[c]).abs() <= 3.0 * sigma[c] / n.sqrt(), "channel {c}: {mean} vs {}", expected[c]);
    }
}

#[test]
fn defaults_reproduce_the_reference_setting() {
    let config = ExperimentConfig::default();
    config.validate().unwrap();
    assert_eq!((config.dof, config.mountings.len(), config.param_len()), (2, 2, 3));
    assert_eq!((config.sample_period, config.eps_fd, config.lambda), (0.01, 1e-6, 1e-4));
    assert_eq!((config.o_min, config.odelta_min), (2e-4, 30.0));
    assert_eq!((config.accel_variance, config.gyro_variance_deg2, config.jerk_variance), (0.005, 0.002, 0.5));
    assert_eq!(config.theta_true, vec![0.05, 0.0, 0.03]);
    assert_eq!(config.theta0, vec![0.0; 3]);
    assert_eq!(config.qe, vec![PI / 4.0, PI / 2.0]);
    assert_eq!(config.trials, 50);
    let echo = config.echo().unwrap();
    assert!(echo.contains("gyro_variance_deg2 = 0.002"));
    assert!(echo.contains(&format!("{:e}", 0.002 * (PI / 180.0).powi(2))));
    let body = echo.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let back: ExperimentConfig = toml::from_str(&body).unwrap();
    assert_eq!(back, config);
}

#[test]
fn config_file_overrides_only_what_it_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "trials = 3\nalpha = 10\ntransport = \"socket\"\ntiming = \"wall\"\n").unwrap();
    let config = ExperimentConfig::load(&path).unwrap();
    assert_eq!((config.trials, config.alpha, config.transport), (3, 10, TransportKind::Socket));
    assert_eq!(config.beta1, ExperimentConfig::default().beta1);
    std::fs::write(&path, "trails = 3\n").unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    std::fs::write(&path, "theta0 = [0.0, 0.0]\n").unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
}

#[test]
fn short_sweep_improves_on_the_prior_and_repeats() {
    let config = quick_config();
    let rows = run_sweep(&config).unwrap();
    assert_eq!(rows.len(), 2);
    let prior_error = (config.theta0().as_vector() - config.theta_true().as_vector()).norm();
    for row in &rows {
        assert!(row.is_ok(), "{:?}", row.failure);
        assert!(row.final_error.unwrap() < prior_error);
        assert!(row.convergence_time.unwrap() > 0.0);
    }
    assert_eq!(rows, run_sweep(&config).unwrap());
}

#[test]
fn socket_runs_report_the_same_metrics() {
    let config = quick_config();
    let socket = ExperimentConfig { transport: TransportKind::Socket, ..config.clone() };
    for nodes in [0, 2] {
        assert_eq!(run_trial(&config, nodes, 0), run_trial(&socket, nodes, 0));
    }
}

#[test]
fn unreachable_setup_is_recorded_not_fatal() {
    let config = ExperimentConfig { duration: 0.01, ..quick_config() };
    let rows = run_sweep(&config).unwrap();
    assert_eq!(rows.len(), 2);
    let config = ExperimentConfig { gyro_variance_deg2: 0.0, accel_variance: 0.0, jerk_variance: 0.0, ..quick_config() };
    let row = run_trial(&config, 1, 0);
    assert!(!row.is_ok());
    assert!(row.final_error.is_none());
}

fn sample_rows() -> Vec<MetricsRow> {
    let row = |nodes, trial, t: f64, e: f64, ok: bool| MetricsRow {
        nodes,
        trial,
        seed: 100 + trial as u64,
        convergence_time: ok.then_some(t),
        final_error: ok.then_some(e),
        final_cost: ok.then_some(-1000.0 - t),
        node_iterations: vec![3; nodes.max(1)],
        timeline: vec![TimelinePoint { time: t / 2.0, error: 0.1 }, TimelinePoint { time: t, error: 0.0 }],
        failure: (!ok).then(|| "node 1 failed: boom, with comma".to_string()),
    };
    vec![
        row(0, 0, 2.0, 0.01, true),
        row(0, 1, 3.0, 0.03, true),
        row(2, 0, 1.5, 0.02, true),
        row(2, 1, 1.0 / 3.0, 0.1 / 7.0, true),
        row(2, 2, 0.0, 0.0, false),
    ]
}

#[test]
fn empty_results_give_a_header_only_csv() {
    let mut buf = Vec::new();
    write_csv(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), CSV_HEADER.join(",") + "\n");
    assert!(read_csv(buf.as_slice()).unwrap().is_empty());
}

#[test]
fn csv_round_trips_rows() {
    let rows = sample_rows();
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn summary_means_match_hand_computation() {
    let summary = summarize(&sample_rows());
    assert_eq!(summary.lengths.len(), 2);
    let l0 = &summary.lengths[0];
    assert_eq!((l0.runs, l0.failures), (2, 0));
    assert!((l0.mean_t - 2.5).abs() < 1e-15);
    assert!((l0.mean_e - 0.02).abs() < 1e-15);
    // Sample standard deviation of {0.01, 0.03} is sqrt(2)·0.01.
    assert!((l0.ci95_e - 1.96 * 0.01).abs() < 1e-12);
    let l2 = &summary.lengths[1];
    assert_eq!((l2.runs, l2.failures), (3, 1));
    assert!((l2.mean_t - (1.5 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    assert!((l2.mean_e - (0.02 + 0.1 / 7.0) / 2.0).abs() < 1e-15);
    assert_eq!(l2.monotone_fraction, 1.0);
    assert_eq!(summary.t_trend, Some(-1.0));
}

#[test]
fn spearman_matches_known_values() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 5.0, 9.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
    // Ranks (1,2,3,4,5) vs (2,1,4,3,5): 1 - 6·4/(5·24) = 0.8.
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[20.0, 10.0, 40.0, 30.0, 50.0]).unwrap();
    assert!((rho - 0.8).abs() < 1e-12);
    assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
}
