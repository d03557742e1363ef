//! Extended Kalman filter over the near-constant-acceleration joint model.
//!
//! Besides the posterior, every step reports the predictive innovation statistics
//! (`log |W|` and the normalized innovation squared) that the parameter cost sums.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::imu::{check_ordering, MeasurementVector, NoiseSpec};
use crate::jacobians::linearize;
use crate::kinematics::{GeneralizedState, KinematicChain, ParameterVector};
use crate::scalar::{lit, to_f64, Real};

/// Transition matrix `F` and jerk-driven process covariance `Q_w` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel<T: Real> {
    pub dt: T,
    pub f: DMatrix<T>,
    pub q_w: DMatrix<T>,
}

/// Builds `F = [[1, dt, dt²/2], [0, 1, dt], [0, 0, 1]] ⊗ I_n` and
/// `Q_w = [[dt⁵/20, dt⁴/8, dt³/6], [dt⁴/8, dt³/3, dt²/2], [dt³/6, dt²/2, dt]] ⊗ Q_ε`.
pub fn build_transition<T: Real>(n: usize, dt: T, jerk_variance: &DVector<T>) -> Result<TransitionModel<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::NonPositiveTimeStep(to_f64(dt)));
    }
    if jerk_variance.len() != n {
        return Err(Error::DimensionMismatch { what: "jerk variances", expected: n, actual: jerk_variance.len() });
    }
    let one = T::one();
    let zero = T::zero();
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let dt4 = dt3 * dt;
    let dt5 = dt4 * dt;
    let half = lit::<T>(0.5);
    let kinematic = DMatrix::from_row_slice(3, 3, &[one, dt, half * dt2, zero, one, dt, zero, zero, one]);
    let shaping = DMatrix::from_row_slice(
        3,
        3,
        &[
            dt5 / lit(20.0),
            dt4 / lit(8.0),
            dt3 / lit(6.0),
            dt4 / lit(8.0),
            dt3 / lit(3.0),
            dt2 * half,
            dt3 / lit(6.0),
            dt2 * half,
            dt,
        ],
    );
    Ok(TransitionModel {
        dt,
        f: kinematic.kronecker(&DMatrix::identity(n, n)),
        q_w: shaping.kronecker(&DMatrix::from_diagonal(jerk_variance)),
    })
}

/// Covariance update form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CovarianceUpdate {
    /// `(I - KH) P (I - KH)ᵀ + K Q_v Kᵀ`.
    #[default]
    Joseph,
    /// `(I - KH) P`, kept for comparison against textbook implementations.
    Simple,
}

/// Noise and numerical settings of the filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig<T: Real> {
    pub measurement_noise: NoiseSpec<T>,
    /// Jerk variances `σ²_ε`, one per joint.
    pub jerk_variance: DVector<T>,
    pub covariance_update: CovarianceUpdate,
    /// Innovation covariances with a larger condition number are rejected.
    pub max_condition: f64,
}

impl<T: Real> FilterConfig<T> {
    pub fn new(measurement_noise: NoiseSpec<T>, jerk_variance: DVector<T>) -> Self {
        Self {
            measurement_noise,
            jerk_variance,
            covariance_update: CovarianceUpdate::Joseph,
            max_condition: 1e12,
        }
    }
}

/// Default initial covariance `diag(1e-4 I, 1e-2 I, I)`.
pub fn default_initial_covariance<T: Real>(n: usize) -> DMatrix<T> {
    let mut d = DVector::zeros(3 * n);
    d.rows_mut(0, n).fill(lit(1e-4));
    d.rows_mut(n, n).fill(lit(1e-2));
    d.rows_mut(2 * n, n).fill(T::one());
    DMatrix::from_diagonal(&d)
}

/// Gaussian state posterior after step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBelief<T: Real> {
    pub xhat: DVector<T>,
    pub p: DMatrix<T>,
    /// Innovation of the step that produced this belief.
    pub innovation: Option<DVector<T>>,
    /// Innovation covariance `W_{k|k-1}` of that step.
    pub innovation_covariance: Option<DMatrix<T>>,
    pub k: usize,
    /// Time the belief refers to.
    pub time: T,
}

impl<T: Real> FilterBelief<T> {
    /// Belief before the first measurement.
    pub fn initial(x0: &GeneralizedState<T>, p0: DMatrix<T>, time: T) -> Self {
        Self {
            xhat: x0.stacked(),
            p: p0,
            innovation: None,
            innovation_covariance: None,
            k: 0,
            time,
        }
    }

    pub fn state(&self) -> GeneralizedState<T> {
        GeneralizedState::from_stacked(&self.xhat).expect("belief holds a stacked 3n state")
    }
}

/// Per-step innovation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T: Real> {
    pub k: usize,
    pub innovation: DVector<T>,
    /// `log |W_{k|k-1}|`.
    pub log_det_w: T,
    /// `Δyᵀ W⁻¹ Δy`.
    pub nis: T,
}

impl<T: Real> StepRecord<T> {
    /// Contribution of this step to the parameter cost.
    pub fn cost_term(&self) -> T {
        self.log_det_w + self.nis
    }
}

fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let half = lit::<T>(0.5);
    let sym = (&*m + m.transpose()) * half;
    *m = sym;
}

/// Applies one predict/update cycle for measurement `y`.
pub fn filter_step<T: Real>(
    belief: &FilterBelief<T>,
    y: &MeasurementVector<T>,
    theta: &ParameterVector<T>,
    chain: &KinematicChain<T>,
    model: &TransitionModel<T>,
    config: &FilterConfig<T>,
) -> Result<(FilterBelief<T>, StepRecord<T>)> {
    let state_len = chain.state_len();
    if belief.xhat.len() != state_len {
        return Err(Error::DimensionMismatch { what: "belief state", expected: state_len, actual: belief.xhat.len() });
    }
    if y.y.len() != chain.output_len() {
        return Err(Error::DimensionMismatch { what: "measurement", expected: chain.output_len(), actual: y.y.len() });
    }
    if model.f.nrows() != state_len {
        return Err(Error::DimensionMismatch { what: "transition model", expected: state_len, actual: model.f.nrows() });
    }

    let x_pred = &model.f * &belief.xhat;
    let mut p_pred = &model.f * &belief.p * model.f.transpose() + &model.q_w;
    symmetrize(&mut p_pred);

    let (h, jac) = linearize(chain, theta, &GeneralizedState::from_stacked(&x_pred)?)?;
    let innovation = &y.y - h;

    let q_v = config.measurement_noise.diagonal();
    let ph_t = &p_pred * jac.transpose();
    let mut w = &jac * &ph_t;
    for (i, v) in q_v.iter().enumerate() {
        w[(i, i)] += *v;
    }
    symmetrize(&mut w);

    let chol = match w.clone().cholesky() {
        Some(c) => c,
        None => {
            return Err(Error::SingularInnovation { step: y.k, condition: condition_number(&w) });
        }
    };
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (l[(0, 0)], l[(0, 0)]);
    let mut log_det_w = T::zero();
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
        log_det_w += d.ln();
    }
    log_det_w *= lit(2.0);
    // Cheap lower bound on cond(W); the exact value is only computed when it is already suspicious.
    let ratio = to_f64(hi / lo);
    if ratio * ratio > config.max_condition.sqrt() {
        let condition = condition_number(&w);
        if condition > config.max_condition || !condition.is_finite() {
            return Err(Error::SingularInnovation { step: y.k, condition });
        }
    }

    let whitened = l.solve_lower_triangular(&innovation).ok_or(Error::NonFinite("innovation whitening"))?;
    let nis = whitened.norm_squared();

    // K = P Hᵀ W⁻¹, via Kᵀ = W⁻¹ H P.
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let xhat = x_pred + &gain * &innovation;

    let ikh = DMatrix::identity(state_len, state_len) - &gain * &jac;
    let mut p = match config.covariance_update {
        CovarianceUpdate::Joseph => {
            let mut kr = gain.clone();
            for (mut col, v) in kr.column_iter_mut().zip(q_v.iter()) {
                col *= *v;
            }
            &ikh * &p_pred * ikh.transpose() + kr * gain.transpose()
        }
        CovarianceUpdate::Simple => &ikh * &p_pred,
    };
    symmetrize(&mut p);

    if !xhat.iter().all(|v| v.is_finite()) || !nis.is_finite() || !log_det_w.is_finite() {
        return Err(Error::NonFinite("filter step"));
    }
    let record = StepRecord { k: y.k, innovation: innovation.clone(), log_det_w, nis };
    let next = FilterBelief {
        xhat,
        p,
        innovation: Some(innovation),
        innovation_covariance: Some(w),
        k: y.k,
        time: y.timestamp,
    };
    Ok((next, record))
}

fn condition_number<T: Real>(w: &DMatrix<T>) -> f64 {
    let eig = w.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let min = eig.iter().fold(max, |a, v| a.min(v.abs()));
    if min > T::zero() {
        to_f64(max / min)
    } else {
        f64::INFINITY
    }
}

/// Beliefs (starting with the initial one) and step records of a full filter pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun<T: Real> {
    pub beliefs: Vec<FilterBelief<T>>,
    pub records: Vec<StepRecord<T>>,
}

impl<T: Real> FilterRun<T> {
    pub fn last(&self) -> &FilterBelief<T> {
        self.beliefs.last().expect("run holds at least the initial belief")
    }
}

/// Sequentially filters a time-ordered batch. The step length of every update is
/// the gap between consecutive timestamps.
pub fn run_filter<T: Real>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    batch: &[MeasurementVector<T>],
    initial: &FilterBelief<T>,
    config: &FilterConfig<T>,
) -> Result<FilterRun<T>> {
    let mut beliefs = Vec::with_capacity(batch.len() + 1);
    let mut records = Vec::with_capacity(batch.len());
    beliefs.push(initial.clone());
    fold_steps(chain, theta, batch, initial, config, |belief, record| {
        beliefs.push(belief.clone());
        records.push(record);
    })?;
    Ok(FilterRun { beliefs, records })
}

/// Runs the filter over `batch`, handing every step to `visit`. Returns the last belief.
pub fn fold_steps<T: Real, F>(
    chain: &KinematicChain<T>,
    theta: &ParameterVector<T>,
    batch: &[MeasurementVector<T>],
    initial: &FilterBelief<T>,
    config: &FilterConfig<T>,
    mut visit: F,
) -> Result<FilterBelief<T>>
where
    F: FnMut(&FilterBelief<T>, StepRecord<T>),
{
    check_ordering(batch)?;
    let n = chain.dof();
    let mut belief = initial.clone();
    for y in batch {
        let model = build_transition(n, y.timestamp - belief.time, &config.jerk_variance)?;
        let (next, record) = filter_step(&belief, y, theta, chain, &model, config)?;
        visit(&next, record);
        belief = next;
    }
    Ok(belief)
}
