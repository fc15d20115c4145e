//! Linear-Gaussian state-space form with state `z_t = (m_t, m_{t-1})`.
//!
//! ```text
//! b_t = Psi_t z_t + c_t + u_t,        Psi_t = [-I, G_t]
//! z_t = A z_{t-1} + a + eta_t,        A = [[I, 0], [I, 0]], a = (phi, 0)
//! ```
//!
//! The observation is the 2-vector `b_t`; innovation covariances are 2x2.

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{LinearizationSchedule, Measure, ModelParams};

pub type Matrix2x4 = SMatrix<f64, 2, 4>;
pub type Matrix4x2 = SMatrix<f64, 4, 2>;

/// Ratio below which the innovation covariance is treated as singular.
pub const INNOVATION_RCOND: f64 = 1e-13;
/// Relative eigenvalue cut-off of the pseudo-inverse in the smoother gain.
pub const SMOOTHER_PINV_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `A = [[I, 0], [I, 0]]`.
pub fn transition_matrix() -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<2, 2>(0, 0).copy_from(&Matrix2::identity());
    a.fixed_view_mut::<2, 2>(2, 0).copy_from(&Matrix2::identity());
    a
}

/// `a = (phi, 0)`.
pub fn transition_intercept(params: &ModelParams) -> Vector4<f64> {
    Vector4::new(params.phi[0], params.phi[1], 0.0, 0.0)
}

/// `Sigma_eta = diag(Sigma_v, 0)`.
pub fn state_noise(params: &ModelParams) -> Matrix4<f64> {
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<2, 2>(0, 0).copy_from(&params.sigma_v);
    q
}

/// Observation block `Psi_t = [-I, G_t]`.
pub fn measurement_matrix(g: &Vector2<f64>) -> Matrix2x4 {
    let mut psi = Matrix2x4::zeros();
    psi.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-Matrix2::identity()));
    psi.fixed_view_mut::<2, 2>(0, 2).copy_from(&Matrix2::from_diagonal(g));
    psi
}

/// Selector `E = [I : 0]` of the current multiplier.
pub fn selector() -> Matrix2x4 {
    let mut e = Matrix2x4::zeros();
    e.fixed_view_mut::<2, 2>(0, 0).copy_from(&Matrix2::identity());
    e
}

fn top_left(m: &Matrix4<f64>) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(0, 0).into_owned()
}

fn top(z: &Vector4<f64>) -> Vector2<f64> {
    z.fixed_rows::<2>(0).into_owned()
}

/// Gaussian moments of the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl StateMoments {
    /// Moments of the current log multiplier `m_t`.
    pub fn multiplier(&self) -> (Vector2<f64>, Matrix2<f64>) {
        (top(&self.mean), top_left(&self.cov))
    }
}

/// One-step-ahead state and observation prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub period: usize,
    pub state: StateMoments,
    pub b_mean: Vector2<f64>,
    pub b_cov: Matrix2<f64>,
    pub psi: Matrix2x4,
}

/// Filter quantities of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    pub predicted: Prediction,
    pub gain: Matrix4x2,
    pub filtered: StateMoments,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// `z_{0|0}`, `Sigma(z_0|0)`.
    pub initial: StateMoments,
    /// Steps for t = 1..T (`steps[t-1]`).
    pub steps: Vec<FilterStep>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Filtered moments at `t` (t = 0 returns the initial state).
    pub fn filtered(&self, t: usize) -> &StateMoments {
        if t == 0 {
            &self.initial
        } else {
            &self.steps[t - 1].filtered
        }
    }

    /// Predicted moments `z_{t|t-1}` for t >= 1.
    pub fn predicted(&self, t: usize) -> &Prediction {
        &self.steps[t - 1].predicted
    }

    /// Final filtered state `z_{T|T}`.
    pub fn last(&self) -> &StateMoments {
        self.filtered(self.len())
    }
}

/// `z_{0|0} = (mu0, mu0)`, `Sigma(z_0|0) = diag(Sigma_0, Sigma_0)`.
pub fn init_filter(params: &ModelParams) -> StateMoments {
    let mean = Vector4::new(params.mu0[0], params.mu0[1], params.mu0[0], params.mu0[1]);
    let mut cov = Matrix4::zeros();
    cov.fixed_view_mut::<2, 2>(0, 0).copy_from(&params.sigma0);
    cov.fixed_view_mut::<2, 2>(2, 2).copy_from(&params.sigma0);
    StateMoments { mean, cov }
}

/// State transition of the moments: `A z + a`, `A Sigma A' + Sigma_eta`.
pub fn propagate(state: &StateMoments, params: &ModelParams) -> StateMoments {
    let a = transition_matrix();
    StateMoments {
        mean: a * state.mean + transition_intercept(params),
        cov: symmetrize(&(a * state.cov * a.transpose() + state_noise(params))),
    }
}

/// Prediction step for period `t`.
pub fn predict_step(
    state: &StateMoments,
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    intercept: &Vector2<f64>,
    t: usize,
) -> Prediction {
    let psi = measurement_matrix(&schedule.period(t).g);
    let state = propagate(state, params);
    let b_mean = psi * state.mean + intercept;
    let b_cov = symmetrize(&(psi * state.cov * psi.transpose() + params.sigma_u));
    Prediction {
        period: t,
        state,
        b_mean,
        b_cov,
        psi,
    }
}

/// Correction step. Returns the gain, filtered moments and the log-density
/// of the observation under the prediction.
pub fn correct_step(predicted: &Prediction, observation: &Vector2<f64>) -> Result<FilterStep> {
    let t = predicted.period;
    if !linalg::is_finite(observation) {
        return Err(Error::InvalidArgument(format!(
            "observation at period {t} is not finite"
        )));
    }
    let chol = linalg::spd_inverse2(&predicted.b_cov, INNOVATION_RCOND).zip(predicted.b_cov.cholesky());
    let (inv, chol) = chol.ok_or(Error::IllConditionedInnovation { period: t })?;
    let p = &predicted.state.cov;
    let gain = p * predicted.psi.transpose() * inv;
    let e = observation - predicted.b_mean;
    let mean = predicted.state.mean + gain * e;
    let cov = symmetrize(&(p - gain * predicted.b_cov * gain.transpose()));
    let l = chol.l();
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    let loglik = -LN_2PI - 0.5 * log_det - 0.5 * e.dot(&(inv * e));
    Ok(FilterStep {
        predicted: *predicted,
        gain,
        filtered: StateMoments { mean, cov },
        loglik,
    })
}

/// Forward pass over `observations` (`b_1..b_T`) with the given intercepts
/// (`c_t` or the risk-neutral `c~_t`).
pub fn run_filter(
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    observations: &[Vector2<f64>],
    intercepts: &[Vector2<f64>],
) -> Result<FilterOutput> {
    let n = observations.len();
    if intercepts.len() < n || schedule.horizon() < n {
        return Err(Error::InvalidArgument(format!(
            "{n} observations but {} intercepts and a schedule of {} periods",
            intercepts.len(),
            schedule.horizon()
        )));
    }
    let initial = init_filter(params);
    let mut state = initial;
    let mut steps = Vec::with_capacity(n);
    for t in 1..=n {
        let pred = predict_step(&state, params, schedule, &intercepts[t - 1], t);
        let step = correct_step(&pred, &observations[t - 1])?;
        state = step.filtered;
        steps.push(step);
    }
    let loglik = steps.iter().map(|s| s.loglik).sum();
    Ok(FilterOutput { initial, steps, loglik })
}

/// Filter with intercepts taken from the schedule under `measure`.
pub fn run_filter_measure(
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    observations: &[Vector2<f64>],
    measure: Measure,
) -> Result<FilterOutput> {
    let intercepts = schedule.intercepts(params, measure);
    run_filter(params, schedule, observations, &intercepts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherOutput {
    /// Smoothed moments for t = 0..T (`smoothed[t]`).
    pub smoothed: Vec<StateMoments>,
    /// Smoother gains `S_t` for t = 0..T-1.
    pub gains: Vec<Matrix4<f64>>,
    /// `Sigma(z_t, z_{t+1} | T)` for t = 0..T-1.
    pub cross: Vec<Matrix4<f64>>,
}

impl SmootherOutput {
    /// Smoothed log multipliers `m_{t|T}` for t = 0..T.
    pub fn multipliers(&self) -> Vec<Vector2<f64>> {
        self.smoothed.iter().map(|s| top(&s.mean)).collect()
    }
}

/// Smoother gain `S_t = Sigma(z_t|t) A' Sigma(z_{t+1}|t)^{-1}`.
///
/// `Sigma(z_{t+1}|t) = [[P + Sigma_v, P], [P, P]]` with `P` the current
/// multiplier block of `Sigma(z_t|t)`, so the gain is `[0, Sigma(z_t|t) E' P^+]`.
/// Only `P` is inverted, with a pseudo-inverse when it is singular.
pub fn smoother_gain(filtered_cov: &Matrix4<f64>) -> Matrix4<f64> {
    let p = top_left(filtered_cov);
    let p_inv = linalg::pinv_sym2(&p, SMOOTHER_PINV_TOL);
    let left: Matrix4x2 = filtered_cov.fixed_view::<4, 2>(0, 0).into_owned();
    let mut s = Matrix4::zeros();
    s.fixed_view_mut::<4, 2>(0, 2).copy_from(&(left * p_inv));
    s
}

/// Backward recursion for t = T-1..0.
pub fn smooth(filter: &FilterOutput) -> SmootherOutput {
    let n = filter.len();
    let mut smoothed = vec![*filter.filtered(n); n + 1];
    let mut gains = vec![Matrix4::zeros(); n];
    let mut cross = vec![Matrix4::zeros(); n];
    for t in (0..n).rev() {
        let f = filter.filtered(t);
        let pred = &filter.predicted(t + 1).state;
        let next = smoothed[t + 1];
        let s = smoother_gain(&f.cov);
        let mean = f.mean + s * (next.mean - pred.mean);
        let cov = symmetrize(&(f.cov + s * (next.cov - pred.cov) * s.transpose()));
        smoothed[t] = StateMoments { mean, cov };
        gains[t] = s;
        cross[t] = s * next.cov;
    }
    SmootherOutput { smoothed, gains, cross }
}

/// Forecast moments for one future period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub period: usize,
    pub state: StateMoments,
    pub b_mean: Vector2<f64>,
    pub b_cov: Matrix2<f64>,
    /// `E[ln B_t | F_T]`.
    pub log_book_mean: Vector2<f64>,
}

/// Forecasts periods T+1..=H from the last filtered state.
///
/// `intercepts[t-1]` and the schedule must cover period `H`; `log_book_T` is
/// `ln B_T`.
pub fn forecast(
    filter: &FilterOutput,
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    intercepts: &[Vector2<f64>],
    log_book_t: &Vector2<f64>,
    horizon: usize,
) -> Result<Vec<ForecastStep>> {
    let n = filter.len();
    if horizon <= n || schedule.horizon() < horizon || intercepts.len() < horizon {
        return Err(Error::InvalidArgument(format!(
            "forecast horizon {horizon} must exceed T = {n} and be covered by the payout schedule ({} periods)",
            schedule.horizon().min(intercepts.len())
        )));
    }
    let mut state = *filter.last();
    let mut log_book = *log_book_t;
    let mut out = Vec::with_capacity(horizon - n);
    for t in n + 1..=horizon {
        let pred = predict_step(&state, params, schedule, &intercepts[t - 1], t);
        state = pred.state;
        log_book += pred.b_mean;
        out.push(ForecastStep {
            period: t,
            state,
            b_mean: pred.b_mean,
            b_cov: pred.b_cov,
            log_book_mean: log_book,
        });
    }
    Ok(out)
}
