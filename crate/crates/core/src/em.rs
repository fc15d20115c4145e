//! EM estimation of `(k, mu0, phi, Sigma_u, Sigma_v, Sigma_0)`.
//!
//! The E-step runs the filter and smoother once per iteration; the smoothed
//! joint moments of `z_t = (m_t, m_{t-1})` are all the M-step needs. Because
//! `G_t` and `h_t` depend on the parameters, two M-step variants exist:
//!
//! - [`MStepMode::FrozenSchedule`]: the linearization schedule is held at the
//!   E-step parameters, giving closed-form updates (generalized EM).
//! - [`MStepMode::ScheduleAware`]: the schedule follows the parameters and
//!   the full first-order conditions, including the `d_t` and `Z_t` terms,
//!   are solved by block fixed-point iteration.

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{LinearizationSchedule, Measure, ModelParams, ObservedSeries};
use crate::state_space::{self, measurement_matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub type Vector6 = SMatrix<f64, 6, 1>;

/// Parameter-free smoothed moments of the state plus the data they condition on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub growth: Vec<Vector2<f64>>,
    pub payout_ratios: Vec<Vector2<f64>>,
    /// `z_{t|T}` for t = 0..T.
    pub mean: Vec<Vector4<f64>>,
    /// `Sigma(z_t|T)` for t = 0..T.
    pub cov: Vec<Matrix4<f64>>,
    /// `Sigma(z_t, z_{t+1}|T)` for t = 0..T-1.
    pub cross: Vec<Matrix4<f64>>,
    /// Observed-data log-likelihood at the E-step parameters.
    pub loglik: f64,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.growth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.growth.is_empty()
    }

    /// `m_{t|T}`.
    pub fn multiplier(&self, t: usize) -> Vector2<f64> {
        self.mean[t].fixed_rows::<2>(0).into_owned()
    }

    /// `Var(m_t | F_T)`.
    pub fn multiplier_cov(&self, t: usize) -> Matrix2<f64> {
        self.cov[t].fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn multipliers(&self) -> Vec<Vector2<f64>> {
        (0..self.mean.len()).map(|t| self.multiplier(t)).collect()
    }
}

/// Smoothed residual statistics of one period at given parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodStats {
    /// `u_{t|T}`.
    pub u: Vector2<f64>,
    /// `u_{t|T}` without the `-G_t k` term.
    pub u_k: Vector2<f64>,
    /// `v_{t|T}`.
    pub v: Vector2<f64>,
    /// `d_{t|T} = G_t (G_t - I)(m_{t-1|T} - mu0 - (t-1) phi)`.
    pub d: Vector2<f64>,
    /// `Z_t = Cov(d_t, u_t | F_T)`.
    pub z: Matrix2<f64>,
    pub uu: Matrix2<f64>,
    pub vv: Matrix2<f64>,
    pub g: Vector2<f64>,
}

impl PeriodStats {
    /// `E[d_t u_t' | F_T]`.
    pub fn du(&self) -> Matrix2<f64> {
        self.z + self.d * self.u.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedStats {
    pub periods: Vec<PeriodStats>,
    pub m0: Vector2<f64>,
    pub p0: Matrix2<f64>,
    pub m_last: Vector2<f64>,
}

/// Evaluates the residual statistics of `posterior` at `params` with the
/// given schedule.
pub fn smoothed_stats(posterior: &Posterior, params: &ModelParams, schedule: &LinearizationSchedule) -> SmoothedStats {
    let diff = {
        let mut m = SMatrix::<f64, 2, 4>::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&Matrix2::identity());
        m.fixed_view_mut::<2, 2>(0, 2).copy_from(&(-Matrix2::identity()));
        m
    };
    let periods = (1..=posterior.len())
        .map(|t| {
            let lin = schedule.period(t);
            let g = lin.g;
            let gm = lin.g_matrix();
            let psi = measurement_matrix(&g);
            let z = &posterior.mean[t];
            let s = &posterior.cov[t];
            let c = lin.real_intercept(params);
            let u = posterior.growth[t - 1] - psi * z - c;
            let u_k = u + gm * params.k_tilde;
            let v = diff * z - params.phi;
            let m_prev = z.fixed_rows::<2>(2).into_owned();
            let dfac = gm * (gm - Matrix2::identity());
            let d = dfac * (m_prev - params.mean_log_multiplier(t - 1));
            let var_prev = s.fixed_view::<2, 2>(2, 2).into_owned();
            let cov_prev_cur = s.fixed_view::<2, 2>(2, 0).into_owned();
            // Cov(m_{t-1}, u_t) = Cov(m_{t-1}, m_t) - Var(m_{t-1}) G_t
            let zc = dfac * (cov_prev_cur - var_prev * gm);
            PeriodStats {
                u,
                u_k,
                v,
                d,
                z: zc,
                uu: symmetrize(&(u * u.transpose() + psi * s * psi.transpose())),
                vv: symmetrize(&(v * v.transpose() + diff * s * diff.transpose())),
                g,
            }
        })
        .collect();
    SmoothedStats {
        periods,
        m0: posterior.multiplier(0),
        p0: posterior.multiplier_cov(0),
        m_last: posterior.multiplier(posterior.len()),
    }
}

/// Filter and smoother under real-measure intercepts.
pub fn e_step(params: &ModelParams, series: &ObservedSeries, schedule: &LinearizationSchedule) -> Result<Posterior> {
    let filter = state_space::run_filter_measure(params, schedule, &series.growth, Measure::Real)?;
    let smoother = state_space::smooth(&filter);
    Ok(Posterior {
        growth: series.growth.clone(),
        payout_ratios: series.payout_ratios.clone(),
        mean: smoother.smoothed.iter().map(|s| s.mean).collect(),
        cov: smoother.smoothed.iter().map(|s| s.cov).collect(),
        cross: smoother.cross,
        loglik: filter.loglik,
    })
}

/// `-(n/2) ln 2 pi - (1/2)(ln|S| + tr(S^{-1} Q))` summed over `count` terms
/// sharing `S`. An exactly zero `S` marks a deterministic block and
/// contributes nothing.
fn gaussian_block(cov: &Matrix2<f64>, second_moment: &Matrix2<f64>, count: usize, what: &str) -> Result<f64> {
    if cov.iter().all(|x| *x == 0.0) {
        return Ok(0.0);
    }
    let chol = symmetrize(cov)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite { what: what.into() })?;
    let l = chol.l();
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    let inv = chol.inverse();
    let n = count as f64;
    Ok(-n * LN_2PI - 0.5 * n * log_det - 0.5 * (inv * second_moment).trace())
}

/// Expected complete-data log-likelihood `Lambda(theta | F_T)` with the
/// schedule held fixed.
pub fn expected_complete_loglik(
    params: &ModelParams,
    posterior: &Posterior,
    schedule: &LinearizationSchedule,
) -> Result<f64> {
    let stats = smoothed_stats(posterior, params, schedule);
    complete_loglik_from_stats(params, &stats)
}

fn complete_loglik_from_stats(params: &ModelParams, stats: &SmoothedStats) -> Result<f64> {
    let e0 = stats.m0 - params.mu0;
    let q0 = stats.p0 + e0 * e0.transpose();
    let quu = stats.periods.iter().fold(Matrix2::zeros(), |a, p| a + p.uu);
    let qvv = stats.periods.iter().fold(Matrix2::zeros(), |a, p| a + p.vv);
    let n = stats.periods.len();
    Ok(gaussian_block(&params.sigma0, &q0, 1, "sigma0")?
        + gaussian_block(&params.sigma_v, &qvv, n, "sigma_v")?
        + gaussian_block(&params.sigma_u, &quu, n, "sigma_u")?)
}

/// `Lambda` with the schedule rebuilt from `params`.
pub fn expected_complete_loglik_refreshed(params: &ModelParams, posterior: &Posterior) -> Result<f64> {
    let schedule = LinearizationSchedule::build(params, &posterior.payout_ratios)?;
    expected_complete_loglik(params, posterior, &schedule)
}

/// How the M-step treats the parameter dependence of `G_t`, `h_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MStepMode {
    #[default]
    FrozenSchedule,
    ScheduleAware,
}

fn inverse_or(what: &str, m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    linalg::spd_inverse2(m, 1e-14).ok_or_else(|| Error::NotPositiveDefinite { what: what.into() })
}

/// Gradient of `Lambda` with respect to `(k, mu0, phi)`.
///
/// In frozen mode `G_t`, `h_t` are taken from `schedule`; in schedule-aware
/// mode the schedule is rebuilt from `params` and the `d_t`, `Z_t` terms
/// enter.
pub fn gradient(
    params: &ModelParams,
    posterior: &Posterior,
    schedule: &LinearizationSchedule,
    mode: MStepMode,
) -> Result<Vector6> {
    let rebuilt;
    let sched = match mode {
        MStepMode::FrozenSchedule => schedule,
        MStepMode::ScheduleAware => {
            rebuilt = LinearizationSchedule::build(params, &posterior.payout_ratios)?;
            &rebuilt
        }
    };
    let stats = smoothed_stats(posterior, params, sched);
    let aware = mode == MStepMode::ScheduleAware;
    let m = inverse_or("sigma_u", &params.sigma_u)?;
    let mut dk = Vector2::zeros();
    let mut tau_sum = Vector2::zeros();
    let mut tau_weighted = Vector2::zeros();
    let mut v_sum = Vector2::zeros();
    for (i, p) in stats.periods.iter().enumerate() {
        let mu = m * p.u;
        dk += p.g.component_mul(&mu);
        if aware {
            let tau = linalg::diag_vec(&(p.du() * m));
            dk -= tau;
            tau_sum += tau;
            tau_weighted += tau * i as f64;
        }
        v_sum += p.v;
    }
    let dmu0 = inverse_or("sigma0", &params.sigma0)? * (stats.m0 - params.mu0) - tau_sum;
    let dphi = inverse_or("sigma_v", &params.sigma_v)? * v_sum - tau_weighted;
    Ok(Vector6::new(dk[0], dk[1], dmu0[0], dmu0[1], dphi[0], dphi[1]))
}

/// Tolerances of the inner M-step iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStepOptions {
    pub mode: MStepMode,
    pub max_inner: usize,
    pub inner_tol: f64,
}

impl Default for MStepOptions {
    fn default() -> Self {
        Self {
            mode: MStepMode::FrozenSchedule,
            max_inner: 10_000,
            inner_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStepOutput {
    pub params: ModelParams,
    pub inner_iterations: usize,
    /// Degeneracies encountered (zero covariance estimates, weak identification).
    pub warnings: Vec<String>,
}

fn max_change(a: &ModelParams, b: &ModelParams) -> f64 {
    [
        (a.k_tilde - b.k_tilde).amax(),
        (a.mu0 - b.mu0).amax(),
        (a.phi - b.phi).amax(),
        (a.sigma_u - b.sigma_u).amax(),
        (a.sigma_v - b.sigma_v).amax(),
        (a.sigma0 - b.sigma0).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// GLS weight `Sigma_u^{-1}`, falling back to the identity when the current
/// estimate is singular.
fn gls_weight(sigma_u: &Matrix2<f64>, warnings: &mut Vec<String>) -> Matrix2<f64> {
    match linalg::spd_inverse2(sigma_u, 1e-14) {
        Some(m) => m,
        None => {
            let msg = "sigma_u estimate is singular; required returns use unit weights".to_string();
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
            Matrix2::identity()
        }
    }
}

fn solve_normal(a: &Matrix2<f64>, rhs: &Vector2<f64>) -> Result<Vector2<f64>> {
    let scale = a.amax();
    let det = a.determinant();
    if !(scale > 0.0) || det.abs() <= 1e-14 * scale * scale || !det.is_finite() {
        return Err(Error::DegenerateDesign(format!(
            "normal-equation matrix for the required returns is singular (det {det:e})"
        )));
    }
    a.lu()
        .solve(rhs)
        .ok_or_else(|| Error::DegenerateDesign("normal-equation solve failed".into()))
}

fn covariance_updates(params: &mut ModelParams, stats: &SmoothedStats, with_shift: bool) {
    let n = stats.periods.len() as f64;
    params.sigma_u = symmetrize(&(stats.periods.iter().fold(Matrix2::zeros(), |a, p| a + p.uu) / n));
    params.sigma_v = symmetrize(&(stats.periods.iter().fold(Matrix2::zeros(), |a, p| a + p.vv) / n));
    let e0 = stats.m0 - params.mu0;
    params.sigma0 = if with_shift {
        symmetrize(&(stats.p0 + e0 * e0.transpose()))
    } else {
        stats.p0
    };
}

/// One M-step from the posterior computed at `current`.
pub fn m_step(
    posterior: &Posterior,
    schedule: &LinearizationSchedule,
    current: &ModelParams,
    options: &MStepOptions,
) -> Result<MStepOutput> {
    let mut warnings = Vec::new();
    if schedule.is_nearly_unit(1e-8) {
        warnings.push("payouts are negligible; required returns are weakly identified".into());
    }
    let n = posterior.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let mut p = current.clone();
    let mut iterations = 0;
    match options.mode {
        MStepMode::FrozenSchedule => {
            p.mu0 = posterior.multiplier(0);
            p.phi = (posterior.multiplier(n) - posterior.multiplier(0)) / n as f64;
            for it in 0..options.max_inner.max(1) {
                iterations = it + 1;
                let before = p.clone();
                let stats = smoothed_stats(posterior, &p, schedule);
                let w = gls_weight(&p.sigma_u, &mut warnings);
                let mut a = Matrix2::zeros();
                let mut rhs = Vector2::zeros();
                for s in &stats.periods {
                    let gm = Matrix2::from_diagonal(&s.g);
                    a += gm * w * gm;
                    rhs += gm * w * s.u_k;
                }
                p.k_tilde = solve_normal(&a, &rhs)?;
                let stats = smoothed_stats(posterior, &p, schedule);
                covariance_updates(&mut p, &stats, false);
                if max_change(&before, &p) < options.inner_tol {
                    break;
                }
            }
        }
        MStepMode::ScheduleAware => {
            for it in 0..options.max_inner.max(1) {
                iterations = it + 1;
                let before = p.clone();

                let sched = LinearizationSchedule::build(&p, &posterior.payout_ratios)?;
                let stats = smoothed_stats(posterior, &p, &sched);
                let w = gls_weight(&p.sigma_u, &mut warnings);
                let mut a = Matrix2::zeros();
                let mut rhs = Vector2::zeros();
                for s in &stats.periods {
                    let dg = Matrix2::from_diagonal(&(s.d - s.g));
                    a += dg * w * Matrix2::from_diagonal(&s.g);
                    rhs += linalg::diag_vec(&(w * s.z.transpose())) + dg * w * s.u_k;
                }
                p.k_tilde = solve_normal(&a, &rhs)?;

                let sched = LinearizationSchedule::build(&p, &posterior.payout_ratios)?;
                let stats = smoothed_stats(posterior, &p, &sched);
                let w = gls_weight(&p.sigma_u, &mut warnings);
                let mut tau_sum = Vector2::zeros();
                let mut tau_weighted = Vector2::zeros();
                for (i, s) in stats.periods.iter().enumerate() {
                    let tau = linalg::diag_vec(&(s.du() * w));
                    tau_sum += tau;
                    tau_weighted += tau * i as f64;
                }
                p.mu0 = stats.m0 - p.sigma0 * tau_sum;
                p.phi = (stats.m_last - stats.m0 - p.sigma_v * tau_weighted) / n as f64;

                let sched = LinearizationSchedule::build(&p, &posterior.payout_ratios)?;
                let stats = smoothed_stats(posterior, &p, &sched);
                covariance_updates(&mut p, &stats, true);
                if max_change(&before, &p) < options.inner_tol {
                    break;
                }
                if it + 1 == options.max_inner {
                    return Err(Error::NonConvergence(format!(
                        "schedule-aware M-step did not settle in {} iterations",
                        options.max_inner
                    )));
                }
            }
        }
    }
    for (name, m) in [("sigma_u", &p.sigma_u), ("sigma_v", &p.sigma_v), ("sigma0", &p.sigma0)] {
        if m.iter().all(|x| *x == 0.0) {
            warnings.push(format!("{name} estimate is zero (degenerate)"));
        }
    }
    Ok(MStepOutput {
        params: p,
        inner_iterations: iterations,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the largest absolute parameter change falls below `tol`.
    pub tol: f64,
    pub m_step: MStepOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            m_step: MStepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub iteration: usize,
    /// Parameters after the M-step.
    pub params: ModelParams,
    /// Observed-data log-likelihood at the E-step parameters.
    pub loglik: f64,
    /// `Lambda` at the E-step parameters (schedule of the E-step).
    pub lambda_before: f64,
    /// `Lambda` at the M-step output, same posterior and schedule.
    pub lambda_after: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The iteration stopped at the last feasible parameters.
    Aborted {
        diagnostic: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub iterations: Vec<EmIteration>,
    pub termination: Termination,
    /// Observed-data log-likelihood at the returned parameters, if feasible.
    pub final_loglik: Option<f64>,
    pub warnings: Vec<String>,
}

/// Runs EM from `init`.
pub fn em_fit(series: &ObservedSeries, init: &ModelParams, options: &EmOptions) -> Result<(ModelParams, EmTrace)> {
    init.validate()?;
    LinearizationSchedule::build(init, &series.payout_ratios)?;
    let mut params = init.clone();
    let mut iterations = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut termination = Termination::MaxIterations;
    for it in 1..=options.max_iter {
        let step = (|| -> Result<(EmIteration, MStepOutput)> {
            let schedule = LinearizationSchedule::build(&params, &series.payout_ratios)?;
            let posterior = e_step(&params, series, &schedule)?;
            let lambda_before = expected_complete_loglik(&params, &posterior, &schedule)?;
            let out = m_step(&posterior, &schedule, &params, &options.m_step)?;
            let lambda_after = expected_complete_loglik(&out.params, &posterior, &schedule)?;
            LinearizationSchedule::build(&out.params, &series.payout_ratios)?;
            Ok((
                EmIteration {
                    iteration: it,
                    params: out.params.clone(),
                    loglik: posterior.loglik,
                    lambda_before,
                    lambda_after,
                    max_change: max_change(&params, &out.params),
                },
                out,
            ))
        })();
        match step {
            Ok((record, out)) => {
                for w in out.warnings {
                    if !warnings.contains(&w) {
                        log::warn!("{w}");
                        warnings.push(w);
                    }
                }
                let change = record.max_change;
                params = out.params;
                log::debug!("em iteration {it}: loglik {} change {change:e}", record.loglik);
                iterations.push(record);
                if change < options.tol {
                    termination = Termination::Converged;
                    break;
                }
            }
            Err(e) => {
                log::warn!("em iteration {it} aborted: {e}");
                termination = Termination::Aborted {
                    diagnostic: e.to_string(),
                };
                break;
            }
        }
    }
    let final_loglik = LinearizationSchedule::build(&params, &series.payout_ratios)
        .and_then(|s| state_space::run_filter_measure(&params, &s, &series.growth, Measure::Real))
        .map(|f| f.loglik)
        .ok();
    Ok((
        params,
        EmTrace {
            iterations,
            termination,
            final_loglik,
            warnings,
        },
    ))
}

/// `V_{t|T} = exp(m_{t|T}) * B_t` componentwise for t = 0..T.
pub fn smoothed_market_values(multipliers: &[Vector2<f64>], series: &ObservedSeries) -> Vec<Vector2<f64>> {
    multipliers
        .iter()
        .zip(series.books())
        .map(|(m, b)| m.map(f64::exp).component_mul(&b))
        .collect()
}
