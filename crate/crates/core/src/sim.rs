//! Exact simulation of the model, a brute-force Gaussian conditioning oracle
//! for the filter and smoother, and Monte Carlo estimators for prices and
//! default probabilities.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{exact_log_asset, AssetLinearization, LinearizationSchedule, Measure, ModelParams};

/// Largest observation count accepted by [`conditioning_oracle`].
pub const ORACLE_MAX_T: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Last simulated period (absolute).
    pub horizon: usize,
    pub seed: u64,
    pub measure: Measure,
    /// Pair each path with its sign-flipped twin.
    pub antithetic: bool,
}

/// Where the simulation starts: period, known log book values and the
/// distribution of the log multiplier at that period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub period: usize,
    pub log_book: Vector2<f64>,
    pub m_mean: Vector2<f64>,
    pub m_cov: Matrix2<f64>,
}

impl StartState {
    /// `m_0 ~ N(mu0, Sigma_0)` at period zero.
    pub fn prior(params: &ModelParams, initial_books: &Vector2<f64>) -> Self {
        Self {
            period: 0,
            log_book: initial_books.map(f64::ln),
            m_mean: params.mu0,
            m_cov: params.sigma0,
        }
    }

    /// Known multiplier `m_t` at period `t`.
    pub fn fixed(period: usize, log_book: Vector2<f64>, m: Vector2<f64>) -> Self {
        Self {
            period,
            log_book,
            m_mean: m,
            m_cov: Matrix2::zeros(),
        }
    }
}

/// One simulated path over periods `start..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    /// `m_t`.
    pub m: Vec<Vector2<f64>>,
    /// `b_t` (the entry at the start period is zero).
    pub b: Vec<Vector2<f64>>,
    /// `ln B_t`.
    pub log_book: Vec<Vector2<f64>>,
}

impl SimPath {
    /// Log market values `V_t = m_t + ln B_t` at offset `k` from the start.
    pub fn log_value(&self, k: usize) -> Vector2<f64> {
        self.m[k] + self.log_book[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPanel {
    pub start: usize,
    pub horizon: usize,
    pub measure: Measure,
    pub antithetic: bool,
    pub paths: Vec<SimPath>,
}

impl SimulatedPanel {
    fn offset(&self, t: usize) -> usize {
        assert!(
            t >= self.start && t <= self.horizon,
            "period {t} outside {}..={}",
            self.start,
            self.horizon
        );
        t - self.start
    }

    /// `V_t` of every path.
    pub fn log_values(&self, t: usize) -> Vec<Vector2<f64>> {
        let k = self.offset(t);
        self.paths.iter().map(|p| p.log_value(k)).collect()
    }

    /// Exact `ln(V^e_t + V^l_t)` of every path.
    pub fn exact_log_assets(&self, t: usize) -> Vec<f64> {
        self.log_values(t).iter().map(exact_log_asset).collect()
    }

    /// Linearised log asset value of every path.
    pub fn linearized_log_assets(&self, t: usize, lin: &AssetLinearization) -> Vec<f64> {
        self.log_values(t).iter().map(|v| lin.approximate(v)).collect()
    }

    pub fn multipliers(&self, t: usize) -> Vec<Vector2<f64>> {
        let k = self.offset(t);
        self.paths.iter().map(|p| p.m[k]).collect()
    }
}

fn draw2(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Simulates the exact recursions
/// `m_t = phi + m_{t-1} + v_t`, `b_t = -m_t + G_t m_{t-1} + c_t + u_t`
/// with `c_t` or `c~_t` depending on the measure.
pub fn simulate_panel(
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    start: &StartState,
    config: &SimConfig,
) -> Result<SimulatedPanel> {
    params.validate()?;
    if config.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least one".into()));
    }
    if config.antithetic && !config.n_paths.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "antithetic sampling needs an even path count".into(),
        ));
    }
    if config.horizon < start.period || schedule.horizon() < config.horizon {
        return Err(Error::InvalidArgument(format!(
            "simulation horizon {} must lie in {}..={}",
            config.horizon,
            start.period,
            schedule.horizon()
        )));
    }
    let f0 = linalg::psd_factor(&start.m_cov);
    let fu = linalg::psd_factor(&params.sigma_u);
    let fv = linalg::psd_factor(&params.sigma_v);
    let intercepts: Vec<Vector2<f64>> = schedule.intercepts(params, config.measure);
    let steps = config.horizon - start.period;

    let simulate = |stream: u64, sign: f64| -> SimPath {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let mut m = start.m_mean + f0 * draw2(&mut rng) * sign;
        let mut lb = start.log_book;
        let mut path = SimPath {
            m: Vec::with_capacity(steps + 1),
            b: Vec::with_capacity(steps + 1),
            log_book: Vec::with_capacity(steps + 1),
        };
        path.m.push(m);
        path.b.push(Vector2::zeros());
        path.log_book.push(lb);
        for t in start.period + 1..=config.horizon {
            let v = fv * draw2(&mut rng) * sign;
            let u = fu * draw2(&mut rng) * sign;
            let m_next = params.phi + m + v;
            let g = schedule.period(t).g;
            let b = -m_next + g.component_mul(&m) + intercepts[t - 1] + u;
            m = m_next;
            lb += b;
            path.m.push(m);
            path.b.push(b);
            path.log_book.push(lb);
        }
        path
    };

    let paths: Vec<SimPath> = if config.antithetic {
        (0..config.n_paths / 2)
            .into_par_iter()
            .flat_map_iter(|i| [simulate(i as u64, 1.0), simulate(i as u64, -1.0)])
            .collect()
    } else {
        (0..config.n_paths)
            .into_par_iter()
            .map(|i| simulate(i as u64, 1.0))
            .collect()
    };
    Ok(SimulatedPanel {
        start: start.period,
        horizon: config.horizon,
        measure: config.measure,
        antithetic: config.antithetic,
        paths,
    })
}

/// Pairwise summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error of a sample. With `paired`, consecutive entries
/// are averaged first (antithetic pairs).
pub fn mean_and_se(xs: &[f64], paired: bool) -> (f64, f64) {
    let owned;
    let xs = if paired {
        owned = xs.chunks(2).map(|c| 0.5 * (c[0] + c[c.len() - 1])).collect::<Vec<_>>();
        &owned[..]
    } else {
        xs
    };
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of the estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    /// `|value - estimate| / se`; infinite when the SE vanishes and the
    /// values differ.
    pub fn z_score(&self, value: f64) -> f64 {
        let diff = (value - self.estimate).abs();
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff <= 1e-12 * value.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Discounted call and put payoffs on `exp(log_assets)`.
pub fn mc_option_price(
    log_assets: &[f64],
    strike: f64,
    tau: f64,
    r_tilde: f64,
    paired: bool,
) -> (McEstimate, McEstimate) {
    let disc = (-tau * r_tilde).exp();
    let calls: Vec<f64> = log_assets.iter().map(|x| disc * (x.exp() - strike).max(0.0)).collect();
    let puts: Vec<f64> = log_assets.iter().map(|x| disc * (strike - x.exp()).max(0.0)).collect();
    let (c, cse) = mean_and_se(&calls, paired);
    let (p, pse) = mean_and_se(&puts, paired);
    let n = log_assets.len();
    (
        McEstimate {
            estimate: c,
            std_error: cse,
            n,
        },
        McEstimate {
            estimate: p,
            std_error: pse,
            n,
        },
    )
}

/// Frequency of `log_asset <= ln threshold` with binomial standard error.
pub fn mc_default_probability(log_assets: &[f64], threshold: f64) -> McEstimate {
    let ln_l = threshold.ln();
    let n = log_assets.len();
    let hits = log_assets.iter().filter(|x| **x <= ln_l).count();
    let p = hits as f64 / n as f64;
    McEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationError {
    pub period: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Absolute gap between exact and linearised log asset values per period.
/// `lins[k]` is the linearization used at period `start + k`.
pub fn linearization_error_report(panel: &SimulatedPanel, lins: &[AssetLinearization]) -> Vec<LinearizationError> {
    (panel.start..=panel.horizon)
        .zip(lins)
        .map(|(t, lin)| {
            let errs: Vec<f64> = panel
                .log_values(t)
                .iter()
                .map(|v| (lin.approximate(v) - exact_log_asset(v)).abs())
                .collect();
            LinearizationError {
                period: t,
                max_abs: errs.iter().copied().fold(0.0, f64::max),
                mean_abs: pairwise_sum(&errs) / errs.len() as f64,
            }
        })
        .collect()
}

/// Mean and covariance of a multivariate normal conditioned on observing
/// the coordinates `obs_idx` at `obs_val`, together with the marginal log
/// density of the observation.
pub fn condition_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs_idx: &[usize],
    obs_val: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let n = mean.len();
    let k = obs_idx.len();
    if k == 0 {
        return Ok((mean.clone(), cov.clone(), 0.0));
    }
    let s_oo = DMatrix::from_fn(k, k, |i, j| cov[(obs_idx[i], obs_idx[j])]);
    let s_xo = DMatrix::from_fn(n, k, |i, j| cov[(i, obs_idx[j])]);
    let e = DVector::from_fn(k, |i, _| obs_val[i] - mean[obs_idx[i]]);
    let chol = s_oo.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: "observation block".into(),
    })?;
    let alpha = chol.solve(&e);
    let post_mean = mean + &s_xo * &alpha;
    let post_cov = cov - &s_xo * chol.solve(&s_xo.transpose());
    let post_cov = (&post_cov + post_cov.transpose()) * 0.5;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let loglik = -0.5 * (k as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * e.dot(&alpha);
    Ok((post_mean, post_cov, loglik))
}

/// Dense joint Gaussian of `(m_{-1}, m_0, ..., m_H, b_1, ..., b_H)`.
///
/// `m_{-1}` is an independent copy of the prior used as the lagged block of
/// the initial state.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub horizon: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl JointGaussian {
    /// Builds the joint law from the linear map of `(m_{-1}, m_0, v, u)`.
    pub fn new(
        params: &ModelParams,
        schedule: &LinearizationSchedule,
        intercepts: &[Vector2<f64>],
        horizon: usize,
    ) -> Self {
        let h = horizon;
        let n_base = 4 + 4 * h;
        let n_out = 2 * (h + 2) + 2 * h;
        let mut base_cov = DMatrix::zeros(n_base, n_base);
        let put = |m: &mut DMatrix<f64>, r: usize, block: &Matrix2<f64>| {
            for i in 0..2 {
                for j in 0..2 {
                    m[(r + i, r + j)] = block[(i, j)];
                }
            }
        };
        put(&mut base_cov, 0, &params.sigma0);
        put(&mut base_cov, 2, &params.sigma0);
        for s in 0..h {
            put(&mut base_cov, 4 + 2 * s, &params.sigma_v);
            put(&mut base_cov, 4 + 2 * h + 2 * s, &params.sigma_u);
        }
        // Rows of the linear map: output = F * base + f.
        let mut f = DMatrix::<f64>::zeros(n_out, n_base);
        let mut f0 = DVector::<f64>::zeros(n_out);
        let mi = |t: isize| (2 * (t + 1)) as usize;
        let bi = |t: usize| 2 * (h + 2) + 2 * (t - 1);
        for c in 0..2 {
            f[(mi(-1) + c, c)] = 1.0;
            f0[mi(-1) + c] = params.mu0[c];
            f[(mi(0) + c, 2 + c)] = 1.0;
            f0[mi(0) + c] = params.mu0[c];
        }
        for t in 1..=h {
            let (cur, prev) = (mi(t as isize), mi(t as isize - 1));
            for c in 0..2 {
                for col in 0..n_base {
                    f[(cur + c, col)] = f[(prev + c, col)];
                }
                f[(cur + c, 4 + 2 * (t - 1) + c)] += 1.0;
                f0[cur + c] = f0[prev + c] + params.phi[c];
            }
            let g = schedule.period(t).g;
            for c in 0..2 {
                let row = bi(t) + c;
                for col in 0..n_base {
                    f[(row, col)] = -f[(cur + c, col)] + g[c] * f[(prev + c, col)];
                }
                f[(row, 4 + 2 * h + 2 * (t - 1) + c)] += 1.0;
                f0[row] = -f0[cur + c] + g[c] * f0[prev + c] + intercepts[t - 1][c];
            }
        }
        let cov = &f * base_cov * f.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        Self {
            horizon: h,
            mean: f0,
            cov,
        }
    }

    /// Index of `m_t`, t >= -1.
    pub fn m_index(t: isize) -> usize {
        (2 * (t + 1)) as usize
    }

    /// Index of `b_t`, t >= 1.
    pub fn b_index(&self, t: usize) -> usize {
        2 * (self.horizon + 2) + 2 * (t - 1)
    }

    /// Conditions on `b_1..b_k`.
    pub fn given(&self, observations: &[Vector2<f64>]) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let idx: Vec<usize> = (1..=observations.len())
            .flat_map(|t| [self.b_index(t), self.b_index(t) + 1])
            .collect();
        let vals = DVector::from_iterator(idx.len(), observations.iter().flat_map(|b| [b[0], b[1]]));
        condition_gaussian(&self.mean, &self.cov, &idx, &vals)
    }
}

fn sub_vec<const N: usize>(v: &DVector<f64>, idx: &[usize; N]) -> nalgebra::SVector<f64, N> {
    nalgebra::SVector::<f64, N>::from_fn(|i, _| v[idx[i]])
}

fn sub_mat<const R: usize, const C: usize>(
    m: &DMatrix<f64>,
    rows: &[usize; R],
    cols: &[usize; C],
) -> nalgebra::SMatrix<f64, R, C> {
    nalgebra::SMatrix::<f64, R, C>::from_fn(|i, j| m[(rows[i], cols[j])])
}

fn z_index(t: usize) -> [usize; 4] {
    let a = JointGaussian::m_index(t as isize);
    let b = JointGaussian::m_index(t as isize - 1);
    [a, a + 1, b, b + 1]
}

/// Oracle moments of the state `z_t = (m_t, m_{t-1})` and observations.
#[derive(Debug, Clone)]
pub struct OracleMoments {
    /// `(z_{t|t-1}, Sigma(z_t|t-1))` for t = 1..T.
    pub predicted: Vec<(Vector4<f64>, Matrix4<f64>)>,
    /// `(b_{t|t-1}, Sigma(b_t|t-1))` for t = 1..T.
    pub b_predicted: Vec<(Vector2<f64>, Matrix2<f64>)>,
    /// t = 0..T.
    pub filtered: Vec<(Vector4<f64>, Matrix4<f64>)>,
    /// t = 0..T.
    pub smoothed: Vec<(Vector4<f64>, Matrix4<f64>)>,
    /// `Sigma(z_t, z_{t+1}|T)` for t = 0..T-1.
    pub cross: Vec<Matrix4<f64>>,
    /// `(z_{t|T}, Sigma(z_t|T))` for t = T+1..H.
    pub forecast: Vec<(Vector4<f64>, Matrix4<f64>)>,
    /// `(b_{t|T}, Sigma(b_t|T))` for t = T+1..H.
    pub b_forecast: Vec<(Vector2<f64>, Matrix2<f64>)>,
    /// `ln p(b_1..b_T)`.
    pub loglik: f64,
    /// Full posterior of the joint vector given `b_1..b_T`.
    pub posterior_mean: DVector<f64>,
    pub posterior_cov: DMatrix<f64>,
}

/// Brute-force moments by conditioning the dense joint Gaussian.
pub fn conditioning_oracle(
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    intercepts: &[Vector2<f64>],
    observations: &[Vector2<f64>],
    horizon: usize,
) -> Result<OracleMoments> {
    let n = observations.len();
    if n > ORACLE_MAX_T {
        return Err(Error::InvalidArgument(format!(
            "conditioning oracle supports at most {ORACLE_MAX_T} observations, got {n}"
        )));
    }
    if horizon < n || horizon > ORACLE_MAX_T + 4 || schedule.horizon() < horizon {
        return Err(Error::InvalidArgument(format!(
            "oracle horizon {horizon} not supported"
        )));
    }
    let joint = JointGaussian::new(params, schedule, intercepts, horizon);
    let mut predicted = Vec::with_capacity(n);
    let mut b_predicted = Vec::with_capacity(n);
    let mut filtered = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (mean, cov, _) = joint.given(&observations[..k])?;
        let zk = z_index(k);
        filtered.push((sub_vec(&mean, &zk), sub_mat(&cov, &zk, &zk)));
        if k < n {
            let zn = z_index(k + 1);
            let bn = [joint.b_index(k + 1), joint.b_index(k + 1) + 1];
            predicted.push((sub_vec(&mean, &zn), sub_mat(&cov, &zn, &zn)));
            b_predicted.push((sub_vec(&mean, &bn), sub_mat(&cov, &bn, &bn)));
        }
    }
    let (mean, cov, loglik) = joint.given(observations)?;
    let smoothed = (0..=n)
        .map(|t| {
            let z = z_index(t);
            (sub_vec(&mean, &z), sub_mat(&cov, &z, &z))
        })
        .collect();
    let cross = (0..n).map(|t| sub_mat(&cov, &z_index(t), &z_index(t + 1))).collect();
    let forecast = (n + 1..=horizon)
        .map(|t| {
            let z = z_index(t);
            (sub_vec(&mean, &z), sub_mat(&cov, &z, &z))
        })
        .collect();
    let b_forecast = (n + 1..=horizon)
        .map(|t| {
            let b = [joint.b_index(t), joint.b_index(t) + 1];
            (sub_vec(&mean, &b), sub_mat(&cov, &b, &b))
        })
        .collect();
    Ok(OracleMoments {
        predicted,
        b_predicted,
        filtered,
        smoothed,
        cross,
        forecast,
        b_forecast,
        loglik,
        posterior_mean: mean,
        posterior_cov: cov,
    })
}
