//! Risk-neutral valuation: horizon moments of the log market values, option
//! prices on the linearised asset value, equity and debt values, the default
//! threshold and default probabilities for public and private information.

use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{AssetLinearization, LinearizationSchedule, Measure, ModelParams, ObservedSeries};
use crate::state_space::{self, FilterOutput};

/// Relative tolerance of the threshold bisection.
pub const CALIBRATION_REL_TOL: f64 = 1e-10;
/// Iteration cap of the threshold bisection.
pub const CALIBRATION_MAX_ITER: usize = 200;

fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Measure-change quantities of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskNeutralPeriod {
    pub period: usize,
    /// Risk-neutral measurement intercept `c~_t`.
    pub c_tilde: Vector2<f64>,
    /// Girsanov kernel `(G_t (r i - k), D[Sigma_v] / 2)`.
    pub theta: Vector4<f64>,
    /// Convexity shift `(G_t^{-1} D[Sigma_u], D[Sigma_v]) / 2`.
    pub alpha: Vector4<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskNeutralSystem {
    pub periods: Vec<RiskNeutralPeriod>,
}

impl RiskNeutralSystem {
    pub fn intercepts(&self) -> Vec<Vector2<f64>> {
        self.periods.iter().map(|p| p.c_tilde).collect()
    }
}

pub fn build_risk_neutral(params: &ModelParams, schedule: &LinearizationSchedule) -> RiskNeutralSystem {
    let du = linalg::diag_vec(&params.sigma_u);
    let dv = linalg::diag_vec(&params.sigma_v);
    let periods = schedule
        .iter()
        .map(|p| {
            let excess = (Vector2::repeat(params.r_tilde) - params.k_tilde).component_mul(&p.g);
            let shift_u = du.component_div(&p.g) * 0.5;
            RiskNeutralPeriod {
                period: p.period,
                c_tilde: p.risk_neutral_intercept(params),
                theta: Vector4::new(excess[0], excess[1], 0.5 * dv[0], 0.5 * dv[1]),
                alpha: Vector4::new(shift_u[0], shift_u[1], 0.5 * dv[0], 0.5 * dv[1]),
            }
        })
        .collect();
    RiskNeutralSystem { periods }
}

/// Conditional moments of `V_T = ln(market values at T)` given `m_t` and
/// `ln B_t`: mean `alpha m_t + beta + ln B_t`, covariance `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMoments {
    pub t: usize,
    pub maturity: usize,
    pub alpha: Matrix2<f64>,
    /// Risk-neutral drift `beta~_{T|t}`.
    pub beta_rn: Vector2<f64>,
    /// Real-measure drift `beta_{T|t}`.
    pub beta_real: Vector2<f64>,
    pub sigma: Matrix2<f64>,
}

impl HorizonMoments {
    pub fn beta(&self, measure: Measure) -> Vector2<f64> {
        match measure {
            Measure::Real => self.beta_real,
            Measure::RiskNeutral => self.beta_rn,
        }
    }

    /// `E[V_T | m_t]` under `measure`.
    pub fn mean(&self, measure: Measure, m_t: &Vector2<f64>, log_book_t: &Vector2<f64>) -> Vector2<f64> {
        self.alpha * m_t + self.beta(measure) + log_book_t
    }

    pub fn tau(&self) -> usize {
        self.maturity - self.t
    }
}

/// Noise loading `C_i = sum_{j=i+1}^T G_j - (T - i) I` of `v_i` in `V_T`.
pub fn noise_loading(schedule: &LinearizationSchedule, i: usize, maturity: usize) -> Matrix2<f64> {
    let mut c = -Matrix2::identity() * (maturity - i) as f64;
    for j in i + 1..=maturity {
        c += schedule.period(j).g_matrix();
    }
    c
}

/// Horizon moments for origin `t` and maturity `T` (absolute periods).
pub fn horizon_moments(
    params: &ModelParams,
    schedule: &LinearizationSchedule,
    t: usize,
    maturity: usize,
) -> Result<HorizonMoments> {
    if t >= maturity {
        return Err(Error::InvalidArgument(format!(
            "maturity {maturity} must be after the origin {t}"
        )));
    }
    if schedule.horizon() < maturity {
        return Err(Error::InvalidArgument(format!(
            "payout schedule covers {} periods, maturity is {maturity}",
            schedule.horizon()
        )));
    }
    let mut alpha = -Matrix2::identity() * (maturity - t - 1) as f64;
    let mut beta_rn = Vector2::zeros();
    let mut beta_real = Vector2::zeros();
    for i in t + 1..=maturity {
        let p = schedule.period(i);
        let g = p.g_matrix();
        alpha += g;
        let drift = (g - Matrix2::identity()) * params.phi * (i - t - 1) as f64;
        beta_rn += p.risk_neutral_intercept(params) + drift;
        beta_real += p.real_intercept(params) + drift;
    }
    let mut sigma = params.sigma_u * (maturity - t) as f64;
    for i in t + 1..maturity {
        let c = noise_loading(schedule, i, maturity);
        sigma += c * params.sigma_v * c.transpose();
    }
    Ok(HorizonMoments {
        t,
        maturity,
        alpha,
        beta_rn,
        beta_real,
        sigma: linalg::symmetrize(&sigma),
    })
}

/// Normal moments of the linearised log asset value at maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetMoments {
    pub mean: f64,
    pub variance: f64,
    /// Linearization used, centred at the conditional mean of `V^e_T - V^l_T`.
    pub linearization: AssetLinearization,
}

impl AssetMoments {
    pub fn sd(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Asset moments from the mean and covariance of `V_T`.
pub fn asset_moments(mean_values: &Vector2<f64>, cov_values: &Matrix2<f64>) -> AssetMoments {
    let lin = AssetLinearization::new(mean_values[0] - mean_values[1]);
    let w = lin.weights();
    AssetMoments {
        mean: lin.approximate(mean_values),
        variance: (w.transpose() * cov_values * w)[(0, 0)].max(0.0),
        linearization: lin,
    }
}

/// Asset moments given the multiplier `m_t` itself (public information).
pub fn asset_moments_public(
    moments: &HorizonMoments,
    measure: Measure,
    m_t: &Vector2<f64>,
    log_book_t: &Vector2<f64>,
) -> AssetMoments {
    asset_moments(&moments.mean(measure, m_t, log_book_t), &moments.sigma)
}

/// Asset moments given only the filtered posterior `N(m_{t|t}, P_{t|t})`
/// (private information).
pub fn asset_moments_private(
    moments: &HorizonMoments,
    measure: Measure,
    m_filt: &Vector2<f64>,
    p_filt: &Matrix2<f64>,
    log_book_t: &Vector2<f64>,
) -> AssetMoments {
    let cov = moments.sigma + moments.alpha * p_filt * moments.alpha.transpose();
    asset_moments(&moments.mean(measure, m_filt, log_book_t), &linalg::symmetrize(&cov))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionPrices {
    pub call: f64,
    pub put: f64,
}

/// Call and put on a lognormal asset `ln V ~ N(mean, variance)` with strike
/// `strike`, discounted over `tau` periods at log rate `r_tilde`.
pub fn price_options(asset: &AssetMoments, strike: f64, tau: f64, r_tilde: f64) -> Result<OptionPrices> {
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "strike must be positive and finite, got {strike}"
        )));
    }
    let discount = (-tau * r_tilde).exp();
    let sd = asset.sd();
    let ln_l = strike.ln();
    if sd == 0.0 {
        let v = asset.mean.exp();
        return Ok(OptionPrices {
            call: discount * (v - strike).max(0.0),
            put: discount * (strike - v).max(0.0),
        });
    }
    let d1 = (asset.mean + asset.variance - ln_l) / sd;
    let d2 = d1 - sd;
    let forward = (asset.mean - tau * r_tilde + 0.5 * asset.variance).exp();
    Ok(OptionPrices {
        call: forward * std_normal_cdf(d1) - discount * strike * std_normal_cdf(d2),
        put: discount * strike * std_normal_cdf(-d2) - forward * std_normal_cdf(-d1),
    })
}

/// `(equity, debt) = (C, L e^{-tau r} - P)`.
pub fn equity_debt_values(prices: &OptionPrices, strike: f64, tau: f64, r_tilde: f64) -> (f64, f64) {
    (prices.call, strike * (-tau * r_tilde).exp() - prices.put)
}

/// `P(V^a_T <= ln L)` for `V^a_T ~ N(mean, variance)`.
pub fn default_probability(asset: &AssetMoments, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "default threshold must be positive and finite, got {threshold}"
        )));
    }
    let ln_l = threshold.ln();
    let sd = asset.sd();
    if sd == 0.0 {
        return Ok(if ln_l >= asset.mean { 1.0 } else { 0.0 });
    }
    Ok(std_normal_cdf((ln_l - asset.mean) / sd))
}

/// Solves `C(L) = target` for the strike by bisection. `C` is strictly
/// decreasing in `L` and tends to the discounted forward as `L -> 0`.
pub fn calibrate_threshold(asset: &AssetMoments, tau: f64, r_tilde: f64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target equity value must be positive and finite, got {target}"
        )));
    }
    let sup = (asset.mean - tau * r_tilde + 0.5 * asset.variance).exp();
    if target >= sup {
        return Err(Error::NoSolution(format!(
            "target equity value {target} is not below the zero-strike call value {sup}"
        )));
    }
    let call = |l: f64| price_options(asset, l, tau, r_tilde).map(|p| p.call);
    let mut hi = 1e3 * sup;
    let mut doublings = 0;
    while call(hi)? > target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 1000 || !hi.is_finite() {
            return Err(Error::NoSolution("could not bracket the threshold".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..CALIBRATION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if call(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= CALIBRATION_REL_TOL * hi {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    if hi - lo > CALIBRATION_REL_TOL * hi {
        return Err(Error::NonConvergence(format!(
            "threshold bisection did not reach tolerance in {CALIBRATION_MAX_ITER} iterations"
        )));
    }
    Ok(root)
}

/// Which information set conditions the asset distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoSet {
    Public,
    Private,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingReport {
    pub info_set: InfoSet,
    /// Origin (last observed period).
    pub t: usize,
    /// Maturity (absolute period).
    pub maturity: usize,
    pub strike: f64,
    pub call: f64,
    pub put: f64,
    pub equity_value: f64,
    pub debt_value: f64,
    /// Risk-neutral asset moments used for the prices.
    pub asset_mean: f64,
    pub asset_variance: f64,
}

/// Everything needed to value the company at the last observed period.
#[derive(Debug, Clone)]
pub struct ValuationContext {
    pub params: ModelParams,
    pub series: ObservedSeries,
    /// Schedule over `1..=T + H` for the available future payout ratios.
    pub schedule: LinearizationSchedule,
    pub filter_real: FilterOutput,
    pub filter_rn: FilterOutput,
    pub risk_neutral: RiskNeutralSystem,
}

impl ValuationContext {
    /// `future_payout_ratios[k]` is the log payout-to-book ratio of period
    /// `T + 1 + k`.
    pub fn new(params: &ModelParams, series: &ObservedSeries, future_payout_ratios: &[Vector2<f64>]) -> Result<Self> {
        params.validate()?;
        let mut ratios = series.payout_ratios.clone();
        ratios.extend_from_slice(future_payout_ratios);
        let schedule = LinearizationSchedule::build(params, &ratios)?;
        let risk_neutral = build_risk_neutral(params, &schedule);
        let real = schedule.intercepts(params, Measure::Real);
        let filter_real = state_space::run_filter(params, &schedule, &series.growth, &real)?;
        let filter_rn = state_space::run_filter(params, &schedule, &series.growth, &risk_neutral.intercepts())?;
        Ok(Self {
            params: params.clone(),
            series: series.clone(),
            schedule,
            filter_real,
            filter_rn,
            risk_neutral,
        })
    }

    /// Last observed period `T`.
    pub fn origin(&self) -> usize {
        self.series.len()
    }

    /// Longest supported horizon in periods past `T`.
    pub fn max_tau(&self) -> usize {
        self.schedule.horizon() - self.origin()
    }

    pub fn log_book(&self) -> Vector2<f64> {
        self.series.log_book(self.origin())
    }

    pub fn horizon(&self, tau: usize) -> Result<HorizonMoments> {
        if tau == 0 || tau > self.max_tau() {
            return Err(Error::InvalidArgument(format!(
                "maturity of {tau} periods is outside the supplied payout schedule (1..={})",
                self.max_tau()
            )));
        }
        horizon_moments(&self.params, &self.schedule, self.origin(), self.origin() + tau)
    }

    fn filter(&self, measure: Measure) -> &FilterOutput {
        match measure {
            Measure::Real => &self.filter_real,
            Measure::RiskNeutral => &self.filter_rn,
        }
    }

    /// Asset moments under `measure` conditioned on the corresponding filter.
    pub fn private_asset(&self, tau: usize, measure: Measure) -> Result<AssetMoments> {
        let h = self.horizon(tau)?;
        let (m, p) = self.filter(measure).last().multiplier();
        Ok(asset_moments_private(&h, measure, &m, &p, &self.log_book()))
    }

    pub fn public_asset(&self, tau: usize, measure: Measure, m_t: &Vector2<f64>) -> Result<AssetMoments> {
        let h = self.horizon(tau)?;
        Ok(asset_moments_public(&h, measure, m_t, &self.log_book()))
    }

    fn report(&self, info_set: InfoSet, tau: usize, strike: f64, asset: &AssetMoments) -> Result<PricingReport> {
        let r = self.params.r_tilde;
        let prices = price_options(asset, strike, tau as f64, r)?;
        let (equity_value, debt_value) = equity_debt_values(&prices, strike, tau as f64, r);
        Ok(PricingReport {
            info_set,
            t: self.origin(),
            maturity: self.origin() + tau,
            strike,
            call: prices.call,
            put: prices.put,
            equity_value,
            debt_value,
            asset_mean: asset.mean,
            asset_variance: asset.variance,
        })
    }

    pub fn price_private(&self, tau: usize, strike: f64) -> Result<PricingReport> {
        let asset = self.private_asset(tau, Measure::RiskNeutral)?;
        self.report(InfoSet::Private, tau, strike, &asset)
    }

    pub fn price_public(&self, tau: usize, strike: f64, m_t: &Vector2<f64>) -> Result<PricingReport> {
        let asset = self.public_asset(tau, Measure::RiskNeutral, m_t)?;
        self.report(InfoSet::Public, tau, strike, &asset)
    }

    pub fn default_probability_private(&self, tau: usize, threshold: f64) -> Result<f64> {
        default_probability(&self.private_asset(tau, Measure::Real)?, threshold)
    }

    pub fn default_probability_public(&self, tau: usize, threshold: f64, m_t: &Vector2<f64>) -> Result<f64> {
        default_probability(&self.public_asset(tau, Measure::Real, m_t)?, threshold)
    }

    /// Market value of equity implied by the final filtered equity multiplier,
    /// `exp(m^e_{T|T}) B^e_T`.
    pub fn equity_target(&self) -> f64 {
        let (m, _) = self.filter_real.last().multiplier();
        (m[0] + self.log_book()[0]).exp()
    }

    /// Default threshold that makes the private call value equal the
    /// equity target.
    pub fn calibrate_threshold(&self, tau: usize) -> Result<f64> {
        let asset = self.private_asset(tau, Measure::RiskNeutral)?;
        calibrate_threshold(&asset, tau as f64, self.params.r_tilde, self.equity_target())
    }
}
