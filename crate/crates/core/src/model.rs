//! Log private company valuation model: parameters, observed book-value data
//! and the deterministic linearization constants.
//!
//! Market values follow the log-linearised dividend discount recursion
//!
//! ```text
//! b_t = -m_t + G_t m_{t-1} + c_t + u_t
//! m_t = phi + m_{t-1} + v_t
//! ```
//!
//! where `b_t` is the log book-value growth, `m_t` the unobserved log
//! market-to-book multiplier and `G_t = diag(g_t)` comes from expanding the
//! log return around the mean log payout-to-value ratio.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Component, Error, Result};
use crate::linalg;

/// Probability measure under which intercepts and drifts are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Physical measure; intercepts use the required returns `k_tilde`.
    Real,
    /// Pricing measure; required returns replaced by the risk-free rate.
    RiskNeutral,
}

/// All estimable parameters plus the per-period log risk-free rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Per-period log required returns `(ln(1+k_e), ln(1+k_l))`.
    pub k_tilde: Vector2<f64>,
    /// Prior mean of the initial log multiplier.
    pub mu0: Vector2<f64>,
    /// Prior covariance of the initial log multiplier.
    pub sigma0: Matrix2<f64>,
    /// Drift of the unit-root multiplier process.
    pub phi: Vector2<f64>,
    /// Measurement noise covariance.
    pub sigma_u: Matrix2<f64>,
    /// State noise covariance.
    pub sigma_v: Matrix2<f64>,
    /// Per-period log risk-free rate `ln(1+r)`.
    pub r_tilde: f64,
}

impl ModelParams {
    /// Checks finiteness, symmetry and positive semi-definiteness of the
    /// covariance blocks. Strict definiteness is checked where it is needed
    /// (innovation inversion, complete-data likelihood).
    pub fn validate(&self) -> Result<()> {
        let finite = linalg::is_finite(&self.k_tilde)
            && linalg::is_finite(&self.mu0)
            && linalg::is_finite(&self.phi)
            && linalg::is_finite(&self.sigma0)
            && linalg::is_finite(&self.sigma_u)
            && linalg::is_finite(&self.sigma_v)
            && self.r_tilde.is_finite();
        if !finite {
            return Err(Error::InvalidParams("all entries must be finite".into()));
        }
        for (name, m) in [
            ("sigma0", &self.sigma0),
            ("sigma_u", &self.sigma_u),
            ("sigma_v", &self.sigma_v),
        ] {
            if !linalg::is_symmetric(m, 1e-12) {
                return Err(Error::InvalidParams(format!("{name} must be symmetric")));
            }
            if !linalg::is_psd(m, 1e-12) {
                return Err(Error::InvalidParams(format!("{name} must be positive semidefinite")));
            }
        }
        Ok(())
    }

    /// `E[m_t | F_0] = mu0 + t * phi`.
    pub fn mean_log_multiplier(&self, t: usize) -> Vector2<f64> {
        self.mu0 + self.phi * t as f64
    }

    /// Default starting point for estimation.
    ///
    /// `k_tilde = r_tilde + 0.02`, zero drift, `Sigma_u = Sigma_v = 0.01 I`,
    /// `Sigma_0 = I`. The prior mean is the negated average log payout-to-book
    /// ratio shifted so the first-period linearization is feasible.
    pub fn initial_guess(series: &ObservedSeries, r_tilde: f64) -> Self {
        let k_tilde = Vector2::repeat(r_tilde + 0.02);
        let n = series.len().max(1) as f64;
        let mean_ratio: Vector2<f64> = series.payout_ratios.iter().fold(Vector2::zeros(), |acc, x| acc + x) / n;
        // varphi_1 = varrho_1 - k - mu0 must be negative; place it at ln(0.05)
        // relative to the average payout ratio.
        let mu0 = mean_ratio - k_tilde - Vector2::repeat(0.05f64.ln());
        Self {
            k_tilde,
            mu0,
            sigma0: Matrix2::identity(),
            phi: Vector2::zeros(),
            sigma_u: Matrix2::identity() * 0.01,
            sigma_v: Matrix2::identity() * 0.01,
            r_tilde,
        }
    }
}

/// Observed book-value data over `T` periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    /// Initial book values `B_0 = (B_0^e, B_0^l)`.
    pub initial_books: Vector2<f64>,
    /// Log book-value growth rates `b_t = ln B_t - ln B_{t-1}`, t = 1..T.
    pub growth: Vec<Vector2<f64>>,
    /// Log payout-to-book ratios `varrho_t = ln p_t - ln B_{t-1}`, t = 1..T.
    pub payout_ratios: Vec<Vector2<f64>>,
}

impl ObservedSeries {
    pub fn len(&self) -> usize {
        self.growth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.growth.is_empty()
    }

    /// `ln B_t` for t = 0..T.
    pub fn log_books(&self) -> Vec<Vector2<f64>> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut current = self.initial_books.map(f64::ln);
        out.push(current);
        for b in &self.growth {
            current += b;
            out.push(current);
        }
        out
    }

    /// Book values reconstructed by exponentiating the cumulative log growth.
    pub fn books(&self) -> Vec<Vector2<f64>> {
        self.log_books().into_iter().map(|l| l.map(f64::exp)).collect()
    }

    pub fn log_book(&self, t: usize) -> Vector2<f64> {
        self.initial_books.map(f64::ln) + self.growth[..t].iter().fold(Vector2::zeros(), |a, b| a + b)
    }
}

/// Builds log growth rates and log payout-to-book ratios from raw book values
/// (`T + 1` rows) and payouts (`T` rows).
pub fn derive_series(raw_books: &[Vector2<f64>], raw_payouts: &[Vector2<f64>]) -> Result<ObservedSeries> {
    if raw_books.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two book-value rows are required".into(),
        ));
    }
    if raw_payouts.len() + 1 != raw_books.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} payout rows for {} book rows, got {}",
            raw_books.len() - 1,
            raw_books.len(),
            raw_payouts.len()
        )));
    }
    check_positive("book value", 0, raw_books)?;
    check_positive("payout", 1, raw_payouts)?;

    let growth = raw_books
        .windows(2)
        .map(|w| w[1].map(f64::ln) - w[0].map(f64::ln))
        .collect();
    let payout_ratios = raw_payouts
        .iter()
        .zip(raw_books)
        .map(|(p, b)| p.map(f64::ln) - b.map(f64::ln))
        .collect();
    Ok(ObservedSeries {
        initial_books: raw_books[0],
        growth,
        payout_ratios,
    })
}

fn check_positive(field: &'static str, first_row: usize, rows: &[Vector2<f64>]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        for c in 0..2 {
            let value = row[c];
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveInput {
                    field,
                    row: first_row + i,
                    component: Component::from_index(c),
                    value,
                });
            }
        }
    }
    Ok(())
}

/// Linearization constants of one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodLinearization {
    /// Period index (1-based).
    pub period: usize,
    /// Log payout-to-book ratio used for this period.
    pub payout_ratio: Vector2<f64>,
    /// `varphi_t = varrho_t - k - (mu0 + (t-1) phi)`.
    pub varphi: Vector2<f64>,
    /// `g_t = 1 / (1 - exp(varphi_t))`.
    pub g: Vector2<f64>,
    /// Mean log payout-to-value ratio `mu_t = varphi_t + ln g_t`.
    pub mu: Vector2<f64>,
    pub h: Vector2<f64>,
}

impl PeriodLinearization {
    pub fn g_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&self.g)
    }

    /// Real-measure measurement intercept
    /// `c_t = G_t k - (G_t - I) varrho_t - h_t`.
    pub fn real_intercept(&self, params: &ModelParams) -> Vector2<f64> {
        self.g.component_mul(&params.k_tilde)
            - (self.g - Vector2::repeat(1.0)).component_mul(&self.payout_ratio)
            - self.h
    }

    /// Risk-neutral intercept
    /// `c~_t = r G_t i - (G_t - I) varrho_t - h_t - G_t^{-1} diag(Sigma_u) / 2`.
    pub fn risk_neutral_intercept(&self, params: &ModelParams) -> Vector2<f64> {
        self.g * params.r_tilde
            - (self.g - Vector2::repeat(1.0)).component_mul(&self.payout_ratio)
            - self.h
            - linalg::diag_vec(&params.sigma_u).component_div(&self.g) * 0.5
    }

    pub fn intercept(&self, params: &ModelParams, measure: Measure) -> Vector2<f64> {
        match measure {
            Measure::Real => self.real_intercept(params),
            Measure::RiskNeutral => self.risk_neutral_intercept(params),
        }
    }
}

/// Computes the linearization constants from `varphi` alone.
pub fn linearize_payout(
    period: usize,
    payout_ratio: Vector2<f64>,
    varphi: Vector2<f64>,
) -> Result<PeriodLinearization> {
    let mut g = Vector2::zeros();
    let mut h = Vector2::zeros();
    let mut mu = Vector2::zeros();
    for c in 0..2 {
        let x = varphi[c];
        // 1 - e^x, computed without cancellation near x = 0.
        let one_minus = -x.exp_m1();
        if !(one_minus > 0.0) || !x.is_finite() {
            return Err(Error::InfeasibleLinearization {
                period,
                component: Component::from_index(c),
                exp_varphi: x.exp(),
            });
        }
        g[c] = 1.0 / one_minus;
        let ln_one_minus = one_minus.ln();
        mu[c] = x - ln_one_minus;
        h[c] = -(x * x.exp() / one_minus + ln_one_minus);
    }
    Ok(PeriodLinearization {
        period,
        payout_ratio,
        varphi,
        g,
        mu,
        h,
    })
}

/// Per-period linearization constants for periods `1..=H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationSchedule {
    periods: Vec<PeriodLinearization>,
}

impl LinearizationSchedule {
    /// Builds the schedule from the parameters and the payout ratios of
    /// periods `1..=H` (`payout_ratios[t-1]` belongs to period `t`).
    pub fn build(params: &ModelParams, payout_ratios: &[Vector2<f64>]) -> Result<Self> {
        let periods = payout_ratios
            .iter()
            .enumerate()
            .map(|(i, rho)| {
                let t = i + 1;
                let varphi = rho - params.k_tilde - params.mean_log_multiplier(t - 1);
                linearize_payout(t, *rho, varphi)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { periods })
    }

    pub fn from_periods(periods: Vec<PeriodLinearization>) -> Self {
        Self { periods }
    }

    /// Number of covered periods `H`.
    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    /// Constants of period `t` (1-based).
    pub fn period(&self, t: usize) -> &PeriodLinearization {
        assert!(
            t >= 1 && t <= self.periods.len(),
            "period {t} outside schedule 1..={}",
            self.periods.len()
        );
        &self.periods[t - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PeriodLinearization> {
        self.periods.iter()
    }

    pub fn payout_ratios(&self) -> Vec<Vector2<f64>> {
        self.periods.iter().map(|p| p.payout_ratio).collect()
    }

    /// Measurement intercepts `c_t` (or `c~_t`) for t = 1..H.
    pub fn intercepts(&self, params: &ModelParams, measure: Measure) -> Vec<Vector2<f64>> {
        self.periods.iter().map(|p| p.intercept(params, measure)).collect()
    }

    /// `true` when every `g_t` is within `tol` of one, i.e. payouts are
    /// negligible and the required returns are weakly identified.
    pub fn is_nearly_unit(&self, tol: f64) -> bool {
        self.periods.iter().all(|p| (p.g - Vector2::repeat(1.0)).amax() < tol)
    }
}

/// Linearization of the log asset value `ln(V^e + V^l)` around a centre
/// `mu = E[ln V^e - ln V^l]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetLinearization {
    /// Expansion centre (mean log equity-to-liability value ratio).
    pub mu: f64,
    /// `g = 1 + e^mu`.
    pub g: f64,
    /// `w = 1 / g`.
    pub w: f64,
    /// `h = g (ln g - mu) + mu`.
    pub h: f64,
}

impl AssetLinearization {
    pub fn new(mu: f64) -> Self {
        let g = 1.0 + mu.exp();
        let w = 1.0 / (1.0 + mu.exp());
        // g ln g - mu (g - 1), arranged to avoid cancellation for large |mu|
        let h = if mu <= 0.0 {
            let e = mu.exp();
            g * e.ln_1p() - mu * e
        } else {
            mu + g * (-mu).exp().ln_1p()
        };
        Self { mu, g, w, h }
    }

    /// Weights on `(ln V^e, ln V^l)` of the first-order expansion:
    /// `(e^mu / (1 + e^mu), 1 / (1 + e^mu)) = (1 - w, w)`.
    pub fn weights(&self) -> Vector2<f64> {
        Vector2::new(1.0 / (1.0 + (-self.mu).exp()), self.w)
    }

    /// Additive constant `w h` of the expansion.
    pub fn offset(&self) -> f64 {
        self.w * self.h
    }

    /// Linearised log asset value for log values `(ln V^e, ln V^l)`.
    pub fn approximate(&self, log_values: &Vector2<f64>) -> f64 {
        self.weights().dot(log_values) + self.offset()
    }
}

/// `(g_a, w_a, h_a)` for a centre `mu_a`.
pub fn asset_linearization(mu_a: f64) -> AssetLinearization {
    AssetLinearization::new(mu_a)
}

/// Exact log asset value `ln(e^{x_e} + e^{x_l})`.
pub fn exact_log_asset(log_values: &Vector2<f64>) -> f64 {
    let (a, b) = (log_values[0], log_values[1]);
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// Centre of the asset linearization at period `t` given (observed or
/// forecast) log book values at `t`:
/// `(mu0 + t phi)_e - (mu0 + t phi)_l + ln B^e_t - ln B^l_t`.
pub fn asset_center(params: &ModelParams, log_books: &Vector2<f64>, t: usize) -> f64 {
    let m = params.mean_log_multiplier(t);
    m[0] - m[1] + log_books[0] - log_books[1]
}
