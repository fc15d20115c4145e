//! JSON report documents.

use privrisk_core::em::{EmTrace, Termination};
use privrisk_core::pricing::PricingReport;
use privrisk_core::state_space::{FilterOutput, ForecastStep, SmootherOutput};
use privrisk_core::{ModelParams, ObservedSeries};
use serde::{Deserialize, Serialize};

use crate::config::{pair, square, Pair, ParamsDoc, Settings, Square};

/// Outcome of the requirement that the expected payout-to-value ratio
/// `exp(varphi_t)` stays below one in every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub max_payout_to_value: f64,
    pub periods: Vec<FeasibilityRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRow {
    pub t: usize,
    pub payout_to_value: Pair,
    pub feasible: bool,
}

impl Feasibility {
    /// Evaluates `exp(rho_t - k - mu0 - (t-1) phi)` for t = 1..=H.
    pub fn check(params: &ModelParams, log_payout_ratios: &[nalgebra::Vector2<f64>]) -> Self {
        let periods: Vec<FeasibilityRow> = log_payout_ratios
            .iter()
            .enumerate()
            .map(|(i, rho)| {
                let ratio = (rho - params.k_tilde - params.mean_log_multiplier(i)).map(f64::exp);
                FeasibilityRow {
                    t: i + 1,
                    payout_to_value: pair(&ratio),
                    feasible: ratio.iter().all(|x| *x < 1.0),
                }
            })
            .collect();
        Self {
            feasible: periods.iter().all(|p| p.feasible),
            max_payout_to_value: periods
                .iter()
                .flat_map(|p| p.payout_to_value)
                .fold(f64::NEG_INFINITY, f64::max),
            periods,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub loglik: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSection {
    pub init: ParamsDoc,
    pub termination: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub iterations: Vec<IterationRow>,
    pub final_loglik: Option<f64>,
    /// `Lambda` never fell by more than 1e-9 within an iteration.
    pub lambda_ascent: bool,
    pub warnings: Vec<String>,
}

impl EstimationSection {
    pub fn new(init: &ModelParams, trace: &EmTrace) -> Self {
        let (termination, diagnostic) = match &trace.termination {
            Termination::Converged => ("converged", None),
            Termination::MaxIterations => ("max-iterations", None),
            Termination::Aborted { diagnostic } => ("aborted", Some(diagnostic.clone())),
        };
        Self {
            init: ParamsDoc::from(init),
            termination: termination.to_string(),
            diagnostic,
            iterations: trace
                .iterations
                .iter()
                .map(|it| IterationRow {
                    iteration: it.iteration,
                    loglik: it.loglik,
                    lambda_before: it.lambda_before,
                    lambda_after: it.lambda_after,
                    max_change: it.max_change,
                })
                .collect(),
            final_loglik: trace.final_loglik,
            lambda_ascent: trace
                .iterations
                .iter()
                .all(|it| it.lambda_after >= it.lambda_before - 1e-9),
            warnings: trace.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub period: i64,
    pub t: usize,
    pub book: Pair,
    pub multiplier: Pair,
    pub multiplier_cov: Square,
    /// `exp(m_{t|t}) B_t`.
    pub market_value: Pair,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_growth: Option<Pair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_growth_cov: Option<Square>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
}

pub fn filter_rows(first_period: i64, series: &ObservedSeries, filter: &FilterOutput) -> Vec<FilterRow> {
    series
        .books()
        .iter()
        .enumerate()
        .map(|(t, book)| {
            let (m, p) = filter.filtered(t).multiplier();
            let step = (t > 0).then(|| &filter.steps[t - 1]);
            FilterRow {
                period: first_period + t as i64,
                t,
                book: pair(book),
                multiplier: pair(&m),
                multiplier_cov: square(&p),
                market_value: pair(&m.map(f64::exp).component_mul(book)),
                predicted_growth: step.map(|s| pair(&s.predicted.b_mean)),
                predicted_growth_cov: step.map(|s| square(&s.predicted.b_cov)),
                loglik: step.map(|s| s.loglik),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothRow {
    pub period: i64,
    pub t: usize,
    pub book: Pair,
    pub multiplier: Pair,
    pub multiplier_cov: Square,
    /// `exp(m_{t|T}) B_t`.
    pub market_value: Pair,
}

pub fn smooth_rows(first_period: i64, series: &ObservedSeries, smoother: &SmootherOutput) -> Vec<SmoothRow> {
    series
        .books()
        .iter()
        .enumerate()
        .map(|(t, book)| {
            let (m, p) = smoother.smoothed[t].multiplier();
            SmoothRow {
                period: first_period + t as i64,
                t,
                book: pair(book),
                multiplier: pair(&m),
                multiplier_cov: square(&p),
                market_value: pair(&m.map(f64::exp).component_mul(book)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub period: i64,
    pub t: usize,
    pub multiplier: Pair,
    pub multiplier_cov: Square,
    pub growth_mean: Pair,
    pub growth_cov: Square,
    pub log_book_mean: Pair,
}

pub fn forecast_rows(first_period: i64, steps: &[ForecastStep]) -> Vec<ForecastRow> {
    steps
        .iter()
        .map(|s| {
            let (m, p) = s.state.multiplier();
            ForecastRow {
                period: first_period + s.period as i64,
                t: s.period,
                multiplier: pair(&m),
                multiplier_cov: square(&p),
                growth_mean: pair(&s.b_mean),
                growth_cov: square(&s.b_cov),
                log_book_mean: pair(&s.log_book_mean),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationSection {
    /// Periods between the last observation and maturity.
    pub tau: usize,
    pub origin: usize,
    pub maturity: usize,
    pub private: Option<PricingReport>,
    pub public: Option<PricingReport>,
    /// Supplied or calibrated default threshold.
    pub threshold: Option<f64>,
    /// `supplied`, `strike` or `calibrated`.
    pub threshold_source: Option<String>,
    pub default_probability_private: Option<f64>,
    pub default_probability_public: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSection {
    /// `exp(m^e_{T|T}) B^e_T`.
    pub target_equity: f64,
    pub threshold: f64,
    /// Private call value at the calibrated threshold.
    pub repriced_equity: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEntry {
    pub quantity: String,
    pub closed_form: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCheck {
    pub paths: usize,
    pub seed: u64,
    /// Entries pass when `|closed form - estimate| / se <= 3`.
    pub all_pass: bool,
    pub entries: Vec<McEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub seed: u64,
    pub params: ParamsDoc,
    /// `m_t` for t = 0..=T.
    pub multipliers: Vec<Pair>,
    /// `exp(m_t) B_t` for t = 0..=T.
    pub market_values: Vec<Pair>,
    /// Log payout-to-book ratios of t = 1..=T.
    pub log_payout_ratios: Vec<Pair>,
    /// Ratios of the periods after the sample, for pricing runs.
    pub future_log_payout_ratios: Vec<Pair>,
    pub feasibility: Feasibility,
}

/// One JSON document per run; sections not produced by the command are
/// omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub settings: Settings,
    pub observations: usize,
    pub params: ParamsDoc,
    pub feasibility: Feasibility,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtered: Option<Vec<FilterRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothed: Option<Vec<SmoothRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecast: Option<Vec<ForecastRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valuation: Option<ValuationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_check: Option<McCheck>,
}

impl Report {
    pub fn new(
        command: &str,
        settings: &Settings,
        series: &ObservedSeries,
        params: &ModelParams,
        feasibility: Feasibility,
    ) -> Self {
        Self {
            command: command.to_string(),
            settings: settings.clone(),
            observations: series.len(),
            params: ParamsDoc::from(params),
            feasibility,
            loglik: None,
            estimation: None,
            filtered: None,
            smoothed: None,
            forecast: None,
            valuation: None,
            mc_check: None,
        }
    }
}
