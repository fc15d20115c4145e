//! Run configuration: a flat TOML file merged with command-line overrides.
//!
//! Two-vectors are written `[equity, liability]`, 2x2 matrices row by row
//! as `[[a, b], [c, d]]`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2};
use privrisk_core::em::MStepMode;
use privrisk_core::ModelParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub type Pair = [f64; 2];
pub type Square = [[f64; 2]; 2];

pub fn vector(p: &Pair) -> Vector2<f64> {
    Vector2::new(p[0], p[1])
}

pub fn pair(v: &Vector2<f64>) -> Pair {
    [v[0], v[1]]
}

pub fn matrix(s: &Square) -> Matrix2<f64> {
    Matrix2::new(s[0][0], s[0][1], s[1][0], s[1][1])
}

pub fn square(m: &Matrix2<f64>) -> Square {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Model parameters in document form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    pub k_tilde: Pair,
    pub mu0: Pair,
    pub sigma0: Square,
    pub phi: Pair,
    pub sigma_u: Square,
    pub sigma_v: Square,
    pub r_tilde: f64,
}

impl From<&ModelParams> for ParamsDoc {
    fn from(p: &ModelParams) -> Self {
        Self {
            k_tilde: pair(&p.k_tilde),
            mu0: pair(&p.mu0),
            sigma0: square(&p.sigma0),
            phi: pair(&p.phi),
            sigma_u: square(&p.sigma_u),
            sigma_v: square(&p.sigma_v),
            r_tilde: p.r_tilde,
        }
    }
}

impl From<&ParamsDoc> for ModelParams {
    fn from(d: &ParamsDoc) -> Self {
        Self {
            k_tilde: vector(&d.k_tilde),
            mu0: vector(&d.mu0),
            sigma0: matrix(&d.sigma0),
            phi: vector(&d.phi),
            sigma_u: matrix(&d.sigma_u),
            sigma_v: matrix(&d.sigma_v),
            r_tilde: d.r_tilde,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmMode {
    #[default]
    Frozen,
    Aware,
}

impl From<EmMode> for MStepMode {
    fn from(m: EmMode) -> Self {
        match m {
            EmMode::Frozen => MStepMode::FrozenSchedule,
            EmMode::Aware => MStepMode::ScheduleAware,
        }
    }
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    /// Periods after the last observation.
    pub maturity: Option<usize>,
    pub strike: Option<f64>,
    /// Supplied default threshold; calibrated when absent.
    pub threshold: Option<f64>,
    /// Per-period log risk-free rate.
    pub rate: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub em_mode: Option<EmMode>,
    pub check_mc: Option<bool>,
    /// JSON document holding parameters, either bare or under a `params` key.
    pub params_file: Option<PathBuf>,
    pub k_tilde: Option<Pair>,
    pub mu0: Option<Pair>,
    pub sigma0: Option<Square>,
    pub phi: Option<Pair>,
    pub sigma_u: Option<Square>,
    pub sigma_v: Option<Square>,
    /// Log multiplier at the last observation for public-information results.
    pub m_public: Option<Pair>,
    /// Log payout-to-book ratios of the periods after the sample.
    pub future_log_payout_ratios: Option<Vec<Pair>>,
    /// Simulation: number of observed periods.
    pub periods: Option<usize>,
    /// Simulation: book values at period zero.
    pub initial_books: Option<Pair>,
    /// Simulation: range of the expected payout-to-value ratio per period.
    pub payout_to_value: Option<Pair>,
    /// Simulation: extra payout periods written to the truth file.
    pub future_periods: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::input(path, m),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }
}

/// Command-line overrides; `None` leaves the file value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub maturity: Option<usize>,
    pub strike: Option<f64>,
    pub threshold: Option<f64>,
    pub rate: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub check_mc: bool,
    pub params_file: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_PATHS: usize = 200_000;
pub const DEFAULT_PERIODS: usize = 40;
pub const DEFAULT_INITIAL_BOOKS: Pair = [100.0, 100.0];
pub const DEFAULT_PAYOUT_TO_VALUE: Pair = [0.01, 0.04];

/// Validated settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub paths: usize,
    pub maturity: Option<usize>,
    pub strike: Option<f64>,
    pub threshold: Option<f64>,
    pub rate: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub em_mode: EmMode,
    pub check_mc: bool,
    pub params_file: Option<PathBuf>,
    /// Parameters given inline in the configuration.
    pub params: Option<ParamsDoc>,
    pub m_public: Option<Pair>,
    pub future_log_payout_ratios: Vec<Pair>,
    pub periods: usize,
    pub initial_books: Pair,
    pub payout_to_value: Pair,
    pub future_periods: usize,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {x}")))
    }
}

fn finite(name: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(CliError::Config(format!("{name} must be finite, got {x}"))),
        None => Ok(()),
    }
}

impl Settings {
    pub fn resolve(file: FileConfig, cli: Overrides) -> Result<Self> {
        let inline = [
            file.k_tilde.is_some(),
            file.mu0.is_some(),
            file.sigma0.is_some(),
            file.phi.is_some(),
            file.sigma_u.is_some(),
            file.sigma_v.is_some(),
        ];
        let params = if inline.iter().all(|x| *x) {
            Some(ParamsDoc {
                k_tilde: file.k_tilde.unwrap(),
                mu0: file.mu0.unwrap(),
                sigma0: file.sigma0.unwrap(),
                phi: file.phi.unwrap(),
                sigma_u: file.sigma_u.unwrap(),
                sigma_v: file.sigma_v.unwrap(),
                r_tilde: cli.rate.or(file.rate).unwrap_or(0.0),
            })
        } else if inline.iter().any(|x| *x) {
            return Err(CliError::Config(
                "inline parameters need all of k_tilde, mu0, sigma0, phi, sigma_u, sigma_v".into(),
            ));
        } else {
            None
        };
        let s = Settings {
            input: cli.input.or(file.input),
            output: cli.output.or(file.output),
            seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            paths: cli.paths.or(file.paths).unwrap_or(DEFAULT_PATHS),
            maturity: cli.maturity.or(file.maturity),
            strike: cli.strike.or(file.strike),
            threshold: cli.threshold.or(file.threshold),
            rate: cli.rate.or(file.rate),
            max_iter: cli.max_iter.or(file.max_iter).unwrap_or(500),
            tol: cli.tol.or(file.tol).unwrap_or(1e-8),
            em_mode: file.em_mode.unwrap_or_default(),
            check_mc: cli.check_mc || file.check_mc.unwrap_or(false),
            params_file: cli.params_file.or(file.params_file),
            params,
            m_public: file.m_public,
            future_log_payout_ratios: file.future_log_payout_ratios.unwrap_or_default(),
            periods: file.periods.unwrap_or(DEFAULT_PERIODS),
            initial_books: file.initial_books.unwrap_or(DEFAULT_INITIAL_BOOKS),
            payout_to_value: file.payout_to_value.unwrap_or(DEFAULT_PAYOUT_TO_VALUE),
            future_periods: file.future_periods.unwrap_or(0),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(CliError::Config("paths must be at least one".into()));
        }
        if self.maturity == Some(0) {
            return Err(CliError::Config("maturity must be at least one period".into()));
        }
        if let Some(k) = self.strike {
            positive("strike", k)?;
        }
        if let Some(l) = self.threshold {
            positive("threshold", l)?;
        }
        if let Some(r) = self.rate {
            finite("rate", &[r])?;
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(CliError::Config(format!(
                "tol must be nonnegative and finite, got {}",
                self.tol
            )));
        }
        if let Some(m) = &self.m_public {
            finite("m_public", m)?;
        }
        for r in &self.future_log_payout_ratios {
            finite("future_log_payout_ratios", r)?;
        }
        if self.periods == 0 {
            return Err(CliError::Config("periods must be at least one".into()));
        }
        positive("initial_books", self.initial_books[0])?;
        positive("initial_books", self.initial_books[1])?;
        let [lo, hi] = self.payout_to_value;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(CliError::Config(format!(
                "payout_to_value must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
            )));
        }
        if let Some(p) = &self.params {
            let flat: Vec<f64> = p
                .k_tilde
                .iter()
                .chain(&p.mu0)
                .chain(&p.phi)
                .chain(p.sigma0.iter().flatten())
                .chain(p.sigma_u.iter().flatten())
                .chain(p.sigma_v.iter().flatten())
                .copied()
                .collect();
            finite("parameters", &flat)?;
        }
        Ok(())
    }

    /// Parameters from the configuration or the parameter file, if any.
    /// A rate given in the configuration or on the command line replaces
    /// the document's `r_tilde`.
    pub fn supplied_params(&self) -> Result<Option<ModelParams>> {
        let doc = match (&self.params, &self.params_file) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(path)) => Some(load_params(path)?),
            (None, None) => None,
        };
        Ok(doc.map(|mut d| {
            if let Some(r) = self.rate {
                d.r_tilde = r;
            }
            ModelParams::from(&d)
        }))
    }

    pub fn future_ratios(&self) -> Vec<Vector2<f64>> {
        self.future_log_payout_ratios.iter().map(vector).collect()
    }
}

/// Reads parameters from a JSON file: a bare parameter document or any
/// document with a `params` member (reports, truth files).
pub fn load_params(path: &Path) -> Result<ParamsDoc> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(path, format!("invalid JSON: {e}")))?;
    let node = value.get("params").cloned().unwrap_or(value);
    serde_json::from_value(node).map_err(|e| CliError::input(path, format!("invalid parameter document: {e}")))
}
