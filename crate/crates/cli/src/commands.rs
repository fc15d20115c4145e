//! The subcommands. Each returns the document to write and, for runs that
//! complete with an unusable result, the error that sets the exit status.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use privrisk_core::em::{em_fit, EmOptions, MStepOptions};
use privrisk_core::pricing::{PricingReport, ValuationContext};
use privrisk_core::sim::{mc_default_probability, mc_option_price, simulate_panel, McEstimate, SimConfig, StartState};
use privrisk_core::state_space::{forecast, run_filter_measure, smooth};
use privrisk_core::{AssetLinearization, LinearizationSchedule, Measure, ModelParams, ObservedSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{pair, vector, ParamsDoc, Settings};
use crate::error::{CliError, Result};
use crate::ingest::{self, Panel};
use crate::output::to_json;
use crate::report::*;

/// A finished command: files to write plus an optional deferred failure.
#[derive(Debug)]
pub struct Outcome {
    /// `(path, contents)`; a `None` path means stdout.
    pub files: Vec<(Option<PathBuf>, String)>,
    pub failure: Option<CliError>,
}

impl Outcome {
    fn report(settings: &Settings, report: &Report, failure: Option<CliError>) -> Self {
        Self {
            files: vec![(settings.output.clone(), to_json(report))],
            failure,
        }
    }
}

fn load_panel(settings: &Settings) -> Result<(Panel, ObservedSeries)> {
    let path = settings
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("an input panel is required (--input or `input`)".into()))?;
    let panel = ingest::read_panel(path)?;
    let series = panel.series().map_err(|e| CliError::input(path, e.to_string()))?;
    Ok((panel, series))
}

fn em_options(settings: &Settings) -> EmOptions {
    EmOptions {
        max_iter: settings.max_iter,
        tol: settings.tol,
        m_step: MStepOptions {
            mode: settings.em_mode.into(),
            ..Default::default()
        },
    }
}

/// Supplied parameters, or an in-run fit when none are given.
fn resolve_params(settings: &Settings, series: &ObservedSeries) -> Result<(ModelParams, Option<EstimationSection>)> {
    if let Some(p) = settings.supplied_params()? {
        p.validate()?;
        return Ok((p, None));
    }
    let init = ModelParams::initial_guess(series, settings.rate.unwrap_or(0.0));
    let (fit, trace) = em_fit(series, &init, &em_options(settings))?;
    Ok((fit, Some(EstimationSection::new(&init, &trace))))
}

fn aborted(section: &Option<EstimationSection>) -> Option<CliError> {
    section.as_ref().filter(|s| s.termination == "aborted").map(|s| {
        CliError::Numerical(format!(
            "estimation aborted: {}",
            s.diagnostic.clone().unwrap_or_default()
        ))
    })
}

fn require_rate(settings: &Settings, section: &Option<EstimationSection>) -> Result<()> {
    // Parameter files carry r_tilde; inline and estimated parameters do not.
    if (section.is_some() || settings.params.is_some()) && settings.rate.is_none() {
        return Err(CliError::Config(
            "valuation needs a risk-free rate (--rate or `rate`) unless parameters come from a file".into(),
        ));
    }
    Ok(())
}

pub fn estimate(settings: &Settings) -> Result<Outcome> {
    let (panel, series) = load_panel(settings)?;
    let init = match settings.supplied_params()? {
        Some(p) => p,
        None => ModelParams::initial_guess(&series, settings.rate.unwrap_or(0.0)),
    };
    let (fit, trace) = em_fit(&series, &init, &em_options(settings))?;
    let section = EstimationSection::new(&init, &trace);
    let failure = aborted(&Some(section.clone()));
    let mut report = Report::new(
        "estimate",
        settings,
        &series,
        &fit,
        Feasibility::check(&fit, &series.payout_ratios),
    );
    report.loglik = trace.final_loglik;
    report.estimation = Some(section);
    if let Ok(schedule) = LinearizationSchedule::build(&fit, &series.payout_ratios) {
        let filter = run_filter_measure(&fit, &schedule, &series.growth, Measure::Real)?;
        report.smoothed = Some(smooth_rows(panel.first_period, &series, &smooth(&filter)));
        report.filtered = Some(filter_rows(panel.first_period, &series, &filter));
    }
    Ok(Outcome::report(settings, &report, failure))
}

fn filter_or_smooth(settings: &Settings, command: &str) -> Result<Outcome> {
    let (panel, series) = load_panel(settings)?;
    let (params, section) = resolve_params(settings, &series)?;
    let feasibility = Feasibility::check(&params, &series.payout_ratios);
    let schedule = LinearizationSchedule::build(&params, &series.payout_ratios)?;
    let filter = run_filter_measure(&params, &schedule, &series.growth, Measure::Real)?;
    let mut report = Report::new(command, settings, &series, &params, feasibility);
    report.loglik = Some(filter.loglik);
    if command == "smooth" {
        report.smoothed = Some(smooth_rows(panel.first_period, &series, &smooth(&filter)));
    } else {
        report.filtered = Some(filter_rows(panel.first_period, &series, &filter));
    }
    let failure = aborted(&section);
    report.estimation = section;
    Ok(Outcome::report(settings, &report, failure))
}

pub fn filter(settings: &Settings) -> Result<Outcome> {
    filter_or_smooth(settings, "filter")
}

pub fn smooth_cmd(settings: &Settings) -> Result<Outcome> {
    filter_or_smooth(settings, "smooth")
}

fn require_maturity(settings: &Settings) -> Result<usize> {
    settings
        .maturity
        .ok_or_else(|| CliError::Config("a maturity is required (--maturity or `maturity`)".into()))
}

fn check_future(settings: &Settings, tau: usize) -> Result<()> {
    let have = settings.future_log_payout_ratios.len();
    if have < tau {
        return Err(CliError::Config(format!(
            "maturity {tau} needs {tau} future log payout ratios (`future_log_payout_ratios`), {have} given"
        )));
    }
    Ok(())
}

fn all_ratios(series: &ObservedSeries, settings: &Settings) -> Vec<Vector2<f64>> {
    let mut ratios = series.payout_ratios.clone();
    ratios.extend(settings.future_ratios());
    ratios
}

pub fn forecast_cmd(settings: &Settings) -> Result<Outcome> {
    let (panel, series) = load_panel(settings)?;
    let tau = require_maturity(settings)?;
    check_future(settings, tau)?;
    let (params, section) = resolve_params(settings, &series)?;
    let ratios = all_ratios(&series, settings);
    let feasibility = Feasibility::check(&params, &ratios);
    let schedule = LinearizationSchedule::build(&params, &ratios)?;
    let intercepts = schedule.intercepts(&params, Measure::Real);
    let filter = run_filter_measure(&params, &schedule, &series.growth, Measure::Real)?;
    let n = series.len();
    let steps = forecast(&filter, &params, &schedule, &intercepts, &series.log_book(n), n + tau)?;
    let mut report = Report::new("forecast", settings, &series, &params, feasibility);
    report.loglik = Some(filter.loglik);
    report.forecast = Some(forecast_rows(panel.first_period, &steps));
    let failure = aborted(&section);
    report.estimation = section;
    Ok(Outcome::report(settings, &report, failure))
}

/// Which valuation quantities a command produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Valuation {
    Price,
    DefaultProbability,
    CalibrateThreshold,
}

impl Valuation {
    fn name(self) -> &'static str {
        match self {
            Valuation::Price => "price",
            Valuation::DefaultProbability => "default-prob",
            Valuation::CalibrateThreshold => "calibrate-threshold",
        }
    }
}

fn mc_entry(quantity: &str, closed_form: f64, mc: &McEstimate) -> McEntry {
    let z = mc.z_score(closed_form);
    McEntry {
        quantity: quantity.to_string(),
        closed_form,
        estimate: mc.estimate,
        std_error: mc.std_error,
        z_score: z,
        pass: z <= 3.0,
    }
}

/// Simulated default frequency with the binomial standard error taken at the
/// closed-form probability, so that a sample without defaults is still testable.
fn frequency(log_assets: &[f64], threshold: f64, closed_form: f64) -> McEstimate {
    let mut mc = mc_default_probability(log_assets, threshold);
    mc.std_error = (closed_form * (1.0 - closed_form) / mc.n as f64).sqrt();
    mc
}

struct McRunner<'a> {
    ctx: &'a ValuationContext,
    tau: usize,
    paths: usize,
    seed: u64,
    runs: u64,
}

impl McRunner<'_> {
    /// Linearised log asset values at maturity from `start`.
    fn log_assets(&mut self, start: StartState, measure: Measure, lin: &AssetLinearization) -> Result<Vec<f64>> {
        let cfg = SimConfig {
            n_paths: self.paths,
            horizon: self.ctx.origin() + self.tau,
            seed: self.seed.wrapping_add(self.runs),
            measure,
            antithetic: false,
        };
        self.runs += 1;
        let panel = simulate_panel(&self.ctx.params, &self.ctx.schedule, &start, &cfg)?;
        Ok(panel.linearized_log_assets(cfg.horizon, lin))
    }

    fn private_start(&self, measure: Measure) -> StartState {
        let filter = match measure {
            Measure::Real => &self.ctx.filter_real,
            Measure::RiskNeutral => &self.ctx.filter_rn,
        };
        let (m, p) = filter.last().multiplier();
        StartState {
            period: self.ctx.origin(),
            log_book: self.ctx.log_book(),
            m_mean: m,
            m_cov: p,
        }
    }

    fn public_start(&self, m: &Vector2<f64>) -> StartState {
        StartState::fixed(self.ctx.origin(), self.ctx.log_book(), *m)
    }

    fn price_check(
        &mut self,
        label: &str,
        report: &PricingReport,
        start: StartState,
        lin: &AssetLinearization,
    ) -> Result<[McEntry; 2]> {
        let xs = self.log_assets(start, Measure::RiskNeutral, lin)?;
        let r = self.ctx.params.r_tilde;
        let (call, mut put) = mc_option_price(&xs, report.strike, self.tau as f64, r, false);
        if put.std_error == 0.0 {
            // No path finished in the money. The payoff lies in [0, K e^{-tau r}],
            // so its variance under the closed-form mean is at most K e^{-tau r} P.
            let bound = report.strike * (-(self.tau as f64) * r).exp() * report.put;
            put.std_error = (bound / put.n as f64).sqrt();
        }
        Ok([
            mc_entry(&format!("{label} call"), report.call, &call),
            mc_entry(&format!("{label} put"), report.put, &put),
        ])
    }
}

pub fn valuation(settings: &Settings, kind: Valuation) -> Result<Outcome> {
    let (_, series) = load_panel(settings)?;
    let tau = require_maturity(settings)?;
    check_future(settings, tau)?;
    let strike = match kind {
        Valuation::Price => Some(
            settings
                .strike
                .ok_or_else(|| CliError::Config("a strike is required (--strike or `strike`)".into()))?,
        ),
        _ => settings.strike,
    };
    let (params, section) = resolve_params(settings, &series)?;
    require_rate(settings, &section)?;
    let future = settings.future_ratios();
    let feasibility = Feasibility::check(&params, &all_ratios(&series, settings));
    let ctx = ValuationContext::new(&params, &series, &future)?;
    let m_public = settings.m_public.as_ref().map(vector);

    let mut section_out = ValuationSection {
        tau,
        origin: ctx.origin(),
        maturity: ctx.origin() + tau,
        private: None,
        public: None,
        threshold: None,
        threshold_source: None,
        default_probability_private: None,
        default_probability_public: None,
        calibration: None,
    };
    let failure = aborted(&section);

    let (threshold, source) = match (kind, settings.threshold, strike) {
        (Valuation::CalibrateThreshold, _, _) | (Valuation::DefaultProbability, None, _) => (None, "calibrated"),
        (_, Some(l), _) => (Some(l), "supplied"),
        (_, None, Some(k)) => (Some(k), "strike"),
        (_, None, None) => (None, "calibrated"),
    };
    let threshold = match threshold {
        Some(l) => l,
        None => {
            let l = ctx.calibrate_threshold(tau)?;
            let repriced = ctx.price_private(tau, l)?.call;
            let target = ctx.equity_target();
            section_out.calibration = Some(CalibrationSection {
                target_equity: target,
                threshold: l,
                repriced_equity: repriced,
                relative_error: ((repriced - target) / target).abs(),
            });
            l
        }
    };
    section_out.threshold = Some(threshold);
    section_out.threshold_source = Some(source.to_string());
    section_out.default_probability_private = Some(ctx.default_probability_private(tau, threshold)?);
    if let Some(m) = &m_public {
        section_out.default_probability_public = Some(ctx.default_probability_public(tau, threshold, m)?);
    }
    let priced_at = strike.unwrap_or(threshold);
    if kind != Valuation::DefaultProbability {
        section_out.private = Some(ctx.price_private(tau, priced_at)?);
        if let Some(m) = &m_public {
            section_out.public = Some(ctx.price_public(tau, priced_at, m)?);
        }
    }

    let mc_check = if settings.check_mc {
        let mut runner = McRunner {
            ctx: &ctx,
            tau,
            paths: settings.paths,
            seed: settings.seed,
            runs: 0,
        };
        let mut entries = Vec::new();
        if let Some(rep) = &section_out.private {
            let asset = ctx.private_asset(tau, Measure::RiskNeutral)?;
            let start = runner.private_start(Measure::RiskNeutral);
            entries.extend(runner.price_check("private", rep, start, &asset.linearization)?);
        }
        if let (Some(rep), Some(m)) = (&section_out.public, &m_public) {
            let asset = ctx.public_asset(tau, Measure::RiskNeutral, m)?;
            let start = runner.public_start(m);
            entries.extend(runner.price_check("public", rep, start, &asset.linearization)?);
        }
        let asset = ctx.private_asset(tau, Measure::Real)?;
        let xs = runner.log_assets(runner.private_start(Measure::Real), Measure::Real, &asset.linearization)?;
        entries.push(mc_entry(
            "private default probability",
            section_out.default_probability_private.unwrap(),
            &frequency(&xs, threshold, section_out.default_probability_private.unwrap()),
        ));
        if let Some(m) = &m_public {
            let asset = ctx.public_asset(tau, Measure::Real, m)?;
            let xs = runner.log_assets(runner.public_start(m), Measure::Real, &asset.linearization)?;
            entries.push(mc_entry(
                "public default probability",
                section_out.default_probability_public.unwrap(),
                &frequency(&xs, threshold, section_out.default_probability_public.unwrap()),
            ));
        }
        let all_pass = entries.iter().all(|e| e.pass);
        if !all_pass {
            log::warn!("Monte Carlo check: some closed-form values lie more than 3 standard errors from simulation");
        }
        Some(McCheck {
            paths: settings.paths,
            seed: settings.seed,
            all_pass,
            entries,
        })
    } else {
        None
    };

    let mut report = Report::new(kind.name(), settings, &series, &params, feasibility);
    report.loglik = Some(ctx.filter_real.loglik);
    report.valuation = Some(section_out);
    report.mc_check = mc_check;
    report.estimation = section;
    Ok(Outcome::report(settings, &report, failure))
}

/// Path of the truth file written next to a simulated panel.
pub fn truth_path(csv: &Path) -> PathBuf {
    csv.with_extension("truth.json")
}

pub fn simulate(settings: &Settings) -> Result<Outcome> {
    let output = settings
        .output
        .clone()
        .ok_or_else(|| CliError::Config("simulate writes a CSV panel and needs --output".into()))?;
    let params = settings
        .supplied_params()?
        .ok_or_else(|| CliError::Config("simulate needs parameters (inline or `params_file`)".into()))?;
    params.validate()?;
    let n = settings.periods;
    let total = n + settings.future_periods;
    let [lo, hi] = settings.payout_to_value;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(u64::MAX);
    let mut draw = || if lo == hi { lo } else { rng.random_range(lo..hi) };
    let ratios: Vec<Vector2<f64>> = (1..=total)
        .map(|t| {
            let varphi = Vector2::new(draw().ln(), draw().ln());
            varphi + params.k_tilde + params.mean_log_multiplier(t - 1)
        })
        .collect();
    let schedule = LinearizationSchedule::build(&params, &ratios)?;
    let books0 = vector(&settings.initial_books);
    let cfg = SimConfig {
        n_paths: 1,
        horizon: n,
        seed: settings.seed,
        measure: Measure::Real,
        antithetic: false,
    };
    let sim = simulate_panel(&params, &schedule, &StartState::prior(&params, &books0), &cfg)?;
    let path = &sim.paths[0];
    let books: Vec<Vector2<f64>> = path.log_book.iter().map(|l| l.map(f64::exp)).collect();
    let payouts: Vec<Vector2<f64>> = (1..=n)
        .map(|t| ratios[t - 1].map(f64::exp).component_mul(&books[t - 1]))
        .collect();
    let panel = Panel {
        first_period: 0,
        books: books.clone(),
        payouts,
    };
    let truth = SimulationTruth {
        seed: settings.seed,
        params: ParamsDoc::from(&params),
        multipliers: path.m.iter().map(pair).collect(),
        market_values: path
            .m
            .iter()
            .zip(&books)
            .map(|(m, b)| pair(&m.map(f64::exp).component_mul(b)))
            .collect(),
        log_payout_ratios: ratios[..n].iter().map(pair).collect(),
        future_log_payout_ratios: ratios[n..].iter().map(pair).collect(),
        feasibility: Feasibility::check(&params, &ratios),
    };
    Ok(Outcome {
        files: vec![
            (Some(output.clone()), ingest::write_panel(&panel)),
            (Some(truth_path(&output)), to_json(&truth)),
        ],
        failure: None,
    })
}
