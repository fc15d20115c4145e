#![allow(dead_code)]

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use privrisk_core::sim::{simulate_panel, SimConfig, StartState};
use privrisk_core::{LinearizationSchedule, Measure, ModelParams, ObservedSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random SPD matrix with eigenvalues roughly in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Matrix2<f64> {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    let q = Matrix2::new(c, -s, s, c);
    let d = Matrix2::from_diagonal(&Vector2::new(rng.random_range(lo..hi), rng.random_range(lo..hi)));
    let m = q * d * q.transpose();
    (m + m.transpose()) * 0.5
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams {
        k_tilde: Vector2::new(rng.random_range(0.01..0.05), rng.random_range(0.005..0.03)),
        mu0: Vector2::new(rng.random_range(-0.3..0.6), rng.random_range(-0.3..0.3)),
        sigma0: random_spd(rng, 0.005, 0.05),
        phi: Vector2::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)),
        sigma_u: random_spd(rng, 0.001, 0.01),
        sigma_v: random_spd(rng, 0.0005, 0.005),
        r_tilde: rng.random_range(0.0..0.02),
    }
}

/// Payout ratios whose expected payout-to-value ratio `exp(varphi_t)` is
/// drawn from `[lo, hi]` under `params`.
pub fn payout_ratios_for(params: &ModelParams, rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Vector2<f64>> {
    (1..=n)
        .map(|t| {
            let varphi = Vector2::new(rng.random_range(lo..hi).ln(), rng.random_range(lo..hi).ln());
            varphi + params.k_tilde + params.mean_log_multiplier(t - 1)
        })
        .collect()
}

/// One simulated book-value history under the real measure.
pub fn simulate_series(
    params: &ModelParams,
    ratios: &[Vector2<f64>],
    initial_books: Vector2<f64>,
    seed: u64,
) -> (ObservedSeries, Vec<Vector2<f64>>) {
    let schedule = LinearizationSchedule::build(params, ratios).unwrap();
    let start = StartState::prior(params, &initial_books);
    let cfg = SimConfig {
        n_paths: 1,
        horizon: ratios.len(),
        seed,
        measure: Measure::Real,
        antithetic: false,
    };
    let panel = simulate_panel(params, &schedule, &start, &cfg).unwrap();
    let path = &panel.paths[0];
    (
        ObservedSeries {
            initial_books,
            growth: path.b[1..].to_vec(),
            payout_ratios: ratios.to_vec(),
        },
        path.m.clone(),
    )
}

/// Writes one acceptance line to stderr (not captured by the test harness)
/// and fails the test when `ok` is false.
pub fn verdict(id: &str, ok: bool, detail: &str) {
    let line = format!("ACCEPTANCE {id}: {} | {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {id} failed: {detail}");
}
