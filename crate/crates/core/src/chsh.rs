//! CHSH S parameter from coincidence counts or directly from a state.
//!
//! `S = |E(a, b) + E(a, b') - E(a', b) + E(a', b')|` where each correlation
//! `E` comes from four coincidence counts: the chosen analyzer pair and the
//! three combinations with either arm rotated to its orthogonal angle.

use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::montecarlo::Simulator;
use crate::params::AnalyzerPair;
use crate::rng::{block_rng, derive_seed};
use crate::state::TwoQubitState;

/// Sign of each correlation term in `S`.
pub const SIGNS: [f64; 4] = [1.0, 1.0, -1.0, 1.0];

/// Names of the four settings, in the order used throughout this module.
pub const SETTING_NAMES: [&str; 4] = ["(a,b)", "(a,b')", "(a',b)", "(a',b')"];

/// Counts of one setting: `[c_pp, c_pm, c_mp, c_mm]`, where `m` marks the
/// arm rotated by pi/2.
pub type SettingCounts = [f64; 4];

/// Analyzer angles `a, a'` (signal) and `b, b'` (idler), in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshAngles {
    pub theta_s: f64,
    pub theta_s_prime: f64,
    pub theta_i: f64,
    pub theta_i_prime: f64,
}

/// `(-pi/4, 0, 5pi/8, 7pi/8)`, which maximises `S` for the singlet.
pub fn default_angles() -> ChshAngles {
    ChshAngles {
        theta_s: -FRAC_PI_4,
        theta_s_prime: 0.0,
        theta_i: 5.0 * PI / 8.0,
        theta_i_prime: 7.0 * PI / 8.0,
    }
}

impl ChshAngles {
    /// `(signal, idler)` angles of the four settings.
    pub fn settings(&self) -> [(f64, f64); 4] {
        [
            (self.theta_s, self.theta_i),
            (self.theta_s, self.theta_i_prime),
            (self.theta_s_prime, self.theta_i),
            (self.theta_s_prime, self.theta_i_prime),
        ]
    }

    /// The 16 analyzer pairs, grouped per setting in `pp, pm, mp, mm` order.
    pub fn analyzer_pairs(&self) -> [[AnalyzerPair; 4]; 4] {
        self.settings().map(|(s, i)| {
            let base = AnalyzerPair::new(s, i);
            [
                base,
                base.with_ortho(false, true),
                base.with_ortho(true, false),
                base.with_ortho(true, true),
            ]
        })
    }
}

/// Correlation `E` and its Poisson-propagated error from four counts.
///
/// With `A = c_pp + c_mm`, `B = c_pm + c_mp` and `T = A + B`, the error is
/// `sqrt((1 - E^2) / T)`.
pub fn expectation(c_pp: f64, c_pm: f64, c_mp: f64, c_mm: f64) -> Result<(f64, f64)> {
    let total = c_pp + c_pm + c_mp + c_mm;
    if total <= 0.0 {
        return Err(Error::invalid("correlation needs a positive total count"));
    }
    let e = (c_pp - c_pm - c_mp + c_mm) / total;
    let err = ((1.0 - e * e).max(0.0) / total).sqrt();
    Ok((e, err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshResult {
    pub e_values: [f64; 4],
    pub e_errors: [f64; 4],
    pub s: f64,
    pub s_err: f64,
    pub counts: [SettingCounts; 4],
}

impl ChshResult {
    /// Violation of the classical bound in units of `s_err`.
    pub fn sigmas_above_classical(&self) -> f64 {
        (self.s - 2.0) / self.s_err
    }
}

/// Combines 16 counts into `S`; errors add in quadrature.
pub fn s_from_counts(counts: &[SettingCounts; 4]) -> Result<ChshResult> {
    let mut e_values = [0.0; 4];
    let mut e_errors = [0.0; 4];
    for (k, c) in counts.iter().enumerate() {
        let (e, err) = expectation(c[0], c[1], c[2], c[3])
            .map_err(|_| Error::invalid(format!("setting {} has no coincidences", SETTING_NAMES[k])))?;
        e_values[k] = e;
        e_errors[k] = err;
    }
    let s = SIGNS.iter().zip(&e_values).map(|(sg, e)| sg * e).sum::<f64>().abs();
    let s_err = e_errors.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(ChshResult {
        e_values,
        e_errors,
        s,
        s_err,
        counts: *counts,
    })
}

/// Expected counts for `n_per_setting` detected pairs in each setting.
pub fn exact_counts(state: &TwoQubitState, angles: &ChshAngles, n_per_setting: f64) -> [SettingCounts; 4] {
    angles
        .analyzer_pairs()
        .map(|setting| setting.map(|a| n_per_setting * state.coincidence_prob(&a)))
}

/// `S` predicted by the state, without sampling.
pub fn s_exact(state: &TwoQubitState, angles: &ChshAngles) -> f64 {
    let counts = exact_counts(state, angles, 1.0);
    SIGNS
        .iter()
        .zip(&counts)
        .map(|(sg, c)| sg * (c[0] - c[1] - c[2] + c[3]))
        .sum::<f64>()
        .abs()
}

/// Poisson-sampled counts about [`exact_counts`].
pub fn poisson_counts(
    state: &TwoQubitState,
    angles: &ChshAngles,
    n_per_setting: f64,
    seed: u64,
) -> Result<[SettingCounts; 4]> {
    let mut rng = block_rng(seed, 0);
    let expected = exact_counts(state, angles, n_per_setting);
    let mut out = [[0.0; 4]; 4];
    for (k, setting) in expected.iter().enumerate() {
        for (j, &mean) in setting.iter().enumerate() {
            out[k][j] = sample_poisson(&mut rng, mean)?;
        }
    }
    Ok(out)
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::numerical(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng))
}

/// Monte Carlo counts: one run of `pulses_per_subsetting` pulses for each
/// of the 16 analyzer pairs.
pub fn simulate_counts(
    sim: &Simulator,
    angles: &ChshAngles,
    pulses_per_subsetting: u64,
    seed: u64,
) -> Result<[SettingCounts; 4]> {
    let mut out = [[0.0; 4]; 4];
    for (k, setting) in angles.analyzer_pairs().iter().enumerate() {
        for (j, a) in setting.iter().enumerate() {
            let run_seed = derive_seed(seed, &[k as u64, j as u64]);
            out[k][j] = sim.run(a, pulses_per_subsetting, run_seed)?.coincidences as f64;
        }
    }
    Ok(out)
}

/// Correlation predicted for the singlet, `-cos 2(a - b)`.
pub fn singlet_correlation(theta_s: f64, theta_i: f64) -> f64 {
    -(2.0 * (theta_s - theta_i)).cos()
}
