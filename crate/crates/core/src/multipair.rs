//! Closed-form multi-pair visibility model.
//!
//! A pulse carries `n` independent singlet pairs with weight `p_n(alpha)`.
//! For ideal analyzers set orthogonal (maximum) or parallel (minimum) and
//! non-resolving detectors of efficiency `eta` on both arms, the per-pulse
//! coincidence probabilities are `C = sum_{n >= 1} p_n c(n)` with
//!
//! ```text
//! c_min(n) = 2^-n sum_{k=1}^{n-1} C(n,k) [1 - (1-eta)^k] [1 - (1-eta)^(n-k)]
//! c_max(n) = 2^-n sum_{k=1}^{n}   C(n,k) [1 - (1-eta)^k]^2
//! ```
//!
//! and the visibility is `(C_max - C_min) / (C_max + C_min)`. To first order
//! in `alpha` the visibility is `1 - alpha`, independent of `eta`.

use crate::error::{Error, Result};
use crate::params::{PairDistribution, SourceParams};

/// Tail mass left out of every truncated pair-number sum.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Hard cap on the truncation point of the pair-number sums.
pub const MAX_PAIRS: usize = 1000;

/// Largest `n` accepted by [`brute_force_c_n`].
pub const BRUTE_FORCE_MAX_N: u32 = 12;

/// Upper end of the bracket searched by [`invert_visibility`].
pub const ALPHA_HI: f64 = 10.0;

/// Convergence tolerance of [`invert_visibility`], in visibility units.
pub const VISIBILITY_TOLERANCE: f64 = 1e-6;

/// Regression bound `K` in `|V(alpha) - (1 - alpha)| <= K alpha^2` for
/// `alpha <= 0.1`. A sweep over eta in {0.05, 0.095, 0.5, 1} gives a
/// largest ratio of 0.976.
pub const FIRST_ORDER_BOUND: f64 = 1.0;

/// Probability of exactly `n` pairs in a pulse with mean pair number `alpha`.
pub fn pair_weight(n: usize, alpha: f64, dist: PairDistribution) -> f64 {
    match dist {
        PairDistribution::Poisson => {
            let mut p = (-alpha).exp();
            for k in 1..=n {
                p *= alpha / k as f64;
            }
            p
        }
        PairDistribution::Thermal => {
            let ratio = alpha / (1.0 + alpha);
            ratio.powi(n as i32) / (1.0 + alpha)
        }
    }
}

/// Pair weights `p_0 ..= p_nmax`, truncated at the smallest `nmax` whose
/// remaining tail mass is below [`TAIL_TOLERANCE`].
pub fn pair_weights(alpha: f64, dist: PairDistribution) -> Result<Vec<f64>> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::invalid("alpha negative"));
    }
    let mut weights = Vec::new();
    let mut cumulative = 0.0;
    let mut p = match dist {
        PairDistribution::Poisson => (-alpha).exp(),
        PairDistribution::Thermal => 1.0 / (1.0 + alpha),
    };
    let ratio = alpha / (1.0 + alpha);
    for n in 0..=MAX_PAIRS {
        if n > 0 {
            p *= match dist {
                PairDistribution::Poisson => alpha / n as f64,
                PairDistribution::Thermal => ratio,
            };
        }
        weights.push(p);
        cumulative += p;
        let tail = match dist {
            PairDistribution::Poisson => 1.0 - cumulative,
            // Geometric tail in closed form: P(N > n) = ratio^(n+1).
            PairDistribution::Thermal => ratio.powi(n as i32 + 1),
        };
        if tail < TAIL_TOLERANCE {
            return Ok(weights);
        }
    }
    Err(Error::numerical(format!(
        "pair-number sum for alpha = {alpha} needs more than {MAX_PAIRS} terms"
    )))
}

/// `C(n, k)` by the multiplicative recurrence in floating point.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k {
        c = c * f64::from(n - j) / f64::from(j + 1);
    }
    c
}

/// `C(n, k)` in exact integer arithmetic; `None` on overflow.
pub fn binomial_exact(n: u32, k: u32) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for j in 0..k {
        // Exact at every step: c * (n - j) is divisible by j + 1.
        c = c.checked_mul(u128::from(n - j))? / u128::from(j + 1);
    }
    Some(c)
}

/// Binomial weights `C(n, k) / 2^n` for `k = 0..=n`.
fn half_binomial_weights(n: u32) -> Vec<f64> {
    let mut w = Vec::with_capacity(n as usize + 1);
    let mut b = 0.5f64.powi(n as i32);
    for k in 0..=n {
        w.push(b);
        b = b * f64::from(n - k) / f64::from(k + 1);
    }
    w
}

/// Probability that at least one of `k` photons is detected.
fn at_least_one(eta: f64, k: u32) -> f64 {
    if k == 0 || eta == 0.0 {
        0.0
    } else if eta == 1.0 {
        1.0
    } else {
        -(f64::from(k) * (-eta).ln_1p()).exp_m1()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("eta outside [0, 1]"));
    }
    Ok(())
}

/// Minimum and maximum coincidence probabilities for exactly `n >= 1` pairs.
pub fn c_n_extrema(n: u32, eta: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::invalid("c_n_extrema needs n >= 1"));
    }
    check_eta(eta)?;
    let w = half_binomial_weights(n);
    let mut c_min = 0.0;
    let mut c_max = 0.0;
    for k in 1..=n {
        let hit = at_least_one(eta, k);
        c_max += w[k as usize] * hit * hit;
        if k < n {
            c_min += w[k as usize] * hit * at_least_one(eta, n - k);
        }
    }
    Ok((c_min, c_max))
}

/// Oracle for [`c_n_extrema`]: enumerates every polarization arrangement of
/// `n` pairs and sums exact detection probabilities photon by photon.
///
/// Each pair is independently `H_s V_i` or `V_s H_i` with probability 1/2.
/// With the signal analyzer at H, the maximum setting puts the idler
/// analyzer at V (the partners of the H signal photons) and the minimum
/// setting puts it at H (the partners of the V signal photons).
pub fn brute_force_c_n(n: u32, eta: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::invalid("brute_force_c_n needs n >= 1"));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::invalid(format!(
            "brute_force_c_n limited to n <= {BRUTE_FORCE_MAX_N}"
        )));
    }
    check_eta(eta)?;
    // P(at least one of m detected) = sum over j >= 1 of P(exactly j detected).
    let any_detected = |m: u32| -> f64 {
        (1..=m)
            .map(|j| {
                binomial_exact(m, j).unwrap() as f64 * eta.powi(j as i32) * (1.0 - eta).powi((m - j) as i32)
            })
            .sum()
    };
    let arrangements = 1u32 << n;
    let mut c_min = 0.0;
    let mut c_max = 0.0;
    for mask in 0..arrangements {
        // Bit set: signal photon of that pair is H, so its idler partner is V.
        let signal_h = mask.count_ones();
        let signal_v = n - signal_h;
        let at_signal = any_detected(signal_h);
        c_max += at_signal * any_detected(signal_h);
        c_min += at_signal * any_detected(signal_v);
    }
    let norm = f64::from(arrangements);
    Ok((c_min / norm, c_max / norm))
}

/// Per-pulse coincidence probabilities and the resulting visibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceExtrema {
    pub c_min: f64,
    pub c_max: f64,
    /// `None` when `c_max` is zero and the visibility is undefined.
    pub visibility: Option<f64>,
    /// Highest pair number included in the sums.
    pub truncation_n: usize,
}

/// Fringe visibility from coincidence extrema; `None` if both vanish.
pub fn visibility(c_max: f64, c_min: f64) -> Option<f64> {
    if c_max + c_min > 0.0 && c_max > 0.0 {
        Some((c_max - c_min) / (c_max + c_min))
    } else {
        None
    }
}

pub fn coincidence_extrema_for(
    alpha: f64,
    eta: f64,
    dist: PairDistribution,
) -> Result<CoincidenceExtrema> {
    check_eta(eta)?;
    let weights = pair_weights(alpha, dist)?;
    let mut c_min = 0.0;
    let mut c_max = 0.0;
    for (n, &p) in weights.iter().enumerate().skip(1) {
        let (lo, hi) = c_n_extrema(n as u32, eta)?;
        c_min += p * lo;
        c_max += p * hi;
    }
    Ok(CoincidenceExtrema {
        c_min,
        c_max,
        visibility: visibility(c_max, c_min),
        truncation_n: weights.len() - 1,
    })
}

/// Full-model coincidence extrema for a symmetric-efficiency configuration.
pub fn coincidence_extrema(params: &SourceParams) -> Result<CoincidenceExtrema> {
    let eta = params.symmetric_eta()?;
    coincidence_extrema_for(params.alpha, eta, params.pair_distribution)
}

/// Two-pair truncation of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallAlpha {
    pub c_min: f64,
    pub c_max: f64,
    /// First-order visibility `1 - alpha`.
    pub visibility: f64,
}

pub fn small_alpha(alpha: f64, eta: f64) -> SmallAlpha {
    let e2 = eta * eta;
    SmallAlpha {
        c_min: e2 * alpha * alpha / 4.0,
        c_max: 0.5 * e2 * alpha * (1.0 + alpha / 4.0 * (2.0 - 4.0 * eta + e2)),
        visibility: 1.0 - alpha,
    }
}

fn model_visibility(alpha: f64, eta: f64, dist: PairDistribution) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(1.0);
    }
    coincidence_extrema_for(alpha, eta, dist)?
        .visibility
        .ok_or_else(|| Error::numerical(format!("visibility undefined at alpha = {alpha}, eta = {eta}")))
}

/// Mean pair number at which the full model reaches `v_target`.
///
/// Bisection on `[0, ALPHA_HI]` after checking that the visibility is
/// nonincreasing over the bracket.
pub fn invert_visibility(v_target: f64, eta: f64, dist: PairDistribution) -> Result<f64> {
    if !(v_target > 0.0 && v_target < 1.0) {
        return Err(Error::invalid("target visibility outside (0, 1)"));
    }
    if eta == 0.0 {
        return Err(Error::invalid("eta = 0 gives no coincidences"));
    }
    const GRID: usize = 100;
    let mut prev = 1.0;
    for i in 1..=GRID {
        let a = ALPHA_HI * i as f64 / GRID as f64;
        let v = model_visibility(a, eta, dist)?;
        if v > prev + 1e-12 {
            return Err(Error::numerical(format!(
                "visibility not monotone on [0, {ALPHA_HI}] near alpha = {a}"
            )));
        }
        prev = v;
    }
    if prev > v_target {
        return Err(Error::numerical(format!(
            "no alpha below {ALPHA_HI} reaches visibility {v_target}"
        )));
    }
    let (mut lo, mut hi) = (0.0, ALPHA_HI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = model_visibility(mid, eta, dist)?;
        if (v - v_target).abs() <= VISIBILITY_TOLERANCE {
            return Ok(mid);
        }
        if v > v_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
