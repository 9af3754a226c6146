//! Two-photon interference fringes: angle scans, sinusoid fits and
//! visibility-versus-pump-level tables.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::montecarlo::Simulator;
use crate::params::{AnalyzerPair, Basis, SourceParams};
use crate::rng::derive_seed;

/// Weighted least-squares fit of `a + b sin^2(theta - phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidFit {
    pub c_max: f64,
    pub c_min: f64,
    /// Angle of the fringe minimum, in `[0, pi)`.
    pub phase: f64,
    pub visibility: f64,
    pub visibility_err: f64,
    /// Set when the fitted minimum came out negative and was clipped to 0.
    pub clipped: bool,
    /// Unweighted coefficient of determination on the counts.
    pub r_squared: f64,
    /// Weighted sum of squared residuals.
    pub chi_squared: f64,
}

/// Fits `counts(theta) = a + b sin^2(theta - phi)`.
///
/// The model is linear in `(c0, c1, c2)` after writing it as
/// `c0 + c1 cos 2theta + c2 sin 2theta`, so the fit is a single weighted
/// linear solve. With `errors` the covariance is `(X^T W X)^-1`; without
/// them (or if all are zero) it is scaled by the residual variance.
pub fn fit_sinusoid(angles: &[f64], counts: &[f64], errors: Option<&[f64]>) -> Result<SinusoidFit> {
    let n = angles.len();
    if n < 5 {
        return Err(Error::invalid(format!("sinusoid fit needs at least 5 points, got {n}")));
    }
    if counts.len() != n || errors.is_some_and(|e| e.len() != n) {
        return Err(Error::invalid("angles, counts and errors differ in length"));
    }
    let lo = angles.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = angles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < FRAC_PI_2 - 1e-9 {
        return Err(Error::invalid("fit points span less than half a fringe period"));
    }

    let weighted = errors.filter(|e| e.iter().any(|&x| x > 0.0));
    let weights: Vec<f64> = match weighted {
        Some(errs) => {
            let floor = errs.iter().cloned().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
            errs.iter().map(|&x| 1.0 / x.max(floor).powi(2)).collect()
        }
        None => vec![1.0; n],
    };

    let row = |theta: f64| Vector3::new(1.0, (2.0 * theta).cos(), (2.0 * theta).sin());
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for k in 0..n {
        let x = row(angles[k]);
        normal += x * x.transpose() * weights[k];
        rhs += x * (counts[k] * weights[k]);
    }
    let inverse = normal
        .try_inverse()
        .ok_or_else(|| Error::numerical("fringe fit normal equations are singular"))?;
    let coef = inverse * rhs;

    let mut chi_squared = 0.0;
    let mut ss_res = 0.0;
    for k in 0..n {
        let r = counts[k] - row(angles[k]).dot(&coef);
        chi_squared += weights[k] * r * r;
        ss_res += r * r;
    }
    let mean = counts.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = counts.iter().map(|c| (c - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let covariance = if weighted.is_some() || n <= 3 {
        inverse
    } else {
        inverse * (chi_squared / (n - 3) as f64)
    };

    let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
    let amplitude = c1.hypot(c2);
    if c0 <= 0.0 {
        return Err(Error::numerical(format!(
            "fringe fit has non-positive mean level {c0:e} (chi^2 = {chi_squared:e})"
        )));
    }
    let phase = (0.5 * (-c2).atan2(-c1)).rem_euclid(PI);
    let c_max = c0 + amplitude;
    let clipped = c0 < amplitude;
    let c_min = if clipped { 0.0 } else { c0 - amplitude };
    let visibility = (c_max - c_min) / (c_max + c_min);
    let grad = if amplitude > 0.0 {
        Vector3::new(-amplitude / (c0 * c0), c1 / (amplitude * c0), c2 / (amplitude * c0))
    } else {
        Vector3::new(0.0, 1.0 / c0, 1.0 / c0)
    };
    let visibility_err = (grad.transpose() * covariance * grad)[(0, 0)].max(0.0).sqrt();
    Ok(SinusoidFit {
        c_max,
        c_min,
        phase,
        visibility,
        visibility_err,
        clipped,
        r_squared,
        chi_squared,
    })
}

/// Mean and spread of repeated coincidence counts at one idler angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringePoint {
    pub theta_i: f64,
    pub mean: f64,
    /// Sample standard deviation over the repeats.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeScan {
    pub theta_s: f64,
    pub repeats: usize,
    pub points: Vec<FringePoint>,
}

impl FringeScan {
    /// Standard errors of the per-point means. Points whose repeats were all
    /// equal fall back to the Poisson estimate.
    pub fn standard_errors(&self) -> Vec<f64> {
        let r = self.repeats as f64;
        self.points
            .iter()
            .map(|p| {
                if p.std > 0.0 {
                    p.std / r.sqrt()
                } else {
                    (p.mean.max(1.0) / r).sqrt()
                }
            })
            .collect()
    }

    pub fn fit(&self) -> Result<SinusoidFit> {
        let angles: Vec<f64> = self.points.iter().map(|p| p.theta_i).collect();
        let means: Vec<f64> = self.points.iter().map(|p| p.mean).collect();
        fit_sinusoid(&angles, &means, Some(&self.standard_errors()))
    }
}

/// Scans the idler analyzer over `theta_i_grid` with the signal analyzer
/// fixed, running `repeats` independent runs of `pulses_per_point` pulses at
/// each angle.
pub fn fringe_scan(
    sim: &Simulator,
    theta_s: f64,
    theta_i_grid: &[f64],
    pulses_per_point: u64,
    repeats: usize,
    seed: u64,
) -> Result<FringeScan> {
    if theta_i_grid.is_empty() {
        return Err(Error::invalid("fringe scan grid is empty"));
    }
    if repeats == 0 {
        return Err(Error::invalid("fringe scan needs at least one repeat"));
    }
    let mut points = Vec::with_capacity(theta_i_grid.len());
    for (k, &theta_i) in theta_i_grid.iter().enumerate() {
        let analyzers = AnalyzerPair::new(theta_s, theta_i);
        let mut counts = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let run_seed = derive_seed(seed, &[k as u64, r as u64]);
            counts.push(sim.run(&analyzers, pulses_per_point, run_seed)?.coincidences as f64);
        }
        let mean = counts.iter().sum::<f64>() / repeats as f64;
        let std = if repeats > 1 {
            (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
        } else {
            0.0
        };
        points.push(FringePoint { theta_i, mean, std });
    }
    Ok(FringeScan {
        theta_s,
        repeats,
        points,
    })
}

/// Visibility from maximum and minimum counts with Poisson-propagated
/// uncertainty. Each count's variance is taken as `max(count, 1)` so that a
/// zero minimum does not yield a zero error bar.
pub fn visibility_from_counts(c_max: u64, c_min: u64) -> Option<(f64, f64)> {
    let (hi, lo) = (c_max as f64, c_min as f64);
    let total = hi + lo;
    if c_max == 0 {
        return None;
    }
    let v = (hi - lo) / total;
    let err = 2.0 * (lo * lo * hi.max(1.0) + hi * hi * lo.max(1.0)).sqrt() / (total * total);
    Some((v, err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityPoint {
    pub alpha: f64,
    pub c_max: u64,
    pub c_min: u64,
    /// `None` when no coincidences were recorded at the maximum setting.
    pub visibility: Option<f64>,
    pub visibility_err: Option<f64>,
}

/// Simulated visibility over a grid of mean pair numbers.
///
/// At each `alpha` the maximum is measured with orthogonal analyzers and the
/// minimum with parallel ones, in the given basis. The A-D basis uses the
/// template's `mixing_p` defect and the H-V basis its `mixing_p_hv`.
pub fn visibility_vs_alpha(
    template: &SourceParams,
    alpha_grid: &[f64],
    basis: Basis,
    pulses_per_point: u64,
    seed: u64,
    shards: usize,
) -> Result<Vec<VisibilityPoint>> {
    let theta = basis.signal_angle();
    let mut out = Vec::with_capacity(alpha_grid.len());
    for (k, &alpha) in alpha_grid.iter().enumerate() {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside the [0, 1] grid range")));
        }
        let sim = Simulator::new(template.with_alpha(alpha).for_basis(basis))?.with_shards(shards);
        let max = sim.run(
            &AnalyzerPair::new(theta, theta + FRAC_PI_2),
            pulses_per_point,
            derive_seed(seed, &[k as u64, 0]),
        )?;
        let min = sim.run(&AnalyzerPair::new(theta, theta), pulses_per_point, derive_seed(seed, &[k as u64, 1]))?;
        let vis = visibility_from_counts(max.coincidences, min.coincidences);
        out.push(VisibilityPoint {
            alpha,
            c_max: max.coincidences,
            c_min: min.coincidences,
            visibility: vis.map(|v| v.0),
            visibility_err: vis.map(|v| v.1),
        });
    }
    Ok(out)
}
