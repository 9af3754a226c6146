//! Accidental-coincidence budget of a pulsed source.
//!
//! A cw source with the same pair rate produces `1 / (R_p T_c)` times more
//! accidentals than a pulsed one, because accidentals in the pulsed case can
//! only arise inside the `R_p` windows per second that contain a pulse.
//! The absolute budget is composed from the per-pulse click probabilities of
//! the Monte Carlo click model, evaluated at parallel analyzers where an
//! ideal singlet pair never produces a coincidence on its own.

use crate::error::{Error, Result};
use crate::montecarlo::{ClickModel, ExactRates};
use crate::multipair::invert_visibility;
use crate::params::{AnalyzerPair, SourceParams};
use crate::state::ProductProjector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccidentalRatio {
    /// `f_cw / f_pulsed = R_p T_c`.
    pub ratio: f64,
    /// Reciprocal of `ratio`: how much lower a cw pump must be run for the
    /// same accidental rate.
    pub advantage: f64,
    /// Set when `R_p T_c > 1`, i.e. successive pulses share a window.
    pub overlap_warning: bool,
}

pub fn accidental_ratio(rep_rate: f64, coinc_window: f64) -> Result<AccidentalRatio> {
    if !(rep_rate > 0.0 && rep_rate.is_finite()) {
        return Err(Error::invalid("rep_rate must be positive"));
    }
    if !(coinc_window > 0.0 && coinc_window.is_finite()) {
        return Err(Error::invalid("coinc_window must be positive"));
    }
    let ratio = rep_rate * coinc_window;
    Ok(AccidentalRatio {
        ratio,
        advantage: 1.0 / ratio,
        overlap_warning: ratio > 1.0,
    })
}

/// Rates per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetReport {
    pub ratio: AccidentalRatio,
    /// Two or more pairs in one pulse, with photons from different pairs in
    /// the two arms. Equal to `R_p C_min`.
    pub multi_pair: f64,
    /// A pair photon in one arm and fluorescence in the other, both orders.
    pub fluorescence_pair: f64,
    pub fluorescence_fluorescence: f64,
    /// A dark click in one arm with a photon click in the other.
    pub dark_cross: f64,
    pub dark_dark: f64,
    pub singles_s: f64,
    pub singles_i: f64,
    /// Coincidence rate at the maximum of the fringe.
    pub coincidences: f64,
    pub max_alpha: Option<f64>,
}

impl BudgetReport {
    pub fn total_accidental(&self) -> f64 {
        self.multi_pair + self.fluorescence_pair + self.fluorescence_fluorescence + self.dark_cross + self.dark_dark
    }
}

/// Per-pulse click probabilities at parallel H analyzers, with the
/// single-pair state taken as an ideal singlet.
pub fn accidental_rates(params: &SourceParams) -> ExactRates {
    let ideal = SourceParams {
        mixing_p: 1.0,
        mixing_p_hv: 1.0,
        ..*params
    };
    ClickModel::new(&ideal, ProductProjector::from(AnalyzerPair::new(0.0, 0.0))).exact()
}

/// Budget for `params`; `v_target` additionally asks for the largest `alpha`
/// that keeps the model visibility at or above it.
pub fn accidental_budget(params: &SourceParams, v_target: Option<f64>) -> Result<BudgetReport> {
    let params = params.validate()?;
    let rp = params.rep_rate;
    let acc = accidental_rates(&params);
    let peak = ClickModel::new(&params, ProductProjector::from(AnalyzerPair::new(0.0, 0.0).with_ortho(false, true))).exact();
    let max_alpha = v_target.map(|v| max_alpha(v, &params)).transpose()?;
    Ok(BudgetReport {
        ratio: accidental_ratio(rp, params.coinc_window)?,
        multi_pair: rp * acc.pair_pair,
        fluorescence_pair: rp * (acc.pair_fluor + acc.fluor_pair),
        fluorescence_fluorescence: rp * acc.fluor_fluor,
        dark_cross: rp * (acc.dark_signal_cross + acc.dark_idler_cross),
        dark_dark: rp * acc.dark_dark,
        singles_s: rp * peak.singles_s,
        singles_i: rp * peak.singles_i,
        coincidences: rp * peak.coincidences,
        max_alpha,
    })
}

/// Largest `alpha` whose full-model visibility reaches `v_target`.
pub fn max_alpha(v_target: f64, params: &SourceParams) -> Result<f64> {
    invert_visibility(v_target, params.symmetric_eta()?, params.pair_distribution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::Simulator;
    use crate::multipair::coincidence_extrema;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        let r = accidental_ratio(31.1e6, 1.8e-9).unwrap();
        assert!((r.ratio - 0.05598).abs() < 1e-5);
        assert!((r.advantage - 17.86).abs() < 0.01);
        assert!(!r.overlap_warning);
        assert!((accidental_ratio(31.1e6, 1e-9).unwrap().ratio - 0.0311).abs() < 1e-12);
        let unit = accidental_ratio(1e9, 1e-9).unwrap();
        assert!((unit.ratio - 1.0).abs() < 1e-12 && !unit.overlap_warning);
        assert!(accidental_ratio(2e9, 1e-9).unwrap().overlap_warning);
        assert!(accidental_ratio(0.0, 1e-9).is_err());
        assert!(accidental_ratio(1e6, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn ratio_is_bilinear(r in 1e3f64..1e9, t in 1e-12f64..1e-6, a in 0.01f64..100.0) {
            let base = accidental_ratio(r, t).unwrap().ratio;
            let scaled = accidental_ratio(a * r, t).unwrap().ratio;
            prop_assert!((scaled - a * base).abs() <= 1e-12 * scaled.abs());
        }
    }

    fn quiet(alpha: f64) -> SourceParams {
        SourceParams {
            fluor_fraction: 0.0,
            dark_rate_signal: 0.0,
            dark_rate_idler: 0.0,
            ..SourceParams::default().with_alpha(alpha)
        }
    }

    #[test]
    fn multi_pair_only_without_background() {
        let p = quiet(0.01);
        let b = accidental_budget(&p, None).unwrap();
        let oracle = p.rep_rate * 0.095f64.powi(2) * 0.01f64.powi(2) / 4.0;
        assert!((b.multi_pair / oracle - 1.0).abs() < 0.01, "{} vs {oracle}", b.multi_pair);
        let c_min = coincidence_extrema(&p).unwrap().c_min;
        assert!((b.multi_pair - p.rep_rate * c_min).abs() < 1e-6 * b.multi_pair);
        assert_eq!(
            (b.fluorescence_pair, b.fluorescence_fluorescence, b.dark_cross, b.dark_dark),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn source_off_leaves_dark_dark() {
        let p = SourceParams::default().with_alpha(0.0);
        let b = accidental_budget(&p, None).unwrap();
        assert_eq!((b.multi_pair, b.fluorescence_pair, b.fluorescence_fluorescence, b.dark_cross), (0.0, 0.0, 0.0, 0.0));
        let d = 50.0 * 1.8e-9;
        assert!((b.dark_dark - p.rep_rate * d * d).abs() < 1e-12 * b.dark_dark);
    }

    #[test]
    fn power_scaling() {
        let p = SourceParams::default().with_alpha(1e-4);
        let a = accidental_budget(&p, None).unwrap();
        let b = accidental_budget(&p.with_alpha(2e-4), None).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() < 0.01 * y;
        assert!(close(b.multi_pair / a.multi_pair, 4.0));
        assert!(close(b.fluorescence_pair / a.fluorescence_pair, 4.0));
        assert!(close(b.fluorescence_fluorescence / a.fluorescence_fluorescence, 4.0));
        assert!(close(b.dark_cross / a.dark_cross, 2.0));
        assert!(close(b.dark_dark / a.dark_dark, 1.0));
    }

    #[test]
    fn multi_pair_log_slope() {
        let p = SourceParams::default();
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..=10)
            .map(|k| {
                let alpha = 10f64.powf(-3.0 + k as f64 / 10.0);
                let m = accidental_budget(&p.with_alpha(alpha), None).unwrap().multi_pair;
                (alpha.ln(), m.ln())
            })
            .unzip();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope - 2.0).abs() < 0.01, "{slope}");
    }

    #[test]
    fn max_alpha_examples() {
        let p = SourceParams::default();
        assert!((max_alpha(0.99, &p).unwrap() - 0.01).abs() < 2e-4);
        assert!((max_alpha(0.95, &p).unwrap() - 0.05).abs() < 5e-3);
        assert!((max_alpha(0.9999, &p).unwrap() - 1e-4).abs() < 1e-5);
        let b = accidental_budget(&p, Some(0.99)).unwrap();
        assert!(b.max_alpha.is_some());
        assert!(max_alpha(1.0, &p).is_err());
    }

    #[test]
    fn budget_matches_monte_carlo_causes() {
        for alpha in [0.01, 0.1] {
            let p = SourceParams {
                dark_rate_signal: 2e5,
                dark_rate_idler: 2e5,
                ..SourceParams::default().with_alpha(alpha)
            };
            let b = accidental_budget(&p, None).unwrap();
            let pulses = 10_000_000u64;
            let sim = Simulator::new(p).unwrap().with_shards(4);
            let rec = sim.run(&AnalyzerPair::new(0.0, 0.0), pulses, 11).unwrap();
            let c = rec.causes;
            let scale = pulses as f64 / p.rep_rate;
            let checks = [
                ("multi_pair", b.multi_pair, c.pair_pair),
                ("fluorescence_pair", b.fluorescence_pair, c.pair_fluor + c.fluor_pair),
                ("fluorescence_fluorescence", b.fluorescence_fluorescence, c.fluor_fluor),
                ("dark_cross", b.dark_cross, c.dark_signal_cross + c.dark_idler_cross),
                ("dark_dark", b.dark_dark, c.dark_dark),
            ];
            for (name, rate, observed) in checks {
                let expected = rate * scale;
                let sigma = expected.max(1.0).sqrt();
                assert!(
                    (observed as f64 - expected).abs() < 3.0 * sigma,
                    "alpha {alpha} {name}: {observed} vs {expected}"
                );
            }
        }
    }
}
