use wasm_bindgen::prelude::*;

use spdc_core::chsh::{self, default_angles};
use spdc_core::fringe::fringe_scan;
use spdc_core::montecarlo::Simulator;
use spdc_core::multipair::coincidence_extrema_for;
use spdc_core::tomography::{forward_counts, reconstruct, standard_settings, CountMode};
use spdc_core::{Basis, PairDistribution, SourceParams, TwoQubitState};

fn js(e: spdc_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Interleaved `[alpha, V_poisson, V_thermal, ...]` over a linear grid.
#[wasm_bindgen]
pub fn model_curve(alpha_min: f64, alpha_max: f64, points: usize, eta: f64) -> Result<Vec<f64>, JsError> {
    let grid = spdc_core::harness::alpha_grid(alpha_min, alpha_max, points, spdc_core::harness::Spacing::Linear)
        .map_err(js)?;
    let mut out = Vec::with_capacity(3 * grid.len());
    for alpha in grid {
        let v = |dist| -> Result<f64, JsError> {
            Ok(coincidence_extrema_for(alpha, eta, dist).map_err(js)?.visibility.unwrap_or(f64::NAN))
        };
        out.extend([alpha, v(PairDistribution::Poisson)?, v(PairDistribution::Thermal)?]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct Fringe {
    theta: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    visibility: f64,
    visibility_err: f64,
    phase_deg: f64,
}

#[wasm_bindgen]
impl Fringe {
    #[wasm_bindgen(getter)]
    pub fn theta(&self) -> Vec<f64> {
        self.theta.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn std(&self) -> Vec<f64> {
        self.std.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn visibility(&self) -> f64 {
        self.visibility
    }

    #[wasm_bindgen(getter)]
    pub fn visibility_err(&self) -> f64 {
        self.visibility_err
    }

    #[wasm_bindgen(getter)]
    pub fn phase_deg(&self) -> f64 {
        self.phase_deg
    }
}

/// Monte Carlo fringe over 0..180 degrees in 10 degree steps.
#[wasm_bindgen]
pub fn simulate_fringe(
    alpha: f64,
    eta: f64,
    mixing_p: f64,
    basis: &str,
    pulses: u32,
    repeats: usize,
    seed: u32,
) -> Result<Fringe, JsError> {
    let basis: Basis = basis.parse().map_err(js)?;
    let params = SourceParams {
        alpha,
        mixing_p,
        mixing_p_hv: mixing_p,
        ..SourceParams::default().with_eta(eta)
    };
    let sim = Simulator::new(params).map_err(js)?.with_shards(1);
    let grid: Vec<f64> = (0..=18).map(|k| (10.0 * k as f64).to_radians()).collect();
    let scan = fringe_scan(&sim, basis.signal_angle(), &grid, pulses.max(1) as u64, repeats.max(1), seed as u64)
        .map_err(js)?;
    let fit = scan.fit().map_err(js)?;
    Ok(Fringe {
        theta: scan.points.iter().map(|p| p.theta_i.to_degrees()).collect(),
        mean: scan.points.iter().map(|p| p.mean).collect(),
        std: scan.points.iter().map(|p| p.std).collect(),
        visibility: fit.visibility,
        visibility_err: fit.visibility_err,
        phase_deg: fit.phase.to_degrees(),
    })
}

/// `[S, S_err, S_state, F, tangle, purity]` for a Werner state of mixing `p`
/// measured with `counts` expected coincidences per setting.
#[wasm_bindgen]
pub fn werner_analysis(p: f64, counts: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(JsError::new("mixing must lie in [0, 1]"));
    }
    let state = TwoQubitState::werner(p);
    let angles = default_angles();
    let bell = chsh::s_from_counts(&chsh::poisson_counts(&state, &angles, counts, seed as u64).map_err(js)?).map_err(js)?;
    let settings = standard_settings();
    let tomo_counts = forward_counts(&state, &settings, counts, CountMode::Poisson { seed: seed as u64 + 1 }).map_err(js)?;
    let tomo = reconstruct(&tomo_counts, &settings).map_err(js)?;
    Ok(vec![
        bell.s,
        bell.s_err,
        chsh::s_exact(&state, &angles),
        tomo.fidelity,
        tomo.tangle,
        tomo.purity,
    ])
}
