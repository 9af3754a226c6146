use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use spdc_core::budget::{accidental_budget, accidental_ratio};
use spdc_core::chsh::{default_angles, poisson_counts, s_exact, s_from_counts};
use spdc_core::fringe::visibility_vs_alpha;
use spdc_core::harness::{self, data_section, ChshMode, Command, Run, Spacing, TomoSource};
use spdc_core::montecarlo::{ClickModel, Simulator};
use spdc_core::multipair::{brute_force_c_n, c_n_extrema, coincidence_extrema, coincidence_extrema_for};
use spdc_core::rng::block_rng;
use spdc_core::state::ProductProjector;
use spdc_core::tomography::{forward_counts, reconstruct, standard_settings, CountMode, Cost};
use spdc_core::{AnalyzerPair, Basis, PairDistribution, SourceParams, TwoQubitState};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_visibility_law() -> Result<String, String> {
    let v = |alpha| coincidence_extrema_for(alpha, 0.095, PairDistribution::Poisson).unwrap().visibility.unwrap();
    let (v1, v5) = (v(0.01), v(0.05));
    ensure((v1 - 0.99).abs() <= 2e-4, || format!("V(0.01) = {v1}"))?;
    ensure((v5 - 0.95).abs() <= 5e-3, || format!("V(0.05) = {v5}"))?;
    Ok(format!("V(0.01)={v1:.5} V(0.05)={v5:.5}"))
}

fn c2_brute_force_oracle() -> Result<String, String> {
    let mut worst = 0.0f64;
    for eta in [0.05, 0.095, 0.5, 1.0] {
        for n in 1..=12 {
            let (lo, hi) = c_n_extrema(n, eta).map_err(|e| e.to_string())?;
            let (blo, bhi) = brute_force_c_n(n, eta).map_err(|e| e.to_string())?;
            worst = worst.max((lo - blo).abs()).max((hi - bhi).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn c3_monte_carlo_vs_model() -> Result<String, String> {
    let template = SourceParams::ideal(0.01, 0.095);
    let grid = [0.01, 0.1, 0.7];
    let points = visibility_vs_alpha(&template, &grid, Basis::HV, 10_000_000, 31, 4).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for p in points {
        let model = coincidence_extrema(&template.with_alpha(p.alpha)).unwrap().visibility.unwrap();
        let (v, err) = (p.visibility.unwrap(), p.visibility_err.unwrap());
        let z = (v - model) / err;
        ensure(z.abs() <= 3.0, || format!("alpha {}: {v} vs {model} ({z:.2} sigma)", p.alpha))?;
        notes.push(format!("{:.2}:{z:+.2}s", p.alpha));
    }
    Ok(notes.join(" "))
}

fn c4_fringe_visibilities() -> Result<String, String> {
    let runs = harness::scenario("fig3-fringe", &SourceParams::default(), None, None).map_err(|e| e.to_string())?;
    let mut vs = Vec::new();
    for (_, run) in &runs {
        let out = harness::execute(run, 4).map_err(|e| e.to_string())?;
        vs.push(out.summary_value("visibility").unwrap());
    }
    let (hv, ad) = (vs[0], vs[1]);
    ensure((0.975..=0.986).contains(&hv), || format!("V_HV = {hv}"))?;
    ensure((0.960..=0.973).contains(&ad), || format!("V_AD = {ad}"))?;
    Ok(format!("V_HV={hv:.4} V_AD={ad:.4}"))
}

fn c5_chsh() -> Result<String, String> {
    let angles = default_angles();
    let s0 = s_exact(&TwoQubitState::singlet(), &angles);
    ensure((s0 - 2.0 * 2f64.sqrt()).abs() <= 1e-12, || format!("singlet S = {s0}"))?;
    let r = s_from_counts(&poisson_counts(&TwoQubitState::werner(0.968), &angles, 1e5, 5).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure((r.s - 2.738).abs() <= 3.0 * r.s_err, || format!("S = {} +/- {}", r.s, r.s_err))?;
    Ok(format!("S_singlet={s0:.12} S={:.4}+/-{:.4}", r.s, r.s_err))
}

fn c6_tomography() -> Result<String, String> {
    let settings = standard_settings();
    let mut rng = block_rng(66, 0);
    let mut worst = 1.0f64;
    for k in 0..50 {
        let truth = TwoQubitState::random_hilbert_schmidt(&mut rng);
        let counts = forward_counts(&truth, &settings, 1e4, CountMode::Exact).map_err(|e| e.to_string())?;
        let r = reconstruct(&counts, &settings).map_err(|e| e.to_string())?;
        let f = truth.fidelity(&r.rho_hat);
        ensure(f >= 0.999, || format!("state {k}: fidelity {f}"))?;
        worst = worst.min(f);
    }
    let w = TwoQubitState::werner(0.9847);
    let counts = forward_counts(&w, &settings, 1e4, CountMode::Exact).map_err(|e| e.to_string())?;
    let r = reconstruct(&counts, &settings).map_err(|e| e.to_string())?;
    ensure((r.fidelity - 0.9885).abs() <= 0.002, || format!("werner fidelity {}", r.fidelity))?;
    ensure((r.tangle - 0.954).abs() <= 0.01, || format!("werner tangle {}", r.tangle))?;
    Ok(format!("worst random F={worst:.6} werner F={:.4} tangle={:.4}", r.fidelity, r.tangle))
}

fn c7_rate_budget() -> Result<String, String> {
    let r = accidental_ratio(31.1e6, 1.8e-9).map_err(|e| e.to_string())?;
    ensure((r.ratio - 0.05598).abs() <= 1e-5, || format!("ratio {}", r.ratio))?;
    ensure((r.advantage - 17.86).abs() <= 0.01, || format!("advantage {}", r.advantage))?;
    let p = SourceParams::default();
    let (a1, a2) = (1e-4, 1e-3);
    let lo = accidental_budget(&p.with_alpha(a1), None).map_err(|e| e.to_string())?;
    let hi = accidental_budget(&p.with_alpha(a2), None).map_err(|e| e.to_string())?;
    let slope = |x: f64, y: f64| (y / x).ln() / (a2 / a1).ln();
    let slopes = [
        ("multi_pair", slope(lo.multi_pair, hi.multi_pair), 2.0),
        ("fluorescence_pair", slope(lo.fluorescence_pair, hi.fluorescence_pair), 2.0),
        ("fluorescence_fluorescence", slope(lo.fluorescence_fluorescence, hi.fluorescence_fluorescence), 2.0),
        ("dark_cross", slope(lo.dark_cross, hi.dark_cross), 1.0),
        ("dark_dark", slope(lo.dark_dark, hi.dark_dark), 0.0),
    ];
    for (name, s, want) in slopes {
        ensure((s - want).abs() <= 0.01, || format!("{name} slope {s}"))?;
    }
    Ok(format!("ratio={:.5} advantage={:.2}", r.ratio, r.advantage))
}

fn c8_throughput() -> Result<String, String> {
    let base = SourceParams::default().with_alpha(0.7);
    let peak = ProductProjector::from(AnalyzerPair::new(0.0, 0.0).with_ortho(false, true));
    let singles = |eta: f64| base.rep_rate * ClickModel::new(&base.with_eta(eta), peak).exact().singles_s;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if singles(mid) < 1e6 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);
    let params = base.with_eta(eta);
    let sim = Simulator::new(params).map_err(|e| e.to_string())?.with_shards(4);
    let pulses = params.rep_rate as u64;
    let rec = sim.run_projector(peak, pulses, 88).map_err(|e| e.to_string())?;
    let seconds = pulses as f64 / params.rep_rate;
    let (rate, s_rate) = (rec.coincidences as f64 / seconds, rec.singles_s as f64 / seconds);
    ensure((rate / 110_000.0 - 1.0).abs() <= 0.10, || format!("coincidences {rate}/s at eta {eta}"))?;
    Ok(format!("eta={eta:.4} singles={s_rate:.0}/s coincidences={rate:.0}/s"))
}

fn c9_determinism() -> Result<String, String> {
    let p = SourceParams::default();
    let commands = [
        (Command::Simulate { theta_s_deg: 0.0, theta_i_deg: 90.0 }, 3_000_000),
        (
            Command::ModelCurve {
                alpha_min: 0.01,
                alpha_max: 0.5,
                points: 4,
                spacing: Spacing::Log,
                monte_carlo: true,
            },
            2_500_000,
        ),
        (Command::Fringe { basis: Basis::AD, step_deg: 30.0, repeats: 2 }, 2_200_000),
        (Command::Chsh { mode: ChshMode::Simulate, angles_deg: harness::default_chsh_angles_deg() }, 2_100_000),
        (Command::Chsh { mode: ChshMode::Poisson { counts: 1e4 }, angles_deg: harness::default_chsh_angles_deg() }, 1),
        (
            Command::Tomo {
                source: TomoSource::Simulate,
                cost: Cost::WeightedLeastSquares,
                subtract_accidentals: false,
            },
            3_000_000,
        ),
        (
            Command::Tomo {
                source: TomoSource::Poisson { counts: 1e4 },
                cost: Cost::PoissonLikelihood,
                subtract_accidentals: false,
            },
            1,
        ),
        (Command::Budget { v_target: Some(0.99) }, 1),
    ];
    for (command, pulses) in commands {
        let run = Run::new(command, p, 2024).with_pulses(Some(pulses));
        let name = run.command.name();
        let a = data_section(&harness::execute(&run, 1).map_err(|e| e.to_string())?.contents());
        let b = data_section(&harness::execute(&run, 4).map_err(|e| e.to_string())?.contents());
        let c = data_section(&harness::execute(&run, 4).map_err(|e| e.to_string())?.contents());
        ensure(a == b, || format!("{name}: shards 1 and 4 differ"))?;
        ensure(b == c, || format!("{name}: repeated runs differ"))?;
    }
    Ok("8 commands identical".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Check, Duration); 9] = [
        ("1 visibility law", c1_visibility_law, Duration::from_secs(1)),
        ("2 brute-force oracle", c2_brute_force_oracle, Duration::from_secs(10)),
        ("3 monte carlo vs model", c3_monte_carlo_vs_model, Duration::from_secs(120)),
        ("4 fringe visibilities", c4_fringe_visibilities, Duration::from_secs(120)),
        ("5 chsh", c5_chsh, Duration::from_secs(60)),
        ("6 tomography round trip", c6_tomography, Duration::from_secs(120)),
        ("7 rate budget", c7_rate_budget, Duration::from_secs(1)),
        ("8 throughput", c8_throughput, Duration::from_secs(120)),
        ("9 determinism", c9_determinism, Duration::from_secs(600)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, limit {budget:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({elapsed:.2?}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
