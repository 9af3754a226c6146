//! Run descriptions, CSV outputs and scenario presets.
//!
//! Every output starts with a block of `# key = value` lines recording the
//! command, seed, pulse count, command options and the fully resolved
//! source configuration. [`Run::from_header`] parses that block back, so any
//! output file can be regenerated with [`execute`].

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::budget::accidental_budget;
use crate::chsh::{self, ChshAngles};
use crate::error::{Error, Result};
use crate::fringe::{fringe_scan, visibility_vs_alpha};
use crate::montecarlo::{ClickModel, Simulator};
use crate::multipair::coincidence_extrema_for;
use crate::params::{AnalyzerPair, Basis, SourceParams, FIELD_NAMES};
use crate::rng::{derive_seed, GENERATOR};
use crate::state::{ProductProjector, TwoQubitState};
use crate::tomography::{self, CountMode, Cost};

pub const DEFAULT_SEED: u64 = 1;

pub const SCENARIOS: [&str; 5] = ["fig2-fringe", "fig3-fringe", "fig6-curve", "chsh-low-flux", "tomo-low-flux"];

/// Fitted fringe visibilities the `fig2-fringe` and `fig3-fringe` presets
/// tune their mixing defects to, at the `fig3-fringe` pump level.
pub const TARGET_VISIBILITY_HV: f64 = 0.9804;
pub const TARGET_VISIBILITY_AD: f64 = 0.9664;
const TUNING_ALPHA: f64 = 0.011;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

impl fmt::Display for Spacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spacing::Linear => "linear",
            Spacing::Log => "log",
        })
    }
}

impl FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Spacing::Linear),
            "log" => Ok(Spacing::Log),
            other => Err(Error::invalid(format!("unknown spacing `{other}` (expected linear or log)"))),
        }
    }
}

/// Where CHSH counts come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChshMode {
    /// Monte Carlo of the configured source.
    Simulate,
    /// Poisson draws about `counts * P` for the Werner state of `mixing_p`.
    Poisson { counts: f64 },
    /// Expected counts of the same state.
    Exact { counts: f64 },
}

/// Where tomography counts come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TomoSource {
    /// `setting,count` CSV file.
    Input(PathBuf),
    Simulate,
    /// Poisson draws about `counts * P` for the Werner state of `mixing_p`.
    Poisson { counts: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    ModelCurve {
        alpha_min: f64,
        alpha_max: f64,
        points: usize,
        spacing: Spacing,
        monte_carlo: bool,
    },
    Simulate {
        theta_s_deg: f64,
        theta_i_deg: f64,
    },
    Fringe {
        basis: Basis,
        step_deg: f64,
        repeats: usize,
    },
    Chsh {
        mode: ChshMode,
        angles_deg: [f64; 4],
    },
    Tomo {
        source: TomoSource,
        cost: Cost,
        subtract_accidentals: bool,
    },
    Budget {
        v_target: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ModelCurve { .. } => "model-curve",
            Command::Simulate { .. } => "simulate",
            Command::Fringe { .. } => "fringe",
            Command::Chsh { .. } => "chsh",
            Command::Tomo { .. } => "tomo",
            Command::Budget { .. } => "budget",
        }
    }

    pub fn uses_pulses(&self) -> bool {
        match self {
            Command::ModelCurve { monte_carlo, .. } => *monte_carlo,
            Command::Simulate { .. } | Command::Fringe { .. } => true,
            Command::Chsh { mode, .. } => matches!(mode, ChshMode::Simulate),
            Command::Tomo { source, subtract_accidentals, .. } => {
                matches!(source, TomoSource::Simulate) || *subtract_accidentals
            }
            Command::Budget { .. } => false,
        }
    }

    /// Pulse count when none is given: one second of pulses per setting,
    /// or 10^7 pulses for curve and block runs.
    pub fn default_pulses(&self, params: &SourceParams) -> u64 {
        match self {
            Command::ModelCurve { .. } | Command::Simulate { .. } => 10_000_000,
            _ => params.rep_rate.round() as u64,
        }
    }

    fn options(&self) -> Vec<(&'static str, String)> {
        match self {
            Command::ModelCurve {
                alpha_min,
                alpha_max,
                points,
                spacing,
                monte_carlo,
            } => vec![
                ("alpha_min", num(*alpha_min)),
                ("alpha_max", num(*alpha_max)),
                ("points", points.to_string()),
                ("spacing", spacing.to_string()),
                ("monte_carlo", monte_carlo.to_string()),
            ],
            Command::Simulate { theta_s_deg, theta_i_deg } => {
                vec![("theta_s_deg", num(*theta_s_deg)), ("theta_i_deg", num(*theta_i_deg))]
            }
            Command::Fringe { basis, step_deg, repeats } => vec![
                ("basis", basis.label().to_string()),
                ("step_deg", num(*step_deg)),
                ("repeats", repeats.to_string()),
            ],
            Command::Chsh { mode, angles_deg } => {
                let mut v = match mode {
                    ChshMode::Simulate => vec![("mode", "simulate".to_string())],
                    ChshMode::Poisson { counts } => vec![("mode", "poisson".to_string()), ("counts", num(*counts))],
                    ChshMode::Exact { counts } => vec![("mode", "exact".to_string()), ("counts", num(*counts))],
                };
                v.extend([
                    ("theta_s_deg", num(angles_deg[0])),
                    ("theta_s_prime_deg", num(angles_deg[1])),
                    ("theta_i_deg", num(angles_deg[2])),
                    ("theta_i_prime_deg", num(angles_deg[3])),
                ]);
                v
            }
            Command::Tomo {
                source,
                cost,
                subtract_accidentals,
            } => {
                let mut v = match source {
                    TomoSource::Input(path) => vec![("source", "input".to_string()), ("input", path.display().to_string())],
                    TomoSource::Simulate => vec![("source", "simulate".to_string())],
                    TomoSource::Poisson { counts } => vec![("source", "poisson".to_string()), ("counts", num(*counts))],
                };
                v.push(("cost", cost_label(*cost).to_string()));
                v.push(("subtract_accidentals", subtract_accidentals.to_string()));
                v
            }
            Command::Budget { v_target } => vec![(
                "v_target",
                v_target.map_or_else(|| "none".to_string(), num),
            )],
        }
    }
}

pub fn cost_label(cost: Cost) -> &'static str {
    match cost {
        Cost::WeightedLeastSquares => "wls",
        Cost::PoissonLikelihood => "poisson",
    }
}

pub fn parse_cost(s: &str) -> Result<Cost> {
    match s.trim() {
        "wls" => Ok(Cost::WeightedLeastSquares),
        "poisson" => Ok(Cost::PoissonLikelihood),
        other => Err(Error::invalid(format!("unknown cost `{other}` (expected wls or poisson)"))),
    }
}

/// The CHSH angles of `(-45, 0, 112.5, 157.5)` degrees.
pub fn default_chsh_angles_deg() -> [f64; 4] {
    let a = chsh::default_angles();
    [a.theta_s, a.theta_s_prime, a.theta_i, a.theta_i_prime].map(f64::to_degrees)
}

/// One fully resolved command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub command: Command,
    pub params: SourceParams,
    pub seed: u64,
    pub pulses: u64,
}

impl Run {
    /// A run with the command's default pulse count.
    pub fn new(command: Command, params: SourceParams, seed: u64) -> Self {
        let pulses = command.default_pulses(&params);
        Run {
            command,
            params,
            seed,
            pulses,
        }
    }

    pub fn with_pulses(mut self, pulses: Option<u64>) -> Self {
        if let Some(p) = pulses {
            self.pulses = p;
        }
        self
    }

    pub fn header(&self) -> String {
        let mut h = format!("# spdc {}\n", self.command.name());
        let mut line = |k: &str, v: &str| {
            let _ = writeln!(h, "# {k} = {v}");
        };
        line("command", self.command.name());
        line("seed", &self.seed.to_string());
        if self.command.uses_pulses() {
            line("pulses", &self.pulses.to_string());
        }
        line("generator", GENERATOR);
        for (k, v) in self.command.options() {
            line(k, &v);
        }
        for k in FIELD_NAMES {
            line(k, &self.params.get(k).expect("known key"));
        }
        line("params_hash", &format!("{:016x}", self.params.params_hash()));
        h
    }

    /// Parses the leading comment block written by [`Run::header`].
    pub fn from_header(text: &str) -> Result<Run> {
        let entries = header_entries(text);
        let get = |k: &str| {
            entries
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::invalid(format!("header lacks `{k}`")))
        };
        let f = |k: &str| -> Result<f64> {
            let v = get(k)?;
            v.parse().map_err(|_| Error::invalid(format!("header `{k}`: malformed number `{v}`")))
        };
        let u = |k: &str| -> Result<u64> {
            let v = get(k)?;
            v.parse().map_err(|_| Error::invalid(format!("header `{k}`: malformed integer `{v}`")))
        };
        let b = |k: &str| -> Result<bool> {
            let v = get(k)?;
            v.parse().map_err(|_| Error::invalid(format!("header `{k}`: expected true or false, got `{v}`")))
        };

        let mut params = SourceParams::default();
        for k in FIELD_NAMES {
            params.set(k, get(k)?)?;
        }
        let command = match get("command")? {
            "model-curve" => Command::ModelCurve {
                alpha_min: f("alpha_min")?,
                alpha_max: f("alpha_max")?,
                points: u("points")? as usize,
                spacing: get("spacing")?.parse()?,
                monte_carlo: b("monte_carlo")?,
            },
            "simulate" => Command::Simulate {
                theta_s_deg: f("theta_s_deg")?,
                theta_i_deg: f("theta_i_deg")?,
            },
            "fringe" => Command::Fringe {
                basis: get("basis")?.parse()?,
                step_deg: f("step_deg")?,
                repeats: u("repeats")? as usize,
            },
            "chsh" => Command::Chsh {
                mode: match get("mode")? {
                    "simulate" => ChshMode::Simulate,
                    "poisson" => ChshMode::Poisson { counts: f("counts")? },
                    "exact" => ChshMode::Exact { counts: f("counts")? },
                    other => return Err(Error::invalid(format!("unknown chsh mode `{other}`"))),
                },
                angles_deg: [
                    f("theta_s_deg")?,
                    f("theta_s_prime_deg")?,
                    f("theta_i_deg")?,
                    f("theta_i_prime_deg")?,
                ],
            },
            "tomo" => Command::Tomo {
                source: match get("source")? {
                    "input" => TomoSource::Input(PathBuf::from(get("input")?)),
                    "simulate" => TomoSource::Simulate,
                    "poisson" => TomoSource::Poisson { counts: f("counts")? },
                    other => return Err(Error::invalid(format!("unknown tomography source `{other}`"))),
                },
                cost: parse_cost(get("cost")?)?,
                subtract_accidentals: b("subtract_accidentals")?,
            },
            "budget" => Command::Budget {
                v_target: match get("v_target")? {
                    "none" => None,
                    _ => Some(f("v_target")?),
                },
            },
            other => return Err(Error::invalid(format!("unknown command `{other}` in header"))),
        };
        let seed = u("seed")?;
        let pulses = if command.uses_pulses() {
            u("pulses")?
        } else {
            command.default_pulses(&params)
        };
        Ok(Run {
            command,
            params,
            seed,
            pulses,
        })
    }

    /// Default output file name.
    pub fn file_name(&self) -> String {
        match &self.command {
            Command::Fringe { basis, .. } => format!("fringe-{}.csv", basis.label()),
            c => format!("{}.csv", c.name()),
        }
    }
}

/// `# key = value` pairs of the leading comment block.
pub fn header_entries(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Everything after the leading comment block.
pub fn data_section(text: &str) -> String {
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .fold(String::new(), |mut acc, l| {
            acc.push_str(l);
            acc.push('\n');
            acc
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub name: String,
    pub header: String,
    pub data: String,
    /// Headline numbers for callers that do not want to parse the CSV.
    pub summary: Vec<(&'static str, f64)>,
}

impl Output {
    pub fn contents(&self) -> String {
        format!("{}{}", self.header, self.data)
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

/// Shortest text that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn execute(run: &Run, shards: usize) -> Result<Output> {
    let params = run.params.validate()?;
    if run.command.uses_pulses() && run.pulses == 0 {
        return Err(Error::invalid("pulses must be positive"));
    }
    let (data, summary) = match &run.command {
        Command::ModelCurve {
            alpha_min,
            alpha_max,
            points,
            spacing,
            monte_carlo,
        } => model_curve(&params, &alpha_grid(*alpha_min, *alpha_max, *points, *spacing)?, *monte_carlo, run, shards)?,
        Command::Simulate { theta_s_deg, theta_i_deg } => {
            simulate(&params, AnalyzerPair::from_degrees(*theta_s_deg, *theta_i_deg), run, shards)?
        }
        Command::Fringe { basis, step_deg, repeats } => fringe(&params, *basis, *step_deg, *repeats, run, shards)?,
        Command::Chsh { mode, angles_deg } => chsh_run(&params, *mode, angles_deg, run, shards)?,
        Command::Tomo {
            source,
            cost,
            subtract_accidentals,
        } => tomo(&params, source, *cost, *subtract_accidentals, run, shards)?,
        Command::Budget { v_target } => budget(&params, *v_target)?,
    };
    Ok(Output {
        name: run.file_name(),
        header: run.header(),
        data,
        summary,
    })
}

type Section = (String, Vec<(&'static str, f64)>);

pub fn alpha_grid(alpha_min: f64, alpha_max: f64, points: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::invalid("points must be at least 1"));
    }
    if !(alpha_min >= 0.0 && alpha_max >= alpha_min && alpha_max.is_finite()) {
        return Err(Error::invalid(format!("alpha range [{alpha_min}, {alpha_max}] is not ordered and non-negative")));
    }
    if points == 1 {
        return Ok(vec![alpha_min]);
    }
    let last = (points - 1) as f64;
    Ok(match spacing {
        Spacing::Linear => (0..points)
            .map(|k| alpha_min + (alpha_max - alpha_min) * k as f64 / last)
            .collect(),
        Spacing::Log => {
            if alpha_min <= 0.0 {
                return Err(Error::invalid("log spacing needs alpha_min > 0"));
            }
            let (lo, hi) = (alpha_min.ln(), alpha_max.ln());
            (0..points).map(|k| (lo + (hi - lo) * k as f64 / last).exp()).collect()
        }
    })
}

fn model_curve(params: &SourceParams, grid: &[f64], monte_carlo: bool, run: &Run, shards: usize) -> Result<Section> {
    let eta = params.symmetric_eta()?;
    let mc = if monte_carlo {
        Some(visibility_vs_alpha(params, grid, Basis::HV, run.pulses, run.seed, shards)?)
    } else {
        None
    };
    let mut out = String::from("alpha,c_min,c_max,visibility,visibility_first_order");
    if mc.is_some() {
        out.push_str(",mc_c_min,mc_c_max,mc_visibility,mc_visibility_err");
    }
    out.push('\n');
    let mut worst_first_order: f64 = 0.0;
    for (k, &alpha) in grid.iter().enumerate() {
        let m = coincidence_extrema_for(alpha, eta, params.pair_distribution)?;
        let v = m.visibility.map_or_else(|| "undefined".to_string(), num);
        if let Some(v) = m.visibility {
            worst_first_order = worst_first_order.max((v - (1.0 - alpha)).abs());
        }
        let _ = write!(out, "{},{},{},{},{}", num(alpha), num(m.c_min), num(m.c_max), v, num(1.0 - alpha));
        if let Some(points) = &mc {
            let p = points[k];
            let opt = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), num);
            let _ = write!(out, ",{},{},{},{}", p.c_min, p.c_max, opt(p.visibility), opt(p.visibility_err));
        }
        out.push('\n');
    }
    Ok((out, vec![("max_first_order_deviation", worst_first_order)]))
}

fn simulate(params: &SourceParams, analyzers: AnalyzerPair, run: &Run, shards: usize) -> Result<Section> {
    let sim = Simulator::new(*params)?.with_shards(shards);
    let blocks = sim.run_blocks(ProductProjector::from(analyzers), run.pulses, run.seed)?;
    let mut out = String::from("pulse_block,singles_s,singles_i,coincidences\n");
    let (mut s, mut i, mut c) = (0u64, 0u64, 0u64);
    for (k, b) in blocks.iter().enumerate() {
        let _ = writeln!(out, "{k},{},{},{}", b.singles_s, b.singles_i, b.coincidences);
        s += b.singles_s;
        i += b.singles_i;
        c += b.coincidences;
    }
    let seconds = run.pulses as f64 / params.rep_rate;
    let rates = [("singles_s_rate", s as f64 / seconds), ("singles_i_rate", i as f64 / seconds), ("coincidence_rate", c as f64 / seconds)];
    for (k, v) in rates {
        let _ = writeln!(out, "# {k} = {}", num(v));
    }
    Ok((out, rates.to_vec()))
}

fn fringe(params: &SourceParams, basis: Basis, step_deg: f64, repeats: usize, run: &Run, shards: usize) -> Result<Section> {
    if !(step_deg > 0.0 && step_deg <= 45.0) {
        return Err(Error::invalid(format!("step_deg {step_deg} outside (0, 45]")));
    }
    let steps = (180.0 / step_deg + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| (k as f64 * step_deg).to_radians()).collect();
    let sim = Simulator::new(params.for_basis(basis))?.with_shards(shards);
    let scan = fringe_scan(&sim, basis.signal_angle(), &grid, run.pulses, repeats, run.seed)?;
    let mut out = String::from("theta_i_deg,mean_coinc,std_coinc\n");
    for p in &scan.points {
        let _ = writeln!(out, "{},{},{}", num(p.theta_i.to_degrees()), num(p.mean), num(p.std));
    }
    let fit = scan.fit()?;
    let summary = vec![
        ("visibility", fit.visibility),
        ("visibility_err", fit.visibility_err),
        ("c_max", fit.c_max),
        ("c_min", fit.c_min),
        ("phase_deg", fit.phase.to_degrees()),
        ("r_squared", fit.r_squared),
    ];
    for (k, v) in &summary {
        let _ = writeln!(out, "# fit_{k} = {}", num(*v));
    }
    Ok((out, summary))
}

fn chsh_run(params: &SourceParams, mode: ChshMode, angles_deg: &[f64; 4], run: &Run, shards: usize) -> Result<Section> {
    let [a, ap, b, bp] = angles_deg.map(f64::to_radians);
    let angles = ChshAngles {
        theta_s: a,
        theta_s_prime: ap,
        theta_i: b,
        theta_i_prime: bp,
    };
    let state = TwoQubitState::werner(params.mixing_p);
    let counts = match mode {
        ChshMode::Simulate => {
            let sim = Simulator::new(*params)?.with_shards(shards);
            chsh::simulate_counts(&sim, &angles, run.pulses, run.seed)?
        }
        ChshMode::Poisson { counts } => chsh::poisson_counts(&state, &angles, counts, run.seed)?,
        ChshMode::Exact { counts } => chsh::exact_counts(&state, &angles, counts),
    };
    let r = chsh::s_from_counts(&counts)?;
    let mut out = String::from("setting,theta_s_deg,theta_i_deg,c_pp,c_pm,c_mp,c_mm,e,e_err\n");
    for (k, (s, i)) in angles.settings().iter().enumerate() {
        let c = counts[k];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            chsh::SETTING_NAMES[k],
            num(s.to_degrees()),
            num(i.to_degrees()),
            num(c[0]),
            num(c[1]),
            num(c[2]),
            num(c[3]),
            num(r.e_values[k]),
            num(r.e_errors[k])
        );
    }
    let s_state = chsh::s_exact(&state, &angles);
    let _ = write!(out, "\ns,s_err,s_state\n{},{},{}\n", num(r.s), num(r.s_err), num(s_state));
    Ok((out, vec![("s", r.s), ("s_err", r.s_err), ("s_state", s_state)]))
}

fn tomo(
    params: &SourceParams,
    source: &TomoSource,
    cost: Cost,
    subtract_accidentals: bool,
    run: &Run,
    shards: usize,
) -> Result<Section> {
    let sim = Simulator::new(*params)?.with_shards(shards);
    let (settings, counts) = match source {
        TomoSource::Input(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            tomography::parse_counts_csv(&text)?
        }
        TomoSource::Simulate => {
            let settings = tomography::standard_settings();
            let counts = tomography::simulate_counts(&sim, &settings, run.pulses, run.seed)?;
            (settings, counts)
        }
        TomoSource::Poisson { counts } => {
            let settings = tomography::standard_settings();
            let state = TwoQubitState::werner(params.mixing_p);
            let counts = tomography::forward_counts(&state, &settings, *counts, CountMode::Poisson { seed: run.seed })?;
            (settings, counts)
        }
    };
    let accidentals = subtract_accidentals.then(|| tomography::accidental_counts(&sim, &settings, run.pulses));
    let options = tomography::TomoOptions {
        cost,
        accidentals,
        ..Default::default()
    };
    let r = tomography::reconstruct_with(&counts, &settings, &options)?;
    let mut out = r.rho_hat.to_csv();
    let _ = write!(
        out,
        "\nfidelity,tangle,purity,residual\n{},{},{},{}\n",
        num(r.fidelity),
        num(r.tangle),
        num(r.purity),
        num(r.fit_residual)
    );
    let _ = writeln!(out, "# iterations = {}", r.iterations);
    let _ = writeln!(out, "# converged = {}", r.converged);
    for (label, c) in settings.labels().iter().zip(&counts) {
        let _ = writeln!(out, "# count {label} = {}", num(*c));
    }
    Ok((
        out,
        vec![
            ("fidelity", r.fidelity),
            ("tangle", r.tangle),
            ("purity", r.purity),
            ("residual", r.fit_residual),
        ],
    ))
}

pub const BUDGET_COLUMNS: &str = "ratio_cw_over_pulsed,cw_advantage,overlap_warning,multi_pair,fluorescence_pair,fluorescence_fluorescence,dark_cross,dark_dark,total_accidental,singles_s,singles_i,coincidences,max_alpha";

fn budget(params: &SourceParams, v_target: Option<f64>) -> Result<Section> {
    let b = accidental_budget(params, v_target)?;
    let row = [
        num(b.ratio.ratio),
        num(b.ratio.advantage),
        b.ratio.overlap_warning.to_string(),
        num(b.multi_pair),
        num(b.fluorescence_pair),
        num(b.fluorescence_fluorescence),
        num(b.dark_cross),
        num(b.dark_dark),
        num(b.total_accidental()),
        num(b.singles_s),
        num(b.singles_i),
        num(b.coincidences),
        b.max_alpha.map_or_else(|| "none".to_string(), num),
    ]
    .join(",");
    let mut summary = vec![
        ("ratio", b.ratio.ratio),
        ("advantage", b.ratio.advantage),
        ("multi_pair", b.multi_pair),
        ("coincidences", b.coincidences),
    ];
    if let Some(a) = b.max_alpha {
        summary.push(("max_alpha", a));
    }
    Ok((format!("{BUDGET_COLUMNS}\n{row}\n"), summary))
}

/// Visibility predicted without sampling for the fringe of `basis`:
/// orthogonal versus parallel analyzers, from the exact click model.
pub fn exact_visibility(params: &SourceParams, basis: Basis) -> f64 {
    let p = params.for_basis(basis);
    let theta = basis.signal_angle();
    let c = |a: AnalyzerPair| ClickModel::new(&p, ProductProjector::from(a)).exact().coincidences;
    let hi = c(AnalyzerPair::new(theta, theta + FRAC_PI_2));
    let lo = c(AnalyzerPair::new(theta, theta));
    (hi - lo) / (hi + lo)
}

/// Mixing defect of `basis` that gives `v_target` in [`exact_visibility`],
/// with every other parameter as in `params`.
pub fn tune_mixing(params: &SourceParams, basis: Basis, v_target: f64) -> Result<f64> {
    let with = |p: f64| match basis {
        Basis::HV => SourceParams { mixing_p_hv: p, ..*params },
        Basis::AD => SourceParams { mixing_p: p, ..*params },
    };
    let v_at = |p: f64| exact_visibility(&with(p), basis);
    if !(v_at(1.0) >= v_target) {
        return Err(Error::numerical(format!(
            "visibility {v_target} unreachable: an ideal state gives {:.6}",
            v_at(1.0)
        )));
    }
    if v_at(0.0) > v_target {
        return Err(Error::numerical(format!("visibility {v_target} below the fully mixed value")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if v_at(mid) < v_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Source configuration of the fringe presets: `alpha` with both mixing
/// defects tuned once, at the `fig3-fringe` pump level, to the target
/// visibilities.
pub fn fringe_preset_params(base: &SourceParams, alpha: f64) -> Result<SourceParams> {
    let tuning = base.with_alpha(TUNING_ALPHA);
    Ok(SourceParams {
        alpha,
        mixing_p_hv: tune_mixing(&tuning, Basis::HV, TARGET_VISIBILITY_HV)?,
        mixing_p: tune_mixing(&tuning, Basis::AD, TARGET_VISIBILITY_AD)?,
        ..*base
    })
}

/// Runs of a preset, each paired with its output file name.
///
/// Presets start from `base` and override only the parameters they are
/// about. `seed` and `pulses` replace the preset defaults when given.
pub fn scenario(name: &str, base: &SourceParams, seed: Option<u64>, pulses: Option<u64>) -> Result<Vec<(String, Run)>> {
    let base = base.validate()?;
    let fringe_pair = |prefix: &str, alpha: f64, repeats: usize, seed: u64| -> Result<Vec<(String, Run)>> {
        let params = fringe_preset_params(&base, alpha)?;
        Ok([Basis::HV, Basis::AD]
            .iter()
            .enumerate()
            .map(|(k, &basis)| {
                let cmd = Command::Fringe {
                    basis,
                    step_deg: 10.0,
                    repeats,
                };
                let run = Run::new(cmd, params, derive_seed(seed, &[k as u64])).with_pulses(pulses);
                (format!("{prefix}-{}.csv", basis.label()), run)
            })
            .collect())
    };
    match name {
        "fig2-fringe" => fringe_pair(name, 0.001, 10, seed.unwrap_or(2)),
        "fig3-fringe" => fringe_pair(name, 0.011, 30, seed.unwrap_or(3)),
        "fig6-curve" => {
            let params = SourceParams {
                fluor_fraction: 0.0,
                dark_rate_signal: 0.0,
                dark_rate_idler: 0.0,
                mixing_p: 1.0,
                mixing_p_hv: 1.0,
                ..base
            };
            let cmd = Command::ModelCurve {
                alpha_min: 0.02,
                alpha_max: 0.7,
                points: 35,
                spacing: Spacing::Linear,
                monte_carlo: true,
            };
            Ok(vec![(format!("{name}.csv"), Run::new(cmd, params, seed.unwrap_or(6)).with_pulses(pulses))])
        }
        "chsh-low-flux" => {
            let params = SourceParams {
                alpha: 0.0007,
                mixing_p: 0.968,
                ..base
            };
            let cmd = Command::Chsh {
                mode: ChshMode::Simulate,
                angles_deg: default_chsh_angles_deg(),
            };
            let run = Run {
                pulses: pulses.unwrap_or((30.0 * params.rep_rate).round() as u64),
                ..Run::new(cmd, params, seed.unwrap_or(4))
            };
            Ok(vec![(format!("{name}.csv"), run)])
        }
        "tomo-low-flux" => {
            let params = SourceParams {
                alpha: 0.0007,
                mixing_p: 0.9847,
                ..base
            };
            let cmd = Command::Tomo {
                source: TomoSource::Simulate,
                cost: Cost::WeightedLeastSquares,
                subtract_accidentals: false,
            };
            let run = Run {
                pulses: pulses.unwrap_or((30.0 * params.rep_rate).round() as u64),
                ..Run::new(cmd, params, seed.unwrap_or(5))
            };
            Ok(vec![(format!("{name}.csv"), run)])
        }
        other => Err(Error::Usage(format!(
            "unknown scenario `{other}` (available: {})",
            SCENARIOS.join(", ")
        ))),
    }
}
