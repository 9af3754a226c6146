use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spdc_core::config::apply_config_str;
use spdc_core::harness::{
    self, default_chsh_angles_deg, parse_cost, ChshMode, Command, Output, Run, Spacing, TomoSource,
};
use spdc_core::{Basis, Error, ErrorKind, SourceParams};

#[derive(Debug, Parser)]
#[command(
    name = "spdc",
    version,
    about = "Pulsed entangled-photon source simulator and analysis toolkit",
    after_help = "Angles are in degrees. Parameters resolve as defaults < --config < --set < --alpha/--eta."
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Global {
    /// Source configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output file; a directory for `scenario`. Defaults to stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Pulses per run, per setting, or per fringe point.
    #[arg(long, global = true, value_name = "N")]
    pulses: Option<u64>,
    /// Worker threads for Monte Carlo runs; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    shards: Option<usize>,
    /// Mean pairs per pulse.
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Detection efficiency of both arms.
    #[arg(long, global = true, allow_hyphen_values = true)]
    eta: Option<f64>,
    /// Override any configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Closed-form coincidence extrema and visibility over a range of alpha.
    ModelCurve {
        #[arg(long, default_value_t = 0.001)]
        alpha_min: f64,
        #[arg(long, default_value_t = 0.7)]
        alpha_max: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value = "linear", value_parser = parse_spacing)]
        spacing: Spacing,
        /// Add simulated extrema and visibility columns.
        #[arg(long)]
        monte_carlo: bool,
    },
    /// Per-block singles and coincidences at one analyzer setting.
    Simulate {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        theta_s: f64,
        #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
        theta_i: f64,
    },
    /// Two-photon interference fringe with a sinusoid fit.
    Fringe {
        #[arg(long, default_value = "hv", value_parser = parse_basis)]
        basis: Basis,
        /// Idler analyzer step over 0..180 degrees.
        #[arg(long, default_value_t = 10.0)]
        step: f64,
        #[arg(long, default_value_t = 30)]
        repeats: usize,
    },
    /// CHSH S parameter from 16 analyzer settings.
    Chsh {
        /// simulate, poisson or exact; the last two use the Werner state of mixing_p.
        #[arg(long, default_value = "simulate")]
        mode: String,
        /// Expected coincidences per setting for poisson and exact modes.
        #[arg(long, default_value_t = 1e5)]
        counts: f64,
        /// a,a',b,b' in degrees.
        #[arg(long, value_delimiter = ',', num_args = 4, allow_negative_numbers = true)]
        angles: Option<Vec<f64>>,
    },
    /// Density-matrix reconstruction from 16 projector counts.
    Tomo {
        /// `setting,count` CSV, e.g. `HV,512`.
        #[arg(long, value_name = "PATH", conflicts_with_all = ["simulate", "counts"])]
        input: Option<PathBuf>,
        /// Simulate counts with the configured source (the default).
        #[arg(long, conflicts_with = "counts")]
        simulate: bool,
        /// Poisson counts per setting from the Werner state of mixing_p.
        #[arg(long)]
        counts: Option<f64>,
        /// wls or poisson.
        #[arg(long, default_value = "wls")]
        cost: String,
        #[arg(long)]
        subtract_accidentals: bool,
    },
    /// Accidental-coincidence rate budget.
    Budget {
        /// Also report the largest alpha that keeps this visibility.
        #[arg(long, allow_hyphen_values = true)]
        v_target: Option<f64>,
    },
    /// Preset reproducing one of the reference figures or tables.
    Scenario {
        /// fig2-fringe, fig3-fringe, fig6-curve, chsh-low-flux or tomo-low-flux.
        name: String,
    },
    /// Regenerate an output file from its header.
    Replay { file: PathBuf },
}

fn parse_spacing(s: &str) -> Result<Spacing, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_basis(s: &str) -> Result<Basis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}

fn run(cli: Cli) -> spdc_core::Result<()> {
    let g = &cli.global;
    let shards = g
        .shards
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match &cli.command {
        Cmd::Scenario { name } => {
            let params = resolve_params(g)?;
            let runs = harness::scenario(name, &params, g.seed, g.pulses)?;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(|source| io_error(&dir, source))?;
            for (file, run) in runs {
                let output = harness::execute(&run, shards)?;
                let path = dir.join(file);
                write_file(&path, &output.contents())?;
                report(&path.display().to_string(), &output);
            }
            Ok(())
        }
        Cmd::Replay { file } => {
            let overridden = g.config.is_some()
                || g.seed.is_some()
                || g.pulses.is_some()
                || g.alpha.is_some()
                || g.eta.is_some()
                || !g.set.is_empty();
            if overridden {
                return Err(Error::Usage("replay takes its configuration from the file header".into()));
            }
            let text = fs::read_to_string(file).map_err(|source| io_error(file, source))?;
            let run = Run::from_header(&text)?;
            emit(g.out.as_deref(), &harness::execute(&run, shards)?)
        }
        cmd => {
            let params = resolve_params(g)?;
            let command = build_command(cmd)?;
            let run = Run::new(command, params, g.seed.unwrap_or(harness::DEFAULT_SEED)).with_pulses(g.pulses);
            emit(g.out.as_deref(), &harness::execute(&run, shards)?)
        }
    }
}

fn resolve_params(g: &Global) -> spdc_core::Result<SourceParams> {
    let mut params = SourceParams::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|source| io_error(path, source))?;
        apply_config_str(&mut params, &text, &path.display().to_string())?;
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        params.set(k.trim(), v.trim())?;
    }
    if let Some(a) = g.alpha {
        params.alpha = a;
    }
    if let Some(e) = g.eta {
        params = params.with_eta(e);
    }
    params.validate()
}

fn build_command(cmd: &Cmd) -> spdc_core::Result<Command> {
    Ok(match cmd {
        Cmd::ModelCurve {
            alpha_min,
            alpha_max,
            points,
            spacing,
            monte_carlo,
        } => Command::ModelCurve {
            alpha_min: *alpha_min,
            alpha_max: *alpha_max,
            points: *points,
            spacing: *spacing,
            monte_carlo: *monte_carlo,
        },
        Cmd::Simulate { theta_s, theta_i } => Command::Simulate {
            theta_s_deg: *theta_s,
            theta_i_deg: *theta_i,
        },
        Cmd::Fringe { basis, step, repeats } => Command::Fringe {
            basis: *basis,
            step_deg: *step,
            repeats: *repeats,
        },
        Cmd::Chsh { mode, counts, angles } => Command::Chsh {
            mode: match mode.as_str() {
                "simulate" => ChshMode::Simulate,
                "poisson" => ChshMode::Poisson { counts: *counts },
                "exact" => ChshMode::Exact { counts: *counts },
                other => return Err(Error::Usage(format!("unknown chsh mode `{other}` (simulate, poisson, exact)"))),
            },
            angles_deg: match angles {
                Some(a) => [a[0], a[1], a[2], a[3]],
                None => default_chsh_angles_deg(),
            },
        },
        Cmd::Tomo {
            input,
            simulate: _,
            counts,
            cost,
            subtract_accidentals,
        } => Command::Tomo {
            source: match (input, counts) {
                (Some(path), _) => TomoSource::Input(path.clone()),
                (None, Some(n)) => TomoSource::Poisson { counts: *n },
                (None, None) => TomoSource::Simulate,
            },
            cost: parse_cost(cost).map_err(|e| Error::Usage(e.to_string()))?,
            subtract_accidentals: *subtract_accidentals,
        },
        Cmd::Budget { v_target } => Command::Budget { v_target: *v_target },
        Cmd::Scenario { .. } | Cmd::Replay { .. } => unreachable!("handled by the caller"),
    })
}

fn emit(out: Option<&Path>, output: &Output) -> spdc_core::Result<()> {
    let text = output.contents();
    match out {
        Some(path) => {
            write_file(path, &text)?;
            report(&path.display().to_string(), output);
        }
        None => {
            io::stdout()
                .write_all(text.as_bytes())
                .map_err(|source| io_error(Path::new("<stdout>"), source))?;
            report(&output.name, output);
        }
    }
    Ok(())
}

fn report(name: &str, output: &Output) {
    let summary: Vec<String> = output.summary.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
    eprintln!("{name}: {}", summary.join(" "));
}

fn write_file(path: &Path, text: &str) -> spdc_core::Result<()> {
    fs::write(path, text).map_err(|source| io_error(path, source))
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
