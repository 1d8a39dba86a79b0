//! `ctpower`: batch front-end for the completion-time power allocation
//! library. One command per process; results go to `--output` or stdout,
//! failures emit machine-readable JSON on stderr and a nonzero exit.
//! Set `CTPOWER_LOG=debug` (or any `env_logger` filter) for verbosity.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use ctpower::costs::CostSpec;
use ctpower::fading::{
    solve_adaptive_avg, solve_adaptive_expected_cost, FadingStates, PowerMode,
};
use ctpower::model::{NetworkInstance, PowerField};
use ctpower::region::{convexity_audit, trace_completion_region, PointKind};
use ctpower::robust::{solve_robust, ChannelDistribution, OutageSpec, RobustInstance};
use ctpower::solver::{solve_perfect_csi, SolveOptions};

#[derive(Parser)]
#[command(name = "ctpower", about = "Transmit-power allocation minimizing convex costs of packet completion times", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Input JSON file.
    #[arg(long)]
    input: PathBuf,
    /// Output file; stdout if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Cost spec: inline JSON or a path to a JSON file. Default: max.
    #[arg(long)]
    cost: Option<String>,
    /// Solver options JSON file (fields default individually).
    #[arg(long)]
    opts: Option<PathBuf>,
    /// RNG seed override for Monte Carlo / SAA paths.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample count override for Monte Carlo / SAA paths.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one perfect-CSI instance; emits a Solution JSON.
    Solve(Common),
    /// Trace the 2-user completion-time region boundary; emits CSV.
    Region {
        #[command(flatten)]
        common: Common,
        /// Number of weight vectors to sweep.
        #[arg(long, default_value_t = 33)]
        weights: usize,
        /// Also print convexity audit reports for both traces to stderr.
        #[arg(long, default_value_t = false)]
        audit: bool,
    },
    /// Power adaptation across fading states; emits AdaptiveSolution JSON.
    Fading {
        #[command(flatten)]
        common: Common,
        /// Objective: "expected-time" (J of E[T]) or "expected-cost".
        #[arg(long, default_value = "expected-time")]
        objective: String,
        /// Power constraint: "average" or "short-term".
        #[arg(long, default_value = "average")]
        power: String,
    },
    /// Outage-constrained robust solve; emits Solution + reliability audit.
    Robust(Common),
    /// Run the oracle/property verification suites and print a report.
    Verify,
}

/// Combined robust input: instance shape plus distribution and caps.
#[derive(Deserialize)]
struct RobustInput {
    #[serde(rename = "N_dB_or_linear")]
    noise: PowerField,
    #[serde(rename = "Pmax_dB_or_linear")]
    pmax: PowerField,
    #[serde(rename = "L")]
    packet_bits: Vec<f64>,
    #[serde(rename = "Tmax", default)]
    tmax: Option<Vec<f64>>,
    dist: ChannelDistribution,
    q: Vec<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CTPOWER_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "error": e.to_string(), "chain": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>() })
            );
            ExitCode::FAILURE
        }
    }
}

fn load_cost(arg: &Option<String>) -> anyhow::Result<CostSpec> {
    let Some(arg) = arg else {
        return Ok(CostSpec::Max);
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.clone()
    } else {
        fs::read_to_string(arg).map_err(|e| anyhow::anyhow!("reading cost spec {arg}: {e}"))?
    };
    Ok(CostSpec::from_json(&text)?)
}

fn load_opts(common: &Common) -> anyhow::Result<SolveOptions> {
    let mut opts: SolveOptions = match &common.opts {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("reading options {}: {e}", path.display()))?;
            serde_json::from_str(&text)?
        }
        None => SolveOptions::default(),
    };
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    if let Some(samples) = common.samples {
        opts.saa_samples = samples;
    }
    Ok(opts)
}

fn read_input(common: &Common) -> anyhow::Result<String> {
    fs::read_to_string(&common.input)
        .map_err(|e| anyhow::anyhow!("reading input {}: {e}", common.input.display()))
}

fn emit(common: &Common, text: &str) -> anyhow::Result<()> {
    match &common.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| anyhow::anyhow!("writing output {}: {e}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Solve(common) => {
            let inst = NetworkInstance::from_json(&read_input(&common)?)?;
            let spec = load_cost(&common.cost)?;
            let opts = load_opts(&common)?;
            let sol = solve_perfect_csi(&inst, &spec, &opts)?;
            emit(&common, &sol.to_json())
        }
        Command::Region { common, weights, audit } => {
            let inst = NetworkInstance::from_json(&read_input(&common)?)?;
            let opts = load_opts(&common)?;
            let trace = trace_completion_region(&inst, weights, &opts)?;
            for (theta, err) in &trace.failures {
                log::warn!("point theta={theta:.6} failed: {err}");
            }
            if audit {
                let t = convexity_audit(&trace.t_points(), PointKind::CompletionTime)?;
                let r = convexity_audit(&trace.r_points(), PointKind::Rate)?;
                eprintln!("{}", json!({ "completion_time_audit": t, "rate_audit": r }));
            }
            emit(&common, &trace.to_csv()?)
        }
        Command::Fading { common, objective, power } => {
            let fs = FadingStates::from_json(&read_input(&common)?)?;
            let spec = load_cost(&common.cost)?;
            let opts = load_opts(&common)?;
            let mode = match power.as_str() {
                "average" => PowerMode::Average,
                "short-term" => PowerMode::ShortTerm,
                other => anyhow::bail!("unknown power mode {other:?} (expected average | short-term)"),
            };
            let sol = match objective.as_str() {
                "expected-time" => {
                    if mode != PowerMode::Average {
                        anyhow::bail!("objective expected-time requires --power average");
                    }
                    solve_adaptive_avg(&fs, &spec, &opts)?
                }
                "expected-cost" => solve_adaptive_expected_cost(&fs, &spec, mode, &opts)?,
                other => anyhow::bail!("unknown objective {other:?} (expected expected-time | expected-cost)"),
            };
            emit(&common, &sol.to_json())
        }
        Command::Robust(common) => {
            let input: RobustInput = serde_json::from_str(&read_input(&common)?)?;
            let inst = RobustInstance {
                noise: input.noise.to_linear(),
                pmax: input.pmax.to_linear(),
                packet_bits: input.packet_bits,
                tmax: input.tmax,
            };
            let spec = load_cost(&common.cost)?;
            let opts = load_opts(&common)?;
            let sol = solve_robust(&inst, &input.dist, &OutageSpec { q: input.q }, &spec, &opts)?;
            emit(&common, &sol.to_json())
        }
        Command::Verify => {
            let reports = ctpower::verify::run_all()?;
            let mut failed = 0;
            for r in &reports {
                println!("{}", r.line());
                if !r.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                anyhow::bail!("{failed} of {} checks failed", reports.len());
            }
            println!("all {} checks passed", reports.len());
            Ok(())
        }
    }
}
