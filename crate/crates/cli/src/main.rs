use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use zerowait_cli::config::{self, RecipeConfig};
use zerowait_cli::{commands, recipes, Context, Failure, WORKERS_ENV};

const SIMULATE_HELP: &str = "Config keys: servers, buffer, policies, dists (each: p, mu, erlang, identical.phases, \
identical.p, normalize), lambda, alpha, beta, events, time, warmup_fraction, trials, trajectory_interval, init, seed\n\
Policies: jsq, jiq, i1f, pod:<d>, pod:alpha=<a>";
const ISSP_HELP: &str =
    "Config keys: dist (p, mu, erlang, identical.phases, identical.p, normalize), mode \
(ideal|rigorous), lambda, servers, alpha, iterations, ordering (collapsed|literal), buffer";
const MEANFIELD_HELP: &str =
    "Config keys: dist (p, mu, erlang, identical.phases, identical.p, normalize), lambda, \
t_end, h, sample_every, initial (zero|equilibrium|[s_1..s_M])";
const EXACT_HELP: &str =
    "Config keys: servers, buffer, dist (p, mu, erlang, identical.phases, identical.p, \
normalize), policy, lambda, dump_pi";
const CONSTANTS_HELP: &str =
    "Config keys: dist (p, mu, erlang, identical.phases, identical.p, normalize), buffer, \
servers, alpha";
const RECIPE_HELP: &str = "Config keys (all optional): servers, policies, phases, dist (p, mu, erlang, \
identical.phases, identical.p, normalize), alpha, buffer, events, time, warmup_fraction, trials, trajectory_interval";

#[derive(Parser)]
#[command(
    name = "zerowait",
    version,
    about = "Load-balancing simulator and bound calculator for Coxian service times"
)]
struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed base; trial i of grid point j uses a hash of (seed, j, i).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a grid of (N, policy, distribution) points.
    #[command(after_help = SIMULATE_HELP)]
    Simulate,
    /// Run the iterative lower/upper bound recursion.
    #[command(after_help = ISSP_HELP)]
    Issp,
    /// Integrate the mean-field ODE.
    #[command(after_help = MEANFIELD_HELP)]
    Meanfield,
    /// Solve a small system exactly as a Markov chain.
    #[command(after_help = EXACT_HELP)]
    Exact,
    /// Print the constants derived from a Coxian distribution.
    #[command(after_help = CONSTANTS_HELP)]
    Constants,
    /// Run a built-in experiment: verse-N, verse-M or trajectory.
    #[command(after_help = RECIPE_HELP)]
    Recipe {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(recipes::RECIPES))]
        name: String,
    },
}

fn load<T: for<'de> serde::Deserialize<'de>>(path: Option<&PathBuf>) -> Result<T, Failure> {
    let path =
        path.ok_or_else(|| Failure::Config(anyhow!("--config is required for this subcommand")))?;
    config::load(path).map_err(Failure::Config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let seed_override = cli.seed;
    let ctx = |seed: Option<u64>| {
        Context::new(
            cli.out.clone(),
            seed_override.or(seed).unwrap_or(0),
            workers,
        )
        .map_err(Failure::Runtime)
    };
    match &cli.command {
        Command::Simulate => {
            let cfg: config::SimulateConfig = load(cli.config.as_ref())?;
            let ctx = ctx(cfg.seed)?;
            let out = commands::simulate(&cfg, &ctx)?;
            for f in out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Issp => {
            let cfg = load(cli.config.as_ref())?;
            commands::issp(&cfg, &ctx(None)?)?;
        }
        Command::Meanfield => {
            let cfg = load(cli.config.as_ref())?;
            commands::meanfield(&cfg, &ctx(None)?)?;
        }
        Command::Exact => {
            let cfg = load(cli.config.as_ref())?;
            commands::exact(&cfg, &ctx(None)?)?;
        }
        Command::Constants => {
            let cfg = load(cli.config.as_ref())?;
            commands::constants(&cfg, &ctx(None)?)?;
        }
        Command::Recipe { name } => {
            let cfg: RecipeConfig = match &cli.config {
                Some(p) => config::load(p).map_err(Failure::Config)?,
                None => RecipeConfig::default(),
            };
            recipes::run(name, &cfg, &ctx(None)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
