use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctmap::cli::{cmd_benchmark, cmd_gen_scenario, cmd_run, BenchmarkConfig, Method, RunConfig};
use ctmap::templates::TEMPLATES;

#[derive(Parser)]
#[command(name = "ctmap", version, about = "Semantic mapping with contextual-temporal particle filtering")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "ctmap")]
        method: Method,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write a belief snapshot every N frames.
        #[arg(long, default_value_t = 1)]
        snapshot_every: usize,
        /// Also write each observed depth frame as a 16-bit PGM (millimetres).
        #[arg(long)]
        dump_depth: bool,
    },
    /// Run several methods over every scenario matching a glob.
    Benchmark {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "ctmap,tmap,raw,icp")]
        method: Vec<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Fail unless mean mAP is ordered ctmap > tmap > raw.
        #[arg(long)]
        assert_ordering: bool,
    },
    /// Write a scenario from a built-in template.
    GenScenario {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(TEMPLATES))]
        template: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let code = match cli.command {
        Command::Run { scenario, method, seed, out, particles, workers, snapshot_every, dump_depth } => cmd_run(&RunConfig {
            scenario,
            method,
            seed,
            out,
            snapshot_every,
            particles,
            workers,
            dump_depth,
        }),
        Command::Benchmark { scenario, method, seed, out, particles, workers, assert_ordering } => {
            cmd_benchmark(&BenchmarkConfig { scenarios: scenario, methods: method, out, seed, particles, workers, assert_ordering })
        }
        Command::GenScenario { template, seed, out } => cmd_gen_scenario(&template, seed, &out),
    };
    ExitCode::from(code as u8)
}
