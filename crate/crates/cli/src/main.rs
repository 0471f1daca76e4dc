//! `tierkv`: benchmark and cost-simulation harness for the tierkv engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tierkv::bench::{self, WorkloadSpec};
use tierkv::costsim::{self, SimInput};
use tierkv::{Engine, Options};

#[derive(Parser)]
#[command(name = "tierkv", version, about = "Read-aware LSM key-value store harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// YCSB-style workload benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Analytical cost/latency simulation.
    #[command(subcommand)]
    Costsim(CostsimCommand),
}

#[derive(Args)]
struct StoreArgs {
    /// Store directory.
    #[arg(long)]
    dir: PathBuf,
    /// Engine config file (key=value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload: a preset name (a..f / ycsb-a..ycsb-f) or a spec file.
    #[arg(long, default_value = "b")]
    workload: String,
}

impl StoreArgs {
    fn options(&self) -> tierkv::Result<Options> {
        match &self.config {
            Some(path) => Options::from_file(path),
            None => Ok(Options::default()),
        }
    }

    fn spec(&self) -> tierkv::Result<WorkloadSpec> {
        let path = PathBuf::from(&self.workload);
        if path.exists() {
            WorkloadSpec::from_file(&path)
        } else {
            WorkloadSpec::preset(&self.workload)
        }
    }
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Populate a store with the workload's key space.
    Load(StoreArgs),
    /// Execute the workload trace and write report artifacts.
    Run {
        #[command(flatten)]
        store: StoreArgs,
        /// Artifact directory (report.json, heatmap.csv, iostat.csv);
        /// defaults to the store directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the same load + trace with pinning enabled and disabled.
    Compare {
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Subcommand)]
enum CostsimCommand {
    /// Evaluate every level-to-device assignment and report the
    /// cost/latency Pareto frontier.
    Sweep {
        /// Simulation spec file (key=value); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Write the full sweep as CSV (with frontier flags) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> tierkv::Result<()> {
    match cli.command {
        Command::Bench(BenchCommand::Load(store)) => {
            let spec = store.spec()?;
            let engine = Engine::open(&store.dir, store.options()?)?;
            let report = bench::load(&engine, &spec)?;
            engine.close()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Bench(BenchCommand::Run { store, out }) => {
            let spec = store.spec()?;
            let engine = Engine::open(&store.dir, store.options()?)?;
            let report = bench::run(&engine, &spec)?;
            let out = out.unwrap_or_else(|| store.dir.clone());
            bench::write_artifacts(&out, &engine, &report)?;
            engine.close()?;
            println!("{}", report.to_json()?);
            eprintln!("artifacts written to {}", out.display());
        }
        Command::Bench(BenchCommand::Compare { store }) => {
            let spec = store.spec()?;
            let report = bench::compare(&store.dir, &store.options()?, &spec)?;
            println!("{}", report.to_json()?);
        }
        Command::Costsim(CostsimCommand::Sweep { spec, out }) => {
            let input = match spec {
                Some(path) => SimInput::from_file(&path)?,
                None => SimInput::default(),
            };
            let results = costsim::sweep(&input)?;
            let frontier = costsim::pareto_frontier(&results);
            if let Some(path) = &out {
                std::fs::write(path, costsim::results_csv(&results))?;
                eprintln!("sweep written to {}", path.display());
            }
            println!("mapping,cost_dollars,avg_read_latency_us");
            for r in &frontier {
                println!("{},{:.4},{:.4}", r.mapping, r.cost_dollars, r.avg_read_latency_us);
            }
            eprintln!(
                "{} configurations evaluated, {} on the Pareto frontier",
                results.len(),
                frontier.len()
            );
        }
    }
    Ok(())
}
