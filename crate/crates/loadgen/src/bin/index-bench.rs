use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use geopubsub_loadgen::bench::{run_index_benchmark, run_operation_mix, IndexBenchConfig, OperationMix, UpdateGetRatio};
use geopubsub_loadgen::experiment::Mode;
use geopubsub_loadgen::trajectory::{SyntheticConfig, TrajectorySource};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Geo,
    Nogeo,
}

/// Benchmarks the subscription store in process, without a broker.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 10)]
    clients: usize,
    /// Update/get ratios such as 99/1, 1/1, 1/10, 1/99.
    #[arg(long, value_delimiter = ',', default_value = "99/1,1/1,1/10,1/99")]
    ratios: Vec<UpdateGetRatio>,
    #[arg(long, value_delimiter = ',', default_value = "1,10,25,50,100")]
    granularities: Vec<u32>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "geo")]
    modes: Vec<ModeArg>,
    #[arg(long, default_value_t = 0.01)]
    fence_radius: f64,
    #[arg(long, default_value_t = 20_000)]
    ops_per_client: u64,
    #[arg(long, default_value = "synthetic:1")]
    trajectories: TrajectorySource,
    /// Run the single-threaded 35k add / 25k update / 50k get mix instead.
    #[arg(long)]
    mix: bool,
    /// Write results as CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("index-bench: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    if args.mix {
        for &g in &args.granularities {
            let report = run_operation_mix(&OperationMix { granularity: g, fence_radius: args.fence_radius, ..Default::default() });
            eprintln!("g={g}: {:.3} s", report.elapsed_secs);
            csv.serialize(report)?;
        }
        csv.flush()?;
        return Ok(());
    }
    let trajectories = args.trajectories.load(args.clients, &SyntheticConfig::default())?;
    if trajectories.len() < args.clients {
        return Err(format!("{} trajectories for {} clients", trajectories.len(), args.clients).into());
    }
    for mode in &args.modes {
        let mode = match mode {
            ModeArg::Geo => Mode::Geo,
            ModeArg::Nogeo => Mode::NoGeo,
        };
        for &ratio in &args.ratios {
            for &granularity in &args.granularities {
                let config = IndexBenchConfig {
                    clients: args.clients,
                    ratio,
                    granularity,
                    mode,
                    fence_radius: args.fence_radius,
                    ops_per_client: args.ops_per_client,
                    ..Default::default()
                };
                let report = run_index_benchmark(&config, &trajectories);
                eprintln!("{mode:?} {ratio} g={granularity}: {:.0} ops/s", report.ops_per_sec);
                csv.serialize(report)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}
