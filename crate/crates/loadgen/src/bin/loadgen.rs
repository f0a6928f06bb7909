use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};
use geopubsub_loadgen::experiment::{run_experiment, ClientKind, ExperimentConfig, Mode};
use geopubsub_loadgen::heatmap::Heatmap;
use geopubsub_loadgen::report::write_ops_csv;
use geopubsub_loadgen::trajectory::{SyntheticConfig, TrajectorySource};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Geo,
    Nogeo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Travel,
    Teleport,
}

/// Runs trajectory-driven clients against a broker and reports latencies
/// and delivery counts.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, value_enum, default_value = "geo")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    clients: usize,
    #[arg(long, value_enum, default_value = "travel")]
    kind: KindArg,
    /// Run length in seconds.
    #[arg(long, default_value_t = 60)]
    duration: u64,
    #[arg(long, default_value = "127.0.0.1:5559")]
    broker: String,
    /// A directory of .plt files or synthetic:<seed>.
    #[arg(long, default_value = "synthetic:1")]
    trajectories: TrajectorySource,
    #[arg(long, default_value_t = 0.01)]
    fence_radius: f64,
    #[arg(long, default_value_t = 750)]
    payload_bytes: usize,
    #[arg(long, default_value = "data")]
    topic: String,
    /// Broker granularity, recorded in the summary.
    #[arg(long, default_value_t = 10)]
    granularity: u32,
    /// Delay between client starts, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    stagger_ms: u64,
    /// Shared start time in Unix seconds, for runs spread over several hosts.
    #[arg(long)]
    start_time: Option<f64>,
    /// Per-operation CSV output.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    /// Summary JSON output [default: --out with a .json extension].
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Also write a location heatmap of the used trajectories (CSV).
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loadgen: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let trajectories = args.trajectories.load(args.clients, &SyntheticConfig::default())?;
    let config = ExperimentConfig {
        mode: match args.mode {
            ModeArg::Geo => Mode::Geo,
            ModeArg::Nogeo => Mode::NoGeo,
        },
        client_kind: match args.kind {
            KindArg::Travel => ClientKind::Travel,
            KindArg::Teleport => ClientKind::Teleport,
        },
        client_count: args.clients,
        fence_radius: args.fence_radius,
        payload_bytes: args.payload_bytes,
        topic: args.topic,
        duration: Duration::from_secs(args.duration),
        granularity: args.granularity,
        broker: args.broker,
        start_time: args.start_time.map(|s| UNIX_EPOCH + Duration::from_secs_f64(s)),
        stagger: Duration::from_millis(args.stagger_ms),
        ..ExperimentConfig::default()
    };
    if let Some(path) = &args.heatmap {
        if let Some(map) = Heatmap::fit(&trajectories[..args.clients.min(trajectories.len())], 40, 80) {
            map.write_csv(BufWriter::new(File::create(path)?))?;
            print!("{}", map.to_text());
        }
    }
    let started = SystemTime::now();
    let run = run_experiment(&config, &trajectories)?;
    write_ops_csv(BufWriter::new(File::create(&args.out)?), &run.traces)?;
    let summary_path = args.summary.unwrap_or_else(|| args.out.with_extension("json"));
    let mut summary = serde_json::to_value(&run.report)?;
    summary["granularity"] = config.granularity.into();
    summary["trajectories"] = args.trajectories.to_string().into();
    summary["started_unix_secs"] = started.duration_since(UNIX_EPOCH)?.as_secs_f64().into();
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    print!("{}", run.report.summary());
    println!("samples: {}  summary: {}", args.out.display(), summary_path.display());
    Ok(())
}
