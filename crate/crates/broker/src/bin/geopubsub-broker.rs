use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use geopubsub::raster::{Granularity, RasterConfig};
use geopubsub_broker::server::{Broker, BrokerConfig, DEFAULT_MAX_PAYLOAD_BYTES, DEFAULT_PORT};

/// Geo-context publish/subscribe broker.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Raster fields per degree.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    granularity: u32,
    /// Matching workers [default: CPU count].
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 60)]
    session_expiry_secs: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_PAYLOAD_BYTES)]
    max_payload_bytes: usize,
    /// Index every field of a fence's bounding box without the intersection test.
    #[arg(long)]
    skip_final_intersection: bool,
    /// Write broker metrics once per second.
    #[arg(long, value_name = "PATH")]
    metrics_csv: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let defaults = BrokerConfig::default();
    let config = BrokerConfig {
        bind: SocketAddr::from(([0, 0, 0, 0], args.port)),
        raster: RasterConfig {
            granularity: Granularity::new(args.granularity).expect("range-checked by clap"),
            skip_final_intersection: args.skip_final_intersection,
        },
        workers: args.workers.unwrap_or(defaults.workers),
        session_expiry: Duration::from_secs(args.session_expiry_secs),
        max_payload_bytes: args.max_payload_bytes,
        metrics_csv: args.metrics_csv,
        ..defaults
    };
    let broker = match Broker::start(config) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("geopubsub-broker: {e}");
            std::process::exit(1);
        }
    };
    log::info!("broker ready on {}", broker.local_addr());
    loop {
        std::thread::park();
    }
}
