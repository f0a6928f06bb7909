use std::time::Duration;

use geopubsub_broker::client::OpKind;
use geopubsub_broker::server::{Broker, BrokerConfig};
use geopubsub_loadgen::experiment::{run_experiment, ClientKind, ExperimentConfig, ExperimentError, Mode};
use geopubsub_loadgen::report::write_ops_csv;
use geopubsub_loadgen::trajectory::{synthetic_trajectories, SyntheticConfig};

fn fast_trajectories(n: usize) -> Vec<geopubsub_loadgen::trajectory::Trajectory> {
    let synthetic = SyntheticConfig { cadence_secs: 0.02, waypoints: 50, ..Default::default() };
    synthetic_trajectories(n, 11, &synthetic)
}

fn config(broker: &Broker, mode: Mode, clients: usize) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        client_kind: ClientKind::Travel,
        client_count: clients,
        duration: Duration::from_millis(600),
        start_delay: Duration::from_millis(100),
        stagger: Duration::from_millis(5),
        broker: broker.local_addr().to_string(),
        ..Default::default()
    }
}

#[test]
fn lone_geo_client_only_reaches_itself() {
    let broker = Broker::start(BrokerConfig::local()).unwrap();
    let run = run_experiment(&config(&broker, Mode::Geo, 1), &fast_trajectories(1)).unwrap();
    let trace = &run.traces[0];
    let publishes: Vec<_> = trace.ops.iter().filter(|o| o.kind == OpKind::Publish).collect();
    assert!(!publishes.is_empty());
    assert!(publishes.iter().all(|o| o.matched == Some(1)), "own fence covers own location");
    assert_eq!(trace.deliveries.len(), publishes.len());
    assert!(trace.deliveries.iter().all(|d| d.publisher == trace.client_id));
    let kinds: Vec<OpKind> = trace.ops.iter().take(4).map(|o| o.kind).collect();
    assert_eq!(kinds, [OpKind::Connect, OpKind::Ping, OpKind::Subscribe, OpKind::Publish]);
    assert_eq!(run.report.messages_lost, 0);
    assert_eq!(broker.session_count(), 0, "clients disconnect at the end");
}

#[test]
fn nogeo_reaches_every_connected_client() {
    let broker = Broker::start(BrokerConfig::local()).unwrap();
    let run = run_experiment(&config(&broker, Mode::NoGeo, 3), &fast_trajectories(3)).unwrap();
    let first_op_kinds: Vec<_> = run.traces.iter().map(|t| t.ops[1].kind).collect();
    assert_eq!(first_op_kinds, [OpKind::Subscribe; 3], "subscribe once at setup");
    assert!(run.traces.iter().all(|t| t.ops.iter().all(|o| o.kind != OpKind::Ping)));
    let late: Vec<u64> = run.traces.iter().flat_map(|t| &t.ops).filter(|o| o.step.is_some_and(|s| s >= 2)).filter_map(|o| o.matched).collect();
    assert!(!late.is_empty() && late.iter().all(|&m| m == 3), "{late:?}");
    assert_eq!(run.report.messages_delivered, run.report.expected_deliveries);

    let mut csv = Vec::new();
    write_ops_csv(&mut csv, &run.traces).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("client,op_kind,t_start,latency_us,matched_count\n"));
    assert_eq!(text.lines().count() - 1, run.traces.iter().map(|t| t.samples.len()).sum::<usize>());
}

#[test]
fn unreachable_broker_is_reported() {
    let addr = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap()
    };
    let config = ExperimentConfig { broker: addr.to_string(), client_count: 1, ..Default::default() };
    let err = run_experiment(&config, &fast_trajectories(1)).unwrap_err();
    assert!(matches!(err, ExperimentError::BrokerUnreachable { .. }), "{err}");
}

#[test]
fn too_few_trajectories_is_an_error() {
    let broker = Broker::start(BrokerConfig::local()).unwrap();
    let err = run_experiment(&config(&broker, Mode::Geo, 5), &fast_trajectories(2)).unwrap_err();
    assert!(matches!(err, ExperimentError::InsufficientTrajectories { needed: 5, available: 2 }));
}
