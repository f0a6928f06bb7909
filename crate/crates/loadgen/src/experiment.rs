//! Client manager: runs one client per trajectory against a broker.
//!
//! Clients start at a shared absolute time plus a per-client stagger. A
//! travel client visits waypoints on a fixed schedule derived from the
//! trajectory timestamps, so which waypoints it visits depends only on the
//! configuration. After the last waypoint it jumps back to the first with no
//! delay. When every client has stopped, the manager waits for in-flight
//! deliveries before clients disconnect.

use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use geopubsub::geometry::{GeoScope, Geofence, Location};
use geopubsub_broker::client::{
    read_stamp, stamped_payload, Client, ClientConfig, ClientError, Delivery, DeliverySink, LatencySample, OpKind,
};
use log::{info, warn};
use parking_lot::Mutex;
use serde::Serialize;

use crate::report::RunReport;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    /// Location updates, per-waypoint consumer fences and producer fences.
    Geo,
    /// One ALL subscription, publishes without fences, no pings.
    NoGeo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ClientKind {
    /// Honours waypoint timestamps.
    Travel,
    /// Moves to the next waypoint as soon as the previous one is done.
    Teleport,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub client_kind: ClientKind,
    pub client_count: usize,
    pub fence_radius: f64,
    pub payload_bytes: usize,
    pub topic: String,
    pub duration: Duration,
    /// Recorded in reports; the broker's own setting is what applies.
    pub granularity: u32,
    pub broker: String,
    /// Shared start time; `None` means now plus `start_delay`.
    pub start_time: Option<SystemTime>,
    pub start_delay: Duration,
    /// Client `i` starts `i * stagger` after the start time.
    pub stagger: Duration,
    /// Replaces the per-waypoint circles in GEO mode with one static fence
    /// used for the subscription (made once) and for every publish.
    pub global_fence: Option<Geofence>,
    /// Stop each client after this many waypoints.
    pub waypoint_limit: Option<u64>,
    /// Longest wait for outstanding deliveries after the clients stop.
    pub drain_timeout: Duration,
    pub client_id_prefix: String,
    pub client: ClientConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Geo,
            client_kind: ClientKind::Travel,
            client_count: 10,
            fence_radius: 0.01,
            payload_bytes: 750,
            topic: "data".to_string(),
            duration: Duration::from_secs(60),
            granularity: 10,
            broker: format!("127.0.0.1:{}", geopubsub_broker::server::DEFAULT_PORT),
            start_time: None,
            start_delay: Duration::from_secs(2),
            stagger: Duration::from_secs(1),
            global_fence: None,
            waypoint_limit: None,
            drain_timeout: Duration::from_secs(5),
            client_id_prefix: "client-".to_string(),
            client: ClientConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{needed} trajectories needed, {available} available")]
    InsufficientTrajectories { needed: usize, available: usize },
    #[error("broker {address} unreachable: {reason}")]
    BrokerUnreachable { address: String, reason: String },
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if self.client_count == 0 {
            return bad("client count must be positive");
        }
        if self.fence_radius.is_nan() || self.fence_radius <= 0.0 {
            return bad("fence radius must be positive");
        }
        if self.payload_bytes < 16 {
            return bad("payload must hold at least 16 bytes for the timestamp and sequence number");
        }
        if self.duration.is_zero() {
            return bad("duration must be positive");
        }
        if self.granularity == 0 {
            return bad("granularity must be positive");
        }
        if self.topic.is_empty() {
            return bad("topic must not be empty");
        }
        Ok(())
    }

    pub fn client_id(&self, index: usize) -> String {
        format!("{}{index}", self.client_id_prefix)
    }
}

/// One operation as scheduled by a client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    /// Waypoints visited before this one, across laps; `None` for setup.
    pub step: Option<u64>,
    /// Index into the trajectory.
    pub waypoint: Option<usize>,
    pub kind: OpKind,
    /// PUBACK match count.
    pub matched: Option<u64>,
    pub error: Option<String>,
}

/// A received publish.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeliveryRecord {
    pub topic: String,
    pub publisher: String,
    pub sequence: u64,
    pub latency_us: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct ClientTrace {
    pub client_id: String,
    pub trajectory_id: u32,
    pub ops: Vec<OpRecord>,
    pub samples: Vec<LatencySample>,
    pub deliveries: Vec<DeliveryRecord>,
}

impl ClientTrace {
    /// The operation sequence without outcomes.
    pub fn op_sequence(&self) -> Vec<(Option<u64>, Option<usize>, OpKind)> {
        self.ops.iter().map(|o| (o.step, o.waypoint, o.kind)).collect()
    }

    /// PUBACK match counts in sorted order.
    pub fn match_counts(&self) -> Vec<u64> {
        let mut counts: Vec<u64> = self.ops.iter().filter_map(|o| o.matched).collect();
        counts.sort_unstable();
        counts
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: RunReport,
    pub traces: Vec<ClientTrace>,
}

fn probe(address: &str, timeout: Duration) -> Result<(), ExperimentError> {
    let unreachable = |reason: String| ExperimentError::BrokerUnreachable { address: address.to_string(), reason };
    let addr = address
        .to_socket_addrs()
        .map_err(|e| unreachable(e.to_string()))?
        .next()
        .ok_or_else(|| unreachable("no address".to_string()))?;
    TcpStream::connect_timeout(&addr, timeout).map(drop).map_err(|e| unreachable(e.to_string()))
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

struct Shared {
    config: ExperimentConfig,
    start: Instant,
    end: Instant,
    expected: AtomicU64,
    received: AtomicU64,
    stopped: Barrier,
    release: Barrier,
}

/// Runs the configured clients over `trajectories[0..client_count]`.
pub fn run_experiment(config: &ExperimentConfig, trajectories: &[Trajectory]) -> Result<ExperimentRun, ExperimentError> {
    config.validate()?;
    if trajectories.len() < config.client_count {
        return Err(ExperimentError::InsufficientTrajectories {
            needed: config.client_count,
            available: trajectories.len(),
        });
    }
    probe(&config.broker, config.client.connect_timeout)?;

    let now_wall = SystemTime::now();
    let now = Instant::now();
    let start_wall = config.start_time.unwrap_or(now_wall + config.start_delay);
    let start = now + start_wall.duration_since(now_wall).unwrap_or(Duration::ZERO);
    let shared = Arc::new(Shared {
        config: config.clone(),
        start,
        end: start + config.duration,
        expected: AtomicU64::new(0),
        received: AtomicU64::new(0),
        stopped: Barrier::new(config.client_count + 1),
        release: Barrier::new(config.client_count + 1),
    });
    info!(
        "{:?}/{:?} run: {} clients against {}, {:?}",
        config.mode, config.client_kind, config.client_count, config.broker, config.duration
    );

    let handles: Vec<_> = (0..config.client_count)
        .map(|i| {
            let shared = shared.clone();
            let trajectory = trajectories[i].clone();
            thread::Builder::new()
                .name(format!("loadgen-{i}"))
                .spawn(move || run_client(&shared, i, &trajectory))
                .expect("spawn client thread")
        })
        .collect();

    shared.stopped.wait();
    let drain_deadline = Instant::now() + config.drain_timeout;
    while shared.received.load(Ordering::SeqCst) < shared.expected.load(Ordering::SeqCst)
        && Instant::now() < drain_deadline
    {
        thread::sleep(Duration::from_millis(5));
    }
    shared.release.wait();
    let traces: Vec<ClientTrace> = handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
    let duration_secs = start.elapsed().as_secs_f64();
    let report = RunReport::from_traces(config.mode, config.client_kind, duration_secs, &traces);
    info!("run finished:\n{}", report.summary());
    Ok(ExperimentRun { report, traces })
}

fn run_client(shared: &Arc<Shared>, index: usize, trajectory: &Trajectory) -> ClientTrace {
    let config = &shared.config;
    let mut trace = ClientTrace { client_id: config.client_id(index), trajectory_id: trajectory.id, ..Default::default() };
    let deliveries: Arc<Mutex<Vec<DeliveryRecord>>> = Arc::default();

    let client = {
        let deliveries = deliveries.clone();
        let counter = shared.clone();
        let sink = DeliverySink::Callback(Box::new(move |d: Delivery| {
            let stamp = read_stamp(&d.payload);
            deliveries.lock().push(DeliveryRecord {
                latency_us: d.delivery_latency_us(),
                topic: d.topic,
                publisher: d.publisher.map(|p| p.to_string()).unwrap_or_default(),
                sequence: stamp.map_or(u64::MAX, |(_, seq)| seq),
            });
            counter.received.fetch_add(1, Ordering::SeqCst);
        }));
        sleep_until(shared.start + config.stagger * index as u32);
        let first = trajectory.waypoints[0].location;
        match Client::connect(&config.broker, &trace.client_id, first, config.client.clone(), sink) {
            Ok(c) => Some(c),
            Err(e) => {
                warn!("{}: connect failed: {e}", trace.client_id);
                trace.ops.push(OpRecord { step: None, waypoint: None, kind: OpKind::Connect, matched: None, error: Some(e.to_string()) });
                None
            }
        }
    };

    if let Some(mut client) = client {
        trace.ops.push(OpRecord { step: None, waypoint: None, kind: OpKind::Connect, matched: None, error: None });
        drive(shared, index, trajectory, &mut client, &mut trace);
        shared.stopped.wait();
        shared.release.wait();
        let mut samples = client.take_samples();
        if let Err(e) = client.disconnect() {
            warn!("{}: disconnect failed: {e}", trace.client_id);
        }
        trace.samples.append(&mut samples);
    } else {
        shared.stopped.wait();
        shared.release.wait();
    }
    trace.deliveries = std::mem::take(&mut *deliveries.lock());
    trace
}

struct Runner<'a> {
    shared: &'a Shared,
    client: &'a mut Client,
    trace: &'a mut ClientTrace,
    closed: bool,
}

impl Runner<'_> {
    fn record(&mut self, step: Option<u64>, waypoint: Option<usize>, kind: OpKind, result: Result<Option<u64>, ClientError>) {
        let (matched, error) = match result {
            Ok(m) => (m, None),
            Err(e) => {
                if matches!(e, ClientError::Closed(_) | ClientError::Io(_)) {
                    self.closed = true;
                }
                warn!("{}: {kind:?} failed: {e}", self.trace.client_id);
                (None, Some(e.to_string()))
            }
        };
        if let Some(m) = matched {
            self.shared.expected.fetch_add(m, Ordering::SeqCst);
        }
        self.trace.ops.push(OpRecord { step, waypoint, kind, matched, error });
    }

    fn subscribe(&mut self, step: Option<u64>, waypoint: Option<usize>, scope: &GeoScope) {
        let r = self.client.subscribe(&self.shared.config.topic, scope).map(|_| None);
        self.record(step, waypoint, OpKind::Subscribe, r);
    }

    fn ping(&mut self, step: u64, waypoint: usize, at: Location) {
        let r = self.client.ping(at).map(|_| None);
        self.record(Some(step), Some(waypoint), OpKind::Ping, r);
    }

    fn publish(&mut self, step: u64, waypoint: usize, scope: &GeoScope) {
        let payload = stamped_payload(self.shared.config.payload_bytes, step);
        let r = self.client.publish(&self.shared.config.topic, scope, &payload).map(Some);
        self.record(Some(step), Some(waypoint), OpKind::Publish, r);
    }
}

fn circle(at: Location, radius: f64) -> GeoScope {
    match Geofence::circle(at, radius) {
        Ok(f) => GeoScope::Fence(f),
        // Only near the poles or the antimeridian; fall back to no fence.
        Err(_) => GeoScope::All,
    }
}

fn drive(shared: &Shared, index: usize, trajectory: &Trajectory, client: &mut Client, trace: &mut ClientTrace) {
    let config = &shared.config;
    let client_start = shared.start + config.stagger * index as u32;
    let global = config.global_fence.clone().map(GeoScope::Fence);
    let mut runner = Runner { shared, client, trace, closed: false };

    match (config.mode, &global) {
        (Mode::NoGeo, _) => runner.subscribe(None, None, &GeoScope::All),
        (Mode::Geo, Some(fence)) => runner.subscribe(None, None, fence),
        (Mode::Geo, None) => {}
    }

    let span = trajectory.span_secs();
    let mut step: u64 = 0;
    'laps: for lap in 0u64.. {
        for (k, waypoint) in trajectory.waypoints.iter().enumerate() {
            if runner.closed || config.waypoint_limit.is_some_and(|n| step >= n) {
                break 'laps;
            }
            match config.client_kind {
                ClientKind::Travel => {
                    let offset = lap as f64 * span + trajectory.offset_secs(k);
                    let due = client_start + Duration::from_secs_f64(offset);
                    if due >= shared.end {
                        break 'laps;
                    }
                    sleep_until(due);
                }
                ClientKind::Teleport => {
                    if Instant::now() >= shared.end {
                        break 'laps;
                    }
                }
            }
            let at = waypoint.location;
            match (config.mode, &global) {
                (Mode::Geo, None) => {
                    let fence = circle(at, config.fence_radius);
                    runner.ping(step, k, at);
                    runner.subscribe(Some(step), Some(k), &fence);
                    runner.publish(step, k, &fence);
                }
                (Mode::Geo, Some(fence)) => {
                    runner.ping(step, k, at);
                    runner.publish(step, k, fence);
                }
                (Mode::NoGeo, _) => runner.publish(step, k, &GeoScope::All),
            }
            step += 1;
        }
        if span == 0.0 && config.client_kind == ClientKind::Travel {
            // A trajectory with no duration would loop without advancing time.
            break;
        }
    }
}
