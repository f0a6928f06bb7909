//! The broker: sessions, keep-alive expiry, publish fan-out and delivery.
//!
//! Each connection gets a reader thread, which handles requests in arrival
//! order, and a writer thread draining the connection's outbound queue.
//! Publishes are handed to a pool of matching workers over a channel; the
//! reader waits for its publish to finish before reading the next request.
//!
//! Lock order is sessions, then store, then locations, then a session's
//! filter set. Workers never hold the sessions lock while matching.

mod metrics;
mod outbound;

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use log::{debug, info, warn};
use parking_lot::{Mutex, RwLock};
use rustc_hash::{FxHashMap, FxHashSet};

use geopubsub::geometry::{GeoScope, Geofence, Location};
use geopubsub::matching::{MatchRequest, SubscriptionStore};
use geopubsub::raster::RasterConfig;
use geopubsub::topics::{Topic, TopicFilter};
use geopubsub::ClientId;

use crate::protocol::{frame_limit_for_payload, read_frame, Kind, Packet, ProtocolError, Reason};
pub use metrics::{MetricsCsv, MetricsRow, MetricsSnapshot};
use metrics::Counters;
use outbound::{Outbound, Push};

pub const DEFAULT_PORT: u16 = 5559;
pub const DEFAULT_MAX_PAYLOAD_BYTES: usize = 256 * 1024;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub bind: SocketAddr,
    pub raster: RasterConfig,
    /// Matching workers; at least one is started.
    pub workers: usize,
    pub session_expiry: Duration,
    pub sweep_interval: Duration,
    pub max_payload_bytes: usize,
    /// Deliveries a connection may have queued before the oldest is dropped.
    pub outbound_capacity: usize,
    /// A consumer that accepts no bytes for this long is disconnected.
    pub write_timeout: Duration,
    pub metrics_csv: Option<PathBuf>,
    pub metrics_interval: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            bind: SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)),
            raster: RasterConfig::default(),
            workers: thread::available_parallelism().map_or(1, |n| n.get()),
            session_expiry: Duration::from_secs(60),
            sweep_interval: Duration::from_secs(1),
            max_payload_bytes: DEFAULT_MAX_PAYLOAD_BYTES,
            outbound_capacity: 10_000,
            write_timeout: Duration::from_secs(10),
            metrics_csv: None,
            metrics_interval: Duration::from_secs(1),
        }
    }
}

impl BrokerConfig {
    /// Defaults bound to an ephemeral loopback port.
    pub fn local() -> Self {
        BrokerConfig { bind: SocketAddr::from(([127, 0, 0, 1], 0)), ..BrokerConfig::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("cannot create metrics file {path}: {source}")]
    MetricsFile { path: PathBuf, source: std::io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

struct Session {
    client_id: ClientId,
    conn_id: u64,
    outbound: Arc<Outbound>,
    stream: TcpStream,
    last_activity_us: AtomicU64,
    closed: AtomicBool,
    filters: Mutex<FxHashSet<TopicFilter>>,
}

impl Session {
    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn send(&self, packet: &Packet) -> Push {
        self.outbound.push_control(Arc::from(packet.encode()))
    }
}

struct PublishJob {
    publisher: Arc<Session>,
    topic: Topic,
    scope: GeoScope,
    payload: Vec<u8>,
    done: Sender<()>,
}

struct Shared {
    config: BrokerConfig,
    epoch: Instant,
    store: RwLock<SubscriptionStore>,
    locations: RwLock<FxHashMap<ClientId, Location>>,
    sessions: Mutex<FxHashMap<ClientId, Arc<Session>>>,
    connections: Mutex<FxHashMap<u64, TcpStream>>,
    next_conn_id: AtomicU64,
    counters: Counters,
    shutting_down: AtomicBool,
}

impl Shared {
    fn micros_since_epoch(&self, at: Instant) -> u64 {
        at.saturating_duration_since(self.epoch).as_micros() as u64
    }

    fn touch(&self, session: &Session) {
        session.last_activity_us.store(self.micros_since_epoch(Instant::now()), Ordering::Relaxed);
    }

    fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot::read(&self.counters, self.sessions.lock().len() as u64)
    }

    /// Registers a new session, terminating any live one with the same id.
    fn open_session(&self, session: Arc<Session>, location: Location) {
        let mut sessions = self.sessions.lock();
        if let Some(old) = sessions.get(&session.client_id).cloned() {
            info!("client {} connected again; closing connection {}", old.client_id, old.conn_id);
            self.terminate_locked(&mut sessions, &old, Some(Reason::SessionTakenOver));
        }
        self.locations.write().insert(session.client_id.clone(), location);
        sessions.insert(session.client_id.clone(), session);
    }

    fn terminate(&self, session: &Arc<Session>, notice: Option<Reason>) -> bool {
        let mut sessions = self.sessions.lock();
        self.terminate_locked(&mut sessions, session, notice)
    }

    /// Removes the session's subscriptions and location and closes its
    /// transport once queued frames are written. Idempotent.
    fn terminate_locked(
        &self,
        sessions: &mut FxHashMap<ClientId, Arc<Session>>,
        session: &Arc<Session>,
        notice: Option<Reason>,
    ) -> bool {
        if session.closed.swap(true, Ordering::SeqCst) {
            return false;
        }
        if sessions.get(&session.client_id).is_some_and(|s| s.conn_id == session.conn_id) {
            sessions.remove(&session.client_id);
        }
        {
            let mut store = self.store.write();
            for filter in session.filters.lock().drain() {
                store.unsubscribe(&session.client_id, &filter);
            }
        }
        self.locations.write().remove(&session.client_id);
        if let Some(reason) = notice {
            session.send(&Packet::Disconnect { reason: Some(reason) });
        }
        session.outbound.close();
        let _ = session.stream.shutdown(Shutdown::Read);
        debug!("session {} (connection {}) terminated", session.client_id, session.conn_id);
        true
    }

    fn expire_sessions(&self, now: Instant) -> Vec<ClientId> {
        let now_us = self.micros_since_epoch(now);
        let limit = self.config.session_expiry.as_micros() as u64;
        let mut sessions = self.sessions.lock();
        let stale: Vec<Arc<Session>> = sessions
            .values()
            .filter(|s| now_us.saturating_sub(s.last_activity_us.load(Ordering::Relaxed)) > limit)
            .cloned()
            .collect();
        let mut expired = Vec::with_capacity(stale.len());
        for session in stale {
            if self.terminate_locked(&mut sessions, &session, Some(Reason::SessionExpired)) {
                expired.push(session.client_id.clone());
            }
        }
        Counters::add(&self.counters.sessions_expired, expired.len() as u64);
        if !expired.is_empty() {
            info!("expired {} session(s)", expired.len());
        }
        expired
    }
}

/// A running broker. Dropping the handle shuts the broker down.
pub struct Broker {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    jobs: Option<Sender<PublishJob>>,
    stop: Option<Sender<()>>,
    threads: Vec<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
}

impl Broker {
    /// Binds the listener and starts the accept loop, workers, the expiry
    /// sweeper and, if configured, the metrics writer.
    pub fn start(config: BrokerConfig) -> Result<Broker, BrokerError> {
        let listener =
            TcpListener::bind(config.bind).map_err(|source| BrokerError::Bind { addr: config.bind, source })?;
        let local_addr = listener.local_addr()?;
        let metrics_file = match &config.metrics_csv {
            Some(path) => Some(
                std::fs::File::create(path)
                    .map_err(|source| BrokerError::MetricsFile { path: path.clone(), source })?,
            ),
            None => None,
        };
        let shared = Arc::new(Shared {
            store: RwLock::new(SubscriptionStore::new(config.raster)),
            config,
            epoch: Instant::now(),
            locations: RwLock::new(FxHashMap::default()),
            sessions: Mutex::new(FxHashMap::default()),
            connections: Mutex::new(FxHashMap::default()),
            next_conn_id: AtomicU64::new(1),
            counters: Counters::default(),
            shutting_down: AtomicBool::new(false),
        });
        let (jobs_tx, jobs_rx) = crossbeam_channel::unbounded::<PublishJob>();
        let (stop_tx, stop_rx) = crossbeam_channel::bounded::<()>(0);

        let workers = (0..shared.config.workers.max(1))
            .map(|i| {
                let shared = shared.clone();
                let jobs = jobs_rx.clone();
                thread::Builder::new()
                    .name(format!("match-worker-{i}"))
                    .spawn(move || worker_loop(&shared, &jobs))
                    .expect("spawn worker")
            })
            .collect();

        let mut threads = Vec::new();
        {
            let shared = shared.clone();
            let jobs = jobs_tx.clone();
            threads.push(thread::Builder::new().name("accept".into()).spawn(move || accept_loop(&shared, listener, jobs))?);
        }
        {
            let shared = shared.clone();
            let stop = stop_rx.clone();
            threads.push(thread::Builder::new().name("expiry-sweeper".into()).spawn(move || {
                while let Err(RecvTimeoutError::Timeout) = stop.recv_timeout(shared.config.sweep_interval) {
                    shared.expire_sessions(Instant::now());
                }
            })?);
        }
        if let Some(file) = metrics_file {
            let shared = shared.clone();
            let stop = stop_rx.clone();
            threads.push(thread::Builder::new().name("metrics".into()).spawn(move || {
                let mut csv = MetricsCsv::new(BufWriter::new(file));
                let mut previous = shared.snapshot();
                while let Err(RecvTimeoutError::Timeout) = stop.recv_timeout(shared.config.metrics_interval) {
                    let current = shared.snapshot();
                    if let Err(e) = csv.write(&MetricsRow::between(&previous, &current, SystemTime::now())) {
                        warn!("metrics csv: {e}");
                    }
                    previous = current;
                }
            })?);
        }
        info!("listening on {local_addr}");
        Ok(Broker { shared, local_addr, jobs: Some(jobs_tx), stop: Some(stop_tx), threads, workers })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.shared.config
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.shared.snapshot()
    }

    pub fn session_count(&self) -> usize {
        self.shared.sessions.lock().len()
    }

    pub fn subscription_count(&self) -> usize {
        self.shared.store.read().len()
    }

    /// Terminates every session idle for longer than the expiry interval as
    /// of `now`, returning their ids. The sweeper calls this periodically.
    pub fn expire_sessions(&self, now: Instant) -> Vec<ClientId> {
        self.shared.expire_sessions(now)
    }

    /// Stops accepting, closes every connection and joins all threads.
    pub fn shutdown(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        if self.shared.shutting_down.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the accept loop; it checks the flag after every accept.
        let wake = match self.local_addr {
            SocketAddr::V4(a) if a.ip().is_unspecified() => SocketAddr::from(([127, 0, 0, 1], a.port())),
            SocketAddr::V6(a) if a.ip().is_unspecified() => SocketAddr::from(([0u16, 0, 0, 0, 0, 0, 0, 1], a.port())),
            addr => addr,
        };
        let _ = TcpStream::connect_timeout(&wake, Duration::from_secs(1));
        self.stop.take();
        {
            let mut sessions = self.shared.sessions.lock();
            let all: Vec<_> = sessions.values().cloned().collect();
            for session in all {
                self.shared.terminate_locked(&mut sessions, &session, Some(Reason::ServerShuttingDown));
            }
        }
        for stream in self.shared.connections.lock().values() {
            let _ = stream.shutdown(Shutdown::Read);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        self.jobs.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        info!("broker on {} stopped", self.local_addr);
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}

fn accept_loop(shared: &Arc<Shared>, listener: TcpListener, jobs: Sender<PublishJob>) {
    for stream in listener.incoming() {
        if shared.shutting_down.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let conn_id = shared.next_conn_id.fetch_add(1, Ordering::Relaxed);
        let shared = shared.clone();
        let jobs = jobs.clone();
        let spawned = thread::Builder::new().name(format!("conn-{conn_id}")).spawn(move || {
            if let Ok(clone) = stream.try_clone() {
                shared.connections.lock().insert(conn_id, clone);
            }
            if let Err(e) = serve_connection(&shared, &jobs, stream, conn_id) {
                debug!("connection {conn_id}: {e}");
            }
            shared.connections.lock().remove(&conn_id);
        });
        if let Err(e) = spawned {
            warn!("cannot spawn connection thread: {e}");
        }
    }
}

/// The acknowledgment answering a request of `kind`, if it has one.
fn ack_for(kind: Kind, reason: Reason) -> Option<Packet> {
    Some(match kind {
        Kind::Connect => Packet::ConnAck { reason },
        Kind::PingReq => Packet::PingResp { reason },
        Kind::Subscribe => Packet::SubAck { reason },
        Kind::Unsubscribe => Packet::UnsubAck { reason },
        Kind::Publish => Packet::PubAck { reason, count: 0 },
        _ => return None,
    })
}

/// Best-effort reply on a connection that has no session.
fn reject(mut stream: &TcpStream, packet: Packet) {
    let _ = stream.write_all(&packet.encode());
    let _ = stream.flush();
    let _ = stream.shutdown(Shutdown::Both);
}

fn parse_fence(wkt: Option<&str>) -> Result<GeoScope, Reason> {
    match wkt {
        None => Ok(GeoScope::All),
        Some(text) => text.parse::<Geofence>().map(GeoScope::Fence).map_err(|_| Reason::InvalidFence),
    }
}

fn serve_connection(
    shared: &Arc<Shared>,
    jobs: &Sender<PublishJob>,
    stream: TcpStream,
    conn_id: u64,
) -> Result<(), ProtocolError> {
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(shared.config.write_timeout))?;
    let max_frame = frame_limit_for_payload(shared.config.max_payload_bytes);
    let mut reader = BufReader::new(stream.try_clone()?);

    let frame = match read_frame(&mut reader, max_frame) {
        Ok(f) => f,
        Err(e) if e.is_eof() => return Ok(()),
        Err(e) => {
            reject(&stream, Packet::ConnAck { reason: Reason::MalformedPacket });
            return Err(e);
        }
    };
    let (client_id, location) = match Packet::decode(&frame) {
        Ok(Packet::Connect { client_id, lat, lon }) => {
            if client_id.is_empty() {
                reject(&stream, Packet::ConnAck { reason: Reason::InvalidClientId });
                return Ok(());
            }
            match Location::new(lat, lon) {
                Ok(loc) => (ClientId::from(client_id), loc),
                Err(_) => {
                    reject(&stream, Packet::ConnAck { reason: Reason::InvalidLocation });
                    return Ok(());
                }
            }
        }
        Ok(other) => {
            let reply = ack_for(other.kind(), Reason::NoSession)
                .unwrap_or(Packet::Disconnect { reason: Some(Reason::NoSession) });
            reject(&stream, reply);
            return Ok(());
        }
        Err(e) => {
            reject(&stream, Packet::ConnAck { reason: Reason::MalformedPacket });
            return Err(e);
        }
    };

    let session = Arc::new(Session {
        client_id,
        conn_id,
        outbound: Arc::new(Outbound::new(shared.config.outbound_capacity)),
        stream: stream.try_clone()?,
        last_activity_us: AtomicU64::new(shared.micros_since_epoch(Instant::now())),
        closed: AtomicBool::new(false),
        filters: Mutex::new(FxHashSet::default()),
    });
    let writer = {
        let shared = shared.clone();
        let session = session.clone();
        thread::Builder::new().name(format!("conn-{conn_id}-writer")).spawn(move || write_loop(&shared, &session, stream))?
    };
    if shared.shutting_down.load(Ordering::SeqCst) {
        session.send(&Packet::ConnAck { reason: Reason::ServerShuttingDown });
        session.outbound.close();
    } else {
        shared.open_session(session.clone(), location);
        session.send(&Packet::ConnAck { reason: Reason::Success });
        debug!("client {} connected on {conn_id}", session.client_id);
        read_loop(shared, jobs, &session, &mut reader, max_frame);
    }
    let _ = writer.join();
    Ok(())
}

fn read_loop(
    shared: &Arc<Shared>,
    jobs: &Sender<PublishJob>,
    session: &Arc<Session>,
    reader: &mut BufReader<TcpStream>,
    max_frame: usize,
) {
    loop {
        let frame = match read_frame(reader, max_frame) {
            Ok(f) => f,
            Err(e) => {
                if !e.is_eof() && !session.is_closed() {
                    debug!("client {}: {e}", session.client_id);
                }
                let notice = matches!(e, ProtocolError::FrameTooLarge(..)).then_some(Reason::MalformedPacket);
                shared.terminate(session, notice);
                return;
            }
        };
        if session.is_closed() {
            return;
        }
        shared.touch(session);
        let packet = match Packet::decode(&frame) {
            Ok(p) => p,
            Err(e) => {
                debug!("client {}: {e}", session.client_id);
                let kind = frame.first().and_then(|&b| Kind::try_from(b).ok());
                match kind.and_then(|k| ack_for(k, Reason::MalformedPacket)) {
                    Some(ack) => {
                        session.send(&ack);
                        shared.terminate(session, None);
                    }
                    None => {
                        shared.terminate(session, Some(Reason::MalformedPacket));
                    }
                }
                return;
            }
        };
        match packet {
            Packet::PingReq { lat, lon } => {
                let reason = match Location::new(lat, lon) {
                    Ok(loc) => {
                        let mut locations = shared.locations.write();
                        if session.is_closed() {
                            return;
                        }
                        locations.insert(session.client_id.clone(), loc);
                        Reason::Success
                    }
                    Err(_) => Reason::InvalidLocation,
                };
                session.send(&Packet::PingResp { reason });
            }
            Packet::Subscribe { filter, fence } => {
                let reason = subscribe(shared, session, &filter, fence.as_deref());
                session.send(&Packet::SubAck { reason });
            }
            Packet::Unsubscribe { filter } => {
                let reason = match TopicFilter::parse(&filter) {
                    Ok(filter) => {
                        let mut store = shared.store.write();
                        let held = session.filters.lock().remove(&filter);
                        if held {
                            store.unsubscribe(&session.client_id, &filter);
                            Reason::Success
                        } else {
                            Reason::NoSubscriptionExisted
                        }
                    }
                    Err(_) => Reason::InvalidTopicFilter,
                };
                session.send(&Packet::UnsubAck { reason });
            }
            Packet::Publish { topic, fence, payload, .. } => {
                let prepared = if payload.len() > shared.config.max_payload_bytes {
                    Err(Reason::PayloadTooLarge)
                } else {
                    Topic::parse(&topic)
                        .map_err(|_| Reason::InvalidTopic)
                        .and_then(|topic| parse_fence(fence.as_deref()).map(|scope| (topic, scope)))
                };
                match prepared {
                    Ok((topic, scope)) => {
                        let (done_tx, done_rx) = crossbeam_channel::bounded(1);
                        let job = PublishJob { publisher: session.clone(), topic, scope, payload, done: done_tx };
                        if jobs.send(job).is_err() {
                            session.send(&Packet::PubAck { reason: Reason::ServerShuttingDown, count: 0 });
                        } else {
                            let _ = done_rx.recv();
                        }
                    }
                    Err(reason) => {
                        session.send(&Packet::PubAck { reason, count: 0 });
                    }
                }
            }
            Packet::Disconnect { .. } => {
                shared.terminate(session, None);
                return;
            }
            Packet::Connect { .. } => {
                session.send(&Packet::ConnAck { reason: Reason::ProtocolViolation });
                shared.terminate(session, None);
                return;
            }
            other => {
                debug!("client {} sent {:?}", session.client_id, other.kind());
                shared.terminate(session, Some(Reason::ProtocolViolation));
                return;
            }
        }
    }
}

fn subscribe(shared: &Shared, session: &Session, filter: &str, fence: Option<&str>) -> Reason {
    let filter = match TopicFilter::parse(filter) {
        Ok(f) => f,
        Err(_) => return Reason::InvalidTopicFilter,
    };
    let scope = match parse_fence(fence) {
        Ok(s) => s,
        Err(reason) => return reason,
    };
    let mut store = shared.store.write();
    if session.is_closed() {
        return Reason::NoSession;
    }
    store.subscribe(session.client_id.clone(), &filter, scope);
    session.filters.lock().insert(filter);
    Reason::Success
}

fn worker_loop(shared: &Shared, jobs: &Receiver<PublishJob>) {
    for job in jobs.iter() {
        process_publish(shared, &job);
        let _ = job.done.send(());
    }
}

fn process_publish(shared: &Shared, job: &PublishJob) {
    let publisher = &job.publisher;
    let matched = {
        let store = shared.store.read();
        let locations = shared.locations.read();
        let request = MatchRequest {
            publisher: publisher.client_id.clone(),
            publisher_location: locations.get(&publisher.client_id).copied(),
            topic: job.topic.clone(),
            producer_scope: job.scope.clone(),
        };
        store.match_request(&request, &*locations)
    };
    Counters::add(&shared.counters.publishes_in, 1);
    let matched = match matched {
        Ok(m) => m,
        Err(_) => {
            publisher.send(&Packet::PubAck { reason: Reason::UnknownLocation, count: 0 });
            return;
        }
    };
    if !matched.is_empty() {
        let frame: Arc<[u8]> = Arc::from(
            Packet::Publish {
                client_id: Some(publisher.client_id.to_string()),
                topic: job.topic.to_string(),
                fence: None,
                payload: job.payload.clone(),
            }
            .encode(),
        );
        let targets: Vec<Arc<Outbound>> = {
            let sessions = shared.sessions.lock();
            matched.iter().filter_map(|c| sessions.get(c).map(|s| s.outbound.clone())).collect()
        };
        let mut drops = 0;
        for target in targets {
            if target.push_delivery(frame.clone()) == Push::QueuedWithDrop {
                drops += 1;
            }
        }
        Counters::add(&shared.counters.queue_drops, drops);
        Counters::add(&shared.counters.matches, matched.len() as u64);
    }
    publisher.send(&Packet::PubAck { reason: Reason::Success, count: matched.len() as u64 });
}

fn write_loop(shared: &Shared, session: &Arc<Session>, stream: TcpStream) {
    let mut writer = BufWriter::with_capacity(64 * 1024, stream);
    let mut batch = Vec::new();
    let mut failed = false;
    'outer: while session.outbound.pop_all(&mut batch) {
        let mut delivered = 0;
        for entry in batch.drain(..) {
            if writer.write_all(&entry.frame).is_err() {
                failed = true;
                break 'outer;
            }
            delivered += entry.delivery as u64;
        }
        if writer.flush().is_err() {
            failed = true;
            break;
        }
        Counters::add(&shared.counters.deliveries_out, delivered);
    }
    if failed {
        debug!("client {}: write failed, closing", session.client_id);
        shared.terminate(session, None);
    }
    let _ = writer.get_ref().shutdown(Shutdown::Both);
}
