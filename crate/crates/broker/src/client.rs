//! Blocking client.
//!
//! Requests are synchronous: each call sends one frame and waits for its
//! acknowledgment, recording the round-trip latency. A background reader
//! routes acknowledgments to the caller and forwarded publishes to the
//! delivery sink.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde::Serialize;

use geopubsub::geometry::{GeoScope, Location};
use geopubsub::ClientId;

use crate::protocol::{read_packet, Kind, Packet, ProtocolError, Reason, DEFAULT_MAX_FRAME_BYTES};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub connect_timeout: Duration,
    pub request_timeout: Duration,
    pub max_frame_bytes: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            connect_timeout: Duration::from_secs(5),
            request_timeout: Duration::from_secs(10),
            max_frame_bytes: DEFAULT_MAX_FRAME_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Connect,
    Ping,
    Subscribe,
    Unsubscribe,
    Publish,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Connect => "connect",
            OpKind::Ping => "ping",
            OpKind::Subscribe => "subscribe",
            OpKind::Unsubscribe => "unsubscribe",
            OpKind::Publish => "publish",
        }
    }

    fn ack_kind(self) -> Kind {
        match self {
            OpKind::Connect => Kind::ConnAck,
            OpKind::Ping => Kind::PingResp,
            OpKind::Subscribe => Kind::SubAck,
            OpKind::Unsubscribe => Kind::UnsubAck,
            OpKind::Publish => Kind::PubAck,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("connecting to {addr} timed out")]
    ConnectTimeout { addr: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0:?} not acknowledged in time")]
    Timeout(OpKind),
    #[error("{op:?} rejected: {reason:?}")]
    Rejected { op: OpKind, reason: Reason },
    #[error("connection closed by broker (reason {0:?})")]
    Closed(Option<Reason>),
    #[error("expected a {expected:?} acknowledgment, got {got:?}")]
    UnexpectedAck { expected: Kind, got: Kind },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// One request and its acknowledgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LatencySample {
    pub op_kind: OpKind,
    /// Send time, microseconds since the Unix epoch.
    pub t_start: u64,
    pub latency_us: u64,
    /// Consumer count from the PUBACK; publishes only.
    pub matched_count: Option<u64>,
}

/// A forwarded publish.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub publisher: Option<ClientId>,
    pub topic: String,
    pub payload: Vec<u8>,
    pub received_at: Instant,
    /// Receipt time, microseconds since the Unix epoch.
    pub received_unix_us: u64,
}

/// Where the reader thread hands deliveries.
pub enum DeliverySink {
    Channel(Sender<Delivery>),
    Callback(Box<dyn FnMut(Delivery) + Send>),
    Discard,
}

impl DeliverySink {
    /// A channel sink and its receiving end.
    pub fn channel() -> (DeliverySink, Receiver<Delivery>) {
        let (tx, rx) = crossbeam_channel::unbounded();
        (DeliverySink::Channel(tx), rx)
    }

    fn deliver(&mut self, d: Delivery) {
        match self {
            DeliverySink::Channel(tx) => {
                let _ = tx.send(d);
            }
            DeliverySink::Callback(f) => f(d),
            DeliverySink::Discard => {}
        }
    }
}

pub fn unix_micros(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}

/// Builds a payload of `size` bytes (at least 16) whose first 8 bytes hold
/// the current time in Unix microseconds and next 8 bytes hold `sequence`,
/// both big-endian.
pub fn stamped_payload(size: usize, sequence: u64) -> Vec<u8> {
    let mut payload = vec![0u8; size.max(16)];
    payload[..8].copy_from_slice(&unix_micros(SystemTime::now()).to_be_bytes());
    payload[8..16].copy_from_slice(&sequence.to_be_bytes());
    payload
}

/// Reads the send time and sequence written by [`stamped_payload`].
pub fn read_stamp(payload: &[u8]) -> Option<(u64, u64)> {
    let sent = u64::from_be_bytes(payload.get(..8)?.try_into().ok()?);
    let sequence = u64::from_be_bytes(payload.get(8..16)?.try_into().ok()?);
    Some((sent, sequence))
}

impl Delivery {
    /// Message delivery latency from the embedded send time. Meaningful only
    /// when sender and receiver share a clock.
    pub fn delivery_latency_us(&self) -> Option<u64> {
        read_stamp(&self.payload).map(|(sent, _)| self.received_unix_us.saturating_sub(sent))
    }
}

enum Inbound {
    Ack(Packet),
    Closed(Option<Reason>),
}

pub struct Client {
    client_id: ClientId,
    config: ClientConfig,
    stream: TcpStream,
    writer: BufWriter<TcpStream>,
    acks: Receiver<Inbound>,
    reader: Option<JoinHandle<()>>,
    samples: Vec<LatencySample>,
    closed: Option<Option<Reason>>,
}

fn connect_stream(address: &str, timeout: Duration) -> Result<TcpStream, ClientError> {
    let addrs: Vec<SocketAddr> =
        address.to_socket_addrs().map_err(|_| ClientError::Resolve(address.to_string()))?.collect();
    if addrs.is_empty() {
        return Err(ClientError::Resolve(address.to_string()));
    }
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    match last {
        Some(e) if e.kind() == io::ErrorKind::TimedOut => {
            Err(ClientError::ConnectTimeout { addr: address.to_string() })
        }
        Some(e) => Err(e.into()),
        None => unreachable!("at least one address was tried"),
    }
}

fn read_loop(mut reader: BufReader<TcpStream>, max_frame: usize, acks: Sender<Inbound>, mut sink: DeliverySink) {
    loop {
        match read_packet(&mut reader, max_frame) {
            Ok(Packet::Publish { client_id, topic, payload, .. }) => sink.deliver(Delivery {
                publisher: client_id.map(ClientId::from),
                topic,
                payload,
                received_at: Instant::now(),
                received_unix_us: unix_micros(SystemTime::now()),
            }),
            Ok(Packet::Disconnect { reason }) => {
                let _ = acks.send(Inbound::Closed(reason));
                return;
            }
            Ok(ack) => {
                if acks.send(Inbound::Ack(ack)).is_err() {
                    return;
                }
            }
            Err(_) => {
                let _ = acks.send(Inbound::Closed(None));
                return;
            }
        }
    }
}

impl Client {
    /// Opens a connection and waits for CONNACK.
    pub fn connect(
        address: &str,
        client_id: &str,
        location: Location,
        config: ClientConfig,
        sink: DeliverySink,
    ) -> Result<Client, ClientError> {
        let stream = connect_stream(address, config.connect_timeout)?;
        stream.set_nodelay(true)?;
        let (ack_tx, ack_rx) = crossbeam_channel::unbounded();
        let reader = BufReader::new(stream.try_clone()?);
        let max_frame = config.max_frame_bytes;
        let reader = thread::Builder::new()
            .name(format!("client-{client_id}"))
            .spawn(move || read_loop(reader, max_frame, ack_tx, sink))?;
        let mut client = Client {
            client_id: ClientId::from(client_id),
            config,
            writer: BufWriter::new(stream.try_clone()?),
            stream,
            acks: ack_rx,
            reader: Some(reader),
            samples: Vec::new(),
            closed: None,
        };
        let connect = Packet::Connect { client_id: client_id.to_string(), lat: location.lat(), lon: location.lon() };
        client.request(OpKind::Connect, &connect)?;
        Ok(client)
    }

    pub fn client_id(&self) -> &ClientId {
        &self.client_id
    }

    fn request(&mut self, op: OpKind, packet: &Packet) -> Result<Packet, ClientError> {
        if let Some(reason) = self.closed {
            return Err(ClientError::Closed(reason));
        }
        let t_start = unix_micros(SystemTime::now());
        let started = Instant::now();
        if let Err(e) = self.writer.write_all(&packet.encode()).and_then(|_| self.writer.flush()) {
            // Prefer the broker's stated reason over the resulting pipe error.
            return match self.acks.recv_timeout(Duration::from_millis(100)) {
                Ok(Inbound::Closed(reason)) => {
                    self.closed = Some(reason);
                    Err(ClientError::Closed(reason))
                }
                _ => Err(e.into()),
            };
        }
        let ack = match self.acks.recv_timeout(self.config.request_timeout) {
            Ok(Inbound::Ack(ack)) => ack,
            Ok(Inbound::Closed(reason)) => {
                self.closed = Some(reason);
                return Err(ClientError::Closed(reason));
            }
            Err(RecvTimeoutError::Timeout) => return Err(ClientError::Timeout(op)),
            Err(RecvTimeoutError::Disconnected) => {
                self.closed = Some(None);
                return Err(ClientError::Closed(None));
            }
        };
        let latency_us = started.elapsed().as_micros() as u64;
        if ack.kind() != op.ack_kind() {
            return Err(ClientError::UnexpectedAck { expected: op.ack_kind(), got: ack.kind() });
        }
        let matched_count = match ack {
            Packet::PubAck { count, .. } => Some(count),
            _ => None,
        };
        self.samples.push(LatencySample { op_kind: op, t_start, latency_us, matched_count });
        match ack.reason() {
            Some(reason) if !reason.is_success() => Err(ClientError::Rejected { op, reason }),
            _ => Ok(ack),
        }
    }

    /// Reports the client's current location.
    pub fn ping(&mut self, location: Location) -> Result<(), ClientError> {
        self.request(OpKind::Ping, &Packet::PingReq { lat: location.lat(), lon: location.lon() }).map(drop)
    }

    /// Creates or replaces the subscription for `filter`.
    pub fn subscribe(&mut self, filter: &str, scope: &GeoScope) -> Result<(), ClientError> {
        let fence = scope.fence().map(|f| f.to_wkt());
        self.request(OpKind::Subscribe, &Packet::Subscribe { filter: filter.to_string(), fence }).map(drop)
    }

    /// Returns whether a subscription for `filter` existed.
    pub fn unsubscribe(&mut self, filter: &str) -> Result<bool, ClientError> {
        let ack = self.request(OpKind::Unsubscribe, &Packet::Unsubscribe { filter: filter.to_string() })?;
        Ok(ack.reason() == Some(Reason::Success))
    }

    /// Publishes and returns the number of consumers it was matched to.
    pub fn publish(&mut self, topic: &str, scope: &GeoScope, payload: &[u8]) -> Result<u64, ClientError> {
        let packet = Packet::Publish {
            client_id: None,
            topic: topic.to_string(),
            fence: scope.fence().map(|f| f.to_wkt()),
            payload: payload.to_vec(),
        };
        match self.request(OpKind::Publish, &packet)? {
            Packet::PubAck { count, .. } => Ok(count),
            _ => unreachable!("ack kind checked in request"),
        }
    }

    /// Sends DISCONNECT and waits for the broker to close the connection.
    pub fn disconnect(mut self) -> Result<Vec<LatencySample>, ClientError> {
        if self.closed.is_none() {
            self.writer.write_all(&Packet::Disconnect { reason: None }.encode())?;
            self.writer.flush()?;
        }
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
        Ok(std::mem::take(&mut self.samples))
    }

    /// Closes the socket without DISCONNECT, as a crashed client would.
    pub fn abort(mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }

    /// `Some` once the broker has closed the connection.
    pub fn closed_reason(&self) -> Option<Option<Reason>> {
        self.closed
    }

    pub fn samples(&self) -> &[LatencySample] {
        &self.samples
    }

    pub fn take_samples(&mut self) -> Vec<LatencySample> {
        std::mem::take(&mut self.samples)
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Writes samples as CSV with header `op_kind,t_start,latency_us,matched_count`.
pub fn write_samples_csv<W: Write>(out: W, samples: &[LatencySample]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for s in samples {
        writer.serialize(s)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamp_round_trip() {
        let p = stamped_payload(750, 42);
        assert_eq!(p.len(), 750);
        let (sent, seq) = read_stamp(&p).unwrap();
        assert_eq!(seq, 42);
        assert!(sent > 1_600_000_000_000_000);
        assert_eq!(stamped_payload(3, 0).len(), 16);
        assert_eq!(read_stamp(&[1, 2, 3]), None);
    }

    #[test]
    fn samples_csv_layout() {
        let samples = [
            LatencySample { op_kind: OpKind::Publish, t_start: 10, latency_us: 250, matched_count: Some(3) },
            LatencySample { op_kind: OpKind::Ping, t_start: 11, latency_us: 90, matched_count: None },
        ];
        let mut out = Vec::new();
        write_samples_csv(&mut out, &samples).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "op_kind,t_start,latency_us,matched_count\npublish,10,250,3\nping,11,90,\n"
        );
    }

    #[test]
    fn unreachable_broker_fails() {
        // Port 1 on loopback is closed: refused, not a hang.
        let config = ClientConfig { connect_timeout: Duration::from_millis(200), ..Default::default() };
        let err = Client::connect("127.0.0.1:1", "x", Location::new(0.0, 0.0).unwrap(), config, DeliverySink::Discard)
            .err()
            .unwrap();
        assert!(matches!(err, ClientError::Io(_) | ClientError::ConnectTimeout { .. }));
    }
}
