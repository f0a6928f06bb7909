//! Wire protocol.
//!
//! A frame is a 4-byte big-endian length `n`, then `n` bytes: one byte of
//! message kind followed by a UTF-8 JSON body. Bodies use a fixed field set
//! (`clientId`, `count`, `fence`, `lat`, `lon`, `payload`, `reason`,
//! `topic`), written in that order, without whitespace, omitting absent
//! fields. Fences travel as WKT, payloads as standard base64.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

/// Default upper bound on a frame's length field.
pub const DEFAULT_MAX_FRAME_BYTES: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit of {1}")]
    FrameTooLarge(usize, usize),
    #[error("empty frame")]
    EmptyFrame,
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("malformed body: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{kind:?} body is missing `{field}`")]
    MissingField { kind: Kind, field: &'static str },
    #[error("payload is not valid base64: {0}")]
    Base64(#[from] base64::DecodeError),
}

impl ProtocolError {
    /// `true` when the peer closed the stream cleanly between frames.
    pub fn is_eof(&self) -> bool {
        matches!(self, ProtocolError::Io(e) if e.kind() == io::ErrorKind::UnexpectedEof)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Connect = 1,
    ConnAck = 2,
    PingReq = 3,
    PingResp = 4,
    Subscribe = 5,
    SubAck = 6,
    Unsubscribe = 7,
    UnsubAck = 8,
    Publish = 9,
    PubAck = 10,
    Disconnect = 11,
}

impl TryFrom<u8> for Kind {
    type Error = ProtocolError;

    fn try_from(byte: u8) -> Result<Self, ProtocolError> {
        use Kind::*;
        Ok(match byte {
            1 => Connect,
            2 => ConnAck,
            3 => PingReq,
            4 => PingResp,
            5 => Subscribe,
            6 => SubAck,
            7 => Unsubscribe,
            8 => UnsubAck,
            9 => Publish,
            10 => PubAck,
            11 => Disconnect,
            other => return Err(ProtocolError::UnknownKind(other)),
        })
    }
}

/// Outcome carried by every acknowledgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Success,
    /// Unsubscribe of a filter the session did not hold.
    NoSubscriptionExisted,
    MalformedPacket,
    ProtocolViolation,
    InvalidClientId,
    InvalidLocation,
    InvalidTopic,
    InvalidTopicFilter,
    InvalidFence,
    NoSession,
    UnknownLocation,
    PayloadTooLarge,
    SessionTakenOver,
    SessionExpired,
    ServerShuttingDown,
}

impl Reason {
    pub fn is_success(self) -> bool {
        matches!(self, Reason::Success | Reason::NoSubscriptionExisted)
    }
}

/// The JSON body, field order fixed for canonical output.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Body {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    client_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<Reason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topic: Option<String>,
}

/// A decoded message. Topics, filters and fences stay textual here; the
/// broker validates them so that bad values earn a negative ack rather than
/// a dropped connection.
#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    Connect { client_id: String, lat: f64, lon: f64 },
    ConnAck { reason: Reason },
    PingReq { lat: f64, lon: f64 },
    PingResp { reason: Reason },
    /// `fence: None` subscribes with the ALL fence.
    Subscribe { filter: String, fence: Option<String> },
    SubAck { reason: Reason },
    Unsubscribe { filter: String },
    UnsubAck { reason: Reason },
    /// `client_id` names the publisher on forwarded messages.
    Publish { client_id: Option<String>, topic: String, fence: Option<String>, payload: Vec<u8> },
    PubAck { reason: Reason, count: u64 },
    Disconnect { reason: Option<Reason> },
}

impl Packet {
    pub fn kind(&self) -> Kind {
        match self {
            Packet::Connect { .. } => Kind::Connect,
            Packet::ConnAck { .. } => Kind::ConnAck,
            Packet::PingReq { .. } => Kind::PingReq,
            Packet::PingResp { .. } => Kind::PingResp,
            Packet::Subscribe { .. } => Kind::Subscribe,
            Packet::SubAck { .. } => Kind::SubAck,
            Packet::Unsubscribe { .. } => Kind::Unsubscribe,
            Packet::UnsubAck { .. } => Kind::UnsubAck,
            Packet::Publish { .. } => Kind::Publish,
            Packet::PubAck { .. } => Kind::PubAck,
            Packet::Disconnect { .. } => Kind::Disconnect,
        }
    }

    /// The reason on acknowledgments and disconnects.
    pub fn reason(&self) -> Option<Reason> {
        match self {
            Packet::ConnAck { reason }
            | Packet::PingResp { reason }
            | Packet::SubAck { reason }
            | Packet::UnsubAck { reason }
            | Packet::PubAck { reason, .. } => Some(*reason),
            Packet::Disconnect { reason } => *reason,
            _ => None,
        }
    }

    fn to_body(&self) -> Body {
        let mut body = Body::default();
        match self {
            Packet::Connect { client_id, lat, lon } => {
                body.client_id = Some(client_id.clone());
                body.lat = Some(*lat);
                body.lon = Some(*lon);
            }
            Packet::PingReq { lat, lon } => {
                body.lat = Some(*lat);
                body.lon = Some(*lon);
            }
            Packet::Subscribe { filter, fence } => {
                body.topic = Some(filter.clone());
                body.fence = fence.clone();
            }
            Packet::Unsubscribe { filter } => body.topic = Some(filter.clone()),
            Packet::Publish { client_id, topic, fence, payload } => {
                body.client_id = client_id.clone();
                body.topic = Some(topic.clone());
                body.fence = fence.clone();
                body.payload = Some(BASE64.encode(payload));
            }
            Packet::PubAck { reason, count } => {
                body.reason = Some(*reason);
                body.count = Some(*count);
            }
            Packet::ConnAck { reason }
            | Packet::PingResp { reason }
            | Packet::SubAck { reason }
            | Packet::UnsubAck { reason } => body.reason = Some(*reason),
            Packet::Disconnect { reason } => body.reason = *reason,
        }
        body
    }

    fn from_body(kind: Kind, body: Body) -> Result<Self, ProtocolError> {
        let missing = |field| ProtocolError::MissingField { kind, field };
        let reason = || body.reason.ok_or(missing("reason"));
        Ok(match kind {
            Kind::Connect => Packet::Connect {
                client_id: body.client_id.clone().ok_or(missing("clientId"))?,
                lat: body.lat.ok_or(missing("lat"))?,
                lon: body.lon.ok_or(missing("lon"))?,
            },
            Kind::PingReq => Packet::PingReq {
                lat: body.lat.ok_or(missing("lat"))?,
                lon: body.lon.ok_or(missing("lon"))?,
            },
            Kind::Subscribe => Packet::Subscribe {
                filter: body.topic.clone().ok_or(missing("topic"))?,
                fence: body.fence.clone(),
            },
            Kind::Unsubscribe => Packet::Unsubscribe { filter: body.topic.clone().ok_or(missing("topic"))? },
            Kind::Publish => Packet::Publish {
                client_id: body.client_id.clone(),
                topic: body.topic.clone().ok_or(missing("topic"))?,
                fence: body.fence.clone(),
                payload: match &body.payload {
                    Some(text) => BASE64.decode(text)?,
                    None => Vec::new(),
                },
            },
            Kind::PubAck => Packet::PubAck { reason: reason()?, count: body.count.unwrap_or(0) },
            Kind::ConnAck => Packet::ConnAck { reason: reason()? },
            Kind::PingResp => Packet::PingResp { reason: reason()? },
            Kind::SubAck => Packet::SubAck { reason: reason()? },
            Kind::UnsubAck => Packet::UnsubAck { reason: reason()? },
            Kind::Disconnect => Packet::Disconnect { reason: body.reason },
        })
    }

    /// The canonical JSON body.
    pub fn body_json(&self) -> String {
        serde_json::to_string(&self.to_body()).expect("bodies always serialize")
    }

    /// A complete frame, length prefix included.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.body_json();
        let len = 1 + body.len();
        let mut frame = Vec::with_capacity(4 + len);
        frame.extend_from_slice(&(len as u32).to_be_bytes());
        frame.push(self.kind() as u8);
        frame.extend_from_slice(body.as_bytes());
        frame
    }

    /// Decodes the part of a frame after the length prefix.
    pub fn decode(frame: &[u8]) -> Result<Self, ProtocolError> {
        let (&kind, body) = frame.split_first().ok_or(ProtocolError::EmptyFrame)?;
        let kind = Kind::try_from(kind)?;
        let body: Body = if body.is_empty() { Body::default() } else { serde_json::from_slice(body)? };
        Packet::from_body(kind, body)
    }
}

/// Writes one frame.
pub fn write_packet(w: &mut impl Write, packet: &Packet) -> io::Result<()> {
    w.write_all(&packet.encode())
}

/// Reads one frame's bytes (kind and body). A clean close before the length
/// prefix yields [`io::ErrorKind::UnexpectedEof`].
pub fn read_frame(r: &mut impl Read, max_frame_bytes: usize) -> Result<Vec<u8>, ProtocolError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > max_frame_bytes {
        return Err(ProtocolError::FrameTooLarge(len, max_frame_bytes));
    }
    let mut frame = vec![0u8; len];
    r.read_exact(&mut frame)?;
    Ok(frame)
}

/// Reads and decodes one frame.
pub fn read_packet(r: &mut impl Read, max_frame_bytes: usize) -> Result<Packet, ProtocolError> {
    Packet::decode(&read_frame(r, max_frame_bytes)?)
}

/// Frame limit that admits any payload up to `max_payload_bytes` after
/// base64 expansion, plus room for the other fields.
pub fn frame_limit_for_payload(max_payload_bytes: usize) -> usize {
    max_payload_bytes.div_ceil(3) * 4 + 64 * 1024
}
