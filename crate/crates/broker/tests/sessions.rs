use std::io::{BufReader, ErrorKind, Write};
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use geopubsub::geometry::{GeoScope, Geofence, Location};
use geopubsub_broker::client::{Client, ClientConfig, ClientError, Delivery, DeliverySink, OpKind};
use geopubsub_broker::protocol::{read_packet, Kind, Packet, Reason, DEFAULT_MAX_FRAME_BYTES};
use geopubsub_broker::server::{Broker, BrokerConfig};

fn loc(lat: f64, lon: f64) -> Location {
    Location::new(lat, lon).unwrap()
}

fn circle(at: Location, r: f64) -> GeoScope {
    GeoScope::Fence(Geofence::circle(at, r).unwrap())
}

fn start(tweak: impl FnOnce(&mut BrokerConfig)) -> Broker {
    let mut config = BrokerConfig::local();
    config.workers = 2;
    tweak(&mut config);
    Broker::start(config).unwrap()
}

fn connect(broker: &Broker, id: &str, at: Location) -> Client {
    Client::connect(&broker.local_addr().to_string(), id, at, ClientConfig::default(), DeliverySink::Discard).unwrap()
}

fn connect_with_inbox(broker: &Broker, id: &str, at: Location) -> (Client, crossbeam_channel::Receiver<Delivery>) {
    let (sink, inbox) = DeliverySink::channel();
    let client = Client::connect(&broker.local_addr().to_string(), id, at, ClientConfig::default(), sink).unwrap();
    (client, inbox)
}

fn raw(broker: &Broker) -> (TcpStream, BufReader<TcpStream>) {
    let stream = TcpStream::connect(broker.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let reader = BufReader::new(stream.try_clone().unwrap());
    (stream, reader)
}

fn send(stream: &mut TcpStream, p: &Packet) {
    stream.write_all(&p.encode()).unwrap();
}

fn recv(reader: &mut BufReader<TcpStream>) -> Packet {
    read_packet(reader, DEFAULT_MAX_FRAME_BYTES).unwrap()
}

fn assert_closed(reader: &mut BufReader<TcpStream>) {
    let err = read_packet(reader, DEFAULT_MAX_FRAME_BYTES).unwrap_err();
    assert!(err.is_eof() || matches!(&err, geopubsub_broker::protocol::ProtocolError::Io(e) if e.kind() == ErrorKind::ConnectionReset), "{err}");
}

fn wait_until(what: &str, mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while !cond() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn connect_acknowledged_and_session_live() {
    let broker = start(|_| {});
    let client = connect(&broker, "C1", loc(0.0, 0.0));
    assert_eq!(broker.session_count(), 1);
    assert_eq!(client.samples()[0].op_kind, OpKind::Connect);
}

#[test]
fn connect_with_invalid_latitude_is_refused() {
    let broker = start(|_| {});
    let (mut s, mut r) = raw(&broker);
    send(&mut s, &Packet::Connect { client_id: "C1".into(), lat: 95.0, lon: 0.0 });
    assert_eq!(recv(&mut r), Packet::ConnAck { reason: Reason::InvalidLocation });
    assert_closed(&mut r);
    assert_eq!(broker.session_count(), 0);
}

#[test]
fn connect_with_empty_id_or_malformed_body_is_refused() {
    let broker = start(|_| {});
    let (mut s, mut r) = raw(&broker);
    send(&mut s, &Packet::Connect { client_id: String::new(), lat: 1.0, lon: 1.0 });
    assert_eq!(recv(&mut r), Packet::ConnAck { reason: Reason::InvalidClientId });
    assert_closed(&mut r);

    let (mut s, mut r) = raw(&broker);
    let body = br#"{"clientId":"x"}"#;
    s.write_all(&((body.len() + 1) as u32).to_be_bytes()).unwrap();
    s.write_all(&[Kind::Connect as u8]).unwrap();
    s.write_all(body).unwrap();
    assert_eq!(recv(&mut r), Packet::ConnAck { reason: Reason::MalformedPacket });
    assert_closed(&mut r);
}

#[test]
fn request_before_connect_gets_no_session() {
    let broker = start(|_| {});
    let (mut s, mut r) = raw(&broker);
    send(&mut s, &Packet::PingReq { lat: 0.0, lon: 0.0 });
    assert_eq!(recv(&mut r), Packet::PingResp { reason: Reason::NoSession });
    assert_closed(&mut r);
}

#[test]
fn second_connect_takes_over_and_closes_old_transport() {
    let broker = start(|_| {});
    let here = loc(10.0, 10.0);
    let (mut s, mut r) = raw(&broker);
    send(&mut s, &Packet::Connect { client_id: "C1".into(), lat: 10.0, lon: 10.0 });
    assert_eq!(recv(&mut r), Packet::ConnAck { reason: Reason::Success });
    send(&mut s, &Packet::Subscribe { filter: "old".into(), fence: None });
    assert_eq!(recv(&mut r), Packet::SubAck { reason: Reason::Success });
    assert_eq!(broker.subscription_count(), 1);

    let mut newer = connect(&broker, "C1", here);
    assert_eq!(recv(&mut r), Packet::Disconnect { reason: Some(Reason::SessionTakenOver) });
    assert_closed(&mut r);
    assert_eq!(broker.session_count(), 1);
    assert_eq!(broker.subscription_count(), 0, "old subscriptions are not resumed");

    newer.subscribe("new", &GeoScope::All).unwrap();
    let mut other = connect(&broker, "P", here);
    assert_eq!(other.publish("old", &GeoScope::All, b"").unwrap(), 0);
    assert_eq!(other.publish("new", &GeoScope::All, b"").unwrap(), 1);
}

#[test]
fn concurrent_connects_with_one_id_leave_one_session() {
    let broker = start(|_| {});
    let addr = broker.local_addr().to_string();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let addr = addr.clone();
            thread::spawn(move || {
                let mut c =
                    Client::connect(&addr, "same", loc(1.0, 1.0), ClientConfig::default(), DeliverySink::Discard)
                        .unwrap();
                c.subscribe("t", &GeoScope::All).ok();
                c
            })
        })
        .collect();
    let mut clients: Vec<Client> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    wait_until("one session", || broker.session_count() == 1);
    assert!(broker.subscription_count() <= 1);
    let live: Vec<usize> = clients
        .iter_mut()
        .enumerate()
        .filter_map(|(i, c)| c.ping(loc(1.0, 1.0)).is_ok().then_some(i))
        .collect();
    assert_eq!(live.len(), 1, "exactly one transport stays open");
}

#[test]
fn ping_moves_the_client_for_producer_checks() {
    let broker = start(|_| {});
    let (mut consumer, inbox) = connect_with_inbox(&broker, "C1", loc(0.0, 0.0));
    consumer.subscribe("t", &GeoScope::All).unwrap();
    let mut producer = connect(&broker, "P", loc(0.0, 0.0));
    let fence = circle(loc(0.01, 0.0), 0.005);
    assert_eq!(producer.publish("t", &fence, b"1").unwrap(), 0);
    consumer.ping(loc(0.01, 0.0)).unwrap();
    assert_eq!(producer.publish("t", &fence, b"2").unwrap(), 1);
    assert_eq!(inbox.recv_timeout(Duration::from_secs(5)).unwrap().payload, b"2");
}

#[test]
fn ping_after_expiry_fails() {
    let broker = start(|c| {
        c.session_expiry = Duration::from_millis(200);
        c.sweep_interval = Duration::from_millis(20);
    });
    let mut client = connect(&broker, "C1", loc(0.0, 0.0));
    client.subscribe("t", &GeoScope::All).unwrap();
    wait_until("expiry", || broker.session_count() == 0);
    assert_eq!(broker.subscription_count(), 0);
    let err = client.ping(loc(0.0, 0.0)).unwrap_err();
    assert!(matches!(err, ClientError::Closed(Some(Reason::SessionExpired))), "{err}");
}

#[test]
fn pinging_client_outlives_the_nominal_expiry() {
    let broker = start(|c| {
        c.session_expiry = Duration::from_millis(300);
        c.sweep_interval = Duration::from_millis(20);
    });
    let mut client = connect(&broker, "C1", loc(0.0, 0.0));
    let started = Instant::now();
    while started.elapsed() < Duration::from_millis(1000) {
        client.ping(loc(0.0, 0.0)).unwrap();
        thread::sleep(Duration::from_millis(50));
    }
    assert_eq!(broker.session_count(), 1);
    assert!(broker.expire_sessions(Instant::now()).is_empty());
}

#[test]
fn expire_sessions_removes_idle_subscriptions() {
    let broker = start(|_| {});
    let here = loc(5.05, 5.05);
    let mut idle = connect(&broker, "idle", here);
    idle.subscribe("a/#", &circle(here, 0.5)).unwrap();
    let mut active = connect(&broker, "active", here);
    active.subscribe("a/b", &GeoScope::All).unwrap();
    assert_eq!(active.publish("a/b", &GeoScope::All, b"").unwrap(), 2);

    let later = Instant::now() + Duration::from_secs(61);
    let expired = broker.expire_sessions(later);
    assert_eq!(expired.len(), 2);
    let mut fresh = connect(&broker, "fresh", here);
    assert_eq!(fresh.publish("a/b", &GeoScope::All, b"").unwrap(), 0);
    assert_eq!(broker.subscription_count(), 0);
    assert!(matches!(idle.ping(here), Err(ClientError::Closed(_))));
}

#[test]
fn disconnect_cleans_up_immediately() {
    let broker = start(|_| {});
    let mut c = connect(&broker, "C1", loc(0.0, 0.0));
    c.subscribe("t", &GeoScope::All).unwrap();
    let samples = c.disconnect().unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(broker.session_count(), 0);
    assert_eq!(broker.subscription_count(), 0);
}

#[test]
fn subscribe_replace_unsubscribe_round_trips() {
    let broker = start(|_| {});
    let here = loc(1.0, 1.0);
    let mut c = connect(&broker, "C1", here);
    c.subscribe("a/+", &circle(here, 0.1)).unwrap();
    c.subscribe("a/+", &circle(loc(2.0, 2.0), 0.1)).unwrap();
    assert_eq!(broker.subscription_count(), 1);
    let mut p = connect(&broker, "P", here);
    assert_eq!(p.publish("a/x", &GeoScope::All, b"").unwrap(), 0, "replaced fence no longer covers P");
    assert!(c.unsubscribe("a/+").unwrap());
    assert!(!c.unsubscribe("a/+").unwrap());
    assert_eq!(broker.subscription_count(), 0);

    let bad_filter = c.subscribe("a/#/b", &GeoScope::All).unwrap_err();
    assert!(matches!(bad_filter, ClientError::Rejected { reason: Reason::InvalidTopicFilter, .. }));
    let (mut s, mut r) = raw(&broker);
    send(&mut s, &Packet::Connect { client_id: "raw".into(), lat: 0.0, lon: 0.0 });
    recv(&mut r);
    send(&mut s, &Packet::Subscribe { filter: "t".into(), fence: Some("POLYGON((0 0, 1 1, 0 1, 1 0, 0 0))".into()) });
    assert_eq!(recv(&mut r), Packet::SubAck { reason: Reason::InvalidFence });
    send(&mut s, &Packet::Publish { client_id: None, topic: "a/+".into(), fence: None, payload: vec![] });
    assert_eq!(recv(&mut r), Packet::PubAck { reason: Reason::InvalidTopic, count: 0 });
}

#[test]
fn publish_without_matches_acks_zero() {
    let broker = start(|_| {});
    let mut c = connect(&broker, "alone", loc(0.0, 0.0));
    assert_eq!(c.publish("data", &GeoScope::All, b"x").unwrap(), 0);
    assert_eq!(c.samples().last().unwrap().matched_count, Some(0));
}

#[test]
fn waypoint_pattern_reaches_colocated_clients_only() {
    let broker = start(|_| {});
    let r = 0.01;
    let spots = [("near-1", loc(39.98, 116.33)), ("near-2", loc(39.985, 116.33)), ("far", loc(40.2, 116.5))];
    let mut clients: Vec<_> = spots.iter().map(|(id, at)| (connect_with_inbox(&broker, id, *at), *at)).collect();
    for ((c, _), at) in &mut clients {
        c.ping(*at).unwrap();
        c.subscribe("data", &circle(*at, r)).unwrap();
    }
    let payload = vec![0xAB; 750];
    let ((publisher, _), at) = &mut clients[0];
    assert_eq!(publisher.publish("data", &circle(*at, r), &payload).unwrap(), 2);
    let received: Vec<usize> = clients
        .iter()
        .map(|((_, inbox), _)| {
            thread::sleep(Duration::from_millis(50));
            inbox.try_iter().count()
        })
        .collect();
    assert_eq!(received, [1, 1, 0], "publisher receives its own message; far client receives nothing");
}

#[test]
fn two_colocated_subscribers_get_one_copy_each() {
    let broker = start(|_| {});
    let here = loc(-33.9, 151.2);
    let (mut a, inbox_a) = connect_with_inbox(&broker, "A", here);
    let (mut b, inbox_b) = connect_with_inbox(&broker, "B", here);
    for c in [&mut a, &mut b] {
        c.subscribe("x/#", &circle(here, 0.01)).unwrap();
        c.subscribe("x/+", &circle(here, 0.02)).unwrap();
    }
    let mut p = connect(&broker, "P", here);
    assert_eq!(p.publish("x/y", &circle(here, 0.01), b"m").unwrap(), 2);
    for inbox in [&inbox_a, &inbox_b] {
        let d = inbox.recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(d.publisher.unwrap().as_str(), "P");
        assert_eq!(d.topic, "x/y");
        assert!(inbox.recv_timeout(Duration::from_millis(100)).is_err());
    }
}

#[test]
fn oversized_payload_is_rejected() {
    let broker = start(|c| c.max_payload_bytes = 1000);
    let mut c = connect(&broker, "C1", loc(0.0, 0.0));
    assert_eq!(c.publish("t", &GeoScope::All, &[0; 1000]).unwrap(), 0);
    let err = c.publish("t", &GeoScope::All, &[0; 1001]).unwrap_err();
    assert!(matches!(err, ClientError::Rejected { reason: Reason::PayloadTooLarge, .. }));
    c.ping(loc(0.0, 0.0)).unwrap();
}

#[test]
fn crashed_consumer_does_not_block_publisher() {
    let broker = start(|_| {});
    let here = loc(0.0, 0.0);
    let mut consumer = connect(&broker, "consumer", here);
    consumer.subscribe("t", &GeoScope::All).unwrap();
    consumer.abort();
    let mut p = connect(&broker, "P", here);
    for _ in 0..50 {
        p.publish("t", &GeoScope::All, &[1; 512]).unwrap();
    }
    wait_until("crashed session cleanup", || broker.session_count() == 1);
    assert_eq!(p.publish("t", &GeoScope::All, b"").unwrap(), 0);
}

#[test]
fn stalled_consumer_does_not_block_publisher() {
    // The consumer never reads; its queue overflows and old deliveries drop.
    let broker = start(|c| c.outbound_capacity = 16);
    let here = loc(0.0, 0.0);
    let (mut s, mut r) = raw(&broker);
    send(&mut s, &Packet::Connect { client_id: "stalled".into(), lat: 0.0, lon: 0.0 });
    recv(&mut r);
    send(&mut s, &Packet::Subscribe { filter: "t".into(), fence: None });
    recv(&mut r);
    let mut p = connect(&broker, "P", here);
    let payload = vec![7u8; 64 * 1024];
    let started = Instant::now();
    for _ in 0..200 {
        p.publish("t", &GeoScope::All, &payload).unwrap();
    }
    assert!(started.elapsed() < Duration::from_secs(20));
    assert!(broker.metrics().queue_drops > 0);
}

#[test]
fn every_request_is_acknowledged_exactly_once() {
    let broker = start(|_| {});
    let (mut s, mut r) = raw(&broker);
    let requests = vec![
        Packet::Connect { client_id: "C".into(), lat: 0.0, lon: 0.0 },
        Packet::PingReq { lat: 0.001, lon: 0.0 },
        Packet::Subscribe { filter: "a/b".into(), fence: Some("CIRCLE(0 0, 0.1)".into()) },
        Packet::Subscribe { filter: "bad/#/x".into(), fence: None },
        Packet::Publish { client_id: None, topic: "a/b".into(), fence: None, payload: b"p".to_vec() },
        Packet::PingReq { lat: 100.0, lon: 0.0 },
        Packet::Unsubscribe { filter: "a/b".into() },
        Packet::Unsubscribe { filter: "a/b".into() },
        Packet::Publish { client_id: None, topic: "a/b".into(), fence: Some("CIRCLE(0 0, 0.1)".into()), payload: vec![] },
    ];
    for p in &requests {
        send(&mut s, p);
    }
    let mut received = Vec::new();
    r.get_ref().set_read_timeout(Some(Duration::from_millis(500))).unwrap();
    while let Ok(p) = read_packet(&mut r, DEFAULT_MAX_FRAME_BYTES) {
        received.push(p);
    }
    let acks: Vec<&Packet> = received.iter().filter(|p| p.kind() != Kind::Publish).collect();
    let expected = [Kind::ConnAck, Kind::PingResp, Kind::SubAck, Kind::SubAck, Kind::PubAck, Kind::PingResp, Kind::UnsubAck, Kind::UnsubAck, Kind::PubAck];
    assert_eq!(acks.iter().map(|p| p.kind()).collect::<Vec<_>>(), expected);
    let reasons: Vec<Reason> = acks.iter().map(|p| p.reason().unwrap()).collect();
    use Reason::*;
    assert_eq!(
        reasons,
        [Success, Success, Success, InvalidTopicFilter, Success, InvalidLocation, Success, NoSubscriptionExisted, Success]
    );
    assert_eq!(received.iter().filter(|p| p.kind() == Kind::Publish).count(), 1, "self-delivery of the first publish");
    assert_eq!(received[4], Packet::Publish { client_id: Some("C".into()), topic: "a/b".into(), fence: None, payload: b"p".to_vec() });
}

#[test]
fn deliveries_preserve_publisher_order() {
    let broker = start(|c| c.workers = 4);
    let here = loc(0.0, 0.0);
    let (mut consumer, inbox) = connect_with_inbox(&broker, "consumer", here);
    consumer.subscribe("seq", &GeoScope::All).unwrap();
    let mut publishers: Vec<Client> = (0..3).map(|i| connect(&broker, &format!("p{i}"), here)).collect();
    for n in 0u32..300 {
        let p = &mut publishers[(n % 3) as usize];
        p.publish("seq", &GeoScope::All, &n.to_be_bytes()).unwrap();
    }
    let mut last = [None::<u32>; 3];
    for _ in 0..300 {
        let d = inbox.recv_timeout(Duration::from_secs(5)).unwrap();
        let n = u32::from_be_bytes(d.payload[..4].try_into().unwrap());
        let idx: usize = d.publisher.unwrap().as_str()[1..].parse().unwrap();
        assert!(last[idx].is_none_or(|prev| prev < n));
        last[idx] = Some(n);
    }
}

#[test]
fn metrics_csv_is_written() {
    let dir = std::env::temp_dir().join(format!("geopubsub-metrics-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("metrics.csv");
    let broker = start(|c| {
        c.metrics_csv = Some(path.clone());
        c.metrics_interval = Duration::from_millis(50);
    });
    let mut c = connect(&broker, "C1", loc(0.0, 0.0));
    c.subscribe("t", &GeoScope::All).unwrap();
    c.publish("t", &GeoScope::All, b"").unwrap();
    thread::sleep(Duration::from_millis(300));
    broker.shutdown();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "timestamp,connected_sessions,publishes_in,deliveries_out,matches_per_publish_mean,queue_drops"
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert!(rows.len() >= 2);
    let publishes: u64 = rows.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    assert_eq!(publishes, 1);
    std::fs::remove_dir_all(dir).ok();
}
