//! Networked broker and client for geo-context publish/subscribe.
//!
//! [`server::Broker`] accepts framed TCP connections (see [`protocol`]),
//! keeps one session per client id and matches publishes against a shared
//! [`geopubsub::matching::SubscriptionStore`]. [`client::Client`] is the
//! matching blocking client.
//!
//! ```
//! use geopubsub::geometry::{GeoScope, Geofence, Location};
//! use geopubsub_broker::client::{Client, ClientConfig, DeliverySink};
//! use geopubsub_broker::server::{Broker, BrokerConfig};
//!
//! let broker = Broker::start(BrokerConfig::local()).unwrap();
//! let addr = broker.local_addr().to_string();
//! let here = Location::new(39.98, 116.33).unwrap();
//! let near = GeoScope::from(Geofence::circle(here, 0.01).unwrap());
//!
//! let (sink, inbox) = DeliverySink::channel();
//! let mut consumer = Client::connect(&addr, "consumer", here, ClientConfig::default(), sink).unwrap();
//! consumer.subscribe("data", &near).unwrap();
//!
//! let mut producer = Client::connect(&addr, "producer", here, ClientConfig::default(), DeliverySink::Discard).unwrap();
//! assert_eq!(producer.publish("data", &near, b"hello").unwrap(), 1);
//! assert_eq!(inbox.recv().unwrap().payload, b"hello");
//! ```

pub mod client;
pub mod protocol;
pub mod server;
