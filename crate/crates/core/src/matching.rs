//! Subscription store and the three-check matching pipeline.
//!
//! Subscriptions live in a topic tree: a subscription with filter `f` sits at
//! the node reached by walking `f`'s levels, wildcard levels included (`+`
//! and `#` are ordinary node labels). Every node embeds a [`Raster`] over the
//! consumer geofences of its resident subscriptions. Subscriptions without a
//! geofence ([`GeoScope::All`]) cannot be rasterized and are kept in a
//! separate per-node set that is always a candidate.
//!
//! A publish is matched in a fixed order:
//!
//! 1. content check: walk the tree to every node whose filter matches the topic;
//! 2. consumer check: raster candidates at the publisher's location, then the
//!    exact containment test against each cached consumer fence;
//! 3. producer check: the message's fence must contain the consumer's
//!    last known location.

use std::collections::{HashMap, HashSet};
use std::hash::BuildHasher;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::geometry::{GeoScope, Location};
use crate::raster::{Raster, RasterConfig};
use crate::topics::{FilterLevel, Topic, TopicFilter, MULTI_LEVEL_WILDCARD, SINGLE_LEVEL_WILDCARD};
use crate::ClientId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("location of publisher {0} is unknown")]
    UnknownPublisherLocation(ClientId),
}

/// Source of consumers' last known locations for the producer check.
pub trait ConsumerLocations {
    fn location_of(&self, client: &ClientId) -> Option<Location>;
}

impl<S: BuildHasher> ConsumerLocations for HashMap<ClientId, Location, S> {
    fn location_of(&self, client: &ClientId) -> Option<Location> {
        self.get(client).copied()
    }
}

/// A published message as seen by the matcher.
#[derive(Debug, Clone)]
pub struct MatchRequest {
    pub publisher: ClientId,
    pub publisher_location: Option<Location>,
    pub topic: Topic,
    pub producer_scope: GeoScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubscribeOutcome {
    Created,
    /// An existing subscription for the same client and filter was replaced.
    Replaced,
}

#[derive(Debug)]
struct Node {
    children: FxHashMap<String, Node>,
    raster: Raster<ClientId>,
    unbounded: FxHashSet<ClientId>,
    /// Resident subscriptions with their cached consumer scope.
    scopes: FxHashMap<ClientId, GeoScope>,
}

impl Node {
    fn new(config: RasterConfig) -> Self {
        Node {
            children: FxHashMap::default(),
            raster: Raster::new(config),
            unbounded: FxHashSet::default(),
            scopes: FxHashMap::default(),
        }
    }

    fn is_prunable(&self) -> bool {
        self.scopes.is_empty() && self.children.is_empty()
    }

    fn remove(&mut self, client: &ClientId) -> bool {
        match self.scopes.remove(client) {
            Some(GeoScope::All) => self.unbounded.remove(client),
            Some(GeoScope::Fence(_)) => self.raster.remove(client),
            None => false,
        }
    }

    /// Content-matching nodes for `topic[depth..]`, in tree order.
    fn collect_matching<'a>(&'a self, topic: &[String], depth: usize, out: &mut Vec<&'a Node>) {
        if let Some(multi) = self.children.get(MULTI_LEVEL_WILDCARD) {
            out.push(multi);
        }
        if depth == topic.len() {
            out.push(self);
            return;
        }
        if let Some(child) = self.children.get(&topic[depth]) {
            child.collect_matching(topic, depth + 1, out);
        }
        if let Some(single) = self.children.get(SINGLE_LEVEL_WILDCARD) {
            single.collect_matching(topic, depth + 1, out);
        }
    }
}

/// Topic tree with embedded rasters, indexing every live subscription.
#[derive(Debug)]
pub struct SubscriptionStore {
    config: RasterConfig,
    root: Node,
    len: usize,
}

impl Default for SubscriptionStore {
    fn default() -> Self {
        SubscriptionStore::new(RasterConfig::default())
    }
}

impl SubscriptionStore {
    pub fn new(config: RasterConfig) -> Self {
        SubscriptionStore { config, root: Node::new(config), len: 0 }
    }

    pub fn config(&self) -> RasterConfig {
        self.config
    }

    /// Number of live subscriptions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Creates or replaces the subscription of `client` to `filter`. A
    /// replaced subscription's raster placements are removed first using its
    /// cached fence.
    pub fn subscribe(&mut self, client: ClientId, filter: &TopicFilter, scope: GeoScope) -> SubscribeOutcome {
        let config = self.config;
        let mut node = &mut self.root;
        for level in filter.levels() {
            node = node.children.entry(level.as_str().to_string()).or_insert_with(|| Node::new(config));
        }
        let replaced = node.remove(&client);
        match &scope {
            GeoScope::All => {
                node.unbounded.insert(client.clone());
            }
            GeoScope::Fence(fence) => node.raster.put(client.clone(), fence),
        }
        node.scopes.insert(client, scope);
        if replaced {
            SubscribeOutcome::Replaced
        } else {
            self.len += 1;
            SubscribeOutcome::Created
        }
    }

    /// Removes a subscription and prunes emptied nodes. Unknown
    /// subscriptions are ignored; returns whether one was removed.
    pub fn unsubscribe(&mut self, client: &ClientId, filter: &TopicFilter) -> bool {
        fn walk(node: &mut Node, levels: &[FilterLevel], client: &ClientId) -> bool {
            match levels.split_first() {
                None => node.remove(client),
                Some((head, rest)) => {
                    let Some(child) = node.children.get_mut(head.as_str()) else {
                        return false;
                    };
                    let removed = walk(child, rest, client);
                    if child.is_prunable() {
                        node.children.remove(head.as_str());
                    }
                    removed
                }
            }
        }
        let removed = walk(&mut self.root, filter.levels(), client);
        if removed {
            self.len -= 1;
        }
        removed
    }

    /// The cached consumer scope of a subscription.
    pub fn subscription(&self, client: &ClientId, filter: &TopicFilter) -> Option<&GeoScope> {
        let mut node = &self.root;
        for level in filter.levels() {
            node = node.children.get(level.as_str())?;
        }
        node.scopes.get(client)
    }

    /// All live subscriptions as `(client, filter, scope)`.
    pub fn subscriptions(&self) -> Vec<(ClientId, TopicFilter, GeoScope)> {
        fn walk(node: &Node, path: &mut Vec<String>, out: &mut Vec<(ClientId, TopicFilter, GeoScope)>) {
            if !node.scopes.is_empty() {
                let filter = TopicFilter::parse(&path.join("/")).expect("tree paths are valid filters");
                for (client, scope) in &node.scopes {
                    out.push((client.clone(), filter.clone(), scope.clone()));
                }
            }
            for (label, child) in &node.children {
                path.push(label.clone());
                walk(child, path, out);
                path.pop();
            }
        }
        let mut out = Vec::with_capacity(self.len);
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Number of tree nodes below the root.
    pub fn node_count(&self) -> usize {
        fn count(node: &Node) -> usize {
            node.children.values().map(|c| 1 + count(c)).sum()
        }
        count(&self.root)
    }

    fn matching_nodes(&self, topic: &Topic) -> Vec<&Node> {
        let mut nodes = Vec::new();
        self.root.collect_matching(topic.levels(), 0, &mut nodes);
        nodes
    }

    /// Clients with at least one subscription passing the content check and
    /// both geo checks. Each client appears once.
    pub fn match_request(
        &self,
        request: &MatchRequest,
        locations: &impl ConsumerLocations,
    ) -> Result<HashSet<ClientId>, MatchError> {
        let publisher_location = request
            .publisher_location
            .ok_or_else(|| MatchError::UnknownPublisherLocation(request.publisher.clone()))?;
        let producer_passes = |client: &ClientId| match &request.producer_scope {
            GeoScope::All => true,
            GeoScope::Fence(fence) => locations.location_of(client).is_some_and(|p| fence.contains(&p)),
        };

        let mut matched = HashSet::new();
        for node in self.matching_nodes(&request.topic) {
            for client in &node.unbounded {
                if !matched.contains(client) && producer_passes(client) {
                    matched.insert(client.clone());
                }
            }
            for client in node.raster.candidates_at(&publisher_location) {
                if matched.contains(client) {
                    continue;
                }
                let consumer_passes = match node.scopes.get(client) {
                    Some(GeoScope::Fence(fence)) => fence.contains(&publisher_location),
                    _ => false,
                };
                if consumer_passes && producer_passes(client) {
                    matched.insert(client.clone());
                }
            }
        }
        Ok(matched)
    }

    /// Clients passing the content check alone.
    pub fn match_content_only(&self, topic: &Topic) -> HashSet<ClientId> {
        let mut matched = HashSet::new();
        for node in self.matching_nodes(topic) {
            matched.extend(node.scopes.keys().cloned());
        }
        matched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geofence;

    fn loc(lat: f64, lon: f64) -> Location {
        Location::new(lat, lon).unwrap()
    }

    fn circle(lat: f64, lon: f64, r: f64) -> GeoScope {
        GeoScope::Fence(Geofence::circle(loc(lat, lon), r).unwrap())
    }

    fn filter(s: &str) -> TopicFilter {
        TopicFilter::parse(s).unwrap()
    }

    fn request(publisher: &str, at: Location, topic: &str, scope: GeoScope) -> MatchRequest {
        MatchRequest {
            publisher: publisher.into(),
            publisher_location: Some(at),
            topic: Topic::parse(topic).unwrap(),
            producer_scope: scope,
        }
    }

    fn ids(v: &[&str]) -> HashSet<ClientId> {
        v.iter().map(|s| ClientId::from(*s)).collect()
    }

    #[test]
    fn subscribe_places_at_filter_node() {
        let mut store = SubscriptionStore::default();
        assert_eq!(store.subscribe("C1".into(), &filter("sensor"), circle(1.0, 1.0, 0.05)), SubscribeOutcome::Created);
        assert!(store.subscription(&"C1".into(), &filter("sensor")).is_some());
        store.subscribe("C2".into(), &filter("images/#"), GeoScope::All);
        assert!(store.root.children["images"].children.contains_key("#"));
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn resubscribe_replaces() {
        let mut store = SubscriptionStore::default();
        store.subscribe("C1".into(), &filter("data"), circle(1.0, 1.0, 0.01));
        let outcome = store.subscribe("C1".into(), &filter("data"), circle(5.05, 5.05, 0.01));
        assert_eq!(outcome, SubscribeOutcome::Replaced);
        assert_eq!(store.len(), 1);
        let locs: HashMap<ClientId, Location> = HashMap::new();
        let old = store.match_request(&request("P", loc(1.0, 1.0), "data", GeoScope::All), &locs).unwrap();
        assert!(old.is_empty());
        let new = store.match_request(&request("P", loc(5.05, 5.05), "data", GeoScope::All), &locs).unwrap();
        assert_eq!(new, ids(&["C1"]));
        let node = &store.root.children["data"];
        assert_eq!(node.raster.field_count(), 1);
    }

    #[test]
    fn unsubscribe_semantics() {
        let mut store = SubscriptionStore::default();
        store.subscribe("C1".into(), &filter("a/b/c"), circle(1.0, 1.0, 0.01));
        assert!(store.unsubscribe(&"C1".into(), &filter("a/b/c")));
        assert!(store.is_empty());
        assert_eq!(store.node_count(), 0);

        assert!(!store.unsubscribe(&"C1".into(), &filter("never")));

        store.subscribe("C1".into(), &filter("x"), GeoScope::All);
        store.subscribe("C2".into(), &filter("x"), GeoScope::All);
        store.unsubscribe(&"C1".into(), &filter("x"));
        assert_eq!(store.match_content_only(&Topic::parse("x").unwrap()), ids(&["C2"]));
    }

    #[test]
    fn both_geo_checks() {
        let mut store = SubscriptionStore::default();
        let p = loc(39.98, 116.33);
        let s_near = loc(39.981, 116.331);
        store.subscribe("S".into(), &filter("data"), circle(p.lat(), p.lon(), 0.01));
        let mut locs = HashMap::new();
        locs.insert(ClientId::from("S"), s_near);
        let hit = store.match_request(&request("P", p, "data", circle(s_near.lat(), s_near.lon(), 0.01)), &locs).unwrap();
        assert_eq!(hit, ids(&["S"]));
        let miss = store.match_request(&request("P", p, "data", circle(10.0, 10.0, 0.01)), &locs).unwrap();
        assert!(miss.is_empty());
    }

    #[test]
    fn unknown_publisher_location_is_rejected() {
        let store = SubscriptionStore::default();
        let mut req = request("P", loc(0.0, 0.0), "data", GeoScope::All);
        req.publisher_location = None;
        let locs: HashMap<ClientId, Location> = HashMap::new();
        assert_eq!(store.match_request(&req, &locs), Err(MatchError::UnknownPublisherLocation("P".into())));
    }

    #[test]
    fn wildcard_completeness() {
        let mut store = SubscriptionStore::default();
        for (id, f) in [("1", "a/b"), ("2", "a/+"), ("3", "a/#"), ("4", "#"), ("5", "a/c"), ("6", "+/+/+")] {
            store.subscribe(id.into(), &filter(f), circle(0.5, 0.5, 0.1));
        }
        let locs: HashMap<ClientId, Location> = HashMap::new();
        let got = store.match_request(&request("P", loc(0.5, 0.5), "a/b", GeoScope::All), &locs).unwrap();
        assert_eq!(got, ids(&["1", "2", "3", "4"]));
        assert_eq!(store.match_content_only(&Topic::parse("a").unwrap()), ids(&["3", "4"]));
    }

    #[test]
    fn multiple_subscriptions_single_delivery() {
        let mut store = SubscriptionStore::default();
        store.subscribe("C".into(), &filter("a/b"), circle(0.5, 0.5, 0.1));
        store.subscribe("C".into(), &filter("a/#"), GeoScope::All);
        let locs: HashMap<ClientId, Location> = HashMap::new();
        let got = store.match_request(&request("P", loc(0.5, 0.5), "a/b", GeoScope::All), &locs).unwrap();
        assert_eq!(got, ids(&["C"]));
    }

    #[test]
    fn content_only_examples() {
        let mut store = SubscriptionStore::default();
        assert!(store.match_content_only(&Topic::parse("data").unwrap()).is_empty());
        store.subscribe("far".into(), &filter("data"), circle(-45.0, 170.0, 0.01));
        assert_eq!(store.match_content_only(&Topic::parse("data").unwrap()), ids(&["far"]));
    }

    #[test]
    fn consumer_without_location_fails_producer_check() {
        let mut store = SubscriptionStore::default();
        store.subscribe("S".into(), &filter("t"), GeoScope::All);
        let locs: HashMap<ClientId, Location> = HashMap::new();
        let got = store.match_request(&request("P", loc(0.0, 0.0), "t", circle(0.0, 0.0, 1.0)), &locs).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn subscriptions_listing() {
        let mut store = SubscriptionStore::default();
        store.subscribe("A".into(), &filter("x/+"), GeoScope::All);
        store.subscribe("B".into(), &filter("x"), circle(1.0, 1.0, 0.1));
        let mut subs: Vec<_> = store.subscriptions().into_iter().map(|(c, f, _)| (c.to_string(), f.to_string())).collect();
        subs.sort();
        assert_eq!(subs, vec![("A".to_string(), "x/+".to_string()), ("B".to_string(), "x".to_string())]);
    }
}
