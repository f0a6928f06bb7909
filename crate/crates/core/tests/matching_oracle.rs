use std::collections::{HashMap, HashSet};

use geopubsub::geometry::{GeoScope, Location};
use geopubsub::matching::{MatchRequest, SubscriptionStore};
use geopubsub::raster::{Granularity, RasterConfig};
use geopubsub::ClientId;
use geopubsub_testkit::{
    brute_force_content_match, brute_force_match, reference_topic_match, Generator, Op, OracleStore,
    OracleSubscription, WorkloadShape,
};

/// Replays `ops` against a store and the oracle; returns the store's
/// delivery sets.
fn replay(
    ops: &[Op],
    initial: &HashMap<ClientId, Location>,
    config: RasterConfig,
    mut check: impl FnMut(&MatchRequest, &HashSet<ClientId>, &OracleStore, &HashMap<ClientId, Location>, &SubscriptionStore),
) -> Vec<HashSet<ClientId>> {
    let mut store = SubscriptionStore::new(config);
    let mut oracle = OracleStore::default();
    let mut locations = initial.clone();
    let mut out = Vec::new();
    for op in ops {
        match op {
            Op::Subscribe { client, filter, scope } => {
                store.subscribe(client.clone(), filter, scope.clone());
                oracle.subscribe(client.clone(), filter.clone(), scope.clone());
            }
            Op::Unsubscribe { client, filter } => {
                store.unsubscribe(client, filter);
                oracle.unsubscribe(client, filter);
            }
            Op::Move { client, to } => {
                locations.insert(client.clone(), *to);
            }
            Op::Publish(req) => {
                let got = store.match_request(req, &locations).unwrap();
                check(req, &got, &oracle, &locations, &store);
                out.push(got);
            }
        }
    }
    assert_eq!(store.len(), oracle.subscriptions.len());
    out
}

#[test]
fn index_matches_brute_force() {
    let shape = WorkloadShape { max_subscriptions: 200, max_publishes: 300, clients: 40 };
    for seed in 0..60u64 {
        let mut gen = Generator::new(seed);
        let (ops, locations) = gen.workload(&shape);
        let g = [1, 10, 25, 50, 100][seed as usize % 5];
        let skip = seed % 4 == 0;
        let config = RasterConfig { granularity: Granularity::new(g).unwrap(), skip_final_intersection: skip };
        replay(&ops, &locations, config, |req, got, oracle, locs, _| {
            let want = brute_force_match(&oracle.subscriptions, req, locs);
            assert_eq!(got, &want, "seed {seed} g {g} request {req:?}");
        });
    }
}

#[test]
fn delivery_sets_do_not_depend_on_granularity() {
    let shape = WorkloadShape { max_subscriptions: 150, max_publishes: 200, clients: 30 };
    for seed in 100..120u64 {
        let (ops, locations) = Generator::new(seed).workload(&shape);
        let runs: Vec<_> = [1, 10, 25, 50, 100]
            .into_iter()
            .map(|g| replay(&ops, &locations, RasterConfig::with_granularity(g).unwrap(), |_, _, _, _, _| {}))
            .collect();
        for run in &runs[1..] {
            assert_eq!(run, &runs[0], "seed {seed}");
        }
    }
}

#[test]
fn geo_deliveries_are_a_subset_of_content_deliveries() {
    let shape = WorkloadShape { max_subscriptions: 150, max_publishes: 200, clients: 30 };
    for seed in 200..220u64 {
        let (ops, locations) = Generator::new(seed).workload(&shape);
        replay(&ops, &locations, RasterConfig::default(), |req, got, oracle, _, store| {
            let content = store.match_content_only(&req.topic);
            assert!(got.is_subset(&content));
            assert_eq!(content, brute_force_content_match(&oracle.subscriptions, &req.topic));
        });
    }
}

/// The three predicates are pure conjuncts: any evaluation order yields the
/// same set.
#[test]
fn check_order_does_not_matter() {
    type Check = fn(&OracleSubscription, &MatchRequest, &HashMap<ClientId, Location>) -> bool;
    let content: Check = |s, r, _| reference_topic_match(&s.filter.to_string(), &r.topic.to_string());
    let consumer: Check = |s, r, _| s.scope.contains(&r.publisher_location.unwrap());
    let producer: Check = |s, r, l| match &r.producer_scope {
        GeoScope::All => true,
        GeoScope::Fence(f) => l.get(&s.client).is_some_and(|p| f.contains(p)),
    };
    let orders: [[Check; 3]; 6] = [
        [content, consumer, producer],
        [content, producer, consumer],
        [consumer, content, producer],
        [consumer, producer, content],
        [producer, content, consumer],
        [producer, consumer, content],
    ];
    let shape = WorkloadShape { max_subscriptions: 100, max_publishes: 100, clients: 20 };
    for seed in 300..310u64 {
        let (ops, locations) = Generator::new(seed).workload(&shape);
        replay(&ops, &locations, RasterConfig::default(), |req, got, oracle, locs, _| {
            for order in &orders {
                let set: HashSet<ClientId> = oracle
                    .subscriptions
                    .iter()
                    .filter(|s| order.iter().all(|check| check(s, req, locs)))
                    .map(|s| s.client.clone())
                    .collect();
                assert_eq!(&set, got);
            }
        });
    }
}
