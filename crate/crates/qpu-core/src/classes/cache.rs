//! Result cache for snapshot queries.
//!
//! Hits replay the stored entry; misses forward the query to the child,
//! tee records to the caller while accumulating, and store the result at
//! end-of-snapshot. Entries older than the ttl are never served, and the
//! least recently used entry is evicted beyond capacity. Downstream errors
//! propagate and are never cached.

use std::collections::BTreeMap;

use crate::query::{Query, QueryMode};
use crate::record::{StreamErrorCode, StreamRecord, Tuple};
use crate::simnet::SimTime;
use crate::unit::{Ctx, StateView, StreamId, UnitBehavior};

pub struct CacheUnit {
    ttl: SimTime,
    capacity: usize,
    entries: BTreeMap<String, CacheEntry>,
    use_counter: u64,
    pending: BTreeMap<StreamId, PendingFetch>,
    by_response: BTreeMap<StreamId, StreamId>,
    hits: u64,
    misses: u64,
}

struct CacheEntry {
    rows: Vec<Tuple>,
    filled_at: SimTime,
    last_used: u64,
}

struct PendingFetch {
    response: StreamId,
    key: String,
    rows: Vec<Tuple>,
}

impl CacheUnit {
    pub fn new(ttl: SimTime, capacity: usize) -> Self {
        CacheUnit {
            ttl,
            capacity: capacity.max(1),
            entries: BTreeMap::new(),
            use_counter: 0,
            pending: BTreeMap::new(),
            by_response: BTreeMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn hit_rate(&self) -> Option<f64> {
        let total = self.hits + self.misses;
        if total == 0 {
            None
        } else {
            Some(self.hits as f64 / total as f64)
        }
    }

    fn touch(&mut self, key: &str) {
        self.use_counter += 1;
        if let Some(e) = self.entries.get_mut(key) {
            e.last_used = self.use_counter;
        }
    }

    fn evict_beyond_capacity(&mut self) {
        while self.entries.len() > self.capacity {
            let lru = self
                .entries
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| k.clone())
                .expect("non-empty");
            self.entries.remove(&lru);
        }
    }
}

impl UnitBehavior for CacheUnit {
    fn class_name(&self) -> &'static str {
        "cache"
    }

    fn on_query(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        if query.mode == QueryMode::SnapshotAndSubscribe {
            // unreachable through capability routing; guard anyway
            ctx.emit(
                response,
                StreamRecord::Error {
                    code: StreamErrorCode::CapabilityMismatch,
                    detail: "cache serves snapshot queries only".into(),
                },
            );
            return;
        }
        let key = query.canonical_key();
        let fresh = self
            .entries
            .get(&key)
            .map(|e| ctx.now().micros().saturating_sub(e.filled_at.micros()) <= self.ttl.micros())
            .unwrap_or(false);
        if fresh {
            self.hits += 1;
            self.touch(&key);
            let rows = self.entries[&key].rows.clone();
            for tuple in rows {
                ctx.emit(response, StreamRecord::Snapshot(tuple));
            }
            ctx.emit(response, StreamRecord::EndOfSnapshot);
            return;
        }
        self.misses += 1;
        let child = match ctx.child(0) {
            Some(c) => c.id.clone(),
            None => {
                ctx.emit(
                    response,
                    StreamRecord::Error {
                        code: StreamErrorCode::ConfigError,
                        detail: "cache has no child".into(),
                    },
                );
                return;
            }
        };
        let fetch = ctx.open_child(&child, query);
        self.by_response.insert(response, fetch);
        self.pending.insert(
            fetch,
            PendingFetch {
                response,
                key,
                rows: Vec::new(),
            },
        );
    }

    fn on_record(&mut self, stream: StreamId, record: StreamRecord, ctx: &mut Ctx) {
        let fetch = match self.pending.get_mut(&stream) {
            Some(f) => f,
            None => return,
        };
        match record {
            StreamRecord::Snapshot(tuple) => {
                ctx.emit(fetch.response, StreamRecord::Snapshot(tuple.clone()));
                fetch.rows.push(tuple);
            }
            StreamRecord::EndOfSnapshot => {
                let done = self.pending.remove(&stream).expect("pending fetch");
                self.by_response.remove(&done.response);
                ctx.emit(done.response, StreamRecord::EndOfSnapshot);
                self.use_counter += 1;
                self.entries.insert(
                    done.key,
                    CacheEntry {
                        rows: done.rows,
                        filled_at: ctx.now(),
                        last_used: self.use_counter,
                    },
                );
                self.evict_beyond_capacity();
            }
            StreamRecord::Error { code, detail } => {
                let done = self.pending.remove(&stream).expect("pending fetch");
                self.by_response.remove(&done.response);
                ctx.emit(done.response, StreamRecord::Error { code, detail });
            }
            // snapshot-mode fetches never carry deltas
            _ => {}
        }
    }

    fn on_closed(&mut self, stream: StreamId, ctx: &mut Ctx) {
        // caller abandoned the response mid-fetch
        if let Some(fetch) = self.by_response.remove(&stream) {
            self.pending.remove(&fetch);
            ctx.close(fetch);
        }
    }

    fn state_view(&self) -> StateView {
        StateView::Cache {
            entries: self.entries.len() as u64,
            hits: self.hits,
            misses: self.misses,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{DataStoreDriver, IndexUnit};
    use crate::runtime::Sim;
    use crate::simnet::{NetworkModel, SiteKind};
    use crate::storage::ad_catalog_tables;
    use crate::unit::{ChildRef, UnitId};
    use crate::workload::{fixture_rows, row_writes};
    use crate::Capability;

    /// cache(edge) -> index(dc) -> driver(dc); returns (sim, cache id).
    fn cached_index_sim() -> (Sim, UnitId) {
        let net = NetworkModel::new(vec![
            ("dc".into(), SiteKind::DataCenter),
            ("edge".into(), SiteKind::Edge),
        ])
        .unwrap();
        let mut sim = Sim::new(net, "dc").unwrap();
        for def in ad_catalog_tables() {
            sim.store_mut().create_table(def).unwrap();
        }
        for (key, tags, price) in fixture_rows() {
            for w in row_writes(&key, &tags, price) {
                sim.seed_write(w).unwrap();
            }
        }
        let driver_cap = Capability::new("Ads")
            .with_attributes(["tags"])
            .subscribe(true);
        sim.deploy_unit(
            UnitId::from("driver"),
            "dc",
            driver_cap.clone(),
            vec![],
            true,
            false,
            Box::new(DataStoreDriver::new("Ads")),
        )
        .unwrap();
        let index_cap = Capability::new("Ads")
            .with_attributes(["tags"])
            .subscribe(true);
        sim.deploy_unit(
            UnitId::from("index"),
            "dc",
            index_cap.clone(),
            vec![ChildRef {
                id: UnitId::from("driver"),
                capability: driver_cap,
            }],
            false,
            false,
            Box::new(IndexUnit::new("Ads")),
        )
        .unwrap();
        let cache = UnitId::from("cache");
        sim.deploy_unit(
            cache.clone(),
            "edge",
            Capability::new("Ads").with_attributes(["tags"]),
            vec![ChildRef {
                id: UnitId::from("index"),
                capability: index_cap,
            }],
            false,
            true,
            Box::new(CacheUnit::new(SimTime::from_ms(500.0), 128)),
        )
        .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(10_000.0)).unwrap();
        assert!(sim.all_built());
        (sim, cache)
    }

    fn sports_query() -> Query {
        Query::scan("Ads").with_tags(["sports"])
    }

    #[test]
    fn second_hit_within_ttl_causes_no_downstream_traffic() {
        let (mut sim, cache) = cached_index_sim();
        let client = sim.add_client("edge").unwrap();
        let s1 = sim
            .client_open_query(client, &cache, sports_query())
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(100_000.0))
            .unwrap();
        assert_eq!(sim.probe(s1).unwrap().rows.len(), 3);
        let cross_before = sim.meter().cross_site_bytes();

        let s2 = sim
            .client_open_query(client, &cache, sports_query())
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(100_000.0))
            .unwrap();
        assert_eq!(sim.probe(s2).unwrap().rows.len(), 3);
        assert_eq!(sim.meter().cross_site_bytes(), cross_before);
        match sim.unit_state(&cache).unwrap() {
            StateView::Cache { hits, misses, .. } => {
                assert_eq!((hits, misses), (1, 1));
            }
            other => panic!("unexpected state {other:?}"),
        }
    }

    #[test]
    fn expired_entries_are_refetched() {
        let (mut sim, cache) = cached_index_sim();
        let client = sim.add_client("edge").unwrap();
        sim.client_open_query(client, &cache, sports_query())
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(100_000.0))
            .unwrap();
        // idle past the ttl, then ask again
        sim.schedule_noop(sim.now() + SimTime::from_ms(600.0));
        sim.run_until_quiescent(SimTime::from_ms(100_000.0))
            .unwrap();
        let cross_before = sim.meter().cross_site_bytes();
        sim.client_open_query(client, &cache, sports_query())
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(100_000.0))
            .unwrap();
        assert!(sim.meter().cross_site_bytes() > cross_before);
        match sim.unit_state(&cache).unwrap() {
            StateView::Cache { hits, misses, .. } => {
                assert_eq!((hits, misses), (0, 2));
            }
            other => panic!("unexpected state {other:?}"),
        }
    }

    #[test]
    fn lru_eviction_respects_capacity() {
        let mut cache = CacheUnit::new(SimTime::from_ms(1_000.0), 2);
        for i in 0..3 {
            cache.use_counter += 1;
            cache.entries.insert(
                format!("q{i}"),
                CacheEntry {
                    rows: vec![],
                    filled_at: SimTime::ZERO,
                    last_used: cache.use_counter,
                },
            );
        }
        cache.touch("q0"); // q1 becomes least recently used
        cache.evict_beyond_capacity();
        assert!(cache.entries.contains_key("q0"));
        assert!(!cache.entries.contains_key("q1"));
        assert!(cache.entries.contains_key("q2"));
    }

    #[test]
    fn early_close_cancels_the_fetch() {
        let (mut sim, cache) = cached_index_sim();
        let client = sim.add_client("edge").unwrap();
        let open_before = sim.open_stream_count();
        let stream = sim
            .client_open_query(client, &cache, sports_query())
            .unwrap();
        // close before the miss completes (cross-site fetch takes 100ms+)
        sim.client_close(stream).unwrap();
        sim.run_until_quiescent(SimTime::from_ms(100_000.0))
            .unwrap();
        assert_eq!(sim.open_stream_count(), open_before);
    }
}
