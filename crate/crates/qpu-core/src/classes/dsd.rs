//! Data-store driver: bridges the graph to the storage tier.
//!
//! For each incoming query it opens a table feed from the store, forwards
//! matching snapshot rows, and (in subscribe mode) keeps forwarding deltas
//! filtered by the query — including synthesizing deletes for rows that
//! leave the predicate.

use std::collections::{BTreeMap, BTreeSet};

use crate::query::{Query, QueryMode};
use crate::record::{StreamRecord, Tuple};
use crate::unit::{Ctx, StreamId, UnitBehavior};

use super::sort_tuples;

pub struct DataStoreDriver {
    table: String,
    responses: BTreeMap<StreamId, ResponseSub>,
    by_feed: BTreeMap<StreamId, StreamId>,
}

struct ResponseSub {
    query: Query,
    feed: StreamId,
    live: bool,
    /// Keys currently exposed to this consumer (subscribe mode only).
    matched: BTreeSet<String>,
    /// Buffered snapshot rows when the query asks for an ordering.
    buffer: Option<Vec<Tuple>>,
}

impl DataStoreDriver {
    pub fn new(table: impl Into<String>) -> Self {
        DataStoreDriver {
            table: table.into(),
            responses: BTreeMap::new(),
            by_feed: BTreeMap::new(),
        }
    }

    fn drop_response(&mut self, response: StreamId) {
        if let Some(sub) = self.responses.remove(&response) {
            self.by_feed.remove(&sub.feed);
        }
    }
}

impl UnitBehavior for DataStoreDriver {
    fn class_name(&self) -> &'static str {
        "dsd"
    }

    fn on_query(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        let live = query.mode == QueryMode::SnapshotAndSubscribe;
        let feed = ctx.open_store(&self.table, live);
        let buffer = query.order_by.as_ref().map(|_| Vec::new());
        self.by_feed.insert(feed, response);
        self.responses.insert(
            response,
            ResponseSub {
                query,
                feed,
                live,
                matched: BTreeSet::new(),
                buffer,
            },
        );
    }

    fn on_record(&mut self, stream: StreamId, record: StreamRecord, ctx: &mut Ctx) {
        let response = match self.by_feed.get(&stream) {
            Some(r) => *r,
            None => return,
        };
        let sub = self.responses.get_mut(&response).expect("sub exists");
        match record {
            StreamRecord::Snapshot(tuple) => {
                if sub.query.matches(&tuple) {
                    if sub.live {
                        sub.matched.insert(tuple.key.clone());
                    }
                    match &mut sub.buffer {
                        Some(buf) => buf.push(tuple),
                        None => {
                            let out = sub.query.project(&tuple);
                            ctx.emit(response, StreamRecord::Snapshot(out));
                        }
                    }
                }
            }
            StreamRecord::EndOfSnapshot => {
                if let Some(mut buf) = sub.buffer.take() {
                    if let Some(order) = &sub.query.order_by {
                        sort_tuples(&mut buf, order);
                    }
                    for tuple in buf {
                        let out = sub.query.project(&tuple);
                        ctx.emit(response, StreamRecord::Snapshot(out));
                    }
                }
                ctx.emit(response, StreamRecord::EndOfSnapshot);
                if !sub.live {
                    self.drop_response(response);
                }
            }
            StreamRecord::DeltaUpsert { tuple, origin } => {
                if sub.query.matches(&tuple) {
                    sub.matched.insert(tuple.key.clone());
                    let out = sub.query.project(&tuple);
                    ctx.emit(response, StreamRecord::DeltaUpsert { tuple: out, origin });
                } else if sub.matched.remove(&tuple.key) {
                    // row left the predicate: the consumer must forget it
                    ctx.emit(
                        response,
                        StreamRecord::DeltaDelete {
                            key: tuple.key,
                            ts: tuple.ts,
                            origin,
                        },
                    );
                }
            }
            StreamRecord::DeltaDelete { key, ts, origin } => {
                if sub.matched.remove(&key) {
                    ctx.emit(response, StreamRecord::DeltaDelete { key, ts, origin });
                }
            }
            StreamRecord::Error { code, detail } => {
                ctx.emit(response, StreamRecord::Error { code, detail });
                self.drop_response(response);
            }
        }
    }

    fn on_closed(&mut self, stream: StreamId, ctx: &mut Ctx) {
        // consumer walked away: drop the store feed backing it
        if let Some(sub) = self.responses.remove(&stream) {
            self.by_feed.remove(&sub.feed);
            ctx.close(sub.feed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{CmpOp, Comparison};
    use crate::record::AttributeValue;
    use crate::runtime::Sim;
    use crate::simnet::{NetworkModel, SimTime, SiteKind};
    use crate::storage::{ad_catalog_tables, WriteRequest};
    use crate::unit::UnitId;
    use crate::workload::{fixture_rows, row_writes};
    use crate::Capability;

    fn sim_with_fixture() -> Sim {
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
        sim
    }

    fn deploy_driver(sim: &mut Sim, table: &str) -> UnitId {
        let id = UnitId::from("driver");
        let capability = Capability::new(table)
            .with_attributes(if table == "Ads" {
                vec!["tags"]
            } else {
                vec!["price"]
            })
            .subscribe(true);
        sim.deploy_unit(
            id.clone(),
            "dc",
            capability,
            vec![],
            true,
            true,
            Box::new(DataStoreDriver::new(table)),
        )
        .unwrap();
        id
    }

    #[test]
    fn snapshot_query_returns_all_rows_then_closes() {
        let mut sim = sim_with_fixture();
        let driver = deploy_driver(&mut sim, "Ads");
        let client = sim.add_client("dc").unwrap();
        let stream = sim
            .client_open_query(client, &driver, Query::scan("Ads"))
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let probe = sim.probe(stream).unwrap();
        assert_eq!(probe.rows.len(), 5);
        assert!(probe.completed_at.is_some());
        assert!(probe.closed);
        assert_eq!(sim.open_stream_count(), 0);
    }

    #[test]
    fn subscribe_forwards_later_writes() {
        let mut sim = sim_with_fixture();
        let driver = deploy_driver(&mut sim, "Prices");
        let client = sim.add_client("dc").unwrap();
        let stream = sim
            .client_open_query(client, &driver, Query::subscribe("Prices"))
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let advertiser = sim.add_client("dc").unwrap();
        sim.schedule_write(
            SimTime::from_ms(100.0),
            advertiser,
            WriteRequest::upsert("Prices", "a3", vec![("price", AttributeValue::Price(60))]),
        );
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let probe = sim.probe(stream).unwrap();
        assert_eq!(probe.deltas.len(), 1);
        match &probe.deltas[0] {
            StreamRecord::DeltaUpsert { tuple, .. } => {
                assert_eq!(tuple.key, "a3");
                assert_eq!(tuple.price(), Some(60));
            }
            other => panic!("expected upsert, got {other:?}"),
        }
    }

    #[test]
    fn predicate_boundary_crossings_become_deletes() {
        let mut sim = sim_with_fixture();
        let driver = deploy_driver(&mut sim, "Prices");
        let client = sim.add_client("dc").unwrap();
        let mut query = Query::subscribe("Prices");
        query.predicate.push(Comparison {
            attribute: "price".into(),
            op: CmpOp::Gt,
            value: AttributeValue::Price(35),
        });
        let stream = sim.client_open_query(client, &driver, query).unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        // snapshot: a2 (50) and a4 (40) exceed 35
        assert_eq!(sim.probe(stream).unwrap().rows.len(), 2);

        let advertiser = sim.add_client("dc").unwrap();
        // a3 enters the predicate (30 -> 60), a4 leaves it (40 -> 10)
        sim.schedule_write(
            SimTime::from_ms(100.0),
            advertiser,
            WriteRequest::upsert("Prices", "a3", vec![("price", AttributeValue::Price(60))]),
        );
        sim.schedule_write(
            SimTime::from_ms(200.0),
            advertiser,
            WriteRequest::upsert("Prices", "a4", vec![("price", AttributeValue::Price(10))]),
        );
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let probe = sim.probe(stream).unwrap();
        assert_eq!(probe.deltas.len(), 2);
        assert!(
            matches!(&probe.deltas[0], StreamRecord::DeltaUpsert { tuple, .. } if tuple.key == "a3")
        );
        assert!(matches!(&probe.deltas[1], StreamRecord::DeltaDelete { key, .. } if key == "a4"));
    }

    #[test]
    fn unknown_table_surfaces_as_error_record() {
        let net = NetworkModel::new(vec![("dc".into(), SiteKind::DataCenter)]).unwrap();
        let mut sim = Sim::new(net, "dc").unwrap();
        let driver = UnitId::from("driver");
        sim.deploy_unit(
            driver.clone(),
            "dc",
            Capability::new("Bogus").subscribe(true),
            vec![],
            true,
            true,
            Box::new(DataStoreDriver::new("Bogus")),
        )
        .unwrap();
        let client = sim.add_client("dc").unwrap();
        let stream = sim
            .client_open_query(client, &driver, Query::scan("Bogus"))
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let probe = sim.probe(stream).unwrap();
        assert!(probe.error.is_some());
    }

    #[test]
    fn closing_the_response_closes_the_store_feed() {
        let mut sim = sim_with_fixture();
        let driver = deploy_driver(&mut sim, "Prices");
        let client = sim.add_client("dc").unwrap();
        let stream = sim
            .client_open_query(client, &driver, Query::subscribe("Prices"))
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        assert_eq!(sim.open_stream_count(), 2); // response + live feed
        sim.client_close(stream).unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        assert_eq!(sim.open_stream_count(), 0);
    }
}
