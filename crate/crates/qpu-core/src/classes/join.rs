//! Inner equi-join on the tuple key across two children.
//!
//! Both sides are materialized from build-time subscriptions; a joined
//! output row exists exactly when both sides hold the key. Attribute maps
//! merge (right side wins name collisions) and the output timestamp is the
//! max of the two sides.

use std::collections::BTreeMap;

use crate::query::Query;
use crate::record::{LogicalTimestamp, StreamRecord, Tuple};
use crate::unit::{Ctx, StateView, StreamId, UnitBehavior};

use super::sort_tuples;

pub struct JoinUnit {
    left_feed: Option<StreamId>,
    right_feed: Option<StreamId>,
    left_eos: bool,
    right_eos: bool,
    left: BTreeMap<String, Tuple>,
    right: BTreeMap<String, Tuple>,
    output: BTreeMap<String, Tuple>,
    pending: Vec<(Query, StreamId)>,
    subs: BTreeMap<StreamId, Query>,
}

impl JoinUnit {
    pub fn new() -> Self {
        JoinUnit {
            left_feed: None,
            right_feed: None,
            left_eos: false,
            right_eos: false,
            left: BTreeMap::new(),
            right: BTreeMap::new(),
            output: BTreeMap::new(),
            pending: Vec::new(),
            subs: BTreeMap::new(),
        }
    }

    fn side_mut(&mut self, stream: StreamId) -> Option<&mut BTreeMap<String, Tuple>> {
        if self.left_feed == Some(stream) {
            Some(&mut self.left)
        } else if self.right_feed == Some(stream) {
            Some(&mut self.right)
        } else {
            None
        }
    }

    /// Recompute the joined row for a key after one side changed; returns
    /// (old output, new output).
    fn refresh_output(&mut self, key: &str) -> (Option<Tuple>, Option<Tuple>) {
        let old = self.output.get(key).cloned();
        let new = match (self.left.get(key), self.right.get(key)) {
            (Some(l), Some(r)) => {
                let mut joined = Tuple::new(
                    key.to_string(),
                    if l.ts.value >= r.ts.value {
                        l.ts.clone()
                    } else {
                        r.ts.clone()
                    },
                );
                joined.attributes = l.attributes.clone();
                for (name, value) in &r.attributes {
                    joined.attributes.insert(name.clone(), value.clone());
                }
                Some(joined)
            }
            _ => None,
        };
        match &new {
            Some(t) => {
                self.output.insert(key.to_string(), t.clone());
            }
            None => {
                self.output.remove(key);
            }
        }
        (old, new)
    }

    fn built_now(&self) -> bool {
        self.left_eos && self.right_eos
    }

    fn answer(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        let mut matched: Vec<Tuple> = self
            .output
            .values()
            .filter(|t| query.matches(t))
            .cloned()
            .collect();
        if let Some(order) = &query.order_by {
            sort_tuples(&mut matched, order);
        }
        for tuple in matched {
            ctx.emit(response, StreamRecord::Snapshot(query.project(&tuple)));
        }
        ctx.emit(response, StreamRecord::EndOfSnapshot);
        if query.mode == crate::query::QueryMode::SnapshotAndSubscribe {
            self.subs.insert(response, query);
        }
    }

    fn publish(
        &self,
        old: Option<&Tuple>,
        new: Option<&Tuple>,
        ts: &LogicalTimestamp,
        origin: &LogicalTimestamp,
        ctx: &mut Ctx,
    ) {
        for (response, query) in &self.subs {
            let before = old.map(|t| query.matches(t)).unwrap_or(false);
            let now = new.map(|t| query.matches(t)).unwrap_or(false);
            match (before, now) {
                (_, true) => {
                    if before && old == new {
                        continue;
                    }
                    let tuple = new.expect("joined tuple exists");
                    ctx.emit(
                        *response,
                        StreamRecord::DeltaUpsert {
                            tuple: query.project(tuple),
                            origin: origin.clone(),
                        },
                    );
                }
                (true, false) => {
                    ctx.emit(
                        *response,
                        StreamRecord::DeltaDelete {
                            key: old.expect("previous output exists").key.clone(),
                            ts: ts.clone(),
                            origin: origin.clone(),
                        },
                    );
                }
                (false, false) => {}
            }
        }
    }

    fn fail_all(&mut self, code: crate::record::StreamErrorCode, detail: &str, ctx: &mut Ctx) {
        for (response, _) in std::mem::take(&mut self.subs) {
            ctx.emit(
                response,
                StreamRecord::Error {
                    code,
                    detail: detail.into(),
                },
            );
        }
        for (_, response) in std::mem::take(&mut self.pending) {
            ctx.emit(
                response,
                StreamRecord::Error {
                    code,
                    detail: detail.into(),
                },
            );
        }
    }
}

impl Default for JoinUnit {
    fn default() -> Self {
        Self::new()
    }
}

impl UnitBehavior for JoinUnit {
    fn class_name(&self) -> &'static str {
        "join"
    }

    fn on_deploy(&mut self, ctx: &mut Ctx) {
        let children: Vec<_> = ctx.children().to_vec();
        assert_eq!(children.len(), 2, "join requires exactly two children");
        self.left_feed = Some(ctx.open_child(
            &children[0].id,
            Query::subscribe(&children[0].capability.table),
        ));
        self.right_feed = Some(ctx.open_child(
            &children[1].id,
            Query::subscribe(&children[1].capability.table),
        ));
    }

    fn on_query(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        if self.built_now() {
            self.answer(query, response, ctx);
        } else {
            self.pending.push((query, response));
        }
    }

    fn on_record(&mut self, stream: StreamId, record: StreamRecord, ctx: &mut Ctx) {
        match record {
            StreamRecord::Snapshot(tuple) => {
                let key = tuple.key.clone();
                if let Some(side) = self.side_mut(stream) {
                    side.insert(key.clone(), tuple);
                    self.refresh_output(&key);
                }
            }
            StreamRecord::EndOfSnapshot => {
                if self.left_feed == Some(stream) {
                    self.left_eos = true;
                } else if self.right_feed == Some(stream) {
                    self.right_eos = true;
                }
                if self.built_now() {
                    for (query, response) in std::mem::take(&mut self.pending) {
                        self.answer(query, response, ctx);
                    }
                }
            }
            StreamRecord::DeltaUpsert { tuple, origin } => {
                let key = tuple.key.clone();
                let ts = tuple.ts.clone();
                let stale = match self.side_mut(stream) {
                    Some(side) => {
                        let stale = side
                            .get(&key)
                            .map(|prev| prev.ts.value > tuple.ts.value)
                            .unwrap_or(false);
                        if !stale {
                            side.insert(key.clone(), tuple);
                        }
                        stale
                    }
                    None => return,
                };
                if !stale {
                    let (old, new) = self.refresh_output(&key);
                    self.publish(old.as_ref(), new.as_ref(), &ts, &origin, ctx);
                }
            }
            StreamRecord::DeltaDelete { key, ts, origin } => {
                let removed = match self.side_mut(stream) {
                    Some(side) => {
                        let stale = side
                            .get(&key)
                            .map(|prev| prev.ts.value > ts.value)
                            .unwrap_or(false);
                        if !stale {
                            side.remove(&key);
                        }
                        !stale
                    }
                    None => return,
                };
                if removed {
                    let (old, new) = self.refresh_output(&key);
                    self.publish(old.as_ref(), new.as_ref(), &ts, &origin, ctx);
                }
            }
            StreamRecord::Error { code, detail } => {
                self.left_eos = true;
                self.right_eos = true;
                self.fail_all(code, &detail, ctx);
            }
        }
    }

    fn on_closed(&mut self, stream: StreamId, _ctx: &mut Ctx) {
        self.subs.remove(&stream);
    }

    fn is_built(&self) -> bool {
        self.built_now()
    }

    fn state_view(&self) -> StateView {
        StateView::Join {
            left: self.left.clone(),
            right: self.right.clone(),
            output: self.output.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::DataStoreDriver;
    use crate::record::AttributeValue;
    use crate::runtime::Sim;
    use crate::simnet::{NetworkModel, SimTime, SiteKind};
    use crate::storage::{ad_catalog_tables, WriteRequest};
    use crate::unit::{ChildRef, UnitId};
    use crate::workload::{fixture_rows, row_writes};
    use crate::Capability;

    fn build_join_sim(seed_fixture: bool) -> (Sim, UnitId) {
        let net = NetworkModel::new(vec![("dc".into(), SiteKind::DataCenter)]).unwrap();
        let mut sim = Sim::new(net, "dc").unwrap();
        for def in ad_catalog_tables() {
            sim.store_mut().create_table(def).unwrap();
        }
        if seed_fixture {
            for (key, tags, price) in fixture_rows() {
                for w in row_writes(&key, &tags, price) {
                    sim.seed_write(w).unwrap();
                }
            }
        }
        let ads_cap = Capability::new("Ads")
            .with_attributes(["tags"])
            .subscribe(true);
        let prices_cap = Capability::new("Prices")
            .with_attributes(["price"])
            .subscribe(true);
        sim.deploy_unit(
            UnitId::from("ads_driver"),
            "dc",
            ads_cap.clone(),
            vec![],
            true,
            false,
            Box::new(DataStoreDriver::new("Ads")),
        )
        .unwrap();
        sim.deploy_unit(
            UnitId::from("prices_driver"),
            "dc",
            prices_cap.clone(),
            vec![],
            true,
            false,
            Box::new(DataStoreDriver::new("Prices")),
        )
        .unwrap();
        let join = UnitId::from("join");
        sim.deploy_unit(
            join.clone(),
            "dc",
            Capability::new("Ads")
                .with_attributes(["tags", "price"])
                .subscribe(true),
            vec![
                ChildRef {
                    id: UnitId::from("ads_driver"),
                    capability: ads_cap,
                },
                ChildRef {
                    id: UnitId::from("prices_driver"),
                    capability: prices_cap,
                },
            ],
            false,
            true,
            Box::new(JoinUnit::new()),
        )
        .unwrap();
        (sim, join)
    }

    fn output_rows(sim: &Sim, join: &UnitId) -> BTreeMap<String, Tuple> {
        match sim.unit_state(join).unwrap() {
            StateView::Join { output, .. } => output,
            other => panic!("unexpected state {other:?}"),
        }
    }

    #[test]
    fn fixture_joins_to_five_rows() {
        let (mut sim, join) = build_join_sim(true);
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let output = output_rows(&sim, &join);
        assert_eq!(output.len(), 5);
        let a2 = &output["a2"];
        assert_eq!(a2.price(), Some(50));
        assert_eq!(
            a2.tags().unwrap().iter().cloned().collect::<Vec<_>>(),
            vec!["sports"]
        );
    }

    #[test]
    fn price_before_ad_emits_once_pair_completes() {
        let (mut sim, join) = build_join_sim(false);
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        // subscribe a client to observe join output deltas
        let client = sim.add_client("dc").unwrap();
        let stream = sim
            .client_open_query(client, &join, Query::subscribe("Ads"))
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();

        let advertiser = sim.add_client("dc").unwrap();
        sim.schedule_write(
            SimTime::from_ms(100.0),
            advertiser,
            WriteRequest::upsert("Prices", "a7", vec![("price", AttributeValue::Price(70))]),
        );
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        assert!(sim.probe(stream).unwrap().deltas.is_empty());

        sim.schedule_write(
            sim.now() + SimTime::from_ms(10.0),
            advertiser,
            WriteRequest::upsert(
                "Ads",
                "a7",
                vec![(
                    "tags",
                    AttributeValue::Tags(std::collections::BTreeSet::from(["x".to_string()])),
                )],
            ),
        );
        sim.run_until_quiescent(SimTime::from_ms(10_000.0)).unwrap();
        let probe = sim.probe(stream).unwrap();
        assert_eq!(probe.deltas.len(), 1);
        match &probe.deltas[0] {
            StreamRecord::DeltaUpsert { tuple, .. } => {
                assert_eq!(tuple.key, "a7");
                assert_eq!(tuple.price(), Some(70));
            }
            other => panic!("expected upsert, got {other:?}"),
        }
    }

    #[test]
    fn deleting_one_side_retracts_the_pair() {
        let (mut sim, join) = build_join_sim(true);
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();
        let client = sim.add_client("dc").unwrap();
        let stream = sim
            .client_open_query(client, &join, Query::subscribe("Ads"))
            .unwrap();
        sim.run_until_quiescent(SimTime::from_ms(1_000.0)).unwrap();

        let advertiser = sim.add_client("dc").unwrap();
        sim.schedule_write(
            SimTime::from_ms(100.0),
            advertiser,
            WriteRequest::delete("Ads", "a4"),
        );
        sim.run_until_quiescent(SimTime::from_ms(10_000.0)).unwrap();
        let probe = sim.probe(stream).unwrap();
        assert_eq!(probe.deltas.len(), 1);
        assert!(matches!(&probe.deltas[0], StreamRecord::DeltaDelete { key, .. } if key == "a4"));
        assert_eq!(output_rows(&sim, &join).len(), 4);
    }

    #[test]
    fn join_state_matches_nested_loop_recomputation() {
        let (mut sim, join) = build_join_sim(true);
        let advertiser = sim.add_client("dc").unwrap();
        sim.schedule_write(
            SimTime::from_ms(20.0),
            advertiser,
            WriteRequest::upsert("Prices", "a1", vec![("price", AttributeValue::Price(77))]),
        );
        sim.schedule_write(
            SimTime::from_ms(30.0),
            advertiser,
            WriteRequest::delete("Prices", "a5"),
        );
        sim.run_until_quiescent(SimTime::from_ms(10_000.0)).unwrap();

        // nested-loop oracle over the final base tables
        let ads = sim.store().scan("Ads").unwrap();
        let prices = sim.store().scan("Prices").unwrap();
        let mut expected: BTreeMap<String, (Vec<String>, i64)> = BTreeMap::new();
        for ad in &ads {
            for price in &prices {
                if ad.key == price.key {
                    expected.insert(
                        ad.key.clone(),
                        (
                            ad.tags().unwrap().iter().cloned().collect(),
                            price.price().unwrap(),
                        ),
                    );
                }
            }
        }
        let output = output_rows(&sim, &join);
        assert_eq!(output.len(), expected.len());
        for (key, (tags, price)) in expected {
            let row = &output[&key];
            assert_eq!(row.price(), Some(price));
            assert_eq!(
                row.tags().unwrap().iter().cloned().collect::<Vec<_>>(),
                tags
            );
        }
    }
}
