//! Inverted index over a tag-set column.
//!
//! On deployment the index subscribes to its children, builds the tag map
//! from the snapshot, then maintains it incrementally: an upsert re-tags a
//! key (removing stale entries), a delete removes it everywhere. Queries
//! arriving during the initial build are queued until it completes.

use std::collections::{BTreeMap, BTreeSet};

use crate::query::Query;
use crate::record::{LogicalTimestamp, StreamRecord, Tuple};
use crate::unit::{Ctx, StateView, StreamId, UnitBehavior};

use super::sort_tuples;

pub struct IndexUnit {
    table: String,
    by_tag: BTreeMap<String, BTreeSet<String>>,
    rows: BTreeMap<String, Tuple>,
    feeds_pending: usize,
    built: bool,
    pending: Vec<(Query, StreamId)>,
    subs: BTreeMap<StreamId, Query>,
}

impl IndexUnit {
    pub fn new(table: impl Into<String>) -> Self {
        IndexUnit {
            table: table.into(),
            by_tag: BTreeMap::new(),
            rows: BTreeMap::new(),
            feeds_pending: 0,
            built: false,
            pending: Vec::new(),
            subs: BTreeMap::new(),
        }
    }

    fn apply_upsert(&mut self, tuple: Tuple) -> Option<Tuple> {
        if let Some(existing) = self.rows.get(&tuple.key) {
            if existing.ts.value > tuple.ts.value {
                return Some(existing.clone()); // stale delta, keep newer state
            }
        }
        let old = self.rows.get(&tuple.key).cloned();
        if let Some(prev) = &old {
            self.unlink(prev);
        }
        if let Some(tags) = tuple.tags() {
            for tag in tags {
                self.by_tag
                    .entry(tag.clone())
                    .or_default()
                    .insert(tuple.key.clone());
            }
        }
        self.rows.insert(tuple.key.clone(), tuple);
        old
    }

    fn apply_delete(&mut self, key: &str, ts: &LogicalTimestamp) -> Option<Tuple> {
        if let Some(existing) = self.rows.get(key) {
            if existing.ts.value > ts.value {
                return Some(existing.clone());
            }
        }
        let old = self.rows.remove(key);
        if let Some(prev) = &old {
            self.unlink(prev);
        }
        old
    }

    fn unlink(&mut self, tuple: &Tuple) {
        if let Some(tags) = tuple.tags() {
            for tag in tags {
                if let Some(keys) = self.by_tag.get_mut(tag) {
                    keys.remove(&tuple.key);
                    if keys.is_empty() {
                        self.by_tag.remove(tag);
                    }
                }
            }
        }
    }

    fn answer(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        let mut matched: Vec<Tuple> = self
            .rows
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

    /// Publish membership/content changes for one key to every subscriber.
    fn publish(
        &mut self,
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
                    let tuple = new.expect("matching tuple exists");
                    // skip no-op updates: same content as before
                    if before && old == new {
                        continue;
                    }
                    ctx.emit(
                        *response,
                        StreamRecord::DeltaUpsert {
                            tuple: query.project(tuple),
                            origin: origin.clone(),
                        },
                    );
                }
                (true, false) => {
                    let key = old.expect("previous tuple exists").key.clone();
                    ctx.emit(
                        *response,
                        StreamRecord::DeltaDelete {
                            key,
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

impl UnitBehavior for IndexUnit {
    fn class_name(&self) -> &'static str {
        "index"
    }

    fn on_deploy(&mut self, ctx: &mut Ctx) {
        let children: Vec<_> = ctx.children().to_vec();
        for child in &children {
            ctx.open_child(&child.id, Query::subscribe(&self.table));
            self.feeds_pending += 1;
        }
    }

    fn on_query(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        if self.built {
            self.answer(query, response, ctx);
        } else {
            self.pending.push((query, response));
        }
    }

    fn on_record(&mut self, _stream: StreamId, record: StreamRecord, ctx: &mut Ctx) {
        match record {
            StreamRecord::Snapshot(tuple) => {
                self.apply_upsert(tuple);
            }
            StreamRecord::EndOfSnapshot => {
                self.feeds_pending = self.feeds_pending.saturating_sub(1);
                if self.feeds_pending == 0 && !self.built {
                    self.built = true;
                    for (query, response) in std::mem::take(&mut self.pending) {
                        self.answer(query, response, ctx);
                    }
                }
            }
            StreamRecord::DeltaUpsert { tuple, origin } => {
                let ts = tuple.ts.clone();
                let key = tuple.key.clone();
                let old = self.apply_upsert(tuple);
                let new = self.rows.get(&key).cloned();
                self.publish(old.as_ref(), new.as_ref(), &ts, &origin, ctx);
            }
            StreamRecord::DeltaDelete { key, ts, origin } => {
                let old = self.apply_delete(&key, &ts);
                let new = self.rows.get(&key).cloned();
                self.publish(old.as_ref(), new.as_ref(), &ts, &origin, ctx);
            }
            StreamRecord::Error { code, detail } => {
                self.built = true; // never answer from a half-built state again
                self.fail_all(code, &detail, ctx);
            }
        }
    }

    fn on_closed(&mut self, stream: StreamId, _ctx: &mut Ctx) {
        self.subs.remove(&stream);
    }

    fn is_built(&self) -> bool {
        self.built
    }

    fn state_view(&self) -> StateView {
        StateView::Index {
            by_tag: self.by_tag.clone(),
            rows: self.rows.clone(),
        }
    }
}
