//! Top-K view: per tag, the full descending price order of all joined
//! ads, exposing the first K per entry.
//!
//! Keeping the complete per-tag order (not just K entries) makes deletions
//! and price drops answerable without re-querying downstream. Queries
//! merge the per-tag prefixes, deduplicate by key, re-rank by descending
//! price with ascending-key ties, and truncate to the requested limit.
//! Subscriptions re-diff their merged answer after every applied delta, so
//! a write that does not change the visible view emits nothing.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use crate::query::{Query, QueryMode};
use crate::record::{LogicalTimestamp, StreamErrorCode, StreamRecord, Tuple};
use crate::unit::{Ctx, StateView, StreamId, UnitBehavior};

type RankEntry = (Reverse<i64>, String);

/// The ordered view state, separated from the event plumbing so it can be
/// built and queried directly (convergence checks do exactly that).
#[derive(Debug, Clone, Default)]
pub struct TopKView {
    k: u32,
    per_tag: BTreeMap<String, BTreeSet<RankEntry>>,
    rows: BTreeMap<String, Tuple>,
}

impl TopKView {
    pub fn new(k: u32) -> Self {
        TopKView {
            k,
            per_tag: BTreeMap::new(),
            rows: BTreeMap::new(),
        }
    }

    pub fn row(&self, key: &str) -> Option<&Tuple> {
        self.rows.get(key)
    }

    fn unlink(&mut self, tuple: &Tuple) {
        let price = match tuple.price() {
            Some(p) => p,
            None => return,
        };
        if let Some(tags) = tuple.tags() {
            for tag in tags {
                if let Some(list) = self.per_tag.get_mut(tag) {
                    list.remove(&(Reverse(price), tuple.key.clone()));
                    if list.is_empty() {
                        self.per_tag.remove(tag);
                    }
                }
            }
        }
    }

    /// Apply an upsert; rows lacking a price are unrankable and drop out.
    /// Stale timestamps (older than the applied state) are ignored.
    pub fn apply_upsert(&mut self, tuple: Tuple) {
        if let Some(existing) = self.rows.get(&tuple.key) {
            if existing.ts.value > tuple.ts.value {
                return;
            }
        }
        if let Some(prev) = self.rows.remove(&tuple.key) {
            self.unlink(&prev);
        }
        if let Some(price) = tuple.price() {
            if let Some(tags) = tuple.tags() {
                for tag in tags {
                    self.per_tag
                        .entry(tag.clone())
                        .or_default()
                        .insert((Reverse(price), tuple.key.clone()));
                }
            }
            self.rows.insert(tuple.key.clone(), tuple);
        }
    }

    pub fn apply_delete(&mut self, key: &str, ts: &LogicalTimestamp) {
        if let Some(existing) = self.rows.get(key) {
            if existing.ts.value > ts.value {
                return;
            }
        }
        if let Some(prev) = self.rows.remove(key) {
            self.unlink(&prev);
        }
    }

    /// Merged ranked answer for a query. With a plain limit query the
    /// per-tag K-prefixes suffice (any ad in the merged top ranks within
    /// K of each of its tags); predicates fall back to the full lists.
    pub fn merged_answer(&self, query: &Query) -> Vec<(String, i64)> {
        let prefix_only = query.limit.is_some() && query.predicate.is_empty();
        let mut merged: BTreeSet<RankEntry> = BTreeSet::new();
        let tags: Vec<&String> = if query.tag_filter.is_empty() {
            self.per_tag.keys().collect()
        } else {
            query.tag_filter.iter().collect()
        };
        for tag in tags {
            let list = match self.per_tag.get(tag) {
                Some(l) => l,
                None => continue,
            };
            if prefix_only {
                merged.extend(list.iter().take(self.k as usize).cloned());
            } else {
                merged.extend(
                    list.iter()
                        .filter(|(_, key)| {
                            self.rows
                                .get(key)
                                .map(|t| query.matches(t))
                                .unwrap_or(false)
                        })
                        .cloned(),
                );
            }
        }
        let mut out: Vec<(String, i64)> = merged
            .into_iter()
            .map(|(Reverse(price), key)| (key, price))
            .collect();
        if let Some(limit) = query.limit {
            out.truncate(limit as usize);
        }
        out
    }

    pub fn to_state_view(&self) -> StateView {
        StateView::TopK {
            k: self.k,
            per_tag: self
                .per_tag
                .iter()
                .map(|(tag, list)| {
                    (
                        tag.clone(),
                        list.iter()
                            .map(|(Reverse(p), key)| (*p, key.clone()))
                            .collect(),
                    )
                })
                .collect(),
            rows: self.rows.clone(),
        }
    }
}

pub struct TopKUnit {
    k: u32,
    order_attribute: String,
    built: bool,
    view: TopKView,
    pending: Vec<(Query, StreamId)>,
    subs: BTreeMap<StreamId, SubState>,
}

struct SubState {
    query: Query,
    last: Vec<(String, i64)>,
}

impl TopKUnit {
    pub fn new(k: u32, order_attribute: impl Into<String>) -> Self {
        TopKUnit {
            k,
            order_attribute: order_attribute.into(),
            built: false,
            view: TopKView::new(k),
            pending: Vec::new(),
            subs: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    fn answer(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        if let Some(limit) = query.limit {
            if limit > self.k {
                ctx.emit(
                    response,
                    StreamRecord::Error {
                        code: StreamErrorCode::CapabilityMismatch,
                        detail: format!("limit {limit} exceeds configured K={}", self.k),
                    },
                );
                return;
            }
        }
        if let Some(order) = &query.order_by {
            if order.attribute != self.order_attribute || !order.descending {
                ctx.emit(
                    response,
                    StreamRecord::Error {
                        code: StreamErrorCode::CapabilityMismatch,
                        detail: format!("view ranks by {} descending only", self.order_attribute),
                    },
                );
                return;
            }
        }
        let answer = self.view.merged_answer(&query);
        for (key, _) in &answer {
            let tuple = self.view.row(key).expect("ranked key has a row");
            ctx.emit(response, StreamRecord::Snapshot(query.project(tuple)));
        }
        ctx.emit(response, StreamRecord::EndOfSnapshot);
        if query.mode == QueryMode::SnapshotAndSubscribe {
            self.subs.insert(
                response,
                SubState {
                    query,
                    last: answer,
                },
            );
        }
    }

    /// Re-diff every subscription after a state change; unchanged merged
    /// answers emit nothing.
    fn publish(&mut self, ts: &LogicalTimestamp, origin: &LogicalTimestamp, ctx: &mut Ctx) {
        let responses: Vec<StreamId> = self.subs.keys().copied().collect();
        for response in responses {
            let sub = self.subs.get(&response).expect("sub exists");
            let new = self.view.merged_answer(&sub.query);
            if new == sub.last {
                continue;
            }
            let old_prices: BTreeMap<&String, i64> =
                sub.last.iter().map(|(k, p)| (k, *p)).collect();
            let new_keys: BTreeSet<&String> = new.iter().map(|(k, _)| k).collect();
            let mut emissions: Vec<StreamRecord> = Vec::new();
            for (key, price) in &new {
                if old_prices.get(key) != Some(price) {
                    let tuple = self.view.row(key).expect("ranked key has a row");
                    emissions.push(StreamRecord::DeltaUpsert {
                        tuple: sub.query.project(tuple),
                        origin: origin.clone(),
                    });
                }
            }
            for (key, _) in &sub.last {
                if !new_keys.contains(key) {
                    emissions.push(StreamRecord::DeltaDelete {
                        key: key.clone(),
                        ts: ts.clone(),
                        origin: origin.clone(),
                    });
                }
            }
            for rec in emissions {
                ctx.emit(response, rec);
            }
            self.subs.get_mut(&response).expect("sub exists").last = new;
        }
    }

    fn fail_all(&mut self, code: StreamErrorCode, detail: &str, ctx: &mut Ctx) {
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

impl UnitBehavior for TopKUnit {
    fn class_name(&self) -> &'static str {
        "topk"
    }

    fn on_deploy(&mut self, ctx: &mut Ctx) {
        let children: Vec<_> = ctx.children().to_vec();
        for child in &children {
            ctx.open_child(&child.id, Query::subscribe(&child.capability.table));
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
            StreamRecord::Snapshot(tuple) => self.view.apply_upsert(tuple),
            StreamRecord::EndOfSnapshot => {
                if !self.built {
                    self.built = true;
                    for (query, response) in std::mem::take(&mut self.pending) {
                        self.answer(query, response, ctx);
                    }
                }
            }
            StreamRecord::DeltaUpsert { tuple, origin } => {
                let ts = tuple.ts.clone();
                self.view.apply_upsert(tuple);
                self.publish(&ts, &origin, ctx);
            }
            StreamRecord::DeltaDelete { key, ts, origin } => {
                self.view.apply_delete(&key, &ts);
                self.publish(&ts, &origin, ctx);
            }
            StreamRecord::Error { code, detail } => {
                self.built = true;
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
        self.view.to_state_view()
    }
}

/// Brute-force reference: top-`limit` of the tag-matching rows, computed
/// directly from (key, tags, price) triples with no view structures.
pub fn brute_force_top_k(
    rows: &[(String, BTreeSet<String>, i64)],
    tag_filter: &BTreeSet<String>,
    limit: usize,
) -> Vec<(String, i64)> {
    let mut matched: Vec<(String, i64)> = rows
        .iter()
        .filter(|(_, tags, _)| {
            tag_filter.is_empty() || tags.intersection(tag_filter).next().is_some()
        })
        .map(|(key, _, price)| (key.clone(), *price))
        .collect();
    matched.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    matched.truncate(limit);
    matched
}

/// Build a view holding the given rows (convergence and merge tests).
pub fn view_from_rows(k: u32, rows: &[(String, BTreeSet<String>, i64)]) -> TopKView {
    let mut view = TopKView::new(k);
    for (i, (key, tags, price)) in rows.iter().enumerate() {
        let tuple = Tuple::new(
            key.clone(),
            LogicalTimestamp::new(i as u64 + 1, "", crate::simnet::SimTime::ZERO),
        )
        .with_attr("tags", crate::record::AttributeValue::Tags(tags.clone()))
        .with_attr("price", crate::record::AttributeValue::Price(*price));
        view.apply_upsert(tuple);
    }
    view
}
