//! Stateless filter/projection unit.
//!
//! Forwards each query to its child (minus the caller's projection, so the
//! configured predicate always sees full tuples), re-emits records that
//! satisfy the configured predicate projected to the configured attribute
//! set, and converts an upsert that stops matching into a delete.

use std::collections::{BTreeMap, BTreeSet};

use crate::query::{Comparison, Query, QueryMode};
use crate::record::StreamRecord;
use crate::unit::{Ctx, StreamId, UnitBehavior};

pub struct FilterUnit {
    predicate: Vec<Comparison>,
    projection: Option<Vec<String>>,
    responses: BTreeMap<StreamId, ResponseSub>,
    by_fetch: BTreeMap<StreamId, StreamId>,
}

struct ResponseSub {
    query: Query,
    fetch: StreamId,
    live: bool,
    matched: BTreeSet<String>,
}

impl FilterUnit {
    pub fn new(predicate: Vec<Comparison>, projection: Option<Vec<String>>) -> Self {
        FilterUnit {
            predicate,
            projection,
            responses: BTreeMap::new(),
            by_fetch: BTreeMap::new(),
        }
    }

    fn drop_response(&mut self, response: StreamId) {
        if let Some(sub) = self.responses.remove(&response) {
            self.by_fetch.remove(&sub.fetch);
        }
    }
}

impl UnitBehavior for FilterUnit {
    fn class_name(&self) -> &'static str {
        "filter"
    }

    fn on_query(&mut self, query: Query, response: StreamId, ctx: &mut Ctx) {
        let child = match ctx.child(0) {
            Some(c) => c.id.clone(),
            None => {
                ctx.emit(
                    response,
                    StreamRecord::Error {
                        code: crate::record::StreamErrorCode::ConfigError,
                        detail: "filter has no child".into(),
                    },
                );
                return;
            }
        };
        let mut child_query = query.clone();
        child_query.projection = None;
        let fetch = ctx.open_child(&child, child_query);
        self.by_fetch.insert(fetch, response);
        self.responses.insert(
            response,
            ResponseSub {
                live: query.mode == QueryMode::SnapshotAndSubscribe,
                query,
                fetch,
                matched: BTreeSet::new(),
            },
        );
    }

    fn on_record(&mut self, stream: StreamId, record: StreamRecord, ctx: &mut Ctx) {
        let response = match self.by_fetch.get(&stream) {
            Some(r) => *r,
            None => return,
        };
        // split borrows: evaluate against config before touching the sub
        let (emit_rec, cleanup) = {
            let sub = self.responses.get_mut(&response).expect("sub exists");
            match record {
                StreamRecord::Snapshot(tuple) => {
                    if self.predicate.iter().all(|c| c.matches(&tuple)) {
                        if sub.live {
                            sub.matched.insert(tuple.key.clone());
                        }
                        let out = {
                            let own = match &self.projection {
                                Some(names) => tuple.project(names),
                                None => tuple.clone(),
                            };
                            sub.query.project(&own)
                        };
                        (Some(StreamRecord::Snapshot(out)), false)
                    } else {
                        (None, false)
                    }
                }
                StreamRecord::EndOfSnapshot => (Some(StreamRecord::EndOfSnapshot), !sub.live),
                StreamRecord::DeltaUpsert { tuple, origin } => {
                    if self.predicate.iter().all(|c| c.matches(&tuple)) {
                        sub.matched.insert(tuple.key.clone());
                        let own = match &self.projection {
                            Some(names) => tuple.project(names),
                            None => tuple.clone(),
                        };
                        let out = sub.query.project(&own);
                        (
                            Some(StreamRecord::DeltaUpsert { tuple: out, origin }),
                            false,
                        )
                    } else if sub.matched.remove(&tuple.key) {
                        (
                            Some(StreamRecord::DeltaDelete {
                                key: tuple.key,
                                ts: tuple.ts,
                                origin,
                            }),
                            false,
                        )
                    } else {
                        (None, false)
                    }
                }
                StreamRecord::DeltaDelete { key, ts, origin } => {
                    if sub.matched.remove(&key) {
                        (Some(StreamRecord::DeltaDelete { key, ts, origin }), false)
                    } else {
                        (None, false)
                    }
                }
                StreamRecord::Error { code, detail } => {
                    (Some(StreamRecord::Error { code, detail }), true)
                }
            }
        };
        if let Some(rec) = emit_rec {
            ctx.emit(response, rec);
        }
        if cleanup {
            self.drop_response(response);
        }
    }

    fn on_closed(&mut self, stream: StreamId, ctx: &mut Ctx) {
        if let Some(sub) = self.responses.remove(&stream) {
            self.by_fetch.remove(&sub.fetch);
            ctx.close(sub.fetch);
        }
    }
}
