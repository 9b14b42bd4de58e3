//! The data storage tier: in-memory tables with a committed write log.
//!
//! A single store instance owns all tables and assigns strictly increasing
//! commit timestamps. Change-feed delivery to subscribers is wired up by
//! the runtime; this module only keeps the authoritative row state and the
//! append-only log that everything else folds from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::record::{AttributeValue, LogicalTimestamp, Tuple};
use crate::simnet::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Str,
    Int,
    Price,
    Tags,
}

impl ValueKind {
    fn accepts(self, value: &AttributeValue) -> bool {
        matches!(
            (self, value),
            (ValueKind::Str, AttributeValue::Str(_))
                | (ValueKind::Int, AttributeValue::Int(_))
                | (ValueKind::Price, AttributeValue::Price(_))
                | (ValueKind::Tags, AttributeValue::Tags(_))
        )
    }
}

/// Table schema: a key attribute plus typed value attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub key_attribute: String,
    pub attributes: Vec<(String, ValueKind)>,
}

impl TableDef {
    pub fn new(
        name: impl Into<String>,
        key_attribute: impl Into<String>,
        attributes: Vec<(String, ValueKind)>,
    ) -> Self {
        TableDef {
            name: name.into(),
            key_attribute: key_attribute.into(),
            attributes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteKind {
    Upsert,
    Delete,
}

/// A write request; the commit timestamp is assigned by the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRequest {
    pub table: String,
    pub kind: WriteKind,
    pub key: String,
    /// Row attributes; ignored for deletes.
    #[serde(default)]
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl WriteRequest {
    pub fn upsert(table: &str, key: &str, attrs: Vec<(&str, AttributeValue)>) -> Self {
        WriteRequest {
            table: table.into(),
            kind: WriteKind::Upsert,
            key: key.into(),
            attributes: attrs.into_iter().map(|(n, v)| (n.into(), v)).collect(),
        }
    }

    pub fn delete(table: &str, key: &str) -> Self {
        WriteRequest {
            table: table.into(),
            kind: WriteKind::Delete,
            key: key.into(),
            attributes: BTreeMap::new(),
        }
    }

    /// Metered payload size of the write message.
    pub fn wire_size(&self) -> u64 {
        crate::record::CONTROL_MESSAGE_BYTES
            + self.key.len() as u64
            + self.attributes.values().map(|v| v.wire_size()).sum::<u64>()
    }
}

/// A committed write: the request plus its assigned timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteOp {
    pub table: String,
    pub kind: WriteKind,
    pub key: String,
    pub attributes: BTreeMap<String, AttributeValue>,
    pub ts: LogicalTimestamp,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StorageError {
    #[error("table already exists: {0}")]
    DuplicateTable(String),
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("schema mismatch on table {table}: {detail}")]
    SchemaMismatch { table: String, detail: String },
}

#[derive(Debug)]
struct Table {
    def: TableDef,
    rows: BTreeMap<String, Tuple>,
}

/// In-memory storage tier with one total commit order.
#[derive(Debug)]
pub struct Store {
    site: String,
    next_ts: u64,
    tables: BTreeMap<String, Table>,
    log: Vec<WriteOp>,
}

impl Store {
    pub fn new(site: impl Into<String>) -> Self {
        Store {
            site: site.into(),
            next_ts: 0,
            tables: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    pub fn create_table(&mut self, def: TableDef) -> Result<(), StorageError> {
        if self.tables.contains_key(&def.name) {
            return Err(StorageError::DuplicateTable(def.name));
        }
        let mut names = std::collections::BTreeSet::new();
        for (name, _) in &def.attributes {
            if !names.insert(name.clone()) {
                return Err(StorageError::SchemaMismatch {
                    table: def.name.clone(),
                    detail: format!("duplicate attribute {name}"),
                });
            }
        }
        self.tables.insert(
            def.name.clone(),
            Table {
                def,
                rows: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.tables.contains_key(name)
    }

    pub fn table_def(&self, name: &str) -> Option<&TableDef> {
        self.tables.get(name).map(|t| &t.def)
    }

    /// Commit a write at virtual time `now`.
    ///
    /// Upserts replace the whole row; deletes remove it. Deletes of absent
    /// keys are accepted and logged so replay stays idempotent.
    pub fn write(
        &mut self,
        req: WriteRequest,
        now: SimTime,
    ) -> Result<LogicalTimestamp, StorageError> {
        let site = self.site.clone();
        let table = self
            .tables
            .get_mut(&req.table)
            .ok_or_else(|| StorageError::UnknownTable(req.table.clone()))?;
        if req.kind == WriteKind::Upsert {
            for (name, value) in &req.attributes {
                let kind = table
                    .def
                    .attributes
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, k)| *k)
                    .ok_or_else(|| StorageError::SchemaMismatch {
                        table: req.table.clone(),
                        detail: format!("unknown attribute {name}"),
                    })?;
                if !kind.accepts(value) {
                    return Err(StorageError::SchemaMismatch {
                        table: req.table.clone(),
                        detail: format!("wrong kind for attribute {name}"),
                    });
                }
            }
        }

        self.next_ts += 1;
        let ts = LogicalTimestamp::new(self.next_ts, site, now);
        match req.kind {
            WriteKind::Upsert => {
                let mut tuple = Tuple::new(req.key.clone(), ts.clone());
                tuple.attributes = req.attributes.clone();
                table.rows.insert(req.key.clone(), tuple);
            }
            WriteKind::Delete => {
                table.rows.remove(&req.key);
            }
        }
        self.log.push(WriteOp {
            table: req.table,
            kind: req.kind,
            key: req.key,
            attributes: req.attributes,
            ts: ts.clone(),
        });
        Ok(ts)
    }

    /// All live rows of a table, in key order.
    pub fn scan(&self, table: &str) -> Result<Vec<Tuple>, StorageError> {
        let t = self
            .tables
            .get(table)
            .ok_or_else(|| StorageError::UnknownTable(table.into()))?;
        Ok(t.rows.values().cloned().collect())
    }

    /// Table state as of a commit timestamp, reconstructed from the log.
    pub fn scan_as_of(&self, table: &str, as_of: u64) -> Result<Vec<Tuple>, StorageError> {
        if !self.tables.contains_key(table) {
            return Err(StorageError::UnknownTable(table.into()));
        }
        let mut rows: BTreeMap<String, Tuple> = BTreeMap::new();
        for op in self.log.iter().filter(|op| op.ts.value <= as_of) {
            if op.table != table {
                continue;
            }
            match op.kind {
                WriteKind::Upsert => {
                    let mut tuple = Tuple::new(op.key.clone(), op.ts.clone());
                    tuple.attributes = op.attributes.clone();
                    rows.insert(op.key.clone(), tuple);
                }
                WriteKind::Delete => {
                    rows.remove(&op.key);
                }
            }
        }
        Ok(rows.into_values().collect())
    }

    /// Largest commit timestamp with wall time at or before `t`.
    pub fn max_ts_at_wall(&self, t: SimTime) -> u64 {
        self.log
            .iter()
            .rev()
            .find(|op| op.ts.wall <= t)
            .map(|op| op.ts.value)
            .unwrap_or(0)
    }

    pub fn max_ts(&self) -> u64 {
        self.next_ts
    }

    pub fn log(&self) -> &[WriteOp] {
        &self.log
    }

    /// Committed ops for one table with ts strictly greater than `since`.
    pub fn log_after(&self, table: &str, since: u64) -> Vec<WriteOp> {
        self.log
            .iter()
            .filter(|op| op.table == table && op.ts.value > since)
            .cloned()
            .collect()
    }
}

/// The ad-catalog schema served by every experiment in this crate.
pub fn ad_catalog_tables() -> Vec<TableDef> {
    vec![
        TableDef::new("Ads", "ad_id", vec![("tags".into(), ValueKind::Tags)]),
        TableDef::new("Prices", "ad_id", vec![("price".into(), ValueKind::Price)]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn store() -> Store {
        let mut s = Store::new("dc");
        for def in ad_catalog_tables() {
            s.create_table(def).unwrap();
        }
        s
    }

    fn price(v: i64) -> Vec<(&'static str, AttributeValue)> {
        vec![("price", AttributeValue::Price(v))]
    }

    #[test]
    fn duplicate_table_is_rejected() {
        let mut s = store();
        let err = s
            .create_table(TableDef::new("Ads", "ad_id", vec![]))
            .unwrap_err();
        assert_eq!(err, StorageError::DuplicateTable("Ads".into()));
    }

    #[test]
    fn last_writer_wins_and_ts_increases() {
        let mut s = store();
        let t1 = s
            .write(
                WriteRequest::upsert("Prices", "a2", price(50)),
                SimTime::ZERO,
            )
            .unwrap();
        let t2 = s
            .write(
                WriteRequest::upsert("Prices", "a2", price(55)),
                SimTime::from_ms(1.0),
            )
            .unwrap();
        assert!(t2.value > t1.value);
        let rows = s.scan("Prices").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].price(), Some(55));
    }

    #[test]
    fn delete_of_absent_key_is_accepted_and_logged() {
        let mut s = store();
        s.write(WriteRequest::delete("Ads", "a9"), SimTime::ZERO)
            .unwrap();
        assert_eq!(s.log().len(), 1);
        assert_eq!(s.log()[0].kind, WriteKind::Delete);
    }

    #[test]
    fn changelog_grows_one_entry_per_write() {
        let mut s = store();
        for i in 0..3 {
            s.write(
                WriteRequest::upsert("Prices", &format!("a{i}"), price(i)),
                SimTime::ZERO,
            )
            .unwrap();
        }
        assert_eq!(s.log().len(), 3);
        let values: Vec<u64> = s.log().iter().map(|op| op.ts.value).collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn scan_empty_table_is_empty() {
        let s = store();
        assert!(s.scan("Ads").unwrap().is_empty());
        assert!(matches!(s.scan("Nope"), Err(StorageError::UnknownTable(_))));
    }

    #[test]
    fn as_of_scan_reconstructs_old_state() {
        let mut s = store();
        let before = s
            .write(
                WriteRequest::upsert("Prices", "a1", price(10)),
                SimTime::ZERO,
            )
            .unwrap();
        s.write(
            WriteRequest::upsert("Prices", "a1", price(99)),
            SimTime::from_ms(2.0),
        )
        .unwrap();
        let old = s.scan_as_of("Prices", before.value).unwrap();
        assert_eq!(old[0].price(), Some(10));
        let new = s.scan("Prices").unwrap();
        assert_eq!(new[0].price(), Some(99));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let mut s = store();
        let err = s
            .write(
                WriteRequest::upsert("Ads", "a1", vec![("bogus", AttributeValue::Int(1))]),
                SimTime::ZERO,
            )
            .unwrap_err();
        assert!(matches!(err, StorageError::SchemaMismatch { .. }));
        let err = s
            .write(
                WriteRequest::upsert("Ads", "a1", vec![("tags", AttributeValue::Int(1))]),
                SimTime::ZERO,
            )
            .unwrap_err();
        assert!(matches!(err, StorageError::SchemaMismatch { .. }));
    }

    #[test]
    fn row_state_equals_fold_of_log() {
        let mut s = store();
        let writes = [
            WriteRequest::upsert(
                "Ads",
                "a1",
                vec![(
                    "tags",
                    AttributeValue::Tags(BTreeSet::from(["x".to_string()])),
                )],
            ),
            WriteRequest::upsert("Prices", "a1", price(10)),
            WriteRequest::delete("Ads", "a1"),
            WriteRequest::upsert("Prices", "a1", price(20)),
        ];
        for (i, w) in writes.into_iter().enumerate() {
            s.write(w, SimTime::from_ms(i as f64)).unwrap();
        }
        // fold: as-of max ts must equal live scan
        for table in ["Ads", "Prices"] {
            assert_eq!(
                s.scan(table).unwrap(),
                s.scan_as_of(table, s.max_ts()).unwrap()
            );
        }
    }
}
