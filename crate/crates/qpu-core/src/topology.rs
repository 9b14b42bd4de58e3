//! Declarative graph documents: parse, validate, deploy.
//!
//! A topology is a single JSON document with `network`, `qpus`, and
//! `roots` sections (see the format reference in the repository README).
//! Validation derives each unit's capability bottom-up from its class and
//! its children's capabilities, checks the DAG shape, and returns all
//! problems as data; deployment instantiates the graph on a simulator in
//! child-first order so build-time subscriptions find their targets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::classes::{
    CacheConfig, CacheUnit, DataStoreDriver, DsdConfig, FilterConfig, FilterUnit, IndexConfig,
    IndexUnit, JoinConfig, JoinUnit, TopKConfig, TopKUnit, UnitClass,
};
use crate::query::Capability;
use crate::runtime::{Sim, SimError};
use crate::simnet::{NetworkModel, SimTime, SiteKind};
use crate::storage::{ad_catalog_tables, TableDef};
use crate::unit::{ChildRef, QpuRef, UnitBehavior, UnitId};

pub const FORMAT_VERSION: u32 = 1;

// ---- document shape --------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub network: NetworkSection,
    pub qpus: Vec<QpuSection>,
    pub roots: Vec<String>,
    /// Base tables; defaults to the ad catalog (Ads, Prices).
    #[serde(default)]
    pub tables: Option<Vec<TableDef>>,
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSection {
    pub sites: Vec<SiteSpec>,
    /// Defaults to the first data-center site.
    #[serde(default)]
    pub storage_site: Option<String>,
    #[serde(default)]
    pub intra_site_ms: Option<f64>,
    #[serde(default)]
    pub cross_site_ms: Option<f64>,
    #[serde(default)]
    pub latency_ms: Vec<PairEntry>,
    #[serde(default)]
    pub intra_cost_per_byte: Option<f64>,
    #[serde(default)]
    pub cross_cost_per_byte: Option<f64>,
    #[serde(default)]
    pub per_byte_cost: Vec<PairEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteSpec {
    pub name: String,
    pub kind: SiteKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub from: String,
    pub to: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpuSection {
    pub id: String,
    pub class: UnitClass,
    pub site: String,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub children: Vec<String>,
}

// ---- parsed spec -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum UnitConfig {
    Dsd(DsdConfig),
    Index(IndexConfig),
    Join(JoinConfig),
    Topk(TopKConfig),
    Cache(CacheConfig),
    Filter(FilterConfig),
}

impl UnitConfig {
    pub fn class(&self) -> UnitClass {
        match self {
            UnitConfig::Dsd(_) => UnitClass::Dsd,
            UnitConfig::Index(_) => UnitClass::Index,
            UnitConfig::Join(_) => UnitClass::Join,
            UnitConfig::Topk(_) => UnitClass::Topk,
            UnitConfig::Cache(_) => UnitClass::Cache,
            UnitConfig::Filter(_) => UnitClass::Filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    pub id: UnitId,
    pub site: String,
    pub config: UnitConfig,
    pub children: Vec<UnitId>,
}

#[derive(Debug, Clone)]
pub struct TopologySpec {
    pub network: NetworkSection,
    pub units: Vec<UnitSpec>,
    pub roots: Vec<UnitId>,
    pub tables: Vec<TableDef>,
}

impl TopologySpec {
    pub fn unit(&self, id: &UnitId) -> Option<&UnitSpec> {
        self.units.iter().find(|u| &u.id == id)
    }

    pub fn unit_mut(&mut self, id: &UnitId) -> Option<&mut UnitSpec> {
        self.units.iter_mut().find(|u| &u.id == id)
    }

    /// Override every cache ttl (used by cold-cache experiment variants).
    pub fn set_cache_ttl_ms(&mut self, ttl_ms: f64) {
        for unit in &mut self.units {
            if let UnitConfig::Cache(cfg) = &mut unit.config {
                cfg.ttl_ms = ttl_ms;
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("topology failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Parse a topology document, filling class-config defaults.
pub fn parse_topology(text: &str) -> Result<TopologySpec, TopologyError> {
    let file: TopologyFile = serde_json::from_str(text).map_err(|e| TopologyError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec_from_file(file)
}

pub fn spec_from_file(file: TopologyFile) -> Result<TopologySpec, TopologyError> {
    let mut units = Vec::new();
    for q in &file.qpus {
        let config = parse_config(q).map_err(|message| TopologyError::Parse {
            line: 0,
            column: 0,
            message,
        })?;
        units.push(UnitSpec {
            id: UnitId(q.id.clone()),
            site: q.site.clone(),
            config,
            children: q.children.iter().map(|c| UnitId(c.clone())).collect(),
        });
    }
    Ok(TopologySpec {
        network: file.network,
        units,
        roots: file.roots.into_iter().map(UnitId).collect(),
        tables: file.tables.unwrap_or_else(ad_catalog_tables),
    })
}

fn parse_config(q: &QpuSection) -> Result<UnitConfig, String> {
    let wrap = |e: serde_json::Error| format!("unit {}: bad {} config: {e}", q.id, q.class);
    Ok(match q.class {
        UnitClass::Dsd => UnitConfig::Dsd(serde_json::from_value(q.config.clone()).map_err(wrap)?),
        UnitClass::Index => {
            UnitConfig::Index(serde_json::from_value(q.config.clone()).map_err(wrap)?)
        }
        UnitClass::Join => UnitConfig::Join(from_value_or_default(q.config.clone()).map_err(wrap)?),
        UnitClass::Topk => UnitConfig::Topk(from_value_or_default(q.config.clone()).map_err(wrap)?),
        UnitClass::Cache => {
            UnitConfig::Cache(from_value_or_default(q.config.clone()).map_err(wrap)?)
        }
        UnitClass::Filter => {
            UnitConfig::Filter(from_value_or_default(q.config.clone()).map_err(wrap)?)
        }
    })
}

fn from_value_or_default<T: for<'de> Deserialize<'de> + Default>(
    value: serde_json::Value,
) -> Result<T, serde_json::Error> {
    if value.is_null() {
        Ok(T::default())
    } else {
        serde_json::from_value(value)
    }
}

// ---- validation ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    DuplicateId,
    UnknownSite,
    UnknownChild,
    Cycle,
    Arity,
    Config,
    Capability,
    Root,
    Network,
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ErrorCode::DuplicateId => "ERR_DUPLICATE_ID",
            ErrorCode::UnknownSite => "ERR_SITE",
            ErrorCode::UnknownChild => "ERR_UNKNOWN_CHILD",
            ErrorCode::Cycle => "ERR_CYCLE",
            ErrorCode::Arity => "ERR_ARITY",
            ErrorCode::Config => "ERR_CONFIG",
            ErrorCode::Capability => "ERR_CAPABILITY",
            ErrorCode::Root => "ERR_ROOT",
            ErrorCode::Network => "ERR_NETWORK",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationError {
    pub code: ErrorCode,
    pub unit: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
    /// Derived capability per unit, bottom-up.
    pub capabilities: BTreeMap<String, Capability>,
}

impl ValidationReport {
    pub fn is_deployable(&self) -> bool {
        self.errors.is_empty()
    }

    fn push(&mut self, code: ErrorCode, unit: Option<&UnitId>, message: impl Into<String>) {
        self.errors.push(ValidationError {
            code,
            unit: unit.map(|u| u.0.clone()),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.errors.is_empty() {
            writeln!(f, "topology OK ({} units)", self.capabilities.len())?;
            return Ok(());
        }
        for e in &self.errors {
            match &e.unit {
                Some(u) => writeln!(f, "{} [{}]: {}", e.code, u, e.message)?,
                None => writeln!(f, "{}: {}", e.code, e.message)?,
            }
        }
        Ok(())
    }
}

/// Build the network model from the document section.
pub fn build_network(section: &NetworkSection) -> Result<NetworkModel, String> {
    let sites: Vec<(String, SiteKind)> = section
        .sites
        .iter()
        .map(|s| (s.name.clone(), s.kind))
        .collect();
    let mut net = NetworkModel::new(sites)
        .map_err(|e| e.to_string())?
        .with_default_latencies(
            section
                .intra_site_ms
                .unwrap_or(crate::simnet::DEFAULT_INTRA_SITE_MS),
            section
                .cross_site_ms
                .unwrap_or(crate::simnet::DEFAULT_CROSS_SITE_MS),
        )
        .with_default_costs(
            section
                .intra_cost_per_byte
                .unwrap_or(crate::simnet::DEFAULT_INTRA_COST_PER_BYTE),
            section
                .cross_cost_per_byte
                .unwrap_or(crate::simnet::DEFAULT_CROSS_COST_PER_BYTE),
        );
    for entry in &section.latency_ms {
        net.set_latency(&entry.from, &entry.to, entry.value)
            .map_err(|e| e.to_string())?;
    }
    for entry in &section.per_byte_cost {
        net.set_cost(&entry.from, &entry.to, entry.value)
            .map_err(|e| e.to_string())?;
    }
    net.validate().map_err(|e| e.to_string())?;
    Ok(net)
}

pub fn storage_site(section: &NetworkSection) -> Option<String> {
    section.storage_site.clone().or_else(|| {
        section
            .sites
            .iter()
            .find(|s| s.kind == SiteKind::DataCenter)
            .map(|s| s.name.clone())
    })
}

/// Check the whole document; all problems come back as report entries.
pub fn validate(spec: &TopologySpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    match build_network(&spec.network) {
        Ok(_) => {}
        Err(msg) => report.push(ErrorCode::Network, None, msg),
    }
    let site_names: BTreeSet<&str> = spec.network.sites.iter().map(|s| s.name.as_str()).collect();
    match storage_site(&spec.network) {
        Some(site) if site_names.contains(site.as_str()) => {}
        Some(site) => report.push(
            ErrorCode::Network,
            None,
            format!("storage site {site} is not a declared site"),
        ),
        None => report.push(
            ErrorCode::Network,
            None,
            "no storage site: declare one or add a data_center site",
        ),
    }

    let mut ids = BTreeSet::new();
    for unit in &spec.units {
        if !ids.insert(unit.id.clone()) {
            report.push(ErrorCode::DuplicateId, Some(&unit.id), "duplicate unit id");
        }
        if !site_names.contains(unit.site.as_str()) {
            report.push(
                ErrorCode::UnknownSite,
                Some(&unit.id),
                format!("unknown site {}", unit.site),
            );
        }
        for child in &unit.children {
            if !spec.units.iter().any(|u| &u.id == child) {
                report.push(
                    ErrorCode::UnknownChild,
                    Some(&unit.id),
                    format!("unknown child {child}"),
                );
            }
        }
        let arity_ok = match unit.config.class() {
            UnitClass::Dsd => unit.children.is_empty(),
            UnitClass::Join => unit.children.len() == 2,
            UnitClass::Index => !unit.children.is_empty(),
            UnitClass::Topk | UnitClass::Cache | UnitClass::Filter => unit.children.len() == 1,
        };
        if !arity_ok {
            report.push(
                ErrorCode::Arity,
                Some(&unit.id),
                format!(
                    "class {} cannot take {} children",
                    unit.config.class(),
                    unit.children.len()
                ),
            );
        }
    }

    // topological order over the child relation, children first
    let order = match topo_order(spec) {
        Ok(order) => order,
        Err(cycle_members) => {
            report.push(
                ErrorCode::Cycle,
                None,
                format!(
                    "child relation has a cycle through: {}",
                    cycle_members
                        .iter()
                        .map(|u| u.0.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            );
            Vec::new()
        }
    };

    // bottom-up capability and key-attribute derivation
    let tables: BTreeMap<&str, &TableDef> =
        spec.tables.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut caps: BTreeMap<UnitId, Capability> = BTreeMap::new();
    let mut keys: BTreeMap<UnitId, String> = BTreeMap::new();
    for id in &order {
        let unit = spec.unit(id).expect("ordered unit exists");
        derive_capability(unit, &tables, &mut caps, &mut keys, &mut report);
    }
    for (id, cap) in &caps {
        report.capabilities.insert(id.0.clone(), cap.clone());
    }

    if spec.roots.is_empty() {
        report.push(ErrorCode::Root, None, "no roots declared");
    }
    for root in &spec.roots {
        if spec.unit(root).is_none() {
            report.push(ErrorCode::Root, Some(root), "root is not a declared unit");
        } else if !reaches_driver(spec, root) {
            report.push(
                ErrorCode::Root,
                Some(root),
                "root does not reach a data-store driver",
            );
        }
    }

    report
}

fn derive_capability(
    unit: &UnitSpec,
    tables: &BTreeMap<&str, &TableDef>,
    caps: &mut BTreeMap<UnitId, Capability>,
    keys: &mut BTreeMap<UnitId, String>,
    report: &mut ValidationReport,
) {
    let child_caps: Option<Vec<(&UnitId, Capability)>> = unit
        .children
        .iter()
        .map(|c| caps.get(c).cloned().map(|cap| (c, cap)))
        .collect();
    let child_caps = match child_caps {
        Some(c) => c,
        None => return, // child failed earlier; its error is already reported
    };

    match &unit.config {
        UnitConfig::Dsd(cfg) => match tables.get(cfg.table.as_str()) {
            Some(def) => {
                let attrs: Vec<&str> = def.attributes.iter().map(|(n, _)| n.as_str()).collect();
                caps.insert(
                    unit.id.clone(),
                    Capability::new(&cfg.table)
                        .with_attributes(attrs)
                        .subscribe(true),
                );
                keys.insert(unit.id.clone(), def.key_attribute.clone());
            }
            None => report.push(
                ErrorCode::Config,
                Some(&unit.id),
                format!("driver table {} is not declared", cfg.table),
            ),
        },
        UnitConfig::Index(cfg) => {
            let mut ok = true;
            for (child, cap) in &child_caps {
                if cap.table != cfg.table {
                    report.push(
                        ErrorCode::Capability,
                        Some(&unit.id),
                        format!("child {child} serves {}, not {}", cap.table, cfg.table),
                    );
                    ok = false;
                }
                if !cap.supports_subscribe {
                    report.push(
                        ErrorCode::Capability,
                        Some(&unit.id),
                        format!("child {child} does not support subscriptions"),
                    );
                    ok = false;
                }
                if !cap.indexed_attributes.contains(&cfg.attribute) {
                    report.push(
                        ErrorCode::Capability,
                        Some(&unit.id),
                        format!("child {child} does not expose attribute {}", cfg.attribute),
                    );
                    ok = false;
                }
            }
            if ok && !child_caps.is_empty() {
                caps.insert(
                    unit.id.clone(),
                    Capability::new(&cfg.table)
                        .with_attributes([cfg.attribute.as_str()])
                        .subscribe(true),
                );
                if let Some((child, _)) = child_caps.first() {
                    if let Some(k) = keys.get(child) {
                        keys.insert(unit.id.clone(), k.clone());
                    }
                }
            }
        }
        UnitConfig::Join(cfg) => {
            if child_caps.len() != 2 {
                return; // arity error already reported
            }
            let mut ok = true;
            for (child, cap) in &child_caps {
                if !cap.supports_subscribe {
                    report.push(
                        ErrorCode::Capability,
                        Some(&unit.id),
                        format!("child {child} does not support subscriptions"),
                    );
                    ok = false;
                }
                match keys.get(child) {
                    Some(k) if *k == cfg.key => {}
                    Some(k) => {
                        report.push(
                            ErrorCode::Config,
                            Some(&unit.id),
                            format!("child {child} keys rows by {k}, join expects {}", cfg.key),
                        );
                        ok = false;
                    }
                    None => {}
                }
            }
            if ok {
                let mut indexed = BTreeSet::new();
                for (_, cap) in &child_caps {
                    indexed.extend(cap.indexed_attributes.iter().cloned());
                }
                let mut cap = Capability::new(&child_caps[0].1.table).subscribe(true);
                cap.indexed_attributes = indexed;
                caps.insert(unit.id.clone(), cap);
                keys.insert(unit.id.clone(), cfg.key.clone());
            }
        }
        UnitConfig::Topk(cfg) => {
            let (child, child_cap) = match child_caps.first() {
                Some(c) => c,
                None => return,
            };
            let mut ok = true;
            if cfg.k == 0 {
                report.push(ErrorCode::Config, Some(&unit.id), "k must be at least 1");
                ok = false;
            }
            if !child_cap.indexed_attributes.contains(&cfg.order_attribute) {
                report.push(
                    ErrorCode::Capability,
                    Some(&unit.id),
                    format!(
                        "child {child} does not expose order attribute {}",
                        cfg.order_attribute
                    ),
                );
                ok = false;
            }
            if !child_cap.supports_subscribe {
                report.push(
                    ErrorCode::Capability,
                    Some(&unit.id),
                    format!("child {child} does not support subscriptions"),
                );
                ok = false;
            }
            if ok {
                let mut cap = child_cap.clone();
                cap.supports_order_limit = true;
                cap.supports_subscribe = true;
                caps.insert(unit.id.clone(), cap);
                if let Some(k) = keys.get(child) {
                    keys.insert(unit.id.clone(), k.clone());
                }
            }
        }
        UnitConfig::Cache(cfg) => {
            let (child, child_cap) = match child_caps.first() {
                Some(c) => c,
                None => return,
            };
            if cfg.ttl_ms < 0.0 {
                report.push(ErrorCode::Config, Some(&unit.id), "ttl must be >= 0");
                return;
            }
            if cfg.capacity == 0 {
                report.push(ErrorCode::Config, Some(&unit.id), "capacity must be >= 1");
                return;
            }
            let mut cap = child_cap.clone();
            cap.supports_subscribe = false; // caching subscriptions is meaningless
            caps.insert(unit.id.clone(), cap);
            if let Some(k) = keys.get(child) {
                keys.insert(unit.id.clone(), k.clone());
            }
        }
        UnitConfig::Filter(cfg) => {
            let (child, child_cap) = match child_caps.first() {
                Some(c) => c,
                None => return,
            };
            let mut ok = true;
            for cmp in &cfg.predicate {
                if !child_cap.indexed_attributes.contains(&cmp.attribute) {
                    report.push(
                        ErrorCode::Capability,
                        Some(&unit.id),
                        format!(
                            "predicate attribute {} is not exposed by child {child}",
                            cmp.attribute
                        ),
                    );
                    ok = false;
                }
            }
            if ok {
                let mut cap = child_cap.clone();
                if let Some(projection) = &cfg.projection {
                    let kept: BTreeSet<String> = projection.iter().cloned().collect();
                    cap.indexed_attributes = cap
                        .indexed_attributes
                        .intersection(&kept)
                        .cloned()
                        .collect();
                }
                caps.insert(unit.id.clone(), cap);
                if let Some(k) = keys.get(child) {
                    keys.insert(unit.id.clone(), k.clone());
                }
            }
        }
    }
}

/// Children-first order; `Err` carries the units stuck on a cycle.
fn topo_order(spec: &TopologySpec) -> Result<Vec<UnitId>, Vec<UnitId>> {
    let mut out_degree: BTreeMap<&UnitId, usize> = BTreeMap::new();
    let mut parents: BTreeMap<&UnitId, Vec<&UnitId>> = BTreeMap::new();
    for unit in &spec.units {
        let resolved: Vec<&UnitId> = unit
            .children
            .iter()
            .filter(|c| spec.unit(c).is_some())
            .collect();
        out_degree.insert(&unit.id, resolved.len());
        for child in resolved {
            parents.entry(child).or_default().push(&unit.id);
        }
    }
    let mut ready: VecDeque<&UnitId> = out_degree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::new();
    while let Some(id) = ready.pop_front() {
        order.push(id.clone());
        for parent in parents.get(id).into_iter().flatten() {
            let d = out_degree.get_mut(parent).expect("parent tracked");
            *d -= 1;
            if *d == 0 {
                ready.push_back(parent);
            }
        }
    }
    if order.len() == spec.units.len() {
        Ok(order)
    } else {
        let stuck: Vec<UnitId> = out_degree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(id, _)| id.clone())
            .collect();
        Err(stuck)
    }
}

fn reaches_driver(spec: &TopologySpec, root: &UnitId) -> bool {
    let mut queue = VecDeque::from([root.clone()]);
    let mut seen = BTreeSet::new();
    while let Some(id) = queue.pop_front() {
        if !seen.insert(id.clone()) {
            continue;
        }
        if let Some(unit) = spec.unit(&id) {
            if unit.config.class() == UnitClass::Dsd {
                return true;
            }
            queue.extend(unit.children.iter().cloned());
        }
    }
    false
}

// ---- deployment ------------------------------------------------------------

/// Handle over a deployed graph.
#[derive(Debug, Clone)]
pub struct GraphHandle {
    pub roots: Vec<QpuRef>,
    /// The stateful unit nearest the roots; propagation lag is measured
    /// where it applies deltas.
    pub view_unit: Option<UnitId>,
}

/// Build a fresh simulator world for a spec: network model plus empty
/// base tables. Seed data loads happen between this and [`deploy`].
pub fn build_sim(spec: &TopologySpec) -> Result<Sim, TopologyError> {
    let report = validate(spec);
    if !report.is_deployable() {
        return Err(TopologyError::Invalid(report));
    }
    let net = build_network(&spec.network).expect("validated network");
    let site = storage_site(&spec.network).expect("validated storage site");
    let mut sim = Sim::new(net, &site)?;
    for def in &spec.tables {
        sim.store_mut()
            .create_table(def.clone())
            .map_err(SimError::from)?;
    }
    Ok(sim)
}

/// Instantiate every unit child-first; stateful classes open their build
/// subscriptions immediately. Run the simulator until [`Sim::all_built`]
/// before issuing queries that should see complete state.
pub fn deploy(sim: &mut Sim, spec: &TopologySpec) -> Result<GraphHandle, TopologyError> {
    let report = validate(spec);
    if !report.is_deployable() {
        return Err(TopologyError::Invalid(report));
    }
    let order = topo_order(spec).expect("validated spec is acyclic");
    for id in &order {
        let unit = spec.unit(id).expect("ordered unit exists");
        let capability = report.capabilities[id.as_str()].clone();
        let children: Vec<ChildRef> = unit
            .children
            .iter()
            .map(|c| ChildRef {
                id: c.clone(),
                capability: report.capabilities[c.as_str()].clone(),
            })
            .collect();
        let behavior = build_behavior(&unit.config);
        sim.deploy_unit(
            id.clone(),
            &unit.site,
            capability,
            children,
            unit.config.class() == UnitClass::Dsd,
            spec.roots.contains(id),
            behavior,
        )?;
    }
    let roots = spec
        .roots
        .iter()
        .filter_map(|r| sim.unit_ref(r))
        .collect::<Vec<_>>();
    let view_unit = find_view_unit(spec);
    if let Some(view) = &view_unit {
        sim.set_lag_view(view.clone());
    }
    Ok(GraphHandle { roots, view_unit })
}

fn build_behavior(config: &UnitConfig) -> Box<dyn UnitBehavior> {
    match config {
        UnitConfig::Dsd(cfg) => Box::new(DataStoreDriver::new(&cfg.table)),
        UnitConfig::Index(cfg) => Box::new(IndexUnit::new(&cfg.table)),
        UnitConfig::Join(_) => Box::new(JoinUnit::new()),
        UnitConfig::Topk(cfg) => Box::new(TopKUnit::new(cfg.k, &cfg.order_attribute)),
        UnitConfig::Cache(cfg) => Box::new(CacheUnit::new(
            SimTime::from_ms(cfg.ttl_ms),
            cfg.capacity as usize,
        )),
        UnitConfig::Filter(cfg) => Box::new(FilterUnit::new(
            cfg.predicate.clone(),
            cfg.projection.clone(),
        )),
    }
}

/// Breadth-first from the roots: the first index/join/topk unit is where
/// freshness is observed.
fn find_view_unit(spec: &TopologySpec) -> Option<UnitId> {
    let mut queue: VecDeque<UnitId> = spec.roots.iter().cloned().collect();
    let mut seen = BTreeSet::new();
    while let Some(id) = queue.pop_front() {
        if !seen.insert(id.clone()) {
            continue;
        }
        if let Some(unit) = spec.unit(&id) {
            match unit.config.class() {
                UnitClass::Topk | UnitClass::Join | UnitClass::Index => return Some(id),
                _ => queue.extend(unit.children.iter().cloned()),
            }
        }
    }
    None
}
