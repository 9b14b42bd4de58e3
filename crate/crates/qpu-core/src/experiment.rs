//! End-to-end experiment execution: deploy a topology, drive a generated
//! workload through it, and measure latency, freshness, and traffic.

use std::collections::BTreeMap;

use crate::metrics::{mean, percentile, MetricsReport};
use crate::oracle::{oracle_eval, BaseSnapshot};
use crate::query::Query;
use crate::runtime::{Sim, SimError};
use crate::simnet::SimTime;
use crate::topology::{build_sim, deploy, TopologyError, TopologySpec};
use crate::unit::{StateView, UnitId};
use crate::workload::{generate, row_writes, ScheduledOp, WorkloadSpec};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("simulation horizon of {limit_ms} ms exceeded")]
    LimitExceeded { limit_ms: f64 },
    #[error("workload site {0} is not part of the topology network")]
    UnknownWorkloadSite(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Virtual-time horizon; the run fails if events remain beyond it.
    pub limit_ms: f64,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            limit_ms: 600_000.0,
            trace: false,
        }
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    /// One line per processed event when tracing was requested.
    pub trace: Option<String>,
}

/// Execute one workload against one topology and aggregate the report.
///
/// Staleness is judged per query: the response is compared to the oracle
/// evaluated on the base snapshot at issue time; any difference in content
/// or order counts the query as stale.
pub fn run_experiment(
    topology_name: &str,
    spec: &TopologySpec,
    workload: &WorkloadSpec,
    options: &RunOptions,
) -> Result<RunArtifacts, ExperimentError> {
    let limit = SimTime::from_ms(options.limit_ms);
    let schedule = generate(workload);

    let mut sim = build_sim(spec)?;
    if options.trace {
        sim.enable_trace();
    }
    for site in [&workload.client_site, &workload.advertiser_site] {
        if !sim.net().has_site(site) {
            return Err(ExperimentError::UnknownWorkloadSite(site.clone()));
        }
    }
    for (key, tags, price) in &schedule.initial_rows {
        for w in row_writes(key, tags, *price) {
            sim.seed_write(w)?;
        }
    }
    let handle = deploy(&mut sim, spec)?;
    let outcome = sim.run_until_quiescent(limit)?;
    if !outcome.quiescent {
        return Err(ExperimentError::LimitExceeded {
            limit_ms: options.limit_ms,
        });
    }

    let client = sim.add_client(&workload.client_site)?;
    let advertiser = sim.add_client(&workload.advertiser_site)?;
    let root = handle
        .roots
        .first()
        .expect("validated topology has a root")
        .id
        .clone();
    let start = sim.now();
    for event in &schedule.events {
        let at = start + event.at;
        match &event.op {
            ScheduledOp::Query(q) => sim.schedule_query(at, client, root.clone(), q.clone()),
            ScheduledOp::Write(w) => sim.schedule_write(at, advertiser, w.clone()),
        }
    }
    let outcome = sim.run_until_quiescent(limit)?;
    if !outcome.quiescent {
        return Err(ExperimentError::LimitExceeded {
            limit_ms: options.limit_ms,
        });
    }

    let report = aggregate(
        topology_name,
        &sim,
        workload,
        &schedule.query_count(),
        client,
    );
    let trace = options.trace.then(|| {
        let mut out = String::new();
        for line in sim.trace() {
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    });
    Ok(RunArtifacts { report, trace })
}

fn aggregate(
    topology_name: &str,
    sim: &Sim,
    workload: &WorkloadSpec,
    queries_issued: &usize,
    client: crate::unit::ClientId,
) -> MetricsReport {
    let mut latencies = Vec::new();
    let mut completed = 0u64;
    let mut stale = 0u64;
    for (_, probe) in sim.client_probes(client) {
        let done = match probe.completed_at {
            Some(t) => t,
            None => continue,
        };
        completed += 1;
        latencies.push((done.micros() - probe.issued_at.micros()) as f64 / 1000.0);
        let snapshot = BaseSnapshot::from_store_at_wall(sim.store(), probe.issued_at);
        let expected = oracle_eval(&snapshot, &probe.query);
        if probe.ranked_result() != expected {
            stale += 1;
        }
    }
    let lags: Vec<f64> = sim.lag_samples().map(|s| s.lag().as_ms()).collect();

    let mut cross_bytes: BTreeMap<String, u64> = BTreeMap::new();
    let mut cross_total = 0u64;
    for ((from, to), pair) in sim.meter().pairs() {
        if from != to {
            cross_bytes.insert(format!("{from}->{to}"), pair.bytes);
            cross_total += pair.bytes;
        }
    }

    let mut hits = 0u64;
    let mut misses = 0u64;
    let mut has_cache = false;
    for id in sim.unit_ids() {
        if let Some(StateView::Cache {
            hits: h, misses: m, ..
        }) = sim.unit_state(id)
        {
            has_cache = true;
            hits += h;
            misses += m;
        }
    }
    let cache_hit_rate = if has_cache && hits + misses > 0 {
        Some(hits as f64 / (hits + misses) as f64)
    } else if has_cache {
        Some(0.0)
    } else {
        None
    };

    MetricsReport {
        topology: topology_name.to_string(),
        seed: workload.seed,
        query_rate_per_s: workload.query_rate_per_s,
        update_rate_per_s: workload.update_rate_per_s,
        queries_issued: *queries_issued as u64,
        queries_completed: completed,
        latency_p50_ms: percentile(&latencies, 50.0),
        latency_p95_ms: percentile(&latencies, 95.0),
        latency_max_ms: percentile(&latencies, 100.0),
        lag_mean_ms: mean(&lags),
        lag_p95_ms: percentile(&lags, 95.0),
        lag_samples: lags.len() as u64,
        stale_result_fraction: if completed > 0 {
            stale as f64 / completed as f64
        } else {
            0.0
        },
        cross_site_bytes: cross_bytes,
        total_cross_site_bytes: cross_total,
        total_bytes: sim.meter().total_bytes(),
        total_cost: sim.meter().total_cost(sim.net()),
        cache_hit_rate,
        final_virtual_ms: sim.now().as_ms(),
        events_processed: sim.events_processed(),
        protocol_violations: sim.protocol_violations(),
    }
}

/// Let the world settle, wait out cache ttls, then issue probe queries
/// against a root and collect their ranked answers.
pub fn drain_and_probe(
    sim: &mut Sim,
    root: &UnitId,
    queries: &[Query],
    settle: SimTime,
    limit: SimTime,
) -> Result<Vec<Vec<(String, i64)>>, ExperimentError> {
    let outcome = sim.run_until_quiescent(limit)?;
    if !outcome.quiescent {
        return Err(ExperimentError::LimitExceeded {
            limit_ms: limit.as_ms(),
        });
    }
    sim.schedule_noop(sim.now() + settle);
    sim.run_until_quiescent(limit)?;

    let store_site = sim.store().site().to_string();
    let probe_client = sim.add_client(&store_site)?;
    let mut streams = Vec::new();
    for q in queries {
        streams.push(sim.client_open_query(probe_client, root, q.clone())?);
    }
    let outcome = sim.run_until_quiescent(limit)?;
    if !outcome.quiescent {
        return Err(ExperimentError::LimitExceeded {
            limit_ms: limit.as_ms(),
        });
    }
    Ok(streams
        .into_iter()
        .map(|s| sim.probe(s).expect("probe recorded").ranked_result())
        .collect())
}

/// One sweep cell: a (topology, rate pair) run under a shared seed.
#[derive(Debug)]
pub struct SweepCell {
    pub topology: String,
    pub query_rate_per_s: f64,
    pub update_rate_per_s: f64,
    pub report: MetricsReport,
}

/// Run every topology against every rate pair; cells run sequentially and
/// share the template's seed so only the varied parameter differs.
pub fn sweep(
    topologies: &[(String, TopologySpec)],
    template: &WorkloadSpec,
    rate_pairs: &[(f64, f64)],
    options: &RunOptions,
) -> Result<Vec<SweepCell>, ExperimentError> {
    let mut cells = Vec::new();
    for (name, spec) in topologies {
        for (query_rate, update_rate) in rate_pairs {
            let workload = WorkloadSpec {
                query_rate_per_s: *query_rate,
                update_rate_per_s: *update_rate,
                ..template.clone()
            };
            let artifacts = run_experiment(name, spec, &workload, options)?;
            cells.push(SweepCell {
                topology: name.clone(),
                query_rate_per_s: *query_rate,
                update_rate_per_s: *update_rate,
                report: artifacts.report,
            });
        }
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(crate::metrics::CSV_HEADER);
    out.push('\n');
    for cell in cells {
        out.push_str(&cell.report.csv_row());
        out.push('\n');
    }
    out
}
