//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)] // each suite uses its own subset

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use qpu_core::classes::view_from_rows;
use qpu_core::record::Tuple;
use qpu_core::runtime::Sim;
use qpu_core::simnet::SimTime;
use qpu_core::topology::{build_sim, deploy, parse_topology, GraphHandle, TopologySpec};
use qpu_core::unit::StateView;
use qpu_core::workload::{generate, row_writes, ScheduledOp, WorkloadSpec};
use qpu_core::UnitId;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load_topology(name: &str) -> TopologySpec {
    let text = std::fs::read_to_string(config_path(name)).expect("config file readable");
    parse_topology(&text).expect("config file parses")
}

/// Deploy a topology, run a full workload schedule through it, and drain.
/// Asserts the stream checker observed nothing across the run.
pub fn run_workload(spec: &TopologySpec, workload: &WorkloadSpec) -> (Sim, GraphHandle) {
    let schedule = generate(workload);
    let mut sim = build_sim(spec).expect("spec deployable");
    for (key, tags, price) in &schedule.initial_rows {
        for w in row_writes(key, tags, *price) {
            sim.seed_write(w).unwrap();
        }
    }
    let handle = deploy(&mut sim, spec).expect("deploys");
    let outcome = sim
        .run_until_quiescent(SimTime::from_ms(600_000.0))
        .unwrap();
    assert!(outcome.quiescent, "build phase exceeded the horizon");

    let client = sim.add_client(&workload.client_site).unwrap();
    let advertiser = sim.add_client(&workload.advertiser_site).unwrap();
    let root = handle.roots[0].id.clone();
    let start = sim.now();
    for event in &schedule.events {
        match &event.op {
            ScheduledOp::Query(q) => {
                sim.schedule_query(start + event.at, client, root.clone(), q.clone())
            }
            ScheduledOp::Write(w) => sim.schedule_write(start + event.at, advertiser, w.clone()),
        }
    }
    let outcome = sim
        .run_until_quiescent(SimTime::from_ms(600_000.0))
        .unwrap();
    assert!(outcome.quiescent, "workload phase exceeded the horizon");
    assert_eq!(sim.protocol_violations(), 0, "stream grammar violated");
    (sim, handle)
}

/// Recompute every stateful unit from the final base tables and compare.
pub fn assert_converged(sim: &Sim) {
    let ads: BTreeMap<String, Tuple> = sim
        .store()
        .scan("Ads")
        .unwrap()
        .into_iter()
        .map(|t| (t.key.clone(), t))
        .collect();
    let prices: BTreeMap<String, Tuple> = sim
        .store()
        .scan("Prices")
        .unwrap()
        .into_iter()
        .map(|t| (t.key.clone(), t))
        .collect();

    let mut joined: BTreeMap<String, Tuple> = BTreeMap::new();
    for (key, ad) in &ads {
        if let Some(price) = prices.get(key) {
            let ts = if ad.ts.value >= price.ts.value {
                ad.ts.clone()
            } else {
                price.ts.clone()
            };
            let mut tuple = Tuple::new(key.clone(), ts);
            tuple.attributes = ad.attributes.clone();
            for (name, value) in &price.attributes {
                tuple.attributes.insert(name.clone(), value.clone());
            }
            joined.insert(key.clone(), tuple);
        }
    }
    let joined_rows: Vec<(String, BTreeSet<String>, i64)> = joined
        .values()
        .map(|t| {
            (
                t.key.clone(),
                t.tags().cloned().unwrap_or_default(),
                t.price().unwrap(),
            )
        })
        .collect();

    let ids: Vec<UnitId> = sim.unit_ids().cloned().collect();
    for id in ids {
        match sim.unit_state(&id).unwrap() {
            StateView::Stateless | StateView::Cache { .. } => {}
            StateView::Index { by_tag, rows } => {
                let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
                for (key, ad) in &ads {
                    for tag in ad.tags().unwrap() {
                        expected.entry(tag.clone()).or_default().insert(key.clone());
                    }
                }
                assert_eq!(by_tag, expected, "index tag map diverged at {id}");
                assert_eq!(rows, ads, "index rows diverged at {id}");
            }
            StateView::Join {
                left,
                right,
                output,
            } => {
                assert_eq!(left, ads, "join left side diverged at {id}");
                assert_eq!(right, prices, "join right side diverged at {id}");
                assert_eq!(output, joined, "join output diverged at {id}");
            }
            StateView::TopK { k, per_tag, rows } => {
                let expected = view_from_rows(k, &joined_rows).to_state_view();
                match expected {
                    StateView::TopK {
                        per_tag: expected_per_tag,
                        ..
                    } => {
                        assert_eq!(
                            per_tag, expected_per_tag,
                            "ordered structures diverged at {id}"
                        );
                    }
                    _ => unreachable!(),
                }
                assert_eq!(
                    rows.keys().collect::<Vec<_>>(),
                    joined.keys().collect::<Vec<_>>(),
                    "view rows diverged at {id}"
                );
                for (key, tuple) in &rows {
                    assert_eq!(tuple.price(), joined[key].price());
                    assert_eq!(tuple.tags(), joined[key].tags());
                }
            }
        }
    }
}
