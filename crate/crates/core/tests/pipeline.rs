//! End-to-end protocol runs on the discrete-event engine: clustering roles,
//! slot convergence, local centers, synchronization error, determinism and
//! power conservation on hand-built topologies.

use std::collections::BTreeMap;

use csync_core::clock::{DriftModel, HardwareClock};
use csync_core::engine::{Engine, EngineConfig, RunReport};
use csync_core::protocol::{CsyncNode, ProtocolConfig};
use csync_core::rng::{self, Stream};
use csync_core::topology::TopologyGraph;
use csync_core::{secs, NodeId, SimNs};

fn fast_cfg() -> ProtocolConfig {
    ProtocolConfig {
        st_interval_us: 1_000_000.0,
        disc_beacon_us: 400_000.0,
        slot_duration_us: 100_000.0,
        idle_slots: 10,
        max_slots: 10,
        max_count: 10,
        ..ProtocolConfig::default()
    }
}

fn build_nodes(
    topo: &TopologyGraph,
    cfg: &ProtocolConfig,
    seed: u64,
    boot_stagger_us: f64,
    drift: bool,
) -> Vec<(NodeId, CsyncNode, HardwareClock, SimNs)> {
    let mut clock_rng = rng::derive(seed, Stream::Clocks);
    topo.nodes()
        .map(|id| {
            let ppm = rng::uniform_range(&mut clock_rng, -40.0, 40.0);
            let factor = rng::uniform_range(&mut clock_rng, 0.9, 1.1);
            let init_us = rng::uniform_range(&mut clock_rng, 0.0, boot_stagger_us.max(1.0));
            let (ppm, factor) = if drift { (ppm, factor) } else { (0.0, 1.0) };
            let hw = HardwareClock::new(ppm, DriftModel::Constant(factor), init_us);
            let node = CsyncNode::new(id, cfg.clone(), seed, hw.reading().comp_us);
            (id, node, hw, 0)
        })
        .collect()
}

fn run_csync(
    topo: &TopologyGraph,
    cfg: &ProtocolConfig,
    seed: u64,
    dur: SimNs,
    drift: bool,
) -> RunReport {
    let nodes = build_nodes(topo, cfg, seed, 100_000.0, drift);
    let engine = Engine::new(topo.clone(), EngineConfig::default(), seed, nodes, Vec::new());
    engine.run_until(dur).expect("run failed")
}

/// CM(1)-CH(102)-CB(3)-CH(104)-CB(5)-CH(106)-CB(7)-CH(108)-CB(9)-CH(110)-CB(11)-CH(112)-CM(13)
fn chain13() -> TopologyGraph {
    let mut t = TopologyGraph::new(30.0);
    let addrs = [1u64, 102, 3, 104, 5, 106, 7, 108, 9, 110, 11, 112, 13];
    for (i, &a) in addrs.iter().enumerate() {
        t.add_node_at(NodeId(a), i as f64 * 20.0, 0.0);
    }
    for w in addrs.windows(2) {
        t.add_link(NodeId(w[0]), NodeId(w[1]));
    }
    t
}

/// Two 4-cliques bridged by one node: 101+CMs{2,4,6}, 102+CMs{12,14,16}, bridge 51.
fn two_cluster() -> TopologyGraph {
    let mut t = TopologyGraph::new(30.0);
    for a in [101u64, 2, 4, 6, 102, 12, 14, 16, 51] {
        t.add_node(NodeId(a));
    }
    for cms in [[2u64, 4, 6], [12, 14, 16]] {
        for &c in &cms {
            for &d in &cms {
                if c < d {
                    t.add_link(NodeId(c), NodeId(d));
                }
            }
        }
    }
    for c in [2u64, 4, 6] {
        t.add_link(NodeId(c), NodeId(101));
    }
    for c in [12u64, 14, 16] {
        t.add_link(NodeId(c), NodeId(102));
    }
    t.add_link(NodeId(51), NodeId(101));
    t.add_link(NodeId(51), NodeId(102));
    t
}

#[test]
fn two_cluster_roles_and_degenerate_twin_centers() {
    let topo = two_cluster();
    let cfg = fast_cfg();
    let report = run_csync(&topo, &cfg, 11, secs(30), false);

    let roles: BTreeMap<u64, &str> =
        report.cluster.iter().map(|(id, r)| (id.0, r.role)).collect();
    assert_eq!(roles[&101], "CH");
    assert_eq!(roles[&102], "CH");
    assert_eq!(roles[&51], "CBH", "sole bridge becomes the bridge head");
    for cm in [2u64, 4, 6, 12, 14, 16] {
        assert_eq!(roles[&cm], "CM", "node {cm}");
    }
    let ch_of: BTreeMap<u64, Option<NodeId>> =
        report.cluster.iter().map(|(id, r)| (id.0, r.ch)).collect();
    for cm in [2u64, 4, 6] {
        assert_eq!(ch_of[&cm], Some(NodeId(101)));
    }
    for cm in [12u64, 14, 16] {
        assert_eq!(ch_of[&cm], Some(NodeId(102)));
    }
    // both heads are network-edge CHs (one CH neighbor): slot 1, and with
    // equal depth both declare themselves local centers
    assert_eq!(report.cluster[&NodeId(101)].slot, Some(1));
    assert_eq!(report.cluster[&NodeId(102)].slot, Some(1));
    assert!(report.cluster[&NodeId(101)].is_lc);
    assert!(report.cluster[&NodeId(102)].is_lc);
    // common nodes learned their head's slot from its synchronization frame
    for cm in [2u64, 4, 6, 12, 14, 16] {
        assert_eq!(report.cluster[&NodeId(cm)].slot, Some(1), "node {cm}");
    }
    assert!(report.measurement_start_ns.is_some(), "network reached the idle phase");
}

#[test]
fn chain13_slots_centers_and_hops() {
    let topo = chain13();
    let cfg = fast_cfg();
    let report = run_csync(&topo, &cfg, 5, secs(40), false);

    for ch in [102u64, 104, 106, 108, 110, 112] {
        assert_eq!(report.cluster[&NodeId(ch)].role, "CH", "node {ch}");
    }
    for cb in [3u64, 5, 7, 9, 11] {
        let r = report.cluster[&NodeId(cb)].role;
        assert!(r == "CB" || r == "CBH", "node {cb} got {r}");
    }
    assert_eq!(report.cluster[&NodeId(1)].role, "CM");
    assert_eq!(report.cluster[&NodeId(13)].role, "CM");

    // slots increase toward the center: 1,2,3,3,2,1
    let expect = [(102u64, 1u8), (104, 2), (106, 3), (108, 3), (110, 2), (112, 1)];
    for (ch, s) in expect {
        assert_eq!(report.cluster[&NodeId(ch)].slot, Some(s), "slot of {ch}");
    }
    // the two equally deep centers both become local centers
    let lcs: Vec<u64> = report
        .cluster
        .iter()
        .filter(|(_, r)| r.is_lc)
        .map(|(id, _)| id.0)
        .collect();
    assert_eq!(lcs, vec![106, 108]);

    // every node references a center within five hops
    let mut max_hops = 0u8;
    for s in &report.samples {
        if s.relation == csync_core::metrics::Relation::ToLc {
            max_hops = max_hops.max(s.hops);
        }
    }
    assert_eq!(max_hops, 5, "corner CM sits five hops from its local center");
}

#[test]
fn chain13_sync_errors_stay_bounded_with_drift() {
    let topo = chain13();
    let cfg = fast_cfg();
    let report = run_csync(&topo, &cfg, 23, secs(60), true);
    assert!(report.measurement_start_ns.is_some());
    let violations = csync_core::metrics::check_lc_bound(&report.samples, 14, 1.9);
    assert!(
        violations.is_empty(),
        "per-node hop bound exceeded: {violations:?}"
    );
    let mut lc_samples = 0;
    for s in &report.samples {
        if s.relation == csync_core::metrics::Relation::ToLc && s.hops == 5 {
            lc_samples += 1;
            assert!(
                s.signed_error_us.abs() < 133.0,
                "hop-5 error {} at t={}",
                s.signed_error_us,
                s.t_ns
            );
        }
    }
    assert!(lc_samples > 0, "hop-5 samples must exist");
}

#[test]
fn identical_seeds_yield_identical_traces() {
    let topo = two_cluster();
    let cfg = fast_cfg();
    let a = run_csync(&topo, &cfg, 77, secs(25), true);
    let b = run_csync(&topo, &cfg, 77, secs(25), true);
    let ta: Vec<String> = a.trace.iter().map(|l| l.to_line()).collect();
    let tb: Vec<String> = b.trace.iter().map(|l| l.to_line()).collect();
    assert_eq!(ta, tb);
    let c = run_csync(&topo, &cfg, 78, secs(25), true);
    let tc: Vec<String> = c.trace.iter().map(|l| l.to_line()).collect();
    assert_ne!(ta, tc, "different seeds must differ somewhere");
}

#[test]
fn power_ledgers_conserve_time_and_cms_sleep() {
    let topo = two_cluster();
    let cfg = fast_cfg();
    let dur = secs(30);
    let report = run_csync(&topo, &cfg, 3, dur, false);
    for (id, ledger) in &report.ledgers {
        assert_eq!(ledger.total_duration_ns(), dur, "ledger of {id}");
    }
    // once clustered, common nodes sleep most of the time while the engine
    // still accounts every nanosecond
    let cm = &report.ledgers[&NodeId(4)];
    assert!(
        cm.radio_on_fraction() < 0.8,
        "CM radio-on fraction = {}",
        cm.radio_on_fraction()
    );
    // no false blacklists in a fault-free run
    assert!(report.trace.iter().all(|l| l.kind != "blacklist"));
    assert!(report.assumption_flags.is_empty());
}
