use std::collections::BTreeMap;
use csync_core::clock::{DriftModel, HardwareClock};
use csync_core::engine::{Engine, EngineConfig};
use csync_core::protocol::{CsyncNode, ProtocolConfig};
use csync_core::rng::{self, Stream};
use csync_core::topology::TopologyGraph;
use csync_core::{secs, NodeId};

fn main() {
    let mut t = TopologyGraph::new(30.0);
    for a in [101u64, 2, 4, 6, 102, 12, 14, 16, 51] { t.add_node(NodeId(a)); }
    for cms in [[2u64, 4, 6], [12, 14, 16]] {
        for &c in &cms { for &d in &cms { if c < d { t.add_link(NodeId(c), NodeId(d)); } } }
    }
    for c in [2u64, 4, 6] { t.add_link(NodeId(c), NodeId(101)); }
    for c in [12u64, 14, 16] { t.add_link(NodeId(c), NodeId(102)); }
    t.add_link(NodeId(51), NodeId(101));
    t.add_link(NodeId(51), NodeId(102));

    let cfg = ProtocolConfig {
        st_interval_us: 1_000_000.0,
        disc_beacon_us: 400_000.0,
        slot_duration_us: 100_000.0,
        ..ProtocolConfig::default()
    };
    let seed = 11u64;
    let mut clock_rng = rng::derive(seed, Stream::Clocks);
    let nodes: Vec<_> = t.nodes().map(|id| {
        let _ppm = rng::uniform_range(&mut clock_rng, -40.0, 40.0);
        let _f = rng::uniform_range(&mut clock_rng, 0.9, 1.1);
        let init = rng::uniform_range(&mut clock_rng, 0.0, 100_000.0);
        let hw = HardwareClock::new(0.0, DriftModel::Constant(1.0), init);
        let n = CsyncNode::new(id, cfg.clone(), seed, hw.reading().comp_us);
        (id, n, hw, 0u64)
    }).collect();
    let engine = Engine::new(t, EngineConfig::default(), seed, nodes, Vec::new());
    match engine.run_until(secs(30)) {
        Ok(r) => {
            for l in &r.trace {
                if ["state","role","announce","announce_adopt","decl","assoc","cb_candidate","cb_registered","cb_rejected","cbh","slot_locked","slot_fallback","lc","single_cluster_warning","byz_detect","blacklist","dbg_l","assumption_violation","epoch_end","measure_start","dbg_l"].contains(&l.kind) {
                    println!("{}", l.to_line());
                }
            }
            println!("--- cluster");
            let m: BTreeMap<_,_> = r.cluster.iter().collect();
            for (id, c) in m { println!("{id}: {} ch={:?} slot={:?} lc={}", c.role, c.ch, c.slot, c.is_lc); }
        }
        Err(e) => println!("ERR: {e}"),
    }
}
