//! Enumerate the start/goal pool of a straight three-lane road and show how it
//! splits into same-lane and lane-change routes.
//!
//! cargo run --release --example start_goal_pool

use highway_selfplay::map::{build_lane_graph, MapBundle};
use highway_selfplay::scenario::{build_pool, reachable_endpoints, GeneratorParams};

fn main() -> anyhow::Result<()> {
    let map = MapBundle::straight_highway("straight", 3, 300.0, 3.7);
    let g = build_lane_graph(&map);
    let params = GeneratorParams {
        p_lc: 0.5,
        ..Default::default()
    };

    let start = g.lane_ranges[1].start;
    let ends = reachable_endpoints(&g, start, params.d_min, params.d_max, params.k);
    let mut by_c = std::collections::BTreeMap::new();
    for (_, _, c) in &ends {
        *by_c.entry(*c).or_insert(0usize) += 1;
    }
    println!("from the middle lane start: {} endpoints, by lane changes {by_c:?}", ends.len());

    let pool = build_pool(&g, &params, 1)?;
    println!(
        "pool: {} entries, {} same-lane, {} lane-change (fraction {:.3})",
        pool.len(),
        pool.same_lane.len(),
        pool.lane_change.len(),
        pool.lane_change_fraction()
    );
    for e in pool.entries.iter().step_by(pool.len() / 6 + 1) {
        let (s, t) = (&g.nodes[e.start], &g.nodes[e.goal]);
        println!(
            "  lane {} s={:5.1} -> lane {} s={:5.1}: {:6.1} m, c = {:+}",
            g.lane_ids[s.lane], s.arclength, g.lane_ids[t.lane], t.arclength, e.length, e.lane_changes
        );
    }
    println!("params hash {}", pool.params_hash);
    Ok(())
}
