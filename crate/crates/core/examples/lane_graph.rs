//! Build the lane graph of the bundled curved two-lane map and project a few
//! points onto it.
//!
//! cargo run --release --example lane_graph -- [map.json]

use std::path::PathBuf;

use highway_selfplay::geometry::Vec2;
use highway_selfplay::map::{build_lane_graph, load_map, Side};

fn main() -> anyhow::Result<()> {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("data/maps/curve_2lane.json"));
    let map = load_map(&path)?;
    let g = build_lane_graph(&map);
    println!("map {} with {} lanes -> {} nodes", map.map_id, map.lanes.len(), g.len());
    for (id, r) in g.lane_ids.iter().zip(&g.lane_ranges) {
        let last = &g.nodes[r.end - 1];
        println!("  lane {id}: {} nodes, {:.1} m long", r.len(), last.arclength);
    }
    let left = g.lateral_edges().filter(|e| e.2 == Side::Left).count();
    let right = g.lateral_edges().filter(|e| e.2 == Side::Right).count();
    println!("lateral edges: {left} left, {right} right");

    for p in [Vec2::new(20.0, 1.0), Vec2::new(150.0, 20.0), Vec2::new(300.0, 80.0)] {
        let f = g.frame_at(p, 0.0);
        let n = &g.nodes[f.node];
        println!(
            "({:6.1}, {:5.1}) -> node {:4} in lane {} at s = {:6.1}, offset {:+.2} m, heading error {:+.3} rad",
            p.x, p.y, f.node, g.lane_ids[n.lane], n.arclength, f.lateral_offset, f.heading_error
        );
    }
    Ok(())
}
