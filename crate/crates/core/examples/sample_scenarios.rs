//! Sample worlds from a pool with mixed traffic and write them as scenario
//! files that `hwsp eval` can read.
//!
//! cargo run --release --example sample_scenarios -- [out_dir]

use std::path::PathBuf;

use highway_selfplay::dynamics::DynamicsBounds;
use highway_selfplay::map::build_lane_graph;
use highway_selfplay::map::load_map;
use highway_selfplay::scenario::{build_pool, sample_world, GeneratorParams, SamplerConfig};

fn main() -> anyhow::Result<()> {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hwsp_scenarios"));
    std::fs::create_dir_all(&out)?;
    let map_path = manifest.join("data/maps/straight_3lane_400m.json");
    let map = load_map(&map_path)?;
    let params: GeneratorParams =
        serde_json::from_str(&std::fs::read_to_string(manifest.join("data/params/mixed.json"))?)?;
    let g = build_lane_graph(&map);
    let mut pool = build_pool(&g, &params, 3)?;
    pool.map_path = Some(map_path.display().to_string());

    for k in 0..5u64 {
        let s = sample_world(&g, &pool, &params, &SamplerConfig::default(), &DynamicsBounds::default(), 20.0, k)?;
        println!("scenario {k}: {} agents, {} placement failures", s.agents.len(), s.placement_failures);
        for a in &s.agents {
            println!(
                "  {:?} {:.1}x{:.1} m at ({:5.1}, {:4.1}) v_init {:5.2} v_goal {:5.2} alpha {:.2} c {:+}",
                a.vtype,
                a.dims.length,
                a.dims.width,
                a.start.x,
                a.start.y,
                a.v_init,
                a.v_goal,
                a.alpha,
                a.lane_changes.unwrap_or(0)
            );
        }
        s.save(out.join(format!("scenario_{k:04}.json")))?;
    }
    println!("wrote 5 scenarios to {}", out.display());
    Ok(())
}
