//! Step a four-car world with constant actions and report the events each
//! agent sees until every agent has finished.
//!
//! cargo run --release --example world_step

use std::sync::Arc;

use highway_selfplay::dynamics::DynamicsBounds;
use highway_selfplay::map::MapBundle;
use highway_selfplay::scenario::{build_pool, sample_world, GeneratorParams, SamplerConfig};
use highway_selfplay::world::{step_world, MapContext, World, WorldConfig};

fn main() -> anyhow::Result<()> {
    let ctx = Arc::new(MapContext::new(MapBundle::straight_highway("demo", 3, 400.0, 3.7), 4.0));
    let params = GeneratorParams::default();
    let pool = build_pool(&ctx.graph, &params, 0)?;
    let spec =
        sample_world(&ctx.graph, &pool, &params, &SamplerConfig::default(), &DynamicsBounds::default(), 20.0, 4)?;
    let lattice = highway_selfplay::dynamics::ActionLattice::default();
    let zero = lattice.zero_token();
    let mut world = World::new(ctx, &spec, WorldConfig::default(), lattice);

    for (i, a) in world.agents.iter().enumerate() {
        println!(
            "agent {i}: v {:.2} m/s, goal {:.1} m away, c {:+}",
            a.speed,
            world.distance_to_goal(i),
            a.spec.lane_changes.unwrap_or(0)
        );
    }
    while !world.is_done() {
        let active = world.active_indices();
        let ev = step_world(&mut world, &vec![zero; active.len()])?;
        for &i in &active {
            let e = &ev.agents[i];
            if e.goal || e.collision || e.road_edge || e.early_termination.is_some() {
                println!(
                    "t={:4.1}s agent {i}: goal {} (w_s {}, w_a {}) collision {} at fault {} road edge {} early termination {:?} -> {}",
                    world.step as f64 * world.dt,
                    e.goal,
                    e.w_s,
                    e.w_a,
                    e.collision,
                    e.at_fault,
                    e.road_edge,
                    e.early_termination.map(|d| (d * 10.0).round() / 10.0),
                    world.status[i].as_str()
                );
            }
        }
    }
    println!("done after {} steps", world.step);
    Ok(())
}
