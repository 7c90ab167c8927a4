//! Build and normalize one agent's observation and print its layout.
//!
//! cargo run --release --example observation

use std::sync::Arc;

use highway_selfplay::dynamics::{ActionLattice, DynamicsBounds};
use highway_selfplay::map::MapBundle;
use highway_selfplay::observation::{build_observation, denormalize, noise_rng, normalize, ObservationConfig};
use highway_selfplay::scenario::{build_pool, sample_world, GeneratorParams, SamplerConfig};
use highway_selfplay::world::{MapContext, World, WorldConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ObservationConfig::default();
    let ctx = Arc::new(MapContext::new(MapBundle::straight_highway("demo", 3, 400.0, 3.7), cfg.road_point_spacing));
    let params = GeneratorParams {
        n_min: 6,
        n_max: 6,
        ..Default::default()
    };
    let pool = build_pool(&ctx.graph, &params, 0)?;
    let spec =
        sample_world(&ctx.graph, &pool, &params, &SamplerConfig::default(), &DynamicsBounds::default(), 20.0, 1)?;
    let world = World::new(ctx, &spec, WorldConfig::default(), ActionLattice::default());

    let layout = cfg.layout();
    println!("flat dimension {}", layout.dim());
    for (name, r) in layout.table() {
        println!("  {name:<20} {:4}..{:4}", r.start, r.end);
    }

    let mut rng = noise_rng(world.seed, world.step, 0);
    let obs = build_observation(&world, 0, &cfg, &mut rng)?;
    println!("ego {:?}", obs.ego);
    println!("conditioning {:?}", obs.conditioning);
    println!("{} neighbors, {} road points in range", obs.neighbors.len(), obs.road.len());
    for n in &obs.neighbors {
        println!("  neighbor at ({:+6.2}, {:+5.2}) v {:.2}", n.position.x, n.position.y, n.speed);
    }
    let flat = normalize(&obs, &layout, &cfg.scales);
    let max = flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("normalized: max |x| = {max:.3}");
    let back = denormalize(&flat, &layout, &cfg.scales)?;
    println!("round trip neighbors {} road {}", back.neighbors.len(), back.road.len());
    Ok(())
}
