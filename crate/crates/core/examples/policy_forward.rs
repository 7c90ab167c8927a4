//! Run the default-sized policy on a sampled world, pick actions greedily and
//! by sampling, and round-trip the weights through a checkpoint.
//!
//! cargo run --release --example policy_forward

use std::sync::Arc;

use highway_selfplay::dynamics::{ActionLattice, DynamicsBounds};
use highway_selfplay::map::MapBundle;
use highway_selfplay::nn::{checkpoint, sample_action, softmax, ActionMode, NetConfig, PolicyNet};
use highway_selfplay::observation::{build_observation, noise_rng, normalize, ObservationConfig};
use highway_selfplay::scenario::{build_pool, sample_world, GeneratorParams, SamplerConfig};
use highway_selfplay::world::{MapContext, World, WorldConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let cfg = ObservationConfig::default();
    let lattice = ActionLattice::default();
    let net = PolicyNet::new(NetConfig::default())?;
    println!("{} parameters over {} tensors", net.param_count(), net.params.tensors.len());

    let ctx = Arc::new(MapContext::new(MapBundle::straight_highway("demo", 3, 400.0, 3.7), cfg.road_point_spacing));
    let params = GeneratorParams::default();
    let pool = build_pool(&ctx.graph, &params, 0)?;
    let spec =
        sample_world(&ctx.graph, &pool, &params, &SamplerConfig::default(), &DynamicsBounds::default(), 20.0, 2)?;
    let world = World::new(ctx, &spec, WorldConfig::default(), lattice.clone());
    let rows = (0..world.len())
        .map(|i| {
            let mut rng = noise_rng(world.seed, 0, i);
            build_observation(&world, i, &cfg, &mut rng).map(|o| normalize(&o, &cfg.layout(), &cfg.scales))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let t0 = std::time::Instant::now();
    let out = net.forward_flat(&rows)?;
    println!("forward on {} agents took {:.1} ms", rows.len(), t0.elapsed().as_secs_f64() * 1e3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (i, o) in out.iter().enumerate() {
        let p = softmax(&o.logits);
        let (greedy, _) = sample_action(&o.logits, &mut rng, ActionMode::Greedy);
        let (drawn, logp) = sample_action(&o.logits, &mut rng, ActionMode::Sample);
        let (j, s) = lattice.values(greedy)?;
        println!(
            "agent {i}: value {:+.4}, greedy token {greedy} (jerk {j:+}, steer rate {s:+}) p={:.4}, sampled {drawn} logp {logp:.3}",
            o.value, p[greedy]
        );
    }

    let bytes = checkpoint::to_bytes(&net);
    let back = checkpoint::from_bytes(&bytes)?;
    println!("checkpoint {} bytes, identical after reload: {}", bytes.len(), back.forward_flat(&rows)? == out);
    Ok(())
}
