//! Roll out one scene with a single agent's goal speed scaled up and down, and
//! export each rollout as a CSV trace and an SVG plot.
//!
//! cargo run --release --example conditioned_rollout -- <checkpoint> [config] [out_dir]

use std::path::PathBuf;

use highway_selfplay::eval::{
    checkpoint_env, export_rollout, run_episode, sample_config_scenarios, scale_goal_speed, Driver,
};
use highway_selfplay::nn::{checkpoint, ActionMode};
use highway_selfplay::train::TrainFile;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let ckpt = args
        .get(1)
        .ok_or_else(|| anyhow::anyhow!("usage: conditioned_rollout <checkpoint> [config] [out_dir]"))?;
    let config = args.get(2).map(PathBuf::from).unwrap_or_else(|| manifest.join("data/smoke.toml"));
    let out = args.get(3).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hwsp_conditioned"));
    let file = TrainFile::load(&config)?;
    let net = checkpoint::load(ckpt.as_ref())?;
    let env = checkpoint_env(&net)?;
    let scene = sample_config_scenarios(&file, config.parent().unwrap(), 1, 7)?.remove(0);

    for factor in [0.6, 0.8, 1.0, 1.2, 1.4] {
        let s = scale_goal_speed(&scene, 0, factor);
        let mut speeds = Vec::new();
        let mut goals = 0;
        for seed in 0..20 {
            let (o, _) = run_episode(Some(&net), &env, &s, Driver::Policy(ActionMode::Sample), seed)?;
            speeds.push(o.agents[0].mean_speed());
            goals += o.agents[0].goal_reached as usize;
        }
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let (csv, svg) = export_rollout(&net, &env, &s, ActionMode::Greedy, 0, &out.join(format!("x{factor}")))?;
        println!(
            "x{factor}: v_goal {:5.2} m/s -> mean speed {mean:5.2} m/s, goal {goals}/20; {} {}",
            s.spec.agents[0].v_goal,
            csv.display(),
            svg.display()
        );
    }
    Ok(())
}
