//! Score a trained checkpoint the way the learning smoke test does: 200
//! greedy episodes from the config's final-phase distribution, then a goal
//! speed sweep for one agent of a fixed scene.
//!
//! cargo run --release --example smoke_eval -- <checkpoint> [config]

use std::path::PathBuf;

use highway_selfplay::eval::{
    checkpoint_env, evaluate, run_episode, sample_config_scenarios, scale_goal_speed, Driver, EvalOptions,
};
use highway_selfplay::nn::{checkpoint, ActionMode};
use highway_selfplay::train::TrainFile;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let ckpt = PathBuf::from(args.get(1).ok_or_else(|| anyhow::anyhow!("usage: smoke_eval <checkpoint> [config]"))?);
    let config = args.get(2).map(PathBuf::from).unwrap_or_else(|| manifest.join("data/smoke.toml"));
    let file = TrainFile::load(&config)?;
    let base = config.parent().unwrap().to_path_buf();
    let net = checkpoint::load(&ckpt)?;
    let env = checkpoint_env(&net)?;

    let scenarios = sample_config_scenarios(&file, &base, 200, 7)?;
    let result = evaluate(Some(&net), &env, &scenarios, &EvalOptions::default())?;
    let agents: usize = result.rows.iter().map(|r| r.agents).sum();
    let pooled = |f: fn(&highway_selfplay::eval::ScenarioRow) -> f64| {
        result.rows.iter().map(|r| f(r) * r.agents as f64).sum::<f64>() / agents as f64
    };
    println!(
        "200 greedy episodes, {agents} agents: GR {:.1}% CR_a {:.1}% CR_r {:.1}% SR {:.1}%",
        pooled(|r| r.score.gr),
        pooled(|r| r.score.cr_a),
        pooled(|r| r.score.cr_r),
        pooled(|r| r.score.sr)
    );

    let scene = &scenarios[0];
    for factor in [0.6, 1.0, 1.4] {
        let s = scale_goal_speed(scene, 0, factor);
        let speeds: Vec<f64> = (0..20)
            .map(|seed| run_episode(Some(&net), &env, &s, Driver::Policy(ActionMode::Sample), seed))
            .map(|r| r.map(|(out, _)| out.agents[0].mean_speed()))
            .collect::<Result<_, _>>()?;
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        println!("v_goal x{factor}: target {:.2} m/s, mean speed {mean:.2} m/s", s.spec.agents[0].v_goal);
    }
    Ok(())
}
