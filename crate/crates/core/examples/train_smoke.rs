//! Train on the bundled smoke config and print one line per iteration.
//!
//! cargo run --release --example train_smoke -- [config] [out_dir] [total_steps]

use std::path::PathBuf;

use highway_selfplay::train::{train_with, TrainFile};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let config = args.get(1).map(PathBuf::from).unwrap_or_else(|| manifest.join("data/smoke.toml"));
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hwsp_smoke"));
    let mut file = TrainFile::load(&config)?;
    if let Some(n) = args.get(3) {
        file.train.total_steps = n.parse()?;
    }
    let base = config.parent().unwrap_or(&manifest).to_path_buf();
    let t0 = std::time::Instant::now();
    let summary = train_with(file, &base, &out, |m| {
        println!(
            "iter {:4} steps {:8} rho {:.2} reward {:+.4} goal {:.3} fault {:.3} offroad {:.3} et {:.3} kl {:.3} ret {:+.2} vloss {:.3} clip {:.3} gnorm {:.2} ({:.0}s)",
            m.iter,
            m.steps,
            m.rho,
            m.mean_reward,
            m.goal_rate,
            m.fault_collision_rate,
            m.offroad_rate,
            m.early_term_rate,
            m.kl_prior,
            m.episode_return,
            m.value_loss,
            m.clip_fraction,
            m.grad_norm,
            t0.elapsed().as_secs_f64()
        );
    })?;
    println!("final checkpoint {}", summary.final_checkpoint().display());
    Ok(())
}
