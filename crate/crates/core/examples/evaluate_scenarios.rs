//! Evaluate a checkpoint (or a fresh network) closed-loop on scenarios drawn
//! from a training config and write the JSON report and per-scenario CSV.
//!
//! cargo run --release --example evaluate_scenarios -- [checkpoint] [config] [n]

use std::path::PathBuf;

use highway_selfplay::eval::{checkpoint_env, evaluate, sample_config_scenarios, Driver, EvalOptions};
use highway_selfplay::nn::{checkpoint, ActionMode, PolicyNet};
use highway_selfplay::train::TrainFile;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let config = args.get(2).map(PathBuf::from).unwrap_or_else(|| manifest.join("data/smoke.toml"));
    let n: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let file = TrainFile::load(&config)?;
    let net = match args.get(1).filter(|s| s.as_str() != "-") {
        Some(p) => checkpoint::load(p.as_ref())?,
        None => {
            let mut net = PolicyNet::new(file.net_config())?;
            net.env = Some(file.env());
            net
        }
    };
    let env = checkpoint_env(&net)?;
    let scenarios = sample_config_scenarios(&file, config.parent().unwrap(), n, 7)?;
    for mode in [ActionMode::Greedy, ActionMode::Sample] {
        let opts = EvalOptions {
            driver: Driver::Policy(mode),
            seed: 1,
            ..Default::default()
        };
        let e = evaluate(Some(&net), &env, &scenarios, &opts)?;
        let r = &e.report;
        println!(
            "{mode:?}: {} scenarios, {} agents: GR {:.1} +- {:.1}  CR_a {:.1}  CR_r {:.1}  SR {:.1}",
            r.scenarios, r.agents, r.gr.mean, r.gr.std, r.cr_a.mean, r.cr_r.mean, r.sr.mean
        );
        let report = std::env::temp_dir().join(format!("hwsp_eval_{mode:?}.json").to_lowercase());
        let rows = e.write(&report)?;
        println!("  wrote {} and {}", report.display(), rows.display());
    }
    Ok(())
}
