//! Command-line front end: pool building, scenario sampling, training,
//! evaluation and rollout export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use highway_selfplay::dynamics::DynamicsBounds;
use highway_selfplay::eval::{
    checkpoint_env, evaluate, export_rollout, load_scenario, load_scenarios, Driver, EvalOptions,
};
use highway_selfplay::map::{build_lane_graph, load_map};
use highway_selfplay::nn::{checkpoint, ActionMode};
use highway_selfplay::observation::splitmix64;
use highway_selfplay::scenario::{
    build_pool_with, sample_world, GeneratorParams, PoolOptions, SamplerConfig, StartGoalPool,
};
use highway_selfplay::train::{train_with, TrainFile};
use highway_selfplay::{Error, Result};

#[derive(Parser)]
#[command(name = "hwsp", version, about = "Highway self-play simulation and training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

impl From<Mode> for ActionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Greedy => ActionMode::Greedy,
            Mode::Sample => ActionMode::Sample,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate start/goal pairs on a map and write the pool as JSON.
    BuildPool {
        #[arg(long)]
        map: PathBuf,
        /// JSON file with the generator parameters.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = PoolOptions::default().start_stride)]
        start_stride: usize,
        #[arg(long, default_value_t = PoolOptions::default().goals_per_start)]
        goals_per_start: usize,
    },
    /// Sample scenario files from a pool.
    Sample {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        n: usize,
        /// Episode horizon in seconds.
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Take sampler settings from this training config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a policy from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Suppress per-iteration progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Closed-loop evaluation of a checkpoint on a directory of scenarios.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
        /// `random:<seed>` resamples every agent's alpha.
        #[arg(long)]
        alpha: Option<String>,
        /// Drive agents along their reference trajectories instead of the policy.
        #[arg(long)]
        replay: bool,
        /// Score ADE/FDE against the scenario references.
        #[arg(long)]
        displacement: bool,
    },
    /// Roll out one scenario and write `<out>.csv` and `<out>.svg`.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: what.into(),
        message: e.to_string(),
    })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// `target` expressed relative to `from_dir` when possible.
fn relative_to(target: &Path, from_dir: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    pathdiff::diff_paths(abs(target), abs(from_dir)).unwrap_or_else(|| abs(target))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildPool {
            map,
            params,
            seed,
            out,
            start_stride,
            goals_per_start,
        } => {
            let bundle = load_map(&map)?;
            let params: GeneratorParams = read_json(&params, "generator parameters")?;
            let graph = build_lane_graph(&bundle);
            let opts = PoolOptions {
                start_stride,
                goals_per_start,
            };
            let mut pool = build_pool_with(&graph, &bundle.map_id, &params, &opts, seed)?;
            let out_dir = parent_dir(&out);
            create_dir(&out_dir)?;
            pool.map_path = Some(relative_to(&map, &out_dir).to_string_lossy().into_owned());
            pool.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "pool": out,
                    "entries": pool.len(),
                    "lane_change_fraction": pool.lane_change_fraction(),
                    "params_hash": pool.params_hash,
                })
            );
        }
        Command::Sample {
            pool,
            n,
            horizon,
            seed,
            out_dir,
            config,
        } => {
            let p = StartGoalPool::load(&pool)?;
            let rel = p
                .map_path
                .clone()
                .ok_or_else(|| Error::Config(format!("{} does not record its map", pool.display())))?;
            let map_path = parent_dir(&pool).join(rel);
            let graph = build_lane_graph(&load_map(&map_path)?);
            let (sampler, bounds) = match config {
                Some(c) => {
                    let f = TrainFile::load(&c)?;
                    (f.sampler, f.world.bounds)
                }
                None => (SamplerConfig::default(), DynamicsBounds::default()),
            };
            create_dir(&out_dir)?;
            let map_rel = relative_to(&map_path, &out_dir).to_string_lossy().into_owned();
            for k in 0..n {
                let mut spec = sample_world(
                    &graph,
                    &p,
                    &p.params,
                    &sampler,
                    &bounds,
                    horizon,
                    splitmix64(seed ^ splitmix64(k as u64)),
                )?;
                spec.map_path = Some(map_rel.clone());
                spec.save(out_dir.join(format!("scenario_{k:04}.json")))?;
            }
            println!("{}", serde_json::json!({ "out_dir": out_dir, "scenarios": n }));
        }
        Command::Train { config, out_dir, quiet } => {
            let file = TrainFile::load(&config)?;
            let base = parent_dir(&config);
            let summary = train_with(file, &base, &out_dir, |m| {
                if !quiet {
                    eprintln!(
                        "iter {} steps {} rho {:.3} reward {:+.4} goal {:.3} fault {:.3} offroad {:.3}",
                        m.iter, m.steps, m.rho, m.mean_reward, m.goal_rate, m.fault_collision_rate, m.offroad_rate
                    );
                }
            })?;
            println!(
                "{}",
                serde_json::json!({
                    "iterations": summary.iterations,
                    "steps": summary.steps,
                    "metrics": summary.metrics_path,
                    "checkpoint": summary.final_checkpoint(),
                })
            );
        }
        Command::Eval {
            checkpoint: ckpt,
            scenarios,
            mode,
            seed,
            report,
            alpha,
            replay,
            displacement,
        } => {
            let net = match &ckpt {
                Some(p) => Some(checkpoint::load(p)?),
                None if replay => None,
                None => return Err(Error::Config("--checkpoint is required unless --replay is given".into())),
            };
            let env = match &net {
                Some(n) => checkpoint_env(n)?,
                None => Default::default(),
            };
            let alpha_random = alpha.as_deref().map(parse_alpha).transpose()?;
            let set = load_scenarios(&scenarios, env.observation.road_point_spacing)?;
            let opts = EvalOptions {
                driver: if replay {
                    Driver::Replay
                } else {
                    Driver::Policy(mode.into())
                },
                seed,
                alpha_random,
                displacement,
                ..EvalOptions::default()
            };
            let evaluation = evaluate(net.as_ref(), &env, &set, &opts)?;
            let csv = evaluation.write(&report)?;
            println!("{}", serde_json::json!({ "report": report, "rows": csv, "metrics": evaluation.report }));
        }
        Command::Rollout {
            checkpoint: ckpt,
            scenario,
            out,
            mode,
            seed,
        } => {
            let net = checkpoint::load(&ckpt)?;
            let env = checkpoint_env(&net)?;
            let s = load_scenario(&scenario, env.observation.road_point_spacing)?;
            let (csv, svg) = export_rollout(&net, &env, &s, mode.into(), seed, &out)?;
            println!("{}", serde_json::json!({ "trace": csv, "plot": svg }));
        }
    }
    Ok(())
}

fn parse_alpha(spec: &str) -> Result<u64> {
    spec.strip_prefix("random:")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("--alpha expects random:<seed>, got {spec:?}")))
}
