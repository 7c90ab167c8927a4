//! Task metrics, closed-loop evaluation, replay and trajectory export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::AgentState;
use crate::geometry::Vec2;
use crate::map::load_map;
use crate::nn::{sample_action, ActionMode, PolicyNet};
use crate::observation::{build_observation, noise_rng, normalize_into, splitmix64};
use crate::scenario::{sample_world, ReferencePoint, ScenarioSpec};
use crate::train::{TrainFile, TupleRuntime};
use crate::world::{apply_states, step_world, AgentStatus, EnvConfig, MapContext, StepEvents, Trace, World};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub goal_reached: bool,
    pub at_fault_collision: bool,
    pub any_agent_collision: bool,
    pub road_edge_collision: bool,
    pub early_terminated: bool,
    /// Starts with the initial state at t = 0.
    pub trajectory: Vec<TrajectoryPoint>,
}

impl AgentOutcome {
    pub fn mean_speed(&self) -> f64 {
        let n = self.trajectory.len().saturating_sub(1);
        if n == 0 {
            return self.trajectory.first().map_or(0.0, |p| p.speed);
        }
        self.trajectory[1..].iter().map(|p| p.speed).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub agents: Vec<AgentOutcome>,
}

/// Per-scenario rates in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub gr: f64,
    pub cr_a: f64,
    pub cr_r: f64,
    pub sr: f64,
}

pub fn score_episode(agents: &[AgentOutcome]) -> ScenarioScore {
    if agents.is_empty() {
        return ScenarioScore::default();
    }
    let n = agents.len() as f64;
    let pct = |f: &dyn Fn(&AgentOutcome) -> bool| 100.0 * agents.iter().filter(|a| f(a)).count() as f64 / n;
    ScenarioScore {
        gr: pct(&|a| a.goal_reached),
        cr_a: pct(&|a| a.at_fault_collision),
        cr_r: pct(&|a| a.road_edge_collision),
        sr: pct(&|a| a.goal_reached && !a.at_fault_collision),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub ade: f64,
    pub fde: f64,
    /// Fewer steps than the horizon were available.
    pub truncated: bool,
}

/// ADE over steps `1..=round(horizon_s / dt)` and FDE at the last scored
/// step. Index 0 of both trajectories is t = 0.
pub fn displacement_errors(sim: &[Vec2], reference: &[Vec2], dt: f64, horizon_s: f64) -> Result<Displacement> {
    if sim.len() < 2 || reference.len() < 2 {
        return Err(Error::Empty("trajectory needs at least one step after t = 0".into()));
    }
    let want = (horizon_s / dt).round() as usize;
    let n = want.min(sim.len() - 1).min(reference.len() - 1);
    if n == 0 {
        return Err(Error::Empty("zero-length scoring horizon".into()));
    }
    let errs: Vec<f64> = (1..=n).map(|k| sim[k].dist(reference[k])).collect();
    Ok(Displacement {
        ade: errs.iter().sum::<f64>() / n as f64,
        fde: errs[n - 1],
        truncated: n < want,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Stat {
        if v.is_empty() {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub gr: Stat,
    pub cr_a: Stat,
    pub cr_r: Stat,
    pub sr: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ade_5s: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fde_5s: Option<Stat>,
    pub truncated: usize,
    pub scenarios: usize,
    pub agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub name: String,
    pub agents: usize,
    pub score: ScenarioScore,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub rows: Vec<ScenarioRow>,
}

impl Evaluation {
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes")
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("scenario,agents,gr,cr_a,cr_r,sr,ade,fde,truncated\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                r.agents,
                r.score.gr,
                r.score.cr_a,
                r.score.cr_r,
                r.score.sr,
                opt(r.ade),
                opt(r.fde),
                r.truncated
            )
            .unwrap();
        }
        s
    }

    /// Write `<report>` as JSON and `<report stem>.csv` next to it.
    pub fn write(&self, report_path: &Path) -> Result<PathBuf> {
        if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(report_path, self.report_json()).map_err(|e| Error::io(report_path, e))?;
        let csv = report_path.with_extension("csv");
        std::fs::write(&csv, self.rows_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok(csv)
    }
}

/// How actions are chosen during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Driver {
    Policy(ActionMode),
    /// Agents follow their reference trajectories exactly.
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub driver: Driver,
    pub seed: u64,
    /// Resample every agent's alpha from U(0.1, 1) with this seed.
    pub alpha_random: Option<u64>,
    /// Score ADE/FDE against references; an error if any agent lacks one.
    pub displacement: bool,
    pub horizon_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            driver: Driver::Policy(ActionMode::Greedy),
            seed: 0,
            alpha_random: None,
            displacement: false,
            horizon_s: 5.0,
        }
    }
}

/// A scenario together with the map it runs on.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub name: String,
    pub spec: ScenarioSpec,
    pub map: Arc<MapContext>,
}

/// Load every `*.json` scenario in `dir` (sorted by name), resolving each
/// `map_path` relative to the scenario file and sharing map data by path.
pub fn load_scenarios(dir: &Path, road_point_spacing: f64) -> Result<Vec<LoadedScenario>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut maps: BTreeMap<PathBuf, Arc<MapContext>> = BTreeMap::new();
    files.iter().map(|f| load_scenario_cached(f, road_point_spacing, &mut maps)).collect()
}

pub fn load_scenario(path: &Path, road_point_spacing: f64) -> Result<LoadedScenario> {
    load_scenario_cached(path, road_point_spacing, &mut BTreeMap::new())
}

fn load_scenario_cached(
    path: &Path,
    spacing: f64,
    maps: &mut BTreeMap<PathBuf, Arc<MapContext>>,
) -> Result<LoadedScenario> {
    let spec = ScenarioSpec::load(path)?;
    let rel = spec.map_path.clone().ok_or_else(|| Error::Config(format!("{} has no map_path", path.display())))?;
    let map_path = path.parent().unwrap_or(Path::new(".")).join(rel);
    let map = match maps.get(&map_path) {
        Some(m) => m.clone(),
        None => {
            let m = Arc::new(MapContext::new(load_map(&map_path)?, spacing));
            maps.insert(map_path, m.clone());
            m
        }
    };
    Ok(LoadedScenario {
        name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        spec,
        map,
    })
}

fn point(a: &AgentState, t: f64) -> TrajectoryPoint {
    TrajectoryPoint {
        t,
        position: a.position,
        heading: a.heading,
        speed: a.speed,
    }
}

/// Agent state placed at reference sample `k`; speed from the backward difference.
fn reference_state(prev: &AgentState, refs: &[ReferencePoint], k: usize, dt: f64) -> AgentState {
    let k = k.min(refs.len() - 1);
    let r = refs[k];
    let mut s = prev.clone();
    let p = Vec2::new(r.x, r.y);
    s.speed = if k > 0 {
        p.dist(Vec2::new(refs[k - 1].x, refs[k - 1].y)) / dt
    } else {
        prev.speed
    };
    s.position = p;
    s.heading = r.heading;
    s
}

/// Run one scenario to completion. Returns the outcome and the step trace.
pub fn run_episode(
    net: Option<&PolicyNet>,
    env: &EnvConfig,
    scenario: &LoadedScenario,
    driver: Driver,
    seed: u64,
) -> Result<(EpisodeOutcome, Trace)> {
    let spec = &scenario.spec;
    let mut world = World::new(scenario.map.clone(), spec, env.world, env.lattice.clone());
    world.rho = 1.0;
    let mut outcome = EpisodeOutcome {
        agents: world
            .agents
            .iter()
            .map(|a| AgentOutcome {
                trajectory: vec![point(a, 0.0)],
                ..Default::default()
            })
            .collect(),
    };
    let mut trace = Trace::new();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ spec.seed));
    let layout = env.observation.layout();
    let refs: Vec<Option<&Vec<ReferencePoint>>> = spec.agents.iter().map(|a| a.reference.as_ref()).collect();
    if driver == Driver::Replay && refs.iter().any(|r| r.map_or(true, |r| r.is_empty())) {
        return Err(Error::MissingReference("replay needs a reference for every agent".into()));
    }
    let net = match (driver, net) {
        (Driver::Policy(_), Some(n)) => Some(n),
        (Driver::Policy(_), None) => return Err(Error::Config("policy driver needs a network".into())),
        (Driver::Replay, _) => None,
    };
    if let Some(n) = net {
        if n.config.layout != layout || n.config.tokens != env.lattice.len() {
            return Err(Error::LayoutMismatch("checkpoint does not match the evaluation settings".into()));
        }
    }
    while !world.is_done() {
        let active = world.active_indices();
        let events: StepEvents = match (driver, net) {
            (Driver::Policy(mode), Some(net)) => {
                let rows = active
                    .iter()
                    .map(|&i| {
                        let mut nr = noise_rng(world.seed, world.step, i);
                        let o = build_observation(&world, i, &env.observation, &mut nr)?;
                        let mut x = vec![0.0; layout.dim()];
                        normalize_into(&o, &layout, &env.observation.scales, &mut x);
                        Ok(x)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let out = net.forward_flat(&rows)?;
                let tokens: Vec<usize> = out.iter().map(|o| sample_action(&o.logits, &mut rng, mode).0).collect();
                step_world(&mut world, &tokens)?
            }
            _ => {
                let k = world.step + 1;
                let states = world
                    .agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| reference_state(a, refs[i].unwrap(), k, world.dt))
                    .collect();
                apply_states(&mut world, states)
            }
        };
        trace.record(0, &world, &events);
        let t = world.step as f64 * world.dt;
        for &i in &active {
            let e = &events.agents[i];
            let o = &mut outcome.agents[i];
            o.trajectory.push(point(&world.agents[i], t));
            o.goal_reached |= e.goal;
            o.at_fault_collision |= e.at_fault;
            o.any_agent_collision |= e.collision;
            o.road_edge_collision |= e.road_edge;
            o.early_terminated |= world.status[i] == AgentStatus::EarlyTerminated;
        }
    }
    Ok((outcome, trace))
}

fn with_random_alpha(s: &LoadedScenario, seed: u64) -> LoadedScenario {
    let mut s = s.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ s.spec.seed));
    for a in &mut s.spec.agents {
        a.alpha = rng.gen_range(0.1..1.0);
    }
    s
}

/// Closed-loop evaluation of a scenario set, one scenario per task.
pub fn evaluate(
    net: Option<&PolicyNet>,
    env: &EnvConfig,
    scenarios: &[LoadedScenario],
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if scenarios.is_empty() {
        return Err(Error::Empty("no scenarios to evaluate".into()));
    }
    if opts.displacement {
        for s in scenarios {
            if s.spec.agents.iter().any(|a| a.reference.as_ref().map_or(true, |r| r.len() < 2)) {
                return Err(Error::MissingReference(format!("{} lacks reference trajectories", s.name)));
            }
        }
    }
    let results: Vec<Result<ScenarioRow>> = scenarios
        .par_iter()
        .map(|s| {
            let s = match opts.alpha_random {
                Some(seed) => with_random_alpha(s, seed),
                None => s.clone(),
            };
            let (out, _) = run_episode(net, env, &s, opts.driver, opts.seed)?;
            let score = score_episode(&out.agents);
            let (mut ade, mut fde) = (None, None);
            let mut truncated = false;
            if opts.displacement {
                let mut a_sum = 0.0;
                let mut f_sum = 0.0;
                for (agent, spec) in out.agents.iter().zip(&s.spec.agents) {
                    let sim: Vec<Vec2> = agent.trajectory.iter().map(|p| p.position).collect();
                    let r: Vec<Vec2> = spec.reference.as_ref().unwrap().iter().map(|p| Vec2::new(p.x, p.y)).collect();
                    let d = displacement_errors(&sim, &r, s.spec.dt, opts.horizon_s)?;
                    a_sum += d.ade;
                    f_sum += d.fde;
                    truncated |= d.truncated;
                }
                let n = out.agents.len().max(1) as f64;
                ade = Some(a_sum / n);
                fde = Some(f_sum / n);
            }
            Ok(ScenarioRow {
                name: s.name.clone(),
                agents: out.agents.len(),
                score,
                ade,
                fde,
                truncated,
            })
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&ScenarioRow) -> f64| Stat::of(&rows.iter().map(f).collect::<Vec<_>>());
    let report = MetricReport {
        gr: col(|r| r.score.gr),
        cr_a: col(|r| r.score.cr_a),
        cr_r: col(|r| r.score.cr_r),
        sr: col(|r| r.score.sr),
        ade_5s: opts.displacement.then(|| col(|r| r.ade.unwrap_or(0.0))),
        fde_5s: opts.displacement.then(|| col(|r| r.fde.unwrap_or(0.0))),
        truncated: rows.iter().filter(|r| r.truncated).count(),
        scenarios: rows.len(),
        agents: rows.iter().map(|r| r.agents).sum(),
    };
    Ok(Evaluation { report, rows })
}

/// Overhead SVG of lanes, road edges and one colored polyline per agent.
pub fn trajectories_svg(map: &MapContext, outcome: &EpisodeOutcome) -> String {
    let mut pts: Vec<Vec2> = map.map.road_edges.iter().flat_map(|e| e.iter().copied()).collect();
    pts.extend(map.map.lanes.iter().flat_map(|l| l.centerline.iter().copied()));
    pts.extend(outcome.agents.iter().flat_map(|a| a.trajectory.iter().map(|p| p.position)));
    let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &pts {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if pts.is_empty() {
        lo = Vec2::ZERO;
        hi = Vec2::new(1.0, 1.0);
    }
    let pad = 5.0;
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    // y grows upward in world coordinates
    let fmt = |p: &Vec2| format!("{:.2},{:.2}", p.x - lo.x + pad, hi.y - p.y + pad);
    let line = |ps: &[Vec2]| ps.iter().map(fmt).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.2} {h:.2}" width="{:.0}" height="{:.0}">"#,
        w * 4.0,
        h * 4.0
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    for e in &map.map.road_edges {
        writeln!(s, r##"<polyline points="{}" fill="none" stroke="#222222" stroke-width="0.3"/>"##, line(e)).unwrap();
    }
    for l in &map.map.lanes {
        writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#bbbbbb" stroke-width="0.15" stroke-dasharray="1 1"/>"##,
            line(&l.centerline)
        )
        .unwrap();
    }
    for (i, a) in outcome.agents.iter().enumerate() {
        let hue = (i * 137) % 360;
        let ps: Vec<Vec2> = a.trajectory.iter().map(|p| p.position).collect();
        writeln!(
            s,
            r#"<polyline id="agent-{i}" points="{}" fill="none" stroke="hsl({hue},70%,45%)" stroke-width="0.5"><title>agent {i}</title></polyline>"#,
            line(&ps)
        )
        .unwrap();
        if let Some(p) = ps.first() {
            let c = fmt(p);
            let (x, y) = c.split_once(',').unwrap();
            writeln!(s, r#"<circle cx="{x}" cy="{y}" r="0.8" fill="hsl({hue},70%,45%)"/>"#).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Roll out one scenario and write `<prefix>.csv` (step trace) and `<prefix>.svg`.
pub fn export_rollout(
    net: &PolicyNet,
    env: &EnvConfig,
    scenario: &LoadedScenario,
    mode: ActionMode,
    seed: u64,
    prefix: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let (outcome, trace) = run_episode(Some(net), env, scenario, Driver::Policy(mode), seed)?;
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv = PathBuf::from(format!("{}.csv", prefix.display()));
    let svg = PathBuf::from(format!("{}.svg", prefix.display()));
    std::fs::write(&csv, trace.to_csv()).map_err(|e| Error::io(&csv, e))?;
    std::fs::write(&svg, trajectories_svg(&scenario.map, &outcome)).map_err(|e| Error::io(&svg, e))?;
    Ok((csv, svg))
}

/// `n` scenarios drawn from the final-phase distribution of a training config,
/// cycling over its tuples. `base` resolves relative map paths.
pub fn sample_config_scenarios(file: &TrainFile, base: &Path, n: usize, seed: u64) -> Result<Vec<LoadedScenario>> {
    let tuples = TupleRuntime::build(file, base)?;
    let mut out = Vec::with_capacity(n);
    let mut draw = 0u64;
    while out.len() < n {
        let k = out.len();
        let t = &tuples[k % tuples.len()];
        let spec = sample_world(
            &t.ctx.graph,
            &t.post_pool,
            &t.post,
            &file.sampler,
            &file.world.bounds,
            file.train.horizon_s,
            splitmix64(seed ^ splitmix64(draw)),
        )?;
        draw += 1;
        if draw > 100 * n as u64 + 100 {
            return Err(Error::EmptyPool("could not place agents in sampled scenarios".into()));
        }
        if spec.agents.is_empty() {
            continue;
        }
        out.push(LoadedScenario {
            name: format!("sample_{k:04}"),
            spec,
            map: t.ctx.clone(),
        });
    }
    Ok(out)
}

/// Environment a checkpoint was trained with, or the defaults when it carries
/// none. Fails when the observation layout disagrees with the network.
pub fn checkpoint_env(net: &PolicyNet) -> Result<EnvConfig> {
    let env = net.env.clone().unwrap_or_default();
    if env.observation.layout() != net.config.layout {
        return Err(Error::LayoutMismatch(format!(
            "network expects {:?}, environment produces {:?}",
            net.config.layout,
            env.observation.layout()
        )));
    }
    if env.lattice.len() != net.config.tokens {
        return Err(Error::VersionMismatch(format!(
            "network has {} action tokens, lattice has {}",
            net.config.tokens,
            env.lattice.len()
        )));
    }
    Ok(env)
}

/// Copy of `scenario` with one agent's goal speed multiplied by `factor`.
pub fn scale_goal_speed(scenario: &LoadedScenario, agent: usize, factor: f64) -> LoadedScenario {
    let mut s = scenario.clone();
    s.spec.agents[agent].v_goal *= factor;
    s
}
