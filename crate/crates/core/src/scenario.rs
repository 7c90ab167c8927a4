//! Offline start/goal pools and online world sampling.
//!
//! A pool is built once per (map, parameters) by running a bounded
//! breadth-first search from sampled lane-graph nodes over longitudinal and
//! lateral transitions. Each search state carries the signed lane-change
//! count `c` (left = -1, right = +1); states with `|c| > K` are pruned and
//! endpoints whose route length falls in `[D_min, D_max]` are kept, split
//! into same-lane (`c == 0`) and lane-change (`c != 0`) sets.
//!
//! Route length counts longitudinal travel only; a lateral transition moves
//! to the adjacent lane at the same station and adds no length.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{footprint_with, AgentState, Dimensions, DynamicsBounds, VehicleType};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::map::{LaneGraph, Side};

/// The seven generator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub p_lc: f64,
    pub p_truck: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub k: u32,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            p_lc: 0.4,
            p_truck: 0.0,
            n_min: 4,
            n_max: 4,
            d_min: 50.0,
            d_max: 130.0,
            k: 3,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.p_lc) || !frac(self.p_truck) {
            return Err(Error::InvalidParams("p_lc and p_truck must lie in [0, 1]".into()));
        }
        if self.n_min > self.n_max {
            return Err(Error::InvalidParams("n_min must not exceed n_max".into()));
        }
        if !(self.d_min > 0.0 && self.d_min <= self.d_max) {
            return Err(Error::InvalidParams("need 0 < d_min <= d_max".into()));
        }
        Ok(())
    }

    /// Stable short hash used to key pool files.
    pub fn hash_hex(&self) -> String {
        let canon = serde_json::to_string(self).expect("params serialize");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// How "±" spreads are read when sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpreadMode {
    /// Uniform over the half-range.
    #[default]
    UniformHalfRange,
    /// Gaussian with the half-range as standard deviation (clamped to the support).
    StdDev,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range2 {
    pub min: f64,
    pub max: f64,
}

impl Range2 {
    const fn new(min: f64, max: f64) -> Self {
        Range2 { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// World-sampling knobs that are not generator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub dt: f64,
    pub t_buffer: f64,
    pub eps_init: f64,
    pub eps_goal: f64,
    pub spread: SpreadMode,
    pub max_attempts: usize,
    pub car_length: Range2,
    pub car_width: Range2,
    pub truck_length: Range2,
    pub truck_width: Range2,
    pub trailer_length: Range2,
    pub trailer_width: Range2,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            dt: 0.1,
            t_buffer: 3.0,
            eps_init: 0.4,
            eps_goal: 0.2,
            spread: SpreadMode::UniformHalfRange,
            max_attempts: 100,
            car_length: Range2::new(4.2, 5.2),
            car_width: Range2::new(1.8, 2.1),
            truck_length: Range2::new(5.5, 7.0),
            truck_width: Range2::new(2.4, 2.6),
            trailer_length: Range2::new(10.0, 14.0),
            trailer_width: Range2::new(2.4, 2.6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolOptions {
    /// One BFS start per `start_stride` nodes on average.
    pub start_stride: usize,
    /// Goals kept per start node.
    pub goals_per_start: usize,
}

impl Default for PoolOptions {
    fn default() -> Self {
        PoolOptions {
            start_stride: 5,
            goals_per_start: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub start: usize,
    pub goal: usize,
    pub length: f64,
    pub lane_changes: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartGoalPool {
    pub map_id: String,
    pub params_hash: String,
    pub params: GeneratorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_path: Option<String>,
    pub entries: Vec<PoolEntry>,
    pub same_lane: Vec<usize>,
    pub lane_change: Vec<usize>,
}

impl StartGoalPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lane_change_fraction(&self) -> f64 {
        self.lane_change.len() as f64 / self.entries.len().max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pool serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse("pool", e))
    }
}

/// All endpoints reachable from `start` with route length in
/// `[d_min, d_max]` and `|c| <= k`, as (node, length, c), in BFS order.
pub fn reachable_endpoints(graph: &LaneGraph, start: usize, d_min: f64, d_max: f64, k: u32) -> Vec<(usize, f64, i32)> {
    let k = k as i32;
    let mut seen: HashSet<(usize, i32)> = HashSet::new();
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    seen.insert((start, 0));
    queue.push_back((start, 0.0f64, 0i32));
    while let Some((node, len, c)) = queue.pop_front() {
        if len >= d_min {
            out.push((node, len, c));
        }
        for &next in &graph.successors[node] {
            let l = len + graph.nodes[node].position.dist(graph.nodes[next].position);
            if l <= d_max + 1e-9 && seen.insert((next, c)) {
                queue.push_back((next, l, c));
            }
        }
        for (side, dc) in [(Side::Left, -1), (Side::Right, 1)] {
            if let Some(next) = graph.lateral(node, side) {
                let nc = c + dc;
                if nc.abs() <= k && seen.insert((next, nc)) {
                    queue.push_back((next, len, nc));
                }
            }
        }
    }
    out
}

pub fn build_pool(graph: &LaneGraph, params: &GeneratorParams, seed: u64) -> Result<StartGoalPool> {
    build_pool_with(graph, "", params, &PoolOptions::default(), seed)
}

pub fn build_pool_with(
    graph: &LaneGraph,
    map_id: &str,
    params: &GeneratorParams,
    opts: &PoolOptions,
    seed: u64,
) -> Result<StartGoalPool> {
    params.validate()?;
    if graph.is_empty() {
        return Err(Error::InvalidParams("lane graph is empty".into()));
    }
    if opts.start_stride == 0 || opts.goals_per_start == 0 {
        return Err(Error::InvalidParams("pool options must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.len();
    let n_starts = n.div_ceil(opts.start_stride);
    let mut starts = index::sample(&mut rng, n, n_starts).into_vec();
    starts.sort_unstable();

    let m = opts.goals_per_start;
    let want_lc = (params.p_lc * m as f64).round() as usize;
    let mut entries = Vec::new();
    for start in starts {
        let ends = reachable_endpoints(graph, start, params.d_min, params.d_max, params.k);
        let (same, lc): (Vec<_>, Vec<_>) = ends.into_iter().partition(|e| e.2 == 0);
        let mut n_lc = want_lc.min(lc.len());
        let mut n_same = (m - want_lc).min(same.len());
        // top up from the other set when one side runs short
        n_lc = (n_lc + (m - want_lc - n_same)).min(lc.len());
        n_same = (n_same + (m - n_lc - n_same).min(same.len() - n_same)).min(same.len());
        for (set, count) in [(&same, n_same), (&lc, n_lc)] {
            for i in pick(&mut rng, set.len(), count) {
                let (goal, length, c) = set[i];
                entries.push(PoolEntry {
                    start,
                    goal,
                    length,
                    lane_changes: c,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyPool(format!(
            "no route of length in [{}, {}] m exists on this map",
            params.d_min, params.d_max
        )));
    }
    let same_lane = (0..entries.len()).filter(|&i| entries[i].lane_changes == 0).collect();
    let lane_change = (0..entries.len()).filter(|&i| entries[i].lane_changes != 0).collect();
    Ok(StartGoalPool {
        map_id: map_id.to_string(),
        params_hash: params.hash_hex(),
        params: *params,
        map_path: None,
        entries,
        same_lane,
        lane_change,
    })
}

fn pick(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, count.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Recorded trajectory sample for displacement metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub start: Vec2,
    pub start_heading: f64,
    pub goal: Vec2,
    pub v_init: f64,
    pub v_goal: f64,
    pub alpha: f64,
    pub vtype: VehicleType,
    pub dims: Dimensions,
    pub lane_changes: Option<i32>,
    pub reference: Option<Vec<ReferencePoint>>,
}

impl AgentSpec {
    /// A car with neutral conditioning, mostly for tests and examples.
    pub fn car(start: Vec2, heading: f64, goal: Vec2, length: f64, width: f64) -> Self {
        AgentSpec {
            start,
            start_heading: heading,
            goal,
            v_init: 0.0,
            v_goal: 0.0,
            alpha: 1.0,
            vtype: VehicleType::Car,
            dims: Dimensions {
                length,
                width,
                trailer_length: 0.0,
                trailer_width: 0.0,
            },
            lane_changes: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub map_id: String,
    pub map_path: Option<String>,
    pub seed: u64,
    pub dt: f64,
    pub horizon: usize,
    pub agents: Vec<AgentSpec>,
    /// Agents dropped because no collision-free placement was found.
    pub placement_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speeds {
    pub v_base: f64,
    pub v_init: f64,
    pub v_goal: f64,
    pub alpha: f64,
}

pub const MAX_GOAL_SPEED: f64 = 40.0;

fn spread(rng: &mut impl Rng, half: f64, mode: SpreadMode) -> f64 {
    if half <= 0.0 {
        return 0.0;
    }
    match mode {
        SpreadMode::UniformHalfRange => rng.gen_range(-half..half),
        SpreadMode::StdDev => {
            let n = Normal::new(0.0, half).expect("positive std");
            n.sample(rng).clamp(-0.95, 3.0)
        }
    }
}

/// Base speed from the mean route length over the horizon minus the safety
/// buffer, then per-agent perturbed initial and goal speeds and alpha.
pub fn compute_speeds(
    d_min: f64,
    d_max: f64,
    horizon_s: f64,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Speeds> {
    let effective = horizon_s - cfg.t_buffer;
    if !(effective > 0.0) {
        return Err(Error::InvalidHorizon(format!(
            "horizon {horizon_s} s leaves no time after the {} s buffer",
            cfg.t_buffer
        )));
    }
    let v_base = 0.5 * (d_min + d_max) / effective;
    let eps_init = spread(rng, cfg.eps_init, cfg.spread);
    let eps_goal = spread(rng, cfg.eps_goal, cfg.spread);
    let v_init = (v_base * (1.0 + eps_init)).clamp(0.0, MAX_GOAL_SPEED);
    let v_goal = (v_init * (1.0 + eps_goal)).clamp(0.0, MAX_GOAL_SPEED);
    let alpha = rng.gen_range(0.1..1.0);
    Ok(Speeds {
        v_base,
        v_init,
        v_goal,
        alpha,
    })
}

/// Number of trucks among `n` agents: `P_truck * n` rounded half away from zero.
pub fn truck_count(p_truck: f64, n: usize) -> usize {
    ((p_truck * n as f64).round() as usize).min(n)
}

/// Sample one complete world from a pool.
#[allow(clippy::too_many_arguments)]
pub fn sample_world(
    graph: &LaneGraph,
    pool: &StartGoalPool,
    params: &GeneratorParams,
    sampler: &SamplerConfig,
    bounds: &DynamicsBounds,
    horizon_s: f64,
    seed: u64,
) -> Result<ScenarioSpec> {
    params.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool("cannot sample from an empty pool".into()));
    }
    if !(sampler.dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = match sampler.spread {
        SpreadMode::UniformHalfRange => rng.gen_range(params.n_min..=params.n_max),
        SpreadMode::StdDev => {
            let mean = 0.5 * (params.n_min + params.n_max) as f64;
            let std = (0.5 * (params.n_max - params.n_min) as f64).max(1e-9);
            let draw = Normal::new(mean, std).expect("std > 0").sample(&mut rng);
            (draw.round().max(0.0) as usize).clamp(params.n_min, params.n_max)
        }
    };
    let trucks = truck_count(params.p_truck, n);
    let mut is_truck = vec![false; n];
    for i in index::sample(&mut rng, n, trucks) {
        is_truck[i] = true;
    }
    // trucks are placed first; they are the hardest to fit
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| !is_truck[i]);

    let mut agents: Vec<AgentSpec> = Vec::with_capacity(n);
    let mut placed = Vec::with_capacity(n);
    let mut failures = 0;
    for &i in &order {
        let vtype = if is_truck[i] {
            VehicleType::Truck
        } else {
            VehicleType::Car
        };
        let dims = match vtype {
            VehicleType::Car => Dimensions {
                length: sampler.car_length.sample(&mut rng),
                width: sampler.car_width.sample(&mut rng),
                trailer_length: 0.0,
                trailer_width: 0.0,
            },
            VehicleType::Truck => Dimensions {
                length: sampler.truck_length.sample(&mut rng),
                width: sampler.truck_width.sample(&mut rng),
                trailer_length: sampler.trailer_length.sample(&mut rng),
                trailer_width: sampler.trailer_width.sample(&mut rng),
            },
        };
        let speeds = compute_speeds(params.d_min, params.d_max, horizon_s, sampler, &mut rng)?;
        let mut success = None;
        for _ in 0..sampler.max_attempts {
            let use_lc = if pool.lane_change.is_empty() {
                false
            } else if pool.same_lane.is_empty() {
                true
            } else {
                rng.gen_bool(params.p_lc)
            };
            let set = if use_lc { &pool.lane_change } else { &pool.same_lane };
            let entry = pool.entries[set[rng.gen_range(0..set.len())]];
            let node = &graph.nodes[entry.start];
            let spec = AgentSpec {
                start: node.position,
                start_heading: node.heading,
                goal: graph.nodes[entry.goal].position,
                v_init: speeds.v_init,
                v_goal: speeds.v_goal,
                alpha: speeds.alpha,
                vtype,
                dims,
                lane_changes: Some(entry.lane_changes),
                reference: None,
            };
            let fp = footprint_with(&AgentState::from_spec(&spec), bounds.get(vtype).wheelbase_fraction);
            if placed.iter().all(|other| !fp.overlaps(other)) {
                success = Some((spec, fp));
                break;
            }
        }
        match success {
            Some((spec, fp)) => {
                agents.push(spec);
                placed.push(fp);
            }
            None => failures += 1,
        }
    }
    Ok(ScenarioSpec {
        map_id: pool.map_id.clone(),
        map_path: pool.map_path.clone(),
        seed,
        dt: sampler.dt,
        horizon: (horizon_s / sampler.dt).round() as usize,
        agents,
        placement_failures: failures,
    })
}

// ---- scenario JSON ----

#[derive(Serialize, Deserialize)]
struct PoseFile {
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Serialize, Deserialize)]
struct PointFile {
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct AgentFile {
    start: PoseFile,
    goal: PointFile,
    v_init: f64,
    v_goal: f64,
    alpha: f64,
    vtype: VehicleType,
    dims: Dimensions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_changes: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<Vec<[f64; 4]>>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    map_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    map_path: Option<String>,
    seed: u64,
    dt: f64,
    horizon: usize,
    agents: Vec<AgentFile>,
}

impl ScenarioSpec {
    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            map_id: self.map_id.clone(),
            map_path: self.map_path.clone(),
            seed: self.seed,
            dt: self.dt,
            horizon: self.horizon,
            agents: self
                .agents
                .iter()
                .map(|a| AgentFile {
                    start: PoseFile {
                        x: a.start.x,
                        y: a.start.y,
                        heading: a.start_heading,
                    },
                    goal: PointFile {
                        x: a.goal.x,
                        y: a.goal.y,
                    },
                    v_init: a.v_init,
                    v_goal: a.v_goal,
                    alpha: a.alpha,
                    vtype: a.vtype,
                    dims: a.dims,
                    lane_changes: a.lane_changes,
                    reference: a.reference.as_ref().map(|r| r.iter().map(|p| [p.t, p.x, p.y, p.heading]).collect()),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::parse("scenario", e))?;
        let mut agents = Vec::with_capacity(file.agents.len());
        for a in file.agents {
            if a.vtype == VehicleType::Car && (a.dims.trailer_length != 0.0 || a.dims.trailer_width != 0.0) {
                return Err(Error::parse("scenario", "cars must have zero trailer dimensions"));
            }
            if !(0.0..=MAX_GOAL_SPEED).contains(&a.v_goal) {
                return Err(Error::parse("scenario", format!("v_goal {} outside [0, 40]", a.v_goal)));
            }
            agents.push(AgentSpec {
                start: Vec2::new(a.start.x, a.start.y),
                start_heading: a.start.heading,
                goal: Vec2::new(a.goal.x, a.goal.y),
                v_init: a.v_init,
                v_goal: a.v_goal,
                alpha: a.alpha,
                vtype: a.vtype,
                dims: a.dims,
                lane_changes: a.lane_changes,
                reference: a.reference.map(|r| {
                    r.into_iter()
                        .map(|p| ReferencePoint {
                            t: p[0],
                            x: p[1],
                            y: p[2],
                            heading: p[3],
                        })
                        .collect()
                }),
            });
        }
        Ok(ScenarioSpec {
            map_id: file.map_id,
            map_path: file.map_path,
            seed: file.seed,
            dt: file.dt,
            horizon: file.horizon,
            agents,
            placement_failures: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
