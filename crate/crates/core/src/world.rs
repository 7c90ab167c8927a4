//! Joint world stepping with event detection.
//!
//! `step_world` moves every active agent from the pre-step joint state, then
//! evaluates events on the post-step snapshot of the agents that were active
//! before the step. The goal check runs first and a goal-reaching agent is
//! never early-terminated in the same step. Collision, road-edge and
//! lane-boundary checks use every agent that was active before the step.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::dynamics::{
    decode_action, footprint_with, step_bicycle, ActionLattice, AgentState, DynamicsBounds, Footprint,
};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::map::{build_lane_graph, LaneGraph, MapBundle, RoadPointIndex, SegmentIndex};
use crate::scenario::ScenarioSpec;

/// Immutable per-map data shared by every world on that map.
#[derive(Debug)]
pub struct MapContext {
    pub map: MapBundle,
    pub graph: LaneGraph,
    pub road_points: RoadPointIndex,
    edges: SegmentIndex,
    boundaries: SegmentIndex,
    solid: Vec<bool>,
}

impl MapContext {
    pub fn new(map: MapBundle, road_point_spacing: f64) -> Self {
        let graph = build_lane_graph(&map);
        let road_points = RoadPointIndex::new(&graph, &map, road_point_spacing);
        let edges = SegmentIndex::new(map.road_edges.iter().map(|e| e.as_slice()), 10.0);
        let boundaries = SegmentIndex::new(map.lane_boundaries.iter().map(|b| b.points.as_slice()), 10.0);
        let solid = map.lane_boundaries.iter().map(|b| !b.crossable).collect();
        MapContext {
            map,
            graph,
            road_points,
            edges,
            boundaries,
            solid,
        }
    }

    pub fn crosses_road_edge(&self, fp: &Footprint) -> bool {
        fp.boxes().iter().any(|b| self.edges.box_crosses(b, |_| true))
    }

    pub fn crosses_solid_boundary(&self, fp: &Footprint) -> bool {
        fp.boxes().iter().any(|b| self.boundaries.box_crosses(b, |k| self.solid[k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub r_goal: f64,
    /// Relative speed band for full goal-speed quality.
    pub speed_band: f64,
    pub yaw_tolerance: f64,
    pub bounds: DynamicsBounds,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            r_goal: 2.0,
            speed_band: 0.2,
            yaw_tolerance: 0.3,
            bounds: DynamicsBounds::default(),
        }
    }
}

/// Everything besides the scenario needed to run a policy in a world.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub observation: crate::observation::ObservationConfig,
    pub world: WorldConfig,
    pub lattice: ActionLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentStatus {
    Active,
    GoalReached,
    Collided,
    OffRoad,
    EarlyTerminated,
}

impl AgentStatus {
    pub fn is_active(self) -> bool {
        self == AgentStatus::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::Active => "active",
            AgentStatus::GoalReached => "goal_reached",
            AgentStatus::Collided => "collided",
            AgentStatus::OffRoad => "off_road",
            AgentStatus::EarlyTerminated => "early_terminated",
        }
    }
}

/// Everything that happened to one agent in one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentEvents {
    /// Agent took part in this step.
    pub stepped: bool,
    pub collision: bool,
    pub at_fault: bool,
    pub road_edge: bool,
    pub lane_boundary: bool,
    pub goal: bool,
    pub w_s: f64,
    pub w_a: f64,
    /// Distance to goal when early-terminated.
    pub early_termination: Option<f64>,
    pub d_prev: f64,
    pub d_curr: f64,
    /// Absolute heading error to the lane direction at the goal.
    pub delta_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvents {
    pub agents: Vec<AgentEvents>,
}

/// Cumulative per-agent flags over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeFlags {
    pub goal_reached: bool,
    pub collided: bool,
    pub at_fault: bool,
    pub off_road: bool,
    pub early_terminated: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub map: Arc<MapContext>,
    pub agents: Vec<AgentState>,
    pub status: Vec<AgentStatus>,
    pub flags: Vec<EpisodeFlags>,
    /// Most recent first.
    pub accel_history: Vec<[f64; 3]>,
    pub steer_history: Vec<[f64; 3]>,
    pub goal_heading: Vec<f64>,
    pub step: usize,
    pub horizon: usize,
    pub dt: f64,
    pub rho: f64,
    pub seed: u64,
    pub config: WorldConfig,
    pub lattice: ActionLattice,
}

impl World {
    pub fn new(map: Arc<MapContext>, scenario: &ScenarioSpec, config: WorldConfig, lattice: ActionLattice) -> Self {
        let n = scenario.agents.len();
        let goal_heading =
            scenario.agents.iter().map(|a| map.graph.nodes[map.graph.nearest_node(a.goal)].heading).collect();
        World {
            agents: scenario.agents.iter().map(AgentState::from_spec).collect(),
            status: vec![AgentStatus::Active; n],
            flags: vec![EpisodeFlags::default(); n],
            accel_history: vec![[0.0; 3]; n],
            steer_history: vec![[0.0; 3]; n],
            goal_heading,
            step: 0,
            horizon: scenario.horizon,
            dt: scenario.dt,
            rho: 0.0,
            seed: scenario.seed,
            config,
            lattice,
            map,
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.agents.len()).filter(|&i| self.status[i].is_active()).collect()
    }

    pub fn num_active(&self) -> usize {
        self.status.iter().filter(|s| s.is_active()).count()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.horizon || self.num_active() == 0
    }

    pub fn footprint(&self, i: usize) -> Footprint {
        let a = &self.agents[i];
        footprint_with(a, self.config.bounds.get(a.spec.vtype).wheelbase_fraction)
    }

    pub fn distance_to_goal(&self, i: usize) -> f64 {
        self.agents[i].position.dist(self.agents[i].spec.goal)
    }
}

/// True iff the goal lies strictly behind the agent.
pub fn check_unrecoverable(agent: &AgentState) -> bool {
    let local = (agent.spec.goal - agent.position).to_local(agent.heading);
    local.x < 0.0
}

/// Fault flags for a colliding pair; never returns (false, false).
pub fn attribute_fault(a_i: &AgentState, a_j: &AgentState) -> (bool, bool) {
    let f_i = (a_j.position - a_i.position).dot(a_j.forward()) > 0.5 * a_j.spec.dims.length;
    let f_j = (a_i.position - a_j.position).dot(a_i.forward()) > 0.5 * a_i.spec.dims.length;
    if !f_i && !f_j {
        (true, true)
    } else {
        (f_i, f_j)
    }
}

/// Goal indicator with speed and yaw quality factors. `goal_heading` is the
/// lane direction at the goal.
pub fn check_goal(agent: &AgentState, goal_heading: f64, cfg: &WorldConfig) -> (bool, f64, f64) {
    let reached = agent.position.dist(agent.spec.goal) <= cfg.r_goal;
    let v_goal = agent.spec.v_goal;
    let w_s = if (agent.speed - v_goal).abs() <= cfg.speed_band * v_goal.max(1.0) {
        1.0
    } else {
        0.1
    };
    let w_a = if wrap_angle(agent.heading - goal_heading).abs() <= cfg.yaw_tolerance {
        1.0
    } else {
        0.1
    };
    (reached, w_s, w_a)
}

/// Advance all active agents by one step. `tokens` holds one action token per
/// active agent, in ascending agent order.
pub fn step_world(world: &mut World, tokens: &[usize]) -> Result<StepEvents> {
    let active = world.active_indices();
    if tokens.len() != active.len() {
        return Err(Error::TokenCount {
            expected: active.len(),
            got: tokens.len(),
        });
    }
    let mut next = Vec::with_capacity(active.len());
    for (&i, &tok) in active.iter().zip(tokens) {
        let a = &world.agents[i];
        let (jerk, steer_rate) = decode_action(tok, a.spec.alpha, &world.lattice)?;
        next.push(step_bicycle(a, jerk, steer_rate, world.dt, &world.config.bounds));
    }
    let mut states = world.agents.clone();
    for (&i, s) in active.iter().zip(next) {
        states[i] = s;
    }
    Ok(apply_states(world, states))
}

/// Replace the active agents' states (e.g. teleporting along a recorded
/// trajectory) and evaluate events exactly as a normal step would.
pub fn apply_states(world: &mut World, states: Vec<AgentState>) -> StepEvents {
    let n = world.agents.len();
    let active = world.active_indices();
    let d_prev: Vec<f64> = (0..n).map(|i| world.distance_to_goal(i)).collect();
    for &i in &active {
        world.agents[i] = states[i].clone();
        let h = &mut world.accel_history[i];
        *h = [world.agents[i].accel, h[0], h[1]];
        let h = &mut world.steer_history[i];
        *h = [world.agents[i].steer, h[0], h[1]];
    }
    world.step += 1;

    let mut ev = vec![AgentEvents::default(); n];
    let cfg = world.config;
    let fps: Vec<Option<Footprint>> = (0..n).map(|i| world.status[i].is_active().then(|| world.footprint(i))).collect();
    for &i in &active {
        let a = &world.agents[i];
        let e = &mut ev[i];
        e.stepped = true;
        e.d_prev = d_prev[i];
        e.d_curr = world.distance_to_goal(i);
        e.delta_theta = wrap_angle(a.heading - world.goal_heading[i]).abs();
        let (g, w_s, w_a) = check_goal(a, world.goal_heading[i], &cfg);
        e.goal = g;
        e.w_s = w_s;
        e.w_a = w_a;
        if !g && check_unrecoverable(a) {
            e.early_termination = Some(e.d_curr);
        }
        let fp = fps[i].as_ref().expect("active agent footprint");
        e.road_edge = world.map.crosses_road_edge(fp);
        e.lane_boundary = world.map.crosses_solid_boundary(fp);
    }
    for (k, &i) in active.iter().enumerate() {
        for &j in &active[k + 1..] {
            let (fi, fj) = (fps[i].as_ref().unwrap(), fps[j].as_ref().unwrap());
            if fi.overlaps(fj) {
                let (ai, aj) = attribute_fault(&world.agents[i], &world.agents[j]);
                ev[i].collision = true;
                ev[j].collision = true;
                ev[i].at_fault |= ai;
                ev[j].at_fault |= aj;
            }
        }
    }
    for &i in &active {
        let e = &ev[i];
        let f = &mut world.flags[i];
        f.goal_reached |= e.goal;
        f.collided |= e.collision;
        f.at_fault |= e.at_fault;
        f.off_road |= e.road_edge;
        f.early_terminated |= e.early_termination.is_some();
        world.status[i] = if e.goal {
            AgentStatus::GoalReached
        } else if e.collision {
            AgentStatus::Collided
        } else if e.road_edge {
            AgentStatus::OffRoad
        } else if e.early_termination.is_some() {
            AgentStatus::EarlyTerminated
        } else {
            AgentStatus::Active
        };
    }
    StepEvents { agents: ev }
}

/// Rollout trace in the `world,step,agent,x,y,heading,v,status` layout.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub world: usize,
    pub step: usize,
    pub agent: usize,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub status: AgentStatus,
}

pub const TRACE_HEADER: &str = "world,step,agent,x,y,heading,v,status";

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record every agent that took part in the step just taken.
    pub fn record(&mut self, world_index: usize, world: &World, events: &StepEvents) {
        for (i, e) in events.agents.iter().enumerate() {
            if e.stepped {
                let a = &world.agents[i];
                self.rows.push(TraceRow {
                    world: world_index,
                    step: world.step,
                    agent: i,
                    position: a.position,
                    heading: a.heading,
                    speed: a.speed,
                    status: world.status[i],
                });
            }
        }
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.world,
                r.step,
                r.agent,
                r.position.x,
                r.position.y,
                r.heading,
                r.speed,
                r.status.as_str()
            );
        }
        s
    }
}
