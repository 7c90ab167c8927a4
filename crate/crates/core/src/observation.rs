//! Ego-centric observations and their flat, normalized layout.
//!
//! Flat layout (all blocks contiguous, in this order):
//!
//! | block            | size                     |
//! |------------------|--------------------------|
//! | ego              | 20                       |
//! | conditioning     | 8                        |
//! | neighbors        | max_neighbors x 8        |
//! | neighbor mask    | max_neighbors            |
//! | road points      | max_road_points x 7      |
//! | road mask        | max_road_points          |
//!
//! See [`EGO_FIELDS`], [`CONDITIONING_FIELDS`], [`NEIGHBOR_FIELDS`] and
//! [`ROAD_FIELDS`] for the per-column names and scale classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleType;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::world::World;

/// Bumped whenever the flat layout changes meaning.
pub const LAYOUT_VERSION: u32 = 1;

pub const EGO_DIM: usize = 20;
pub const COND_DIM: usize = 8;
pub const NEIGHBOR_DIM: usize = 8;
pub const ROAD_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleKind {
    Distance,
    Speed,
    Angle,
    Accel,
    Size,
    Unit,
}

pub const EGO_FIELDS: [(&str, ScaleKind); EGO_DIM] = [
    ("speed", ScaleKind::Speed),
    ("length", ScaleKind::Size),
    ("width", ScaleKind::Size),
    ("trailer_length", ScaleKind::Size),
    ("trailer_width", ScaleKind::Size),
    ("hitch", ScaleKind::Angle),
    ("is_truck", ScaleKind::Unit),
    ("goal_x", ScaleKind::Distance),
    ("goal_y", ScaleKind::Distance),
    ("goal_heading", ScaleKind::Angle),
    ("alpha", ScaleKind::Unit),
    ("accel", ScaleKind::Accel),
    ("steer", ScaleKind::Angle),
    ("lane_heading", ScaleKind::Angle),
    ("accel_hist_1", ScaleKind::Accel),
    ("accel_hist_2", ScaleKind::Accel),
    ("accel_hist_3", ScaleKind::Accel),
    ("steer_hist_1", ScaleKind::Angle),
    ("steer_hist_2", ScaleKind::Angle),
    ("steer_hist_3", ScaleKind::Angle),
];

pub const CONDITIONING_FIELDS: [(&str, ScaleKind); COND_DIM] = [
    ("v_goal", ScaleKind::Speed),
    ("alpha", ScaleKind::Unit),
    ("is_car", ScaleKind::Unit),
    ("is_truck", ScaleKind::Unit),
    ("length", ScaleKind::Size),
    ("width", ScaleKind::Size),
    ("trailer_length", ScaleKind::Size),
    ("trailer_width", ScaleKind::Size),
];

pub const NEIGHBOR_FIELDS: [(&str, ScaleKind); NEIGHBOR_DIM] = [
    ("x", ScaleKind::Distance),
    ("y", ScaleKind::Distance),
    ("speed", ScaleKind::Speed),
    ("heading", ScaleKind::Angle),
    ("length", ScaleKind::Size),
    ("width", ScaleKind::Size),
    ("trailer_length", ScaleKind::Size),
    ("trailer_width", ScaleKind::Size),
];

pub const ROAD_FIELDS: [(&str, ScaleKind); ROAD_DIM] = [
    ("x", ScaleKind::Distance),
    ("y", ScaleKind::Distance),
    ("dir_x", ScaleKind::Unit),
    ("dir_y", ScaleKind::Unit),
    ("lane_center", ScaleKind::Unit),
    ("lane_boundary", ScaleKind::Unit),
    ("road_edge", ScaleKind::Unit),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scales {
    pub distance: f64,
    pub speed: f64,
    pub angle: f64,
    pub accel: f64,
    pub size: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Scales {
            distance: 100.0,
            speed: 40.0,
            angle: std::f64::consts::PI,
            accel: 10.0,
            size: 10.0,
        }
    }
}

impl Scales {
    pub fn get(&self, kind: ScaleKind) -> f64 {
        match kind {
            ScaleKind::Distance => self.distance,
            ScaleKind::Speed => self.speed,
            ScaleKind::Angle => self.angle,
            ScaleKind::Accel => self.accel,
            ScaleKind::Size => self.size,
            ScaleKind::Unit => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.distance, self.speed, self.angle, self.accel, self.size];
        if all.iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("observation scales must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub position_std: f64,
    pub orientation_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            position_std: 0.2,
            orientation_std: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig {
            position_std: 0.0,
            orientation_std: 0.0,
        }
    }

    pub fn is_off(&self) -> bool {
        self.position_std == 0.0 && self.orientation_std == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    pub max_neighbors: usize,
    pub max_road_points: usize,
    pub road_radius: f64,
    /// Spacing of sampled road points along every polyline.
    pub road_point_spacing: f64,
    pub noise: NoiseConfig,
    pub scales: Scales,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            max_neighbors: 16,
            max_road_points: 64,
            road_radius: 50.0,
            road_point_spacing: 4.0,
            noise: NoiseConfig::default(),
            scales: Scales::default(),
        }
    }
}

impl ObservationConfig {
    pub fn layout(&self) -> ObsLayout {
        ObsLayout {
            max_neighbors: self.max_neighbors,
            max_road_points: self.max_road_points,
        }
    }
}

/// Sizes that fix the flat vector layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub max_neighbors: usize,
    pub max_road_points: usize,
}

impl ObsLayout {
    pub fn dim(&self) -> usize {
        EGO_DIM + COND_DIM + self.max_neighbors * (NEIGHBOR_DIM + 1) + self.max_road_points * (ROAD_DIM + 1)
    }

    pub fn ego(&self) -> std::ops::Range<usize> {
        0..EGO_DIM
    }

    pub fn conditioning(&self) -> std::ops::Range<usize> {
        EGO_DIM..EGO_DIM + COND_DIM
    }

    pub fn neighbors(&self) -> std::ops::Range<usize> {
        let s = EGO_DIM + COND_DIM;
        s..s + self.max_neighbors * NEIGHBOR_DIM
    }

    pub fn neighbor_mask(&self) -> std::ops::Range<usize> {
        let s = self.neighbors().end;
        s..s + self.max_neighbors
    }

    pub fn road(&self) -> std::ops::Range<usize> {
        let s = self.neighbor_mask().end;
        s..s + self.max_road_points * ROAD_DIM
    }

    pub fn road_mask(&self) -> std::ops::Range<usize> {
        let s = self.road().end;
        s..s + self.max_road_points
    }

    /// (field name, index range) for every column of the flat vector.
    pub fn table(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (k, (name, _)) in EGO_FIELDS.iter().enumerate() {
            out.push((format!("ego.{name}"), k..k + 1));
        }
        let c = self.conditioning().start;
        for (k, (name, _)) in CONDITIONING_FIELDS.iter().enumerate() {
            out.push((format!("cond.{name}"), c + k..c + k + 1));
        }
        out.push((format!("neighbors[{}][{}]", self.max_neighbors, NEIGHBOR_DIM), self.neighbors()));
        out.push(("neighbor_mask".into(), self.neighbor_mask()));
        out.push((format!("road[{}][{}]", self.max_road_points, ROAD_DIM), self.road()));
        out.push(("road_mask".into(), self.road_mask()));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoFeatures {
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub trailer_length: f64,
    pub trailer_width: f64,
    pub hitch: f64,
    pub is_truck: f64,
    pub goal: Vec2,
    pub goal_heading: f64,
    pub alpha: f64,
    pub accel: f64,
    pub steer: f64,
    pub lane_heading: f64,
    pub accel_history: [f64; 3],
    pub steer_history: [f64; 3],
}

impl EgoFeatures {
    fn to_array(self) -> [f64; EGO_DIM] {
        let [a1, a2, a3] = self.accel_history;
        let [s1, s2, s3] = self.steer_history;
        [
            self.speed,
            self.length,
            self.width,
            self.trailer_length,
            self.trailer_width,
            self.hitch,
            self.is_truck,
            self.goal.x,
            self.goal.y,
            self.goal_heading,
            self.alpha,
            self.accel,
            self.steer,
            self.lane_heading,
            a1,
            a2,
            a3,
            s1,
            s2,
            s3,
        ]
    }

    fn from_array(v: &[f64]) -> Self {
        EgoFeatures {
            speed: v[0],
            length: v[1],
            width: v[2],
            trailer_length: v[3],
            trailer_width: v[4],
            hitch: v[5],
            is_truck: v[6],
            goal: Vec2::new(v[7], v[8]),
            goal_heading: v[9],
            alpha: v[10],
            accel: v[11],
            steer: v[12],
            lane_heading: v[13],
            accel_history: [v[14], v[15], v[16]],
            steer_history: [v[17], v[18], v[19]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Conditioning {
    pub v_goal: f64,
    pub alpha: f64,
    pub vtype: [f64; 2],
    pub dims: [f64; 4],
}

impl Conditioning {
    fn to_array(self) -> [f64; COND_DIM] {
        let [l, w, lt, wt] = self.dims;
        [self.v_goal, self.alpha, self.vtype[0], self.vtype[1], l, w, lt, wt]
    }

    fn from_array(v: &[f64]) -> Self {
        Conditioning {
            v_goal: v[0],
            alpha: v[1],
            vtype: [v[2], v[3]],
            dims: [v[4], v[5], v[6], v[7]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeighborRow {
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
    pub dims: [f64; 4],
}

impl NeighborRow {
    fn to_array(self) -> [f64; NEIGHBOR_DIM] {
        let [l, w, lt, wt] = self.dims;
        [self.position.x, self.position.y, self.speed, self.heading, l, w, lt, wt]
    }

    fn from_array(v: &[f64]) -> Self {
        NeighborRow {
            position: Vec2::new(v[0], v[1]),
            speed: v[2],
            heading: v[3],
            dims: [v[4], v[5], v[6], v[7]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoadRow {
    pub position: Vec2,
    pub direction: Vec2,
    pub category: [f64; 3],
}

impl RoadRow {
    fn to_array(self) -> [f64; ROAD_DIM] {
        let [a, b, c] = self.category;
        [
            self.position.x,
            self.position.y,
            self.direction.x,
            self.direction.y,
            a,
            b,
            c,
        ]
    }

    fn from_array(v: &[f64]) -> Self {
        RoadRow {
            position: Vec2::new(v[0], v[1]),
            direction: Vec2::new(v[2], v[3]),
            category: [v[4], v[5], v[6]],
        }
    }
}

/// Unnormalized observation. Neighbor and road rows hold only valid entries,
/// nearest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub ego: EgoFeatures,
    pub conditioning: Conditioning,
    pub neighbors: Vec<NeighborRow>,
    pub road: Vec<RoadRow>,
}

fn dims_of(spec: &crate::scenario::AgentSpec) -> [f64; 4] {
    let d = spec.dims;
    [d.length, d.width, d.trailer_length, d.trailer_width]
}

/// Independent noise stream for one (world, step, agent).
pub fn noise_rng(world_seed: u64, step: usize, agent: usize) -> ChaCha8Rng {
    let mut z = world_seed ^ 0x6a09_e667_f3bc_c908;
    for v in [step as u64, agent as u64] {
        z = splitmix64(z ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(z)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn build_observation(
    world: &World,
    agent: usize,
    cfg: &ObservationConfig,
    rng: &mut impl Rng,
) -> Result<Observation> {
    if agent >= world.len() || !world.status[agent].is_active() {
        return Err(Error::InactiveAgent(agent));
    }
    let me = &world.agents[agent];
    let spec = &me.spec;
    let is_truck = spec.vtype == VehicleType::Truck;
    let frame = world.map.graph.frame_at(me.position, me.heading);
    let ego = EgoFeatures {
        speed: me.speed,
        length: spec.dims.length,
        width: spec.dims.width,
        trailer_length: spec.dims.trailer_length,
        trailer_width: spec.dims.trailer_width,
        hitch: me.hitch,
        is_truck: is_truck as u8 as f64,
        goal: (spec.goal - me.position).to_local(me.heading),
        goal_heading: wrap_angle(world.goal_heading[agent] - me.heading),
        alpha: spec.alpha,
        accel: me.accel,
        steer: me.steer,
        lane_heading: frame.heading_error,
        accel_history: world.accel_history[agent],
        steer_history: world.steer_history[agent],
    };
    let conditioning = Conditioning {
        v_goal: spec.v_goal,
        alpha: spec.alpha,
        vtype: if is_truck { [0.0, 1.0] } else { [1.0, 0.0] },
        dims: dims_of(spec),
    };

    let pos_noise = (cfg.noise.position_std > 0.0).then(|| Normal::new(0.0, cfg.noise.position_std).unwrap());
    let ang_noise = (cfg.noise.orientation_std > 0.0).then(|| Normal::new(0.0, cfg.noise.orientation_std).unwrap());
    let jitter_pos = |p: Vec2, rng: &mut dyn rand::RngCore| match &pos_noise {
        Some(n) => Vec2::new(p.x + n.sample(rng), p.y + n.sample(rng)),
        None => p,
    };

    let mut others: Vec<(f64, usize)> = (0..world.len())
        .filter(|&j| j != agent && world.status[j].is_active())
        .map(|j| (world.agents[j].position.dist_sq(me.position), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.truncate(cfg.max_neighbors);
    let mut neighbors = Vec::with_capacity(others.len());
    for &(_, j) in &others {
        let o = &world.agents[j];
        let mut heading = wrap_angle(o.heading - me.heading);
        let position = jitter_pos((o.position - me.position).to_local(me.heading), rng);
        if let Some(n) = &ang_noise {
            heading = wrap_angle(heading + n.sample(rng));
        }
        neighbors.push(NeighborRow {
            position,
            speed: o.speed,
            heading,
            dims: dims_of(&o.spec),
        });
    }

    let near = world.map.road_points.near(me.position, cfg.road_radius, cfg.max_road_points);
    let mut road = Vec::with_capacity(near.points.len());
    for rp in &near.points {
        let position = jitter_pos((rp.position - me.position).to_local(me.heading), rng);
        let mut direction = rp.direction.to_local(me.heading);
        if let Some(n) = &ang_noise {
            direction = direction.rotate(n.sample(rng));
        }
        road.push(RoadRow {
            position,
            direction,
            category: rp.category.one_hot(),
        });
    }
    Ok(Observation {
        ego,
        conditioning,
        neighbors,
        road,
    })
}

fn put(out: &mut [f64], vals: &[f64], fields: &[(&str, ScaleKind)], scales: &Scales) {
    for ((o, v), (_, kind)) in out.iter_mut().zip(vals).zip(fields) {
        *o = v / scales.get(*kind);
    }
}

fn take(vals: &[f64], fields: &[(&str, ScaleKind)], scales: &Scales) -> Vec<f64> {
    vals.iter().zip(fields).map(|(v, (_, k))| v * scales.get(*k)).collect()
}

/// Write the normalized flat vector into `out` (length `layout.dim()`).
pub fn normalize_into(obs: &Observation, layout: &ObsLayout, scales: &Scales, out: &mut [f64]) {
    assert_eq!(out.len(), layout.dim());
    out.fill(0.0);
    put(&mut out[layout.ego()], &obs.ego.to_array(), &EGO_FIELDS, scales);
    put(&mut out[layout.conditioning()], &obs.conditioning.to_array(), &CONDITIONING_FIELDS, scales);
    let nb = layout.neighbors().start;
    let nm = layout.neighbor_mask().start;
    for (k, row) in obs.neighbors.iter().take(layout.max_neighbors).enumerate() {
        let s = nb + k * NEIGHBOR_DIM;
        put(&mut out[s..s + NEIGHBOR_DIM], &row.to_array(), &NEIGHBOR_FIELDS, scales);
        out[nm + k] = 1.0;
    }
    let rb = layout.road().start;
    let rm = layout.road_mask().start;
    for (k, row) in obs.road.iter().take(layout.max_road_points).enumerate() {
        let s = rb + k * ROAD_DIM;
        put(&mut out[s..s + ROAD_DIM], &row.to_array(), &ROAD_FIELDS, scales);
        out[rm + k] = 1.0;
    }
}

pub fn normalize(obs: &Observation, layout: &ObsLayout, scales: &Scales) -> Vec<f64> {
    let mut out = vec![0.0; layout.dim()];
    normalize_into(obs, layout, scales, &mut out);
    out
}

pub fn denormalize(flat: &[f64], layout: &ObsLayout, scales: &Scales) -> Result<Observation> {
    if flat.len() != layout.dim() {
        return Err(Error::LayoutMismatch(format!("expected {} features, got {}", layout.dim(), flat.len())));
    }
    let ego = EgoFeatures::from_array(&take(&flat[layout.ego()], &EGO_FIELDS, scales));
    let conditioning = Conditioning::from_array(&take(&flat[layout.conditioning()], &CONDITIONING_FIELDS, scales));
    let nb = layout.neighbors().start;
    let nm = layout.neighbor_mask().start;
    let neighbors = (0..layout.max_neighbors)
        .filter(|&k| flat[nm + k] > 0.5)
        .map(|k| {
            let s = nb + k * NEIGHBOR_DIM;
            NeighborRow::from_array(&take(&flat[s..s + NEIGHBOR_DIM], &NEIGHBOR_FIELDS, scales))
        })
        .collect();
    let rb = layout.road().start;
    let rm = layout.road_mask().start;
    let road = (0..layout.max_road_points)
        .filter(|&k| flat[rm + k] > 0.5)
        .map(|k| {
            let s = rb + k * ROAD_DIM;
            RoadRow::from_array(&take(&flat[s..s + ROAD_DIM], &ROAD_FIELDS, scales))
        })
        .collect();
    Ok(Observation {
        ego,
        conditioning,
        neighbors,
        road,
    })
}
