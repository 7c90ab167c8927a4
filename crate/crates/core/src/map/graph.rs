use std::ops::Range;

use crate::geometry::{wrap_angle, Vec2};

use super::spatial::PointGrid;
use super::{resample_polyline, MapBundle};

/// Node spacing along every lane.
pub const NODE_SPACING: f64 = 1.0;
/// Largest longitudinal offset allowed between laterally linked nodes.
pub const LATERAL_WINDOW: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneNode {
    pub position: Vec2,
    pub heading: f64,
    pub lane: usize,
    pub arclength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Upsampled lane graph. Nodes are stored lane by lane in map order, with
/// ascending arclength inside a lane.
#[derive(Debug, Clone)]
pub struct LaneGraph {
    pub nodes: Vec<LaneNode>,
    pub lane_ids: Vec<String>,
    pub lane_ranges: Vec<Range<usize>>,
    /// Longitudinal edges: node -> following nodes.
    pub successors: Vec<Vec<usize>>,
    pub left: Vec<Option<usize>>,
    pub right: Vec<Option<usize>>,
    grid: PointGrid,
}

/// Result of projecting a point onto the lane graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneFrame {
    pub node: usize,
    /// Positive to the left of the node heading.
    pub lateral_offset: f64,
    pub heading_error: f64,
}

pub fn build_lane_graph(map: &MapBundle) -> LaneGraph {
    let mut nodes = Vec::new();
    let mut lane_ranges = Vec::with_capacity(map.lanes.len());
    for (li, lane) in map.lanes.iter().enumerate() {
        let samples = resample_polyline(&lane.centerline, NODE_SPACING);
        let start = nodes.len();
        let n = samples.len();
        for k in 0..n {
            let (a, b) = match (k == 0, k + 1 == n) {
                (true, _) => (samples[0].0, samples[1].0),
                (_, true) => (samples[n - 2].0, samples[n - 1].0),
                _ => (samples[k - 1].0, samples[k + 1].0),
            };
            nodes.push(LaneNode {
                position: samples[k].0,
                heading: (b - a).angle(),
                lane: li,
                arclength: samples[k].1,
            });
        }
        lane_ranges.push(start..nodes.len());
    }

    let mut successors = vec![Vec::new(); nodes.len()];
    for (li, lane) in map.lanes.iter().enumerate() {
        let r = lane_ranges[li].clone();
        for i in r.start..r.end - 1 {
            successors[i].push(i + 1);
        }
        for s in &lane.successors {
            let target = map.lane_index(s).expect("validated map");
            successors[r.end - 1].push(lane_ranges[target].start);
        }
    }

    let mut left = vec![None; nodes.len()];
    let mut right = vec![None; nodes.len()];
    for (li, lane) in map.lanes.iter().enumerate() {
        let links = [
            (lane.left_neighbor.as_deref(), &mut left),
            (lane.right_neighbor.as_deref(), &mut right),
        ];
        for (neighbor, table) in links {
            let Some(nid) = neighbor else { continue };
            let other = lane_ranges[map.lane_index(nid).expect("validated map")].clone();
            for i in lane_ranges[li].clone() {
                table[i] = match_lateral(&nodes, other.clone(), nodes[i].position);
            }
        }
    }

    let grid = PointGrid::new(nodes.iter().map(|n| n.position).collect(), 2.0);
    LaneGraph {
        nodes,
        lane_ids: map.lanes.iter().map(|l| l.id.clone()).collect(),
        lane_ranges,
        successors,
        left,
        right,
        grid,
    }
}

/// Closest node of the neighbor lane whose longitudinal offset (along the
/// neighbor's heading) is within the lateral window.
fn match_lateral(nodes: &[LaneNode], lane: Range<usize>, p: Vec2) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for j in lane {
        let d = nodes[j].position.dist_sq(p);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, j));
        }
    }
    let (_, j) = best?;
    let along = (p - nodes[j].position).dot(Vec2::from_heading(nodes[j].heading));
    (along.abs() <= LATERAL_WINDOW).then_some(j)
}

impl LaneGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lateral(&self, node: usize, side: Side) -> Option<usize> {
        match side {
            Side::Left => self.left[node],
            Side::Right => self.right[node],
        }
    }

    /// All lateral edges as (from, to, side).
    pub fn lateral_edges(&self) -> impl Iterator<Item = (usize, usize, Side)> + '_ {
        (0..self.nodes.len()).flat_map(move |i| {
            self.left[i]
                .map(|j| (i, j, Side::Left))
                .into_iter()
                .chain(self.right[i].map(|j| (i, j, Side::Right)))
        })
    }

    /// Exact nearest node (lowest index on ties).
    pub fn nearest_node(&self, p: Vec2) -> usize {
        self.grid.nearest(p).expect("lane graph is non-empty")
    }

    pub fn frame_at(&self, p: Vec2, heading: f64) -> LaneFrame {
        nearest_lane_frame(self, p, heading)
    }
}

/// Project a pose onto the graph: nearest node, signed lateral offset and
/// heading error relative to that node.
pub fn nearest_lane_frame(graph: &LaneGraph, p: Vec2, heading: f64) -> LaneFrame {
    let node = graph.nearest_node(p);
    let n = &graph.nodes[node];
    let f = Vec2::from_heading(n.heading);
    LaneFrame {
        node,
        lateral_offset: f.cross(p - n.position),
        heading_error: wrap_angle(heading - n.heading),
    }
}
