use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;

use super::graph::LaneGraph;
use super::spatial::PointGrid;
use super::{resample_polyline, MapBundle};

/// Spacing used by [`road_points_near`] when sampling boundaries and edges.
pub const DEFAULT_ROAD_POINT_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoadCategory {
    LaneCenter,
    LaneBoundary,
    RoadEdge,
}

impl RoadCategory {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            RoadCategory::LaneCenter => [1.0, 0.0, 0.0],
            RoadCategory::LaneBoundary => [0.0, 1.0, 0.0],
            RoadCategory::RoadEdge => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadPoint {
    pub position: Vec2,
    /// Unit tangent of the underlying polyline.
    pub direction: Vec2,
    pub category: RoadCategory,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadPointSet {
    pub points: Vec<RoadPoint>,
}

/// Every categorized road point of a map, indexed for radius queries.
/// Points are stored category by category (centers, boundaries, edges), so
/// the storage index already realizes the (category, index) tie-break.
#[derive(Debug, Clone)]
pub struct RoadPointIndex {
    points: Vec<RoadPoint>,
    grid: PointGrid,
}

impl RoadPointIndex {
    pub fn new(graph: &LaneGraph, map: &MapBundle, spacing: f64) -> Self {
        assert!(spacing > 0.0);
        let mut points = Vec::new();
        let stride = (spacing.round() as usize).max(1);
        for range in &graph.lane_ranges {
            for (k, i) in range.clone().enumerate() {
                if k % stride == 0 || i + 1 == range.end {
                    let n = &graph.nodes[i];
                    points.push(RoadPoint {
                        position: n.position,
                        direction: Vec2::from_heading(n.heading),
                        category: RoadCategory::LaneCenter,
                    });
                }
            }
        }
        let mut sample = |pl: &[Vec2], category: RoadCategory| {
            let samples = resample_polyline(pl, spacing);
            let n = samples.len();
            for k in 0..n {
                let (a, b) = if k + 1 < n {
                    (samples[k].0, samples[k + 1].0)
                } else {
                    (samples[k - 1].0, samples[k].0)
                };
                points.push(RoadPoint {
                    position: samples[k].0,
                    direction: (b - a).normalized(),
                    category,
                });
            }
        };
        for b in &map.lane_boundaries {
            sample(&b.points, RoadCategory::LaneBoundary);
        }
        for e in &map.road_edges {
            sample(e, RoadCategory::RoadEdge);
        }
        let grid = PointGrid::new(points.iter().map(|p| p.position).collect(), 5.0);
        RoadPointIndex { points, grid }
    }

    pub fn all(&self) -> &[RoadPoint] {
        &self.points
    }

    /// Up to `max_points` points within `radius` of `p`, nearest first.
    pub fn near(&self, p: Vec2, radius: f64, max_points: usize) -> RoadPointSet {
        let mut idx = Vec::new();
        self.grid.within(p, radius, &mut idx);
        let mut keyed: Vec<(f64, usize)> = idx.into_iter().map(|i| (self.points[i].position.dist_sq(p), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if keyed.len() > max_points {
            keyed.select_nth_unstable_by(max_points, cmp);
            keyed.truncate(max_points);
        }
        keyed.sort_unstable_by(cmp);
        RoadPointSet {
            points: keyed.into_iter().map(|(_, i)| self.points[i]).collect(),
        }
    }
}

/// Categorized road points within `radius` of `p`, nearest first with
/// (category, index) tie-breaking. Builds the full point set on every call;
/// use [`RoadPointIndex`] for repeated queries.
pub fn road_points_near(graph: &LaneGraph, map: &MapBundle, p: Vec2, radius: f64, max_points: usize) -> RoadPointSet {
    let index = RoadPointIndex::new(graph, map, DEFAULT_ROAD_POINT_SPACING);
    let mut all: Vec<(f64, usize)> = index
        .points
        .iter()
        .enumerate()
        .filter(|(_, rp)| rp.position.dist(p) <= radius)
        .map(|(i, rp)| (rp.position.dist_sq(p), i))
        .collect();
    all.sort_by(|a, b| match a.0.partial_cmp(&b.0) {
        Some(Ordering::Equal) | None => a.1.cmp(&b.1),
        Some(o) => o,
    });
    all.truncate(max_points);
    RoadPointSet {
        points: all.into_iter().map(|(_, i)| index.points[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::build_lane_graph;

    fn fixture() -> (MapBundle, LaneGraph) {
        let map = MapBundle::straight_highway("f", 2, 80.0, 3.5);
        let g = build_lane_graph(&map);
        (map, g)
    }

    #[test]
    fn far_point_gives_empty_set() {
        let (map, g) = fixture();
        let s = road_points_near(&g, &map, Vec2::new(1000.0, 1000.0), 50.0, 64);
        assert!(s.points.is_empty());
    }

    #[test]
    fn nearest_four_sorted() {
        let (map, g) = fixture();
        let p = Vec2::new(20.3, 0.1);
        let s = road_points_near(&g, &map, p, 5.0, 4);
        assert_eq!(s.points.len(), 4);
        // brute-force distance sort over every sampled point
        let index = RoadPointIndex::new(&g, &map, DEFAULT_ROAD_POINT_SPACING);
        let mut d: Vec<f64> = index.all().iter().map(|q| q.position.dist(p)).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        for (k, rp) in s.points.iter().enumerate() {
            assert!((rp.position.dist(p) - d[k]).abs() < 1e-12);
        }
        for w in s.points.windows(2) {
            assert!(w[0].position.dist(p) <= w[1].position.dist(p));
        }
    }

    #[test]
    fn max_points_beyond_available_returns_all() {
        let (map, g) = fixture();
        let p = Vec2::new(40.0, 1.75);
        let index = RoadPointIndex::new(&g, &map, DEFAULT_ROAD_POINT_SPACING);
        let inside = index.all().iter().filter(|q| q.position.dist(p) <= 3.0).count();
        let s = road_points_near(&g, &map, p, 3.0, 10_000);
        assert_eq!(s.points.len(), inside);
    }

    #[test]
    fn indexed_query_matches_brute_force() {
        let (map, g) = fixture();
        let index = RoadPointIndex::new(&g, &map, DEFAULT_ROAD_POINT_SPACING);
        for k in 0..50 {
            let p = Vec2::new(k as f64 * 1.7 - 5.0, (k % 7) as f64 - 2.0);
            let a = index.near(p, 12.0, 16);
            let b = road_points_near(&g, &map, p, 12.0, 16);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn categories_present() {
        let (map, g) = fixture();
        let index = RoadPointIndex::new(&g, &map, 4.0);
        for c in [
            RoadCategory::LaneCenter,
            RoadCategory::LaneBoundary,
            RoadCategory::RoadEdge,
        ] {
            assert!(index.all().iter().any(|p| p.category == c));
        }
    }
}
