//! Road geometry input, the 1 m lane graph and geometric queries over it.
//!
//! Maps are read from a small JSON document:
//!
//! ```json
//! { "map_id": "m", "lanes": [ { "id": "L0", "centerline": [[0,0],[100,0]],
//!   "left_neighbor": "L1", "right_neighbor": null, "successors": [] } ],
//!   "road_edges": [ [[0,-2],[100,-2]] ],
//!   "lane_boundaries": [ { "points": [[0,2],[100,2]], "crossable": true } ] }
//! ```
//!
//! Units are meters in a right-handed frame, headings in radians
//! counterclockwise from +x.

mod graph;
mod road_points;
mod spatial;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub use graph::{build_lane_graph, nearest_lane_frame, LaneFrame, LaneGraph, LaneNode, Side};
pub use road_points::{
    road_points_near, RoadCategory, RoadPoint, RoadPointIndex, RoadPointSet, DEFAULT_ROAD_POINT_SPACING,
};
pub use spatial::{PointGrid, SegmentIndex};

pub type Polyline = Vec<Vec2>;

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub centerline: Polyline,
    pub left_neighbor: Option<String>,
    pub right_neighbor: Option<String>,
    pub successors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneBoundary {
    pub points: Polyline,
    pub crossable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapBundle {
    pub map_id: String,
    pub lanes: Vec<Lane>,
    pub road_edges: Vec<Polyline>,
    pub lane_boundaries: Vec<LaneBoundary>,
}

#[derive(Serialize, Deserialize)]
struct LaneFile {
    id: String,
    centerline: Vec<[f64; 2]>,
    #[serde(default)]
    left_neighbor: Option<String>,
    #[serde(default)]
    right_neighbor: Option<String>,
    #[serde(default)]
    successors: Vec<String>,
}

fn default_crossable() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct BoundaryFile {
    points: Vec<[f64; 2]>,
    #[serde(default = "default_crossable")]
    crossable: bool,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    map_id: String,
    lanes: Vec<LaneFile>,
    #[serde(default)]
    road_edges: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    lane_boundaries: Vec<BoundaryFile>,
}

fn to_polyline(pts: &[[f64; 2]]) -> Polyline {
    pts.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

fn from_polyline(pts: &[Vec2]) -> Vec<[f64; 2]> {
    pts.iter().map(|p| [p.x, p.y]).collect()
}

/// Read and validate a map file.
pub fn load_map(path: impl AsRef<Path>) -> Result<MapBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MapBundle::from_json(&text)
}

impl MapBundle {
    pub fn from_json(text: &str) -> Result<MapBundle> {
        let file: MapFile = serde_json::from_str(text).map_err(|e| Error::parse("map", e))?;
        let map = MapBundle {
            map_id: file.map_id,
            lanes: file
                .lanes
                .into_iter()
                .map(|l| Lane {
                    id: l.id,
                    centerline: to_polyline(&l.centerline),
                    left_neighbor: l.left_neighbor,
                    right_neighbor: l.right_neighbor,
                    successors: l.successors,
                })
                .collect(),
            road_edges: file.road_edges.iter().map(|p| to_polyline(p)).collect(),
            lane_boundaries: file
                .lane_boundaries
                .into_iter()
                .map(|b| LaneBoundary {
                    points: to_polyline(&b.points),
                    crossable: b.crossable,
                })
                .collect(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        let file = MapFile {
            map_id: self.map_id.clone(),
            lanes: self
                .lanes
                .iter()
                .map(|l| LaneFile {
                    id: l.id.clone(),
                    centerline: from_polyline(&l.centerline),
                    left_neighbor: l.left_neighbor.clone(),
                    right_neighbor: l.right_neighbor.clone(),
                    successors: l.successors.clone(),
                })
                .collect(),
            road_edges: self.road_edges.iter().map(|p| from_polyline(p)).collect(),
            lane_boundaries: self
                .lane_boundaries
                .iter()
                .map(|b| BoundaryFile {
                    points: from_polyline(&b.points),
                    crossable: b.crossable,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("map serialization cannot fail")
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.lanes.iter().position(|l| l.id == id)
    }

    /// Check the structural invariants: centerlines with at least two finite,
    /// non-coincident points, resolvable references and symmetric adjacency.
    pub fn validate(&self) -> Result<()> {
        let mut ids: HashMap<&str, usize> = HashMap::new();
        for (i, lane) in self.lanes.iter().enumerate() {
            if ids.insert(lane.id.as_str(), i).is_some() {
                return Err(Error::parse("map", format!("duplicate lane id {}", lane.id)));
            }
        }
        for lane in &self.lanes {
            check_polyline(&lane.id, &lane.centerline)?;
            let refs = lane.left_neighbor.iter().chain(lane.right_neighbor.iter()).chain(lane.successors.iter());
            for r in refs {
                if !ids.contains_key(r.as_str()) {
                    return Err(Error::DanglingReference {
                        lane: lane.id.clone(),
                        target: r.clone(),
                    });
                }
            }
        }
        for lane in &self.lanes {
            if let Some(left) = &lane.left_neighbor {
                let other = &self.lanes[ids[left.as_str()]];
                if other.right_neighbor.as_deref() != Some(lane.id.as_str()) {
                    return Err(Error::AsymmetricAdjacency {
                        a: lane.id.clone(),
                        b: left.clone(),
                    });
                }
            }
            if let Some(right) = &lane.right_neighbor {
                let other = &self.lanes[ids[right.as_str()]];
                if other.left_neighbor.as_deref() != Some(lane.id.as_str()) {
                    return Err(Error::AsymmetricAdjacency {
                        a: lane.id.clone(),
                        b: right.clone(),
                    });
                }
            }
        }
        for (k, edge) in self.road_edges.iter().enumerate() {
            check_polyline(&format!("road_edge[{k}]"), edge)?;
        }
        for (k, b) in self.lane_boundaries.iter().enumerate() {
            check_polyline(&format!("lane_boundary[{k}]"), &b.points)?;
        }
        Ok(())
    }

    /// Apply a rigid transform (rotation about the origin, then translation).
    pub fn transformed(&self, rotation: f64, translation: Vec2) -> MapBundle {
        let tf = |p: &Vec2| p.rotate(rotation) + translation;
        let tp = |pl: &Polyline| pl.iter().map(tf).collect::<Polyline>();
        MapBundle {
            map_id: self.map_id.clone(),
            lanes: self
                .lanes
                .iter()
                .map(|l| Lane {
                    centerline: tp(&l.centerline),
                    ..l.clone()
                })
                .collect(),
            road_edges: self.road_edges.iter().map(tp).collect(),
            lane_boundaries: self
                .lane_boundaries
                .iter()
                .map(|b| LaneBoundary {
                    points: tp(&b.points),
                    crossable: b.crossable,
                })
                .collect(),
        }
    }

    /// A straight multi-lane highway along +x starting at the origin. Lane 0
    /// is the rightmost lane centered on y = 0; lane k sits `k * lane_width`
    /// to the left. Interior boundaries are crossable dashed lines.
    pub fn straight_highway(map_id: &str, lanes: usize, length: f64, lane_width: f64) -> MapBundle {
        assert!(lanes >= 1 && length > 0.0 && lane_width > 0.0);
        let id = |k: usize| format!("L{k}");
        let mut out = Vec::with_capacity(lanes);
        for k in 0..lanes {
            let y = k as f64 * lane_width;
            out.push(Lane {
                id: id(k),
                centerline: vec![Vec2::new(0.0, y), Vec2::new(length, y)],
                left_neighbor: (k + 1 < lanes).then(|| id(k + 1)),
                right_neighbor: (k > 0).then(|| id(k - 1)),
                successors: Vec::new(),
            });
        }
        let lo = -0.5 * lane_width;
        let hi = (lanes as f64 - 0.5) * lane_width;
        let boundaries = (1..lanes)
            .map(|k| {
                let y = lo + k as f64 * lane_width;
                LaneBoundary {
                    points: vec![Vec2::new(0.0, y), Vec2::new(length, y)],
                    crossable: true,
                }
            })
            .collect();
        MapBundle {
            map_id: map_id.to_string(),
            lanes: out,
            road_edges: vec![
                vec![Vec2::new(0.0, lo), Vec2::new(length, lo)],
                vec![Vec2::new(0.0, hi), Vec2::new(length, hi)],
            ],
            lane_boundaries: boundaries,
        }
    }
}

fn check_polyline(name: &str, pts: &[Vec2]) -> Result<()> {
    if pts.len() < 2 {
        return Err(Error::DegeneratePolyline {
            lane: name.to_string(),
            reason: format!("{} point(s), need at least 2", pts.len()),
        });
    }
    for (i, p) in pts.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::DegeneratePolyline {
                lane: name.to_string(),
                reason: format!("point {i} is not finite"),
            });
        }
    }
    for (i, w) in pts.windows(2).enumerate() {
        if w[0] == w[1] {
            return Err(Error::DegeneratePolyline {
                lane: name.to_string(),
                reason: format!("points {i} and {} coincide", i + 1),
            });
        }
    }
    Ok(())
}

/// Total length of a polyline.
pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Resample a polyline at fixed arclength spacing. Returns positions with
/// their arclengths; the final point is kept when the last segment is
/// shorter than the spacing.
pub fn resample_polyline(pts: &[Vec2], spacing: f64) -> Vec<(Vec2, f64)> {
    let total = polyline_length(pts);
    let count = (total / spacing + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(count + 2);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    for k in 0..=count {
        let s = (k as f64 * spacing).min(total);
        while seg + 1 < pts.len() - 1 && seg_start + pts[seg].dist(pts[seg + 1]) < s {
            seg_start += pts[seg].dist(pts[seg + 1]);
            seg += 1;
        }
        let len = pts[seg].dist(pts[seg + 1]);
        let t = ((s - seg_start) / len).clamp(0.0, 1.0);
        out.push((pts[seg] + (pts[seg + 1] - pts[seg]) * t, s));
    }
    let last_s = out.last().map(|p| p.1).unwrap_or(0.0);
    if total - last_s > 1e-6 {
        out.push((*pts.last().unwrap(), total));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LANES: &str = r#"{
        "map_id": "two",
        "lanes": [
            {"id": "A", "centerline": [[0,0],[100,0]], "left_neighbor": "B", "right_neighbor": null, "successors": []},
            {"id": "B", "centerline": [[0,3.5],[100,3.5]], "left_neighbor": null, "right_neighbor": "A", "successors": []}
        ],
        "road_edges": [[[0,-1.75],[100,-1.75]], [[0,5.25],[100,5.25]]],
        "lane_boundaries": [{"points": [[0,1.75],[100,1.75]]}]
    }"#;

    #[test]
    fn loads_two_lane_fixture() {
        let m = MapBundle::from_json(TWO_LANES).unwrap();
        assert_eq!(m.lanes.len(), 2);
        assert_eq!(m.lanes[0].left_neighbor.as_deref(), Some("B"));
        assert_eq!(m.lanes[1].right_neighbor.as_deref(), Some("A"));
        assert!(m.lane_boundaries[0].crossable, "crossable defaults to true");
    }

    #[test]
    fn dangling_successor_is_named() {
        let text = TWO_LANES.replace(
            r#""successors": []}
        ]"#,
            r#""successors": ["L9"]}
        ]"#,
        );
        let err = MapBundle::from_json(&text).unwrap_err();
        match err {
            Error::DanglingReference { target, .. } => assert_eq!(target, "L9"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn single_point_centerline_rejected() {
        let text = TWO_LANES.replace("[[0,0],[100,0]]", "[[0,0]]");
        match MapBundle::from_json(&text).unwrap_err() {
            Error::DegeneratePolyline { lane, .. } => assert_eq!(lane, "A"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn coincident_points_rejected() {
        let text = TWO_LANES.replace("[[0,0],[100,0]]", "[[0,0],[0,0],[100,0]]");
        assert!(matches!(MapBundle::from_json(&text), Err(Error::DegeneratePolyline { .. })));
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let text = TWO_LANES.replace(r#""right_neighbor": "A""#, r#""right_neighbor": null"#);
        assert!(matches!(MapBundle::from_json(&text), Err(Error::AsymmetricAdjacency { .. })));
    }

    #[test]
    fn json_round_trip() {
        let m = MapBundle::straight_highway("h", 3, 300.0, 3.5);
        let back = MapBundle::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn resample_keeps_short_tail() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.5, 0.0)];
        let r = resample_polyline(&pts, 1.0);
        assert_eq!(r.len(), 12);
        assert!((r[11].1 - 10.5).abs() < 1e-12);
        assert!((r[10].1 - 10.0).abs() < 1e-12);
    }
}
