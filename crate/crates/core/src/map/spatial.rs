//! Uniform-grid spatial indices for exact nearest and radius queries.

use crate::geometry::{OrientedBox, Vec2};

/// Bucket grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointGrid {
    origin: Vec2,
    cell: f64,
    nx: i64,
    ny: i64,
    cells: Vec<Vec<u32>>,
    points: Vec<Vec2>,
}

impl PointGrid {
    pub fn new(points: Vec<Vec2>, cell: f64) -> Self {
        assert!(cell > 0.0);
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for p in &points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if points.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::ZERO;
        }
        let nx = ((hi.x - lo.x) / cell).floor() as i64 + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as i64 + 1;
        let mut cells = vec![Vec::new(); (nx * ny) as usize];
        let mut grid = PointGrid {
            origin: lo,
            cell,
            nx,
            ny,
            cells: Vec::new(),
            points: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = grid.cell_of(*p);
            cells[(cy * nx + cx) as usize].push(i as u32);
        }
        grid.cells = cells;
        grid.points = points;
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    #[inline]
    fn cell_of(&self, p: Vec2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
        )
    }

    /// Exact nearest point; ties go to the lowest index.
    pub fn nearest(&self, p: Vec2) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let (qx, qy) = self.cell_of(p);
        let max_r = [qx, self.nx - 1 - qx, qy, self.ny - 1 - qy].iter().map(|v| v.abs()).max().unwrap() + 1;
        let mut best: Option<(f64, usize)> = None;
        let mut r = 0i64;
        loop {
            for cy in (qy - r)..=(qy + r) {
                if cy < 0 || cy >= self.ny {
                    continue;
                }
                let on_edge_row = cy == qy - r || cy == qy + r;
                let mut cx = qx - r;
                while cx <= qx + r {
                    if cx >= 0 && cx < self.nx {
                        for &i in &self.cells[(cy * self.nx + cx) as usize] {
                            let d = self.points[i as usize].dist_sq(p);
                            let i = i as usize;
                            best = match best {
                                Some((bd, bi)) if bd < d || (bd == d && bi < i) => Some((bd, bi)),
                                _ => Some((d, i)),
                            };
                        }
                    }
                    cx += if on_edge_row || r == 0 { 1 } else { 2 * r };
                }
            }
            // every unvisited point lies at least r * cell away
            if let Some((bd, _)) = best {
                let bound = r as f64 * self.cell;
                if bd < bound * bound {
                    break;
                }
            }
            if r > max_r {
                break;
            }
            r += 1;
        }
        best.map(|b| b.1)
    }

    /// Indices of all points within `radius` of `p` (inclusive), unordered.
    pub fn within(&self, p: Vec2, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.points.is_empty() {
            return;
        }
        let (x0, y0) = self.cell_of(Vec2::new(p.x - radius, p.y - radius));
        let (x1, y1) = self.cell_of(Vec2::new(p.x + radius, p.y + radius));
        let r2 = radius * radius;
        for cy in y0.max(0)..=y1.min(self.ny - 1) {
            for cx in x0.max(0)..=x1.min(self.nx - 1) {
                for &i in &self.cells[(cy * self.nx + cx) as usize] {
                    if self.points[i as usize].dist_sq(p) <= r2 {
                        out.push(i as usize);
                    }
                }
            }
        }
    }
}

/// Grid over polyline segments for box-crossing queries.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    origin: Vec2,
    cell: f64,
    nx: i64,
    ny: i64,
    cells: Vec<Vec<u32>>,
    segments: Vec<(Vec2, Vec2, u32)>,
}

impl SegmentIndex {
    /// Index every segment of the given polylines; a segment remembers the
    /// index of the polyline it came from.
    pub fn new<'a>(polylines: impl IntoIterator<Item = &'a [Vec2]>, cell: f64) -> Self {
        let mut segments = Vec::new();
        for (k, pl) in polylines.into_iter().enumerate() {
            for w in pl.windows(2) {
                segments.push((w[0], w[1], k as u32));
            }
        }
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for (a, b, _) in &segments {
            for p in [a, b] {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        if segments.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::ZERO;
        }
        let nx = ((hi.x - lo.x) / cell).floor() as i64 + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as i64 + 1;
        let mut cells = vec![Vec::new(); (nx * ny) as usize];
        for (i, (a, b, _)) in segments.iter().enumerate() {
            let cx0 = ((a.x.min(b.x) - lo.x) / cell).floor() as i64;
            let cx1 = ((a.x.max(b.x) - lo.x) / cell).floor() as i64;
            let cy0 = ((a.y.min(b.y) - lo.y) / cell).floor() as i64;
            let cy1 = ((a.y.max(b.y) - lo.y) / cell).floor() as i64;
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[(cy * nx + cx) as usize].push(i as u32);
                }
            }
        }
        SegmentIndex {
            origin: lo,
            cell,
            nx,
            ny,
            cells,
            segments,
        }
    }

    /// Whether any indexed segment passing `filter(polyline index)` touches the box.
    pub fn box_crosses(&self, b: &OrientedBox, filter: impl Fn(usize) -> bool) -> bool {
        if self.segments.is_empty() {
            return false;
        }
        let (lo, hi) = b.aabb();
        let cx0 = (((lo.x - self.origin.x) / self.cell).floor() as i64).max(0);
        let cx1 = (((hi.x - self.origin.x) / self.cell).floor() as i64).min(self.nx - 1);
        let cy0 = (((lo.y - self.origin.y) / self.cell).floor() as i64).max(0);
        let cy1 = (((hi.y - self.origin.y) / self.cell).floor() as i64).min(self.ny - 1);
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                for &s in &self.cells[(cy * self.nx + cx) as usize] {
                    let (a, c, k) = self.segments[s as usize];
                    if filter(k as usize) && b.intersects_segment(a, c) {
                        return true;
                    }
                }
            }
        }
        false
    }
}
