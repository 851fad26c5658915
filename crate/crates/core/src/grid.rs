//! Masked uniform grid over the projected domain.
//!
//! Nodes strictly inside the planar contour (even-odd rule) are INTERIOR.
//! Nodes on the polyline, and outside nodes with an interior 4-neighbour,
//! are BOUNDARY; everything else is EXTERIOR. Boundary nodes carry the
//! closest point on the contour, its outward normal and its arc-length
//! parameter.

use nalgebra::Vector2;
use serde::Serialize;

use crate::contour::PlanarContour;
use crate::geom;
use crate::{Error, Result};

/// Extra node layers around the contour's bounding box. The biharmonic
/// stencil reaches two nodes past the boundary ring.
pub const PADDING: usize = 3;

const ON_CURVE_REL: f64 = 1e-9;
const NONE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum NodeClass {
    Exterior,
    Boundary,
    Interior,
}

impl NodeClass {
    pub fn code(self) -> u8 {
        match self {
            NodeClass::Exterior => 0,
            NodeClass::Boundary => 1,
            NodeClass::Interior => 2,
        }
    }

    pub fn is_active(self) -> bool {
        self != NodeClass::Exterior
    }
}

/// Closest point on the contour polyline.
#[derive(Clone, Copy, Debug)]
pub struct CurvePoint {
    pub segment: usize,
    pub fraction: f64,
    pub point: Vector2<f64>,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct GridDomain {
    origin: Vector2<f64>,
    spacing: f64,
    nx: usize,
    ny: usize,
    classes: Vec<NodeClass>,
    boundary: Vec<usize>,
    boundary_slot: Vec<usize>,
    closest: Vec<CurvePoint>,
    normals: Vec<Vector2<f64>>,
    params: Vec<f64>,
    polygon: Vec<Vector2<f64>>,
    cumulative: Vec<f64>,
    orientation: f64,
}

/// Classifies nodes of a grid covering the contour's bounding box with
/// `resolution` nodes along the longer axis.
pub fn build_grid(pc: &PlanarContour, resolution: usize) -> Result<GridDomain> {
    if resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution} below minimum 16"
        )));
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in &pc.points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let spacing = extent.max() / (resolution - 1) as f64;
    if spacing <= 0.0 || !spacing.is_finite() {
        return Err(Error::DomainTooThin);
    }
    let count = |w: f64| ((w / spacing) - 1e-9).ceil().max(0.0) as usize + 1;
    let nx = count(extent.x) + 2 * PADDING;
    let ny = count(extent.y) + 2 * PADDING;
    let origin = lo - Vector2::repeat(PADDING as f64 * spacing);

    let mut g = GridDomain {
        origin,
        spacing,
        nx,
        ny,
        classes: vec![NodeClass::Exterior; nx * ny],
        boundary: Vec::new(),
        boundary_slot: vec![NONE; nx * ny],
        closest: Vec::new(),
        normals: Vec::new(),
        params: Vec::new(),
        polygon: pc.points.clone(),
        cumulative: pc.cumulative.clone(),
        orientation: pc.signed_area2().signum(),
    };

    let mut active = vec![false; nx * ny];
    let mut on_curve = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = g.index(i, j);
            let p = g.position(i, j);
            if g.closest_point(p).distance <= ON_CURVE_REL * spacing {
                on_curve[k] = true;
                active[k] = true;
            } else {
                active[k] = geom::point_in_polygon(p, &g.polygon);
            }
        }
    }

    for k in 0..nx * ny {
        if active[k] && !on_curve[k] {
            g.classes[k] = NodeClass::Interior;
        }
    }
    // the polyline crosses every edge from an interior node to a
    // non-interior one, so this ring lies within one cell of the curve
    for j in 0..ny {
        for i in 0..nx {
            let k = g.index(i, j);
            if g.classes[k] == NodeClass::Exterior
                && g.neighbors4(i, j)
                    .any(|(a, b)| g.classes[g.index(a, b)] == NodeClass::Interior)
            {
                g.classes[k] = NodeClass::Boundary;
            }
        }
    }
    if !g.classes.contains(&NodeClass::Interior) {
        return Err(Error::DomainTooThin);
    }

    for k in 0..nx * ny {
        if g.classes[k] == NodeClass::Boundary {
            g.boundary_slot[k] = g.boundary.len();
            g.boundary.push(k);
            let (i, j) = g.coords(k);
            let cp = g.closest_point(g.position(i, j));
            g.closest.push(cp);
        }
    }
    Ok(g)
}

/// Populates outward unit normals at boundary nodes from the closest
/// contour point (averaged over the two segments at a vertex).
pub fn boundary_normals(mut g: GridDomain) -> GridDomain {
    g.normals = g.closest.iter().map(|cp| g.curve_normal(cp)).collect();
    g
}

/// Populates the arc-length parameter of each boundary node's closest
/// contour point.
pub fn map_boundary_to_param(mut g: GridDomain, pc: &PlanarContour) -> GridDomain {
    g.params = g
        .closest
        .iter()
        .map(|cp| {
            let seg_len = pc.cumulative[cp.segment + 1] - pc.cumulative[cp.segment];
            let t = pc.cumulative[cp.segment] + cp.fraction * seg_len;
            t.rem_euclid(pc.total_length())
        })
        .collect();
    g
}

impl GridDomain {
    /// Classified grid with normals and parameters populated.
    pub fn from_contour(pc: &PlanarContour, resolution: usize) -> Result<Self> {
        let g = build_grid(pc, resolution)?;
        Ok(map_boundary_to_param(boundary_normals(g), pc))
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn position(&self, i: usize, j: usize) -> Vector2<f64> {
        self.origin + Vector2::new(i as f64, j as f64) * self.spacing
    }

    pub fn node_position(&self, k: usize) -> Vector2<f64> {
        let (i, j) = self.coords(k);
        self.position(i, j)
    }

    #[inline]
    pub fn class(&self, k: usize) -> NodeClass {
        self.classes[k]
    }

    pub fn class_at(&self, i: isize, j: isize) -> NodeClass {
        if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
            NodeClass::Exterior
        } else {
            self.classes[self.index(i as usize, j as usize)]
        }
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    #[inline]
    pub fn is_active(&self, k: usize) -> bool {
        self.classes[k].is_active()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| self.classes[k] == NodeClass::Interior)
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| self.classes[k].is_active())
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes().count()
    }

    /// Boundary node indices in row-major order.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    /// Position of node `k` in [`Self::boundary_nodes`], if it is a boundary
    /// node.
    pub fn boundary_slot(&self, k: usize) -> Option<usize> {
        match self.boundary_slot[k] {
            NONE => None,
            s => Some(s),
        }
    }

    pub fn boundary_closest(&self) -> &[CurvePoint] {
        &self.closest
    }

    /// Outward normals, one per boundary node (empty until populated).
    pub fn normals(&self) -> &[Vector2<f64>] {
        &self.normals
    }

    /// Contour parameters, one per boundary node (empty until populated).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn require_populated(&self) -> Result<()> {
        if self.normals.len() != self.boundary.len() {
            return Err(Error::GridIncomplete("normals"));
        }
        if self.params.len() != self.boundary.len() {
            return Err(Error::GridIncomplete("parameters"));
        }
        Ok(())
    }

    pub fn polygon(&self) -> &[Vector2<f64>] {
        &self.polygon
    }

    pub fn neighbors4(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        const OFFS: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        OFFS.iter().filter_map(move |&(di, dj)| {
            let a = i as isize + di;
            let b = j as isize + dj;
            (a >= 0 && b >= 0 && (a as usize) < self.nx && (b as usize) < self.ny)
                .then_some((a as usize, b as usize))
        })
    }

    pub fn neighbors8(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        const OFFS: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        OFFS.iter().filter_map(move |&(di, dj)| {
            let a = i as isize + di;
            let b = j as isize + dj;
            (a >= 0 && b >= 0 && (a as usize) < self.nx && (b as usize) < self.ny)
                .then_some((a as usize, b as usize))
        })
    }

    /// Closest point on the contour polyline (brute force over segments).
    pub fn closest_point(&self, p: Vector2<f64>) -> CurvePoint {
        let n = self.polygon.len();
        let mut best = CurvePoint {
            segment: 0,
            fraction: 0.0,
            point: self.polygon[0],
            distance: f64::INFINITY,
        };
        for s in 0..n {
            let (frac, q) = geom::closest_on_segment2(p, self.polygon[s], self.polygon[(s + 1) % n]);
            let d = (p - q).norm();
            if d < best.distance {
                best = CurvePoint {
                    segment: s,
                    fraction: frac,
                    point: q,
                    distance: d,
                };
            }
        }
        best
    }

    /// First point where the segment from `p` to `q` meets the contour, as
    /// the fraction along `p → q` and the contour point.
    pub fn first_crossing(&self, p: Vector2<f64>, q: Vector2<f64>) -> Option<(f64, CurvePoint)> {
        let n = self.polygon.len();
        let mut best: Option<(f64, CurvePoint)> = None;
        for s in 0..n {
            let (a, b) = (self.polygon[s], self.polygon[(s + 1) % n]);
            if let Some((t, u)) = geom::segment_crossing(p, q, a, b) {
                if best.as_ref().is_none_or(|(bt, _)| t < *bt) {
                    let point = a + (b - a) * u;
                    let cp = CurvePoint {
                        segment: s,
                        fraction: u,
                        point,
                        distance: (point - p).norm(),
                    };
                    best = Some((t, cp));
                }
            }
        }
        best
    }

    fn segment_normal(&self, s: usize) -> Vector2<f64> {
        let n = self.polygon.len();
        let d = self.polygon[(s + 1) % n] - self.polygon[s];
        Vector2::new(d.y, -d.x).normalize() * self.orientation
    }

    /// Arc-length parameter of a contour point.
    pub fn curve_param(&self, cp: &CurvePoint) -> f64 {
        let seg_len = self.cumulative[cp.segment + 1] - self.cumulative[cp.segment];
        let total = self.cumulative[self.polygon.len()];
        (self.cumulative[cp.segment] + cp.fraction * seg_len).rem_euclid(total)
    }

    /// Outward unit normal at a contour point; vertex points average the
    /// two incident segment normals.
    pub fn curve_normal(&self, cp: &CurvePoint) -> Vector2<f64> {
        let n = self.polygon.len();
        let here = self.segment_normal(cp.segment);
        let eps = 1e-9;
        let other = if cp.fraction <= eps {
            Some(self.segment_normal((cp.segment + n - 1) % n))
        } else if cp.fraction >= 1.0 - eps {
            Some(self.segment_normal((cp.segment + 1) % n))
        } else {
            None
        };
        match other {
            Some(o) => {
                let sum = here + o;
                if sum.norm() > 1e-12 {
                    sum.normalize()
                } else {
                    here
                }
            }
            None => here,
        }
    }

    /// Bilinear interpolation weights for `p` from the nearest grid cell
    /// whose four corners are active. Points outside that cell are
    /// extrapolated. `None` when no such cell lies within two cells.
    pub fn cell_stencil(&self, p: Vector2<f64>) -> Option<[(usize, f64); 4]> {
        let mut q = (p - self.origin) / self.spacing;
        for c in q.iter_mut() {
            if (*c - c.round()).abs() < 1e-9 {
                *c = c.round();
            }
        }
        let ci = q.x.floor() as isize;
        let cj = q.y.floor() as isize;
        let mut best: Option<(f64, isize, isize)> = None;
        for dj in -2..=2isize {
            for di in -2..=2isize {
                let (a, b) = (ci + di, cj + dj);
                let corners_active = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .all(|&(x, y)| self.class_at(a + x, b + y).is_active());
                if !corners_active {
                    continue;
                }
                let dx = (a as f64 - q.x).max(q.x - (a + 1) as f64).max(0.0);
                let dy = (b as f64 - q.y).max(q.y - (b + 1) as f64).max(0.0);
                let d = dx * dx + dy * dy;
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best?;
        let sx = q.x - a as f64;
        let sy = q.y - b as f64;
        let (a, b) = (a as usize, b as usize);
        Some([
            (self.index(a, b), (1.0 - sx) * (1.0 - sy)),
            (self.index(a + 1, b), sx * (1.0 - sy)),
            (self.index(a, b + 1), (1.0 - sx) * sy),
            (self.index(a + 1, b + 1), sx * sy),
        ])
    }

    /// Contour length apportioned to boundary nodes: each piece of the
    /// polyline (subdivided finer than the grid) is credited to its nearest
    /// boundary node. Sums to the contour length.
    pub fn boundary_lengths(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.boundary.len()];
        let n = self.polygon.len();
        for s in 0..n {
            let a = self.polygon[s];
            let b = self.polygon[(s + 1) % n];
            let len = (b - a).norm();
            let pieces = ((8.0 * len / self.spacing).ceil() as usize).max(1);
            for k in 0..pieces {
                let mid = a + (b - a) * ((k as f64 + 0.5) / pieces as f64);
                if let Some(slot) = self.nearest_boundary(mid) {
                    out[slot] += len / pieces as f64;
                }
            }
        }
        out
    }

    fn nearest_boundary(&self, p: Vector2<f64>) -> Option<usize> {
        let q = (p - self.origin) / self.spacing;
        let (ci, cj) = (q.x.round() as isize, q.y.round() as isize);
        let mut best: Option<(f64, usize)> = None;
        for r in [3isize, 8] {
            for dj in -r..=r {
                for di in -r..=r {
                    let (a, b) = (ci + di, cj + dj);
                    if self.class_at(a, b) != NodeClass::Boundary {
                        continue;
                    }
                    let k = self.index(a as usize, b as usize);
                    let d = (self.node_position(k) - p).norm_squared();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, self.boundary_slot[k]));
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        best.map(|(_, s)| s).or_else(|| {
            self.boundary
                .iter()
                .enumerate()
                .min_by(|x, y| {
                    let dx = (self.node_position(*x.1) - p).norm_squared();
                    let dy = (self.node_position(*y.1) - p).norm_squared();
                    dx.total_cmp(&dy)
                })
                .map(|(s, _)| s)
        })
    }

    /// Debug dump: origin, spacing, dims and row-major class codes
    /// (0 exterior, 1 boundary, 2 interior).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "origin": [self.origin.x, self.origin.y],
            "spacing": self.spacing,
            "dims": [self.nx, self.ny],
            "classes": self.classes.iter().map(|c| c.code()).collect::<Vec<_>>(),
        })
    }
}
