//! Input contour handling: loading, resampling, choosing a projection plane,
//! projecting, and deriving the Dirichlet data for the conformal factor.

use std::io::Read;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom;
use crate::{Error, Result};

pub const MIN_POINTS: usize = 8;

/// Coincidence threshold relative to the bounding-box diagonal.
const COINCIDENT_REL: f64 = 1e-12;
/// Contact threshold for the simplicity tests, relative to the diagonal.
const CONTACT_REL: f64 = 1e-12;

#[derive(Debug, Deserialize)]
struct ContourFile {
    points: Vec<[f64; 3]>,
    #[serde(default = "default_closed")]
    closed: bool,
}

fn default_closed() -> bool {
    true
}

/// Closed simple polyline in space.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour3D {
    points: Vec<Vector3<f64>>,
}

impl Contour3D {
    /// Validates and wraps a closed polyline. A trailing point equal to the
    /// first one is dropped.
    pub fn new(mut points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        if points.len() > 1 && points[0] == points[points.len() - 1] {
            points.pop();
        }
        if points.len() < MIN_POINTS {
            return Err(Error::TooFewPoints {
                found: points.len(),
                min: MIN_POINTS,
            });
        }
        let diag = bbox_diagonal(&points);
        let n = points.len();
        for i in 0..n {
            let j = (i + 1) % n;
            if (points[j] - points[i]).norm() <= COINCIDENT_REL * diag {
                return Err(Error::CoincidentPoints(i, j));
            }
        }
        let tol = CONTACT_REL * diag;
        let hits = geom::self_intersections(n, |i, j| {
            geom::segment_distance3(points[i], points[(i + 1) % n], points[j], points[(j + 1) % n]) <= tol
        });
        if !hits.is_empty() {
            return Err(Error::NotSimple(hits));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Always true: only closed contours are representable.
    pub fn closed(&self) -> bool {
        true
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Sum of squared distances of the points to the plane through `origin`
    /// with unit normal `normal`.
    pub fn plane_misfit(&self, origin: Vector3<f64>, normal: Vector3<f64>) -> f64 {
        self.points.iter().map(|p| (p - origin).dot(&normal).powi(2)).sum()
    }
}

/// Parses contour JSON: `{"points": [[x, y, z], ...], "closed": true}`.
pub fn load_contour<R: Read>(source: R) -> Result<Contour3D> {
    let file: ContourFile =
        serde_json::from_reader(source).map_err(|e| Error::Parse(e.to_string()))?;
    if !file.closed {
        return Err(Error::OpenContour);
    }
    let points = file
        .points
        .into_iter()
        .map(|[x, y, z]| Vector3::new(x, y, z))
        .collect();
    Contour3D::new(points)
}

/// `n` points at equal arc-length spacing along the closed polyline,
/// starting at the first input point.
pub fn resample_arclength(c: &Contour3D, n: usize) -> Result<Contour3D> {
    if n < MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "resample count {n} below minimum {MIN_POINTS}"
        )));
    }
    let pts = c.points();
    let cum = cumulative_lengths(pts);
    let total = cum[pts.len()];
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let t = total * k as f64 / n as f64;
        while seg + 1 < pts.len() && cum[seg + 1] <= t {
            seg += 1;
        }
        let a = pts[seg];
        let b = pts[(seg + 1) % pts.len()];
        let len = cum[seg + 1] - cum[seg];
        let s = if len > 0.0 { (t - cum[seg]) / len } else { 0.0 };
        out.push(a + (b - a) * s);
    }
    Contour3D::new(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneMode {
    #[default]
    Auto,
    Xy,
    Xz,
    Yz,
}

impl FromStr for PlaneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "xy" => Ok(Self::Xy),
            "xz" => Ok(Self::Xz),
            "yz" => Ok(Self::Yz),
            other => Err(Error::InvalidArgument(format!("unknown plane mode '{other}'"))),
        }
    }
}

/// Right-handed orthonormal frame of the projection plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionFrame {
    pub origin: Vector3<f64>,
    pub basis_u: Vector3<f64>,
    pub basis_v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl ProjectionFrame {
    /// Frame from a unit normal and an in-plane direction; `basis_v` is
    /// `normal × basis_u`.
    fn from_axes(origin: Vector3<f64>, basis_u: Vector3<f64>, normal: Vector3<f64>) -> Self {
        let basis_u = basis_u.normalize();
        let normal = normal.normalize();
        let basis_v = normal.cross(&basis_u);
        Self {
            origin,
            basis_u,
            basis_v,
            normal,
        }
    }

    /// Planar coordinates and height of a spatial point.
    pub fn coordinates(&self, p: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let d = p - self.origin;
        (
            Vector2::new(d.dot(&self.basis_u), d.dot(&self.basis_v)),
            d.dot(&self.normal),
        )
    }

    pub fn embed(&self, uv: Vector2<f64>, height: f64) -> Vector3<f64> {
        self.origin + self.basis_u * uv.x + self.basis_v * uv.y + self.normal * height
    }
}

/// Chooses the projection plane. `Auto` is the least-squares plane of the
/// points: centroid origin, normal along the least-variance direction.
pub fn fit_projection_frame(c: &Contour3D, mode: PlaneMode) -> Result<ProjectionFrame> {
    let origin = c.centroid();
    let (u, n) = match mode {
        PlaneMode::Xy => (Vector3::x(), Vector3::z()),
        PlaneMode::Xz => (Vector3::x(), -Vector3::y()),
        PlaneMode::Yz => (Vector3::y(), Vector3::x()),
        PlaneMode::Auto => {
            let mut cov = Matrix3::zeros();
            for p in c.points() {
                let d = p - origin;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let (lo, mid, hi) = (order[0], order[1], order[2]);
            let scale = eig.eigenvalues[hi].abs().max(f64::MIN_POSITIVE);
            if eig.eigenvalues[mid] <= 1e-12 * scale {
                return Err(Error::DegeneratePlane);
            }
            let normal = canonical_sign(eig.eigenvectors.column(lo).into_owned());
            let major = canonical_sign(eig.eigenvectors.column(hi).into_owned());
            // re-orthogonalize against round-off in the eigensolver
            let major = (major - normal * major.dot(&normal)).normalize();
            (major, normal)
        }
    };
    Ok(ProjectionFrame::from_axes(origin, u, n))
}

/// Flips `v` so that its largest-magnitude component is positive.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphicalityReport {
    pub ok: bool,
    /// Pairs of projected segments (by start index) that touch or collapse.
    pub violations: Vec<(usize, usize)>,
}

/// Reports whether the projected polyline is simple.
pub fn check_graphicality(c: &Contour3D, frame: &ProjectionFrame) -> GraphicalityReport {
    let pts: Vec<Vector2<f64>> = c.points().iter().map(|p| frame.coordinates(p).0).collect();
    let n = pts.len();
    let diag = bbox_diagonal(c.points());
    let tol = CONTACT_REL * diag;
    let mut violations: Vec<(usize, usize)> = (0..n)
        .filter(|&i| (pts[(i + 1) % n] - pts[i]).norm() <= tol)
        .map(|i| (i, i))
        .collect();
    if violations.len() == n {
        return GraphicalityReport { ok: false, violations };
    }
    violations.extend(geom::self_intersections(n, |i, j| {
        geom::segments_intersect2(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n], tol)
    }));
    // a fold-back onto the previous segment also breaks injectivity
    for i in 0..n {
        let a = pts[(i + n - 1) % n];
        let b = pts[i];
        let c2 = pts[(i + 1) % n];
        let (d0, d1) = (b - a, c2 - b);
        if geom::cross2(d0, d1).abs() <= tol * (d0.norm() + d1.norm()) && d0.dot(&d1) < 0.0 {
            violations.push(((i + n - 1) % n, i));
        }
    }
    GraphicalityReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Projected contour: planar points, heights along the frame normal and
/// cumulative planar arc length (`n + 1` entries, the last one closing the
/// loop at `L`).
#[derive(Clone, Debug)]
pub struct PlanarContour {
    pub points: Vec<Vector2<f64>>,
    pub heights: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl PlanarContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.cumulative[self.points.len()]
    }

    /// Locates parameter `t` (taken modulo `L`) as a segment index and a
    /// fraction within it.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.points.len();
        let len = self.total_length();
        let t = t.rem_euclid(len);
        let seg = match self.cumulative.binary_search_by(|c| c.total_cmp(&t)) {
            Ok(k) => k.min(n - 1),
            Err(k) => k.saturating_sub(1).min(n - 1),
        };
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let s = if seg_len > 0.0 {
            ((t - self.cumulative[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (seg, s)
    }

    pub fn point_at(&self, t: f64) -> Vector2<f64> {
        let (k, s) = self.locate(t);
        let n = self.points.len();
        self.points[k] + (self.points[(k + 1) % n] - self.points[k]) * s
    }

    /// Contour height at planar parameter `t`, linear along each segment.
    pub fn height_at(&self, t: f64) -> f64 {
        let (k, s) = self.locate(t);
        let n = self.points.len();
        self.heights[k] + (self.heights[(k + 1) % n] - self.heights[k]) * s
    }

    /// Twice the signed enclosed area; positive for counterclockwise order.
    pub fn signed_area2(&self) -> f64 {
        geom::signed_area2(&self.points)
    }
}

/// Projects the contour into the frame's plane. Fails unless the projection
/// is one-to-one.
pub fn project(c: &Contour3D, frame: &ProjectionFrame) -> Result<PlanarContour> {
    let report = check_graphicality(c, frame);
    if !report.ok {
        return Err(Error::NotGraphical(report.violations));
    }
    let (points, heights): (Vec<_>, Vec<_>) = c.points().iter().map(|p| frame.coordinates(p)).unzip();
    let cumulative = cumulative_lengths2(&points);
    Ok(PlanarContour {
        points,
        heights,
        cumulative,
    })
}

/// Dirichlet data for the conformal factor, sampled uniformly in planar arc
/// length: `s(t)` is the ratio of spatial to planar speed of the lifted
/// curve, and the boundary value is `½ log s(t)`.
#[derive(Clone, Debug)]
pub struct BoundaryParam {
    pub total_length: f64,
    pub params: Vec<f64>,
    pub stretch: Vec<f64>,
    pub dirichlet: Vec<f64>,
}

impl BoundaryParam {
    /// Periodic linear interpolation of the Dirichlet values.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.params.len();
        let step = self.total_length / n as f64;
        let x = t.rem_euclid(self.total_length) / step;
        let k = (x.floor() as usize).min(n - 1);
        let s = x - k as f64;
        self.dirichlet[k] * (1.0 - s) + self.dirichlet[(k + 1) % n] * s
    }

    pub fn max_abs(&self) -> f64 {
        self.dirichlet.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// The same data multiplied by `factor` (used for linearization studies).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.dirichlet.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

pub fn dirichlet_data(pc: &PlanarContour, c: &Contour3D, n_samples: usize) -> Result<BoundaryParam> {
    if pc.len() != c.len() {
        return Err(Error::Mismatch {
            planar: pc.len(),
            spatial: c.len(),
        });
    }
    if n_samples < MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "sample count {n_samples} below minimum {MIN_POINTS}"
        )));
    }
    let total = pc.total_length();
    let step = total / n_samples as f64;
    let spatial = c.points();
    let n = c.len();
    // a polyline's speed ratio is constant per segment; taken at segment
    // midpoints and interpolated it is second order for the sampled curve
    let planar_len: Vec<f64> = (0..n).map(|k| pc.cumulative[k + 1] - pc.cumulative[k]).collect();
    let ratio: Vec<f64> = (0..n)
        .map(|k| (spatial[(k + 1) % n] - spatial[k]).norm() / planar_len[k])
        .collect();
    let mut params = Vec::with_capacity(n_samples);
    let mut stretch = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = step * i as f64;
        let (k, s) = pc.locate(t);
        let (a, b, w) = if s >= 0.5 {
            let b = (k + 1) % n;
            (k, b, (s - 0.5) * planar_len[k] / (0.5 * (planar_len[k] + planar_len[b])))
        } else {
            let a = (k + n - 1) % n;
            (a, k, (0.5 * planar_len[a] + s * planar_len[k]) / (0.5 * (planar_len[a] + planar_len[k])))
        };
        params.push(t);
        stretch.push(ratio[a] * (1.0 - w) + ratio[b] * w);
    }
    let dirichlet = stretch.iter().map(|s| 0.5 * s.ln()).collect();
    Ok(BoundaryParam {
        total_length: total,
        params,
        stretch,
        dirichlet,
    })
}

pub(crate) fn cumulative_lengths(points: &[Vector3<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for i in 0..n {
        acc += (points[(i + 1) % n] - points[i]).norm();
        cum.push(acc);
    }
    cum
}

fn cumulative_lengths2(points: &[Vector2<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for i in 0..n {
        acc += (points[(i + 1) % n] - points[i]).norm();
        cum.push(acc);
    }
    cum
}

fn polyline_length(points: &[Vector3<f64>]) -> f64 {
    cumulative_lengths(points)[points.len()]
}

fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}
