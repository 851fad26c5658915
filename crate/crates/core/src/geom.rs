//! Small planar and spatial geometry kernels shared by the contour and grid
//! modules.

use nalgebra::{Vector2, Vector3};

pub(crate) fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Twice the signed area of a closed polygon (positive when counterclockwise).
pub(crate) fn signed_area2(points: &[Vector2<f64>]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| cross2(points[i], points[(i + 1) % n]))
        .sum()
}

/// Closest point on segment `[a, b]` to `p`, returned as the segment
/// fraction in `[0, 1]` and the point itself.
pub(crate) fn closest_on_segment2(
    p: Vector2<f64>,
    a: Vector2<f64>,
    b: Vector2<f64>,
) -> (f64, Vector2<f64>) {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (0.0, a);
    }
    let s = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    (s, a + d * s)
}

/// Whether closed segments `[p1, p2]` and `[q1, q2]` share a point, with
/// `tol` an absolute distance under which near-touching counts as contact.
pub(crate) fn segments_intersect2(
    p1: Vector2<f64>,
    p2: Vector2<f64>,
    q1: Vector2<f64>,
    q2: Vector2<f64>,
    tol: f64,
) -> bool {
    segment_distance2(p1, p2, q1, q2) <= tol
}

/// Proper crossing of segment `[p, q]` with segment `[a, b]`, as the
/// fractions along each segment.
pub(crate) fn segment_crossing(
    p: Vector2<f64>,
    q: Vector2<f64>,
    a: Vector2<f64>,
    b: Vector2<f64>,
) -> Option<(f64, f64)> {
    let r = q - p;
    let s = b - a;
    let denom = cross2(r, s);
    if denom == 0.0 {
        return None;
    }
    let t = cross2(a - p, s) / denom;
    let u = cross2(a - p, r) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some((t, u))
}

fn segment_distance2(p1: Vector2<f64>, p2: Vector2<f64>, q1: Vector2<f64>, q2: Vector2<f64>) -> f64 {
    let r = p2 - p1;
    let s = q2 - q1;
    let denom = cross2(r, s);
    if denom != 0.0 {
        let t = cross2(q1 - p1, s) / denom;
        let u = cross2(q1 - p1, r) / denom;
        if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
            return 0.0;
        }
    }
    let d1 = (closest_on_segment2(p1, q1, q2).1 - p1).norm();
    let d2 = (closest_on_segment2(p2, q1, q2).1 - p2).norm();
    let d3 = (closest_on_segment2(q1, p1, p2).1 - q1).norm();
    let d4 = (closest_on_segment2(q2, p1, p2).1 - q2).norm();
    d1.min(d2).min(d3).min(d4)
}

/// Minimum distance between spatial segments `[p1, p2]` and `[q1, q2]`.
pub(crate) fn segment_distance3(
    p1: Vector3<f64>,
    p2: Vector3<f64>,
    q1: Vector3<f64>,
    q2: Vector3<f64>,
) -> f64 {
    let d1 = p2 - p1;
    let d2 = q2 - q1;
    let r = p1 - q1;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::MIN_POSITIVE && e <= f64::MIN_POSITIVE {
        return r.norm();
    }
    if a <= f64::MIN_POSITIVE {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::MIN_POSITIVE {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (q1 + d2 * t)).norm()
}

/// Even-odd point-in-polygon test.
pub(crate) fn point_in_polygon(p: Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Pairs of non-adjacent segments of a closed polyline that touch, using the
/// supplied distance predicate. Brute force over all pairs.
pub(crate) fn self_intersections<F>(n: usize, mut touch: F) -> Vec<(usize, usize)>
where
    F: FnMut(usize, usize) -> bool,
{
    let mut hits = Vec::new();
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if touch(i, j) {
                hits.push((i, j));
            }
        }
    }
    hits
}
