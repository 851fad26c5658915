//! Triangle mesh export of the height field, OBJ input/output, and a
//! discrete curvature estimate used as an independent check.
//!
//! Grid cells with four interior corners are split into two triangles; the
//! gap between that cell region and the contour is closed by a strip of
//! triangles zipped between the region's boundary loop and the contour
//! polyline, so the mesh boundary is the contour itself.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{Vector2, Vector3};

use crate::contour::{PlanarContour, ProjectionFrame};
use crate::grid::{GridDomain, NodeClass};
use crate::{Error, Result, ScalarField};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub boundary: Vec<bool>,
    /// Grid node of each vertex; `None` for contour vertices.
    pub grid_nodes: Vec<Option<usize>>,
}

impl SurfaceMesh {
    pub fn edge_count(&self) -> usize {
        edge_faces(&self.faces).len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Boundary edges chained into closed loops, each as a vertex sequence.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let mut next = BTreeMap::new();
        for ((a, b), n) in directed_boundary_edges(&self.faces) {
            debug_assert_eq!(n, 1);
            next.insert(a, b);
        }
        let mut loops = Vec::new();
        while let Some((&start, _)) = next.iter().next() {
            let mut lp = vec![start];
            let mut v = next.remove(&start).unwrap();
            while v != start {
                lp.push(v);
                match next.remove(&v) {
                    Some(w) => v = w,
                    None => break,
                }
            }
            loops.push(lp);
        }
        loops
    }

    pub fn write_obj<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }

    /// Reads `v` and `f` records. Boundary flags are recovered from edges
    /// used by a single face; grid node links are lost.
    pub fn read_obj<R: BufRead>(input: R) -> Result<Self> {
        let mut m = SurfaceMesh::default();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let mut it = line.split_whitespace();
            let bad = || Error::Parse(format!("OBJ line {}: '{}'", lineno + 1, line));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?;
                    if c.len() != 3 {
                        return Err(bad());
                    }
                    m.vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|s| s.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?;
                    if idx.len() != 3 || idx.iter().any(|&i| i == 0 || i > m.vertices.len()) {
                        return Err(bad());
                    }
                    m.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        m.boundary = vec![false; m.vertices.len()];
        m.grid_nodes = vec![None; m.vertices.len()];
        for ((a, b), _) in directed_boundary_edges(&m.faces) {
            m.boundary[a] = true;
            m.boundary[b] = true;
        }
        Ok(m)
    }
}

fn edge_faces(faces: &[[usize; 3]]) -> BTreeMap<(usize, usize), usize> {
    let mut count = BTreeMap::new();
    for f in faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    count
}

fn directed_boundary_edges(faces: &[[usize; 3]]) -> Vec<((usize, usize), usize)> {
    let count = edge_faces(faces);
    let mut out = Vec::new();
    for f in faces {
        for e in 0..3 {
            let (a, b) = (f[e], f[(e + 1) % 3]);
            let n = count[&(a.min(b), a.max(b))];
            if n == 1 {
                out.push(((a, b), n));
            }
        }
    }
    out
}

/// Cells `(i, j)` (lower-left corner) whose corners are all interior, with
/// diagonal pinches removed and only the largest 4-connected component kept.
fn cell_region(g: &GridDomain) -> Vec<bool> {
    let (nx, ny) = g.dims();
    let (cx, cy) = (nx - 1, ny - 1);
    let cell = |i: usize, j: usize| j * cx + i;
    let mut keep: Vec<bool> = (0..cx * cy)
        .map(|c| {
            let (i, j) = (c % cx, c / cx);
            [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .all(|&(di, dj)| g.class(g.index(i + di, j + dj)) == NodeClass::Interior)
        })
        .collect();
    loop {
        // a vertex whose included cells are exactly one diagonal pair
        let mut changed = false;
        for j in 1..cy {
            for i in 1..cx {
                let sw = keep[cell(i - 1, j - 1)];
                let se = keep[cell(i, j - 1)];
                let nw = keep[cell(i - 1, j)];
                let ne = keep[cell(i, j)];
                if sw && ne && !se && !nw {
                    keep[cell(i, j)] = false;
                    changed = true;
                } else if se && nw && !sw && !ne {
                    keep[cell(i - 1, j)] = false;
                    changed = true;
                }
            }
        }
        // largest component
        let mut comp = vec![usize::MAX; cx * cy];
        let mut sizes = Vec::new();
        for s in 0..cx * cy {
            if !keep[s] || comp[s] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            let mut queue = VecDeque::from([s]);
            comp[s] = id;
            while let Some(c) = queue.pop_front() {
                size += 1;
                let (i, j) = (c % cx, c / cx);
                let mut nbrs = Vec::with_capacity(4);
                if i > 0 {
                    nbrs.push(c - 1);
                }
                if i + 1 < cx {
                    nbrs.push(c + 1);
                }
                if j > 0 {
                    nbrs.push(c - cx);
                }
                if j + 1 < cy {
                    nbrs.push(c + cx);
                }
                for d in nbrs {
                    if keep[d] && comp[d] == usize::MAX {
                        comp[d] = id;
                        queue.push_back(d);
                    }
                }
            }
            sizes.push(size);
        }
        if let Some(big) = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)) {
            for c in 0..cx * cy {
                if keep[c] && comp[c] != big {
                    keep[c] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return keep;
        }
    }
}

fn orient2(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> f64 {
    (b - a).perp(&(c - a))
}

/// Triangulates the graph of `h`. Contour vertices carry the contour
/// heights and map back through `frame` to the input points.
pub fn export_mesh(
    h: &ScalarField,
    g: &GridDomain,
    frame: &ProjectionFrame,
    pc: &PlanarContour,
) -> Result<SurfaceMesh> {
    let (nx, _) = g.dims();
    let cx = nx - 1;
    let keep = cell_region(g);
    if !keep.iter().any(|&k| k) {
        return Err(Error::EmptyDomain);
    }
    let mut mesh = SurfaceMesh::default();
    let mut vertex_of = BTreeMap::new();
    let mut uv = Vec::new();
    let mut add_node = |mesh: &mut SurfaceMesh, uv: &mut Vec<Vector2<f64>>, k: usize| {
        *vertex_of.entry(k).or_insert_with(|| {
            let p = g.node_position(k);
            mesh.vertices.push(frame.embed(p, h.get(k)));
            mesh.boundary.push(false);
            mesh.grid_nodes.push(Some(k));
            uv.push(p);
            mesh.vertices.len() - 1
        })
    };
    for c in (0..keep.len()).filter(|&c| keep[c]) {
        let (i, j) = (c % cx, c / cx);
        let [a, b, cc, d] = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            .map(|(i, j)| add_node(&mut mesh, &mut uv, g.index(i, j)));
        mesh.faces.push([a, b, cc]);
        mesh.faces.push([a, cc, d]);
    }
    let loops = mesh.boundary_loops();
    if loops.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "interior cell region has {} boundary loops",
            loops.len()
        )));
    }
    let inner = &loops[0];

    // contour vertices, counter-clockwise in the plane
    let first = mesh.vertices.len();
    let n = pc.len();
    for (p, &z) in pc.points.iter().zip(&pc.heights) {
        mesh.vertices.push(frame.embed(*p, z));
        mesh.boundary.push(true);
        mesh.grid_nodes.push(None);
        uv.push(*p);
    }
    let outer: Vec<usize> = if pc.signed_area2() > 0.0 {
        (0..n).map(|j| first + j).collect()
    } else {
        (0..n).rev().map(|j| first + j).collect()
    };

    let m = inner.len();
    let a0 = uv[inner[0]];
    let j0 = (0..n)
        .min_by(|&x, &y| (uv[outer[x]] - a0).norm().total_cmp(&(uv[outer[y]] - a0).norm()))
        .unwrap();
    let lp = |s: usize| inner[s % m];
    let op = |s: usize| outer[(j0 + s) % n];
    let (mut i, mut j) = (0, 0);
    while i < m || j < n {
        let (a, b) = (lp(i), op(j));
        let adv_outer = (j < n).then(|| {
            let c = op(j + 1);
            (orient2(uv[a], uv[b], uv[c]) > 0.0, (uv[a] - uv[c]).norm(), [a, b, c])
        });
        let adv_inner = (i < m).then(|| {
            let c = lp(i + 1);
            (orient2(uv[a], uv[b], uv[c]) > 0.0, (uv[c] - uv[b]).norm(), [a, b, c])
        });
        let take_outer = match (adv_outer, adv_inner) {
            (Some(o), Some(q)) => match (o.0, q.0) {
                (true, false) => true,
                (false, true) => false,
                _ => o.1 <= q.1,
            },
            (Some(_), None) => true,
            _ => false,
        };
        if take_outer {
            mesh.faces.push(adv_outer.unwrap().2);
            j += 1;
        } else {
            mesh.faces.push(adv_inner.unwrap().2);
            i += 1;
        }
    }
    Ok(mesh)
}

fn angle(at: Vector3<f64>, p: Vector3<f64>, q: Vector3<f64>) -> f64 {
    let (u, v) = (p - at, q - at);
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Per-vertex discrete curvature. Interior vertices: Gaussian curvature as
/// angle defect `2π − Σθ` over the mixed Voronoi area. Boundary vertices:
/// geodesic curvature as `π − Σθ` over half the two incident boundary edge
/// lengths.
pub fn discrete_mesh_curvature(m: &SurfaceMesh) -> Vec<f64> {
    let nv = m.vertices.len();
    let mut angles = vec![0.0; nv];
    let mut area = vec![0.0; nv];
    for f in &m.faces {
        let p = f.map(|i| m.vertices[i]);
        let th = [0, 1, 2].map(|k| angle(p[k], p[(k + 1) % 3], p[(k + 2) % 3]));
        let tri = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        let obtuse = th.iter().position(|&t| t > 0.5 * PI);
        for k in 0..3 {
            angles[f[k]] += th[k];
            area[f[k]] += match obtuse {
                None => {
                    // Voronoi region: edges at k weighted by opposite cotangents
                    let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
                    let e1 = (p[k1] - p[k]).norm_squared();
                    let e2 = (p[k2] - p[k]).norm_squared();
                    0.125 * (e1 / th[k2].tan() + e2 / th[k1].tan())
                }
                Some(o) if o == k => 0.5 * tri,
                Some(_) => 0.25 * tri,
            };
        }
    }
    let mut boundary_len = vec![0.0; nv];
    for ((a, b), _) in directed_boundary_edges(&m.faces) {
        let l = (m.vertices[a] - m.vertices[b]).norm();
        boundary_len[a] += 0.5 * l;
        boundary_len[b] += 0.5 * l;
    }
    (0..nv)
        .map(|v| {
            if boundary_len[v] > 0.0 {
                (PI - angles[v]) / boundary_len[v]
            } else if area[v] > 0.0 {
                (2.0 * PI - angles[v]) / area[v]
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{project, Contour3D};
    use std::sync::Arc;

    fn xy_frame() -> ProjectionFrame {
        ProjectionFrame {
            origin: Vector3::zeros(),
            basis_u: Vector3::x(),
            basis_v: Vector3::y(),
            normal: Vector3::z(),
        }
    }

    fn circle(n: usize, r: f64, height: impl Fn(f64, f64) -> f64) -> (PlanarContour, Contour3D) {
        let pts = (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                let (x, y) = (r * a.cos(), r * a.sin());
                Vector3::new(x, y, height(x, y))
            })
            .collect();
        let c = Contour3D::new(pts).unwrap();
        (project(&c, &xy_frame()).unwrap(), c)
    }

    fn check_topology(m: &SurfaceMesh, n_contour: usize) {
        assert_eq!(m.euler_characteristic(), 1);
        let loops = m.boundary_loops();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), n_contour);
        assert!(loops[0].iter().all(|&v| m.boundary[v] && m.grid_nodes[v].is_none()));
        let mean = (0..m.faces.len()).map(|f| m.face_area(f)).sum::<f64>() / m.faces.len() as f64;
        assert!((0..m.faces.len()).all(|f| m.face_area(f) > 1e-14 * mean));
        assert!(m.faces.iter().flatten().all(|&i| i < m.vertices.len()));
    }

    #[test]
    fn flat_disk() {
        let (pc, c) = circle(128, 1.0, |_, _| 0.0);
        let g = Arc::new(GridDomain::from_contour(&pc, 32).unwrap());
        let m = export_mesh(&ScalarField::zeros(&g), &g, &xy_frame(), &pc).unwrap();
        check_topology(&m, 128);
        let first = m.vertices.len() - 128;
        for (k, p) in c.points().iter().enumerate() {
            assert!((m.vertices[first + k] - p).norm() < 1e-12);
        }
        let k = discrete_mesh_curvature(&m);
        for v in 0..m.vertices.len() {
            if !m.boundary[v] {
                assert!(k[v].abs() < 1e-10, "vertex {v}: {}", k[v]);
            }
        }
    }

    #[test]
    fn circle_boundary_geodesic_curvature() {
        let r = 0.8;
        let (pc, _) = circle(200, r, |_, _| 0.0);
        let g = Arc::new(GridDomain::from_contour(&pc, 48).unwrap());
        let m = export_mesh(&ScalarField::zeros(&g), &g, &xy_frame(), &pc).unwrap();
        let k = discrete_mesh_curvature(&m);
        for v in (0..m.vertices.len()).filter(|&v| m.boundary[v]) {
            assert!((k[v] * r - 1.0).abs() < 0.1, "{}", k[v]);
        }
    }

    #[test]
    fn sphere_cap_mesh() {
        let radius: f64 = 2.0;
        let cap = |x: f64, y: f64| (radius * radius - x * x - y * y).sqrt();
        let center = Vector3::new(0.0, 0.0, 0.0);
        let mut errs = Vec::new();
        for res in [32, 64] {
            let (pc, _) = circle(256, 1.0, cap);
            let g = Arc::new(GridDomain::from_contour(&pc, res).unwrap());
            let h = ScalarField::from_fn(&g, |p| cap(p.x, p.y));
            let m = export_mesh(&h, &g, &xy_frame(), &pc).unwrap();
            check_topology(&m, 256);
            let err = m
                .vertices
                .iter()
                .map(|v| ((v - center).norm() - radius).abs())
                .fold(0.0, f64::max);
            errs.push(err);
            let k = discrete_mesh_curvature(&m);
            for v in 0..m.vertices.len() {
                if let Some(node) = m.grid_nodes[v] {
                    if g.node_position(node).norm() < 0.6 {
                        assert!((k[v] / 0.25 - 1.0).abs() < 0.1, "{}", k[v]);
                    }
                }
            }
        }
        // nodes lie on the sphere exactly; only rounding remains
        assert!(errs.iter().all(|&e| e < 1e-12), "{errs:?}");
    }

    #[test]
    fn square_and_awkward_shapes_stay_disks() {
        let n = 40;
        let mut pts = Vec::new();
        // L-shape with a notch
        let corners = [(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)];
        for e in 0..corners.len() {
            let (a, b) = (corners[e], corners[(e + 1) % corners.len()]);
            for s in 0..n {
                let t = s as f64 / n as f64;
                pts.push(Vector3::new(a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, 0.0));
            }
        }
        let c = Contour3D::new(pts).unwrap();
        let pc = project(&c, &xy_frame()).unwrap();
        for res in [17, 30, 64] {
            let g = Arc::new(GridDomain::from_contour(&pc, res).unwrap());
            let m = export_mesh(&ScalarField::zeros(&g), &g, &xy_frame(), &pc).unwrap();
            check_topology(&m, pc.len());
        }
    }

    #[test]
    fn obj_round_trip() {
        let (pc, _) = circle(64, 1.0, |x, y| 0.3 * x * y + 1.0 / 3.0);
        let g = Arc::new(GridDomain::from_contour(&pc, 20).unwrap());
        let h = ScalarField::from_fn(&g, |p| 0.3 * p.x * p.y + 1.0 / 3.0);
        let m = export_mesh(&h, &g, &xy_frame(), &pc).unwrap();
        let mut buf = Vec::new();
        m.write_obj(&mut buf).unwrap();
        let back = SurfaceMesh::read_obj(buf.as_slice()).unwrap();
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.boundary, m.boundary);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() <= 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn bad_obj_is_rejected() {
        assert!(SurfaceMesh::read_obj("v 0 0\n".as_bytes()).is_err());
        assert!(SurfaceMesh::read_obj("v 0 0 0\nf 1 2 3\n".as_bytes()).is_err());
    }
}
