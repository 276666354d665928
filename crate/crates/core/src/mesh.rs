//! Simplicial meshes of the truncated exterior domain, their construction,
//! quality checks, and a versioned text format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BodyGeometry, BodyShape};

/// Boundary part a facet belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    /// Surface of the immersed body.
    Body,
    /// Outer boundary carrying the homogeneous Dirichlet condition.
    Farfield,
    /// Downstream part of the outer boundary with the natural (traction-free) condition.
    Outflow,
}

impl BoundaryTag {
    fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Body => "body",
            BoundaryTag::Farfield => "farfield",
            BoundaryTag::Outflow => "outflow",
        }
    }
}

impl FromStr for BoundaryTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(Self::Body),
            "farfield" => Ok(Self::Farfield),
            "outflow" => Ok(Self::Outflow),
            _ => Err(Error::Parse(format!("unknown boundary tag '{s}'"))),
        }
    }
}

/// A boundary facet (edge in 2D, triangle in 3D) with its tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFacet {
    /// Vertex indices; only the first `dim` are meaningful.
    pub vertices: [usize; 3],
    /// Boundary part.
    pub tag: BoundaryTag,
}

/// Mesh-generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSettings {
    /// Radius of the outer boundary.
    #[serde(rename = "R_trunc")]
    pub truncation_radius: f64,
    /// Azimuthal cells around the body in 2D, cells per cube-face edge in 3D.
    pub resolution: usize,
    /// Half-angle of the refined downstream sector, degrees.
    pub wake_angle_deg: f64,
    /// Geometric growth factor of radial spacing.
    pub grading: f64,
    /// Half-angle of the outflow part of the outer boundary, degrees.
    pub outflow_angle_deg: f64,
    /// Ratio of azimuthal node density inside the wake sector to outside.
    pub wake_refinement: f64,
    /// Radial spacing of the first layer at the body; by default the
    /// smallest azimuthal spacing (nearly isotropic cells).
    pub first_layer: Option<f64>,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            truncation_radius: 30.0,
            resolution: 64,
            wake_angle_deg: 20.0,
            grading: 1.2,
            outflow_angle_deg: 45.0,
            wake_refinement: 2.5,
            first_layer: None,
        }
    }
}

/// Unstructured simplicial mesh of the annular/shell domain between the body
/// and the truncation sphere.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<[f64; 3]>,
    cells: Vec<[usize; 4]>,
    facets: Vec<BoundaryFacet>,
    truncation_radius: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Mesh {
    /// Assembles a mesh from raw parts, reorienting cells to positive measure
    /// and rejecting degenerate ones.
    pub fn from_parts(
        dim: usize,
        nodes: Vec<[f64; 3]>,
        mut cells: Vec<[usize; 4]>,
        facets: Vec<BoundaryFacet>,
        truncation_radius: f64,
    ) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::Mesh(format!("dimension must be 2 or 3 (got {dim})")));
        }
        let n = nodes.len();
        for (c, cell) in cells.iter_mut().enumerate() {
            if cell[..=dim].iter().any(|&v| v >= n) {
                return Err(Error::Mesh(format!("cell {c} references a missing node")));
            }
            let m = signed_measure(dim, &nodes, cell);
            if m < 0.0 {
                cell.swap(0, 1);
            }
            let m = m.abs();
            let h = (0..dim)
                .map(|k| {
                    let e = sub(nodes[cell[k + 1]], nodes[cell[0]]);
                    dot3(e, e).sqrt()
                })
                .fold(0.0, f64::max);
            if !(m > 1e-14 * h.powi(dim as i32)) {
                return Err(Error::InvertedCell { cell: c, measure: m });
            }
        }
        for (f, facet) in facets.iter().enumerate() {
            if facet.vertices[..dim].iter().any(|&v| v >= n) {
                return Err(Error::Mesh(format!("facet {f} references a missing node")));
            }
        }
        Ok(Self {
            dim,
            nodes,
            cells,
            facets,
            truncation_radius,
        })
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vertex coordinates (the third coordinate is zero in 2D).
    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    /// Number of cells.
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Vertex indices of cell `c` (length `dim + 1`).
    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..=self.dim]
    }

    /// All cells, padded to four vertices.
    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    /// Tagged boundary facets.
    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    /// Radius of the outer boundary.
    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
    }

    /// Signed measure (area or volume) of cell `c`; positive for a valid mesh.
    pub fn cell_measure(&self, c: usize) -> f64 {
        signed_measure(self.dim, &self.nodes, &self.cells[c])
    }

    /// Total measure of the meshed domain.
    pub fn measure(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_measure(c)).sum()
    }

    /// Re-checks that every cell has positive measure.
    pub fn check_orientation(&self) -> Result<()> {
        for c in 0..self.cells.len() {
            let m = self.cell_measure(c);
            if !(m > 0.0) {
                return Err(Error::InvertedCell { cell: c, measure: m });
            }
        }
        Ok(())
    }

    /// Number of facets carrying `tag`.
    pub fn count_facets(&self, tag: BoundaryTag) -> usize {
        self.facets.iter().filter(|f| f.tag == tag).count()
    }

    /// Largest cell diameter.
    pub fn max_cell_size(&self) -> f64 {
        let mut h: f64 = 0.0;
        for cell in &self.cells {
            for i in 0..=self.dim {
                for j in i + 1..=self.dim {
                    let e = sub(self.nodes[cell[i]], self.nodes[cell[j]]);
                    h = h.max(dot3(e, e).sqrt());
                }
            }
        }
        h
    }

    /// Serializes to the versioned text format.
    pub fn to_text(&self) -> String {
        let d = self.dim;
        let mut s = String::new();
        let _ = writeln!(s, "oscilla-mesh v1 d={d}");
        let _ = writeln!(s, "truncation_radius {:.17e}", self.truncation_radius);
        let _ = writeln!(s, "nodes {}", self.nodes.len());
        for p in &self.nodes {
            let coords: Vec<String> = p[..d].iter().map(|x| format!("{x:.17e}")).collect();
            let _ = writeln!(s, "{}", coords.join(" "));
        }
        let _ = writeln!(s, "cells {}", self.cells.len());
        for c in &self.cells {
            let ids: Vec<String> = c[..=d].iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}", ids.join(" "));
        }
        let _ = writeln!(s, "facets {}", self.facets.len());
        for f in &self.facets {
            let ids: Vec<String> = f.vertices[..d].iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{} {}", f.tag.as_str(), ids.join(" "));
        }
        s
    }

    /// Parses the versioned text format.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("mesh file truncated before {what}")));
        let header = next("header")?;
        let dim = match header.trim() {
            "oscilla-mesh v1 d=2" => 2,
            "oscilla-mesh v1 d=3" => 3,
            other => return Err(Error::Parse(format!("unsupported mesh header '{other}'"))),
        };
        let keyed = |line: &str, key: &str| -> Result<String> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Parse(format!("expected '{key}' line, found '{line}'")));
            }
            it.next().map(str::to_string).ok_or_else(|| Error::Parse(format!("missing value after '{key}'")))
        };
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number '{s}': {e}")));
        let parse_u = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad index '{s}': {e}")));
        let truncation_radius = parse_f(&keyed(next("truncation_radius")?, "truncation_radius")?)?;
        let n_nodes = parse_u(&keyed(next("nodes")?, "nodes")?)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let vals: Vec<f64> = next("node")?.split_whitespace().map(parse_f).collect::<Result<_>>()?;
            if vals.len() != dim {
                return Err(Error::Parse(format!("node line has {} coordinates, expected {dim}", vals.len())));
            }
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(&vals);
            nodes.push(p);
        }
        let n_cells = parse_u(&keyed(next("cells")?, "cells")?)?;
        let mut cells = Vec::with_capacity(n_cells);
        for _ in 0..n_cells {
            let ids: Vec<usize> = next("cell")?.split_whitespace().map(parse_u).collect::<Result<_>>()?;
            if ids.len() != dim + 1 {
                return Err(Error::Parse(format!("cell line has {} vertices, expected {}", ids.len(), dim + 1)));
            }
            let mut c = [0; 4];
            c[..=dim].copy_from_slice(&ids);
            cells.push(c);
        }
        let n_facets = parse_u(&keyed(next("facets")?, "facets")?)?;
        let mut facets = Vec::with_capacity(n_facets);
        for _ in 0..n_facets {
            let line = next("facet")?;
            let mut it = line.split_whitespace();
            let tag: BoundaryTag = it.next().unwrap_or("").parse()?;
            let ids: Vec<usize> = it.map(parse_u).collect::<Result<_>>()?;
            if ids.len() != dim {
                return Err(Error::Parse(format!("facet line has {} vertices, expected {dim}", ids.len())));
            }
            let mut v = [0; 3];
            v[..dim].copy_from_slice(&ids);
            facets.push(BoundaryFacet { vertices: v, tag });
        }
        Self::from_parts(dim, nodes, cells, facets, truncation_radius)
    }
}

fn signed_measure(dim: usize, nodes: &[[f64; 3]], cell: &[usize; 4]) -> f64 {
    let p0 = nodes[cell[0]];
    let e1 = sub(nodes[cell[1]], p0);
    let e2 = sub(nodes[cell[2]], p0);
    if dim == 2 {
        0.5 * (e1[0] * e2[1] - e1[1] * e2[0])
    } else {
        let e3 = sub(nodes[cell[3]], p0);
        dot3(cross(e1, e2), e3) / 6.0
    }
}

/// Builds a graded body-fitted mesh between the body and the circle/sphere of
/// radius `settings.truncation_radius`.
pub fn build_truncated_domain(geometry: &BodyGeometry, settings: &MeshSettings) -> Result<Mesh> {
    let r_star = geometry.diameter();
    if !(settings.truncation_radius >= 5.0 * r_star) {
        return Err(Error::validation(format!(
            "R_trunc = {} must be at least 5 body diameters ({})",
            settings.truncation_radius,
            5.0 * r_star
        )));
    }
    if !(settings.grading >= 1.0) {
        return Err(Error::validation("grading must be at least 1"));
    }
    if !(settings.wake_angle_deg > 0.0 && settings.wake_angle_deg < 90.0) {
        return Err(Error::validation("wake_angle_deg must lie in (0, 90)"));
    }
    if !(settings.outflow_angle_deg > 0.0 && settings.outflow_angle_deg < 90.0) {
        return Err(Error::validation("outflow_angle_deg must lie in (0, 90)"));
    }
    if !(settings.wake_refinement >= 1.0) {
        return Err(Error::validation("wake_refinement must be at least 1"));
    }
    if settings.first_layer.is_some_and(|h| !(h > 0.0 && h < settings.truncation_radius)) {
        return Err(Error::validation("first_layer must be positive and below R_trunc"));
    }
    match geometry.dim() {
        2 => build_2d(geometry, settings),
        _ => build_3d(geometry, settings),
    }
}

/// Azimuthal node angles on `[0, π]`, denser in the downstream sector around `θ = π`.
fn half_angles(n_half: usize, wake_half_angle: f64, refinement: f64) -> Vec<f64> {
    let density = |theta: f64| {
        let off = (std::f64::consts::PI - theta).abs();
        let w = if off <= wake_half_angle {
            1.0
        } else {
            (-((off - wake_half_angle) / wake_half_angle).powi(2)).exp()
        };
        1.0 + (refinement - 1.0) * w
    };
    let samples = 8192;
    let h = std::f64::consts::PI / samples as f64;
    let mut cdf = vec![0.0; samples + 1];
    for i in 0..samples {
        let a = i as f64 * h;
        cdf[i + 1] = cdf[i] + 0.5 * h * (density(a) + density(a + h));
    }
    let total = cdf[samples];
    let mut out = Vec::with_capacity(n_half + 1);
    let mut k = 0;
    for j in 0..=n_half {
        if j == 0 {
            out.push(0.0);
            continue;
        }
        if j == n_half {
            out.push(std::f64::consts::PI);
            continue;
        }
        let target = total * j as f64 / n_half as f64;
        while cdf[k + 1] < target {
            k += 1;
        }
        let frac = (target - cdf[k]) / (cdf[k + 1] - cdf[k]);
        out.push((k as f64 + frac) * h);
    }
    out
}

/// Normalized radial coordinates `t ∈ [0, 1]` of the mesh layers.
fn radial_layers(r0: f64, r_outer: f64, first: f64, grading: f64, angular: f64) -> Vec<f64> {
    let mut r = vec![r0];
    let mut dr = first;
    while *r.last().expect("nonempty") < r_outer {
        let cur = *r.last().expect("nonempty");
        let step = dr.min(cur * angular);
        r.push(cur + step);
        dr *= grading;
    }
    let last = *r.last().expect("nonempty");
    // Merge a final sliver layer into its neighbour.
    if r.len() > 2 {
        let prev = r[r.len() - 2];
        let prev_step = prev - r[r.len() - 3];
        if r_outer - prev < 0.5 * prev_step {
            r.pop();
            r.pop();
            r.push(last);
        }
    }
    let span = *r.last().expect("nonempty") - r0;
    r.iter().map(|x| (x - r0) / span).collect()
}

fn is_mirror_symmetric(shape: &BodyShape) -> bool {
    matches!(shape, BodyShape::Circle { .. } | BodyShape::Ellipse { .. })
}

fn build_2d(geometry: &BodyGeometry, s: &MeshSettings) -> Result<Mesh> {
    let n_theta = s.resolution;
    if n_theta < 8 || n_theta % 2 != 0 {
        return Err(Error::validation(format!("2D resolution must be even and at least 8 (got {n_theta})")));
    }
    let n_half = n_theta / 2;
    let upper = half_angles(n_half, s.wake_angle_deg.to_radians(), s.wake_refinement);
    let mut angles: Vec<f64> = upper.clone();
    for j in (1..n_half).rev() {
        angles.push(2.0 * std::f64::consts::PI - upper[j]);
    }
    debug_assert_eq!(angles.len(), n_theta);
    let min_dtheta = upper.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let r0 = 0.5 * geometry.diameter();
    let avg_dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
    let ts = radial_layers(r0, s.truncation_radius, s.first_layer.unwrap_or(r0 * min_dtheta), s.grading, avg_dtheta);
    let n_layers = ts.len();
    let symmetric = is_mirror_symmetric(geometry.shape());
    let body: Vec<[f64; 2]> = angles.iter().map(|&a| geometry.boundary_point_2d(a)).collect();
    let mut nodes = Vec::with_capacity(n_layers * n_theta);
    for &t in &ts {
        for (j, &a) in angles.iter().enumerate() {
            let b = body[j];
            let (c, sn) = if j == 0 {
                (1.0, 0.0)
            } else if j == n_half {
                (-1.0, 0.0)
            } else {
                (a.cos(), a.sin())
            };
            let outer = [s.truncation_radius * c, s.truncation_radius * sn];
            let mut x = [(1.0 - t) * b[0] + t * outer[0], (1.0 - t) * b[1] + t * outer[1], 0.0];
            if j == 0 || j == n_half {
                if symmetric {
                    x[1] = 0.0;
                }
            }
            nodes.push(x);
        }
    }
    if symmetric {
        for i in 0..n_layers {
            for j in 1..n_half {
                let up = nodes[i * n_theta + j];
                nodes[i * n_theta + (n_theta - j)] = [up[0], -up[1], 0.0];
            }
        }
    }
    let id = |i: usize, j: usize| i * n_theta + (j % n_theta);
    let mut cells = Vec::with_capacity(2 * (n_layers - 1) * n_theta);
    for i in 0..n_layers - 1 {
        for j in 0..n_theta {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if j < n_half {
                cells.push([a, b, c, 0]);
                cells.push([a, c, d, 0]);
            } else {
                cells.push([a, b, d, 0]);
                cells.push([b, c, d, 0]);
            }
        }
    }
    let outflow_cos = s.outflow_angle_deg.to_radians().cos();
    let mut facets = Vec::with_capacity(2 * n_theta);
    for j in 0..n_theta {
        facets.push(BoundaryFacet {
            vertices: [id(0, j), id(0, j + 1), 0],
            tag: BoundaryTag::Body,
        });
    }
    let last = n_layers - 1;
    for j in 0..n_theta {
        let (p, q) = (nodes[id(last, j)], nodes[id(last, j + 1)]);
        let m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let cos_from_downstream = -m[0] / (m[0] * m[0] + m[1] * m[1]).sqrt();
        let tag = if cos_from_downstream > outflow_cos {
            BoundaryTag::Outflow
        } else {
            BoundaryTag::Farfield
        };
        facets.push(BoundaryFacet {
            vertices: [id(last, j), id(last, j + 1), 0],
            tag,
        });
    }
    Mesh::from_parts(2, nodes, cells, facets, s.truncation_radius)
}

fn build_3d(geometry: &BodyGeometry, s: &MeshSettings) -> Result<Mesh> {
    let n = s.resolution;
    if n < 1 {
        return Err(Error::validation("3D resolution must be at least 1"));
    }
    // Surface grid points of the cube [0, n]³, shared between faces.
    let mut surface: Vec<[usize; 3]> = Vec::new();
    let mut surface_id: HashMap<[usize; 3], usize> = HashMap::new();
    let mut quads: Vec<[usize; 4]> = Vec::new();
    let mut add = |p: [usize; 3], surface: &mut Vec<[usize; 3]>| -> usize {
        *surface_id.entry(p).or_insert_with(|| {
            surface.push(p);
            surface.len() - 1
        })
    };
    for axis in 0..3 {
        for side in [0, n] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for a in 0..n {
                for b in 0..n {
                    let corner = |da: usize, db: usize| {
                        let mut p = [0; 3];
                        p[axis] = side;
                        p[u] = a + da;
                        p[v] = b + db;
                        p
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let ids = q.map(|p| add(p, &mut surface));
                    quads.push(ids);
                }
            }
        }
    }
    let dirs: Vec<[f64; 3]> = surface
        .iter()
        .map(|p| {
            let c = p.map(|k| (std::f64::consts::FRAC_PI_4 * (2.0 * k as f64 / n as f64 - 1.0)).tan());
            let len = dot3(c, c).sqrt();
            c.map(|x| x / len)
        })
        .collect();
    let r0 = 0.5 * geometry.diameter();
    let angular = std::f64::consts::FRAC_PI_2 / n as f64;
    let ts = radial_layers(r0, s.truncation_radius, s.first_layer.unwrap_or(r0 * angular), s.grading, angular);
    let n_layers = ts.len();
    let ns = surface.len();
    let place = |dir: [f64; 3], t: f64| -> [f64; 3] {
        let len = dot3(dir, dir).sqrt();
        let d = dir.map(|x| x / len);
        let b = geometry.boundary_point_3d(d);
        [0, 1, 2].map(|k| (1.0 - t) * b[k] + t * s.truncation_radius * d[k])
    };
    // Each node is placed from a direction and a normalized radial coordinate,
    // so face and cell centres lie on the same mapped shells as the vertices.
    let mut params: Vec<([f64; 3], f64)> = Vec::with_capacity(n_layers * ns);
    let mut nodes = Vec::with_capacity(n_layers * ns);
    for &t in &ts {
        for d in &dirs {
            params.push((*d, t));
            nodes.push(place(*d, t));
        }
    }
    let add_centre = |ids: &[usize], nodes: &mut Vec<[f64; 3]>, params: &mut Vec<([f64; 3], f64)>| -> usize {
        let mut dir = [0.0; 3];
        let mut t = 0.0;
        for &v in ids {
            for k in 0..3 {
                dir[k] += params[v].0[k];
            }
            t += params[v].1 / ids.len() as f64;
        }
        params.push((dir, t));
        nodes.push(place(dir, t));
        nodes.len() - 1
    };
    let mut face_center: HashMap<[usize; 4], usize> = HashMap::new();
    let mut center_of = |face: [usize; 4], nodes: &mut Vec<[f64; 3]>, params: &mut Vec<([f64; 3], f64)>| -> usize {
        let mut key = face;
        key.sort_unstable();
        if let Some(&id) = face_center.get(&key) {
            return id;
        }
        let id = add_centre(&face, nodes, params);
        face_center.insert(key, id);
        id
    };
    let mut cells = Vec::with_capacity(24 * quads.len() * (n_layers - 1));
    for i in 0..n_layers - 1 {
        for q in &quads {
            let h: [usize; 8] = [
                i * ns + q[0],
                i * ns + q[1],
                i * ns + q[2],
                i * ns + q[3],
                (i + 1) * ns + q[0],
                (i + 1) * ns + q[1],
                (i + 1) * ns + q[2],
                (i + 1) * ns + q[3],
            ];
            let centre = add_centre(&h, &mut nodes, &mut params);
            let faces: [[usize; 4]; 6] = [
                [h[0], h[1], h[2], h[3]],
                [h[4], h[5], h[6], h[7]],
                [h[0], h[1], h[5], h[4]],
                [h[1], h[2], h[6], h[5]],
                [h[2], h[3], h[7], h[6]],
                [h[3], h[0], h[4], h[7]],
            ];
            for f in faces {
                let fc = center_of(f, &mut nodes, &mut params);
                for k in 0..4 {
                    cells.push([f[k], f[(k + 1) % 4], fc, centre]);
                }
            }
        }
    }
    let outflow_cos = s.outflow_angle_deg.to_radians().cos();
    let mut facets = Vec::new();
    for (layer, tag_default) in [(0, BoundaryTag::Body), (n_layers - 1, BoundaryTag::Farfield)] {
        for q in &quads {
            let f = q.map(|v| layer * ns + v);
            let fc = center_of(f, &mut nodes, &mut params);
            let p = nodes[fc];
            let tag = if tag_default == BoundaryTag::Farfield && -p[0] / dot3(p, p).sqrt() > outflow_cos {
                BoundaryTag::Outflow
            } else {
                tag_default
            };
            for k in 0..4 {
                facets.push(BoundaryFacet {
                    vertices: [f[k], f[(k + 1) % 4], fc],
                    tag,
                });
            }
        }
    }
    Mesh::from_parts(3, nodes, cells, facets, s.truncation_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn coarse(res: usize) -> MeshSettings {
        MeshSettings {
            truncation_radius: 30.0,
            resolution: res,
            ..Default::default()
        }
    }

    #[test]
    fn circle_mesh_is_valid_and_has_expected_area() {
        let m = build_truncated_domain(&BodyGeometry::unit_circle(), &coarse(32)).unwrap();
        assert!(m.num_cells() > 0);
        m.check_orientation().unwrap();
        let exact = PI * (30.0f64.powi(2) - 0.25);
        assert!((m.measure() - exact).abs() < 0.01 * exact, "{} vs {}", m.measure(), exact);
        assert!(m.count_facets(BoundaryTag::Outflow) > 0);
    }

    #[test]
    fn refinement_adds_cells_and_keeps_tags() {
        let a = build_truncated_domain(&BodyGeometry::unit_circle(), &coarse(16)).unwrap();
        let b = build_truncated_domain(&BodyGeometry::unit_circle(), &coarse(32)).unwrap();
        assert!(b.num_cells() > a.num_cells());
        let tags = |m: &Mesh| {
            let mut t: Vec<BoundaryTag> = m.facets().iter().map(|f| f.tag).collect();
            t.sort();
            t.dedup();
            t
        };
        assert_eq!(tags(&a), tags(&b));
    }

    #[test]
    fn circle_mesh_is_mirror_symmetric() {
        let m = build_truncated_domain(&BodyGeometry::unit_circle(), &coarse(16)).unwrap();
        let mut pts: Vec<(i64, i64)> = m
            .nodes()
            .iter()
            .map(|p| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64))
            .collect();
        let mut mirrored: Vec<(i64, i64)> = pts.iter().map(|&(x, y)| (x, -y)).collect();
        pts.sort();
        mirrored.sort();
        assert_eq!(pts, mirrored);
    }

    #[test]
    fn sphere_mesh_is_valid() {
        let s = MeshSettings {
            truncation_radius: 6.0,
            resolution: 2,
            grading: 1.5,
            ..Default::default()
        };
        let m = build_truncated_domain(&BodyGeometry::unit_sphere(), &s).unwrap();
        m.check_orientation().unwrap();
        let exact = 4.0 / 3.0 * PI * (216.0 - 0.125);
        assert!((m.measure() - exact).abs() < 0.15 * exact, "{} vs {exact}", m.measure());
        assert!(m.count_facets(BoundaryTag::Body) == 24 * 4);
    }

    #[test]
    fn text_round_trip() {
        let m = build_truncated_domain(&BodyGeometry::unit_circle(), &coarse(8)).unwrap();
        let t = m.to_text();
        assert!(t.starts_with("oscilla-mesh v1 d=2\n"));
        let back = Mesh::from_text(&t).unwrap();
        assert_eq!(back.to_text(), t);
    }

    #[test]
    fn short_truncation_rejected() {
        let s = MeshSettings {
            truncation_radius: 2.0,
            ..Default::default()
        };
        assert!(build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap_err().is_validation());
    }

    #[test]
    fn inverted_cell_reported_with_id() {
        let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let err = Mesh::from_parts(2, nodes, vec![[0, 1, 2, 0]], vec![], 1.0).unwrap_err();
        assert!(matches!(err, Error::InvertedCell { cell: 0, .. }));
    }
}
