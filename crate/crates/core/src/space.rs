//! Quadratic-velocity / linear-pressure degrees of freedom with rigid body
//! unknowns folded into the velocity trace.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{local_edges, p2_count, CellGeometry};
use crate::linalg::TripletList;
use crate::mesh::{BoundaryTag, Mesh};

/// Classification of a velocity node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// Unknown velocity (interior or outflow boundary).
    Free,
    /// On the body; velocity equals the rigid velocity.
    Body,
    /// On the Dirichlet part of the outer boundary; velocity is zero.
    Dirichlet,
}

/// Offsets of the blocks in the global unknown vector
/// `[velocity | rigid velocity | rigid displacement | pressure]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofLayout {
    /// Spatial dimension.
    pub dim: usize,
    /// Number of velocity unknowns.
    pub n_velocity: usize,
    /// First rigid-velocity index.
    pub sigma: usize,
    /// First rigid-displacement index.
    pub eta: usize,
    /// First pressure index.
    pub pressure: usize,
    /// Number of pressure unknowns.
    pub n_pressure: usize,
    /// Total number of unknowns.
    pub total: usize,
}

impl DofLayout {
    /// True for rigid-velocity and rigid-displacement indices.
    pub fn is_rigid(&self, i: usize) -> bool {
        (self.sigma..self.pressure).contains(&i)
    }

    /// True for pressure indices.
    pub fn is_pressure(&self, i: usize) -> bool {
        i >= self.pressure
    }

    /// Rigid velocity of a global vector.
    pub fn sigma_of<'a, T>(&self, x: &'a [T]) -> &'a [T] {
        &x[self.sigma..self.sigma + self.dim]
    }

    /// Rigid displacement of a global vector.
    pub fn eta_of<'a, T>(&self, x: &'a [T]) -> &'a [T] {
        &x[self.eta..self.eta + self.dim]
    }
}

/// A boundary facet with its quadratic trace nodes and owning cell.
#[derive(Clone, Debug)]
pub struct FacetData {
    /// Trace nodes: vertices followed by edge midpoints.
    pub nodes: Vec<usize>,
    /// Cell that owns the facet.
    pub cell: usize,
    /// Local vertex indices of the facet inside the owning cell.
    pub local_vertices: Vec<usize>,
    /// Unit normal pointing out of the fluid domain.
    pub normal: [f64; 3],
    /// Facet measure.
    pub measure: f64,
    /// Boundary part.
    pub tag: BoundaryTag,
}

/// Degrees of freedom of the mixed discretization on a mesh.
#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    mesh: Mesh,
    nodes: Vec<[f64; 3]>,
    cell_nodes: Vec<[usize; 10]>,
    kinds: Vec<NodeKind>,
    velocity_base: Vec<usize>,
    layout: DofLayout,
    facets: Vec<FacetData>,
}

/// Cells per parallel work unit; fixed so that reductions are reproducible.
pub const ASSEMBLY_CHUNK: usize = 256;

impl DiscreteSpace {
    /// Builds the quadratic node set, classifies nodes, and numbers unknowns.
    pub fn new(mesh: Mesh) -> Result<Self> {
        let dim = mesh.dim();
        let mut nodes: Vec<[f64; 3]> = mesh.nodes().to_vec();
        let n_vertices = nodes.len();
        let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cell_nodes = Vec::with_capacity(mesh.num_cells());
        for c in 0..mesh.num_cells() {
            let v = mesh.cell(c);
            let mut cn = [usize::MAX; 10];
            cn[..=dim].copy_from_slice(v);
            for (e, &(a, b)) in local_edges(dim).iter().enumerate() {
                let key = (v[a].min(v[b]), v[a].max(v[b]));
                let id = *edge_id.entry(key).or_insert_with(|| {
                    let (p, q) = (nodes[key.0], nodes[key.1]);
                    nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]);
                    nodes.len() - 1
                });
                cn[dim + 1 + e] = id;
            }
            cell_nodes.push(cn);
        }
        // Owning cell of every facet.
        let mut face_owner: HashMap<Vec<usize>, (usize, Vec<usize>)> = HashMap::new();
        for c in 0..mesh.num_cells() {
            let v = mesh.cell(c);
            for skip in 0..=dim {
                let local: Vec<usize> = (0..=dim).filter(|&k| k != skip).collect();
                let mut key: Vec<usize> = local.iter().map(|&k| v[k]).collect();
                key.sort_unstable();
                face_owner.entry(key).or_insert((c, local));
            }
        }
        let mut kinds = vec![NodeKind::Free; nodes.len()];
        let mut facets = Vec::with_capacity(mesh.facets().len());
        for (f, facet) in mesh.facets().iter().enumerate() {
            let verts = &facet.vertices[..dim];
            let mut key = verts.to_vec();
            key.sort_unstable();
            let (cell, local) = face_owner
                .get(&key)
                .cloned()
                .ok_or_else(|| Error::Mesh(format!("boundary facet {f} is not a face of any cell")))?;
            let cn = &cell_nodes[cell];
            let mut fnodes: Vec<usize> = local.iter().map(|&k| cn[k]).collect();
            let facet_edges: &[(usize, usize)] = if dim == 2 { &[(0, 1)] } else { &[(0, 1), (1, 2), (0, 2)] };
            for &(a, b) in facet_edges {
                let (la, lb) = (local[a], local[b]);
                let e = local_edges(dim)
                    .iter()
                    .position(|&(x, y)| (x == la && y == lb) || (x == lb && y == la))
                    .expect("facet edge is a cell edge");
                fnodes.push(cn[dim + 1 + e]);
            }
            let p: Vec<[f64; 3]> = local.iter().map(|&k| nodes[cn[k]]).collect();
            let (mut normal, measure) = if dim == 2 {
                let t = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
                let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
                ([t[1] / len, -t[0] / len, 0.0], len)
            } else {
                let e1 = [0, 1, 2].map(|k| p[1][k] - p[0][k]);
                let e2 = [0, 1, 2].map(|k| p[2][k] - p[0][k]);
                let c = [
                    e1[1] * e2[2] - e1[2] * e2[1],
                    e1[2] * e2[0] - e1[0] * e2[2],
                    e1[0] * e2[1] - e1[1] * e2[0],
                ];
                let len = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                (c.map(|x| x / len), 0.5 * len)
            };
            let opposite = (0..=dim).find(|k| !local.contains(k)).expect("opposite vertex");
            let q = nodes[cn[opposite]];
            let to_inside = [0, 1, 2].map(|k| q[k] - p[0][k]);
            if normal[0] * to_inside[0] + normal[1] * to_inside[1] + normal[2] * to_inside[2] > 0.0 {
                normal = normal.map(|x| -x);
            }
            facets.push(FacetData {
                nodes: fnodes,
                cell,
                local_vertices: local,
                normal,
                measure,
                tag: facet.tag,
            });
        }
        for f in &facets {
            if f.tag == BoundaryTag::Farfield {
                for &n in &f.nodes {
                    kinds[n] = NodeKind::Dirichlet;
                }
            }
        }
        for f in &facets {
            if f.tag == BoundaryTag::Body {
                for &n in &f.nodes {
                    if kinds[n] == NodeKind::Dirichlet {
                        return Err(Error::Mesh("body and farfield boundaries touch".into()));
                    }
                    kinds[n] = NodeKind::Body;
                }
            }
        }
        if !facets.iter().any(|f| f.tag == BoundaryTag::Body) {
            return Err(Error::Mesh("mesh has no body boundary".into()));
        }
        let mut velocity_base = vec![usize::MAX; nodes.len()];
        let mut count = 0;
        for (i, k) in kinds.iter().enumerate() {
            if *k == NodeKind::Free {
                velocity_base[i] = count;
                count += dim;
            }
        }
        let sigma = count;
        let eta = sigma + dim;
        let pressure = eta + dim;
        let layout = DofLayout {
            dim,
            n_velocity: count,
            sigma,
            eta,
            pressure,
            n_pressure: n_vertices,
            total: pressure + n_vertices,
        };
        Ok(Self {
            mesh,
            nodes,
            cell_nodes,
            kinds,
            velocity_base,
            layout,
            facets,
        })
    }

    /// Underlying mesh.
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Spatial dimension.
    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    /// Global block layout.
    pub fn layout(&self) -> &DofLayout {
        &self.layout
    }

    /// Total number of unknowns.
    pub fn total(&self) -> usize {
        self.layout.total
    }

    /// Quadratic node coordinates (vertices first).
    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    /// Number of quadratic nodes.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node classification.
    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    /// Quadratic nodes of cell `c`.
    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        &self.cell_nodes[c][..p2_count(self.dim())]
    }

    /// Boundary facets with trace data.
    pub fn facets(&self) -> &[FacetData] {
        &self.facets
    }

    /// Affine geometry of cell `c`.
    pub fn geometry(&self, c: usize) -> CellGeometry {
        let d = self.dim();
        let v: Vec<[f64; 3]> = self.mesh.cell(c).iter().map(|&i| self.nodes[i]).collect();
        CellGeometry::new(d, &v)
    }

    /// Global index of velocity component `comp` at `node`, with body nodes
    /// mapped to the rigid velocity and Dirichlet nodes to `None`.
    pub fn velocity_slot(&self, node: usize, comp: usize) -> Option<usize> {
        match self.kinds[node] {
            NodeKind::Free => Some(self.velocity_base[node] + comp),
            NodeKind::Body => Some(self.layout.sigma + comp),
            NodeKind::Dirichlet => None,
        }
    }

    /// Global index of the free velocity unknown, if any.
    pub fn free_slot(&self, node: usize, comp: usize) -> Option<usize> {
        (self.kinds[node] == NodeKind::Free).then(|| self.velocity_base[node] + comp)
    }

    /// Global index of the pressure at vertex `v`.
    pub fn pressure_slot(&self, v: usize) -> usize {
        self.layout.pressure + v
    }

    /// Nodal velocity field encoded by a global vector.
    pub fn expand_velocity(&self, x: &[f64]) -> Vec<[f64; 3]> {
        let d = self.dim();
        (0..self.nodes.len())
            .map(|n| {
                let mut v = [0.0; 3];
                for (c, vc) in v.iter_mut().enumerate().take(d) {
                    if let Some(i) = self.velocity_slot(n, c) {
                        *vc = x[i];
                    }
                }
                v
            })
            .collect()
    }

    /// Global vector with free velocity from `field` at the nodes, the given
    /// rigid velocity, and everything else zero.
    pub fn interpolate_velocity(&self, field: impl Fn([f64; 3]) -> [f64; 3], sigma: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; self.total()];
        for (n, p) in self.nodes.iter().enumerate() {
            if self.kinds[n] == NodeKind::Free {
                let v = field(*p);
                for c in 0..d {
                    x[self.velocity_base[n] + c] = v[c];
                }
            }
        }
        x[self.layout.sigma..self.layout.sigma + d].copy_from_slice(&sigma[..d]);
        x
    }

    /// Runs `f` over all cells in fixed-size chunks in parallel and
    /// concatenates the per-chunk triplets in cell order.
    pub fn assemble(&self, f: impl Fn(usize, &mut TripletList) + Sync) -> TripletList {
        let n = self.total();
        let nc = self.mesh.num_cells();
        let chunks: Vec<TripletList> = (0..nc.div_ceil(ASSEMBLY_CHUNK))
            .into_par_iter()
            .map(|k| {
                let mut t = TripletList::new(n, n);
                for c in k * ASSEMBLY_CHUNK..((k + 1) * ASSEMBLY_CHUNK).min(nc) {
                    f(c, &mut t);
                }
                t
            })
            .collect();
        let mut all = TripletList::with_capacity(n, n, chunks.iter().map(|t| t.len()).sum());
        for t in chunks {
            all.extend(t);
        }
        all
    }

    /// Runs `f` over all cells in fixed-size chunks and accumulates the
    /// produced vector contributions in cell order.
    pub fn assemble_vector(&self, f: impl Fn(usize, &mut Vec<(usize, f64)>) + Sync) -> Vec<f64> {
        let nc = self.mesh.num_cells();
        let chunks: Vec<Vec<(usize, f64)>> = (0..nc.div_ceil(ASSEMBLY_CHUNK))
            .into_par_iter()
            .map(|k| {
                let mut out = Vec::new();
                for c in k * ASSEMBLY_CHUNK..((k + 1) * ASSEMBLY_CHUNK).min(nc) {
                    f(c, &mut out);
                }
                out
            })
            .collect();
        let mut y = vec![0.0; self.total()];
        for chunk in chunks {
            for (i, v) in chunk {
                y[i] += v;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_truncated_domain, MeshSettings};
    use crate::model::BodyGeometry;

    #[test]
    fn layout_is_consistent() {
        let s = MeshSettings {
            truncation_radius: 10.0,
            resolution: 12,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap();
        let nv = mesh.nodes().len();
        let sp = DiscreteSpace::new(mesh).unwrap();
        let l = *sp.layout();
        assert_eq!(l.n_pressure, nv);
        assert_eq!(l.total, l.n_velocity + 4 + nv);
        let n_free = (0..sp.num_nodes()).filter(|&n| sp.kind(n) == NodeKind::Free).count();
        assert_eq!(l.n_velocity, 2 * n_free);
        for f in sp.facets() {
            let r = sp.nodes()[f.nodes[0]];
            let outward_radial = r[0] * f.normal[0] + r[1] * f.normal[1];
            match f.tag {
                BoundaryTag::Body => assert!(outward_radial < 0.0),
                _ => assert!(outward_radial > 0.0),
            }
        }
    }
}
