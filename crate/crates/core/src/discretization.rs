//! Assembly of the algebraic building blocks of the coupled fluid–body system.
//!
//! Velocity and test functions on body nodes are folded into the rigid
//! velocity unknowns, so every assembled matrix acts on the global layout of
//! [`DofLayout`](crate::space::DofLayout) and its rigid-velocity rows are the
//! momentum residual tested with the rigid extension of each unit vector.
//!
//! Transport terms use the trilinear form
//! `c(a; b, φ) = ½[(a·∇b, φ) − (a·∇φ, b)] + ½∫_{outflow} (a·n)(b·φ)`,
//! which is skew in `(b, φ)` for fields vanishing on the outflow and equals
//! the convective form on the traction-free outflow.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{p2_count, p2_values, SimplexQuadrature};
use crate::linalg::{norm2, CsrMatrix, LinearSolve, MatrixFamily, TripletList};
use crate::mesh::BoundaryTag;
use crate::model::{BodyMotion, Stiffness};
use crate::space::{DiscreteSpace, FacetData};

/// Nodal vector field, one 3-vector per quadratic node.
pub type NodalField = Vec<[f64; 3]>;

/// Matrices that depend only on the mesh.
#[derive(Clone, Debug)]
pub struct FsiOperators {
    space: Arc<DiscreteSpace>,
    quad: SimplexQuadrature,
    facet_quad: SimplexQuadrature,
    /// Velocity mass matrix (L² product of the folded velocity fields).
    pub mass: CsrMatrix,
    /// Symmetric-gradient form `2(D(w), D(φ))`.
    pub diffusion: CsrMatrix,
    /// Vector Laplacian form `(∇w, ∇φ)`.
    pub laplacian: CsrMatrix,
    /// `−(q, div w)` with rows in the pressure block.
    pub divergence: CsrMatrix,
    /// Transpose of `divergence` (pressure gradient form `−(p, div φ)`).
    pub gradient: CsrMatrix,
    /// Pressure mass matrix on the pressure block.
    pub pressure_mass: CsrMatrix,
    /// `c(e_β; ·, φ)` for each axis `β`.
    pub transport: Vec<CsrMatrix>,
}

fn facet_basis(dim: usize, l: &[f64; 4], out: &mut [f64]) {
    if dim == 2 {
        out[0] = l[0] * (2.0 * l[0] - 1.0);
        out[1] = l[1] * (2.0 * l[1] - 1.0);
        out[2] = 4.0 * l[0] * l[1];
    } else {
        p2_values(2, l, out);
    }
}

impl FsiOperators {
    /// Assembles all mesh-dependent blocks.
    pub fn assemble(space: Arc<DiscreteSpace>) -> Result<Self> {
        let dim = space.dim();
        for c in 0..space.mesh().num_cells() {
            let m = space.mesh().cell_measure(c);
            if !(m > 0.0) {
                return Err(Error::InvertedCell { cell: c, measure: m });
            }
        }
        let quad = SimplexQuadrature::for_dim(dim);
        let facet_quad = SimplexQuadrature::facet_for_dim(dim);
        let nb = p2_count(dim);
        let sp = &*space;
        let q = &quad;
        let (mut mass, mut diffusion, mut laplacian, mut divergence, mut pressure_mass) = (
            TripletList::new(0, 0),
            TripletList::new(0, 0),
            TripletList::new(0, 0),
            TripletList::new(0, 0),
            TripletList::new(0, 0),
        );
        let lists = [&mut mass, &mut diffusion, &mut laplacian, &mut divergence, &mut pressure_mass];
        for (which, list) in lists.into_iter().enumerate() {
            *list = sp.assemble(|c, t| {
                let geo = sp.geometry(c);
                let cn = sp.cell_nodes(c);
                let verts = sp.mesh().cell(c);
                let mut phi = [0.0; 10];
                let mut g = [[0.0; 3]; 10];
                let mut local = [[0.0; 30]; 30];
                for (l, w) in q.points.iter().zip(&q.weights) {
                    let wm = w * geo.measure;
                    p2_values(dim, l, &mut phi);
                    geo.p2_gradients(dim, l, &mut g);
                    match which {
                        0 => {
                            for k in 0..nb {
                                for m in 0..nb {
                                    local[k][m] += wm * phi[k] * phi[m];
                                }
                            }
                        }
                        1 => {
                            for k in 0..nb {
                                for a in 0..dim {
                                    for m in 0..nb {
                                        let gg: f64 = (0..dim).map(|i| g[k][i] * g[m][i]).sum();
                                        for b in 0..dim {
                                            let v = if a == b { gg } else { 0.0 } + g[m][a] * g[k][b];
                                            local[k * dim + a][m * dim + b] += wm * v;
                                        }
                                    }
                                }
                            }
                        }
                        2 => {
                            for k in 0..nb {
                                for m in 0..nb {
                                    let gg: f64 = (0..dim).map(|i| g[k][i] * g[m][i]).sum();
                                    local[k][m] += wm * gg;
                                }
                            }
                        }
                        3 => {
                            for v in 0..=dim {
                                for m in 0..nb {
                                    for b in 0..dim {
                                        local[v][m * dim + b] -= wm * l[v] * g[m][b];
                                    }
                                }
                            }
                        }
                        _ => {
                            for v in 0..=dim {
                                for u in 0..=dim {
                                    local[v][u] += wm * l[v] * l[u];
                                }
                            }
                        }
                    }
                }
                match which {
                    0 | 2 => {
                        for k in 0..nb {
                            for m in 0..nb {
                                for a in 0..dim {
                                    if let (Some(i), Some(j)) = (sp.velocity_slot(cn[k], a), sp.velocity_slot(cn[m], a)) {
                                        t.push(i, j, local[k][m]);
                                    }
                                }
                            }
                        }
                    }
                    1 => {
                        for k in 0..nb {
                            for a in 0..dim {
                                let Some(i) = sp.velocity_slot(cn[k], a) else { continue };
                                for m in 0..nb {
                                    for b in 0..dim {
                                        if let Some(j) = sp.velocity_slot(cn[m], b) {
                                            t.push(i, j, local[k * dim + a][m * dim + b]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                    3 => {
                        for v in 0..=dim {
                            let i = sp.pressure_slot(verts[v]);
                            for m in 0..nb {
                                for b in 0..dim {
                                    if let Some(j) = sp.velocity_slot(cn[m], b) {
                                        t.push(i, j, local[v][m * dim + b]);
                                    }
                                }
                            }
                        }
                    }
                    _ => {
                        for v in 0..=dim {
                            for u in 0..=dim {
                                t.push(sp.pressure_slot(verts[v]), sp.pressure_slot(verts[u]), local[v][u]);
                            }
                        }
                    }
                }
            });
        }
        let divergence = divergence.into_csr();
        let gradient = divergence.transpose();
        let mut ops = Self {
            space: space.clone(),
            quad,
            facet_quad,
            mass: mass.into_csr(),
            diffusion: diffusion.into_csr(),
            laplacian: laplacian.into_csr(),
            divergence,
            gradient,
            pressure_mass: pressure_mass.into_csr(),
            transport: Vec::new(),
        };
        ops.transport = (0..dim)
            .map(|b| {
                let mut e = [0.0; 3];
                e[b] = 1.0;
                ops.convection_matrix(&vec![e; space.num_nodes()])
            })
            .collect();
        Ok(ops)
    }

    /// The discrete space.
    pub fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    fn outflow_facets(&self) -> impl Iterator<Item = &FacetData> {
        self.space.facets().iter().filter(|f| f.tag == BoundaryTag::Outflow)
    }

    /// Matrix of `w ↦ c(a; w, φ)` for a nodal advecting field `a`.
    pub fn convection_matrix(&self, a: &[[f64; 3]]) -> CsrMatrix {
        let sp = &*self.space;
        let dim = sp.dim();
        let nb = p2_count(dim);
        let q = &self.quad;
        let mut t = sp.assemble(|c, t| {
            let geo = sp.geometry(c);
            let cn = sp.cell_nodes(c);
            let mut phi = [0.0; 10];
            let mut g = [[0.0; 3]; 10];
            let mut s = [[0.0; 10]; 10];
            for (l, w) in q.points.iter().zip(&q.weights) {
                let wm = 0.5 * w * geo.measure;
                p2_values(dim, l, &mut phi);
                geo.p2_gradients(dim, l, &mut g);
                let mut aq = [0.0; 3];
                for k in 0..nb {
                    for i in 0..dim {
                        aq[i] += phi[k] * a[cn[k]][i];
                    }
                }
                let adg: Vec<f64> = (0..nb).map(|k| (0..dim).map(|i| aq[i] * g[k][i]).sum()).collect();
                for k in 0..nb {
                    for m in 0..nb {
                        s[k][m] += wm * (adg[m] * phi[k] - adg[k] * phi[m]);
                    }
                }
            }
            for k in 0..nb {
                for m in 0..nb {
                    for al in 0..dim {
                        if let (Some(i), Some(j)) = (sp.velocity_slot(cn[k], al), sp.velocity_slot(cn[m], al)) {
                            t.push(i, j, s[k][m]);
                        }
                    }
                }
            }
        });
        let fq = &self.facet_quad;
        let nf = if dim == 2 { 3 } else { 6 };
        for f in self.outflow_facets() {
            let mut psi = [0.0; 10];
            let mut s = [[0.0; 6]; 6];
            for (l, w) in fq.points.iter().zip(&fq.weights) {
                facet_basis(dim, l, &mut psi);
                let mut an = 0.0;
                for k in 0..nf {
                    for i in 0..dim {
                        an += psi[k] * a[f.nodes[k]][i] * f.normal[i];
                    }
                }
                for k in 0..nf {
                    for m in 0..nf {
                        s[k][m] += 0.5 * w * f.measure * an * psi[k] * psi[m];
                    }
                }
            }
            for k in 0..nf {
                for m in 0..nf {
                    for al in 0..dim {
                        if let (Some(i), Some(j)) = (sp.velocity_slot(f.nodes[k], al), sp.velocity_slot(f.nodes[m], al)) {
                            t.push(i, j, s[k][m]);
                        }
                    }
                }
            }
        }
        t.into_csr()
    }

    /// Matrix of `x ↦ c(w(x) − σ(x); b, φ)` for a nodal field `b`, where the
    /// rigid velocity is subtracted as a constant advecting field.
    pub fn reaction_matrix(&self, b: &[[f64; 3]]) -> CsrMatrix {
        let sp = &*self.space;
        let dim = sp.dim();
        let nb = p2_count(dim);
        let sigma = sp.layout().sigma;
        let q = &self.quad;
        let mut t = sp.assemble(|c, t| {
            let geo = sp.geometry(c);
            let cn = sp.cell_nodes(c);
            let mut phi = [0.0; 10];
            let mut g = [[0.0; 3]; 10];
            // local[k*dim+α][m*dim+β], with m = nb for the constant trial function.
            let mut local = [[0.0; 33]; 30];
            for (l, w) in q.points.iter().zip(&q.weights) {
                let wm = 0.5 * w * geo.measure;
                p2_values(dim, l, &mut phi);
                geo.p2_gradients(dim, l, &mut g);
                let mut bq = [0.0; 3];
                let mut db = [[0.0; 3]; 3];
                for k in 0..nb {
                    let bk = b[cn[k]];
                    for al in 0..dim {
                        bq[al] += phi[k] * bk[al];
                        for be in 0..dim {
                            db[al][be] += g[k][be] * bk[al];
                        }
                    }
                }
                for k in 0..nb {
                    for al in 0..dim {
                        for be in 0..dim {
                            let v = wm * (db[al][be] * phi[k] - g[k][be] * bq[al]);
                            for m in 0..nb {
                                local[k * dim + al][m * dim + be] += v * phi[m];
                            }
                            local[k * dim + al][nb * dim + be] += v;
                        }
                    }
                }
            }
            for k in 0..nb {
                for al in 0..dim {
                    let Some(i) = sp.velocity_slot(cn[k], al) else { continue };
                    for be in 0..dim {
                        for m in 0..nb {
                            if let Some(j) = sp.velocity_slot(cn[m], be) {
                                t.push(i, j, local[k * dim + al][m * dim + be]);
                            }
                        }
                        t.push(i, sigma + be, -local[k * dim + al][nb * dim + be]);
                    }
                }
            }
        });
        let fq = &self.facet_quad;
        let nf = if dim == 2 { 3 } else { 6 };
        for f in self.outflow_facets() {
            let mut psi = [0.0; 10];
            let mut local = [[0.0; 21]; 18];
            for (l, w) in fq.points.iter().zip(&fq.weights) {
                facet_basis(dim, l, &mut psi);
                let mut bq = [0.0; 3];
                for k in 0..nf {
                    for al in 0..dim {
                        bq[al] += psi[k] * b[f.nodes[k]][al];
                    }
                }
                for k in 0..nf {
                    for al in 0..dim {
                        for be in 0..dim {
                            let v = 0.5 * w * f.measure * f.normal[be] * bq[al] * psi[k];
                            for m in 0..nf {
                                local[k * dim + al][m * dim + be] += v * psi[m];
                            }
                            local[k * dim + al][nf * dim + be] += v;
                        }
                    }
                }
            }
            for k in 0..nf {
                for al in 0..dim {
                    let Some(i) = sp.velocity_slot(f.nodes[k], al) else { continue };
                    for be in 0..dim {
                        for m in 0..nf {
                            if let Some(j) = sp.velocity_slot(f.nodes[m], be) {
                                t.push(i, j, local[k * dim + al][m * dim + be]);
                            }
                        }
                        t.push(i, sigma + be, -local[k * dim + al][nf * dim + be]);
                    }
                }
            }
        }
        t.into_csr()
    }

    /// Vector of `c(a; b, φ)` over all test functions.
    pub fn trilinear(&self, a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<f64> {
        let sp = &*self.space;
        let dim = sp.dim();
        let nb = p2_count(dim);
        let q = &self.quad;
        let mut y = sp.assemble_vector(|c, out| {
            let geo = sp.geometry(c);
            let cn = sp.cell_nodes(c);
            let mut phi = [0.0; 10];
            let mut g = [[0.0; 3]; 10];
            let mut acc = [[0.0; 3]; 10];
            for (l, w) in q.points.iter().zip(&q.weights) {
                let wm = 0.5 * w * geo.measure;
                p2_values(dim, l, &mut phi);
                geo.p2_gradients(dim, l, &mut g);
                let mut aq = [0.0; 3];
                let mut bq = [0.0; 3];
                let mut adb = [0.0; 3];
                for k in 0..nb {
                    let (ak, bk) = (a[cn[k]], b[cn[k]]);
                    for i in 0..dim {
                        aq[i] += phi[k] * ak[i];
                        bq[i] += phi[k] * bk[i];
                    }
                }
                for k in 0..nb {
                    let bk = b[cn[k]];
                    let adg: f64 = (0..dim).map(|i| aq[i] * g[k][i]).sum();
                    for al in 0..dim {
                        adb[al] += adg * bk[al];
                    }
                }
                for k in 0..nb {
                    let adg: f64 = (0..dim).map(|i| aq[i] * g[k][i]).sum();
                    for al in 0..dim {
                        acc[k][al] += wm * (adb[al] * phi[k] - adg * bq[al]);
                    }
                }
            }
            for k in 0..nb {
                for al in 0..dim {
                    if let Some(i) = sp.velocity_slot(cn[k], al) {
                        out.push((i, acc[k][al]));
                    }
                }
            }
        });
        let fq = &self.facet_quad;
        let nf = if dim == 2 { 3 } else { 6 };
        for f in self.outflow_facets() {
            let mut psi = [0.0; 10];
            let mut acc = [[0.0; 3]; 6];
            for (l, w) in fq.points.iter().zip(&fq.weights) {
                facet_basis(dim, l, &mut psi);
                let mut an = 0.0;
                let mut bq = [0.0; 3];
                for k in 0..nf {
                    let (ak, bk) = (a[f.nodes[k]], b[f.nodes[k]]);
                    for i in 0..dim {
                        an += psi[k] * ak[i] * f.normal[i];
                        bq[i] += psi[k] * bk[i];
                    }
                }
                for k in 0..nf {
                    for al in 0..dim {
                        acc[k][al] += 0.5 * w * f.measure * an * bq[al] * psi[k];
                    }
                }
            }
            for k in 0..nf {
                for al in 0..dim {
                    if let Some(i) = sp.velocity_slot(f.nodes[k], al) {
                        y[i] += acc[k][al];
                    }
                }
            }
        }
        y
    }

    /// Nodal velocity of `x` and the advecting field `w(x) − σ(x)`.
    pub fn advecting_fields(&self, x: &[f64]) -> (NodalField, NodalField) {
        let w = self.space.expand_velocity(x);
        let l = self.space.layout();
        let mut s = [0.0; 3];
        s[..l.dim].copy_from_slice(l.sigma_of(x));
        let a = w.iter().map(|v| [v[0] - s[0], v[1] - s[1], v[2] - s[2]]).collect();
        (w, a)
    }

    /// Quadratic transport term `c(w − σ; w, φ)` of a global vector.
    pub fn advection(&self, x: &[f64]) -> Vec<f64> {
        let (w, a) = self.advecting_fields(x);
        self.trilinear(&a, &w)
    }

    /// Symmetric bilinear transport term `½[c(w₁ − σ₁; w₂, φ) + c(w₂ − σ₂; w₁, φ)]`.
    pub fn advection_bilinear(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let (w1, a1) = self.advecting_fields(x1);
        let (w2, a2) = self.advecting_fields(x2);
        let mut y = self.trilinear(&a1, &w2);
        let z = self.trilinear(&a2, &w1);
        for (yi, zi) in y.iter_mut().zip(z) {
            *yi = 0.5 * (*yi + zi);
        }
        y
    }

    /// Matrix of the derivative of [`Self::advection`] at `x`.
    pub fn advection_jacobian(&self, x: &[f64]) -> CsrMatrix {
        let (w, a) = self.advecting_fields(x);
        let c = self.convection_matrix(&a);
        let r = self.reaction_matrix(&w);
        CsrMatrix::linear_combination(&[(1.0, &c), (1.0, &r)])
    }

    /// Stokes-type linear part: diffusion plus pressure–velocity coupling.
    pub fn stokes(&self) -> CsrMatrix {
        CsrMatrix::linear_combination(&[(1.0, &self.diffusion), (1.0, &self.gradient), (1.0, &self.divergence)])
    }

    /// Rigid-body contributions `(gram, coupling)` to the mass and stiffness
    /// operators: `ϖ⁻¹I` on the rigid velocity, `ϖ⁻¹A` on the displacement,
    /// and the skew coupling `±ϖ⁻¹A` between them.
    ///
    /// For a fixed body both are identity pins (mass zero, stiffness identity).
    pub fn rigid_blocks(&self, varpi: f64, stiffness: &Stiffness, motion: BodyMotion) -> Result<(CsrMatrix, CsrMatrix)> {
        let l = *self.space.layout();
        let d = l.dim;
        let n = l.total;
        if motion == BodyMotion::Fixed {
            let mut pin = TripletList::new(n, n);
            for i in l.sigma..l.pressure {
                pin.push(i, i, 1.0);
            }
            return Ok((CsrMatrix::zeros(n, n), pin.into_csr()));
        }
        if varpi == 0.0 {
            return Err(Error::validation("inner product undefined at varpi = 0"));
        }
        if !(varpi > 0.0) {
            return Err(Error::validation("varpi negative"));
        }
        let inv = 1.0 / varpi;
        let mut gram = TripletList::new(n, n);
        let mut coupling = TripletList::new(n, n);
        for i in 0..d {
            gram.push(l.sigma + i, l.sigma + i, inv);
            for j in 0..d {
                let a = stiffness.get(i, j);
                gram.push(l.eta + i, l.eta + j, inv * a);
                coupling.push(l.sigma + i, l.eta + j, inv * a);
                coupling.push(l.eta + i, l.sigma + j, -inv * a);
            }
        }
        Ok((gram.into_csr(), coupling.into_csr()))
    }

    /// Matrix with the rows (and, if `cols`, the columns) of the rigid block removed.
    pub fn without_rigid_rows(&self, m: &CsrMatrix, cols: bool) -> CsrMatrix {
        let l = *self.space.layout();
        m.filtered(|i, j| !l.is_rigid(i) && !(cols && l.is_rigid(j)))
    }

    /// Identity on the rigid block.
    pub fn rigid_identity(&self) -> CsrMatrix {
        let l = *self.space.layout();
        let mut t = TripletList::new(l.total, l.total);
        for i in l.sigma..l.pressure {
            t.push(i, i, 1.0);
        }
        t.into_csr()
    }

    /// Force `∫_{∂Ω} T(w, p)·n` by boundary quadrature of the stress.
    pub fn traction_direct(&self, x: &[f64]) -> [f64; 3] {
        let sp = &*self.space;
        let dim = sp.dim();
        let nb = p2_count(dim);
        let w = sp.expand_velocity(x);
        let l = sp.layout();
        let fq = &self.facet_quad;
        let mut force = [0.0; 3];
        for f in sp.facets().iter().filter(|f| f.tag == BoundaryTag::Body) {
            let geo = sp.geometry(f.cell);
            let cn = sp.cell_nodes(f.cell);
            let verts = sp.mesh().cell(f.cell);
            let mut g = [[0.0; 3]; 10];
            for (lf, wq) in fq.points.iter().zip(&fq.weights) {
                let mut lc = [0.0; 4];
                for (k, &lv) in f.local_vertices.iter().enumerate() {
                    lc[lv] = lf[k];
                }
                geo.p2_gradients(dim, &lc, &mut g);
                let mut grad = [[0.0; 3]; 3];
                for k in 0..nb {
                    for a in 0..dim {
                        for b in 0..dim {
                            grad[a][b] += w[cn[k]][a] * g[k][b];
                        }
                    }
                }
                let p: f64 = (0..=dim).map(|v| lc[v] * x[l.pressure + verts[v]]).sum();
                for a in 0..dim {
                    let mut tn = -p * f.normal[a];
                    for b in 0..dim {
                        tn += (grad[a][b] + grad[b][a]) * f.normal[b];
                    }
                    force[a] += wq * f.measure * tn;
                }
            }
        }
        force
    }

    /// Discrete divergence-free velocity equal to `g` on the body and zero on
    /// the Dirichlet boundary, from a Stokes solve.
    pub fn lift_boundary_data(&self, g: &[f64]) -> Result<Vec<f64>> {
        let l = *self.space.layout();
        let family = MatrixFamily::new(vec![self.without_rigid_rows(&self.stokes(), true), self.rigid_identity()]);
        let lu = family.factor::<f64>(&[1.0, 1.0])?;
        let mut rhs = vec![0.0; l.total];
        let stokes = self.stokes();
        let mut boundary = vec![0.0; l.total];
        boundary[l.sigma..l.sigma + l.dim].copy_from_slice(&g[..l.dim]);
        stokes.matvec_add(-1.0, &boundary, &mut rhs);
        for i in l.sigma..l.pressure {
            rhs[i] = boundary[i];
        }
        lu.solve_in_place(&mut rhs);
        Ok(rhs)
    }

    /// Divergence residual `‖Div x‖` of a global vector.
    pub fn divergence_residual(&self, x: &[f64]) -> f64 {
        let mut r = vec![0.0; x.len()];
        self.divergence.matvec(x, &mut r);
        norm2(&r)
    }

    /// Discrete inf-sup constant of the velocity/pressure pair, with the
    /// velocity measured in the gradient norm and the pressure in L².
    pub fn inf_sup_estimate(&self) -> Result<f64> {
        let l = *self.space.layout();
        let saddle = CsrMatrix::linear_combination(&[(1.0, &self.laplacian), (1.0, &self.gradient), (1.0, &self.divergence)]);
        let family = MatrixFamily::new(vec![self.without_rigid_rows(&saddle, true), self.rigid_identity()]);
        let lu = family.factor::<f64>(&[1.0, 1.0])?;
        let np = l.n_pressure;
        let apply = |p: &[f64]| -> Vec<f64> {
            let mut full = vec![0.0; l.total];
            full[l.pressure..].copy_from_slice(p);
            let mut mp = vec![0.0; l.total];
            self.pressure_mass.matvec(&full, &mut mp);
            let mut rhs = vec![0.0; l.total];
            rhs[l.pressure..].copy_from_slice(&mp[l.pressure..]);
            lu.solve_in_place(&mut rhs);
            rhs[l.pressure..].iter().map(|v| -v).collect()
        };
        let mass_dot = |a: &[f64], b: &[f64]| -> f64 {
            let mut full = vec![0.0; l.total];
            full[l.pressure..].copy_from_slice(b);
            let mut mb = vec![0.0; l.total];
            self.pressure_mass.matvec(&full, &mut mb);
            a.iter().zip(&mb[l.pressure..]).map(|(x, y)| x * y).sum()
        };
        let mut p: Vec<f64> = (0..np).map(|i| 1.0 + 0.1 * ((i * 7919) % 101) as f64 / 101.0).collect();
        let mut estimate = f64::NAN;
        for _ in 0..200 {
            let nrm = mass_dot(&p, &p).sqrt();
            p.iter_mut().for_each(|v| *v /= nrm);
            let y = apply(&p);
            let beta2 = mass_dot(&y, &p) / mass_dot(&y, &y);
            let converged = (beta2 - estimate).abs() < 1e-10 * beta2.abs();
            estimate = beta2;
            p = y;
            if converged {
                break;
            }
        }
        if !(estimate > 0.0) {
            return Err(Error::Singular("inf-sup estimate is not positive".into()));
        }
        Ok(estimate.sqrt())
    }

    /// Squared `L²` norm of the gradient of the velocity encoded by `x`.
    pub fn gradient_norm_sq(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.laplacian.matvec(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    /// Squared broken `L²` norm of second derivatives (cellwise Hessians).
    pub fn broken_hessian_norm_sq(&self, x: &[f64]) -> f64 {
        self.broken_hessian_inner(x, x)
    }

    /// Broken `L²` inner product of second derivatives of two velocities.
    pub fn broken_hessian_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let sp = &*self.space;
        let dim = sp.dim();
        let nb = p2_count(dim);
        let wx = sp.expand_velocity(x);
        let wy = sp.expand_velocity(y);
        let mut total = 0.0;
        let mut h = [[[0.0; 3]; 3]; 10];
        for c in 0..sp.mesh().num_cells() {
            let geo = sp.geometry(c);
            geo.p2_hessians(dim, &mut h);
            let cn = sp.cell_nodes(c);
            let mut s = 0.0;
            for al in 0..dim {
                for a in 0..dim {
                    for b in 0..dim {
                        let u: f64 = (0..nb).map(|k| wx[cn[k]][al] * h[k][a][b]).sum();
                        let v: f64 = (0..nb).map(|k| wy[cn[k]][al] * h[k][a][b]).sum();
                        s += u * v;
                    }
                }
            }
            total += s * geo.measure;
        }
        total
    }

    /// Squared `L²` norm of the velocity encoded by `x`.
    pub fn velocity_norm_sq(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.mass.matvec(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_truncated_domain, MeshSettings};
    use crate::model::BodyGeometry;
    use crate::space::NodeKind;

    fn small_ops() -> FsiOperators {
        let s = MeshSettings {
            truncation_radius: 8.0,
            resolution: 16,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap();
        FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh).unwrap())).unwrap()
    }

    #[test]
    fn transport_is_skew_on_interior_dofs() {
        let ops = small_ops();
        let sp = ops.space().clone();
        let interior: Vec<bool> = {
            let mut v = vec![false; sp.total()];
            let mut on_outflow = vec![false; sp.num_nodes()];
            for f in sp.facets() {
                for &n in &f.nodes {
                    on_outflow[n] = true;
                }
            }
            for n in 0..sp.num_nodes() {
                if sp.kind(n) == NodeKind::Free && !on_outflow[n] {
                    for c in 0..2 {
                        v[sp.free_slot(n, c).unwrap()] = true;
                    }
                }
            }
            v
        };
        let e = &ops.transport[0];
        let restricted = e.filtered(|i, j| interior[i] && interior[j]);
        let sum = CsrMatrix::linear_combination(&[(1.0, &restricted), (1.0, &restricted.transpose())]);
        assert!(sum.max_abs() < 1e-12 * restricted.max_abs(), "{}", sum.max_abs());
    }

    #[test]
    fn diffusion_energy_of_swirl_matches_analytic_value() {
        // w = f(r)(−y, x) with f = (r − ½)²(3 − r)² on ½ ≤ r ≤ 3, zero outside.
        // Then 2|D(w)|² = r² f′² and 2∫|D(w)|² = 2π ∫ r³ f′(r)² dr.
        let s = MeshSettings {
            truncation_radius: 8.0,
            resolution: 48,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap();
        let ops = FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh).unwrap())).unwrap();
        let f = |r: f64| if r < 3.0 { (r - 0.5).powi(2) * (3.0 - r).powi(2) } else { 0.0 };
        let df = |r: f64| if r < 3.0 { 2.0 * (r - 0.5) * (3.0 - r) * (3.5 - 2.0 * r) } else { 0.0 };
        let x = ops.space().interpolate_velocity(
            |p| {
                let r = p[0].hypot(p[1]);
                [-p[1] * f(r), p[0] * f(r), 0.0]
            },
            &[0.0, 0.0],
        );
        let mut y = vec![0.0; x.len()];
        ops.diffusion.matvec(&x, &mut y);
        let discrete: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let n = 20000;
        let h = 2.5 / n as f64;
        let exact: f64 = 2.0
            * std::f64::consts::PI
            * (0..n)
                .map(|i| {
                    let r = 0.5 + (i as f64 + 0.5) * h;
                    r.powi(3) * df(r).powi(2) * h
                })
                .sum::<f64>();
        assert!((discrete - exact).abs() < 0.02 * exact, "{discrete} vs {exact}");
    }

    #[test]
    fn uniform_pressure_exerts_no_force() {
        let ops = small_ops();
        let l = *ops.space().layout();
        let mut x = vec![0.0; l.total];
        for v in &mut x[l.pressure..] {
            *v = 3.7;
        }
        let f = ops.traction_direct(&x);
        assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
        assert_eq!(ops.traction_direct(&vec![0.0; l.total]), [0.0; 3]);
    }

    #[test]
    fn lifting_meets_constraints() {
        let ops = small_ops();
        let l = *ops.space().layout();
        let x = ops.lift_boundary_data(&[1.0, 0.0]).unwrap();
        assert_eq!(l.sigma_of(&x), &[1.0, 0.0]);
        let w = ops.space().expand_velocity(&x);
        for n in 0..ops.space().num_nodes() {
            match ops.space().kind(n) {
                NodeKind::Body => assert_eq!(w[n][0], 1.0),
                NodeKind::Dirichlet => assert_eq!(w[n][0], 0.0),
                NodeKind::Free => {}
            }
        }
        assert!(ops.divergence_residual(&x) < 1e-10);
        let zero = ops.lift_boundary_data(&[0.0, 0.0]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inf_sup_constant_is_positive() {
        let beta = small_ops().inf_sup_estimate().unwrap();
        assert!(beta > 0.01 && beta < 2.0, "{beta}");
    }
}
