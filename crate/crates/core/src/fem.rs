//! Reference-element machinery: quadrature rules and the quadratic Lagrange
//! basis on triangles and tetrahedra.

/// Quadrature rule on a reference simplex in barycentric coordinates.
///
/// Weights sum to one, so integrals are `measure · Σ wᵢ f(xᵢ)`.
#[derive(Clone, Debug)]
pub struct SimplexQuadrature {
    /// Barycentric coordinates `(λ₀, …, λ_d)` of each point.
    pub points: Vec<[f64; 4]>,
    /// Normalized weights.
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = (1.0f64 / 3.0).sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = 0.6f64.sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt();
            let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
            let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
            let wa = (18.0 + 30.0f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => panic!("Gauss-Legendre rule with {n} points not tabulated"),
    };
    (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|v| 0.5 * v).collect())
}

impl SimplexQuadrature {
    /// Seven-point rule on the triangle, exact for degree 5.
    pub fn triangle_degree5() -> Self {
        let s15 = 15f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 1200.0;
        let wb = (155.0 + s15) / 1200.0;
        let third = 1.0 / 3.0;
        let mut points = vec![[third, third, third, 0.0]];
        let mut weights = vec![9.0 / 40.0];
        for (p, w) in [(a, wa), (b, wb)] {
            let q = 1.0 - 2.0 * p;
            for bc in [[q, p, p], [p, q, p], [p, p, q]] {
                points.push([bc[0], bc[1], bc[2], 0.0]);
                weights.push(w);
            }
        }
        // Reference weights refer to area 1/2; normalize to sum 1.
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        Self { points, weights }
    }

    /// Collapsed Gauss–Legendre rule on the tetrahedron, 4 points per direction
    /// (exact for degree 5).
    pub fn tetrahedron_degree5() -> Self {
        let (x, w) = gauss_legendre_unit(4);
        let mut points = Vec::with_capacity(64);
        let mut weights = Vec::with_capacity(64);
        for (i, &u) in x.iter().enumerate() {
            for (j, &v) in x.iter().enumerate() {
                for (k, &t) in x.iter().enumerate() {
                    let l1 = u;
                    let l2 = (1.0 - u) * v;
                    let l3 = (1.0 - u) * (1.0 - v) * t;
                    let l0 = 1.0 - l1 - l2 - l3;
                    points.push([l0, l1, l2, l3]);
                    weights.push(6.0 * w[i] * w[j] * w[k] * (1.0 - u).powi(2) * (1.0 - v));
                }
            }
        }
        Self { points, weights }
    }

    /// Degree-5 rule for a simplex of dimension `dim`.
    pub fn for_dim(dim: usize) -> Self {
        if dim == 2 {
            Self::triangle_degree5()
        } else {
            Self::tetrahedron_degree5()
        }
    }

    /// Rule on a boundary facet of a `dim`-dimensional cell (segment or triangle).
    pub fn facet_for_dim(dim: usize) -> Self {
        if dim == 2 {
            let (x, w) = gauss_legendre_unit(4);
            Self {
                points: x.iter().map(|&t| [1.0 - t, t, 0.0, 0.0]).collect(),
                weights: w,
            }
        } else {
            Self::triangle_degree5()
        }
    }
}

/// Local edge list of the quadratic element (vertex pairs).
pub fn local_edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &[(0, 1), (1, 2), (0, 2)]
    } else {
        &[(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)]
    }
}

/// Number of quadratic basis functions on a simplex.
pub fn p2_count(dim: usize) -> usize {
    if dim == 2 {
        6
    } else {
        10
    }
}

/// Quadratic Lagrange basis values at barycentric point `l`.
pub fn p2_values(dim: usize, l: &[f64; 4], out: &mut [f64]) {
    for i in 0..=dim {
        out[i] = l[i] * (2.0 * l[i] - 1.0);
    }
    for (e, &(a, b)) in local_edges(dim).iter().enumerate() {
        out[dim + 1 + e] = 4.0 * l[a] * l[b];
    }
}

/// Derivatives of the quadratic basis with respect to the barycentric coordinates.
///
/// `out[k][i]` is `∂φ_k/∂λ_i`.
pub fn p2_bary_derivatives(dim: usize, l: &[f64; 4], out: &mut [[f64; 4]]) {
    for row in out.iter_mut().take(p2_count(dim)) {
        *row = [0.0; 4];
    }
    for i in 0..=dim {
        out[i][i] = 4.0 * l[i] - 1.0;
    }
    for (e, &(a, b)) in local_edges(dim).iter().enumerate() {
        out[dim + 1 + e][a] = 4.0 * l[b];
        out[dim + 1 + e][b] = 4.0 * l[a];
    }
}

/// Second barycentric derivatives of the quadratic basis (constant on the cell).
///
/// `out[k][i][j]` is `∂²φ_k/∂λ_i∂λ_j`.
pub fn p2_bary_hessians(dim: usize, out: &mut [[[f64; 4]; 4]]) {
    for h in out.iter_mut().take(p2_count(dim)) {
        *h = [[0.0; 4]; 4];
    }
    for i in 0..=dim {
        out[i][i][i] = 4.0;
    }
    for (e, &(a, b)) in local_edges(dim).iter().enumerate() {
        out[dim + 1 + e][a][b] = 4.0;
        out[dim + 1 + e][b][a] = 4.0;
    }
}

/// Affine geometry of a simplex: measure and barycentric gradients.
#[derive(Clone, Copy, Debug)]
pub struct CellGeometry {
    /// Positive measure.
    pub measure: f64,
    /// `∇λ_i` for each vertex, Cartesian components.
    pub bary_grad: [[f64; 3]; 4],
    /// Vertex coordinates.
    pub vertices: [[f64; 3]; 4],
}

impl CellGeometry {
    /// Computes geometry from vertex coordinates.
    pub fn new(dim: usize, v: &[[f64; 3]]) -> Self {
        let mut vertices = [[0.0; 3]; 4];
        vertices[..=dim].copy_from_slice(&v[..=dim]);
        let mut g = [[0.0; 3]; 4];
        let measure;
        if dim == 2 {
            let (x0, y0) = (v[0][0], v[0][1]);
            let (x1, y1) = (v[1][0] - x0, v[1][1] - y0);
            let (x2, y2) = (v[2][0] - x0, v[2][1] - y0);
            let det = x1 * y2 - x2 * y1;
            measure = 0.5 * det.abs();
            g[1] = [y2 / det, -x2 / det, 0.0];
            g[2] = [-y1 / det, x1 / det, 0.0];
        } else {
            let e: Vec<[f64; 3]> = (1..4).map(|k| [0, 1, 2].map(|c| v[k][c] - v[0][c])).collect();
            let c12 = cross(e[1], e[2]);
            let c20 = cross(e[2], e[0]);
            let c01 = cross(e[0], e[1]);
            let det = e[0][0] * c12[0] + e[0][1] * c12[1] + e[0][2] * c12[2];
            measure = det.abs() / 6.0;
            g[1] = c12.map(|x| x / det);
            g[2] = c20.map(|x| x / det);
            g[3] = c01.map(|x| x / det);
        }
        for c in 0..3 {
            g[0][c] = -(1..=dim).map(|k| g[k][c]).sum::<f64>();
        }
        Self {
            measure,
            bary_grad: g,
            vertices,
        }
    }

    /// Cartesian point of barycentric coordinates `l`.
    pub fn point(&self, dim: usize, l: &[f64; 4]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for i in 0..=dim {
            for c in 0..3 {
                x[c] += l[i] * self.vertices[i][c];
            }
        }
        x
    }

    /// Cartesian gradients of the quadratic basis at barycentric point `l`.
    pub fn p2_gradients(&self, dim: usize, l: &[f64; 4], out: &mut [[f64; 3]]) {
        let mut db = [[0.0; 4]; 10];
        p2_bary_derivatives(dim, l, &mut db);
        for k in 0..p2_count(dim) {
            let mut gk = [0.0; 3];
            for i in 0..=dim {
                if db[k][i] != 0.0 {
                    for c in 0..dim {
                        gk[c] += db[k][i] * self.bary_grad[i][c];
                    }
                }
            }
            out[k] = gk;
        }
    }

    /// Cartesian Hessians of the quadratic basis.
    pub fn p2_hessians(&self, dim: usize, out: &mut [[[f64; 3]; 3]]) {
        let mut hb = [[[0.0; 4]; 4]; 10];
        p2_bary_hessians(dim, &mut hb);
        for k in 0..p2_count(dim) {
            let mut h = [[0.0; 3]; 3];
            for i in 0..=dim {
                for j in 0..=dim {
                    if hb[k][i][j] != 0.0 {
                        for a in 0..dim {
                            for b in 0..dim {
                                h[a][b] += hb[k][i][j] * self.bary_grad[i][a] * self.bary_grad[j][b];
                            }
                        }
                    }
                }
            }
            out[k] = h;
        }
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_monomial(q: &SimplexQuadrature, dim: usize, pw: [i32; 3]) -> f64 {
        let geo = CellGeometry::new(dim, &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        q.points
            .iter()
            .zip(&q.weights)
            .map(|(l, w)| {
                let x = geo.point(dim, l);
                w * x[0].powi(pw[0]) * x[1].powi(pw[1]) * x[2].powi(pw[2])
            })
            .sum::<f64>()
            * geo.measure
    }

    fn factorial(n: i32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn triangle_rule_exact_to_degree_five() {
        let q = SimplexQuadrature::triangle_degree5();
        for a in 0..=5 {
            for b in 0..=5 - a {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let got = integrate_monomial(&q, 2, [a, b, 0]);
                assert!((got - exact).abs() < 1e-15, "x^{a} y^{b}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn tetrahedron_rule_exact_to_degree_five() {
        let q = SimplexQuadrature::tetrahedron_degree5();
        for a in 0..=5 {
            for b in 0..=5 - a {
                for c in 0..=5 - a - b {
                    let exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3);
                    let got = integrate_monomial(&q, 3, [a, b, c]);
                    assert!((got - exact).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn p2_basis_is_nodal_and_sums_to_one() {
        for dim in [2, 3] {
            let n = p2_count(dim);
            let mut nodes: Vec<[f64; 4]> = (0..=dim)
                .map(|i| {
                    let mut l = [0.0; 4];
                    l[i] = 1.0;
                    l
                })
                .collect();
            for &(a, b) in local_edges(dim) {
                let mut l = [0.0; 4];
                l[a] = 0.5;
                l[b] = 0.5;
                nodes.push(l);
            }
            let mut v = [0.0; 10];
            for (k, l) in nodes.iter().enumerate() {
                p2_values(dim, l, &mut v);
                for j in 0..n {
                    assert!((v[j] - if j == k { 1.0 } else { 0.0 }).abs() < 1e-15);
                }
            }
            p2_values(dim, &[0.1, 0.2, 0.3, 0.4], &mut v);
            let l = if dim == 2 { [0.2, 0.3, 0.5, 0.0] } else { [0.1, 0.2, 0.3, 0.4] };
            p2_values(dim, &l, &mut v);
            assert!((v[..n].iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_reproduce_quadratic() {
        // f = x² + 3xy − y, interpolated exactly by the quadratic basis.
        let v = [[0.3, -0.2, 0.0], [1.4, 0.1, 0.0], [0.5, 1.2, 0.0]];
        let geo = CellGeometry::new(2, &v);
        let f = |x: [f64; 3]| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1];
        let mut pts: Vec<[f64; 4]> = (0..3)
            .map(|i| {
                let mut l = [0.0; 4];
                l[i] = 1.0;
                l
            })
            .collect();
        for &(a, b) in local_edges(2) {
            let mut l = [0.0; 4];
            l[a] = 0.5;
            l[b] = 0.5;
            pts.push(l);
        }
        let coef: Vec<f64> = pts.iter().map(|l| f(geo.point(2, l))).collect();
        let l = [0.2, 0.5, 0.3, 0.0];
        let x = geo.point(2, &l);
        let mut g = [[0.0; 3]; 10];
        geo.p2_gradients(2, &l, &mut g);
        let gx: f64 = (0..6).map(|k| coef[k] * g[k][0]).sum();
        let gy: f64 = (0..6).map(|k| coef[k] * g[k][1]).sum();
        assert!((gx - (2.0 * x[0] + 3.0 * x[1])).abs() < 1e-12);
        assert!((gy - (3.0 * x[0] - 1.0)).abs() < 1e-12);
        let mut h = [[[0.0; 3]; 3]; 10];
        geo.p2_hessians(2, &mut h);
        let hxy: f64 = (0..6).map(|k| coef[k] * h[k][0][1]).sum();
        let hxx: f64 = (0..6).map(|k| coef[k] * h[k][0][0]).sum();
        assert!((hxy - 3.0).abs() < 1e-12 && (hxx - 2.0).abs() < 1e-12);
    }
}
