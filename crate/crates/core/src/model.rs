//! Physical and dimensionless parameters, spring-stiffness algebra, and body geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Dimensional data of the body, the fluid, and the spring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Body mass `M`.
    pub body_mass: f64,
    /// Fluid density `ρ`.
    pub fluid_density: f64,
    /// Kinematic viscosity `ν`.
    pub kinematic_viscosity: f64,
    /// Reference length `L`.
    pub length_scale: f64,
    /// Free-stream speed `V`.
    pub freestream_speed: f64,
    /// Symmetric positive-definite spring stiffness, row-major 3×3.
    pub stiffness: [[f64; 3]; 3],
}

/// Whether the body is elastically mounted or held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BodyMotion {
    /// Rigid translation driven by the fluid load and the spring.
    #[default]
    Spring,
    /// Body held at rest; rigid unknowns are pinned to zero.
    Fixed,
}

/// Shape of the immersed body, centred at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BodyShape {
    /// Disc of the given diameter (2D).
    Circle {
        /// Diameter.
        diameter: f64,
    },
    /// Ellipse with semi-axes along x and y (2D).
    Ellipse {
        /// Semi-axis along the stream.
        semi_x: f64,
        /// Semi-axis across the stream.
        semi_y: f64,
    },
    /// Closed polygon given counter-clockwise, star-shaped about its centroid (2D).
    Polygon {
        /// Vertices; the last vertex connects back to the first.
        points: Vec<[f64; 2]>,
    },
    /// Ball of the given diameter (3D).
    Sphere {
        /// Diameter.
        diameter: f64,
    },
    /// Ellipsoid with semi-axes along x, y, z (3D).
    Ellipsoid {
        /// Semi-axes.
        semi_axes: [f64; 3],
    },
}

/// Validated body shape with its diameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyGeometry {
    shape: BodyShape,
    diameter: f64,
}

impl BodyGeometry {
    /// Validates a shape, recentres polygons at their area centroid, and
    /// computes the diameter.
    pub fn new(shape: BodyShape) -> Result<Self> {
        let shape = match shape {
            BodyShape::Circle { diameter } | BodyShape::Sphere { diameter } if !(diameter > 0.0) => {
                return Err(Error::validation(format!("geometry diameter must be positive (got {diameter})")))
            }
            BodyShape::Ellipse { semi_x, semi_y } if !(semi_x > 0.0 && semi_y > 0.0) => {
                return Err(Error::validation("ellipse semi-axes must be positive"))
            }
            BodyShape::Ellipsoid { semi_axes } if semi_axes.iter().any(|&a| !(a > 0.0)) => {
                return Err(Error::validation("ellipsoid semi-axes must be positive"))
            }
            BodyShape::Polygon { points } => BodyShape::Polygon {
                points: validate_polygon(points)?,
            },
            s => s,
        };
        let diameter = match &shape {
            BodyShape::Circle { diameter } | BodyShape::Sphere { diameter } => *diameter,
            BodyShape::Ellipse { semi_x, semi_y } => 2.0 * semi_x.max(*semi_y),
            BodyShape::Ellipsoid { semi_axes } => 2.0 * semi_axes.iter().cloned().fold(0.0, f64::max),
            BodyShape::Polygon { points } => {
                let mut d: f64 = 0.0;
                for (i, p) in points.iter().enumerate() {
                    for q in &points[i + 1..] {
                        d = d.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                    }
                }
                d
            }
        };
        Ok(Self { shape, diameter })
    }

    /// Unit-diameter circle.
    pub fn unit_circle() -> Self {
        Self::new(BodyShape::Circle { diameter: 1.0 }).expect("valid circle")
    }

    /// Unit-diameter sphere.
    pub fn unit_sphere() -> Self {
        Self::new(BodyShape::Sphere { diameter: 1.0 }).expect("valid sphere")
    }

    /// The validated shape.
    pub fn shape(&self) -> &BodyShape {
        &self.shape
    }

    /// Largest distance between two points of the body.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Spatial dimension implied by the shape.
    pub fn dim(&self) -> usize {
        match self.shape {
            BodyShape::Circle { .. } | BodyShape::Ellipse { .. } | BodyShape::Polygon { .. } => 2,
            BodyShape::Sphere { .. } | BodyShape::Ellipsoid { .. } => 3,
        }
    }

    /// Point of a 2D body boundary hit by the ray from the origin at angle `theta`.
    pub fn boundary_point_2d(&self, theta: f64) -> [f64; 2] {
        let (c, s) = (theta.cos(), theta.sin());
        match &self.shape {
            BodyShape::Circle { diameter } => [0.5 * diameter * c, 0.5 * diameter * s],
            BodyShape::Ellipse { semi_x, semi_y } => {
                let r = semi_x * semi_y / ((semi_y * c).powi(2) + (semi_x * s).powi(2)).sqrt();
                [r * c, r * s]
            }
            BodyShape::Polygon { points } => ray_polygon(points, c, s),
            _ => panic!("boundary_point_2d called on a 3D body"),
        }
    }

    /// Point of a 3D body boundary along the unit direction `dir`.
    pub fn boundary_point_3d(&self, dir: [f64; 3]) -> [f64; 3] {
        match &self.shape {
            BodyShape::Sphere { diameter } => dir.map(|x| 0.5 * diameter * x),
            BodyShape::Ellipsoid { semi_axes } => {
                let q: f64 = (0..3).map(|i| (dir[i] / semi_axes[i]).powi(2)).sum();
                let r = 1.0 / q.sqrt();
                dir.map(|x| r * x)
            }
            _ => panic!("boundary_point_3d called on a 2D body"),
        }
    }
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn validate_polygon(points: Vec<[f64; 2]>) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::validation("polygon needs at least 3 points"));
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        if a == b {
            return Err(Error::validation(format!("polygon has a repeated point at index {i}")));
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, points[j], points[(j + 1) % n]) {
                return Err(Error::validation(format!("polygon edges {i} and {j} intersect")));
            }
        }
    }
    let mut area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        let cr = p[0] * q[1] - q[0] * p[1];
        area += 0.5 * cr;
        cx += (p[0] + q[0]) * cr;
        cy += (p[1] + q[1]) * cr;
    }
    if area <= 0.0 {
        return Err(Error::validation("polygon must be listed counter-clockwise with positive area"));
    }
    cx /= 6.0 * area;
    cy /= 6.0 * area;
    let centred: Vec<[f64; 2]> = points.iter().map(|p| [p[0] - cx, p[1] - cy]).collect();
    // Star-shapedness about the centroid: every edge must be seen counter-clockwise.
    for i in 0..n {
        let (p, q) = (centred[i], centred[(i + 1) % n]);
        if p[0] * q[1] - q[0] * p[1] <= 0.0 {
            return Err(Error::validation("polygon must be star-shaped about its centroid"));
        }
    }
    Ok(centred)
}

fn ray_polygon(points: &[[f64; 2]], c: f64, s: f64) -> [f64; 2] {
    let n = points.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        let e = [q[0] - p[0], q[1] - p[1]];
        let den = c * e[1] - s * e[0];
        if den.abs() < 1e-300 {
            continue;
        }
        let t = (p[0] * e[1] - p[1] * e[0]) / den;
        let u = (p[0] * s - p[1] * c) / den;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
            best = best.min(t);
        }
    }
    [best * c, best * s]
}

/// Symmetric positive-definite spring matrix of size `d × d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stiffness {
    dim: usize,
    entries: Vec<f64>,
}

impl Stiffness {
    /// Builds from a row-major `d × d` list, checking symmetry to 1e-12 relative.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::validation(format!("dimension must be 2 or 3 (got {dim})")));
        }
        if entries.len() != dim * dim {
            return Err(Error::validation(format!(
                "A must have {} entries for dimension {dim} (got {})",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("A has non-finite entries"));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in 0..i {
                if (entries[i * dim + j] - entries[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::validation("A not symmetric"));
                }
            }
        }
        Ok(Self { dim, entries })
    }

    /// `s · I`.
    pub fn isotropic(dim: usize, s: f64) -> Self {
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = s;
        }
        Self { dim, entries: e }
    }

    /// Diagonal matrix.
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        let mut e = vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            e[i * d + i] = *v;
        }
        Self::new(d, e)
    }

    /// Matrix order.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Rows as nested vectors.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.entries[i * self.dim..(i + 1) * self.dim].to_vec()).collect()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    /// `A⁻¹ x`.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::linalg::real_solve(&self.rows(), x)
    }

    /// Matrix scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * s).collect(),
        }
    }
}

/// Extremal eigenvalues and natural frequencies of the stiffness matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessBounds {
    /// Smallest eigenvalue.
    pub a: f64,
    /// Largest eigenvalue.
    pub b: f64,
    /// Square roots of the eigenvalues, ascending.
    pub natural_frequencies: Vec<f64>,
}

/// Computes `(a, b, ω_n)` for an SPD stiffness matrix.
pub fn stiffness_bounds(a: &Stiffness) -> Result<StiffnessBounds> {
    let (vals, _) = symmetric_eigen(&a.rows())?;
    let min = vals[0];
    if !(min > 0.0) {
        return Err(Error::validation(format!(
            "A not positive definite (min eigenvalue {min:e})"
        )));
    }
    Ok(StiffnessBounds {
        a: min,
        b: *vals.last().expect("nonempty"),
        natural_frequencies: vals.iter().map(|v| v.sqrt()).collect(),
    })
}

/// Dimensionless model constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Reynolds-type number `VL/ν`.
    pub lambda: f64,
    /// Mass ratio (fluid over body).
    pub varpi: f64,
    /// Dimensionless spring matrix.
    pub stiffness: Stiffness,
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Body shape.
    pub geometry: BodyGeometry,
    /// Spring-mounted or fixed body.
    pub motion: BodyMotion,
}

impl ModelParams {
    /// Spring-mounted circle (2D) or sphere (3D) of unit diameter.
    pub fn new(lambda: f64, varpi: f64, stiffness: Stiffness) -> Result<Self> {
        let dim = stiffness.dim();
        let geometry = if dim == 2 { BodyGeometry::unit_circle() } else { BodyGeometry::unit_sphere() };
        let m = Self {
            lambda,
            varpi,
            stiffness,
            dim,
            geometry,
            motion: BodyMotion::Spring,
        };
        validate_params(&m)?;
        Ok(m)
    }

    /// Returns a copy with another Reynolds-type number.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// Returns a copy with another geometry.
    pub fn with_geometry(&self, geometry: BodyGeometry) -> Self {
        Self { geometry, ..self.clone() }
    }

    /// Returns a copy with the given body motion.
    pub fn with_motion(&self, motion: BodyMotion) -> Self {
        Self { motion, ..self.clone() }
    }

    /// Returns a copy with another mass ratio.
    pub fn with_varpi(&self, varpi: f64) -> Self {
        Self { varpi, ..self.clone() }
    }
}

/// Summary emitted by [`validate_params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsReport {
    /// Spring eigen-structure.
    pub bounds: StiffnessBounds,
    /// Convention used for the mass ratio in this dimension.
    pub varpi_convention: String,
}

/// Re-verifies every invariant of `m` and reports the normalization used.
pub fn validate_params(m: &ModelParams) -> Result<ParamsReport> {
    if !(m.dim == 2 || m.dim == 3) {
        return Err(Error::validation(format!("dimension must be 2 or 3 (got {})", m.dim)));
    }
    if !m.lambda.is_finite() || m.lambda < 0.0 {
        return Err(Error::validation("lambda negative"));
    }
    if !m.varpi.is_finite() || m.varpi < 0.0 {
        return Err(Error::validation("varpi negative"));
    }
    if m.stiffness.dim() != m.dim {
        return Err(Error::validation("A dimension does not match model dimension"));
    }
    if m.geometry.dim() != m.dim {
        return Err(Error::validation("geometry dimension does not match model dimension"));
    }
    let bounds = stiffness_bounds(&m.stiffness)?;
    let varpi_convention = if m.dim == 2 { "rho*L^2/M (planar)" } else { "rho*L^3/M" };
    Ok(ParamsReport {
        bounds,
        varpi_convention: varpi_convention.into(),
    })
}

/// Converts dimensional data into the dimensionless constants.
///
/// `A = L⁴B/(Mν²)`, `λ = VL/ν`, and `ϖ = ρL³/M` in 3D or `ρL²/M` in 2D.
/// In 2D only the leading 2×2 block of `B` is used.
pub fn nondimensionalize(p: &PhysicalParams, dim: usize) -> Result<ModelParams> {
    for (name, v) in [
        ("body_mass", p.body_mass),
        ("fluid_density", p.fluid_density),
        ("kinematic_viscosity", p.kinematic_viscosity),
        ("length_scale", p.length_scale),
        ("freestream_speed", p.freestream_speed),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::validation(format!("{name} must be positive (got {v})")));
        }
    }
    if !(dim == 2 || dim == 3) {
        return Err(Error::validation(format!("dimension must be 2 or 3 (got {dim})")));
    }
    let full = Stiffness::new(3, p.stiffness.iter().flatten().copied().collect())
        .map_err(|e| Error::validation(format!("stiffness B: {e}")))?;
    stiffness_bounds(&full).map_err(|_| Error::validation("stiffness B not positive definite"))?;
    let l = p.length_scale;
    let nu = p.kinematic_viscosity;
    let scale = l.powi(4) / (p.body_mass * nu * nu);
    let entries: Vec<f64> = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| scale * p.stiffness[i][j])
        .collect();
    let stiffness = Stiffness::new(dim, entries)?;
    let varpi = p.fluid_density * l.powi(dim as i32) / p.body_mass;
    let lambda = p.freestream_speed * l / nu;
    ModelParams::new(lambda, varpi, stiffness)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phys(m: f64, rho: f64, nu: f64, l: f64, v: f64, b: [f64; 3]) -> PhysicalParams {
        PhysicalParams {
            body_mass: m,
            fluid_density: rho,
            kinematic_viscosity: nu,
            length_scale: l,
            freestream_speed: v,
            stiffness: [[b[0], 0.0, 0.0], [0.0, b[1], 0.0], [0.0, 0.0, b[2]]],
        }
    }

    #[test]
    fn identity_case() {
        let m = nondimensionalize(&phys(1.0, 1.0, 1.0, 1.0, 1.0, [1.0; 3]), 3).unwrap();
        assert_eq!(m.lambda, 1.0);
        assert_eq!(m.varpi, 1.0);
        assert_eq!(m.stiffness, Stiffness::isotropic(3, 1.0));
    }

    #[test]
    fn hand_evaluated_case() {
        // L⁴/(Mν²) = 16/(2·0.25) = 32, ρL³/M = 0.5·8/2 = 2, VL/ν = 3·2/0.5 = 12.
        let m = nondimensionalize(&phys(2.0, 0.5, 0.5, 2.0, 3.0, [1.0, 2.0, 4.0]), 3).unwrap();
        assert!((m.lambda - 12.0).abs() < 1e-14);
        assert!((m.varpi - 2.0).abs() < 1e-14);
        assert_eq!(m.stiffness, Stiffness::diagonal(&[32.0, 64.0, 128.0]).unwrap());
    }

    #[test]
    fn planar_mass_ratio_uses_area() {
        let m = nondimensionalize(&phys(2.0, 0.5, 0.5, 2.0, 3.0, [1.0, 2.0, 4.0]), 2).unwrap();
        assert!((m.varpi - 1.0).abs() < 1e-14);
        assert_eq!(m.stiffness.dim(), 2);
    }

    #[test]
    fn doubling_speed_doubles_lambda_only() {
        let a = nondimensionalize(&phys(1.5, 0.7, 0.3, 1.1, 1.0, [1.0, 2.0, 3.0]), 3).unwrap();
        let b = nondimensionalize(&phys(1.5, 0.7, 0.3, 1.1, 2.0, [1.0, 2.0, 3.0]), 3).unwrap();
        assert!((b.lambda - 2.0 * a.lambda).abs() < 1e-12 * b.lambda);
        assert_eq!(a.varpi, b.varpi);
        assert_eq!(a.stiffness, b.stiffness);
    }

    #[test]
    fn rejects_bad_inputs_by_name() {
        let err = nondimensionalize(&phys(-1.0, 1.0, 1.0, 1.0, 1.0, [1.0; 3]), 3).unwrap_err();
        assert!(err.to_string().contains("body_mass"));
        let err = nondimensionalize(&phys(1.0, 1.0, 1.0, 1.0, 1.0, [1.0, -1.0, 1.0]), 3).unwrap_err();
        assert!(err.to_string().contains("not positive definite"));
    }

    #[test]
    fn bounds_of_diagonal() {
        let b = stiffness_bounds(&Stiffness::diagonal(&[1.0, 4.0, 9.0]).unwrap()).unwrap();
        assert_eq!((b.a, b.b), (1.0, 9.0));
        for (w, e) in b.natural_frequencies.iter().zip([1.0, 2.0, 3.0]) {
            assert!((w - e).abs() < 1e-14);
        }
    }

    #[test]
    fn validation_messages() {
        let mut m = ModelParams::new(1.0, 1.0, Stiffness::isotropic(2, 1.0)).unwrap();
        m.varpi = -1.0;
        assert_eq!(validate_params(&m).unwrap_err().to_string(), "varpi negative");
        m.varpi = 1.0;
        m.stiffness = Stiffness::diagonal(&[1.0, -2.0]).unwrap();
        assert!(validate_params(&m).unwrap_err().to_string().starts_with("A not positive definite"));
    }

    #[test]
    fn polygon_is_recentred_and_measured() {
        let g = BodyGeometry::new(BodyShape::Polygon {
            points: vec![[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]],
        })
        .unwrap();
        assert!((g.diameter() - 8f64.sqrt()).abs() < 1e-12);
        let p = g.boundary_point_2d(0.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn self_intersecting_polygon_rejected() {
        let bow = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(BodyGeometry::new(BodyShape::Polygon { points: bow }).is_err());
    }
}
