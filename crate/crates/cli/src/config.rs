//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Every table rejects unknown keys and fills omitted keys with defaults,
//! so the effective configuration written next to the results is complete.

use std::path::{Path, PathBuf};

use oscilla::hopf::BranchSettings;
use oscilla::mesh::MeshSettings;
use oscilla::model::{validate_params, BodyGeometry, BodyMotion, BodyShape, ModelParams, Stiffness};
use oscilla::spectral::{CrossingSettings, EigenSettings};
use oscilla::steady::SteadySettings;
use oscilla::timestep::StepSettings;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Complete configuration of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Directory receiving all artifacts.
    pub output: PathBuf,
    /// Seed for every randomized start vector and check.
    pub seed: u64,
    /// Physical model.
    pub model: ModelSection,
    /// Mesh generation.
    pub mesh: MeshSettings,
    /// Equilibrium solves.
    pub steady: SteadySection,
    /// Eigenvalue computations and the crossing search.
    pub spectral: SpectralSection,
    /// Fourier-mode problems and the resonance scan.
    pub modes: ModesSection,
    /// Periodic branch.
    pub branch: BranchSection,
    /// Time integration.
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("oscilla-out"),
            seed: 7,
            model: ModelSection::default(),
            mesh: MeshSettings::default(),
            steady: SteadySection::default(),
            spectral: SpectralSection::default(),
            modes: ModesSection::default(),
            branch: BranchSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

/// `[model]` table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Reynolds-type number used when a command needs a single value.
    pub lambda: f64,
    /// Mass ratio.
    pub varpi: f64,
    /// Spring matrix, row-major.
    #[serde(rename = "A")]
    pub stiffness: Vec<f64>,
    /// Spatial dimension.
    pub dimension: usize,
    /// Spring-mounted or fixed body.
    pub motion: BodyMotion,
    /// Body shape.
    pub geometry: GeometrySection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            lambda: 40.0,
            varpi: 1.0,
            stiffness: vec![4.0, 0.0, 0.0, 4.0],
            dimension: 2,
            motion: BodyMotion::Spring,
            geometry: GeometrySection::default(),
        }
    }
}

/// `[model.geometry]` table: a shape name and its numeric parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    /// One of `circle`, `ellipse`, `polygon`, `sphere`, `ellipsoid`.
    pub kind: String,
    /// `circle`/`sphere`: diameter; `ellipse`: two semi-axes; `ellipsoid`:
    /// three semi-axes; `polygon`: flattened vertex coordinates.
    pub params: Vec<f64>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            kind: "circle".into(),
            params: vec![1.0],
        }
    }
}

impl GeometrySection {
    fn shape(&self) -> Result<BodyShape, CliError> {
        let p = &self.params;
        let expect = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(CliError::Validation(format!(
                    "model.geometry.params: `{}` takes {n} values (got {})",
                    self.kind,
                    p.len()
                )))
            }
        };
        Ok(match self.kind.as_str() {
            "circle" => {
                expect(1)?;
                BodyShape::Circle { diameter: p[0] }
            }
            "sphere" => {
                expect(1)?;
                BodyShape::Sphere { diameter: p[0] }
            }
            "ellipse" => {
                expect(2)?;
                BodyShape::Ellipse { semi_x: p[0], semi_y: p[1] }
            }
            "ellipsoid" => {
                expect(3)?;
                BodyShape::Ellipsoid { semi_axes: [p[0], p[1], p[2]] }
            }
            "polygon" => {
                if p.len() < 6 || p.len() % 2 != 0 {
                    return Err(CliError::Validation(
                        "model.geometry.params: `polygon` takes an even number (at least 6) of coordinates".into(),
                    ));
                }
                BodyShape::Polygon {
                    points: p.chunks(2).map(|c| [c[0], c[1]]).collect(),
                }
            }
            other => {
                return Err(CliError::Validation(format!(
                    "model.geometry.kind: unknown shape `{other}` (expected circle, ellipse, polygon, sphere or ellipsoid)"
                )))
            }
        })
    }

    /// Validated geometry.
    pub fn geometry(&self) -> Result<BodyGeometry, CliError> {
        Ok(BodyGeometry::new(self.shape()?)?)
    }
}

impl ModelSection {
    /// Validated model parameters at `self.lambda`.
    pub fn params(&self) -> Result<ModelParams, CliError> {
        let stiffness = Stiffness::new(self.dimension, self.stiffness.clone())?;
        let params = ModelParams::new(self.lambda, self.varpi, stiffness)?
            .with_geometry(self.geometry.geometry()?)
            .with_motion(self.motion);
        validate_params(&params)?;
        Ok(params)
    }
}

/// `[steady]` table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySection {
    /// Values of `λ` solved by `oscilla steady`; empty means `model.lambda`.
    pub lambdas: Vec<f64>,
    /// Newton tolerance.
    pub tol_newton: f64,
    /// Newton iteration cap.
    pub max_iter: usize,
    /// Smallest continuation step.
    pub min_step: f64,
    /// Write velocity and pressure snapshots under `fields/`.
    pub write_fields: bool,
}

impl Default for SteadySection {
    fn default() -> Self {
        let s = SteadySettings::default();
        Self {
            lambdas: Vec::new(),
            tol_newton: s.tol_newton,
            max_iter: s.max_iter,
            min_step: s.min_step,
            write_fields: true,
        }
    }
}

impl SteadySection {
    /// Solver settings.
    pub fn settings(&self) -> SteadySettings {
        SteadySettings {
            tol_newton: self.tol_newton,
            max_iter: self.max_iter,
            min_step: self.min_step,
        }
    }
}

/// `[spectral]` table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    /// Range of `Im ν` scanned for eigenvalues.
    pub window: [f64; 2],
    /// Shifts across the window.
    pub shifts: usize,
    /// Arnoldi subspace dimension.
    pub krylov_dim: usize,
    /// Ritz pairs refined per shift.
    pub per_shift: usize,
    /// Eigenpair residual tolerance.
    pub tol: f64,
    /// Discard eigenvalues with `|Re ν|` above this.
    pub max_real: f64,
    /// Bracket for the crossing search.
    pub lambda_range: [f64; 2],
    /// Tolerance on `|Re ν|` at the crossing.
    pub crossing_tol: f64,
    /// Bracket refinements allowed.
    pub crossing_max_iter: usize,
    /// Highest harmonic checked for resonance.
    pub resonance_kmax: usize,
}

impl Default for SpectralSection {
    fn default() -> Self {
        let e = EigenSettings::for_flow();
        Self {
            window: e.window,
            shifts: e.shifts,
            krylov_dim: e.krylov_dim,
            per_shift: e.per_shift,
            tol: e.tol,
            max_real: e.max_real,
            lambda_range: [40.0, 55.0],
            crossing_tol: 1e-7,
            crossing_max_iter: 40,
            resonance_kmax: 4,
        }
    }
}

impl SpectralSection {
    /// Eigensolver settings seeded from the run seed.
    pub fn eigen(&self, seed: u64) -> EigenSettings {
        EigenSettings {
            window: self.window,
            shifts: self.shifts,
            krylov_dim: self.krylov_dim,
            per_shift: self.per_shift,
            tol: self.tol,
            max_real: self.max_real,
            seed,
        }
    }

    /// Crossing-search settings seeded from the run seed.
    pub fn crossing(&self, seed: u64) -> CrossingSettings {
        CrossingSettings {
            eigen: self.eigen(seed),
            tol: self.crossing_tol,
            max_iter: self.crossing_max_iter,
        }
    }
}

/// `[modes]` table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesSection {
    /// Base frequency `ζ₀`.
    pub zeta: f64,
    /// Oseen drift parameter `λ_o`.
    pub lambda: f64,
    /// Highest Fourier index.
    pub kmax: usize,
    /// Mass ratios of the resonance scan.
    pub varpi_grid: Vec<f64>,
    /// Forcing coefficient applied at every harmonic of the scan.
    pub forcing: Vec<f64>,
}

impl Default for ModesSection {
    fn default() -> Self {
        Self {
            zeta: 35.0,
            lambda: 46.5,
            kmax: 4,
            varpi_grid: vec![0.125, 0.25, 0.5, 1.0, 2.0],
            forcing: vec![0.0, 1.0],
        }
    }
}

/// `[branch]` table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchSection {
    /// Largest amplitude parameter.
    pub epsilon_max: f64,
    /// Grid points in `[−ε_max, ε_max]`.
    pub points: usize,
    /// Halve `epsilon_max` until the nonlinear correction stays below 10%.
    pub auto_epsilon: bool,
    /// Harmonic truncation.
    pub kmax: usize,
    /// Newton tolerance.
    pub tol: f64,
    /// Newton iteration cap.
    pub max_newton: usize,
    /// Inner GMRES relative tolerance.
    pub gmres_tol: f64,
    /// GMRES restart length.
    pub gmres_restart: usize,
    /// GMRES iteration cap.
    pub gmres_max_iter: usize,
}

impl Default for BranchSection {
    fn default() -> Self {
        let b = BranchSettings::default();
        Self {
            epsilon_max: 0.05,
            points: 9,
            auto_epsilon: false,
            kmax: b.kmax,
            tol: b.tol,
            max_newton: b.max_newton,
            gmres_tol: b.gmres_tol,
            gmres_restart: b.gmres_restart,
            gmres_max_iter: b.gmres_max_iter,
        }
    }
}

impl BranchSection {
    /// Harmonic-balance settings.
    pub fn settings(&self) -> BranchSettings {
        BranchSettings {
            kmax: self.kmax,
            tol: self.tol,
            max_newton: self.max_newton,
            gmres_tol: self.gmres_tol,
            gmres_restart: self.gmres_restart,
            gmres_max_iter: self.gmres_max_iter,
        }
    }
}

/// `[simulate]` table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Parameter of the simulation.
    pub lambda: f64,
    /// Final time.
    pub t_final: f64,
    /// Time step.
    pub dt: f64,
    /// Record every this many steps.
    pub sample_stride: usize,
    /// Gram norm of the initial perturbation along the least stable mode.
    pub amplitude: f64,
    /// Abort when the state norm exceeds this bound.
    pub blowup: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            lambda: 48.0,
            t_final: 20.0,
            dt: 0.004,
            sample_stride: 1,
            amplitude: 1e-3,
            blowup: 1e6,
        }
    }
}

impl SimulateSection {
    /// Integrator settings.
    pub fn settings(&self) -> StepSettings {
        StepSettings {
            dt: self.dt,
            t_final: self.t_final,
            sample_stride: self.sample_stride,
            snapshot_stride: 0,
            blowup: self.blowup,
        }
    }
}

impl RunConfig {
    /// Parses TOML text.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The effective configuration as TOML, with every key spelled out.
    pub fn to_toml(&self) -> String {
        let mut text = toml::to_string(self).expect("configuration is always serializable");
        if self.mesh.first_layer.is_none() {
            text.push_str("\n# mesh.first_layer is unset: the first radial layer matches the smallest azimuthal spacing\n");
        }
        text
    }

    /// Checks cross-field consistency not covered by the types.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.params()?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CliError::Validation(format!("{name} must be positive (got {v})")))
            }
        };
        positive("simulate.dt", self.simulate.dt)?;
        positive("simulate.amplitude", self.simulate.amplitude)?;
        positive("branch.epsilon_max", self.branch.epsilon_max)?;
        if self.branch.points < 4 {
            return Err(CliError::Validation(format!(
                "branch.points must be at least 4 (got {})",
                self.branch.points
            )));
        }
        let [a, b] = self.spectral.lambda_range;
        if !(b > a) {
            return Err(CliError::Validation(format!(
                "spectral.lambda_range must be increasing (got [{a}, {b}])"
            )));
        }
        if self.modes.forcing.len() != self.model.dimension {
            return Err(CliError::Validation(format!(
                "modes.forcing needs {} components (got {})",
                self.model.dimension,
                self.modes.forcing.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_materializes_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        let text = c.to_toml();
        for key in ["seed", "R_trunc", "resolution", "wake_angle_deg", "grading", "varpi", "A", "tol_newton", "kmax", "t_final"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
        let again = RunConfig::from_toml(&text).unwrap();
        assert_eq!(toml::to_string(&again).unwrap(), toml::to_string(&c).unwrap());
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [
            ("[model]\nlambada = 3.0\n", "lambada"),
            ("[mesh]\nresolutoin = 3\n", "resolutoin"),
            ("colour = 1\n", "colour"),
            ("[nonsense]\n", "nonsense"),
        ] {
            let err = RunConfig::from_toml(text).unwrap_err();
            assert!(matches!(err, CliError::Validation(_)));
            assert!(err.to_string().contains(key), "{err}");
        }
    }

    #[test]
    fn geometry_parameters_are_checked() {
        let mut m = ModelSection::default();
        m.geometry = GeometrySection {
            kind: "ellipse".into(),
            params: vec![1.0],
        };
        assert!(m.params().unwrap_err().to_string().contains("takes 2 values"));
        m.geometry.kind = "blob".into();
        assert!(m.params().unwrap_err().to_string().contains("blob"));
        m.geometry = GeometrySection {
            kind: "ellipse".into(),
            params: vec![0.5, 0.25],
        };
        assert!(m.params().is_ok());
    }

    #[test]
    fn nested_geometry_keys_parse() {
        let c = RunConfig::from_toml("[model]\ngeometry.kind = \"ellipse\"\ngeometry.params = [0.6, 0.4]\n").unwrap();
        assert_eq!(c.model.geometry.kind, "ellipse");
        assert!(c.validate().is_ok());
    }
}
