//! Fourier-mode boundary-value problems of the linearized flow past an
//! oscillating body.
//!
//! Time-periodic fields with period `2π` in `τ = ζ₀t` are expanded as
//! `Σ_k w_k e^{ikτ}`. Each coefficient solves the Oseen problem
//! `ikζ₀ w − λ_o ∂₁w = Δw − ∇q`, `div w = 0` on the truncated domain, so the
//! periodic problem decouples into one complex sparse solve per `k`.
//!
//! The unit-trace modes `h_k^{(m)}` (body velocity `ζ₀e_m`) define the
//! traction matrix `K(k)` and the resonance matrix
//! `M(k) = A − k²ζ₀²I + ikϖK(k)`, from which forced periodic responses are
//! built. Tractions are read from the rigid-velocity rows of the momentum
//! residual, the same discrete force that drives the body in the coupled
//! system.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::discretization::FsiOperators;
use crate::error::{Error, Result};
use crate::linalg::{
    complex_eigen, complex_singular_values, complex_solve, symmetric_eigen, CsrMatrix, LinearSolve, MatrixFamily,
    TripletList, C64,
};
use crate::model::Stiffness;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Velocity norms of one mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ModeNorms {
    /// `‖h‖` in `L²`.
    pub l2: f64,
    /// `‖∇h‖` in `L²`.
    pub gradient: f64,
    /// Broken (cellwise) `‖D²h‖` in `L²`.
    pub hessian: f64,
}

/// Solution of the mode problem for one `(k, m)`.
#[derive(Clone, Debug)]
pub struct ModeSolution {
    /// Fourier index.
    pub k: i64,
    /// Zero-based index `m` of the unit direction of the body trace.
    pub direction: usize,
    /// Global vector holding velocity `h` (body trace `ζ₀e_m` in the rigid
    /// velocity slots), zero displacement, and pressure `p`.
    pub state: Vec<C64>,
    /// Force `∫ T(h, p)·n` exerted on the body, one entry per axis.
    pub traction: Vec<C64>,
    /// Velocity norms.
    pub norms: ModeNorms,
    /// Relative residual of the momentum and continuity rows.
    pub residual: f64,
}

/// Traction matrix `K_{ℓm} = (∫ T(h^{(m)}_k, p^{(m)}_k)·n)_ℓ`.
#[derive(Clone, Debug)]
pub struct KMatrix {
    /// Fourier index.
    pub k: i64,
    /// Base frequency.
    pub zeta0: f64,
    /// Parameter of the Oseen drift.
    pub lambda_o: f64,
    /// Row-major `d × d` entries.
    pub entries: Vec<Vec<C64>>,
    /// Smallest singular value.
    pub min_singular_value: f64,
    /// False when the smallest singular value is below `1e-12`, which
    /// indicates a discretization failure.
    pub invertible: bool,
}

impl KMatrix {
    /// Collects the tractions of the `d` modes of one `k`.
    pub fn from_modes(modes: &[ModeSolution], zeta0: f64, lambda_o: f64) -> Result<Self> {
        let d = modes.len();
        let k = modes.first().map_or(0, |m| m.k);
        let entries: Vec<Vec<C64>> = (0..d).map(|l| modes.iter().map(|m| m.traction[l]).collect()).collect();
        let sv = complex_singular_values(&entries)?;
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            k,
            zeta0,
            lambda_o,
            entries,
            min_singular_value: min,
            invertible: min >= 1e-12,
        })
    }

    /// `K x`.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.entries.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `K⁻¹ x`.
    pub fn solve(&self, x: &[C64]) -> Result<Vec<C64>> {
        complex_solve(&self.entries, x)
    }
}

/// Resonance matrix `M(k) = A − k²ζ₀²I + ikϖK(k)` with singular-value
/// diagnostics.
#[derive(Clone, Debug)]
pub struct ResonanceMatrix {
    /// Fourier index.
    pub k: i64,
    /// Row-major `d × d` entries.
    pub entries: Vec<Vec<C64>>,
    /// Smallest singular value.
    pub min_singular_value: f64,
    /// Ratio of largest to smallest singular value.
    pub condition_number: f64,
}

impl ResonanceMatrix {
    /// Assembles `M(k)` from the stiffness, mass ratio and traction matrix.
    pub fn new(k: i64, zeta0: f64, stiffness: &Stiffness, varpi: f64, kmat: &KMatrix) -> Result<Self> {
        let d = stiffness.dim();
        if kmat.entries.len() != d {
            return Err(Error::validation(format!(
                "stiffness is {d} x {d} but the traction matrix is {0} x {0}",
                kmat.entries.len()
            )));
        }
        let kf = k as f64;
        let coupling = C64::new(0.0, kf * varpi);
        let entries: Vec<Vec<C64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let diag = if i == j { kf * kf * zeta0 * zeta0 } else { 0.0 };
                        C64::new(stiffness.get(i, j) - diag, 0.0) + coupling * kmat.entries[i][j]
                    })
                    .collect()
            })
            .collect();
        let sv = complex_singular_values(&entries)?;
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let max = sv.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            k,
            entries,
            min_singular_value: min,
            condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
        })
    }

    /// Fails unless the smallest singular value exceeds `1e-10·scale`.
    pub fn ensure_invertible(&self, scale: f64) -> Result<()> {
        if self.min_singular_value > 1e-10 * scale {
            Ok(())
        } else {
            Err(Error::Singular(format!(
                "resonance matrix M(k) is singular for k = {} (min singular value {:e}, condition number {:e})",
                self.k, self.min_singular_value, self.condition_number
            )))
        }
    }

    /// `M⁻¹ f`.
    pub fn solve(&self, f: &[C64]) -> Result<Vec<C64>> {
        complex_solve(&self.entries, f)
    }
}

/// Fourier coefficients of a real `2π`-periodic vector function; the
/// coefficient of `e^{−ikτ}` is the conjugate of that of `e^{ikτ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries {
    /// Coefficient of `k = 0`.
    pub mean: Vec<C64>,
    /// `harmonics[k − 1]` is the coefficient of `e^{ikτ}`.
    pub harmonics: Vec<Vec<C64>>,
}

impl FourierSeries {
    /// Series of vectors of length `len` with all coefficients zero.
    pub fn zeros(len: usize, kmax: usize) -> Self {
        Self {
            mean: vec![ZERO; len],
            harmonics: vec![vec![ZERO; len]; kmax],
        }
    }

    /// Series with the single coefficient `coefficient` at `k ≥ 1` (and its
    /// conjugate at `−k`).
    pub fn single(kmax: usize, k: usize, coefficient: Vec<C64>) -> Self {
        let mut s = Self::zeros(coefficient.len(), kmax.max(k));
        s.harmonics[k - 1] = coefficient;
        s
    }

    /// Length of each coefficient vector.
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    /// True for zero-length coefficient vectors.
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Truncation `K_max`.
    pub fn kmax(&self) -> usize {
        self.harmonics.len()
    }

    /// Coefficient of `e^{ikτ}` for any integer `k`.
    pub fn coefficient(&self, k: i64) -> Vec<C64> {
        let idx = k.unsigned_abs() as usize;
        if k == 0 {
            self.mean.clone()
        } else if idx > self.kmax() {
            vec![ZERO; self.len()]
        } else if k > 0 {
            self.harmonics[idx - 1].clone()
        } else {
            self.harmonics[idx - 1].iter().map(|c| c.conj()).collect()
        }
    }

    /// Time-`L²` norm `((2π)⁻¹∫|F|²)^{1/2} = (Σ_k |F_k|²)^{1/2}`.
    pub fn norm(&self) -> f64 {
        let sq = |v: &[C64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>();
        (sq(&self.mean) + 2.0 * self.harmonics.iter().map(|h| sq(h)).sum::<f64>()).sqrt()
    }

    /// Every coefficient multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let sc = |v: &Vec<C64>| v.iter().map(|c| c * s).collect();
        Self {
            mean: sc(&self.mean),
            harmonics: self.harmonics.iter().map(sc).collect(),
        }
    }

    fn has_zero_mean(&self) -> bool {
        self.mean.iter().all(|c| *c == ZERO)
    }
}

/// One Fourier coefficient of a periodic coupled response.
#[derive(Clone, Debug)]
pub struct ResponseMode {
    /// Fourier index (`k ≥ 1`).
    pub k: i64,
    /// Global vector: velocity `w_k` (body trace in the rigid-velocity
    /// slots), displacement `ξ_k` in the rigid-displacement slots, and
    /// pressure `q_k`.
    pub state: Vec<C64>,
    /// Relative residual of the per-mode equations.
    pub residual: f64,
    /// Smallest singular value of `M(k)` (zero when the mode was not solved
    /// because its data vanish).
    pub min_singular_value: f64,
}

/// Fourier coefficients `(w_k, q_k, ξ_k)`, `1 ≤ k ≤ K_max`, of a real
/// zero-mean periodic response; negative `k` follow by conjugation and the
/// `k = 0` entry is identically zero.
#[derive(Clone, Debug)]
pub struct FourierModeSet {
    /// Spatial dimension.
    pub dim: usize,
    /// First rigid-displacement index in each state.
    pub eta_offset: usize,
    /// `modes[k − 1]` holds index `k`.
    pub modes: Vec<ResponseMode>,
}

impl FourierModeSet {
    /// Truncation `K_max`.
    pub fn kmax(&self) -> usize {
        self.modes.len()
    }

    /// State coefficient for any integer `k`.
    pub fn coefficient(&self, k: i64) -> Vec<C64> {
        let idx = k.unsigned_abs() as usize;
        let n = self.modes.first().map_or(0, |m| m.state.len());
        if k == 0 || idx > self.kmax() {
            vec![ZERO; n]
        } else if k > 0 {
            self.modes[idx - 1].state.clone()
        } else {
            self.modes[idx - 1].state.iter().map(|c| c.conj()).collect()
        }
    }

    /// Displacement coefficient `ξ_k` for any integer `k`.
    pub fn displacement(&self, k: i64) -> Vec<C64> {
        let c = self.coefficient(k);
        if c.is_empty() {
            return vec![ZERO; self.dim];
        }
        c[self.eta_offset..self.eta_offset + self.dim].to_vec()
    }

    /// Largest per-mode relative residual.
    pub fn max_residual(&self) -> f64 {
        self.modes.iter().map(|m| m.residual).fold(0.0, f64::max)
    }
}

/// Both sides of the mode energy identity for random combinations
/// `h = Σ α_m h^{(m)}`.
///
/// The identity is written `s·α*Kα = ikζ₀‖h‖² + c_D‖D(h)‖² − λ_o[(∂₁h, h*) + φ(h)]`
/// where `φ(h) = ½∫_{outflow} n₁|h|²` is the flux through the truncation
/// boundary. The prefactor `s` and coefficient `c_D` are resolved from the
/// first sample and checked on all others.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyIdentityReport {
    /// Fourier index.
    pub k: i64,
    /// Number of random samples.
    pub samples: usize,
    /// Resolved prefactor `s` of `α*Kα`.
    pub resolved_prefactor: f64,
    /// Resolved prefactor divided by `ζ₀`.
    pub prefactor_over_zeta0: f64,
    /// Resolved coefficient `c_D` of `‖D(h)‖²`.
    pub resolved_diffusion_coefficient: f64,
    /// Largest relative mismatch with the resolved `(s, c_D)`.
    pub max_mismatch: f64,
    /// Largest relative mismatch with `(s, c_D) = (ζ₀², 2)`.
    pub mismatch_zeta0_squared_two: f64,
    /// Largest relative mismatch with `(s, c_D) = (ζ₀², 1)`.
    pub mismatch_zeta0_squared_one: f64,
    /// Largest `|Re (∂₁h, h*)| / (‖h‖‖∇h‖)`.
    pub skew_real_part: f64,
    /// Largest `λ_o|φ(h)| / |s·α*Kα|`.
    pub outflow_share: f64,
    /// Largest relative deviation of `α ↦ 2α` from quadratic scaling.
    pub scaling_error: f64,
}

/// Amplitudes of a forced response against the mass ratio.
#[derive(Clone, Debug, Serialize)]
pub struct ResonanceScan {
    /// Natural frequency `ω_n` closest to a multiple of `ζ₀`.
    pub natural_frequency: f64,
    /// Index `k̄` with `k̄ζ₀` closest to `ω_n`.
    pub resonant_k: i64,
    /// `|k̄ζ₀ − ω_n|`.
    pub detuning: f64,
    /// Rows `(ϖ, k, |ξ_k|)`.
    pub rows: Vec<ScanRow>,
    /// Least-squares slope of `log|ξ_k̄|` against `log ϖ`.
    pub slope: f64,
    /// Fitted `|ξ_k̄|·ϖ` (intercept of the log-log fit).
    pub measured_prefactor: f64,
    /// `|K⁻¹F_k̄|/k̄`, from eliminating `ξ` at exact resonance.
    pub direct_prefactor: f64,
    /// `(√ζ₀/ω_n)|K⁻¹F_k̄|`.
    pub sqrt_zeta0_prefactor: f64,
    /// Smallest singular value of `M(k)` over the whole scan.
    pub min_singular_value: f64,
}

/// One row of a resonance scan.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScanRow {
    /// Mass ratio.
    pub varpi: f64,
    /// Fourier index.
    pub k: i64,
    /// `|ξ_k|`.
    pub amplitude: f64,
}

/// Normalized mode norms over a range of `k`.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    /// Fourier indices.
    pub ks: Vec<i64>,
    /// `‖∇h_k‖ / (|k| + 1)^{1/2}`.
    pub gradient_ratios: Vec<f64>,
    /// `‖D²h_k‖ / (|k| + 1)`.
    pub hessian_ratios: Vec<f64>,
    /// Max over min of `gradient_ratios`.
    pub gradient_spread: f64,
    /// Max over min of `hessian_ratios`.
    pub hessian_spread: f64,
}

/// Fourier-mode problems at fixed `(ζ₀, λ_o)`.
pub struct ModeProblem {
    ops: Arc<FsiOperators>,
    zeta0: f64,
    lambda_o: f64,
    oseen: CsrMatrix,
    skew: CsrMatrix,
    outflow: CsrMatrix,
    family: MatrixFamily,
}

fn hermitian(m: &CsrMatrix, a: &[C64], b: &[C64]) -> C64 {
    let mut y = vec![ZERO; a.len()];
    m.cmatvec_add(ONE, b, &mut y);
    a.iter().zip(&y).map(|(x, v)| x.conj() * v).sum()
}

fn split(x: &[C64]) -> (Vec<f64>, Vec<f64>) {
    (x.iter().map(|c| c.re).collect(), x.iter().map(|c| c.im).collect())
}

fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(0.0, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Natural frequencies `ω_n`, the square roots of the eigenvalues of `A`.
pub fn natural_frequencies(stiffness: &Stiffness) -> Result<Vec<f64>> {
    let (vals, _) = symmetric_eigen(&stiffness.rows())?;
    Ok(vals.iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// `count` complex vectors of length `d` with entries uniform in the unit
/// square, from a seeded generator.
pub fn random_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..d).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
        .collect()
}

impl ModeProblem {
    /// Sets up the mode problems; requires `ζ₀ ≠ 0`.
    pub fn new(ops: Arc<FsiOperators>, zeta0: f64, lambda_o: f64) -> Result<Self> {
        if !(zeta0.is_finite() && zeta0 != 0.0) {
            return Err(Error::validation("zeta0 must be finite and nonzero"));
        }
        if !lambda_o.is_finite() {
            return Err(Error::validation("lambda_o must be finite"));
        }
        let t1 = &ops.transport[0];
        let t1t = t1.transpose();
        let oseen = CsrMatrix::linear_combination(&[(1.0, &ops.stokes()), (-lambda_o, t1)]);
        let skew = CsrMatrix::linear_combination(&[(0.5, t1), (-0.5, &t1t)]);
        let outflow = CsrMatrix::linear_combination(&[(0.5, t1), (0.5, &t1t)]);
        let family = MatrixFamily::new(vec![
            ops.without_rigid_rows(&oseen, false),
            ops.without_rigid_rows(&ops.mass, false),
            ops.rigid_identity(),
        ]);
        Ok(Self {
            ops,
            zeta0,
            lambda_o,
            oseen,
            skew,
            outflow,
            family,
        })
    }

    /// Base frequency `ζ₀`.
    pub fn zeta0(&self) -> f64 {
        self.zeta0
    }

    /// Oseen drift parameter `λ_o`.
    pub fn lambda_o(&self) -> f64 {
        self.lambda_o
    }

    /// Mesh-level operators.
    pub fn operators(&self) -> &Arc<FsiOperators> {
        &self.ops
    }

    fn shift(&self, k: i64) -> C64 {
        C64::new(0.0, k as f64 * self.zeta0)
    }

    /// `(ikζ₀M + S − λ_o T₁) x` with all rows; its rigid-velocity rows are
    /// the force on the body.
    pub fn apply(&self, k: i64, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; x.len()];
        self.oseen.cmatvec_add(ONE, x, &mut y);
        self.ops.mass.cmatvec_add(self.shift(k), x, &mut y);
        y
    }

    /// Real and imaginary parts of the system matrix of the mode problem
    /// for index `k`: fluid rows of `ikζ₀M + S − λ_o T₁` and identity rows on
    /// the rigid block.
    pub fn system_matrix(&self, k: i64) -> (CsrMatrix, CsrMatrix) {
        let re = CsrMatrix::linear_combination(&[(1.0, self.family.member(0)), (1.0, self.family.member(2))]);
        let im = self.family.member(1).scaled(k as f64 * self.zeta0);
        (re, im)
    }

    /// Right-hand side of the mode problem for direction `m`.
    pub fn boundary_data(&self, m: usize) -> Vec<C64> {
        let l = *self.ops.space().layout();
        let mut b = vec![ZERO; l.total];
        b[l.sigma + m] = C64::new(self.zeta0, 0.0);
        b
    }

    fn fluid_norm(&self, y: &[C64]) -> f64 {
        let l = *self.ops.space().layout();
        y.iter()
            .enumerate()
            .filter(|(i, _)| !l.is_rigid(*i))
            .map(|(_, c)| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Velocity norms of the velocity part of a complex global vector.
    pub fn norms(&self, x: &[C64]) -> ModeNorms {
        let (re, im) = split(x);
        ModeNorms {
            l2: (self.ops.velocity_norm_sq(&re) + self.ops.velocity_norm_sq(&im)).sqrt(),
            gradient: (self.ops.gradient_norm_sq(&re) + self.ops.gradient_norm_sq(&im)).sqrt(),
            hessian: (self.ops.broken_hessian_norm_sq(&re) + self.ops.broken_hessian_norm_sq(&im)).sqrt(),
        }
    }

    fn factor(&self, k: i64) -> Result<Box<dyn LinearSolve<C64>>> {
        match self.family.factor::<C64>(&[ONE, self.shift(k), ONE]) {
            Ok(lu) => Ok(Box::new(lu)),
            Err(e) => {
                let sp = self.ops.space();
                Err(Error::Singular(format!(
                    "mode problem for k = {k} could not be factored ({e}); mesh has {} unknowns, truncation radius {}, \
                     largest cell {:.3e}",
                    sp.total(),
                    sp.mesh().truncation_radius(),
                    sp.mesh().max_cell_size()
                )))
            }
        }
    }

    /// Solves the mode problems `m = 0..d` for one `k` with a single
    /// factorization; `k = 0` gives zero modes by convention.
    pub fn solve_modes(&self, k: i64) -> Result<Vec<ModeSolution>> {
        let l = *self.ops.space().layout();
        let d = l.dim;
        if k == 0 {
            return Ok((0..d)
                .map(|m| ModeSolution {
                    k,
                    direction: m,
                    state: vec![ZERO; l.total],
                    traction: vec![ZERO; d],
                    norms: ModeNorms::default(),
                    residual: 0.0,
                })
                .collect());
        }
        let lu = self.factor(k)?;
        (0..d)
            .into_par_iter()
            .map(|m| {
                let boundary = self.boundary_data(m);
                let mut x = boundary.clone();
                lu.solve_in_place(&mut x);
                x[l.sigma..l.pressure].copy_from_slice(&boundary[l.sigma..l.pressure]);
                let mut r = self.apply(k, &x);
                for (i, v) in r.iter_mut().enumerate() {
                    *v = if l.is_rigid(i) { ZERO } else { -*v };
                }
                lu.solve_in_place(&mut r);
                for (i, (xi, ri)) in x.iter_mut().zip(&r).enumerate() {
                    if !l.is_rigid(i) {
                        *xi += ri;
                    }
                }
                let y = self.apply(k, &x);
                let scale = self.fluid_norm(&self.apply(k, &boundary)).max(f64::MIN_POSITIVE);
                Ok(ModeSolution {
                    k,
                    direction: m,
                    traction: y[l.sigma..l.sigma + d].to_vec(),
                    norms: self.norms(&x),
                    residual: self.fluid_norm(&y) / scale,
                    state: x,
                })
            })
            .collect()
    }

    /// Solves the single mode problem `(k, m)`.
    pub fn solve_mode(&self, k: i64, m: usize) -> Result<ModeSolution> {
        let d = self.ops.space().dim();
        if m >= d {
            return Err(Error::validation(format!("direction index {m} out of range for dimension {d}")));
        }
        Ok(self.solve_modes(k)?.swap_remove(m))
    }

    /// Traction matrix `K(k)`.
    pub fn k_matrix(&self, k: i64) -> Result<KMatrix> {
        KMatrix::from_modes(&self.solve_modes(k)?, self.zeta0, self.lambda_o)
    }

    /// Largest entry of `K(−k) − conj K(k)` relative to the largest entry of
    /// `K(k)`, both solved independently.
    pub fn conjugate_symmetry_defect(&self, k: i64) -> Result<f64> {
        let plus = self.k_matrix(k)?;
        let minus = self.k_matrix(-k)?;
        let mut defect: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (rp, rm) in plus.entries.iter().zip(&minus.entries) {
            for (a, b) in rp.iter().zip(rm) {
                defect = defect.max((b - a.conj()).norm());
                scale = scale.max(a.norm());
            }
        }
        Ok(defect / scale)
    }

    /// Normalized gradient and broken Hessian norms of `h_k^{(m)}` over `ks`.
    pub fn growth_report(&self, ks: &[i64], m: usize) -> Result<GrowthReport> {
        let sols: Vec<ModeSolution> = ks.iter().map(|&k| self.solve_mode(k, m)).collect::<Result<_>>()?;
        let gradient_ratios: Vec<f64> =
            sols.iter().map(|s| s.norms.gradient / ((s.k.abs() + 1) as f64).sqrt()).collect();
        let hessian_ratios: Vec<f64> = sols.iter().map(|s| s.norms.hessian / (s.k.abs() + 1) as f64).collect();
        Ok(GrowthReport {
            ks: ks.to_vec(),
            gradient_spread: spread(&gradient_ratios),
            hessian_spread: spread(&hessian_ratios),
            gradient_ratios,
            hessian_ratios,
        })
    }

    /// Evaluates the energy identity for `h = Σ α_m h_k^{(m)}` over the
    /// given samples; requires at least one sample.
    pub fn energy_identity(&self, k: i64, alphas: &[Vec<C64>]) -> Result<EnergyIdentityReport> {
        if k == 0 || alphas.is_empty() {
            return Err(Error::validation("energy identity needs k != 0 and at least one sample"));
        }
        let modes = self.solve_modes(k)?;
        let kmat = KMatrix::from_modes(&modes, self.zeta0, self.lambda_o)?;
        let kz = k as f64 * self.zeta0;
        let lam = self.lambda_o;
        struct Terms {
            pairing: C64,
            mass: f64,
            dissipation: f64,
            gradient: f64,
            skew: C64,
            flux: f64,
        }
        let terms = |alpha: &[C64]| -> Terms {
            let mut h = vec![ZERO; modes[0].state.len()];
            for (a, m) in alpha.iter().zip(&modes) {
                for (hi, si) in h.iter_mut().zip(&m.state) {
                    *hi += a * si;
                }
            }
            let ka = kmat.apply(alpha);
            Terms {
                pairing: alpha.iter().zip(&ka).map(|(a, b)| a.conj() * b).sum(),
                mass: hermitian(&self.ops.mass, &h, &h).re,
                dissipation: 0.5 * hermitian(&self.ops.diffusion, &h, &h).re,
                gradient: hermitian(&self.ops.laplacian, &h, &h).re,
                skew: hermitian(&self.skew, &h, &h),
                flux: hermitian(&self.outflow, &h, &h).re,
            }
        };
        let all: Vec<Terms> = alphas.iter().map(|a| terms(a)).collect();
        let first = &all[0];
        if first.pairing.im == 0.0 || first.dissipation == 0.0 {
            return Err(Error::Singular("energy identity cannot be resolved from a degenerate sample".into()));
        }
        let s = (kz * first.mass - lam * first.skew.im) / first.pairing.im;
        let c_d = (s * first.pairing.re + lam * (first.flux + first.skew.re)) / first.dissipation;
        let mismatch = |t: &Terms, s: f64, c: f64| -> f64 {
            let lhs = t.pairing * s;
            let rhs = C64::new(c * t.dissipation, kz * t.mass) - (t.skew + t.flux) * lam;
            let scale = lhs.norm() + kz.abs() * t.mass + c.abs() * t.dissipation + lam.abs() * (t.skew.norm() + t.flux.abs());
            (lhs - rhs).norm() / scale
        };
        let max_over = |f: &dyn Fn(&Terms) -> f64| all.iter().map(f).fold(0.0, f64::max);
        let z2 = self.zeta0 * self.zeta0;
        let scaling_error = alphas
            .iter()
            .zip(&all)
            .map(|(a, t)| {
                let doubled: Vec<C64> = a.iter().map(|c| c * 2.0).collect();
                let t2 = terms(&doubled);
                (t2.pairing - t.pairing * 4.0).norm() / (4.0 * t.pairing.norm())
            })
            .fold(0.0, f64::max);
        Ok(EnergyIdentityReport {
            k,
            samples: alphas.len(),
            resolved_prefactor: s,
            prefactor_over_zeta0: s / self.zeta0,
            resolved_diffusion_coefficient: c_d,
            max_mismatch: max_over(&|t| mismatch(t, s, c_d)),
            mismatch_zeta0_squared_two: max_over(&|t| mismatch(t, z2, 2.0)),
            mismatch_zeta0_squared_one: max_over(&|t| mismatch(t, z2, 1.0)),
            skew_real_part: max_over(&|t| t.skew.re.abs() / (t.mass * t.gradient).sqrt()),
            outflow_share: max_over(&|t| lam.abs() * t.flux.abs() / (s * t.pairing).norm()),
            scaling_error,
        })
    }

    fn check_coupling(&self, stiffness: &Stiffness, varpi: f64) -> Result<()> {
        let d = self.ops.space().dim();
        if stiffness.dim() != d {
            return Err(Error::validation(format!("stiffness dimension {} differs from mesh dimension {d}", stiffness.dim())));
        }
        if !(varpi.is_finite() && varpi > 0.0) {
            return Err(Error::validation("varpi must be positive and finite"));
        }
        Ok(())
    }

    fn stiffness_scale(stiffness: &Stiffness) -> Result<f64> {
        Ok(natural_frequencies(stiffness)?.iter().map(|w| w * w).fold(0.0, f64::max))
    }

    /// Rigid forcing `(A − k²ζ₀²I)ξ + ϖ∫T(w, q)·n` and the fluid residual
    /// norm of a coefficient `state` (displacement in the rigid-displacement
    /// slots) of the coupled per-mode operator.
    pub fn forward(&self, k: i64, state: &[C64], stiffness: &Stiffness, varpi: f64) -> (Vec<C64>, f64) {
        let l = *self.ops.space().layout();
        let d = l.dim;
        let y = self.apply(k, state);
        let xi = &state[l.eta..l.eta + d];
        let kz2 = (k as f64 * self.zeta0).powi(2);
        let rigid = (0..d)
            .map(|i| {
                let spring: C64 = (0..d).map(|j| xi[j] * stiffness.get(i, j)).sum();
                spring - xi[i] * kz2 + y[l.sigma + i] * varpi
            })
            .collect();
        (rigid, self.fluid_norm(&y))
    }

    /// Periodic response to a zero-mean rigid forcing `F`:
    /// `ξ_k = M(k)⁻¹F_k`, `w_k = Σ_m ikξ_{k,m} h_k^{(m)}`.
    pub fn forced_response(&self, forcing: &FourierSeries, stiffness: &Stiffness, varpi: f64) -> Result<FourierModeSet> {
        self.check_coupling(stiffness, varpi)?;
        let l = *self.ops.space().layout();
        let d = l.dim;
        if forcing.len() != d {
            return Err(Error::validation(format!("forcing has {} components, expected {d}", forcing.len())));
        }
        if !forcing.has_zero_mean() {
            return Err(Error::validation("forcing must have zero average"));
        }
        let scale = Self::stiffness_scale(stiffness)?;
        let modes = (1..=forcing.kmax() as i64)
            .into_par_iter()
            .map(|k| {
                let fk = forcing.coefficient(k);
                if fk.iter().all(|c| *c == ZERO) {
                    return Ok(ResponseMode {
                        k,
                        state: vec![ZERO; l.total],
                        residual: 0.0,
                        min_singular_value: 0.0,
                    });
                }
                let unit = self.solve_modes(k)?;
                let kmat = KMatrix::from_modes(&unit, self.zeta0, self.lambda_o)?;
                let m = ResonanceMatrix::new(k, self.zeta0, stiffness, varpi, &kmat)?;
                m.ensure_invertible(scale)?;
                let xi = m.solve(&fk)?;
                let mut state = vec![ZERO; l.total];
                for (x, h) in xi.iter().zip(&unit) {
                    let c = C64::new(0.0, k as f64) * x;
                    for (s, hi) in state.iter_mut().zip(&h.state) {
                        *s += c * hi;
                    }
                }
                state[l.eta..l.eta + d].copy_from_slice(&xi);
                let (back, fluid) = self.forward(k, &state, stiffness, varpi);
                let diff: Vec<C64> = back.iter().zip(&fk).map(|(a, b)| a - b).collect();
                let fluid_scale = self.fluid_norm(&self.apply(k, &self.trace_only(&state))).max(f64::MIN_POSITIVE);
                Ok(ResponseMode {
                    k,
                    residual: (vec_norm(&diff) / vec_norm(&fk)).max(fluid / fluid_scale),
                    state,
                    min_singular_value: m.min_singular_value,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FourierModeSet {
            dim: d,
            eta_offset: l.eta,
            modes,
        })
    }

    fn trace_only(&self, state: &[C64]) -> Vec<C64> {
        let l = *self.ops.space().layout();
        let mut b = vec![ZERO; state.len()];
        b[l.sigma..l.eta].copy_from_slice(&state[l.sigma..l.eta]);
        b
    }

    fn coupled_family(&self, stiffness: &Stiffness) -> MatrixFamily {
        let l = *self.ops.space().layout();
        let (n, d) = (l.total, l.dim);
        let mut trace = TripletList::new(n, n);
        let mut trace_eta = TripletList::new(n, n);
        let mut spring = TripletList::new(n, n);
        let mut inertia = TripletList::new(n, n);
        for i in 0..d {
            trace.push(l.sigma + i, l.sigma + i, 1.0);
            trace_eta.push(l.sigma + i, l.eta + i, 1.0);
            inertia.push(l.eta + i, l.eta + i, 1.0);
            for j in 0..d {
                spring.push(l.eta + i, l.eta + j, stiffness.get(i, j));
            }
        }
        let force_rows = |m: &CsrMatrix| {
            let mut t = TripletList::new(n, n);
            for (i, j, v) in m.triplets() {
                if (l.sigma..l.sigma + d).contains(&i) {
                    t.push(i - l.sigma + l.eta, j, v);
                }
            }
            t.into_csr()
        };
        MatrixFamily::new(vec![
            self.ops.without_rigid_rows(&self.oseen, false),
            self.ops.without_rigid_rows(&self.ops.mass, false),
            trace.into_csr(),
            trace_eta.into_csr(),
            force_rows(&self.oseen),
            force_rows(&self.ops.mass),
            spring.into_csr(),
            inertia.into_csr(),
        ])
    }

    fn coupled_coefficients(&self, k: i64, varpi: f64) -> [C64; 8] {
        let s = self.shift(k);
        [ONE, s, ONE, -s, C64::new(varpi, 0.0), s * varpi, ONE, C64::new(-s.im * s.im, 0.0)]
    }

    /// Periodic solution of the linear coupled problem with fluid forcing
    /// `f` (a velocity field per mode), rigid forcing `F`, and boundary data
    /// `G` entering the trace condition `w = ζ₀ξ̇ − G`; each `k` is one
    /// monolithic sparse solve. All data must have zero mean.
    pub fn solve_periodic(
        &self,
        fluid: Option<&FourierSeries>,
        rigid: &FourierSeries,
        boundary: &FourierSeries,
        stiffness: &Stiffness,
        varpi: f64,
    ) -> Result<FourierModeSet> {
        self.check_coupling(stiffness, varpi)?;
        let l = *self.ops.space().layout();
        let d = l.dim;
        if rigid.len() != d || boundary.len() != d || fluid.is_some_and(|f| f.len() != l.total) {
            return Err(Error::validation("forcing data have inconsistent lengths"));
        }
        if !rigid.has_zero_mean() || !boundary.has_zero_mean() || fluid.is_some_and(|f| !f.has_zero_mean()) {
            return Err(Error::validation("forcing must have zero average"));
        }
        let kmax = rigid.kmax().max(boundary.kmax()).max(fluid.map_or(0, |f| f.kmax()));
        let family = self.coupled_family(stiffness);
        let modes = (1..=kmax as i64)
            .into_par_iter()
            .map(|k| {
                let coeffs = self.coupled_coefficients(k, varpi);
                let mut load = vec![ZERO; l.total];
                if let Some(f) = fluid {
                    self.ops.mass.cmatvec_add(ONE, &f.coefficient(k), &mut load);
                }
                let mut rhs = load.clone();
                let (fk, gk) = (rigid.coefficient(k), boundary.coefficient(k));
                for i in 0..d {
                    rhs[l.sigma + i] = -gk[i];
                    rhs[l.eta + i] = fk[i] + load[l.sigma + i] * varpi;
                }
                if rhs.iter().all(|c| *c == ZERO) {
                    return Ok(ResponseMode {
                        k,
                        state: vec![ZERO; l.total],
                        residual: 0.0,
                        min_singular_value: 0.0,
                    });
                }
                let lu = family.factor::<C64>(&coeffs).map_err(|e| {
                    Error::Singular(format!("coupled mode system for k = {k} could not be factored: {e}"))
                })?;
                let apply = |x: &[C64]| {
                    let mut y = vec![ZERO; x.len()];
                    for (i, c) in coeffs.iter().enumerate() {
                        family.member(i).cmatvec_add(*c, x, &mut y);
                    }
                    y
                };
                let mut x = rhs.clone();
                lu.solve_in_place(&mut x);
                let mut r: Vec<C64> = rhs.iter().zip(apply(&x)).map(|(b, ax)| b - ax).collect();
                lu.solve_in_place(&mut r);
                x.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
                let r: Vec<C64> = rhs.iter().zip(apply(&x)).map(|(b, ax)| b - ax).collect();
                Ok(ResponseMode {
                    k,
                    residual: vec_norm(&r) / vec_norm(&rhs),
                    state: x,
                    min_singular_value: f64::NAN,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FourierModeSet {
            dim: d,
            eta_offset: l.eta,
            modes,
        })
    }

    /// Norm `(Σ_{k≠0} (k⁴+k²+1)|ξ_k|² + (k²+1)‖w_k‖² + ‖∇w_k‖² + ‖D²w_k‖²)^{1/2}`
    /// of a periodic response.
    pub fn response_norm(&self, set: &FourierModeSet) -> f64 {
        let l = *self.ops.space().layout();
        let mut total = 0.0;
        for m in &set.modes {
            if m.state.iter().all(|c| *c == ZERO) {
                continue;
            }
            let k2 = (m.k * m.k) as f64;
            let xi: f64 = m.state[l.eta..l.eta + l.dim].iter().map(|c| c.norm_sqr()).sum();
            let n = self.norms(&m.state);
            total += 2.0 * ((k2 * k2 + k2 + 1.0) * xi + (k2 + 1.0) * n.l2 * n.l2 + n.gradient.powi(2) + n.hessian.powi(2));
        }
        total.sqrt()
    }

    /// Smallest constant `C` with `response_norm ≤ C‖F‖` for every rigid
    /// forcing supported on `1 ≤ |k| ≤ kmax`, from the per-mode operator
    /// norms of `F_k ↦ (ξ_k, w_k)`.
    pub fn stability_constant(&self, kmax: usize, stiffness: &Stiffness, varpi: f64) -> Result<f64> {
        self.check_coupling(stiffness, varpi)?;
        let d = self.ops.space().dim();
        let per_k = (1..=kmax as i64)
            .into_par_iter()
            .map(|k| {
                let unit = self.solve_modes(k)?;
                let kmat = KMatrix::from_modes(&unit, self.zeta0, self.lambda_o)?;
                let m = ResonanceMatrix::new(k, self.zeta0, stiffness, varpi, &kmat)?;
                let k2 = (k * k) as f64;
                let hess = |a: &[C64], b: &[C64]| {
                    let ((ar, ai), (br, bi)) = (split(a), split(b));
                    let re = self.ops.broken_hessian_inner(&ar, &br) + self.ops.broken_hessian_inner(&ai, &bi);
                    let im = self.ops.broken_hessian_inner(&ar, &bi) - self.ops.broken_hessian_inner(&ai, &br);
                    C64::new(re, im)
                };
                let w: Vec<Vec<C64>> = (0..d)
                    .map(|a| {
                        (0..d)
                            .map(|b| {
                                let (ha, hb) = (&unit[a].state, &unit[b].state);
                                let g = hermitian(&self.ops.mass, ha, hb) * (k2 + 1.0)
                                    + hermitian(&self.ops.laplacian, ha, hb)
                                    + hess(ha, hb);
                                let diag = if a == b { k2 * k2 + k2 + 1.0 } else { 0.0 };
                                g * k2 + diag
                            })
                            .collect()
                    })
                    .collect();
                let inv: Vec<Vec<C64>> = (0..d)
                    .map(|j| {
                        let mut e = vec![ZERO; d];
                        e[j] = ONE;
                        m.solve(&e)
                    })
                    .collect::<Result<_>>()?;
                // N = M⁻ᴴ W M⁻¹ with inv[j] the j-th column of M⁻¹.
                let n: Vec<Vec<C64>> = (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                let mut s = ZERO;
                                for a in 0..d {
                                    for b in 0..d {
                                        s += inv[i][a].conj() * w[a][b] * inv[j][b];
                                    }
                                }
                                s
                            })
                            .collect()
                    })
                    .collect();
                let (vals, _) = complex_eigen(&n)?;
                Ok(vals.iter().map(|v| v.re).fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(per_k.into_iter().fold(0.0, f64::max).sqrt())
    }

    /// Relative mismatch, per mode, of the dissipation balance
    /// `Im(F_k·ξ_k*) = (kϖ/ζ₀)[2‖D(h)‖² − λ_o(Re(∂₁h, h*) + φ(h))]` with
    /// `h = w_k/(ik)`.
    pub fn dissipation_balance(&self, response: &FourierModeSet, forcing: &FourierSeries, varpi: f64) -> Vec<f64> {
        response
            .modes
            .iter()
            .filter(|m| m.state.iter().any(|c| *c != ZERO))
            .map(|m| {
                let kf = m.k as f64;
                let fk = forcing.coefficient(m.k);
                let xi = response.displacement(m.k);
                let lhs: f64 = fk.iter().zip(&xi).map(|(f, x)| f * x.conj()).sum::<C64>().im;
                let h: Vec<C64> = m.state.iter().map(|c| c / C64::new(0.0, kf)).collect();
                let diss = hermitian(&self.ops.diffusion, &h, &h).re;
                let flux = hermitian(&self.outflow, &h, &h).re + hermitian(&self.skew, &h, &h).re;
                let rhs = kf * varpi / self.zeta0 * (diss - self.lambda_o * flux);
                (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
            })
            .collect()
    }

    /// Amplitudes `|ξ_k|` of the response to the forcing coefficient `f`
    /// (applied at every `1 ≤ k ≤ kmax`) over a grid of mass ratios, with
    /// the log-log slope at the index closest to resonance.
    pub fn resonance_scan(&self, varpi_grid: &[f64], stiffness: &Stiffness, f: &[C64], kmax: usize) -> Result<ResonanceScan> {
        let d = self.ops.space().dim();
        if f.len() != d {
            return Err(Error::validation(format!("forcing has {} components, expected {d}", f.len())));
        }
        if varpi_grid.len() < 2 {
            return Err(Error::validation("resonance scan needs at least two mass ratios"));
        }
        for &v in varpi_grid {
            self.check_coupling(stiffness, v)?;
        }
        let z = self.zeta0.abs();
        let (natural_frequency, resonant_k) = natural_frequencies(stiffness)?
            .into_iter()
            .map(|w| (w, ((w / z).round() as i64).max(1)))
            .min_by(|a, b| (a.1 as f64 * z - a.0).abs().total_cmp(&(b.1 as f64 * z - b.0).abs()))
            .ok_or_else(|| Error::validation("empty stiffness"))?;
        let top = (kmax as i64).max(resonant_k);
        let kmats = (1..=top)
            .into_par_iter()
            .map(|k| self.k_matrix(k))
            .collect::<Result<Vec<KMatrix>>>()?;
        let scale = Self::stiffness_scale(stiffness)?;
        let mut rows = Vec::new();
        let mut min_sv = f64::INFINITY;
        let mut fit = Vec::new();
        for &varpi in varpi_grid {
            for kmat in &kmats {
                let m = ResonanceMatrix::new(kmat.k, self.zeta0, stiffness, varpi, kmat)?;
                m.ensure_invertible(scale)?;
                min_sv = min_sv.min(m.min_singular_value);
                let amplitude = vec_norm(&m.solve(f)?);
                if kmat.k == resonant_k {
                    fit.push((varpi.ln(), amplitude.ln()));
                }
                rows.push(ScanRow { varpi, k: kmat.k, amplitude });
            }
        }
        let n = fit.len() as f64;
        let (sx, sy) = fit.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let sxx: f64 = fit.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        let sxy: f64 = fit.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let k_inv_f = vec_norm(&kmats[(resonant_k - 1) as usize].solve(f)?);
        Ok(ResonanceScan {
            natural_frequency,
            resonant_k,
            detuning: (resonant_k as f64 * z - natural_frequency).abs(),
            rows,
            slope,
            measured_prefactor: (my - slope * mx).exp(),
            direct_prefactor: k_inv_f / resonant_k as f64,
            sqrt_zeta0_prefactor: z.sqrt() / natural_frequency * k_inv_f,
            min_singular_value: min_sv,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::complex_solve;
    use crate::mesh::{build_truncated_domain, MeshSettings};
    use crate::model::BodyGeometry;
    use crate::space::DiscreteSpace;

    fn tiny() -> ModeProblem {
        let s = MeshSettings {
            truncation_radius: 5.0,
            resolution: 8,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap();
        let ops = Arc::new(FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh).unwrap())).unwrap());
        ModeProblem::new(ops, 1.7, 3.0).unwrap()
    }

    fn dense(re: &CsrMatrix, im: &CsrMatrix) -> Vec<Vec<C64>> {
        let (r, i) = (re.to_dense(), im.to_dense());
        r.iter().zip(&i).map(|(a, b)| a.iter().zip(b).map(|(x, y)| C64::new(*x, *y)).collect()).collect()
    }

    #[test]
    fn modes_match_dense_solve() {
        let p = tiny();
        let l = *p.operators().space().layout();
        assert!(l.n_velocity <= 2000, "{}", l.n_velocity);
        for k in [1, 2] {
            let (re, im) = p.system_matrix(k);
            let a = dense(&re, &im);
            for m in 0..2 {
                let sol = p.solve_mode(k, m).unwrap();
                let x = complex_solve(&a, &p.boundary_data(m)).unwrap();
                let err = sol.state.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                let scale = x.iter().map(|c| c.norm()).fold(0.0, f64::max);
                assert!(err < 1e-10 * scale, "k {k} m {m}: {err:e}");
                assert!(sol.residual < 1e-10, "{:e}", sol.residual);
                assert_eq!(sol.state[l.sigma + m], C64::new(1.7, 0.0));
            }
        }
    }

    #[test]
    fn zeroth_mode_vanishes_and_bad_inputs_fail() {
        let p = tiny();
        let s = p.solve_mode(0, 1).unwrap();
        assert!(s.state.iter().all(|c| *c == ZERO));
        assert!(p.solve_mode(1, 2).is_err());
        assert!(ModeProblem::new(p.operators().clone(), 0.0, 1.0).is_err());
    }

    #[test]
    fn traction_matrix_is_conjugate_symmetric_and_invertible() {
        let p = tiny();
        assert!(p.conjugate_symmetry_defect(1).unwrap() < 1e-12);
        let k = p.k_matrix(2).unwrap();
        assert!(k.invertible && k.min_singular_value > 1e-3);
    }

    #[test]
    fn traction_matches_boundary_quadrature_in_sign() {
        let p = tiny();
        let s = p.solve_mode(1, 0).unwrap();
        let (re, _) = split(&s.state);
        let direct = p.operators().traction_direct(&re);
        assert!(direct[0] * s.traction[0].re > 0.0);
    }

    #[test]
    fn energy_identity_closes_with_resolved_coefficients() {
        let p = tiny();
        let alphas = random_directions(2, 6, 3);
        let r = p.energy_identity(1, &alphas).unwrap();
        assert!(r.max_mismatch < 1e-8, "{r:?}");
        assert!((r.prefactor_over_zeta0 - 1.0).abs() < 1e-8, "{r:?}");
        assert!((r.resolved_diffusion_coefficient - 2.0).abs() < 1e-8, "{r:?}");
        assert!(r.skew_real_part < 1e-12 && r.scaling_error < 1e-12, "{r:?}");
        assert!(r.mismatch_zeta0_squared_two > 1e-3);
    }

    #[test]
    fn resonance_matrix_matches_hand_assembly() {
        let kmat = KMatrix {
            k: 2,
            zeta0: 0.5,
            lambda_o: 1.0,
            entries: vec![vec![C64::new(1.0, 2.0), C64::new(0.5, 0.0)], vec![C64::new(0.0, -1.0), C64::new(3.0, 1.0)]],
            min_singular_value: 1.0,
            invertible: true,
        };
        let a = Stiffness::new(2, vec![2.0, 0.3, 0.3, 1.0]).unwrap();
        let m = ResonanceMatrix::new(2, 0.5, &a, 0.1, &kmat).unwrap();
        // ikϖ = 0.2i and k²ζ₀² = 1.
        let expect = [
            [C64::new(2.0 - 1.0 - 0.4, 0.2), C64::new(0.3, 0.1)],
            [C64::new(0.3 + 0.2, 0.0), C64::new(1.0 - 1.0 - 0.2, 0.6)],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.entries[i][j] - expect[i][j]).norm() < 1e-15, "{i}{j}");
            }
        }
    }

    #[test]
    fn resonance_matrix_degenerates_without_fluid() {
        let p = tiny();
        let kmat = p.k_matrix(1).unwrap();
        let a = Stiffness::isotropic(2, 1.7 * 1.7);
        let m = ResonanceMatrix::new(1, 1.7, &a, 0.0, &kmat).unwrap();
        assert!(m.min_singular_value < 1e-12 * 1.7 * 1.7);
        let m = ResonanceMatrix::new(1, 1.7, &a, 1e-3, &kmat).unwrap();
        assert!(m.ensure_invertible(1.7 * 1.7).is_ok());
    }

    #[test]
    fn forced_response_round_trip_and_decoupling() {
        let p = tiny();
        let a = Stiffness::isotropic(2, 2.0);
        let f = FourierSeries::single(3, 1, vec![C64::new(1.0, 0.5), C64::new(-0.2, 0.0)]);
        let r = p.forced_response(&f, &a, 0.7).unwrap();
        assert!(r.max_residual() < 1e-9, "{}", r.max_residual());
        assert!(r.modes[1..].iter().all(|m| m.state.iter().all(|c| *c == ZERO)));
        let zero = p.forced_response(&FourierSeries::zeros(2, 2), &a, 0.7).unwrap();
        assert_eq!(p.response_norm(&zero), 0.0);
        let mut biased = f.clone();
        biased.mean[0] = C64::new(1.0, 0.0);
        let e = p.forced_response(&biased, &a, 0.7).unwrap_err();
        assert_eq!(e.to_string(), "forcing must have zero average");
        for m in p.dissipation_balance(&r, &f, 0.7) {
            assert!(m < 1e-8, "{m:e}");
        }
    }

    #[test]
    fn boundary_data_and_equivalent_forcing_agree() {
        let p = tiny();
        let l = *p.operators().space().layout();
        let (a, varpi, zeta) = (Stiffness::isotropic(2, 1.3), 0.4, p.zeta0());
        let g = vec![C64::new(0.3, -0.1), C64::new(0.2, 0.4)];
        let boundary = FourierSeries::single(2, 2, g.clone());
        let direct = p.solve_periodic(None, &FourierSeries::zeros(2, 2), &boundary, &a, varpi).unwrap();
        assert!(direct.max_residual() < 1e-9);
        let kmat = p.k_matrix(2).unwrap();
        let equivalent: Vec<C64> = kmat.apply(&g).iter().map(|c| c * (varpi / zeta)).collect();
        let forced = p.forced_response(&FourierSeries::single(2, 2, equivalent), &a, varpi).unwrap();
        let mut total = forced.coefficient(2);
        for (m, h) in p.solve_modes(2).unwrap().iter().enumerate() {
            for (t, hi) in total.iter_mut().zip(&h.state) {
                *t -= hi * (g[m] / zeta);
            }
        }
        let x = direct.coefficient(2);
        let err = x.iter().zip(&total).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = x.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(err < 1e-9 * scale, "{err:e}");
        assert!(x[l.eta..l.eta + 2].iter().all(|c| c.norm() > 0.0));
    }

    #[test]
    fn resonance_scan_follows_inverse_law() {
        let p = tiny();
        let z = p.zeta0();
        let a = Stiffness::isotropic(2, z * z);
        let grid: Vec<f64> = (0..13).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect();
        let scan = p.resonance_scan(&grid, &a, &[ONE, ZERO], 3).unwrap();
        assert_eq!(scan.resonant_k, 1);
        assert!((scan.slope + 1.0).abs() < 0.02, "{}", scan.slope);
        assert!((scan.measured_prefactor / scan.direct_prefactor - 1.0).abs() < 1e-6);
        assert!(scan.min_singular_value > 0.0);
    }
}
