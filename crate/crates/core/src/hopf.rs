//! Time-periodic branches bifurcating from a simple imaginary pair, computed
//! by harmonic balance.
//!
//! A periodic solution of `ζ B x_τ + J(μ) x = N(x; μ)` with period `2π` in
//! `τ` is written `x(τ) = X₀ + Σ_{k=1}^{K} (X_k e^{−ikτ} + c.c.)`. The mean
//! `X₀` is the steady correction and the harmonics `X_k` the oscillatory
//! part. Unknowns are scaled by the amplitude `ε`, and the phase and
//! amplitude are fixed by the two side conditions `(w|v₁†) = ε`,
//! `(w|v₂†) = 0`, with `(a|b) = ∫₀^{2π} ⟨a, b⟩ dτ`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gmres, GmresSettings, LinearSolve, C64};
use crate::spectral::{
    adjoint_eigenvector, check_nonresonance, check_simplicity, eigenvalue_derivative, EigenSettings, Eigenpair, Multiplicity,
    NonresonanceReport, SimplicityReport,
};
use crate::system::{
    gram_apply_complex, gram_inner, gram_pairing, linear_apply_complex, linear_dmu_apply_complex, mass_apply_complex,
    AbstractSystem,
};

/// Null and adjoint null vectors of `ζ₀ ∂_τ + L₂` at the crossing.
///
/// `v₁ = Re[v₀ e^{−iτ}]`, `v₂ = Im[v₀ e^{−iτ}]`, `v₁† = Re[v₀† e^{iτ}]`,
/// `v₂† = −Im[v₀† e^{iτ}]`, with `⟨v₀, v₀⟩ = 2` (sesquilinear) and
/// `v₀†ᵀ G v₀ = π⁻¹` (bilinear).
#[derive(Clone, Debug)]
pub struct OscBasis {
    /// Critical frequency.
    pub zeta0: f64,
    /// Right eigenvector for `ν₀ = iζ₀`.
    pub v0: Vec<C64>,
    /// Left eigenvector for `ν₀`.
    pub v0_adjoint: Vec<C64>,
}

/// Gram-weighted period product of two real periodic fields given by their
/// coefficients at `k = 1` only.
fn period_product_k1(sys: &dyn AbstractSystem, a1: &[C64], b1: &[C64]) -> f64 {
    let conj_b: Vec<C64> = b1.iter().map(|x| x.conj()).collect();
    2.0 * TAU * gram_pairing(sys, a1, &conj_b).re
}

impl OscBasis {
    /// Builds the basis from the critical pair and its left eigenvector.
    pub fn new(sys: &dyn AbstractSystem, pair: &Eigenpair, adjoint: &[C64]) -> Result<Self> {
        if pair.value.im <= 0.0 {
            return Err(Error::Spectral("critical eigenvalue must have positive imaginary part".into()));
        }
        let nrm = gram_inner(sys, &pair.vector, &pair.vector).re.sqrt();
        let v0: Vec<C64> = pair.vector.iter().map(|x| x * (2f64.sqrt() / nrm)).collect();
        let p = gram_pairing(sys, adjoint, &v0);
        if p.norm() < 1e-12 * crate::linalg::cnorm2(adjoint) * crate::linalg::cnorm2(&v0) {
            return Err(Error::Spectral("defective pairing: left and right eigenvectors are orthogonal".into()));
        }
        let c = C64::new(1.0 / PI, 0.0) / p;
        Ok(Self {
            zeta0: pair.value.im,
            v0,
            v0_adjoint: adjoint.iter().map(|x| x * c).collect(),
        })
    }

    /// `k = 1` coefficients of `(v₁, v₂, v₁†, v₂†)`.
    pub fn coefficients(&self) -> [Vec<C64>; 4] {
        let half = C64::new(0.5, 0.0);
        let v1: Vec<C64> = self.v0.iter().map(|x| x * half).collect();
        let v2: Vec<C64> = self.v0.iter().map(|x| x * C64::new(0.0, -0.5)).collect();
        let a1: Vec<C64> = self.v0_adjoint.iter().map(|x| x.conj() * half).collect();
        let a2: Vec<C64> = self.v0_adjoint.iter().map(|x| x.conj() * C64::new(0.0, -0.5)).collect();
        [v1, v2, a1, a2]
    }

    /// The relations `(v₁|v₁†), (v₂|v₂†), (v₂|v₁†), (v₁|v₂†), ((v₁)_τ|v₁†), ((v₁)_τ|v₂†)`.
    pub fn biorthogonality(&self, sys: &dyn AbstractSystem) -> [f64; 6] {
        let [v1, v2, a1, a2] = self.coefficients();
        let v1_tau: Vec<C64> = v1.iter().map(|x| x * C64::new(0.0, -1.0)).collect();
        [
            period_product_k1(sys, &v1, &a1),
            period_product_k1(sys, &v2, &a2),
            period_product_k1(sys, &v2, &a1),
            period_product_k1(sys, &v1, &a2),
            period_product_k1(sys, &v1_tau, &a1),
            period_product_k1(sys, &v1_tau, &a2),
        ]
    }
}

/// Refuses to proceed unless an eigenvalue lies on the imaginary axis
/// within `tol`; passing is necessary, not sufficient, for a bifurcation.
pub fn necessary_guard<'a>(spectrum: &'a [Eigenpair], tol: f64) -> Result<&'a Eigenpair> {
    spectrum
        .iter()
        .filter(|p| p.value.im > 0.0 && p.value.re.abs() <= tol)
        .min_by(|a, b| a.value.re.abs().total_cmp(&b.value.re.abs()))
        .ok_or_else(|| {
            Error::Spectral(format!(
                "necessary condition fails: no purely imaginary eigenvalue within {tol:e}"
            ))
        })
}

/// A crossing that passed the simplicity, non-resonance and transversality
/// checks, with everything needed to start the periodic branch.
#[derive(Clone, Debug)]
pub struct HopfCandidate {
    /// Critical parameter `λ_o`.
    pub lambda_o: f64,
    /// Critical eigenvalue `ν₀ ≈ iζ₀`.
    pub eigenvalue: C64,
    /// Null and adjoint null vectors.
    pub basis: OscBasis,
    /// `dν/dμ` at the crossing; its real part is the transversality value.
    pub derivative: C64,
    /// Simplicity diagnostics.
    pub simplicity: SimplicityReport,
    /// Non-resonance margins.
    pub nonresonance: NonresonanceReport,
    /// Eigenvalues found near the axis at `λ_o`.
    pub spectrum: Vec<C64>,
}

impl HopfCandidate {
    /// Critical frequency `ζ₀`.
    pub fn zeta0(&self) -> f64 {
        self.basis.zeta0
    }

    /// Growth-rate slope `−Re ν′(0)`.
    pub fn growth_slope(&self) -> f64 {
        -self.derivative.re
    }
}

/// Runs the hypothesis checks on the critical `pair` of `sys` at parameter
/// offset `mu` and assembles the candidate. Rejects non-simple, resonant or
/// non-transversal crossings.
pub fn analyze_candidate(
    sys: &dyn AbstractSystem,
    lambda_o: f64,
    pair: &Eigenpair,
    spectrum: &[Eigenpair],
    eigen: &EigenSettings,
    kmax: usize,
) -> Result<HopfCandidate> {
    let simplicity = check_simplicity(sys, 0.0, pair, spectrum)?;
    if simplicity.multiplicity != Multiplicity::Simple {
        return Err(Error::Spectral(format!(
            "critical eigenvalue {} is not simple ({:?}, gap {:.3e})",
            pair.value, simplicity.multiplicity, simplicity.gap
        )));
    }
    let nonresonance = check_nonresonance(sys, 0.0, pair.value.im, kmax, eigen)?;
    if let Some(k) = nonresonance.resonant {
        return Err(Error::Spectral(format!(
            "resonance: i k zeta0 is an eigenvalue for k = {k} (zeta0 = {})",
            pair.value.im
        )));
    }
    let adjoint = adjoint_eigenvector(sys, 0.0, pair, 1.0)?;
    let derivative = eigenvalue_derivative(sys, 0.0, pair, &adjoint)?;
    if derivative.re.abs() <= 1e-12 * (1.0 + derivative.norm()) {
        return Err(Error::Spectral("transversality fails: Re nu'(0) vanishes".into()));
    }
    let basis = OscBasis::new(sys, pair, &adjoint)?;
    Ok(HopfCandidate {
        lambda_o,
        eigenvalue: pair.value,
        basis,
        derivative,
        simplicity,
        nonresonance,
        spectrum: spectrum.iter().map(|p| p.value).collect(),
    })
}

/// Controls for the harmonic-balance solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchSettings {
    /// Harmonic truncation `K_max`.
    pub kmax: usize,
    /// Newton tolerance on the combined scaled residual.
    pub tol: f64,
    /// Newton iteration cap.
    pub max_newton: usize,
    /// Relative tolerance of each inner GMRES solve.
    pub gmres_tol: f64,
    /// GMRES restart length.
    pub gmres_restart: usize,
    /// GMRES iteration cap per Newton step.
    pub gmres_max_iter: usize,
}

impl Default for BranchSettings {
    fn default() -> Self {
        Self {
            kmax: 8,
            tol: 1e-10,
            max_newton: 20,
            gmres_tol: 1e-9,
            gmres_restart: 40,
            gmres_max_iter: 400,
        }
    }
}

/// Scaled harmonic-balance unknowns `(X₀, X₁ … X_K, ζ, μ)`.
#[derive(Clone, Debug)]
pub struct HarmonicState {
    /// Mean.
    pub mean: Vec<f64>,
    /// Harmonics `k = 1..K`.
    pub harmonics: Vec<Vec<C64>>,
    /// Frequency.
    pub zeta: f64,
    /// Parameter offset `λ − λ_o`.
    pub mu: f64,
}

/// One point of the periodic branch, in unscaled variables.
#[derive(Clone, Debug)]
pub struct PeriodicBranchPoint {
    /// Amplitude parameter `(w|v₁†)`.
    pub epsilon: f64,
    /// Parameter offset.
    pub mu: f64,
    /// Frequency.
    pub zeta: f64,
    /// Steady correction.
    pub mean: Vec<f64>,
    /// Oscillatory harmonics `k = 1..K`.
    pub harmonics: Vec<Vec<C64>>,
    /// Side conditions `((w|v₁†), (w|v₂†))` evaluated on the result.
    pub side: (f64, f64),
    /// Root-mean-square Gram norm of the oscillatory part over a period.
    pub amplitude_l2: f64,
    /// Combined residual of the scaled system.
    pub residual: f64,
    /// Newton iterations.
    pub newton_iterations: usize,
    /// Inner GMRES iterations.
    pub gmres_iterations: usize,
}

/// A continued branch with any truncation warnings.
#[derive(Clone, Debug)]
pub struct Branch {
    /// Points sorted by `ε`.
    pub points: Vec<PeriodicBranchPoint>,
    /// Diagnostics for grid values where continuation stopped.
    pub warnings: Vec<String>,
}

/// Harmonic-balance discretization of the periodic problem for one system.
pub struct HarmonicBalance<'a> {
    sys: &'a dyn AbstractSystem,
    basis: OscBasis,
    settings: BranchSettings,
    n: usize,
    kmax: usize,
    samples: usize,
    /// `e^{−ikτ_j}` for `k = 0..=K`, `j = 0..M`.
    phases: Vec<Vec<C64>>,
    /// `G v₀†`, the row of the side conditions.
    side_row: Vec<C64>,
}

struct SampledDerivative<'a> {
    maps: Vec<Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync + 'a>>,
    dmu: Vec<Vec<f64>>,
}

const BORDERED_SINGULAR: &str = "bordered system singular (check Re nu'(0) != 0)";

/// Solver for `[[A, c], [rᵀ, 0]]` with `A = J(μ) + shift·B`, by block
/// elimination on a factorization of `A` followed by iterative refinement
/// against the exact bordered matrix. `A` itself is singular at the
/// crossing, so its factorization may carry a tiny regularizing shift.
struct BorderedSolver {
    lu: Box<dyn LinearSolve<C64>>,
    mu: f64,
    shift: C64,
    col: Vec<C64>,
    row: Vec<C64>,
    eliminated_col: Vec<C64>,
    schur: C64,
}

impl BorderedSolver {
    fn new(sys: &dyn AbstractSystem, mu: f64, shift: C64, col: Vec<C64>, row: Vec<C64>) -> Result<Self> {
        let lu = match sys.factor(mu, shift) {
            Ok(lu) => lu,
            Err(_) => sys.factor(mu, shift + C64::new(1e-8 * (1.0 + shift.norm()), 0.0))?,
        };
        let mut eliminated_col = col.clone();
        lu.solve_in_place(&mut eliminated_col);
        let schur: C64 = row.iter().zip(&eliminated_col).map(|(a, b)| a * b).sum();
        let scale = crate::linalg::cnorm2(&row) * crate::linalg::cnorm2(&eliminated_col);
        if !(schur.norm() > 1e-14 * scale) {
            return Err(Error::Singular(BORDERED_SINGULAR.into()));
        }
        Ok(Self { lu, mu, shift, col, row, eliminated_col, schur })
    }

    fn eliminate(&self, rd: &[C64], rs: C64) -> (Vec<C64>, C64) {
        let mut x = rd.to_vec();
        self.lu.solve_in_place(&mut x);
        let s = (self.row.iter().zip(&x).map(|(a, b)| a * b).sum::<C64>() - rs) / self.schur;
        x.iter_mut().zip(&self.eliminated_col).for_each(|(a, z)| *a -= s * z);
        (x, s)
    }

    fn solve(&self, sys: &dyn AbstractSystem, rd: &[C64], rs: C64) -> (Vec<C64>, C64) {
        let (mut d, mut s) = self.eliminate(rd, rs);
        for _ in 0..2 {
            let jd = linear_apply_complex(sys, self.mu, &d);
            let bd = mass_apply_complex(sys, &d);
            let ed: Vec<C64> = (0..d.len())
                .map(|i| rd[i] - jd[i] - self.shift * bd[i] - self.col[i] * s)
                .collect();
            let es = rs - self.row.iter().zip(&d).map(|(a, b)| a * b).sum::<C64>();
            let (cd, cs) = self.eliminate(&ed, es);
            d.iter_mut().zip(&cd).for_each(|(a, b)| *a += b);
            s += cs;
        }
        (d, s)
    }
}

struct Preconditioner {
    mean: Box<dyn LinearSolve<C64>>,
    bordered: BorderedSolver,
    higher: Vec<Box<dyn LinearSolve<C64>>>,
    mu_column: Vec<C64>,
}

impl<'a> HarmonicBalance<'a> {
    /// Sets up the time grid (`4 K` points, exact for quadratic terms).
    pub fn new(sys: &'a dyn AbstractSystem, basis: OscBasis, settings: BranchSettings) -> Result<Self> {
        let kmax = settings.kmax;
        if kmax == 0 {
            return Err(Error::validation("kmax must be at least 1"));
        }
        let samples = (4 * kmax).max(4);
        let phases = (0..=kmax)
            .map(|k| {
                (0..samples)
                    .map(|j| C64::from_polar(1.0, -(k as f64) * TAU * j as f64 / samples as f64))
                    .collect()
            })
            .collect();
        let side_row = gram_apply_complex(sys, &basis.v0_adjoint);
        Ok(Self {
            n: sys.dim(),
            sys,
            basis,
            settings,
            kmax,
            samples,
            phases,
            side_row,
        })
    }

    /// The basis in use.
    pub fn basis(&self) -> &OscBasis {
        &self.basis
    }

    fn unknowns(&self) -> usize {
        self.n * (2 * self.kmax + 1) + 2
    }

    fn pack(&self, st: &HarmonicState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.unknowns());
        out.extend_from_slice(&st.mean);
        for h in &st.harmonics {
            out.extend(h.iter().map(|x| x.re));
            out.extend(h.iter().map(|x| x.im));
        }
        out.push(st.zeta);
        out.push(st.mu);
        out
    }

    fn unpack(&self, v: &[f64]) -> HarmonicState {
        let n = self.n;
        let harmonics = (0..self.kmax)
            .map(|k| {
                let o = n + 2 * n * k;
                (0..n).map(|i| C64::new(v[o + i], v[o + n + i])).collect()
            })
            .collect();
        HarmonicState {
            mean: v[..n].to_vec(),
            harmonics,
            zeta: v[v.len() - 2],
            mu: v[v.len() - 1],
        }
    }

    /// The state at `ε = 0`: `X₁ = v₀/2`, `ζ = ζ₀`, everything else zero.
    pub fn linear_prediction(&self) -> HarmonicState {
        let mut harmonics = vec![vec![C64::new(0.0, 0.0); self.n]; self.kmax];
        harmonics[0] = self.basis.v0.iter().map(|x| x * 0.5).collect();
        HarmonicState {
            mean: vec![0.0; self.n],
            harmonics,
            zeta: self.basis.zeta0,
            mu: 0.0,
        }
    }

    /// Real field at time sample `j`.
    fn synthesize(&self, mean: &[f64], harmonics: &[Vec<C64>], j: usize) -> Vec<f64> {
        let mut x = mean.to_vec();
        for (k, h) in harmonics.iter().enumerate() {
            let e = self.phases[k + 1][j];
            for (xi, hi) in x.iter_mut().zip(h) {
                *xi += 2.0 * (hi * e).re;
            }
        }
        x
    }

    /// Mean and harmonics `1..=K` of time samples.
    fn analyze(&self, samples: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<C64>>) {
        let m = self.samples as f64;
        let mut mean = vec![0.0; self.n];
        for s in samples {
            for (a, b) in mean.iter_mut().zip(s) {
                *a += b / m;
            }
        }
        let harmonics = (1..=self.kmax)
            .map(|k| {
                let mut h = vec![C64::new(0.0, 0.0); self.n];
                for (j, s) in samples.iter().enumerate() {
                    let e = self.phases[k][j].conj() / m;
                    for (a, b) in h.iter_mut().zip(s) {
                        *a += e * b;
                    }
                }
                h
            })
            .collect();
        (mean, harmonics)
    }

    /// Time-domain samples of `N(x; μ)` for an unscaled state, split into
    /// mean `N₁` and the harmonics of the zero-mean remainder `N₂`.
    pub fn evaluate_nonlinearity(&self, mean: &[f64], harmonics: &[Vec<C64>], mu: f64) -> (Vec<f64>, Vec<Vec<C64>>) {
        let values: Vec<Vec<f64>> = (0..self.samples)
            .map(|j| {
                let x = self.synthesize(mean, harmonics, j);
                let mut y = vec![0.0; self.n];
                self.sys.nonlinear(mu, &x, &mut y);
                y
            })
            .collect();
        self.analyze(&values)
    }

    fn scaled_nonlinearity(&self, eps: f64, st: &HarmonicState) -> (Vec<f64>, Vec<Vec<C64>>) {
        if eps == 0.0 {
            return (vec![0.0; self.n], vec![vec![C64::new(0.0, 0.0); self.n]; self.kmax]);
        }
        let mean: Vec<f64> = st.mean.iter().map(|x| x * eps).collect();
        let harmonics: Vec<Vec<C64>> = st.harmonics.iter().map(|h| h.iter().map(|x| x * eps).collect()).collect();
        let (m, h) = self.evaluate_nonlinearity(&mean, &harmonics, st.mu);
        (
            m.into_iter().map(|x| x / eps).collect(),
            h.into_iter().map(|v| v.into_iter().map(|x| x / eps).collect()).collect(),
        )
    }

    fn side_value(&self, h1: &[C64]) -> C64 {
        TAU * h1.iter().zip(&self.side_row).map(|(a, b)| a * b).sum::<C64>()
    }

    fn block_residual(&self, st: &HarmonicState, nl: &(Vec<f64>, Vec<Vec<C64>>)) -> (Vec<f64>, Vec<Vec<C64>>) {
        let mut r0 = vec![0.0; self.n];
        self.sys.linear_apply(st.mu, &st.mean, &mut r0);
        r0.iter_mut().zip(&nl.0).for_each(|(a, b)| *a -= b);
        let rk = st
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let k = (i + 1) as f64;
                let jh = linear_apply_complex(self.sys, st.mu, h);
                let bh = mass_apply_complex(self.sys, h);
                jh.iter()
                    .zip(&bh)
                    .zip(&nl.1[i])
                    .map(|((a, b), c)| a - C64::new(0.0, k * st.zeta) * b - c)
                    .collect()
            })
            .collect();
        (r0, rk)
    }

    fn flatten(&self, r0: &[f64], rk: &[Vec<C64>], side: C64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.unknowns());
        out.extend_from_slice(r0);
        for h in rk {
            out.extend(h.iter().map(|x| x.re));
            out.extend(h.iter().map(|x| x.im));
        }
        out.push(side.re);
        out.push(-side.im);
        out
    }

    /// Flattened residual and its combined dual norm.
    fn residual(&self, eps: f64, st: &HarmonicState) -> (Vec<f64>, f64) {
        let nl = self.scaled_nonlinearity(eps, st);
        let (r0, rk) = self.block_residual(st, &nl);
        let side = self.side_value(&st.harmonics[0]) - C64::new(1.0, 0.0);
        let mut sq = self.sys.residual_norm(&crate::linalg::to_complex(&r0)).powi(2);
        for r in &rk {
            sq += 2.0 * self.sys.residual_norm(r).powi(2);
        }
        let norm = sq.sqrt() + side.norm();
        (self.flatten(&r0, &rk, side), norm)
    }

    fn linearize(&'a self, eps: f64, st: &HarmonicState) -> SampledDerivative<'a> {
        if eps == 0.0 {
            return SampledDerivative { maps: Vec::new(), dmu: Vec::new() };
        }
        let mut maps = Vec::with_capacity(self.samples);
        let mut dmu = Vec::with_capacity(self.samples);
        for j in 0..self.samples {
            let x: Vec<f64> = self.synthesize(&st.mean, &st.harmonics, j).into_iter().map(|v| v * eps).collect();
            maps.push(self.sys.nonlinear_derivative(st.mu, &x));
            let mut z = vec![0.0; self.n];
            self.sys.nonlinear_dmu(st.mu, &x, &mut z);
            z.iter_mut().for_each(|v| *v /= eps);
            dmu.push(z);
        }
        SampledDerivative { maps, dmu }
    }

    fn jacobian_apply(&self, st: &HarmonicState, lin: &SampledDerivative<'_>, d: &[f64]) -> Vec<f64> {
        let dst = self.unpack(d);
        let (dmu, dzeta) = (dst.mu, dst.zeta);
        let nl = if lin.maps.is_empty() {
            (vec![0.0; self.n], vec![vec![C64::new(0.0, 0.0); self.n]; self.kmax])
        } else {
            let vals: Vec<Vec<f64>> = (0..self.samples)
                .map(|j| {
                    let dx = self.synthesize(&dst.mean, &dst.harmonics, j);
                    let mut y = vec![0.0; self.n];
                    (lin.maps[j])(&dx, &mut y);
                    if dmu != 0.0 {
                        y.iter_mut().zip(&lin.dmu[j]).for_each(|(a, b)| *a += dmu * b);
                    }
                    y
                })
                .collect();
            self.analyze(&vals)
        };
        let (mut r0, mut rk) = self.block_residual(
            &HarmonicState {
                mean: dst.mean.clone(),
                harmonics: dst.harmonics.clone(),
                zeta: st.zeta,
                mu: st.mu,
            },
            &nl,
        );
        if dmu != 0.0 {
            let mut s0 = vec![0.0; self.n];
            self.sys.linear_dmu_apply(st.mu, &st.mean, &mut s0);
            r0.iter_mut().zip(&s0).for_each(|(a, b)| *a += dmu * b);
        }
        for (i, r) in rk.iter_mut().enumerate() {
            let k = (i + 1) as f64;
            let h = &st.harmonics[i];
            let bh = mass_apply_complex(self.sys, h);
            let sh = if dmu != 0.0 { linear_dmu_apply_complex(self.sys, st.mu, h) } else { vec![C64::new(0.0, 0.0); self.n] };
            for ((a, b), s) in r.iter_mut().zip(&bh).zip(&sh) {
                *a += C64::new(0.0, -k * dzeta) * b + dmu * s;
            }
        }
        let side = self.side_value(&dst.harmonics[0]);
        self.flatten(&r0, &rk, side)
    }

    fn preconditioner(&self, st: &HarmonicState) -> Result<Preconditioner> {
        let mu = st.mu;
        let mean = self.sys.factor(mu, C64::new(0.0, 0.0))?;
        let h1 = &st.harmonics[0];
        let col: Vec<C64> = mass_apply_complex(self.sys, h1).into_iter().map(|x| x * C64::new(0.0, -1.0)).collect();
        let row: Vec<C64> = self.side_row.iter().map(|x| x * TAU).collect();
        let bordered = BorderedSolver::new(self.sys, mu, C64::new(0.0, -st.zeta), col, row)?;
        let (mut mu_column, mu_side) = bordered.solve(self.sys, &linear_dmu_apply_complex(self.sys, mu, h1), C64::new(0.0, 0.0));
        mu_column.push(mu_side);
        let scale = crate::linalg::cnorm2(&mu_column);
        if !(mu_column[self.n].im.abs() > 1e-12 * scale) {
            return Err(Error::Singular(BORDERED_SINGULAR.into()));
        }
        let higher = (2..=self.kmax)
            .map(|k| self.sys.factor(mu, C64::new(0.0, -(k as f64) * st.zeta)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Preconditioner {
            mean,
            bordered,
            higher,
            mu_column,
        })
    }

    fn precondition_apply(&self, p: &Preconditioner, st: &HarmonicState, r: &[f64]) -> Vec<f64> {
        let n = self.n;
        let rs = self.unpack(r);
        let side = C64::new(rs.zeta, -rs.mu);
        let (mut a, a_side) = p.bordered.solve(self.sys, &rs.harmonics[0], side);
        a.push(a_side);
        let dmu = a[n].im / p.mu_column[n].im;
        let dzeta = (a[n] - dmu * p.mu_column[n]).re;
        let d1: Vec<C64> = (0..n).map(|i| a[i] - dmu * p.mu_column[i]).collect();
        let mut s0 = vec![0.0; n];
        self.sys.linear_dmu_apply(st.mu, &st.mean, &mut s0);
        let mut m0: Vec<C64> = (0..n).map(|i| C64::new(rs.mean[i] - dmu * s0[i], 0.0)).collect();
        p.mean.solve_in_place(&mut m0);
        let mut harmonics = vec![d1];
        for k in 2..=self.kmax {
            let h = &st.harmonics[k - 1];
            let bh = mass_apply_complex(self.sys, h);
            let sh = linear_dmu_apply_complex(self.sys, st.mu, h);
            let mut rhs: Vec<C64> = (0..n)
                .map(|i| rs.harmonics[k - 1][i] + C64::new(0.0, k as f64 * dzeta) * bh[i] - dmu * sh[i])
                .collect();
            p.higher[k - 2].solve_in_place(&mut rhs);
            harmonics.push(rhs);
        }
        self.pack(&HarmonicState {
            mean: m0.iter().map(|x| x.re).collect(),
            harmonics,
            zeta: dzeta,
            mu: dmu,
        })
    }

    /// Solves the Newton system `DF(ε, U) δ = rhs` at `st` for flattened
    /// `(X₀, Re/Im X_k, ζ, μ)` data.
    pub fn solve_linearized(&self, eps: f64, st: &HarmonicState, rhs: &[f64]) -> Result<Vec<f64>> {
        let p = self.preconditioner(st)?;
        let lin = self.linearize(eps, st);
        let mut delta = vec![0.0; rhs.len()];
        let rep = gmres(
            |x, y| y.copy_from_slice(&self.jacobian_apply(st, &lin, x)),
            |x, y| y.copy_from_slice(&self.precondition_apply(&p, st, x)),
            rhs,
            &mut delta,
            GmresSettings {
                tol: self.settings.gmres_tol,
                restart: self.settings.gmres_restart,
                max_iter: self.settings.gmres_max_iter,
            },
        );
        if !rep.converged {
            return Err(Error::non_convergence("bordered GMRES", rep.iterations, rep.relative_residual));
        }
        Ok(delta)
    }

    /// Flattens a state, for building right-hand sides of [`Self::solve_linearized`].
    pub fn flatten_state(&self, st: &HarmonicState) -> Vec<f64> {
        self.pack(st)
    }

    /// Inverse of [`Self::flatten_state`].
    pub fn unflatten_state(&self, v: &[f64]) -> HarmonicState {
        self.unpack(v)
    }

    /// Solves the scaled system at amplitude `eps` from `seed`.
    pub fn solve_point(&self, eps: f64, seed: &HarmonicState) -> Result<(HarmonicState, PeriodicBranchPoint)> {
        let mut st = seed.clone();
        let mut gmres_total = 0;
        let mut precond: Option<Preconditioner> = None;
        let mut last = f64::INFINITY;
        for it in 0..=self.settings.max_newton {
            let (r, norm) = self.residual(eps, &st);
            if !norm.is_finite() {
                break;
            }
            last = norm;
            if norm < self.settings.tol {
                let point = self.finish(eps, &st, norm, it, gmres_total);
                return Ok((st, point));
            }
            if it == self.settings.max_newton {
                break;
            }
            if precond.is_none() {
                precond = Some(self.preconditioner(&st)?);
            }
            let p = precond.as_ref().expect("preconditioner built above");
            let lin = self.linearize(eps, &st);
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let mut delta = vec![0.0; rhs.len()];
            let rep = gmres(
                |x, y| y.copy_from_slice(&self.jacobian_apply(&st, &lin, x)),
                |x, y| y.copy_from_slice(&self.precondition_apply(p, &st, x)),
                &rhs,
                &mut delta,
                GmresSettings {
                    tol: self.settings.gmres_tol,
                    restart: self.settings.gmres_restart,
                    max_iter: self.settings.gmres_max_iter,
                },
            );
            gmres_total += rep.iterations;
            let mut packed = self.pack(&st);
            packed.iter_mut().zip(&delta).for_each(|(a, b)| *a += b);
            st = self.unpack(&packed);
        }
        Err(Error::NonConvergence {
            stage: format!("harmonic-balance Newton at epsilon = {eps}"),
            iterations: self.settings.max_newton,
            residual: last,
            hint: String::new(),
        })
    }

    fn finish(&self, eps: f64, st: &HarmonicState, residual: f64, newton: usize, gmres_total: usize) -> PeriodicBranchPoint {
        let mean: Vec<f64> = st.mean.iter().map(|x| x * eps).collect();
        let harmonics: Vec<Vec<C64>> = st.harmonics.iter().map(|h| h.iter().map(|x| x * eps).collect()).collect();
        let s = self.side_value(&harmonics[0]);
        let energy: f64 = harmonics.iter().map(|h| 2.0 * gram_inner(self.sys, h, h).re).sum();
        PeriodicBranchPoint {
            epsilon: eps,
            mu: st.mu,
            zeta: st.zeta,
            mean,
            harmonics,
            side: (s.re, -s.im),
            amplitude_l2: energy.max(0.0).sqrt(),
            residual,
            newton_iterations: newton,
            gmres_iterations: gmres_total,
        }
    }

    /// Continues the branch over `grid`, marching outward from `ε = 0` in
    /// both directions with secant predictors. Grid values beyond a failed
    /// point are dropped with a warning.
    pub fn continue_branch(&self, grid: &[f64]) -> Branch {
        let mut points = Vec::new();
        let mut warnings = Vec::new();
        let origin = self.linear_prediction();
        let mut positive: Vec<f64> = grid.iter().copied().filter(|e| *e >= 0.0).collect();
        let mut negative: Vec<f64> = grid.iter().copied().filter(|e| *e < 0.0).collect();
        positive.sort_by(f64::total_cmp);
        negative.sort_by(|a, b| b.total_cmp(a));
        for side in [positive, negative] {
            let mut history: Vec<(f64, HarmonicState)> = vec![(0.0, origin.clone())];
            for (i, &eps) in side.iter().enumerate() {
                let seed = match history.as_slice() {
                    [.., (e0, s0), (e1, s1)] if e1 != e0 => {
                        let t = (eps - e1) / (e1 - e0);
                        let a = self.pack(s0);
                        let b = self.pack(s1);
                        self.unpack(&b.iter().zip(&a).map(|(y, x)| y + t * (y - x)).collect::<Vec<_>>())
                    }
                    [.., (_, s)] => s.clone(),
                    [] => origin.clone(),
                };
                match self.solve_point(eps, &seed) {
                    Ok((st, p)) => {
                        if eps != 0.0 || history.len() == 1 {
                            history.push((eps, st));
                        }
                        if !(eps == 0.0 && points.iter().any(|q: &PeriodicBranchPoint| q.epsilon == 0.0)) {
                            points.push(p);
                        }
                    }
                    Err(e) => {
                        warnings.push(format!(
                            "continuation stopped at epsilon = {eps} ({} grid values dropped): {e}",
                            side.len() - i
                        ));
                        break;
                    }
                }
            }
        }
        points.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        Branch { points, warnings }
    }

    /// Relative size of the nonlinear correction to the linear prediction at `eps`.
    pub fn correction_ratio(&self, eps: f64) -> Result<f64> {
        let origin = self.linear_prediction();
        let (st, _) = self.solve_point(eps, &origin)?;
        let a = self.pack(&origin);
        let b = self.pack(&st);
        let n = a.len() - 2;
        let diff: f64 = a[..n].iter().zip(&b[..n]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let base: f64 = a[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(diff / base)
    }

    /// Largest `ε` (halving from `start`) whose correction stays below 10%
    /// of the linear prediction.
    pub fn select_epsilon_max(&self, start: f64) -> Result<f64> {
        let mut eps = start;
        for _ in 0..20 {
            if let Ok(r) = self.correction_ratio(eps) {
                if r < 0.1 {
                    return Ok(eps);
                }
            }
            eps *= 0.5;
        }
        Err(Error::NonConvergence {
            stage: "epsilon_max selection".into(),
            iterations: 20,
            residual: eps,
            hint: String::new(),
        })
    }
}

/// Largest of `‖N(0; μ)‖` and `‖D_x N(0; μ) d‖ / ‖d‖` over the given
/// parameters and probe directions; zero for a nonlinearity without
/// constant or linear part.
pub fn nonlinearity_origin_defect(sys: &dyn AbstractSystem, mus: &[f64], probes: &[Vec<f64>]) -> f64 {
    let n = sys.dim();
    let zero = vec![0.0; n];
    let mut worst = 0.0f64;
    for &mu in mus {
        let mut y = vec![0.0; n];
        sys.nonlinear(mu, &zero, &mut y);
        worst = worst.max(crate::linalg::norm2(&y));
        for d in probes {
            sys.nonlinear_jvp(mu, &zero, d, &mut y);
            worst = worst.max(crate::linalg::norm2(&y) / crate::linalg::norm2(d).max(f64::MIN_POSITIVE));
        }
    }
    worst
}

/// Symmetric grid of `points` values in `[−eps_max, eps_max]`.
pub fn epsilon_grid(eps_max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| -eps_max + 2.0 * eps_max * i as f64 / (points - 1) as f64)
        .collect()
}

/// Direction of bifurcation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    /// Periodic orbits exist for `μ > 0`.
    Supercritical,
    /// Periodic orbits exist for `μ < 0`.
    Subcritical,
    /// `μ` vanishes to fit accuracy.
    Degenerate,
}

/// Least-squares fit `μ(ε) = μ₁ ε² + μ₂ ε⁴` and the resulting classification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalityReport {
    /// Quadratic coefficient.
    pub mu1: f64,
    /// Quartic coefficient.
    pub mu2: f64,
    /// Root-mean-square fit residual.
    pub fit_residual: f64,
    /// Classification.
    pub criticality: Criticality,
}

/// Classifies a branch by the sign of `μ₁`: orbits for `μ > 0` are
/// supercritical.
pub fn classify_criticality(branch: &[PeriodicBranchPoint]) -> Result<CriticalityReport> {
    let pts: Vec<(f64, f64)> = branch.iter().filter(|p| p.epsilon != 0.0).map(|p| (p.epsilon, p.mu)).collect();
    if branch.len() < 4 || pts.len() < 2 {
        return Err(Error::validation("criticality classification needs at least 4 branch points"));
    }
    let (mut s44, mut s46, mut s66, mut b4, mut b6) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(e, m) in &pts {
        let (e2, e4) = (e * e, e * e * e * e);
        s44 += e2 * e2;
        s46 += e2 * e4;
        s66 += e4 * e4;
        b4 += e2 * m;
        b6 += e4 * m;
    }
    let det = s44 * s66 - s46 * s46;
    let (mu1, mu2) = if det.abs() > 1e-300 {
        ((b4 * s66 - b6 * s46) / det, (s44 * b6 - s46 * b4) / det)
    } else {
        (b4 / s44, 0.0)
    };
    let fit_residual = (pts
        .iter()
        .map(|&(e, m)| (m - mu1 * e * e - mu2 * e.powi(4)).powi(2))
        .sum::<f64>()
        / pts.len() as f64)
        .sqrt();
    let emax = pts.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let mu_scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let floor = 1e-9 + 10.0 * fit_residual;
    let criticality = if mu1.abs() * emax * emax <= floor || mu_scale <= 1e-12 {
        Criticality::Degenerate
    } else if mu1 > 0.0 {
        Criticality::Supercritical
    } else {
        Criticality::Subcritical
    };
    Ok(CriticalityReport {
        mu1,
        mu2,
        fit_residual,
        criticality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{adjoint_eigenvector, eigs_near_axis, EigenSettings};
    use crate::surrogates::{normal_form, CubicHopf, QuadraticHopf};
    use crate::system::DenseSystem;

    fn basis_for(sys: &DenseSystem) -> OscBasis {
        let spec = eigs_near_axis(sys, 0.0, &EigenSettings::default()).unwrap();
        let pair = necessary_guard(&spec, 1e-9).unwrap();
        let adj = adjoint_eigenvector(sys, 0.0, pair, 1e-10).unwrap();
        OscBasis::new(sys, pair, &adj).unwrap()
    }

    fn settings(kmax: usize) -> BranchSettings {
        BranchSettings {
            kmax,
            tol: 1e-12,
            ..Default::default()
        }
    }

    #[test]
    fn normal_form_branches_follow_parabolas() {
        for sigma in [1.0, -1.0] {
            let sys = normal_form(sigma).system().unwrap();
            let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(4)).unwrap();
            let branch = hb.continue_branch(&epsilon_grid(0.3, 9));
            assert!(branch.warnings.is_empty(), "{:?}", branch.warnings);
            assert_eq!(branch.points.len(), 9);
            for p in &branch.points {
                assert!((p.mu - sigma * p.epsilon * p.epsilon).abs() < 1e-8, "{sigma}: {p:?}");
                assert!((p.zeta - 1.0).abs() < 1e-8);
                assert!((p.side.0 - p.epsilon).abs() < 1e-9 && p.side.1.abs() < 1e-9);
            }
            let rep = classify_criticality(&branch.points).unwrap();
            let expected = if sigma > 0.0 { Criticality::Supercritical } else { Criticality::Subcritical };
            assert_eq!(rep.criticality, expected);
            assert!((rep.mu1 - sigma).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_surrogate_matches_closed_form_orbit() {
        let h = QuadraticHopf {
            omega: 1.3,
            growth: 0.8,
            kappa: 2.0,
            radial: -1.0,
            twist: 0.4,
        };
        let sys = h.system().unwrap();
        let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(4)).unwrap();
        let branch = hb.continue_branch(&epsilon_grid(0.4, 9));
        assert!(branch.warnings.is_empty());
        for p in branch.points.iter().filter(|p| p.epsilon != 0.0) {
            let (r, zeta) = h.orbit(p.mu).expect("orbit exists on the computed side");
            assert!((r - p.epsilon.abs()).abs() < 1e-8, "radius {r} vs {}", p.epsilon);
            assert!((zeta - p.zeta).abs() < 1e-8);
            assert!((p.mean[2] - r * r / h.kappa).abs() < 1e-8);
        }
        for pair in branch.points.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if (a.epsilon + b.epsilon).abs() < 1e-12 {
                assert!((a.mu - b.mu).abs() < 1e-10);
            }
        }
        let first = &branch.points[0];
        let last = branch.points.last().unwrap();
        assert!((first.mu - last.mu).abs() < 1e-10, "mu must be even in epsilon");
        assert_eq!(h.is_supercritical(), classify_criticality(&branch.points).unwrap().criticality == Criticality::Supercritical);
    }

    #[test]
    fn basis_is_biorthogonal() {
        let sys = CubicHopf { omega: 2.0, growth: 1.0, lyapunov: -1.0, twist: 0.5 }.system().unwrap();
        let rel = basis_for(&sys).biorthogonality(&sys);
        let expected = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (got, want) in rel.iter().zip(expected) {
            assert!((got - want).abs() < 1e-10, "{rel:?}");
        }
    }

    #[test]
    fn zero_epsilon_recovers_the_eigenpair() {
        let sys = normal_form(1.0).system().unwrap();
        let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(3)).unwrap();
        let (_, p) = hb.solve_point(0.0, &hb.linear_prediction()).unwrap();
        assert!(p.mu.abs() < 1e-14);
        assert!((p.zeta - 1.0).abs() < 1e-12);
        assert!(p.mean.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn failed_transversality_is_reported() {
        let sys = CubicHopf { omega: 1.0, growth: 0.0, lyapunov: -1.0, twist: 0.0 }.system().unwrap();
        let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(2)).unwrap();
        let err = hb.solve_point(0.1, &hb.linear_prediction()).unwrap_err();
        assert!(err.to_string().contains("bordered system singular"), "{err}");
    }

    #[test]
    fn hypothesis_checks_reject_resonance_and_jordan_blocks() {
        let eigen = EigenSettings::default();
        let resonant = crate::surrogates::planted_spectrum(
            &[C64::new(0.0, 1.0), C64::new(0.0, 2.0), C64::new(0.5, 0.0)],
            &[C64::new(-1.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
        )
        .unwrap();
        let spec = eigs_near_axis(&resonant, 0.0, &eigen).unwrap();
        let pair = spec.iter().find(|p| (p.value.im - 1.0).abs() < 1e-8).unwrap();
        let err = analyze_candidate(&resonant, 0.0, pair, &spec, &eigen, 4).unwrap_err();
        assert!(err.to_string().contains("resonance"), "{err}");

        let jordan = crate::surrogates::jordan_pair(C64::new(0.0, 1.2)).unwrap();
        let spec = eigs_near_axis(&jordan, 0.0, &EigenSettings { tol: 1e-6, ..Default::default() }).unwrap();
        let pair = spec.iter().find(|p| (p.value - C64::new(0.0, 1.2)).norm() < 1e-3).unwrap();
        let err = analyze_candidate(&jordan, 0.0, pair, &spec, &eigen, 4).unwrap_err();
        assert!(err.to_string().contains("not simple"), "{err}");

        let fine = normal_form(1.0).system().unwrap();
        let spec = eigs_near_axis(&fine, 0.0, &eigen).unwrap();
        let c = analyze_candidate(&fine, 0.0, necessary_guard(&spec, 1e-9).unwrap(), &spec, &eigen, 4).unwrap();
        assert!((c.growth_slope() - 1.0).abs() < 1e-10 && (c.zeta0() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn guard_rejects_spectra_off_the_axis() {
        let sys = crate::surrogates::planted_spectrum(&[C64::new(0.2, 1.0)], &[C64::new(1.0, 0.0)]).unwrap();
        let spec = eigs_near_axis(&sys, 0.0, &EigenSettings::default()).unwrap();
        let err = necessary_guard(&spec, 1e-6).unwrap_err();
        assert!(err.to_string().contains("necessary condition fails"));
    }

    fn k1_product(sys: &DenseSystem, a: &[C64], b: &[C64]) -> f64 {
        period_product_k1(sys, a, b)
    }

    #[test]
    fn linearization_at_origin_reduces_to_two_by_two_solvability() {
        let h = QuadraticHopf { omega: 1.1, growth: 0.7, kappa: 1.5, radial: -1.0, twist: 0.2 };
        let sys = h.system().unwrap();
        let basis = basis_for(&sys);
        let hb = HarmonicBalance::new(&sys, basis.clone(), settings(3)).unwrap();
        let u0 = hb.linear_prediction();
        let f1 = vec![C64::new(0.3, -0.2), C64::new(-0.5, 0.9), C64::new(0.1, 0.4)];
        let mut rhs_state = HarmonicState {
            mean: vec![0.0; 3],
            harmonics: vec![vec![C64::new(0.0, 0.0); 3]; 3],
            zeta: 0.0,
            mu: 0.0,
        };
        rhs_state.harmonics[0] = f1.clone();
        let rhs = hb.flatten_state(&rhs_state);
        let d = hb.unflatten_state(&hb.solve_linearized(0.0, &u0, &rhs).unwrap());
        let [v1, _, a1, a2] = basis.coefficients();
        let mut sv1 = vec![C64::new(0.0, 0.0); 3];
        let s1 = crate::system::linear_dmu_apply_complex(&sys, 0.0, &v1);
        sv1.copy_from_slice(&s1);
        let lhs1 = d.mu * k1_product(&sys, &sv1, &a1);
        let lhs2 = d.zeta + d.mu * k1_product(&sys, &sv1, &a2);
        assert!((lhs1 - k1_product(&sys, &f1, &a1)).abs() < 1e-10);
        assert!((lhs2 - k1_product(&sys, &f1, &a2)).abs() < 1e-10);
    }

    #[test]
    fn phase_rotation_keeps_the_oscillation_plane() {
        let sys = QuadraticHopf { omega: 1.0, growth: 1.0, kappa: 2.0, radial: -1.0, twist: 0.1 }.system().unwrap();
        let b = basis_for(&sys);
        let rot = C64::from_polar(1.0, 0.7);
        let rotated = OscBasis {
            v0: b.v0.iter().map(|x| x * rot).collect(),
            v0_adjoint: b.v0_adjoint.iter().map(|x| x / rot).collect(),
            ..b.clone()
        };
        let projector = |basis: &OscBasis| {
            let [v1, v2, ..] = basis.coefficients();
            let r1: Vec<f64> = v1.iter().map(|x| x.re).collect();
            let r2: Vec<f64> = v2.iter().map(|x| x.re).collect();
            let (n1, n2) = (crate::linalg::norm2(&r1), crate::linalg::norm2(&r2));
            let e1: Vec<f64> = r1.iter().map(|x| x / n1).collect();
            let dot: f64 = e1.iter().zip(&r2).map(|(a, b)| a * b).sum();
            let mut e2: Vec<f64> = r2.iter().zip(&e1).map(|(b, a)| b - dot * a).collect();
            let ne2 = crate::linalg::norm2(&e2).max(n2 * 1e-300);
            e2.iter_mut().for_each(|x| *x /= ne2);
            (0..3).map(|i| (0..3).map(|j| e1[i] * e1[j] + e2[i] * e2[j]).collect::<Vec<f64>>()).collect::<Vec<_>>()
        };
        let (p, q) = (projector(&b), projector(&rotated));
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - q[i][j]).abs() < 1e-10);
            }
        }
        assert!(rotated.biorthogonality(&sys).iter().zip([1.0, 1.0, 0.0, 0.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn only_the_first_harmonic_block_is_singular() {
        let h = QuadraticHopf { omega: 1.4, growth: 1.0, kappa: 2.0, radial: -1.0, twist: 0.0 };
        let sys = h.system().unwrap();
        for k in 0..4 {
            let block: Vec<Vec<C64>> = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| C64::new(sys.j0[i][j], 0.0) - if i == j { C64::new(0.0, k as f64 * h.omega) } else { C64::new(0.0, 0.0) })
                        .collect()
                })
                .collect();
            let sv = crate::linalg::complex_singular_values(&block).unwrap();
            let zeros = sv.iter().filter(|s| **s < 1e-12).count();
            assert_eq!(zeros, usize::from(k == 1), "k = {k}: {sv:?}");
        }
    }

    #[test]
    fn rotation_invariant_system_is_degenerate() {
        let sys = CubicHopf { omega: 1.0, growth: 1.0, lyapunov: 0.0, twist: 0.3 }.system().unwrap();
        let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(3)).unwrap();
        let branch = hb.continue_branch(&epsilon_grid(0.2, 9));
        assert_eq!(classify_criticality(&branch.points).unwrap().criticality, Criticality::Degenerate);
    }

    #[test]
    fn time_shifted_seed_returns_to_the_same_point() {
        let sys = CubicHopf { omega: 1.0, growth: 1.0, lyapunov: -1.0, twist: 0.4 }.system().unwrap();
        let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(4)).unwrap();
        let (st, p) = hb.solve_point(0.2, &hb.linear_prediction()).unwrap();
        let mut shifted = st.clone();
        for (k, h) in shifted.harmonics.iter_mut().enumerate() {
            let e = C64::from_polar(1.0, (k + 1) as f64 * 0.3);
            h.iter_mut().for_each(|x| *x *= e);
        }
        let (_, q) = hb.solve_point(0.2, &shifted).unwrap();
        assert!((p.mu - q.mu).abs() < 1e-10 && (p.zeta - q.zeta).abs() < 1e-10);
        for (a, b) in p.harmonics[0].iter().zip(&q.harmonics[0]) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn nonlinearity_splits_and_scales() {
        let sys = QuadraticHopf { omega: 1.0, growth: 1.0, kappa: 2.0, radial: -1.0, twist: 0.5 }.system().unwrap();
        let hb = HarmonicBalance::new(&sys, basis_for(&sys), settings(3)).unwrap();
        let zero_h = vec![vec![C64::new(0.0, 0.0); 3]; 3];
        let (n1, n2) = hb.evaluate_nonlinearity(&[0.0; 3], &zero_h, 0.4);
        assert!(n1.iter().all(|x| *x == 0.0) && n2.iter().flatten().all(|x| x.norm() == 0.0));
        let mean = [0.1, -0.2, 0.3];
        let mut harm = zero_h.clone();
        harm[0] = vec![C64::new(0.2, 0.1), C64::new(-0.3, 0.05), C64::new(0.0, 0.2)];
        harm[1] = vec![C64::new(0.01, 0.0), C64::new(0.0, -0.04), C64::new(0.02, 0.02)];
        let (a1, a2) = hb.evaluate_nonlinearity(&mean, &harm, 0.0);
        let double_h: Vec<Vec<C64>> = harm.iter().map(|h| h.iter().map(|x| x * 2.0).collect()).collect();
        let (b1, b2) = hb.evaluate_nonlinearity(&mean.map(|x| 2.0 * x), &double_h, 0.0);
        for (a, b) in a1.iter().zip(&b1) {
            assert!((4.0 * a - b).abs() < 1e-14);
        }
        for (a, b) in a2.iter().flatten().zip(b2.iter().flatten()) {
            assert!((a * 4.0 - b).norm() < 1e-14);
        }
        let probes = vec![vec![1.0, -0.5, 0.25]];
        assert_eq!(nonlinearity_origin_defect(&sys, &[-0.3, 0.0, 0.7], &probes), 0.0);
    }
}
