//! Eigenvalues of `J v = ν B v` near the imaginary axis, tracking of the
//! critical pair across the parameter, and the hypothesis checks at a
//! crossing (simplicity, non-resonance, transversality).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{arnoldi, cnorm2, complex_eigen, LinearSolve, C64};
use crate::system::{
    eigen_residual, gram_inner, gram_pairing, linear_apply_complex, linear_dmu_apply_complex, mass_apply_complex,
    AbstractSystem,
};

/// Controls for the shift-invert eigensolver.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenSettings {
    /// Range of `Im ν` scanned by the shifts.
    pub window: [f64; 2],
    /// Number of shifts placed on the imaginary axis across the window.
    pub shifts: usize,
    /// Arnoldi subspace dimension per shift.
    pub krylov_dim: usize,
    /// Ritz pairs refined per shift.
    pub per_shift: usize,
    /// Residual tolerance in the dual Gram norm.
    pub tol: f64,
    /// Eigenvalues with `|Re ν|` above this are discarded.
    pub max_real: f64,
    /// Seed of the starting vector.
    pub seed: u64,
}

impl EigenSettings {
    /// Window suited to bluff-body wakes in viscous time units, where the
    /// shedding frequency grows roughly like `2π St λ`.
    pub fn for_flow() -> Self {
        Self {
            window: [1.0, 60.0],
            shifts: 4,
            krylov_dim: 40,
            per_shift: 4,
            tol: 1e-8,
            max_real: 20.0,
            seed: 7,
        }
    }
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            window: [0.05, 3.0],
            shifts: 4,
            krylov_dim: 40,
            per_shift: 6,
            tol: 1e-8,
            max_real: 2.0,
            seed: 7,
        }
    }
}

/// An eigenvalue with a right eigenvector normalized to unit Gram norm.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    /// Eigenvalue `ν` of `J v = ν B v`.
    pub value: C64,
    /// Eigenvector with `⟨v, v⟩ = 1` and its largest entry real and positive.
    pub vector: Vec<C64>,
    /// Residual `‖J v − ν B v‖` in the dual norm.
    pub residual: f64,
}

fn random_vector(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

/// Factorizes `J(μ) − s B`, nudging the shift up to three times if it lands
/// on the spectrum.
fn factor_shift(sys: &dyn AbstractSystem, mu: f64, s: C64) -> Result<(C64, Box<dyn LinearSolve<C64>>)> {
    let mut last = None;
    for attempt in 0..4 {
        let nudge = 1e-7 * (1.0 + s.norm()) * f64::from(attempt);
        let st = s + C64::new(nudge, nudge);
        match sys.factor(mu, -st) {
            Ok(lu) => return Ok((st, lu)),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Spectral(format!(
        "shift-invert factorization at {s} failed after 3 retries: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Scales `v` to unit Gram norm with its largest entry real and positive.
pub fn normalize_eigenvector(sys: &dyn AbstractSystem, v: &mut [C64]) {
    let nrm = gram_inner(sys, v, v).re.abs().sqrt();
    let nrm = if nrm > 0.0 { nrm } else { cnorm2(v) };
    let big = v.iter().copied().fold(C64::new(0.0, 0.0), |m, x| if x.norm() > m.norm() { x } else { m });
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { C64::new(1.0, 0.0) };
    for x in v.iter_mut() {
        *x *= phase / nrm;
    }
}

fn rayleigh_quotient(sys: &dyn AbstractSystem, mu: f64, v: &[C64]) -> C64 {
    let jv = linear_apply_complex(sys, mu, v);
    let bv = mass_apply_complex(sys, v);
    let num: C64 = v.iter().zip(&jv).map(|(a, b)| a.conj() * b).sum();
    let den: C64 = v.iter().zip(&bv).map(|(a, b)| a.conj() * b).sum();
    num / den
}

/// Sharpens an approximate pair by inverse iteration at a shift next to it.
pub fn refine_eigenpair(sys: &dyn AbstractSystem, mu: f64, nu: C64, v: &[C64], tol: f64) -> Result<Eigenpair> {
    let mut v = v.to_vec();
    normalize_eigenvector(sys, &mut v);
    let mut value = rayleigh_quotient(sys, mu, &v);
    let mut residual = eigen_residual(sys, mu, value, &v);
    if residual < tol {
        return Ok(Eigenpair { value, vector: v, residual });
    }
    let offset = 1e-9 * (1.0 + nu.norm());
    let (_, lu) = factor_shift(sys, mu, nu + C64::new(offset, offset))?;
    for _ in 0..4 {
        if residual < tol {
            break;
        }
        let mut w = mass_apply_complex(sys, &v);
        lu.solve_in_place(&mut w);
        normalize_eigenvector(sys, &mut w);
        let nv = rayleigh_quotient(sys, mu, &w);
        let nr = eigen_residual(sys, mu, nv, &w);
        if nr >= residual && residual < 1e3 * tol {
            break;
        }
        v = w;
        value = nv;
        residual = nr;
    }
    Ok(Eigenpair { value, vector: v, residual })
}

/// Up to `count` refined eigenpairs nearest the shift `s`, by distance.
pub fn eigs_near_shift(
    sys: &dyn AbstractSystem,
    mu: f64,
    s: C64,
    count: usize,
    settings: &EigenSettings,
) -> Result<Vec<Eigenpair>> {
    let n = sys.dim();
    let (s, lu) = factor_shift(sys, mu, s)?;
    let op = |x: &[C64], y: &mut [C64]| {
        let bx = mass_apply_complex(sys, x);
        y.copy_from_slice(&bx);
        lu.solve_in_place(y);
    };
    let mut start = vec![C64::new(0.0, 0.0); n];
    op(&random_vector(n, settings.seed), &mut start);
    let m = settings.krylov_dim.min(n.saturating_sub(1)).max(1);
    let arn = arnoldi(op, &start, m);
    let k = arn.steps.min(arn.basis.len());
    let h: Vec<Vec<C64>> = (0..k).map(|i| arn.hessenberg[i][..k].to_vec()).collect();
    let (theta, y) = complex_eigen(&h)?;
    let mut order: Vec<usize> = (0..k).filter(|&j| theta[j].norm() > 1e-300).collect();
    order.sort_by(|&a, &b| theta[b].norm().total_cmp(&theta[a].norm()));
    let mut out: Vec<Eigenpair> = Vec::new();
    for &j in order.iter().take(count) {
        let nu = s + 1.0 / theta[j];
        let mut v = vec![C64::new(0.0, 0.0); n];
        for (i, b) in arn.basis.iter().take(k).enumerate() {
            let c = y[i][j];
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi += c * bi;
            }
        }
        let pair = refine_eigenpair(sys, mu, nu, &v, settings.tol)?;
        if pair.residual.is_finite() {
            out.push(pair);
        }
    }
    out.sort_by(|a, b| (a.value - s).norm().total_cmp(&(b.value - s).norm()));
    Ok(out)
}

fn same_mode(sys: &dyn AbstractSystem, a: &Eigenpair, b: &Eigenpair) -> bool {
    (a.value - b.value).norm() < 1e-6 * (1.0 + a.value.norm()) && gram_inner(sys, &a.vector, &b.vector).norm() > 0.99
}

/// Eigenvalues with `Im ν ≥ 0` in the configured window, sorted by `Re ν`
/// (least stable first), each converged to the residual tolerance.
///
/// Conjugate partners are folded onto the upper half plane.
pub fn eigs_near_axis(sys: &dyn AbstractSystem, mu: f64, settings: &EigenSettings) -> Result<Vec<Eigenpair>> {
    let [lo, hi] = settings.window;
    if !(hi > lo) || settings.shifts == 0 {
        return Err(Error::validation("eigen window must be a nonempty interval with at least one shift"));
    }
    let spacing = (hi - lo) / settings.shifts as f64;
    let mut found: Vec<Eigenpair> = Vec::new();
    for j in 0..settings.shifts {
        let s = C64::new(0.0, lo + (j as f64 + 0.5) * spacing);
        for mut p in eigs_near_shift(sys, mu, s, settings.per_shift, settings)? {
            if p.residual > settings.tol || p.value.re.abs() > settings.max_real {
                continue;
            }
            if p.value.im < 0.0 {
                p.value = p.value.conj();
                p.vector.iter_mut().for_each(|x| *x = x.conj());
                normalize_eigenvector(sys, &mut p.vector);
            }
            if p.value.im > hi + spacing {
                continue;
            }
            match found.iter_mut().find(|q| same_mode(sys, q, &p)) {
                Some(q) if q.residual > p.residual => *q = p,
                Some(_) => {}
                None => found.push(p),
            }
        }
    }
    found.sort_by(|a, b| a.value.re.total_cmp(&b.value.re).then(a.value.im.total_cmp(&b.value.im)));
    Ok(found)
}

/// Eigenvalues of `J v = ν B v` nearest `s` by dense factorization of
/// `(J − sB)⁻¹B`; intended for small systems and reference checks.
pub fn dense_eigenvalues_near(sys: &dyn AbstractSystem, mu: f64, s: C64, count: usize) -> Result<Vec<C64>> {
    let n = sys.dim();
    let mut cols = Vec::with_capacity(n);
    let lu = sys.factor(mu, -s)?;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let mut be = vec![0.0; n];
        sys.mass_apply(&e, &mut be);
        let mut c: Vec<C64> = be.iter().map(|&x| C64::new(x, 0.0)).collect();
        lu.solve_in_place(&mut c);
        cols.push(c);
    }
    let a: Vec<Vec<C64>> = (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect();
    let (theta, _) = complex_eigen(&a)?;
    let mut nus: Vec<C64> = theta.into_iter().filter(|t| t.norm() > 1e-12).map(|t| s + 1.0 / t).collect();
    nus.sort_by(|a, b| (a - s).norm().total_cmp(&(b - s).norm()));
    nus.truncate(count);
    Ok(nus)
}

/// Left eigenvector `y` with `J(μ)ᵀ y = ν Bᵀ y`, normalized so that the
/// bilinear Gram pairing with `v` equals `pairing`.
pub fn adjoint_eigenvector(sys: &dyn AbstractSystem, mu: f64, pair: &Eigenpair, pairing: f64) -> Result<Vec<C64>> {
    let nu = pair.value;
    let offset = 1e-9 * (1.0 + nu.norm());
    let (_, lu) = factor_shift(sys, mu, nu + C64::new(offset, offset))?;
    let mut y = random_vector(sys.dim(), 11);
    for _ in 0..4 {
        let mut w = mass_apply_complex(sys, &y);
        lu.solve_transpose_in_place(&mut w);
        let nrm = cnorm2(&w);
        y = w.into_iter().map(|x| x / nrm).collect();
    }
    let p = gram_pairing(sys, &y, &pair.vector);
    let scale = gram_inner(sys, &y, &y).re.abs().sqrt() * gram_inner(sys, &pair.vector, &pair.vector).re.abs().sqrt();
    if p.norm() <= 1e-12 * scale.max(1e-300) {
        return Err(Error::Spectral(format!(
            "defective pairing: left and right eigenvectors at {nu} are Gram-orthogonal"
        )));
    }
    let c = C64::new(pairing, 0.0) / p;
    Ok(y.into_iter().map(|x| x * c).collect())
}

/// Multiplicity classification of the critical eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplicity {
    /// Algebraically simple.
    Simple,
    /// A second independent eigenvector within the gap tolerance.
    Semisimple,
    /// A nontrivial Jordan block.
    Jordan,
}

/// Outcome of the simplicity check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplicityReport {
    /// Distance to the nearest other computed eigenvalue.
    pub gap: f64,
    /// Normalized left/right pairing `|yᵀ B v| / (‖y‖ ‖v‖)`.
    pub pairing: f64,
    /// Relative residual of the two-dimensional Krylov probe subspace.
    pub probe_residual: f64,
    /// Classification.
    pub multiplicity: Multiplicity,
}

/// Threshold below which gaps and residuals signal a non-simple eigenvalue.
pub const SIMPLICITY_TOL: f64 = 1e-6;

/// Two consecutive inverse-iteration vectors next to `nu` span an invariant
/// subspace only if the eigenvalue is not simple. Returns the relative
/// residual of that subspace, the split of its two Ritz values and the size
/// of the nilpotent part of the projected 2 × 2 matrix.
fn two_dimensional_probe(sys: &dyn AbstractSystem, mu: f64, nu: C64) -> Result<(f64, f64, f64)> {
    let d = SIMPLICITY_TOL * (1.0 + nu.norm());
    let (_, lu) = factor_shift(sys, mu, nu + C64::new(d, d))?;
    let mut prev = random_vector(sys.dim(), 23);
    let mut cur = prev.clone();
    for _ in 0..4 {
        prev = cur;
        let mut w = mass_apply_complex(sys, &prev);
        lu.solve_in_place(&mut w);
        let n = cnorm2(&w);
        cur = w.into_iter().map(|x| x / n).collect();
    }
    let q0 = cur;
    let mut q1 = prev;
    for _ in 0..2 {
        let c: C64 = q0.iter().zip(&q1).map(|(a, b)| a.conj() * b).sum();
        q1.iter_mut().zip(&q0).for_each(|(x, y)| *x -= c * y);
    }
    let n1 = cnorm2(&q1);
    if n1 == 0.0 {
        return Ok((f64::INFINITY, f64::INFINITY, 0.0));
    }
    q1.iter_mut().for_each(|x| *x /= n1);
    let q = [q0, q1];
    let jq: Vec<Vec<C64>> = q.iter().map(|v| linear_apply_complex(sys, mu, v)).collect();
    let bq: Vec<Vec<C64>> = q.iter().map(|v| mass_apply_complex(sys, v)).collect();
    let proj = |a: &[C64], b: &[C64]| -> C64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
    let m: Vec<Vec<C64>> = (0..2).map(|i| (0..2).map(|j| proj(&q[i], &bq[j])).collect()).collect();
    let k: Vec<Vec<C64>> = (0..2).map(|i| (0..2).map(|j| proj(&q[i], &jq[j])).collect()).collect();
    let det_m = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det_m.norm() == 0.0 {
        return Ok((f64::INFINITY, f64::INFINITY, 0.0));
    }
    let minv = [[m[1][1] / det_m, -m[0][1] / det_m], [-m[1][0] / det_m, m[0][0] / det_m]];
    let h: Vec<Vec<C64>> = (0..2)
        .map(|i| (0..2).map(|j| minv[i][0] * k[0][j] + minv[i][1] * k[1][j]).collect())
        .collect();
    let mut residual: f64 = 0.0;
    for j in 0..2 {
        let r: Vec<C64> = (0..jq[j].len())
            .map(|i| jq[j][i] - bq[0][i] * h[0][j] - bq[1][i] * h[1][j])
            .collect();
        residual = residual.max(cnorm2(&r) / cnorm2(&jq[j]).max(1e-300));
    }
    let half_trace = 0.5 * (h[0][0] + h[1][1]);
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let split = 2.0 * (half_trace * half_trace - det).sqrt().norm();
    let nilpotent = ((h[0][0] - half_trace).norm_sqr()
        + (h[1][1] - half_trace).norm_sqr()
        + h[0][1].norm_sqr()
        + h[1][0].norm_sqr())
    .sqrt();
    Ok((residual, split, nilpotent))
}

/// Classifies the multiplicity of `pair` given the surrounding spectrum.
///
/// A two-dimensional Krylov probe next to the eigenvalue decides: if it
/// spans an invariant subspace whose Ritz values coincide, the eigenvalue is
/// semisimple when the projected matrix is scalar and a Jordan block when it
/// has a nilpotent part.
pub fn check_simplicity(
    sys: &dyn AbstractSystem,
    mu: f64,
    pair: &Eigenpair,
    spectrum: &[Eigenpair],
) -> Result<SimplicityReport> {
    let gap = spectrum
        .iter()
        .filter(|q| !same_mode(sys, q, pair))
        .map(|q| (q.value - pair.value).norm())
        .fold(f64::INFINITY, f64::min);
    let pairing = match adjoint_eigenvector(sys, mu, pair, 1.0) {
        Ok(y) => {
            let p = gram_pairing(sys, &y, &pair.vector).norm();
            p / (gram_inner(sys, &y, &y).re.abs().sqrt() * gram_inner(sys, &pair.vector, &pair.vector).re.abs().sqrt())
        }
        Err(_) => 0.0,
    };
    let (probe_residual, split, nilpotent) = two_dimensional_probe(sys, mu, pair.value)?;
    let scale = SIMPLICITY_TOL * (1.0 + pair.value.norm());
    let multiplicity = if probe_residual < SIMPLICITY_TOL && split < scale {
        if nilpotent > scale {
            Multiplicity::Jordan
        } else {
            Multiplicity::Semisimple
        }
    } else {
        Multiplicity::Simple
    };
    Ok(SimplicityReport {
        gap,
        pairing,
        probe_residual,
        multiplicity,
    })
}

/// Distance from `i k ζ₀` to the spectrum for each checked harmonic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonresonanceReport {
    /// `(k, margin)` for `k = 0, 2, …, k_max`.
    pub margins: Vec<(usize, f64)>,
    /// First resonant harmonic, if any.
    pub resonant: Option<usize>,
}

/// Checks that `i k ζ₀` is not an eigenvalue for `k ∈ {0, 2, …, k_max}`.
pub fn check_nonresonance(
    sys: &dyn AbstractSystem,
    mu: f64,
    zeta0: f64,
    k_max: usize,
    settings: &EigenSettings,
) -> Result<NonresonanceReport> {
    let local = EigenSettings {
        krylov_dim: settings.krylov_dim.min(24),
        ..settings.clone()
    };
    let mut margins = Vec::new();
    let mut resonant = None;
    for k in (0..=k_max).filter(|&k| k != 1) {
        let s = C64::new(0.0, k as f64 * zeta0);
        let margin = match sys.factor(mu, -s) {
            Err(_) => 0.0,
            Ok(_) => eigs_near_shift(sys, mu, s, 1, &local)?
                .first()
                .map(|p| (p.value - s).norm())
                .unwrap_or(f64::INFINITY),
        };
        if resonant.is_none() && margin < SIMPLICITY_TOL * (1.0 + s.norm()) {
            resonant = Some(k);
        }
        margins.push((k, margin));
    }
    Ok(NonresonanceReport { margins, resonant })
}

/// `dν/dμ = yᵀ (∂_μ J) v / yᵀ B v` for the left eigenvector `y`.
pub fn eigenvalue_derivative(sys: &dyn AbstractSystem, mu: f64, pair: &Eigenpair, adjoint: &[C64]) -> Result<C64> {
    let bv = mass_apply_complex(sys, &pair.vector);
    let den: C64 = adjoint.iter().zip(&bv).map(|(a, b)| a * b).sum();
    let scale = cnorm2(adjoint) * cnorm2(&bv);
    if den.norm() <= 1e-12 * scale.max(1e-300) {
        return Err(Error::Spectral("defective pairing: cannot normalize the crossing derivative".into()));
    }
    let sv = linear_dmu_apply_complex(sys, mu, &pair.vector);
    let num: C64 = adjoint.iter().zip(&sv).map(|(a, b)| a * b).sum();
    Ok(num / den)
}

/// Real part of the eigenvalue derivative at the crossing.
pub fn transversality(sys: &dyn AbstractSystem, mu: f64, pair: &Eigenpair, adjoint: &[C64]) -> Result<f64> {
    Ok(eigenvalue_derivative(sys, mu, pair, adjoint)?.re)
}

/// A one-parameter family of systems, evaluated on demand.
pub trait ParametrizedFamily {
    /// The system at parameter `lambda`, linearized about its equilibrium.
    fn system_at(&mut self, lambda: f64) -> Result<Arc<dyn AbstractSystem>>;
}

impl<F> ParametrizedFamily for F
where
    F: FnMut(f64) -> Result<Arc<dyn AbstractSystem>>,
{
    fn system_at(&mut self, lambda: f64) -> Result<Arc<dyn AbstractSystem>> {
        self(lambda)
    }
}

/// Controls for the crossing search.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossingSettings {
    /// Eigensolver settings.
    pub eigen: EigenSettings,
    /// Convergence tolerance on `|Re ν|`.
    pub tol: f64,
    /// Maximum number of bracket refinements.
    pub max_iter: usize,
}

impl Default for CrossingSettings {
    fn default() -> Self {
        Self {
            eigen: EigenSettings::default(),
            tol: 1e-8,
            max_iter: 40,
        }
    }
}

/// A located crossing of a complex pair through the imaginary axis.
pub struct Crossing {
    /// Critical parameter.
    pub lambda: f64,
    /// Critical eigenpair.
    pub pair: Eigenpair,
    /// System at the critical parameter.
    pub system: Arc<dyn AbstractSystem>,
    /// Window spectrum at the critical parameter.
    pub spectrum: Vec<Eigenpair>,
    /// Number of parameter evaluations.
    pub evaluations: usize,
}

fn leading_complex(spectrum: &[Eigenpair]) -> Option<&Eigenpair> {
    spectrum
        .iter()
        .filter(|p| p.value.im > 1e-6)
        .min_by(|a, b| a.value.re.total_cmp(&b.value.re))
}

fn track(sys: &dyn AbstractSystem, previous: &Eigenpair, settings: &EigenSettings) -> Result<Eigenpair> {
    let s = C64::new(0.0, previous.value.im);
    let candidates = eigs_near_shift(sys, 0.0, s, settings.per_shift.max(3), settings)?;
    let mut scored: Vec<(f64, &Eigenpair)> = candidates
        .iter()
        .filter(|p| p.residual <= settings.tol && p.value.im > 0.0)
        .map(|p| (gram_inner(sys, &previous.vector, &p.vector).norm(), p))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    match scored.as_slice() {
        [] => Err(Error::Spectral("mode tracking ambiguous: no converged eigenvalue near the tracked mode".into())),
        [(best, p), rest @ ..] => {
            let clash = rest
                .first()
                .is_some_and(|(o, q)| *o > 0.9 * best && (q.value - p.value).norm() > 1e-6);
            if *best < 0.5 || clash {
                return Err(Error::Spectral(format!(
                    "mode tracking ambiguous: best overlap {best:.3} near {}",
                    p.value
                )));
            }
            Ok((*p).clone())
        }
    }
}

/// Locates `λ ∈ [a, b]` where the least stable complex pair has `Re ν = 0`,
/// by safeguarded regula falsi on the tracked eigenvalue.
pub fn find_crossing(
    family: &mut dyn ParametrizedFamily,
    range: [f64; 2],
    settings: &CrossingSettings,
) -> Result<Crossing> {
    let [mut a, mut b] = range;
    if !(b > a) {
        return Err(Error::validation("crossing search needs lambda_min < lambda_max"));
    }
    let lead_at = |family: &mut dyn ParametrizedFamily, lam: f64| -> Result<(Arc<dyn AbstractSystem>, Vec<Eigenpair>, Eigenpair)> {
        let sys = family.system_at(lam)?;
        let spec = eigs_near_axis(sys.as_ref(), 0.0, &settings.eigen)?;
        let lead = leading_complex(&spec)
            .cloned()
            .ok_or_else(|| Error::Spectral(format!("no complex eigenvalue in the window at lambda = {lam}")))?;
        Ok((sys, spec, lead))
    };
    let (sys_a, spec_a, mut pa) = lead_at(family, a)?;
    let (sys_b, spec_b, mut pb) = lead_at(family, b)?;
    let (mut ga, mut gb) = (pa.value.re, pb.value.re);
    let mut evaluations = 2;
    if ga == 0.0 {
        return Ok(Crossing { lambda: a, pair: pa, system: sys_a, spectrum: spec_a, evaluations });
    }
    if gb == 0.0 {
        return Ok(Crossing { lambda: b, pair: pb, system: sys_b, spectrum: spec_b, evaluations });
    }
    if ga * gb > 0.0 {
        return Err(Error::Spectral(format!(
            "no crossing bracketed in [{a}, {b}]: leading Re nu is {ga:.6e} and {gb:.6e}"
        )));
    }
    // The crossing mode is the one leading on the unstable side; follow it
    // to the stable endpoint so both ends describe the same eigenvalue.
    if ga < 0.0 {
        if let Ok(p) = track(sys_b.as_ref(), &pa, &settings.eigen) {
            if p.value.re > 0.0 {
                gb = p.value.re;
                pb = p;
            }
        }
    } else if let Ok(p) = track(sys_a.as_ref(), &pb, &settings.eigen) {
        if p.value.re > 0.0 {
            ga = p.value.re;
            pa = p;
        }
    }
    // Illinois variant of regula falsi: the retained endpoint's value is
    // halved when the same side is replaced twice in a row.
    let mut last_replaced: Option<bool> = None;
    for _ in 0..settings.max_iter {
        let c = b - gb * (b - a) / (gb - ga);
        let c = if c.is_finite() && c > a && c < b { c } else { 0.5 * (a + b) };
        let sys = family.system_at(c)?;
        evaluations += 1;
        let reference = if (c - a).abs() < (b - c).abs() { &pa } else { &pb };
        let pc = track(sys.as_ref(), reference, &settings.eigen)?;
        let gc = pc.value.re;
        if gc.abs() < settings.tol || (b - a) < 1e-12 * (1.0 + c.abs()) {
            let spectrum = eigs_near_axis(sys.as_ref(), 0.0, &settings.eigen)?;
            return Ok(Crossing { lambda: c, pair: pc, system: sys, spectrum, evaluations });
        }
        let replace_lower = gc * ga > 0.0;
        if replace_lower {
            (a, ga, pa) = (c, gc, pc);
            if last_replaced == Some(true) {
                gb *= 0.5;
            }
        } else {
            (b, gb, pb) = (c, gc, pc);
            if last_replaced == Some(false) {
                ga *= 0.5;
            }
        }
        last_replaced = Some(replace_lower);
    }
    Err(Error::NonConvergence {
        stage: "crossing search".into(),
        iterations: settings.max_iter,
        residual: ga.abs().min(gb.abs()),
        hint: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogates::{jordan_pair, planted_spectrum};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn planted_window_spectrum_is_recovered() {
        let vals = [c(0.02, 0.8), c(-0.1, 1.9), c(0.5, 0.0), c(1.0, 2.7), c(3.0, 1.0)];
        let sys = planted_spectrum(&vals, &[c(0.0, 0.0); 5]).unwrap();
        let found = eigs_near_axis(&sys, 0.0, &EigenSettings::default()).unwrap();
        let inside: Vec<C64> = found.iter().map(|p| p.value).collect();
        for v in [vals[0], vals[1], vals[3]] {
            assert!(inside.iter().any(|e| (e - v).norm() < 1e-10), "{v} not in {inside:?}");
        }
        assert!(found.iter().all(|p| p.value.im >= 0.0 && p.residual < 1e-8));
        assert_eq!(found[0].value.re, found.iter().map(|p| p.value.re).fold(f64::INFINITY, f64::min));
        let pair = &found[0];
        let conj: Vec<C64> = pair.vector.iter().map(|x| x.conj()).collect();
        assert_eq!(
            eigen_residual(&sys, 0.0, pair.value.conj(), &conj),
            eigen_residual(&sys, 0.0, pair.value, &pair.vector)
        );
    }

    #[test]
    fn planted_crossing_is_located() {
        let mut family = |lam: f64| -> Result<Arc<dyn AbstractSystem>> {
            let s = planted_spectrum(&[c(lam - 3.0, 2.0), c(0.8, 1.0)], &[c(1.0, 0.0), c(0.0, 0.0)])?;
            Ok(Arc::new(s) as Arc<dyn AbstractSystem>)
        };
        let cross = find_crossing(&mut family, [1.5, 4.5], &CrossingSettings::default()).unwrap();
        assert!((cross.lambda - 3.0).abs() < 1e-8, "{}", cross.lambda);
        assert!((cross.pair.value - c(0.0, 2.0)).norm() < 1e-8);
        let err = find_crossing(&mut family, [4.0, 4.9], &CrossingSettings::default()).err().unwrap();
        assert!(err.to_string().contains("no crossing bracketed"), "{err}");
    }

    #[test]
    fn jordan_block_is_flagged() {
        let sys = jordan_pair(c(0.0, 1.5)).unwrap();
        let spec = eigs_near_axis(&sys, 0.0, &EigenSettings { tol: 1e-6, ..Default::default() }).unwrap();
        let pair = spec.iter().find(|p| (p.value - c(0.0, 1.5)).norm() < 1e-3).unwrap_or_else(|| panic!("{:?}", spec.iter().map(|p| (p.value, p.residual)).collect::<Vec<_>>()));
        let rep = check_simplicity(&sys, 0.0, pair, &spec).unwrap();
        assert_eq!(rep.multiplicity, Multiplicity::Jordan, "{rep:?}");
    }

    #[test]
    fn simple_pair_is_simple_and_conjugate_excluded() {
        let sys = planted_spectrum(&[c(0.0, 1.5), c(0.3, 2.2)], &[c(0.0, 0.0); 2]).unwrap();
        let spec = eigs_near_axis(&sys, 0.0, &EigenSettings::default()).unwrap();
        let pair = spec.iter().find(|p| p.value.re.abs() < 1e-9).unwrap();
        let rep = check_simplicity(&sys, 0.0, pair, &spec).unwrap();
        assert_eq!(rep.multiplicity, Multiplicity::Simple);
        assert!((rep.gap - (c(0.3, 2.2) - c(0.0, 1.5)).norm()).abs() < 1e-9);
    }

    #[test]
    fn planted_resonance_is_detected() {
        let zeta = 1.1;
        let sys = planted_spectrum(&[c(0.0, zeta), c(0.0, 2.0 * zeta), c(0.4, 0.0)], &[c(0.0, 0.0); 3]).unwrap();
        let rep = check_nonresonance(&sys, 0.0, zeta, 5, &EigenSettings::default()).unwrap();
        assert_eq!(rep.resonant, Some(2), "{rep:?}");
        let ok = planted_spectrum(&[c(0.0, zeta), c(0.2, 2.0 * zeta), c(0.4, 0.0)], &[c(0.0, 0.0); 3]).unwrap();
        let rep = check_nonresonance(&ok, 0.0, zeta, 5, &EigenSettings::default()).unwrap();
        assert_eq!(rep.resonant, None);
        let m2 = rep.margins.iter().find(|(k, _)| *k == 2).unwrap().1;
        assert!((m2 - 0.2).abs() < 1e-9, "{m2}");
        assert!((rep.margins[0].1 - 0.4).abs() < 1e-9);
    }

    #[test]
    fn transversality_matches_planted_slope_and_finite_difference() {
        let sys = planted_spectrum(&[c(0.0, 1.3), c(0.5, 0.4)], &[c(0.7, -0.2), c(0.1, 0.0)]).unwrap();
        let spec = eigs_near_axis(&sys, 0.0, &EigenSettings::default()).unwrap();
        let pair = spec.iter().find(|p| p.value.re.abs() < 1e-9).unwrap();
        let adj = adjoint_eigenvector(&sys, 0.0, pair, std::f64::consts::FRAC_1_PI).unwrap();
        assert!((gram_pairing(&sys, &adj, &pair.vector) - c(std::f64::consts::FRAC_1_PI, 0.0)).norm() < 1e-12);
        let t = transversality(&sys, 0.0, pair, &adj).unwrap();
        assert!((t - 0.7).abs() < 1e-10, "{t}");
        let h = 1e-4;
        let at = |mu: f64| {
            let s = eigs_near_shift(&sys, mu, pair.value, 1, &EigenSettings::default()).unwrap();
            s[0].value.re
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(((fd - t) / t).abs() < 1e-4, "{fd} vs {t}");
    }
}
