//! Small dense systems with known spectra and known periodic orbits, used to
//! validate the spectral checks and the periodic-orbit solver.

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::system::{DenseSystem, PolynomialTerms};

fn zeros(n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n]; n]
}

fn place_block(m: &mut [Vec<f64>], at: usize, nu: C64) -> usize {
    if nu.im == 0.0 {
        m[at][at] = nu.re;
        1
    } else {
        m[at][at] = nu.re;
        m[at][at + 1] = nu.im.abs();
        m[at + 1][at] = -nu.im.abs();
        m[at + 1][at + 1] = nu.re;
        2
    }
}

/// Mixes coordinates with a fixed chain of Givens rotations, which keeps
/// the spectrum and the identity mass while making the matrix dense.
fn mix(m: &mut [Vec<f64>]) {
    let n = m.len();
    for p in 0..n.saturating_sub(1) {
        let angle = 0.3 + 0.17 * p as f64;
        let (c, s) = (angle.cos(), angle.sin());
        for row in m.iter_mut() {
            let (a, b) = (row[p], row[p + 1]);
            row[p] = c * a - s * b;
            row[p + 1] = s * a + c * b;
        }
        let (rp, rq) = (m[p].clone(), m[p + 1].clone());
        for j in 0..n {
            m[p][j] = c * rp[j] - s * rq[j];
            m[p + 1][j] = s * rp[j] + c * rq[j];
        }
    }
}

/// Linear system with prescribed eigenvalues `values[i]` (a complex value
/// contributes its conjugate pair) moving with `dν/dμ = slopes[i]`.
pub fn planted_spectrum(values: &[C64], slopes: &[C64]) -> Result<DenseSystem> {
    if values.len() != slopes.len() {
        return Err(Error::validation("one slope per planted eigenvalue"));
    }
    for (v, s) in values.iter().zip(slopes) {
        if v.im == 0.0 && s.im != 0.0 {
            return Err(Error::validation("a real planted eigenvalue needs a real slope"));
        }
    }
    let n: usize = values.iter().map(|v| if v.im == 0.0 { 1 } else { 2 }).sum();
    let (mut j0, mut j1) = (zeros(n), zeros(n));
    let mut at = 0;
    for (v, s) in values.iter().zip(slopes) {
        place_block(&mut j0, at, *v);
        let slope = if v.im == 0.0 { C64::new(s.re, 0.0) } else { C64::new(s.re, s.im * v.im.signum()) };
        if v.im == 0.0 {
            j1[at][at] = slope.re;
        } else {
            j1[at][at] = slope.re;
            j1[at][at + 1] = slope.im;
            j1[at + 1][at] = -slope.im;
            j1[at + 1][at + 1] = slope.re;
        }
        at += if v.im == 0.0 { 1 } else { 2 };
    }
    mix(&mut j0);
    mix(&mut j1);
    DenseSystem::new(j0, j1, PolynomialTerms::default())
}

/// Linear system whose eigenvalue `nu` (and its conjugate) carries a 2 × 2
/// Jordan block, plus a decaying spectator mode.
pub fn jordan_pair(nu: C64) -> Result<DenseSystem> {
    if nu.im == 0.0 {
        return Err(Error::validation("the Jordan surrogate needs a complex eigenvalue"));
    }
    let mut j0 = zeros(5);
    place_block(&mut j0, 0, nu);
    place_block(&mut j0, 2, nu);
    j0[0][2] = 1.0;
    j0[1][3] = 1.0;
    j0[4][4] = 1.0;
    mix(&mut j0);
    DenseSystem::new(j0, zeros(5), PolynomialTerms::default())
}

/// Three-variable Hopf surrogate with a quadratic nonlinearity:
/// an oscillator `(x₀, x₁)` with linear growth `g μ` and frequency `ω`,
/// coupled to a slaved decaying mode `x₂` with rate `κ`.
///
/// Its periodic orbits are known in closed form, see [`QuadraticHopf::orbit`].
#[derive(Clone, Copy, Debug)]
pub struct QuadraticHopf {
    /// Linear frequency.
    pub omega: f64,
    /// Growth-rate slope `d(−Re ν)/dμ`.
    pub growth: f64,
    /// Decay rate of the slaved mode.
    pub kappa: f64,
    /// Radial feedback of the slaved mode on the oscillator.
    pub radial: f64,
    /// Frequency feedback of the slaved mode on the oscillator.
    pub twist: f64,
}

impl QuadraticHopf {
    /// The dense system `ẋ + J(μ) x = N(x)`.
    pub fn system(&self) -> Result<DenseSystem> {
        let mut j0 = zeros(3);
        j0[0][1] = self.omega;
        j0[1][0] = -self.omega;
        j0[2][2] = self.kappa;
        let mut j1 = zeros(3);
        j1[0][0] = -self.growth;
        j1[1][1] = -self.growth;
        let mut q = vec![zeros(3); 3];
        q[0][2][0] = self.radial;
        q[0][2][1] = -self.twist;
        q[1][2][1] = self.radial;
        q[1][2][0] = self.twist;
        q[2][0][0] = 1.0;
        q[2][1][1] = 1.0;
        let terms = PolynomialTerms {
            quadratic: q,
            ..Default::default()
        };
        DenseSystem::new(j0, j1, terms)
    }

    /// Periodic orbit at parameter `mu`: `(radius, frequency)`, or `None`
    /// when no orbit exists there.
    ///
    /// On the orbit the slaved mode is constant, `x₂ = r²/κ`, and the
    /// oscillator obeys `ṙ = (g μ + a r²/κ) r`.
    pub fn orbit(&self, mu: f64) -> Option<(f64, f64)> {
        let r2 = -self.growth * mu * self.kappa / self.radial;
        (r2 > 0.0).then(|| (r2.sqrt(), self.omega + self.twist * r2 / self.kappa))
    }

    /// Supercritical when orbits exist for `μ > 0` (growth above threshold).
    pub fn is_supercritical(&self) -> bool {
        self.orbit(1e-3).is_some()
    }
}

/// Cubic Hopf normal form in polar coordinates `ṙ = g μ r + ℓ r³`,
/// `θ̇ = ω + β r²`, written in real coordinates, with orbit radius
/// `√(−g μ/ℓ)` and frequency `ω + β r²`.
#[derive(Clone, Copy, Debug)]
pub struct CubicHopf {
    /// Linear frequency.
    pub omega: f64,
    /// Growth-rate slope.
    pub growth: f64,
    /// First Lyapunov coefficient (real part of the cubic coefficient).
    pub lyapunov: f64,
    /// Amplitude-dependent frequency shift.
    pub twist: f64,
}

impl CubicHopf {
    /// The dense system `ẋ + J(μ) x = N(x)`.
    pub fn system(&self) -> Result<DenseSystem> {
        let mut j0 = zeros(2);
        j0[0][1] = self.omega;
        j0[1][0] = -self.omega;
        let mut j1 = zeros(2);
        j1[0][0] = -self.growth;
        j1[1][1] = -self.growth;
        let mut c = vec![vec![zeros(2); 2]; 2];
        for j in 0..2 {
            c[0][j][j][0] += self.lyapunov;
            c[1][j][j][1] += self.lyapunov;
            c[0][j][j][1] -= self.twist;
            c[1][j][j][0] += self.twist;
        }
        let terms = PolynomialTerms {
            cubic: c,
            ..Default::default()
        };
        DenseSystem::new(j0, j1, terms)
    }

    /// Periodic orbit `(radius, frequency)` at `mu`, if any.
    pub fn orbit(&self, mu: f64) -> Option<(f64, f64)> {
        let r2 = -self.growth * mu / self.lyapunov;
        (r2 > 0.0).then(|| (r2.sqrt(), self.omega + self.twist * r2))
    }
}

/// The normal form `u̇ = (μ + i) u − σ u |u|²` with `σ = ±1`, whose
/// periodic orbits satisfy `μ = σ |u|²` at unit frequency.
pub fn normal_form(sigma: f64) -> CubicHopf {
    CubicHopf {
        omega: 1.0,
        growth: 1.0,
        lyapunov: -sigma,
        twist: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{linear_apply_complex, AbstractSystem};

    #[test]
    fn planted_values_are_eigenvalues() {
        let vals = [C64::new(0.0, 1.3), C64::new(0.4, 0.0), C64::new(0.7, 2.5)];
        let sys = planted_spectrum(&vals, &[C64::new(0.7, 0.1), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let a = sys.j0.clone();
        let (ev, _) = crate::linalg::real_eigen(&a).unwrap();
        for v in vals {
            assert!(ev.iter().any(|e| (e - v).norm() < 1e-12), "{v} missing from {ev:?}");
        }
        assert_eq!(sys.dim(), 5);
        let _ = linear_apply_complex(&sys, 0.0, &[C64::new(1.0, 0.0); 5]);
    }

    #[test]
    fn quadratic_surrogate_orbit_is_invariant() {
        let h = QuadraticHopf { omega: 1.0, growth: 1.0, kappa: 2.0, radial: -1.0, twist: 0.3 };
        let sys = h.system().unwrap();
        let mu = 0.05;
        let (r, z) = h.orbit(mu).unwrap();
        let x = [r, 0.0, r * r / h.kappa];
        let mut jx = [0.0; 3];
        let mut nx = [0.0; 3];
        sys.linear_apply(mu, &x, &mut jx);
        sys.nonlinear(mu, &x, &mut nx);
        let xdot: Vec<f64> = (0..3).map(|i| nx[i] - jx[i]).collect();
        // Uniform rotation: ẋ is the tangent of a circle of radius r at speed z r.
        assert!(xdot[2].abs() < 1e-14);
        assert!(xdot[0].abs() < 1e-14);
        assert!((xdot[1].abs() - z * r).abs() < 1e-14);
    }
}
