//! Abstract evolution systems `B ẋ + J(μ) x = N(x; μ)` consumed by the
//! spectral, Fourier-mode and periodic-orbit solvers.
//!
//! Two realizations are provided: the discretized coupled fluid–structure
//! system about an equilibrium, and small dense systems used as surrogates.

use std::sync::Arc;

use crate::discretization::FsiOperators;
use crate::error::{Error, Result};
use crate::linalg::{apply_real_to_complex, cnorm2, CsrMatrix, DenseLu, LinearSolve, MatrixFamily, C64};
use crate::model::BodyMotion;
use crate::operators::FsiLinearization;

/// An autonomous evolution system `B ẋ + J(μ) x = N(x; μ)` with `N(0; μ) = 0`
/// and `D_x N(0; 0) = 0`.
///
/// Solutions of the linear part behave like `e^{−νt} v` with `J v = ν B v`,
/// so `Re ν > 0` is decay.
pub trait AbstractSystem: Send + Sync {
    /// Number of unknowns.
    fn dim(&self) -> usize;
    /// `y = B x`, the time-derivative (mass) operator.
    fn mass_apply(&self, x: &[f64], y: &mut [f64]);
    /// `y = G x`, the Gram operator of the inner product.
    fn gram_apply(&self, x: &[f64], y: &mut [f64]) {
        self.mass_apply(x, y)
    }
    /// `y = J(μ) x`.
    fn linear_apply(&self, mu: f64, x: &[f64], y: &mut [f64]);
    /// `y = J(μ)ᵀ x`.
    fn linear_transpose_apply(&self, mu: f64, x: &[f64], y: &mut [f64]);
    /// `y = ∂_μ J(μ) x`.
    fn linear_dmu_apply(&self, mu: f64, x: &[f64], y: &mut [f64]);
    /// `y = N(x; μ)`.
    fn nonlinear(&self, mu: f64, x: &[f64], y: &mut [f64]);
    /// `y = D_x N(x; μ) dx`.
    fn nonlinear_jvp(&self, mu: f64, x: &[f64], dx: &[f64], y: &mut [f64]);
    /// `y = ∂_μ N(x; μ)`.
    fn nonlinear_dmu(&self, mu: f64, x: &[f64], y: &mut [f64]);
    /// The map `dx ↦ D_x N(x; μ) dx`, prepared once for repeated use.
    fn nonlinear_derivative<'a>(&'a self, mu: f64, x: &[f64]) -> Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync + 'a> {
        let x = x.to_vec();
        Box::new(move |dx, y| self.nonlinear_jvp(mu, &x, dx, y))
    }
    /// Indices of algebraic constraint rows (and their multiplier columns),
    /// such as incompressibility and pressure; empty for pure ODEs.
    fn constraint_range(&self) -> std::ops::Range<usize> {
        0..0
    }
    /// Factorization of `J(μ) + shift·B`.
    fn factor(&self, mu: f64, shift: C64) -> Result<Box<dyn LinearSolve<C64>>>;
    /// Dual norm of a weak residual; Euclidean unless overridden.
    fn residual_norm(&self, r: &[C64]) -> f64 {
        cnorm2(r)
    }
    /// Polynomial degree of `N` in `x` (0 if not polynomial).
    fn nonlinearity_degree(&self) -> usize {
        0
    }
}

/// Complex `y = B x`.
pub fn mass_apply_complex(sys: &dyn AbstractSystem, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    apply_real_to_complex(|a, b| sys.mass_apply(a, b), x, &mut y);
    y
}

/// Complex `y = G x`.
pub fn gram_apply_complex(sys: &dyn AbstractSystem, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    apply_real_to_complex(|a, b| sys.gram_apply(a, b), x, &mut y);
    y
}

/// Complex `y = J(μ) x`.
pub fn linear_apply_complex(sys: &dyn AbstractSystem, mu: f64, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    apply_real_to_complex(|a, b| sys.linear_apply(mu, a, b), x, &mut y);
    y
}

/// Complex `y = J(μ)ᵀ x`.
pub fn linear_transpose_apply_complex(sys: &dyn AbstractSystem, mu: f64, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    apply_real_to_complex(|a, b| sys.linear_transpose_apply(mu, a, b), x, &mut y);
    y
}

/// Complex `y = ∂_μ J(μ) x`.
pub fn linear_dmu_apply_complex(sys: &dyn AbstractSystem, mu: f64, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    apply_real_to_complex(|a, b| sys.linear_dmu_apply(mu, a, b), x, &mut y);
    y
}

/// Residual `J(μ) v − ν B v` in the system's dual norm.
pub fn eigen_residual(sys: &dyn AbstractSystem, mu: f64, nu: C64, v: &[C64]) -> f64 {
    let jv = linear_apply_complex(sys, mu, v);
    let bv = mass_apply_complex(sys, v);
    let r: Vec<C64> = jv.iter().zip(&bv).map(|(a, b)| a - nu * b).collect();
    sys.residual_norm(&r)
}

/// Sesquilinear Gram product `x̄ᵀ G y`.
pub fn gram_inner(sys: &dyn AbstractSystem, x: &[C64], y: &[C64]) -> C64 {
    let gy = gram_apply_complex(sys, y);
    x.iter().zip(&gy).map(|(a, b)| a.conj() * b).sum()
}

/// Bilinear Gram pairing `xᵀ G y`.
pub fn gram_pairing(sys: &dyn AbstractSystem, x: &[C64], y: &[C64]) -> C64 {
    let gy = gram_apply_complex(sys, y);
    x.iter().zip(&gy).map(|(a, b)| a * b).sum()
}

/// The coupled fluid–structure system linearized about an equilibrium at
/// `λ_o`, with `J(μ) = L₂ + μ S` and `N(x; μ) = −(λ_o + μ) c(w − σ; w, ·)`.
pub struct FsiSystem {
    lin: Arc<FsiLinearization>,
    family: MatrixFamily,
    parameter_derivative: CsrMatrix,
    riesz: Box<dyn LinearSolve<f64>>,
    fixed: bool,
}

impl FsiSystem {
    /// Wraps a linearization; a missing parameter derivative is treated as zero.
    pub fn new(lin: Arc<FsiLinearization>) -> Result<Self> {
        let n = lin.gram.nrows();
        let s = lin.s011.as_ref().map(|s| s.matrix.clone()).unwrap_or_else(|| CsrMatrix::zeros(n, n));
        let family = MatrixFamily::new(vec![lin.l2.matrix.clone(), s.clone(), lin.gram.clone()]);
        let ops = lin.operators();
        let fixed = lin.params().motion == BodyMotion::Fixed;
        let saddle = CsrMatrix::linear_combination(&[(1.0, &lin.gram), (1.0, &ops.gradient), (1.0, &ops.divergence)]);
        let saddle = if fixed {
            CsrMatrix::linear_combination(&[(1.0, &ops.without_rigid_rows(&saddle, true)), (1.0, &ops.rigid_identity())])
        } else {
            saddle
        };
        let riesz = MatrixFamily::new(vec![saddle]).factor::<f64>(&[1.0])?;
        Ok(Self {
            lin,
            family,
            parameter_derivative: s,
            riesz: Box::new(riesz),
            fixed,
        })
    }

    /// Underlying linearization.
    pub fn linearization(&self) -> &Arc<FsiLinearization> {
        &self.lin
    }

    /// Mesh-level operators.
    pub fn operators(&self) -> &Arc<FsiOperators> {
        self.lin.operators()
    }

    fn drop_rigid_rows(&self, y: &mut [f64]) {
        if self.fixed {
            let l = *self.operators().space().layout();
            y[l.sigma..l.pressure].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn lambda(&self, mu: f64) -> f64 {
        self.lin.lambda + mu
    }
}

impl AbstractSystem for FsiSystem {
    fn dim(&self) -> usize {
        self.lin.gram.nrows()
    }

    fn mass_apply(&self, x: &[f64], y: &mut [f64]) {
        self.lin.gram.matvec(x, y);
    }

    fn linear_apply(&self, mu: f64, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.family.apply_add(&[1.0, mu, 0.0], x, y);
    }

    fn linear_transpose_apply(&self, mu: f64, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.lin.l2.matrix.matvec_transpose_add(1.0, x, y);
        if mu != 0.0 {
            self.parameter_derivative.matvec_transpose_add(mu, x, y);
        }
    }

    fn linear_dmu_apply(&self, _mu: f64, x: &[f64], y: &mut [f64]) {
        self.parameter_derivative.matvec(x, y);
    }

    fn nonlinear(&self, mu: f64, x: &[f64], y: &mut [f64]) {
        let q = self.operators().advection(x);
        let lam = self.lambda(mu);
        for (yi, qi) in y.iter_mut().zip(q) {
            *yi = -lam * qi;
        }
        self.drop_rigid_rows(y);
    }

    fn nonlinear_jvp(&self, mu: f64, x: &[f64], dx: &[f64], y: &mut [f64]) {
        let q = self.operators().advection_bilinear(x, dx);
        let lam = self.lambda(mu);
        for (yi, qi) in y.iter_mut().zip(q) {
            *yi = -2.0 * lam * qi;
        }
        self.drop_rigid_rows(y);
    }

    fn nonlinear_derivative<'a>(&'a self, mu: f64, x: &[f64]) -> Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync + 'a> {
        let ops = self.operators();
        let jac = ops.advection_jacobian(x);
        let jac = if self.fixed { ops.without_rigid_rows(&jac, false) } else { jac };
        let lam = self.lambda(mu);
        Box::new(move |dx, y| {
            y.iter_mut().for_each(|v| *v = 0.0);
            jac.matvec_add(-lam, dx, y);
        })
    }

    fn nonlinear_dmu(&self, _mu: f64, x: &[f64], y: &mut [f64]) {
        let q = self.operators().advection(x);
        for (yi, qi) in y.iter_mut().zip(q) {
            *yi = -qi;
        }
        self.drop_rigid_rows(y);
    }

    fn constraint_range(&self) -> std::ops::Range<usize> {
        let l = *self.operators().space().layout();
        l.pressure..l.total
    }

    fn factor(&self, mu: f64, shift: C64) -> Result<Box<dyn LinearSolve<C64>>> {
        Ok(Box::new(self.family.factor(&[C64::new(1.0, 0.0), C64::new(mu, 0.0), shift])?))
    }

    /// Norm of the Riesz representative of the momentum residual in the
    /// divergence-free space, plus the Euclidean norm of the continuity rows.
    fn residual_norm(&self, r: &[C64]) -> f64 {
        let l = *self.operators().space().layout();
        let mut re: Vec<f64> = r.iter().map(|v| v.re).collect();
        let mut im: Vec<f64> = r.iter().map(|v| v.im).collect();
        let continuity: f64 = r[l.pressure..].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for v in [&mut re, &mut im] {
            v[l.pressure..].iter_mut().for_each(|x| *x = 0.0);
        }
        let (rr, ri) = (re.clone(), im.clone());
        self.riesz.solve_in_place(&mut re);
        self.riesz.solve_in_place(&mut im);
        let q: f64 = (0..l.pressure).map(|i| re[i] * rr[i] + im[i] * ri[i]).sum();
        q.abs().sqrt() + continuity
    }

    fn nonlinearity_degree(&self) -> usize {
        2
    }
}

/// Polynomial nonlinearity of a dense system: `N(x; μ) = Σ_d (c_d + μ e_d) T_d(x, …, x)`.
#[derive(Clone, Debug, Default)]
pub struct PolynomialTerms {
    /// Symmetric quadratic coefficients `q[i][j][k]`: `N_i += q_ijk x_j x_k`.
    pub quadratic: Vec<Vec<Vec<f64>>>,
    /// Cubic coefficients `c[i][j][k][l]`: `N_i += c_ijkl x_j x_k x_l`.
    pub cubic: Vec<Vec<Vec<Vec<f64>>>>,
    /// Relative growth of the nonlinearity with `μ`: `N(x; μ) = (1 + μ s) N(x; 0)`.
    pub mu_scale: f64,
}

impl PolynomialTerms {
    fn eval(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, qi) in self.quadratic.iter().enumerate() {
            for (j, qij) in qi.iter().enumerate() {
                for (k, &q) in qij.iter().enumerate() {
                    y[i] += q * x[j] * x[k];
                }
            }
        }
        for (i, ci) in self.cubic.iter().enumerate() {
            for (j, cij) in ci.iter().enumerate() {
                for (k, cijk) in cij.iter().enumerate() {
                    for (l, &c) in cijk.iter().enumerate() {
                        y[i] += c * x[j] * x[k] * x[l];
                    }
                }
            }
        }
    }

    fn jvp(&self, x: &[f64], dx: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, qi) in self.quadratic.iter().enumerate() {
            for (j, qij) in qi.iter().enumerate() {
                for (k, &q) in qij.iter().enumerate() {
                    y[i] += q * (dx[j] * x[k] + x[j] * dx[k]);
                }
            }
        }
        for (i, ci) in self.cubic.iter().enumerate() {
            for (j, cij) in ci.iter().enumerate() {
                for (k, cijk) in cij.iter().enumerate() {
                    for (l, &c) in cijk.iter().enumerate() {
                        y[i] += c * (dx[j] * x[k] * x[l] + x[j] * dx[k] * x[l] + x[j] * x[k] * dx[l]);
                    }
                }
            }
        }
    }

    fn degree(&self) -> usize {
        if !self.cubic.is_empty() {
            3
        } else if !self.quadratic.is_empty() {
            2
        } else {
            0
        }
    }
}

/// A small dense system with `J(μ) = J₀ + μ J₁` and polynomial nonlinearity.
#[derive(Clone, Debug)]
pub struct DenseSystem {
    /// `J₀`.
    pub j0: Vec<Vec<f64>>,
    /// `J₁ = ∂_μ J`.
    pub j1: Vec<Vec<f64>>,
    /// Mass operator `B`.
    pub mass: Vec<Vec<f64>>,
    /// Gram operator `G`.
    pub gram: Vec<Vec<f64>>,
    /// Nonlinearity.
    pub terms: PolynomialTerms,
}

fn dense_apply(a: &[Vec<f64>], x: &[f64], y: &mut [f64]) {
    for (yi, row) in y.iter_mut().zip(a) {
        *yi = row.iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn dense_apply_transpose(a: &[Vec<f64>], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (row, xi) in a.iter().zip(x) {
        for (yj, aij) in y.iter_mut().zip(row) {
            *yj += aij * xi;
        }
    }
}

impl DenseSystem {
    /// Identity-mass system with the given linear part and nonlinearity.
    pub fn new(j0: Vec<Vec<f64>>, j1: Vec<Vec<f64>>, terms: PolynomialTerms) -> Result<Self> {
        let n = j0.len();
        if j0.iter().chain(&j1).any(|r| r.len() != n) || j1.len() != n {
            return Err(Error::validation("dense system blocks must be square and of equal size"));
        }
        let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        Ok(Self {
            j0,
            j1,
            mass: eye.clone(),
            gram: eye,
            terms,
        })
    }

    fn shifted(&self, mu: f64, shift: C64) -> Vec<Vec<C64>> {
        let n = self.j0.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| C64::new(self.j0[i][j] + mu * self.j1[i][j], 0.0) + shift * self.mass[i][j])
                    .collect()
            })
            .collect()
    }
}

impl AbstractSystem for DenseSystem {
    fn dim(&self) -> usize {
        self.j0.len()
    }

    fn mass_apply(&self, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.mass, x, y);
    }

    fn gram_apply(&self, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.gram, x, y);
    }

    fn linear_apply(&self, mu: f64, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.j0, x, y);
        let mut t = vec![0.0; y.len()];
        dense_apply(&self.j1, x, &mut t);
        y.iter_mut().zip(t).for_each(|(a, b)| *a += mu * b);
    }

    fn linear_transpose_apply(&self, mu: f64, x: &[f64], y: &mut [f64]) {
        dense_apply_transpose(&self.j0, x, y);
        let mut t = vec![0.0; y.len()];
        dense_apply_transpose(&self.j1, x, &mut t);
        y.iter_mut().zip(t).for_each(|(a, b)| *a += mu * b);
    }

    fn linear_dmu_apply(&self, _mu: f64, x: &[f64], y: &mut [f64]) {
        dense_apply(&self.j1, x, y);
    }

    fn nonlinear(&self, mu: f64, x: &[f64], y: &mut [f64]) {
        self.terms.eval(x, y);
        let s = 1.0 + mu * self.terms.mu_scale;
        y.iter_mut().for_each(|v| *v *= s);
    }

    fn nonlinear_jvp(&self, mu: f64, x: &[f64], dx: &[f64], y: &mut [f64]) {
        self.terms.jvp(x, dx, y);
        let s = 1.0 + mu * self.terms.mu_scale;
        y.iter_mut().for_each(|v| *v *= s);
    }

    fn nonlinear_dmu(&self, _mu: f64, x: &[f64], y: &mut [f64]) {
        self.terms.eval(x, y);
        y.iter_mut().for_each(|v| *v *= self.terms.mu_scale);
    }

    fn factor(&self, mu: f64, shift: C64) -> Result<Box<dyn LinearSolve<C64>>> {
        Ok(Box::new(DenseLu::new(&self.shifted(mu, shift))?))
    }

    fn nonlinearity_degree(&self) -> usize {
        self.terms.degree()
    }
}
