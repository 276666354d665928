//! Equilibrium branch: Newton's method with continuation in the
//! Reynolds-type parameter, and the branch derivative.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretization::FsiOperators;
use crate::error::{Error, Result};
use crate::linalg::{norm2, CsrMatrix, LinearSolve, MatrixFamily};
use crate::model::{BodyMotion, ModelParams};

/// Newton and continuation controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySettings {
    /// Target for the scaled residual norm.
    pub tol_newton: f64,
    /// Newton iteration cap per solve.
    pub max_iter: usize,
    /// Smallest continuation step before giving up.
    pub min_step: f64,
}

impl Default for SteadySettings {
    fn default() -> Self {
        Self {
            tol_newton: 1e-10,
            max_iter: 25,
            min_step: 1e-3,
        }
    }
}

/// A converged equilibrium.
#[derive(Clone, Debug)]
pub struct SteadyState {
    /// Parameter value.
    pub lambda: f64,
    /// Global vector: velocity (rigid velocity slot holds `e₁`), zero
    /// displacement slot, pressure.
    pub x: Vec<f64>,
    /// Spring elongation `−ϖ A⁻¹ F` (zero for a fixed body).
    pub chi0: Vec<f64>,
    /// Fluid force on the body.
    pub traction: [f64; 3],
    /// Final scaled residual.
    pub residual_norm: f64,
    /// Newton iterations used.
    pub newton_iterations: usize,
}

/// Derivative of the equilibrium with respect to the parameter.
#[derive(Clone, Debug)]
pub struct BranchDerivative {
    /// Global vector of the derivative (rigid slots zero).
    pub x: Vec<f64>,
    /// Derivative of the spring elongation.
    pub chi0: Vec<f64>,
    /// Derivative of the fluid force.
    pub traction: [f64; 3],
    /// Relative residual of the defining linear solve.
    pub residual_norm: f64,
}

/// The steady problem on a fixed discretization.
pub struct SteadyProblem {
    ops: Arc<FsiOperators>,
    params: ModelParams,
    settings: SteadySettings,
    stokes: CsrMatrix,
}

impl SteadyProblem {
    /// Sets up the problem.
    pub fn new(ops: Arc<FsiOperators>, params: ModelParams, settings: SteadySettings) -> Self {
        let stokes = ops.stokes();
        Self {
            ops,
            params,
            settings,
            stokes,
        }
    }

    /// Operators in use.
    pub fn operators(&self) -> &Arc<FsiOperators> {
        &self.ops
    }

    /// Model parameters.
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Momentum and continuity residual with all rows, `S x + λ c(w − σ; w, ·)`.
    /// Its rigid-velocity rows are the fluid force on the body.
    pub fn full_residual(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut r = if lambda != 0.0 {
            let mut q = self.ops.advection(x);
            q.iter_mut().for_each(|v| *v *= lambda);
            q
        } else {
            vec![0.0; x.len()]
        };
        self.stokes.matvec_add(1.0, x, &mut r);
        r
    }

    /// Residual of the steady equations: rigid rows replaced by `σ − e₁` and `η`.
    pub fn residual(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let l = *self.ops.space().layout();
        let mut r = self.full_residual(x, lambda);
        for i in l.sigma..l.pressure {
            r[i] = x[i];
        }
        r[l.sigma] -= 1.0;
        r
    }

    fn boundary_vector(&self) -> Vec<f64> {
        let l = *self.ops.space().layout();
        let mut x = vec![0.0; l.total];
        x[l.sigma] = 1.0;
        x
    }

    fn forcing_norm(&self) -> f64 {
        let l = *self.ops.space().layout();
        let mut r = self.full_residual(&self.boundary_vector(), 0.0);
        for v in &mut r[l.sigma..l.pressure] {
            *v = 0.0;
        }
        norm2(&r).max(1.0)
    }

    fn jacobian_family(&self, x: &[f64]) -> MatrixFamily {
        let stokes_f = self.ops.without_rigid_rows(&self.stokes, false);
        let adv = self.ops.without_rigid_rows(&self.ops.advection_jacobian(x), false);
        MatrixFamily::new(vec![stokes_f, adv, self.ops.rigid_identity()])
    }

    /// Fluid force on the body for a state at parameter `lambda`.
    pub fn traction(&self, x: &[f64], lambda: f64) -> [f64; 3] {
        let l = *self.ops.space().layout();
        let r = self.full_residual(x, lambda);
        let mut f = [0.0; 3];
        f[..l.dim].copy_from_slice(&r[l.sigma..l.sigma + l.dim]);
        f
    }

    fn spring_elongation(&self, force: &[f64; 3]) -> Result<Vec<f64>> {
        let d = self.params.dim;
        if self.params.motion == BodyMotion::Fixed {
            return Ok(vec![0.0; d]);
        }
        let a_inv_f = self.params.stiffness.solve(&force[..d])?;
        Ok(a_inv_f.iter().map(|v| -self.params.varpi * v).collect())
    }

    /// Newton solve at `lambda` from `initial` (or the boundary data).
    pub fn solve(&self, lambda: f64, initial: Option<&[f64]>) -> Result<SteadyState> {
        if !(lambda >= 0.0) {
            return Err(Error::validation("lambda negative"));
        }
        let l = *self.ops.space().layout();
        let mut x = initial.map(<[f64]>::to_vec).unwrap_or_else(|| self.boundary_vector());
        if x.len() != l.total {
            return Err(Error::validation("initial guess has the wrong length"));
        }
        let scale = self.forcing_norm();
        let mut r = self.residual(&x, lambda);
        let mut res = norm2(&r) / scale;
        let mut family: Option<MatrixFamily> = None;
        let mut iters = 0;
        while res > self.settings.tol_newton {
            if iters >= self.settings.max_iter || !res.is_finite() {
                return Err(Error::NonConvergence {
                    stage: format!("steady Newton at lambda = {lambda}"),
                    iterations: iters,
                    residual: res,
                    hint: "; try continuation in lambda from a converged state".into(),
                });
            }
            let fam = match family.as_mut() {
                None => family.insert(self.jacobian_family(&x)),
                Some(f) => {
                    f.replace_member(1, self.ops.without_rigid_rows(&self.ops.advection_jacobian(&x), false));
                    f
                }
            };
            let lu = fam
                .factor::<f64>(&[1.0, lambda, 1.0])
                .map_err(|_| Error::Singular("steady Jacobian singular".into()))?;
            let mut dx = r.clone();
            lu.solve_in_place(&mut dx);
            // Backtracking on the residual norm.
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..6 {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a - step * b).collect();
                let rt = self.residual(&trial, lambda);
                let rn = norm2(&rt) / scale;
                if rn.is_finite() && (rn < res || rn <= self.settings.tol_newton) {
                    x = trial;
                    r = rt;
                    res = rn;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iters += 1;
            if !accepted {
                return Err(Error::NonConvergence {
                    stage: format!("steady Newton at lambda = {lambda}"),
                    iterations: iters,
                    residual: res,
                    hint: "; line search stalled, use continuation in lambda".into(),
                });
            }
        }
        let traction = self.traction(&x, lambda);
        let chi0 = self.spring_elongation(&traction)?;
        Ok(SteadyState {
            lambda,
            x,
            chi0,
            traction,
            residual_norm: res,
            newton_iterations: iters,
        })
    }

    /// Solves at each target, seeding from the previous state and halving the
    /// step on failure.
    pub fn continue_in_lambda(&self, targets: &[f64]) -> Result<Vec<SteadyState>> {
        if targets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::validation("lambda targets must be ascending"));
        }
        let mut out: Vec<SteadyState> = Vec::with_capacity(targets.len());
        let mut current: Option<SteadyState> = None;
        for &target in targets {
            let mut guard = 0;
            loop {
                let from = current.as_ref().map_or(0.0, |s| s.lambda);
                let seed = current.as_ref().map(|s| s.x.as_slice());
                let mut step = target - from;
                let state = loop {
                    let lam = from + step;
                    match self.solve(lam, seed) {
                        Ok(s) => break s,
                        Err(e) => {
                            if step.abs() * 0.5 < self.settings.min_step {
                                return Err(e);
                            }
                            step *= 0.5;
                        }
                    }
                };
                let reached = state.lambda == target;
                current = Some(state);
                if reached {
                    break;
                }
                guard += 1;
                if guard > 10_000 {
                    return Err(Error::non_convergence("lambda continuation", guard, f64::NAN));
                }
            }
            out.push(current.clone().expect("state"));
        }
        Ok(out)
    }

    /// Solves the parameter-differentiated steady equations at `state`.
    pub fn branch_derivative(&self, state: &SteadyState) -> Result<BranchDerivative> {
        let l = *self.ops.space().layout();
        let fam = self.jacobian_family(&state.x);
        let lu = fam
            .factor::<f64>(&[1.0, state.lambda, 1.0])
            .map_err(|_| Error::Singular("steady Jacobian singular".into()))?;
        let q = self.ops.advection(&state.x);
        let mut rhs: Vec<f64> = q.iter().map(|v| -v).collect();
        for v in &mut rhs[l.sigma..l.pressure] {
            *v = 0.0;
        }
        let mut dx = rhs.clone();
        lu.solve_in_place(&mut dx);
        // Residual of J dx = rhs.
        let mut jdx = vec![0.0; l.total];
        fam.apply_add(&[1.0, state.lambda, 1.0], &dx, &mut jdx);
        let res: f64 = norm2(&jdx.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm2(&rhs).max(f64::MIN_POSITIVE);
        if !res.is_finite() || res > 1e-6 {
            return Err(Error::Singular("steady Jacobian singular".into()));
        }
        // Force derivative: rigid rows of S dx + c(w − σ; w) + λ D c[dx].
        let mut df = q;
        self.stokes.matvec_add(1.0, &dx, &mut df);
        self.ops.advection_jacobian(&state.x).matvec_add(state.lambda, &dx, &mut df);
        let mut traction = [0.0; 3];
        traction[..l.dim].copy_from_slice(&df[l.sigma..l.sigma + l.dim]);
        let chi0 = self.spring_elongation(&traction)?;
        Ok(BranchDerivative {
            x: dx,
            chi0,
            traction,
            residual_norm: res,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_truncated_domain, MeshSettings};
    use crate::model::{BodyGeometry, Stiffness};
    use crate::space::DiscreteSpace;

    fn problem(res: usize) -> SteadyProblem {
        let s = MeshSettings {
            truncation_radius: 10.0,
            resolution: res,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap();
        let ops = Arc::new(FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh).unwrap())).unwrap());
        let params = ModelParams::new(10.0, 2.0, Stiffness::isotropic(2, 3.0)).unwrap();
        SteadyProblem::new(ops, params, SteadySettings::default())
    }

    #[test]
    fn stokes_converges_in_one_iteration() {
        let p = problem(16);
        let s = p.solve(0.0, None).unwrap();
        assert_eq!(s.newton_iterations, 1);
        assert!(s.residual_norm < 1e-10);
    }

    #[test]
    fn elongation_matches_force() {
        let p = problem(16);
        let s = p.solve(5.0, None).unwrap();
        let a_chi = p.params().stiffness.apply(&s.chi0);
        for m in 0..2 {
            let expect = -p.params().varpi * s.traction[m];
            assert!((a_chi[m] - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
        }
    }

    #[test]
    fn continuation_reaches_targets_with_symmetric_lift() {
        let p = problem(16);
        let states = p.continue_in_lambda(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(states.len(), 3);
        for s in &states {
            assert!(s.residual_norm < 1e-10);
            assert!(s.traction[1].abs() < 1e-8 * s.traction[0].abs());
        }
    }

    #[test]
    fn residual_force_agrees_with_boundary_quadrature() {
        let p = problem(32);
        let s = p.solve(5.0, None).unwrap();
        let direct = p.operators().traction_direct(&s.x);
        assert!((direct[0] - s.traction[0]).abs() < 0.05 * s.traction[0].abs(), "{direct:?} vs {:?}", s.traction);
    }

    #[test]
    fn branch_derivative_matches_central_difference() {
        let p = problem(16);
        let s = p.solve(8.0, None).unwrap();
        let d = p.branch_derivative(&s).unwrap();
        let mut errs = Vec::new();
        for h in [0.2, 0.1] {
            let up = p.solve(8.0 + h, Some(&s.x)).unwrap();
            let dn = p.solve(8.0 - h, Some(&s.x)).unwrap();
            let fd: Vec<f64> = up.x.iter().zip(&dn.x).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let e: Vec<f64> = fd.iter().zip(&d.x).map(|(a, b)| a - b).collect();
            errs.push(norm2(&e));
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "central-difference error ratio {ratio}");
    }

    #[test]
    fn unique_at_small_lambda() {
        let p = problem(16);
        let a = p.solve(1.0, None).unwrap();
        let stokes = p.solve(0.0, None).unwrap();
        let zero = vec![0.0; a.x.len()];
        let b = p.solve(1.0, Some(&stokes.x)).unwrap();
        let c = p.solve(1.0, Some(&zero)).unwrap();
        for other in [&b, &c] {
            let diff: Vec<f64> = a.x.iter().zip(&other.x).map(|(u, v)| u - v).collect();
            assert!(norm2(&diff) < 1e-9);
        }
    }
}
