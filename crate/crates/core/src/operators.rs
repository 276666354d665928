//! Linearized operators of the coupled system about an equilibrium, in weak
//! (matrix) form, together with the coupled inner product.
//!
//! An operator `L` is stored as the matrix `J` of its weak form, so that the
//! evolution reads `B ẋ + J x = N(x)` with `B` the coupled Gram matrix and the
//! strong action is `B⁻¹J` on the discretely divergence-free subspace. The
//! adjoint with respect to the bilinear Gram pairing is then `Jᵀ`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretization::FsiOperators;
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, C64};
use crate::model::{BodyMotion, ModelParams};
use crate::steady::{BranchDerivative, SteadyState};

/// Which linearized operator a matrix represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// Stokes-type operator with free-stream transport and spring coupling.
    Base,
    /// Perturbation from the equilibrium flow.
    Perturbation,
    /// Full linearization, base plus perturbation.
    Linearized,
    /// Derivative of the linearization with respect to the parameter.
    ParameterDerivative,
}

/// A linear operator on the coupled space in weak form.
#[derive(Clone, Debug)]
pub struct CoupledOperator {
    /// Operator identity.
    pub kind: OperatorKind,
    /// Parameter value at which it was assembled.
    pub lambda: f64,
    /// Whether this is the Gram adjoint of `kind`.
    pub adjoint: bool,
    /// Weak-form matrix.
    pub matrix: CsrMatrix,
}

impl CoupledOperator {
    /// `y = J x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.matrix.matvec(x, &mut y);
        y
    }

    /// `y = J x` for complex `x`.
    pub fn apply_complex(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        self.matrix.cmatvec_add(C64::new(1.0, 0.0), x, &mut y);
        y
    }

    /// Adjoint with respect to the bilinear Gram pairing.
    pub fn adjoint(&self) -> CoupledOperator {
        CoupledOperator {
            kind: self.kind,
            lambda: self.lambda,
            adjoint: !self.adjoint,
            matrix: self.matrix.transpose(),
        }
    }

    /// Sum of two operators assembled at the same parameter.
    pub fn sum(&self, other: &CoupledOperator, kind: OperatorKind) -> Result<CoupledOperator> {
        if self.lambda != other.lambda {
            return Err(Error::validation(format!(
                "operators assembled at different lambda ({} vs {})",
                self.lambda, other.lambda
            )));
        }
        Ok(CoupledOperator {
            kind,
            lambda: self.lambda,
            adjoint: false,
            matrix: CsrMatrix::linear_combination(&[(1.0, &self.matrix), (1.0, &other.matrix)]),
        })
    }

    /// Coordinate text dump: one `row col value` line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "% {:?} lambda={} adjoint={} n={}", self.kind, self.lambda, self.adjoint, self.matrix.nrows());
        for (i, j, v) in self.matrix.triplets() {
            let _ = writeln!(s, "{i} {j} {v:.17e}");
        }
        s
    }
}

/// The linearization of the coupled system about an equilibrium.
#[derive(Clone, Debug)]
pub struct FsiLinearization {
    ops: Arc<FsiOperators>,
    params: ModelParams,
    /// Parameter of the equilibrium.
    pub lambda: f64,
    /// Equilibrium state.
    pub base_state: Vec<f64>,
    /// Base operator.
    pub l0: CoupledOperator,
    /// Perturbation operator.
    pub khat: CoupledOperator,
    /// Linearized operator.
    pub l2: CoupledOperator,
    /// Parameter derivative, when the branch derivative was supplied.
    pub s011: Option<CoupledOperator>,
    /// Coupled Gram (mass) matrix.
    pub gram: CsrMatrix,
}

impl FsiLinearization {
    /// Assembles all operators at the equilibrium `steady`.
    pub fn new(
        ops: Arc<FsiOperators>,
        params: &ModelParams,
        steady: &SteadyState,
        derivative: Option<&BranchDerivative>,
    ) -> Result<Self> {
        let (rigid_gram, coupling) = ops.rigid_blocks(params.varpi, &params.stiffness, params.motion)?;
        let fixed = params.motion == BodyMotion::Fixed;
        let restrict = |m: CsrMatrix| if fixed { ops.without_rigid_rows(&m, true) } else { m };
        let lambda = steady.lambda;
        let l0 = restrict(CsrMatrix::linear_combination(&[
            (1.0, &ops.stokes()),
            (-lambda, &ops.transport[0]),
        ]));
        let l0 = CsrMatrix::linear_combination(&[(1.0, &l0), (1.0, &coupling)]);
        let u0 = ops.space().expand_velocity(&steady.x);
        let cr0 = CsrMatrix::linear_combination(&[(1.0, &ops.convection_matrix(&u0)), (1.0, &ops.reaction_matrix(&u0))]);
        let khat = restrict(cr0.scaled(lambda));
        let l2 = CsrMatrix::linear_combination(&[(1.0, &l0), (1.0, &khat)]);
        let s011 = derivative.map(|d| {
            let u1 = ops.space().expand_velocity(&d.x);
            let cr1 = CsrMatrix::linear_combination(&[(1.0, &ops.convection_matrix(&u1)), (1.0, &ops.reaction_matrix(&u1))]);
            restrict(CsrMatrix::linear_combination(&[(-1.0, &ops.transport[0]), (1.0, &cr0), (lambda, &cr1)]))
        });
        let gram = CsrMatrix::linear_combination(&[(1.0, &restrict(ops.mass.clone())), (1.0, &rigid_gram)]);
        let op = |kind, matrix| CoupledOperator {
            kind,
            lambda,
            adjoint: false,
            matrix,
        };
        Ok(Self {
            ops,
            params: params.clone(),
            lambda,
            base_state: steady.x.clone(),
            l0: op(OperatorKind::Base, l0),
            khat: op(OperatorKind::Perturbation, khat),
            l2: op(OperatorKind::Linearized, l2),
            s011: s011.map(|m| op(OperatorKind::ParameterDerivative, m)),
            gram,
        })
    }

    /// Mesh-level operators.
    pub fn operators(&self) -> &Arc<FsiOperators> {
        &self.ops
    }

    /// Model parameters.
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Real coupled inner product `xᵀ B y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut by = vec![0.0; y.len()];
        self.gram.matvec(y, &mut by);
        x.iter().zip(&by).map(|(a, b)| a * b).sum()
    }

    /// Sesquilinear coupled inner product `x̄ᵀ B y`.
    pub fn inner_complex(&self, x: &[C64], y: &[C64]) -> C64 {
        let mut by = vec![C64::new(0.0, 0.0); y.len()];
        self.gram.cmatvec_add(C64::new(1.0, 0.0), y, &mut by);
        x.iter().zip(&by).map(|(a, b)| a.conj() * b).sum()
    }

    /// Bilinear coupled pairing `xᵀ B y` (no conjugation).
    pub fn pairing(&self, x: &[C64], y: &[C64]) -> C64 {
        let mut by = vec![C64::new(0.0, 0.0); y.len()];
        self.gram.cmatvec_add(C64::new(1.0, 0.0), y, &mut by);
        x.iter().zip(&by).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_truncated_domain, MeshSettings};
    use crate::model::{BodyGeometry, Stiffness};
    use crate::space::DiscreteSpace;
    use crate::steady::{SteadyProblem, SteadySettings};

    fn setup(lambda: f64) -> (SteadyProblem, SteadyState) {
        let s = MeshSettings {
            truncation_radius: 6.0,
            resolution: 12,
            grading: 1.4,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &s).unwrap();
        let ops = Arc::new(FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh).unwrap())).unwrap());
        let params = ModelParams::new(lambda, 0.5, Stiffness::diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let p = SteadyProblem::new(ops, params, SteadySettings::default());
        let st = p.solve(lambda, None).unwrap();
        (p, st)
    }

    #[test]
    fn spring_row_of_base_operator() {
        let (p, st) = setup(3.0);
        let lin = FsiLinearization::new(p.operators().clone(), p.params(), &st, None).unwrap();
        let l = *p.operators().space().layout();
        let mut x = vec![0.0; l.total];
        x[l.eta] = 1.0;
        let y = lin.l0.apply(&x);
        let varpi = p.params().varpi;
        assert!((y[l.sigma] * varpi - 2.0).abs() < 1e-14);
        assert!((y[l.sigma + 1] * varpi).abs() < 1e-14);
        for (i, v) in y.iter().enumerate() {
            if !(l.sigma..l.sigma + 2).contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn pure_rigid_velocity_pairing() {
        let (p, st) = setup(1.0);
        let lin = FsiLinearization::new(p.operators().clone(), p.params(), &st, None).unwrap();
        let l = *p.operators().space().layout();
        let mut x = vec![0.0; l.total];
        x[l.eta] = 1.0;
        let a11 = p.params().stiffness.get(0, 0);
        assert!((lin.inner(&x, &x) - a11 / p.params().varpi).abs() < 1e-14);
    }

    #[test]
    fn parameter_derivative_matches_finite_difference() {
        let (p, st) = setup(4.0);
        let d = p.branch_derivative(&st).unwrap();
        let lin = FsiLinearization::new(p.operators().clone(), p.params(), &st, Some(&d)).unwrap();
        let s = lin.s011.as_ref().unwrap();
        let n = st.x.len();
        let v: Vec<f64> = (0..n).map(|i| ((i * 37 % 101) as f64 / 101.0) - 0.5).collect();
        let sv = s.apply(&v);
        let mut errs = Vec::new();
        for h in [1e-2, 5e-3] {
            let stp = p.solve(4.0 + h, Some(&st.x)).unwrap();
            let linp = FsiLinearization::new(p.operators().clone(), p.params(), &stp, None).unwrap();
            let a = linp.l2.apply(&v);
            let b = lin.l2.apply(&v);
            let e: f64 = a
                .iter()
                .zip(&b)
                .zip(&sv)
                .map(|((x, y), z)| ((x - y) / h - z).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push(e);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 1.7 && ratio < 2.3, "first-order ratio {ratio}");
    }

    #[test]
    fn perturbation_is_linear_in_base_flow() {
        let (p, st) = setup(2.0);
        let ops = p.operators();
        let u0 = ops.space().expand_velocity(&st.x);
        let u2: Vec<[f64; 3]> = u0.iter().map(|v| v.map(|c| 2.0 * c)).collect();
        let a = CsrMatrix::linear_combination(&[(1.0, &ops.convection_matrix(&u0)), (1.0, &ops.reaction_matrix(&u0))]);
        let b = CsrMatrix::linear_combination(&[(1.0, &ops.convection_matrix(&u2)), (1.0, &ops.reaction_matrix(&u2))]);
        let diff = CsrMatrix::linear_combination(&[(2.0, &a), (-1.0, &b)]);
        assert!(diff.max_abs() < 1e-13 * a.max_abs());
        let zero = vec![[0.0; 3]; u0.len()];
        assert_eq!(ops.convection_matrix(&zero).max_abs(), 0.0);
    }
}
