//! The coupled flow problem as a one-parameter family: equilibria in `λ`,
//! their linearizations, and the crossing search and candidate analysis
//! built on them.

use std::sync::{Arc, Mutex};

use crate::discretization::FsiOperators;
use crate::error::{Error, Result};
use crate::hopf::{analyze_candidate, HopfCandidate};
use crate::model::ModelParams;
use crate::operators::FsiLinearization;
use crate::spectral::{find_crossing, Crossing, CrossingSettings, ParametrizedFamily};
use crate::steady::{SteadyProblem, SteadySettings, SteadyState};
use crate::system::{AbstractSystem, FsiSystem};
use crate::timestep::{Probe, Sample};

/// Equilibria and linearizations of one discretized configuration, with a
/// cache of converged states used to seed later solves.
pub struct FsiStudy {
    ops: Arc<FsiOperators>,
    params: ModelParams,
    steady: SteadyProblem,
    states: Mutex<Vec<SteadyState>>,
}

impl FsiStudy {
    /// Sets up the study; `params.lambda` is only a default.
    pub fn new(ops: Arc<FsiOperators>, params: ModelParams, settings: SteadySettings) -> Self {
        let steady = SteadyProblem::new(ops.clone(), params.clone(), settings);
        Self {
            ops,
            params,
            steady,
            states: Mutex::new(Vec::new()),
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

    /// The steady problem.
    pub fn steady_problem(&self) -> &SteadyProblem {
        &self.steady
    }

    /// Equilibrium at `lambda`, continued from the nearest cached state.
    pub fn steady_at(&self, lambda: f64) -> Result<SteadyState> {
        let nearest = {
            let cache = self.states.lock().expect("steady cache poisoned");
            if let Some(s) = cache.iter().find(|s| s.lambda == lambda) {
                return Ok(s.clone());
            }
            cache
                .iter()
                .min_by(|a, b| (a.lambda - lambda).abs().total_cmp(&(b.lambda - lambda).abs()))
                .cloned()
        };
        let state = match nearest {
            None => self
                .steady
                .continue_in_lambda(&[lambda])?
                .pop()
                .ok_or_else(|| Error::non_convergence("lambda continuation", 0, f64::NAN))?,
            Some(from) => self.march(from, lambda)?,
        };
        self.states.lock().expect("steady cache poisoned").push(state.clone());
        Ok(state)
    }

    fn march(&self, from: SteadyState, target: f64) -> Result<SteadyState> {
        let mut current = from;
        let mut step = target - current.lambda;
        while current.lambda != target {
            let next = if (target - current.lambda).abs() <= step.abs() { target } else { current.lambda + step };
            match self.steady.solve(next, Some(&current.x)) {
                Ok(s) => current = s,
                Err(e) => {
                    step *= 0.5;
                    if step.abs() < 1e-6 {
                        return Err(e);
                    }
                }
            }
        }
        Ok(current)
    }

    /// Linearization at `lambda`; with `derivative` the parameter derivative
    /// `S011` is assembled from the branch derivative.
    pub fn linearization_at(&self, lambda: f64, derivative: bool) -> Result<Arc<FsiLinearization>> {
        let state = self.steady_at(lambda)?;
        let d = if derivative { Some(self.steady.branch_derivative(&state)?) } else { None };
        Ok(Arc::new(FsiLinearization::new(self.ops.clone(), &self.params, &state, d.as_ref())?))
    }

    /// The perturbation system about the equilibrium at `lambda`.
    pub fn system_at(&self, lambda: f64, derivative: bool) -> Result<Arc<FsiSystem>> {
        Ok(Arc::new(FsiSystem::new(self.linearization_at(lambda, derivative)?)?))
    }

    /// Locates the primary crossing in `range`.
    pub fn find_crossing(&self, range: [f64; 2], settings: &CrossingSettings) -> Result<Crossing> {
        let mut family = StudyFamily(self);
        find_crossing(&mut family, range, settings)
    }

    /// Rebuilds the system at a located crossing with its parameter
    /// derivative and runs the candidate checks.
    pub fn candidate(&self, crossing: &Crossing, settings: &CrossingSettings, kmax: usize) -> Result<(Arc<FsiSystem>, HopfCandidate)> {
        let sys = self.system_at(crossing.lambda, true)?;
        let c = analyze_candidate(sys.as_ref(), crossing.lambda, &crossing.pair, &crossing.spectrum, &settings.eigen, kmax)?;
        Ok((sys, c))
    }
}

/// Reads body displacement, body velocity and the perturbation force
/// `F(x₀ + x) − F(x₀)` about the equilibrium at one `λ`.
pub struct FsiProbe<'a> {
    study: &'a FsiStudy,
    base: SteadyState,
}

impl FsiStudy {
    /// Probe about the equilibrium at `lambda`.
    pub fn probe(&self, lambda: f64) -> Result<FsiProbe<'_>> {
        Ok(FsiProbe {
            study: self,
            base: self.steady_at(lambda)?,
        })
    }
}

impl Probe for FsiProbe<'_> {
    fn sample(&self, x: &[f64]) -> Sample {
        let l = *self.study.ops.space().layout();
        let full: Vec<f64> = self.base.x.iter().zip(x).map(|(a, b)| a + b).collect();
        let force = self.study.steady.traction(&full, self.base.lambda);
        Sample {
            eta: x[l.eta..l.eta + l.dim].to_vec(),
            sigma: x[l.sigma..l.sigma + l.dim].to_vec(),
            force: (0..l.dim).map(|i| force[i] - self.base.traction[i]).collect(),
        }
    }
}

struct StudyFamily<'a>(&'a FsiStudy);

impl ParametrizedFamily for StudyFamily<'_> {
    fn system_at(&mut self, lambda: f64) -> Result<Arc<dyn AbstractSystem>> {
        Ok(self.0.system_at(lambda, false)?)
    }
}
