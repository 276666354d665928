//! Nonlinear time integration of `B ẋ + J(μ) x = N(x; μ)` and signal
//! diagnostics for the resulting trajectories.
//!
//! The linear part is integrated by the trapezoidal rule and the
//! nonlinearity by second-order Adams–Bashforth extrapolation. Constraint
//! rows (incompressibility) and their multipliers (pressure) are taken fully
//! implicitly at the new level, so every step is exactly divergence-free up
//! to the linear solve.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, C64};
use crate::system::AbstractSystem;

/// Body and load readings extracted from a state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sample {
    /// Body displacement.
    pub eta: Vec<f64>,
    /// Body velocity.
    pub sigma: Vec<f64>,
    /// Fluid force on the body.
    pub force: Vec<f64>,
}

/// Extracts [`Sample`]s from states of a particular system.
pub trait Probe {
    /// Readings for the perturbation state `x`.
    fn sample(&self, x: &[f64]) -> Sample;
}

/// A probe reading the first components of the state; for systems without
/// a body.
pub struct StateProbe;

impl Probe for StateProbe {
    fn sample(&self, x: &[f64]) -> Sample {
        Sample {
            eta: x.iter().take(2).copied().collect(),
            sigma: Vec::new(),
            force: Vec::new(),
        }
    }
}

/// Controls for [`simulate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSettings {
    /// Time step.
    pub dt: f64,
    /// Final time.
    pub t_final: f64,
    /// Record a sample every `sample_stride` steps.
    pub sample_stride: usize,
    /// Keep a full state every `snapshot_stride` steps; 0 keeps none.
    pub snapshot_stride: usize,
    /// Abort when `‖x‖` exceeds this bound.
    pub blowup: f64,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 1.0,
            sample_stride: 1,
            snapshot_stride: 0,
            blowup: 1e6,
        }
    }
}

/// Recorded time history.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    /// Sample times.
    pub times: Vec<f64>,
    /// Probe readings at the sample times.
    pub samples: Vec<Sample>,
    /// Perturbation energy `½ xᵀ G x` at the sample times.
    pub energy: Vec<f64>,
    /// Full states at the snapshot times.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Largest constraint residual over all steps.
    pub max_constraint_residual: f64,
    /// Final state.
    pub final_state: Vec<f64>,
}

fn energy(sys: &dyn AbstractSystem, x: &[f64]) -> f64 {
    let mut gx = vec![0.0; x.len()];
    sys.gram_apply(x, &mut gx);
    0.5 * x.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>()
}

/// Integrates from `init` at parameter offset `mu`.
pub fn simulate(
    sys: &dyn AbstractSystem,
    mu: f64,
    probe: &dyn Probe,
    init: &[f64],
    settings: &StepSettings,
) -> Result<Trajectory> {
    let n = sys.dim();
    if init.len() != n {
        return Err(Error::validation("initial state has the wrong length"));
    }
    if !(settings.dt > 0.0) || !(settings.t_final >= 0.0) {
        return Err(Error::validation("dt must be positive and t_final nonnegative"));
    }
    let dt = settings.dt;
    let steps = (settings.t_final / dt).round() as usize;
    let stride = settings.sample_stride.max(1);
    let constraints = sys.constraint_range();
    // ½ (J + (2/dt) B) acting on (x_{n+1}, 2 p_{n+½}).
    let lu = sys.factor(mu, C64::new(2.0 / dt, 0.0))?;

    let mut traj = Trajectory::default();
    let record = |traj: &mut Trajectory, t: f64, x: &[f64]| {
        traj.times.push(t);
        traj.samples.push(probe.sample(x));
        traj.energy.push(energy(sys, x));
    };
    let mut x = init.to_vec();
    record(&mut traj, 0.0, &x);
    if settings.snapshot_stride > 0 {
        traj.snapshots.push((0.0, x.clone()));
    }
    let mut n_prev = vec![0.0; n];
    sys.nonlinear(mu, &x, &mut n_prev);
    let mut n_cur = n_prev.clone();
    let mut bx = vec![0.0; n];
    let mut jx = vec![0.0; n];
    let mut last_valid = 0.0;
    for step in 0..steps {
        let t = (step + 1) as f64 * dt;
        let mut xv = x.clone();
        xv[constraints.clone()].iter_mut().for_each(|v| *v = 0.0);
        sys.mass_apply(&x, &mut bx);
        sys.linear_apply(mu, &xv, &mut jx);
        let mut rhs: Vec<C64> = (0..n)
            .map(|i| C64::new(2.0 * (bx[i] / dt - 0.5 * jx[i] + 1.5 * n_cur[i] - 0.5 * n_prev[i]), 0.0))
            .collect();
        rhs[constraints.clone()].iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        lu.solve_in_place(&mut rhs);
        let mut next: Vec<f64> = rhs.iter().map(|v| v.re).collect();
        next[constraints.clone()].iter_mut().for_each(|v| *v *= 0.5);
        let size = norm2(&next);
        if !size.is_finite() || size > settings.blowup {
            return Err(Error::NonConvergence {
                stage: format!("time integration blew up at t = {t}"),
                iterations: step + 1,
                residual: size,
                hint: format!("; last valid time {last_valid}"),
            });
        }
        if !constraints.is_empty() {
            sys.linear_apply(mu, &next, &mut jx);
            let r = norm2(&jx[constraints.clone()]);
            traj.max_constraint_residual = traj.max_constraint_residual.max(r);
        }
        x = next;
        last_valid = t;
        std::mem::swap(&mut n_prev, &mut n_cur);
        sys.nonlinear(mu, &x, &mut n_cur);
        if (step + 1) % stride == 0 {
            record(&mut traj, t, &x);
        }
        if settings.snapshot_stride > 0 && (step + 1) % settings.snapshot_stride == 0 {
            traj.snapshots.push((t, x.clone()));
        }
    }
    traj.final_state = x;
    Ok(traj)
}

/// Signal diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// Half the peak-to-peak excursion over the analysis window.
    pub amplitude: f64,
    /// Angular frequency of the spectral peak, absent for non-oscillatory signals.
    pub frequency: Option<f64>,
    /// Exponential rate of the amplitude envelope.
    pub growth_rate: Option<f64>,
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Angular frequency of the dominant spectral peak of uniformly sampled
/// `values`, with parabolic interpolation of the log magnitude.
fn spectral_peak(values: &[f64], dt: f64) -> Option<f64> {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    let len = (4 * m).next_power_of_two();
    let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); len];
    for (i, v) in values.iter().enumerate() {
        let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (m - 1) as f64).cos();
        buf[i].re = (v - mean) * w;
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let mag: Vec<f64> = buf[..len / 2].iter().map(|c| c.norm()).collect();
    let (k, peak) = mag.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    if *peak == 0.0 || k + 1 >= mag.len() {
        return None;
    }
    let (a, b, c) = (mag[k - 1].max(1e-300).ln(), peak.ln(), mag[k + 1].max(1e-300).ln());
    let denom = a - 2.0 * b + c;
    let offset = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Some(std::f64::consts::TAU * (k as f64 + offset) / (len as f64 * dt))
}

/// Amplitude, frequency and growth rate of a uniformly sampled signal.
///
/// Amplitude and frequency use the second half of the record (the
/// saturated part for a limit cycle); the growth rate fits the logarithm
/// of successive envelope peaks over the whole record.
pub fn observables(times: &[f64], values: &[f64]) -> Result<Observables> {
    if times.len() != values.len() || times.len() < 8 {
        return Err(Error::validation("observables need at least 8 equally long samples"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let half = &values[values.len() / 2..];
    let (lo, hi) = half.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let amplitude = 0.5 * (hi - lo);
    let mean = half.iter().sum::<f64>() / half.len() as f64;
    let crossings = half.windows(2).filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0).count();
    let frequency = if crossings >= 6 { spectral_peak(half, dt) } else { None };

    let peaks: Vec<(f64, f64)> = (1..values.len() - 1)
        .filter(|&i| {
            let (a, b, c) = (values[i - 1].abs(), values[i].abs(), values[i + 1].abs());
            b > a && b >= c && b > 0.0
        })
        .map(|i| {
            // Parabolic refinement of the envelope sample.
            let (a, b, c) = (values[i - 1].abs(), values[i].abs(), values[i + 1].abs());
            let denom = a - 2.0 * b + c;
            let s = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            (times[i] + s * dt, (b - 0.25 * (a - c) * s).ln())
        })
        .collect();
    let growth_rate = if peaks.len() >= 3 {
        least_squares_slope(&peaks)
    } else {
        let pts: Vec<(f64, f64)> = times
            .iter()
            .zip(values)
            .filter(|(_, v)| v.abs() > 0.0)
            .map(|(t, v)| (*t, v.abs().ln()))
            .collect();
        least_squares_slope(&pts)
    };
    Ok(Observables {
        amplitude,
        frequency,
        growth_rate,
    })
}
