//! Subcommand implementations.

use std::fmt::Write as _;
use std::sync::Arc;

use oscilla::discretization::FsiOperators;
use oscilla::hopf::{
    analyze_candidate, classify_criticality, epsilon_grid, necessary_guard, Branch, CriticalityReport, HarmonicBalance,
    HopfCandidate,
};
use oscilla::linalg::{CsrMatrix, C64};
use oscilla::mesh::build_truncated_domain;
use oscilla::model::Stiffness;
use oscilla::modes::{KMatrix, ModeProblem, ResonanceMatrix};
use oscilla::space::DiscreteSpace;
use oscilla::spectral::{eigs_near_axis, Crossing, EigenSettings, Eigenpair};
use oscilla::steady::SteadyState;
use oscilla::study::FsiStudy;
use oscilla::surrogates::{normal_form, QuadraticHopf};
use oscilla::system::{AbstractSystem, DenseSystem};
use oscilla::timestep::{observables, simulate};
use serde_json::json;

use crate::artifacts::{ArtifactDir, Cell, RunReport, Stopwatch, Table};
use crate::config::RunConfig;
use crate::error::CliError;

/// State shared by the stages of one invocation.
pub struct Session {
    /// Effective configuration.
    pub config: RunConfig,
    /// Output directory.
    pub out: ArtifactDir,
    /// Summary under construction.
    pub report: RunReport,
    /// Stage timings.
    pub clock: Stopwatch,
}

impl Session {
    /// Creates the output directory and writes the effective configuration.
    pub fn start(command: &str, config: RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let mut out = ArtifactDir::create(&config.output)?;
        out.write("config.effective.toml", config.to_toml().as_bytes())?;
        let parameters = serde_json::to_value(&config).map_err(|e| CliError::Solver(format!("json encoding: {e}")))?;
        Ok(Self {
            report: RunReport::new(command, parameters),
            config,
            out,
            clock: Stopwatch::default(),
        })
    }

    /// Writes `run_report.json` listing every other file.
    pub fn finish(mut self) -> Result<(), CliError> {
        self.report.manifest = self.out.manifest().to_vec();
        self.report.wall_times = self.clock.stages().to_vec();
        let report = self.report.clone();
        self.out.write_json("run_report.json", &report)
    }

    fn study(&mut self) -> Result<FsiStudy, CliError> {
        let params = self.config.model.params()?;
        let mesh_settings = self.config.mesh.clone();
        let ops = self.clock.time("assemble", || -> Result<_, CliError> {
            let mesh = build_truncated_domain(&params.geometry, &mesh_settings)?;
            Ok(Arc::new(FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh)?))?))
        })?;
        Ok(FsiStudy::new(ops, params, self.config.steady.settings()))
    }

    fn mode_problem(&mut self) -> Result<ModeProblem, CliError> {
        let study = self.study()?;
        Ok(ModeProblem::new(study.operators().clone(), self.config.modes.zeta, self.config.modes.lambda)?)
    }
}

fn pair_cells(z: C64) -> serde_json::Value {
    json!([z.re, z.im])
}

fn matrix_json(entries: &[Vec<C64>]) -> serde_json::Value {
    entries.iter().map(|row| row.iter().map(|z| pair_cells(*z)).collect::<Vec<_>>()).collect()
}

fn lambda_tag(lambda: f64) -> String {
    format!("{lambda}")
}

fn axis_names(dim: usize) -> &'static [&'static str] {
    &["x", "y", "z"][..dim]
}

fn steady_table(states: &[SteadyState], dim: usize) -> Table {
    let mut cols = vec!["lambda".to_string(), "drag".into(), "lift".into()];
    cols.extend(axis_names(dim).iter().map(|a| format!("chi0_{a}")));
    cols.extend(["residual".into(), "iters".into()]);
    let mut t = Table::new(&cols);
    for s in states {
        let mut row: Vec<Cell> = vec![s.lambda.into(), s.traction[0].into(), s.traction[1].into()];
        row.extend((0..dim).map(|i| Cell::from(s.chi0.get(i).copied().unwrap_or(0.0))));
        row.extend([s.residual_norm.into(), s.newton_iterations.into()]);
        t.push(&row);
    }
    t
}

/// Velocity at every node and pressure at every vertex of an equilibrium.
fn field_text(space: &DiscreteSpace, state: &SteadyState) -> String {
    let d = space.dim();
    let l = space.layout();
    let u = space.expand_velocity(&state.x);
    let mut s = format!("oscilla-field v1 d={d} lambda={}\nvelocity {}\n", fmt(state.lambda), u.len());
    for (node, v) in space.nodes().iter().zip(&u) {
        let coords: Vec<String> = node[..d].iter().map(|c| fmt(*c)).collect();
        let vel: Vec<String> = v[..d].iter().map(|c| fmt(*c)).collect();
        let _ = writeln!(s, "{} {}", coords.join(" "), vel.join(" "));
    }
    let _ = writeln!(s, "pressure {}", l.n_pressure);
    for v in 0..l.n_pressure {
        let _ = writeln!(s, "{}", fmt(state.x[space.pressure_slot(v)]));
    }
    s
}

fn fmt(v: f64) -> String {
    crate::artifacts::fmt_float(v)
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `oscilla steady`: equilibria over a list of `λ`.
pub fn steady(session: &mut Session) -> Result<(), CliError> {
    let lambdas = match session.config.steady.lambdas.as_slice() {
        [] => vec![session.config.model.lambda],
        l => sorted_unique(l.to_vec()),
    };
    let study = session.study()?;
    let states = session
        .clock
        .time("steady", || study.steady_problem().continue_in_lambda(&lambdas))?;
    write_steady(session, &study, &states)
}

fn write_steady(session: &mut Session, study: &FsiStudy, states: &[SteadyState]) -> Result<(), CliError> {
    let space = study.operators().space().clone();
    session
        .out
        .write_table("steady.csv", &steady_table(states, space.dim()))?;
    if session.config.steady.write_fields {
        session.out.write("fields/mesh.dat", space.mesh().to_text().as_bytes())?;
        for s in states {
            let name = format!("fields/steady_{}.dat", lambda_tag(s.lambda));
            session.out.write(&name, field_text(&space, s).as_bytes())?;
        }
    }
    Ok(())
}

fn spectrum_table(spectrum: &[Eigenpair]) -> Table {
    let mut t = Table::new(&["re", "im", "residual"]);
    for p in spectrum {
        t.push(&[p.value.re.into(), p.value.im.into(), p.residual.into()]);
    }
    t
}

fn coordinate_text(name: &str, lambda: f64, m: &CsrMatrix) -> String {
    let mut s = format!("% {name} lambda={lambda} n={}\n", m.nrows());
    for (i, j, v) in m.triplets() {
        let _ = writeln!(s, "{i} {j} {}", fmt(v));
    }
    s
}

/// `oscilla eigs`: eigenvalues near the imaginary axis at one `λ`.
pub fn eigs(session: &mut Session, lambda: f64, dump_operators: bool) -> Result<(), CliError> {
    let study = session.study()?;
    let eigen = session.config.spectral.eigen(session.config.seed);
    let sys = session.clock.time("linearize", || study.system_at(lambda, false))?;
    let spectrum = session.clock.time("eigs", || eigs_near_axis(sys.as_ref(), 0.0, &eigen))?;
    session
        .out
        .write_table(&format!("spectrum_{}.csv", lambda_tag(lambda)), &spectrum_table(&spectrum))?;
    if dump_operators {
        let lin = sys.linearization();
        for op in [&lin.l0, &lin.khat, &lin.l2] {
            session
                .out
                .write(&format!("operators/{:?}.coo", op.kind), op.to_coordinate_text().as_bytes())?;
        }
        session
            .out
            .write("operators/Gram.coo", coordinate_text("Gram", lambda, &lin.gram).as_bytes())?;
    }
    Ok(())
}

fn candidate_json(c: &HopfCandidate, sys: &dyn AbstractSystem, evaluations: Option<usize>) -> serde_json::Value {
    json!({
        "lambda_o": c.lambda_o,
        "eigenvalue": pair_cells(c.eigenvalue),
        "zeta0": c.zeta0(),
        "derivative": pair_cells(c.derivative),
        "transversality": c.derivative.re,
        "growth_slope": c.growth_slope(),
        "simplicity": c.simplicity,
        "nonresonance": c.nonresonance,
        "spectrum": c.spectrum.iter().map(|z| pair_cells(*z)).collect::<Vec<_>>(),
        "basis": {
            "zeta0": c.basis.zeta0,
            "dimension": c.basis.v0.len(),
            "biorthogonality_products": c.basis.biorthogonality(sys),
        },
        "crossing_evaluations": evaluations,
    })
}

fn record_candidate(session: &mut Session, c: &HopfCandidate, sys: &dyn AbstractSystem, evaluations: Option<usize>) -> Result<(), CliError> {
    let doc = candidate_json(c, sys, evaluations);
    session.out.write_json("hopf_candidate.json", &doc)?;
    session.report.hopf_candidate = Some(doc);
    session.report.margins = Some(c.nonresonance.margins.clone());
    Ok(())
}

struct Located {
    crossing: Crossing,
    system: Arc<oscilla::system::FsiSystem>,
    candidate: HopfCandidate,
}

fn locate(session: &mut Session, study: &FsiStudy) -> Result<Located, CliError> {
    let cs = session.config.spectral.crossing(session.config.seed);
    let range = session.config.spectral.lambda_range;
    let crossing = session.clock.time("crossing", || study.find_crossing(range, &cs))?;
    let kmax = session.config.spectral.resonance_kmax;
    let (system, candidate) = session.clock.time("candidate", || study.candidate(&crossing, &cs, kmax))?;
    record_candidate(session, &candidate, system.as_ref(), Some(crossing.evaluations))?;
    Ok(Located {
        crossing,
        system,
        candidate,
    })
}

/// `oscilla hopf`: crossing search and candidate checks.
pub fn hopf(session: &mut Session) -> Result<(), CliError> {
    let study = session.study()?;
    locate(session, &study).map(|_| ())
}

fn branch_table(branch: &Branch) -> Table {
    let mut t = Table::new(&["epsilon", "mu", "zeta", "amplitude_L2", "residual", "iters"]);
    for p in &branch.points {
        t.push(&[
            p.epsilon.into(),
            p.mu.into(),
            p.zeta.into(),
            p.amplitude_l2.into(),
            p.residual.into(),
            p.newton_iterations.into(),
        ]);
    }
    t
}

fn run_branch(
    session: &mut Session,
    sys: &dyn AbstractSystem,
    candidate: &HopfCandidate,
    extra: serde_json::Value,
) -> Result<(Branch, CriticalityReport), CliError> {
    let b = session.config.branch.clone();
    let hb = HarmonicBalance::new(sys, candidate.basis.clone(), b.settings())?;
    let eps_max = if b.auto_epsilon {
        session.clock.time("epsilon-selection", || hb.select_epsilon_max(b.epsilon_max))?
    } else {
        b.epsilon_max
    };
    let branch = session
        .clock
        .time("branch", || hb.continue_branch(&epsilon_grid(eps_max, b.points)));
    for w in &branch.warnings {
        eprintln!("warning: {w}");
    }
    session.out.write_table("branch.csv", &branch_table(&branch))?;
    let fit = classify_criticality(&branch.points)?;
    let doc = json!({
        "lambda_o": candidate.lambda_o,
        "zeta0": candidate.zeta0(),
        "transversality": candidate.derivative.re,
        "epsilon_max": eps_max,
        "kmax": b.kmax,
        "points": branch.points.len(),
        "fit": fit,
        "warnings": branch.warnings,
        "reference": extra,
    });
    session.out.write_json("branch_report.json", &doc)?;
    session.report.branch_fit = Some(serde_json::to_value(&fit).expect("fit serializes"));
    Ok((branch, fit))
}

/// `oscilla branch`: periodic branch from the located crossing.
pub fn branch(session: &mut Session) -> Result<(), CliError> {
    let study = session.study()?;
    let located = locate(session, &study)?;
    run_branch(session, located.system.as_ref(), &located.candidate, serde_json::Value::Null).map(|_| ())
}

/// `oscilla hopf-pipeline`: equilibria, spectrum, crossing and branch.
pub fn hopf_pipeline(session: &mut Session) -> Result<(), CliError> {
    let study = session.study()?;
    let located = locate(session, &study)?;
    let lambda_o = located.crossing.lambda;
    let [a, b] = session.config.spectral.lambda_range;
    let states = sorted_unique(vec![a, lambda_o, b])
        .into_iter()
        .map(|l| study.steady_at(l))
        .collect::<oscilla::error::Result<Vec<_>>>()?;
    write_steady(session, &study, &states)?;
    session.out.write_table(
        &format!("spectrum_{}.csv", lambda_tag(lambda_o)),
        &spectrum_table(&located.crossing.spectrum),
    )?;
    run_branch(session, located.system.as_ref(), &located.candidate, serde_json::Value::Null).map(|_| ())
}

/// `oscilla modes`: mode problems, traction and resonance matrices.
pub fn modes(session: &mut Session) -> Result<(), CliError> {
    let problem = session.mode_problem()?;
    let m = session.config.model.clone();
    let stiffness = Stiffness::new(m.dimension, m.stiffness.clone())?;
    let mut table = Table::new(&["k", "m", "norm_L2", "norm_grad", "norm_hess", "residual"]);
    for k in 1..=session.config.modes.kmax as i64 {
        let sols = session.clock.time(&format!("modes k={k}"), || problem.solve_modes(k))?;
        for s in &sols {
            table.push(&[
                k.into(),
                (s.direction + 1).into(),
                s.norms.l2.into(),
                s.norms.gradient.into(),
                s.norms.hessian.into(),
                s.residual.into(),
            ]);
        }
        let kmat = KMatrix::from_modes(&sols, problem.zeta0(), problem.lambda_o())?;
        if !kmat.invertible {
            eprintln!("warning: K({k}) is numerically singular (smallest singular value {:e})", kmat.min_singular_value);
        }
        session.out.write_json(
            &format!("Kmat_{k}.json"),
            &json!({
                "k": k,
                "zeta0": kmat.zeta0,
                "lambda_o": kmat.lambda_o,
                "entries": matrix_json(&kmat.entries),
                "min_singular_value": kmat.min_singular_value,
                "invertible": kmat.invertible,
            }),
        )?;
        let mmat = ResonanceMatrix::new(k, problem.zeta0(), &stiffness, m.varpi, &kmat)?;
        session.out.write_json(
            &format!("Mmat_{k}.json"),
            &json!({
                "k": k,
                "zeta0": problem.zeta0(),
                "varpi": m.varpi,
                "entries": matrix_json(&mmat.entries),
                "min_singular_value": mmat.min_singular_value,
                "condition_number": mmat.condition_number,
            }),
        )?;
    }
    session.out.write_table("modes.csv", &table)
}

/// `oscilla scan`: forced-response amplitudes against the mass ratio.
pub fn scan(session: &mut Session) -> Result<(), CliError> {
    let problem = session.mode_problem()?;
    let c = session.config.clone();
    let stiffness = Stiffness::new(c.model.dimension, c.model.stiffness.clone())?;
    let forcing: Vec<C64> = c.modes.forcing.iter().map(|f| C64::new(*f, 0.0)).collect();
    let grid = sorted_unique(c.modes.varpi_grid.clone());
    let result = session
        .clock
        .time("scan", || problem.resonance_scan(&grid, &stiffness, &forcing, c.modes.kmax))?;
    let mut table = Table::new(&["varpi", "k", "amplitude"]);
    for r in &result.rows {
        table.push(&[r.varpi.into(), r.k.into(), r.amplitude.into()]);
    }
    session.out.write_table("resonance.csv", &table)?;
    let mut doc = serde_json::to_value(&result).expect("scan serializes");
    if let Some(map) = doc.as_object_mut() {
        map.remove("rows");
    }
    session.out.write_json("resonance_report.json", &doc)
}

/// `oscilla simulate`: time integration from the least stable mode.
pub fn simulate_run(session: &mut Session) -> Result<(), CliError> {
    let study = session.study()?;
    let s = session.config.simulate.clone();
    let eigen = session.config.spectral.eigen(session.config.seed);
    let sys = session.clock.time("linearize", || study.system_at(s.lambda, false))?;
    let spectrum = session.clock.time("eigs", || eigs_near_axis(sys.as_ref(), 0.0, &eigen))?;
    let mode = spectrum
        .iter()
        .filter(|p| p.value.im > 1e-6)
        .min_by(|a, b| a.value.re.total_cmp(&b.value.re))
        .ok_or_else(|| CliError::Solver("no oscillatory mode in the spectral window to seed the simulation".into()))?;
    let mut init: Vec<f64> = mode.vector.iter().map(|z| z.re).collect();
    let mut g = vec![0.0; init.len()];
    sys.gram_apply(&init, &mut g);
    let norm = init.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>().sqrt();
    init.iter_mut().for_each(|v| *v *= s.amplitude / norm);
    let probe = study.probe(s.lambda)?;
    let traj = session
        .clock
        .time("integrate", || simulate(sys.as_ref(), 0.0, &probe, &init, &s.settings()))?;
    let dim = session.config.model.dimension;
    let axes = axis_names(dim);
    let mut cols = vec!["t".to_string()];
    for group in ["eta", "sigma", "force"] {
        cols.extend(axes.iter().map(|a| format!("{group}_{a}")));
    }
    cols.push("energy".into());
    let mut table = Table::new(&cols);
    let pad = |v: &[f64]| (0..dim).map(|i| Cell::from(v.get(i).copied().unwrap_or(0.0))).collect::<Vec<_>>();
    for ((t, sample), e) in traj.times.iter().zip(&traj.samples).zip(&traj.energy) {
        let mut row = vec![Cell::from(*t)];
        row.extend(pad(&sample.eta));
        row.extend(pad(&sample.sigma));
        row.extend(pad(&sample.force));
        row.push((*e).into());
        table.push(&row);
    }
    session.out.write_table("trajectory.csv", &table)?;
    let lift: Vec<f64> = traj.samples.iter().map(|x| x.force.get(1).copied().unwrap_or(0.0)).collect();
    let eta: Vec<f64> = traj.samples.iter().map(|x| x.eta.get(1).copied().unwrap_or(0.0)).collect();
    let doc = json!({
        "lambda": s.lambda,
        "initial_mode": pair_cells(mode.value),
        "lift": observables(&traj.times, &lift).ok(),
        "transverse_displacement": observables(&traj.times, &eta).ok(),
        "max_constraint_residual": traj.max_constraint_residual,
        "steps": traj.times.len().saturating_sub(1) * s.sample_stride.max(1),
    });
    session.out.write_json("simulate_report.json", &doc)
}

/// Surrogate systems selectable by name.
pub const SURROGATE_CASES: [&str; 3] = ["normal-form-supercritical", "normal-form-subcritical", "quadratic"];

/// `oscilla surrogate`: the periodic-branch pipeline on a dense test system.
pub fn surrogate(session: &mut Session, case: &str) -> Result<(), CliError> {
    let quadratic = QuadraticHopf {
        omega: 1.3,
        growth: 0.8,
        kappa: 2.0,
        radial: -1.0,
        twist: 0.4,
    };
    let (sys, sigma): (DenseSystem, Option<f64>) = match case {
        "normal-form-supercritical" => (normal_form(1.0).system()?, Some(1.0)),
        "normal-form-subcritical" => (normal_form(-1.0).system()?, Some(-1.0)),
        "quadratic" => (quadratic.system()?, None),
        other => {
            return Err(CliError::Validation(format!(
                "unknown surrogate case `{other}` (expected one of {})",
                SURROGATE_CASES.join(", ")
            )))
        }
    };
    let eigen = EigenSettings {
        seed: session.config.seed,
        ..EigenSettings::default()
    };
    let spectrum = eigs_near_axis(&sys, 0.0, &eigen)?;
    let pair = necessary_guard(&spectrum, 1e-9)?;
    let candidate = analyze_candidate(&sys, 0.0, pair, &spectrum, &eigen, session.config.spectral.resonance_kmax)?;
    record_candidate(session, &candidate, &sys, None)?;
    let (branch, _) = run_branch(session, &sys, &candidate, json!({ "case": case }))?;
    if let Some(sigma) = sigma {
        let deviation = branch
            .points
            .iter()
            .map(|p| (p.mu - sigma * p.epsilon * p.epsilon).abs().max((p.zeta - 1.0).abs()))
            .fold(0.0f64, f64::max);
        session.out.write_json(
            "surrogate_reference.json",
            &json!({ "case": case, "law": "mu = sigma * epsilon^2, zeta = 1", "sigma": sigma, "max_deviation": deviation }),
        )?;
    } else {
        session.out.write_json(
            "surrogate_reference.json",
            &json!({ "case": case, "supercritical": quadratic.is_supercritical() }),
        )?;
    }
    Ok(())
}
