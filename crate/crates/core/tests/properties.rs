//! Property tests over randomized inputs for the algebraic invariants of the
//! model, the operators, the mode problems and the periodic-branch engine.

use std::sync::{Arc, OnceLock};

use oscilla::discretization::FsiOperators;
use oscilla::hopf::{analyze_candidate, necessary_guard, nonlinearity_origin_defect, BranchSettings, HarmonicBalance};
use oscilla::linalg::{cnorm2, norm2, C64};
use oscilla::mesh::{build_truncated_domain, MeshSettings};
use oscilla::model::{nondimensionalize, stiffness_bounds, BodyGeometry, ModelParams, PhysicalParams, Stiffness};
use oscilla::modes::{FourierSeries, ModeProblem, ResonanceMatrix};
use oscilla::operators::FsiLinearization;
use oscilla::space::{DiscreteSpace, NodeKind};
use oscilla::spectral::{adjoint_eigenvector, dense_eigenvalues_near, eigs_near_axis, transversality, EigenSettings};
use oscilla::steady::{SteadyProblem, SteadySettings};
use oscilla::surrogates::{planted_spectrum, CubicHopf, QuadraticHopf};
use oscilla::system::DenseSystem;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn small_operators() -> Arc<FsiOperators> {
    static OPS: OnceLock<Arc<FsiOperators>> = OnceLock::new();
    OPS.get_or_init(|| {
        let settings = MeshSettings {
            truncation_radius: 5.0,
            resolution: 8,
            ..Default::default()
        };
        let mesh = build_truncated_domain(&BodyGeometry::unit_circle(), &settings).unwrap();
        Arc::new(FsiOperators::assemble(Arc::new(DiscreteSpace::new(mesh).unwrap())).unwrap())
    })
    .clone()
}

fn mode_problem() -> &'static ModeProblem {
    static PROBLEM: OnceLock<ModeProblem> = OnceLock::new();
    PROBLEM.get_or_init(|| ModeProblem::new(small_operators(), 1.7, 3.0).unwrap())
}

fn linearization() -> &'static FsiLinearization {
    static LIN: OnceLock<FsiLinearization> = OnceLock::new();
    LIN.get_or_init(|| {
        let ops = small_operators();
        let params = ModelParams::new(4.0, 0.5, Stiffness::diagonal(&[2.0, 3.0]).unwrap()).unwrap();
        let steady = SteadyProblem::new(ops.clone(), params.clone(), SteadySettings::default());
        let state = steady.solve(4.0, None).unwrap();
        FsiLinearization::new(ops, &params, &state, None).unwrap()
    })
}

/// Velocity slots of free nodes off the outflow boundary.
fn interior_slots(ops: &FsiOperators) -> Vec<bool> {
    let sp = ops.space();
    let mut on_outflow = vec![false; sp.num_nodes()];
    for f in sp.facets() {
        for &n in &f.nodes {
            on_outflow[n] = true;
        }
    }
    let mut interior = vec![false; sp.total()];
    for n in 0..sp.num_nodes() {
        if sp.kind(n) == NodeKind::Free && !on_outflow[n] {
            for comp in 0..sp.dim() {
                if let Some(slot) = sp.free_slot(n, comp) {
                    interior[slot] = true;
                }
            }
        }
    }
    interior
}

fn random_real(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

/// `LLᵀ + shift·I` from a lower-triangular `L` given row-major.
fn spd_from(dim: usize, lower: &[f64], shift: f64) -> Vec<f64> {
    let l = |i: usize, j: usize| if j <= i { lower[i * dim + j] } else { 0.0 };
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            a[i * dim + j] = (0..dim).map(|k| l(i, k) * l(j, k)).sum::<f64>() + if i == j { shift } else { 0.0 };
        }
    }
    a
}

fn dense_basis(sys: &DenseSystem) -> oscilla::hopf::OscBasis {
    let eigen = EigenSettings::default();
    let spec = eigs_near_axis(sys, 0.0, &eigen).unwrap();
    let pair = necessary_guard(&spec, 1e-9).unwrap();
    analyze_candidate(sys, 0.0, pair, &spec, &eigen, 3).unwrap().basis
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stiffness_rayleigh_quotient_lies_within_bounds(
        dim in 2usize..=3,
        lower in prop::collection::vec(-2.0f64..2.0, 9),
        shift in 0.01f64..1.0,
        alpha in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let a = Stiffness::new(dim, spd_from(dim, &lower, shift)).unwrap();
        let bounds = stiffness_bounds(&a).unwrap();
        let alpha = &alpha[..dim];
        let norm_sq: f64 = alpha.iter().map(|x| x * x).sum();
        prop_assume!(norm_sq > 1e-6);
        let q: f64 = alpha.iter().zip(a.apply(alpha)).map(|(x, y)| x * y).sum();
        let tol = 1e-12 * bounds.b * norm_sq;
        prop_assert!(bounds.a * norm_sq <= q + tol, "{} {}", bounds.a * norm_sq, q);
        prop_assert!(q <= bounds.b * norm_sq + tol, "{} {}", q, bounds.b * norm_sq);
    }

    #[test]
    fn nondimensionalization_is_homogeneous_in_stiffness(
        lower in prop::collection::vec(-2.0f64..2.0, 9),
        mass in 0.1f64..10.0,
        density in 0.1f64..10.0,
        viscosity in 0.01f64..1.0,
        length in 0.1f64..3.0,
        speed in 0.1f64..5.0,
        factor in 0.1f64..10.0,
        dim in 2usize..=3,
    ) {
        let b = spd_from(3, &lower, 0.1);
        let physical = |scale: f64| PhysicalParams {
            body_mass: mass,
            fluid_density: density,
            kinematic_viscosity: viscosity,
            length_scale: length,
            freestream_speed: speed,
            stiffness: [
                [scale * b[0], scale * b[1], scale * b[2]],
                [scale * b[3], scale * b[4], scale * b[5]],
                [scale * b[6], scale * b[7], scale * b[8]],
            ],
        };
        let base = nondimensionalize(&physical(1.0), dim).unwrap();
        let scaled = nondimensionalize(&physical(factor), dim).unwrap();
        prop_assert_eq!(base.lambda, scaled.lambda);
        prop_assert_eq!(base.varpi, scaled.varpi);
        for (x, y) in base.stiffness.entries().iter().zip(scaled.stiffness.entries()) {
            prop_assert!((factor * x - y).abs() <= 1e-12 * y.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn planted_eigenvalues_move_with_their_slopes(
        zetas in prop::collection::vec(0.2f64..3.0, 1..4),
        reals in prop::collection::vec(-1.0f64..1.0, 4),
        slopes in prop::collection::vec(-1.0f64..1.0, 8),
        mu in -0.5f64..0.5,
    ) {
        let values: Vec<C64> = zetas.iter().zip(&reals).map(|(z, r)| c(*r, *z)).collect();
        let rates: Vec<C64> = (0..values.len()).map(|i| c(slopes[2 * i], slopes[2 * i + 1])).collect();
        let sys = planted_spectrum(&values, &rates).unwrap();
        let dense = dense_eigenvalues_near(&sys, mu, c(2.0, 0.5), 2 * values.len()).unwrap();
        for (v, s) in values.iter().zip(&rates) {
            let moved = v + s * mu;
            for target in [moved, moved.conj()] {
                let d = dense.iter().map(|e| (e - target).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(d < 1e-9, "{target} not in {dense:?}");
            }
        }
    }

    #[test]
    fn transversality_ignores_eigenvector_scaling_and_phase(
        zeta in 0.3f64..2.5,
        slope_re in -2.0f64..2.0,
        slope_im in -1.0f64..1.0,
        scale in 0.1f64..10.0,
        phase in 0.0f64..std::f64::consts::TAU,
        adjoint_scale in 0.1f64..10.0,
        adjoint_phase in 0.0f64..std::f64::consts::TAU,
    ) {
        prop_assume!(slope_re.abs() > 0.05);
        let sys = planted_spectrum(&[c(0.0, zeta), c(0.8, 0.1)], &[c(slope_re, slope_im), c(0.2, 0.0)]).unwrap();
        let spec = eigs_near_axis(&sys, 0.0, &EigenSettings::default()).unwrap();
        let pair = spec.iter().find(|p| p.value.re.abs() < 1e-9).unwrap();
        let adjoint = adjoint_eigenvector(&sys, 0.0, pair, std::f64::consts::FRAC_1_PI).unwrap();
        let reference = transversality(&sys, 0.0, pair, &adjoint).unwrap();
        let mut moved = pair.clone();
        let rot = C64::from_polar(scale, phase);
        moved.vector.iter_mut().for_each(|x| *x *= rot);
        let adj_rot = C64::from_polar(adjoint_scale, adjoint_phase);
        let moved_adjoint: Vec<C64> = adjoint.iter().map(|x| x * adj_rot).collect();
        let t = transversality(&sys, 0.0, &moved, &moved_adjoint).unwrap();
        prop_assert!((t - reference).abs() <= 1e-12 * reference.abs(), "{t} vs {reference}");
        prop_assert!((reference - slope_re).abs() < 1e-9);
    }

    #[test]
    fn side_conditions_hold_on_random_quadratic_systems(
        omega in 0.5f64..2.0,
        growth in 0.2f64..1.5,
        kappa in 0.5f64..3.0,
        radial in prop::sample::select(vec![-1.0, 1.0]),
        twist in -0.5f64..0.5,
        eps in -0.3f64..0.3,
    ) {
        let sys = QuadraticHopf { omega, growth, kappa, radial, twist }.system().unwrap();
        let settings = BranchSettings { kmax: 4, tol: 1e-12, ..Default::default() };
        let hb = HarmonicBalance::new(&sys, dense_basis(&sys), settings).unwrap();
        let (_, point) = hb.solve_point(eps, &hb.linear_prediction()).unwrap();
        prop_assert!((point.side.0 - eps).abs() < 1e-10, "{:?}", point.side);
        prop_assert!(point.side.1.abs() < 1e-10, "{:?}", point.side);
        let (_, mirror) = hb.solve_point(-eps, &hb.linear_prediction()).unwrap();
        prop_assert!((point.mu - mirror.mu).abs() < 1e-9 && (point.zeta - mirror.zeta).abs() < 1e-9);
    }

    #[test]
    fn surrogate_nonlinearities_vanish_to_first_order_at_the_origin(
        mus in prop::collection::vec(-1.0f64..1.0, 3),
        seed in any::<u64>(),
        lyapunov in -2.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quad = QuadraticHopf { omega: 1.1, growth: 0.7, kappa: 1.5, radial: -1.0, twist: 0.2 }.system().unwrap();
        let cubic = CubicHopf { omega: 1.0, growth: 1.0, lyapunov, twist: 0.3 }.system().unwrap();
        for sys in [&quad, &cubic] {
            let probes: Vec<Vec<f64>> = (0..3).map(|_| random_real(&mut rng, oscilla::system::AbstractSystem::dim(sys))).collect();
            prop_assert_eq!(nonlinearity_origin_defect(sys, &mus, &probes), 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transport_form_is_skew_for_any_advecting_field(seed in any::<u64>()) {
        let ops = small_operators();
        let interior = interior_slots(&ops);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field: Vec<[f64; 3]> = (0..ops.space().num_nodes())
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0])
            .collect();
        let conv = ops.convection_matrix(&field).filtered(|i, j| interior[i] && interior[j]);
        let w: Vec<C64> = random_complex(&mut rng, conv.nrows())
            .into_iter()
            .zip(&interior)
            .map(|(v, keep)| if *keep { v } else { c(0.0, 0.0) })
            .collect();
        let mut cw = vec![c(0.0, 0.0); w.len()];
        conv.cmatvec_add(c(1.0, 0.0), &w, &mut cw);
        let form: C64 = w.iter().zip(&cw).map(|(a, b)| a.conj() * b).sum();
        prop_assert!(form.re.abs() <= 1e-12 * cnorm2(&w) * cnorm2(&cw), "{form}");
    }

    #[test]
    fn coupled_gram_is_symmetric_positive_and_operators_match_their_adjoints(seed in any::<u64>()) {
        let lin = linearization();
        let l = *lin.operators().space().layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random_real(&mut rng, l.total);
        let mut y = random_real(&mut rng, l.total);
        x[l.pressure..].iter_mut().for_each(|v| *v = 0.0);
        y[l.pressure..].iter_mut().for_each(|v| *v = 0.0);
        let (xx, yy, xy, yx) = (lin.inner(&x, &x), lin.inner(&y, &y), lin.inner(&x, &y), lin.inner(&y, &x));
        prop_assert!(xx > 0.0 && yy > 0.0);
        prop_assert!((xy - yx).abs() <= 1e-12 * (xx * yy).sqrt());
        let x = random_real(&mut rng, l.total);
        let y = random_real(&mut rng, l.total);
        for op in [&lin.l0, &lin.khat, &lin.l2] {
            let jx = op.apply(&x);
            let jty = op.adjoint().apply(&y);
            let lhs: f64 = y.iter().zip(&jx).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&jty).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * norm2(&x) * norm2(&jty));
        }
    }

    #[test]
    fn mode_data_are_conjugate_symmetric_in_k(k in 1i64..=4, m in 0usize..2) {
        let p = mode_problem();
        let plus = p.solve_mode(k, m).unwrap();
        let minus = p.solve_mode(-k, m).unwrap();
        let scale = cnorm2(&plus.state);
        let defect = plus.state.iter().zip(&minus.state).map(|(a, b)| (a.conj() - b).norm()).fold(0.0, f64::max);
        prop_assert!(defect <= 1e-12 * scale, "{defect:e}");
        let (kp, km) = (p.k_matrix(k).unwrap(), p.k_matrix(-k).unwrap());
        for (rp, rm) in kp.entries.iter().zip(&km.entries) {
            for (a, b) in rp.iter().zip(rm) {
                prop_assert!((a.conj() - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn resonance_matrix_is_invertible_with_fluid_coupling(
        k in 1i64..=4,
        log_varpi in -3.0f64..1.0,
        lower in prop::collection::vec(-2.0f64..2.0, 4),
        resonant in any::<bool>(),
    ) {
        let p = mode_problem();
        let zeta = p.zeta0();
        let a = if resonant {
            Stiffness::isotropic(2, (k as f64 * zeta).powi(2))
        } else {
            Stiffness::new(2, spd_from(2, &lower, 0.05)).unwrap()
        };
        let norm_a = stiffness_bounds(&a).unwrap().b;
        let kmat = p.k_matrix(k).unwrap();
        let m = ResonanceMatrix::new(k, zeta, &a, 10f64.powf(log_varpi), &kmat).unwrap();
        prop_assert!(m.min_singular_value > 1e-10 * norm_a, "{:e}", m.min_singular_value);
    }

    #[test]
    fn forced_response_reproduces_its_forcing(
        k in 1usize..=3,
        coefficients in prop::collection::vec(-1.0f64..1.0, 4),
        varpi in 0.05f64..3.0,
        stiffness in 0.5f64..5.0,
    ) {
        let p = mode_problem();
        let a = Stiffness::isotropic(2, stiffness);
        let f = vec![c(coefficients[0], coefficients[1]), c(coefficients[2], coefficients[3])];
        prop_assume!(cnorm2(&f) > 1e-3);
        let forcing = FourierSeries::single(3, k, f.clone());
        let response = p.forced_response(&forcing, &a, varpi).unwrap();
        let (rigid, fluid) = p.forward(k as i64, &response.coefficient(k as i64), &a, varpi);
        let err: Vec<C64> = rigid.iter().zip(&f).map(|(x, y)| x - y).collect();
        prop_assert!(cnorm2(&err) <= 1e-9 * cnorm2(&f), "{:e}", cnorm2(&err));
        prop_assert!(fluid <= 1e-9 * cnorm2(&response.coefficient(k as i64)).max(1.0), "{fluid:e}");
    }
}
