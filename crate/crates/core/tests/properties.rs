//! Randomized invariants across the library, driven by proptest.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softrigid::contact::{id_solve, IdWeights};
use softrigid::hybrid::{fk_all, mass_matrix, BodyKind};
use softrigid::ik::{ik_solve_frame, IkSettings, MarkerFrame};
use softrigid::io::{states_to_table, table_to_states, Table};
use softrigid::muscle::{activation_step, muscle_geometry, muscle_optimize, MuscleState, MuscleWeights};
use softrigid::qp::{kkt_residuals, qp_solve, QpProblem};
use softrigid::rigid::joint_transform;
use softrigid::se3::{ad_se3, exp_adjoint, exp_se3, log_se3, tangent_integral, tangent_integral_apply, Pose, Twist};
use softrigid::synthetic::reference_model;
use softrigid::{GeneralizedState, HybridModel};

fn model() -> &'static HybridModel {
    static MODEL: OnceLock<HybridModel> = OnceLock::new();
    MODEL.get_or_init(reference_model)
}

fn twist(max: f64) -> impl Strategy<Value = Twist> {
    prop::array::uniform6(-max..max).prop_map(|a| Twist::from_slice(&a))
}

fn random_state(model: &HybridModel, seed: u64) -> GeneralizedState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = GeneralizedState::neutral(model);
    let base = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    st.base_pose = exp_se3(&Twist::from_vector(&base), 1.0);
    st.q_r = DVector::from_fn(model.n_joints(), |_, _| rng.random_range(-0.8..0.8));
    st.q_s += DVector::from_fn(model.n_strains(), |_, _| rng.random_range(-0.5..0.5));
    st.psi = DVector::from_fn(model.dim_psi(), |_, _| rng.random_range(-1.0..1.0));
    st.psi_dot = DVector::from_fn(model.dim_psi(), |_, _| rng.random_range(-1.0..1.0));
    st
}

fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation - b.rotation).norm() + (a.position - b.position).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exp_is_a_one_parameter_subgroup(x in twist(2.0), a in -1.5..1.5f64, b in -1.5..1.5f64) {
        let lhs = exp_se3(&x, a) * exp_se3(&x, b);
        prop_assert!(pose_distance(&lhs, &exp_se3(&x, a + b)) < 1e-12);
    }

    #[test]
    fn exp_stays_on_the_group(x in twist(5.0), s in -3.0..3.0f64) {
        prop_assert!(exp_se3(&x, s).orthonormality_error() < 1e-12);
    }

    #[test]
    fn log_inverts_exp(x in twist(1.5)) {
        prop_assume!(x.angular.norm() < 2.9);
        let back = log_se3(&exp_se3(&x, 1.0)).unwrap();
        prop_assert!((back.to_vector() - x.to_vector()).norm() < 1e-9);
    }

    #[test]
    fn exp_adjoint_solves_its_ode(x in twist(2.0), s in -1.5..1.5f64) {
        let h = 1e-5;
        let fd = (exp_adjoint(&x, s + h) - exp_adjoint(&x, s - h)) / (2.0 * h);
        let exact = exp_adjoint(&x, s) * ad_se3(&x);
        prop_assert!((fd - exact).norm() < 1e-7 * (1.0 + exact.norm()));
    }

    #[test]
    fn tangent_integral_differentiates_to_exp_adjoint(x in twist(2.0), s in -1.5..1.5f64) {
        let h = 1e-5;
        let fd = (tangent_integral(&x, s + h) - tangent_integral(&x, s - h)) / (2.0 * h);
        let exact = exp_adjoint(&x, s);
        prop_assert!((fd - exact).norm() < 1e-7 * (1.0 + exact.norm()));
    }

    #[test]
    fn tangent_integral_apply_matches_matrix(x in twist(3.0), s in -1.0..1.0f64, v in prop::array::uniform6(-1.0..1.0f64)) {
        let v = Vector6::from_column_slice(&v);
        let full = tangent_integral(&x, s) * v;
        prop_assert!((tangent_integral_apply(&x, s, &v) - full).norm() < 1e-12 * (1.0 + full.norm()));
    }

    #[test]
    fn adjoint_is_a_homomorphism(x in twist(2.0), y in twist(2.0)) {
        let (a, b) = (exp_se3(&x, 1.0), exp_se3(&y, 1.0));
        let lhs: Matrix6<f64> = (a * b).adjoint();
        prop_assert!((lhs - a.adjoint() * b.adjoint()).norm() < 1e-10 * (1.0 + lhs.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rod_pose_is_continuous_across_boundaries(seed in any::<u64>()) {
        let m = model();
        let st = random_state(m, seed);
        let kin = fk_all(m, &st).unwrap();
        let rod_id = m.body_id("prosthesis").unwrap();
        let rod = kin.rod_frames(rod_id).unwrap().rod();
        let eps = 1e-9;
        for b in rod.boundaries().iter().skip(1).take(rod.n_segments() - 1) {
            let below = kin.frame_pose(rod_id, Some(b - eps)).unwrap();
            let above = kin.frame_pose(rod_id, Some(b + eps)).unwrap();
            prop_assert!(pose_distance(&below, &above) < 1e-7);
        }
    }

    #[test]
    fn rod_mass_matrix_is_symmetric_psd(seed in any::<u64>()) {
        let m = model();
        let st = random_state(m, seed);
        let kin = fk_all(m, &st).unwrap();
        let rod = kin.rod_frames(m.body_id("prosthesis").unwrap()).unwrap().rod();
        let mm = rod.mass_matrix();
        prop_assert!((&mm - mm.transpose()).amax() < 1e-14 * mm.amax());
        let min_eig = mm.symmetric_eigenvalues().min();
        prop_assert!(min_eig > -1e-12 * mm.amax(), "min eigenvalue {min_eig}");
    }

    #[test]
    fn rigid_fk_composes_joint_transforms(seed in any::<u64>()) {
        let m = model();
        let st = random_state(m, seed);
        let kin = fk_all(m, &st).unwrap();
        for (id, body) in m.bodies.iter().enumerate().skip(1) {
            let (BodyKind::Rigid(link), Some(parent)) = (&body.kind, body.parent) else { continue };
            let q = m.joint_column(id).map_or(0.0, |c| st.q_r[c - 6]);
            let parent_pose = kin.frame_pose(parent, body.parent_arclen).unwrap();
            let expected = parent_pose * joint_transform(&link.joint, q);
            prop_assert!(pose_distance(&kin.body_pose(id).unwrap(), &expected) < 1e-12);
        }
    }

    #[test]
    fn hybrid_mass_matrix_is_symmetric_positive_definite(seed in any::<u64>()) {
        let m = model();
        let mm = mass_matrix(m, &random_state(m, seed)).unwrap();
        prop_assert!((&mm - mm.transpose()).amax() < 1e-12 * mm.amax());
        prop_assert!(mm.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn total_mass_appears_in_base_block(seed in any::<u64>()) {
        let m = model();
        let mm = mass_matrix(m, &random_state(m, seed)).unwrap();
        let lin = mm.view((3, 3), (3, 3));
        prop_assert!((lin - DMatrix::identity(3, 3) * m.total_mass()).amax() < 1e-9 * m.total_mass());
    }
}

fn markers_at(m: &HybridModel, st: &GeneralizedState) -> Vec<Vector3<f64>> {
    fk_all(m, st).unwrap().marker_positions(m).unwrap()
}

fn perturbed(st: &GeneralizedState, seed: u64, scale: f64) -> GeneralizedState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = 6 + st.q_r.len() + st.q_s.len();
    let step = DVector::from_fn(n, |_, _| rng.random_range(-scale..scale));
    softrigid::ik::retract(st, &step)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn levenberg_marquardt_never_increases_the_residual(seed in any::<u64>()) {
        let m = model();
        let truth = random_state(m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = markers_at(m, &truth)
            .into_iter()
            .map(|p| p + Vector3::from_fn(|_, _| rng.random_range(-2e-3..2e-3)))
            .collect();
        let frame = MarkerFrame::all_visible(0.0, positions);
        let start = perturbed(&truth, seed, 0.05);
        let mut previous = f64::INFINITY;
        for iters in 0..8 {
            let settings = IkSettings { max_iters: iters, ..IkSettings::default() };
            let (_, report) = ik_solve_frame(m, &frame, &start, &settings).unwrap();
            prop_assert!(report.residual_rms <= previous * (1.0 + 1e-12), "iteration {iters}: {} > {previous}", report.residual_rms);
            previous = report.residual_rms;
        }
    }

    #[test]
    fn ik_is_invariant_to_a_world_transform(seed in any::<u64>(), g in twist(1.0)) {
        let m = model();
        let truth = random_state(m, seed);
        let start = perturbed(&truth, seed, 0.03);
        let frame = MarkerFrame::all_visible(0.0, markers_at(m, &truth));
        let world = exp_se3(&g, 1.0);
        let moved = MarkerFrame::all_visible(0.0, frame.positions.iter().map(|p| world.transform_point(p)).collect());
        let mut moved_start = start.clone();
        moved_start.base_pose = world * start.base_pose;
        let settings = IkSettings { max_iters: 20, ..IkSettings::default() };
        let (a, ra) = ik_solve_frame(m, &frame, &start, &settings).unwrap();
        let (b, rb) = ik_solve_frame(m, &moved, &moved_start, &settings).unwrap();
        prop_assert!((ra.residual_rms - rb.residual_rms).abs() < 1e-8);
        prop_assert!((&a.q_r - &b.q_r).amax() < 1e-6);
        prop_assert!((&a.q_s - &b.q_s).amax() < 1e-6);
        prop_assert!(pose_distance(&(world * a.base_pose), &b.base_pose) < 1e-6);
    }

    #[test]
    fn contact_forces_stay_in_their_cones(seed in any::<u64>()) {
        let m = model();
        let st = random_state(m, seed);
        let active: Vec<usize> = (0..m.contacts.len()).filter(|i| (seed >> i) & 1 == 1).collect();
        prop_assume!(!active.is_empty());
        let sol = id_solve(m, &IdWeights::default().problem(m, st, active.clone())).unwrap();
        prop_assert_eq!(sol.forces.len(), active.len());
        for (c, f) in &sol.forces {
            let mu = m.contacts[*c].mu;
            prop_assert!(f.z >= -1e-8);
            prop_assert!(f.xy().norm() <= mu * f.z + 1e-8, "contact {c}: {f:?}");
        }
        let split = &sol.tau_s_passive + &sol.tau_s_residual - &sol.tau_s;
        prop_assert!(split.amax() < 1e-9 * (1.0 + sol.tau_s.amax()));
    }

    #[test]
    fn lighter_regularization_fits_the_dynamics_at_least_as_well(seed in any::<u64>()) {
        let m = model();
        let st = random_state(m, seed);
        let active: Vec<usize> = (0..m.contacts.len()).collect();
        let mut previous = f64::INFINITY;
        for reg in [1e-2, 1e-4, 1e-6] {
            let weights = IdWeights { regularization: reg, ..IdWeights::default() };
            let problem = weights.problem(m, st.clone(), active.clone());
            let sol = id_solve(m, &problem).unwrap();
            let cost: f64 = sol.residual_dynamics.iter().zip(problem.w_residual.iter()).map(|(r, w)| w * r * r).sum();
            prop_assert!(cost <= previous * (1.0 + 1e-4) + 1e-9, "reg {reg}: {cost} > {previous}");
            previous = cost;
        }
    }

    #[test]
    fn muscle_tensions_respect_bounds_and_reach_feasible_targets(seed in any::<u64>()) {
        let m = model();
        let mut st = random_state(m, seed);
        st.q_r *= 0.3;
        st.psi *= 0.1;
        let geo = muscle_geometry(m, &st, &m.muscles).unwrap();
        let zero = DVector::zeros(m.muscles.len());
        let probe = muscle_optimize(m, &st, &DVector::zeros(m.n_joints()), &m.muscles, &zero, &MuscleWeights::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = DVector::from_fn(m.muscles.len(), |i, _| rng.random_range(0.1..0.9) * probe.f_max[i]);
        let tau = -geo.jacobian.columns(6, m.n_joints()).transpose() * &f;
        let sol = muscle_optimize(m, &st, &tau, &m.muscles, &zero, &MuscleWeights::default()).unwrap();
        for i in 0..f.len() {
            prop_assert!(sol.tensions[i] >= 0.0 && sol.tensions[i] <= sol.f_max[i]);
        }
        prop_assert!(sol.residual.norm() < 1e-6 * tau.norm(), "{} vs {}", sol.residual.norm(), tau.norm());

        let wild = DVector::from_fn(m.n_joints(), |_, _| rng.random_range(-500.0..500.0));
        let sol = muscle_optimize(m, &st, &wild, &m.muscles, &zero, &MuscleWeights::default()).unwrap();
        for i in 0..f.len() {
            prop_assert!(sol.tensions[i] >= 0.0 && sol.tensions[i] <= sol.f_max[i] * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn activation_stays_in_the_unit_interval(a0 in 0.0..1.0f64, inputs in prop::collection::vec((0.0..3.0f64, 1e-4..0.5f64), 1..40)) {
        let params = &model().muscles[0].params;
        let mut state = MuscleState { activation: a0 };
        for (u, dt) in inputs {
            let next = activation_step(params, state, u * params.u_mvc, dt).unwrap();
            let target = u.min(1.0);
            prop_assert!((0.0..=1.0).contains(&next.activation));
            // first-order lag moves toward the input without overshooting it
            prop_assert!((next.activation - target).abs() <= (state.activation - target).abs() + 1e-15);
            state = next;
        }
    }

    #[test]
    fn muscle_lengths_ignore_the_base_pose(seed in any::<u64>(), g in twist(1.0)) {
        let m = model();
        let st = random_state(m, seed);
        let mut moved = st.clone();
        moved.base_pose = exp_se3(&g, 1.0) * st.base_pose;
        let a = muscle_geometry(m, &st, &m.muscles).unwrap();
        let b = muscle_geometry(m, &moved, &m.muscles).unwrap();
        prop_assert!((&a.lengths - &b.lengths).amax() < 1e-12);
    }

    #[test]
    fn box_qp_is_deterministic_and_kkt(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
        let hi = DVector::from_fn(n, |i, _| lo[i] + rng.random_range(0.1..1.5));
        let p = QpProblem::new(h, g).with_bounds(lo.clone(), hi.clone());
        let a = qp_solve(&p, 1e-9, 20_000).unwrap();
        let b = qp_solve(&p, 1e-9, 20_000).unwrap();
        prop_assert_eq!(a.x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.iterations, b.iterations);
        for i in 0..n {
            prop_assert!(a.x[i] >= lo[i] - 1e-12 && a.x[i] <= hi[i] + 1e-12);
        }
        let kkt = kkt_residuals(&p, &a);
        prop_assert!(kkt.stationarity < 1e-6 && kkt.primal < 1e-8 && kkt.complementarity < 1e-6, "{kkt:?}");
    }

    #[test]
    fn csv_tables_round_trip_exactly(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 4), 1..20)) {
        let mut t = Table::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
        for r in &rows {
            t.push(r.clone());
        }
        let back = Table::from_csv_str(&t.to_csv_string()).unwrap();
        prop_assert_eq!(back, t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn state_tables_round_trip_exactly(seeds in prop::collection::vec(any::<u64>(), 1..5)) {
        let m = model();
        let states: Vec<_> = seeds.iter().map(|s| random_state(m, *s)).collect();
        let times: Vec<f64> = (0..states.len()).map(|i| i as f64 * 1e-3).collect();
        let table = Table::from_csv_str(&states_to_table(m, &times, &states).to_csv_string()).unwrap();
        let (t2, s2) = table_to_states(m, &table).unwrap();
        prop_assert_eq!(t2, times);
        for (a, b) in states.iter().zip(&s2) {
            prop_assert_eq!(&a.q_r, &b.q_r);
            prop_assert_eq!(&a.q_s, &b.q_s);
            prop_assert_eq!(&a.psi, &b.psi);
            prop_assert!(pose_distance(&a.base_pose, &b.base_pose) < 1e-12);
        }
    }
}
