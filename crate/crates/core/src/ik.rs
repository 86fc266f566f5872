//! Marker-based inverse kinematics by Levenberg–Marquardt over `{H₀, qR, qS}`.
//!
//! Steps live in the generalized-velocity space: the base is updated as
//! `H₀·exp(Δ₀)` and the shape coordinates additively. Damping acts on the
//! step, never on absolute coordinates.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::hybrid::{GeneralizedState, HybridModel, Kinematics};
use crate::se3::{exp_se3, log_se3, Pose, Twist};

/// Measured marker positions at one instant, in model marker order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrame {
    pub time: f64,
    pub positions: Vec<Vector3<f64>>,
    pub visibility: Vec<bool>,
}

impl MarkerFrame {
    pub fn all_visible(time: f64, positions: Vec<Vector3<f64>>) -> Self {
        let visibility = vec![true; positions.len()];
        Self { time, positions, visibility }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSettings {
    /// Per-marker weights; empty means 1 for every marker.
    pub w_residual: Vec<f64>,
    /// Per-coordinate step damping; empty means `1e-6` everywhere.
    pub w_damping: Vec<f64>,
    pub max_iters: usize,
    /// Accepted steps with `‖Δ‖∞` below this end the iteration.
    pub tol_step: f64,
    /// RMS marker residual (per coordinate, metres) that counts as converged.
    pub tol_residual: f64,
    pub lambda0: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            w_residual: Vec::new(),
            w_damping: Vec::new(),
            max_iters: 100,
            tol_step: 1e-10,
            tol_residual: 1e-9,
            lambda0: 1e-6,
        }
    }
}

pub const DEFAULT_STEP_DAMPING: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e12;

impl IkSettings {
    fn validate(&self, model: &HybridModel) -> Result<()> {
        if !self.w_residual.is_empty() && self.w_residual.len() != model.markers.len() {
            return Err(Error::DimensionMismatch {
                what: "marker weights",
                expected: model.markers.len(),
                got: self.w_residual.len(),
            });
        }
        if !self.w_damping.is_empty() && self.w_damping.len() != model.dim_psi() {
            return Err(Error::DimensionMismatch {
                what: "damping weights",
                expected: model.dim_psi(),
                got: self.w_damping.len(),
            });
        }
        if self.w_residual.iter().chain(&self.w_damping).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::validation("IK weights must be finite and non-negative"));
        }
        if !(self.tol_step > 0.0 && self.tol_residual > 0.0 && self.lambda0 > 0.0) {
            return Err(Error::validation("IK tolerances must be positive"));
        }
        Ok(())
    }

    fn marker_weight(&self, i: usize) -> f64 {
        self.w_residual.get(i).copied().unwrap_or(1.0)
    }

    fn damping(&self, n: usize) -> DVector<f64> {
        if self.w_damping.is_empty() {
            DVector::from_element(n, DEFAULT_STEP_DAMPING)
        } else {
            DVector::from_column_slice(&self.w_damping)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkReport {
    /// RMS over the coordinates of visible markers.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_frame(model: &HybridModel, frame: &MarkerFrame) -> Result<Vec<usize>> {
    let m = model.markers.len();
    for (what, got) in [("marker positions", frame.positions.len()), ("marker visibility", frame.visibility.len())] {
        if got != m {
            return Err(Error::DimensionMismatch { what, expected: m, got });
        }
    }
    let visible: Vec<usize> = (0..m)
        .filter(|&i| frame.visibility[i])
        .collect();
    if visible.iter().any(|&i| frame.positions[i].iter().any(|v| !v.is_finite())) {
        return Err(Error::validation("visible marker positions must be finite"));
    }
    let bodies: BTreeSet<usize> = visible.iter().map(|&i| model.markers[i].point.body).collect();
    if visible.len() < 3 || bodies.len() < 2.min(model.bodies.len()) {
        return Err(Error::Underdetermined {
            visible: visible.len(),
            bodies: bodies.len(),
        });
    }
    Ok(visible)
}

struct Linearization {
    /// Weighted cost `½ Σ wᵢ‖p̂ᵢ − pᵢ‖²`.
    cost: f64,
    sq_sum: f64,
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
}

fn linearize(
    model: &HybridModel,
    state: &GeneralizedState,
    frame: &MarkerFrame,
    visible: &[usize],
    settings: &IkSettings,
) -> Result<Linearization> {
    let kin = Kinematics::new(model, state)?;
    let n = model.dim_psi();
    let mut residual = DVector::zeros(3 * visible.len());
    let mut jacobian = DMatrix::zeros(3 * visible.len(), n);
    let mut cost = 0.0;
    let mut sq_sum = 0.0;
    for (k, &i) in visible.iter().enumerate() {
        let (pos, jac) = kin.point(&model.markers[i].point)?;
        let r = frame.positions[i] - pos;
        let w = settings.marker_weight(i);
        cost += 0.5 * w * r.norm_squared();
        sq_sum += r.norm_squared();
        residual.fixed_rows_mut::<3>(3 * k).copy_from(&(r * w.sqrt()));
        jacobian.rows_mut(3 * k, 3).copy_from(&(jac * w.sqrt()));
    }
    Ok(Linearization {
        cost,
        sq_sum,
        residual,
        jacobian,
    })
}

/// Moves `state` along a generalized-velocity step.
pub fn retract(state: &GeneralizedState, step: &DVector<f64>) -> GeneralizedState {
    let mut out = state.clone();
    let delta0 = Twist::from_slice(&step.as_slice()[..6]);
    out.base_pose = state.base_pose.compose(&exp_se3(&delta0, 1.0));
    let shape = state.shape_coords() + step.rows(6, step.len() - 6);
    out.set_shape_coords(&shape);
    out
}

/// Solves one frame starting from `q_init`. The returned state carries the
/// velocities of `q_init` unchanged.
pub fn ik_solve_frame(
    model: &HybridModel,
    frame: &MarkerFrame,
    q_init: &GeneralizedState,
    settings: &IkSettings,
) -> Result<(GeneralizedState, IkReport)> {
    settings.validate(model)?;
    q_init.check_dims(model)?;
    let visible = check_frame(model, frame)?;
    let n = model.dim_psi();
    let rows = 3.0 * visible.len() as f64;
    let damping = settings.damping(n);

    let mut state = q_init.clone();
    let mut lin = linearize(model, &state, frame, &visible, settings)?;
    let mut lambda = settings.lambda0;
    let mut iterations = 0;
    let mut converged = (lin.sq_sum / rows).sqrt() < settings.tol_residual;

    while !converged && iterations < settings.max_iters {
        iterations += 1;
        let jt = lin.jacobian.transpose();
        let mut a = &jt * &lin.jacobian;
        for i in 0..n {
            a[(i, i)] += damping[i] + lambda;
        }
        let g = &jt * &lin.residual;
        let step = match a.cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let candidate = retract(&state, &step);
        let cand_lin = linearize(model, &candidate, frame, &visible, settings)?;
        if cand_lin.cost < lin.cost {
            state = candidate;
            lin = cand_lin;
            lambda = (lambda / 10.0).max(1e-15);
            let small_step = step.amax() < settings.tol_step;
            converged = small_step || (lin.sq_sum / rows).sqrt() < settings.tol_residual;
        } else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // no descent direction is left at machine precision
                converged = true;
            }
        }
    }
    let report = IkReport {
        residual_rms: (lin.sq_sum / rows).sqrt(),
        iterations,
        converged,
    };
    Ok((state, report))
}

/// Rigid fit of the base pose: aligns the model's markers at `shape` (with
/// an identity base) onto the visible measured markers.
pub fn initial_guess(model: &HybridModel, frame: &MarkerFrame) -> Result<GeneralizedState> {
    let visible = check_frame(model, frame)?;
    let mut state = GeneralizedState::neutral(model);
    let kin = Kinematics::new(model, &state)?;
    let src: Vec<Vector3<f64>> = visible
        .iter()
        .map(|&i| kin.point_position(&model.markers[i].point))
        .collect::<Result<_>>()?;
    let dst: Vec<Vector3<f64>> = visible.iter().map(|&i| frame.positions[i]).collect();
    state.base_pose = kabsch(&src, &dst);
    Ok(state)
}

/// Least-squares rigid transform `T` with `dst ≈ T·src`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - cs) * (b - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Pose::new(r, cd - r * cs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSettings {
    pub frame: IkSettings,
    /// Width of the centred moving average applied to `ψ` and `ψ̇`; 1 disables it.
    pub smoothing_window: usize,
}

impl Default for SequenceSettings {
    fn default() -> Self {
        Self {
            frame: IkSettings::default(),
            smoothing_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSequence {
    pub times: Vec<f64>,
    pub states: Vec<GeneralizedState>,
    pub reports: Vec<IkReport>,
}

/// Solves every frame with warm starts, then fills `psi` and `psi_dot` by
/// central differences (one-sided at the ends) and a moving average.
pub fn ik_solve_sequence(
    model: &HybridModel,
    frames: &[MarkerFrame],
    settings: &SequenceSettings,
    init: Option<&GeneralizedState>,
) -> Result<IkSequence> {
    if frames.is_empty() {
        return Ok(IkSequence {
            times: Vec::new(),
            states: Vec::new(),
            reports: Vec::new(),
        });
    }
    let dt = uniform_dt(frames)?;
    let mut states = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    let mut guess = match init {
        Some(s) => s.clone(),
        None => initial_guess(model, &frames[0]).map_err(|e| e.at_frame(0))?,
    };
    for (k, frame) in frames.iter().enumerate() {
        let (s, r) = ik_solve_frame(model, frame, &guess, &settings.frame).map_err(|e| e.at_frame(k))?;
        guess = s.clone();
        states.push(s);
        reports.push(r);
    }
    if let Some(dt) = dt {
        differentiate(&mut states, dt, settings.smoothing_window)?;
    }
    Ok(IkSequence {
        times: frames.iter().map(|f| f.time).collect(),
        states,
        reports,
    })
}

/// `None` for a single frame.
fn uniform_dt(frames: &[MarkerFrame]) -> Result<Option<f64>> {
    if frames.len() < 2 {
        return Ok(None);
    }
    let dt = frames[1].time - frames[0].time;
    if !(dt > 0.0) {
        return Err(Error::validation("frame times must be strictly increasing"));
    }
    for (k, w) in frames.windows(2).enumerate() {
        if ((w[1].time - w[0].time) - dt).abs() > 1e-9 {
            return Err(Error::validation(format!("non-uniform frame spacing at frame {}", k + 1)));
        }
    }
    Ok(Some(dt))
}

/// Generalized velocity between two configurations `span` seconds apart.
fn secant(a: &GeneralizedState, b: &GeneralizedState, span: f64) -> Result<DVector<f64>> {
    let rel = a.base_pose.inverse().compose(&b.base_pose);
    let eta0: Vector6<f64> = log_se3(&rel)?.to_vector() / span;
    let dq = (b.shape_coords() - a.shape_coords()) / span;
    let mut v = DVector::zeros(6 + dq.len());
    v.fixed_rows_mut::<6>(0).copy_from(&eta0);
    v.rows_mut(6, dq.len()).copy_from(&dq);
    Ok(v)
}

fn central_differences(values: &[DVector<f64>], dt: f64, f: impl Fn(usize, usize, f64) -> Result<DVector<f64>>) -> Result<Vec<DVector<f64>>> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            f(lo, hi, dt * (hi - lo) as f64)
        })
        .collect()
}

fn smooth(values: &[DVector<f64>], window: usize) -> Vec<DVector<f64>> {
    let half = window.max(1) / 2;
    let n = values.len();
    (0..n)
        .map(|k| {
            // shrink symmetrically near the ends so constant signals stay exact
            let h = half.min(k).min(n - 1 - k);
            let slice = &values[k - h..=k + h];
            slice.iter().fold(DVector::zeros(values[k].len()), |acc, v| acc + v) / slice.len() as f64
        })
        .collect()
}

fn differentiate(states: &mut [GeneralizedState], dt: f64, window: usize) -> Result<()> {
    let psi = central_differences(&vec![DVector::zeros(0); states.len()], dt, |lo, hi, span| {
        secant(&states[lo], &states[hi], span).map_err(|e| e.at_frame(lo))
    })?;
    let psi = smooth(&psi, window);
    let psi_dot = central_differences(&psi, dt, |lo, hi, span| Ok((&psi[hi] - &psi[lo]) / span))?;
    let psi_dot = smooth(&psi_dot, window);
    for ((s, v), a) in states.iter_mut().zip(psi).zip(psi_dot) {
        s.psi = v;
        s.psi_dot = a;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::test_models::{branched_model, random_state};
    use crate::hybrid::fk_all;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_at(model: &HybridModel, state: &GeneralizedState, time: f64) -> MarkerFrame {
        let kin = fk_all(model, state).unwrap();
        MarkerFrame::all_visible(time, kin.marker_positions(model).unwrap())
    }

    fn perturb(state: &GeneralizedState, rng: &mut impl Rng, size: f64) -> GeneralizedState {
        let n = state.psi.len();
        let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        retract(state, &(d * (size / n as f64).sqrt()))
    }

    #[test]
    fn fixed_point_needs_no_iterations() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let truth = random_state(&model, &mut rng, 0.3);
        let (_, report) = ik_solve_frame(&model, &frame_at(&model, &truth, 0.0), &truth, &IkSettings::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.residual_rms < 1e-12);
    }

    #[test]
    fn recovers_perturbed_states() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        // this model has singular values near 3e-4, which the default 1e-6
        // step damping would turn into slow linear convergence
        let settings = IkSettings {
            w_damping: vec![1e-9; model.dim_psi()],
            ..IkSettings::default()
        };
        for _ in 0..10 {
            let truth = random_state(&model, &mut rng, 0.3);
            let init = perturb(&truth, &mut rng, 0.05);
            let (_, report) = ik_solve_frame(&model, &frame_at(&model, &truth, 0.0), &init, &settings).unwrap();
            assert!(report.converged && report.residual_rms < 1e-6, "{report:?}");
            assert!(report.iterations <= 20, "{report:?}");
        }
    }

    #[test]
    fn accepted_steps_never_raise_cost() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let truth = random_state(&model, &mut rng, 0.3);
        let mut frame = frame_at(&model, &truth, 0.0);
        for p in frame.positions.iter_mut() {
            *p += Vector3::from_fn(|_, _| rng.random_range(-2e-3..2e-3));
        }
        let mut state = perturb(&truth, &mut rng, 0.1);
        let settings = IkSettings {
            max_iters: 1,
            ..IkSettings::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..15 {
            let (s, r) = ik_solve_frame(&model, &frame, &state, &settings).unwrap();
            assert!(r.residual_rms <= last + 1e-15);
            last = r.residual_rms;
            state = s;
        }
    }

    #[test]
    fn world_transform_is_absorbed_by_the_base() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let truth = random_state(&model, &mut rng, 0.3);
        let mut frame = frame_at(&model, &truth, 0.0);
        for p in frame.positions.iter_mut() {
            *p += Vector3::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
        }
        let init = perturb(&truth, &mut rng, 0.02);
        let (sol, base_report) = ik_solve_frame(&model, &frame, &init, &IkSettings::default()).unwrap();
        let g = Pose::from_axis_angle(&Vector3::new(0.3, -0.5, 0.8).normalize(), 0.9)
            .compose(&Pose::from_translation(Vector3::new(1.0, -2.0, 0.5)));
        let moved = MarkerFrame {
            positions: frame.positions.iter().map(|p| g.transform_point(p)).collect(),
            ..frame.clone()
        };
        let mut init2 = sol.clone();
        init2.base_pose = g.compose(&init.base_pose);
        init2.set_shape_coords(&init.shape_coords());
        let (_, moved_report) = ik_solve_frame(&model, &moved, &init2, &IkSettings::default()).unwrap();
        assert!((moved_report.residual_rms - base_report.residual_rms).abs() < 1e-10);
    }

    #[test]
    fn single_body_markers_are_underdetermined() {
        let model = branched_model();
        let truth = GeneralizedState::neutral(&model);
        let mut frame = frame_at(&model, &truth, 0.0);
        let first = model.markers[0].point.body;
        for (i, m) in model.markers.iter().enumerate() {
            frame.visibility[i] = m.point.body == first;
        }
        assert!(matches!(
            ik_solve_frame(&model, &frame, &truth, &IkSettings::default()),
            Err(Error::Underdetermined { .. })
        ));
    }

    #[test]
    fn kabsch_recovers_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let src: Vec<Vector3<f64>> = (0..6).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let t = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, -1.0).normalize(), 2.5)
            .compose(&Pose::from_translation(Vector3::new(0.2, 0.1, -3.0)));
        let dst: Vec<_> = src.iter().map(|p| t.transform_point(p)).collect();
        let fit = kabsch(&src, &dst);
        assert!((fit.rotation - t.rotation).amax() < 1e-12);
        assert!((fit.position - t.position).amax() < 1e-12);
    }

    #[test]
    fn constant_pose_sequence_has_zero_velocity() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        let truth = random_state(&model, &mut rng, 0.3);
        let frames: Vec<_> = (0..10).map(|k| frame_at(&model, &truth, k as f64 * 0.005)).collect();
        let seq = ik_solve_sequence(&model, &frames, &SequenceSettings::default(), Some(&truth)).unwrap();
        for s in &seq.states {
            assert!(s.psi.amax() < 1e-9 && s.psi_dot.amax() < 1e-9);
        }
    }

    #[test]
    fn sinusoidal_joint_rate_matches_analytic_derivative() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let base = random_state(&model, &mut rng, 0.3);
        let omega = std::f64::consts::TAU;
        let amp = 0.4;
        let frames: Vec<_> = (0..200)
            .map(|k| {
                let t = k as f64 / 200.0;
                let mut s = base.clone();
                s.q_r[0] = amp * (omega * t).sin();
                frame_at(&model, &s, t)
            })
            .collect();
        let seq = ik_solve_sequence(&model, &frames, &SequenceSettings::default(), Some(&base)).unwrap();
        let col = 6;
        let (mut err, mut norm) = (0.0, 0.0);
        // interior frames; the one-sided ends are excluded
        for k in 3..197 {
            let exact = amp * omega * (omega * seq.times[k]).cos();
            err += (seq.states[k].psi[col] - exact).powi(2);
            norm += exact * exact;
        }
        assert!((err / norm).sqrt() < 0.01);
    }

    #[test]
    fn frame_errors_carry_their_index() {
        let model = branched_model();
        let truth = GeneralizedState::neutral(&model);
        let mut frames: Vec<_> = (0..4).map(|k| frame_at(&model, &truth, k as f64 * 0.01)).collect();
        frames[2].visibility = vec![false; model.markers.len()];
        frames[2].visibility[0] = true;
        frames[2].visibility[5] = true;
        match ik_solve_sequence(&model, &frames, &SequenceSettings::default(), Some(&truth)) {
            Err(Error::Frame { index, source }) => {
                assert_eq!(index, 2);
                assert!(matches!(*source, Error::Underdetermined { visible: 2, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
