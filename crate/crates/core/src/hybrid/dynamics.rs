use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};

use super::kinematics::Kinematics;
use super::{configured_rods, BodyKind, BodyPoint, GeneralizedState, HybridModel};
use crate::error::{Error, Result};
use crate::pcs::{gauss_legendre, segment_transport, symmetrize, PcsRod};
use crate::rigid::{body_spatial_inertia, joint_transform, mass_and_center};
use crate::se3::{ad_se3, Pose, Twist};

/// Central-difference step used by [`bias_vector`].
pub const DEFAULT_FD_STEP: f64 = 1e-6;
/// Mass matrices whose condition estimate exceeds this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasOptions {
    pub step: f64,
    /// Combine steps `h` and `h/2` to cancel the `O(h²)` error term.
    pub richardson: bool,
}

impl Default for BiasOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_FD_STEP,
            richardson: false,
        }
    }
}

/// A world-frame force applied at a body point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedForce {
    pub point: BodyPoint,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub kinetic: f64,
    pub gravity: f64,
    pub elastic: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.kinetic + self.gravity + self.elastic
    }
}

pub fn mass_matrix(model: &HybridModel, state: &GeneralizedState) -> Result<DMatrix<f64>> {
    let kin = Kinematics::new(model, state)?;
    Ok(mass_matrix_from(model, &kin))
}

/// `Σ Jᵀ𝓜J` over rigid bodies plus the quadrature of the same over rods.
pub(crate) fn mass_matrix_from(model: &HybridModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = kin.dim();
    let mut m = DMatrix::zeros(n, n);
    for (i, body) in model.bodies.iter().enumerate() {
        match &body.kind {
            BodyKind::Rigid(link) => {
                let (_, jac) = kin.rigid_frame(i).expect("rigid body frame");
                let mj = body_spatial_inertia(link) * jac;
                m.gemm_tr(1.0, jac, &mj, 1.0);
            }
            BodyKind::Rod { .. } => {
                let frames = kin.rod_frames(i).expect("rod frames");
                frames.for_each_quadrature_node(frames.rod().quadrature_order, |seg, _, w, jac| {
                    let mj = seg.inertia_density * jac;
                    m.gemm_tr(w, jac, &mj, 1.0);
                });
            }
        }
    }
    symmetrize(&mut m);
    m
}

/// Visits every inertial element with its body-frame twist: rigid bodies
/// with weight one, rod quadrature nodes with their quadrature weight.
fn sweep_twists(
    model: &HybridModel,
    rods: &[Option<PcsRod>],
    q_r: &DVector<f64>,
    psi: &DVector<f64>,
    mut visit: impl FnMut(&Matrix6<f64>, f64, &Vector6<f64>),
) -> Result<()> {
    let mut etas: Vec<Vector6<f64>> = Vec::with_capacity(model.bodies.len());
    let mut rates: Vec<Vec<Twist>> = Vec::with_capacity(model.bodies.len());
    for (i, body) in model.bodies.iter().enumerate() {
        let attach = match body.parent {
            None => Vector6::from_column_slice(&psi.as_slice()[..6]),
            Some(p) => match &rods[p] {
                Some(rod) => {
                    let s = body.parent_arclen.unwrap_or_else(|| rod.length());
                    rod.velocity(&Twist::from_vector(&etas[p]), &rates[p], s)?
                        .to_vector()
                }
                None => etas[p],
            },
        };
        match (&body.kind, &rods[i]) {
            (BodyKind::Rigid(link), _) => {
                let col = model.joint_column(i);
                let coord = col.map_or(0.0, |c| q_r[c - 6]);
                let mut eta = joint_transform(&link.joint, coord).adjoint_inv_apply(&attach);
                if let Some(c) = col {
                    eta += link.joint.motion_subspace() * psi[c];
                }
                visit(&body_spatial_inertia(link), 1.0, &eta);
                etas.push(eta);
                rates.push(Vec::new());
            }
            (BodyKind::Rod { mount, .. }, Some(rod)) => {
                let eta0 = mount.adjoint_inv_apply(&attach);
                let start = model.strain_column(i).expect("rod has strain columns");
                let r = rod.expand_rates(&psi.as_slice()[start..start + rod.n_active()])?;
                let (xs, ws) = gauss_legendre(rod.quadrature_order);
                let mut eta = eta0;
                for (seg, rate) in rod.segments.iter().zip(&r) {
                    let half = 0.5 * seg.length;
                    for (x, w) in xs.iter().zip(&ws) {
                        let node = segment_transport(seg, half * (x + 1.0), &eta, rate);
                        visit(&seg.inertia_density, w * half, &node);
                    }
                    eta = segment_transport(seg, seg.length, &eta, rate);
                }
                etas.push(eta0);
                rates.push(r);
            }
            (BodyKind::Rod { .. }, None) => unreachable!("configured_rods covers every rod"),
        }
    }
    Ok(())
}

fn kinetic_energy_at(
    model: &HybridModel,
    q_r: &DVector<f64>,
    q_s: &DVector<f64>,
    psi: &DVector<f64>,
) -> Result<f64> {
    let rods = configured_rods(model, q_s)?;
    let mut t = 0.0;
    sweep_twists(model, &rods, q_r, psi, |m, w, eta| {
        t += 0.5 * w * eta.dot(&(m * eta));
    })?;
    Ok(t)
}

/// Kinetic energy summed body by body from propagated twists; independent
/// of the mass matrix assembly.
pub fn kinetic_energy(model: &HybridModel, state: &GeneralizedState) -> Result<f64> {
    state.check_dims(model)?;
    kinetic_energy_at(model, &state.q_r, &state.q_s, &state.psi)
}

fn gravity_energy_from(model: &HybridModel, kin: &Kinematics) -> f64 {
    let g = model.gravity;
    let mut v = 0.0;
    for (i, body) in model.bodies.iter().enumerate() {
        match &body.kind {
            BodyKind::Rigid(link) => {
                let (pose, _) = kin.rigid_frame(i).expect("rigid body frame");
                v -= link.mass * g.dot(&pose.transform_point(&link.cog_offset));
            }
            BodyKind::Rod { .. } => {
                let frames = kin.rod_frames(i).expect("rod frames");
                frames.for_each_quadrature_frame(frames.rod().quadrature_order, |seg, pose, w, _| {
                    let (m, c) = mass_and_center(&seg.inertia_density);
                    v -= w * m * g.dot(&pose.transform_point(&c));
                });
            }
        }
    }
    v
}

pub fn energies(model: &HybridModel, state: &GeneralizedState) -> Result<Energies> {
    let kin = Kinematics::new(model, state)?;
    let rods = configured_rods(model, &state.q_s)?;
    Ok(Energies {
        kinetic: kinetic_energy(model, state)?,
        gravity: gravity_energy_from(model, &kin),
        elastic: rods.iter().flatten().map(PcsRod::elastic_energy).sum(),
    })
}

/// Gravitational plus elastic potential energy.
pub fn potential_energy(model: &HybridModel, state: &GeneralizedState) -> Result<f64> {
    let e = energies(model, state)?;
    Ok(e.gravity + e.elastic)
}

/// `Σ Jᵀ 𝓜 (0; Rᵀg)`: the generalized force of gravity.
pub fn generalized_gravity(model: &HybridModel, state: &GeneralizedState) -> Result<DVector<f64>> {
    let kin = Kinematics::new(model, state)?;
    Ok(gravity_from(model, &kin))
}

fn gravity_from(model: &HybridModel, kin: &Kinematics) -> DVector<f64> {
    let mut out = DVector::zeros(kin.dim());
    let g = model.gravity;
    if g == Vector3::zeros() {
        return out;
    }
    let wrench = |m: &Matrix6<f64>, pose: &Pose| {
        let a = pose.rotation.transpose() * g;
        m * Vector6::new(0.0, 0.0, 0.0, a.x, a.y, a.z)
    };
    for (i, body) in model.bodies.iter().enumerate() {
        match &body.kind {
            BodyKind::Rigid(link) => {
                let (pose, jac) = kin.rigid_frame(i).expect("rigid body frame");
                out.gemv_tr(1.0, jac, &wrench(&body_spatial_inertia(link), pose), 1.0);
            }
            BodyKind::Rod { .. } => {
                let frames = kin.rod_frames(i).expect("rod frames");
                frames.for_each_quadrature_frame(frames.rod().quadrature_order, |seg, pose, w, jac| {
                    out.gemv_tr(w, jac, &wrench(&seg.inertia_density, pose), 1.0);
                });
            }
        }
    }
    out
}

/// Rod passive force `K(q₀ − q) − D q̇` in the strain rows of a `ψ`-sized
/// vector; zero elsewhere.
pub fn passive_generalized_force(
    model: &HybridModel,
    state: &GeneralizedState,
) -> Result<DVector<f64>> {
    state.check_dims(model)?;
    let rods = configured_rods(model, &state.q_s)?;
    let mut out = DVector::zeros(model.dim_psi());
    for (i, rod) in rods.iter().enumerate() {
        if let Some(rod) = rod {
            let start = model.strain_column(i).expect("rod has strain columns");
            let n = rod.n_active();
            let rates = rod.expand_rates(&state.psi.as_slice()[start..start + n])?;
            let f = rod.passive_force(&rates)?.active();
            out.rows_mut(start, n).copy_from(&f);
        }
    }
    Ok(out)
}

pub fn bias_vector(model: &HybridModel, state: &GeneralizedState) -> Result<DVector<f64>> {
    bias_vector_with(model, state, &BiasOptions::default())
}

/// `b = Ṁψ − ∂T/∂q − [ad(η₀)ᵀ (Mψ)₀] − Σ Jᵀ(gravity wrench)`.
///
/// The kinetic energy does not depend on the base pose, so the base rows
/// carry the Euler–Poincaré term instead of a coordinate derivative.
pub fn bias_vector_with(
    model: &HybridModel,
    state: &GeneralizedState,
    opts: &BiasOptions,
) -> Result<DVector<f64>> {
    state.check_dims(model)?;
    let kin = Kinematics::new(model, state)?;
    let m = mass_matrix_from(model, &kin);
    bias_from(model, state, &kin, &m, opts)
}

pub(crate) fn bias_from_parts(
    model: &HybridModel,
    state: &GeneralizedState,
    kin: &Kinematics,
    m: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    bias_from(model, state, kin, m, &BiasOptions::default())
}

pub(crate) fn bias_from(
    model: &HybridModel,
    state: &GeneralizedState,
    kin: &Kinematics,
    m: &DMatrix<f64>,
    opts: &BiasOptions,
) -> Result<DVector<f64>> {
    let mut b = velocity_terms(model, state, opts.step)?;
    if opts.richardson {
        let fine = velocity_terms(model, state, 0.5 * opts.step)?;
        b = (fine * 4.0 - b) / 3.0;
    }
    let p = m * &state.psi;
    let eta0 = Twist::from_slice(&state.psi.as_slice()[..6]);
    let p0 = Vector6::from_column_slice(&p.as_slice()[..6]);
    let euler = ad_se3(&eta0).transpose() * p0;
    for k in 0..6 {
        b[k] -= euler[k];
    }
    b -= gravity_from(model, kin);
    Ok(b)
}

/// `Ṁψ − ∂T/∂q` by central differences of step `h` in the shape coordinates.
fn velocity_terms(model: &HybridModel, state: &GeneralizedState, h: f64) -> Result<DVector<f64>> {
    let n = model.dim_psi();
    let nr = model.n_joints();
    let q = state.shape_coords();
    let qdot = state.psi.rows(6, n - 6).into_owned();
    let mut out = DVector::zeros(n);
    if qdot.iter().all(|v| *v == 0.0) {
        return Ok(out);
    }
    let split = |v: &DVector<f64>| (v.rows(0, nr).into_owned(), v.rows(nr, n - 6 - nr).into_owned());

    let (qr_p, qs_p) = split(&(&q + &qdot * h));
    let (qr_m, qs_m) = split(&(&q - &qdot * h));
    let identity = Pose::identity();
    let mp = mass_matrix_from(model, &Kinematics::from_coords(model, &identity, &qr_p, &qs_p)?);
    let mm = mass_matrix_from(model, &Kinematics::from_coords(model, &identity, &qr_m, &qs_m)?);
    out += (mp - mm) * &state.psi / (2.0 * h);

    for k in 0..n - 6 {
        let mut qp = q.clone();
        qp[k] += h;
        let mut qm = q.clone();
        qm[k] -= h;
        let (a, b) = split(&qp);
        let tp = kinetic_energy_at(model, &a, &b, &state.psi)?;
        let (a, b) = split(&qm);
        let tm = kinetic_energy_at(model, &a, &b, &state.psi)?;
        out[6 + k] -= (tp - tm) / (2.0 * h);
    }
    Ok(out)
}

/// Solves `M x = rhs` by Cholesky, rejecting ill-conditioned `M`.
pub(crate) fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::SingularMass { condition: f64::INFINITY })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    let condition = (hi / lo).powi(2);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularMass { condition });
    }
    Ok(chol.solve(rhs))
}

/// Generalized force `(0, τR, τS_passive + τS_active) + Σ Jᵀf`.
pub(crate) fn applied_generalized_force(
    model: &HybridModel,
    state: &GeneralizedState,
    kin: &Kinematics,
    tau_r: &DVector<f64>,
    tau_s_active: &DVector<f64>,
    forces: &[AppliedForce],
) -> Result<DVector<f64>> {
    let nr = model.n_joints();
    let ns = model.n_strains();
    if tau_r.len() != nr {
        return Err(Error::DimensionMismatch { what: "tauR", expected: nr, got: tau_r.len() });
    }
    if tau_s_active.len() != ns {
        return Err(Error::DimensionMismatch { what: "tauS", expected: ns, got: tau_s_active.len() });
    }
    let mut tau = passive_generalized_force(model, state)?;
    tau.rows_mut(6, nr).copy_from(tau_r);
    let mut s = tau.rows_mut(6 + nr, ns);
    s += tau_s_active;
    for f in forces {
        let jac = kin.point_jacobian(&f.point)?;
        tau.gemv_tr(1.0, &jac, &f.force, 1.0);
    }
    Ok(tau)
}

/// Solves `M ψ̇ = τ + Σ Jᵀf − b`.
pub fn forward_dynamics(
    model: &HybridModel,
    state: &GeneralizedState,
    tau_r: &DVector<f64>,
    tau_s_active: &DVector<f64>,
    forces: &[AppliedForce],
) -> Result<DVector<f64>> {
    state.check_dims(model)?;
    let kin = Kinematics::new(model, state)?;
    let m = mass_matrix_from(model, &kin);
    let b = bias_from(model, state, &kin, &m, &BiasOptions::default())?;
    let tau = applied_generalized_force(model, state, &kin, tau_r, tau_s_active, forces)?;
    spd_solve(&m, &(tau - b))
}

#[cfg(test)]
mod tests {
    use super::super::test_models::*;
    use super::super::{Body, ContactPoint};
    use super::*;
    use crate::pcs::{PcsSegment, ANGULAR_ONLY};
    use crate::rigid::{Joint, RigidLink};
    use crate::se3::exp_se3;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn free_body(link: RigidLink, gravity: Vector3<f64>) -> HybridModel {
        HybridModel::new(vec![Body::rigid("body", None, link)], gravity, vec![], vec![], vec![]).unwrap()
    }

    fn asymmetric_link() -> RigidLink {
        RigidLink {
            mass: 2.0,
            inertia_cog: Matrix3::new(0.3, 0.02, -0.01, 0.02, 0.2, 0.03, -0.01, 0.03, 0.12),
            cog_offset: Vector3::new(0.05, -0.02, 0.1),
            joint: Joint::fixed(Pose::identity()),
        }
    }

    #[test]
    fn single_body_mass_matrix_is_its_inertia() {
        let link = asymmetric_link();
        let model = free_body(link.clone(), Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let st = random_state(&model, &mut rng, 1.0);
        let m = mass_matrix(&model, &st).unwrap();
        assert!((m - body_spatial_inertia(&link)).amax() < 1e-14);
    }

    #[test]
    fn mass_matrix_properties() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..10 {
            let st = random_state(&model, &mut rng, 1.0);
            let m = mass_matrix(&model, &st).unwrap();
            assert!((&m - m.transpose()).amax() < 1e-9);
            assert!(m.clone().symmetric_eigen().eigenvalues.min() > 0.0);
            let t = kinetic_energy(&model, &st).unwrap();
            let quad = 0.5 * st.psi.dot(&(&m * &st.psi));
            assert!((t - quad).abs() < 1e-8 * t.abs().max(1e-12), "{t} vs {quad}");
        }
    }

    #[test]
    fn zero_mass_body_leaves_mass_matrix_unchanged() {
        let model = branched_model();
        let mut bodies = model.bodies.clone();
        let mut ghost = test_link(0.0, Joint::fixed(Pose::from_translation(Vector3::new(0.1, 0.0, 0.0))));
        ghost.inertia_cog = Matrix3::zeros();
        bodies.push(Body::rigid("ghost", Some(3), ghost));
        let heavier = HybridModel::new(bodies, model.gravity, vec![], vec![], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let st = random_state(&model, &mut rng, 1.0);
        let a = mass_matrix(&model, &st).unwrap();
        let b = mass_matrix(&heavier, &st).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    /// Composite inertia of everything about the base frame, accumulated
    /// from world-frame poses without any Jacobians.
    fn composite_inertia(model: &HybridModel, st: &GeneralizedState) -> Matrix6<f64> {
        let kin = Kinematics::new(model, st).unwrap();
        let base_inv = st.base_pose.inverse();
        let mut total = Matrix6::zeros();
        let mut add = |m: &Matrix6<f64>, pose: &Pose, w: f64| {
            // twist of the body frame induced by a base twist: Ad((base⁻¹·pose)⁻¹)
            let rel = (base_inv * *pose).inverse().adjoint();
            total += rel.transpose() * m * rel * w;
        };
        for (i, body) in model.bodies.iter().enumerate() {
            match &body.kind {
                BodyKind::Rigid(l) => add(&body_spatial_inertia(l), &kin.body_pose(i).unwrap(), 1.0),
                BodyKind::Rod { .. } => {
                    kin.rod_frames(i).unwrap().for_each_quadrature_frame(5, |seg, pose, w, _| {
                        add(&seg.inertia_density, pose, w)
                    });
                }
            }
        }
        total
    }

    #[test]
    fn base_block_is_composite_inertia() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let st = random_state(&model, &mut rng, 1.0);
        let m = mass_matrix(&model, &st).unwrap();
        let c = composite_inertia(&model, &st);
        let m0 = m.fixed_view::<6, 6>(0, 0).into_owned();
        assert!((m0 - c).amax() < 1e-8 * c.amax());
        assert!((model.total_mass() - c[(3, 3)]).abs() < 1e-10);
    }

    #[test]
    fn bias_is_zero_at_rest_without_gravity() {
        let mut model = branched_model();
        model.gravity = Vector3::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut st = random_state(&model, &mut rng, 1.0);
        st.psi.fill(0.0);
        assert!(bias_vector(&model, &st).unwrap().amax() < 1e-10);
    }

    #[test]
    fn spinning_free_body_gyroscopic_term() {
        let link = asymmetric_link();
        let model = free_body(link.clone(), Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        for _ in 0..10 {
            let st = random_state(&model, &mut rng, 2.0);
            let eta = Vector6::from_column_slice(st.psi.as_slice());
            let inertia = body_spatial_inertia(&link);
            let expected = -ad_se3(&Twist::from_vector(&eta)).transpose() * inertia * eta;
            let b = bias_vector(&model, &st).unwrap();
            assert!((Vector6::from_column_slice(b.as_slice()) - expected).norm() < 1e-6);
        }
    }

    /// `V` as a function of a perturbation along coordinate `k` (base
    /// perturbations are right-multiplicative twists).
    fn potential_along(model: &HybridModel, st: &GeneralizedState, k: usize, h: f64) -> f64 {
        let mut s = st.clone();
        if k < 6 {
            let mut e = Vector6::zeros();
            e[k] = h;
            s.base_pose = st.base_pose * exp_se3(&Twist::from_vector(&e), 1.0);
        } else {
            let mut q = st.shape_coords();
            q[k - 6] += h;
            s.set_shape_coords(&q);
        }
        energies(model, &s).unwrap().gravity
    }

    #[test]
    fn gravity_bias_is_potential_gradient() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let mut st = random_state(&model, &mut rng, 1.0);
        st.psi.fill(0.0);
        let b = bias_vector(&model, &st).unwrap();
        let h = 1e-5;
        for k in 0..model.dim_psi() {
            let grad = (potential_along(&model, &st, k, h) - potential_along(&model, &st, k, -h)) / (2.0 * h);
            assert!((b[k] - grad).abs() < 1e-6 * (1.0 + grad.abs()), "row {k}: {} vs {grad}", b[k]);
        }
    }

    #[test]
    fn bias_matches_lagrangian_power_balance() {
        // q̇ᵀ∂T/∂q = ½ψᵀṀψ and the Euler–Poincaré term is orthogonal to η₀,
        // so ψᵀb = ½ψᵀṀψ
        let mut model = branched_model();
        model.gravity = Vector3::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let st = random_state(&model, &mut rng, 1.0);
        let b = bias_vector(&model, &st).unwrap();
        let h = 1e-6;
        let adv = |sign: f64| {
            let mut s = st.clone();
            let nr = model.n_joints();
            s.q_r += st.psi.rows(6, nr) * (sign * h);
            s.q_s += st.psi.rows(6 + nr, model.n_strains()) * (sign * h);
            mass_matrix(&model, &s).unwrap()
        };
        let mdot = (adv(1.0) - adv(-1.0)) / (2.0 * h);
        let lhs = st.psi.dot(&b);
        let rhs = 0.5 * st.psi.dot(&(mdot * &st.psi));
        assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn richardson_agrees_with_plain_step() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let st = random_state(&model, &mut rng, 1.0);
        let a = bias_vector(&model, &st).unwrap();
        let b = bias_vector_with(&model, &st, &BiasOptions { step: 1e-4, richardson: true }).unwrap();
        assert!((a - b).amax() < 1e-6);
    }

    #[test]
    fn free_fall_has_gravity_acceleration() {
        let link = asymmetric_link();
        let g = Vector3::new(0.0, 0.0, -9.81);
        let model = free_body(link, g);
        let mut st = GeneralizedState::neutral(&model);
        st.base_pose = exp_se3(&Twist::from_slice(&[0.4, -0.3, 1.1, 0.0, 0.0, 1.0]), 1.0);
        let acc = forward_dynamics(&model, &st, &DVector::zeros(0), &DVector::zeros(0), &[]).unwrap();
        // body-frame acceleration of the origin: zero angular, Rᵀg linear
        let expected = st.base_pose.rotation.transpose() * g;
        assert!(acc.rows(0, 3).norm() < 1e-12);
        assert!((Vector3::from_column_slice(&acc.as_slice()[3..6]) - expected).norm() < 1e-12);
    }

    #[test]
    fn forward_dynamics_round_trip() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let st = random_state(&model, &mut rng, 1.0);
        let tau_r = DVector::from_fn(model.n_joints(), |_, _| rng.random_range(-1.0..1.0));
        let tau_s = DVector::from_fn(model.n_strains(), |_, _| rng.random_range(-0.1..0.1));
        let forces: Vec<AppliedForce> = model
            .contacts
            .iter()
            .map(|c: &ContactPoint| AppliedForce {
                point: c.point,
                force: Vector3::new(1.0, -2.0, 10.0),
            })
            .collect();
        let acc = forward_dynamics(&model, &st, &tau_r, &tau_s, &forces).unwrap();
        let m = mass_matrix(&model, &st).unwrap();
        let b = bias_vector(&model, &st).unwrap();
        let kin = Kinematics::new(&model, &st).unwrap();
        let tau = applied_generalized_force(&model, &st, &kin, &tau_r, &tau_s, &forces).unwrap();
        let residual = m * acc + b - tau;
        assert!(residual.amax() < 1e-9, "{}", residual.amax());
    }

    #[test]
    fn hanging_rod_equilibrium() {
        // strains found by Newton so the elastic force balances gravity
        let sec = test_section();
        let seg = PcsSegment::homogeneous_beam(0.3, &sec, Twist::from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]), ANGULAR_ONLY);
        let mut heavy_tip = seg.clone();
        heavy_tip.length = 0.2;
        let rod = PcsRod::new(vec![seg, heavy_tip]);
        let base = RigidLink {
            mass: 1.0,
            inertia_cog: Matrix3::identity() * 0.01,
            cog_offset: Vector3::zeros(),
            joint: Joint::fixed(Pose::identity()),
        };
        let model = HybridModel::new(
            vec![Body::rigid("base", None, base), Body::rod("rod", 0, rod, Pose::identity())],
            Vector3::new(0.0, 0.0, -9.81),
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        let mut st = GeneralizedState::neutral(&model);
        let ns = model.n_strains();
        for _ in 0..50 {
            let f = |s: &GeneralizedState| {
                let g = generalized_gravity(&model, s).unwrap();
                let p = passive_generalized_force(&model, s).unwrap();
                (g + p).rows(6, ns).into_owned()
            };
            let r = f(&st);
            if r.amax() < 1e-12 {
                break;
            }
            let mut jac = DMatrix::zeros(ns, ns);
            for k in 0..ns {
                let mut s2 = st.clone();
                s2.q_s[k] += 1e-7;
                jac.set_column(k, &((f(&s2) - &r) / 1e-7));
            }
            let step = jac.lu().solve(&r).unwrap();
            st.q_s -= step;
        }
        assert!(st.q_s.amax() > 1e-3, "rod should sag");
        // base held by a wrench cancelling its gravity rows
        let m = mass_matrix(&model, &st).unwrap();
        let gq = generalized_gravity(&model, &st).unwrap();
        let mut support = DVector::zeros(model.dim_psi());
        support.rows_mut(0, 6).copy_from(&(-gq.rows(0, 6)));
        let acc = spd_solve(
            &m,
            &(support + passive_generalized_force(&model, &st).unwrap() - bias_vector(&model, &st).unwrap()),
        )
        .unwrap();
        assert!(acc.amax() < 1e-6, "{}", acc.amax());
    }

    #[test]
    fn singular_mass_is_rejected() {
        let mut link = asymmetric_link();
        link.mass = 1e-14;
        link.inertia_cog = Matrix3::identity() * 1e-14;
        link.cog_offset = Vector3::zeros();
        let model = free_body(link, Vector3::zeros());
        let st = GeneralizedState::neutral(&model);
        let m = mass_matrix(&model, &st).unwrap();
        assert!(spd_solve(&m, &DVector::zeros(6)).is_ok());
        // now mix scales beyond the guard
        let mut bad = m.clone();
        bad[(0, 0)] = 1.0;
        assert!(matches!(spd_solve(&bad, &DVector::zeros(6)), Err(Error::SingularMass { .. })));
    }
}
