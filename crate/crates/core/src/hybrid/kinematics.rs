use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use super::{configured_rods, BodyId, BodyKind, BodyPoint, GeneralizedState, HybridModel};
use crate::error::{Error, Result};
use crate::pcs::RodFrames;
use crate::rigid::joint_transform;
use crate::se3::{skew, Pose};

enum Frame {
    Rigid { pose: Pose, jac: DMatrix<f64> },
    Rod(RodFrames),
}

/// World poses and body-frame Jacobians (with respect to `ψ`) of every body
/// for one configuration. Rod bodies answer queries at any arclength.
pub struct Kinematics {
    dim: usize,
    frames: Vec<Frame>,
}

impl Kinematics {
    pub fn new(model: &HybridModel, state: &GeneralizedState) -> Result<Self> {
        Self::from_coords(model, &state.base_pose, &state.q_r, &state.q_s)
    }

    pub fn from_coords(
        model: &HybridModel,
        base: &Pose,
        q_r: &DVector<f64>,
        q_s: &DVector<f64>,
    ) -> Result<Self> {
        if q_r.len() != model.n_joints() {
            return Err(Error::DimensionMismatch {
                what: "qR",
                expected: model.n_joints(),
                got: q_r.len(),
            });
        }
        let rods = configured_rods(model, q_s)?;
        let dim = model.dim_psi();
        let mut kin = Kinematics {
            dim,
            frames: Vec::with_capacity(model.bodies.len()),
        };
        for ((i, body), rod) in model.bodies.iter().enumerate().zip(rods) {
            let (attach_pose, attach_jac) = match body.parent {
                None => {
                    let mut jac = DMatrix::zeros(6, dim);
                    jac.view_mut((0, 0), (6, 6)).fill_with_identity();
                    (*base, jac)
                }
                Some(p) => kin.frame(p, body.parent_arclen)?,
            };
            let frame = match (&body.kind, rod) {
                (BodyKind::Rigid(link), _) => {
                    let col = model.joint_column(i);
                    let coord = col.map_or(0.0, |c| q_r[c - 6]);
                    let x = joint_transform(&link.joint, coord);
                    let mut jac = transport(&x, attach_jac);
                    if let Some(c) = col {
                        jac.column_mut(c).copy_from(&link.joint.motion_subspace());
                    }
                    Frame::Rigid {
                        pose: attach_pose * x,
                        jac,
                    }
                }
                (BodyKind::Rod { mount, .. }, Some(rod)) => {
                    let columns = rod.active_column_map(model.strain_column(i).unwrap_or(dim));
                    Frame::Rod(RodFrames::new(
                        rod,
                        attach_pose * *mount,
                        transport(mount, attach_jac),
                        &columns,
                    ))
                }
                (BodyKind::Rod { .. }, None) => unreachable!("configured_rods covers every rod"),
            };
            kin.frames.push(frame);
        }
        Ok(kin)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_bodies(&self) -> usize {
        self.frames.len()
    }

    fn get(&self, body: BodyId) -> Result<&Frame> {
        self.frames
            .get(body)
            .ok_or_else(|| Error::UnknownBody(format!("#{body}")))
    }

    /// Body frame pose; for rods, the base frame.
    pub fn body_pose(&self, body: BodyId) -> Result<Pose> {
        Ok(match self.get(body)? {
            Frame::Rigid { pose, .. } => *pose,
            Frame::Rod(r) => *r.boundary_pose(0),
        })
    }

    /// Pose of the frame a [`BodyPoint`] with this `(body, arclen)` lives in.
    pub fn frame_pose(&self, body: BodyId, arclen: Option<f64>) -> Result<Pose> {
        match self.get(body)? {
            Frame::Rigid { pose, .. } => Ok(*pose),
            Frame::Rod(r) => r.pose(arclen.unwrap_or_else(|| r.rod().length())),
        }
    }

    /// Pose and body-frame Jacobian (6×dim ψ) of a body frame.
    pub fn frame(&self, body: BodyId, arclen: Option<f64>) -> Result<(Pose, DMatrix<f64>)> {
        match self.get(body)? {
            Frame::Rigid { pose, jac } => Ok((*pose, jac.clone())),
            Frame::Rod(r) => {
                let s = arclen.unwrap_or_else(|| r.rod().length());
                Ok((r.pose(s)?, r.jacobian(s)?))
            }
        }
    }

    pub fn rod_frames(&self, body: BodyId) -> Option<&RodFrames> {
        match self.frames.get(body)? {
            Frame::Rod(r) => Some(r),
            Frame::Rigid { .. } => None,
        }
    }

    pub(crate) fn rigid_frame(&self, body: BodyId) -> Option<(&Pose, &DMatrix<f64>)> {
        match self.frames.get(body)? {
            Frame::Rigid { pose, jac } => Some((pose, jac)),
            Frame::Rod(_) => None,
        }
    }

    pub fn point_position(&self, p: &BodyPoint) -> Result<Vector3<f64>> {
        Ok(self.frame_pose(p.body, p.arclen)?.transform_point(&p.local))
    }

    /// 3×dim ψ matrix mapping `ψ` to the world-frame velocity of the point.
    pub fn point_jacobian(&self, p: &BodyPoint) -> Result<DMatrix<f64>> {
        let (pose, jac) = self.frame(p.body, p.arclen)?;
        Ok(point_rows(&pose, &jac, &p.local))
    }

    /// Position and Jacobian together, sharing one frame evaluation.
    pub fn point(&self, p: &BodyPoint) -> Result<(Vector3<f64>, DMatrix<f64>)> {
        let (pose, jac) = self.frame(p.body, p.arclen)?;
        Ok((pose.transform_point(&p.local), point_rows(&pose, &jac, &p.local)))
    }

    pub fn marker_positions(&self, model: &HybridModel) -> Result<Vec<Vector3<f64>>> {
        model
            .markers
            .iter()
            .map(|m| self.point_position(&m.point))
            .collect()
    }
}

/// `R (J_lin − r̂ J_ang)`.
pub(crate) fn point_rows(pose: &Pose, jac: &DMatrix<f64>, local: &Vector3<f64>) -> DMatrix<f64> {
    let r_hat = skew(local);
    let ang = jac.rows(0, 3);
    let lin = jac.rows(3, 3);
    let rows = pose.rotation * (lin - r_hat * ang);
    DMatrix::from_column_slice(3, rows.ncols(), rows.as_slice())
}

/// Re-expresses every column twist in the frame `x` (relative to the
/// current one): `Ad(x⁻¹) J`.
fn transport(x: &Pose, mut jac: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in jac.column_iter_mut() {
        let v = Vector6::new(col[0], col[1], col[2], col[3], col[4], col[5]);
        if v.iter().any(|c| *c != 0.0) {
            col.copy_from(&x.adjoint_inv_apply(&v));
        }
    }
    jac
}

pub fn fk_all(model: &HybridModel, state: &GeneralizedState) -> Result<Kinematics> {
    Kinematics::new(model, state)
}

pub fn point_jacobian(
    model: &HybridModel,
    state: &GeneralizedState,
    point: &BodyPoint,
) -> Result<DMatrix<f64>> {
    model.check_body(point.body)?;
    Kinematics::new(model, state)?.point_jacobian(point)
}

pub fn frame_jacobian(
    model: &HybridModel,
    state: &GeneralizedState,
    body: BodyId,
    arclen: Option<f64>,
) -> Result<(Pose, DMatrix<f64>)> {
    model.check_body(body)?;
    Kinematics::new(model, state)?.frame(body, arclen)
}

#[cfg(test)]
mod tests {
    use super::super::test_models::*;
    use super::*;
    use crate::se3::{exp_se3, log_se3, Twist};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Moves the state along `ψ` for time `h`, keeping `ψ`.
    pub(crate) fn advance(state: &GeneralizedState, h: f64) -> GeneralizedState {
        let mut out = state.clone();
        let nr = state.q_r.len();
        let ns = state.q_s.len();
        let eta = Twist::from_slice(&state.psi.as_slice()[..6]);
        out.base_pose = state.base_pose * exp_se3(&eta, h);
        out.q_r += state.psi.rows(6, nr) * h;
        out.q_s += state.psi.rows(6 + nr, ns) * h;
        out
    }

    /// Independent FK: walks the tree from the body up, multiplying one
    /// transform at a time.
    fn naive_frame(model: &HybridModel, st: &GeneralizedState, body: BodyId, arclen: Option<f64>) -> Pose {
        let rods = configured_rods(model, &st.q_s).unwrap();
        let mut chain: Vec<Pose> = Vec::new();
        let mut cur = body;
        let mut s = arclen;
        loop {
            let b = &model.bodies[cur];
            match &b.kind {
                BodyKind::Rigid(l) => {
                    if cur == 0 {
                        chain.push(st.base_pose);
                        break;
                    }
                    let coord = model.joint_column(cur).map_or(0.0, |c| st.q_r[c - 6]);
                    chain.push(l.joint.motion(coord));
                    chain.push(l.joint.parent_frame);
                }
                BodyKind::Rod { mount, .. } => {
                    let rod = rods[cur].as_ref().unwrap();
                    let mut remaining = s.unwrap_or(rod.length());
                    let mut steps = Vec::new();
                    for seg in &rod.segments {
                        let u = remaining.min(seg.length);
                        steps.push(exp_se3(&seg.strain, u));
                        remaining -= u;
                        if remaining <= 0.0 {
                            break;
                        }
                    }
                    chain.extend(steps.into_iter().rev());
                    chain.push(*mount);
                }
            }
            s = b.parent_arclen;
            cur = b.parent.unwrap();
        }
        chain.iter().rev().fold(Pose::identity(), |acc, x| acc * *x)
    }

    #[test]
    fn zero_coordinates_compose_fixed_offsets() {
        let model = branched_model();
        let mut st = GeneralizedState::neutral(&model);
        st.q_s.fill(0.0);
        let kin = fk_all(&model, &st).unwrap();
        let link = |i: usize| match &model.bodies[i].kind {
            BodyKind::Rigid(l) => l.joint.parent_frame,
            _ => unreachable!(),
        };
        let mount = |i: usize| match &model.bodies[i].kind {
            BodyKind::Rod { mount, .. } => *mount,
            _ => unreachable!(),
        };
        let p1 = link(1);
        assert_eq!(kin.body_pose(1).unwrap(), p1);
        let rod_base = p1 * mount(2);
        assert!((kin.body_pose(2).unwrap().to_homogeneous() - rod_base.to_homogeneous()).amax() < 1e-15);
        // with zero bending the rod is straight along its local x axis
        let tip = kin.frame_pose(2, None).unwrap();
        let straight = rod_base * Pose::from_translation(Vector3::new(0.25, 0.0, 0.0));
        assert!((tip.to_homogeneous() - straight.to_homogeneous()).amax() < 1e-15);
        let p3 = straight * link(3);
        assert!((kin.body_pose(3).unwrap().to_homogeneous() - p3.to_homogeneous()).amax() < 1e-15);
    }

    #[test]
    fn base_transport_is_equivariant() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let st = random_state(&model, &mut rng, 0.5);
        let g = exp_se3(&Twist::from_slice(&[0.3, -0.2, 0.9, 1.0, 2.0, -0.5]), 1.0);
        let mut moved = st.clone();
        moved.base_pose = g * st.base_pose;
        let a = fk_all(&model, &st).unwrap().marker_positions(&model).unwrap();
        let b = fk_all(&model, &moved).unwrap().marker_positions(&model).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!((g.transform_point(pa) - pb).norm() < 1e-12);
        }
    }

    #[test]
    fn markers_match_naive_fk() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let st = random_state(&model, &mut rng, 1.0);
            let kin = fk_all(&model, &st).unwrap();
            for m in &model.markers {
                let naive = naive_frame(&model, &st, m.point.body, m.point.arclen).transform_point(&m.point.local);
                let fast = kin.point_position(&m.point).unwrap();
                assert!((naive - fast).norm() < 1e-12, "{}: {naive} vs {fast}", m.label);
            }
        }
    }

    #[test]
    fn base_columns_of_base_point() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let st = random_state(&model, &mut rng, 1.0);
        let p = model.markers[0].point;
        let jac = point_jacobian(&model, &st, &p).unwrap();
        let r = st.base_pose.rotation;
        let expected_ang = -r * skew(&p.local);
        for i in 0..3 {
            for j in 0..3 {
                assert!((jac[(i, j)] - expected_ang[(i, j)]).abs() < 1e-14);
                assert!((jac[(i, j + 3)] - r[(i, j)]).abs() < 1e-14);
            }
        }
        assert!(jac.columns(6, model.dim_psi() - 6).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn columns_off_the_path_are_zero() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let st = random_state(&model, &mut rng, 1.0);
        let kin = fk_all(&model, &st).unwrap();
        let on_link5 = kin.point_jacobian(&BodyPoint::new(5, Vector3::new(0.1, 0.2, 0.3))).unwrap();
        let on_link3 = kin.point_jacobian(&BodyPoint::new(3, Vector3::new(0.1, 0.2, 0.3))).unwrap();
        let rod2 = model.strain_column(2).unwrap();
        let rod4 = model.strain_column(4).unwrap();
        for c in [model.joint_column(1).unwrap(), model.joint_column(3).unwrap(), rod2, rod2 + 5] {
            assert!(on_link5.column(c).iter().all(|&x| x == 0.0));
        }
        for c in [model.joint_column(5).unwrap(), rod4, rod4 + 5] {
            assert!(on_link3.column(c).iter().all(|&x| x == 0.0));
            assert!(on_link5.column(c).norm() > 0.0 || c == rod4 + 5);
        }
    }

    #[test]
    fn revolute_columns_are_world_axes() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let st = random_state(&model, &mut rng, 1.0);
        let kin = fk_all(&model, &st).unwrap();
        let (pose1, _) = kin.frame(1, None).unwrap();
        let (pose3, jac3) = kin.frame(3, None).unwrap();
        let c1 = model.joint_column(1).unwrap();
        let world = pose3.rotation * jac3.fixed_view::<3, 1>(0, c1);
        assert!((world - pose1.rotation * Vector3::y()).norm() < 1e-10);
    }

    #[test]
    fn point_jacobian_matches_finite_differences() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let h = 1e-6;
        for _ in 0..10 {
            let st = random_state(&model, &mut rng, 1.0);
            let kin = fk_all(&model, &st).unwrap();
            let kp = fk_all(&model, &advance(&st, h)).unwrap();
            let km = fk_all(&model, &advance(&st, -h)).unwrap();
            for p in model.markers.iter().map(|m| m.point).chain(model.contacts.iter().map(|c| c.point)) {
                let v = kin.point_jacobian(&p).unwrap() * &st.psi;
                let fd = (kp.point_position(&p).unwrap() - km.point_position(&p).unwrap()) / (2.0 * h);
                assert!((&v - fd).norm() < 1e-6 * (1.0 + fd.norm()), "{v} vs {fd}");
            }
        }
    }

    #[test]
    fn frame_jacobian_matches_finite_differences() {
        let model = branched_model();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let h = 1e-6;
        let st = random_state(&model, &mut rng, 1.0);
        for (body, s) in [(1, None), (2, Some(0.17)), (3, None), (4, Some(0.05)), (5, None)] {
            let (_, jac) = frame_jacobian(&model, &st, body, s).unwrap();
            let hp = fk_all(&model, &advance(&st, h)).unwrap().frame_pose(body, s).unwrap();
            let hm = fk_all(&model, &advance(&st, -h)).unwrap().frame_pose(body, s).unwrap();
            let fd = log_se3(&(hm.inverse() * hp)).unwrap().to_vector() / (2.0 * h);
            let eta = jac * &st.psi;
            assert!((Vector6::from_column_slice(eta.as_slice()) - fd).norm() < 1e-6 * (1.0 + fd.norm()));
        }
    }

    #[test]
    fn unknown_body_is_reported() {
        let model = branched_model();
        let st = GeneralizedState::neutral(&model);
        assert!(matches!(
            point_jacobian(&model, &st, &BodyPoint::new(9, Vector3::zeros())),
            Err(Error::UnknownBody(_))
        ));
    }
}
