//! Small models shared by the unit tests of the hybrid module and its users.

use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use rand::Rng;

use super::*;
use crate::pcs::{BeamSection, PcsSegment, ALL_COMPONENTS, ANGULAR_ONLY};
use crate::rigid::Joint;
use crate::se3::{exp_se3, Twist};

pub fn test_section() -> BeamSection {
    BeamSection {
        youngs_modulus: 2.0e6,
        shear_modulus: 0.8e6,
        area: 4.0e-4,
        second_moment_y: 1.5e-8,
        second_moment_z: 1.2e-8,
        polar_moment: 2.7e-8,
        density: 1200.0,
        damping_ratio: 0.0,
    }
}

pub fn test_link(mass: f64, joint: Joint) -> RigidLink {
    RigidLink {
        mass,
        inertia_cog: Matrix3::from_diagonal(&Vector3::new(0.02, 0.03, 0.015)) * mass,
        cog_offset: Vector3::new(0.02, -0.01, -0.1),
        joint,
    }
}

fn offset(v: [f64; 6]) -> Pose {
    exp_se3(&Twist::from_slice(&v), 1.0)
}

/// base → link1 (revolute) → rod2 (2 angular segments) → link3 (revolute at tip);
/// base → rod4 (one full-strain segment) → link5 (prismatic at mid-length).
pub fn branched_model() -> HybridModel {
    let sec = test_section();
    let bend = Twist::from_slice(&[0.3, 1.2, -0.2, 1.0, 0.0, 0.0]);
    let rod2 = PcsRod::new(vec![
        PcsSegment::homogeneous_beam(0.15, &sec, bend, ANGULAR_ONLY),
        PcsSegment::homogeneous_beam(0.1, &sec, Twist::from_slice(&[0.0, -0.8, 0.4, 1.0, 0.0, 0.0]), ANGULAR_ONLY),
    ]);
    let rod4 = PcsRod::new(vec![PcsSegment::homogeneous_beam(
        0.2,
        &sec,
        Twist::from_slice(&[0.1, 0.5, 0.0, 1.0, 0.05, 0.0]),
        ALL_COMPONENTS,
    )]);
    let bodies = vec![
        Body::rigid("base", None, test_link(3.0, Joint::fixed(Pose::identity()))),
        Body::rigid(
            "link1",
            Some(0),
            test_link(1.0, Joint::revolute(Vector3::y(), offset([0.1, 0.0, 0.2, 0.05, 0.1, -0.1]))),
        ),
        Body::rod("rod2", 1, rod2, offset([0.0, 1.3, 0.0, 0.0, 0.0, -0.25])),
        Body::rigid(
            "link3",
            Some(2),
            test_link(0.4, Joint::revolute(Vector3::new(0.0, 0.6, 0.8), offset([0.0, 0.0, 0.3, 0.02, 0.0, 0.0]))),
        ),
        Body::rod("rod4", 0, rod4, offset([0.2, -0.1, 0.0, 0.0, -0.1, -0.05])),
        Body {
            parent_arclen: Some(0.1),
            ..Body::rigid(
                "link5",
                Some(4),
                test_link(0.3, Joint::prismatic(Vector3::x(), offset([0.0, 0.4, 0.0, 0.0, 0.03, 0.0]))),
            )
        },
    ];
    let markers = [
        ("b1", BodyPoint::new(0, Vector3::new(0.1, 0.05, 0.0))),
        ("b2", BodyPoint::new(0, Vector3::new(-0.1, 0.08, 0.05))),
        ("l1", BodyPoint::new(1, Vector3::new(0.0, 0.05, -0.2))),
        ("r2a", BodyPoint::on_rod(2, 0.07, Vector3::new(0.0, 0.02, 0.0))),
        ("r2b", BodyPoint::new(2, Vector3::new(0.0, 0.0, 0.02))),
        ("l3", BodyPoint::new(3, Vector3::new(0.05, 0.0, -0.05))),
        ("r4", BodyPoint::on_rod(4, 0.2, Vector3::new(0.01, 0.01, 0.0))),
        ("l5", BodyPoint::new(5, Vector3::new(0.0, -0.03, 0.02))),
    ]
    .into_iter()
    .map(|(l, p)| Marker { label: l.into(), point: p })
    .collect();
    let contacts = vec![
        ContactPoint {
            label: "c3".into(),
            group: "tip".into(),
            point: BodyPoint::new(3, Vector3::new(0.0, 0.0, -0.1)),
            mu: 0.8,
        },
        ContactPoint {
            label: "c2".into(),
            group: "rod".into(),
            point: BodyPoint::on_rod(2, 0.2, Vector3::zeros()),
            mu: 0.8,
        },
    ];
    HybridModel::new(bodies, Vector3::new(0.0, 0.0, -9.81), markers, contacts, vec![]).unwrap()
}

pub fn random_state(model: &HybridModel, rng: &mut impl Rng, scale: f64) -> GeneralizedState {
    let mut st = GeneralizedState::neutral(model);
    let base = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    st.base_pose = exp_se3(&Twist::from_vector(&base), 1.0);
    st.q_r = DVector::from_fn(model.n_joints(), |_, _| rng.random_range(-1.0..1.0) * scale);
    st.q_s += DVector::from_fn(model.n_strains(), |_, _| rng.random_range(-1.0..1.0) * scale);
    st.psi = DVector::from_fn(model.dim_psi(), |_, _| rng.random_range(-1.0..1.0) * scale);
    st.psi_dot = DVector::from_fn(model.dim_psi(), |_, _| rng.random_range(-1.0..1.0) * scale);
    st
}
