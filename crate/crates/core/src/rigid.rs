//! Rigid links connected by one-degree-of-freedom joints.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::se3::{skew, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    /// Zero-DOF weld, e.g. a prosthesis socket.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    /// Offset of the joint frame in the parent frame.
    pub parent_frame: Pose,
}

impl Joint {
    pub fn revolute(axis: Vector3<f64>, parent_frame: Pose) -> Self {
        Self {
            kind: JointKind::Revolute,
            axis,
            parent_frame,
        }
    }

    pub fn prismatic(axis: Vector3<f64>, parent_frame: Pose) -> Self {
        Self {
            kind: JointKind::Prismatic,
            axis,
            parent_frame,
        }
    }

    pub fn fixed(parent_frame: Pose) -> Self {
        Self {
            kind: JointKind::Fixed,
            axis: Vector3::z(),
            parent_frame,
        }
    }

    pub fn dof(&self) -> usize {
        match self.kind {
            JointKind::Fixed => 0,
            _ => 1,
        }
    }

    /// Child-frame twist generated by a unit joint rate.
    pub fn motion_subspace(&self) -> Vector6<f64> {
        let a = self.axis;
        match self.kind {
            JointKind::Revolute => Vector6::new(a.x, a.y, a.z, 0.0, 0.0, 0.0),
            JointKind::Prismatic => Vector6::new(0.0, 0.0, 0.0, a.x, a.y, a.z),
            JointKind::Fixed => Vector6::zeros(),
        }
    }

    /// Motion across the joint alone, without the parent offset.
    pub fn motion(&self, coord: f64) -> Pose {
        match self.kind {
            JointKind::Revolute => Pose::from_axis_angle(&self.axis, coord),
            JointKind::Prismatic => Pose::from_translation(self.axis * coord),
            JointKind::Fixed => Pose::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.parent_frame.is_valid() {
            return Err(Error::validation("joint parent_frame is not a valid pose"));
        }
        if self.kind != JointKind::Fixed && (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "joint axis must be unit length, got norm {}",
                self.axis.norm()
            )));
        }
        Ok(())
    }
}

/// `parent_frame · motion(coord)`.
pub fn joint_transform(j: &Joint, coord: f64) -> Pose {
    j.parent_frame * j.motion(coord)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidLink {
    pub mass: f64,
    pub inertia_cog: Matrix3<f64>,
    /// Centre of gravity in the body frame.
    pub cog_offset: Vector3<f64>,
    pub joint: Joint,
}

impl RigidLink {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(Error::validation(format!("mass must be non-negative, got {}", self.mass)));
        }
        let i = &self.inertia_cog;
        if (i - i.transpose()).amax() > 1e-9 * (1.0 + i.amax()) {
            return Err(Error::validation("inertia_cog must be symmetric"));
        }
        let mut eig: Vec<f64> = i.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let tol = 1e-12 * (1.0 + i.amax());
        if eig[0] < -tol {
            return Err(Error::validation("inertia_cog must be positive semidefinite"));
        }
        if eig[0] + eig[1] < eig[2] - tol {
            return Err(Error::validation(
                "inertia_cog principal moments violate the triangle inequality",
            ));
        }
        self.joint.validate()
    }
}

/// `diag(I_G, m·E)`: the spatial inertia expressed at the centre of gravity.
pub fn link_spatial_inertia(l: &RigidLink) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&l.inertia_cog);
    m.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * l.mass));
    m
}

/// Spatial inertia of the link about its body frame origin,
/// `Ad(G⁻¹)ᵀ · diag(I_G, mE) · Ad(G⁻¹)` with `G` the translation to the CoG.
pub fn body_spatial_inertia(l: &RigidLink) -> Matrix6<f64> {
    shift_inertia(&link_spatial_inertia(l), &l.cog_offset)
}

/// Re-expresses a spatial inertia given at a frame translated by `offset`
/// (in body coordinates) at the body origin.
pub fn shift_inertia(at_offset: &Matrix6<f64>, offset: &Vector3<f64>) -> Matrix6<f64> {
    let to_offset = Pose::from_translation(*offset).inverse().adjoint();
    to_offset.transpose() * at_offset * to_offset
}

/// Mass and centre of mass encoded in a body-frame spatial inertia
/// `[[I_o, m ĉ], [−m ĉ, m E]]`.
pub fn mass_and_center(inertia: &Matrix6<f64>) -> (f64, Vector3<f64>) {
    let m = inertia[(3, 3)];
    if m <= 0.0 {
        return (0.0, Vector3::zeros());
    }
    let upper = inertia.fixed_view::<3, 3>(0, 3).into_owned();
    let c = Vector3::new(upper[(2, 1)], upper[(0, 2)], upper[(1, 0)]) / m;
    (m, c)
}

/// `m·ĉ` block helper used by tests and the composite-inertia check.
pub fn coupling_block(mass: f64, c: &Vector3<f64>) -> Matrix3<f64> {
    skew(c) * mass
}
