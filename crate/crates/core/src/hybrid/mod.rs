//! The soft–rigid body tree: model description, generalized state,
//! kinematics, dynamics and time integration.

pub(crate) mod dynamics;
mod integrate;
mod kinematics;

pub use dynamics::{
    bias_vector, bias_vector_with, energies, forward_dynamics, generalized_gravity, kinetic_energy,
    mass_matrix, passive_generalized_force, potential_energy, AppliedForce, BiasOptions,
    Energies, CONDITION_LIMIT, DEFAULT_FD_STEP,
};
pub use integrate::{integrate, Inputs, Trajectory, BLOWUP_NORM};
pub use kinematics::{fk_all, frame_jacobian, point_jacobian, Kinematics};

use std::collections::HashSet;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::muscle::MusclePath;
use crate::pcs::PcsRod;
use crate::rigid::{JointKind, RigidLink};
use crate::se3::Pose;

pub type BodyId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum BodyKind {
    Rigid(RigidLink),
    /// A PCS rod whose base frame sits at `mount` relative to the parent
    /// attachment frame.
    Rod { rod: PcsRod, mount: Pose },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub parent: Option<BodyId>,
    /// Attachment arclength when the parent is a rod (`None` means the tip).
    pub parent_arclen: Option<f64>,
    pub kind: BodyKind,
}

impl Body {
    pub fn rigid(name: impl Into<String>, parent: Option<BodyId>, link: RigidLink) -> Self {
        Self {
            name: name.into(),
            parent,
            parent_arclen: None,
            kind: BodyKind::Rigid(link),
        }
    }

    pub fn rod(name: impl Into<String>, parent: BodyId, rod: PcsRod, mount: Pose) -> Self {
        Self {
            name: name.into(),
            parent: Some(parent),
            parent_arclen: None,
            kind: BodyKind::Rod { rod, mount },
        }
    }

    pub fn as_rod(&self) -> Option<&PcsRod> {
        match &self.kind {
            BodyKind::Rod { rod, .. } => Some(rod),
            BodyKind::Rigid(_) => None,
        }
    }
}

/// A point fixed in a body frame; on rods the frame is the microsolid at
/// `arclen` (the tip when `None`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPoint {
    pub body: BodyId,
    pub arclen: Option<f64>,
    pub local: Vector3<f64>,
}

impl BodyPoint {
    pub fn new(body: BodyId, local: Vector3<f64>) -> Self {
        Self {
            body,
            arclen: None,
            local,
        }
    }

    pub fn on_rod(body: BodyId, arclen: f64, local: Vector3<f64>) -> Self {
        Self {
            body,
            arclen: Some(arclen),
            local,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub label: String,
    pub point: BodyPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub label: String,
    /// Aggregation key for reporting, e.g. one group per foot.
    pub group: String,
    pub point: BodyPoint,
    pub mu: f64,
}

/// Column layout of the generalized velocity `ψ = (η₀, q̇R, q̇S)`.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    joint_col: Vec<Option<usize>>,
    strain_col: Vec<Option<usize>>,
    n_r: usize,
    n_s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub bodies: Vec<Body>,
    pub gravity: Vector3<f64>,
    pub markers: Vec<Marker>,
    pub contacts: Vec<ContactPoint>,
    pub muscles: Vec<MusclePath>,
    layout: Layout,
}

impl HybridModel {
    /// Validates the tree and derives the coordinate layout. Bodies must be
    /// listed parents-first with the floating base at index 0.
    pub fn new(
        bodies: Vec<Body>,
        gravity: Vector3<f64>,
        markers: Vec<Marker>,
        contacts: Vec<ContactPoint>,
        muscles: Vec<MusclePath>,
    ) -> Result<Self> {
        let layout = validate_tree(&bodies)?;
        let model = Self {
            bodies,
            gravity,
            markers,
            contacts,
            muscles,
            layout,
        };
        model.validate_references()?;
        Ok(model)
    }

    pub fn n_joints(&self) -> usize {
        self.layout.n_r
    }

    pub fn n_strains(&self) -> usize {
        self.layout.n_s
    }

    pub fn dim_psi(&self) -> usize {
        6 + self.layout.n_r + self.layout.n_s
    }

    /// Column of `body`'s joint rate in `ψ`, if it has a moving joint.
    pub fn joint_column(&self, body: BodyId) -> Option<usize> {
        self.layout.joint_col[body]
    }

    /// First column of `body`'s strain rates in `ψ`, if it is a rod.
    pub fn strain_column(&self, body: BodyId) -> Option<usize> {
        self.layout.strain_col[body]
    }

    pub fn body_id(&self, name: &str) -> Result<BodyId> {
        self.bodies
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBody(name.to_string()))
    }

    pub fn check_body(&self, body: BodyId) -> Result<()> {
        if body < self.bodies.len() {
            Ok(())
        } else {
            Err(Error::UnknownBody(format!("#{body}")))
        }
    }

    /// Is `ancestor` on the path from the root to `body` (inclusive)?
    pub fn is_ancestor(&self, ancestor: BodyId, body: BodyId) -> bool {
        let mut cur = Some(body);
        while let Some(b) = cur {
            if b == ancestor {
                return true;
            }
            cur = self.bodies[b].parent;
        }
        false
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| match &b.kind {
                BodyKind::Rigid(l) => l.mass,
                BodyKind::Rod { rod, .. } => rod
                    .segments
                    .iter()
                    .map(|s| s.inertia_density[(3, 3)] * s.length)
                    .sum(),
            })
            .sum()
    }

    /// Labels of the distinct contact groups, in first-appearance order.
    pub fn contact_groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.contacts {
            if !out.contains(&c.group) {
                out.push(c.group.clone());
            }
        }
        out
    }

    pub fn check_point(&self, p: &BodyPoint) -> Result<()> {
        self.check_body(p.body)?;
        if !p.local.iter().all(|x| x.is_finite()) {
            return Err(Error::validation("point local position must be finite"));
        }
        match (&self.bodies[p.body].kind, p.arclen) {
            (BodyKind::Rigid(_), Some(_)) => Err(Error::validation(format!(
                "point on rigid body `{}` must not carry an arclength",
                self.bodies[p.body].name
            ))),
            (BodyKind::Rod { rod, .. }, Some(s)) => rod.locate(s).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn validate_references(&self) -> Result<()> {
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::validation("gravity must be finite"));
        }
        let mut labels = HashSet::new();
        for m in &self.markers {
            if !labels.insert(m.label.as_str()) {
                return Err(Error::validation(format!("duplicate marker label `{}`", m.label)));
            }
            self.check_point(&m.point)?;
        }
        let mut labels = HashSet::new();
        for c in &self.contacts {
            if !labels.insert(c.label.as_str()) {
                return Err(Error::validation(format!("duplicate contact label `{}`", c.label)));
            }
            if !(c.mu > 0.0 && c.mu.is_finite()) {
                return Err(Error::validation(format!("contact `{}` needs mu > 0", c.label)));
            }
            self.check_point(&c.point)?;
        }
        for m in &self.muscles {
            m.validate()?;
            for p in &m.via_points {
                self.check_point(p)?;
            }
        }
        Ok(())
    }
}

fn validate_tree(bodies: &[Body]) -> Result<Layout> {
    let Some(root) = bodies.first() else {
        return Err(Error::validation("model has no bodies"));
    };
    match &root.kind {
        BodyKind::Rigid(l) if root.parent.is_none() && l.joint.kind == JointKind::Fixed => {
            if l.joint.parent_frame != Pose::identity() {
                return Err(Error::validation("the floating base joint frame must be the identity"));
            }
        }
        _ => {
            return Err(Error::validation(
                "body 0 must be the floating base: a parentless rigid link with a fixed joint",
            ))
        }
    }
    let mut names = HashSet::new();
    let mut joint_col = Vec::with_capacity(bodies.len());
    let mut rod_len = Vec::with_capacity(bodies.len());
    let mut n_r = 0;
    for (i, b) in bodies.iter().enumerate() {
        if !names.insert(b.name.as_str()) {
            return Err(Error::validation(format!("duplicate body name `{}`", b.name)));
        }
        if i > 0 {
            match b.parent {
                Some(p) if p < i => {
                    if let Some(s) = b.parent_arclen {
                        match &bodies[p].kind {
                            BodyKind::Rod { rod, .. } => {
                                rod.locate(s)?;
                            }
                            BodyKind::Rigid(_) => {
                                return Err(Error::validation(format!(
                                    "body `{}` gives an arclength on rigid parent `{}`",
                                    b.name, bodies[p].name
                                )))
                            }
                        }
                    }
                }
                Some(_) => {
                    return Err(Error::validation(format!(
                        "body `{}` must be listed after its parent",
                        b.name
                    )))
                }
                None => {
                    return Err(Error::validation(format!(
                        "body `{}` has no parent; only one root is allowed",
                        b.name
                    )))
                }
            }
        }
        match &b.kind {
            BodyKind::Rigid(l) => {
                l.validate()?;
                if i > 0 && l.joint.dof() == 1 {
                    joint_col.push(Some(6 + n_r));
                    n_r += 1;
                } else {
                    joint_col.push(None);
                }
                rod_len.push(None);
            }
            BodyKind::Rod { rod, mount } => {
                rod.validate()?;
                if !mount.is_valid() {
                    return Err(Error::validation(format!("rod `{}` mount is not a valid pose", b.name)));
                }
                joint_col.push(None);
                rod_len.push(Some(rod.n_active()));
            }
        }
    }
    let mut strain_col = Vec::with_capacity(bodies.len());
    let mut n_s = 0;
    for len in rod_len {
        match len {
            Some(k) => {
                strain_col.push(Some(6 + n_r + n_s));
                n_s += k;
            }
            None => strain_col.push(None),
        }
    }
    Ok(Layout {
        joint_col,
        strain_col,
        n_r,
        n_s,
    })
}

/// Configuration `{H₀, qR, qS}` with generalized velocity and acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub base_pose: Pose,
    pub q_r: DVector<f64>,
    pub q_s: DVector<f64>,
    pub psi: DVector<f64>,
    pub psi_dot: DVector<f64>,
}

impl GeneralizedState {
    /// Identity base, joints at zero, rods at their neutral strains, at rest.
    pub fn neutral(model: &HybridModel) -> Self {
        let mut q_s = Vec::with_capacity(model.n_strains());
        for b in &model.bodies {
            if let BodyKind::Rod { rod, .. } = &b.kind {
                for (i, k) in rod.active_components() {
                    q_s.push(rod.segments[i].neutral_strain.to_vector()[k]);
                }
            }
        }
        let n = model.dim_psi();
        Self {
            base_pose: Pose::identity(),
            q_r: DVector::zeros(model.n_joints()),
            q_s: DVector::from_vec(q_s),
            psi: DVector::zeros(n),
            psi_dot: DVector::zeros(n),
        }
    }

    pub fn check_dims(&self, model: &HybridModel) -> Result<()> {
        let checks = [
            ("qR", model.n_joints(), self.q_r.len()),
            ("qS", model.n_strains(), self.q_s.len()),
            ("psi", model.dim_psi(), self.psi.len()),
            ("psi_dot", model.dim_psi(), self.psi_dot.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        Ok(())
    }

    /// Stacked `(qR, qS)`.
    pub fn shape_coords(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.q_r.len() + self.q_s.len());
        v.rows_mut(0, self.q_r.len()).copy_from(&self.q_r);
        v.rows_mut(self.q_r.len(), self.q_s.len()).copy_from(&self.q_s);
        v
    }

    pub fn set_shape_coords(&mut self, v: &DVector<f64>) {
        let nr = self.q_r.len();
        self.q_r.copy_from(&v.rows(0, nr));
        self.q_s.copy_from(&v.rows(nr, self.q_s.len()));
    }

    pub fn is_finite(&self) -> bool {
        self.base_pose.rotation.iter().all(|x| x.is_finite())
            && self.base_pose.position.iter().all(|x| x.is_finite())
            && self.q_r.iter().all(|x| x.is_finite())
            && self.q_s.iter().all(|x| x.is_finite())
            && self.psi.iter().all(|x| x.is_finite())
            && self.psi_dot.iter().all(|x| x.is_finite())
    }
}

/// Per-rod copies with the strain coordinates of `q_s` written in.
pub(crate) fn configured_rods(model: &HybridModel, q_s: &DVector<f64>) -> Result<Vec<Option<PcsRod>>> {
    if q_s.len() != model.n_strains() {
        return Err(Error::DimensionMismatch {
            what: "qS",
            expected: model.n_strains(),
            got: q_s.len(),
        });
    }
    let base = 6 + model.n_joints();
    model
        .bodies
        .iter()
        .enumerate()
        .map(|(i, b)| match &b.kind {
            BodyKind::Rod { rod, .. } => {
                let mut r = rod.clone();
                let start = model.layout.strain_col[i].expect("rod has strain columns") - base;
                r.set_active_coords(&q_s.as_slice()[start..start + r.n_active()])?;
                Ok(Some(r))
            }
            BodyKind::Rigid(_) => Ok(None),
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_models;
