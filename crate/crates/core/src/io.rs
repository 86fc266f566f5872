//! Model documents (JSON) and column-labelled trajectory tables (CSV).
//!
//! Model documents reference bodies by name. Twists, strains and
//! generalized velocities are always written angular part first.
//! Table numbers use 17 significant digits so every value reads back
//! bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{Body, BodyKind, BodyPoint, ContactPoint, GeneralizedState, HybridModel, Marker};
use crate::ik::MarkerFrame;
use crate::muscle::{MuscleParams, MusclePath};
use crate::pcs::{PcsRod, PcsSegment};
use crate::rigid::{Joint, JointKind, RigidLink};
use crate::se3::{Pose, Twist};

pub const SCHEMA_VERSION: u32 = 1;

/// Names of the six twist components in storage order.
pub const TWIST_COMPONENTS: [&str; 6] = ["wx", "wy", "wz", "vx", "vy", "vz"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub gravity: [f64; 3],
    pub bodies: Vec<BodyDoc>,
    #[serde(default)]
    pub markers: Vec<MarkerDoc>,
    #[serde(default)]
    pub contacts: Vec<ContactDoc>,
    #[serde(default)]
    pub muscles: Vec<MuscleDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub rotation: [[f64; 3]; 3],
    pub position: [f64; 3],
}

/// A 6×6 matrix given either by its diagonal or in full (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum Matrix6Doc {
    Diagonal([f64; 6]),
    Full([[f64; 6]; 6]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKindDoc {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub kind: JointKindDoc,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default = "identity_pose")]
    pub parent_frame: PoseDoc,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn identity_pose() -> PoseDoc {
    pose_doc(&Pose::identity())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidDoc {
    pub mass: f64,
    pub inertia_cog: [[f64; 3]; 3],
    pub cog_offset: [f64; 3],
    pub joint: JointDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDoc {
    pub length: f64,
    pub neutral_strain: [f64; 6],
    /// Current strain; inactive components stay at this value. Defaults to
    /// `neutral_strain`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strain: Option<[f64; 6]>,
    pub stiffness: Matrix6Doc,
    pub damping: Matrix6Doc,
    pub inertia_density: Matrix6Doc,
    pub active_mask: [bool; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodDoc {
    #[serde(default = "identity_pose")]
    pub mount: PoseDoc,
    #[serde(default = "default_quadrature")]
    pub quadrature_order: usize,
    pub segments: Vec<SegmentDoc>,
}

fn default_quadrature() -> usize {
    crate::pcs::DEFAULT_QUADRATURE_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDoc {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_arclen: Option<f64>,
    /// Exactly one of `rigid` and `rod` is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigid: Option<RigidDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rod: Option<RodDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDoc {
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arclen: Option<f64>,
    pub local: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerDoc {
    pub label: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arclen: Option<f64>,
    pub local: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactDoc {
    pub label: String,
    pub group: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arclen: Option<f64>,
    pub local: [f64; 3],
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn default_mu() -> f64 {
    crate::contact::DEFAULT_MU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleParamsDoc {
    pub f_max: f64,
    pub l_opt: f64,
    pub width: f64,
    pub v_max: f64,
    pub tau_ac: f64,
    pub tau_da: f64,
    pub u_mvc: f64,
    #[serde(default = "default_fv_curvature")]
    pub fv_curvature: f64,
    #[serde(default = "default_fv_eccentric")]
    pub fv_eccentric: f64,
}

fn default_fv_curvature() -> f64 {
    0.25
}

fn default_fv_eccentric() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleDoc {
    pub name: String,
    pub via_points: Vec<PointDoc>,
    pub params: MuscleParamsDoc,
}

fn pose_doc(p: &Pose) -> PoseDoc {
    let r = &p.rotation;
    PoseDoc {
        rotation: [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]],
        position: p.position.into(),
    }
}

fn pose_from(doc: &PoseDoc, what: &str) -> Result<Pose> {
    let r = Matrix3::from_fn(|i, j| doc.rotation[i][j]);
    let p = Pose::new(r, Vector3::from(doc.position));
    if !p.is_valid() {
        return Err(Error::validation(format!("{what}: rotation is not orthonormal")));
    }
    Ok(p)
}

fn matrix6_doc(m: &Matrix6<f64>) -> Matrix6Doc {
    let off_diagonal = (0..6).any(|i| (0..6).any(|j| i != j && m[(i, j)] != 0.0));
    if off_diagonal {
        Matrix6Doc::Full(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
    } else {
        Matrix6Doc::Diagonal(std::array::from_fn(|i| m[(i, i)]))
    }
}

fn matrix6_from(doc: &Matrix6Doc) -> Matrix6<f64> {
    match doc {
        Matrix6Doc::Diagonal(d) => Matrix6::from_diagonal(&nalgebra::Vector6::from_column_slice(d)),
        Matrix6Doc::Full(rows) => Matrix6::from_fn(|i, j| rows[i][j]),
    }
}

fn point_doc(model: &HybridModel, p: &BodyPoint) -> PointDoc {
    PointDoc {
        body: model.bodies[p.body].name.clone(),
        arclen: p.arclen,
        local: p.local.into(),
    }
}

fn point_from(ids: &BTreeMap<&str, usize>, body: &str, arclen: Option<f64>, local: [f64; 3]) -> Result<BodyPoint> {
    let body = *ids.get(body).ok_or_else(|| Error::UnknownBody(body.to_string()))?;
    Ok(BodyPoint {
        body,
        arclen,
        local: Vector3::from(local),
    })
}

impl ModelDocument {
    pub fn from_model(model: &HybridModel) -> Self {
        let bodies = model
            .bodies
            .iter()
            .map(|b| {
                let (rigid, rod) = match &b.kind {
                    BodyKind::Rigid(link) => (Some(RigidDoc {
                        mass: link.mass,
                        inertia_cog: std::array::from_fn(|i| std::array::from_fn(|j| link.inertia_cog[(i, j)])),
                        cog_offset: link.cog_offset.into(),
                        joint: JointDoc {
                            kind: match link.joint.kind {
                                JointKind::Revolute => JointKindDoc::Revolute,
                                JointKind::Prismatic => JointKindDoc::Prismatic,
                                JointKind::Fixed => JointKindDoc::Fixed,
                            },
                            axis: link.joint.axis.into(),
                            parent_frame: pose_doc(&link.joint.parent_frame),
                        },
                    }), None),
                    BodyKind::Rod { rod, mount } => (None, Some(RodDoc {
                        mount: pose_doc(mount),
                        quadrature_order: rod.quadrature_order,
                        segments: rod
                            .segments
                            .iter()
                            .map(|s| SegmentDoc {
                                length: s.length,
                                neutral_strain: s.neutral_strain.to_array(),
                                strain: (s.strain != s.neutral_strain).then(|| s.strain.to_array()),
                                stiffness: matrix6_doc(&s.stiffness),
                                damping: matrix6_doc(&s.damping),
                                inertia_density: matrix6_doc(&s.inertia_density),
                                active_mask: s.active_mask,
                            })
                            .collect(),
                    })),
                };
                BodyDoc {
                    name: b.name.clone(),
                    parent: b.parent.map(|p| model.bodies[p].name.clone()),
                    parent_arclen: b.parent_arclen,
                    rigid,
                    rod,
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            gravity: model.gravity.into(),
            bodies,
            markers: model
                .markers
                .iter()
                .map(|m| {
                    let p = point_doc(model, &m.point);
                    MarkerDoc {
                        label: m.label.clone(),
                        body: p.body,
                        arclen: p.arclen,
                        local: p.local,
                    }
                })
                .collect(),
            contacts: model
                .contacts
                .iter()
                .map(|c| {
                    let p = point_doc(model, &c.point);
                    ContactDoc {
                        label: c.label.clone(),
                        group: c.group.clone(),
                        body: p.body,
                        arclen: p.arclen,
                        local: p.local,
                        mu: c.mu,
                    }
                })
                .collect(),
            muscles: model
                .muscles
                .iter()
                .map(|m| MuscleDoc {
                    name: m.name.clone(),
                    via_points: m.via_points.iter().map(|p| point_doc(model, p)).collect(),
                    params: MuscleParamsDoc {
                        f_max: m.params.f_max,
                        l_opt: m.params.l_opt,
                        width: m.params.width,
                        v_max: m.params.v_max,
                        tau_ac: m.params.tau_ac,
                        tau_da: m.params.tau_da,
                        u_mvc: m.params.u_mvc,
                        fv_curvature: m.params.fv_curvature,
                        fv_eccentric: m.params.fv_eccentric,
                    },
                })
                .collect(),
        }
    }

    /// Resolves names and validates every invariant of the model.
    pub fn to_model(&self) -> Result<HybridModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut bodies = Vec::with_capacity(self.bodies.len());
        for (i, b) in self.bodies.iter().enumerate() {
            let parent = match &b.parent {
                None => None,
                Some(name) => Some(*ids.get(name.as_str()).ok_or_else(|| {
                    Error::validation(format!("body `{}`: parent `{name}` must be defined earlier", b.name))
                })?),
            };
            let kind = match (&b.rigid, &b.rod) {
                (Some(r), None) => {
                    let j = &r.joint;
                    let frame = pose_from(&j.parent_frame, &format!("body `{}` joint", b.name))?;
                    let axis = Vector3::from(j.axis);
                    let joint = match j.kind {
                        JointKindDoc::Revolute => Joint::revolute(axis, frame),
                        JointKindDoc::Prismatic => Joint::prismatic(axis, frame),
                        JointKindDoc::Fixed => Joint::fixed(frame),
                    };
                    BodyKind::Rigid(RigidLink {
                        mass: r.mass,
                        inertia_cog: Matrix3::from_fn(|i, j| r.inertia_cog[i][j]),
                        cog_offset: Vector3::from(r.cog_offset),
                        joint,
                    })
                }
                (None, Some(r)) => {
                    let segments = r
                        .segments
                        .iter()
                        .map(|s| {
                            let neutral = Twist::from_slice(&s.neutral_strain);
                            PcsSegment {
                                length: s.length,
                                strain: s.strain.map(|v| Twist::from_slice(&v)).unwrap_or(neutral),
                                neutral_strain: neutral,
                                stiffness: matrix6_from(&s.stiffness),
                                damping: matrix6_from(&s.damping),
                                inertia_density: matrix6_from(&s.inertia_density),
                                active_mask: s.active_mask,
                            }
                        })
                        .collect();
                    BodyKind::Rod {
                        rod: PcsRod {
                            segments,
                            quadrature_order: r.quadrature_order,
                        },
                        mount: pose_from(&r.mount, &format!("rod `{}` mount", b.name))?,
                    }
                }
                _ => {
                    return Err(Error::validation(format!(
                        "body `{}` must have exactly one of `rigid` and `rod`",
                        b.name
                    )))
                }
            };
            if ids.insert(b.name.as_str(), i).is_some() {
                return Err(Error::validation(format!("duplicate body name `{}`", b.name)));
            }
            bodies.push(Body {
                name: b.name.clone(),
                parent,
                parent_arclen: b.parent_arclen,
                kind,
            });
        }
        let markers = self
            .markers
            .iter()
            .map(|m| {
                Ok(Marker {
                    label: m.label.clone(),
                    point: point_from(&ids, &m.body, m.arclen, m.local)?,
                })
            })
            .collect::<Result<_>>()?;
        let contacts = self
            .contacts
            .iter()
            .map(|c| {
                Ok(ContactPoint {
                    label: c.label.clone(),
                    group: c.group.clone(),
                    point: point_from(&ids, &c.body, c.arclen, c.local)?,
                    mu: c.mu,
                })
            })
            .collect::<Result<_>>()?;
        let muscles = self
            .muscles
            .iter()
            .map(|m| {
                let p = &m.params;
                Ok(MusclePath {
                    name: m.name.clone(),
                    via_points: m.via_points.iter().map(|v| point_from(&ids, &v.body, v.arclen, v.local)).collect::<Result<_>>()?,
                    params: MuscleParams {
                        f_max: p.f_max,
                        l_opt: p.l_opt,
                        width: p.width,
                        v_max: p.v_max,
                        tau_ac: p.tau_ac,
                        tau_da: p.tau_da,
                        u_mvc: p.u_mvc,
                        fv_curvature: p.fv_curvature,
                        fv_eccentric: p.fv_eccentric,
                    },
                })
            })
            .collect::<Result<_>>()?;
        HybridModel::new(bodies, Vector3::from(self.gravity), markers, contacts, muscles)
    }
}

fn parse_error(location: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        location: location.into(),
        message: e.to_string(),
    }
}

pub fn model_from_str(text: &str) -> Result<HybridModel> {
    let doc: ModelDocument = serde_json::from_str(text)
        .map_err(|e| parse_error(format!("line {} column {}", e.line(), e.column()), e))?;
    doc.to_model()
}

pub fn model_to_string(model: &HybridModel) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_model(model)).expect("model documents always serialize")
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HybridModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    model_from_str(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn save_model(model: &HybridModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(model) + "\n")?;
    Ok(())
}

/// A numeric table with a header row. The first column is `time` for all
/// trajectory tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error("header", format!("missing column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        self.column("time")
    }

    /// Strictly increasing time with constant spacing (within 1e-9 s);
    /// returns the spacing, or `None` with fewer than two rows.
    pub fn check_time(&self) -> Result<Option<f64>> {
        let t = self.times()?;
        if t.len() < 2 {
            return Ok(None);
        }
        let dt = t[1] - t[0];
        for (k, w) in t.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !(step > 0.0) {
                return Err(Error::validation(format!("time not strictly increasing at row {}", k + 1)));
            }
            if (step - dt).abs() > 1e-9 {
                return Err(Error::validation(format!("non-uniform time step at row {}", k + 1)));
            }
        }
        Ok(Some(dt))
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:.16e}"))).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| parse_error("line 1", e))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| parse_error(format!("line {line}"), e))?;
            if rec.len() != header.len() {
                return Err(parse_error(format!("line {line}"), format!("expected {} fields, got {}", header.len(), rec.len())));
            }
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| parse_error(format!("line {line}, column `{}`", header[c]), e))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv_str(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Parse { location, message } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Labels of `ψ`: base twist, joint rates, then `rod.segment.component`.
pub fn coordinate_names(model: &HybridModel) -> Vec<String> {
    let mut names: Vec<String> = TWIST_COMPONENTS.iter().map(|c| format!("base.{c}")).collect();
    names.extend(shape_names(model));
    names
}

/// Labels of the shape coordinates `(qR, qS)`.
pub fn shape_names(model: &HybridModel) -> Vec<String> {
    let mut joints = Vec::new();
    let mut strains = Vec::new();
    for b in &model.bodies {
        match &b.kind {
            BodyKind::Rigid(link) if link.joint.dof() == 1 && b.parent.is_some() => joints.push(b.name.clone()),
            BodyKind::Rod { rod, .. } => {
                for (s, k) in rod.active_components() {
                    strains.push(format!("{}.{s}.{}", b.name, TWIST_COMPONENTS[k]));
                }
            }
            _ => {}
        }
    }
    joints.extend(strains);
    joints
}

const POSE_COLUMNS: [&str; 12] = [
    "base.r00", "base.r01", "base.r02", "base.r10", "base.r11", "base.r12", "base.r20", "base.r21", "base.r22", "base.px",
    "base.py", "base.pz",
];

pub fn states_to_table(model: &HybridModel, times: &[f64], states: &[GeneralizedState]) -> Table {
    let psi_names = coordinate_names(model);
    let mut header = vec!["time".to_string()];
    header.extend(POSE_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(shape_names(model).iter().map(|n| format!("q:{n}")));
    header.extend(psi_names.iter().map(|n| format!("psi:{n}")));
    header.extend(psi_names.iter().map(|n| format!("psidot:{n}")));
    let mut t = Table::new(header);
    for (time, s) in times.iter().zip(states) {
        let r = &s.base_pose.rotation;
        let mut row = vec![*time];
        row.extend((0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])));
        row.extend(s.base_pose.position.iter());
        row.extend(s.shape_coords().iter());
        row.extend(s.psi.iter());
        row.extend(s.psi_dot.iter());
        t.push(row);
    }
    t
}

pub fn table_to_states(model: &HybridModel, table: &Table) -> Result<(Vec<f64>, Vec<GeneralizedState>)> {
    let pose_idx: Vec<usize> = POSE_COLUMNS.iter().map(|c| table.column_index(c)).collect::<Result<_>>()?;
    let q_idx: Vec<usize> = shape_names(model)
        .iter()
        .map(|n| table.column_index(&format!("q:{n}")))
        .collect::<Result<_>>()?;
    let names = coordinate_names(model);
    let psi_idx: Vec<usize> = names.iter().map(|n| table.column_index(&format!("psi:{n}"))).collect::<Result<_>>()?;
    let acc_idx: Vec<usize> = names.iter().map(|n| table.column_index(&format!("psidot:{n}"))).collect::<Result<_>>()?;
    let time = table.column_index("time")?;
    let mut times = Vec::with_capacity(table.n_rows());
    let mut states = Vec::with_capacity(table.n_rows());
    for (k, row) in table.rows.iter().enumerate() {
        let mut s = GeneralizedState::neutral(model);
        let rotation = Matrix3::from_fn(|i, j| row[pose_idx[3 * i + j]]);
        s.base_pose = Pose::new(rotation, Vector3::new(row[pose_idx[9]], row[pose_idx[10]], row[pose_idx[11]]));
        if !s.base_pose.is_valid() {
            return Err(Error::validation(format!("row {}: base rotation is not orthonormal", k + 2)));
        }
        s.set_shape_coords(&DVector::from_iterator(q_idx.len(), q_idx.iter().map(|&i| row[i])));
        s.psi = DVector::from_iterator(psi_idx.len(), psi_idx.iter().map(|&i| row[i]));
        s.psi_dot = DVector::from_iterator(acc_idx.len(), acc_idx.iter().map(|&i| row[i]));
        times.push(row[time]);
        states.push(s);
    }
    Ok((times, states))
}

/// Invisible markers are written as NaN.
pub fn frames_to_table(model: &HybridModel, frames: &[MarkerFrame]) -> Table {
    let mut header = vec!["time".to_string()];
    for m in &model.markers {
        header.extend(["x", "y", "z"].iter().map(|a| format!("{}.{a}", m.label)));
    }
    let mut t = Table::new(header);
    for f in frames {
        let mut row = vec![f.time];
        for (p, &v) in f.positions.iter().zip(&f.visibility) {
            if v {
                row.extend(p.iter());
            } else {
                row.extend([f64::NAN; 3]);
            }
        }
        t.push(row);
    }
    t
}

/// A marker with any non-finite coordinate is treated as invisible.
pub fn table_to_frames(model: &HybridModel, table: &Table) -> Result<Vec<MarkerFrame>> {
    let time = table.column_index("time")?;
    let idx: Vec<[usize; 3]> = model
        .markers
        .iter()
        .map(|m| {
            Ok([
                table.column_index(&format!("{}.x", m.label))?,
                table.column_index(&format!("{}.y", m.label))?,
                table.column_index(&format!("{}.z", m.label))?,
            ])
        })
        .collect::<Result<_>>()?;
    Ok(table
        .rows
        .iter()
        .map(|row| {
            let positions: Vec<Vector3<f64>> = idx.iter().map(|c| Vector3::new(row[c[0]], row[c[1]], row[c[2]])).collect();
            let visibility = positions.iter().map(|p| p.iter().all(|v| v.is_finite())).collect();
            MarkerFrame {
                time: row[time],
                positions: positions.into_iter().map(|p| if p.iter().all(|v| v.is_finite()) { p } else { Vector3::zeros() }).collect(),
                visibility,
            }
        })
        .collect())
}

/// One `{group}.f{x,y,z}` triple per group.
pub fn grf_to_table(times: &[f64], grf: &BTreeMap<String, Vec<Vector3<f64>>>) -> Table {
    let mut header = vec!["time".to_string()];
    for g in grf.keys() {
        header.extend(["fx", "fy", "fz"].iter().map(|a| format!("{g}.{a}")));
    }
    let mut t = Table::new(header);
    for (k, time) in times.iter().enumerate() {
        let mut row = vec![*time];
        for trace in grf.values() {
            row.extend(trace[k].iter());
        }
        t.push(row);
    }
    t
}

pub fn table_to_grf(table: &Table) -> Result<BTreeMap<String, Vec<Vector3<f64>>>> {
    let mut out = BTreeMap::new();
    for h in &table.header {
        if let Some(g) = h.strip_suffix(".fx") {
            let cols = [table.column(h)?, table.column(&format!("{g}.fy"))?, table.column(&format!("{g}.fz"))?];
            let trace = (0..table.n_rows()).map(|k| Vector3::new(cols[0][k], cols[1][k], cols[2][k])).collect();
            out.insert(g.to_string(), trace);
        }
    }
    Ok(out)
}

/// Stance mask: one 0/1 column per contact label; 1 marks an active contact.
pub fn stance_to_table(model: &HybridModel, times: &[f64], active: &[Vec<usize>]) -> Table {
    let mut header = vec!["time".to_string()];
    header.extend(model.contacts.iter().map(|c| c.label.clone()));
    let mut t = Table::new(header);
    for (time, set) in times.iter().zip(active) {
        let mut row = vec![*time];
        row.extend((0..model.contacts.len()).map(|i| if set.contains(&i) { 1.0 } else { 0.0 }));
        t.push(row);
    }
    t
}

pub fn table_to_stance(model: &HybridModel, table: &Table) -> Result<Vec<Vec<usize>>> {
    let idx: Vec<usize> = model.contacts.iter().map(|c| table.column_index(&c.label)).collect::<Result<_>>()?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut set = Vec::new();
            for (i, &c) in idx.iter().enumerate() {
                match row[c] {
                    1.0 => set.push(i),
                    0.0 => {}
                    v => return Err(parse_error(format!("line {}", k + 2), format!("stance flag must be 0 or 1, got {v}"))),
                }
            }
            Ok(set)
        })
        .collect()
}

/// `time` plus one column per name.
pub fn series_to_table(times: &[f64], names: &[String], values: &[DVector<f64>]) -> Table {
    let mut header = vec!["time".to_string()];
    header.extend(names.iter().cloned());
    let mut t = Table::new(header);
    for (time, v) in times.iter().zip(values) {
        let mut row = vec![*time];
        row.extend(v.iter());
        t.push(row);
    }
    t
}

pub fn table_to_series(table: &Table, names: &[String]) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let idx: Vec<usize> = names.iter().map(|n| table.column_index(n)).collect::<Result<_>>()?;
    let times = table.times()?;
    let values = table.rows.iter().map(|r| DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i]))).collect();
    Ok((times, values))
}
