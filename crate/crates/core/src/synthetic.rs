//! Built-in models and motion generators that produce ground-truth datasets
//! for round-trip testing of the estimation pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hybrid::dynamics::{bias_from, mass_matrix_from};
use crate::hybrid::{
    integrate, passive_generalized_force, AppliedForce, BiasOptions, Body, BodyPoint, ContactPoint,
    GeneralizedState, HybridModel, Inputs, Kinematics, Marker,
};
use crate::ik::MarkerFrame;
use crate::io::{frames_to_table, grf_to_table, series_to_table, shape_names, stance_to_table, states_to_table};
use crate::muscle::{muscle_length, MuscleParams, MusclePath};
use crate::pcs::{BeamSection, PcsRod, PcsSegment, ANGULAR_ONLY};
use crate::rigid::{mass_and_center, Joint, RigidLink};
use crate::se3::{Pose, Twist};

const GRAVITY: f64 = 9.81;
const PROSTHESIS_BEND: f64 = std::f64::consts::FRAC_PI_2;
const PROSTHESIS_BEND_LENGTH: f64 = 0.16;
const DEFAULT_MU: f64 = 0.8;

fn link(mass: f64, cog: [f64; 3], inertia: [f64; 3], joint: Joint) -> RigidLink {
    RigidLink {
        mass,
        inertia_cog: Matrix3::from_diagonal(&Vector3::from(inertia)),
        cog_offset: Vector3::from(cog),
        joint,
    }
}

fn at(x: f64, y: f64, z: f64) -> Pose {
    Pose::from_translation(Vector3::new(x, y, z))
}

/// Soft solid circular section for the prosthetic rod. The low shear
/// modulus keeps the torsional modes slow enough for a 1 ms RK4 step.
pub fn prosthesis_section() -> BeamSection {
    let r: f64 = 0.04;
    let area = std::f64::consts::PI * r * r;
    let i = std::f64::consts::PI * r.powi(4) / 4.0;
    BeamSection {
        youngs_modulus: 2.0e6,
        shear_modulus: 7.0e5,
        area,
        second_moment_y: i,
        second_moment_z: i,
        polar_moment: 2.0 * i,
        density: 1100.0,
        damping_ratio: 1e-3,
    }
}

fn point(model_bodies: &[Body], name: &str, local: [f64; 3]) -> BodyPoint {
    let id = model_bodies.iter().position(|b| b.name == name).expect("reference body");
    BodyPoint::new(id, Vector3::from(local))
}

fn rod_point(model_bodies: &[Body], name: &str, s: f64, local: [f64; 3]) -> BodyPoint {
    let id = model_bodies.iter().position(|b| b.name == name).expect("reference body");
    BodyPoint::on_rod(id, s, Vector3::from(local))
}

/// The bundled reference model: a floating pelvis with a rigid left leg
/// (hip, knee, ankle) and a right leg made of thigh and residual shank
/// (hip, knee) plus a rotating adapter carrying a six-segment angular-strain
/// rod shaped as a J (vertical pylon, forward bend, flat foot blade).
///
/// 30 generalized velocities: 6 base, 6 joints, 18 strains. 29 markers,
/// 6 contacts in group `left_foot` and 4 in group `prosthesis`, 8 muscles.
/// At zero joint angles both soles are level, 0.05 + 0.42 + 0.42 + r below
/// the pelvis origin with r the bend radius.
pub fn reference_model() -> HybridModel {
    let bend_radius = PROSTHESIS_BEND_LENGTH / PROSTHESIS_BEND;
    let sec = prosthesis_section();
    let straight = Twist::from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let curved = Twist::from_slice(&[0.0, -PROSTHESIS_BEND / PROSTHESIS_BEND_LENGTH, 0.0, 1.0, 0.0, 0.0]);
    let seg = |len: f64, strain: Twist| PcsSegment::homogeneous_beam(len, &sec, strain, ANGULAR_ONLY);
    let rod = PcsRod::new(vec![
        seg(0.07, straight),
        seg(0.07, straight),
        seg(0.07, straight),
        seg(PROSTHESIS_BEND_LENGTH / 2.0, curved),
        seg(PROSTHESIS_BEND_LENGTH / 2.0, curved),
        seg(0.12, straight),
    ]);
    // rod axis (local x) pointing down, local z forward
    let mount = Pose::new(Pose::from_axis_angle(&Vector3::y(), PROSTHESIS_BEND).rotation, Vector3::new(-0.08, 0.0, -0.04));

    let y = Vector3::y();
    let bodies = vec![
        Body::rigid("pelvis", None, link(30.0, [0.06, 0.0, 0.15], [1.2, 1.0, 0.4], Joint::fixed(Pose::identity()))),
        Body::rigid("thigh_l", Some(0), link(7.0, [0.0, 0.0, -0.18], [0.1, 0.1, 0.02], Joint::revolute(y, at(0.0, 0.09, -0.05)))),
        Body::rigid("shank_l", Some(1), link(3.2, [0.0, 0.0, -0.18], [0.04, 0.04, 0.005], Joint::revolute(y, at(0.0, 0.0, -0.42)))),
        Body::rigid("foot_l", Some(2), link(1.0, [0.04, 0.0, -0.05], [0.001, 0.004, 0.004], Joint::revolute(y, at(0.0, 0.0, -0.42)))),
        Body::rigid("thigh_r", Some(0), link(7.0, [0.0, 0.0, -0.18], [0.1, 0.1, 0.02], Joint::revolute(y, at(0.0, -0.09, -0.05)))),
        Body::rigid("shank_r", Some(4), link(1.5, [0.0, 0.0, -0.07], [0.005, 0.005, 0.002], Joint::revolute(y, at(0.0, 0.0, -0.42)))),
        Body::rigid(
            "adapter_r",
            Some(5),
            link(0.3, [0.0, 0.0, -0.02], [1e-4, 1e-4, 1e-4], Joint::revolute(Vector3::x(), at(0.0, 0.0, -0.15))),
        ),
        Body::rod("prosthesis", 6, rod, mount),
    ];

    let sole = -bend_radius;
    let rod_len = 0.21 + PROSTHESIS_BEND_LENGTH + 0.12;
    let mut markers: Vec<(String, BodyPoint)> = vec![
        ("pelvis_asis_l", point(&bodies, "pelvis", [0.1, 0.12, 0.05])),
        ("pelvis_asis_r", point(&bodies, "pelvis", [0.1, -0.12, 0.05])),
        ("pelvis_psis_l", point(&bodies, "pelvis", [-0.1, 0.05, 0.08])),
        ("pelvis_psis_r", point(&bodies, "pelvis", [-0.1, -0.05, 0.08])),
        ("sternum", point(&bodies, "pelvis", [0.12, 0.0, 0.4])),
        ("c7", point(&bodies, "pelvis", [-0.08, 0.0, 0.5])),
        ("thigh_l_front", point(&bodies, "thigh_l", [0.07, 0.0, -0.2])),
        ("thigh_l_side", point(&bodies, "thigh_l", [0.0, 0.07, -0.25])),
        ("knee_l", point(&bodies, "thigh_l", [0.0, 0.05, -0.42])),
        ("shank_l_front", point(&bodies, "shank_l", [0.05, 0.0, -0.15])),
        ("shank_l_side", point(&bodies, "shank_l", [0.0, 0.05, -0.25])),
        ("ankle_l", point(&bodies, "shank_l", [0.0, 0.04, -0.42])),
        ("heel_l", point(&bodies, "foot_l", [-0.09, 0.0, -0.05])),
        ("toe_l", point(&bodies, "foot_l", [0.13, 0.0, sole + 0.03])),
        ("meta5_l", point(&bodies, "foot_l", [0.07, 0.04, sole + 0.02])),
        ("thigh_r_front", point(&bodies, "thigh_r", [0.07, 0.0, -0.2])),
        ("thigh_r_side", point(&bodies, "thigh_r", [0.0, -0.07, -0.25])),
        ("knee_r", point(&bodies, "thigh_r", [0.0, -0.05, -0.42])),
        ("stump_front", point(&bodies, "shank_r", [0.05, 0.0, -0.08])),
        ("stump_side", point(&bodies, "shank_r", [0.0, -0.05, -0.1])),
        ("adapter", point(&bodies, "adapter_r", [0.03, -0.03, -0.02])),
    ]
    .into_iter()
    .map(|(l, p)| (l.to_string(), p))
    .collect();
    // two markers per pylon/bend segment with alternating lateral offsets
    // so that torsion is observable, plus the blade tip
    for (k, s) in [0.05, 0.12, 0.19, 0.25, 0.33, 0.41, 0.47].into_iter().enumerate() {
        let side = if k % 2 == 0 { 0.045 } else { -0.045 };
        markers.push((format!("prosthesis_{k}"), rod_point(&bodies, "prosthesis", s, [0.0, side, 0.03])));
    }
    markers.push(("prosthesis_tip".into(), rod_point(&bodies, "prosthesis", rod_len, [0.0, 0.0, 0.0])));
    let markers = markers.into_iter().map(|(label, point)| Marker { label, point }).collect();

    let mut contacts = Vec::new();
    for (k, (x, yy)) in [(-0.08, 0.03), (-0.08, -0.03), (0.02, 0.04), (0.02, -0.04), (0.12, 0.035), (0.12, -0.035)]
        .into_iter()
        .enumerate()
    {
        contacts.push(ContactPoint {
            label: format!("left_{k}"),
            group: "left_foot".into(),
            point: point(&bodies, "foot_l", [x, yy, sole]),
            mu: DEFAULT_MU,
        });
    }
    let blade_start = 0.21 + PROSTHESIS_BEND_LENGTH;
    for (k, (s, yy)) in [(blade_start + 0.01, 0.03), (blade_start + 0.01, -0.03), (rod_len - 0.01, 0.03), (rod_len - 0.01, -0.03)]
        .into_iter()
        .enumerate()
    {
        contacts.push(ContactPoint {
            label: format!("prosthesis_{k}"),
            group: "prosthesis".into(),
            point: rod_point(&bodies, "prosthesis", s, [0.0, yy, -0.02]),
            mu: DEFAULT_MU,
        });
    }

    let muscle_specs: [(&str, f64, Vec<BodyPoint>); 8] = [
        ("iliopsoas_l", 1500.0, vec![point(&bodies, "pelvis", [0.05, 0.08, 0.1]), point(&bodies, "pelvis", [0.08, 0.09, -0.06]), point(&bodies, "thigh_l", [0.02, 0.0, -0.08])]),
        ("gluteus_l", 2500.0, vec![point(&bodies, "pelvis", [-0.12, 0.07, 0.05]), point(&bodies, "thigh_l", [-0.04, 0.02, -0.12])]),
        ("vasti_l", 3000.0, vec![point(&bodies, "thigh_l", [0.04, 0.0, -0.15]), point(&bodies, "thigh_l", [0.06, 0.0, -0.4]), point(&bodies, "shank_l", [0.05, 0.0, -0.06])]),
        ("hamstrings_l", 2000.0, vec![point(&bodies, "pelvis", [-0.08, 0.07, -0.05]), point(&bodies, "thigh_l", [-0.05, 0.0, -0.38]), point(&bodies, "shank_l", [-0.03, 0.0, -0.06])]),
        ("gastrocnemius_l", 2000.0, vec![point(&bodies, "thigh_l", [-0.03, 0.0, -0.38]), point(&bodies, "shank_l", [-0.05, 0.0, -0.2]), point(&bodies, "foot_l", [-0.06, 0.0, -0.03])]),
        ("tibialis_l", 900.0, vec![point(&bodies, "shank_l", [0.03, 0.0, -0.12]), point(&bodies, "shank_l", [0.04, 0.0, -0.4]), point(&bodies, "foot_l", [0.08, 0.0, -0.04])]),
        ("rectus_r", 1200.0, vec![point(&bodies, "pelvis", [0.06, -0.1, -0.04]), point(&bodies, "thigh_r", [0.06, 0.0, -0.4]), point(&bodies, "shank_r", [0.04, 0.0, -0.08])]),
        ("hamstrings_r", 1500.0, vec![point(&bodies, "pelvis", [-0.08, -0.07, -0.05]), point(&bodies, "thigh_r", [-0.05, 0.0, -0.38]), point(&bodies, "shank_r", [-0.03, 0.0, -0.08])]),
    ];
    let gravity = Vector3::new(0.0, 0.0, -GRAVITY);
    let skeleton = HybridModel::new(bodies.clone(), gravity, markers, contacts, vec![]).expect("reference model is valid");
    let rest = GeneralizedState::neutral(&skeleton);
    let muscles = muscle_specs
        .into_iter()
        .map(|(name, f_max, via_points)| {
            let mut m = MusclePath {
                name: name.into(),
                via_points,
                params: MuscleParams {
                    f_max,
                    l_opt: 1.0,
                    width: 0.5,
                    v_max: 10.0,
                    tau_ac: 0.015,
                    tau_da: 0.05,
                    u_mvc: 1.0,
                    fv_curvature: 0.25,
                    fv_eccentric: 1.5,
                },
            };
            m.params.l_opt = muscle_length(&skeleton, &rest, &m).expect("reference muscle geometry");
            m
        })
        .collect();
    let mut model = skeleton;
    model.muscles = muscles;
    model
}

/// A conservative pendulum with a two-segment bent rod hanging from its
/// tip, attached to a free-floating base. Without damping or inputs the
/// total energy is a constant of motion.
pub fn pendulum_rod_model() -> HybridModel {
    let sec = BeamSection {
        youngs_modulus: 2.0e6,
        shear_modulus: 0.8e6,
        area: 4.0e-4,
        second_moment_y: 1.5e-8,
        second_moment_z: 1.2e-8,
        polar_moment: 2.7e-8,
        density: 1200.0,
        damping_ratio: 0.0,
    };
    let neutral = Twist::from_slice(&[0.0, 2.0, 0.0, 1.0, 0.0, 0.0]);
    let rod = PcsRod::new(vec![
        PcsSegment::homogeneous_beam(0.12, &sec, neutral, ANGULAR_ONLY),
        PcsSegment::homogeneous_beam(0.12, &sec, neutral, ANGULAR_ONLY),
    ]);
    let bodies = vec![
        Body::rigid("base", None, link(2.0, [0.02, -0.01, -0.1], [0.04, 0.06, 0.03], Joint::fixed(Pose::identity()))),
        Body::rigid(
            "arm",
            Some(0),
            link(0.5, [0.02, -0.01, -0.1], [0.01, 0.015, 0.0075], Joint::revolute(Vector3::y(), at(0.0, 0.0, -0.1))),
        ),
        Body::rod("rod", 1, rod, at(0.0, 0.0, -0.2)),
    ];
    let markers = vec![
        Marker { label: "base".into(), point: BodyPoint::new(0, Vector3::new(0.05, 0.0, 0.0)) },
        Marker { label: "arm".into(), point: BodyPoint::new(1, Vector3::new(0.0, 0.03, -0.15)) },
        Marker { label: "rod_tip".into(), point: BodyPoint::on_rod(2, 0.24, Vector3::zeros()) },
    ];
    HybridModel::new(bodies, Vector3::new(0.0, 0.0, -GRAVITY), markers, vec![], vec![]).expect("pendulum model is valid")
}

/// Initial condition used for the energy check: arm swung out, rod bent
/// away from its neutral shape, arm spinning.
pub fn pendulum_initial_state(model: &HybridModel) -> GeneralizedState {
    let mut st = GeneralizedState::neutral(model);
    st.q_r[0] = 0.8;
    st.q_s[1] += 0.5;
    st.psi[6] = -1.0;
    st
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Standing still on every contact under constant equilibrium inputs.
    Static,
    /// Released from bent joints with no inputs and no contact.
    PendulumDrop,
    /// Alternating single-group stance under prescribed contact forces,
    /// with joints tracking sinusoidal references.
    ScriptedGait,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Static, Scenario::PendulumDrop, Scenario::ScriptedGait];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::PendulumDrop => "pendulum-drop",
            Scenario::ScriptedGait => "scripted-gait",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown scenario `{s}` (expected static, pendulum-drop or scripted-gait)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSettings {
    pub seed: u64,
    /// Standard deviation of the i.i.d. Gaussian marker noise, metres.
    pub noise_sigma: f64,
    pub duration: f64,
    /// Integration step.
    pub dt: f64,
    /// Every `sample_every`-th integration step is recorded.
    pub sample_every: usize,
    /// Duration of one single-support window of the gait.
    pub stance_duration: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_sigma: 1e-3,
            duration: 1.2,
            dt: 1e-3,
            sample_every: 5,
            stance_duration: 0.4,
        }
    }
}

/// Ground truth of one synthetic run, sampled at `dt · sample_every`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: Scenario,
    pub times: Vec<f64>,
    pub states: Vec<GeneralizedState>,
    pub markers_true: Vec<Vec<Vector3<f64>>>,
    /// Noisy marker observations.
    pub markers: Vec<MarkerFrame>,
    pub tau_r: Vec<DVector<f64>>,
    /// Active rod force on top of the rod's own stiffness and damping.
    pub tau_s_active: Vec<DVector<f64>>,
    /// `(contact index, world force)` of every loaded contact.
    pub contact_forces: Vec<Vec<(usize, Vector3<f64>)>>,
    /// Summed contact force per group; zero outside that group's stance.
    pub grf: BTreeMap<String, Vec<Vector3<f64>>>,
    /// Loaded contacts per frame.
    pub stance: Vec<Vec<usize>>,
}

/// File names written by [`write_dataset`].
pub const DATASET_FILES: [&str; 6] = ["markers.csv", "markers_true.csv", "states.csv", "grf.csv", "torques.csv", "stance.csv"];

/// Writes the dataset tables into `dir` and returns their paths.
pub fn write_dataset(model: &HybridModel, ds: &Dataset, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let truth_frames: Vec<MarkerFrame> = ds
        .times
        .iter()
        .zip(&ds.markers_true)
        .map(|(t, m)| MarkerFrame::all_visible(*t, m.clone()))
        .collect();
    let torques: Vec<DVector<f64>> = ds
        .tau_r
        .iter()
        .zip(&ds.tau_s_active)
        .map(|(r, s)| DVector::from_iterator(r.len() + s.len(), r.iter().chain(s.iter()).copied()))
        .collect();
    let tables = [
        frames_to_table(model, &ds.markers),
        frames_to_table(model, &truth_frames),
        states_to_table(model, &ds.times, &ds.states),
        grf_to_table(&ds.times, &ds.grf),
        series_to_table(&ds.times, &shape_names(model), &torques),
        stance_to_table(model, &ds.times, &ds.stance),
    ];
    let mut out = Vec::new();
    for (name, table) in DATASET_FILES.iter().zip(tables) {
        let path = dir.join(name);
        table.write(&path)?;
        out.push(path);
    }
    Ok(out)
}

/// Runs `scenario` on `model` from its neutral configuration, lifted so the
/// lowest contact touches `z = 0`.
pub fn run_synthetic(model: &HybridModel, scenario: Scenario, settings: &SyntheticSettings) -> Result<Dataset> {
    if !(settings.duration > 0.0 && settings.dt > 0.0 && settings.sample_every > 0 && settings.noise_sigma >= 0.0) {
        return Err(Error::validation("synthetic run needs positive duration, dt and sampling, and non-negative noise"));
    }
    let steps = (settings.duration / settings.dt).round() as usize;
    let initial = standing_state(model)?;
    let driver = match scenario {
        Scenario::Static => Driver::Hold(Hold::new(model, &initial)?),
        Scenario::PendulumDrop => Driver::Suspended(Suspension::new(&initial)),
        Scenario::ScriptedGait => Driver::Gait(Gait::new(model, &initial, settings.stance_duration)?),
    };
    let start = match &driver {
        Driver::Suspended(s) => s.start.clone(),
        _ => initial,
    };
    let mut failure = None;
    let traj = integrate(
        model,
        &start,
        |t, s| match driver.inputs(model, t, s) {
            Ok(u) => u,
            Err(e) => {
                failure.get_or_insert(e);
                Inputs::zero(model)
            }
        },
        settings.dt,
        steps,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }

    let noise = Normal::new(0.0, settings.noise_sigma).map_err(|e| Error::validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let groups = model.contact_groups();
    let mut ds = Dataset {
        scenario,
        times: Vec::new(),
        states: Vec::new(),
        markers_true: Vec::new(),
        markers: Vec::new(),
        tau_r: Vec::new(),
        tau_s_active: Vec::new(),
        contact_forces: Vec::new(),
        grf: groups.iter().map(|g| (g.clone(), Vec::new())).collect(),
        stance: Vec::new(),
    };
    for k in (0..traj.times.len()).step_by(settings.sample_every) {
        let t = traj.times[k];
        let state = &traj.states[k];
        let forces = driver.contact_forces(model, t, state)?;
        for g in &groups {
            let total: Vector3<f64> = forces.iter().filter(|(c, _)| &model.contacts[*c].group == g).map(|(_, f)| f).sum();
            ds.grf.get_mut(g).expect("group").push(total);
        }
        let noisy: Vec<Vector3<f64>> = traj.markers[k]
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| if settings.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 }))
            .collect();
        ds.times.push(t);
        ds.states.push(state.clone());
        ds.markers_true.push(traj.markers[k].clone());
        ds.markers.push(MarkerFrame::all_visible(t, noisy));
        ds.tau_r.push(traj.inputs[k].tau_r.clone());
        ds.tau_s_active.push(traj.inputs[k].tau_s_active.clone());
        ds.stance.push(forces.iter().map(|(c, _)| *c).collect());
        ds.contact_forces.push(forces);
    }
    Ok(ds)
}

/// Neutral configuration translated vertically so that the lowest contact
/// point (or the base origin, without contacts) sits at `z = 0`.
pub fn standing_state(model: &HybridModel) -> Result<GeneralizedState> {
    let mut st = GeneralizedState::neutral(model);
    if model.contacts.is_empty() {
        return Ok(st);
    }
    let kin = Kinematics::new(model, &st)?;
    let mut lowest = f64::INFINITY;
    for c in &model.contacts {
        lowest = lowest.min(kin.point_position(&c.point)?.z);
    }
    st.base_pose.position.z -= lowest;
    Ok(st)
}

/// World position of the whole-body centre of mass, read from the base
/// block of the mass matrix.
pub fn center_of_mass(model: &HybridModel, state: &GeneralizedState) -> Result<Vector3<f64>> {
    let kin = Kinematics::new(model, state)?;
    Ok(com_from(model, state, &kin))
}

fn com_from(model: &HybridModel, state: &GeneralizedState, kin: &Kinematics) -> Vector3<f64> {
    let m = mass_matrix_from(model, kin);
    let (_, c) = mass_and_center(&m.fixed_view::<6, 6>(0, 0).into_owned());
    state.base_pose.transform_point(&c)
}

/// Contact forces, joint torques and active rod forces that hold a
/// configuration at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEquilibrium {
    pub tau_r: DVector<f64>,
    pub tau_s_active: DVector<f64>,
    pub forces: Vec<(usize, Vector3<f64>)>,
}

/// Loads every contact as evenly as the six base equations allow: the
/// forces are the least-norm correction of an equal vertical share that
/// balances the base rows exactly, and the actuation then balances every
/// other row. Fails when a force leaves its friction cone.
pub fn static_equilibrium(model: &HybridModel, state: &GeneralizedState) -> Result<StaticEquilibrium> {
    if model.contacts.is_empty() {
        return Err(Error::validation("static equilibrium needs at least one contact"));
    }
    let mut rest = state.clone();
    rest.psi.fill(0.0);
    rest.psi_dot.fill(0.0);
    let kin = Kinematics::new(model, &rest)?;
    let m = mass_matrix_from(model, &kin);
    let d = bias_from(model, &rest, &kin, &m, &BiasOptions::default())?;
    let k = model.contacts.len();
    let n = model.dim_psi();
    let mut jt = DMatrix::zeros(n, 3 * k);
    for (i, c) in model.contacts.iter().enumerate() {
        jt.view_mut((0, 3 * i), (n, 3)).copy_from(&kin.point_jacobian(&c.point)?.transpose());
    }
    let weight = model.total_mass() * model.gravity.norm();
    let f_nom = DVector::from_fn(3 * k, |i, _| if i % 3 == 2 { weight / k as f64 } else { 0.0 });
    // tangential components cost 100x more than normal ones
    let w_inv = DVector::from_fn(3 * k, |i, _| if i % 3 == 2 { 1.0 } else { 0.01 });
    let a = jt.rows(0, 6).into_owned();
    let r = d.rows(0, 6) - &a * &f_nom;
    let a_w = DMatrix::from_fn(6, 3 * k, |i, j| a[(i, j)] * w_inv[j]);
    let gram = &a_w * a.transpose();
    let y = gram
        .cholesky()
        .ok_or_else(|| Error::validation("contacts do not span the base wrench"))?
        .solve(&r);
    let f = f_nom + a_w.transpose() * y;
    let forces: Vec<(usize, Vector3<f64>)> = (0..k).map(|i| (i, Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]))).collect();
    for (i, fi) in &forces {
        let mu = model.contacts[*i].mu;
        if fi.z <= 0.0 || fi.xy().norm() >= mu * fi.z {
            return Err(Error::validation(format!(
                "contact `{}` cannot hold the pose inside its friction cone",
                model.contacts[*i].label
            )));
        }
    }
    let tau = d - &jt * &f - passive_generalized_force(model, &rest)?;
    let nr = model.n_joints();
    Ok(StaticEquilibrium {
        tau_r: tau.rows(6, nr).into_owned(),
        tau_s_active: tau.rows(6 + nr, model.n_strains()).into_owned(),
        forces,
    })
}

fn kin_forces(applied: &[(usize, Vector3<f64>)], model: &HybridModel) -> Vec<AppliedForce> {
    applied
        .iter()
        .map(|(c, f)| AppliedForce { point: model.contacts[*c].point, force: *f })
        .collect()
}

/// Spring–damper pull of `point` towards the world position `anchor`.
fn anchor_force(kin: &Kinematics, state: &GeneralizedState, point: &BodyPoint, anchor: &Vector3<f64>, k: f64, d: f64) -> Result<Vector3<f64>> {
    let (p, jac) = kin.point(point)?;
    Ok((anchor - p) * k - (jac * &state.psi) * d)
}

enum Driver {
    Hold(Hold),
    Suspended(Suspension),
    Gait(Gait),
}

impl Driver {
    fn inputs(&self, model: &HybridModel, t: f64, state: &GeneralizedState) -> Result<Inputs> {
        match self {
            Driver::Hold(h) => h.inputs(model, state),
            Driver::Suspended(s) => s.inputs(model, state),
            Driver::Gait(g) => g.inputs(model, t, state),
        }
    }

    fn contact_forces(&self, model: &HybridModel, t: f64, state: &GeneralizedState) -> Result<Vec<(usize, Vector3<f64>)>> {
        match self {
            Driver::Hold(h) => h.contact_forces(model, &Kinematics::new(model, state)?, state),
            Driver::Suspended(_) => Ok(Vec::new()),
            Driver::Gait(g) => g.contact_forces(model, t, state),
        }
    }
}

const GROUND_STIFFNESS: f64 = 5e3;
const GROUND_DAMPING: f64 = 50.0;
const HOLD_KP: f64 = 100.0;
const HOLD_KD: f64 = 0.5;

/// Static equilibrium inputs plus feedback that vanishes at the
/// equilibrium: joint PD towards the initial angles and a spring–damper
/// tying each contact to its initial ground point.
struct Hold {
    eq: StaticEquilibrium,
    anchors: Vec<Vector3<f64>>,
    q0: DVector<f64>,
}

impl Hold {
    fn new(model: &HybridModel, initial: &GeneralizedState) -> Result<Self> {
        let eq = static_equilibrium(model, initial)?;
        let kin = Kinematics::new(model, initial)?;
        let anchors = model.contacts.iter().map(|c| kin.point_position(&c.point)).collect::<Result<_>>()?;
        Ok(Self { eq, anchors, q0: initial.q_r.clone() })
    }

    fn contact_forces(&self, model: &HybridModel, kin: &Kinematics, state: &GeneralizedState) -> Result<Vec<(usize, Vector3<f64>)>> {
        self.eq
            .forces
            .iter()
            .map(|(c, f)| {
                let pull = anchor_force(kin, state, &model.contacts[*c].point, &self.anchors[*c], GROUND_STIFFNESS, GROUND_DAMPING)?;
                Ok((*c, f + pull))
            })
            .collect()
    }

    fn inputs(&self, model: &HybridModel, state: &GeneralizedState) -> Result<Inputs> {
        let kin = Kinematics::new(model, state)?;
        let forces = self.contact_forces(model, &kin, state)?;
        let tau_r = DVector::from_fn(model.n_joints(), |j, _| {
            self.eq.tau_r[j] - HOLD_KP * (state.q_r[j] - self.q0[j]) - HOLD_KD * state.psi[6 + j]
        });
        Ok(Inputs {
            tau_r,
            tau_s_active: self.eq.tau_s_active.clone(),
            forces: kin_forces(&forces, model),
        })
    }
}

const SUSPENSION_STIFFNESS: f64 = 1e5;
const SUSPENSION_DAMPING: f64 = 1e3;

/// The base hangs from three spring–dampers while the limbs, released from
/// bent joints, swing freely under gravity.
struct Suspension {
    start: GeneralizedState,
    points: Vec<(BodyPoint, Vector3<f64>)>,
}

impl Suspension {
    fn new(initial: &GeneralizedState) -> Self {
        let mut start = initial.clone();
        for (j, q) in start.q_r.iter_mut().enumerate() {
            *q += if j % 2 == 0 { 0.4 } else { -0.3 };
        }
        let points = [[0.1, 0.0, 0.0], [-0.1, 0.1, 0.0], [-0.1, -0.1, 0.0]]
            .into_iter()
            .map(|p| {
                let bp = BodyPoint::new(0, Vector3::from(p));
                (bp, start.base_pose.transform_point(&bp.local))
            })
            .collect();
        Self { start, points }
    }

    fn inputs(&self, model: &HybridModel, state: &GeneralizedState) -> Result<Inputs> {
        let kin = Kinematics::new(model, state)?;
        let mut u = Inputs::zero(model);
        for (point, anchor) in &self.points {
            let force = anchor_force(&kin, state, point, anchor, SUSPENSION_STIFFNESS, SUSPENSION_DAMPING)?;
            u.forces.push(AppliedForce { point: *point, force });
        }
        Ok(u)
    }
}

/// Scripted gait: stance windows cycle through the contact groups; the
/// stance group's contacts push along the line to the whole-body centre of
/// mass, so the contact forces exert no moment about it. Joint and strain
/// actuation cancel the contact forces' generalized force on the limbs and
/// drive the joints towards sinusoidal references.
struct Gait {
    groups: Vec<Vec<usize>>,
    /// Fore–aft position of each contact inside its group, in `[-1, 1]`.
    roll: Vec<f64>,
    q0: DVector<f64>,
    stance: f64,
    weight: f64,
}

const GAIT_AMPLITUDE: f64 = 0.15;
const GAIT_KP: f64 = 50.0;
const GAIT_KD: f64 = 2.0;
/// Horizontal-to-vertical force ratio is capped at this fraction of μ.
const CONE_MARGIN: f64 = 0.5;

impl Gait {
    fn new(model: &HybridModel, initial: &GeneralizedState, stance: f64) -> Result<Self> {
        if model.contacts.is_empty() {
            return Err(Error::validation("scripted gait needs contact points"));
        }
        if !(stance > 0.0) {
            return Err(Error::validation("stance duration must be positive"));
        }
        let kin = Kinematics::new(model, initial)?;
        let mut roll = vec![0.0; model.contacts.len()];
        let groups: Vec<Vec<usize>> = model
            .contact_groups()
            .iter()
            .map(|g| (0..model.contacts.len()).filter(|&i| &model.contacts[i].group == g).collect())
            .collect();
        for members in &groups {
            let xs: Vec<f64> = members
                .iter()
                .map(|&i| kin.point_position(&model.contacts[i].point).map(|p| p.x))
                .collect::<Result<_>>()?;
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (&i, x) in members.iter().zip(&xs) {
                roll[i] = if hi - lo > 1e-9 { 2.0 * (x - lo) / (hi - lo) - 1.0 } else { 0.0 };
            }
        }
        Ok(Self {
            groups,
            roll,
            q0: initial.q_r.clone(),
            stance,
            weight: model.total_mass() * model.gravity.norm(),
        })
    }

    fn phase(&self, t: f64) -> (usize, f64) {
        let window = (t / self.stance).floor().max(0.0);
        let group = window as usize % self.groups.len();
        (group, (t - window * self.stance) / self.stance)
    }

    fn contact_forces_with(&self, model: &HybridModel, t: f64, state: &GeneralizedState, kin: &Kinematics) -> Result<Vec<(usize, Vector3<f64>)>> {
        let (group, s) = self.phase(t);
        let members = &self.groups[group];
        let total = self.weight * (1.0 + 0.3 * (2.0 * std::f64::consts::PI * s).cos());
        let shares: Vec<f64> = members.iter().map(|&i| 1.0 + 0.6 * (2.0 * s - 1.0) * self.roll[i]).collect();
        let sum: f64 = shares.iter().sum();
        let com = com_from(model, state, kin);
        let mut out = Vec::with_capacity(members.len());
        for (&i, share) in members.iter().zip(shares) {
            let p = kin.point_position(&model.contacts[i].point)?;
            let mut dir = com - p;
            if dir.z <= 0.0 {
                return Err(Error::validation("centre of mass fell below a stance contact"));
            }
            dir /= dir.z;
            let cap = CONE_MARGIN * model.contacts[i].mu;
            let horizontal = dir.xy().norm();
            if horizontal > cap {
                dir.x *= cap / horizontal;
                dir.y *= cap / horizontal;
            }
            out.push((i, dir * (total * share / sum)));
        }
        Ok(out)
    }

    fn contact_forces(&self, model: &HybridModel, t: f64, state: &GeneralizedState) -> Result<Vec<(usize, Vector3<f64>)>> {
        let kin = Kinematics::new(model, state)?;
        self.contact_forces_with(model, t, state, &kin)
    }

    fn inputs(&self, model: &HybridModel, t: f64, state: &GeneralizedState) -> Result<Inputs> {
        let kin = Kinematics::new(model, state)?;
        let forces = self.contact_forces_with(model, t, state, &kin)?;
        let nr = model.n_joints();
        let ns = model.n_strains();
        let mut limb = DVector::zeros(model.dim_psi());
        for (i, f) in &forces {
            limb.gemv_tr(1.0, &kin.point_jacobian(&model.contacts[*i].point)?, f, 1.0);
        }
        let omega = 2.0 * std::f64::consts::PI / (self.stance * self.groups.len() as f64);
        let tau_r = DVector::from_fn(nr, |j, _| {
            let phi = std::f64::consts::PI * (j % 2) as f64 + 0.3 * j as f64;
            let q_ref = self.q0[j] + GAIT_AMPLITUDE * (omega * t + phi).sin();
            let qd_ref = GAIT_AMPLITUDE * omega * (omega * t + phi).cos();
            GAIT_KP * (q_ref - state.q_r[j]) + GAIT_KD * (qd_ref - state.psi[6 + j]) - limb[6 + j]
        });
        let tau_s_active = -limb.rows(6 + nr, ns);
        Ok(Inputs {
            tau_r,
            tau_s_active,
            forces: kin_forces(&forces, model),
        })
    }
}
