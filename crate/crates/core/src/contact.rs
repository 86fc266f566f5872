//! Inverse dynamics with unilateral friction-cone contacts.
//!
//! The decision vector is `x = [τR, τS, f₁ … f_k]` with world-frame contact
//! forces. The dynamics residual `Mψ̇ + b − [0; τR; τS] − J_Cᵀf` is
//! minimized in a weighted norm together with a small Tikhonov term, under
//! `‖(f_x, f_y)‖ ≤ μ f_z`. The ground normal is world `+z`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hybrid::dynamics::{bias_from, mass_matrix_from};
use crate::hybrid::{passive_generalized_force, BiasOptions, GeneralizedState, HybridModel, Kinematics};
use crate::qp::{project_soc, qp_solve_with, QpProblem, QpSettings, QpStatus};

pub const DEFAULT_BASE_WEIGHT: f64 = 1e4;
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;
pub const DEFAULT_MU: f64 = 0.8;

/// Indices into `model.contacts` whose world height and speed are both
/// within the given thresholds.
pub fn select_active_contacts(
    model: &HybridModel,
    state: &GeneralizedState,
    height_eps: f64,
    speed_eps: f64,
) -> Result<Vec<usize>> {
    state.check_dims(model)?;
    let kin = Kinematics::new(model, state)?;
    let mut out = Vec::new();
    for (i, c) in model.contacts.iter().enumerate() {
        let (pos, jac) = kin.point(&c.point)?;
        let speed = (jac * &state.psi).norm();
        if pos.z <= height_eps && speed <= speed_eps {
            out.push(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdProblem {
    pub state: GeneralizedState,
    pub active_contacts: Vec<usize>,
    /// Diagonal of W₁ over the `dim(ψ)` dynamics rows.
    pub w_residual: DVector<f64>,
    /// Diagonal of W₂ over `x`.
    pub w_reg: DVector<f64>,
    /// Replaces every contact's own μ when set.
    pub mu_override: Option<f64>,
}

impl IdProblem {
    /// Default weights: 1e4 on the base rows, 1 on actuated rows, 1e-6 on `x`.
    pub fn new(model: &HybridModel, state: GeneralizedState, active_contacts: Vec<usize>) -> Self {
        let weights = IdWeights::default();
        weights.problem(model, state, active_contacts)
    }

    fn n_x(&self, model: &HybridModel) -> usize {
        model.n_joints() + model.n_strains() + 3 * self.active_contacts.len()
    }
}

/// Scalar weight settings shared by every frame of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdWeights {
    pub base: f64,
    pub actuated: f64,
    pub regularization: f64,
    pub mu_override: Option<f64>,
}

impl Default for IdWeights {
    fn default() -> Self {
        Self {
            base: DEFAULT_BASE_WEIGHT,
            actuated: 1.0,
            regularization: DEFAULT_REGULARIZATION,
            mu_override: None,
        }
    }
}

impl IdWeights {
    pub fn problem(&self, model: &HybridModel, state: GeneralizedState, active_contacts: Vec<usize>) -> IdProblem {
        let n = model.dim_psi();
        let n_x = model.n_joints() + model.n_strains() + 3 * active_contacts.len();
        IdProblem {
            state,
            active_contacts,
            w_residual: DVector::from_fn(n, |i, _| if i < 6 { self.base } else { self.actuated }),
            w_reg: DVector::from_element(n_x, self.regularization),
            mu_override: self.mu_override,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpInfo {
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSolution {
    pub tau_r: DVector<f64>,
    /// Total rod generalized force, estimated freely.
    pub tau_s: DVector<f64>,
    /// Part of `tau_s` explained by the rod stiffness and damping.
    pub tau_s_passive: DVector<f64>,
    /// `tau_s − tau_s_passive`.
    pub tau_s_residual: DVector<f64>,
    /// `(contact index, world force)` for each active contact.
    pub forces: Vec<(usize, Vector3<f64>)>,
    /// `Mψ̇ + b − [0; τR; τS] − J_Cᵀf`.
    pub residual_dynamics: DVector<f64>,
    pub qp_info: QpInfo,
}

impl ContactSolution {
    pub fn net_force(&self) -> Vector3<f64> {
        self.forces.iter().map(|(_, f)| f).sum()
    }

    /// Summed force of the contacts in `group`.
    pub fn group_force(&self, model: &HybridModel, group: &str) -> Vector3<f64> {
        self.forces
            .iter()
            .filter(|(i, _)| model.contacts[*i].group == group)
            .map(|(_, f)| f)
            .sum()
    }
}

fn validate_problem(model: &HybridModel, p: &IdProblem) -> Result<()> {
    p.state.check_dims(model)?;
    let n = model.dim_psi();
    if p.w_residual.len() != n {
        return Err(Error::DimensionMismatch { what: "W1 diagonal", expected: n, got: p.w_residual.len() });
    }
    let n_x = p.n_x(model);
    if p.w_reg.len() != n_x {
        return Err(Error::DimensionMismatch { what: "W2 diagonal", expected: n_x, got: p.w_reg.len() });
    }
    if p.w_residual.iter().chain(p.w_reg.iter()).any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::validation("ID weights must be finite and non-negative"));
    }
    if p.w_residual.rows(0, 6).iter().any(|w| *w <= 0.0) {
        return Err(Error::validation("base-row weights must be positive"));
    }
    let mut seen = vec![false; model.contacts.len()];
    for &c in &p.active_contacts {
        if c >= model.contacts.len() || seen[c] {
            return Err(Error::validation(format!("invalid or repeated active contact {c}")));
        }
        seen[c] = true;
    }
    if let Some(mu) = p.mu_override {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::validation("friction coefficient must be positive"));
        }
    }
    Ok(())
}

pub fn id_solve(model: &HybridModel, problem: &IdProblem) -> Result<ContactSolution> {
    id_solve_with(model, problem, &QpSettings::default())
}

pub fn id_solve_with(model: &HybridModel, problem: &IdProblem, qp: &QpSettings) -> Result<ContactSolution> {
    validate_problem(model, problem)?;
    let state = &problem.state;
    let n = model.dim_psi();
    let nr = model.n_joints();
    let ns = model.n_strains();
    let nt = nr + ns;
    let k = problem.active_contacts.len();
    let n_x = nt + 3 * k;

    let kin = Kinematics::new(model, state)?;
    let m = mass_matrix_from(model, &kin);
    let b = bias_from(model, state, &kin, &m, &BiasOptions::default())?;
    let d = &m * &state.psi_dot + b;

    // B x is the generalized force produced by x
    let mut bmat = DMatrix::zeros(n, n_x);
    for i in 0..nt {
        bmat[(6 + i, i)] = 1.0;
    }
    for (j, &c) in problem.active_contacts.iter().enumerate() {
        let jac = kin.point_jacobian(&model.contacts[c].point)?;
        bmat.view_mut((0, nt + 3 * j), (n, 3)).copy_from(&jac.transpose());
    }
    let wb = DMatrix::from_fn(n, n_x, |i, j| bmat[(i, j)] * problem.w_residual[i]);
    let mut h = bmat.tr_mul(&wb);
    for i in 0..n_x {
        h[(i, i)] += problem.w_reg[i];
    }
    // exact symmetry for the solver's check
    let h = (&h + h.transpose()) * 0.5;
    let c = -wb.tr_mul(&d);

    let mus: Vec<f64> = problem
        .active_contacts
        .iter()
        .map(|&i| problem.mu_override.unwrap_or(model.contacts[i].mu))
        .collect();
    let mut qp_problem = QpProblem::new(h, c);
    for (j, &mu) in mus.iter().enumerate() {
        let s = nt + 3 * j;
        qp_problem = qp_problem.with_cone([s, s + 1, s + 2], mu);
    }
    let res = qp_solve_with(&qp_problem, qp)?;
    if matches!(res.status, QpStatus::Infeasible | QpStatus::Unbounded) {
        return Err(Error::InfeasibleOrUnbounded(format!("{:?} after {} iterations", res.status, res.iterations)));
    }

    let mut x = res.x.clone();
    // remove the solver's O(tol) cone violation
    for (j, &mu) in mus.iter().enumerate() {
        let s = nt + 3 * j;
        let f = project_soc(&Vector3::new(x[s], x[s + 1], x[s + 2]), mu);
        x.fixed_rows_mut::<3>(s).copy_from(&f);
    }
    let residual_dynamics = &d - &bmat * &x;
    let tau_s = x.rows(nr, ns).into_owned();
    let passive = passive_generalized_force(model, state)?.rows(6 + nr, ns).into_owned();
    let forces = problem
        .active_contacts
        .iter()
        .enumerate()
        .map(|(j, &c)| (c, Vector3::new(x[nt + 3 * j], x[nt + 3 * j + 1], x[nt + 3 * j + 2])))
        .collect();
    Ok(ContactSolution {
        tau_r: x.rows(0, nr).into_owned(),
        tau_s_residual: &tau_s - &passive,
        tau_s,
        tau_s_passive: passive,
        forces,
        residual_dynamics,
        qp_info: QpInfo {
            status: res.status,
            iterations: res.iterations,
            primal_res: res.primal_res,
            dual_res: res.dual_res,
        },
    })
}

/// How the active contacts of each frame are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ContactSelection {
    /// Height and speed thresholds evaluated on every frame.
    Thresholds { height_eps: f64, speed_eps: f64 },
    /// Explicit active sets, one per frame.
    Given(Vec<Vec<usize>>),
}

#[derive(Debug)]
pub struct IdFrame {
    pub time: f64,
    pub active: Vec<usize>,
    pub outcome: Result<ContactSolution>,
}

#[derive(Debug)]
pub struct IdSequence {
    pub frames: Vec<IdFrame>,
    /// Summed force per contact group and frame; NaN for failed frames.
    pub grf: BTreeMap<String, Vec<Vector3<f64>>>,
}

impl IdSequence {
    pub fn failed_frames(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.outcome.is_err())
            .map(|(i, _)| i)
            .collect()
    }

    /// Sum over every group.
    pub fn total_grf(&self) -> Vec<Vector3<f64>> {
        let n = self.frames.len();
        (0..n).map(|k| self.grf.values().map(|g| g[k]).sum()).collect()
    }
}

/// Frame-wise inverse dynamics. Frames are solved concurrently; a frame
/// whose selection or QP fails is recorded and the rest continue.
pub fn id_solve_sequence(
    model: &HybridModel,
    times: &[f64],
    states: &[GeneralizedState],
    selection: &ContactSelection,
    weights: &IdWeights,
) -> Result<IdSequence> {
    if times.len() != states.len() {
        return Err(Error::DimensionMismatch { what: "trajectory times", expected: states.len(), got: times.len() });
    }
    if let ContactSelection::Given(sets) = selection {
        if sets.len() != states.len() {
            return Err(Error::DimensionMismatch { what: "stance mask rows", expected: states.len(), got: sets.len() });
        }
    }
    let frames: Vec<IdFrame> = (0..states.len())
        .into_par_iter()
        .map(|k| {
            let active = match selection {
                ContactSelection::Thresholds { height_eps, speed_eps } => {
                    select_active_contacts(model, &states[k], *height_eps, *speed_eps)
                }
                ContactSelection::Given(sets) => Ok(sets[k].clone()),
            };
            let (active, outcome) = match active {
                Ok(a) => {
                    let p = weights.problem(model, states[k].clone(), a.clone());
                    (a, id_solve(model, &p).map_err(|e| e.at_frame(k)))
                }
                Err(e) => (Vec::new(), Err(e.at_frame(k))),
            };
            IdFrame { time: times[k], active, outcome }
        })
        .collect();
    let mut grf = BTreeMap::new();
    for g in model.contact_groups() {
        let trace = frames
            .iter()
            .map(|f| match &f.outcome {
                Ok(sol) => sol.group_force(model, &g),
                Err(_) => Vector3::from_element(f64::NAN),
            })
            .collect();
        grf.insert(g, trace);
    }
    Ok(IdSequence { frames, grf })
}
