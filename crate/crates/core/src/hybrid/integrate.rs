use nalgebra::{DVector, Vector3, Vector6};

use super::dynamics::{applied_generalized_force, bias_from_parts, mass_matrix_from, spd_solve, AppliedForce};
use super::kinematics::Kinematics;
use super::{GeneralizedState, HybridModel};
use crate::error::{Error, Result};
use crate::se3::{ad_apply, exp_se3, Twist};

/// States whose norm exceeds this abort the integration.
pub const BLOWUP_NORM: f64 = 1e9;

/// Actuation and external forces applied at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub tau_r: DVector<f64>,
    pub tau_s_active: DVector<f64>,
    pub forces: Vec<AppliedForce>,
}

impl Inputs {
    pub fn zero(model: &HybridModel) -> Self {
        Self {
            tau_r: DVector::zeros(model.n_joints()),
            tau_s_active: DVector::zeros(model.n_strains()),
            forces: Vec::new(),
        }
    }
}

/// Sampled solution: `states[k]` at `times[k]` with `psi_dot` filled in,
/// together with marker positions and the inputs applied at that time.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GeneralizedState>,
    pub markers: Vec<Vec<Vector3<f64>>>,
    pub inputs: Vec<Inputs>,
}

struct Derivative {
    eta0: Vector6<f64>,
    qdot: DVector<f64>,
    psi_dot: DVector<f64>,
}

fn evaluate(model: &HybridModel, state: &GeneralizedState, inputs: &Inputs) -> Result<Derivative> {
    let kin = Kinematics::new(model, state)?;
    let m = mass_matrix_from(model, &kin);
    let b = bias_from_parts(model, state, &kin, &m)?;
    let tau = applied_generalized_force(model, state, &kin, &inputs.tau_r, &inputs.tau_s_active, &inputs.forces)?;
    let psi_dot = spd_solve(&m, &(tau - b))?;
    let n = state.psi.len();
    Ok(Derivative {
        eta0: Vector6::from_column_slice(&state.psi.as_slice()[..6]),
        qdot: state.psi.rows(6, n - 6).into_owned(),
        psi_dot,
    })
}

/// `dexp⁻¹` for the right-trivialized flow `H = Hₙ·exp(Θ)`: the rate of
/// `Θ` that produces body velocity `η`, truncated after the fourth-order
/// Bernoulli term.
fn dexp_inv(theta: &Vector6<f64>, eta: &Vector6<f64>) -> Vector6<f64> {
    let t = Twist::from_vector(theta);
    let a1 = ad_apply(&t, eta);
    let a2 = ad_apply(&t, &a1);
    let a3 = ad_apply(&t, &a2);
    let a4 = ad_apply(&t, &a3);
    eta + a1 * 0.5 + a2 / 12.0 - a4 / 720.0
}

/// Classical fourth-order Runge–Kutta with Munthe-Kaas treatment of the
/// base pose, which is advanced as `H₀·exp(Θ)` with `Θ` integrated in the
/// Lie algebra. Inputs are sampled by `inputs(t, state)` at every stage.
pub fn integrate(
    model: &HybridModel,
    initial: &GeneralizedState,
    mut inputs: impl FnMut(f64, &GeneralizedState) -> Inputs,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation(format!("time step must be positive, got {dt}")));
    }
    initial.check_dims(model)?;
    let nr = model.n_joints();
    let ns = model.n_strains();
    let mut traj = Trajectory::default();
    let mut state = initial.clone();
    let mut t = 0.0;

    let stage_state = |base: &GeneralizedState, theta: &Vector6<f64>, dq: &DVector<f64>, dpsi: &DVector<f64>| {
        let mut s = base.clone();
        s.base_pose = base.base_pose * exp_se3(&Twist::from_vector(theta), 1.0);
        s.q_r += dq.rows(0, nr);
        s.q_s += dq.rows(nr, ns);
        s.psi += dpsi;
        s
    };

    for k in 0..=steps {
        let u1 = inputs(t, &state);
        let d1 = evaluate(model, &state, &u1)?;
        state.psi_dot = d1.psi_dot.clone();
        check_blowup(&state, t)?;
        let kin = Kinematics::new(model, &state)?;
        traj.markers.push(kin.marker_positions(model)?);
        traj.times.push(t);
        traj.states.push(state.clone());
        traj.inputs.push(u1);
        if k == steps {
            break;
        }

        let zero = Vector6::zeros();
        let th1 = dexp_inv(&zero, &d1.eta0);
        let s2 = stage_state(&state, &(th1 * (0.5 * dt)), &(&d1.qdot * (0.5 * dt)), &(&d1.psi_dot * (0.5 * dt)));
        let d2 = evaluate(model, &s2, &inputs(t + 0.5 * dt, &s2))?;
        let th2 = dexp_inv(&(th1 * (0.5 * dt)), &d2.eta0);
        let s3 = stage_state(&state, &(th2 * (0.5 * dt)), &(&d2.qdot * (0.5 * dt)), &(&d2.psi_dot * (0.5 * dt)));
        let d3 = evaluate(model, &s3, &inputs(t + 0.5 * dt, &s3))?;
        let th3 = dexp_inv(&(th2 * (0.5 * dt)), &d3.eta0);
        let s4 = stage_state(&state, &(th3 * dt), &(&d3.qdot * dt), &(&d3.psi_dot * dt));
        let d4 = evaluate(model, &s4, &inputs(t + dt, &s4))?;
        let th4 = dexp_inv(&(th3 * dt), &d4.eta0);

        let w = dt / 6.0;
        let theta = (th1 + th2 * 2.0 + th3 * 2.0 + th4) * w;
        let dq = (&d1.qdot + &d2.qdot * 2.0 + &d3.qdot * 2.0 + &d4.qdot) * w;
        let dpsi = (&d1.psi_dot + &d2.psi_dot * 2.0 + &d3.psi_dot * 2.0 + &d4.psi_dot) * w;
        state = stage_state(&state, &theta, &dq, &dpsi);
        t = (k + 1) as f64 * dt;
    }
    Ok(traj)
}

fn check_blowup(state: &GeneralizedState, time: f64) -> Result<()> {
    let norm = [
        state.base_pose.position.norm(),
        state.q_r.norm(),
        state.q_s.norm(),
        state.psi.norm(),
        state.psi_dot.norm(),
    ]
    .into_iter()
    .fold(0.0f64, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) });
    if norm > BLOWUP_NORM {
        return Err(Error::NumericalBlowup { time, norm });
    }
    Ok(())
}
