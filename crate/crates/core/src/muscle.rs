//! Muscle paths, Hill-type tension, activation dynamics and force sharing.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::hybrid::{BodyPoint, GeneralizedState, HybridModel, Kinematics};
use crate::qp::{qp_solve, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct MuscleParams {
    pub f_max: f64,
    pub l_opt: f64,
    /// Width of the Gaussian force–length curve, relative to `l_opt`.
    pub width: f64,
    pub v_max: f64,
    pub tau_ac: f64,
    pub tau_da: f64,
    pub u_mvc: f64,
    /// Curvature of the concentric force–velocity hyperbola.
    pub fv_curvature: f64,
    /// Force–velocity asymptote for fast lengthening.
    pub fv_eccentric: f64,
}

impl MuscleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("f_max", self.f_max),
            ("l_opt", self.l_opt),
            ("width", self.width),
            ("v_max", self.v_max),
            ("tau_ac", self.tau_ac),
            ("tau_da", self.tau_da),
            ("u_mvc", self.u_mvc),
            ("fv_curvature", self.fv_curvature),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("muscle parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.fv_eccentric >= 1.0 && self.fv_eccentric.is_finite()) {
            return Err(Error::validation("fv_eccentric must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusclePath {
    pub name: String,
    pub via_points: Vec<BodyPoint>,
    pub params: MuscleParams,
}

impl MusclePath {
    pub fn validate(&self) -> Result<()> {
        if self.via_points.len() < 2 {
            return Err(Error::validation(format!(
                "muscle `{}` needs at least two via points",
                self.name
            )));
        }
        self.params.validate()
    }
}

/// Gaussian force–length factor, 1 at `l_opt`.
pub fn force_length(p: &MuscleParams, l: f64) -> f64 {
    let x = (l - p.l_opt) / (p.width * p.l_opt);
    (-x * x).exp()
}

/// Hill force–velocity factor. Shortening (`l_dot < 0`) follows the
/// hyperbola `(1 − v)/(1 + v/k)` in `v = −l_dot/v_max` and vanishes beyond
/// `v_max`; lengthening rises towards `fv_eccentric` as `1 + (e − 1)w/(w + k)`.
pub fn force_velocity(p: &MuscleParams, l_dot: f64) -> f64 {
    let k = p.fv_curvature;
    let f = if l_dot <= 0.0 {
        let v = -l_dot / p.v_max;
        if v >= 1.0 {
            0.0
        } else {
            (1.0 - v) / (1.0 + v / k)
        }
    } else {
        let w = l_dot / p.v_max;
        1.0 + (p.fv_eccentric - 1.0) * w / (w + k)
    };
    f.clamp(0.0, 1.5)
}

/// Tension magnitude `a·F_l(l)·F_v(l̇)·F_max`; it pulls the via points
/// together, so the generalized force is `−J_ℓᵀ f`.
pub fn hill_tension(p: &MuscleParams, a: f64, l: f64, l_dot: f64) -> f64 {
    a.clamp(0.0, 1.0) * force_length(p, l) * force_velocity(p, l_dot) * p.f_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuscleState {
    pub activation: f64,
}

/// Exact solution of `ȧ = (u − a)/τ` over `dt` with `u = u_emg/u_mvc`
/// clamped to `[0, 1]` and `τ = tau_ac` when `u ≥ a`, `tau_da` otherwise.
pub fn activation_step(p: &MuscleParams, state: MuscleState, u_emg: f64, dt: f64) -> Result<MuscleState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation(format!("activation step needs dt > 0, got {dt}")));
    }
    if !(u_emg >= 0.0) {
        return Err(Error::validation(format!("EMG input must be non-negative, got {u_emg}")));
    }
    let u = (u_emg / p.u_mvc).clamp(0.0, 1.0);
    let a = state.activation.clamp(0.0, 1.0);
    let tau = if u >= a { p.tau_ac } else { p.tau_da };
    let next = u + (a - u) * (-dt / tau).exp();
    Ok(MuscleState {
        activation: next.clamp(0.0, 1.0),
    })
}

fn via_positions(kin: &Kinematics, m: &MusclePath) -> Result<Vec<Vector3<f64>>> {
    m.via_points.iter().map(|p| kin.point_position(p)).collect()
}

/// Polyline length through the world via points.
pub fn muscle_length(model: &HybridModel, state: &GeneralizedState, m: &MusclePath) -> Result<f64> {
    let kin = Kinematics::new(model, state)?;
    path_length(&kin, m)
}

fn path_length(kin: &Kinematics, m: &MusclePath) -> Result<f64> {
    let pts = via_positions(kin, m)?;
    Ok(pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum())
}

fn jacobian_row(kin: &Kinematics, m: &MusclePath) -> Result<DVector<f64>> {
    let mut row = DVector::zeros(kin.dim());
    let pts: Vec<(Vector3<f64>, DMatrix<f64>)> = m.via_points.iter().map(|p| kin.point(p)).collect::<Result<_>>()?;
    for w in pts.windows(2) {
        let d = w[1].0 - w[0].0;
        let len = d.norm();
        if len < 1e-12 {
            // coincident via points: the direction is undefined and the
            // segment contributes nothing to first order
            continue;
        }
        let e = d / len;
        row += (&w[1].1 - &w[0].1).tr_mul(&e);
    }
    Ok(row)
}

/// `J_ℓ` with one row per muscle, so that `l̇ = J_ℓ ψ`.
pub fn muscle_jacobian(model: &HybridModel, state: &GeneralizedState, muscles: &[MusclePath]) -> Result<DMatrix<f64>> {
    let kin = Kinematics::new(model, state)?;
    let mut j = DMatrix::zeros(muscles.len(), model.dim_psi());
    for (i, m) in muscles.iter().enumerate() {
        j.set_row(i, &jacobian_row(&kin, m)?.transpose());
    }
    Ok(j)
}

/// Lengths, rates and `J_ℓ` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleGeometry {
    pub lengths: DVector<f64>,
    pub rates: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

pub fn muscle_geometry(model: &HybridModel, state: &GeneralizedState, muscles: &[MusclePath]) -> Result<MuscleGeometry> {
    state.check_dims(model)?;
    let kin = Kinematics::new(model, state)?;
    let mut jacobian = DMatrix::zeros(muscles.len(), model.dim_psi());
    let mut lengths = DVector::zeros(muscles.len());
    for (i, m) in muscles.iter().enumerate() {
        lengths[i] = path_length(&kin, m)?;
        jacobian.set_row(i, &jacobian_row(&kin, m)?.transpose());
    }
    let rates = &jacobian * &state.psi;
    Ok(MuscleGeometry { lengths, rates, jacobian })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MuscleWeights {
    /// W₁ diagonal over `τR` (length `n_joints`); empty means identity.
    pub w_torque: Vec<f64>,
    /// W₂ diagonal over the tensions; empty means zero.
    pub w_tension: Vec<f64>,
}


#[derive(Debug, Clone, PartialEq)]
pub struct MuscleSolution {
    pub tensions: DVector<f64>,
    /// Upper bounds `hill_tension(a = 1)` at the current length and rate.
    pub f_max: DVector<f64>,
    /// Joint rows spanned by at least one moment arm.
    pub targeted_rows: Vec<usize>,
    /// Joint rows no muscle acts on; their targets are ignored.
    pub excluded_rows: Vec<usize>,
    /// `τR − (−J_ℓᵀ f)` on the targeted rows.
    pub residual: DVector<f64>,
    pub iterations: usize,
}

/// Distributes the joint torques `tau_r_target` over the muscles:
/// `min ½‖τ − Af‖²_{W₁} + ½‖f − f_ref‖²_{W₂}` with `0 ≤ f ≤ f_max` and `A`
/// the joint columns of `−J_ℓᵀ`.
pub fn muscle_optimize(
    model: &HybridModel,
    state: &GeneralizedState,
    tau_r_target: &DVector<f64>,
    muscles: &[MusclePath],
    f_ref: &DVector<f64>,
    weights: &MuscleWeights,
) -> Result<MuscleSolution> {
    let nm = muscles.len();
    let nr = model.n_joints();
    let checks = [
        ("torque target", nr, tau_r_target.len()),
        ("reference tensions", nm, f_ref.len()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(Error::DimensionMismatch { what, expected, got });
        }
    }
    if !weights.w_torque.is_empty() && weights.w_torque.len() != nr {
        return Err(Error::DimensionMismatch { what: "torque weights", expected: nr, got: weights.w_torque.len() });
    }
    if !weights.w_tension.is_empty() && weights.w_tension.len() != nm {
        return Err(Error::DimensionMismatch { what: "tension weights", expected: nm, got: weights.w_tension.len() });
    }
    if weights.w_torque.iter().chain(&weights.w_tension).any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::validation("muscle weights must be finite and non-negative"));
    }
    for m in muscles {
        m.validate()?;
    }
    let geo = muscle_geometry(model, state, muscles)?;
    let f_max = DVector::from_fn(nm, |i, _| hill_tension(&muscles[i].params, 1.0, geo.lengths[i], geo.rates[i]));

    let (targeted_rows, excluded_rows): (Vec<usize>, Vec<usize>) =
        (0..nr).partition(|&r| geo.jacobian.column(6 + r).amax() > 0.0);
    let t = targeted_rows.len();
    let a = DMatrix::from_fn(t, nm, |r, i| -geo.jacobian[(i, 6 + targeted_rows[r])]);
    let tau = DVector::from_fn(t, |r, _| tau_r_target[targeted_rows[r]]);
    let w1 = DVector::from_fn(t, |r, _| weights.w_torque.get(targeted_rows[r]).copied().unwrap_or(1.0));
    let w2 = DVector::from_fn(nm, |i, _| weights.w_tension.get(i).copied().unwrap_or(0.0));

    let w1a = DMatrix::from_fn(t, nm, |r, i| a[(r, i)] * w1[r]);
    let mut h = a.tr_mul(&w1a);
    for i in 0..nm {
        h[(i, i)] += w2[i];
    }
    let h = (&h + h.transpose()) * 0.5;
    let c = -w1a.tr_mul(&tau) - w2.component_mul(f_ref);
    let problem = QpProblem::new(h, c).with_bounds(DVector::zeros(nm), f_max.clone());
    let res = qp_solve(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if matches!(res.status, QpStatus::Infeasible | QpStatus::Unbounded) {
        return Err(Error::InfeasibleOrUnbounded(format!("muscle QP reported {:?}", res.status)));
    }
    let tensions = DVector::from_fn(nm, |i, _| res.x[i].clamp(0.0, f_max[i]));
    let residual = &tau - &a * &tensions;
    Ok(MuscleSolution {
        tensions,
        f_max,
        targeted_rows,
        excluded_rows,
        residual,
        iterations: res.iterations,
    })
}
