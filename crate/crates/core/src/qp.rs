//! Convex quadratic programs with box, linear-inequality and second-order
//! cone constraints, solved by an operator-splitting (ADMM) iteration.
//!
//! The problem `min ½xᵀHx + cᵀx` is rewritten as `z = Ax ∈ C`, where the
//! rows of `A` stack one identity row per finite box, three selector rows
//! per cone and the rows of the linear inequalities. Each iteration solves
//! one regularized linear system and projects onto `C`. Ruiz equilibration,
//! residual-balancing step adaptation, optional active-set polishing and
//! infeasibility certificates follow the usual OSQP scheme.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// `‖(x[i], x[j])‖ ≤ μ·x[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cone {
    pub indices: [usize; 3],
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub cones: Vec<Cone>,
    /// `A x ≤ b`.
    pub lin_ineq: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl QpProblem {
    /// Unconstrained problem; add constraints with the `with_*` builders.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            cones: Vec::new(),
            lin_ineq: None,
        }
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_cone(mut self, indices: [usize; 3], mu: f64) -> Self {
        self.cones.push(Cone { indices, mu });
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.lin_ineq = Some((a, b));
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let dims = [
            ("hessian rows", self.hessian.nrows()),
            ("hessian columns", self.hessian.ncols()),
            ("lower bounds", self.lower.len()),
            ("upper bounds", self.upper.len()),
        ];
        for (what, got) in dims {
            if got != n {
                return Err(Error::DimensionMismatch { what, expected: n, got });
            }
        }
        let h = &self.hessian;
        if h.iter().any(|v| !v.is_finite()) || self.linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("QP data must be finite"));
        }
        if (h - h.transpose()).amax() > 1e-9 * (1.0 + h.amax()) {
            return Err(Error::validation("QP Hessian must be symmetric"));
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::validation(format!("invalid bounds on variable {i}")));
            }
        }
        let mut used = vec![false; n];
        for c in &self.cones {
            if !(c.mu > 0.0 && c.mu.is_finite()) {
                return Err(Error::validation("cone parameter mu must be positive"));
            }
            for &i in &c.indices {
                if i >= n {
                    return Err(Error::validation(format!("cone index {i} out of range")));
                }
                if used[i] {
                    return Err(Error::validation("cone index sets must be disjoint"));
                }
                used[i] = true;
            }
        }
        if let Some((a, b)) = &self.lin_ineq {
            if a.ncols() != n || a.nrows() != b.len() {
                return Err(Error::DimensionMismatch {
                    what: "linear inequality",
                    expected: n,
                    got: a.ncols(),
                });
            }
            if a.iter().chain(b.iter()).any(|v| v.is_nan() || v.is_infinite() && *v < 0.0) {
                return Err(Error::validation("linear inequality data must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    /// A primal infeasibility certificate was found.
    Infeasible,
    /// A dual infeasibility certificate was found.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub scaling_iters: usize,
    pub infeasibility_tol: f64,
    pub x0: Option<DVector<f64>>,
    /// Record the objective of every (relaxed) iterate in
    /// [`QpResult::objective_trace`].
    pub record_objective: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            scaling_iters: 10,
            infeasibility_tol: 1e-6,
            x0: None,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
    /// Multipliers of the constraint rows (see [`QpResult::row_kinds`]).
    pub y: DVector<f64>,
    pub row_kinds: Vec<RowKind>,
    pub polished: bool,
    /// Objective per iteration when requested, before polishing.
    pub objective_trace: Vec<f64>,
}

/// What a constraint row of the internal `A` represents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowKind {
    Bound { var: usize },
    Cone { cone: usize, component: usize },
    Inequality { row: usize },
}

/// Euclidean projection onto `{v : ‖(v₀, v₁)‖ ≤ μ v₂}`.
pub fn project_soc(v: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let t = v.x.hypot(v.y);
    if t <= mu * v.z {
        return *v;
    }
    if mu * t <= -v.z {
        return Vector3::zeros();
    }
    let s = (mu * t + v.z) / (1.0 + mu * mu);
    let r = mu * s;
    Vector3::new(v.x * r / t, v.y * r / t, s)
}

pub fn qp_solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpResult> {
    qp_solve_with(
        p,
        &QpSettings {
            tol,
            max_iter,
            ..QpSettings::default()
        },
    )
}

/// Constraint set `C` in row space.
struct Constraints {
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    kinds: Vec<RowKind>,
    /// (first row, μ) of each cone block.
    cones: Vec<(usize, f64)>,
}

fn build_constraints(p: &QpProblem) -> Constraints {
    let n = p.dim();
    let mut rows: Vec<(DVector<f64>, f64, f64, RowKind)> = Vec::new();
    for i in 0..n {
        if p.lower[i].is_finite() || p.upper[i].is_finite() {
            let mut r = DVector::zeros(n);
            r[i] = 1.0;
            rows.push((r, p.lower[i], p.upper[i], RowKind::Bound { var: i }));
        }
    }
    let mut cones = Vec::new();
    for (k, c) in p.cones.iter().enumerate() {
        cones.push((rows.len(), c.mu));
        for (comp, &i) in c.indices.iter().enumerate() {
            let mut r = DVector::zeros(n);
            r[i] = 1.0;
            rows.push((r, f64::NEG_INFINITY, f64::INFINITY, RowKind::Cone { cone: k, component: comp }));
        }
    }
    if let Some((a, b)) = &p.lin_ineq {
        for r in 0..a.nrows() {
            rows.push((a.row(r).transpose(), f64::NEG_INFINITY, b[r], RowKind::Inequality { row: r }));
        }
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut kinds = Vec::with_capacity(m);
    for (i, (r, lo, hi, kind)) in rows.into_iter().enumerate() {
        a.set_row(i, &r.transpose());
        l[i] = lo;
        u[i] = hi;
        kinds.push(kind);
    }
    Constraints { a, l, u, kinds, cones }
}

impl Constraints {
    fn project(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            if !matches!(self.kinds[i], RowKind::Cone { .. }) {
                z[i] = z[i].clamp(self.l[i], self.u[i]);
            }
        }
        for &(start, mu) in &self.cones {
            let v = Vector3::new(z[start], z[start + 1], z[start + 2]);
            let p = project_soc(&v, mu);
            z[start] = p.x;
            z[start + 1] = p.y;
            z[start + 2] = p.z;
        }
    }

    fn is_cone_row(&self, i: usize) -> bool {
        matches!(self.kinds[i], RowKind::Cone { .. })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Modified Ruiz equilibration of `[[P, Aᵀ], [A, 0]]`. Scale factors are
/// shared inside every cone block so the cones keep their shape.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

fn equilibrate(p: &DMatrix<f64>, q: &DVector<f64>, cons: &Constraints, iters: usize, cone_vars: &[[usize; 3]]) -> Scaling {
    let n = p.nrows();
    let m = cons.a.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut ps = p.clone();
    let mut a = cons.a.clone();
    let limit = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dd = DVector::from_fn(n, |j, _| {
            let cp = ps.column(j).amax();
            let ca = if m > 0 { a.column(j).amax() } else { 0.0 };
            1.0 / limit(cp.max(ca)).sqrt()
        });
        for idx in cone_vars {
            let g = (dd[idx[0]] * dd[idx[1]] * dd[idx[2]]).cbrt();
            for &i in idx {
                dd[i] = g;
            }
        }
        let mut de = DVector::from_fn(m, |i, _| 1.0 / limit(a.row(i).amax()).sqrt());
        for &(start, _) in &cons.cones {
            let g = (de[start] * de[start + 1] * de[start + 2]).cbrt();
            for k in 0..3 {
                de[start + k] = g;
            }
        }
        for j in 0..n {
            for i in 0..n {
                ps[(i, j)] *= dd[i] * dd[j];
            }
        }
        for j in 0..n {
            for i in 0..m {
                a[(i, j)] *= de[i] * dd[j];
            }
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);
    }
    let qs = q.component_mul(&d);
    let mean_col = if n > 0 {
        (0..n).map(|j| ps.column(j).amax()).sum::<f64>() / n as f64
    } else {
        1.0
    };
    let cost = 1.0 / limit(mean_col.max(inf_norm(&qs)));
    Scaling { d, e, cost }
}

/// Solves with explicit settings.
pub fn qp_solve_with(p: &QpProblem, settings: &QpSettings) -> Result<QpResult> {
    p.validate()?;
    let n = p.dim();
    check_psd(&p.hessian)?;
    let cons = build_constraints(p);
    let m = cons.a.nrows();

    if m == 0 {
        if let Some(chol) = p.hessian.clone().cholesky() {
            let x = chol.solve(&(-&p.linear));
            let dual = inf_norm(&(&p.hessian * &x + &p.linear));
            return Ok(QpResult {
                x,
                status: QpStatus::Optimal,
                primal_res: 0.0,
                dual_res: dual,
                iterations: 0,
                y: DVector::zeros(0),
                row_kinds: Vec::new(),
                polished: false,
                objective_trace: Vec::new(),
            });
        }
    }

    let cone_vars: Vec<[usize; 3]> = p.cones.iter().map(|c| c.indices).collect();
    let sc = equilibrate(&p.hessian, &p.linear, &cons, settings.scaling_iters, &cone_vars);
    let ps = DMatrix::from_fn(n, n, |i, j| p.hessian[(i, j)] * sc.d[i] * sc.d[j] * sc.cost);
    let qs = DVector::from_fn(n, |i, _| p.linear[i] * sc.d[i] * sc.cost);
    let a_s = DMatrix::from_fn(m, n, |i, j| cons.a[(i, j)] * sc.e[i] * sc.d[j]);
    let scaled = Constraints {
        a: a_s.clone(),
        l: cons.l.component_mul(&sc.e),
        u: cons.u.component_mul(&sc.e),
        kinds: cons.kinds.clone(),
        cones: cons.cones.clone(),
    };

    let sigma = settings.sigma;
    let alpha = settings.alpha;
    let eq_row = |i: usize| !scaled.is_cone_row(i) && scaled.l[i] == scaled.u[i];
    let rho_vec = |rho: f64| DVector::from_fn(m, |i, _| if eq_row(i) { 1e3 * rho } else { rho });
    let mut rho = settings.rho;
    let mut rv = rho_vec(rho);
    let factor = |rv: &DVector<f64>| -> Result<_> {
        let mut k = &ps + DMatrix::identity(n, n) * sigma;
        let ra = DMatrix::from_fn(m, n, |i, j| a_s[(i, j)] * rv[i]);
        k.gemm_tr(1.0, &a_s, &ra, 1.0);
        k.cholesky().ok_or(Error::NotPsd)
    };
    let mut chol = factor(&rv)?;

    let mut x = match &settings.x0 {
        Some(x0) if x0.len() == n => x0.component_div(&sc.d),
        _ => DVector::zeros(n),
    };
    let mut z = &a_s * &x;
    scaled.project(&mut z);
    let mut y = DVector::zeros(m);

    let unscale_x = |x: &DVector<f64>| x.component_mul(&sc.d);
    let unscale_y = |y: &DVector<f64>| y.component_mul(&sc.e) / sc.cost;
    let unscale_z = |z: &DVector<f64>| z.component_div(&sc.e);

    let mut status = QpStatus::MaxIter;
    let mut iterations = settings.max_iter;
    let mut prim_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let check_every = 5;
    let adapt_every = 25;
    let eps_inf = settings.infeasibility_tol;
    let mut trace = Vec::new();

    for it in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();
        let rz = z.component_mul(&rv) - &y;
        let rhs = &x * sigma - &qs + a_s.tr_mul(&rz);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &a_s * &x_tilde;
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let mut z_new = &z_relaxed + y.component_div(&rv);
        scaled.project(&mut z_new);
        y += (&z_relaxed - &z_new).component_mul(&rv);
        z = z_new;
        if settings.record_objective {
            trace.push(p.objective(&unscale_x(&x)));
        }

        if it % check_every != 0 && it != settings.max_iter {
            continue;
        }
        let xu = unscale_x(&x);
        let yu = unscale_y(&y);
        let zu = unscale_z(&z);
        let ax = &cons.a * &xu;
        let px = &p.hessian * &xu;
        let aty = cons.a.tr_mul(&yu);
        prim_res = if m > 0 { inf_norm(&(&ax - &zu)) } else { 0.0 };
        dual_res = inf_norm(&(&px + &p.linear + &aty));
        // a tenth of the tolerance leaves headroom for the KKT conditions
        // measured on x instead of the splitting variable z
        let eps_p = 0.1 * settings.tol * (1.0 + inf_norm(&ax).max(inf_norm(&zu)));
        let eps_d = 0.1 * settings.tol * (1.0 + inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&p.linear)));
        if prim_res <= eps_p && dual_res <= eps_d {
            status = QpStatus::Optimal;
            iterations = it;
            break;
        }
        let dy = unscale_y(&(&y - &y_prev));
        if m > 0 && primal_certificate(&cons, &dy, eps_inf) {
            status = QpStatus::Infeasible;
            iterations = it;
            break;
        }
        let dx = unscale_x(&(&x - &x_prev));
        if dual_certificate(p, &cons, &dx, eps_inf) {
            status = QpStatus::Unbounded;
            iterations = it;
            break;
        }
        if settings.adaptive_rho && it % adapt_every == 0 && m > 0 {
            let ax_s = &a_s * &x;
            let pn = inf_norm(&(&ax_s - &z)) / inf_norm(&ax_s).max(inf_norm(&z)).max(1e-30);
            let px_s = &ps * &x;
            let aty_s = a_s.tr_mul(&y);
            let dn = inf_norm(&(&px_s + &qs + &aty_s))
                / inf_norm(&px_s).max(inf_norm(&aty_s)).max(inf_norm(&qs)).max(1e-30);
            let new_rho = (rho * (pn / dn.max(1e-30)).sqrt()).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                rho = new_rho;
                rv = rho_vec(rho);
                chol = factor(&rv)?;
            }
        }
    }

    let mut result = QpResult {
        x: unscale_x(&x),
        status,
        primal_res: prim_res,
        dual_res,
        iterations,
        y: unscale_y(&y),
        row_kinds: cons.kinds.clone(),
        polished: false,
        objective_trace: trace,
    };
    if settings.polish && matches!(status, QpStatus::Optimal | QpStatus::MaxIter) {
        let near = prim_res < 10.0 * settings.tol * (1.0 + inf_norm(&result.x)) || status == QpStatus::Optimal;
        if near {
            if let Some(better) = polish(p, &cons, &result, &unscale_z(&z)) {
                result = better;
            }
        }
    }
    Ok(result)
}

fn check_psd(h: &DMatrix<f64>) -> Result<()> {
    let n = h.nrows();
    let eps = 1e-10 * (1.0 + h.amax());
    let shifted = h + DMatrix::identity(n, n) * eps;
    shifted.cholesky().map(|_| ()).ok_or(Error::NotPsd)
}

/// `Aᵀδy ≈ 0` with a negative support function value certifies that no
/// point satisfies the constraints.
fn primal_certificate(cons: &Constraints, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = inf_norm(dy);
    if norm < 1e-12 {
        return false;
    }
    if inf_norm(&cons.a.tr_mul(dy)) > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if cons.is_cone_row(i) {
            continue;
        }
        let v = dy[i];
        if v > 0.0 {
            if cons.u[i].is_infinite() {
                if v > eps * norm {
                    return false;
                }
            } else {
                support += cons.u[i] * v;
            }
        } else if v < 0.0 {
            if cons.l[i].is_infinite() {
                if -v > eps * norm {
                    return false;
                }
            } else {
                support += cons.l[i] * v;
            }
        }
    }
    for &(start, mu) in &cons.cones {
        // δy restricted to a cone must lie in its polar cone
        let v = Vector3::new(dy[start], dy[start + 1], dy[start + 2]);
        if project_soc(&v, mu).norm() > eps * norm {
            return false;
        }
    }
    support < -eps * norm
}

/// A feasible direction of unbounded descent.
fn dual_certificate(p: &QpProblem, cons: &Constraints, dx: &DVector<f64>, eps: f64) -> bool {
    let norm = inf_norm(dx);
    if norm < 1e-12 {
        return false;
    }
    if inf_norm(&(&p.hessian * dx)) > eps * norm || p.linear.dot(dx) > -eps * norm {
        return false;
    }
    let adx = &cons.a * dx;
    for i in 0..adx.len() {
        if cons.is_cone_row(i) {
            continue;
        }
        let v = adx[i];
        if cons.u[i].is_finite() && v > eps * norm {
            return false;
        }
        if cons.l[i].is_finite() && v < -eps * norm {
            return false;
        }
    }
    for &(start, mu) in &cons.cones {
        let v = Vector3::new(adx[start], adx[start + 1], adx[start + 2]);
        if (project_soc(&v, mu) - v).norm() > eps * norm {
            return false;
        }
    }
    true
}

/// Solves the equality-constrained problem on the detected active set and
/// keeps it when it is at least as accurate and still feasible.
fn polish(p: &QpProblem, cons: &Constraints, res: &QpResult, z: &DVector<f64>) -> Option<QpResult> {
    let n = p.dim();
    let m = cons.a.nrows();
    // (row, value) pairs held with equality
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        if cons.is_cone_row(i) {
            continue;
        }
        let yi = res.y[i];
        if cons.l[i].is_finite() && z[i] - cons.l[i] < -yi {
            active.push((i, cons.l[i]));
        } else if cons.u[i].is_finite() && cons.u[i] - z[i] < yi {
            active.push((i, cons.u[i]));
        }
    }
    for &(start, mu) in &cons.cones {
        let v = Vector3::new(z[start], z[start + 1], z[start + 2]);
        let yv = Vector3::new(res.y[start], res.y[start + 1], res.y[start + 2]);
        let scale = 1.0 + v.norm() + yv.norm();
        let slack = mu * v.z - v.x.hypot(v.y);
        if v.norm() < 1e-7 * scale && yv.norm() > 1e-7 * scale {
            // at the apex: all three components pinned at zero
            for k in 0..3 {
                active.push((start + k, 0.0));
            }
        } else if slack > 1e-7 * scale && yv.norm() < 1e-7 * scale {
            // strictly inside: the cone plays no role
        } else {
            return None;
        }
    }
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&p.linear));
    for (r, &(row, val)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = cons.a[(row, j)];
            kkt[(j, n + r)] = cons.a[(row, j)];
        }
        rhs[n + r] = val;
    }
    let sol = kkt.clone().lu().solve(&rhs)?;
    // one step of iterative refinement
    let sol = &sol + kkt.clone().lu().solve(&(&rhs - &kkt * &sol))?;
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(m);
    for (r, &(row, _)) in active.iter().enumerate() {
        y[row] = sol[n + r];
    }
    let ax = &cons.a * &x;
    let tol = 1e-9 * (1.0 + inf_norm(&ax));
    for i in 0..m {
        if cons.is_cone_row(i) {
            continue;
        }
        if ax[i] < cons.l[i] - tol || ax[i] > cons.u[i] + tol {
            return None;
        }
        let at_lower = cons.l[i].is_finite() && (ax[i] - cons.l[i]).abs() <= tol;
        let at_upper = cons.u[i].is_finite() && (ax[i] - cons.u[i]).abs() <= tol;
        let ytol = 1e-9 * (1.0 + inf_norm(&y));
        if (y[i] < -ytol && !at_lower) || (y[i] > ytol && !at_upper) {
            return None;
        }
    }
    for &(start, mu) in &cons.cones {
        let v = Vector3::new(ax[start], ax[start + 1], ax[start + 2]);
        if v.x.hypot(v.y) > mu * v.z + tol {
            return None;
        }
    }
    let dual = inf_norm(&(&p.hessian * &x + &p.linear + cons.a.tr_mul(&y)));
    let mut zp = ax.clone();
    let mut projected = zp.clone();
    cons.project(&mut projected);
    zp -= &projected;
    let primal = inf_norm(&zp);
    if dual > res.dual_res.max(1e-12) * 10.0 || primal > res.primal_res.max(1e-12) * 10.0 {
        return None;
    }
    Some(QpResult {
        x,
        status: QpStatus::Optimal,
        primal_res: primal,
        dual_res: dual,
        iterations: res.iterations,
        y,
        row_kinds: res.row_kinds.clone(),
        polished: true,
        objective_trace: res.objective_trace.clone(),
    })
}

/// Infinity-norm KKT violations of a solution, using the multipliers in
/// [`QpResult::y`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `‖Hx + c + Aᵀy‖∞`.
    pub stationarity: f64,
    /// Largest bound, cone or inequality violation.
    pub primal: f64,
    /// Largest complementarity or dual-cone violation.
    pub complementarity: f64,
}

pub fn kkt_residuals(p: &QpProblem, r: &QpResult) -> KktResiduals {
    let n = p.dim();
    let mut grad = &p.hessian * &r.x + &p.linear;
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let mut cone_dual: Vec<Vector3<f64>> = vec![Vector3::zeros(); p.cones.len()];
    for (row, kind) in r.row_kinds.iter().enumerate() {
        let y = r.y[row];
        match *kind {
            RowKind::Bound { var } => {
                grad[var] += y;
                let x = r.x[var];
                primal = primal.max(p.lower[var] - x).max(x - p.upper[var]);
                // y < 0 only at the lower bound, y > 0 only at the upper
                if y < 0.0 {
                    comp = comp.max((-y * (x - p.lower[var])).abs());
                } else if y > 0.0 {
                    comp = comp.max((y * (p.upper[var] - x)).abs());
                }
            }
            RowKind::Cone { cone, component } => {
                grad[p.cones[cone].indices[component]] += y;
                cone_dual[cone][component] = y;
            }
            RowKind::Inequality { row } => {
                let (a, b) = p.lin_ineq.as_ref().expect("inequality rows imply inequalities");
                for j in 0..n {
                    grad[j] += a[(row, j)] * y;
                }
                let s = (a.row(row) * &r.x)[0] - b[row];
                primal = primal.max(s);
                comp = comp.max((y * s).abs());
                comp = comp.max(-y);
            }
        }
    }
    for (k, c) in p.cones.iter().enumerate() {
        let v = Vector3::new(r.x[c.indices[0]], r.x[c.indices[1]], r.x[c.indices[2]]);
        primal = primal.max(v.x.hypot(v.y) - c.mu * v.z);
        // −y must lie in the dual cone {‖(a,b)‖ ≤ c/μ} and ⟨y, v⟩ = 0
        let w = -cone_dual[k];
        comp = comp.max(w.x.hypot(w.y) - w.z / c.mu).max(w.dot(&v).abs());
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal: primal.max(0.0),
        complementarity: comp.max(0.0),
    }
}
