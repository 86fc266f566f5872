//! Piecewise-constant-strain (PCS) Cosserat rods.
//!
//! A rod is a chain of segments, each carrying one constant strain twist.
//! The configuration inside segment `i` is `H(s) = H(L_{i-1})·exp((s − L_{i-1})ξ̂ᵢ)`
//! and the body-frame velocity obeys
//! `η(s) = A(s)⁻¹ (η(L_{i-1}) + T(s) ξ̇ᵢ)` with `A = exp(u·ad ξᵢ)` and
//! `T = ∫₀ᵘ exp(x·ad ξᵢ) dx`.
//!
//! The rod's own strains live in [`PcsSegment::strain`]; the multibody code
//! writes the active components from its generalized coordinates before
//! evaluating anything.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::se3::{ad_se3, exp_se3, tangent_integral, Pose, Twist};

/// Tolerance applied to arclength range checks.
const ARCLEN_SLACK: f64 = 1e-12;

/// Step used for the directional finite difference of the Jacobian.
pub const JACOBIAN_RATE_STEP: f64 = 1e-7;

pub const DEFAULT_QUADRATURE_ORDER: usize = 5;

/// Mask selecting the three angular strain components.
pub const ANGULAR_ONLY: [bool; 6] = [true, true, true, false, false, false];
pub const ALL_COMPONENTS: [bool; 6] = [true; 6];

#[derive(Debug, Clone, PartialEq)]
pub struct PcsSegment {
    pub length: f64,
    pub strain: Twist,
    pub neutral_strain: Twist,
    pub stiffness: Matrix6<f64>,
    pub damping: Matrix6<f64>,
    /// Screw inertia per unit length, uniform along the segment.
    pub inertia_density: Matrix6<f64>,
    pub active_mask: [bool; 6],
}

/// Cross-section data for a homogeneous prismatic beam whose axis is the
/// local x direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSection {
    pub youngs_modulus: f64,
    pub shear_modulus: f64,
    pub area: f64,
    /// Second moments about local y and z, and the polar moment.
    pub second_moment_y: f64,
    pub second_moment_z: f64,
    pub polar_moment: f64,
    pub density: f64,
    /// Stiffness-proportional damping coefficient: `D = β·K`.
    pub damping_ratio: f64,
}

impl PcsSegment {
    /// Segment with the EI/GJ/EA diagonal stiffness of a homogeneous beam,
    /// integrated over the segment length.
    pub fn homogeneous_beam(
        length: f64,
        section: &BeamSection,
        neutral_strain: Twist,
        active_mask: [bool; 6],
    ) -> Self {
        let e = section.youngs_modulus;
        let g = section.shear_modulus;
        let stiffness = Matrix6::from_diagonal(&Vector6::new(
            g * section.polar_moment,
            e * section.second_moment_y,
            e * section.second_moment_z,
            e * section.area,
            g * section.area,
            g * section.area,
        )) * length;
        let rho = section.density;
        let inertia_density = Matrix6::from_diagonal(&Vector6::new(
            rho * section.polar_moment,
            rho * section.second_moment_y,
            rho * section.second_moment_z,
            rho * section.area,
            rho * section.area,
            rho * section.area,
        ));
        Self {
            length,
            strain: neutral_strain,
            neutral_strain,
            stiffness,
            damping: stiffness * section.damping_ratio,
            inertia_density,
            active_mask,
        }
    }

    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::validation(format!(
                "segment length must be positive, got {}",
                self.length
            )));
        }
        if !self.strain.is_finite() || !self.neutral_strain.is_finite() {
            return Err(Error::validation("segment strain must be finite"));
        }
        check_symmetric_psd(&self.stiffness, "stiffness", false)?;
        check_symmetric_psd(&self.damping, "damping", false)?;
        check_symmetric_psd(&self.inertia_density, "inertia_density", true)?;
        let s = self.strain.to_vector();
        let n = self.neutral_strain.to_vector();
        for k in 0..6 {
            if !self.active_mask[k] && (s[k] - n[k]).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "inactive strain component {k} differs from its neutral value"
                )));
            }
        }
        Ok(())
    }
}

fn check_symmetric_psd(m: &Matrix6<f64>, what: &str, definite: bool) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * (1.0 + m.amax()) || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(format!("{what} must be symmetric")));
    }
    let eig = m.symmetric_eigen().eigenvalues;
    let min = eig.min();
    let tol = 1e-12 * (1.0 + m.amax());
    if (definite && min <= 0.0) || min < -tol {
        return Err(Error::validation(format!(
            "{what} must be positive {}definite (min eigenvalue {min:e})",
            if definite { "" } else { "semi" }
        )));
    }
    Ok(())
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, dp)
}

/// Generalized force of the passive elastic/viscous law, reported over all
/// `6·n_s` strain components.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveForce {
    pub values: DVector<f64>,
    /// `true` for free coordinates; `false` entries are constraint
    /// reactions of frozen components.
    pub free: Vec<bool>,
}

impl PassiveForce {
    /// The free-coordinate entries, in rod order.
    pub fn active(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.free.iter().filter(|&&f| f).count(),
            self.values
                .iter()
                .zip(&self.free)
                .filter(|(_, &f)| f)
                .map(|(v, _)| *v),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcsRod {
    pub segments: Vec<PcsSegment>,
    pub quadrature_order: usize,
}

impl PcsRod {
    pub fn new(segments: Vec<PcsSegment>) -> Self {
        Self {
            segments,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
        }
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Segment boundaries `L₀ = 0 < L₁ < … < L_{n_s}`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for seg in &self.segments {
            acc += seg.length;
            out.push(acc);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::validation("rod must have at least one segment"));
        }
        if self.quadrature_order == 0 {
            return Err(Error::validation("quadrature order must be positive"));
        }
        self.segments.iter().try_for_each(PcsSegment::validate)
    }

    pub fn n_active(&self) -> usize {
        self.segments.iter().map(PcsSegment::n_active).sum()
    }

    /// `(segment, component)` of every free coordinate, in order.
    pub fn active_components(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            for k in 0..6 {
                if seg.active_mask[k] {
                    out.push((i, k));
                }
            }
        }
        out
    }

    pub fn active_coords(&self) -> Vec<f64> {
        self.active_components()
            .into_iter()
            .map(|(i, k)| self.segments[i].strain.to_vector()[k])
            .collect()
    }

    /// Writes the free strain coordinates; frozen components keep their
    /// neutral values.
    pub fn set_active_coords(&mut self, coords: &[f64]) -> Result<()> {
        let comps = self.active_components();
        if coords.len() != comps.len() {
            return Err(Error::DimensionMismatch {
                what: "rod active coordinates",
                expected: comps.len(),
                got: coords.len(),
            });
        }
        for seg in &mut self.segments {
            let mut v = seg.neutral_strain.to_vector();
            let cur = seg.strain.to_vector();
            for k in 0..6 {
                if seg.active_mask[k] {
                    v[k] = cur[k];
                }
            }
            seg.strain = Twist::from_vector(&v);
        }
        for (&(i, k), &value) in comps.iter().zip(coords) {
            let mut v = self.segments[i].strain.to_vector();
            v[k] = value;
            self.segments[i].strain = Twist::from_vector(&v);
        }
        Ok(())
    }

    /// Expands per-active-coordinate rates into per-segment strain-rate
    /// twists (frozen components get zero rate).
    pub fn expand_rates(&self, active_rates: &[f64]) -> Result<Vec<Twist>> {
        let comps = self.active_components();
        if active_rates.len() != comps.len() {
            return Err(Error::DimensionMismatch {
                what: "rod active rates",
                expected: comps.len(),
                got: active_rates.len(),
            });
        }
        let mut out = vec![Vector6::zeros(); self.segments.len()];
        for (&(i, k), &r) in comps.iter().zip(active_rates) {
            out[i][k] = r;
        }
        Ok(out.iter().map(Twist::from_vector).collect())
    }

    /// Segment index and offset inside it for arclength `s`.
    pub fn locate(&self, s: f64) -> Result<(usize, f64)> {
        let total = self.length();
        if !(s >= -ARCLEN_SLACK && s <= total + ARCLEN_SLACK) {
            return Err(Error::OutOfRange { s, length: total });
        }
        let s = s.clamp(0.0, total);
        let mut start = 0.0;
        let last = self.segments.len() - 1;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = start + seg.length;
            if s <= end || i == last {
                return Ok((i, (s - start).min(seg.length)));
            }
            start = end;
        }
        unreachable!("rod has at least one segment")
    }

    /// Pose of the microsolid frame at arclength `s`, given the base pose.
    pub fn pose(&self, base: &Pose, s: f64) -> Result<Pose> {
        let (idx, u) = self.locate(s)?;
        let mut h = *base;
        for seg in &self.segments[..idx] {
            h = h * exp_se3(&seg.strain, seg.length);
        }
        Ok(h * exp_se3(&self.segments[idx].strain, u))
    }

    /// Body-frame velocity of the microsolid at `s`.
    pub fn velocity(&self, base_vel: &Twist, strain_rates: &[Twist], s: f64) -> Result<Twist> {
        if strain_rates.len() != self.segments.len() {
            return Err(Error::DimensionMismatch {
                what: "strain rates",
                expected: self.segments.len(),
                got: strain_rates.len(),
            });
        }
        let (idx, u) = self.locate(s)?;
        let mut eta = base_vel.to_vector();
        for (seg, rate) in self.segments[..idx].iter().zip(strain_rates) {
            eta = segment_transport(seg, seg.length, &eta, rate);
        }
        let seg = &self.segments[idx];
        Ok(Twist::from_vector(&segment_transport(
            seg,
            u,
            &eta,
            &strain_rates[idx],
        )))
    }

    /// Fixed-base Jacobian at `s` over all `6·n_s` strain components.
    pub fn jacobian(&self, s: f64) -> Result<DMatrix<f64>> {
        let frames = RodFrames::new(
            self.clone(),
            Pose::identity(),
            DMatrix::zeros(6, 6 * self.segments.len()),
            &self.full_column_map(),
        );
        frames.jacobian(s)
    }

    /// Zeroes the columns of frozen strain components.
    pub fn mask_columns(&self, jac: &mut DMatrix<f64>) {
        for (i, seg) in self.segments.iter().enumerate() {
            for k in 0..6 {
                if !seg.active_mask[k] {
                    jac.column_mut(6 * i + k).fill(0.0);
                }
            }
        }
    }

    fn full_column_map(&self) -> Vec<[Option<usize>; 6]> {
        (0..self.segments.len())
            .map(|i| std::array::from_fn(|k| Some(6 * i + k)))
            .collect()
    }

    /// Column map sending free coordinates to `offset..offset + n_active`.
    pub fn active_column_map(&self, offset: usize) -> Vec<[Option<usize>; 6]> {
        let mut next = offset;
        self.segments
            .iter()
            .map(|seg| {
                std::array::from_fn(|k| {
                    if seg.active_mask[k] {
                        next += 1;
                        Some(next - 1)
                    } else {
                        None
                    }
                })
            })
            .collect()
    }

    /// `∫ Jᵀ 𝓜 J ds` over the full strain space, by Gauss–Legendre
    /// quadrature of order `quadrature_order` per segment.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        self.mass_matrix_with_order(self.quadrature_order)
    }

    pub fn mass_matrix_with_order(&self, order: usize) -> DMatrix<f64> {
        let n = 6 * self.segments.len();
        let frames = RodFrames::new(self.clone(), Pose::identity(), DMatrix::zeros(6, n), &self.full_column_map());
        let mut m = DMatrix::zeros(n, n);
        frames.for_each_quadrature_node(order, |seg, _s, w, jac| {
            let mj = seg.inertia_density * jac;
            m.gemm_tr(w, jac, &mj, 1.0);
        });
        symmetrize(&mut m);
        m
    }

    /// Coriolis matrix `∫ (Jᵀ𝓜J̇ − Jᵀ ad(Jq̇)ᵀ 𝓜 J) ds`, with `J̇` from a
    /// central directional difference of the Jacobian along the rates.
    pub fn coriolis(&self, strain_rates: &[Twist]) -> Result<DMatrix<f64>> {
        self.coriolis_with_order(strain_rates, self.quadrature_order)
    }

    pub fn coriolis_with_order(&self, strain_rates: &[Twist], order: usize) -> Result<DMatrix<f64>> {
        if strain_rates.len() != self.segments.len() {
            return Err(Error::DimensionMismatch {
                what: "strain rates",
                expected: self.segments.len(),
                got: strain_rates.len(),
            });
        }
        let n = 6 * self.segments.len();
        let qdot = DVector::from_iterator(
            n,
            strain_rates.iter().flat_map(|t| t.to_array()),
        );
        let h = JACOBIAN_RATE_STEP;
        let shifted = |sign: f64| {
            let mut rod = self.clone();
            for (seg, rate) in rod.segments.iter_mut().zip(strain_rates) {
                seg.strain = seg.strain + *rate * (sign * h);
            }
            rod
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);
        let cols = self.full_column_map();
        let zero = DMatrix::zeros(6, n);
        let f0 = RodFrames::new(self.clone(), Pose::identity(), zero.clone(), &cols);
        let fp = RodFrames::new(plus, Pose::identity(), zero.clone(), &cols);
        let fm = RodFrames::new(minus, Pose::identity(), zero, &cols);
        let (xs, ws) = gauss_legendre(order);
        let mut c = DMatrix::zeros(n, n);
        let bounds = self.boundaries();
        for (i, seg) in self.segments.iter().enumerate() {
            let half = 0.5 * seg.length;
            for (x, w) in xs.iter().zip(&ws) {
                let s = bounds[i] + half * (x + 1.0);
                let jac = f0.jacobian_in_segment(i, s - bounds[i]);
                let jdot = (fp.jacobian_in_segment(i, s - bounds[i])
                    - fm.jacobian_in_segment(i, s - bounds[i]))
                    / (2.0 * h);
                let eta = Twist::from_vector(&Vector6::from_column_slice((&jac * &qdot).as_slice()));
                let mj = seg.inertia_density * &jac;
                let adt_mj = ad_se3(&eta).transpose() * &mj;
                let inner = seg.inertia_density * &jdot - adt_mj;
                c.gemm_tr(w * half, &jac, &inner, 1.0);
            }
        }
        Ok(c)
    }

    /// `K(q₀ − q) − D q̇`, segment by segment.
    pub fn passive_force(&self, strain_rates: &[Twist]) -> Result<PassiveForce> {
        if strain_rates.len() != self.segments.len() {
            return Err(Error::DimensionMismatch {
                what: "strain rates",
                expected: self.segments.len(),
                got: strain_rates.len(),
            });
        }
        let n = 6 * self.segments.len();
        let mut values = DVector::zeros(n);
        let mut free = Vec::with_capacity(n);
        for (i, (seg, rate)) in self.segments.iter().zip(strain_rates).enumerate() {
            let f = seg.stiffness * (seg.neutral_strain - seg.strain).to_vector()
                - seg.damping * rate.to_vector();
            values.rows_mut(6 * i, 6).copy_from(&f);
            free.extend_from_slice(&seg.active_mask);
        }
        Ok(PassiveForce { values, free })
    }

    /// `½ Σ (ξ − ξ₀)ᵀ K (ξ − ξ₀)`.
    pub fn elastic_energy(&self) -> f64 {
        self.segments
            .iter()
            .map(|seg| {
                let d = (seg.strain - seg.neutral_strain).to_vector();
                0.5 * d.dot(&(seg.stiffness * d))
            })
            .sum()
    }
}

/// `A(u)⁻¹ (η + T(u) ξ̇)` for one segment.
pub(crate) fn segment_transport(seg: &PcsSegment, u: f64, eta: &Vector6<f64>, rate: &Twist) -> Vector6<f64> {
    let inner = eta + crate::se3::tangent_integral_apply(&seg.strain, u, &rate.to_vector());
    exp_se3(&seg.strain, u).adjoint_inv_apply(&inner)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cached boundary poses and Jacobians of one rod for repeated queries.
///
/// The Jacobian is with respect to an arbitrary column space: the base
/// Jacobian is supplied by the caller and each strain component is sent to
/// the column given by `columns[segment][component]`.
pub struct RodFrames {
    rod: PcsRod,
    bounds: Vec<f64>,
    poses: Vec<Pose>,
    jacs: Vec<DMatrix<f64>>,
    columns: Vec<[Option<usize>; 6]>,
}

impl RodFrames {
    pub fn new(
        rod: PcsRod,
        base: Pose,
        base_jac: DMatrix<f64>,
        columns: &[[Option<usize>; 6]],
    ) -> Self {
        let mut poses = Vec::with_capacity(rod.segments.len() + 1);
        let mut jacs = Vec::with_capacity(rod.segments.len() + 1);
        poses.push(base);
        jacs.push(base_jac);
        let n = rod.segments.len();
        let mut frames = RodFrames {
            bounds: rod.boundaries(),
            rod,
            poses,
            jacs,
            columns: columns.to_vec(),
        };
        for i in 0..n {
            let seg = &frames.rod.segments[i];
            let pose = frames.poses[i] * exp_se3(&seg.strain, seg.length);
            let jac = frames.jacobian_in_segment(i, seg.length);
            frames.poses.push(pose);
            frames.jacs.push(jac);
        }
        frames
    }

    pub fn rod(&self) -> &PcsRod {
        &self.rod
    }

    pub fn pose(&self, s: f64) -> Result<Pose> {
        let (i, u) = self.rod.locate(s)?;
        Ok(self.pose_in_segment(i, u))
    }

    pub fn jacobian(&self, s: f64) -> Result<DMatrix<f64>> {
        let (i, u) = self.rod.locate(s)?;
        Ok(self.jacobian_in_segment(i, u))
    }

    pub fn pose_in_segment(&self, i: usize, u: f64) -> Pose {
        self.poses[i] * exp_se3(&self.rod.segments[i].strain, u)
    }

    pub fn jacobian_in_segment(&self, i: usize, u: f64) -> DMatrix<f64> {
        let seg = &self.rod.segments[i];
        let mut jac = self.jacs[i].clone();
        if u != 0.0 {
            let t = tangent_integral(&seg.strain, u);
            for k in 0..6 {
                if let Some(c) = self.columns[i][k] {
                    let mut col = jac.column_mut(c);
                    for r in 0..6 {
                        col[r] += t[(r, k)];
                    }
                }
            }
        }
        let step = exp_se3(&seg.strain, u);
        for mut col in jac.column_iter_mut() {
            let v = Vector6::new(col[0], col[1], col[2], col[3], col[4], col[5]);
            if v.iter().all(|x| *x == 0.0) {
                continue;
            }
            col.copy_from(&step.adjoint_inv_apply(&v));
        }
        jac
    }

    /// Calls `f(segment, s, weight, J(s))` at every Gauss node; `weight`
    /// already includes the half-length Jacobian of the interval map.
    pub fn for_each_quadrature_node(
        &self,
        order: usize,
        mut f: impl FnMut(&PcsSegment, f64, f64, &DMatrix<f64>),
    ) {
        let (xs, ws) = gauss_legendre(order);
        for (i, seg) in self.rod.segments.iter().enumerate() {
            let half = 0.5 * seg.length;
            for (x, w) in xs.iter().zip(&ws) {
                let u = half * (x + 1.0);
                let jac = self.jacobian_in_segment(i, u);
                f(seg, self.bounds[i] + u, w * half, &jac);
            }
        }
    }

    /// Like [`Self::for_each_quadrature_node`] but also passes the pose.
    pub fn for_each_quadrature_frame(
        &self,
        order: usize,
        mut f: impl FnMut(&PcsSegment, &Pose, f64, &DMatrix<f64>),
    ) {
        let (xs, ws) = gauss_legendre(order);
        for (i, seg) in self.rod.segments.iter().enumerate() {
            let half = 0.5 * seg.length;
            for (x, w) in xs.iter().zip(&ws) {
                let u = half * (x + 1.0);
                let jac = self.jacobian_in_segment(i, u);
                let pose = self.pose_in_segment(i, u);
                f(seg, &pose, w * half, &jac);
            }
        }
    }

    pub fn boundary_pose(&self, i: usize) -> &Pose {
        &self.poses[i]
    }
}
