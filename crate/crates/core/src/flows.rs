//! Vector fields, their flows, and tangent (variational) dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_into, real_eigenvalues_3x3, Matrix};
use crate::ode::{integrate_dense, DenseSegment, Integrator, IntegratorConfig, OdeSystem};
use crate::real::{Real, Vec3};

/// The z-equation in use for the Lorenz field. Recorded in run manifests.
pub const LORENZ_Z_EQUATION: &str = "dz/dt = x*y - b*z";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VectorField<T> {
    /// `(σ(y−x), rx − y − xz, xy − bz)`.
    Lorenz { sigma: T, r: T, b: T },
    /// Linear saddle `(α_ss x, α_u y, α_s z)`.
    LinearSingularity { alpha_ss: T, alpha_s: T, alpha_u: T },
}

impl<T: Real> VectorField<T> {
    pub fn lorenz() -> Self {
        VectorField::Lorenz { sigma: T::lit(10.0), r: T::lit(28.0), b: T::lit(8.0 / 3.0) }
    }

    pub fn linear(alpha_ss: T, alpha_s: T, alpha_u: T) -> Self {
        VectorField::LinearSingularity { alpha_ss, alpha_s, alpha_u }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            VectorField::Lorenz { sigma, r, b } => {
                if !(sigma.is_finite() && r.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidInput("Lorenz parameters must be finite".into()));
                }
                Ok(())
            }
            VectorField::LinearSingularity { alpha_ss, alpha_s, alpha_u } => {
                if alpha_ss < T::zero() && alpha_s < T::zero() && alpha_u > T::zero() {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(
                        "linear singularity needs alpha_ss < 0, alpha_s < 0 < alpha_u".into(),
                    ))
                }
            }
        }
    }

    #[inline]
    pub fn eval(&self, p: &Vec3<T>) -> Vec3<T> {
        let [x, y, z] = *p;
        match *self {
            VectorField::Lorenz { sigma, r, b } => [sigma * (y - x), r * x - y - x * z, x * y - b * z],
            VectorField::LinearSingularity { alpha_ss, alpha_s, alpha_u } => {
                [alpha_ss * x, alpha_u * y, alpha_s * z]
            }
        }
    }

    /// Row-major analytic Jacobian.
    #[inline]
    pub fn jacobian_rows(&self, p: &Vec3<T>) -> [T; 9] {
        let [x, y, z] = *p;
        let o = T::zero();
        match *self {
            VectorField::Lorenz { sigma, r, b } => {
                [-sigma, sigma, o, r - z, -T::one(), -x, y, x, -b]
            }
            VectorField::LinearSingularity { alpha_ss, alpha_s, alpha_u } => {
                [alpha_ss, o, o, o, alpha_u, o, o, o, alpha_s]
            }
        }
    }

    pub fn jacobian(&self, p: &Vec3<T>) -> Matrix<T> {
        Matrix::from_row_slice(3, 3, &self.jacobian_rows(p))
    }

    pub fn divergence(&self, p: &Vec3<T>) -> T {
        let j = self.jacobian_rows(p);
        j[0] + j[4] + j[8]
    }
}

/// `F(x)` itself as an ODE system.
pub struct FlowSystem<T> {
    pub field: VectorField<T>,
}

impl<T: Real> OdeSystem<T> for FlowSystem<T> {
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&self, _t: T, y: &[T], dy: &mut [T]) {
        let f = self.field.eval(&[y[0], y[1], y[2]]);
        dy[..3].copy_from_slice(&f);
    }
}

/// Base point plus a 3×k tangent frame: `x' = F(x)`, `M' = DF(x)·M`.
pub struct VariationalSystem<T> {
    pub field: VectorField<T>,
    pub frame_cols: usize,
}

impl<T: Real> VariationalSystem<T> {
    pub fn full(field: VectorField<T>) -> Self {
        VariationalSystem { field, frame_cols: 3 }
    }
}

impl<T: Real> OdeSystem<T> for VariationalSystem<T> {
    fn dim(&self) -> usize {
        3 + 3 * self.frame_cols
    }
    fn watched(&self) -> usize {
        3
    }
    fn rhs(&self, _t: T, y: &[T], dy: &mut [T]) {
        let p = [y[0], y[1], y[2]];
        dy[..3].copy_from_slice(&self.field.eval(&p));
        let j = self.field.jacobian_rows(&p);
        matmul_into(3, &j, &y[3..], self.frame_cols, &mut dy[3..]);
    }
}

/// A computed orbit with dense output on the base coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub points: Vec<Vec3<T>>,
    pub segments: Vec<DenseSegment<T>>,
}

impl<T: Real> Trajectory<T> {
    /// Straight-line or other synthetic trajectories built from explicit
    /// dense segments (each must carry 3 components).
    pub fn from_segments(times: Vec<T>, points: Vec<Vec3<T>>, segments: Vec<DenseSegment<T>>) -> Self {
        Trajectory { times, points, segments }
    }

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn last_point(&self) -> Vec3<T> {
        *self.points.last().expect("non-empty trajectory")
    }

    fn segment_index(&self, t: T) -> usize {
        let idx = self.segments.partition_point(|s| s.t0 <= t);
        idx.saturating_sub(1).min(self.segments.len().saturating_sub(1))
    }

    /// State at any time inside the covered span.
    pub fn state_at(&self, t: T) -> Vec3<T> {
        if self.segments.is_empty() {
            return self.points[0];
        }
        let mut out = [T::zero(); 3];
        self.segments[self.segment_index(t)].eval(t, &mut out);
        out
    }
}

fn to_vec3<T: Real>(s: &[T]) -> Vec3<T> {
    [s[0], s[1], s[2]]
}

/// Integrates `x' = F(x)` over `[0, t_end]`.
pub fn integrate_flow<T: Real>(
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t_end: T,
    cfg: &IntegratorConfig<T>,
) -> Result<Trajectory<T>> {
    check_horizon(x0, t_end)?;
    let sys = FlowSystem { field: *field };
    let sol = integrate_dense(&sys, T::zero(), x0, t_end, cfg, 3)?;
    Ok(Trajectory {
        points: sol.states.iter().map(|s| to_vec3(s)).collect(),
        times: sol.times,
        segments: sol.segments,
    })
}

fn check_horizon<T: Real>(x0: &Vec3<T>, t_end: T) -> Result<()> {
    if !(t_end > T::zero()) {
        return Err(Error::InvalidInput("integration horizon must be positive".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial point is not finite".into()));
    }
    Ok(())
}

/// Co-integrates the orbit and `DX^t(x0)`; returns the orbit and the
/// derivative at every stored time.
pub fn integrate_variational<T: Real>(
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t_end: T,
    cfg: &IntegratorConfig<T>,
) -> Result<(Trajectory<T>, Vec<Matrix<T>>)> {
    check_horizon(x0, t_end)?;
    let sys = VariationalSystem::full(*field);
    let y0 = variational_initial(x0);
    let sol = integrate_dense(&sys, T::zero(), &y0, t_end, cfg, 12)?;
    let path = sol.states.iter().map(|s| Matrix::from_row_slice(3, 3, &s[3..12])).collect();
    let segments = sol.segments.iter().map(|seg| seg.restrict(3)).collect();
    Ok((
        Trajectory { points: sol.states.iter().map(|s| to_vec3(s)).collect(), times: sol.times, segments },
        path,
    ))
}

fn variational_initial<T: Real>(x0: &Vec3<T>) -> Vec<T> {
    let mut y0 = vec![T::zero(); 12];
    y0[..3].copy_from_slice(x0);
    y0[3] = T::one();
    y0[7] = T::one();
    y0[11] = T::one();
    y0
}

/// `X^t(x0)`.
pub fn flow_map<T: Real>(field: &VectorField<T>, x0: &Vec3<T>, t: T, cfg: &IntegratorConfig<T>) -> Result<Vec3<T>> {
    if t == T::zero() {
        return Ok(*x0);
    }
    check_horizon(x0, t)?;
    let sys = FlowSystem { field: *field };
    let mut it = Integrator::new(&sys, T::zero(), x0, cfg)?;
    it.advance_to(t)?;
    Ok(to_vec3(it.y()))
}

/// `(X^t(x0), DX^t(x0))` at each requested time (ascending, ≥ 0) from one
/// integration.
pub fn flow_derivative_at<T: Real>(
    field: &VectorField<T>,
    x0: &Vec3<T>,
    times: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<(Vec3<T>, Matrix<T>)>> {
    let sys = VariationalSystem::full(*field);
    let y0 = variational_initial(x0);
    let mut it = Integrator::new(&sys, T::zero(), &y0, cfg)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < it.t() {
            return Err(Error::InvalidInput("times must be ascending and non-negative".into()));
        }
        it.advance_to(t)?;
        let y = it.y();
        out.push((to_vec3(y), Matrix::from_row_slice(3, 3, &y[3..12])));
    }
    Ok(out)
}

/// `DX^t(x0) = Q·R` obtained by re-orthonormalising the tangent frame every
/// `renorm_dt`. `R` is upper triangular, so `ln|det DX^t|` is the sum of
/// `ln R_ii` even when `DX^t` itself is far too ill-conditioned to factor.
pub fn flow_derivative_qr<T: Real>(
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t: T,
    renorm_dt: T,
    cfg: &IntegratorConfig<T>,
) -> Result<(Vec3<T>, Matrix<T>, Matrix<T>)> {
    check_horizon(x0, t)?;
    if !(renorm_dt > T::zero()) {
        return Err(Error::InvalidInput("renorm_dt must be positive".into()));
    }
    let sys = VariationalSystem::full(*field);
    let mut y = variational_initial(x0);
    let mut it = Integrator::new(&sys, T::zero(), &y, cfg)?;
    let mut r_acc = Matrix::identity(3);
    let mut q = Matrix::identity(3);
    let mut s = T::zero();
    while s < t {
        let next = (s + renorm_dt).min(t);
        it.advance_to(next)?;
        y.copy_from_slice(it.y());
        let m = Matrix::from_row_slice(3, 3, &y[3..12]);
        let (q1, r1) = m.qr();
        r_acc = &r1 * &r_acc;
        q = q1;
        y[3..12].copy_from_slice(q.as_slice());
        it.reset_state(&y);
        s = next;
    }
    Ok((to_vec3(&y), q, r_acc))
}

/// `ln|det DX^t(x0)|` from [`flow_derivative_qr`].
pub fn log_det_flow_derivative<T: Real>(
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t: T,
    renorm_dt: T,
    cfg: &IntegratorConfig<T>,
) -> Result<T> {
    let (_, _, r) = flow_derivative_qr(field, x0, t, renorm_dt, cfg)?;
    Ok((0..3).fold(T::zero(), |acc, i| acc + r[(i, i)].abs().ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularityEigen<T> {
    /// Ascending: `(α_ss, α_s, α_u)` when the ordering holds.
    pub eigenvalues: [T; 3],
    /// `α_ss < α_s < 0 < −α_s < α_u`.
    pub ordering_holds: bool,
}

/// Eigenvalues of `DF` at the origin and the saddle ordering check.
pub fn singularity_eigen<T: Real>(field: &VectorField<T>) -> Result<SingularityEigen<T>> {
    let ev = real_eigenvalues_3x3(&field.jacobian(&[T::zero(); 3]))?;
    let [ss, s, u] = ev;
    let z = T::zero();
    Ok(SingularityEigen { eigenvalues: ev, ordering_holds: ss < s && s < z && z < -s && -s < u })
}
