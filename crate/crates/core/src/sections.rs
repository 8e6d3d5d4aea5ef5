//! Cross-sections, event location, and the Poincaré return map.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{flow_derivative_at, FlowSystem, Trajectory, VariationalSystem, VectorField};
use crate::linalg::Matrix;
use crate::ode::{Integrator, IntegratorConfig, OdeSystem};
use crate::real::{dot3, norm3, Real, Vec3};
use crate::stats::{linear_fit, quantile};

pub type Vec2<T> = [T; 2];

/// Which sign changes of `(p − base)·normal` count as crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingDirection {
    /// From positive to negative side.
    Decreasing,
    Increasing,
    Either,
}

impl CrossingDirection {
    fn accepts<T: Real>(self, g0: T, g1: T) -> bool {
        let z = T::zero();
        match self {
            CrossingDirection::Decreasing => g0 > z && g1 <= z,
            CrossingDirection::Increasing => g0 < z && g1 >= z,
            CrossingDirection::Either => (g0 > z && g1 <= z) || (g0 < z && g1 >= z),
        }
    }
}

/// Straight-line approximation of the singular line Γ in section coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLine<T> {
    pub point: Vec2<T>,
    /// Unit direction.
    pub direction: Vec2<T>,
}

impl<T: Real> GammaLine<T> {
    pub fn distance(&self, x: &Vec2<T>) -> T {
        let dx = x[0] - self.point[0];
        let dy = x[1] - self.point[1];
        (dx * self.direction[1] - dy * self.direction[0]).abs()
    }

    /// Signed coordinate across Γ.
    pub fn side(&self, x: &Vec2<T>) -> T {
        let dx = x[0] - self.point[0];
        let dy = x[1] - self.point[1];
        dx * self.direction[1] - dy * self.direction[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection<T> {
    pub base: Vec3<T>,
    pub normal: Vec3<T>,
    pub u1: Vec3<T>,
    pub u2: Vec3<T>,
    /// `[lo, hi]` for each of the two section coordinates.
    pub bounds: [[T; 2]; 2],
    pub direction: CrossingDirection,
    pub gamma_band_halfwidth: T,
    pub gamma: Option<GammaLine<T>>,
}

/// Grid resolution of the transversality check.
const TRANSVERSALITY_GRID: usize = 41;

impl<T: Real> CrossSection<T> {
    /// Checks the frame and the transversality of `field` on the rectangle.
    pub fn new(
        field: &VectorField<T>,
        base: Vec3<T>,
        normal: Vec3<T>,
        u1: Vec3<T>,
        u2: Vec3<T>,
        bounds: [[T; 2]; 2],
        direction: CrossingDirection,
    ) -> Result<Self> {
        let sec = CrossSection {
            base,
            normal,
            u1,
            u2,
            bounds,
            direction,
            gamma_band_halfwidth: T::lit(1e-4),
            gamma: None,
        };
        sec.check_frame()?;
        sec.check_transversality(field)?;
        Ok(sec)
    }

    /// The plane `z = r − 1` for the Lorenz field, crossed downwards.
    pub fn lorenz(field: &VectorField<T>) -> Result<Self> {
        let z = match *field {
            VectorField::Lorenz { r, .. } => r - T::one(),
            _ => return Err(Error::InvalidInput("Lorenz section needs the Lorenz field".into())),
        };
        let (o, l) = (T::zero(), T::one());
        CrossSection::new(
            field,
            [o, o, z],
            [o, o, l],
            [l, o, o],
            [o, l, o],
            [[T::lit(-8.0), T::lit(8.0)], [T::lit(-8.5), T::lit(8.5)]],
            CrossingDirection::Decreasing,
        )
    }

    fn check_frame(&self) -> Result<()> {
        let tol = T::lit(1e-12);
        let unit = |v: &Vec3<T>| (norm3(v) - T::one()).abs() < tol;
        let ok = unit(&self.normal)
            && unit(&self.u1)
            && unit(&self.u2)
            && dot3(&self.normal, &self.u1).abs() < tol
            && dot3(&self.normal, &self.u2).abs() < tol
            && dot3(&self.u1, &self.u2).abs() < tol;
        if !ok {
            return Err(Error::InvalidInput("section frame must be orthonormal".into()));
        }
        let [[a, b], [c, d]] = self.bounds;
        if !(a < b && c < d) {
            return Err(Error::InvalidInput("section bounds must be non-empty".into()));
        }
        if !(self.gamma_band_halfwidth >= T::zero()) {
            return Err(Error::InvalidInput("gamma_band_halfwidth must be non-negative".into()));
        }
        Ok(())
    }

    /// `F·normal` must keep one sign on a grid over the rectangle, and that
    /// sign must agree with the crossing direction.
    pub fn check_transversality(&self, field: &VectorField<T>) -> Result<()> {
        let n = TRANSVERSALITY_GRID;
        let mut sign = 0i8;
        for i in 0..n {
            for j in 0..n {
                let s = |k: usize, lo: T, hi: T| lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1);
                let x = [s(i, self.bounds[0][0], self.bounds[0][1]), s(j, self.bounds[1][0], self.bounds[1][1])];
                let v = dot3(&field.eval(&self.embed(&x)), &self.normal);
                let sg = if v > T::zero() {
                    1
                } else if v < T::zero() {
                    -1
                } else {
                    0
                };
                if sg == 0 || (sign != 0 && sg != sign) {
                    return Err(Error::InvalidInput(format!(
                        "flow is not transversal to the section at ({}, {})",
                        x[0].as_f64(),
                        x[1].as_f64()
                    )));
                }
                sign = sg;
            }
        }
        let consistent = match self.direction {
            CrossingDirection::Decreasing => sign < 0,
            CrossingDirection::Increasing => sign > 0,
            CrossingDirection::Either => true,
        };
        if !consistent {
            return Err(Error::InvalidInput("flow crosses the section against the requested direction".into()));
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: Option<GammaLine<T>>, halfwidth: T) -> Self {
        self.gamma = gamma;
        self.gamma_band_halfwidth = halfwidth;
        self
    }

    pub fn embed(&self, x: &Vec2<T>) -> Vec3<T> {
        std::array::from_fn(|i| self.base[i] + x[0] * self.u1[i] + x[1] * self.u2[i])
    }

    pub fn coords(&self, p: &Vec3<T>) -> Vec2<T> {
        let d = [p[0] - self.base[0], p[1] - self.base[1], p[2] - self.base[2]];
        [dot3(&d, &self.u1), dot3(&d, &self.u2)]
    }

    /// Signed distance of `p` from the plane.
    pub fn event(&self, p: &[T]) -> T {
        (0..3).fold(T::zero(), |a, i| a + (p[i] - self.base[i]) * self.normal[i])
    }

    pub fn contains(&self, x: &Vec2<T>) -> bool {
        let [[a, b], [c, d]] = self.bounds;
        x[0] >= a && x[0] <= b && x[1] >= c && x[1] <= d
    }

    pub fn in_gamma_band(&self, x: &Vec2<T>) -> bool {
        self.gamma.is_some_and(|g| g.distance(x) <= self.gamma_band_halfwidth)
    }

    /// Tangent vector `v` (3D) projected onto the plane along `flow`, in
    /// section coordinates.
    pub fn project_along(&self, v: &Vec3<T>, flow: &Vec3<T>) -> Result<Vec2<T>> {
        let fn_ = dot3(flow, &self.normal);
        let fnorm = norm3(flow);
        if !(fnorm > T::zero()) || (fn_ / fnorm).abs() < T::lit(1e-8) {
            let angle = if fnorm > T::zero() { (fn_ / fnorm).abs().asin() } else { T::zero() };
            return Err(Error::DegenerateProjection { angle: angle.as_f64() });
        }
        let c = dot3(v, &self.normal) / fn_;
        let w: Vec3<T> = std::array::from_fn(|i| v[i] - c * flow[i]);
        Ok([dot3(&w, &self.u1), dot3(&w, &self.u2)])
    }
}

/// One located crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing<T> {
    pub t: T,
    pub p: Vec3<T>,
    /// `|d/dt (p − base)·normal| < 1e−12` at the root.
    pub grazing: bool,
}

const GRAZING: f64 = 1e-12;

/// Illinois regula falsi on a bracketed sign change.
fn refine_root<T: Real>(mut g: impl FnMut(T) -> T, mut a: T, mut ga: T, mut b: T, mut gb: T, tol: T) -> T {
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut c = (a * gb - b * ga) / (gb - ga);
        if !(c > a.min(b) && c < a.max(b)) {
            c = T::lit(0.5) * (a + b);
        }
        let gc = g(c);
        if gc == T::zero() {
            return c;
        }
        if (gc > T::zero()) == (gb > T::zero()) {
            b = c;
            gb = gc;
            if side == 1 {
                ga = ga * T::lit(0.5);
            }
            side = 1;
        } else {
            a = c;
            ga = gc;
            if side == -1 {
                gb = gb * T::lit(0.5);
            }
            side = -1;
        }
    }
    if ga.abs() < gb.abs() {
        a
    } else {
        b
    }
}

/// Every crossing of `traj` through the plane of `sec` in `direction`,
/// located on the dense output. Bounds are not applied.
pub fn detect_crossing<T: Real>(traj: &Trajectory<T>, sec: &CrossSection<T>, direction: CrossingDirection) -> Vec<Crossing<T>> {
    let mut out = Vec::new();
    let mut buf = [T::zero(); 3];
    for seg in &traj.segments {
        let (t0, t1) = (seg.t0, seg.t1());
        seg.eval(t0, &mut buf);
        let g0 = sec.event(&buf);
        seg.eval(t1, &mut buf);
        let g1 = sec.event(&buf);
        if !direction.accepts(g0, g1) {
            continue;
        }
        let tol = T::lit(1e-13) * T::one().max(t1.abs());
        let ts = refine_root(
            |t| {
                let mut b = [T::zero(); 3];
                seg.eval(t, &mut b);
                sec.event(&b)
            },
            t0,
            g0,
            t1,
            g1,
            tol,
        );
        let mut p = [T::zero(); 3];
        seg.eval(ts, &mut p);
        let mut dp = [T::zero(); 3];
        seg.eval_derivative(ts, &mut dp);
        let gd = dot3(&dp, &sec.normal);
        out.push(Crossing { t: ts, p, grazing: gd.abs() < T::lit(GRAZING) });
    }
    out
}

/// Crossing inside the integrator's last accepted step, if any, with
/// `t ≥ t_min` and inside the section bounds. `state` receives the full
/// state at the crossing.
pub(crate) fn crossing_in_last_step<T: Real, S: OdeSystem<T> + ?Sized>(
    it: &Integrator<'_, T, S>,
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    t_min: T,
    state: &mut [T],
) -> Option<Crossing<T>> {
    let view = it.last_step();
    if view.t1 < t_min || view.t1 == view.t0 {
        return None;
    }
    let (g0, g1) = (sec.event(view.y0), sec.event(view.y1));
    if !sec.direction.accepts(g0, g1) {
        return None;
    }
    let (ta, tb) = (view.t0, view.t1);
    let tol = T::lit(1e-14) * T::one().max(tb.abs());
    let mut buf = vec![T::zero(); state.len()];
    let ts = refine_root(
        |t| {
            it.restep_from_last(t - ta, &mut buf);
            sec.event(&buf)
        },
        ta,
        g0,
        tb,
        g1,
        tol,
    );
    if ts < t_min {
        return None;
    }
    if ts == ta {
        state.copy_from_slice(it.last_step().y0);
    } else {
        it.restep_from_last(ts - ta, state);
    }
    let p = [state[0], state[1], state[2]];
    if !sec.contains(&sec.coords(&p)) {
        return None;
    }
    let gd = dot3(&field.eval(&p), &sec.normal);
    Some(Crossing { t: ts, p, grazing: gd.abs() < T::lit(GRAZING) })
}

/// Steps `it` until the next accepted crossing with `t ≥ t_min`.
/// `Ok(None)` when `t_max` passes first.
fn next_crossing<T: Real, S: OdeSystem<T> + ?Sized>(
    it: &mut Integrator<'_, T, S>,
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    t_min: T,
    t_max: T,
    state: &mut [T],
) -> Result<Option<Crossing<T>>> {
    while it.t() < t_max {
        it.step(t_max)?;
        if let Some(c) = crossing_in_last_step(it, field, sec, t_min, state) {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnSample<T> {
    pub x: Vec2<T>,
    pub fx: Vec2<T>,
    pub tau: T,
    /// 2×2; NaN-filled for censored samples.
    pub d_return: Matrix<T>,
    pub censored: bool,
}

impl<T: Real> ReturnSample<T> {
    fn censored(x: Vec2<T>, elapsed: T) -> Self {
        ReturnSample {
            x,
            fx: [T::nan(); 2],
            tau: elapsed,
            d_return: Matrix::from_fn(2, 2, |_, _| T::nan()),
            censored: true,
        }
    }
}

fn check_start<T: Real>(sec: &CrossSection<T>, x: &Vec2<T>) -> Result<()> {
    if !sec.contains(x) || sec.in_gamma_band(x) || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::OutsideSection { u1: x[0].as_f64(), u2: x[1].as_f64() });
    }
    Ok(())
}

/// `f(x) = X^{τ(x)}(x)`: the first crossing in the section's direction with
/// `τ ≥ tau_min`, with the return derivative from the co-integrated tangent
/// flow. Orbits that leave every bound, exceed `tau_max`, graze the plane or
/// land in the Γ band give a censored sample.
pub fn poincare_return<T: Real>(
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    x: &Vec2<T>,
    cfg: &IntegratorConfig<T>,
    tau_min: T,
    tau_max: T,
) -> Result<ReturnSample<T>> {
    check_start(sec, x)?;
    if !(tau_min > T::zero() && tau_max > tau_min) {
        return Err(Error::InvalidInput("need 0 < tau_min < tau_max".into()));
    }
    let sys = VariationalSystem::full(*field);
    let mut y0 = vec![T::zero(); 12];
    y0[..3].copy_from_slice(&sec.embed(x));
    y0[3] = T::one();
    y0[7] = T::one();
    y0[11] = T::one();
    let mut it = Integrator::new(&sys, T::zero(), &y0, cfg)?;
    let mut state = vec![T::zero(); 12];
    let hit = match next_crossing(&mut it, field, sec, tau_min, tau_max, &mut state) {
        Ok(h) => h,
        Err(Error::Divergence { .. }) | Err(Error::MaxSteps { .. }) => None,
        Err(e) => return Err(e),
    };
    let Some(c) = hit else {
        return Ok(ReturnSample::censored(*x, it.t()));
    };
    let fx = sec.coords(&c.p);
    if c.grazing || sec.in_gamma_band(&fx) {
        let mut s = ReturnSample::censored(*x, c.t);
        s.fx = fx;
        return Ok(s);
    }
    let dx = Matrix::from_row_slice(3, 3, &state[3..12]);
    let d_return = return_derivative(field, sec, &fx, &dx)?;
    Ok(ReturnSample { x: *x, fx, tau: c.t, d_return, censored: false })
}

/// `P ∘ DX^τ ∘ E`: section tangent vectors pushed forward and projected onto
/// the plane along the flow direction at the image point.
pub fn return_derivative<T: Real>(
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    fx: &Vec2<T>,
    dx_tau: &Matrix<T>,
) -> Result<Matrix<T>> {
    let flow = field.eval(&sec.embed(fx));
    return_derivative_with_flow(sec, sec, dx_tau, &flow)
}

/// Same as [`return_derivative`] for arbitrary source/target sections and an
/// explicit flow vector at the image point.
pub fn return_derivative_with_flow<T: Real>(
    from: &CrossSection<T>,
    to: &CrossSection<T>,
    dx_tau: &Matrix<T>,
    flow_at_image: &Vec3<T>,
) -> Result<Matrix<T>> {
    let mut d = Matrix::zeros(2, 2);
    for (k, u) in [from.u1, from.u2].iter().enumerate() {
        let v = dx_tau.mul_vec(u);
        let w = to.project_along(&[v[0], v[1], v[2]], flow_at_image)?;
        d[(0, k)] = w[0];
        d[(1, k)] = w[1];
    }
    Ok(d)
}

/// Consecutive crossings of one continuous orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionOrbit<T> {
    pub times: Vec<T>,
    pub points: Vec<Vec3<T>>,
    /// Index `k` is true when crossing `k` was grazing or in the Γ band.
    pub flagged: Vec<bool>,
    /// The orbit stopped early (no crossing within `tau_max`, or divergence).
    pub truncated: bool,
}

impl<T: Real> SectionOrbit<T> {
    pub fn coords(&self, sec: &CrossSection<T>) -> Vec<Vec2<T>> {
        self.points.iter().map(|p| sec.coords(p)).collect()
    }

    /// Return times `t_{k+1} − t_k`.
    pub fn taus(&self) -> Vec<T> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Follows the orbit of `p0` without restarts and records the first `n`
/// crossings (consecutive crossings at least `tau_min` apart).
pub fn section_orbit<T: Real>(
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    p0: &Vec3<T>,
    n: usize,
    cfg: &IntegratorConfig<T>,
    tau_min: T,
    tau_max: T,
) -> Result<SectionOrbit<T>> {
    let sys = FlowSystem { field: *field };
    let mut it = Integrator::new(&sys, T::zero(), p0, cfg)?;
    let mut orbit = SectionOrbit { times: Vec::new(), points: Vec::new(), flagged: Vec::new(), truncated: false };
    let mut state = [T::zero(); 3];
    let mut t_last: Option<T> = None;
    while orbit.times.len() < n {
        let t_min = t_last.map_or(T::zero(), |t| t + tau_min);
        let t_max = t_last.map_or(it.t(), |t| t) + tau_max;
        match next_crossing(&mut it, field, sec, t_min, t_max, &mut state) {
            Ok(Some(c)) => {
                let x = sec.coords(&c.p);
                orbit.times.push(c.t);
                orbit.points.push(c.p);
                orbit.flagged.push(c.grazing || sec.in_gamma_band(&x));
                t_last = Some(c.t);
            }
            Ok(None) | Err(Error::Divergence { .. }) => {
                orbit.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(orbit)
}

/// Return samples along a [`SectionOrbit`]: sample `k` maps crossing `k` to
/// crossing `k+1` with `τ = t_{k+1} − t_k`. The derivative comes from a
/// tangent integration over exactly that τ from crossing `k`.
pub fn orbit_returns<T: Real>(
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    orbit: &SectionOrbit<T>,
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<ReturnSample<T>>> {
    let n = orbit.points.len().saturating_sub(1);
    (0..n)
        .into_par_iter()
        .map(|k| {
            let x = sec.coords(&orbit.points[k]);
            let fx = sec.coords(&orbit.points[k + 1]);
            let tau = orbit.times[k + 1] - orbit.times[k];
            if orbit.flagged[k] || orbit.flagged[k + 1] {
                let mut s = ReturnSample::censored(x, tau);
                s.fx = fx;
                return Ok(s);
            }
            let dx = &flow_derivative_at(field, &orbit.points[k], &[tau], cfg)?[0].1;
            let flow = field.eval(&orbit.points[k + 1]);
            let d_return = return_derivative_with_flow(sec, sec, dx, &flow)?;
            Ok(ReturnSample { x, fx, tau, d_return, censored: false })
        })
        .collect()
}

/// Γ as the line through `center` separating starting points by the lobe
/// (sign of the first section coordinate) their orbit returns to. Points on a
/// circle of `radius` are classified and the flip direction is bisected to
/// `1e−12` rad.
pub fn estimate_gamma<T: Real>(
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    center: &Vec2<T>,
    radius: T,
    cfg: &IntegratorConfig<T>,
) -> Result<GammaLine<T>> {
    let bare = sec.clone().with_gamma(None, T::zero());
    let lobe = |phi: T| -> Result<Option<bool>> {
        let x = [center[0] + radius * phi.cos(), center[1] + radius * phi.sin()];
        let s = poincare_return(field, &bare, &x, cfg, T::lit(0.05), T::lit(50.0))?;
        Ok(if s.censored { None } else { Some(s.fx[0] > T::zero()) })
    };
    let samples = 32;
    let pi = T::PI();
    let mut prev = (T::zero(), lobe(T::zero())?);
    let mut bracket = None;
    for k in 1..=samples {
        let phi = pi * T::from_usize_lossy(k) / T::from_usize_lossy(samples);
        let cur = lobe(phi)?;
        if let (Some(a), Some(b)) = (prev.1, cur) {
            if a != b {
                bracket = Some((prev.0, phi, a));
                break;
            }
        }
        prev = (phi, cur);
    }
    let Some((mut lo, mut hi, side_lo)) = bracket else {
        return Err(Error::FoliationEstimateUnavailable);
    };
    while hi - lo > T::lit(1e-12) {
        let mid = T::lit(0.5) * (lo + hi);
        match lobe(mid)? {
            Some(s) if s == side_lo => lo = mid,
            Some(_) => hi = mid,
            // Censored: the orbit went to the singularity, which is Γ itself.
            None => {
                lo = mid;
                hi = mid;
            }
        }
    }
    let phi = T::lit(0.5) * (lo + hi);
    Ok(GammaLine { point: *center, direction: [phi.cos(), phi.sin()] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnMapStats<T> {
    pub n_samples: usize,
    pub mean_tau: T,
    pub min_tau: T,
    pub max_tau: T,
    pub censored_count: usize,
}

pub fn return_time_stats<T: Real>(samples: &[ReturnSample<T>]) -> Result<ReturnMapStats<T>> {
    let taus: Vec<T> = samples.iter().filter(|s| !s.censored).map(|s| s.tau).collect();
    if taus.is_empty() {
        return Err(Error::AllCensored);
    }
    let mean = crate::stats::mean(&taus);
    let (min, max) = taus.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &t| (a.min(t), b.max(t)));
    Ok(ReturnMapStats {
        n_samples: taus.len(),
        mean_tau: mean.max(min).min(max),
        min_tau: min,
        max_tau: max,
        censored_count: samples.len() - taus.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityReport<T> {
    pub n_samples: usize,
    pub theta: T,
    /// `|Df·e_s|` per sample.
    pub contraction: Vec<T>,
    /// `|Df·e_u|` per sample.
    pub expansion: Vec<T>,
    pub frac_contracting: T,
    pub frac_expanding: T,
    pub worst_contraction: T,
    pub worst_expansion: T,
    /// 0.95-quantile of `max(contraction, 1/expansion)`.
    pub theta_certified: T,
    /// `exp(slope)` of `ln contraction` regressed on τ.
    pub theta_per_unit_time: T,
    pub regression_r_squared: T,
}

/// Contraction along `stable[i]` and expansion along `unstable[i]` (unit
/// section vectors at `samples[i].x`) measured against `theta`.
pub fn hyperbolicity_report<T: Real>(
    samples: &[ReturnSample<T>],
    stable: &[Vec2<T>],
    unstable: &[Vec2<T>],
    theta: T,
) -> Result<HyperbolicityReport<T>> {
    if stable.len() != samples.len() || unstable.len() != samples.len() {
        return Err(Error::DimensionMismatch("one stable and one unstable direction per sample".into()));
    }
    let idx: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].censored).collect();
    if idx.len() < 10 {
        return Err(Error::InsufficientSamples { needed: 10, got: idx.len() });
    }
    let rate = |d: &Matrix<T>, v: &Vec2<T>| {
        let w = d.mul_vec(v);
        (w[0] * w[0] + w[1] * w[1]).sqrt() / (v[0] * v[0] + v[1] * v[1]).sqrt()
    };
    let contraction: Vec<T> = idx.iter().map(|&i| rate(&samples[i].d_return, &stable[i])).collect();
    let expansion: Vec<T> = idx.iter().map(|&i| rate(&samples[i].d_return, &unstable[i])).collect();
    let n = T::from_usize_lossy(idx.len());
    let frac = |k: usize| T::from_usize_lossy(k) / n;
    let required: Vec<T> = contraction.iter().zip(&expansion).map(|(&c, &e)| c.max(e.recip())).collect();
    let taus: Vec<T> = idx.iter().map(|&i| samples[i].tau).collect();
    let logs: Vec<T> = contraction.iter().map(|c| c.ln()).collect();
    let fit = linear_fit(&taus, &logs);
    Ok(HyperbolicityReport {
        n_samples: idx.len(),
        theta,
        frac_contracting: frac(contraction.iter().filter(|&&c| c < theta).count()),
        frac_expanding: frac(expansion.iter().filter(|&&e| e > theta.recip()).count()),
        worst_contraction: contraction.iter().fold(T::zero(), |a, &c| a.max(c)),
        worst_expansion: expansion.iter().fold(T::infinity(), |a, &e| a.min(e)),
        theta_certified: quantile(&required, T::lit(0.95)),
        theta_per_unit_time: fit.map_or(T::nan(), |f| f.slope.exp()),
        regression_r_squared: fit.map_or(T::nan(), |f| f.r_squared),
        contraction,
        expansion,
    })
}

/// Projection along straight stable leaves onto a transversal line, and the
/// induced one-dimensional map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotientData<T> {
    /// `(ξ, h(ξ))` sorted by ξ.
    pub pairs: Vec<(T, T)>,
    /// ξ-coordinate of Γ, where `h` may jump.
    pub gamma_xi: Option<T>,
}

/// Reference line `origin + ξ·axis` that the stable leaves are projected to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transversal<T> {
    pub origin: Vec2<T>,
    pub axis: Vec2<T>,
}

impl<T: Real> Transversal<T> {
    /// ξ where the line through `x` with direction `leaf` meets the transversal.
    pub fn project(&self, x: &Vec2<T>, leaf: &Vec2<T>) -> Option<T> {
        // x + s·leaf = origin + ξ·axis
        let det = self.axis[0] * (-leaf[1]) - (-leaf[0]) * self.axis[1];
        if det.abs() < T::lit(1e-12) {
            return None;
        }
        let rx = x[0] - self.origin[0];
        let ry = x[1] - self.origin[1];
        Some((rx * (-leaf[1]) - (-leaf[0]) * ry) / det)
    }
}

/// Quotient data from samples with stable directions at both ends of every
/// return (`stable_x[i]` at `x`, `stable_fx[i]` at `fx`).
pub fn stable_projection<T: Real>(
    samples: &[ReturnSample<T>],
    stable_x: &[Option<Vec2<T>>],
    stable_fx: &[Option<Vec2<T>>],
    transversal: &Transversal<T>,
    gamma: Option<&GammaLine<T>>,
) -> Result<QuotientData<T>> {
    if stable_x.len() != samples.len() || stable_fx.len() != samples.len() {
        return Err(Error::FoliationEstimateUnavailable);
    }
    let mut pairs = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.censored {
            continue;
        }
        let (Some(a), Some(b)) = (stable_x[i], stable_fx[i]) else {
            return Err(Error::FoliationEstimateUnavailable);
        };
        if let (Some(xi), Some(hxi)) = (transversal.project(&s.x, &a), transversal.project(&s.fx, &b)) {
            pairs.push((xi, hxi));
        }
    }
    if pairs.is_empty() {
        return Err(Error::FoliationEstimateUnavailable);
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let gamma_xi = gamma.and_then(|g| transversal.project(&g.point, &g.direction));
    Ok(QuotientData { pairs, gamma_xi })
}

impl<T: Real> QuotientData<T> {
    fn side(&self, xi: T) -> bool {
        self.gamma_xi.is_none_or(|g| xi >= g)
    }

    /// Piecewise-linear `h` through the stored pairs, never interpolating
    /// across Γ. Outside the data on a side the nearest value is used.
    pub fn eval(&self, xi: T) -> T {
        self.eval_excluding(xi, usize::MAX)
    }

    fn eval_excluding(&self, xi: T, skip: usize) -> T {
        let side = self.side(xi);
        let mut left: Option<(T, T)> = None;
        let mut right: Option<(T, T)> = None;
        for (k, &(x, h)) in self.pairs.iter().enumerate() {
            if k == skip || self.side(x) != side {
                continue;
            }
            if x <= xi {
                left = Some((x, h));
            } else {
                right = Some((x, h));
                break;
            }
        }
        match (left, right) {
            (Some((x0, h0)), Some((x1, h1))) => {
                if x1 == x0 {
                    h0
                } else {
                    h0 + (h1 - h0) * (xi - x0) / (x1 - x0)
                }
            }
            (Some((_, h)), None) | (None, Some((_, h))) => h,
            (None, None) => T::nan(),
        }
    }

    /// Fraction of adjacent pairs (same side of Γ) whose `h` increment
    /// disagrees with that side's majority sign.
    pub fn order_violation_fraction(&self) -> T {
        let mut total = 0usize;
        let mut bad = 0usize;
        for side in [false, true] {
            let hs: Vec<T> = self.pairs.iter().filter(|p| self.side(p.0) == side).map(|p| p.1).collect();
            let diffs: Vec<T> = hs.windows(2).map(|w| w[1] - w[0]).collect();
            let up = diffs.iter().filter(|&&d| d > T::zero()).count();
            let down = diffs.iter().filter(|&&d| d < T::zero()).count();
            total += diffs.len();
            bad += up.min(down);
        }
        if total == 0 {
            return T::zero();
        }
        T::from_usize_lossy(bad) / T::from_usize_lossy(total)
    }

    /// Leave-one-out check of `h(π(x)) ≈ π(f(x))`: fraction of samples whose
    /// value is predicted by the others to within `resolution`.
    pub fn semiconjugacy_fraction(&self, resolution: T) -> T {
        let n = self.pairs.len();
        if n < 2 {
            return T::zero();
        }
        let ok = (0..n)
            .filter(|&k| {
                let (xi, h) = self.pairs[k];
                (self.eval_excluding(xi, k) - h).abs() < resolution
            })
            .count();
        T::from_usize_lossy(ok) / T::from_usize_lossy(n)
    }

    /// `(lim_{ξ↑Γ} h, lim_{ξ↓Γ} h)` read off the nearest samples.
    pub fn one_sided_limits(&self) -> Option<(T, T)> {
        let g = self.gamma_xi?;
        let left = self.pairs.iter().rev().find(|p| p.0 < g)?.1;
        let right = self.pairs.iter().find(|p| p.0 >= g)?.1;
        Some((left, right))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandCoverReport<T> {
    /// For each partition interval, the elements its sampled image spans.
    pub covered: Vec<Vec<usize>>,
    pub cover_fraction: T,
    pub pass: bool,
}

/// Whether the sampled image of each partition interval spans some whole
/// partition element up to `eps` (endpoint slack and largest gap).
pub fn band_cover_check<T: Real>(quotient: &QuotientData<T>, partition: &[(T, T)], eps: T) -> BandCoverReport<T> {
    let mut covered = Vec::with_capacity(partition.len());
    for &(a, b) in partition {
        let mut img: Vec<T> = quotient.pairs.iter().filter(|p| p.0 >= a && p.0 < b).map(|p| p.1).collect();
        img.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        let spans: Vec<usize> = partition
            .iter()
            .enumerate()
            .filter(|(_, &(c, d))| {
                let inside: Vec<T> = img.iter().copied().filter(|&v| v >= c - eps && v <= d + eps).collect();
                if inside.is_empty() {
                    return false;
                }
                let gaps_ok = inside.windows(2).all(|w| w[1] - w[0] <= eps);
                gaps_ok && inside[0] <= c + eps && *inside.last().unwrap() >= d - eps
            })
            .map(|(j, _)| j)
            .collect();
        covered.push(spans);
    }
    let n_ok = covered.iter().filter(|c| !c.is_empty()).count();
    let cover_fraction =
        if partition.is_empty() { T::zero() } else { T::from_usize_lossy(n_ok) / T::from_usize_lossy(partition.len()) };
    BandCoverReport { covered, cover_fraction, pass: cover_fraction >= T::lit(0.95) }
}

/// CSV with header `x1,x2,fx1,fx2,tau,d11,d12,d21,d22,censored`.
pub fn write_samples_csv<T: Real, W: Write>(samples: &[ReturnSample<T>], mut w: W) -> io::Result<()> {
    writeln!(w, "x1,x2,fx1,fx2,tau,d11,d12,d21,d22,censored")?;
    for s in samples {
        let d = s.d_return.as_slice();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.x[0], s.x[1], s.fx[0], s.fx[1], s.tau, d[0], d[1], d[2], d[3], s.censored
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::DenseSegment;

    fn line_trajectory(z0: f64, speed: f64, t_end: f64, steps: usize) -> Trajectory<f64> {
        let h = t_end / steps as f64;
        let p = |t: f64| [0.0, 0.0, z0 + speed * t];
        let v = [0.0, 0.0, speed];
        let mut times = vec![0.0];
        let mut points = vec![p(0.0)];
        let mut segs = Vec::new();
        for k in 0..steps {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            segs.push(DenseSegment::hermite(a, h, &p(a), &v, &p(b), &v));
            times.push(b);
            points.push(p(b));
        }
        Trajectory::from_segments(times, points, segs)
    }

    fn plane(z: f64) -> CrossSection<f64> {
        CrossSection {
            base: [0.0, 0.0, z],
            normal: [0.0, 0.0, 1.0],
            u1: [1.0, 0.0, 0.0],
            u2: [0.0, 1.0, 0.0],
            bounds: [[-1.0, 1.0], [-1.0, 1.0]],
            direction: CrossingDirection::Decreasing,
            gamma_band_halfwidth: 1e-4,
            gamma: None,
        }
    }

    fn sample(d: [f64; 4], tau: f64) -> ReturnSample<f64> {
        ReturnSample { x: [0.0; 2], fx: [0.0; 2], tau, d_return: Matrix::from_row_slice(2, 2, &d), censored: false }
    }

    #[test]
    fn straight_line_crossing() {
        let tr = line_trajectory(25.0, 1.0, 4.0, 7);
        let c = detect_crossing(&tr, &plane(27.0), CrossingDirection::Increasing);
        assert_eq!(c.len(), 1);
        assert!((c[0].t - 2.0).abs() < 1e-10);
        assert!(!c[0].grazing);
        assert!(detect_crossing(&tr, &plane(27.0), CrossingDirection::Decreasing).is_empty());
        assert!(detect_crossing(&tr, &plane(40.0), CrossingDirection::Either).is_empty());
    }

    #[test]
    fn grazing_is_flagged() {
        let tr = line_trajectory(25.0, 1e-13, 1.0, 1);
        let sec = plane(25.0 + 0.5e-13);
        let c = detect_crossing(&tr, &sec, CrossingDirection::Increasing);
        assert_eq!(c.len(), 1);
        assert!(c[0].grazing);
    }

    #[test]
    fn linear_singularity_never_returns() {
        let f = VectorField::linear(-3.0, -1.0, 2.0);
        let sec = CrossSection::new(
            &f,
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [[-1.0, 1.0], [-1.0, 1.0]],
            CrossingDirection::Decreasing,
        )
        .unwrap();
        let s = poincare_return(&f, &sec, &[0.5, 0.5], &IntegratorConfig::default(), 0.05, 50.0).unwrap();
        assert!(s.censored);
        assert!(matches!(
            poincare_return(&f, &sec, &[2.0, 0.0], &IntegratorConfig::default(), 0.05, 50.0),
            Err(Error::OutsideSection { .. })
        ));
    }

    #[test]
    fn non_transversal_section_is_rejected() {
        // z' = xy − 72 changes sign on |x| ≤ 20, |y| ≤ 25.
        let f = VectorField::<f64>::lorenz();
        let r = CrossSection::new(
            &f,
            [0.0, 0.0, 27.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [[-20.0, 20.0], [-25.0, 25.0]],
            CrossingDirection::Decreasing,
        );
        assert!(r.is_err());
        assert!(CrossSection::lorenz(&f).is_ok());
    }

    #[test]
    fn flow_box_derivatives() {
        let (a, b) = (plane(0.0), plane(1.0));
        let id = return_derivative_with_flow(&a, &b, &Matrix::identity(3), &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(id, Matrix::identity(2));
        let (p, q, f1, f2) = (0.3, -0.7, 0.2, 0.5);
        let dx = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[p, q, 1.0]]);
        let d = return_derivative_with_flow(&a, &b, &dx, &[f1, f2, 1.0]).unwrap();
        let want = Matrix::from_rows(&[&[1.0 - p * f1, -q * f1], &[-p * f2, 1.0 - q * f2]]);
        assert!((&d - &want).max_abs() < 1e-15);
        assert!(matches!(
            return_derivative_with_flow(&a, &b, &dx, &[1.0, 0.0, 1e-10]),
            Err(Error::DegenerateProjection { .. })
        ));
    }

    #[test]
    fn hyperbolicity_on_diagonal_map() {
        let samples: Vec<_> = (0..12).map(|k| sample([0.25, 0.0, 0.0, 4.0], 1.0 + k as f64 * 0.1)).collect();
        let es = vec![[1.0, 0.0]; 12];
        let eu = vec![[0.0, 1.0]; 12];
        let r = hyperbolicity_report(&samples, &es, &eu, 0.5).unwrap();
        assert_eq!(r.frac_contracting, 1.0);
        assert_eq!(r.frac_expanding, 1.0);
        let r = hyperbolicity_report(&samples, &es, &eu, 0.2).unwrap();
        assert_eq!(r.frac_contracting, 0.0);
        assert!(matches!(
            hyperbolicity_report(&samples[..5], &es[..5], &eu[..5], 0.5),
            Err(Error::InsufficientSamples { needed: 10, got: 5 })
        ));
    }

    #[test]
    fn skew_product_quotient_and_cover() {
        let mut samples = Vec::new();
        for i in 0..400 {
            let x = (i as f64 + 0.5) / 400.0;
            let y = ((i * 37) % 400) as f64 / 400.0;
            let mut s = sample([2.0, 0.0, 0.0, 1.0 / 3.0], 1.0);
            s.x = [x, y];
            s.fx = [(2.0 * x) % 1.0, y / 3.0];
            samples.push(s);
        }
        let leaves = vec![Some([0.0, 1.0]); samples.len()];
        let tr = Transversal { origin: [0.0, 0.0], axis: [1.0, 0.0] };
        let gamma = GammaLine { point: [0.5, 0.0], direction: [0.0, 1.0] };
        let q = stable_projection(&samples, &leaves, &leaves, &tr, Some(&gamma)).unwrap();
        assert_eq!(q.gamma_xi, Some(0.5));
        for &xi in &[0.013, 0.2, 0.49, 0.51, 0.77, 0.9] {
            assert!((q.eval(xi) - (2.0 * xi) % 1.0).abs() < 1e-6);
        }
        assert_eq!(q.order_violation_fraction(), 0.0);
        // the four side endpoints have only a one-sided neighbour
        assert_eq!(q.semiconjugacy_fraction(1e-6), 0.99);
        let (l, r) = q.one_sided_limits().unwrap();
        assert!(l > 0.99 && r < 0.01);

        let dyadic = [(0.0, 0.5), (0.5, 1.0)];
        let cover = band_cover_check(&q, &dyadic, 0.01);
        assert!(cover.pass);
        assert_eq!(cover.covered, vec![vec![0, 1], vec![0, 1]]);

        let rot: Vec<(f64, f64)> = (0..400).map(|i| {
            let x = (i as f64 + 0.5) / 400.0;
            (x, (x + 0.3) % 1.0)
        }).collect();
        let rq = QuotientData { pairs: rot, gamma_xi: None };
        let cover = band_cover_check(&rq, &dyadic, 0.01);
        assert!(!cover.pass);
        assert_eq!(cover.cover_fraction, 0.0);

        assert!(matches!(
            stable_projection(&samples, &vec![None; 400], &leaves, &tr, None),
            Err(Error::FoliationEstimateUnavailable)
        ));
    }

    #[test]
    fn return_time_moments() {
        let mut s: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&t| sample([1.0, 0.0, 0.0, 1.0], t)).collect();
        let st = return_time_stats(&s).unwrap();
        assert_eq!((st.mean_tau, st.min_tau, st.max_tau, st.censored_count), (2.0, 1.0, 3.0, 0));
        s[1].censored = true;
        let st = return_time_stats(&s).unwrap();
        assert_eq!((st.mean_tau, st.n_samples, st.censored_count), (2.0, 2, 1));
        for x in s.iter_mut() {
            x.censored = true;
        }
        assert_eq!(return_time_stats(&s), Err(Error::AllCensored));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_samples_csv(&[sample([1.0, 2.0, 3.0, 4.0], 0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x1,x2,fx1,fx2,tau,d11,d12,d21,d22,censored");
        assert_eq!(lines.next().unwrap(), "0,0,0,0,0.5,1,2,3,4,false");
    }
}
