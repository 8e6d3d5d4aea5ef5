//! Lyapunov spectra by QR re-orthonormalization, simplicity verdicts, the
//! map/flow exponent relation, covariant splitting and the singular
//! hyperbolicity inequalities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycles::{drive_cocycle, CocycleGenerator, Recorder, Scalars, Stop};
use crate::error::{Error, Result};
use crate::flows::{flow_derivative_at, integrate_flow, Trajectory, VectorField};
use crate::linalg::Matrix;
use crate::ode::{Integrator, IntegratorConfig, OdeSystem};
use crate::real::{cross3, dot3, line_angle3, norm3, normalize3, Real, Vec3};
use crate::sections::{detect_crossing, CrossSection, SectionOrbit, Vec2};
use crate::stats::{batch_means, quantile};

/// Blocks used for batch-means confidence half-widths.
pub const BATCH_BLOCKS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumFlags {
    /// First- and second-half block means disagree beyond 3 half-widths.
    pub non_convergence: bool,
    /// Exponents of a realified complex cocycle, averaged in pairs.
    pub complex_paired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum<T> {
    /// Descending.
    pub exponents: Vec<T>,
    pub half_widths: Vec<T>,
    /// Time span or number of iterates averaged over.
    pub horizon: T,
    pub gaps: Vec<T>,
    #[serde(rename = "renorm")]
    pub renorm_interval: T,
    pub flags: SpectrumFlags,
}

impl<T: Real> LyapunovSpectrum<T> {
    fn build(mut ex: Vec<(T, T)>, horizon: T, renorm_interval: T, flags: SpectrumFlags) -> Self {
        ex.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let exponents: Vec<T> = ex.iter().map(|e| e.0).collect();
        let half_widths = ex.iter().map(|e| e.1).collect();
        let gaps = exponents.windows(2).map(|w| w[0] - w[1]).collect();
        LyapunovSpectrum { exponents, half_widths, horizon, gaps, renorm_interval, flags }
    }

    /// Averages consecutive pairs (the doubled exponents of a realified
    /// complex cocycle).
    pub fn paired(&self) -> Self {
        let ex = self
            .exponents
            .chunks(2)
            .zip(self.half_widths.chunks(2))
            .map(|(e, h)| {
                let m = e.iter().fold(T::zero(), |a, &v| a + v) / T::from_usize_lossy(e.len());
                let w = h.iter().fold(T::zero(), |a, &v| a.max(v));
                (m, w)
            })
            .collect();
        let flags = SpectrumFlags { complex_paired: true, ..self.flags };
        Self::build(ex, self.horizon, self.renorm_interval, flags)
    }

    pub fn sum(&self) -> T {
        self.exponents.iter().fold(T::zero(), |a, &v| a + v)
    }

    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        serde_json::to_string(self).expect("spectrum serializes")
    }
}

/// Per-interval log growth (`ln R_ii`) and interval lengths.
struct LogRecord<T> {
    logs: Vec<Vec<T>>,
    dts: Vec<T>,
}

impl<T: Real> LogRecord<T> {
    fn new() -> Self {
        LogRecord { logs: Vec::new(), dts: Vec::new() }
    }

    fn spectrum(&self, n: usize, horizon: T, renorm: T, complex: bool) -> Result<LyapunovSpectrum<T>> {
        let total = self.dts.iter().fold(T::zero(), |a, &v| a + v);
        if self.logs.is_empty() || !(total > T::zero()) {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let blocks = BATCH_BLOCKS.min(self.logs.len());
        let size = self.logs.len() / blocks;
        let mut non_conv = false;
        let mut ex = Vec::with_capacity(n);
        for i in 0..n {
            let sum = self.logs.iter().fold(T::zero(), |a, l| a + l[i]);
            let mean = sum / total;
            // block rates
            let rates: Vec<T> = (0..blocks)
                .map(|b| {
                    let r = b * size..(b + 1) * size;
                    let s = self.logs[r.clone()].iter().fold(T::zero(), |a, l| a + l[i]);
                    let d = self.dts[r].iter().fold(T::zero(), |a, &v| a + v);
                    s / d
                })
                .collect();
            let (_, hw) = batch_means(&rates, blocks);
            let hw = if blocks < 2 { T::infinity() } else { hw };
            let half = blocks / 2;
            if half >= 1 {
                let m1 = crate::stats::mean(&rates[..half]);
                let m2 = crate::stats::mean(&rates[half..]);
                if (m1 - m2).abs() > T::lit(3.0) * hw + T::lit(1e-12) {
                    non_conv = true;
                }
            }
            ex.push((mean, hw));
        }
        let s = LyapunovSpectrum::build(ex, horizon, renorm, SpectrumFlags { non_convergence: non_conv, complex_paired: false });
        Ok(if complex { s.paired() } else { s })
    }
}

/// QR step on a row-major `n × n` frame: returns `ln R_ii` and overwrites the
/// frame with `Q`.
fn qr_renorm<T: Real>(n: usize, frame: &mut [T]) -> Result<Vec<T>> {
    let m = Matrix::from_row_slice(n, n, frame);
    let (q, r) = m.qr();
    let mut logs = Vec::with_capacity(n);
    for i in 0..n {
        let d = r[(i, i)];
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::SingularMatrix { condition: f64::INFINITY });
        }
        logs.push(d.ln());
    }
    frame.copy_from_slice(q.as_slice());
    Ok(logs)
}

/// Default transient: 5% of the horizon, at least 50 time units (never
/// more than half the horizon).
pub fn default_transient<T: Real>(horizon: T) -> T {
    (T::lit(0.05) * horizon).max(T::lit(50.0)).min(T::lit(0.5) * horizon)
}

/// Flow spectrum of the cocycle generated by `gen` along the orbit of `x0`.
pub fn qr_lyapunov_flow<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    horizon: T,
    renorm_dt: T,
    transient: T,
    cfg: &IntegratorConfig<T>,
) -> Result<LyapunovSpectrum<T>> {
    Ok(flow_spectrum_run(gen, field, x0, horizon, renorm_dt, transient, cfg, None)?.0)
}

/// As [`qr_lyapunov_flow`], also recording the section crossings of the very
/// orbit the spectrum was computed on.
pub fn qr_lyapunov_flow_with_crossings<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    horizon: T,
    renorm_dt: T,
    transient: T,
    cfg: &IntegratorConfig<T>,
    sec: &CrossSection<T>,
    tau_min: T,
) -> Result<(LyapunovSpectrum<T>, SectionOrbit<T>)> {
    let (s, o) = flow_spectrum_run(gen, field, x0, horizon, renorm_dt, transient, cfg, Some((sec, tau_min)))?;
    Ok((s, o.expect("recorder given")))
}

#[allow(clippy::too_many_arguments)]
fn flow_spectrum_run<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    horizon: T,
    renorm_dt: T,
    transient: T,
    cfg: &IntegratorConfig<T>,
    sec: Option<(&CrossSection<T>, T)>,
) -> Result<(LyapunovSpectrum<T>, Option<SectionOrbit<T>>)> {
    if !(horizon > transient && transient >= T::zero()) {
        return Err(Error::InvalidInput("need horizon > transient >= 0".into()));
    }
    if !(renorm_dt > T::zero()) {
        return Err(Error::InvalidInput("renorm_dt must be positive".into()));
    }
    let n = gen.matrix_dim();
    let mut rec = LogRecord::new();
    let mut last_t = T::zero();
    let recorder = sec.map(|(s, tau_min)| Recorder { sec: s, tau_min, tau_max: horizon, first_t_min: T::zero() });
    let out = drive_cocycle(gen, field, x0, cfg, renorm_dt, Stop::Time(horizon), recorder, |t, frame| {
        let logs = qr_renorm(n, frame)?;
        if last_t >= transient {
            rec.logs.push(logs);
            rec.dts.push(t - last_t);
        }
        last_t = t;
        Ok(())
    })?;
    if out.t > last_t {
        let mut frame = out.state[3..].to_vec();
        let logs = qr_renorm(n, &mut frame)?;
        if last_t >= transient {
            rec.logs.push(logs);
            rec.dts.push(out.t - last_t);
        }
    }
    let averaged = rec.dts.iter().fold(T::zero(), |a, &v| a + v);
    let spec = rec.spectrum(n, averaged, renorm_dt, gen.scalars == Scalars::Complex)?;
    let orbit = sec.map(|(s, _)| SectionOrbit {
        times: out.crossings.iter().map(|c| c.t).collect(),
        points: out.crossings.iter().map(|c| c.p).collect(),
        flagged: out.crossings.iter().map(|c| c.grazing || s.in_gamma_band(&s.coords(&c.p))).collect(),
        truncated: false,
    });
    Ok((spec, orbit))
}

/// Exponents of `A_{n-1}···A_0` per iterate. QR every `renorm_every`
/// products; the first `discard` matrices only align the frame.
pub fn qr_lyapunov_map<T: Real>(
    matrices: &[Matrix<T>],
    renorm_every: usize,
    discard: usize,
) -> Result<LyapunovSpectrum<T>> {
    if matrices.len() < 100 {
        return Err(Error::InsufficientSamples { needed: 100, got: matrices.len() });
    }
    if renorm_every == 0 {
        return Err(Error::InvalidInput("renorm_every must be positive".into()));
    }
    if discard + 2 > matrices.len() {
        return Err(Error::InvalidInput("discard leaves nothing to average".into()));
    }
    let n = matrices[0].rows();
    if matrices.iter().any(|m| m.rows() != n || m.cols() != n) {
        return Err(Error::DimensionMismatch("all matrices must be square of one size".into()));
    }
    let mut q = Matrix::identity(n);
    let mut rec = LogRecord::new();
    let mut chunk_start = 0usize;
    for (k, a) in matrices.iter().enumerate() {
        q = a * &q;
        let end = k + 1;
        let at_discard = end == discard;
        if end - chunk_start == renorm_every || end == matrices.len() || at_discard {
            let mut frame = q.as_slice().to_vec();
            let logs = qr_renorm(n, &mut frame)?;
            q = Matrix::from_row_slice(n, n, &frame);
            if chunk_start >= discard {
                rec.logs.push(logs);
                rec.dts.push(T::from_usize_lossy(end - chunk_start));
            }
            chunk_start = end;
        }
    }
    let horizon = T::from_usize_lossy(matrices.len() - discard);
    rec.spectrum(n, horizon, T::from_usize_lossy(renorm_every), false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplicityVerdict<T> {
    pub simple: bool,
    pub min_gap: T,
    pub resolved: bool,
}

/// `resolved`: every gap exceeds twice the sum of its two half-widths.
/// `simple`: resolved and the smallest gap exceeds `gap_floor`.
pub fn simplicity_verdict<T: Real>(spec: &LyapunovSpectrum<T>, gap_floor: T) -> SimplicityVerdict<T> {
    let min_gap = spec.gaps.iter().fold(T::infinity(), |a, &g| a.min(g));
    let resolved = spec
        .gaps
        .iter()
        .enumerate()
        .all(|(i, &g)| g > T::lit(2.0) * (spec.half_widths[i] + spec.half_widths[i + 1]));
    SimplicityVerdict { simple: resolved && min_gap > gap_floor, min_gap, resolved }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport<T> {
    /// `|λ_map,i − τ̄·λ_flow,i| / max(|τ̄·λ_flow,i|, floor)`.
    pub errors: Vec<T>,
    /// Flow exponent left out (the one closest to zero) when the flow
    /// spectrum has one more exponent than the map spectrum.
    pub dropped_flow_index: Option<usize>,
    pub mean_tau: T,
    /// `mean_tau ≤ 0`: errors are only measured against the floor.
    pub degenerate: bool,
}

pub const RELATION_FLOOR: f64 = 1e-3;

pub fn exponent_relation_check<T: Real>(
    flow: &LyapunovSpectrum<T>,
    map: &LyapunovSpectrum<T>,
    mean_tau: T,
) -> Result<RelationReport<T>> {
    let (nf, nm) = (flow.exponents.len(), map.exponents.len());
    let (flow_ex, dropped) = if nf == nm {
        (flow.exponents.clone(), None)
    } else if nf == nm + 1 {
        let k = (0..nf)
            .min_by(|&a, &b| flow.exponents[a].abs().partial_cmp(&flow.exponents[b].abs()).unwrap())
            .expect("non-empty");
        let mut v = flow.exponents.clone();
        v.remove(k);
        (v, Some(k))
    } else {
        return Err(Error::DimensionMismatch(format!("flow spectrum has {nf} exponents, map spectrum {nm}")));
    };
    let floor = T::lit(RELATION_FLOOR);
    let errors = flow_ex
        .iter()
        .zip(&map.exponents)
        .map(|(&f, &m)| {
            let scaled = mean_tau * f;
            (m - scaled).abs() / scaled.abs().max(floor)
        })
        .collect();
    Ok(RelationReport { errors, dropped_flow_index: dropped, mean_tau, degenerate: !(mean_tau > T::zero()) })
}

/// Tangent dynamics along a stored orbit, forward or time-reversed.
struct TangentAlong<'a, T: Real> {
    field: VectorField<T>,
    traj: &'a Trajectory<T>,
    /// Reversed: the state at `s` sits at orbit time `t_ref − s` and obeys
    /// `v' = −DF·v`.
    reversed: Option<T>,
}

impl<T: Real> OdeSystem<T> for TangentAlong<'_, T> {
    fn dim(&self) -> usize {
        3
    }
    fn rhs(&self, s: T, y: &[T], dy: &mut [T]) {
        let t = self.reversed.map_or(s, |t_ref| t_ref - s);
        let p = self.traj.state_at(t);
        let j = self.field.jacobian_rows(&p);
        let sign = if self.reversed.is_some() { -T::one() } else { T::one() };
        for i in 0..3 {
            dy[i] = sign * (j[3 * i] * y[0] + j[3 * i + 1] * y[1] + j[3 * i + 2] * y[2]);
        }
    }
}

/// Evolves `v0` along the orbit through the ascending orbit times `stops`
/// (forward) or descending ones (reversed), normalizing at least every
/// `renorm`. Returns the unit vector at each stop.
fn leading_vector<T: Real>(
    field: &VectorField<T>,
    traj: &Trajectory<T>,
    reversed: bool,
    v0: Vec3<T>,
    stops: &[T],
    renorm: T,
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<Vec3<T>>> {
    let t_ref = traj.end();
    let sys = TangentAlong { field: *field, traj, reversed: reversed.then_some(t_ref) };
    let s0 = if reversed { T::zero() } else { traj.start() };
    let to_s = |t: T| if reversed { t_ref - t } else { t };
    let mut it = Integrator::new(&sys, s0, &normalize3(&v0), cfg)?;
    let mut out = Vec::with_capacity(stops.len());
    for &t in stops {
        let target = to_s(t);
        while it.t() < target {
            let next = (it.t() + renorm).min(target);
            it.advance_to(next)?;
            let y = it.y();
            let v = normalize3(&[y[0], y[1], y[2]]);
            it.reset_state(&v);
        }
        let y = it.y();
        out.push(normalize3(&[y[0], y[1], y[2]]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplittingSample<T> {
    pub t: T,
    pub point: Vec3<T>,
    pub e_s: Vec3<T>,
    pub e_flow: Vec3<T>,
    pub e_u: Vec3<T>,
    /// Angle between `e_s` and the plane `E^cu = span(e_flow, e_u)`.
    pub angle_s_cu: T,
    pub angle_flow_u: T,
    /// Two different starting vectors agreed to within 1e−6 rad.
    pub converged_u: bool,
    pub converged_s: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingEstimate<T> {
    pub samples: Vec<SplittingSample<T>>,
    pub trajectory: Trajectory<T>,
}

/// Normalization interval of the tangent integrations.
const SPLIT_RENORM: f64 = 0.25;
const CONVERGED: f64 = 1e-6;

/// Splitting at orbit times `t_forward + offsets[i]` of the orbit of `x0`,
/// with `t_backward` of future orbit for the stable direction.
pub fn covariant_splitting<T: Real>(
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t_forward: T,
    t_backward: T,
    offsets: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<SplittingEstimate<T>> {
    if !(t_forward > T::zero() && t_backward > T::zero()) {
        return Err(Error::InvalidInput("splitting horizons must be positive".into()));
    }
    if offsets.iter().any(|&o| !(o >= T::zero())) || offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("offsets must be ascending and non-negative".into()));
    }
    let span = offsets.last().copied().unwrap_or(T::zero());
    let traj = integrate_flow(field, x0, t_forward + span + t_backward, cfg)?;
    let times: Vec<T> = offsets.iter().map(|&o| t_forward + o).collect();
    let samples = splitting_on(field, &traj, &times, cfg)?;
    Ok(SplittingEstimate { samples, trajectory: traj })
}

/// Splitting at ascending `times` inside a stored orbit.
pub fn splitting_on<T: Real>(
    field: &VectorField<T>,
    traj: &Trajectory<T>,
    times: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<SplittingSample<T>>> {
    if times.iter().any(|&t| t < traj.start() || t > traj.end()) {
        return Err(Error::InvalidInput("splitting times must lie inside the orbit".into()));
    }
    let renorm = T::lit(SPLIT_RENORM);
    let va = [T::one(), T::lit(0.3), T::lit(-0.2)];
    let vb = [T::lit(-0.4), T::lit(0.7), T::one()];
    let rev: Vec<T> = times.iter().rev().copied().collect();
    let jobs: Vec<(bool, Vec3<T>)> = vec![(false, va), (false, vb), (true, va), (true, vb)];
    let runs: Vec<Vec<Vec3<T>>> = jobs
        .par_iter()
        .map(|&(reversed, v0)| leading_vector(field, traj, reversed, v0, if reversed { &rev } else { times }, renorm, cfg))
        .collect::<Result<_>>()?;
    let tol = T::lit(CONVERGED);
    let n = times.len();
    Ok((0..n)
        .map(|i| {
            let (ua, ub) = (runs[0][i], runs[1][i]);
            let (sa, sb) = (runs[2][n - 1 - i], runs[3][n - 1 - i]);
            let p = traj.state_at(times[i]);
            let e_flow = normalize3(&field.eval(&p));
            let e_u = ua;
            let e_s = sa;
            let normal = normalize3(&cross3(&e_flow, &e_u));
            let angle_s_cu = dot3(&e_s, &normal).abs().min(T::one()).asin();
            SplittingSample {
                t: times[i],
                point: p,
                e_s,
                e_flow,
                e_u,
                angle_s_cu,
                angle_flow_u: line_angle3(&e_flow, &e_u),
                converged_u: line_angle3(&ua, &ub) < tol,
                converged_s: line_angle3(&sa, &sb) < tol,
            }
        })
        .collect())
}

/// Section crossings of one stored orbit with the splitting at each, plus
/// the section directions `E^s_Σ`, `E^u_Σ` (projections along the flow).
#[derive(Debug, Clone, PartialEq)]
pub struct SectionSplitting<T> {
    pub orbit: SectionOrbit<T>,
    pub splitting: Vec<SplittingSample<T>>,
    pub stable: Vec<Vec2<T>>,
    pub unstable: Vec<Vec2<T>>,
    pub trajectory: Trajectory<T>,
}

/// The first `n` crossings after `t_forward` on the orbit of `x0`, keeping
/// `t_backward` of orbit beyond the last one.
#[allow(clippy::too_many_arguments)]
pub fn section_splitting<T: Real>(
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    x0: &Vec3<T>,
    n: usize,
    t_forward: T,
    t_backward: T,
    tau_min: T,
    cfg: &IntegratorConfig<T>,
) -> Result<SectionSplitting<T>> {
    let mut span = T::from_usize_lossy(n) * T::lit(1.5) + T::lit(10.0);
    for _ in 0..8 {
        let traj = integrate_flow(field, x0, t_forward + span + t_backward, cfg)?;
        let mut times = Vec::new();
        let mut points = Vec::new();
        let mut flagged = Vec::new();
        for c in detect_crossing(&traj, sec, sec.direction) {
            if c.t < t_forward || c.t > t_forward + span {
                continue;
            }
            let x = sec.coords(&c.p);
            if !sec.contains(&x) || times.last().is_some_and(|&t: &T| c.t - t < tau_min) {
                continue;
            }
            times.push(c.t);
            points.push(c.p);
            flagged.push(c.grazing || sec.in_gamma_band(&x));
            if times.len() == n {
                break;
            }
        }
        if times.len() < n {
            span = span * T::lit(2.0);
            continue;
        }
        let splitting = splitting_on(field, &traj, &times, cfg)?;
        let mut stable = Vec::with_capacity(n);
        let mut unstable = Vec::with_capacity(n);
        for s in &splitting {
            let f = field.eval(&s.point);
            stable.push(unit2(sec.project_along(&s.e_s, &f)?));
            unstable.push(unit2(sec.project_along(&s.e_u, &f)?));
        }
        let orbit = SectionOrbit { times, points, flagged, truncated: false };
        return Ok(SectionSplitting { orbit, splitting, stable, unstable, trajectory: traj });
    }
    Err(Error::InsufficientSamples { needed: n, got: 0 })
}

fn unit2<T: Real>(v: Vec2<T>) -> Vec2<T> {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / n, v[1] / n]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityCheck<T> {
    pub t: T,
    /// `|DX^t e_s|`.
    pub contraction: T,
    /// `|DX^t e_s| / σ_min(DX^t|E^cu)`.
    pub domination: T,
    /// `|DX^t e_s|·σ_max(DX^t|E^cu)`, the product form.
    pub domination_product: T,
    /// `|det DX^t|E^cu|`.
    pub cu_volume: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularHyperbolicityReport<T> {
    pub theta: T,
    pub t_grid: Vec<T>,
    pub n_samples: usize,
    /// Fractions of samples passing at `theta` for every `t` in the grid.
    pub frac_domination: T,
    pub frac_contraction: T,
    pub frac_volume: T,
    pub frac_all: T,
    /// Worst log-margins over samples and times, `ln(θ^t) − ln(quantity)`
    /// for domination and contraction, `ln(vol) + θt` for the volume.
    pub worst_margin_domination: T,
    pub worst_margin_contraction: T,
    pub worst_margin_volume: T,
    /// Smallest θ each sample needs for all three items at every t.
    pub required_theta: Vec<T>,
    /// 0.9-quantile of `required_theta` and the pass fraction there.
    pub theta_certified: T,
    pub frac_all_at_certified: T,
    pub checks: Vec<Vec<HyperbolicityCheck<T>>>,
}

pub const CERTIFY_QUANTILE: f64 = 0.9;

/// The three splitting inequalities at every sample and `t`, with
/// `E^cu = span(e_flow, e_u)` and the conorm form of domination.
pub fn check_singular_hyperbolicity<T: Real>(
    samples: &[SplittingSample<T>],
    field: &VectorField<T>,
    t_grid: &[T],
    theta: T,
    cfg: &IntegratorConfig<T>,
) -> Result<SingularHyperbolicityReport<T>> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(theta > T::zero() && theta < T::one()) {
        return Err(Error::InvalidInput("theta must lie in (0,1)".into()));
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > T::zero())) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("t_grid must be positive and strictly ascending".into()));
    }
    let checks: Vec<Vec<HyperbolicityCheck<T>>> = samples
        .par_iter()
        .map(|s| {
            let path = flow_derivative_at(field, &s.point, t_grid, cfg)?;
            let q1 = s.e_flow;
            let w = {
                let d = dot3(&s.e_u, &q1);
                normalize3(&[s.e_u[0] - d * q1[0], s.e_u[1] - d * q1[1], s.e_u[2] - d * q1[2]])
            };
            Ok(path
                .iter()
                .zip(t_grid)
                .map(|((_, dx), &t)| {
                    let cs = norm3(&vec3(&dx.mul_vec(&s.e_s)));
                    let a = vec3(&dx.mul_vec(&q1));
                    let b = vec3(&dx.mul_vec(&w));
                    let bm = Matrix::from_fn(3, 2, |i, j| if j == 0 { a[i] } else { b[i] });
                    let sv = bm.singular_values();
                    HyperbolicityCheck {
                        t,
                        contraction: cs,
                        domination: cs / sv[1],
                        domination_product: cs * sv[0],
                        cu_volume: norm3(&cross3(&a, &b)),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let n = T::from_usize_lossy(samples.len());
    let lt = theta.ln();
    let pass = |c: &HyperbolicityCheck<T>, lt: T, th: T| {
        let bound = (lt * c.t).exp();
        (c.domination <= bound, c.contraction < bound, c.cu_volume >= (-th * c.t).exp())
    };
    let frac = |f: &dyn Fn(&HyperbolicityCheck<T>) -> bool| {
        T::from_usize_lossy(checks.iter().filter(|cs| cs.iter().all(f)).count()) / n
    };
    let required: Vec<T> = checks
        .iter()
        .map(|cs| {
            cs.iter().fold(T::zero(), |acc, c| {
                let r1 = c.domination.powf(c.t.recip());
                let r2 = c.contraction.powf(c.t.recip());
                let r3 = -c.cu_volume.ln() / c.t;
                acc.max(r1).max(r2).max(r3)
            })
        })
        .collect();
    let theta_cert = quantile(&required, T::lit(CERTIFY_QUANTILE));
    let lc = theta_cert.ln();
    let worst = |f: &dyn Fn(&HyperbolicityCheck<T>) -> T| {
        checks.iter().flat_map(|cs| cs.iter()).fold(T::infinity(), |a, c| a.min(f(c)))
    };
    Ok(SingularHyperbolicityReport {
        theta,
        t_grid: t_grid.to_vec(),
        n_samples: samples.len(),
        frac_domination: frac(&|c| pass(c, lt, theta).0),
        frac_contraction: frac(&|c| pass(c, lt, theta).1),
        frac_volume: frac(&|c| pass(c, lt, theta).2),
        frac_all: frac(&|c| {
            let p = pass(c, lt, theta);
            p.0 && p.1 && p.2
        }),
        worst_margin_domination: worst(&|c| lt * c.t - c.domination.ln()),
        worst_margin_contraction: worst(&|c| lt * c.t - c.contraction.ln()),
        worst_margin_volume: worst(&|c| c.cu_volume.ln() + theta * c.t),
        theta_certified: theta_cert,
        frac_all_at_certified: frac(&|c| {
            // non-strict contraction bound at the quantile
            let bound = (lc * c.t).exp();
            c.domination <= bound && c.contraction <= bound && c.cu_volume >= (-theta_cert * c.t).exp()
        }),
        required_theta: required,
        checks,
    })
}

fn vec3<T: Real>(v: &[T]) -> Vec3<T> {
    [v[0], v[1], v[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> IntegratorConfig<f64> {
        IntegratorConfig::default()
    }

    #[test]
    fn constant_diagonal_flow_spectrum() {
        let g = CocycleGenerator::constant(&Matrix::from_diag(&[2.0, -1.0]));
        let f = VectorField::lorenz();
        let x0 = [1.0, 1.0, 20.0];
        let a = qr_lyapunov_flow(&g, &f, &x0, 40.0, 0.5, 2.0, &cfg()).unwrap();
        assert!((a.exponents[0] - 2.0).abs() < 1e-8 && (a.exponents[1] + 1.0).abs() < 1e-8, "{:?}", a.exponents);
        let b = qr_lyapunov_flow(&g, &f, &x0, 40.0, 0.25, 2.0, &cfg()).unwrap();
        for (x, y) in a.exponents.iter().zip(&b.exponents) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(qr_lyapunov_flow(&g, &f, &x0, 1.0, 0.5, 2.0, &cfg()).is_err());
    }

    #[test]
    fn diagonal_map_spectrum_is_exact() {
        let m = Matrix::from_diag(&[3.0, 1.0 / 3.0]);
        let s = qr_lyapunov_map(&vec![m; 200], 1, 0).unwrap();
        assert!((s.exponents[0] - 3f64.ln()).abs() < 1e-14);
        assert!((s.exponents[1] + 3f64.ln()).abs() < 1e-14);
        assert!(qr_lyapunov_map(&vec![Matrix::<f64>::identity(2); 99], 1, 0).is_err());
    }

    #[test]
    fn product_order_matters() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 0.5]]);
        let b = Matrix::from_rows(&[&[1.0, 0.0], &[3.0, 1.0]]);
        let c = Matrix::from_diag(&[1.5, 1.0]);
        let abc: Vec<_> = (0..300).flat_map(|_| [a.clone(), b.clone(), c.clone()]).collect();
        let acb: Vec<_> = (0..300).flat_map(|_| [a.clone(), c.clone(), b.clone()]).collect();
        let s1 = qr_lyapunov_map(&abc, 1, 0).unwrap();
        let s2 = qr_lyapunov_map(&acb, 1, 0).unwrap();
        // oracle: per-period top exponent from the eigenvalues of one period
        let top = |p: Matrix<f64>| {
            let (tr, det) = (p.trace(), p.det());
            ((tr.abs() + (tr * tr - 4.0 * det).sqrt()) / 2.0).ln() / 3.0
        };
        assert!((s1.exponents[0] - top(&(&c * &b) * &a)).abs() < 1e-3);
        assert!((s2.exponents[0] - top(&(&b * &c) * &a)).abs() < 1e-3);
        assert!((s1.exponents[0] - s2.exponents[0]).abs() > 1e-3);
    }

    #[test]
    fn verdicts() {
        let mk = |e: Vec<f64>, h: f64| LyapunovSpectrum::build(
            e.into_iter().map(|x| (x, h)).collect(), 1.0, 1.0, SpectrumFlags::default());
        let v = simplicity_verdict(&mk(vec![2.0, -1.0], 1e-8), 0.1);
        assert!(v.simple && v.resolved && v.min_gap == 3.0);
        let v = simplicity_verdict(&mk(vec![1.0, 1.0], 1e-8), 0.1);
        assert!(!v.simple && !v.resolved);
        let v = simplicity_verdict(&mk(vec![1.0, 0.99], 0.1), 0.001);
        assert!(!v.simple && !v.resolved);
    }

    #[test]
    fn relation_closed_form_and_guards() {
        let flow = LyapunovSpectrum::build(vec![(1.0, 0.0), (-1.0, 0.0)], 1.0, 1.0, SpectrumFlags::default());
        let legs = vec![Matrix::from_diag(&[2f64.exp(), (-2f64).exp()]); 150];
        let map = qr_lyapunov_map(&legs, 1, 0).unwrap();
        assert!((map.exponents[0] - 2.0).abs() < 1e-14);
        let r = exponent_relation_check(&flow, &map, 2.0).unwrap();
        assert!(r.errors.iter().all(|&e| e < 1e-14) && !r.degenerate);
        let r = exponent_relation_check(&flow, &map, 0.0).unwrap();
        assert!(r.degenerate && (r.errors[0] - 2.0 / RELATION_FLOOR).abs() < 1e-9);
        let three = LyapunovSpectrum::build(vec![(1.0, 0.0), (0.01, 0.0), (-1.0, 0.0)], 1.0, 1.0, SpectrumFlags::default());
        let r = exponent_relation_check(&three, &map, 2.0).unwrap();
        assert_eq!(r.dropped_flow_index, Some(1));
        let one = LyapunovSpectrum::build(vec![(1.0, 0.0)], 1.0, 1.0, SpectrumFlags::default());
        assert!(matches!(exponent_relation_check(&three, &one, 2.0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn complex_pairs_average() {
        let s = LyapunovSpectrum::<f64>::build(vec![(1.0, 0.1), (0.98, 0.2), (-1.0, 0.1), (-1.02, 0.1)], 1.0, 1.0, SpectrumFlags::default());
        let p = s.paired();
        assert_eq!(p.exponents.len(), 2);
        assert!((p.exponents[0] - 0.99f64).abs() < 1e-15 && p.half_widths[0] == 0.2 && p.flags.complex_paired);
    }

    #[test]
    fn linear_singularity_axes() {
        let f = VectorField::linear(-3.0, -1.0, 2.0);
        let e = covariant_splitting(&f, &[1e-3, 1e-7, 0.0], 8.0, 8.0, &[0.0], &cfg()).unwrap();
        let s = &e.samples[0];
        assert!(line_angle3(&s.e_s, &[1.0, 0.0, 0.0]) < 1e-6);
        assert!(line_angle3(&s.e_u, &[0.0, 1.0, 0.0]) < 1e-6);
        assert!(s.converged_s && s.converged_u);
    }

    fn axis_sample(point: Vec3<f64>) -> SplittingSample<f64> {
        SplittingSample {
            t: 0.0,
            point,
            e_s: [1.0, 0.0, 0.0],
            e_flow: [0.0, 0.0, 1.0],
            e_u: [0.0, 1.0, 0.0],
            angle_s_cu: std::f64::consts::FRAC_PI_2,
            angle_flow_u: std::f64::consts::FRAC_PI_2,
            converged_u: true,
            converged_s: true,
        }
    }

    #[test]
    fn linear_singularity_passes_and_expanding_flow_fails() {
        let f = VectorField::linear(-3.0, -1.0, 2.0);
        let samples = vec![axis_sample([0.0; 3]); 4];
        let theta = (-1f64).exp();
        let r = check_singular_hyperbolicity(&samples, &f, &[1.0, 2.0], theta, &cfg()).unwrap();
        assert_eq!(r.frac_all, 1.0);
        let c = &r.checks[0][1];
        assert!((c.contraction - (-6f64).exp()).abs() < 1e-9);
        assert!((c.domination - (-4f64).exp()).abs() < 1e-9);
        assert!((c.cu_volume - 2f64.exp()).abs() < 1e-8);
        let g = VectorField::linear(1.0, 0.5, 2.0);
        let r = check_singular_hyperbolicity(&samples, &g, &[0.5, 1.0], 0.9, &cfg()).unwrap();
        assert_eq!(r.frac_contraction, 0.0);
        assert!(check_singular_hyperbolicity(&samples, &f, &[1.0], 1.2, &cfg()).is_err());
        assert!(check_singular_hyperbolicity(&[], &f, &[1.0], 0.5, &cfg()).is_err());
    }
}
