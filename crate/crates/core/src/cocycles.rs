//! Linear cocycles over the flow generated by matrix fields, the induced
//! cocycle on a cross-section, Hölder estimates and fiber bunching checks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{FlowSystem, VectorField};
use crate::linalg::{matmul_into, Matrix};
use crate::ode::{Integrator, IntegratorConfig, OdeSystem};
use crate::real::{norm3, sub3, Real, Vec3};
use crate::sections::{crossing_in_last_step, CrossSection, Crossing, ReturnSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CocycleKind {
    /// `A^t = DX^t`, i.e. the generator is the Jacobian of the field (plus
    /// any trig terms added by perturbation).
    Dynamical,
    GeneratorField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scalars {
    Real,
    /// Stored as real and imaginary parts; evolved as the real `2d × 2d`
    /// matrix `[[Re, −Im], [Im, Re]]`.
    Complex,
}

/// One term `Ccos·cos(w·p) + Csin·sin(w·p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigMode<T> {
    pub w: [T; 3],
    #[serde(rename = "Ccos")]
    pub c_cos: Vec<T>,
    #[serde(rename = "Csin")]
    pub c_sin: Vec<T>,
    #[serde(rename = "Ccos_im", default, skip_serializing_if = "Option::is_none")]
    pub c_cos_im: Option<Vec<T>>,
    #[serde(rename = "Csin_im", default, skip_serializing_if = "Option::is_none")]
    pub c_sin_im: Option<Vec<T>>,
}

/// `G(p) = C0 + Σ_k (Ccos_k cos(w_k·p) + Csin_k sin(w_k·p))`, all `d × d`
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocycleGenerator<T> {
    pub kind: CocycleKind,
    pub dim: usize,
    pub scalars: Scalars,
    pub traceless: bool,
    #[serde(rename = "C0")]
    pub c0: Vec<T>,
    #[serde(rename = "C0_im", default, skip_serializing_if = "Option::is_none")]
    pub c0_im: Option<Vec<T>>,
    #[serde(default)]
    pub modes: Vec<TrigMode<T>>,
}

impl<T: Real> CocycleGenerator<T> {
    /// `G ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self::constant(&Matrix::zeros(dim, dim))
    }

    pub fn constant(c0: &Matrix<T>) -> Self {
        CocycleGenerator {
            kind: CocycleKind::GeneratorField,
            dim: c0.rows(),
            scalars: Scalars::Real,
            traceless: false,
            c0: c0.as_slice().to_vec(),
            c0_im: None,
            modes: Vec::new(),
        }
    }

    pub fn dynamical() -> Self {
        let mut g = Self::zero(3);
        g.kind = CocycleKind::Dynamical;
        g
    }

    /// A random trig field with `n_modes` modes, scaled by `scale`.
    pub fn random_trig(dim: usize, n_modes: usize, scale: T, seed: u64) -> Self {
        let mut g = Self::zero(dim);
        let r = random_field::<T>(dim, Scalars::Real, n_modes, seed);
        g.add_scaled(&r, scale);
        g
    }

    /// No trig modes and not dynamical: `G` is the same matrix everywhere.
    pub fn is_space_independent(&self) -> bool {
        self.kind == CocycleKind::GeneratorField && self.modes.is_empty()
    }

    /// Size of the real matrices actually evolved.
    pub fn matrix_dim(&self) -> usize {
        match self.scalars {
            Scalars::Real => self.dim,
            Scalars::Complex => 2 * self.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.dim < 2 || self.dim > 8 {
            return bad("generator dim must lie in 2..=8".into());
        }
        if self.kind == CocycleKind::Dynamical
            && (self.dim != 3 || self.scalars != Scalars::Real || self.traceless)
        {
            return bad("dynamical cocycles are real, 3-dimensional and not trace-projected".into());
        }
        let dd = self.dim * self.dim;
        let complex = self.scalars == Scalars::Complex;
        let check = |name: &str, v: &[T]| -> Result<()> {
            if v.len() != dd {
                return Err(Error::InvalidInput(format!("{name} needs {dd} entries, has {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        let check_im = |name: &str, v: &Option<Vec<T>>| -> Result<()> {
            match (complex, v) {
                (true, Some(v)) => check(name, v),
                (true, None) => Ok(()),
                (false, Some(_)) => Err(Error::InvalidInput(format!("{name} given for a real generator"))),
                (false, None) => Ok(()),
            }
        };
        check("C0", &self.c0)?;
        check_im("C0_im", &self.c0_im)?;
        for (k, m) in self.modes.iter().enumerate() {
            check(&format!("modes[{k}].Ccos"), &m.c_cos)?;
            check(&format!("modes[{k}].Csin"), &m.c_sin)?;
            check_im(&format!("modes[{k}].Ccos_im"), &m.c_cos_im)?;
            check_im(&format!("modes[{k}].Csin_im"), &m.c_sin_im)?;
            if m.w.iter().any(|x| !x.is_finite()) {
                return bad(format!("modes[{k}].w has non-finite entries"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        serde_json::to_string(self).expect("generator serializes")
    }

    pub fn from_json(s: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let g: Self = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    /// `G(p)` as a real `n × n` matrix (row-major into `out`), including the
    /// field Jacobian for dynamical cocycles and the trace projection.
    pub fn eval_into(&self, field: &VectorField<T>, p: &Vec3<T>, out: &mut [T]) {
        let d = self.dim;
        let dd = d * d;
        let complex = self.scalars == Scalars::Complex;
        let mut re = [T::zero(); 64];
        let mut im = [T::zero(); 64];
        let (re, im) = if dd <= 64 {
            (&mut re[..dd], &mut im[..dd])
        } else {
            unreachable!("generator dim above 8 is rejected by validation")
        };
        re.copy_from_slice(&self.c0);
        if let Some(c) = &self.c0_im {
            im.copy_from_slice(c);
        }
        for m in &self.modes {
            let phase = m.w[0] * p[0] + m.w[1] * p[1] + m.w[2] * p[2];
            let (s, c) = phase.sin_cos();
            for i in 0..dd {
                re[i] += c * m.c_cos[i] + s * m.c_sin[i];
            }
            if complex {
                if let Some(v) = &m.c_cos_im {
                    for i in 0..dd {
                        im[i] += c * v[i];
                    }
                }
                if let Some(v) = &m.c_sin_im {
                    for i in 0..dd {
                        im[i] += s * v[i];
                    }
                }
            }
        }
        if self.kind == CocycleKind::Dynamical {
            let j = field.jacobian_rows(p);
            for i in 0..9 {
                re[i] += j[i];
            }
        }
        if self.traceless {
            let dn = T::from_usize_lossy(d);
            let (tr, ti) = (0..d).fold((T::zero(), T::zero()), |(a, b), i| (a + re[i * d + i], b + im[i * d + i]));
            for i in 0..d {
                re[i * d + i] -= tr / dn;
                im[i * d + i] -= ti / dn;
            }
        }
        if !complex {
            out[..dd].copy_from_slice(re);
            return;
        }
        let n = 2 * d;
        for i in 0..d {
            for j in 0..d {
                let (r, m) = (re[i * d + j], im[i * d + j]);
                out[i * n + j] = r;
                out[(i + d) * n + j + d] = r;
                out[i * n + j + d] = -m;
                out[(i + d) * n + j] = m;
            }
        }
    }

    pub fn eval(&self, field: &VectorField<T>, p: &Vec3<T>) -> Matrix<T> {
        let n = self.matrix_dim();
        let mut out = vec![T::zero(); n * n];
        self.eval_into(field, p, &mut out);
        Matrix::from_row_slice(n, n, &out)
    }

    fn add_scaled(&mut self, r: &CocycleGenerator<T>, eps: T) {
        let axpy = |a: &mut Vec<T>, b: &[T]| a.iter_mut().zip(b).for_each(|(x, &y)| *x += eps * y);
        axpy(&mut self.c0, &r.c0);
        if let Some(ri) = &r.c0_im {
            let im = self.c0_im.get_or_insert_with(|| vec![T::zero(); ri.len()]);
            axpy(im, ri);
        }
        let scale = |v: &Vec<T>| v.iter().map(|&x| eps * x).collect::<Vec<T>>();
        for m in &r.modes {
            self.modes.push(TrigMode {
                w: m.w,
                c_cos: scale(&m.c_cos),
                c_sin: scale(&m.c_sin),
                c_cos_im: m.c_cos_im.as_ref().map(scale),
                c_sin_im: m.c_sin_im.as_ref().map(scale),
            });
        }
    }
}

/// Number of trig modes in a perturbation.
pub const PERTURBATION_MODES: usize = 3;
/// Frequencies are drawn uniformly from `[−W, W]` per component.
pub const PERTURBATION_MAX_FREQUENCY: f64 = 0.2;

fn normal_vec<T: Real, R: Rng>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::lit(v)
        })
        .collect()
}

fn rescale<T: Real>(parts: &mut [&mut Vec<T>]) {
    let ss = parts.iter().flat_map(|v| v.iter()).fold(T::zero(), |a, &x| a + x * x);
    let s = ss.sqrt();
    if s > T::zero() {
        for v in parts.iter_mut() {
            v.iter_mut().for_each(|x| *x /= s);
        }
    }
}

/// Random field with `‖C0‖_F = 1` and `‖Ccos_k‖² + ‖Csin_k‖² = 1` per mode
/// (imaginary parts included), so `sup_p ‖R(p)‖ ≤ 1 + n_modes`.
fn random_field<T: Real>(dim: usize, scalars: Scalars, n_modes: usize, seed: u64) -> CocycleGenerator<T> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let dd = dim * dim;
    let complex = scalars == Scalars::Complex;
    let mut c0 = normal_vec::<T, _>(&mut rng, dd);
    let mut c0_im = complex.then(|| normal_vec::<T, _>(&mut rng, dd));
    match &mut c0_im {
        Some(im) => rescale(&mut [&mut c0, im]),
        None => rescale(&mut [&mut c0]),
    }
    let mut modes = Vec::with_capacity(n_modes);
    for _ in 0..n_modes {
        let w = std::array::from_fn(|_| {
            T::lit(rng.random_range(-PERTURBATION_MAX_FREQUENCY..PERTURBATION_MAX_FREQUENCY))
        });
        let mut c_cos = normal_vec::<T, _>(&mut rng, dd);
        let mut c_sin = normal_vec::<T, _>(&mut rng, dd);
        let (mut ci, mut si) = if complex {
            (Some(normal_vec::<T, _>(&mut rng, dd)), Some(normal_vec::<T, _>(&mut rng, dd)))
        } else {
            (None, None)
        };
        match (&mut ci, &mut si) {
            (Some(a), Some(b)) => rescale(&mut [&mut c_cos, &mut c_sin, a, b]),
            _ => rescale(&mut [&mut c_cos, &mut c_sin]),
        }
        modes.push(TrigMode { w, c_cos, c_sin, c_cos_im: ci, c_sin_im: si });
    }
    CocycleGenerator {
        kind: CocycleKind::GeneratorField,
        dim,
        scalars,
        traceless: false,
        c0,
        c0_im,
        modes,
    }
}

/// `gen + ε·R` for the seed-determined random field `R` (see
/// [`PERTURBATION_MODES`]); `ε = 0` returns an exact copy.
pub fn perturb_generator<T: Real>(gen: &CocycleGenerator<T>, epsilon: T, seed: u64) -> Result<CocycleGenerator<T>> {
    if !(epsilon >= T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidInput("epsilon must be finite and non-negative".into()));
    }
    if epsilon == T::zero() {
        return Ok(gen.clone());
    }
    let r = random_field::<T>(gen.dim, gen.scalars, PERTURBATION_MODES, seed);
    let mut out = gen.clone();
    out.add_scaled(&r, epsilon);
    Ok(out)
}

/// `x' = F(x)`, `M' = G(x)·M` with `M` an `n × cols` frame.
pub struct CocycleSystem<'a, T: Real> {
    pub field: VectorField<T>,
    pub gen: &'a CocycleGenerator<T>,
    pub cols: usize,
}

impl<'a, T: Real> CocycleSystem<'a, T> {
    pub fn new(field: VectorField<T>, gen: &'a CocycleGenerator<T>) -> Self {
        CocycleSystem { field, gen, cols: gen.matrix_dim() }
    }

    /// Base point followed by the identity frame.
    pub fn initial_state(&self, x0: &Vec3<T>) -> Vec<T> {
        let n = self.gen.matrix_dim();
        let mut y = vec![T::zero(); 3 + n * self.cols];
        y[..3].copy_from_slice(x0);
        for i in 0..n.min(self.cols) {
            y[3 + i * self.cols + i] = T::one();
        }
        y
    }
}

impl<T: Real> OdeSystem<T> for CocycleSystem<'_, T> {
    fn dim(&self) -> usize {
        3 + self.gen.matrix_dim() * self.cols
    }
    fn watched(&self) -> usize {
        3
    }
    fn rhs(&self, _t: T, y: &[T], dy: &mut [T]) {
        let p = [y[0], y[1], y[2]];
        dy[..3].copy_from_slice(&self.field.eval(&p));
        let n = self.gen.matrix_dim();
        let mut g = [T::zero(); 256];
        let g = &mut g[..n * n];
        self.gen.eval_into(&self.field, &p, g);
        matmul_into(n, g, &y[3..], self.cols, &mut dy[3..]);
    }
}

fn check_gen<T: Real>(gen: &CocycleGenerator<T>) -> Result<()> {
    gen.validate()
}

/// `M' = C·M` for a space-independent generator.
struct ConstantSystem<T> {
    c: Vec<T>,
    n: usize,
}

impl<T: Real> OdeSystem<T> for ConstantSystem<T> {
    fn dim(&self) -> usize {
        self.n * self.n
    }
    fn rhs(&self, _t: T, y: &[T], dy: &mut [T]) {
        matmul_into(self.n, &self.c, y, self.n, dy);
    }
}

/// `A^t(x0)`; exactly the identity for `t = 0`.
pub fn evolve_cocycle<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t: T,
    cfg: &IntegratorConfig<T>,
) -> Result<Matrix<T>> {
    Ok(evolve_cocycle_at(gen, field, x0, &[t], cfg)?.pop().expect("one time").1)
}

/// `(X^t(x0), A^t(x0))` at ascending non-negative `times`, one integration.
pub fn evolve_cocycle_at<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    times: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<(Vec3<T>, Matrix<T>)>> {
    check_gen(gen)?;
    if gen.is_space_independent() {
        return evolve_constant_at(gen, field, x0, times, cfg);
    }
    let sys = CocycleSystem::new(*field, gen);
    let n = gen.matrix_dim();
    let mut it = Integrator::new(&sys, T::zero(), &sys.initial_state(x0), cfg)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= it.t()) {
            return Err(Error::InvalidInput("times must be ascending and non-negative".into()));
        }
        if t == T::zero() {
            out.push((*x0, Matrix::identity(n)));
            continue;
        }
        it.advance_to(t)?;
        let y = it.y();
        out.push(([y[0], y[1], y[2]], Matrix::from_row_slice(n, n, &y[3..])));
    }
    Ok(out)
}

/// The matrix part does not see the base orbit, so `A^t` is bitwise the
/// same at every starting point.
fn evolve_constant_at<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    times: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<(Vec3<T>, Matrix<T>)>> {
    let n = gen.matrix_dim();
    let mut c = vec![T::zero(); n * n];
    gen.eval_into(field, x0, &mut c);
    let sys = ConstantSystem { c, n };
    let base = FlowSystem { field: *field };
    let id = Matrix::<T>::identity(n);
    let mut it = Integrator::new(&sys, T::zero(), id.as_slice(), cfg)?;
    let mut bt = Integrator::new(&base, T::zero(), x0, cfg)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= it.t()) {
            return Err(Error::InvalidInput("times must be ascending and non-negative".into()));
        }
        if t == T::zero() {
            out.push((*x0, id.clone()));
            continue;
        }
        it.advance_to(t)?;
        bt.advance_to(t)?;
        let y = bt.y();
        out.push(([y[0], y[1], y[2]], Matrix::from_row_slice(n, n, it.y())));
    }
    Ok(out)
}

/// `A^t(x0) = e^{log_scale}·matrix`, rescaling the frame every `renorm_dt`
/// so that long horizons neither overflow nor underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMatrix<T> {
    pub matrix: Matrix<T>,
    pub log_scale: T,
}

pub fn evolve_cocycle_scaled<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    t: T,
    renorm_dt: T,
    cfg: &IntegratorConfig<T>,
) -> Result<(Vec3<T>, ScaledMatrix<T>)> {
    check_gen(gen)?;
    if !(renorm_dt > T::zero()) {
        return Err(Error::InvalidInput("renorm_dt must be positive".into()));
    }
    let sys = CocycleSystem::new(*field, gen);
    let n = gen.matrix_dim();
    let mut y = sys.initial_state(x0);
    let mut it = Integrator::new(&sys, T::zero(), &y, cfg)?;
    let mut log_scale = T::zero();
    let mut s = T::zero();
    while s < t {
        let next = (s + renorm_dt).min(t);
        it.advance_to(next)?;
        y.copy_from_slice(it.y());
        let m = y[3..].iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        if !(m > T::zero()) || !m.is_finite() {
            return Err(Error::SingularMatrix { condition: f64::INFINITY });
        }
        y[3..].iter_mut().for_each(|v| *v /= m);
        log_scale += m.ln();
        it.reset_state(&y);
        s = next;
    }
    Ok(([y[0], y[1], y[2]], ScaledMatrix { matrix: Matrix::from_row_slice(n, n, &y[3..]), log_scale }))
}

/// When a cocycle integration stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Stop<T> {
    Time(T),
    /// At the `n`-th recorded crossing (exactly at its time).
    Crossings(usize),
}

/// Section crossings to record during a cocycle integration.
pub(crate) struct Recorder<'a, T> {
    pub sec: &'a CrossSection<T>,
    pub tau_min: T,
    /// Give up when no crossing follows the previous one within this time.
    pub tau_max: T,
    /// Earliest time of the first recorded crossing.
    pub first_t_min: T,
}

pub(crate) struct DriveOutcome<T> {
    pub crossings: Vec<Crossing<T>>,
    /// Full state (base point then frame) at the stop time.
    pub state: Vec<T>,
    pub t: T,
    /// A `Stop::Crossings` run ran out of crossings.
    pub truncated: bool,
    /// Frame at each recorded crossing, with the number of `renorm` calls
    /// made before it.
    pub frames: Vec<(usize, Vec<T>)>,
}

/// Integrates base point and `n × n` frame from the identity, calling
/// `renorm(t, frame)` every `renorm_dt` (the frame may be rewritten in place).
/// The frame left in `state` has not been renormalized since the last call.
pub(crate) fn drive_cocycle<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    x0: &Vec3<T>,
    cfg: &IntegratorConfig<T>,
    renorm_dt: T,
    stop: Stop<T>,
    recorder: Option<Recorder<'_, T>>,
    mut renorm: impl FnMut(T, &mut [T]) -> Result<()>,
) -> Result<DriveOutcome<T>> {
    check_gen(gen)?;
    if !(renorm_dt > T::zero()) {
        return Err(Error::InvalidInput("renorm interval must be positive".into()));
    }
    let sys = CocycleSystem::new(*field, gen);
    let mut y = sys.initial_state(x0);
    let mut it = Integrator::new(&sys, T::zero(), &y, cfg)?;
    let mut crossings: Vec<Crossing<T>> = Vec::new();
    let mut cross_state = vec![T::zero(); y.len()];
    let mut next_renorm = renorm_dt;
    let mut renorms = 0usize;
    let mut frames = Vec::new();
    let t_end = match stop {
        Stop::Time(t) => t,
        Stop::Crossings(_) => T::infinity(),
    };
    loop {
        let target = next_renorm.min(t_end);
        if it.t() >= target && target == t_end {
            break;
        }
        it.step(target)?;
        if let Some(rec) = &recorder {
            let t_min = crossings.last().map_or(rec.first_t_min, |c| c.t + rec.tau_min);
            if let Some(c) = crossing_in_last_step(&it, field, rec.sec, t_min, &mut cross_state) {
                crossings.push(c);
                frames.push((renorms, cross_state[3..].to_vec()));
                if stop == Stop::Crossings(crossings.len()) {
                    return Ok(DriveOutcome { crossings, state: cross_state, t: c.t, truncated: false, frames });
                }
            } else {
                let last = crossings.last().map_or(T::zero(), |c| c.t);
                if matches!(stop, Stop::Crossings(_)) && it.t() - last > rec.tau_max {
                    let t = it.t();
                    return Ok(DriveOutcome { crossings, state: it.y().to_vec(), t, truncated: true, frames });
                }
            }
        }
        if it.t() >= next_renorm {
            y.copy_from_slice(it.y());
            renorm(it.t(), &mut y[3..])?;
            it.reset_state(&y);
            next_renorm += renorm_dt;
            renorms += 1;
        }
    }
    Ok(DriveOutcome { crossings, state: it.y().to_vec(), t: it.t(), truncated: false, frames })
}

/// `A_f(x) = A^{τ(x)}(x)` for every non-censored sample.
pub fn induce_map_cocycle<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    sec: &CrossSection<T>,
    samples: &[ReturnSample<T>],
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<(usize, Matrix<T>)>> {
    check_gen(gen)?;
    let idx: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].censored).collect();
    idx.into_par_iter()
        .map(|i| {
            let s = &samples[i];
            Ok((i, evolve_cocycle(gen, field, &sec.embed(&s.x), s.tau, cfg)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoelderEstimate<T> {
    pub eta: T,
    /// Running sup after all pairs.
    pub constant: T,
    pub t_used: T,
    pub n_pairs: usize,
    /// Running sup after each pair, in input order.
    pub history: Vec<T>,
}

/// Empirical `sup ‖A^t(x) − A^t(y)‖ / |x − y|^η` over the given pairs.
pub fn estimate_hoelder<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    pairs: &[(Vec3<T>, Vec3<T>)],
    eta: T,
    t: T,
    cfg: &IntegratorConfig<T>,
) -> Result<HoelderEstimate<T>> {
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(Error::InvalidInput("eta must lie in (0, 1]".into()));
    }
    if !(t > T::zero()) {
        return Err(Error::InvalidInput("t must be positive".into()));
    }
    let ratios: Vec<T> = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = norm3(&sub3(x, y));
            if !(d > T::zero()) {
                return Err(Error::InvalidInput("pairs must be distinct".into()));
            }
            let ax = evolve_cocycle(gen, field, x, t, cfg)?;
            let ay = evolve_cocycle(gen, field, y, t, cfg)?;
            Ok((&ax - &ay).spectral_norm() / d.powf(eta))
        })
        .collect::<Result<_>>()?;
    let mut sup = T::zero();
    let history: Vec<T> = ratios
        .iter()
        .map(|&r| {
            sup = sup.max(r);
            sup
        })
        .collect();
    Ok(HoelderEstimate { eta, constant: sup, t_used: t, n_pairs: pairs.len(), history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BunchingForm {
    Flow,
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BunchingReport<T> {
    pub form: BunchingForm,
    pub theta: T,
    pub eta: T,
    /// Smallest γ with `κ < γ^t` (flow) or `κ < γ` (map) on every sample.
    pub gamma_star: T,
    /// `−ln γ*`; positive exactly when the verdict holds.
    pub margin: T,
    /// `γ* < 1`, the bunching constant read as `0 < γ < 1`.
    pub verdict: bool,
    pub n_samples: usize,
    /// `t` grid (flow) or return times (map).
    pub times: Vec<T>,
    /// Running maximum of γ over samples in input order.
    pub running_gamma: Vec<T>,
    /// Map form only: samples with `τ ≤ 1`, outside the `τ > 1` hypothesis.
    pub short_returns: usize,
}

const SINGULAR_CONDITION: f64 = 1e12;

fn conformality<T: Real>(a: &Matrix<T>) -> Result<T> {
    let sv = a.singular_values();
    let (smax, smin) = (sv[0], *sv.last().unwrap());
    let cond = if smin > T::zero() { smax / smin } else { T::infinity() };
    if !(cond <= T::lit(SINGULAR_CONDITION)) {
        return Err(Error::SingularMatrix { condition: cond.as_f64() });
    }
    Ok(cond)
}

fn check_theta<T: Real>(theta: T, eta: T) -> Result<()> {
    if !(theta > T::zero() && theta < T::one()) {
        return Err(Error::InvalidInput("theta must lie in (0,1)".into()));
    }
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(Error::InvalidInput("eta must lie in (0, 1]".into()));
    }
    Ok(())
}

/// Flow form: `κ(x,t) = ‖A^t‖·‖(A^t)^{-1}‖·θ^{tη}` and `γ* = max κ^{1/t}`.
pub fn check_bunching_flow<T: Real>(
    gen: &CocycleGenerator<T>,
    field: &VectorField<T>,
    points: &[Vec3<T>],
    theta: T,
    eta: T,
    t_grid: &[T],
    cfg: &IntegratorConfig<T>,
) -> Result<BunchingReport<T>> {
    check_theta(theta, eta)?;
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > T::zero())) {
        return Err(Error::InvalidInput("t_grid must be non-empty and positive".into()));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let per_point: Vec<T> = points
        .par_iter()
        .map(|x| {
            let path = evolve_cocycle_at(gen, field, x, &grid, cfg)?;
            let mut g = T::zero();
            for ((_, a), &t) in path.iter().zip(&grid) {
                let kappa = conformality(a)? * theta.powf(t * eta);
                g = g.max(kappa.powf(t.recip()));
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    Ok(report(BunchingForm::Flow, theta, eta, &per_point, grid, 0))
}

/// Map form with `θ(x) = θ^{τ(x)}`: `κ = ‖A_f‖·‖A_f^{-1}‖·θ^{τη}`, `γ* = max κ`.
pub fn check_bunching_map<T: Real>(pairs: &[(Matrix<T>, T)], theta: T, eta: T) -> Result<BunchingReport<T>> {
    check_theta(theta, eta)?;
    if pairs.iter().any(|(_, tau)| !(*tau > T::zero())) {
        return Err(Error::InvalidInput("return times must be positive".into()));
    }
    let per: Vec<T> =
        pairs.iter().map(|(a, tau)| Ok(conformality(a)? * theta.powf(*tau * eta))).collect::<Result<_>>()?;
    let short = pairs.iter().filter(|(_, tau)| *tau <= T::one()).count();
    let taus = pairs.iter().map(|p| p.1).collect();
    Ok(report(BunchingForm::Map, theta, eta, &per, taus, short))
}

fn report<T: Real>(form: BunchingForm, theta: T, eta: T, per: &[T], times: Vec<T>, short: usize) -> BunchingReport<T> {
    let mut g = T::zero();
    let running: Vec<T> = per
        .iter()
        .map(|&v| {
            g = g.max(v);
            g
        })
        .collect();
    BunchingReport {
        form,
        theta,
        eta,
        gamma_star: g,
        margin: -g.ln(),
        verdict: g < T::one(),
        n_samples: per.len(),
        times,
        running_gamma: running,
        short_returns: short,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> IntegratorConfig<f64> {
        IntegratorConfig::default()
    }

    fn lorenz_point() -> Vec3<f64> {
        crate::flows::flow_map(&VectorField::lorenz(), &[1.0, 1.0, 20.0], 20.0, &cfg()).unwrap()
    }

    #[test]
    fn zero_and_constant_generators() {
        let f = VectorField::lorenz();
        let x = lorenz_point();
        let a = evolve_cocycle(&CocycleGenerator::zero(2), &f, &x, 3.0, &cfg()).unwrap();
        assert!((&a - &Matrix::identity(2)).max_abs() < 1e-14);
        let g = CocycleGenerator::constant(&Matrix::from_diag(&[1.0, -1.0]));
        let a = evolve_cocycle(&g, &f, &x, 2.0, &cfg()).unwrap();
        let want = Matrix::from_diag(&[2.0f64.exp(), (-2.0f64).exp()]);
        assert!((&a - &want).max_abs() < 1e-8);
        assert_eq!(evolve_cocycle(&g, &f, &x, 0.0, &cfg()).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn dynamical_matches_variational() {
        let f = VectorField::lorenz();
        let x = lorenz_point();
        let a = evolve_cocycle(&CocycleGenerator::dynamical(), &f, &x, 1.0, &cfg()).unwrap();
        let d = &crate::flows::flow_derivative_at(&f, &x, &[1.0], &cfg()).unwrap()[0].1;
        assert!((&a - d).max_abs() / d.max_abs() < 1e-9);
    }

    #[test]
    fn complex_generator_realifies() {
        let mut g = CocycleGenerator::<f64>::zero(2);
        g.scalars = Scalars::Complex;
        g.c0 = vec![0.5, 0.0, 0.0, -0.5];
        g.c0_im = Some(vec![1.0, 0.0, 0.0, 0.0]);
        let a = evolve_cocycle(&g, &VectorField::lorenz(), &lorenz_point(), 1.0, &cfg()).unwrap();
        // e^{(0.5 + i)t} in the (0, 0) complex slot
        let (re, im) = (0.5f64.exp() * 1.0f64.cos(), 0.5f64.exp() * 1.0f64.sin());
        assert!((a[(0, 0)] - re).abs() < 1e-9 && (a[(2, 0)] - im).abs() < 1e-9);
        assert!((a[(0, 2)] + im).abs() < 1e-9 && (a[(2, 2)] - re).abs() < 1e-9);
    }

    #[test]
    fn traceless_projection_keeps_unit_determinant() {
        let mut g = CocycleGenerator::random_trig(2, 3, 1.0, 11);
        g.traceless = true;
        let f = VectorField::lorenz();
        for (_, a) in evolve_cocycle_at(&g, &f, &lorenz_point(), &[1.0, 3.0, 5.0], &cfg()).unwrap() {
            assert!((a.det() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn json_round_trip() {
        let g = perturb_generator(&CocycleGenerator::<f64>::zero(3), 0.3, 5).unwrap();
        let s = g.to_json();
        let back = CocycleGenerator::<f64>::from_json(&s).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), s);
        assert!(s.contains("\"C0\"") && s.contains("\"Ccos\""));
        assert!(CocycleGenerator::<f64>::from_json(r#"{"kind":"generator-field","dim":2,"scalars":"real","traceless":false,"C0":[0,0,0],"modes":[]}"#).is_err());
        assert!(CocycleGenerator::<f64>::from_json(r#"{"kind":"generator-field","dim":2,"scalars":"real","traceless":false,"C0":[0,0,0,0],"thetaa":1}"#).is_err());
    }

    #[test]
    fn perturbation_is_deterministic_and_bounded() {
        let g = CocycleGenerator::<f64>::random_trig(2, 2, 0.5, 1);
        assert_eq!(perturb_generator(&g, 0.0, 9).unwrap(), g);
        let a = perturb_generator(&g, 0.1, 9).unwrap();
        let b = perturb_generator(&g, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, perturb_generator(&g, 0.1, 10).unwrap());
        assert!(perturb_generator(&g, -0.1, 9).is_err());
    }

    #[test]
    fn bunching_closed_forms() {
        let f = VectorField::lorenz();
        let x = lorenz_point();
        let r = check_bunching_flow(&CocycleGenerator::zero(2), &f, &[x], 0.5, 1.0, &[0.5, 1.0, 2.0], &cfg()).unwrap();
        assert!((r.gamma_star - 0.5).abs() < 1e-9 && r.verdict);
        assert!((r.margin - 2.0f64.ln()).abs() < 1e-8);
        let c = -(0.5f64).ln();
        let g = CocycleGenerator::constant(&Matrix::from_diag(&[c, -c]));
        let r = check_bunching_flow(&g, &f, &[x], 0.5, 1.0, &[1.0, 2.0], &cfg()).unwrap();
        assert!((r.gamma_star - c.exp()).abs() < 1e-6);
        assert!(!r.verdict);

        let r = check_bunching_map(&[(Matrix::<f64>::identity(2), 2.0)], 0.5, 1.0).unwrap();
        assert!((r.gamma_star - 0.25).abs() < 1e-15 && r.verdict);
        let e2 = 2.0f64.exp();
        let r = check_bunching_map(&[(Matrix::from_diag(&[e2, 1.0 / e2]), 2.0)], 0.5, 1.0).unwrap();
        assert!((r.gamma_star - 4.0f64.exp() * 0.25).abs() < 1e-10 && !r.verdict);
        assert!(check_bunching_map(&[(Matrix::identity(2), 2.0)], 1.2, 1.0).is_err());
        let sing = Matrix::from_diag(&[1.0, 1e-14]);
        assert!(matches!(check_bunching_map(&[(sing, 2.0)], 0.5, 1.0), Err(Error::SingularMatrix { .. })));
        let r = check_bunching_map(&[(Matrix::identity(2), 0.5), (Matrix::identity(2), 2.0)], 0.5, 1.0).unwrap();
        assert_eq!(r.short_returns, 1);
    }

    #[test]
    fn hoelder_of_constant_fields_vanishes() {
        let f = VectorField::lorenz();
        let x = lorenz_point();
        let pairs = [(x, [x[0] + 0.1, x[1], x[2]]), (x, [x[0], x[1] - 0.2, x[2] + 0.1])];
        let g = CocycleGenerator::constant(&Matrix::from_diag(&[0.3, -0.1]));
        for gen in [CocycleGenerator::zero(2), g] {
            let h = estimate_hoelder(&gen, &f, &pairs, 1.0, 1.0, &cfg()).unwrap();
            assert_eq!(h.constant, 0.0);
            assert_eq!(h.n_pairs, 2);
        }
        assert!(estimate_hoelder(&CocycleGenerator::zero(2), &f, &[(x, x)], 1.0, 1.0, &cfg()).is_err());
    }
}
