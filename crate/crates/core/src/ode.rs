//! Explicit Runge-Kutta integration with dense output.
//!
//! Two methods are provided: the Dormand-Prince 5(4) pair with step-size
//! control and its 4th-order continuous extension, and classic fixed-step
//! RK4 whose dense output is the cubic Hermite interpolant of the step
//! endpoints. Both interpolants share one representation
//! (`y(θ) = r1 + θ(r2 + (1-θ)(r3 + θ(r4 + (1-θ) r5)))`, with `r5 = 0` for
//! Hermite), so downstream event location does not care which method ran.
//!
//! [`Integrator`] is a stepping driver: callers advance it one accepted step
//! at a time and inspect [`Integrator::last_step`], which is how section
//! crossings are found without storing whole trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Right-hand side of `y' = F(t, y)`.
pub trait OdeSystem<T: Real> {
    fn dim(&self) -> usize;
    fn rhs(&self, t: T, y: &[T], dy: &mut [T]);
    /// Number of leading components whose Euclidean norm is checked against
    /// the divergence bound.
    fn watched(&self) -> usize {
        self.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Classic RK4 with step `max_step`.
    Rk4,
    /// Dormand-Prince 5(4), adaptive.
    Dopri5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig<T> {
    pub method: Method,
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_step: T,
    /// Longest span a single integration call may cover.
    pub max_time: T,
    pub min_step: T,
    pub divergence_bound: T,
    pub max_steps: usize,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Dopri5,
            abs_tol: T::lit(1e-10),
            rel_tol: T::lit(1e-10),
            max_step: T::lit(0.1),
            max_time: T::lit(1e6),
            min_step: T::lit(1e-14),
            divergence_bound: T::lit(1e8),
            max_steps: 200_000_000,
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn fixed_rk4(step: T) -> Self {
        IntegratorConfig { method: Method::Rk4, max_step: step, ..Self::default() }
    }

    pub fn with_tolerance(mut self, tol: T) -> Self {
        self.abs_tol = tol;
        self.rel_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T, name: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive and finite")))
            }
        };
        positive(self.abs_tol, "abs_tol")?;
        positive(self.rel_tol, "rel_tol")?;
        positive(self.max_step, "max_step")?;
        positive(self.max_time, "max_time")?;
        positive(self.min_step, "min_step")?;
        positive(self.divergence_bound, "divergence_bound")?;
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Interpolation data for one accepted step, restricted to the first
/// `coeffs.len() / 5` components of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment<T> {
    pub t0: T,
    pub h: T,
    coeffs: Vec<T>,
}

impl<T: Real> DenseSegment<T> {
    /// Cubic Hermite segment through `(t0, y0, f0)` and `(t0 + h, y1, f1)`.
    pub fn hermite(t0: T, h: T, y0: &[T], f0: &[T], y1: &[T], f1: &[T]) -> Self {
        let n = y0.len();
        let mut coeffs = vec![T::zero(); 5 * n];
        for i in 0..n {
            let dy = y1[i] - y0[i];
            let r3 = h * f0[i] - dy;
            coeffs[i] = y0[i];
            coeffs[n + i] = dy;
            coeffs[2 * n + i] = r3;
            coeffs[3 * n + i] = dy - h * f1[i] - r3;
        }
        DenseSegment { t0, h, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len() / 5
    }

    pub fn t1(&self) -> T {
        self.t0 + self.h
    }

    pub fn eval(&self, t: T, out: &mut [T]) {
        let n = self.dim();
        let theta = (t - self.t0) / self.h;
        let theta1 = T::one() - theta;
        let c = &self.coeffs;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = c[i]
                + theta
                    * (c[n + i]
                        + theta1 * (c[2 * n + i] + theta * (c[3 * n + i] + theta1 * c[4 * n + i])));
        }
    }

    /// d/dt of the interpolant.
    pub fn eval_derivative(&self, t: T, out: &mut [T]) {
        let n = self.dim();
        let th = (t - self.t0) / self.h;
        let c = &self.coeffs;
        let one = T::one();
        let two = T::lit(2.0);
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let (r2, r3, r4, r5) = (c[n + i], c[2 * n + i], c[3 * n + i], c[4 * n + i]);
            // y = r1 + θ r2 + θ(1-θ) r3 + θ²(1-θ) r4 + θ²(1-θ)² r5
            let d = r2
                + (one - two * th) * r3
                + (two * th - T::lit(3.0) * th * th) * r4
                + (two * th * (one - th) * (one - th) - two * th * th * (one - th)) * r5;
            *o = d / self.h;
        }
    }

    /// Same segment restricted to the first `keep` components.
    pub fn restrict(&self, keep: usize) -> DenseSegment<T> {
        let n = self.dim();
        if keep >= n {
            return self.clone();
        }
        let mut coeffs = Vec::with_capacity(5 * keep);
        for b in 0..5 {
            coeffs.extend_from_slice(&self.coeffs[b * n..b * n + keep]);
        }
        DenseSegment { t0: self.t0, h: self.h, coeffs }
    }
}

/// Result of a stored integration: accepted grid plus dense segments for the
/// first `keep` components.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub segments: Vec<DenseSegment<T>>,
}

impl<T: Real> DenseSolution<T> {
    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        *self.times.last().unwrap()
    }

    /// Index of the segment covering `t` (clamped to the stored range).
    pub fn segment_index(&self, t: T) -> usize {
        if self.segments.is_empty() {
            return 0;
        }
        let idx = self.segments.partition_point(|s| s.t0 <= t);
        idx.saturating_sub(1).min(self.segments.len() - 1)
    }

    pub fn eval(&self, t: T, out: &mut [T]) {
        if self.segments.is_empty() {
            out.copy_from_slice(&self.states[0][..out.len()]);
            return;
        }
        self.segments[self.segment_index(t)].eval(t, out);
    }
}

/// What an accepted step looked like; borrowed from the integrator.
pub struct StepView<'a, T> {
    pub t0: T,
    pub t1: T,
    pub y0: &'a [T],
    pub y1: &'a [T],
    pub f0: &'a [T],
    pub f1: &'a [T],
    pub dense: &'a DenseSegment<T>,
}

// Dormand-Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Tableau<T> {
    c: [T; 5],
    a: [T; 20],
    e: [T; 6],
    d: [T; 6],
}

impl<T: Real> Tableau<T> {
    fn new() -> Self {
        let l = T::lit;
        Tableau {
            c: [l(C2), l(C3), l(C4), l(C5), T::one()],
            a: [
                l(A21),
                l(A31),
                l(A32),
                l(A41),
                l(A42),
                l(A43),
                l(A51),
                l(A52),
                l(A53),
                l(A54),
                l(A61),
                l(A62),
                l(A63),
                l(A64),
                l(A65),
                l(A71),
                l(A73),
                l(A74),
                l(A75),
                l(A76),
            ],
            e: [l(E1), l(E3), l(E4), l(E5), l(E6), l(E7)],
            d: [l(D1), l(D3), l(D4), l(D5), l(D6), l(D7)],
        }
    }
}

/// Step-by-step driver for one initial value problem.
pub struct Integrator<'s, T: Real, S: OdeSystem<T> + ?Sized> {
    sys: &'s S,
    cfg: IntegratorConfig<T>,
    tab: Tableau<T>,
    n: usize,
    t: T,
    y: Vec<T>,
    f: Vec<T>,
    h: T,
    // last accepted step
    t_prev: T,
    y_prev: Vec<T>,
    f_prev: Vec<T>,
    dense: DenseSegment<T>,
    k: [Vec<T>; 6],
    ytmp: Vec<T>,
    ynew: Vec<T>,
    fnew: Vec<T>,
    pub steps: usize,
    pub rejected: usize,
    t_origin: T,
}

impl<'s, T: Real, S: OdeSystem<T> + ?Sized> Integrator<'s, T, S> {
    pub fn new(sys: &'s S, t0: T, y0: &[T], cfg: &IntegratorConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let n = sys.dim();
        if y0.len() != n {
            return Err(Error::DimensionMismatch(format!("state has {} components, system {}", y0.len(), n)));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("initial state is not finite".into()));
        }
        let mut f = vec![T::zero(); n];
        sys.rhs(t0, y0, &mut f);
        let mut it = Integrator {
            sys,
            cfg: *cfg,
            tab: Tableau::new(),
            n,
            t: t0,
            y: y0.to_vec(),
            f: f.clone(),
            h: T::zero(),
            t_prev: t0,
            y_prev: y0.to_vec(),
            f_prev: f,
            dense: DenseSegment { t0, h: T::one(), coeffs: vec![T::zero(); 5 * n] },
            k: std::array::from_fn(|_| vec![T::zero(); n]),
            ytmp: vec![T::zero(); n],
            ynew: vec![T::zero(); n],
            fnew: vec![T::zero(); n],
            steps: 0,
            rejected: 0,
            t_origin: t0,
        };
        for i in 0..n {
            it.dense.coeffs[i] = y0[i];
        }
        it.h = match cfg.method {
            Method::Rk4 => cfg.max_step,
            Method::Dopri5 => it.initial_step(),
        };
        Ok(it)
    }

    #[inline]
    pub fn t(&self) -> T {
        self.t
    }

    #[inline]
    pub fn y(&self) -> &[T] {
        &self.y
    }

    /// Proposed size of the next step.
    pub fn step_size(&self) -> T {
        self.h
    }

    /// Seeds the next step size, e.g. when restarting from a previous run.
    pub fn set_step_size(&mut self, h: T) {
        if h > T::zero() && h.is_finite() {
            self.h = h.min(self.cfg.max_step);
        }
    }

    pub fn last_step(&self) -> StepView<'_, T> {
        StepView {
            t0: self.t_prev,
            t1: self.t,
            y0: &self.y_prev,
            y1: &self.y,
            f0: &self.f_prev,
            f1: &self.f,
            dense: &self.dense,
        }
    }

    /// Replaces the current state (for renormalization); keeps the step size.
    pub fn reset_state(&mut self, y: &[T]) {
        self.y.copy_from_slice(y);
        self.sys.rhs(self.t, &self.y, &mut self.f);
        self.t_prev = self.t;
        self.y_prev.copy_from_slice(y);
        self.f_prev.copy_from_slice(&self.f);
    }

    fn initial_step(&self) -> T {
        let n = T::from_usize_lossy(self.n);
        let sk = |i: usize| self.cfg.abs_tol + self.cfg.rel_tol * self.y[i].abs();
        let mut dnf = T::zero();
        let mut dny = T::zero();
        for i in 0..self.n {
            let s = sk(i);
            dnf += (self.f[i] / s).powi(2);
            dny += (self.y[i] / s).powi(2);
        }
        let (dnf, dny) = ((dnf / n).sqrt(), (dny / n).sqrt());
        let h = if dnf <= T::lit(1e-10) || dny <= T::lit(1e-10) {
            T::lit(1e-6)
        } else {
            T::lit(0.01) * dny / dnf
        };
        h.min(self.cfg.max_step).max(self.cfg.min_step)
    }

    /// Takes one accepted step, never stepping past `t_limit`.
    pub fn step(&mut self, t_limit: T) -> Result<()> {
        if t_limit <= self.t {
            return Ok(());
        }
        if self.steps >= self.cfg.max_steps {
            return Err(Error::MaxSteps { t: self.t.as_f64(), max_steps: self.cfg.max_steps });
        }
        if t_limit - self.t_origin > self.cfg.max_time * (T::one() + T::epsilon()) {
            return Err(Error::InvalidInput(format!(
                "integration span {} exceeds max_time {}",
                (t_limit - self.t_origin).as_f64(),
                self.cfg.max_time.as_f64()
            )));
        }
        match self.cfg.method {
            Method::Rk4 => self.step_rk4(t_limit),
            Method::Dopri5 => self.step_dopri(t_limit),
        }?;
        self.steps += 1;
        let watched = self.sys.watched().min(self.n);
        let norm = self.y[..watched].iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        if !norm.is_finite() || norm > self.cfg.divergence_bound {
            return Err(Error::Divergence { t: self.t.as_f64(), norm: norm.as_f64() });
        }
        Ok(())
    }

    /// Steps until `t_end` is reached exactly.
    pub fn advance_to(&mut self, t_end: T) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }

    fn clip(&self, h: T, t_limit: T) -> (T, bool) {
        let remaining = t_limit - self.t;
        // Avoid leaving a sliver step behind.
        if h >= remaining * (T::one() - T::lit(1e-12)) {
            (remaining, true)
        } else {
            (h, false)
        }
    }

    fn step_rk4(&mut self, t_limit: T) -> Result<()> {
        let (h, _) = self.clip(self.cfg.max_step, t_limit);
        let n = self.n;
        let t = self.t;
        let half = T::lit(0.5);
        let sys = self.sys;
        let [k1, k2, k3, k4, _, _] = &mut self.k;
        k1.copy_from_slice(&self.f);
        for i in 0..n {
            self.ytmp[i] = self.y[i] + half * h * k1[i];
        }
        sys.rhs(t + half * h, &self.ytmp, k2);
        for i in 0..n {
            self.ytmp[i] = self.y[i] + half * h * k2[i];
        }
        sys.rhs(t + half * h, &self.ytmp, k3);
        for i in 0..n {
            self.ytmp[i] = self.y[i] + h * k3[i];
        }
        sys.rhs(t + h, &self.ytmp, k4);
        let sixth = T::one() / T::lit(6.0);
        for i in 0..n {
            self.ynew[i] = self.y[i] + h * sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
        let t_new = if h == t_limit - t { t_limit } else { t + h };
        sys.rhs(t_new, &self.ynew, &mut self.fnew);
        // Hermite coefficients
        let c = &mut self.dense.coeffs;
        for i in 0..n {
            let dy = self.ynew[i] - self.y[i];
            let r3 = h * self.f[i] - dy;
            c[i] = self.y[i];
            c[n + i] = dy;
            c[2 * n + i] = r3;
            c[3 * n + i] = dy - h * self.fnew[i] - r3;
            c[4 * n + i] = T::zero();
        }
        self.accept(t_new, h);
        Ok(())
    }

    fn dopri_stages(&mut self, h: T) {
        let n = self.n;
        let t = self.t;
        let tb = &self.tab;
        let a = &tb.a;
        let sys = self.sys;
        let y = &self.y;
        let ytmp = &mut self.ytmp;
        let [k2, k3, k4, k5, k6, k7] = &mut self.k;
        let k1 = &self.f;
        for i in 0..n {
            ytmp[i] = y[i] + h * a[0] * k1[i];
        }
        sys.rhs(t + tb.c[0] * h, ytmp, k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (a[1] * k1[i] + a[2] * k2[i]);
        }
        sys.rhs(t + tb.c[1] * h, ytmp, k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (a[3] * k1[i] + a[4] * k2[i] + a[5] * k3[i]);
        }
        sys.rhs(t + tb.c[2] * h, ytmp, k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (a[6] * k1[i] + a[7] * k2[i] + a[8] * k3[i] + a[9] * k4[i]);
        }
        sys.rhs(t + tb.c[3] * h, ytmp, k5);
        for i in 0..n {
            ytmp[i] = y[i]
                + h * (a[10] * k1[i] + a[11] * k2[i] + a[12] * k3[i] + a[13] * k4[i] + a[14] * k5[i]);
        }
        sys.rhs(t + h, ytmp, k6);
        for i in 0..n {
            self.ynew[i] = y[i]
                + h * (a[15] * k1[i] + a[16] * k3[i] + a[17] * k4[i] + a[18] * k5[i] + a[19] * k6[i]);
        }
        sys.rhs(t + h, &self.ynew, k7);
    }

    fn step_dopri(&mut self, t_limit: T) -> Result<()> {
        let n = self.n;
        let nf = T::from_usize_lossy(n);
        let mut h = self.h.min(self.cfg.max_step);
        let mut last_reject = false;
        loop {
            let (h_try, hits_limit) = self.clip(h, t_limit);
            if h_try < self.cfg.min_step && !hits_limit {
                return Err(Error::StepFailure { t: self.t.as_f64(), h: h_try.as_f64() });
            }
            self.dopri_stages(h_try);
            let e = &self.tab.e;
            let mut err = T::zero();
            {
                let [_, k3, k4, k5, k6, k7] = &self.k;
                let k1 = &self.f;
                for i in 0..n {
                    let est = h_try
                        * (e[0] * k1[i] + e[1] * k3[i] + e[2] * k4[i] + e[3] * k5[i] + e[4] * k6[i]
                            + e[5] * k7[i]);
                    let sk = self.cfg.abs_tol + self.cfg.rel_tol * self.y[i].abs().max(self.ynew[i].abs());
                    err += (est / sk).powi(2);
                }
            }
            let err = (err / nf).sqrt();
            if err.is_finite() && err <= T::one() {
                let mut fac = T::lit(0.9) * err.max(T::lit(1e-10)).powf(T::lit(-0.2));
                fac = fac.min(T::lit(5.0)).max(T::lit(0.2));
                if last_reject {
                    fac = fac.min(T::one());
                }
                // dense output coefficients
                let d = &self.tab.d;
                let c = &mut self.dense.coeffs;
                let [_, k3, k4, k5, k6, k7] = &self.k;
                let k1 = &self.f;
                for i in 0..n {
                    let dy = self.ynew[i] - self.y[i];
                    let bspl = h_try * k1[i] - dy;
                    c[i] = self.y[i];
                    c[n + i] = dy;
                    c[2 * n + i] = bspl;
                    c[3 * n + i] = dy - h_try * k7[i] - bspl;
                    c[4 * n + i] = h_try
                        * (d[0] * k1[i] + d[1] * k3[i] + d[2] * k4[i] + d[3] * k5[i] + d[4] * k6[i]
                            + d[5] * k7[i]);
                }
                self.fnew.copy_from_slice(k7);
                let t_new = if hits_limit { t_limit } else { self.t + h_try };
                self.accept(t_new, h_try);
                // Keep the controller's proposal even if this step was clipped.
                let proposal = if hits_limit { h.max(h_try * fac) } else { h_try * fac };
                self.h = proposal.min(self.cfg.max_step);
                return Ok(());
            }
            self.rejected += 1;
            last_reject = true;
            let fac = if err.is_finite() {
                (T::lit(0.9) * err.powf(T::lit(-0.2))).max(T::lit(0.1))
            } else {
                T::lit(0.1)
            };
            h = h_try * fac;
        }
    }

    fn accept(&mut self, t_new: T, h: T) {
        std::mem::swap(&mut self.y_prev, &mut self.y);
        std::mem::swap(&mut self.f_prev, &mut self.f);
        self.y.copy_from_slice(&self.ynew);
        self.f.copy_from_slice(&self.fnew);
        self.t_prev = self.t;
        self.t = t_new;
        self.dense.t0 = self.t_prev;
        self.dense.h = h;
    }

    /// One step of size `s` from the start of the last accepted step, with
    /// no error control. Used to pin events more accurately than the
    /// interpolant allows.
    pub fn restep_from_last(&self, s: T, out: &mut [T]) {
        single_step(self.sys, self.cfg.method, self.t_prev, &self.y_prev, &self.f_prev, s, out);
    }
}

/// A single explicit step of the given method (no error control).
pub fn single_step<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    method: Method,
    t: T,
    y: &[T],
    f: &[T],
    h: T,
    out: &mut [T],
) {
    let n = y.len();
    let mut k: Vec<Vec<T>> = (0..6).map(|_| vec![T::zero(); n]).collect();
    let mut tmp = vec![T::zero(); n];
    match method {
        Method::Rk4 => {
            let half = T::lit(0.5);
            for i in 0..n {
                tmp[i] = y[i] + half * h * f[i];
            }
            sys.rhs(t + half * h, &tmp, &mut k[0]);
            for i in 0..n {
                tmp[i] = y[i] + half * h * k[0][i];
            }
            sys.rhs(t + half * h, &tmp, &mut k[1]);
            for i in 0..n {
                tmp[i] = y[i] + h * k[1][i];
            }
            sys.rhs(t + h, &tmp, &mut k[2]);
            let sixth = T::one() / T::lit(6.0);
            for i in 0..n {
                out[i] = y[i] + h * sixth * (f[i] + T::lit(2.0) * (k[0][i] + k[1][i]) + k[2][i]);
            }
        }
        Method::Dopri5 => {
            let tb = Tableau::<T>::new();
            let a = &tb.a;
            for i in 0..n {
                tmp[i] = y[i] + h * a[0] * f[i];
            }
            sys.rhs(t + tb.c[0] * h, &tmp, &mut k[0]);
            for i in 0..n {
                tmp[i] = y[i] + h * (a[1] * f[i] + a[2] * k[0][i]);
            }
            sys.rhs(t + tb.c[1] * h, &tmp, &mut k[1]);
            for i in 0..n {
                tmp[i] = y[i] + h * (a[3] * f[i] + a[4] * k[0][i] + a[5] * k[1][i]);
            }
            sys.rhs(t + tb.c[2] * h, &tmp, &mut k[2]);
            for i in 0..n {
                tmp[i] = y[i] + h * (a[6] * f[i] + a[7] * k[0][i] + a[8] * k[1][i] + a[9] * k[2][i]);
            }
            sys.rhs(t + tb.c[3] * h, &tmp, &mut k[3]);
            for i in 0..n {
                tmp[i] = y[i]
                    + h * (a[10] * f[i] + a[11] * k[0][i] + a[12] * k[1][i] + a[13] * k[2][i] + a[14] * k[3][i]);
            }
            sys.rhs(t + h, &tmp, &mut k[4]);
            for i in 0..n {
                out[i] = y[i]
                    + h * (a[15] * f[i] + a[16] * k[1][i] + a[17] * k[2][i] + a[18] * k[3][i] + a[19] * k[4][i]);
            }
        }
    }
}

/// Integrates over `[t0, t1]` and stores every accepted step, keeping dense
/// data for the first `keep` components.
pub fn integrate_dense<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t0: T,
    y0: &[T],
    t1: T,
    cfg: &IntegratorConfig<T>,
    keep: usize,
) -> Result<DenseSolution<T>> {
    let mut it = Integrator::new(sys, t0, y0, cfg)?;
    let keep = keep.min(sys.dim());
    let mut sol = DenseSolution { times: vec![t0], states: vec![y0[..keep].to_vec()], segments: Vec::new() };
    while it.t() < t1 {
        it.step(t1)?;
        let view = it.last_step();
        sol.times.push(view.t1);
        sol.states.push(view.y1[..keep].to_vec());
        sol.segments.push(view.dense.restrict(keep));
    }
    Ok(sol)
}

/// Integrates to `t1` and returns the final state only.
pub fn integrate_final<T: Real, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t0: T,
    y0: &[T],
    t1: T,
    cfg: &IntegratorConfig<T>,
) -> Result<Vec<T>> {
    let mut it = Integrator::new(sys, t0, y0, cfg)?;
    it.advance_to(t1)?;
    Ok(it.y().to_vec())
}
