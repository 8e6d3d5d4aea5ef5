//! End-to-end probes on `f64`: the simplicity scan and openness probe, the
//! map/flow exponent relation on one orbit, suspension consistency, and
//! Birkhoff averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycles::{
    check_bunching_flow, drive_cocycle, evolve_cocycle, perturb_generator, CocycleGenerator, CocycleKind, Recorder,
    Stop,
};
use crate::error::{Error, Result};
use crate::flows::{FlowSystem, VectorField};
use crate::linalg::Matrix;
use crate::ode::{Integrator, IntegratorConfig};
use crate::real::Vec3;
use crate::rng::stream_seed;
use crate::sections::{orbit_returns, poincare_return, section_orbit, CrossSection};
use crate::spectra::{
    exponent_relation_check, qr_lyapunov_flow, qr_lyapunov_flow_with_crossings, qr_lyapunov_map,
    simplicity_verdict, LyapunovSpectrum, RelationReport, RELATION_FLOOR,
};
use crate::stats::{linear_fit, mean, quantile, LinearFit};

pub const SCAN_ID: &str = "simplicity-scan";
pub const OPENNESS_ID: &str = "openness-probe";

/// Where and how long one spectrum job runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumJob {
    pub x0: Vec3<f64>,
    pub horizon: f64,
    pub renorm_dt: f64,
    pub transient: f64,
}

impl SpectrumJob {
    pub fn validate(&self, errs: &mut Vec<String>) {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push("horizon must be positive".into());
        }
        if !(self.renorm_dt > 0.0) {
            errs.push("renorm_dt must be positive".into());
        }
        if !(self.transient >= 0.0 && self.transient < self.horizon) {
            errs.push("transient must lie in [0, horizon)".into());
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            errs.push("x0 must be finite".into());
        }
    }
}

/// Sample points and parameters for the fiber-bunching precheck.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BunchingPrecheck {
    pub theta: f64,
    pub eta: f64,
    pub t_grid: Vec<f64>,
    pub points: Vec<Vec3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub dim: usize,
    pub epsilon_grid: Vec<f64>,
    pub n_seeds: usize,
    pub seed_offset: u64,
    pub gap_floor: f64,
    pub base_generator: CocycleGenerator<f64>,
    pub job: SpectrumJob,
    pub bunching: Option<BunchingPrecheck>,
}

impl ScanConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.epsilon_grid.is_empty() {
            errs.push("epsilon_grid must not be empty".into());
        }
        if self.epsilon_grid.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            errs.push("epsilon_grid entries must be non-negative".into());
        }
        if self.epsilon_grid.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("epsilon_grid must be strictly ascending".into());
        }
        if self.n_seeds == 0 {
            errs.push("n_seeds must be at least 1".into());
        }
        if !(self.gap_floor >= 0.0) {
            errs.push("gap_floor must be non-negative".into());
        }
        if let Err(e) = self.base_generator.validate() {
            errs.push(format!("base_generator: {e}"));
        } else if self.base_generator.dim != self.dim {
            errs.push(format!("base_generator has dim {}, scan dim {}", self.base_generator.dim, self.dim));
        }
        self.job.validate(&mut errs);
        if let Some(b) = &self.bunching {
            bunching_violations(b, &mut errs);
        }
        errs
    }
}

fn bunching_violations(b: &BunchingPrecheck, errs: &mut Vec<String>) {
    if !(b.theta > 0.0 && b.theta < 1.0) {
        errs.push("theta must lie in (0,1)".into());
    }
    if !(b.eta > 0.0 && b.eta <= 1.0) {
        errs.push("eta must lie in (0,1]".into());
    }
    if b.t_grid.is_empty() || b.t_grid.iter().any(|&t| !(t > 0.0)) {
        errs.push("bunching t_grid must be non-empty and positive".into());
    }
    if b.points.is_empty() {
        errs.push("bunching points must not be empty".into());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub epsilon: f64,
    pub min_gap: Option<f64>,
    pub simple: bool,
    pub resolved: bool,
    pub exponents: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub non_convergence: bool,
    /// Numerical failure of this cell; the scan carries on.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    /// Over resolved spectra only; 0 when none is resolved.
    pub fraction_simple: f64,
    pub simple_count: usize,
    pub resolved_count: usize,
    pub unresolved_count: usize,
    pub failed_count: usize,
    /// `(q10, q50, q90)` of the minimum gaps of finished cells.
    pub gap_quantiles: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub summaries: Vec<EpsilonSummary>,
    pub records: Vec<SeedRecord>,
    /// Bunching of the base generator; `None` when no precheck was asked.
    pub base_bunched: Option<bool>,
    pub base_gamma_star: Option<f64>,
    pub warnings: Vec<String>,
    pub interpretation: String,
}

fn spectrum_record(
    gen: &CocycleGenerator<f64>,
    field: &VectorField<f64>,
    job: &SpectrumJob,
    cfg: &IntegratorConfig<f64>,
    gap_floor: f64,
    seed: u64,
    epsilon: f64,
) -> SeedRecord {
    match qr_lyapunov_flow(gen, field, &job.x0, job.horizon, job.renorm_dt, job.transient, cfg) {
        Ok(s) => {
            let v = simplicity_verdict(&s, gap_floor);
            SeedRecord {
                seed,
                epsilon,
                min_gap: Some(v.min_gap),
                simple: v.simple,
                resolved: v.resolved,
                exponents: s.exponents,
                half_widths: s.half_widths,
                non_convergence: s.flags.non_convergence,
                error: None,
            }
        }
        Err(e) => SeedRecord {
            seed,
            epsilon,
            min_gap: None,
            simple: false,
            resolved: false,
            exponents: Vec::new(),
            half_widths: Vec::new(),
            non_convergence: false,
            error: Some(e.to_string()),
        },
    }
}

fn summarize(epsilon: f64, recs: &[&SeedRecord]) -> EpsilonSummary {
    let resolved = recs.iter().filter(|r| r.resolved).count();
    let simple = recs.iter().filter(|r| r.resolved && r.simple).count();
    let failed = recs.iter().filter(|r| r.error.is_some()).count();
    let gaps: Vec<f64> = recs.iter().filter_map(|r| r.min_gap).collect();
    EpsilonSummary {
        epsilon,
        fraction_simple: if resolved == 0 { 0.0 } else { simple as f64 / resolved as f64 },
        simple_count: simple,
        resolved_count: resolved,
        unresolved_count: recs.len() - resolved - failed,
        failed_count: failed,
        gap_quantiles: (!gaps.is_empty()).then(|| (quantile(&gaps, 0.1), quantile(&gaps, 0.5), quantile(&gaps, 0.9))),
    }
}

const SCAN_NOTE: &str = "Sampling can be consistent with open-and-dense simplicity but never certifies it.";

/// Perturbs the base generator for every `(ε, seed)` cell and records the
/// simplicity verdict. Seed `i` of the cell at `ε_k` draws its perturbation
/// from the stream `(simplicity-scan, seed_offset + i, k)`.
pub fn simplicity_scan(
    cfg: &ScanConfig,
    field: &VectorField<f64>,
    icfg: &IntegratorConfig<f64>,
) -> Result<ScanResult> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }
    let mut warnings = Vec::new();
    let (mut bunched, mut gstar) = (None, None);
    if let Some(b) = &cfg.bunching {
        let r = check_bunching_flow(&cfg.base_generator, field, &b.points, b.theta, b.eta, &b.t_grid, icfg)?;
        if !r.verdict {
            warnings.push(format!("base generator is not fiber bunched on the sample (gamma* = {})", r.gamma_star));
        }
        bunched = Some(r.verdict);
        gstar = Some(r.gamma_star);
    }
    let cells: Vec<(usize, u64)> = (0..cfg.epsilon_grid.len())
        .flat_map(|k| (0..cfg.n_seeds as u64).map(move |i| (k, i)))
        .collect();
    let records: Vec<SeedRecord> = cells
        .par_iter()
        .map(|&(k, i)| {
            let eps = cfg.epsilon_grid[k];
            let seed = cfg.seed_offset + i;
            match perturb_generator(&cfg.base_generator, eps, stream_seed(SCAN_ID, seed, k as u64)) {
                Ok(g) => spectrum_record(&g, field, &cfg.job, icfg, cfg.gap_floor, seed, eps),
                Err(e) => failed_record(seed, eps, e),
            }
        })
        .collect();
    let summaries = cfg
        .epsilon_grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let recs: Vec<&SeedRecord> = records[k * cfg.n_seeds..(k + 1) * cfg.n_seeds].iter().collect();
            summarize(eps, &recs)
        })
        .collect();
    Ok(ScanResult {
        summaries,
        records,
        base_bunched: bunched,
        base_gamma_star: gstar,
        warnings,
        interpretation: SCAN_NOTE.into(),
    })
}

fn failed_record(seed: u64, epsilon: f64, e: Error) -> SeedRecord {
    SeedRecord {
        seed,
        epsilon,
        min_gap: None,
        simple: false,
        resolved: false,
        exponents: Vec::new(),
        half_widths: Vec::new(),
        non_convergence: false,
        error: Some(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpennessConfig {
    pub generator: CocycleGenerator<f64>,
    pub delta_grid: Vec<f64>,
    pub n_seeds: usize,
    pub seed_offset: u64,
    pub gap_floor: f64,
    pub job: SpectrumJob,
}

impl OpennessConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.delta_grid.is_empty() {
            errs.push("delta_grid must not be empty".into());
        }
        if self.delta_grid.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            errs.push("delta_grid entries must be non-negative".into());
        }
        if self.delta_grid.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("delta_grid must be strictly ascending".into());
        }
        if self.n_seeds == 0 {
            errs.push("n_seeds must be at least 1".into());
        }
        if !(self.gap_floor >= 0.0) {
            errs.push("gap_floor must be non-negative".into());
        }
        if let Err(e) = self.generator.validate() {
            errs.push(format!("generator: {e}"));
        }
        self.job.validate(&mut errs);
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub retention: f64,
    pub min_gap: Option<f64>,
    pub failed_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpennessResult {
    pub base_gap: f64,
    pub base_resolved: bool,
    pub base_simple: bool,
    pub summaries: Vec<DeltaSummary>,
    pub records: Vec<SeedRecord>,
    /// `|min_gap(δ) − g₀|` against δ over the positive grid points.
    pub gap_fit: Option<LinearFit<f64>>,
    /// `g₀ / (10·d)`: sup-norm size of perturbation expected to keep the
    /// gap; a rule of thumb, never asserted.
    pub heuristic_delta: f64,
    pub interpretation: String,
}

/// Retention of simplicity under `δ`-perturbations of a simple generator.
/// Seed `i` uses the stream `(openness-probe, seed_offset + i, 0)` at every
/// δ, so each seed moves along one fixed direction as δ grows.
pub fn openness_probe(
    cfg: &OpennessConfig,
    field: &VectorField<f64>,
    icfg: &IntegratorConfig<f64>,
) -> Result<OpennessResult> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }
    let base = spectrum_record(&cfg.generator, field, &cfg.job, icfg, cfg.gap_floor, 0, 0.0);
    if let Some(e) = &base.error {
        return Err(Error::InvalidInput(format!("base spectrum failed: {e}")));
    }
    let g0 = base.min_gap.expect("finished record");
    let cells: Vec<(usize, u64)> =
        (0..cfg.delta_grid.len()).flat_map(|k| (0..cfg.n_seeds as u64).map(move |i| (k, i))).collect();
    let records: Vec<SeedRecord> = cells
        .par_iter()
        .map(|&(k, i)| {
            let d = cfg.delta_grid[k];
            let seed = cfg.seed_offset + i;
            if d == 0.0 {
                let mut r = base.clone();
                r.seed = seed;
                return r;
            }
            match perturb_generator(&cfg.generator, d, stream_seed(OPENNESS_ID, seed, 0)) {
                Ok(g) => spectrum_record(&g, field, &cfg.job, icfg, cfg.gap_floor, seed, d),
                Err(e) => failed_record(seed, d, e),
            }
        })
        .collect();
    let summaries: Vec<DeltaSummary> = cfg
        .delta_grid
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let recs = &records[k * cfg.n_seeds..(k + 1) * cfg.n_seeds];
            let kept = recs.iter().filter(|r| r.simple).count();
            let gaps: Vec<f64> = recs.iter().filter_map(|r| r.min_gap).collect();
            DeltaSummary {
                delta: d,
                retention: kept as f64 / recs.len() as f64,
                min_gap: gaps.iter().copied().reduce(f64::min),
                failed_count: recs.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = summaries
        .iter()
        .filter(|s| s.delta > 0.0)
        .filter_map(|s| s.min_gap.map(|g| (s.delta, (g - g0).abs())))
        .unzip();
    Ok(OpennessResult {
        base_gap: g0,
        base_resolved: base.resolved,
        base_simple: base.simple,
        summaries,
        records,
        gap_fit: linear_fit(&xs, &ys),
        heuristic_delta: g0 / (10.0 * cfg.generator.matrix_dim() as f64),
        interpretation: SCAN_NOTE.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationExperiment {
    pub flow: LyapunovSpectrum<f64>,
    pub map: LyapunovSpectrum<f64>,
    pub n_returns: usize,
    pub mean_tau: f64,
    pub report: RelationReport<f64>,
    pub max_error: f64,
}

/// Flow spectrum along the orbit of `job.x0` and map spectrum of the return
/// legs between the section crossings of that same orbit. Dynamical
/// cocycles use the 2×2 return derivatives, other generators the flow
/// cocycle over each return time.
pub fn relation_experiment(
    gen: &CocycleGenerator<f64>,
    field: &VectorField<f64>,
    sec: &CrossSection<f64>,
    job: &SpectrumJob,
    tau_min: f64,
    cfg: &IntegratorConfig<f64>,
) -> Result<RelationExperiment> {
    let (flow, orbit) = qr_lyapunov_flow_with_crossings(
        gen, field, &job.x0, job.horizon, job.renorm_dt, job.transient, cfg, sec, tau_min,
    )?;
    let first = orbit.times.partition_point(|&t| t < job.transient);
    let legs: Vec<(f64, Matrix<f64>)> = if gen.kind == CocycleKind::Dynamical {
        let samples = orbit_returns(field, sec, &orbit, cfg)?;
        if let Some(k) = samples[first..].iter().position(|s| s.censored) {
            return Err(Error::InvalidInput(format!("return {} after the transient is censored", first + k)));
        }
        samples[first..].iter().map(|s| (s.tau, s.d_return.clone())).collect()
    } else {
        (first..orbit.times.len().saturating_sub(1))
            .into_par_iter()
            .map(|j| {
                let tau = orbit.times[j + 1] - orbit.times[j];
                Ok((tau, evolve_cocycle(gen, field, &orbit.points[j], tau, cfg)?))
            })
            .collect::<Result<_>>()?
    };
    let matrices: Vec<Matrix<f64>> = legs.iter().map(|l| l.1.clone()).collect();
    let taus: Vec<f64> = legs.iter().map(|l| l.0).collect();
    let map = qr_lyapunov_map(&matrices, 1, 0)?;
    let mean_tau = mean(&taus);
    let report = exponent_relation_check(&flow, &map, mean_tau)?;
    let max_error = report.errors.iter().copied().fold(0.0, f64::max);
    Ok(RelationExperiment { flow, map, n_returns: legs.len(), mean_tau, report, max_error })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspensionReport {
    pub n_returns: usize,
    /// Section point the comparison starts from.
    pub p0: Vec3<f64>,
    /// Elapsed time of the direct integration at the last crossing.
    pub s_n: f64,
    /// Sum of the return times of the per-leg restarted returns.
    pub tau_sum: f64,
    pub time_relative_error: f64,
    pub direct_exponents: Vec<f64>,
    pub product_exponents: Vec<f64>,
    /// Per exponent, relative to `max(|direct|, floor)`.
    pub exponent_errors: Vec<f64>,
    pub max_exponent_error: f64,
    /// Relative Frobenius error of the leg product after `k + 1` returns.
    pub matrix_errors: Vec<f64>,
    pub matrix_error_fit: Option<LinearFit<f64>>,
}

/// Matrix kept as `m·e^{log_scale}` with `max |m_ij| = 1`.
#[derive(Debug, Clone)]
struct Scaled {
    m: Matrix<f64>,
    log_scale: f64,
}

impl Scaled {
    fn new(m: Matrix<f64>, log_scale: f64) -> Self {
        let mut s = Scaled { m, log_scale };
        s.rebalance();
        s
    }

    fn rebalance(&mut self) {
        let a = self.m.max_abs();
        if a > 0.0 && a.is_finite() {
            self.m = self.m.scale(1.0 / a);
            self.log_scale += a.ln();
        }
    }

    fn relative_error(&self, reference: &Scaled) -> f64 {
        let r = reference.m.frobenius_norm();
        let d = &self.m.scale((self.log_scale - reference.log_scale).exp()) - &reference.m;
        d.frobenius_norm() / r
    }
}

/// QR accumulation of log growth along a product.
struct QrAccumulator {
    q: Matrix<f64>,
    logs: Vec<f64>,
}

impl QrAccumulator {
    fn new(n: usize) -> Self {
        QrAccumulator { q: Matrix::identity(n), logs: vec![0.0; n] }
    }

    fn push(&mut self, a: &Matrix<f64>) -> Result<()> {
        let (q, r) = (a * &self.q).qr();
        for (i, l) in self.logs.iter_mut().enumerate() {
            let d = r[(i, i)];
            if !(d > 0.0) {
                return Err(Error::SingularMatrix { condition: f64::INFINITY });
            }
            *l += d.ln();
        }
        self.q = q;
        Ok(())
    }
}

/// The flow cocycle from `p0` (the first crossing after `x0`) over `n`
/// returns, computed once directly and once as the ordered product of
/// per-return legs restarted at each direct crossing.
#[allow(clippy::too_many_arguments)]
pub fn suspension_consistency(
    gen: &CocycleGenerator<f64>,
    field: &VectorField<f64>,
    sec: &CrossSection<f64>,
    x0: &Vec3<f64>,
    n_returns: usize,
    renorm_dt: f64,
    tau_min: f64,
    tau_max: f64,
    cfg: &IntegratorConfig<f64>,
) -> Result<SuspensionReport> {
    if n_returns == 0 {
        return Err(Error::InvalidInput("n_returns must be positive".into()));
    }
    let start = section_orbit(field, sec, x0, 1, cfg, tau_min, tau_max)?;
    let p0 = *start.points.first().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let n = gen.matrix_dim();
    // Direct run: QR at every renorm time, keeping the R factors so the
    // matrix itself can be rebuilt at each crossing.
    let mut r_prod: Vec<Scaled> = vec![Scaled { m: Matrix::identity(n), log_scale: 0.0 }];
    let mut r_logs: Vec<Vec<f64>> = vec![vec![0.0; n]];
    let recorder = Recorder { sec, tau_min, tau_max, first_t_min: tau_min };
    let out = drive_cocycle(gen, field, &p0, cfg, renorm_dt, Stop::Crossings(n_returns), Some(recorder), |_, frame| {
        let (q, r) = Matrix::from_row_slice(n, n, frame).qr();
        let last = r_prod.last().expect("seeded");
        r_prod.push(Scaled::new(&r * &last.m, last.log_scale));
        let mut logs = r_logs.last().expect("seeded").clone();
        for (i, l) in logs.iter_mut().enumerate() {
            *l += r[(i, i)].ln();
        }
        r_logs.push(logs);
        frame.copy_from_slice(q.as_slice());
        Ok(())
    })?;
    if out.truncated || out.crossings.len() < n_returns {
        return Err(Error::InsufficientSamples { needed: n_returns, got: out.crossings.len() });
    }
    let s_n = out.t;
    let direct: Vec<Scaled> = out
        .frames
        .iter()
        .map(|(k, f)| {
            let base = &r_prod[*k];
            Scaled::new(&Matrix::from_row_slice(n, n, f) * &base.m, base.log_scale)
        })
        .collect();
    let (k_last, f_last) = out.frames.last().expect("n_returns > 0");
    let (_, r_last) = Matrix::from_row_slice(n, n, f_last).qr();
    let direct_exponents: Vec<f64> =
        (0..n).map(|i| (r_logs[*k_last][i] + r_last[(i, i)].abs().ln()) / s_n).collect();
    let mut starts = vec![p0];
    starts.extend(out.crossings.iter().map(|c| c.p));
    let times: Vec<f64> = std::iter::once(0.0).chain(out.crossings.iter().map(|c| c.t)).collect();
    let legs: Vec<(Matrix<f64>, f64)> = (0..n_returns)
        .into_par_iter()
        .map(|j| {
            let tau = times[j + 1] - times[j];
            let a = evolve_cocycle(gen, field, &starts[j], tau, cfg)?;
            let ret = poincare_return(field, sec, &sec.coords(&starts[j]), cfg, tau_min, tau_max)?;
            if ret.censored {
                return Err(Error::InvalidInput(format!("return {j} is censored")));
            }
            Ok((a, ret.tau))
        })
        .collect::<Result<_>>()?;
    let tau_sum = legs.iter().map(|l| l.1).sum::<f64>();
    let mut prod = Scaled { m: Matrix::identity(n), log_scale: 0.0 };
    let mut acc = QrAccumulator::new(n);
    let mut matrix_errors = Vec::with_capacity(n_returns);
    for ((a, _), d) in legs.iter().zip(&direct) {
        prod = Scaled::new(a * &prod.m, prod.log_scale);
        acc.push(a)?;
        matrix_errors.push(prod.relative_error(d));
    }
    let mut product_exponents: Vec<f64> = acc.logs.iter().map(|l| l / s_n).collect();
    let mut direct_sorted = direct_exponents.clone();
    direct_sorted.sort_by(|a, b| b.total_cmp(a));
    product_exponents.sort_by(|a, b| b.total_cmp(a));
    let exponent_errors: Vec<f64> = direct_sorted
        .iter()
        .zip(&product_exponents)
        .map(|(d, p)| (d - p).abs() / d.abs().max(RELATION_FLOOR))
        .collect();
    let ks: Vec<f64> = (1..=n_returns).map(|k| k as f64).collect();
    Ok(SuspensionReport {
        n_returns,
        p0,
        s_n,
        tau_sum,
        time_relative_error: (s_n - tau_sum).abs() / s_n,
        max_exponent_error: exponent_errors.iter().copied().fold(0.0, f64::max),
        direct_exponents: direct_sorted,
        product_exponents,
        exponent_errors,
        matrix_error_fit: linear_fit(&ks, &matrix_errors),
        matrix_errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    One,
    X,
    Y,
    Z,
    ZSquared,
    IndicatorZAbove27,
}

impl Observable {
    pub const ALL: [Observable; 6] =
        [Observable::One, Observable::X, Observable::Y, Observable::Z, Observable::ZSquared, Observable::IndicatorZAbove27];

    pub fn eval(self, p: &Vec3<f64>) -> f64 {
        match self {
            Observable::One => 1.0,
            Observable::X => p[0],
            Observable::Y => p[1],
            Observable::Z => p[2],
            Observable::ZSquared => p[2] * p[2],
            Observable::IndicatorZAbove27 => f64::from(u8::from(p[2] > 27.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffObservable {
    pub observable: Observable,
    pub averages: Vec<f64>,
    pub max_spread: f64,
    /// Standard deviation of the observable over all orbits (time-weighted).
    pub std: f64,
    pub spread_over_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffReport {
    pub horizon: f64,
    pub transient: f64,
    pub n_initial: usize,
    pub observables: Vec<BirkhoffObservable>,
}

// 4-point Gauss–Legendre on [0, 1].
const GL_NODES: [f64; 4] = [0.069_431_844_202_973_71, 0.330_009_478_207_571_9, 0.669_990_521_792_428_1, 0.930_568_155_797_026_3];
const GL_WEIGHTS: [f64; 4] = [0.173_927_422_568_726_9, 0.326_072_577_431_273_1, 0.326_072_577_431_273_1, 0.173_927_422_568_726_9];

/// Time averages `(1/T)∫ φ` after a transient, with Gauss–Legendre
/// quadrature on each step's dense output. Returns the averages and the
/// averages of `φ²` in `observables` order.
fn time_averages(
    field: &VectorField<f64>,
    x0: &Vec3<f64>,
    observables: &[Observable],
    horizon: f64,
    transient: f64,
    cfg: &IntegratorConfig<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = FlowSystem { field: *field };
    let mut it = Integrator::new(&sys, 0.0, x0, cfg)?;
    it.advance_to(transient)?;
    let end = transient + horizon;
    let m = observables.len();
    let (mut s1, mut s2) = (vec![0.0; m], vec![0.0; m]);
    let mut p = [0.0; 3];
    while it.t() < end {
        it.step(end)?;
        let view = it.last_step();
        let h = view.t1 - view.t0;
        for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            view.dense.eval(view.t0 + node * h, &mut p);
            for (k, o) in observables.iter().enumerate() {
                let v = o.eval(&p);
                s1[k] += w * h * v;
                s2[k] += w * h * v * v;
            }
        }
    }
    Ok((s1.iter().map(|v| v / horizon).collect(), s2.iter().map(|v| v / horizon).collect()))
}

pub fn birkhoff_check(
    field: &VectorField<f64>,
    observables: &[Observable],
    x0_list: &[Vec3<f64>],
    horizon: f64,
    transient: f64,
    cfg: &IntegratorConfig<f64>,
) -> Result<BirkhoffReport> {
    if x0_list.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x0_list.len() });
    }
    if !(horizon > 0.0) || !(transient >= 0.0) {
        return Err(Error::InvalidInput("horizon must be positive and transient non-negative".into()));
    }
    let runs: Vec<(Vec<f64>, Vec<f64>)> = x0_list
        .par_iter()
        .map(|x0| time_averages(field, x0, observables, horizon, transient, cfg))
        .collect::<Result<_>>()?;
    let observables = observables
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            let averages: Vec<f64> = runs.iter().map(|r| r.0[k]).collect();
            let lo = averages.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m1 = mean(&averages);
            let m2 = mean(&runs.iter().map(|r| r.1[k]).collect::<Vec<_>>());
            let std = (m2 - m1 * m1).max(0.0).sqrt();
            let spread = hi - lo;
            BirkhoffObservable {
                observable: o,
                averages,
                max_spread: spread,
                std,
                spread_over_std: if std > 0.0 { spread / std } else { spread },
            }
        })
        .collect();
    Ok(BirkhoffReport { horizon, transient, n_initial: x0_list.len(), observables })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::flow_map;

    fn setup() -> (VectorField<f64>, IntegratorConfig<f64>, Vec3<f64>) {
        let f = VectorField::lorenz();
        let cfg = IntegratorConfig::default();
        let p0 = flow_map(&f, &[1.0, 1.0, 20.0], 30.0, &cfg).unwrap();
        (f, cfg, p0)
    }

    #[test]
    fn zero_base_at_zero_epsilon_is_never_simple() {
        let (f, cfg, p0) = setup();
        let sc = ScanConfig {
            dim: 2,
            epsilon_grid: vec![0.0],
            n_seeds: 3,
            seed_offset: 0,
            gap_floor: 1e-3,
            base_generator: CocycleGenerator::zero(2),
            job: SpectrumJob { x0: p0, horizon: 50.0, renorm_dt: 0.5, transient: 5.0 },
            bunching: Some(BunchingPrecheck { theta: 0.9, eta: 1.0, t_grid: vec![0.5, 1.0], points: vec![p0] }),
        };
        let r = simplicity_scan(&sc, &f, &cfg).unwrap();
        assert_eq!(r.summaries[0].fraction_simple, 0.0);
        assert_eq!(r.summaries[0].simple_count, 0);
        assert_eq!(r.base_bunched, Some(true));
        assert!(r.records.iter().all(|x| x.min_gap == Some(0.0)));
    }

    #[test]
    fn scan_config_lists_every_violation() {
        let (_, _, p0) = setup();
        let sc = ScanConfig {
            dim: 3,
            epsilon_grid: vec![0.2, 0.1],
            n_seeds: 0,
            seed_offset: 0,
            gap_floor: -1.0,
            base_generator: CocycleGenerator::zero(2),
            job: SpectrumJob { x0: p0, horizon: 10.0, renorm_dt: 0.0, transient: 20.0 },
            bunching: None,
        };
        assert_eq!(sc.violations().len(), 6);
    }

    #[test]
    fn suspension_of_zero_and_diagonal_generators() {
        let (f, cfg, p0) = setup();
        let sec = CrossSection::lorenz(&f).unwrap();
        let r = suspension_consistency(&CocycleGenerator::zero(2), &f, &sec, &p0, 5, 0.5, 0.05, 50.0, &cfg).unwrap();
        assert!(r.matrix_errors.iter().all(|&e| e == 0.0));
        assert!(r.direct_exponents.iter().all(|&e| e == 0.0));
        let g = CocycleGenerator::constant(&Matrix::from_diag(&[1.0, -1.0]));
        let r = suspension_consistency(&g, &f, &sec, &p0, 10, 0.5, 0.05, 50.0, &cfg).unwrap();
        assert!(r.matrix_errors.iter().all(|&e| e < 1e-8), "{:?}", r.matrix_errors);
        assert!((r.direct_exponents[0] - 1.0).abs() < 1e-10 && (r.direct_exponents[1] + 1.0).abs() < 1e-10);
        assert!(r.time_relative_error < 1e-8);
    }

    #[test]
    fn birkhoff_of_one_is_exactly_one() {
        let (f, cfg, p0) = setup();
        let r = birkhoff_check(&f, &[Observable::One], &[p0, [1.0, 2.0, 3.0]], 20.0, 1.0, &cfg).unwrap();
        for &a in &r.observables[0].averages {
            assert!((a - 1.0).abs() < 1e-12);
        }
        assert!(r.observables[0].max_spread < 1e-12);
    }
}
