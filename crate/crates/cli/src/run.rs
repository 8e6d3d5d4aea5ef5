//! Dispatch from a validated config to the core pipelines.

use cocycle_lab::cocycles::{check_bunching_flow, check_bunching_map, evolve_cocycle, CocycleKind};
use cocycle_lab::experiments::{
    birkhoff_check, openness_probe, relation_experiment, simplicity_scan, suspension_consistency, BunchingPrecheck,
    OpennessConfig, ScanConfig, SpectrumJob, OPENNESS_ID, SCAN_ID,
};
use cocycle_lab::flows::{flow_map, integrate_flow, singularity_eigen};
use cocycle_lab::linalg::Matrix;
use cocycle_lab::real::Vec3;
use cocycle_lab::rng::stream;
use cocycle_lab::sections::{
    estimate_gamma, hyperbolicity_report, orbit_returns, return_time_stats, section_orbit, CrossSection,
};
use cocycle_lab::spectra::{
    check_singular_hyperbolicity, covariant_splitting, qr_lyapunov_flow, qr_lyapunov_map, section_splitting,
    simplicity_verdict, LyapunovSpectrum,
};
use cocycle_lab::{Error, IntegratorConfig, VectorField};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::*;

pub const MAP_SPECTRUM_ID: &str = "map-spectrum";
pub const BIRKHOFF_ID: &str = "birkhoff";

/// A table written to `aggregates.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub struct Outcome {
    pub result: Value,
    pub table: Table,
    /// Random stream identifiers the run drew from.
    pub streams: Vec<String>,
}

type Run = Result<Outcome, Error>;

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

/// Flows `x0` for the spin-up time onto the attractor.
pub fn start_point(field: &VectorField<f64>, st: &Start, cfg: &IntegratorConfig<f64>) -> Result<Vec3<f64>, Error> {
    if st.spinup > 0.0 {
        flow_map(field, &st.x0, st.spinup, cfg)
    } else {
        Ok(st.x0)
    }
}

fn spectrum_table(spec: &LyapunovSpectrum<f64>) -> Table {
    let mut t = Table::new(&["index", "exponent", "half_width"]);
    for (i, (e, h)) in spec.exponents.iter().zip(&spec.half_widths).enumerate() {
        t.push(vec![s(i), s(e), s(h)]);
    }
    t
}

fn orbit_points(field: &VectorField<f64>, x0: &Vec3<f64>, n: usize, spacing: f64, cfg: &IntegratorConfig<f64>) -> Result<Vec<Vec3<f64>>, Error> {
    let traj = integrate_flow(field, x0, spacing * n as f64, cfg)?;
    Ok((0..n).map(|k| traj.state_at(spacing * k as f64)).collect())
}

pub fn execute(cfg: &RunConfig) -> Run {
    let field = &cfg.field;
    let icfg = &cfg.integrator;
    match &cfg.params {
        Params::FlowSpectrum(p) => flow_spectrum(p, field, icfg),
        Params::MapSpectrum(p) => map_spectrum(p),
        Params::SectionSample(p) => section_sample(p, field, icfg),
        Params::Bunching(p) => bunching(p, field, icfg),
        Params::SplittingCheck(p) => splitting_check(p, field, icfg),
        Params::RelationCheck(p) => {
            let x0 = start_point(field, &p.start, icfg)?;
            let sec = CrossSection::lorenz(field)?;
            let job = SpectrumJob { x0, horizon: p.horizon, renorm_dt: p.renorm_dt, transient: p.transient.unwrap_or(0.0) };
            let r = relation_experiment(&p.generator, field, &sec, &job, p.tau_min, icfg)?;
            let mut t = Table::new(&["index", "flow_exponent", "map_exponent", "relative_error"]);
            let mut fi = 0;
            for (i, (m, e)) in r.map.exponents.iter().zip(&r.report.errors).enumerate() {
                if Some(fi) == r.report.dropped_flow_index {
                    fi += 1;
                }
                t.push(vec![s(i), s(r.flow.exponents[fi]), s(m), s(e)]);
                fi += 1;
            }
            Ok(Outcome { result: to_value(&r), table: t, streams: vec![] })
        }
        Params::SuspensionCheck(p) => {
            let x0 = start_point(field, &p.start, icfg)?;
            let sec = CrossSection::lorenz(field)?;
            let r = suspension_consistency(&p.generator, field, &sec, &x0, p.n_returns, p.renorm_dt, p.tau_min, p.tau_max, icfg)?;
            let mut t = Table::new(&["index", "direct_exponent", "product_exponent", "error"]);
            for (i, ((d, q), e)) in r.direct_exponents.iter().zip(&r.product_exponents).zip(&r.exponent_errors).enumerate() {
                t.push(vec![s(i), s(d), s(q), s(e)]);
            }
            Ok(Outcome { result: to_value(&r), table: t, streams: vec![] })
        }
        Params::SimplicityScan(p) => scan(p, field, icfg),
        Params::OpennessProbe(p) => {
            let x0 = start_point(field, &p.start, icfg)?;
            let oc = OpennessConfig {
                generator: p.generator.clone(),
                delta_grid: p.delta_grid.clone(),
                n_seeds: p.n_seeds,
                seed_offset: p.seed_offset,
                gap_floor: p.gap_floor,
                job: SpectrumJob { x0, horizon: p.horizon, renorm_dt: p.renorm_dt, transient: p.transient.unwrap_or(0.0) },
            };
            let r = openness_probe(&oc, field, icfg)?;
            let mut t = Table::new(&["delta", "retention", "min_gap", "failed_count"]);
            for d in &r.summaries {
                t.push(vec![s(d.delta), s(d.retention), opt(d.min_gap), s(d.failed_count)]);
            }
            Ok(Outcome { result: to_value(&r), table: t, streams: vec![OPENNESS_ID.into()] })
        }
        Params::Birkhoff(p) => birkhoff(p, field, icfg),
    }
}

fn flow_spectrum(p: &FlowSpectrumParams, field: &VectorField<f64>, icfg: &IntegratorConfig<f64>) -> Run {
    let x0 = start_point(field, &p.start, icfg)?;
    let spec = qr_lyapunov_flow(&p.generator, field, &x0, p.horizon, p.renorm_dt, p.transient.unwrap_or(0.0), icfg)?;
    let verdict = simplicity_verdict(&spec, p.gap_floor);
    let singularity = if p.generator.kind == CocycleKind::Dynamical { singularity_eigen(field).ok() } else { None };
    let result = json!({
        "spectrum": spec,
        "sum": spec.sum(),
        "verdict": verdict,
        "singularity": singularity,
    });
    Ok(Outcome { result, table: spectrum_table(&spec), streams: vec![] })
}

/// `P·diag(±e^{λ})·P⁻¹` with distinct `λ ∈ [−1, 1]` at least 0.15 apart.
fn random_case(dim: usize, rng: &mut impl Rng) -> (Matrix<f64>, Vec<f64>) {
    let lambdas = loop {
        let mut l: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        l.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if l.windows(2).all(|w| w[0] - w[1] > 0.15) {
            break l;
        }
    };
    let d: Vec<f64> = lambdas.iter().map(|l| if rng.random_bool(0.5) { l.exp() } else { -l.exp() }).collect();
    loop {
        let p = Matrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        if p.condition_number() > 50.0 {
            continue;
        }
        if let Ok(inv) = p.inverse() {
            return (&(&p * &Matrix::from_diag(&d)) * &inv, lambdas);
        }
    }
}

fn map_spectrum(p: &MapSpectrumParams) -> Run {
    let mut t = Table::new(&["case", "dim", "index", "exponent", "half_width"]);
    let push = |t: &mut Table, case: usize, spec: &LyapunovSpectrum<f64>| {
        for (i, (e, h)) in spec.exponents.iter().zip(&spec.half_widths).enumerate() {
            t.push(vec![s(case), s(spec.exponents.len()), s(i), s(e), s(h)]);
        }
    };
    if let Some(m) = &p.matrices {
        let spec = qr_lyapunov_map(m, p.renorm_every, p.discard)?;
        let verdict = simplicity_verdict(&spec, p.gap_floor);
        push(&mut t, 0, &spec);
        return Ok(Outcome { result: json!({ "spectrum": spec, "verdict": verdict }), table: t, streams: vec![] });
    }
    let r = p.random.as_ref().expect("validated");
    let cases: Vec<(usize, Matrix<f64>, Vec<f64>)> = (0..r.n_cases)
        .map(|i| {
            let dim = r.dims[i % r.dims.len()];
            let (m, l) = random_case(dim, &mut stream(MAP_SPECTRUM_ID, r.seed, i as u64));
            (dim, m, l)
        })
        .collect();
    let specs: Vec<LyapunovSpectrum<f64>> = cases
        .par_iter()
        .map(|(_, m, _)| qr_lyapunov_map(&vec![m.clone(); r.length], p.renorm_every, p.discard))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (i, ((dim, m, l), spec)) in cases.iter().zip(&specs).enumerate() {
        push(&mut t, i, spec);
        out.push(json!({
            "dim": dim,
            "matrix": m,
            "design_log_moduli": l,
            "spectrum": spec,
            "verdict": simplicity_verdict(spec, p.gap_floor),
        }));
    }
    Ok(Outcome { result: json!({ "cases": out }), table: t, streams: vec![MAP_SPECTRUM_ID.into()] })
}

fn section_sample(p: &SectionSampleParams, field: &VectorField<f64>, icfg: &IntegratorConfig<f64>) -> Run {
    let x0 = start_point(field, &p.start, icfg)?;
    let mut sec = CrossSection::lorenz(field)?;
    let mut gamma_error = None;
    if p.estimate_gamma {
        match estimate_gamma(field, &sec, &[0.0, 0.0], p.gamma_radius, icfg) {
            Ok(g) => sec = sec.with_gamma(Some(g), p.gamma_band_halfwidth),
            Err(e) => gamma_error = Some(e.to_string()),
        }
    }
    let orbit = section_orbit(field, &sec, &x0, p.n_returns + 1, icfg, p.tau_min, p.tau_max)?;
    let samples = orbit_returns(field, &sec, &orbit, icfg)?;
    let stats = return_time_stats(&samples)?;
    let mut t = Table::new(&["x1", "x2", "fx1", "fx2", "tau", "d11", "d12", "d21", "d22", "censored"]);
    for r in &samples {
        let d = r.d_return.as_slice();
        t.push(vec![s(r.x[0]), s(r.x[1]), s(r.fx[0]), s(r.fx[1]), s(r.tau), s(d[0]), s(d[1]), s(d[2]), s(d[3]), s(r.censored)]);
    }
    let result = json!({
        "section": sec,
        "gamma_error": gamma_error,
        "truncated": orbit.truncated,
        "stats": stats,
        "samples": samples,
    });
    Ok(Outcome { result, table: t, streams: vec![] })
}

fn bunching(p: &BunchingParams, field: &VectorField<f64>, icfg: &IntegratorConfig<f64>) -> Run {
    let x0 = start_point(field, &p.start, icfg)?;
    let points = orbit_points(field, &x0, p.n_points, p.spacing, icfg)?;
    let flow = check_bunching_flow(&p.generator, field, &points, p.theta, p.eta, &p.t_grid, icfg)?;
    let mut t = Table::new(&["form", "gamma_star", "margin", "verdict", "n_samples"]);
    t.push(vec![s("flow"), s(flow.gamma_star), s(flow.margin), s(flow.verdict), s(flow.n_samples)]);
    let map = if p.n_returns > 0 {
        let sec = CrossSection::lorenz(field)?;
        let orbit = section_orbit(field, &sec, &x0, p.n_returns + 1, icfg, p.tau_min, p.tau_max)?;
        let pairs: Vec<(Matrix<f64>, f64)> = if p.generator.kind == CocycleKind::Dynamical {
            orbit_returns(field, &sec, &orbit, icfg)?
                .into_iter()
                .filter(|r| !r.censored)
                .map(|r| (r.d_return, r.tau))
                .collect()
        } else {
            orbit
                .taus()
                .par_iter()
                .enumerate()
                .map(|(j, &tau)| Ok((evolve_cocycle(&p.generator, field, &orbit.points[j], tau, icfg)?, tau)))
                .collect::<Result<_, Error>>()?
        };
        let m = check_bunching_map(&pairs, p.theta, p.eta)?;
        t.push(vec![s("map"), s(m.gamma_star), s(m.margin), s(m.verdict), s(m.n_samples)]);
        Some(m)
    } else {
        None
    };
    let transfer = map.as_ref().map(|m| !flow.verdict || m.verdict);
    Ok(Outcome { result: json!({ "flow": flow, "map": map, "flow_implies_map": transfer }), table: t, streams: vec![] })
}

fn splitting_check(p: &SplittingCheckParams, field: &VectorField<f64>, icfg: &IntegratorConfig<f64>) -> Run {
    let x0 = start_point(field, &p.start, icfg)?;
    let (samples, section_report) = match p.sampling {
        Sampling::Section => {
            let sec = CrossSection::lorenz(field)?;
            let ss = section_splitting(field, &sec, &x0, p.n_samples, p.t_forward, p.t_backward, p.tau_min, icfg)?;
            let returns = orbit_returns(field, &sec, &ss.orbit, icfg)?;
            let k = returns.len();
            let map = hyperbolicity_report(&returns, &ss.stable[..k], &ss.unstable[..k], p.theta);
            let map = match map {
                Ok(r) => json!(r),
                Err(e) => json!({ "error": e.to_string() }),
            };
            (ss.splitting, Some(map))
        }
        Sampling::Time => {
            let offsets: Vec<f64> = (0..p.n_samples).map(|k| p.spacing * k as f64).collect();
            (covariant_splitting(field, &x0, p.t_forward, p.t_backward, &offsets, icfg)?.samples, None)
        }
    };
    let report = check_singular_hyperbolicity(&samples, field, &p.t_grid, p.theta, icfg)?;
    let mut t = Table::new(&["sample", "t", "contraction", "domination", "domination_product", "cu_volume", "required_theta"]);
    for (i, row) in report.checks.iter().enumerate() {
        for c in row {
            t.push(vec![s(i), s(c.t), s(c.contraction), s(c.domination), s(c.domination_product), s(c.cu_volume), s(report.required_theta[i])]);
        }
    }
    let converged = samples.iter().filter(|s| s.converged_u && s.converged_s).count();
    let min_angle = samples.iter().map(|s| s.angle_s_cu).fold(f64::INFINITY, f64::min);
    let mut summary = to_value(&report);
    if let Value::Object(m) = &mut summary {
        m.remove("checks");
    }
    let result = json!({
        "report": summary,
        "converged_fraction": converged as f64 / samples.len() as f64,
        "min_angle_s_cu": min_angle,
        "section_map": section_report,
    });
    Ok(Outcome { result, table: t, streams: vec![] })
}

fn scan(p: &SimplicityScanParams, field: &VectorField<f64>, icfg: &IntegratorConfig<f64>) -> Run {
    let x0 = start_point(field, &p.start, icfg)?;
    let bunching = match &p.bunching {
        Some(b) => Some(BunchingPrecheck {
            theta: b.theta,
            eta: b.eta,
            t_grid: b.t_grid.clone(),
            points: orbit_points(field, &x0, b.n_points, b.spacing, icfg)?,
        }),
        None => None,
    };
    let sc = ScanConfig {
        dim: p.dim,
        epsilon_grid: p.epsilon_grid.clone(),
        n_seeds: p.n_seeds,
        seed_offset: p.seed_offset,
        gap_floor: p.gap_floor,
        base_generator: p.base_generator.clone().expect("resolved"),
        job: SpectrumJob { x0, horizon: p.horizon, renorm_dt: p.renorm_dt, transient: p.transient.unwrap_or(0.0) },
        bunching,
    };
    let r = simplicity_scan(&sc, field, icfg)?;
    let mut t = Table::new(&[
        "epsilon",
        "fraction_simple",
        "simple_count",
        "resolved_count",
        "unresolved_count",
        "failed_count",
        "gap_q10",
        "gap_q50",
        "gap_q90",
    ]);
    for e in &r.summaries {
        let q = e.gap_quantiles;
        t.push(vec![
            s(e.epsilon),
            s(e.fraction_simple),
            s(e.simple_count),
            s(e.resolved_count),
            s(e.unresolved_count),
            s(e.failed_count),
            opt(q.map(|q| q.0)),
            opt(q.map(|q| q.1)),
            opt(q.map(|q| q.2)),
        ]);
    }
    Ok(Outcome { result: to_value(&r), table: t, streams: vec![SCAN_ID.into()] })
}

fn birkhoff(p: &BirkhoffParams, field: &VectorField<f64>, icfg: &IntegratorConfig<f64>) -> Run {
    let (x0s, streams) = match &p.x0_list {
        Some(l) => (l.clone(), vec![]),
        None => {
            let mut rng = stream(BIRKHOFF_ID, p.seed, 0);
            let pts = (0..p.n_initial)
                .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(10.0..40.0)])
                .collect();
            (pts, vec![BIRKHOFF_ID.to_string()])
        }
    };
    let base = birkhoff_check(field, &p.observables, &x0s, p.horizon, p.transient, icfg)?;
    let doubled = if p.compare_doubled {
        Some(birkhoff_check(field, &p.observables, &x0s, 2.0 * p.horizon, p.transient, icfg)?)
    } else {
        None
    };
    let mut t = Table::new(&["horizon", "observable", "mean", "max_spread", "std", "spread_over_std"]);
    for rep in std::iter::once(&base).chain(doubled.as_ref()) {
        for o in &rep.observables {
            let m = o.averages.iter().sum::<f64>() / o.averages.len() as f64;
            let name = to_value(&o.observable);
            t.push(vec![s(rep.horizon), s(name.as_str().unwrap_or_default()), s(m), s(o.max_spread), s(o.std), s(o.spread_over_std)]);
        }
    }
    let result = json!({ "x0_list": x0s, "report": base, "doubled": doubled });
    Ok(Outcome { result, table: t, streams })
}
