//! Run configuration: a strict JSON schema with a required format version.
//! Parsing collects every unknown key and every semantic violation.

use std::path::PathBuf;

use cocycle_lab::cocycles::CocycleGenerator;
use cocycle_lab::experiments::Observable;
use cocycle_lab::linalg::Matrix;
use cocycle_lab::real::Vec3;
use cocycle_lab::{IntegratorConfig, VectorField};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FlowSpectrum,
    MapSpectrum,
    SectionSample,
    Bunching,
    SplittingCheck,
    RelationCheck,
    SuspensionCheck,
    SimplicityScan,
    OpennessProbe,
    Birkhoff,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::FlowSpectrum,
        ExperimentKind::MapSpectrum,
        ExperimentKind::SectionSample,
        ExperimentKind::Bunching,
        ExperimentKind::SplittingCheck,
        ExperimentKind::RelationCheck,
        ExperimentKind::SuspensionCheck,
        ExperimentKind::SimplicityScan,
        ExperimentKind::OpennessProbe,
        ExperimentKind::Birkhoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FlowSpectrum => "flow-spectrum",
            ExperimentKind::MapSpectrum => "map-spectrum",
            ExperimentKind::SectionSample => "section-sample",
            ExperimentKind::Bunching => "bunching",
            ExperimentKind::SplittingCheck => "splitting-check",
            ExperimentKind::RelationCheck => "relation-check",
            ExperimentKind::SuspensionCheck => "suspension-check",
            ExperimentKind::SimplicityScan => "simplicity-scan",
            ExperimentKind::OpennessProbe => "openness-probe",
            ExperimentKind::Birkhoff => "birkhoff",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Top level as written in the file; `params` is parsed once the
/// experiment is known.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawConfig {
    format_version: String,
    experiment: ExperimentKind,
    #[serde(default = "default_output")]
    output_dir: PathBuf,
    #[serde(default)]
    integrator: IntegratorConfig<f64>,
    #[serde(default = "VectorField::lorenz")]
    field: VectorField<f64>,
    #[serde(default)]
    params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub format_version: String,
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub integrator: IntegratorConfig<f64>,
    pub field: VectorField<f64>,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    FlowSpectrum(FlowSpectrumParams),
    MapSpectrum(MapSpectrumParams),
    SectionSample(SectionSampleParams),
    Bunching(BunchingParams),
    SplittingCheck(SplittingCheckParams),
    RelationCheck(RelationCheckParams),
    SuspensionCheck(SuspensionCheckParams),
    SimplicityScan(SimplicityScanParams),
    OpennessProbe(OpennessProbeParams),
    Birkhoff(BirkhoffParams),
}

fn x0_default() -> Vec3<f64> {
    [1.0, 1.0, 20.0]
}
fn spinup_default() -> f64 {
    50.0
}
fn renorm_default() -> f64 {
    0.5
}
fn tau_min_default() -> f64 {
    0.05
}
fn tau_max_default() -> f64 {
    50.0
}
fn gap_floor_default() -> f64 {
    1e-3
}
fn dynamical() -> CocycleGenerator<f64> {
    CocycleGenerator::dynamical()
}
fn t_grid_default() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn one() -> f64 {
    1.0
}
fn theta_default() -> f64 {
    0.9
}

/// Starting point on the attractor: `x0` flowed for `spinup`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Start {
    #[serde(default = "x0_default")]
    pub x0: Vec3<f64>,
    #[serde(default = "spinup_default")]
    pub spinup: f64,
}

impl Default for Start {
    fn default() -> Self {
        Start { x0: x0_default(), spinup: spinup_default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpectrumParams {
    #[serde(default = "dynamical")]
    pub generator: CocycleGenerator<f64>,
    #[serde(default)]
    pub start: Start,
    pub horizon: f64,
    #[serde(default = "renorm_default")]
    pub renorm_dt: f64,
    /// Filled with the default transient when absent.
    pub transient: Option<f64>,
    #[serde(default = "gap_floor_default")]
    pub gap_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMatrices {
    pub n_cases: usize,
    pub dims: Vec<usize>,
    /// Each case is one random matrix repeated this many times.
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpectrumParams {
    pub matrices: Option<Vec<Matrix<f64>>>,
    pub random: Option<RandomMatrices>,
    #[serde(default = "one_usize")]
    pub renorm_every: usize,
    #[serde(default)]
    pub discard: usize,
    #[serde(default = "gap_floor_default")]
    pub gap_floor: f64,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSampleParams {
    #[serde(default)]
    pub start: Start,
    pub n_returns: usize,
    #[serde(default = "tau_min_default")]
    pub tau_min: f64,
    #[serde(default = "tau_max_default")]
    pub tau_max: f64,
    #[serde(default = "yes")]
    pub estimate_gamma: bool,
    #[serde(default = "gamma_radius_default")]
    pub gamma_radius: f64,
    #[serde(default = "band_default")]
    pub gamma_band_halfwidth: f64,
}

fn yes() -> bool {
    true
}
fn gamma_radius_default() -> f64 {
    0.2
}
fn band_default() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BunchingParams {
    pub generator: CocycleGenerator<f64>,
    #[serde(default)]
    pub start: Start,
    pub n_points: usize,
    #[serde(default = "spacing_default")]
    pub spacing: f64,
    #[serde(default = "theta_default")]
    pub theta: f64,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "t_grid_default")]
    pub t_grid: Vec<f64>,
    /// Returns used for the map form (0 skips it).
    #[serde(default)]
    pub n_returns: usize,
    #[serde(default = "tau_min_default")]
    pub tau_min: f64,
    #[serde(default = "tau_max_default")]
    pub tau_max: f64,
}

fn spacing_default() -> f64 {
    0.37
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Consecutive section crossings.
    Section,
    /// Orbit points `spacing` apart in time.
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingCheckParams {
    #[serde(default)]
    pub start: Start,
    pub n_samples: usize,
    #[serde(default = "sampling_default")]
    pub sampling: Sampling,
    #[serde(default = "spacing_default")]
    pub spacing: f64,
    #[serde(default = "horizon20")]
    pub t_forward: f64,
    #[serde(default = "horizon20")]
    pub t_backward: f64,
    #[serde(default = "t_grid_default")]
    pub t_grid: Vec<f64>,
    #[serde(default = "theta_default")]
    pub theta: f64,
    #[serde(default = "tau_min_default")]
    pub tau_min: f64,
}

fn sampling_default() -> Sampling {
    Sampling::Section
}
fn horizon20() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheckParams {
    pub generator: CocycleGenerator<f64>,
    #[serde(default)]
    pub start: Start,
    pub horizon: f64,
    #[serde(default = "renorm_default")]
    pub renorm_dt: f64,
    pub transient: Option<f64>,
    #[serde(default = "tau_min_default")]
    pub tau_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspensionCheckParams {
    pub generator: CocycleGenerator<f64>,
    #[serde(default)]
    pub start: Start,
    pub n_returns: usize,
    #[serde(default = "renorm_default")]
    pub renorm_dt: f64,
    #[serde(default = "tau_min_default")]
    pub tau_min: f64,
    #[serde(default = "tau_max_default")]
    pub tau_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BunchingSample {
    #[serde(default = "theta_default")]
    pub theta: f64,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "t_grid_default")]
    pub t_grid: Vec<f64>,
    #[serde(default = "five")]
    pub n_points: usize,
    #[serde(default = "spacing_default")]
    pub spacing: f64,
}

fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplicityScanParams {
    pub dim: usize,
    pub epsilon_grid: Vec<f64>,
    pub n_seeds: usize,
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default = "gap_floor_default")]
    pub gap_floor: f64,
    /// Defaults to the zero generator of `dim`.
    pub base_generator: Option<CocycleGenerator<f64>>,
    #[serde(default)]
    pub start: Start,
    pub horizon: f64,
    #[serde(default = "renorm_default")]
    pub renorm_dt: f64,
    pub transient: Option<f64>,
    pub bunching: Option<BunchingSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpennessProbeParams {
    pub generator: CocycleGenerator<f64>,
    pub delta_grid: Vec<f64>,
    pub n_seeds: usize,
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default = "gap_floor_default")]
    pub gap_floor: f64,
    #[serde(default)]
    pub start: Start,
    pub horizon: f64,
    #[serde(default = "renorm_default")]
    pub renorm_dt: f64,
    pub transient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffParams {
    #[serde(default = "all_observables")]
    pub observables: Vec<Observable>,
    /// Explicit starting points; otherwise `n_initial` points drawn from
    /// the seed stream in `[-10,10]² × [10,40]`.
    pub x0_list: Option<Vec<Vec3<f64>>>,
    #[serde(default = "ten")]
    pub n_initial: usize,
    #[serde(default)]
    pub seed: u64,
    pub horizon: f64,
    #[serde(default = "spinup_default")]
    pub transient: f64,
    /// Also run at twice the horizon.
    #[serde(default)]
    pub compare_doubled: bool,
}

fn all_observables() -> Vec<Observable> {
    Observable::ALL.to_vec()
}
fn ten() -> usize {
    10
}

/// Parses and validates; on failure returns every problem found.
pub fn parse(text: &str) -> Result<RunConfig, Vec<String>> {
    let value: Value = serde_json::from_str(text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
    let mut errs = Vec::new();
    let raw: RawConfig = match strict(value, "", &mut errs) {
        Some(r) => r,
        None => return Err(errs),
    };
    if raw.format_version != FORMAT_VERSION {
        errs.push(format!("format_version must be \"{FORMAT_VERSION}\", got \"{}\"", raw.format_version));
    }
    if let Err(e) = raw.integrator.validate() {
        errs.push(format!("integrator: {e}"));
    }
    if let Err(e) = raw.field.validate() {
        errs.push(format!("field: {e}"));
    }
    let params = match parse_params(raw.experiment, raw.params, &mut errs) {
        Some(p) => p,
        None => return Err(errs),
    };
    let mut cfg = RunConfig {
        format_version: raw.format_version,
        experiment: raw.experiment,
        output_dir: raw.output_dir,
        integrator: raw.integrator,
        field: raw.field,
        params,
    };
    cfg.resolve_defaults();
    cfg.check(&mut errs);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

/// Deserializes `value`, recording unknown keys (all of them) and the first
/// type error as violations.
fn strict<T: DeserializeOwned>(value: Value, prefix: &str, errs: &mut Vec<String>) -> Option<T> {
    let mut unknown = Vec::new();
    let out: Result<T, _> = serde_ignored::deserialize(value, |path| unknown.push(path.to_string()));
    for k in unknown {
        errs.push(format!("unknown key \"{prefix}{k}\""));
    }
    match out {
        Ok(v) => Some(v),
        Err(e) => {
            let at = if prefix.is_empty() { String::new() } else { format!("{} ", prefix.trim_end_matches('.')) };
            errs.push(format!("{at}{e}"));
            None
        }
    }
}

fn parse_params(kind: ExperimentKind, v: Value, errs: &mut Vec<String>) -> Option<Params> {
    let p = "params.";
    Some(match kind {
        ExperimentKind::FlowSpectrum => Params::FlowSpectrum(strict(v, p, errs)?),
        ExperimentKind::MapSpectrum => Params::MapSpectrum(strict(v, p, errs)?),
        ExperimentKind::SectionSample => Params::SectionSample(strict(v, p, errs)?),
        ExperimentKind::Bunching => Params::Bunching(strict(v, p, errs)?),
        ExperimentKind::SplittingCheck => Params::SplittingCheck(strict(v, p, errs)?),
        ExperimentKind::RelationCheck => Params::RelationCheck(strict(v, p, errs)?),
        ExperimentKind::SuspensionCheck => Params::SuspensionCheck(strict(v, p, errs)?),
        ExperimentKind::SimplicityScan => Params::SimplicityScan(strict(v, p, errs)?),
        ExperimentKind::OpennessProbe => Params::OpennessProbe(strict(v, p, errs)?),
        ExperimentKind::Birkhoff => Params::Birkhoff(strict(v, p, errs)?),
    })
}

fn transient_for(horizon: f64, t: &mut Option<f64>) {
    if t.is_none() && horizon > 0.0 {
        *t = Some(cocycle_lab::spectra::default_transient(horizon));
    }
}

struct Checker<'a> {
    errs: &'a mut Vec<String>,
}

impl Checker<'_> {
    fn positive(&mut self, name: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.errs.push(format!("{name} must be positive"));
        }
    }
    fn non_negative(&mut self, name: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.errs.push(format!("{name} must be non-negative"));
        }
    }
    fn at_least(&mut self, name: &str, v: usize, min: usize) {
        if v < min {
            self.errs.push(format!("{name} must be at least {min}"));
        }
    }
    fn theta(&mut self, v: f64) {
        if !(v > 0.0 && v < 1.0) {
            self.errs.push("theta must lie in (0,1)".into());
        }
    }
    fn eta(&mut self, v: f64) {
        if !(v > 0.0 && v <= 1.0) {
            self.errs.push("eta must lie in (0,1]".into());
        }
    }
    fn grid(&mut self, name: &str, g: &[f64], allow_zero: bool) {
        if g.is_empty() {
            self.errs.push(format!("{name} must not be empty"));
        }
        let bad = |v: f64| if allow_zero { !(v >= 0.0) } else { !(v > 0.0) } || !v.is_finite();
        if g.iter().any(|&v| bad(v)) {
            let what = if allow_zero { "non-negative" } else { "positive" };
            self.errs.push(format!("{name} entries must be {what}"));
        }
        if g.windows(2).any(|w| w[1] <= w[0]) {
            self.errs.push(format!("{name} must be strictly ascending"));
        }
    }
    fn generator(&mut self, name: &str, g: &CocycleGenerator<f64>) {
        if let Err(e) = g.validate() {
            self.errs.push(format!("{name}: {e}"));
        }
    }
    fn start(&mut self, s: &Start) {
        if s.x0.iter().any(|v| !v.is_finite()) {
            self.errs.push("start.x0 must be finite".into());
        }
        self.non_negative("start.spinup", s.spinup);
    }
    fn spectrum(&mut self, horizon: f64, renorm_dt: f64, transient: Option<f64>) {
        self.positive("horizon", horizon);
        self.positive("renorm_dt", renorm_dt);
        if let Some(t) = transient {
            if !(t >= 0.0 && t < horizon) {
                self.errs.push("transient must lie in [0, horizon)".into());
            }
        }
    }
    fn taus(&mut self, tau_min: f64, tau_max: f64) {
        self.positive("tau_min", tau_min);
        if !(tau_max > tau_min) {
            self.errs.push("tau_max must exceed tau_min".into());
        }
    }
}

impl RunConfig {
    fn resolve_defaults(&mut self) {
        match &mut self.params {
            Params::FlowSpectrum(p) => transient_for(p.horizon, &mut p.transient),
            Params::RelationCheck(p) => transient_for(p.horizon, &mut p.transient),
            Params::SimplicityScan(p) => {
                transient_for(p.horizon, &mut p.transient);
                if p.base_generator.is_none() && (2..=8).contains(&p.dim) {
                    p.base_generator = Some(CocycleGenerator::zero(p.dim));
                }
            }
            Params::OpennessProbe(p) => transient_for(p.horizon, &mut p.transient),
            _ => {}
        }
    }

    fn check(&self, errs: &mut Vec<String>) {
        let mut c = Checker { errs };
        match &self.params {
            Params::FlowSpectrum(p) => {
                c.generator("generator", &p.generator);
                c.start(&p.start);
                c.spectrum(p.horizon, p.renorm_dt, p.transient);
                c.non_negative("gap_floor", p.gap_floor);
            }
            Params::MapSpectrum(p) => {
                match (&p.matrices, &p.random) {
                    (Some(m), None) => {
                        if m.len() < 100 {
                            c.errs.push("matrices must hold at least 100 entries".into());
                        }
                        if let Some(first) = m.first() {
                            let n = first.rows();
                            if m.iter().any(|a| a.rows() != n || a.cols() != n) {
                                c.errs.push("matrices must be square and of one size".into());
                            }
                        }
                        if p.discard + 2 > m.len() {
                            c.errs.push("discard must leave at least two matrices".into());
                        }
                    }
                    (None, Some(r)) => {
                        c.at_least("random.n_cases", r.n_cases, 1);
                        c.at_least("random.length", r.length, 100);
                        if r.dims.is_empty() || r.dims.iter().any(|d| !(1..=8).contains(d)) {
                            c.errs.push("random.dims must be a non-empty list of sizes in 1..=8".into());
                        }
                        if p.discard + 2 > r.length {
                            c.errs.push("discard must leave at least two matrices".into());
                        }
                    }
                    _ => c.errs.push("give exactly one of matrices or random".into()),
                }
                c.at_least("renorm_every", p.renorm_every, 1);
                c.non_negative("gap_floor", p.gap_floor);
            }
            Params::SectionSample(p) => {
                c.start(&p.start);
                c.at_least("n_returns", p.n_returns, 2);
                c.taus(p.tau_min, p.tau_max);
                c.positive("gamma_radius", p.gamma_radius);
                c.non_negative("gamma_band_halfwidth", p.gamma_band_halfwidth);
            }
            Params::Bunching(p) => {
                c.generator("generator", &p.generator);
                c.start(&p.start);
                c.at_least("n_points", p.n_points, 1);
                c.positive("spacing", p.spacing);
                c.theta(p.theta);
                c.eta(p.eta);
                c.grid("t_grid", &p.t_grid, false);
                c.taus(p.tau_min, p.tau_max);
            }
            Params::SplittingCheck(p) => {
                c.start(&p.start);
                c.at_least("n_samples", p.n_samples, 1);
                c.positive("spacing", p.spacing);
                c.positive("t_forward", p.t_forward);
                c.positive("t_backward", p.t_backward);
                c.grid("t_grid", &p.t_grid, false);
                c.theta(p.theta);
                c.positive("tau_min", p.tau_min);
            }
            Params::RelationCheck(p) => {
                c.generator("generator", &p.generator);
                c.start(&p.start);
                c.spectrum(p.horizon, p.renorm_dt, p.transient);
                c.positive("tau_min", p.tau_min);
            }
            Params::SuspensionCheck(p) => {
                c.generator("generator", &p.generator);
                c.start(&p.start);
                c.at_least("n_returns", p.n_returns, 1);
                c.positive("renorm_dt", p.renorm_dt);
                c.taus(p.tau_min, p.tau_max);
            }
            Params::SimplicityScan(p) => {
                if !(2..=8).contains(&p.dim) {
                    c.errs.push("dim must lie in 2..=8".into());
                }
                c.grid("epsilon_grid", &p.epsilon_grid, true);
                c.at_least("n_seeds", p.n_seeds, 1);
                c.non_negative("gap_floor", p.gap_floor);
                if let Some(g) = &p.base_generator {
                    c.generator("base_generator", g);
                    if g.dim != p.dim {
                        c.errs.push(format!("base_generator has dim {}, scan dim {}", g.dim, p.dim));
                    }
                }
                c.start(&p.start);
                c.spectrum(p.horizon, p.renorm_dt, p.transient);
                if let Some(b) = &p.bunching {
                    c.theta(b.theta);
                    c.eta(b.eta);
                    c.grid("bunching.t_grid", &b.t_grid, false);
                    c.at_least("bunching.n_points", b.n_points, 1);
                    c.positive("bunching.spacing", b.spacing);
                }
            }
            Params::OpennessProbe(p) => {
                c.generator("generator", &p.generator);
                c.grid("delta_grid", &p.delta_grid, true);
                c.at_least("n_seeds", p.n_seeds, 1);
                c.non_negative("gap_floor", p.gap_floor);
                c.start(&p.start);
                c.spectrum(p.horizon, p.renorm_dt, p.transient);
            }
            Params::Birkhoff(p) => {
                if p.observables.is_empty() {
                    c.errs.push("observables must not be empty".into());
                }
                match &p.x0_list {
                    Some(l) if l.len() < 2 => c.errs.push("x0_list needs at least two points".into()),
                    Some(l) if l.iter().flatten().any(|v| !v.is_finite()) => {
                        c.errs.push("x0_list entries must be finite".into())
                    }
                    None => c.at_least("n_initial", p.n_initial, 2),
                    _ => {}
                }
                c.positive("horizon", p.horizon);
                c.non_negative("transient", p.transient);
            }
        }
    }

    /// The config as echoed into `results.json`: everything that determines
    /// the numbers, so the output directory is left out.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        v
    }
}
