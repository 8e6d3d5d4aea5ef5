use cocycle_lab::cocycles::CocycleGenerator;
use cocycle_lab::experiments::*;
use cocycle_lab::flows::*;
use cocycle_lab::ode::IntegratorConfig;
use cocycle_lab::real::{line_angle3, normalize3};
use cocycle_lab::sections::CrossSection;
use cocycle_lab::spectra::*;

fn cfg() -> IntegratorConfig<f64> {
    IntegratorConfig::default()
}

fn attractor_point() -> [f64; 3] {
    flow_map(&VectorField::lorenz(), &[1.0, 1.0, 20.0], 30.0, &cfg()).unwrap()
}

fn scan(horizon: f64) -> ScanConfig {
    ScanConfig {
        dim: 2,
        epsilon_grid: vec![0.05, 0.2],
        n_seeds: 6,
        seed_offset: 0,
        gap_floor: 1e-3,
        base_generator: CocycleGenerator::zero(2),
        job: SpectrumJob { x0: attractor_point(), horizon, renorm_dt: 0.5, transient: 20.0 },
        bunching: None,
    }
}

#[test]
fn scan_is_deterministic_and_counts_reconcile() {
    let f = VectorField::lorenz();
    let a = simplicity_scan(&scan(200.0), &f, &cfg()).unwrap();
    let b = simplicity_scan(&scan(200.0), &f, &cfg()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for s in &a.summaries {
        assert_eq!(s.resolved_count + s.unresolved_count + s.failed_count, 6);
        assert!(s.simple_count <= s.resolved_count);
    }
    assert!(a.records.iter().all(|r| !r.simple || r.resolved));
}

#[test]
fn longer_horizons_do_not_unresolve() {
    let f = VectorField::lorenz();
    let short = simplicity_scan(&scan(200.0), &f, &cfg()).unwrap();
    let long = simplicity_scan(&scan(400.0), &f, &cfg()).unwrap();
    for (s, l) in short.summaries.iter().zip(&long.summaries) {
        assert!(l.unresolved_count <= s.unresolved_count, "{} -> {}", s.unresolved_count, l.unresolved_count);
    }
}

#[test]
fn openness_at_zero_delta_keeps_everything() {
    let f = VectorField::lorenz();
    let gen = cocycle_lab::cocycles::perturb_generator(&CocycleGenerator::zero(2), 0.1, 7).unwrap();
    let oc = OpennessConfig {
        generator: gen,
        delta_grid: vec![0.0, 0.01],
        n_seeds: 3,
        seed_offset: 0,
        gap_floor: 1e-3,
        job: SpectrumJob { x0: attractor_point(), horizon: 300.0, renorm_dt: 0.5, transient: 20.0 },
    };
    let r = openness_probe(&oc, &f, &cfg()).unwrap();
    assert!(r.base_simple);
    assert_eq!(r.summaries[0].retention, 1.0);
    assert_eq!(r.summaries[0].min_gap, Some(r.base_gap));
}

#[test]
fn unstable_direction_is_carried_by_the_flow() {
    let f = VectorField::lorenz();
    let offsets: Vec<f64> = (0..60).map(|k| k as f64).collect();
    let e = covariant_splitting(&f, &attractor_point(), 20.0, 20.0, &offsets, &cfg()).unwrap();
    let mut good = 0;
    for w in e.samples.windows(2) {
        let dx = &flow_derivative_at(&f, &w[0].point, &[1.0], &cfg()).unwrap()[0].1;
        let pushed = normalize3(&{
            let v = dx.mul_vec(&w[0].e_u);
            [v[0], v[1], v[2]]
        });
        if line_angle3(&pushed, &w[1].e_u) < 1f64.to_radians() {
            good += 1;
        }
    }
    assert!(good as f64 >= 0.9 * 59.0, "{good}/59");
    for s in &e.samples {
        let v = f.eval(&s.point);
        let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!(line_angle3(&s.e_flow, &normalize3(&v)) < 1e-7);
        if speed > 1.0 {
            assert!(s.angle_flow_u > 1e-3);
        }
    }
}

#[test]
fn suspension_time_identity_and_agreement() {
    let f = VectorField::lorenz();
    let sec = CrossSection::lorenz(&f).unwrap();
    let gen = CocycleGenerator::random_trig(2, 3, 1.0, 2);
    let r = suspension_consistency(&gen, &f, &sec, &attractor_point(), 40, 0.5, 0.05, 50.0, &cfg()).unwrap();
    assert!(r.time_relative_error < 1e-8);
    assert!(r.max_exponent_error < 0.01);
    assert!(r.matrix_errors.iter().all(|&e| e < 1e-6));
}

#[test]
fn birkhoff_averages_of_the_catalog() {
    let f = VectorField::lorenz();
    let x0s = [[1.0, 1.0, 20.0], [-3.0, 2.0, 15.0], [5.0, -5.0, 30.0]];
    let r = birkhoff_check(&f, &Observable::ALL, &x0s, 200.0, 20.0, &cfg()).unwrap();
    let one = &r.observables[0];
    assert!(one.averages.iter().all(|a| (a - 1.0).abs() < 1e-12));
    let ind = r.observables.iter().find(|o| o.observable == Observable::IndicatorZAbove27).unwrap();
    assert!(ind.averages.iter().all(|&a| (0.0..=1.0).contains(&a)));
    let z = r.observables.iter().find(|o| o.observable == Observable::Z).unwrap();
    assert!(z.averages.iter().all(|&a| (15.0..35.0).contains(&a)));
}
