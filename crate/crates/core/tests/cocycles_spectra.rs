use cocycle_lab::cocycles::*;
use cocycle_lab::flows::*;
use cocycle_lab::linalg::Matrix;
use cocycle_lab::ode::IntegratorConfig;
use cocycle_lab::spectra::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> IntegratorConfig<f64> {
    IntegratorConfig::default()
}

fn attractor_point(t: f64) -> [f64; 3] {
    flow_map(&VectorField::lorenz(), &[1.0, 1.0, 20.0], 30.0 + t, &cfg()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Matrix<f64> {
    Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Eigenvalue log-moduli (descending) of a 2×2 or 3×3 matrix via nalgebra.
fn eigen_log_moduli(m: &Matrix<f64>) -> Vec<f64> {
    let d = m.rows();
    let n = nalgebra::DMatrix::from_row_slice(d, d, m.as_slice());
    let mut v: Vec<f64> = n.complex_eigenvalues().iter().map(|z| z.norm().ln()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Independent Benettin estimate for the Lorenz tangent dynamics: fixed-step
/// RK4 on state and three tangent vectors, Gram-Schmidt every `every` steps.
fn benettin_lorenz(t_end: f64, h: f64, every: usize) -> [f64; 3] {
    let rhs = |y: &[f64; 12]| {
        let (x, yy, z) = (y[0], y[1], y[2]);
        let mut d = [0.0; 12];
        d[0] = 10.0 * (yy - x);
        d[1] = 28.0 * x - yy - x * z;
        d[2] = x * yy - 8.0 / 3.0 * z;
        for k in 0..3 {
            let v = [y[3 + 3 * k], y[4 + 3 * k], y[5 + 3 * k]];
            d[3 + 3 * k] = -10.0 * v[0] + 10.0 * v[1];
            d[4 + 3 * k] = (28.0 - z) * v[0] - v[1] - x * v[2];
            d[5 + 3 * k] = yy * v[0] + x * v[1] - 8.0 / 3.0 * v[2];
        }
        d
    };
    let mut y = [0.0; 12];
    y[..3].copy_from_slice(&attractor_point(20.0));
    y[3] = 1.0;
    y[7] = 1.0;
    y[11] = 1.0;
    let steps = (t_end / h) as usize;
    let mut sums = [0.0; 3];
    for s in 1..=steps {
        let k1 = rhs(&y);
        let mut tmp = [0.0; 12];
        (0..12).for_each(|i| tmp[i] = y[i] + 0.5 * h * k1[i]);
        let k2 = rhs(&tmp);
        (0..12).for_each(|i| tmp[i] = y[i] + 0.5 * h * k2[i]);
        let k3 = rhs(&tmp);
        (0..12).for_each(|i| tmp[i] = y[i] + h * k3[i]);
        let k4 = rhs(&tmp);
        (0..12).for_each(|i| y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if s % every == 0 {
            let mut basis: Vec<[f64; 3]> = Vec::new();
            for k in 0..3 {
                let mut v = [y[3 + 3 * k], y[4 + 3 * k], y[5 + 3 * k]];
                for b in &basis {
                    let dot = v[0] * b[0] + v[1] * b[1] + v[2] * b[2];
                    (0..3).for_each(|i| v[i] -= dot * b[i]);
                }
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                sums[k] += n.ln();
                (0..3).for_each(|i| v[i] /= n);
                y[3 + 3 * k..6 + 3 * k].copy_from_slice(&v);
                basis.push(v);
            }
        }
    }
    let t = steps as f64 * h;
    [sums[0] / t, sums[1] / t, sums[2] / t]
}

#[test]
fn lorenz_dynamical_spectrum_against_benettin_oracle() {
    let oracle = benettin_lorenz(1e5, 0.004, 50);
    let f = VectorField::lorenz();
    let s = qr_lyapunov_flow(&CocycleGenerator::dynamical(), &f, &attractor_point(0.0), 1e4, 0.5, 500.0, &cfg()).unwrap();
    let tol = [0.03, 0.01, 0.05];
    let frozen = [0.906, 0.0, -14.572];
    for i in 0..3 {
        assert!((oracle[i] - frozen[i]).abs() < tol[i], "oracle {oracle:?}");
        assert!((s.exponents[i] - frozen[i]).abs() < tol[i], "spectrum {:?}", s.exponents);
    }
    assert!((s.sum() + 41.0 / 3.0).abs() < 0.01);
    assert!(s.exponents[1].abs() < 0.01);
    let v = simplicity_verdict(&s, 0.1);
    assert!(v.simple && (v.min_gap - 0.906).abs() < 0.03);
}

#[test]
fn constant_matrices_match_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    while done < 20 {
        let d = 2 + done % 2;
        let m = random_matrix(&mut rng, d);
        let ev = eigen_log_moduli(&m);
        if ev.windows(2).any(|w| (w[0] - w[1]).abs() < 0.1) {
            continue;
        }
        let s = qr_lyapunov_map(&vec![m; 2000], 1, 1000).unwrap();
        for (a, b) in s.exponents.iter().zip(&ev) {
            assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", s.exponents, ev);
        }
        done += 1;
    }
}

#[test]
fn lorenz_map_spectrum_is_hyperbolic() {
    use cocycle_lab::experiments::{relation_experiment, SpectrumJob};
    let f = VectorField::lorenz();
    let sec = cocycle_lab::sections::CrossSection::lorenz(&f).unwrap();
    let job = SpectrumJob { x0: attractor_point(0.0), horizon: 1500.0, renorm_dt: 0.5, transient: 50.0 };
    let r = relation_experiment(&CocycleGenerator::dynamical(), &f, &sec, &job, 0.05, &cfg()).unwrap();
    assert_eq!(r.map.exponents.len(), 2);
    assert!(r.map.exponents.iter().all(|e| e.abs() > 0.05), "{:?}", r.map.exponents);
    assert!(r.report.dropped_flow_index == Some(1));
    assert!(r.max_error < 0.02);
}

#[test]
fn bunching_transfers_from_flow_to_map() {
    let f = VectorField::lorenz();
    let mut checked = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let gen = CocycleGenerator::random_trig(2, 2, 0.05, seed);
        let points: Vec<[f64; 3]> = (0..4).map(|k| attractor_point(k as f64 * 1.1 + seed as f64)).collect();
        let taus: Vec<f64> = (0..4).map(|_| rng.random_range(1.05..2.5)).collect();
        let flow = check_bunching_flow(&gen, &f, &points, 0.5, 1.0, &taus, &cfg()).unwrap();
        assert!(flow.verdict, "dataset {seed} should be flow bunched");
        let pairs: Vec<(Matrix<f64>, f64)> =
            points.iter().zip(&taus).map(|(p, &t)| (evolve_cocycle(&gen, &f, p, t, &cfg()).unwrap(), t)).collect();
        let map = check_bunching_map(&pairs, 0.5, 1.0).unwrap();
        assert!(map.verdict && map.short_returns == 0);
        assert!(map.gamma_star <= flow.gamma_star);
        checked += 1;
    }
    assert_eq!(checked, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_cocycle_law(seed in 0u64..1000, t in 0.1f64..1.0, s in 0.1f64..1.0, k in 0usize..40) {
        let f = VectorField::lorenz();
        let gen = CocycleGenerator::random_trig(2, 3, 0.5, seed);
        let x = attractor_point(k as f64 * 0.5);
        let path = evolve_cocycle_at(&gen, &f, &x, &[s, t + s], &cfg()).unwrap();
        let xs = flow_map(&f, &x, s, &cfg()).unwrap();
        let at = evolve_cocycle(&gen, &f, &xs, t, &cfg()).unwrap();
        let prod = &at * &path[0].1;
        prop_assert!((&prod - &path[1].1).max_abs() < 1e-7 * path[1].1.max_abs().max(1.0));
    }

    #[test]
    fn flow_bunching_implies_map_bunching(
        seed in 0u64..10_000,
        scale in 0.01f64..0.6,
        theta in 0.2f64..0.95,
        eta in 0.2f64..1.0,
        taus in proptest::collection::vec(1.01f64..3.0, 2..5),
    ) {
        let f = VectorField::lorenz();
        let gen = CocycleGenerator::random_trig(2, 2, scale, seed);
        let points: Vec<[f64; 3]> = (0..taus.len()).map(|k| attractor_point(seed as f64 % 7.0 + k as f64)).collect();
        let flow = check_bunching_flow(&gen, &f, &points, theta, eta, &taus, &cfg()).unwrap();
        let pairs: Vec<(Matrix<f64>, f64)> =
            points.iter().zip(&taus).map(|(p, &t)| (evolve_cocycle(&gen, &f, p, t, &cfg()).unwrap(), t)).collect();
        let map = check_bunching_map(&pairs, theta, eta).unwrap();
        if flow.verdict {
            prop_assert!(map.verdict);
        }
    }

    #[test]
    fn bunching_constant_grows_with_theta(seed in 0u64..1000, a in 0.1f64..0.5, b in 0.5f64..0.95) {
        let f = VectorField::lorenz();
        let gen = CocycleGenerator::random_trig(2, 2, 0.3, seed);
        let pts = [attractor_point(seed as f64 % 5.0)];
        let lo = check_bunching_flow(&gen, &f, &pts, a, 1.0, &[0.5, 1.0], &cfg()).unwrap();
        let hi = check_bunching_flow(&gen, &f, &pts, b, 1.0, &[0.5, 1.0], &cfg()).unwrap();
        prop_assert!(lo.gamma_star <= hi.gamma_star);
    }

    #[test]
    fn generator_json_round_trip(seed in 0u64..100_000, d in 2usize..5, modes in 0usize..4) {
        let g = CocycleGenerator::<f64>::random_trig(d, modes, 0.7, seed);
        prop_assert_eq!(CocycleGenerator::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn perturbation_is_bounded_and_deterministic(seed in 0u64..100_000, eps in 0.0f64..0.5) {
        let f = VectorField::lorenz();
        let base = CocycleGenerator::<f64>::zero(2);
        let a = perturb_generator(&base, eps, seed).unwrap();
        prop_assert_eq!(&a, &perturb_generator(&base, eps, seed).unwrap());
        let x = attractor_point(seed as f64 % 11.0);
        prop_assert!(a.eval(&f, &x).frobenius_norm() <= eps * (1.0 + PERTURBATION_MODES as f64) + 1e-12);
    }

    #[test]
    fn inverse_product_negates_spectrum(seed in 0u64..10_000, d in 2usize..4, period in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block: Vec<Matrix<f64>> = (0..period).map(|_| random_matrix(&mut rng, d)).collect();
        let mut p = Matrix::identity(d);
        for m in &block {
            p = m * &p;
        }
        let ev = eigen_log_moduli(&p);
        prop_assume!(ev.windows(2).all(|w| w[0] - w[1] > 0.1));
        let n = 600 * period;
        let list: Vec<Matrix<f64>> = (0..n).map(|i| block[i % period].clone()).collect();
        let inv: Vec<Matrix<f64>> = list.iter().rev().map(|m| m.inverse().unwrap()).collect();
        let a = qr_lyapunov_map(&list, 1, 300 * period).unwrap();
        let b = qr_lyapunov_map(&inv, 1, 300 * period).unwrap();
        for i in 0..d {
            prop_assert!((a.exponents[i] + b.exponents[d - 1 - i]).abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_every_matrix_shifts_exponents(seed in 0u64..10_000, c in prop_oneof![0.1f64..10.0, -10.0f64..-0.1]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let list: Vec<Matrix<f64>> = (0..300).map(|_| random_matrix(&mut rng, 3)).collect();
        let scaled: Vec<Matrix<f64>> = list.iter().map(|m| m.scale(c)).collect();
        let a = qr_lyapunov_map(&list, 1, 50).unwrap();
        let b = qr_lyapunov_map(&scaled, 1, 50).unwrap();
        for i in 0..3 {
            prop_assert!((b.exponents[i] - a.exponents[i] - c.abs().ln()).abs() < 1e-9);
        }
        for (g, h) in a.gaps.iter().zip(&b.gaps) {
            prop_assert!((g - h).abs() < 1e-9);
        }
        prop_assert_eq!(simplicity_verdict(&a, 0.01).simple, simplicity_verdict(&b, 0.01).simple);
    }

    #[test]
    fn constant_spectrum_ignores_renorm_interval(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let g = CocycleGenerator::constant(&Matrix::from_diag(&[a, b]));
        let f = VectorField::lorenz();
        let x = attractor_point(0.0);
        let s1 = qr_lyapunov_flow(&g, &f, &x, 20.0, 0.5, 1.0, &cfg()).unwrap();
        let s2 = qr_lyapunov_flow(&g, &f, &x, 20.0, 0.25, 1.0, &cfg()).unwrap();
        for i in 0..2 {
            prop_assert!((s1.exponents[i] - s2.exponents[i]).abs() < 1e-10);
        }
    }
}
