use giicov::randsrc::{inv_normal_cdf, make_uniform_panel, norm_cdf, SeedSpec};

/// `erf` from the series `2/√π e^{-x²} Σ 2^k x^{2k+1} / (1·3·…·(2k+1))`,
/// whose terms are all positive.
fn erf_series(x: f64) -> f64 {
    let ax = x.abs();
    let mut term = ax;
    let mut sum = ax;
    let mut k = 0.0;
    while term > 1e-18 * sum {
        k += 1.0;
        term *= 2.0 * ax * ax / (2.0 * k + 1.0);
        sum += term;
    }
    let v = 2.0 / std::f64::consts::PI.sqrt() * (-ax * ax).exp() * sum;
    v.copysign(x)
}

fn cdf_oracle(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

fn quantile_by_bisection(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf_oracle(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn p_grid() -> Vec<f64> {
    let mut g = vec![1e-6, 1e-5, 1e-4, 1e-3, 0.01, 0.02425, 0.05];
    g.extend((1..20).map(|k| k as f64 * 0.05));
    g.extend([0.95, 0.97575, 0.99, 0.999, 1.0 - 1e-4, 1.0 - 1e-5, 1.0 - 1e-6]);
    g
}

#[test]
fn cdf_matches_series_oracle() {
    for k in -60..=60 {
        let x = k as f64 * 0.1;
        assert!((norm_cdf(x) - cdf_oracle(x)).abs() < 1e-13, "x={x}");
    }
}

#[test]
fn quantile_matches_bisection_oracle() {
    for p in p_grid() {
        let x = inv_normal_cdf(p).unwrap();
        let oracle = quantile_by_bisection(p);
        assert!((x - oracle).abs() < 1e-9 * (1.0 + oracle.abs()), "p={p}: {x} vs {oracle}");
    }
}

#[test]
fn quantile_round_trip() {
    for p in p_grid() {
        let back = norm_cdf(inv_normal_cdf(p).unwrap());
        assert!((back - p).abs() <= 1e-9, "p={p}");
    }
    assert!(inv_normal_cdf(0.0).is_err());
    assert!(inv_normal_cdf(1.0).is_err());
}

#[test]
fn uniform_draws_pass_kolmogorov_smirnov() {
    let n = 10_000;
    // asymptotic 1% critical value of the KS statistic
    let critical = 1.6276 / (n as f64).sqrt();
    let mut passed = 0;
    for trial in 0..100 {
        let panel = make_uniform_panel(SeedSpec::new(trial, 0), n, 1, 1).unwrap();
        let mut u = panel.as_slice().to_vec();
        u.sort_by(f64::total_cmp);
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - v))
            .fold(0.0, f64::max);
        passed += usize::from(d < critical);
    }
    assert!(passed >= 95, "{passed} of 100 trials passed");
}

#[test]
fn panels_are_identical_across_threads() {
    let reference = make_uniform_panel(SeedSpec::new(42, 3), 50, 6, 4).unwrap();
    let panels: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| s.spawn(|| make_uniform_panel(SeedSpec::new(42, 3), 50, 6, 4).unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for p in panels {
        assert_eq!(p.as_slice(), reference.as_slice());
    }
    let other = make_uniform_panel(SeedSpec::new(42, 4), 50, 6, 4).unwrap();
    assert_ne!(other.as_slice(), reference.as_slice());
    assert!(reference.as_slice().iter().all(|&u| u > 0.0 && u < 1.0));
}
