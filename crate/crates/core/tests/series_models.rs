use giicov::models::{Cell, Model, SimMode, SimPath};
use giicov::randsrc::{make_uniform_panel, SeedSpec};

/// Sample mean of a long exponential-AR path with a batch-means standard error.
fn expar_mean(mu: f64, phi: f64, steps: usize, seed: SeedSpec) -> (f64, f64) {
    let model = Model::from_name("exp-ar").unwrap();
    let u = make_uniform_panel(seed, 1, steps, 1).unwrap();
    let v = make_uniform_panel(seed.with_stream(1), 1, steps, 1).unwrap();
    let cell = Cell {
        i: 0,
        r: 0,
        u: u.path(0, 0),
        extra: v.path(0, 0),
        x: &[],
    };
    let mut path = SimPath::<f64>::new(steps);
    model.simulate_path(&[mu, phi], &SimMode::Standard, cell, &mut path).unwrap();
    let burn = 1000;
    let kept = &path.y[burn..];
    let batches = 50;
    let size = kept.len() / batches;
    let means: Vec<f64> = kept.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

#[test]
fn exp_ar_stationary_mean() {
    for (k, (mu, phi)) in [(1.0, 0.3), (2.0, 0.7)].into_iter().enumerate() {
        let (m, se) = expar_mean(mu, phi, 100_000, SeedSpec::new(5, k as u64));
        // y_t = φ y_{t-1} + μ 1[u_t < φ] v_t with v_t ~ Exp(1)
        let target = mu * phi / (1.0 - phi);
        assert!((m - target).abs() <= 3.0 * se, "(μ, φ)=({mu}, {phi}): {m} vs {target}, se {se}");
    }
}

#[test]
fn toy_moment_gradient_matches_closed_form() {
    let z = 1.5;
    for (k, ts) in [-0.8, 0.0, 0.9].into_iter().enumerate() {
        let (mean, se) = giicov::selftest::toy_gradient(ts, 0.4, 50_000, SeedSpec::new(31, k as u64)).unwrap();
        // M(θ, β) = z (1 - Φ(θ)) - z² β
        let exact = -z * (-0.5 * ts * ts).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((mean - exact).abs() <= 4.0 * se, "θ*={ts}: {mean} vs {exact} (se {se})");
    }
}
