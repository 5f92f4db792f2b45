//! Built-in invariant checks, runnable from the command line.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{seed_parameter, Dual1, Dual2, Scalar};
use crate::cov::{cov_transform, CovFn};
use crate::error::Result;
use crate::models::{Model, SimDraws, SimMode};
use crate::randsrc::{norm_pdf, open_uniform, SeedSpec};
use crate::sim::{PathView, Simulator};

/// Outcome of one property check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: String,
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Sorted random grid `0 < c^1 < ... < c^J < 1` with `J` in `0..=4`.
fn random_grid<R: Rng>(rng: &mut R) -> Vec<f64> {
    let j = rng.random_range(0..=4);
    let mut g: Vec<f64> = (0..j).map(|_| 0.02 + 0.96 * open_uniform(rng)).collect();
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    g.insert(0, 0.0);
    g.push(1.0);
    g
}

/// The transform at `θ = θ*` must return `u` and weight 1 exactly.
pub fn check_cov_identity(cov: CovFn<f64>, cases: usize, seed: u64) -> Check {
    let mut rng = SeedSpec::new(seed, 0).rng();
    let mut failures = 0;
    let mut detail = String::new();
    for _ in 0..cases {
        let grid = random_grid(&mut rng);
        let u = open_uniform(&mut rng);
        let ok = match cov(u, &grid, &grid) {
            Ok(r) => r.u_new == u && r.weight == 1.0,
            Err(_) => false,
        };
        if !ok {
            failures += 1;
            if detail.is_empty() {
                detail = format!("first failure at u={u}, grid={grid:?}");
            }
        }
    }
    Check {
        name: "cov identity at the anchor".into(),
        tolerance: "exact".into(),
        cases,
        failures,
        detail,
    }
}

/// Transformed draws stay in their segment and preserve order within it.
pub fn check_cov_segments(cov: CovFn<f64>, cases: usize, seed: u64) -> Check {
    let mut rng = SeedSpec::new(seed, 1).rng();
    let mut failures = 0;
    let mut detail = String::new();
    for _ in 0..cases {
        let star = random_grid(&mut rng);
        let mut theta: Vec<f64> = star.clone();
        let k = theta.len();
        for c in theta[1..k - 1].iter_mut() {
            *c = (*c + 0.01 * (open_uniform(&mut rng) - 0.5)).clamp(1e-3, 1.0 - 1e-3);
        }
        theta[1..k - 1].sort_by(f64::total_cmp);
        let (a, b) = (open_uniform(&mut rng), open_uniform(&mut rng));
        let (u1, u2) = (a.min(b), a.max(b));
        let ok = match (cov(u1, &theta, &star), cov(u2, &theta, &star)) {
            (Ok(r1), Ok(r2)) => {
                let inside = |r: &crate::cov::CovResult<f64>| {
                    // one ulp of slack for the rounding of the affine map
                    let lo = theta[r.segment];
                    let hi = theta[r.segment + 1];
                    r.u_new > lo - f64::EPSILON && r.u_new <= hi + f64::EPSILON && r.weight > 0.0
                };
                inside(&r1) && inside(&r2) && (r1.segment != r2.segment || u1 == u2 || r1.u_new < r2.u_new)
            }
            _ => false,
        };
        if !ok {
            failures += 1;
            if detail.is_empty() {
                detail = format!("first failure at u=({u1}, {u2}), grid {star:?} -> {theta:?}");
            }
        }
    }
    Check {
        name: "cov segment preservation and monotonicity".into(),
        tolerance: "exact".into(),
        cases,
        failures,
        detail,
    }
}

/// Dual-number derivatives of the elementary functions against central
/// differences with step 1e-6.
pub fn check_ad_gradients(cases: usize, seed: u64) -> Check {
    type F = fn(Dual2) -> Result<Dual2>;
    type G = fn(f64) -> Result<f64>;
    let funcs: [(&str, F, G, (f64, f64)); 6] = [
        ("exp", |x| Ok(x.exp()), |x| Ok(x.exp()), (-3.0, 3.0)),
        ("ln", |x| x.ln(), |x| Ok(x.ln()), (0.1, 5.0)),
        ("norm_cdf", |x| Ok(x.norm_cdf()), |x| Ok(crate::randsrc::norm_cdf(x)), (-4.0, 4.0)),
        ("norm_pdf", |x| Ok(x.norm_pdf()), |x| Ok(norm_pdf(x)), (-4.0, 4.0)),
        ("inv_norm_cdf", |x| x.inv_norm_cdf(), crate::randsrc::inv_normal_cdf, (0.02, 0.98)),
        ("recip", |x| x.recip(), |x| Ok(1.0 / x), (0.2, 4.0)),
    ];
    let mut rng = SeedSpec::new(seed, 2).rng();
    let mut failures = 0;
    let mut detail = String::new();
    let mut total = 0;
    for (name, f, g, (lo, hi)) in funcs {
        for _ in 0..cases {
            total += 1;
            let x = lo + (hi - lo) * open_uniform(&mut rng);
            let h = 1e-6;
            let ok = (|| -> Result<bool> {
                let d = f(seed_parameter::<Dual2>(&[x])?[0])?;
                let fd = (g(x + h)? - g(x - h)?) / (2.0 * h);
                let gd = (f(seed_parameter::<Dual2>(&[x + h])?[0])?.grad[0] - f(seed_parameter::<Dual2>(&[x - h])?[0])?.grad[0]) / (2.0 * h);
                let first = (d.grad[0] - fd).abs() <= 1e-6 * fd.abs().max(1.0);
                let second = (d.hess(0, 0) - gd).abs() <= 1e-4 * gd.abs().max(1.0);
                Ok(first && second)
            })()
            .unwrap_or(false);
            if !ok {
                failures += 1;
                if detail.is_empty() {
                    detail = format!("first failure: {name} at {x}");
                }
            }
        }
    }
    Check {
        name: "dual derivatives of elementary functions".into(),
        tolerance: "relative 1e-6 (first), 1e-4 (second)".into(),
        cases: total,
        failures,
        detail,
    }
}

/// Mean pathwise gradient of the toy moment `z (1[Φ(θ) < u] - z β) w` over
/// `draws` draws, with its standard error.
pub fn toy_gradient(theta_star: f64, beta: f64, draws: usize, seed: SeedSpec) -> Result<(f64, f64)> {
    let model = Model::from_name("toy-threshold")?;
    let z = match &model {
        Model::Toy(t) => t.z,
        _ => unreachable!("toy-threshold is the toy model"),
    };
    let data = model.simulate_observed(&[theta_star], seed, 1, 1)?;
    let sim_draws = SimDraws::new(&model, seed, 1, 1, draws, false)?;
    let sim = Simulator::new(&model, &data, &sim_draws)?;
    let th: Vec<Dual1> = seed_parameter(&[theta_star])?;
    let (sum, sq) = sim.fold(
        &th,
        &SimMode::cov(&[theta_star]),
        || (0.0, 0.0),
        |acc: &mut (f64, f64), p: PathView<'_, Dual1>| {
            let m = (p.y[0] - z * beta) * p.w[0] * z;
            acc.0 += m.grad[0];
            acc.1 += m.grad[0] * m.grad[0];
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    )?;
    let k = draws as f64;
    let mean = sum / k;
    let var = (sq / k - mean * mean).max(0.0) * k / (k - 1.0);
    Ok((mean, (var / k).sqrt()))
}

/// The toy model's pathwise gradient is within three standard errors of
/// `-z φ(θ*)` at five anchors.
pub fn check_unbiasedness(draws: usize, seed: u64) -> Check {
    let z = 1.5;
    let anchors = [-1.0, -0.3, 0.0, 0.4, 1.2];
    let mut failures = 0;
    let mut detail = Vec::new();
    for (k, &ts) in anchors.iter().enumerate() {
        match toy_gradient(ts, 0.2, draws, SeedSpec::new(seed, k as u64)) {
            Ok((mean, se)) => {
                let exact = -z * norm_pdf(ts);
                let zscore = (mean - exact) / se;
                detail.push(format!("θ*={ts}: z={zscore:+.2}"));
                if zscore.abs() > 3.0 {
                    failures += 1;
                }
            }
            Err(e) => {
                failures += 1;
                detail.push(format!("θ*={ts}: {e}"));
            }
        }
    }
    Check {
        name: "unbiased pathwise gradient (toy model)".into(),
        tolerance: "3 standard errors".into(),
        cases: anchors.len(),
        failures,
        detail: detail.join(", "),
    }
}

/// Runs every suite with the given transform.
pub fn run_selftest_with(cov: CovFn<f64>) -> Vec<Check> {
    vec![
        check_cov_identity(cov, 10_000, 1),
        check_cov_segments(cov, 10_000, 1),
        check_ad_gradients(200, 1),
        check_unbiasedness(100_000, 2),
    ]
}

/// Runs every suite with the library transform.
pub fn run_selftest() -> Vec<Check> {
    run_selftest_with(cov_transform::<f64>)
}
