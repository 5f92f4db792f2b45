//! Acceptance report: one PASS/FAIL line per criterion at the pinned
//! tolerances.

use giicov::autodiff::{seed_parameter, Dual1};
use giicov::cov::cov_transform;
use giicov::estimate::{
    newton_solve, CriterionKind, EstimOptions, Eval, HessianKind, Method, NewtonSettings, Problem, WeightScheme,
};
use giicov::mc::{self, McDesign, McRun, McSummary, TableFormat};
use giicov::models::{Cell, Model, SimMode, SimPath};
use giicov::randsrc::{make_uniform_panel, open_uniform, SeedSpec};
use giicov::selftest;
use nalgebra::{DMatrix, DVector};
use replication::{discrete_event_queue, expar_path_mean, within, Report};

fn method(m: Method) -> EstimOptions {
    EstimOptions {
        method: m,
        reps: 10,
        ..EstimOptions::default()
    }
}

fn design(model: &str, replications: usize, seed: u64, methods: Vec<EstimOptions>) -> McDesign {
    McDesign {
        model: model.into(),
        theta0: None,
        n: 200,
        periods: 5,
        replications,
        seed,
        threads: None,
        methods,
    }
}

fn cell(s: &McSummary, m: &str, p: &str) -> (f64, f64, f64, f64) {
    let r = s.row(m, p).unwrap_or_else(|| panic!("no row for {m}/{p}"));
    (r.mbias, r.ab, r.std, r.cv95)
}

fn nonconverged(s: &McSummary, m: &str) -> usize {
    s.rows.iter().find(|r| r.method == m).map_or(0, |r| r.nonconverged)
}

fn criterion_1_and_3(report: &mut Report, run: &McRun) {
    let s = &run.summary;
    let (mb_g, _, sd_g, cv_g) = cell(s, "giicov", "gamma");
    let (mb_r, _, sd_r, cv_r) = cell(s, "giicov", "rho");
    let pass = within(mb_g, 0.0052 - 0.010, 0.0052 + 0.010)
        && within(mb_r, -0.0043 - 0.015, -0.0043 + 0.015)
        && within(sd_g, 0.020, 0.040)
        && within(sd_r, 0.030, 0.055)
        && within(cv_g, 0.91, 0.98)
        && within(cv_r, 0.91, 0.98);
    report.record(
        1,
        "Model 1 GII-COV, n=200, R=10, 500 replications",
        pass,
        format!(
            "MBIAS(γ)={mb_g:.4} [-0.0048, 0.0152], MBIAS(ρ)={mb_r:.4} [-0.0193, 0.0107], \
             STD(γ)={sd_g:.4} [0.020, 0.040], STD(ρ)={sd_r:.4} [0.030, 0.055], \
             CV95={cv_g:.3}/{cv_r:.3} [0.91, 0.98], non-converged {}",
            nonconverged(s, "giicov")
        ),
    );

    let (mb_k, _, sd_k, _) = cell(s, "gii1", "gamma");
    let ratios = mc::compare_ratio(&s.method("giicov"), &s.method("gii1")).expect("matching designs");
    let std_ratio = ratios.iter().find(|r| r.param == "gamma").and_then(|r| r.std_ratio);
    let pass = std_ratio.is_some_and(|r| within(r, 2.0, 5.0)) && mb_k.abs() > mb_g.abs();
    report.record(
        3,
        "GII-1 relative to GII-COV, Model 1, γ",
        pass,
        format!(
            "STD ratio={} [2, 5] (STD {sd_k:.4} vs {sd_g:.4}), |MBIAS| {:.4} vs {:.4} (must exceed)",
            std_ratio.map_or("n/a".into(), |r| format!("{r:.2}")),
            mb_k.abs(),
            mb_g.abs()
        ),
    );
}

fn criterion_2_and_12(report: &mut Report, run: &McRun) {
    let s = &run.summary;
    let (mb, _, sd, cv) = cell(s, "giicov", "alpha");
    let pass = within(mb, 0.0039 - 0.02, 0.0039 + 0.02) && within(sd, 0.035, 0.060) && within(cv, 0.90, 0.98);
    report.record(
        2,
        "Model 2 GII-COV, n=200, α",
        pass,
        format!(
            "MBIAS(α)={mb:.4} [-0.0161, 0.0239], STD(α)={sd:.4} [0.035, 0.060], CV95={cv:.3} [0.90, 0.98], \
             300 replications, non-converged {}",
            nonconverged(s, "giicov")
        ),
    );

    let mut wins = 0;
    let mut cells = Vec::new();
    for p in ["gamma", "alpha", "rho"] {
        let ab_ad = cell(s, "giicov", p).1;
        let ab_fd = cell(s, "giicov-fd", p).1;
        wins += usize::from(ab_ad <= ab_fd);
        cells.push(format!("{p} {ab_ad:.4} vs {ab_fd:.4}"));
    }
    report.record(
        12,
        "pathwise against finite-difference derivatives, Model 2, AB",
        wins >= 2,
        format!(
            "AD AB <= FD AB for {wins} of 3 (need 2): {}; non-converged AD {} / FD {}",
            cells.join(", "),
            nonconverged(s, "giicov"),
            nonconverged(s, "giicov-fd")
        ),
    );
}

fn criterion_4(report: &mut Report) {
    let mut d = design("model1", 20, 404, vec![method(Method::Gii1), method(Method::Giicov), method(Method::Gii2)]);
    d.threads = Some(1);
    let run = mc::run_design(&d).expect("timing design runs");
    let t = |m: &str| run.summary.mean_seconds(m).unwrap();
    let (k1, cov, k2) = (t("gii1"), t("giicov"), t("gii2"));
    report.record(
        4,
        "timing order GII-1 < GII-COV < GII-2, Model 1, n=200",
        k1 < cov && cov < k2,
        format!("mean seconds {k1:.4} < {cov:.4} < {k2:.4} over 20 replications"),
    );
}

fn criterion_5(report: &mut Report) {
    let c = selftest::check_unbiasedness(100_000, 2);
    report.record(
        5,
        "unbiased pathwise gradient on the scalar toy, 1e5 draws, 5 anchors",
        c.passed(),
        format!("within 3 SE of -z φ(θ*): {}", c.detail),
    );
}

/// `(n, observed periods)` used for each model in the gradient check.
fn shape(name: &str) -> (usize, usize) {
    match name {
        "exp-ar" => (1, 400),
        "mm1-queue" => (1, 300),
        "toy-threshold" => (300, 1),
        "model3" => (100, 3),
        _ => (100, 5),
    }
}

fn random_anchor<R: rand::Rng>(model: &Model, rng: &mut R) -> Vec<f64> {
    let info = model.info();
    loop {
        let t: Vec<f64> = info
            .theta0
            .iter()
            .zip(&info.bounds)
            .map(|(&c, &(lo, hi))| (c + 0.15 * (1.0 + c.abs()) * (2.0 * open_uniform(rng) - 1.0)).clamp(lo, hi))
            .collect();
        if model.check_theta(&t).is_ok() {
            return t;
        }
    }
}

fn criterion_6(report: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut worst_component: f64 = 0.0;
    let mut failures = Vec::new();
    let mut rng = SeedSpec::new(606, 0).rng();
    for &name in giicov::models::MODEL_NAMES {
        let model = Model::from_name(name).unwrap();
        let (n, t) = shape(name);
        let seed = SeedSpec::new(606, 1);
        let data = model.simulate_observed(&model.info().theta0.clone(), seed, n, t).unwrap();
        let problem = Problem::new(&model, &data, CriterionKind::Lm, WeightScheme::Efficient, 1e-10).unwrap();
        let draws = problem.draws(seed, 5, false).unwrap();
        let sim = problem.simulator(&draws).unwrap();
        let mut model_worst: f64 = 0.0;
        for _ in 0..20 {
            let star = random_anchor(&model, &mut rng);
            let mode = SimMode::cov(&star);
            let ad = problem.eval_at(&sim, &star, &star, HessianKind::GaussNewton).unwrap().grad;
            let fd: Vec<f64> = (0..star.len())
                .map(|k| {
                    let h = 1e-6 * (1.0 + star[k].abs());
                    let (mut up, mut dn) = (star.clone(), star.clone());
                    up[k] += h;
                    dn[k] -= h;
                    (problem.criterion_value(&sim, &up, &mode).unwrap() - problem.criterion_value(&sim, &dn, &mode).unwrap())
                        / (2.0 * h)
                })
                .collect();
            // error relative to the scale of the gradient vector (sup norm)
            let scale = ad.iter().chain(&fd).fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
            let gap = ad.iter().zip(&fd).fold(0.0_f64, |m, (a, f)| m.max((a - f).abs()));
            model_worst = model_worst.max(gap / scale);
            for (a, f) in ad.iter().zip(&fd) {
                worst_component = worst_component.max((a - f).abs() / a.abs().max(f.abs()).max(1e-300));
            }
        }
        if model_worst > 1e-6 {
            failures.push(format!("{name} {model_worst:.1e}"));
        }
        worst = worst.max(model_worst);
    }
    report.record(
        6,
        "AD gradient of Q_LM against central differences, every model, 20 anchors each",
        failures.is_empty(),
        format!(
            "worst ‖g_AD - g_FD‖∞ / ‖g‖∞ = {worst:.2e} (limit 1e-6); worst single-component relative error {worst_component:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; over the limit: {}", failures.join(", ")) }
        ),
    );
}

fn criterion_7(report: &mut Report) {
    let id = selftest::check_cov_identity(cov_transform::<f64>, 10_000, 7);
    let seg = selftest::check_cov_segments(cov_transform::<f64>, 10_000, 7);
    report.record(
        7,
        "change-of-variables identity, segment and monotonicity suite",
        id.passed() && seg.passed(),
        format!(
            "identity {} failures in {}, segments/monotonicity {} failures in {}",
            id.failures, id.cases, seg.failures, seg.cases
        ),
    );
}

fn gauss_newton(r: &[Dual1], omega: &DMatrix<f64>, d: usize) -> Eval {
    let rv = DVector::from_iterator(r.len(), r.iter().map(|x| x.value));
    let jac = DMatrix::from_fn(r.len(), d, |i, k| r[i].grad[k]);
    let wr = omega * &rv;
    Eval {
        q: rv.dot(&wr),
        grad: jac.transpose() * &wr * 2.0,
        hess: jac.transpose() * omega * &jac * 2.0,
    }
}

fn criterion_8(report: &mut Report) {
    let model = Model::from_name("linear-gaussian").unwrap();
    let info = model.info().clone();
    let seed = SeedSpec::new(808, 0);
    let data = model.simulate_observed(&info.theta0, seed, 200, 5).unwrap();
    let problem = Problem::new(&model, &data, CriterionKind::Lm, WeightScheme::Efficient, 1e-10).unwrap();
    let draws = problem.draws(seed, 10, false).unwrap();
    let sim = problem.simulator(&draws).unwrap();
    let settings = NewtonSettings::default();
    let start = [0.2, 0.7];
    let project = |t: &mut [f64]| model.project(t);

    let cov = newton_solve(
        |t| problem.eval(&sim, t, HessianKind::GaussNewton),
        |c, a| problem.criterion_value(&sim, c, &SimMode::cov(a)),
        project,
        &info.bounds,
        &start,
        &settings,
    )
    .unwrap();
    let standard = newton_solve(
        |t| {
            let th: Vec<Dual1> = seed_parameter(t)?;
            let r = problem.discrepancy(&sim, &th, &SimMode::Standard)?;
            Ok(gauss_newton(&r, &problem.omega, t.len()))
        },
        |c, _| problem.criterion_value(&sim, c, &SimMode::Standard),
        project,
        &info.bounds,
        &start,
        &settings,
    )
    .unwrap();
    let gap = cov.theta.iter().zip(&standard.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    report.record(
        8,
        "no-threshold linear Gaussian model: GII-COV equals standard indirect inference",
        gap <= 1e-10,
        format!("max |θ_cov - θ_std| = {gap:.2e} (limit 1e-10), θ = {:?}", cov.theta),
    );
}

fn criterion_9(report: &mut Report) {
    let mut ok = true;
    let mut cells = Vec::new();
    for (k, (mu, phi)) in [(1.0, 0.3), (2.0, 0.7)].into_iter().enumerate() {
        let (m, se) = expar_path_mean(mu, phi, 100_000, SeedSpec::new(909, k as u64)).unwrap();
        let target = mu * phi / (1.0 - phi);
        let z = (m - target) / se;
        ok &= z.abs() <= 3.0;
        cells.push(format!("(μ={mu}, φ={phi}) mean {m:.4} vs {target:.4}, z={z:+.2}"));
    }
    report.record(9, "exponential AR stationary mean over 1e5 steps", ok, cells.join("; "));
}

fn criterion_10(report: &mut Report) {
    let model = Model::from_name("mm1-queue").unwrap();
    let mut rng = SeedSpec::new(1010, 0).rng();
    let mut mismatches = 0;
    let mut customers_total = 0;
    for case in 0..100u64 {
        let customers = 1 + (open_uniform(&mut rng) * 50.0) as usize;
        let ms = 0.3 + 1.2 * open_uniform(&mut rng);
        let ma = ms * (1.1 + 2.0 * open_uniform(&mut rng));
        let theta = [ms, ma];
        let seed = SeedSpec::new(1010, case + 1);
        let u = make_uniform_panel(seed, 1, customers, 1).unwrap();
        let e = make_uniform_panel(seed.with_stream(1), 1, customers, 1).unwrap();
        let cell = Cell {
            i: 0,
            r: 0,
            u: u.path(0, 0),
            extra: e.path(0, 0),
            x: &[],
        };
        let th: Vec<Dual1> = seed_parameter(&theta).unwrap();
        let mut path = SimPath::<Dual1>::new(customers);
        model.simulate_path(&th, &SimMode::cov(&theta), cell, &mut path).unwrap();
        let oracle = discrete_event_queue(u.path(0, 0), e.path(0, 0), ms, ma);
        customers_total += customers;
        mismatches += (0..customers).filter(|&j| path.y[j].value.to_bits() != oracle[j].to_bits()).count();
    }
    report.record(
        10,
        "queue under the change of variables at θ* against a discrete-event simulator",
        mismatches == 0,
        format!("{mismatches} bit mismatches over 100 instances, {customers_total} customers"),
    );
}

fn criterion_11(report: &mut Report) {
    let mut d = design("model1", 16, 1111, vec![method(Method::Giicov), method(Method::Gii1)]);
    d.n = 100;
    let tables: Vec<(McSummary, String)> = [1, 4, 8]
        .into_iter()
        .map(|k| {
            d.threads = Some(k);
            let run = mc::run_design(&d).unwrap();
            let csv = mc::render_summary(std::slice::from_ref(&run.summary), TableFormat::Csv).unwrap();
            (McSummary { timing: Vec::new(), ..run.summary }, csv)
        })
        .collect();
    let same = tables.windows(2).all(|w| w[0] == w[1]);
    report.record(
        11,
        "Monte Carlo summaries identical at 1, 4 and 8 threads",
        same,
        format!("{} summary rows compared bit for bit", tables[0].0.rows.len()),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report::default();

    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report);
    criterion_10(&mut report);
    criterion_11(&mut report);

    let model1 = mc::run_design(&design("model1", 500, 20240601, vec![method(Method::Giicov), method(Method::Gii1)])).unwrap();
    criterion_1_and_3(&mut report, &model1);

    let model2 = mc::run_design(&design("model2", 300, 20240602, vec![method(Method::Giicov), method(Method::GiicovFd)])).unwrap();
    criterion_2_and_12(&mut report, &model2);

    criterion_4(&mut report);

    let failed = report.failed();
    assert!(failed.is_empty(), "criteria not met: {failed:?}");
}
