use giicov::autodiff::{seed_parameter, Dual1, Dual2, Scalar};
use giicov::cov::{cov_transform, locate_segment, validate_grid};
use giicov::randsrc::{inv_normal_cdf, norm_cdf};
use proptest::prelude::*;

/// Interior cut points, sorted and at least `1e-4` apart, framed by 0 and 1.
fn grid() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..0.99, 0..5).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-4);
        let mut g = vec![0.0];
        g.extend(v);
        g.push(1.0);
        g
    })
}

fn shifted(g: &[f64], shifts: &[f64]) -> Vec<f64> {
    let k = g.len();
    let mut out = g.to_vec();
    for (c, s) in out[1..k - 1].iter_mut().zip(shifts) {
        *c = (*c + s).clamp(1e-3, 1.0 - 1e-3);
    }
    out[1..k - 1].sort_by(f64::total_cmp);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn transform_is_identity_at_the_anchor(g in grid(), u in 1e-9f64..1.0) {
        let r = cov_transform(u, &g, &g).unwrap();
        prop_assert_eq!(r.u_new, u);
        prop_assert_eq!(r.weight, 1.0);
        prop_assert_eq!(r.segment, locate_segment(u, &g).unwrap());
    }

    #[test]
    fn transform_keeps_segment_and_order(
        g in grid(),
        shifts in prop::collection::vec(-0.005f64..0.005, 5),
        a in 1e-9f64..1.0,
        b in 1e-9f64..1.0,
    ) {
        let t = shifted(&g, &shifts);
        prop_assume!(validate_grid(&t).is_ok());
        prop_assume!(t.windows(2).all(|w| w[1] - w[0] > 1e-6));
        let (lo, hi) = (a.min(b), a.max(b));
        let r1 = cov_transform(lo, &t, &g).unwrap();
        let r2 = cov_transform(hi, &t, &g).unwrap();
        for r in [&r1, &r2] {
            prop_assert!(r.u_new >= t[r.segment] - f64::EPSILON);
            prop_assert!(r.u_new <= t[r.segment + 1] + f64::EPSILON);
            prop_assert!(r.weight > 0.0);
        }
        if r1.segment == r2.segment && lo < hi {
            prop_assert!(r1.u_new <= r2.u_new);
        }
    }

    #[test]
    fn transformed_draw_derivative_matches_differences(g in grid(), u in 0.001f64..0.999, shift in -0.003f64..0.003) {
        prop_assume!(g.len() >= 3);
        // move the first interior cut point with a scalar parameter s
        let s0 = g[1] + shift;
        prop_assume!(s0 > 1e-3 && s0 < g[2] - 1e-3);
        let map = |s: f64| -> f64 {
            let mut t = g.clone();
            t[1] = s;
            cov_transform(u, &t, &g).unwrap().u_new
        };
        let s: Vec<Dual1> = seed_parameter(&[s0]).unwrap();
        let mut t: Vec<Dual1> = g.iter().map(|&c| Dual1::cst(c)).collect();
        t[1] = s[0];
        let ad = cov_transform(u, &t, &g).unwrap().u_new.grad[0];
        let h = 1e-7;
        let fd = (map(s0 + h) - map(s0 - h)) / (2.0 * h);
        prop_assert!((ad - fd).abs() <= 1e-6 * (1.0 + ad.abs()), "ad {} fd {}", ad, fd);
    }

    #[test]
    fn malformed_grids_are_rejected(v in prop::collection::vec(-0.5f64..1.5, 1..6)) {
        let ok = v.first() == Some(&0.0)
            && v.last() == Some(&1.0)
            && v.windows(2).all(|w| w[0] <= w[1]);
        prop_assert_eq!(validate_grid(&v).is_ok(), ok);
    }

    #[test]
    fn located_segment_brackets_the_draw(g in grid(), u in 1e-9f64..1.0) {
        let k = locate_segment(u, &g).unwrap();
        prop_assert!(k + 1 < g.len());
        prop_assert!(g[k] <= u && u <= g[k + 1]);
    }

    #[test]
    fn dual_chain_rule_matches_differences(x in 0.05f64..0.95, y in -2.0f64..2.0) {
        // f(x, y) = Φ^{-1}(x) · exp(y / 3) + Φ(x y) / (1 + x²)
        let f = |v: &[Dual2]| -> Dual2 {
            let a = v[0].inv_norm_cdf().unwrap() * (v[1] * (1.0 / 3.0)).exp();
            let b = (v[0] * v[1]).norm_cdf() * (v[0] * v[0] + 1.0).recip().unwrap();
            a + b
        };
        let g = |x: f64, y: f64| inv_normal_cdf(x).unwrap() * (y / 3.0).exp() + norm_cdf(x * y) / (1.0 + x * x);
        let d = f(&seed_parameter::<Dual2>(&[x, y]).unwrap());
        prop_assert!((d.value - g(x, y)).abs() < 1e-14);
        let h = 1e-6;
        let fx = (g(x + h, y) - g(x - h, y)) / (2.0 * h);
        let fy = (g(x, y + h) - g(x, y - h)) / (2.0 * h);
        prop_assert!((d.grad[0] - fx).abs() <= 1e-6 * (1.0 + fx.abs()));
        prop_assert!((d.grad[1] - fy).abs() <= 1e-6 * (1.0 + fy.abs()));
        let hxy = (f(&seed_parameter::<Dual2>(&[x, y + h]).unwrap()).grad[0]
            - f(&seed_parameter::<Dual2>(&[x, y - h]).unwrap()).grad[0])
            / (2.0 * h);
        prop_assert!((d.hess(0, 1) - hxy).abs() <= 1e-5 * (1.0 + hxy.abs()));
        prop_assert_eq!(d.hess(0, 1), d.hess(1, 0));
    }
}
