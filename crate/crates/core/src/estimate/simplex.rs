//! Derivative-free and quasi-Newton minimisers for smooth or rough criteria.

use nalgebra::{DMatrix, DVector};

use super::newton::{Outcome, StopReason, TraceStep};

/// Nelder–Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.
///
/// Stops when the largest vertex distance from the best vertex falls below
/// `diameter_tol` or after `max_evals` evaluations. Failed evaluations count
/// as `+∞`.
pub fn nelder_mead<F>(mut f: F, start: &[f64], scale: &[f64], diameter_tol: f64, max_evals: usize) -> Outcome
where
    F: FnMut(&[f64]) -> f64,
{
    let d = start.len();
    let mut evals = 0;
    let mut call = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = call(start, &mut evals);
    simplex.push((start.to_vec(), v0));
    for k in 0..d {
        let mut x = start.to_vec();
        x[k] += scale[k];
        let v = call(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut trace = Vec::new();
    let mut iter = 0;
    let stop;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0f64, f64::max);
        trace.push(TraceStep {
            iter,
            theta: simplex[0].0.clone(),
            q: simplex[0].1,
            grad_norm: f64::NAN,
        });
        if diameter <= diameter_tol {
            stop = StopReason::Simplex;
            break;
        }
        if evals >= max_evals {
            stop = StopReason::MaxIter;
            break;
        }
        iter += 1;
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64).collect();
        let worst = simplex[d].clone();
        let along = |c: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + c * (worst.0[k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = call(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = call(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(-0.5);
            let v = call(&x, &mut evals);
            (x, v)
        } else {
            let x = along(0.5);
            let v = call(&x, &mut evals);
            (x, v)
        };
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = v.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
            let fx = call(&x, &mut evals);
            *v = (x, fx);
        }
    }
    let (theta, q) = simplex[0].clone();
    Outcome {
        theta,
        q,
        grad_norm: f64::NAN,
        iterations: evals,
        converged: stop == StopReason::Simplex,
        stop,
        trace,
        step: None,
    }
}

/// Central-difference gradient with step `h_k = rel · (1 + |x_k|)`.
pub fn fd_gradient<F>(f: &mut F, x: &[f64], rel: f64) -> Option<DVector<f64>>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let mut g = DVector::zeros(x.len());
    let mut y = x.to_vec();
    for k in 0..x.len() {
        let h = rel * (1.0 + x[k].abs());
        y[k] = x[k] + h;
        let up = f(&y)?;
        y[k] = x[k] - h;
        let dn = f(&y)?;
        y[k] = x[k];
        g[k] = (up - dn) / (2.0 * h);
    }
    Some(g)
}

/// Settings for [`bfgs`].
#[derive(Clone, Debug)]
pub struct BfgsSettings {
    pub tol_g: f64,
    pub max_iter: usize,
    pub fd_rel: f64,
    pub max_halvings: usize,
}

/// BFGS with central-difference gradients, box projection and Armijo
/// backtracking. `f` returns `None` outside its domain.
pub fn bfgs<F, P>(mut f: F, project: P, bounds: &[(f64, f64)], start: &[f64], s: &BfgsSettings) -> Outcome
where
    F: FnMut(&[f64]) -> Option<f64>,
    P: Fn(&mut [f64]),
{
    let d = start.len();
    let mut x = start.to_vec();
    project(&mut x);
    let mut trace = Vec::new();
    let Some(mut fx) = f(&x) else {
        return Outcome {
            theta: x,
            q: f64::NAN,
            grad_norm: f64::NAN,
            iterations: 0,
            converged: false,
            stop: StopReason::EvalFailure,
            trace,
            step: None,
        };
    };
    let grad_at = |f: &mut F, x: &[f64]| -> Option<DVector<f64>> {
        // one-sided near a bound so that both points stay admissible
        let mut g = DVector::zeros(x.len());
        let mut y = x.to_vec();
        for k in 0..x.len() {
            let h = s.fd_rel * (1.0 + x[k].abs());
            let (lo, hi) = bounds[k];
            let (a, b) = (x[k] - h >= lo, x[k] + h <= hi);
            let (xm, xp) = match (a, b) {
                (true, true) => (x[k] - h, x[k] + h),
                (false, true) => (x[k], x[k] + h),
                (true, false) => (x[k] - h, x[k]),
                (false, false) => return None,
            };
            y[k] = xp;
            let up = f(&y)?;
            y[k] = xm;
            let dn = f(&y)?;
            y[k] = x[k];
            g[k] = (up - dn) / (xp - xm);
        }
        Some(g)
    };
    let Some(mut g) = grad_at(&mut f, &x) else {
        return Outcome {
            theta: x,
            q: fx,
            grad_norm: f64::NAN,
            iterations: 0,
            converged: false,
            stop: StopReason::EvalFailure,
            trace,
            step: None,
        };
    };
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;
    let mut gp = super::newton::projected_gradient(&x, &g, bounds);
    for it in 0..s.max_iter {
        iterations = it;
        trace.push(TraceStep {
            iter: it,
            theta: x.clone(),
            q: fx,
            grad_norm: gp.norm(),
        });
        if gp.norm() <= s.tol_g {
            stop = StopReason::Gradient;
            break;
        }
        let mut p = -(&hinv * &gp);
        if p.dot(&gp) >= 0.0 {
            hinv = DMatrix::identity(d, d);
            p = -gp.clone();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=s.max_halvings {
            let mut cand: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + t * b).collect();
            project(&mut cand);
            let moved: f64 = cand.iter().zip(&x).zip(gp.iter()).map(|((c, a), gk)| (c - a) * gk).sum();
            if let Some(fc) = f(&cand) {
                if fc <= fx + 1e-4 * moved.min(0.0) && fc.is_finite() {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            stop = StopReason::LineSearch;
            break;
        };
        let Some(gc) = grad_at(&mut f, &cand) else {
            stop = StopReason::EvalFailure;
            break;
        };
        let sv = DVector::from_iterator(d, cand.iter().zip(&x).map(|(a, b)| a - b));
        let yv = &gc - &g;
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - &sv * yv.transpose() * rho;
            let right = &i - &yv * sv.transpose() * rho;
            hinv = &left * &hinv * &right + &sv * sv.transpose() * rho;
        }
        let step = cand.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / (1.0 + b.abs())));
        x = cand;
        fx = fc;
        g = gc;
        gp = super::newton::projected_gradient(&x, &g, bounds);
        iterations = it + 1;
        if step <= 1e-12 {
            stop = StopReason::StepSize;
            break;
        }
    }
    let grad_norm = gp.norm();
    Outcome {
        theta: x,
        q: fx,
        grad_norm,
        iterations,
        converged: grad_norm <= s.tol_g,
        stop,
        trace,
        step: None,
    }
}
