//! Projected Newton iteration with a backtracking line search.
//!
//! The evaluator is called once per iterate and may re-anchor whatever it
//! likes at that point. The merit function scores a trial point against the
//! current iterate, which lets the change-of-variables criterion keep its
//! anchor fixed inside the line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Criterion value with first and second derivatives.
#[derive(Clone, Debug)]
pub struct Eval {
    pub q: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Why an iteration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Gradient,
    StepSize,
    Stagnation,
    LineSearch,
    MaxIter,
    EvalFailure,
    Simplex,
}

/// One recorded iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub q: f64,
    pub grad_norm: f64,
}

/// Stopping and safeguarding constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSettings {
    /// Gradient tolerance; `None` means `1e-8 · d`.
    pub tol_g: Option<f64>,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Iterations without a new best value before stopping.
    pub patience: usize,
    /// Relative step below which the iteration stops.
    pub step_tol: f64,
    /// Newton step at the returned iterate, in standard errors, below which
    /// an iteration that stopped without reaching `tol_g` counts as converged.
    pub stationarity_se: f64,
    pub armijo: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tol_g: None,
            max_iter: 200,
            max_halvings: 30,
            patience: 10,
            step_tol: 1e-10,
            stationarity_se: 0.25,
            armijo: 1e-4,
        }
    }
}

impl NewtonSettings {
    pub fn tol_g(&self, dim: usize) -> f64 {
        self.tol_g.unwrap_or(1e-8 * dim as f64)
    }
}

/// Result of an iterative minimisation.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub theta: Vec<f64>,
    pub q: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub trace: Vec<TraceStep>,
    /// Newton step `H^{-1} g` at the returned iterate, when one exists.
    pub step: Option<Vec<f64>>,
}

/// Zeroes gradient components that point out of the box at active bounds.
pub fn projected_gradient(theta: &[f64], grad: &DVector<f64>, bounds: &[(f64, f64)]) -> DVector<f64> {
    let mut g = grad.clone();
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if (theta[k] <= lo && g[k] > 0.0) || (theta[k] >= hi && g[k] < 0.0) {
            g[k] = 0.0;
        }
    }
    g
}

/// Solves `(H + τ I) p = g`, raising `τ` from `1e-8 · tr(H) / d` until the
/// shifted matrix is positive definite.
pub fn levenberg_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let d = grad.len();
    let sym = (hess + hess.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Some(c.solve(grad));
    }
    let tr = sym.trace().abs();
    let mut tau = if tr > 0.0 { 1e-8 * tr / d as f64 } else { 1e-8 };
    for _ in 0..40 {
        let shifted = &sym + DMatrix::identity(d, d) * tau;
        if let Some(c) = shifted.cholesky() {
            return Some(c.solve(grad));
        }
        tau *= 10.0;
    }
    None
}

fn rel_step(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / (1.0 + y.abs())))
}

/// Newton decrement `g' H^{-1} g` with the projected gradient.
fn decrement(theta: &[f64], e: &Eval, bounds: &[(f64, f64)]) -> f64 {
    let g = projected_gradient(theta, &e.grad, bounds);
    levenberg_step(&e.hess, &g).map_or(f64::INFINITY, |p| g.dot(&p))
}

/// Minimises with Newton steps `θ - t H^{-1} g`, projecting onto the box.
///
/// Returns the iterate with the smallest Newton decrement `g' H^{-1} g`, the
/// one closest to satisfying the first-order condition.
pub fn newton_solve<E, M, P>(
    mut eval: E,
    mut merit: M,
    project: P,
    bounds: &[(f64, f64)],
    start: &[f64],
    settings: &NewtonSettings,
) -> Result<Outcome>
where
    E: FnMut(&[f64]) -> Result<Eval>,
    M: FnMut(&[f64], &[f64]) -> Result<f64>,
    P: Fn(&mut [f64]),
{
    let dim = start.len();
    let tol_g = settings.tol_g(dim);
    let mut theta = start.to_vec();
    project(&mut theta);
    let mut cur = eval(&theta)?;
    let mut trace = Vec::new();
    let mut best_theta = theta.clone();
    let mut best = cur.clone();
    let mut best_dec = decrement(&theta, &cur, bounds);
    let mut since_best = 0;
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;

    for it in 0..settings.max_iter {
        iterations = it;
        let g = projected_gradient(&theta, &cur.grad, bounds);
        let gn = g.norm();
        trace.push(TraceStep {
            iter: it,
            theta: theta.clone(),
            q: cur.q,
            grad_norm: gn,
        });
        if gn <= tol_g {
            stop = StopReason::Gradient;
            break;
        }
        let Some(p) = levenberg_step(&cur.hess, &g) else {
            stop = StopReason::LineSearch;
            break;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let mut cand: Vec<f64> = theta.iter().zip(p.iter()).map(|(x, s)| x - t * s).collect();
            project(&mut cand);
            let moved: f64 = cand.iter().zip(&theta).zip(g.iter()).map(|((c, x), gk)| (x - c) * gk).sum();
            if let Ok(m) = merit(&cand, &theta) {
                if m.is_finite() && m <= cur.q - settings.armijo * moved.max(0.0) {
                    accepted = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(cand) = accepted else {
            stop = StopReason::LineSearch;
            break;
        };
        let step = rel_step(&cand, &theta);
        theta = cand;
        iterations = it + 1;
        cur = match eval(&theta) {
            Ok(e) => e,
            Err(_) => {
                stop = StopReason::EvalFailure;
                break;
            }
        };
        let dec = decrement(&theta, &cur, bounds);
        if dec < best_dec {
            best = cur.clone();
            best_theta = theta.clone();
            best_dec = dec;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if step <= settings.step_tol {
            stop = StopReason::StepSize;
            break;
        }
        if since_best >= settings.patience {
            stop = StopReason::Stagnation;
            break;
        }
    }
    if stop == StopReason::MaxIter || stop == StopReason::StepSize {
        // make sure the final iterate is in the trace
        let g = projected_gradient(&theta, &cur.grad, bounds);
        if trace.last().map(|s| s.theta != theta).unwrap_or(true) {
            trace.push(TraceStep {
                iter: iterations,
                theta: theta.clone(),
                q: cur.q,
                grad_norm: g.norm(),
            });
        }
    }
    let g_best = projected_gradient(&best_theta, &best.grad, bounds);
    let grad_norm = g_best.norm();
    let converged = grad_norm <= tol_g;
    let step = levenberg_step(&best.hess, &g_best).map(|p| p.iter().copied().collect());
    Ok(Outcome {
        theta: best_theta,
        q: best.q,
        grad_norm,
        iterations,
        converged,
        stop,
        trace,
        step,
    })
}

/// Length of `step` in the metric of the covariance `cov`, i.e. in standard
/// errors along the step direction.
pub fn step_in_se(step: &[f64], cov: &DMatrix<f64>) -> Option<f64> {
    let p = DVector::from_column_slice(step);
    let c = cov.clone().cholesky()?;
    Some(p.dot(&c.solve(&p)).max(0.0).sqrt())
}
