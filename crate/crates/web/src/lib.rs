//! Browser bindings: the change-of-variables map, a one-parameter criterion
//! profile and a Newton estimation trace.

use giicov::cov::cov_transform;
use giicov::estimate::{estimate, CriterionKind, EstimOptions, Problem, TraceStep, WeightScheme};
use giicov::models::{Model, SimMode};
use giicov::randsrc::SeedSpec;
use giicov::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Transformed draw and weight on an even grid of `points` values of `u`,
/// flattened as `[u, u', w, ...]`.
pub fn cov_curve_values(grid_theta: &[f64], grid_star: &[f64], points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let mut out = Vec::with_capacity(3 * points);
    for k in 0..points {
        let u = (k as f64 + 0.5) / points as f64;
        let r = cov_transform(u, grid_theta, grid_star)?;
        out.extend([u, r.u_new, r.weight]);
    }
    Ok(out)
}

fn simulated(model: &str, n: usize, periods: usize, seed: u64) -> Result<(Model, giicov::data::PanelData)> {
    let model = Model::from_name(model)?;
    let info = model.info();
    if periods <= info.hidden {
        return Err(Error::InvalidArgument(format!("{} needs more than {} periods", info.name, info.hidden)));
    }
    let theta0 = info.theta0.clone();
    let data = model.simulate_observed(&theta0, SeedSpec::new(seed, 0), n, periods - info.hidden)?;
    Ok((model, data))
}

/// Criterion along parameter `param` with the others at the reference value,
/// flattened as `[θ_k, Q with indicators, Q with the change of variables
/// anchored at the reference value, ...]`.
#[allow(clippy::too_many_arguments)]
pub fn profile_values(model: &str, n: usize, periods: usize, reps: usize, seed: u64, param: usize, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    let (model, data) = simulated(model, n, periods, seed)?;
    let theta0 = model.info().theta0.clone();
    if param >= theta0.len() || points < 2 || !(lo < hi) {
        return Err(Error::InvalidArgument("bad profile range".into()));
    }
    let problem = Problem::new(&model, &data, CriterionKind::Lm, WeightScheme::Efficient, 1e-10)?;
    let draws = problem.draws(SeedSpec::new(seed, 0), reps, false)?;
    let sim = problem.simulator(&draws)?;
    let anchored = SimMode::cov(&theta0);
    let mut out = Vec::with_capacity(3 * points);
    for k in 0..points {
        let mut theta = theta0.clone();
        theta[param] = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let hard = problem.criterion_value(&sim, &theta, &SimMode::Standard)?;
        let smooth = problem.criterion_value(&sim, &theta, &anchored)?;
        out.extend([theta[param], hard, smooth]);
    }
    Ok(out)
}

#[derive(Serialize)]
pub struct TraceReport {
    pub param_names: Vec<String>,
    pub theta0: Vec<f64>,
    pub theta: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceStep>,
}

/// Newton estimation on data simulated at the reference value.
pub fn trace_report(model: &str, n: usize, periods: usize, reps: usize, seed: u64, start: &[f64]) -> Result<TraceReport> {
    let (model, data) = simulated(model, n, periods, seed)?;
    model.check_theta(start)?;
    let opts = EstimOptions {
        reps,
        ..EstimOptions::default()
    };
    let res = estimate(&model, &data, SeedSpec::new(seed, 0), &opts, Some(start))?;
    Ok(TraceReport {
        param_names: res.param_names,
        theta0: model.info().theta0.clone(),
        theta: res.theta,
        se: res.se,
        converged: res.converged,
        iterations: res.iterations,
        trace: res.trace,
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn cov_curve(grid_theta: &[f64], grid_star: &[f64], points: usize) -> Result<Vec<f64>, JsError> {
    cov_curve_values(grid_theta, grid_star, points).map_err(js)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn criterion_profile(model: &str, n: usize, periods: usize, reps: usize, seed: u64, param: usize, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, JsError> {
    profile_values(model, n, periods, reps, seed, param, lo, hi, points).map_err(js)
}

/// JSON-encoded [`TraceReport`].
#[wasm_bindgen]
pub fn newton_trace(model: &str, n: usize, periods: usize, reps: usize, seed: u64, start: &[f64]) -> Result<String, JsError> {
    let report = trace_report(model, n, periods, reps, seed, start).map_err(js)?;
    serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn reference_theta(model: &str) -> Result<Vec<f64>, JsError> {
    Model::from_name(model).map(|m| m.info().theta0.clone()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_curve_at_the_anchor() {
        let g = [0.0, 0.3, 0.8, 1.0];
        let v = cov_curve_values(&g, &g, 50).unwrap();
        for c in v.chunks(3) {
            assert_eq!(c[0], c[1]);
            assert_eq!(c[2], 1.0);
        }
    }

    #[test]
    fn curve_is_monotone_inside_segments() {
        let v = cov_curve_values(&[0.0, 0.4, 1.0], &[0.0, 0.3, 1.0], 40).unwrap();
        for pair in v.chunks(3).collect::<Vec<_>>().windows(2) {
            if (pair[0][0] < 0.3) == (pair[1][0] < 0.3) {
                assert!(pair[0][1] < pair[1][1]);
            }
        }
        assert!(cov_curve_values(&[0.0, 1.0], &[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn profiles_agree_at_the_anchor() {
        let v = profile_values("model1", 80, 5, 5, 1, 0, 0.5, 1.5, 3).unwrap();
        let mid = &v[3..6];
        assert_eq!(mid[0], 1.0);
        assert!((mid[1] - mid[2]).abs() <= 1e-12 * (1.0 + mid[1].abs()));
    }

    #[test]
    fn trace_starts_at_the_start_value() {
        let r = trace_report("model1", 80, 5, 5, 2, &[0.8, 0.3]).unwrap();
        assert_eq!(r.trace[0].theta, vec![0.8, 0.3]);
        assert_eq!(r.theta.len(), 2);
    }
}
