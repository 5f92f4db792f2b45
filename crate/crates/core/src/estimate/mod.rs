//! Criteria, optimisers and standard errors.

mod newton;
mod simplex;

pub use newton::{levenberg_step, newton_solve, projected_gradient, step_in_se, Eval, NewtonSettings, Outcome, StopReason, TraceStep};
pub use simplex::{bfgs, fd_gradient, nelder_mead, BfgsSettings};

use std::str::FromStr;
use web_time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::{extract, seed_parameter, Dual1, Dual2, Scalar};
use crate::auxiliary::AuxDesign;
use crate::data::PanelData;
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::models::{KernelKind, Model, SimDraws, SimMode};
use crate::randsrc::SeedSpec;
use crate::sim::Simulator;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Parses a kebab-case enum name.
fn parse_name<T: DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::invalid(format!("unknown {what} {s:?}")))
}

macro_rules! kebab_from_str {
    ($t:ty, $what:literal) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                parse_name(s, $what)
            }
        }
    };
}

/// Which distance between observed and simulated data is minimised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    /// Simulated auxiliary moments at the observed auxiliary estimate.
    #[default]
    Lm,
    /// Simulated minus observed auxiliary estimates.
    Wald,
}

/// Weighting matrix of the quadratic form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Identity,
    #[default]
    Efficient,
}

/// Estimation procedure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Newton with pathwise derivatives through the change of variables.
    #[default]
    Giicov,
    /// Newton with central differences of the unsmoothed moments.
    GiicovFd,
    /// Kernel-smoothed criterion, one bandwidth.
    Gii1,
    /// Kernel-smoothed criterion, two stages with shrinking bandwidth.
    Gii2,
    /// Simplex search on the unsmoothed criterion.
    NelderMead,
}

/// Hessian used by the Newton iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianKind {
    #[default]
    GaussNewton,
    Full,
}

/// How the moment Jacobian in the variance is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceScheme {
    #[default]
    Ad,
    CentralFd,
}

kebab_from_str!(CriterionKind, "criterion");
kebab_from_str!(WeightScheme, "weight scheme");
kebab_from_str!(Method, "method");
kebab_from_str!(HessianKind, "hessian");
kebab_from_str!(VarianceScheme, "variance scheme");

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Giicov => "giicov",
            Method::GiicovFd => "giicov-fd",
            Method::Gii1 => "gii1",
            Method::Gii2 => "gii2",
            Method::NelderMead => "nelder-mead",
        }
    }
}

/// Everything that configures one estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimOptions {
    pub method: Method,
    pub criterion: CriterionKind,
    pub weight: WeightScheme,
    pub hessian: HessianKind,
    pub variance: VarianceScheme,
    /// Simulated paths per observed unit.
    pub reps: usize,
    /// Kernel bandwidth (first stage for `gii2`); defaults depend on the method.
    pub bandwidth: Option<f64>,
    /// Second-stage bandwidth and replications for `gii2`.
    pub bandwidth2: f64,
    pub reps2: usize,
    /// Finite-difference step for `giicov-fd` and the central-difference
    /// variance; defaults to `0.1 n^{-1/4}`.
    pub fd_step: Option<f64>,
    pub kernel: KernelKind,
    /// Ridge added to the moment covariance before inversion.
    pub ridge: f64,
    /// Relative step of the finite-difference gradients in kernel estimation.
    pub kernel_fd_rel: f64,
    pub newton: NewtonSettings,
}

impl Default for EstimOptions {
    fn default() -> Self {
        EstimOptions {
            method: Method::Giicov,
            criterion: CriterionKind::Lm,
            weight: WeightScheme::Efficient,
            hessian: HessianKind::GaussNewton,
            variance: VarianceScheme::Ad,
            reps: 10,
            bandwidth: None,
            bandwidth2: 0.003,
            reps2: 300,
            fd_step: None,
            kernel: KernelKind::Normal,
            ridge: 1e-10,
            kernel_fd_rel: 1e-5,
            newton: NewtonSettings::default(),
        }
    }
}

impl EstimOptions {
    /// Bandwidth actually used by a kernel method for `n_obs` observations.
    pub fn effective_bandwidth(&self, n_obs: usize) -> Option<f64> {
        match self.method {
            Method::Gii1 => Some(self.bandwidth.unwrap_or(if n_obs <= 500 { 0.08 } else { 0.04 })),
            Method::Gii2 => Some(self.bandwidth.unwrap_or(0.03)),
            _ => None,
        }
    }

    /// Finite-difference step `δ_n`.
    pub fn effective_fd_step(&self, n_obs: usize) -> f64 {
        self.fd_step.unwrap_or(0.1 * (n_obs as f64).powf(-0.25))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.reps2 == 0 {
            return Err(Error::invalid("replication counts must be positive"));
        }
        for (name, v) in [("bandwidth", self.bandwidth), ("fd-step", self.fd_step)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(self.bandwidth2 > 0.0) {
            return Err(Error::invalid("second-stage bandwidth must be positive"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be nonnegative"));
        }
        Ok(())
    }
}

/// Outcome of an estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub model: String,
    pub method: Method,
    pub criterion: CriterionKind,
    pub weight: WeightScheme,
    pub param_names: Vec<String>,
    pub theta: Vec<f64>,
    pub criterion_value: f64,
    pub grad_norm: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub se: Option<Vec<f64>>,
    pub ci95: Option<Vec<[f64; 2]>>,
    pub elapsed_seconds: f64,
    pub reps: usize,
    pub bandwidth: Option<f64>,
    pub fd_step: Option<f64>,
    pub trace: Vec<TraceStep>,
}

impl EstimationResult {
    /// Whether the 95% interval of parameter `k` contains `value`.
    pub fn covers(&self, k: usize, value: f64) -> Option<bool> {
        self.ci95.as_ref().map(|ci| ci[k][0] <= value && value <= ci[k][1])
    }
}

/// Derivative estimator for moment Jacobians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Jacobian {
    /// Pathwise derivatives through the change of variables anchored at `θ`.
    Ad,
    /// Central differences of the moments simulated in `mode` with step `step · (1 + |θ_k|)`
    /// when `relative`, else an absolute step.
    Fd { step: f64, relative: bool },
}

/// An estimation problem: model, observed data, auxiliary fit and weight.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub model: &'a Model,
    pub data: &'a PanelData,
    pub aux: AuxDesign,
    pub beta_hat: Vec<f64>,
    /// Moment covariance `Ξ̂`.
    pub xi: DMatrix<f64>,
    /// `∂_β` of the observed moments.
    pub lambda: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub criterion: CriterionKind,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a Model, data: &'a PanelData, criterion: CriterionKind, weight: WeightScheme, ridge: f64) -> Result<Self> {
        let aux = AuxDesign::new(model, data)?;
        let beta_hat = aux.fit_observed(data)?;
        let xi = aux.moment_covariance(data, &beta_hat)?;
        let lambda = moment_beta_jacobian(&aux, data, &beta_hat)?;
        let mut p = Problem {
            model,
            data,
            aux,
            beta_hat,
            xi,
            lambda,
            omega: DMatrix::zeros(0, 0),
            criterion,
        };
        p.omega = match weight {
            WeightScheme::Identity => DMatrix::identity(p.aux.dim(), p.aux.dim()),
            WeightScheme::Efficient => p.efficient_weight(ridge)?,
        };
        Ok(p)
    }

    /// `Ω = (Ξ̂ + ridge · I)^{-1}` for the moment criterion, or the inverse of
    /// the implied covariance `Λ̂^{-1} Ξ̂ Λ̂^{-T}` of the auxiliary estimate
    /// for the Wald criterion.
    pub fn efficient_weight(&self, ridge: f64) -> Result<DMatrix<f64>> {
        let d = self.aux.dim();
        let target = match self.criterion {
            CriterionKind::Lm => self.xi.clone(),
            CriterionKind::Wald => {
                let li = self
                    .lambda
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::RankDeficient("moment Jacobian in β is singular".into()))?;
                &li * &self.xi * li.transpose()
            }
        };
        efficient_weight(&target, ridge).inspect(|w| debug_assert_eq!(w.nrows(), d))
    }

    pub fn draws(&self, seed: SeedSpec, reps: usize, second: bool) -> Result<SimDraws> {
        SimDraws::new(self.model, seed, self.data.n(), self.data.periods(), reps, second)
    }

    pub fn simulator<'b>(&'b self, draws: &'b SimDraws) -> Result<Simulator<'b>> {
        Simulator::new(self.model, self.data, draws)
    }

    /// Simulated moments (moment criterion) or binding-function gap (Wald).
    pub fn discrepancy<S: Scalar>(&self, sim: &Simulator<'_>, theta: &[S], mode: &SimMode) -> Result<Vec<S>> {
        match self.criterion {
            CriterionKind::Lm => Ok(self.aux.weighted_moments(sim, theta, mode, &self.beta_hat)?.m),
            CriterionKind::Wald => {
                let b = self.aux.binding_avg(sim, theta, mode)?;
                Ok(b.iter().zip(&self.beta_hat).map(|(x, &y)| *x - y).collect())
            }
        }
    }

    /// `r' Ω r`.
    pub fn quad<S: Scalar>(&self, r: &[S]) -> S {
        let mut q = S::zero();
        for j in 0..r.len() {
            let mut s = S::zero();
            for k in 0..r.len() {
                s += r[k] * self.omega[(j, k)];
            }
            q += r[j] * s;
        }
        q
    }

    /// Criterion value at a plain parameter vector.
    pub fn criterion_value(&self, sim: &Simulator<'_>, theta: &[f64], mode: &SimMode) -> Result<f64> {
        self.model.check_theta(theta)?;
        let r = self.discrepancy(sim, theta, mode)?;
        Ok(self.quad(&r))
    }

    /// Criterion with derivatives in `θ` at `theta`, holding the anchor at
    /// `theta_star`.
    pub fn eval_at(&self, sim: &Simulator<'_>, theta: &[f64], theta_star: &[f64], hessian: HessianKind) -> Result<Eval> {
        self.model.check_theta(theta_star)?;
        let mode = SimMode::cov(theta_star);
        let d = theta.len();
        match hessian {
            HessianKind::GaussNewton => {
                let (r, jac) = self.jacobian_with(sim, theta, &mode)?;
                let r = DVector::from_vec(r);
                let wr = &self.omega * &r;
                let wj = &self.omega * &jac;
                Ok(Eval {
                    q: r.dot(&wr),
                    grad: jac.transpose() * wr * 2.0,
                    hess: jac.transpose() * wj * 2.0,
                })
            }
            HessianKind::Full => {
                let th: Vec<Dual2> = seed_parameter(theta)?;
                let r = self.discrepancy(sim, &th, &mode)?;
                let (q, g, h) = extract(&self.quad(&r), d);
                Ok(Eval {
                    q,
                    grad: DVector::from_vec(g),
                    hess: DMatrix::from_fn(d, d, |a, b| h[a][b]),
                })
            }
        }
    }

    /// Criterion with derivatives at `θ* = θ`.
    pub fn eval(&self, sim: &Simulator<'_>, theta: &[f64], hessian: HessianKind) -> Result<Eval> {
        self.eval_at(sim, theta, theta, hessian)
    }

    fn jacobian_with(&self, sim: &Simulator<'_>, theta: &[f64], mode: &SimMode) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let th: Vec<Dual1> = seed_parameter(theta)?;
        let r = self.discrepancy(sim, &th, mode)?;
        Ok(dual_rows(&r, theta.len()))
    }

    /// Discrepancy and its Jacobian at `θ`.
    pub fn discrepancy_jacobian(&self, sim: &Simulator<'_>, theta: &[f64], how: Jacobian, mode: &SimMode) -> Result<(Vec<f64>, DMatrix<f64>)> {
        match how {
            Jacobian::Ad => self.jacobian_with(sim, theta, &SimMode::cov(theta)),
            Jacobian::Fd { step, relative } => {
                let r = self.discrepancy(sim, theta, mode)?;
                let jac = self.fd_columns(theta, step, relative, |t| self.discrepancy(sim, t, mode))?;
                Ok((r, jac))
            }
        }
    }

    /// Simulated moments at `β̂` and their Jacobian `Δ̂` at `θ`.
    pub fn moment_jacobian(&self, sim: &Simulator<'_>, theta: &[f64], how: Jacobian, mode: &SimMode) -> Result<(Vec<f64>, DMatrix<f64>)> {
        match how {
            Jacobian::Ad => {
                let th: Vec<Dual1> = seed_parameter(theta)?;
                let m = self.aux.weighted_moments(sim, &th, &SimMode::cov(theta), &self.beta_hat)?.m;
                Ok(dual_rows(&m, theta.len()))
            }
            Jacobian::Fd { step, relative } => {
                let f = |t: &[f64]| Ok(self.aux.weighted_moments(sim, t, mode, &self.beta_hat)?.m);
                let m = f(theta)?;
                Ok((m, self.fd_columns(theta, step, relative, f)?))
            }
        }
    }

    /// Central-difference columns, one-sided where a bound is in the way.
    fn fd_columns<F>(&self, theta: &[f64], step: f64, relative: bool, f: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let bounds = &self.model.info().bounds;
        let mut cols = Vec::with_capacity(theta.len());
        for k in 0..theta.len() {
            let h = if relative { step * (1.0 + theta[k].abs()) } else { step };
            let (lo, hi) = bounds[k];
            let up = (theta[k] + h).min(hi);
            let dn = (theta[k] - h).max(lo);
            if !(up > dn) {
                return Err(Error::invalid(format!("no room for a difference step in parameter {k}")));
            }
            let mut t = theta.to_vec();
            t[k] = up;
            let fu = f(&t)?;
            t[k] = dn;
            let fl = f(&t)?;
            cols.push(DVector::from_iterator(fu.len(), fu.iter().zip(&fl).map(|(a, b)| (a - b) / (up - dn))));
        }
        Ok(DMatrix::from_columns(&cols))
    }

    /// Sandwich covariance of `θ̂` from the moment Jacobian `Δ̂`, scaled by
    /// `(1 + 1/R) / n`.
    pub fn sandwich(&self, delta: &DMatrix<f64>, reps: usize) -> Result<DMatrix<f64>> {
        let n = self.aux.n_obs() as f64;
        let (jac, v) = match self.criterion {
            CriterionKind::Lm => (delta.clone(), self.xi.clone()),
            CriterionKind::Wald => {
                let li = self
                    .lambda
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::RankDeficient("moment Jacobian in β is singular".into()))?;
                (-(&li * delta), &li * &self.xi * li.transpose())
            }
        };
        let a = jac.transpose() * &self.omega * &jac;
        let ai = spd_inverse(&a, "Jacobian information matrix").map_err(|_| {
            Error::RankDeficient("parameters are not identified by the auxiliary moments at this estimate".into())
        })?;
        let b = jac.transpose() * &self.omega * v * &self.omega * &jac;
        Ok(&ai * b * &ai * ((1.0 + 1.0 / reps as f64) / n))
    }
}

/// Rows of a dual vector as `(values, Jacobian)`.
fn dual_rows(r: &[Dual1], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let vals = r.iter().map(|v| v.value).collect();
    let jac = DMatrix::from_fn(r.len(), d, |a, b| r[a].grad[b]);
    (vals, jac)
}

/// `(Ξ + ridge · I)^{-1}`, warning when the ridge is what makes it invertible.
pub fn efficient_weight(xi: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let d = xi.nrows();
    let sym = (xi + xi.transpose()) * 0.5;
    if sym.clone().cholesky().is_none() {
        warn!("moment covariance is singular; relying on the ridge {ridge:e}");
    }
    let reg = sym + DMatrix::identity(d, d) * ridge;
    let inv = spd_inverse(&reg, "regularised moment covariance")?;
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Central-difference Jacobian of the observed moments in `β`.
fn moment_beta_jacobian(aux: &AuxDesign, data: &PanelData, beta: &[f64]) -> Result<DMatrix<f64>> {
    let d = beta.len();
    let mut out = DMatrix::zeros(d, d);
    let mut b = beta.to_vec();
    for k in 0..d {
        let h = 1e-6 * (1.0 + beta[k].abs());
        b[k] = beta[k] + h;
        let up = aux.observed_moments(data, &b)?;
        b[k] = beta[k] - h;
        let dn = aux.observed_moments(data, &b)?;
        b[k] = beta[k];
        for j in 0..d {
            out[(j, k)] = (up[j] - dn[j]) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Standard errors and 95% intervals from a covariance matrix.
pub fn intervals(theta: &[f64], cov: &DMatrix<f64>) -> (Vec<f64>, Vec<[f64; 2]>) {
    let se: Vec<f64> = (0..theta.len()).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let ci = theta.iter().zip(&se).map(|(t, s)| [t - Z95 * s, t + Z95 * s]).collect();
    (se, ci)
}

/// Cold start: the best point of a regular interior grid over the bounds,
/// scored by the unsmoothed criterion. Up to 8 points per coordinate, fewer
/// when that would exceed 4096 points in total.
pub fn grid_scan(problem: &Problem<'_>, sim: &Simulator<'_>) -> Result<Vec<f64>> {
    let info = problem.model.info();
    let d = info.dim();
    let per = ((4096f64).powf(1.0 / d as f64).floor() as usize).clamp(2, 8);
    let total = per.pow(d as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for idx in 0..total {
        let mut rem = idx;
        let theta: Vec<f64> = info
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let j = rem % per;
                rem /= per;
                lo + (j as f64 + 0.5) * (hi - lo) / per as f64
            })
            .collect();
        if let Ok(q) = problem.criterion_value(sim, &theta, &SimMode::Standard) {
            if best.as_ref().is_none_or(|(b, _)| q < *b) {
                best = Some((q, theta));
            }
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::invalid("no admissible grid point for a cold start"))
}

fn kernel_mode(bandwidth: f64, kind: KernelKind) -> SimMode {
    SimMode::Kernel { bandwidth, kind }
}

fn bfgs_settings(opts: &EstimOptions, d: usize) -> BfgsSettings {
    BfgsSettings {
        tol_g: opts.newton.tol_g(d),
        max_iter: opts.newton.max_iter,
        fd_rel: opts.kernel_fd_rel,
        max_halvings: opts.newton.max_halvings,
    }
}

/// Kernel estimation declares convergence when the finite-difference
/// gradient is below tolerance, or when the line search can make no further
/// progress with a gradient at the level of the differencing error.
fn kernel_converged(out: &Outcome, opts: &EstimOptions) -> bool {
    out.converged
        || (matches!(out.stop, StopReason::LineSearch | StopReason::StepSize)
            && out.grad_norm <= opts.kernel_fd_rel.sqrt() * (1.0 + out.q.abs()))
}

/// Runs one estimation. `start = None` triggers a grid scan.
pub fn estimate(model: &Model, data: &PanelData, seed: SeedSpec, opts: &EstimOptions, start: Option<&[f64]>) -> Result<EstimationResult> {
    opts.validate()?;
    let clock = Instant::now();
    let problem = Problem::new(model, data, opts.criterion, opts.weight, opts.ridge)?;
    let info = model.info();
    let d = info.dim();
    let n_obs = problem.aux.n_obs();
    let project = |t: &mut [f64]| model.project(t);
    let draws = problem.draws(seed, opts.reps, false)?;
    let sim = problem.simulator(&draws)?;
    let start = match start {
        Some(s) => {
            if s.len() != d {
                return Err(Error::invalid(format!("start has {} entries, {} expects {d}", s.len(), info.name)));
            }
            s.to_vec()
        }
        None => grid_scan(&problem, &sim)?,
    };
    let fd_step = opts.effective_fd_step(n_obs);
    let bandwidth = opts.effective_bandwidth(n_obs);

    let (out, final_reps, variance_jac, variance_mode, second_draws);
    match opts.method {
        Method::Giicov => {
            out = newton_solve(
                |t| problem.eval(&sim, t, opts.hessian),
                |cand, anchor| problem.criterion_value(&sim, cand, &SimMode::cov(anchor)),
                project,
                &info.bounds,
                &start,
                &opts.newton,
            )?;
            final_reps = opts.reps;
            second_draws = None;
            variance_jac = match opts.variance {
                VarianceScheme::Ad => Jacobian::Ad,
                VarianceScheme::CentralFd => Jacobian::Fd {
                    step: fd_step,
                    relative: false,
                },
            };
            variance_mode = SimMode::Standard;
        }
        Method::GiicovFd => {
            let how = Jacobian::Fd {
                step: fd_step,
                relative: false,
            };
            out = newton_solve(
                |t| {
                    problem.model.check_theta(t)?;
                    let (r, jac) = problem.discrepancy_jacobian(&sim, t, how, &SimMode::Standard)?;
                    let r = DVector::from_vec(r);
                    let wr = &problem.omega * &r;
                    Ok(Eval {
                        q: r.dot(&wr),
                        grad: jac.transpose() * wr * 2.0,
                        hess: jac.transpose() * &problem.omega * &jac * 2.0,
                    })
                },
                |cand, _| problem.criterion_value(&sim, cand, &SimMode::Standard),
                project,
                &info.bounds,
                &start,
                &opts.newton,
            )?;
            final_reps = opts.reps;
            second_draws = None;
            variance_jac = match opts.variance {
                VarianceScheme::Ad => Jacobian::Ad,
                VarianceScheme::CentralFd => how,
            };
            variance_mode = SimMode::Standard;
        }
        Method::Gii1 => {
            let mode = kernel_mode(bandwidth.expect("kernel method"), opts.kernel);
            let mut o = bfgs(
                |t| problem.criterion_value(&sim, t, &mode).ok(),
                project,
                &info.bounds,
                &start,
                &bfgs_settings(opts, d),
            );
            o.converged = kernel_converged(&o, opts);
            out = o;
            final_reps = opts.reps;
            second_draws = None;
            variance_jac = Jacobian::Fd {
                step: opts.kernel_fd_rel,
                relative: true,
            };
            variance_mode = mode;
        }
        Method::Gii2 => {
            let mode1 = kernel_mode(bandwidth.expect("kernel method"), opts.kernel);
            let first = bfgs(
                |t| problem.criterion_value(&sim, t, &mode1).ok(),
                project,
                &info.bounds,
                &start,
                &bfgs_settings(opts, d),
            );
            debug!("gii2 first stage: {:?} after {} iterations", first.theta, first.iterations);
            let draws2 = problem.draws(seed, opts.reps2, true)?;
            let mode2 = kernel_mode(opts.bandwidth2, opts.kernel);
            let mut o = {
                let sim2 = problem.simulator(&draws2)?;
                bfgs(
                    |t| problem.criterion_value(&sim2, t, &mode2).ok(),
                    project,
                    &info.bounds,
                    &first.theta,
                    &bfgs_settings(opts, d),
                )
            };
            o.converged = kernel_converged(&o, opts);
            o.iterations += first.iterations;
            let mut trace = first.trace;
            trace.extend(o.trace);
            o.trace = trace;
            out = o;
            final_reps = opts.reps2;
            second_draws = Some(draws2);
            variance_jac = Jacobian::Fd {
                step: opts.kernel_fd_rel,
                relative: true,
            };
            variance_mode = mode2;
        }
        Method::NelderMead => {
            let scale: Vec<f64> = info.bounds.iter().map(|&(lo, hi)| (0.05 * (hi - lo)).min(0.25)).collect();
            let mut s = start.clone();
            project(&mut s);
            out = nelder_mead(
                |t| problem.criterion_value(&sim, t, &SimMode::Standard).unwrap_or(f64::INFINITY),
                &s,
                &scale,
                1e-6,
                500 * d,
            );
            final_reps = opts.reps;
            second_draws = None;
            variance_jac = match opts.variance {
                VarianceScheme::Ad => Jacobian::Ad,
                VarianceScheme::CentralFd => Jacobian::Fd {
                    step: fd_step,
                    relative: false,
                },
            };
            variance_mode = SimMode::Standard;
        }
    }

    let vsim = match &second_draws {
        Some(d2) => problem.simulator(d2)?,
        None => sim,
    };
    let mut converged = out.converged;
    let (se, ci95) = match problem
        .moment_jacobian(&vsim, &out.theta, variance_jac, &variance_mode)
        .and_then(|(_, delta)| problem.sandwich(&delta, final_reps))
    {
        Ok(cov) => {
            if !converged && !matches!(out.stop, StopReason::EvalFailure | StopReason::MaxIter) {
                if let Some(s) = out.step.as_deref().and_then(|p| step_in_se(p, &cov)) {
                    debug!("remaining Newton step is {s:.3e} standard errors");
                    converged = s <= opts.newton.stationarity_se;
                }
            }
            let (se, ci) = intervals(&out.theta, &cov);
            (Some(se), Some(ci))
        }
        Err(e) => {
            warn!("standard errors unavailable: {e}");
            (None, None)
        }
    };
    Ok(EstimationResult {
        model: info.name.to_string(),
        method: opts.method,
        criterion: opts.criterion,
        weight: opts.weight,
        param_names: info.param_names.clone(),
        theta: out.theta,
        criterion_value: out.q,
        grad_norm: out.grad_norm.is_finite().then_some(out.grad_norm),
        iterations: out.iterations,
        converged,
        stop: out.stop,
        se,
        ci95,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        reps: final_reps,
        bandwidth: if matches!(opts.method, Method::Gii2) { bandwidth.map(|_| opts.bandwidth2) } else { bandwidth },
        fd_step: matches!(opts.method, Method::GiicovFd).then_some(fd_step),
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model1_problem(n: usize) -> (Model, PanelData) {
        let model = Model::from_name("model1").unwrap();
        let data = model.simulate_observed(&[1.0, 0.4], SeedSpec::new(11, 0), n, 5).unwrap();
        (model, data)
    }

    #[test]
    fn names_parse() {
        assert_eq!("giicov-fd".parse::<Method>().unwrap(), Method::GiicovFd);
        assert_eq!("nelder-mead".parse::<Method>().unwrap(), Method::NelderMead);
        assert_eq!("wald".parse::<CriterionKind>().unwrap(), CriterionKind::Wald);
        assert!("newton".parse::<Method>().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_with_fixed_anchor() {
        let (model, data) = model1_problem(150);
        for crit in [CriterionKind::Lm, CriterionKind::Wald] {
            let p = Problem::new(&model, &data, crit, WeightScheme::Efficient, 1e-10).unwrap();
            let draws = p.draws(SeedSpec::new(11, 0), 5, false).unwrap();
            let sim = p.simulator(&draws).unwrap();
            let star = [0.9, 0.5];
            let theta = [0.93, 0.47];
            let e = p.eval_at(&sim, &theta, &star, HessianKind::Full).unwrap();
            let gn = p.eval_at(&sim, &theta, &star, HessianKind::GaussNewton).unwrap();
            assert!((e.q - gn.q).abs() < 1e-14 * (1.0 + e.q));
            for k in 0..2 {
                let h = 1e-6 * (1.0 + theta[k].abs());
                let mut up = theta;
                let mut dn = theta;
                up[k] += h;
                dn[k] -= h;
                let mode = SimMode::cov(&star);
                let fd = (p.criterion_value(&sim, &up, &mode).unwrap() - p.criterion_value(&sim, &dn, &mode).unwrap()) / (2.0 * h);
                assert!((e.grad[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{crit:?} {k}: {} vs {fd}", e.grad[k]);
                assert!((gn.grad[k] - e.grad[k]).abs() < 1e-12 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn giicov_recovers_model1_parameters() {
        let (model, data) = model1_problem(200);
        let r = estimate(&model, &data, SeedSpec::new(11, 0), &EstimOptions::default(), Some(&[1.0, 0.4])).unwrap();
        assert!(r.converged, "{:?}", r.stop);
        assert!((r.theta[0] - 1.0).abs() < 0.15 && (r.theta[1] - 0.4).abs() < 0.15, "{:?}", r.theta);
        let se = r.se.unwrap();
        assert!(se.iter().all(|s| *s > 0.0 && *s < 0.2), "{se:?}");
    }

    #[test]
    fn wald_and_identity_variants_run() {
        let (model, data) = model1_problem(200);
        for (crit, weight) in [(CriterionKind::Wald, WeightScheme::Efficient), (CriterionKind::Lm, WeightScheme::Identity)] {
            let opts = EstimOptions {
                criterion: crit,
                weight,
                ..Default::default()
            };
            let r = estimate(&model, &data, SeedSpec::new(11, 0), &opts, Some(&[1.0, 0.4])).unwrap();
            assert!((r.theta[0] - 1.0).abs() < 0.2 && (r.theta[1] - 0.4).abs() < 0.2, "{crit:?} {weight:?} {:?}", r.theta);
        }
    }

    #[test]
    fn baselines_run_on_model1() {
        let (model, data) = model1_problem(200);
        for method in [Method::GiicovFd, Method::Gii1, Method::NelderMead] {
            let opts = EstimOptions {
                method,
                ..Default::default()
            };
            let r = estimate(&model, &data, SeedSpec::new(11, 0), &opts, Some(&[1.0, 0.4])).unwrap();
            assert!((r.theta[0] - 1.0).abs() < 0.25 && (r.theta[1] - 0.4).abs() < 0.25, "{method:?} {:?}", r.theta);
        }
    }

    #[test]
    fn efficient_weight_with_duplicated_rows() {
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let w = efficient_weight(&xi, 1e-10).unwrap();
        assert!(w.clone().symmetric_eigen().eigenvalues.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn sandwich_shrinks_with_replications() {
        let (model, data) = model1_problem(200);
        let p = Problem::new(&model, &data, CriterionKind::Lm, WeightScheme::Efficient, 1e-10).unwrap();
        let draws = p.draws(SeedSpec::new(11, 0), 10, false).unwrap();
        let sim = p.simulator(&draws).unwrap();
        let (_, delta) = p.moment_jacobian(&sim, &[1.0, 0.4], Jacobian::Ad, &SimMode::Standard).unwrap();
        let a = p.sandwich(&delta, 10).unwrap();
        let b = p.sandwich(&delta, 100).unwrap();
        let ratio = (a[(0, 0)] / b[(0, 0)]).sqrt();
        assert!((ratio - (1.1f64 / 1.01).sqrt()).abs() < 1e-12);
    }
}
