//! Binary choice with AR(1) errors, optionally with a lagged outcome.
//!
//! `y_t = 1[α y_{t-1} + x_t γ + v_t > 0]`, `v_t = ρ v_{t-1} + ε_t`,
//! `ε_t ~ N(0, 1)`, `v_0 = 0`, `y_0 = 0`. In uniform space the outcome is
//! `1[c_t < u_t]` with `c_t = Φ(-α y_{t-1} - x_t γ - ρ v_{t-1})`.

use super::{discrete_step, Cell, ModelInfo, SimMode, SimPath, WeightTrack};
use crate::autodiff::Scalar;
use crate::cov::Accumulation;
use crate::error::Result;
use crate::models::{AuxKind, ExtraDraws};
use crate::randsrc::inv_normal_cdf;

/// Threshold `c = Φ(-α ylag - x γ - ρ v)`.
pub(crate) fn threshold<S: Scalar>(gamma: S, alpha: S, rho: S, x: f64, ylag: S, v: S) -> S {
    (-(alpha * ylag) - gamma * x - rho * v).norm_cdf()
}

/// Latent index `α ylag + x γ + ρ v + ε`, the argument of the smoothed indicator.
fn index<S: Scalar>(gamma: S, alpha: S, rho: S, x: f64, ylag: S, v: S, eps: f64) -> S {
    alpha * ylag + gamma * x + rho * v + eps
}

/// Parameters of the shared simulator; `alpha` is zero for the model without a lagged outcome.
struct Params<S> {
    gamma: S,
    alpha: S,
    rho: S,
}

fn simulate_binary<S: Scalar>(
    th: Params<S>,
    star: Option<Params<f64>>,
    mode: &SimMode,
    acc: Accumulation,
    cell: Cell<'_>,
    out: &mut SimPath<S>,
) -> Result<()> {
    let periods = cell.u.len();
    let mut v = S::zero();
    let mut ylag = S::zero();
    let mut v_star = 0.0;
    let mut ylag_star = 0.0;
    let mut weights = WeightTrack::new(acc);
    for t in 0..periods {
        let x = cell.x[t];
        let u = cell.u[t];
        match mode {
            SimMode::Kernel { bandwidth, kind } => {
                let eps = inv_normal_cdf(u)?;
                let s = index(th.gamma, th.alpha, th.rho, x, ylag, v, eps);
                let y = kind.smooth(s / *bandwidth);
                v = th.rho * v + eps;
                ylag = y;
                out.y[t] = y;
                out.w[t] = S::one();
            }
            _ => {
                let c = threshold(th.gamma, th.alpha, th.rho, x, ylag, v);
                let grid = [S::zero(), c, S::one()];
                let step = match &star {
                    Some(p) => {
                        let cs = threshold(p.gamma, p.alpha, p.rho, x, ylag_star, v_star);
                        discrete_step(mode, u, &grid, Some(&[0.0, cs, 1.0]))
                    }
                    None => discrete_step(mode, u, &grid, None),
                }
                .map_err(|e| e.at_cell(cell.i, t, cell.r))?;
                let y = step.segment as f64;
                out.y[t] = S::cst(y);
                out.w[t] = weights.push(step.weight);
                v = th.rho * v + step.u_new.inv_norm_cdf()?;
                ylag = S::cst(y);
                if let Some(p) = &star {
                    v_star = p.rho * v_star + inv_normal_cdf(u)?;
                    ylag_star = y;
                }
            }
        }
    }
    Ok(())
}

/// Binary choice with AR(1) errors, `θ = (γ, ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryAr {
    pub info: ModelInfo,
}

impl BinaryAr {
    pub fn new() -> Self {
        BinaryAr {
            info: ModelInfo {
                name: "model1",
                param_names: vec!["gamma".into(), "rho".into()],
                bounds: vec![(-5.0, 5.0), (-0.95, 0.95)],
                theta0: vec![1.0, 0.4],
                hidden: 0,
                dx: 1,
                extra: ExtraDraws::None,
                accumulation: Accumulation::PerCell,
                aux: AuxKind::Sur,
                jumps: 1,
            },
        }
    }

    /// Interior critical point `Φ(-x γ - ρ v_{t-1})`.
    pub fn critical_grid(theta: &[f64], x: f64, v_prev: f64) -> [f64; 3] {
        [0.0, threshold(theta[0], 0.0, theta[1], x, 0.0, v_prev), 1.0]
    }

    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        let th = Params {
            gamma: theta[0],
            alpha: S::zero(),
            rho: theta[1],
        };
        let star = match mode {
            SimMode::Cov { theta_star } => Some(Params {
                gamma: theta_star[0],
                alpha: 0.0,
                rho: theta_star[1],
            }),
            _ => None,
        };
        simulate_binary(th, star, mode, self.info.accumulation, cell, out)
    }
}

impl Default for BinaryAr {
    fn default() -> Self {
        Self::new()
    }
}

/// Binary choice with a lagged outcome and AR(1) errors, `θ = (γ, α, ρ)`.
///
/// With `hidden > 0` the first `hidden` periods are simulated but not observed.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicBinary {
    pub info: ModelInfo,
}

impl DynamicBinary {
    pub fn new(hidden: usize) -> Self {
        DynamicBinary {
            info: ModelInfo {
                name: if hidden == 0 { "model2" } else { "model3" },
                param_names: vec!["gamma".into(), "alpha".into(), "rho".into()],
                bounds: vec![(-5.0, 5.0), (-3.0, 3.0), (-0.95, 0.95)],
                theta0: vec![1.0, 0.2, 0.4],
                hidden,
                dx: 1,
                extra: if hidden == 0 {
                    ExtraDraws::None
                } else {
                    ExtraDraws::Fixed(hidden)
                },
                accumulation: Accumulation::PerCell,
                aux: AuxKind::Sur,
                jumps: 1,
            },
        }
    }

    /// Interior critical point `Φ(-α ylag - x γ - ρ v_{t-1})`.
    pub fn critical_grid(theta: &[f64], x: f64, ylag: f64, v_prev: f64) -> [f64; 3] {
        [0.0, threshold(theta[0], theta[1], theta[2], x, ylag, v_prev), 1.0]
    }

    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        let th = Params {
            gamma: theta[0],
            alpha: theta[1],
            rho: theta[2],
        };
        let star = match mode {
            SimMode::Cov { theta_star } => Some(Params {
                gamma: theta_star[0],
                alpha: theta_star[1],
                rho: theta_star[2],
            }),
            _ => None,
        };
        // pre-sample regressors come from the auxiliary draws
        let hidden = self.info.hidden;
        if hidden > 0 && cell.x.len() < cell.u.len() {
            let mut x = Vec::with_capacity(cell.u.len());
            for &e in &cell.extra[..hidden] {
                x.push(super::exog_from_uniform(e)?);
            }
            x.extend_from_slice(cell.x);
            let cell = Cell { x: &x, ..cell };
            return simulate_binary(th, star, mode, self.info.accumulation, cell, out);
        }
        simulate_binary(th, star, mode, self.info.accumulation, cell, out)
    }
}
