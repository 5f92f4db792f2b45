//! Single-server FIFO queue with exponential service and inter-arrival times.
//!
//! Customer `j` arrives `w_j` after customer `j-1` and needs service `v_j`.
//! The observed series is the inter-departure times `y_j = D_j - D_{j-1}`,
//! with the clock started at the first arrival so `y_1 = v_1`. Writing
//! `e_j = D_{j-1} - A_{j-1}` for the backlog seen by the previous arrival,
//! customer `j` finds the server busy when `w_j <= e_j`, i.e. when the
//! arrival uniform satisfies `u_j <= F_w(e_j)`. That is the discontinuity the
//! change of variables removes; service times enter smoothly.

use super::{discrete_step, Cell, ModelInfo, SimMode, SimPath, WeightTrack};
use crate::autodiff::Scalar;
use crate::cov::Accumulation;
use crate::error::{Error, Result};
use crate::models::{AuxKind, ExtraDraws};

/// `θ = (mean service time, mean inter-arrival time)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mm1Queue {
    pub info: ModelInfo,
}

/// Exponential quantile `-mean · ln(1 - p)` for scalar means.
fn exp_quantile<S: Scalar>(p: S, mean: S) -> Result<S> {
    Ok(-(mean * (-p).ln_1p()?))
}

/// Exponential CDF `1 - exp(-e / mean)`.
fn exp_cdf<S: Scalar>(e: S, mean: S) -> S {
    -((-(e / mean)).exp()) + 1.0
}

/// Arrival and departure clocks of the latest customer.
#[derive(Clone, Copy, Debug)]
struct Clock<S> {
    arrival: S,
    departure: S,
}

impl Mm1Queue {
    pub fn new() -> Self {
        Mm1Queue {
            info: ModelInfo {
                name: "mm1-queue",
                param_names: vec!["mean_service".into(), "mean_interarrival".into()],
                bounds: vec![(0.05, 50.0), (0.05, 50.0)],
                theta0: vec![1.0, 2.0],
                hidden: 0,
                dx: 0,
                extra: ExtraDraws::PerPeriod,
                accumulation: Accumulation::Sequential,
                aux: AuxKind::Mixture,
                jumps: 1,
            },
        }
    }

    pub(crate) fn check_stability(&self, theta: &[f64]) -> Result<()> {
        if !(theta[0] < theta[1]) {
            return Err(Error::invalid(format!(
                "queue is unstable: mean service {} must be below mean inter-arrival {}",
                theta[0], theta[1]
            )));
        }
        Ok(())
    }

    /// `main` uniforms drive arrivals, `extra` uniforms drive service.
    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        let (ms, ma) = (theta[0], theta[1]);
        if !(ms.value() > 0.0 && ma.value() > 0.0) {
            return Err(Error::invalid("queue means must be positive"));
        }
        let star = match mode {
            SimMode::Cov { theta_star } => Some((theta_star[0], theta_star[1])),
            _ => None,
        };
        let periods = cell.u.len();
        if periods == 0 {
            return Ok(());
        }
        let mut weights = WeightTrack::new(self.info.accumulation);

        let v1 = exp_quantile(S::cst(cell.extra[0]), ms)?;
        let mut clk = Clock {
            arrival: S::zero(),
            departure: v1,
        };
        let mut clk_star = star
            .map(|(ms_s, _)| -> Result<Clock<f64>> {
                Ok(Clock {
                    arrival: 0.0,
                    departure: exp_quantile(cell.extra[0], ms_s)?,
                })
            })
            .transpose()?;
        out.y[0] = v1;
        out.w[0] = S::one();

        for j in 1..periods {
            let uw = cell.u[j];
            let v = exp_quantile(S::cst(cell.extra[j]), ms)?;
            let backlog = clk.departure - clk.arrival;
            let prev_departure = clk.departure;
            match mode {
                SimMode::Kernel { bandwidth, kind } => {
                    let w = exp_quantile(S::cst(uw), ma)?;
                    let gap = w - backlog;
                    let idle = gap * kind.smooth(gap / *bandwidth);
                    clk.arrival += w;
                    clk.departure = prev_departure + idle + v;
                    out.w[j] = S::one();
                }
                _ => {
                    let grid = [S::zero(), exp_cdf(backlog, ma), S::one()];
                    let grid_star = clk_star.map(|c| [0.0, exp_cdf(c.departure - c.arrival, star.unwrap().1), 1.0]);
                    let step = discrete_step(mode, uw, &grid, grid_star.as_ref().map(|g| &g[..]))
                        .map_err(|e| e.at_cell(cell.i, j, cell.r))?;
                    let w = exp_quantile(step.u_new, ma)?;
                    clk.arrival += w;
                    clk.departure = if step.segment == 0 {
                        prev_departure + v
                    } else {
                        clk.arrival + v
                    };
                    out.w[j] = weights.push(step.weight);
                    if let (Some(c), Some((ms_s, ma_s))) = (clk_star.as_mut(), star) {
                        let w_s = exp_quantile(uw, ma_s)?;
                        let v_s = exp_quantile(cell.extra[j], ms_s)?;
                        let prev = c.departure;
                        c.arrival += w_s;
                        c.departure = if step.segment == 0 { prev + v_s } else { c.arrival + v_s };
                    }
                }
            }
            out.y[j] = clk.departure - prev_departure;
        }
        Ok(())
    }
}

impl Default for Mm1Queue {
    fn default() -> Self {
        Self::new()
    }
}
