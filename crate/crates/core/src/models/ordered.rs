//! Ordered probit with a unit-level random effect.
//!
//! `s_it = x_it γ + σ v_i + e_it`, `y_it = j` when `δ_j < s_it <= δ_{j+1}`,
//! with `v_i, e_it ~ N(0, 1)`. In uniform space the grid is
//! `c^j = Φ(δ_j - x γ - σ v_i)`. The random effect is drawn from the
//! auxiliary channel and enters smoothly, so only `e_it` is transformed.

use super::{discrete_step, Cell, ModelInfo, SimMode, SimPath, WeightTrack};
use crate::autodiff::Scalar;
use crate::cov::Accumulation;
use crate::error::{Error, Result};
use crate::models::{AuxKind, ExtraDraws};
use crate::randsrc::inv_normal_cdf;

const MIN_GAP: f64 = 1e-6;

/// Ordered probit with `levels` thresholds, `θ = (δ_1, …, δ_J, γ, σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderedProbit {
    pub info: ModelInfo,
    levels: usize,
}

fn fill_grid<S: Scalar>(theta: &[S], levels: usize, x: f64, v: f64, grid: &mut Vec<S>) {
    let gamma = theta[levels];
    let sigma = theta[levels + 1];
    grid.clear();
    grid.push(S::zero());
    for &delta in &theta[..levels] {
        grid.push((delta - gamma * x - sigma * v).norm_cdf());
    }
    grid.push(S::one());
}

impl OrderedProbit {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 || levels + 2 > crate::autodiff::MAX_PARAMS {
            return Err(Error::invalid(format!(
                "ordered probit supports 1..={} thresholds, got {levels}",
                crate::autodiff::MAX_PARAMS - 2
            )));
        }
        let mut names: Vec<String> = (1..=levels).map(|j| format!("delta{j}")).collect();
        names.push("gamma".into());
        names.push("sigma".into());
        let mut bounds = vec![(-5.0, 5.0); levels];
        bounds.push((-5.0, 5.0));
        bounds.push((0.0, 5.0));
        let mut theta0: Vec<f64> = (0..levels)
            .map(|j| if levels == 1 { 0.0 } else { -1.0 + 2.0 * j as f64 / (levels - 1) as f64 })
            .collect();
        theta0.push(1.0);
        theta0.push(0.5);
        Ok(OrderedProbit {
            info: ModelInfo {
                name: "ordered-probit",
                param_names: names,
                bounds,
                theta0,
                hidden: 0,
                dx: 1,
                extra: ExtraDraws::Fixed(1),
                accumulation: Accumulation::PerCell,
                aux: AuxKind::OrderedSur { levels },
                jumps: levels,
            },
            levels,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub(crate) fn check_thresholds(&self, theta: &[f64]) -> Result<()> {
        for j in 1..self.levels {
            if !(theta[j] > theta[j - 1]) {
                return Err(Error::invalid(format!(
                    "thresholds must increase: delta{} = {} not above delta{} = {}",
                    j + 1,
                    theta[j],
                    j,
                    theta[j - 1]
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn repair_thresholds(&self, theta: &mut [f64]) {
        for j in 1..self.levels {
            if theta[j] < theta[j - 1] + MIN_GAP {
                theta[j] = theta[j - 1] + MIN_GAP;
            }
        }
    }

    /// Critical grid `(0, Φ(δ_1 - xγ - σv), …, Φ(δ_J - xγ - σv), 1)`.
    pub fn critical_grid(&self, theta: &[f64], x: f64, v: f64) -> Result<Vec<f64>> {
        self.check_thresholds(theta)?;
        let mut g = Vec::with_capacity(self.levels + 2);
        fill_grid(theta, self.levels, x, v, &mut g);
        Ok(g)
    }

    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        if let SimMode::Kernel { .. } = mode {
            return Err(Error::invalid(
                "kernel smoothing is not available for the ordered probit; use the change-of-variables estimator",
            ));
        }
        let vals: Vec<f64> = theta.iter().map(|t| t.value()).collect();
        self.check_thresholds(&vals)?;
        let v = inv_normal_cdf(cell.extra[0])?;
        let mut grid = Vec::with_capacity(self.levels + 2);
        let mut grid_star = Vec::with_capacity(self.levels + 2);
        let mut weights = WeightTrack::new(self.info.accumulation);
        for t in 0..cell.u.len() {
            let x = cell.x[t];
            fill_grid(theta, self.levels, x, v, &mut grid);
            let star = match mode {
                SimMode::Cov { theta_star } => {
                    fill_grid(theta_star, self.levels, x, v, &mut grid_star);
                    Some(grid_star.as_slice())
                }
                _ => None,
            };
            let step = discrete_step(mode, cell.u[t], &grid, star).map_err(|e| e.at_cell(cell.i, t, cell.r))?;
            out.y[t] = S::cst(step.segment as f64);
            out.w[t] = weights.push(step.weight);
        }
        Ok(())
    }
}
