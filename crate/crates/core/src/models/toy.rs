//! Small models with closed-form expectations, used as numerical oracles.

use super::{discrete_step, Cell, ModelInfo, SimMode, SimPath, WeightTrack};
use crate::autodiff::Scalar;
use crate::cov::Accumulation;
use crate::error::Result;
use crate::models::{AuxKind, ExtraDraws};

/// `y = 1[Φ(θ) < u]` with a fixed scalar regressor `z`, so that
/// `E[z (y - z β)] = z (1 - Φ(θ)) - z² β`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyThreshold {
    pub info: ModelInfo,
    pub z: f64,
}

impl ToyThreshold {
    pub fn new(z: f64) -> Self {
        ToyThreshold {
            info: ModelInfo {
                name: "toy-threshold",
                param_names: vec!["theta".into()],
                bounds: vec![(-4.0, 4.0)],
                theta0: vec![0.3],
                hidden: 0,
                dx: 1,
                extra: ExtraDraws::None,
                accumulation: Accumulation::PerCell,
                aux: AuxKind::Scalar,
                jumps: 1,
            },
            z,
        }
    }

    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        let mut weights = WeightTrack::new(self.info.accumulation);
        for t in 0..cell.u.len() {
            let u = cell.u[t];
            let c = theta[0].norm_cdf();
            match mode {
                SimMode::Kernel { bandwidth, kind } => {
                    out.y[t] = kind.smooth((-c + u) / *bandwidth);
                    out.w[t] = S::one();
                }
                SimMode::Cov { theta_star } => {
                    let cs = theta_star[0].norm_cdf();
                    let step = discrete_step(mode, u, &[S::zero(), c, S::one()], Some(&[0.0, cs, 1.0]))
                        .map_err(|e| e.at_cell(cell.i, t, cell.r))?;
                    out.y[t] = S::cst(step.segment as f64);
                    out.w[t] = weights.push(step.weight);
                }
                SimMode::Standard => {
                    let step = discrete_step(mode, u, &[S::zero(), c, S::one()], None)?;
                    out.y[t] = S::cst(step.segment as f64);
                    out.w[t] = S::one();
                }
            }
        }
        Ok(())
    }
}

/// `y_t = a + b x_t + e_t`, `e_t ~ N(0, 1)`: no discontinuities, so the
/// change of variables is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussian {
    pub info: ModelInfo,
}

impl LinearGaussian {
    pub fn new() -> Self {
        LinearGaussian {
            info: ModelInfo {
                name: "linear-gaussian",
                param_names: vec!["a".into(), "b".into()],
                bounds: vec![(-10.0, 10.0), (-10.0, 10.0)],
                theta0: vec![0.5, 1.0],
                hidden: 0,
                dx: 1,
                extra: ExtraDraws::None,
                accumulation: Accumulation::PerCell,
                aux: AuxKind::PooledLinear,
                jumps: 0,
            },
        }
    }

    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        let (a, b) = (theta[0], theta[1]);
        let grid = [S::zero(), S::one()];
        for t in 0..cell.u.len() {
            let step = discrete_step(mode, cell.u[t], &grid, Some(&[0.0, 1.0]))?;
            out.y[t] = a + b * cell.x[t] + step.u_new.inv_norm_cdf()?;
            out.w[t] = step.weight;
        }
        Ok(())
    }
}

impl Default for LinearGaussian {
    fn default() -> Self {
        Self::new()
    }
}
