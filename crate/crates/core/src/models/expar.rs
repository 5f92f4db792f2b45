//! Exponential autoregression with random switching.
//!
//! `y_t = φ y_{t-1} + μ v_t 1[u_t <= φ]`, `v_t ~ Exp(1)`, `y_0 = 0`.
//! The grid `(0, φ, 1)` does not depend on the path, but the outcome level
//! carries `y_{t-1}`, so Jacobian weights multiply along the path.

use super::{discrete_step, Cell, ModelInfo, SimMode, SimPath, WeightTrack};
use crate::autodiff::Scalar;
use crate::cov::Accumulation;
use crate::error::Result;
use crate::models::{AuxKind, ExtraDraws};
use crate::randsrc::inv_exp_cdf;

/// `θ = (μ, φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpAr {
    pub info: ModelInfo,
}

impl ExpAr {
    pub fn new() -> Self {
        ExpAr {
            info: ModelInfo {
                name: "exp-ar",
                param_names: vec!["mu".into(), "phi".into()],
                bounds: vec![(0.05, 20.0), (0.01, 0.99)],
                theta0: vec![1.0, 0.3],
                hidden: 0,
                dx: 0,
                extra: ExtraDraws::PerPeriod,
                accumulation: Accumulation::Sequential,
                aux: AuxKind::PooledAr,
                jumps: 1,
            },
        }
    }

    /// Stationary mean `μ φ / (1 - φ)`.
    pub fn stationary_mean(mu: f64, phi: f64) -> f64 {
        mu * phi / (1.0 - phi)
    }

    pub(crate) fn simulate<S: Scalar>(&self, theta: &[S], mode: &SimMode, cell: Cell<'_>, out: &mut SimPath<S>) -> Result<()> {
        let (mu, phi) = (theta[0], theta[1]);
        let mut y = S::zero();
        let mut weights = WeightTrack::new(self.info.accumulation);
        let phi_star = match mode {
            SimMode::Cov { theta_star } => Some([0.0, theta_star[1], 1.0]),
            _ => None,
        };
        for t in 0..cell.u.len() {
            let v = inv_exp_cdf(cell.extra[t], 1.0)?;
            let u = cell.u[t];
            match mode {
                SimMode::Kernel { bandwidth, kind } => {
                    let jump = kind.smooth((phi - u) / *bandwidth);
                    y = phi * y + mu * jump * v;
                    out.w[t] = S::one();
                }
                _ => {
                    let grid = [S::zero(), phi, S::one()];
                    let step = discrete_step(mode, u, &grid, phi_star.as_ref().map(|g| &g[..]))
                        .map_err(|e| e.at_cell(cell.i, t, cell.r))?;
                    y = if step.segment == 0 { phi * y + mu * v } else { phi * y };
                    out.w[t] = weights.push(step.weight);
                }
            }
            out.y[t] = y;
        }
        Ok(())
    }
}

impl Default for ExpAr {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{seed_parameter, Dual1};

    fn cell<'a>(u: &'a [f64], e: &'a [f64]) -> Cell<'a> {
        Cell {
            i: 0,
            r: 0,
            u,
            extra: e,
            x: &[],
        }
    }

    #[test]
    fn anchored_path_matches_plain_path() {
        let u = [0.1, 0.8, 0.45, 0.2, 0.9];
        let e = [0.3, 0.6, 0.2, 0.95, 0.5];
        let m = ExpAr::new();
        let mut plain = SimPath::<f64>::new(5);
        m.simulate(&[2.0, 0.5], &SimMode::Standard, cell(&u, &e), &mut plain).unwrap();
        let th: Vec<Dual1> = seed_parameter(&[2.0, 0.5]).unwrap();
        let mut cov = SimPath::<Dual1>::new(5);
        m.simulate(&th, &SimMode::cov(&[2.0, 0.5]), cell(&u, &e), &mut cov).unwrap();
        for t in 0..5 {
            assert_eq!(cov.y[t].value, plain.y[t]);
            assert_eq!(cov.w[t].value, 1.0);
        }
        // u = 0.1 jumps, so dy_1/dμ = v_1
        assert_eq!(cov.y[0].grad[0], inv_exp_cdf(0.3, 1.0).unwrap());
        assert!(cov.y[2].grad[1] != 0.0);
    }

    #[test]
    fn step_weight_by_branch() {
        let m = ExpAr::new();
        let th: Vec<Dual1> = seed_parameter(&[1.0, 0.6]).unwrap();
        let mut out = SimPath::<Dual1>::new(2);
        m.simulate(&th, &SimMode::cov(&[1.0, 0.5]), cell(&[0.3, 0.7], &[0.5, 0.5]), &mut out)
            .unwrap();
        assert!((out.w[0].value - 1.2).abs() < 1e-15);
        assert!((out.w[1].value - 1.2 * 0.8).abs() < 1e-15);
    }
}
