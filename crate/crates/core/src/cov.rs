//! Change of variables for piecewise-constant simulated outcomes.
//!
//! A simulated outcome that depends on a uniform draw `u` only through which
//! segment `(c^j, c^{j+1}]` of a parameter-dependent grid it falls into is
//! discontinuous in the parameters. Mapping `u` affinely from the segment at
//! an anchor `θ*` onto the same segment at `θ` keeps the outcome fixed and
//! moves the probability mass into a Jacobian weight, which is smooth in `θ`.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

pub use crate::auxiliary::weighted_moment_panel;

/// Occupied segments narrower than this at the anchor are rejected.
pub const DEGENERATE_WIDTH: f64 = 1e-12;

/// How Jacobian weights combine along a simulated path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accumulation {
    /// Each `(i, t)` moment term carries the weight of its own draw.
    PerCell,
    /// Period `t` carries the running product `Π_{s ≤ t} w_s`.
    Sequential,
}

/// Output of [`cov_transform`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovResult<S> {
    pub u_new: S,
    pub weight: S,
    pub segment: usize,
}

/// Signature shared by [`cov_transform`] and test doubles of it.
pub type CovFn<S> = fn(f64, &[S], &[f64]) -> Result<CovResult<S>>;

fn check_endpoints(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::contract(format!(
            "critical grid needs at least two points, got {}",
            grid.len()
        )));
    }
    if grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 {
        return Err(Error::contract(format!(
            "critical grid must start at 0 and end at 1, got {} .. {}",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    Ok(())
}

/// Checks the structural invariants of a critical grid: endpoints at 0 and 1
/// and non-decreasing interior points. Coincident points (an empty segment,
/// e.g. when a normal CDF saturates to 1.0) are allowed.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    check_endpoints(grid)?;
    for (k, w) in grid.windows(2).enumerate() {
        if !(w[1] >= w[0]) {
            return Err(Error::contract(format!(
                "critical grid decreases between points {k} and {}: {} then {}",
                k + 1,
                w[0],
                w[1]
            )));
        }
    }
    Ok(())
}

/// Finds the segment `j` with `c^j < u <= c^{j+1}`.
pub fn locate_segment(u: f64, grid: &[f64]) -> Result<usize> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            function: "locate_segment",
            value: u,
        });
    }
    validate_grid(grid)?;
    Ok(grid.partition_point(|&c| c < u) - 1)
}

/// Maps `u` from its segment on the anchor grid onto the matching segment of
/// the grid at `θ`, returning the new draw and the Jacobian `du'/du`.
///
/// When `grid_theta` carries the same values as `grid_star` the result is
/// `u_new == u` and `weight == 1` exactly.
pub fn cov_transform<S: Scalar>(u: f64, grid_theta: &[S], grid_star: &[f64]) -> Result<CovResult<S>> {
    if grid_theta.len() != grid_star.len() {
        return Err(Error::invalid(format!(
            "grid lengths differ: {} at theta, {} at anchor",
            grid_theta.len(),
            grid_star.len()
        )));
    }
    let j = locate_segment(u, grid_star)?;
    let lo_star = grid_star[j];
    let width_star = grid_star[j + 1] - lo_star;
    if width_star < DEGENERATE_WIDTH {
        return Err(Error::DegenerateSegment {
            i: 0,
            t: 0,
            r: 0,
            width: width_star,
            threshold: DEGENERATE_WIDTH,
        });
    }
    let lo = grid_theta[j];
    let ratio = (grid_theta[j + 1] - lo) / width_star;
    // u + (c^j(θ) - c^j(θ*)) + (ratio - 1)(u - c^j(θ*)) equals the affine map
    // and collapses to u exactly when the grids coincide.
    let u_new = (lo - lo_star) + (ratio - 1.0) * (u - lo_star) + u;
    Ok(CovResult {
        u_new,
        weight: ratio,
        segment: j,
    })
}

/// Outcome level for a located segment.
pub fn simulated_outcome<S: Scalar>(levels: &[S], segment: usize) -> Result<S> {
    levels.get(segment).copied().ok_or_else(|| {
        Error::invalid(format!(
            "segment {segment} out of range for {} outcome levels",
            levels.len()
        ))
    })
}

/// Jacobian-weighted simulated moment vector `M_n(θ, θ*, β)`.
#[derive(Clone, Debug)]
pub struct WeightedMoments<S> {
    pub m: Vec<S>,
    pub n: usize,
    pub reps: usize,
}

impl<S: Scalar> WeightedMoments<S> {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.m.iter().map(|v| v.value()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.value().is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual1;

    #[test]
    fn locate_examples() {
        assert_eq!(locate_segment(0.7, &[0.0, 0.4, 1.0]).unwrap(), 1);
        assert_eq!(locate_segment(0.4, &[0.0, 0.4, 1.0]).unwrap(), 0);
        assert_eq!(locate_segment(0.05, &[0.0, 0.2, 0.7, 1.0]).unwrap(), 0);
        assert_eq!(locate_segment(0.7, &[0.0, 0.2, 0.7, 1.0]).unwrap(), 1);
        assert_eq!(locate_segment(0.71, &[0.0, 0.2, 0.7, 1.0]).unwrap(), 2);
    }

    #[test]
    fn locate_rejects_bad_input() {
        assert!(matches!(
            locate_segment(0.5, &[0.0, 0.6, 0.3, 1.0]),
            Err(Error::ContractViolation(_))
        ));
        assert!(locate_segment(0.5, &[0.1, 1.0]).is_err());
        assert!(locate_segment(0.0, &[0.0, 1.0]).is_err());
        assert!(locate_segment(1.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn saturated_grid_gives_empty_segment() {
        assert_eq!(locate_segment(0.999, &[0.0, 1.0, 1.0]).unwrap(), 0);
        assert_eq!(locate_segment(0.3, &[0.0, 0.0, 1.0]).unwrap(), 1);
    }

    #[test]
    fn transform_hand_example() {
        let g = [0.0, 0.6, 1.0];
        let r = cov_transform(0.25, &g, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(r.segment, 0);
        assert!((r.u_new - 0.30).abs() < 1e-15);
        assert!((r.weight - 1.2).abs() < 1e-15);
    }

    #[test]
    fn transform_identity_at_anchor() {
        let star = [0.0, 0.123, 0.77, 1.0];
        let theta: Vec<Dual1> = star.iter().map(|&c| Dual1::variable(c, 0)).collect();
        for &u in &[1e-9, 0.05, 0.123, 0.5, 0.77, 0.9999] {
            let r = cov_transform(u, &theta, &star).unwrap();
            assert_eq!(r.u_new.value, u);
            assert_eq!(r.weight.value, 1.0);
        }
        let r = cov_transform(0.42, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!((r.u_new, r.weight, r.segment), (0.42, 1.0, 0));
    }

    #[test]
    fn degenerate_segment_is_an_error() {
        let star = [0.0, 0.5, 0.5 + 1e-14, 1.0];
        let e = cov_transform(0.5 + 5e-15, &star, &star).unwrap_err();
        assert!(matches!(e, Error::DegenerateSegment { .. }));
        assert!(matches!(
            e.at_cell(3, 1, 2),
            Error::DegenerateSegment { i: 3, t: 1, r: 2, .. }
        ));
    }

    #[test]
    fn outcome_level_lookup() {
        assert_eq!(simulated_outcome(&[0.0, 1.0, 2.0], 1).unwrap(), 1.0);
        assert!(simulated_outcome(&[0.0, 1.0], 2).is_err());
    }
}
