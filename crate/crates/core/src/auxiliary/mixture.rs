//! Two-component Gaussian mixture used as the auxiliary model for series
//! without regressors.
//!
//! With `β = (μ1, σ1², μ2, σ2², π)` and posterior weight
//! `γ(y) = π φ(y; μ2, σ2²) / [(1 - π) φ(y; μ1, σ1²) + π φ(y; μ2, σ2²)]`,
//! the moment vector is
//! `((1-γ)(y-μ1), γ(y-μ2), (1-γ)((y-μ1)² - σ1²), γ((y-μ2)² - σ2²), γ - π)`.
//! Each component has zero mean under the mixture itself, because
//! `γ(y) f(y) = π f_2(y)`.

use crate::autodiff::{Dual1, Scalar};
use crate::error::{Error, Result};

/// Number of mixture parameters.
pub const MIXTURE_DIM: usize = 5;

const EM_MAX_ITER: usize = 5000;
const EM_TOL: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 50;

/// Validates `β = (μ1, σ1², μ2, σ2², π)`.
pub fn check_mixture(beta: &[f64]) -> Result<()> {
    if beta.len() != MIXTURE_DIM {
        return Err(Error::invalid(format!("mixture takes 5 parameters, got {}", beta.len())));
    }
    if !(beta[1] > 0.0) {
        return Err(Error::Domain {
            function: "mixture_moments",
            value: beta[1],
        });
    }
    if !(beta[3] > 0.0) {
        return Err(Error::Domain {
            function: "mixture_moments",
            value: beta[3],
        });
    }
    if !(beta[4] > 0.0 && beta[4] < 1.0) {
        return Err(Error::Domain {
            function: "mixture_moments",
            value: beta[4],
        });
    }
    Ok(())
}

/// Posterior probability of the second component.
pub fn posterior<S: Scalar>(y: S, beta: &[S]) -> Result<S> {
    let (mu1, s1, mu2, s2, pi) = (beta[0], beta[1], beta[2], beta[3], beta[4]);
    let e1 = y - mu1;
    let e2 = y - mu2;
    // log[(1-π) f_1 / (π f_2)]
    let d = (-pi + 1.0).ln()? - pi.ln()? - (s1.ln()? - s2.ln()?) * 0.5 - e1 * e1 / (s1 * 2.0) + e2 * e2 / (s2 * 2.0);
    Ok(if d.value() <= 0.0 {
        S::one() / (d.exp() + 1.0)
    } else {
        let e = (-d).exp();
        e / (e + 1.0)
    })
}

/// Moment vector at one observation.
pub fn mixture_moments<S: Scalar>(y: S, beta: &[S]) -> Result<[S; MIXTURE_DIM]> {
    let vals: Vec<f64> = beta.iter().map(|b| b.value()).collect();
    check_mixture(&vals)?;
    let g = posterior(y, beta)?;
    let h = -g + 1.0;
    let e1 = y - beta[0];
    let e2 = y - beta[2];
    Ok([h * e1, g * e2, h * (e1 * e1 - beta[1]), g * (e2 * e2 - beta[3]), g - beta[4]])
}

/// Weighted mean `Σ w_t m(y_t, β) / Σ w_t` with a constant `β`.
fn weighted_mean_moments<S: Scalar>(y: &[f64], w: &[f64], beta: &[S]) -> Result<[S; MIXTURE_DIM]> {
    let mut acc = [S::zero(); MIXTURE_DIM];
    let mut total = 0.0;
    for (&yt, &wt) in y.iter().zip(w) {
        let m = mixture_moments(S::cst(yt), beta)?;
        for k in 0..MIXTURE_DIM {
            acc[k] += m[k] * wt;
        }
        total += wt;
    }
    for a in acc.iter_mut() {
        *a = *a / total;
    }
    Ok(acc)
}

/// Jacobian of the weighted mean moments in `β`, row-major 5x5.
pub(crate) fn mixture_jacobian(y: &[f64], w: &[f64], beta: &[f64]) -> Result<[f64; MIXTURE_DIM * MIXTURE_DIM]> {
    let b: Vec<Dual1> = beta.iter().enumerate().map(|(k, &v)| Dual1::variable(v, k)).collect();
    let m = weighted_mean_moments(y, w, &b)?;
    let mut jac = [0.0; MIXTURE_DIM * MIXTURE_DIM];
    for r in 0..MIXTURE_DIM {
        for c in 0..MIXTURE_DIM {
            jac[r * MIXTURE_DIM + c] = m[r].grad[c];
        }
    }
    Ok(jac)
}

fn median_split(y: &[f64], w: &[f64]) -> [f64; MIXTURE_DIM] {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let half = y.len() / 2;
    let stats = |part: &[usize]| {
        let sw: f64 = part.iter().map(|&k| w[k]).sum();
        let mean = part.iter().map(|&k| w[k] * y[k]).sum::<f64>() / sw;
        let var = part.iter().map(|&k| w[k] * (y[k] - mean).powi(2)).sum::<f64>() / sw;
        (mean, var)
    };
    let (m1, v1) = stats(&idx[..half]);
    let (m2, v2) = stats(&idx[half..]);
    let (_, vall) = stats(&idx);
    let floor = 1e-6 * vall.max(f64::MIN_POSITIVE);
    [m1, v1.max(floor), m2, v2.max(floor), 0.5]
}

fn em_step(y: &[f64], w: &[f64], beta: &[f64; MIXTURE_DIM]) -> Result<[f64; MIXTURE_DIM]> {
    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut total = 0.0;
    for (&yt, &wt) in y.iter().zip(w) {
        let g = posterior(yt, beta)?;
        let (a, b) = (wt * (1.0 - g), wt * g);
        a0 += a;
        a1 += a * yt;
        a2 += a * yt * yt;
        b0 += b;
        b1 += b * yt;
        b2 += b * yt * yt;
        total += wt;
    }
    if !(a0 > 0.0 && b0 > 0.0) {
        return Err(Error::RankDeficient("mixture component lost all mass".into()));
    }
    let (m1, m2) = (a1 / a0, b1 / b0);
    let next = [m1, a2 / a0 - m1 * m1, m2, b2 / b0 - m2 * m2, b0 / total];
    check_mixture(&next)?;
    Ok(next)
}

/// Solves `Σ w_t m(y_t, β) = 0` for `β`: expectation-maximisation from a
/// median split, then Newton polishing with an exact Jacobian.
pub fn fit_mixture(y: &[f64], w: &[f64]) -> Result<[f64; MIXTURE_DIM]> {
    if y.len() < 4 || y.len() != w.len() {
        return Err(Error::invalid("mixture fit needs at least 4 weighted observations"));
    }
    let mut beta = median_split(y, w);
    check_mixture(&beta)?;
    for _ in 0..EM_MAX_ITER {
        let next = em_step(y, w, &beta)?;
        let change = next
            .iter()
            .zip(&beta)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / (1.0 + b.abs())));
        beta = next;
        if change < EM_TOL {
            break;
        }
    }
    for _ in 0..NEWTON_MAX_ITER {
        let f = weighted_mean_moments::<f64>(y, w, &beta)?;
        let norm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm < 1e-14 {
            break;
        }
        let mut jac = mixture_jacobian(y, w, &beta)?.to_vec();
        let mut step = f.to_vec();
        crate::linalg::solve_in_place(&mut jac, &mut step, MIXTURE_DIM)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = beta;
            for k in 0..MIXTURE_DIM {
                trial[k] -= t * step[k];
            }
            if check_mixture(&trial).is_ok() {
                let ft = weighted_mean_moments::<f64>(y, w, &trial)?;
                if ft.iter().fold(0.0f64, |m, v| m.max(v.abs())) < norm {
                    beta = trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(beta)
}
