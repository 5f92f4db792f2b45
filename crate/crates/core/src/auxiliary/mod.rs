//! Auxiliary models: linear regressions with closed-form fits, and a
//! Gaussian mixture for series without regressors.
//!
//! Exogenous regressors come from the observed data. Regressors built from a
//! lagged outcome take that lag from whichever path is being evaluated, so a
//! simulated path is paired with its own history. The observed Gram matrices
//! are factorised once for the observed fit; simulated fits solve their own
//! Jacobian-weighted normal equations.

mod mixture;

pub use mixture::{check_mixture, fit_mixture, mixture_moments, posterior, MIXTURE_DIM};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::autodiff::Scalar;
use crate::cov::WeightedMoments;
use crate::data::PanelData;
use crate::error::{Error, Result};
use crate::linalg::{condition_number, spd_inverse};
use crate::models::{AuxKind, Model, SimMode};
use crate::sim::{PathView, Simulator};

/// Largest regressor count of any equation.
const ZMAX: usize = 4;

/// Gram matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// An auxiliary model bound to an observed dataset.
#[derive(Clone, Debug)]
pub struct AuxDesign {
    kind: AuxKind,
    n: usize,
    periods: usize,
    eq_dims: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
    /// Regressor rows, `ZMAX` slots per `(unit, period)`.
    z: Vec<f64>,
    zlen: Vec<usize>,
    gram_inv: Vec<DMatrix<f64>>,
}

impl AuxDesign {
    /// Builds the regressors from `data` and checks that every Gram matrix is
    /// well conditioned.
    pub fn new(model: &Model, data: &PanelData) -> Result<Self> {
        model.check_data(data)?;
        let kind = model.info().aux;
        let (n, periods) = (data.n(), data.periods());
        let zlen: Vec<usize> = (0..periods)
            .map(|t| match kind {
                AuxKind::Sur => {
                    if t == 0 {
                        2
                    } else {
                        4
                    }
                }
                AuxKind::OrderedSur { .. } => {
                    if t == 0 {
                        2
                    } else {
                        3
                    }
                }
                AuxKind::PooledAr | AuxKind::PooledLinear => 2,
                AuxKind::Scalar => 1,
                AuxKind::Mixture => 0,
            })
            .collect();
        let eq_dims: Vec<usize> = match kind {
            AuxKind::Sur => zlen.clone(),
            AuxKind::OrderedSur { levels } => zlen.iter().flat_map(|&k| std::iter::repeat_n(k, levels)).collect(),
            AuxKind::PooledAr | AuxKind::PooledLinear | AuxKind::Scalar => vec![zlen[0]],
            AuxKind::Mixture => vec![MIXTURE_DIM],
        };
        let mut offsets = Vec::with_capacity(eq_dims.len());
        let mut dim = 0;
        for &k in &eq_dims {
            offsets.push(dim);
            dim += k;
        }
        if dim < model.dim() {
            return Err(Error::invalid(format!(
                "auxiliary model has {dim} parameters, fewer than the {} structural parameters",
                model.dim()
            )));
        }
        let dx = data.dx();
        let mut z = vec![0.0; n * periods * ZMAX];
        for i in 0..n {
            let x = data.x_unit(i);
            for t in 0..periods {
                let row = &mut z[(i * periods + t) * ZMAX..][..ZMAX];
                let ylag = if t == 0 { 0.0 } else { data.y(i, t - 1) };
                match kind {
                    AuxKind::Sur => {
                        row[0] = 1.0;
                        row[1] = x[t * dx];
                        if t > 0 {
                            row[2] = x[(t - 1) * dx];
                            row[3] = ylag;
                        }
                    }
                    AuxKind::OrderedSur { .. } => {
                        row[0] = 1.0;
                        row[1] = x[t * dx];
                        if t > 0 {
                            row[2] = ylag;
                        }
                    }
                    AuxKind::PooledAr => {
                        row[0] = 1.0;
                        row[1] = ylag;
                    }
                    AuxKind::PooledLinear => {
                        row[0] = 1.0;
                        row[1] = x[t * dx];
                    }
                    AuxKind::Scalar => row[0] = x[t * dx],
                    AuxKind::Mixture => {}
                }
            }
        }
        let mut design = AuxDesign {
            kind,
            n,
            periods,
            eq_dims,
            offsets,
            dim,
            z,
            zlen,
            gram_inv: Vec::new(),
        };
        if kind != AuxKind::Mixture {
            design.gram_inv = design.build_grams()?;
        }
        Ok(design)
    }

    fn build_grams(&self) -> Result<Vec<DMatrix<f64>>> {
        let mut grams: Vec<DMatrix<f64>> = self.eq_dims.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        for i in 0..self.n {
            for t in 0..self.periods {
                let z = self.zrow(i, t);
                let (first, count) = self.eqs_at(t);
                let g = &mut grams[first];
                for a in 0..z.len() {
                    for b in 0..z.len() {
                        g[(a, b)] += z[a] * z[b];
                    }
                }
                for e in first + 1..first + count {
                    grams[e] = grams[first].clone();
                }
            }
        }
        grams
            .iter()
            .enumerate()
            .map(|(e, g)| {
                let cond = condition_number(g);
                if !(cond <= MAX_CONDITION) {
                    return Err(Error::RankDeficient(format!(
                        "auxiliary equation {e}: regressor Gram matrix has condition number {cond:.3e}"
                    )));
                }
                spd_inverse(g, &format!("regressor Gram matrix of auxiliary equation {e}"))
            })
            .collect()
    }

    pub fn kind(&self) -> AuxKind {
        self.kind
    }

    /// Number of auxiliary parameters `d_β`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Observations per unit entering the moment covariance: one per period
    /// for series designs, one per unit otherwise.
    pub fn obs_per_unit(&self) -> usize {
        match self.kind {
            AuxKind::PooledAr | AuxKind::Mixture => self.periods,
            _ => 1,
        }
    }

    /// Number of independent observations the moments average over.
    pub fn n_obs(&self) -> usize {
        self.n * self.obs_per_unit()
    }

    /// Regressors of the equation(s) at `(unit, period)`.
    pub fn zrow(&self, i: usize, t: usize) -> &[f64] {
        &self.z[(i * self.periods + t) * ZMAX..][..self.zlen[t]]
    }

    /// Slot of the lagged outcome in the regressor row at period `t`.
    fn lag_slot(&self, t: usize) -> Option<usize> {
        match self.kind {
            AuxKind::Sur if t > 0 => Some(3),
            AuxKind::OrderedSur { .. } if t > 0 => Some(2),
            AuxKind::PooledAr => Some(1),
            _ => None,
        }
    }

    /// Regressors at `(unit, period)` with the lagged outcome taken from `y`.
    fn z_at<S: Scalar>(&self, i: usize, t: usize, y: &[S]) -> ([S; ZMAX], usize) {
        let base = self.zrow(i, t);
        let mut z = [S::zero(); ZMAX];
        for (a, &v) in base.iter().enumerate() {
            z[a] = S::cst(v);
        }
        if let Some(k) = self.lag_slot(t) {
            z[k] = if t == 0 { S::zero() } else { y[t - 1] };
        }
        (z, base.len())
    }

    /// First equation index and equation count at period `t`.
    fn eqs_at(&self, t: usize) -> (usize, usize) {
        match self.kind {
            AuxKind::Sur => (t, 1),
            AuxKind::OrderedSur { levels } => (t * levels, levels),
            _ => (0, 1),
        }
    }

    /// Response of the `k`-th equation at a period.
    fn response<S: Scalar>(&self, y: S, k: usize) -> S {
        match self.kind {
            AuxKind::OrderedSur { .. } => S::cst(if y.value() == (k + 1) as f64 { 1.0 } else { 0.0 }),
            _ => y,
        }
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim {
            return Err(Error::invalid(format!(
                "auxiliary parameter has length {}, expected {}",
                beta.len(),
                self.dim
            )));
        }
        if self.kind == AuxKind::Mixture {
            check_mixture(beta)?;
        }
        Ok(())
    }

    /// Adds `scale · m(y_t, z_t, β) w_t` for one unit's path to `out`.
    fn add_path_moments<S: Scalar>(&self, i: usize, y: &[S], w: &[S], beta: &[f64], scale: f64, out: &mut [S]) -> Result<()> {
        if self.kind == AuxKind::Mixture {
            let b: Vec<S> = beta.iter().map(|&v| S::cst(v)).collect();
            for t in 0..self.periods {
                let m = mixture_moments(y[t], &b)?;
                let ws = w[t] * scale;
                for k in 0..MIXTURE_DIM {
                    out[k] += m[k] * ws;
                }
            }
            return Ok(());
        }
        for t in 0..self.periods {
            let (zbuf, len) = self.z_at(i, t, y);
            let z = &zbuf[..len];
            let (first, count) = self.eqs_at(t);
            let ws = w[t] * scale;
            for k in 0..count {
                let e = first + k;
                let off = self.offsets[e];
                let mut fit = S::zero();
                for (&za, &b) in z.iter().zip(&beta[off..off + len]) {
                    fit += za * b;
                }
                let resid = (self.response(y[t], k) - fit) * ws;
                for (a, &za) in z.iter().enumerate() {
                    out[off + a] += resid * za;
                }
            }
        }
        Ok(())
    }

    /// Per-observation moment contributions on the observed data, one row per
    /// observation.
    pub fn observed_contributions(&self, data: &PanelData, beta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_beta(beta)?;
        self.check_shape(data)?;
        let per = self.obs_per_unit();
        let mut rows = DMatrix::zeros(self.n_obs(), self.dim);
        let mut buf = vec![0.0; self.dim];
        let ones = vec![1.0; self.periods];
        for i in 0..self.n {
            let y = data.y_unit(i);
            if per == 1 {
                buf.iter_mut().for_each(|v| *v = 0.0);
                self.add_path_moments(i, y, &ones, beta, 1.0, &mut buf)?;
                rows.row_mut(i).copy_from_slice(&buf);
            } else {
                for t in 0..self.periods {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    let mut w = vec![0.0; self.periods];
                    w[t] = 1.0;
                    self.add_path_moments(i, y, &w, beta, 1.0, &mut buf)?;
                    rows.row_mut(i * per + t).copy_from_slice(&buf);
                }
            }
        }
        Ok(rows)
    }

    /// Mean observed moment vector `n^{-1} Σ m(y_i, z_i, β)`.
    pub fn observed_moments(&self, data: &PanelData, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        self.check_shape(data)?;
        let mut out = vec![0.0; self.dim];
        let ones = vec![1.0; self.periods];
        let scale = 1.0 / self.n_obs() as f64;
        for i in 0..self.n {
            self.add_path_moments(i, data.y_unit(i), &ones, beta, scale, &mut out)?;
        }
        Ok(out)
    }

    fn check_shape(&self, data: &PanelData) -> Result<()> {
        if data.n() != self.n || data.periods() != self.periods {
            return Err(Error::invalid(format!(
                "dataset is {} x {}, auxiliary design was built for {} x {}",
                data.n(),
                data.periods(),
                self.n,
                self.periods
            )));
        }
        Ok(())
    }

    /// Auxiliary estimate `β̂` on the observed data.
    pub fn fit_observed(&self, data: &PanelData) -> Result<Vec<f64>> {
        self.check_shape(data)?;
        if self.kind == AuxKind::Mixture {
            let y = data.y_values();
            return Ok(fit_mixture(y, &vec![1.0; y.len()])?.to_vec());
        }
        let mut zy = vec![0.0; self.dim];
        for i in 0..self.n {
            for t in 0..self.periods {
                let z = self.zrow(i, t);
                let (first, count) = self.eqs_at(t);
                for k in 0..count {
                    let r = self.response(data.y(i, t), k);
                    let off = self.offsets[first + k];
                    for (a, &za) in z.iter().enumerate() {
                        zy[off + a] += za * r;
                    }
                }
            }
        }
        Ok(self.apply_gram_inv(&zy, 1.0))
    }

    /// `β_e = (Σ z z')^{-1} b_e · scale` block by block.
    fn apply_gram_inv<S: Scalar>(&self, b: &[S], scale: f64) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim];
        for (e, g) in self.gram_inv.iter().enumerate() {
            let off = self.offsets[e];
            let k = self.eq_dims[e];
            for a in 0..k {
                let mut s = S::zero();
                for c in 0..k {
                    s += b[off + c] * g[(a, c)];
                }
                out[off + a] = s * scale;
            }
        }
        out
    }

    /// Jacobian-weighted simulated moments `M_n(θ, θ*, β)`.
    pub fn weighted_moments<S: Scalar>(
        &self,
        sim: &Simulator<'_>,
        theta: &[S],
        mode: &SimMode,
        beta: &[f64],
    ) -> Result<WeightedMoments<S>> {
        self.check_beta(beta)?;
        self.check_shape(sim.data)?;
        let scale = 1.0 / (self.n_obs() * sim.reps()) as f64;
        let m = sim.fold(
            theta,
            mode,
            || vec![S::zero(); self.dim],
            |acc, p: PathView<'_, S>| self.add_path_moments(p.i, p.y, p.w, beta, scale, acc),
            |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
        )?;
        let out = WeightedMoments {
            m,
            n: self.n_obs(),
            reps: sim.reps(),
        };
        if !out.is_finite() {
            return Err(Error::contract("simulated auxiliary moments are not finite"));
        }
        Ok(out)
    }

    /// Average simulated auxiliary estimate `β̄^R(θ, θ*)`.
    ///
    /// Each regression solves `Σ_r Σ_i w z (y - z'β) = 0` over all simulated
    /// paths. The mixture is refitted on each replication; derivatives pass
    /// through the fit by one Newton step in the dual numbers at the
    /// converged solution.
    pub fn binding_avg<S: Scalar>(&self, sim: &Simulator<'_>, theta: &[S], mode: &SimMode) -> Result<Vec<S>> {
        self.check_shape(sim.data)?;
        if self.kind == AuxKind::Mixture {
            return self.binding_mixture(sim, theta, mode);
        }
        let gram_len: usize = self.eq_dims.iter().map(|k| k * k).sum();
        let (gram, rhs) = sim.fold(
            theta,
            mode,
            || (vec![S::zero(); gram_len], vec![S::zero(); self.dim]),
            |acc: &mut (Vec<S>, Vec<S>), p: PathView<'_, S>| {
                self.add_normal_equations(p.i, p.y, p.w, &mut acc.0, &mut acc.1);
                Ok(())
            },
            |a, b| {
                a.0.iter_mut().zip(b.0).for_each(|(x, y)| *x += y);
                a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
            },
        )?;
        let out = self.solve_blocks(gram, rhs)?;
        if out.iter().any(|v| !v.value().is_finite()) {
            return Err(Error::contract("simulated binding function is not finite"));
        }
        Ok(out)
    }

    /// Adds `w z z'` and `w z y` of one path to packed per-equation blocks.
    fn add_normal_equations<S: Scalar>(&self, i: usize, y: &[S], w: &[S], gram: &mut [S], rhs: &mut [S]) {
        for t in 0..self.periods {
            let (zbuf, len) = self.z_at(i, t, y);
            let z = &zbuf[..len];
            let (first, count) = self.eqs_at(t);
            for k in 0..count {
                let e = first + k;
                let off = self.offsets[e];
                let goff: usize = self.eq_dims[..e].iter().map(|d| d * d).sum();
                let r = self.response(y[t], k) * w[t];
                for a in 0..len {
                    rhs[off + a] += r * z[a];
                    let wz = w[t] * z[a];
                    for b in 0..len {
                        gram[goff + a * len + b] += wz * z[b];
                    }
                }
            }
        }
    }

    fn solve_blocks<S: Scalar>(&self, mut gram: Vec<S>, mut rhs: Vec<S>) -> Result<Vec<S>> {
        let mut goff = 0;
        for (e, &k) in self.eq_dims.iter().enumerate() {
            let off = self.offsets[e];
            crate::linalg::solve_in_place(&mut gram[goff..goff + k * k], &mut rhs[off..off + k], k)
                .map_err(|_| Error::RankDeficient(format!("weighted simulated Gram matrix of auxiliary equation {e}")))?;
            goff += k * k;
        }
        Ok(rhs)
    }

    fn binding_mixture<S: Scalar>(&self, sim: &Simulator<'_>, theta: &[S], mode: &SimMode) -> Result<Vec<S>> {
        let reps = sim.reps();
        let paths = sim.fold(
            theta,
            mode,
            Vec::new,
            |acc: &mut Vec<(usize, Vec<S>, Vec<S>)>, p: PathView<'_, S>| {
                acc.push((p.r, p.y.to_vec(), p.w.to_vec()));
                Ok(())
            },
            |a, b| a.extend(b),
        )?;
        let mut out = vec![S::zero(); MIXTURE_DIM];
        for r in 0..reps {
            let (mut ys, mut ws) = (Vec::new(), Vec::new());
            for (pr, y, w) in &paths {
                if *pr == r {
                    ys.extend_from_slice(y);
                    ws.extend_from_slice(w);
                }
            }
            let yv: Vec<f64> = ys.iter().map(|v| v.value()).collect();
            let wv: Vec<f64> = ws.iter().map(|v| v.value()).collect();
            let beta = fit_mixture(&yv, &wv)?;
            // β_S = β - J^{-1} F_S(β) with F_S the dual-valued weighted moments
            let bs: Vec<S> = beta.iter().map(|&v| S::cst(v)).collect();
            let mut f = vec![S::zero(); MIXTURE_DIM];
            let total: f64 = wv.iter().sum();
            for (&y, &w) in ys.iter().zip(&ws) {
                let m = mixture_moments(y, &bs)?;
                for k in 0..MIXTURE_DIM {
                    f[k] += m[k] * w / total;
                }
            }
            let mut jac_s: Vec<S> = mixture::mixture_jacobian(&yv, &wv, &beta)?.iter().map(|&v| S::cst(v)).collect();
            crate::linalg::solve_in_place(&mut jac_s, &mut f, MIXTURE_DIM)?;
            for k in 0..MIXTURE_DIM {
                out[k] += (-f[k] + beta[k]) / reps as f64;
            }
        }
        Ok(out)
    }

    /// Binding function at `θ = θ*` obtained by solving the weighted
    /// simulated moment equations `M_n(θ*, θ*, β) = 0` directly.
    pub fn binding_moment_form(&self, sim: &Simulator<'_>, theta_star: &[f64]) -> Result<Vec<f64>> {
        self.check_shape(sim.data)?;
        let mode = SimMode::cov(theta_star);
        if self.kind == AuxKind::Mixture {
            let (ys, ws) = sim.fold(
                theta_star,
                &mode,
                || (Vec::new(), Vec::new()),
                |acc: &mut (Vec<f64>, Vec<f64>), p: PathView<'_, f64>| {
                    acc.0.extend_from_slice(p.y);
                    acc.1.extend_from_slice(p.w);
                    Ok(())
                },
                |a, b| {
                    a.0.extend(b.0);
                    a.1.extend(b.1);
                },
            )?;
            return Ok(fit_mixture(&ys, &ws)?.to_vec());
        }
        // Solve Σ w z (y - z'β) = 0 per equation with nalgebra
        let mut grams: Vec<DMatrix<f64>> = self.eq_dims.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        let mut rhs: Vec<DVector<f64>> = self.eq_dims.iter().map(|&k| DVector::zeros(k)).collect();
        let parts = sim.fold(
            theta_star,
            &mode,
            Vec::new,
            |acc: &mut Vec<(usize, Vec<f64>, Vec<f64>)>, p: PathView<'_, f64>| {
                acc.push((p.i, p.y.to_vec(), p.w.to_vec()));
                Ok(())
            },
            |a, b| a.extend(b),
        )?;
        for (i, y, w) in &parts {
            for t in 0..self.periods {
                let (zbuf, len) = self.z_at(*i, t, y);
                let z = &zbuf[..len];
                let (first, count) = self.eqs_at(t);
                for k in 0..count {
                    let e = first + k;
                    let r = self.response(y[t], k);
                    for a in 0..len {
                        rhs[e][a] += w[t] * z[a] * r;
                        for b in 0..len {
                            grams[e][(a, b)] += w[t] * z[a] * z[b];
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; self.dim];
        for e in 0..grams.len() {
            let sol = crate::linalg::spd_solve(&grams[e], &rhs[e], "weighted simulated Gram matrix")?;
            out[self.offsets[e]..self.offsets[e] + self.eq_dims[e]].copy_from_slice(sol.as_slice());
        }
        Ok(out)
    }

    /// Moment covariance `Ξ̂ = n^{-1} Σ m_i m_i'` on the observed data.
    pub fn moment_covariance(&self, data: &PanelData, beta: &[f64]) -> Result<DMatrix<f64>> {
        let rows = self.observed_contributions(data, beta)?;
        let n = rows.nrows() as f64;
        let xi = rows.transpose() * &rows / n;
        if xi.iter().any(|v| !v.is_finite()) {
            warn!("moment covariance has non-finite entries");
            return Err(Error::contract("moment covariance is not finite"));
        }
        Ok(xi)
    }
}

/// Jacobian-weighted simulated moments at a dual-valued `θ` seeded at `θ*`.
pub fn weighted_moment_panel<S: Scalar>(
    aux: &AuxDesign,
    sim: &Simulator<'_>,
    theta: &[S],
    theta_star: &[f64],
    beta: &[f64],
) -> Result<WeightedMoments<S>> {
    aux.weighted_moments(sim, theta, &SimMode::cov(theta_star), beta)
}
