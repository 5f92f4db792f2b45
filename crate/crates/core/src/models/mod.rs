//! Structural models.
//!
//! Every model simulates one unit's path at a time from fixed uniforms, in
//! one of three modes: plain (hard indicators), change of variables anchored
//! at `θ*`, or kernel-smoothed indicators. The path code is generic over
//! [`Scalar`] so the same routine yields values, gradients or Hessians.

mod binary;
mod expar;
mod ordered;
mod queue;
mod toy;

pub use binary::{BinaryAr, DynamicBinary};
pub use expar::ExpAr;
pub use ordered::OrderedProbit;
pub use queue::Mm1Queue;
pub use toy::{LinearGaussian, ToyThreshold};

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::cov::{cov_transform, Accumulation, CovResult};
use crate::data::PanelData;
use crate::error::{Error, Result};
use crate::randsrc::{inv_normal_cdf, make_uniform_panel, SeedSpec, UniformPanel};

/// Substream identifiers; every random quantity in the pipeline has its own.
pub mod streams {
    pub const EXOG: u64 = 1;
    pub const OBS_MAIN: u64 = 2;
    pub const OBS_EXTRA: u64 = 3;
    pub const SIM_MAIN: u64 = 4;
    pub const SIM_EXTRA: u64 = 5;
    pub const SIM2_MAIN: u64 = 6;
    pub const SIM2_EXTRA: u64 = 7;
}

/// Smoothing kernel used in place of indicators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Normal,
    Logistic,
}

impl KernelKind {
    /// Smoothed version of `1[s > 0]` at unit bandwidth.
    pub fn smooth<S: Scalar>(self, s: S) -> S {
        match self {
            KernelKind::Normal => s.norm_cdf(),
            KernelKind::Logistic => S::one() / ((-s).exp() + 1.0),
        }
    }
}

/// How indicators are evaluated during a simulation.
#[derive(Clone, Debug, PartialEq)]
pub enum SimMode {
    /// Hard indicators at `θ`.
    Standard,
    /// Change of variables anchored at `theta_star`.
    Cov { theta_star: Vec<f64> },
    /// `1[s > 0]` replaced by `K(s / bandwidth)`.
    Kernel { bandwidth: f64, kind: KernelKind },
}

impl SimMode {
    pub fn cov(theta_star: &[f64]) -> Self {
        SimMode::Cov {
            theta_star: theta_star.to_vec(),
        }
    }
}

/// Which auxiliary model a structural model is matched with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxKind {
    /// Per-period linear probability equations with lagged regressors.
    Sur,
    /// Per-period equations for each category indicator of an ordered outcome.
    OrderedSur { levels: usize },
    /// Pooled regression of `y_t` on `(1, y_{t-1})`, one observation per period.
    PooledAr,
    /// Pooled regression of `y_t` on `(1, x_t)`.
    PooledLinear,
    /// `z (y - z β)` with a single scalar regressor.
    Scalar,
    /// Two-component Gaussian mixture, one observation per period.
    Mixture,
}

/// Number of auxiliary uniforms a model needs per `(unit, replication)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtraDraws {
    None,
    Fixed(usize),
    PerPeriod,
}

/// Static description of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInfo {
    pub name: &'static str,
    pub param_names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    pub theta0: Vec<f64>,
    /// Simulated periods preceding the observed window.
    pub hidden: usize,
    /// Regressors per period.
    pub dx: usize,
    pub extra: ExtraDraws,
    pub accumulation: Accumulation,
    pub aux: AuxKind,
    /// Discontinuities per period.
    pub jumps: usize,
}

impl ModelInfo {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn extra_count(&self, sim_periods: usize) -> usize {
        match self.extra {
            ExtraDraws::None => 0,
            ExtraDraws::Fixed(k) => k,
            ExtraDraws::PerPeriod => sim_periods,
        }
    }
}

/// Inputs for one `(unit, replication)` path.
#[derive(Clone, Copy, Debug)]
pub struct Cell<'a> {
    pub i: usize,
    pub r: usize,
    /// Main uniforms, one per simulated period.
    pub u: &'a [f64],
    /// Model-specific auxiliary uniforms.
    pub extra: &'a [f64],
    /// Regressors for all simulated periods, period-major.
    pub x: &'a [f64],
}

/// Simulated outcomes and accumulated Jacobian weights for one path.
#[derive(Clone, Debug)]
pub struct SimPath<S> {
    pub y: Vec<S>,
    pub w: Vec<S>,
}

impl<S: Scalar> SimPath<S> {
    pub fn new(periods: usize) -> Self {
        SimPath {
            y: vec![S::zero(); periods],
            w: vec![S::one(); periods],
        }
    }
}

/// Running Jacobian weight along a path.
#[derive(Clone, Copy, Debug)]
pub(crate) struct WeightTrack<S> {
    mode: Accumulation,
    acc: S,
}

impl<S: Scalar> WeightTrack<S> {
    pub(crate) fn new(mode: Accumulation) -> Self {
        WeightTrack { mode, acc: S::one() }
    }

    /// Folds in a step weight and returns the weight attached to this period.
    pub(crate) fn push(&mut self, w: S) -> S {
        match self.mode {
            Accumulation::PerCell => w,
            Accumulation::Sequential => {
                self.acc *= w;
                self.acc
            }
        }
    }
}

/// Locates (plain mode) or transforms (change-of-variables mode) one draw.
/// `grid_star` is only consulted in change-of-variables mode.
pub(crate) fn discrete_step<S: Scalar>(
    mode: &SimMode,
    u: f64,
    grid_theta: &[S],
    grid_star: Option<&[f64]>,
) -> Result<CovResult<S>> {
    match (mode, grid_star) {
        (SimMode::Cov { .. }, Some(star)) => cov_transform(u, grid_theta, star),
        _ => {
            let vals: Vec<f64> = grid_theta.iter().map(|c| c.value()).collect();
            let segment = crate::cov::locate_segment(u, &vals)?;
            Ok(CovResult {
                u_new: S::cst(u),
                weight: S::one(),
                segment,
            })
        }
    }
}

/// A structural model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    BinaryAr(BinaryAr),
    DynamicBinary(DynamicBinary),
    OrderedProbit(OrderedProbit),
    ExpAr(ExpAr),
    Queue(Mm1Queue),
    Toy(ToyThreshold),
    Linear(LinearGaussian),
}

/// Names accepted by [`Model::from_name`].
pub const MODEL_NAMES: &[&str] = &[
    "model1",
    "model2",
    "model3",
    "ordered-probit",
    "exp-ar",
    "mm1-queue",
    "toy-threshold",
    "linear-gaussian",
];

impl Model {
    pub fn from_name(name: &str) -> Result<Model> {
        Ok(match name {
            "model1" => Model::BinaryAr(BinaryAr::new()),
            "model2" => Model::DynamicBinary(DynamicBinary::new(0)),
            "model3" => Model::DynamicBinary(DynamicBinary::new(2)),
            "ordered-probit" => Model::OrderedProbit(OrderedProbit::new(2)?),
            "exp-ar" => Model::ExpAr(ExpAr::new()),
            "mm1-queue" => Model::Queue(Mm1Queue::new()),
            "toy-threshold" => Model::Toy(ToyThreshold::new(1.5)),
            "linear-gaussian" => Model::Linear(LinearGaussian::new()),
            other => {
                return Err(Error::invalid(format!(
                    "unknown model {other:?}; expected one of {}",
                    MODEL_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn info(&self) -> &ModelInfo {
        match self {
            Model::BinaryAr(m) => &m.info,
            Model::DynamicBinary(m) => &m.info,
            Model::OrderedProbit(m) => &m.info,
            Model::ExpAr(m) => &m.info,
            Model::Queue(m) => &m.info,
            Model::Toy(m) => &m.info,
            Model::Linear(m) => &m.info,
        }
    }

    fn info_mut(&mut self) -> &mut ModelInfo {
        match self {
            Model::BinaryAr(m) => &mut m.info,
            Model::DynamicBinary(m) => &mut m.info,
            Model::OrderedProbit(m) => &mut m.info,
            Model::ExpAr(m) => &mut m.info,
            Model::Queue(m) => &mut m.info,
            Model::Toy(m) => &mut m.info,
            Model::Linear(m) => &mut m.info,
        }
    }

    pub fn name(&self) -> &'static str {
        self.info().name
    }

    pub fn dim(&self) -> usize {
        self.info().dim()
    }

    /// Overrides how Jacobian weights combine along a path.
    pub fn with_accumulation(mut self, acc: Accumulation) -> Self {
        self.info_mut().accumulation = acc;
        self
    }

    pub fn accumulation(&self) -> Accumulation {
        self.info().accumulation
    }

    /// Rejects parameter vectors outside the model's admissible set.
    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let info = self.info();
        if theta.len() != info.dim() {
            return Err(Error::invalid(format!(
                "{} takes {} parameters, got {}",
                info.name,
                info.dim(),
                theta.len()
            )));
        }
        for (k, (&v, &(lo, hi))) in theta.iter().zip(info.bounds.iter()).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::invalid(format!(
                    "{} = {v} outside [{lo}, {hi}]",
                    info.param_names[k]
                )));
            }
        }
        match self {
            Model::OrderedProbit(m) => m.check_thresholds(theta),
            Model::Queue(m) => m.check_stability(theta),
            _ => Ok(()),
        }
    }

    /// Projects onto the parameter box.
    pub fn project(&self, theta: &mut [f64]) {
        for (v, &(lo, hi)) in theta.iter_mut().zip(self.info().bounds.iter()) {
            *v = v.clamp(lo, hi);
        }
        if let Model::OrderedProbit(m) = self {
            m.repair_thresholds(theta);
        }
    }

    /// Simulates one path.
    pub fn simulate_path<S: Scalar>(
        &self,
        theta: &[S],
        mode: &SimMode,
        cell: Cell<'_>,
        out: &mut SimPath<S>,
    ) -> Result<()> {
        if let SimMode::Cov { theta_star } = mode {
            if theta_star.len() != theta.len() {
                return Err(Error::invalid("anchor and parameter dimensions differ"));
            }
        }
        if let SimMode::Kernel { bandwidth, .. } = mode {
            if !(*bandwidth > 0.0) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
            }
        }
        match self {
            Model::BinaryAr(m) => m.simulate(theta, mode, cell, out),
            Model::DynamicBinary(m) => m.simulate(theta, mode, cell, out),
            Model::OrderedProbit(m) => m.simulate(theta, mode, cell, out),
            Model::ExpAr(m) => m.simulate(theta, mode, cell, out),
            Model::Queue(m) => m.simulate(theta, mode, cell, out),
            Model::Toy(m) => m.simulate(theta, mode, cell, out),
            Model::Linear(m) => m.simulate(theta, mode, cell, out),
        }
    }

    /// Fresh exogenous regressors for `n` units over `periods` simulated periods.
    pub fn draw_exog(&self, seed: SeedSpec, n: usize, periods: usize) -> Result<Vec<f64>> {
        let dx = self.info().dx;
        if dx == 0 {
            return Ok(Vec::new());
        }
        if let Model::Toy(t) = self {
            return Ok(vec![t.z; n * periods]);
        }
        let panel = make_uniform_panel(seed.with_stream(streams::EXOG), n, periods * dx, 1)?;
        panel.as_slice().iter().map(|&u| exog_from_uniform(u)).collect()
    }

    /// Simulates an observed dataset at `theta0` with plain arithmetic.
    ///
    /// `periods` counts observed periods; models with a hidden prefix simulate
    /// it as well and drop it from the output.
    pub fn simulate_observed(&self, theta0: &[f64], seed: SeedSpec, n: usize, periods: usize) -> Result<PanelData> {
        self.check_theta(theta0)?;
        let info = self.info();
        let sim_t = periods + info.hidden;
        let dx = info.dx;
        let x = self.draw_exog(seed, n, sim_t)?;
        let main = make_uniform_panel(seed.with_stream(streams::OBS_MAIN), n, sim_t, 1)?;
        let k = info.extra_count(sim_t);
        let extra = if k > 0 {
            Some(make_uniform_panel(seed.with_stream(streams::OBS_EXTRA), n, k, 1)?)
        } else {
            None
        };
        let mut y = Vec::with_capacity(n * periods);
        let mut xo = Vec::with_capacity(n * periods * dx);
        let mut path = SimPath::<f64>::new(sim_t);
        for i in 0..n {
            let xi = &x[i * sim_t * dx..(i + 1) * sim_t * dx];
            let cell = Cell {
                i,
                r: 0,
                u: main.path(i, 0),
                extra: extra.as_ref().map_or(&[][..], |p| p.path(i, 0)),
                x: xi,
            };
            self.simulate_path(theta0, &SimMode::Standard, cell, &mut path)?;
            y.extend_from_slice(&path.y[info.hidden..]);
            xo.extend_from_slice(&xi[info.hidden * dx..]);
        }
        PanelData::new(n, periods, dx, info.hidden + 1, y, xo)
    }

    /// Checks that a dataset has the shape this model expects.
    pub fn check_data(&self, data: &PanelData) -> Result<()> {
        let info = self.info();
        if data.dx() != info.dx {
            return Err(Error::Data {
                line: 1,
                message: format!("{} expects {} regressor column(s), found {}", info.name, info.dx, data.dx()),
            });
        }
        if data.first_period() != info.hidden + 1 {
            return Err(Error::Data {
                line: 2,
                message: format!(
                    "{} expects the observed window to start at period {}, found {}",
                    info.name,
                    info.hidden + 1,
                    data.first_period()
                ),
            });
        }
        let min_periods = match info.aux {
            AuxKind::Sur | AuxKind::OrderedSur { .. } | AuxKind::PooledAr => 2,
            _ => 1,
        };
        if data.periods() < min_periods {
            return Err(Error::Data {
                line: 2,
                message: format!("{} needs at least {min_periods} observed periods", info.name),
            });
        }
        Ok(())
    }
}

/// `x ~ N(1, 2)` (mean 1, variance 2) from a uniform.
pub fn exog_from_uniform(u: f64) -> Result<f64> {
    Ok(1.0 + std::f64::consts::SQRT_2 * inv_normal_cdf(u)?)
}

/// Uniform draws backing the simulated side of an estimation.
#[derive(Clone, Debug)]
pub struct SimDraws {
    pub main: UniformPanel,
    pub extra: Option<UniformPanel>,
}

impl SimDraws {
    /// Draws for `reps` simulated paths per observed unit. `second` selects the
    /// independent pair of substreams used by the second stage of two-step
    /// kernel estimation.
    pub fn new(model: &Model, seed: SeedSpec, n: usize, observed_periods: usize, reps: usize, second: bool) -> Result<Self> {
        let info = model.info();
        let sim_t = observed_periods + info.hidden;
        let (sm, se) = if second {
            (streams::SIM2_MAIN, streams::SIM2_EXTRA)
        } else {
            (streams::SIM_MAIN, streams::SIM_EXTRA)
        };
        let main = make_uniform_panel(seed.with_stream(sm), n, sim_t, reps)?;
        let k = info.extra_count(sim_t);
        let extra = if k > 0 {
            Some(make_uniform_panel(seed.with_stream(se), n, k, reps)?)
        } else {
            None
        };
        Ok(SimDraws { main, extra })
    }

    pub fn reps(&self) -> usize {
        self.main.reps()
    }

    pub fn periods(&self) -> usize {
        self.main.periods()
    }

    pub fn extra_path(&self, i: usize, r: usize) -> &[f64] {
        self.extra.as_ref().map_or(&[][..], |p| p.path(i, r))
    }
}
