//! Deterministic parallel simulation over `(unit, replication)` cells.
//!
//! Cells are split into fixed-size chunks by index. Each chunk folds into its
//! own accumulator and the chunk results are merged in index order, so the
//! floating-point summation order never depends on the thread count.

use crate::autodiff::Scalar;
use crate::data::PanelData;
use crate::error::{Error, Result};
use crate::models::{Cell, Model, SimDraws, SimMode, SimPath};

/// Cells per chunk.
pub const CHUNK: usize = 16;

/// A model bound to its observed regressors and simulation draws.
#[derive(Clone, Copy, Debug)]
pub struct Simulator<'a> {
    pub model: &'a Model,
    pub data: &'a PanelData,
    pub draws: &'a SimDraws,
}

/// One simulated path restricted to the observed window.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'p, S> {
    pub i: usize,
    pub r: usize,
    pub y: &'p [S],
    pub w: &'p [S],
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a Model, data: &'a PanelData, draws: &'a SimDraws) -> Result<Self> {
        model.check_data(data)?;
        let sim_t = data.periods() + model.info().hidden;
        if draws.main.n() != data.n() || draws.periods() != sim_t {
            return Err(Error::invalid(format!(
                "simulation draws cover {} units x {} periods, data needs {} x {}",
                draws.main.n(),
                draws.periods(),
                data.n(),
                sim_t
            )));
        }
        Ok(Simulator { model, data, draws })
    }

    pub fn reps(&self) -> usize {
        self.draws.reps()
    }

    pub fn cells(&self) -> usize {
        self.data.n() * self.reps()
    }

    /// Folds every simulated path into accumulators created by `init`,
    /// one per chunk, then merges them in chunk order.
    pub fn fold<S, A, I, V, M>(&self, theta: &[S], mode: &SimMode, init: I, visit: V, merge: M) -> Result<A>
    where
        S: Scalar,
        A: Send,
        I: Fn() -> A + Sync,
        V: Fn(&mut A, PathView<'_, S>) -> Result<()> + Sync,
        M: Fn(&mut A, A),
    {
        let cells = self.cells();
        let chunks = cells.div_ceil(CHUNK);
        let run = |c: usize| -> Result<A> {
            let mut acc = init();
            let hidden = self.model.info().hidden;
            let mut path = SimPath::<S>::new(self.draws.periods());
            for k in c * CHUNK..((c + 1) * CHUNK).min(cells) {
                let (i, r) = (k / self.reps(), k % self.reps());
                let cell = Cell {
                    i,
                    r,
                    u: self.draws.main.path(i, r),
                    extra: self.draws.extra_path(i, r),
                    x: self.data.x_unit(i),
                };
                self.model.simulate_path(theta, mode, cell, &mut path)?;
                visit(
                    &mut acc,
                    PathView {
                        i,
                        r,
                        y: &path.y[hidden..],
                        w: &path.w[hidden..],
                    },
                )?;
            }
            Ok(acc)
        };
        let parts: Vec<Result<A>> = map_chunks(chunks, run);
        let mut out = init();
        for p in parts {
            merge(&mut out, p?);
        }
        Ok(out)
    }
}

#[cfg(feature = "parallel")]
fn map_chunks<A: Send>(chunks: usize, f: impl Fn(usize) -> A + Sync) -> Vec<A> {
    use rayon::prelude::*;
    (0..chunks).into_par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<A: Send>(chunks: usize, f: impl Fn(usize) -> A + Sync) -> Vec<A> {
    (0..chunks).map(f).collect()
}
