//! Independent oracles and reporting helpers for the acceptance suite.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use giicov::models::{Cell, Model, SimMode, SimPath};
use giicov::randsrc::{make_uniform_panel, SeedSpec};

#[derive(Clone, Copy, PartialEq, Debug)]
enum Kind {
    Arrival,
    Departure,
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct Event {
    time: f64,
    kind: Kind,
    customer: usize,
}

impl Eq for Event {}

impl Ord for Event {
    // earliest time first; arrivals before departures at equal times
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| match (self.kind, other.kind) {
            (Kind::Arrival, Kind::Departure) => Ordering::Greater,
            (Kind::Departure, Kind::Arrival) => Ordering::Less,
            _ => other.customer.cmp(&self.customer),
        })
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn exp_draw(u: f64, mean: f64) -> f64 {
    -(mean * (-u).ln_1p())
}

/// Event-driven single-server FIFO queue started empty at the first arrival.
/// Customer `j > 0` arrives `Exp(mean_interarrival)` after customer `j-1`
/// (inverse-CDF draw from `arrival_u[j]`) and needs `Exp(mean_service)` from
/// `service_u[j]`. Returns the inter-departure times.
pub fn discrete_event_queue(arrival_u: &[f64], service_u: &[f64], mean_service: f64, mean_interarrival: f64) -> Vec<f64> {
    let n = arrival_u.len();
    let mut events = BinaryHeap::new();
    let mut clock = 0.0;
    for (j, &u) in arrival_u.iter().enumerate() {
        if j > 0 {
            clock += exp_draw(u, mean_interarrival);
        }
        events.push(Event {
            time: clock,
            kind: Kind::Arrival,
            customer: j,
        });
    }
    let service: Vec<f64> = service_u.iter().map(|&u| exp_draw(u, mean_service)).collect();
    let mut departures = vec![f64::NAN; n];
    let mut waiting = VecDeque::new();
    let mut busy = false;
    while let Some(ev) = events.pop() {
        match ev.kind {
            Kind::Arrival if !busy => {
                busy = true;
                events.push(Event {
                    time: ev.time + service[ev.customer],
                    kind: Kind::Departure,
                    customer: ev.customer,
                });
            }
            Kind::Arrival => waiting.push_back(ev.customer),
            Kind::Departure => {
                departures[ev.customer] = ev.time;
                match waiting.pop_front() {
                    Some(next) => events.push(Event {
                        time: ev.time + service[next],
                        kind: Kind::Departure,
                        customer: next,
                    }),
                    None => busy = false,
                }
            }
        }
    }
    let mut prev = 0.0;
    departures
        .iter()
        .map(|&d| {
            let y = d - prev;
            prev = d;
            y
        })
        .collect()
}

/// Mean of a long exponential-AR path after a burn-in, with a batch-means
/// standard error over 50 batches.
pub fn expar_path_mean(mu: f64, phi: f64, steps: usize, seed: SeedSpec) -> giicov::Result<(f64, f64)> {
    let model = Model::from_name("exp-ar")?;
    let u = make_uniform_panel(seed, 1, steps, 1)?;
    let v = make_uniform_panel(seed.with_stream(1), 1, steps, 1)?;
    let cell = Cell {
        i: 0,
        r: 0,
        u: u.path(0, 0),
        extra: v.path(0, 0),
        x: &[],
    };
    let mut path = SimPath::<f64>::new(steps);
    model.simulate_path(&[mu, phi], &SimMode::Standard, cell, &mut path)?;
    let kept = &path.y[steps / 100..];
    let batches = 50;
    let size = kept.len() / batches;
    let means: Vec<f64> = kept.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((m, (var / batches as f64).sqrt()))
}

/// Whether `v` lies in `[lo, hi]`.
pub fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

/// Collects one PASS/FAIL line per criterion and writes it straight to the
/// process stdout so it shows without `--nocapture`.
#[derive(Default)]
pub struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    pub fn record(&mut self, criterion: usize, title: &str, passed: bool, detail: String) {
        let line = format!("criterion {criterion:>2} {}: {title}: {detail}", if passed { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        self.lines.push((criterion, passed, line));
    }

    pub fn failed(&self) -> Vec<usize> {
        self.lines.iter().filter(|l| !l.1).map(|l| l.0).collect()
    }
}
