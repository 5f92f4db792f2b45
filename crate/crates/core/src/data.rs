//! Observed panels and their CSV representation.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Outcomes `y[i, t]` and regressors `x[i, t, k]` on an observed window of periods.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    n: usize,
    periods: usize,
    dx: usize,
    first_period: usize,
    y: Vec<f64>,
    x: Vec<f64>,
}

impl PanelData {
    /// `first_period` is the 1-based time label of the first observed period.
    pub fn new(
        n: usize,
        periods: usize,
        dx: usize,
        first_period: usize,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || periods == 0 {
            return Err(Error::invalid("panel needs at least one unit and one period"));
        }
        if first_period == 0 {
            return Err(Error::invalid("time labels start at 1"));
        }
        if y.len() != n * periods || x.len() != n * periods * dx {
            return Err(Error::invalid(format!(
                "panel arrays have lengths y={} x={}, expected {} and {}",
                y.len(),
                x.len(),
                n * periods,
                n * periods * dx
            )));
        }
        if let Some(v) = y.iter().chain(x.iter()).find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite panel entry {v}")));
        }
        Ok(PanelData {
            n,
            periods,
            dx,
            first_period,
            y,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn first_period(&self) -> usize {
        self.first_period
    }

    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.periods + t]
    }

    pub fn y_unit(&self, i: usize) -> &[f64] {
        &self.y[i * self.periods..(i + 1) * self.periods]
    }

    /// Regressors of unit `i`, period-major (`periods * dx` values).
    pub fn x_unit(&self, i: usize) -> &[f64] {
        let w = self.periods * self.dx;
        &self.x[i * w..(i + 1) * w]
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
        header.extend((1..=self.dx).map(|k| format!("x{k}")));
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n {
            let xs = self.x_unit(i);
            for t in 0..self.periods {
                let mut rec = vec![
                    (i + 1).to_string(),
                    (t + self.first_period).to_string(),
                    fmt_f64(self.y(i, t)),
                ];
                rec.extend(xs[t * self.dx..(t + 1) * self.dx].iter().map(|v| fmt_f64(*v)));
                w.write_record(&rec).map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parses a panel with header `unit,time,y,x1,...`. Rows must be sorted by
    /// unit then time, with every unit covering the same consecutive periods.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr
            .headers()
            .map_err(|e| Error::Data {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let names: Vec<&str> = header.iter().collect();
        if names.len() < 3 || names[0] != "unit" || names[1] != "time" || names[2] != "y" {
            return Err(Error::Data {
                line: 1,
                message: format!("expected header unit,time,y[,x1..], got {}", names.join(",")),
            });
        }
        for (k, name) in names[3..].iter().enumerate() {
            if *name != format!("x{}", k + 1) {
                return Err(Error::Data {
                    line: 1,
                    message: format!("regressor column {} should be named x{}, got {name}", k + 4, k + 1),
                });
            }
        }
        let dx = names.len() - 3;

        let mut units: Vec<u64> = Vec::new();
        let mut times: Vec<Vec<usize>> = Vec::new();
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::Data {
                line,
                message: e.to_string(),
            })?;
            if rec.len() != names.len() {
                return Err(Error::Data {
                    line,
                    message: format!("expected {} fields, found {}", names.len(), rec.len()),
                });
            }
            let field = |k: usize| -> Result<f64> {
                let s = &rec[k];
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data {
                        line,
                        message: format!("column {} is not a finite number: {s:?}", names[k]),
                    })
            };
            let unit: u64 = rec[0].parse().map_err(|_| Error::Data {
                line,
                message: format!("unit must be a non-negative integer, got {:?}", &rec[0]),
            })?;
            let time: usize = rec[1].parse().map_err(|_| Error::Data {
                line,
                message: format!("time must be a positive integer, got {:?}", &rec[1]),
            })?;
            if units.last() != Some(&unit) {
                if units.contains(&unit) {
                    return Err(Error::Data {
                        line,
                        message: format!("rows of unit {unit} are not contiguous"),
                    });
                }
                units.push(unit);
                times.push(Vec::new());
            }
            let ts = times.last_mut().expect("pushed above");
            if let Some(&prev) = ts.last() {
                if time != prev + 1 {
                    return Err(Error::Data {
                        line,
                        message: format!("unit {unit}: time {time} does not follow {prev}"),
                    });
                }
            }
            ts.push(time);
            y.push(field(2)?);
            for k in 0..dx {
                x.push(field(3 + k)?);
            }
        }
        if units.is_empty() {
            return Err(Error::Data {
                line: 2,
                message: "no data rows".into(),
            });
        }
        let first = times[0].clone();
        let mut line = 2;
        for (u, ts) in units.iter().zip(times.iter()) {
            if *ts != first {
                return Err(Error::Data {
                    line,
                    message: format!(
                        "unit {u} covers periods {:?}..{:?}, expected {:?}..{:?}",
                        ts.first(),
                        ts.last(),
                        first.first(),
                        first.last()
                    ),
                });
            }
            line += ts.len();
        }
        if first[0] == 0 {
            return Err(Error::Data {
                line: 2,
                message: "time labels start at 1".into(),
            });
        }
        PanelData::new(units.len(), first.len(), dx, first[0], y, x)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        PanelData::read_csv(std::io::BufReader::new(f))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}
