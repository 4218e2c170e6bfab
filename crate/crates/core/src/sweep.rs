//! Periodic voltage sweeps, I–V traces and the `t,v,i` CSV format.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::device::{self, DeviceState, MssParams, StepMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waveform {
    Sine,
    Triangle,
}

impl FromStr for Waveform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(Waveform::Sine),
            "triangle" => Ok(Waveform::Triangle),
            other => Err(Error::Domain(format!("unknown waveform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub waveform: Waveform,
    pub amplitude: f64,
    pub frequency: f64,
    pub cycles: usize,
    pub samples_per_cycle: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            waveform: Waveform::Sine,
            amplitude: 0.5,
            frequency: 100.0,
            cycles: 3,
            samples_per_cycle: 200,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Domain("amplitude must be positive".into()));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::Domain("frequency must be positive".into()));
        }
        if self.cycles < 1 {
            return Err(Error::Domain("need at least one cycle".into()));
        }
        if self.samples_per_cycle < 8 {
            return Err(Error::Domain("need at least 8 samples per cycle".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.frequency * self.samples_per_cycle as f64)
    }

    /// Drive voltage at sample `j`. Both waveforms start at 0 V and rise.
    pub fn voltage(&self, j: usize) -> f64 {
        let s = self.samples_per_cycle;
        let phase = (j % s) as f64 / s as f64;
        let shape = match self.waveform {
            Waveform::Sine => (2.0 * std::f64::consts::PI * phase).sin(),
            Waveform::Triangle => {
                if phase < 0.25 {
                    4.0 * phase
                } else if phase < 0.75 {
                    2.0 - 4.0 * phase
                } else {
                    4.0 * phase - 4.0
                }
            }
        };
        self.amplitude * shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub v: f64,
    pub i: f64,
    pub n_on: f64,
}

/// Drive one device from the balanced state through the sweep in
/// expectation mode. Each row holds the current and state seen at that
/// sample, before the device steps; a final row closes the last cycle.
pub fn hysteresis(p: &MssParams, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    p.validate()?;
    spec.validate()?;
    let dt = spec.dt();
    let total = spec.cycles * spec.samples_per_cycle;
    let mut state = DeviceState::balanced(p);
    let mut rows = Vec::with_capacity(total + 1);
    for j in 0..=total {
        let v = spec.voltage(j);
        rows.push(SweepRow {
            t: j as f64 * dt,
            v,
            i: device::total_current(p, state, v),
            n_on: state.n_on,
        });
        state = device::step(p, state, v, dt, &mut StepMode::Expectation)?;
    }
    Ok(rows)
}

fn shoelace(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|k| {
            let (x0, y0) = points[k];
            let (x1, y1) = points[(k + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    0.5 * twice
}

/// Enclosed I–V area: the trace is split into lobes at every sign change of
/// `v`, each lobe is closed and its shoelace area taken in absolute value.
pub fn loop_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut lobe: Vec<(f64, f64)> = Vec::new();
    let mut sign = 0.0f64;
    for &(v, i) in points {
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        if s != 0.0 && sign != 0.0 && s != sign {
            area += shoelace(&lobe).abs();
            let last = lobe.last().copied();
            lobe.clear();
            lobe.extend(last);
        }
        if s != 0.0 {
            sign = s;
        }
        lobe.push((v, i));
    }
    area + shoelace(&lobe).abs()
}

pub fn rows_area(rows: &[SweepRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.v, r.i)).collect();
    loop_area(&pts)
}

/// Six significant digits.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.5e}")
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("t,v,i,n_on\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig(r.t),
            fmt_sig(r.v),
            fmt_sig(r.i),
            fmt_sig(r.n_on)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvSample {
    pub t: f64,
    pub v: f64,
    pub i: f64,
}

pub fn iv_csv(samples: &[IvSample]) -> String {
    let mut out = String::from("t,v,i\n");
    for s in samples {
        let _ = writeln!(out, "{},{},{}", fmt_sig(s.t), fmt_sig(s.v), fmt_sig(s.i));
    }
    out
}

/// Read a CSV whose header names at least the `t`, `v` and `i` columns.
/// Extra columns are ignored.
pub fn parse_iv_csv(text: &str) -> Result<Vec<IvSample>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (header_line, header) = lines.next().ok_or(Error::Parse {
        line: 0,
        reason: "empty CSV".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| Error::Parse {
            line: header_line,
            reason: format!("header lacks a `{name}` column"),
        })
    };
    let (ti, vi, ii) = (find("t")?, find("v")?, find("i")?);
    let mut out = Vec::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    reason: format!("`{}` is not a finite number", fields[k]),
                })
        };
        out.push(IvSample {
            t: num(ti)?,
            v: num(vi)?,
            i: num(ii)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: header_line,
            reason: "no data rows".into(),
        });
    }
    Ok(out)
}
