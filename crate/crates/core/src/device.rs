//! Metastable-switch (MSS) memristor model.
//!
//! A device is a population of `n_switches` two-state switches. Each switch
//! conducts `g_on / N` when on and `g_off / N` when off. Under an applied
//! voltage a switch hops off→on with probability `α·Γ(β(v − v_on))` and
//! on→off with probability `α·Γ(−β(v + v_off))`, where `α = 1 − e^(−dt/t_c)`,
//! `Γ` is the logistic function and `β = q / (k_B·T)`.
//!
//! The device current mixes the memory-dependent switch current with a
//! memoryless Schottky diode term: `I = φ·G·v + (1 − φ)·I_s(v)`.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Random source used for stochastic stepping. ChaCha keeps streams
/// reproducible across platforms and lets snapshots capture the position.
pub type DeviceRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MssParams {
    pub n_switches: u32,
    /// Conductance with every switch on (S).
    pub g_on: f64,
    /// Conductance with every switch off (S).
    pub g_off: f64,
    /// Threshold favouring off→on transitions (V).
    pub v_on: f64,
    /// Threshold favouring on→off transitions (V).
    pub v_off: f64,
    /// Characteristic switching time (s).
    pub t_c: f64,
    /// Temperature (K).
    pub temperature: f64,
    /// Fraction of current carried by the switch population.
    pub phi: f64,
    pub schottky_alpha_f: f64,
    pub schottky_beta_f: f64,
    pub schottky_alpha_r: f64,
    pub schottky_beta_r: f64,
}

impl Default for MssParams {
    /// Desk-scale device: 10 kΩ on-state, 0.2 V thresholds, no diode.
    fn default() -> Self {
        Self {
            n_switches: 1000,
            g_on: 1e-4,
            g_off: 1e-6,
            v_on: 0.2,
            v_off: 0.2,
            t_c: 1e-4,
            temperature: 300.0,
            phi: 1.0,
            schottky_alpha_f: 0.0,
            schottky_beta_f: 0.0,
            schottky_alpha_r: 0.0,
            schottky_beta_r: 0.0,
        }
    }
}

const PARAM_KEYS: [&str; 12] = [
    "n_switches",
    "g_on",
    "g_off",
    "v_on",
    "v_off",
    "t_c",
    "temperature",
    "phi",
    "schottky_alpha_f",
    "schottky_beta_f",
    "schottky_alpha_r",
    "schottky_beta_r",
];

impl MssParams {
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: &str) -> Result<()> {
            Err(Error::Param {
                name,
                reason: reason.to_string(),
            })
        }
        if self.n_switches == 0 {
            return bad("n_switches", "must be at least 1");
        }
        if !(self.g_off > 0.0 && self.g_off < self.g_on && self.g_on.is_finite()) {
            return bad("g_off", "require 0 < g_off < g_on");
        }
        if !(self.t_c > 0.0 && self.t_c.is_finite()) {
            return bad("t_c", "must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return bad("phi", "must lie in [0, 1]");
        }
        if !self.v_on.is_finite() || !self.v_off.is_finite() {
            return bad("v_on", "thresholds must be finite");
        }
        let diode = [
            ("schottky_alpha_f", self.schottky_alpha_f),
            ("schottky_beta_f", self.schottky_beta_f),
            ("schottky_alpha_r", self.schottky_alpha_r),
            ("schottky_beta_r", self.schottky_beta_r),
        ];
        for (name, value) in diode {
            if !(value >= 0.0 && value.is_finite()) {
                return bad(name, "must be non-negative");
            }
        }
        Ok(())
    }

    /// `q / (k_B·T)` in 1/V.
    pub fn beta(&self) -> f64 {
        ELEMENTARY_CHARGE / (BOLTZMANN * self.temperature)
    }

    /// Parse the flat `key=value` parameter format. Keys not present keep
    /// their default value; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                reason: format!("expected key=value, found `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("`{key}`: `{v}` is not a number"),
                })
            };
            match key {
                "n_switches" => {
                    p.n_switches = value.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        reason: format!("`n_switches`: `{value}` is not a positive integer"),
                    })?
                }
                "g_on" => p.g_on = num(value)?,
                "g_off" => p.g_off = num(value)?,
                "v_on" => p.v_on = num(value)?,
                "v_off" => p.v_off = num(value)?,
                "t_c" => p.t_c = num(value)?,
                "temperature" => p.temperature = num(value)?,
                "phi" => p.phi = num(value)?,
                "schottky_alpha_f" => p.schottky_alpha_f = num(value)?,
                "schottky_beta_f" => p.schottky_beta_f = num(value)?,
                "schottky_alpha_r" => p.schottky_alpha_r = num(value)?,
                "schottky_beta_r" => p.schottky_beta_r = num(value)?,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: format!("unknown parameter `{other}`"),
                    })
                }
            }
        }
        p.validate().map_err(|e| Error::Parse {
            line: 0,
            reason: e.to_string(),
        })?;
        Ok(p)
    }

    /// Inverse of [`MssParams::parse`]; round-trips exactly.
    pub fn to_text(&self) -> String {
        let values = [
            self.n_switches as f64,
            self.g_on,
            self.g_off,
            self.v_on,
            self.v_off,
            self.t_c,
            self.temperature,
            self.phi,
            self.schottky_alpha_f,
            self.schottky_beta_f,
            self.schottky_alpha_r,
            self.schottky_beta_r,
        ];
        let mut out = String::new();
        for (key, value) in PARAM_KEYS.iter().zip(values) {
            if *key == "n_switches" {
                let _ = writeln!(out, "{key}={}", self.n_switches);
            } else {
                let _ = writeln!(out, "{key}={value:e}");
            }
        }
        out
    }
}

/// Number of switches currently conducting. Integral in stochastic mode,
/// real-valued in expectation mode.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DeviceState {
    pub n_on: f64,
}

impl DeviceState {
    pub fn new(n_on: f64) -> Self {
        Self { n_on }
    }

    pub fn balanced(p: &MssParams) -> Self {
        Self {
            n_on: (p.n_switches / 2) as f64,
        }
    }

    pub fn fully_on(p: &MssParams) -> Self {
        Self {
            n_on: p.n_switches as f64,
        }
    }

    pub fn fully_off() -> Self {
        Self { n_on: 0.0 }
    }

    pub fn on_fraction(&self, p: &MssParams) -> f64 {
        self.n_on / p.n_switches as f64
    }
}

/// Stepping discipline for a whole simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimMode {
    Stochastic,
    Expectation,
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(SimMode::Stochastic),
            "expectation" => Ok(SimMode::Expectation),
            other => Err(Error::Domain(format!(
                "unknown mode `{other}` (expected stochastic|expectation)"
            ))),
        }
    }
}

/// Per-call stepping mode; the stochastic variant borrows the random source.
pub enum StepMode<'a> {
    Stochastic(&'a mut DeviceRng),
    Expectation,
}

impl StepMode<'_> {
    pub fn kind(&self) -> SimMode {
        match self {
            StepMode::Stochastic(_) => SimMode::Stochastic,
            StepMode::Expectation => SimMode::Expectation,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn conductance(p: &MssParams, s: DeviceState) -> f64 {
    let n = p.n_switches as f64;
    s.n_on * (p.g_on / n) + (n - s.n_on) * (p.g_off / n)
}

/// Per-switch transition probabilities `(off→on, on→off)` for one interval.
pub fn transition_probabilities(p: &MssParams, v: f64, dt: f64) -> Result<(f64, f64)> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("negative time step {dt}")));
    }
    let alpha = -(-dt / p.t_c).exp_m1();
    let beta = p.beta();
    let up = alpha * logistic(beta * (v - p.v_on));
    let down = alpha * logistic(-beta * (v + p.v_off));
    Ok((up, down))
}

pub fn step(
    p: &MssParams,
    s: DeviceState,
    v: f64,
    dt: f64,
    mode: &mut StepMode<'_>,
) -> Result<DeviceState> {
    let (up, down) = transition_probabilities(p, v, dt)?;
    let total = p.n_switches as f64;
    let n_on = match mode {
        StepMode::Expectation => {
            let next = s.n_on + (total - s.n_on) * up - s.n_on * down;
            next.clamp(0.0, total)
        }
        StepMode::Stochastic(rng) => {
            let on = s.n_on.round().clamp(0.0, total) as u64;
            let off = p.n_switches as u64 - on;
            let k_up = sample_binomial(rng, off, up);
            let k_down = sample_binomial(rng, on, down);
            (on + k_up - k_down) as f64
        }
    };
    Ok(DeviceState { n_on })
}

fn sample_binomial(rng: &mut DeviceRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    // p < 1 always holds for transition probabilities; guard anyway.
    let p = p.min(1.0);
    Binomial::new(n, p)
        .expect("probability in [0, 1]")
        .sample(rng)
}

pub fn schottky_current(p: &MssParams, v: f64) -> f64 {
    p.schottky_alpha_f * (p.schottky_beta_f * v).exp_m1()
        - p.schottky_alpha_r * (-p.schottky_beta_r * v).exp_m1()
}

pub fn total_current(p: &MssParams, s: DeviceState, v: f64) -> f64 {
    p.phi * conductance(p, s) * v + (1.0 - p.phi) * schottky_current(p, v)
}
