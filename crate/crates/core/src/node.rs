//! Knowm synapses sharing one output electrode (an AHaH node) and the
//! execution of a single instruction phase over a set of active synapses.
//!
//! Every active synapse ties its `a` memristor between the a-driver and the
//! electrode `y`, and its `b` memristor between `y` and the b-driver.
//! Device voltages follow `v_a = V(a-driver) − v_y` and
//! `v_b = v_y − V(b-driver)`; a positive drop drives a device toward the
//! conductive state. Inactive synapses float and are never touched.

use std::fmt;
use std::str::FromStr;

use crate::device::{self, conductance, DeviceState, MssParams, StepMode};
use crate::error::{Error, Result};

/// Differential memristor pair. `a` is the positive pathway, `b` the
/// negative one.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Synapse {
    pub a: DeviceState,
    pub b: DeviceState,
}

impl Synapse {
    pub fn balanced(p: &MssParams) -> Self {
        Self {
            a: DeviceState::balanced(p),
            b: DeviceState::balanced(p),
        }
    }
}

/// `G_a − G_b` in siemens.
pub fn weight(p: &MssParams, s: &Synapse) -> f64 {
    conductance(p, s.a) - conductance(p, s.b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feedback {
    Float,
    High,
    Low,
    Unsupervised,
    AntiUnsupervised,
    Zero,
}

/// The twelve kT-RAM instructions.
#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    FF,
    FH,
    FL,
    FU,
    FA,
    FZ,
    RF,
    RH,
    RL,
    RU,
    RA,
    RZ,
}

impl Instruction {
    pub const ALL: [Instruction; 12] = [
        Instruction::FF,
        Instruction::FH,
        Instruction::FL,
        Instruction::FU,
        Instruction::FA,
        Instruction::FZ,
        Instruction::RF,
        Instruction::RH,
        Instruction::RL,
        Instruction::RU,
        Instruction::RA,
        Instruction::RZ,
    ];

    pub fn direction(self) -> Direction {
        use Instruction::*;
        match self {
            FF | FH | FL | FU | FA | FZ => Direction::Forward,
            RF | RH | RL | RU | RA | RZ => Direction::Reverse,
        }
    }

    pub fn feedback(self) -> Feedback {
        use Instruction::*;
        match self {
            FF | RF => Feedback::Float,
            FH | RH => Feedback::High,
            FL | RL => Feedback::Low,
            FU | RU => Feedback::Unsupervised,
            FA | RA => Feedback::AntiUnsupervised,
            FZ | RZ => Feedback::Zero,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        use Instruction::*;
        match self {
            FF => "FF",
            FH => "FH",
            FL => "FL",
            FU => "FU",
            FA => "FA",
            FZ => "FZ",
            RF => "RF",
            RH => "RH",
            RL => "RL",
            RU => "RU",
            RA => "RA",
            RZ => "RZ",
        }
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&i| i == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Instruction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|i| i.mnemonic().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown instruction `{s}`")))
    }
}

/// Rail magnitude and phase duration for every instruction phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    pub v_drive: f64,
    pub dt: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            v_drive: 0.15,
            dt: 1e-6,
        }
    }
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_drive > 0.0 && self.v_drive.is_finite()) {
            return Err(Error::Param {
                name: "v_drive",
                reason: "must be positive".into(),
            });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Param {
                name: "dt",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Electrode voltage during a phase and its digitised sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadResult {
    pub v_y: f64,
    pub sign: i8,
}

impl ReadResult {
    pub fn new(v_y: f64) -> Self {
        Self {
            v_y,
            sign: if v_y >= 0.0 { 1 } else { -1 },
        }
    }
}

/// Output of the feedback source F for one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackVoltage {
    Floating,
    Driven(f64),
}

/// Rail voltages `(a-driver, b-driver)` for a direction.
pub fn rails(direction: Direction, v_drive: f64) -> (f64, f64) {
    match direction {
        Direction::Forward => (v_drive, -v_drive),
        Direction::Reverse => (-v_drive, v_drive),
    }
}

/// Device drops `(v_a, v_b)` given the electrode voltage.
pub fn device_drops(direction: Direction, v_y: f64, v_drive: f64) -> (f64, f64) {
    let (va_rail, vb_rail) = rails(direction, v_drive);
    (va_rail - v_y, v_y - vb_rail)
}

fn summed_conductance(p: &MssParams, synapses: &[Synapse], active: &[usize]) -> (f64, f64) {
    active.iter().fold((0.0, 0.0), |(ga, gb), &i| {
        let s = &synapses[i];
        (ga + conductance(p, s.a), gb + conductance(p, s.b))
    })
}

fn divider(ga: f64, gb: f64, direction: Direction, v_drive: f64) -> f64 {
    let forward = v_drive * (ga - gb) / (ga + gb);
    match direction {
        Direction::Forward => forward,
        Direction::Reverse => -forward,
    }
}

/// Floating electrode voltage of the resistive divider formed by the active
/// synapses.
pub fn electrode_voltage_floating(
    p: &MssParams,
    synapses: &[Synapse],
    active: &[usize],
    direction: Direction,
    v_drive: f64,
) -> Result<f64> {
    if active.is_empty() {
        return Err(Error::Domain("no active synapses".into()));
    }
    let (ga, gb) = summed_conductance(p, synapses, active);
    Ok(divider(ga, gb, direction, v_drive))
}

/// Feedback column of the instruction table. `v_y_read` is the electrode
/// value seen with read (forward) rail polarity; ties at zero take the
/// `y ≥ 0` branch.
pub fn resolve_feedback(inst: Instruction, v_y_read: f64, v_drive: f64) -> FeedbackVoltage {
    let non_negative = v_y_read >= 0.0;
    match inst.feedback() {
        Feedback::Float => FeedbackVoltage::Floating,
        Feedback::High => FeedbackVoltage::Driven(-v_drive),
        Feedback::Low => FeedbackVoltage::Driven(v_drive),
        Feedback::Zero => FeedbackVoltage::Driven(0.0),
        Feedback::Unsupervised => {
            FeedbackVoltage::Driven(if non_negative { -v_drive } else { v_drive })
        }
        Feedback::AntiUnsupervised => {
            FeedbackVoltage::Driven(if non_negative { v_drive } else { -v_drive })
        }
    }
}

/// Run one instruction phase: set the rails, resolve `y`, then step every
/// active device once under its drop for `cfg.dt`.
pub fn execute_phase(
    p: &MssParams,
    synapses: &mut [Synapse],
    active: &[usize],
    inst: Instruction,
    cfg: &DriveConfig,
    mode: &mut StepMode<'_>,
) -> Result<ReadResult> {
    if active.is_empty() {
        return Err(Error::Domain("no active synapses".into()));
    }
    let direction = inst.direction();
    let (ga, gb) = summed_conductance(p, synapses, active);
    let v_y = match resolve_feedback(inst, divider(ga, gb, Direction::Forward, cfg.v_drive), cfg.v_drive)
    {
        FeedbackVoltage::Floating => divider(ga, gb, direction, cfg.v_drive),
        FeedbackVoltage::Driven(v) => v,
    };
    let (v_a, v_b) = device_drops(direction, v_y, cfg.v_drive);
    for &i in active {
        let s = &mut synapses[i];
        s.a = device::step(p, s.a, v_a, cfg.dt, mode)?;
        s.b = device::step(p, s.b, v_b, cfg.dt, mode)?;
    }
    Ok(ReadResult::new(v_y))
}
