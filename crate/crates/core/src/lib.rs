//! Thermodynamic-RAM emulator.
//!
//! Layers, bottom up: [`device`] (metastable-switch memristors), [`node`]
//! (differential synapses and the instruction set), [`spike`] (sparse
//! spike patterns), [`ram`] (the addressable synapse array) and [`learn`]
//! (classifier and clusterer built on the instruction set).

pub mod device;
pub mod learn;
pub mod error;
pub mod fit;
pub mod node;
pub mod ram;
pub mod scenarios;
pub mod spike;
pub mod sweep;

pub use device::{DeviceState, MssParams, SimMode};
pub use error::{Error, Result};
pub use learn::{Classifier, Clusterer, Scored};
pub use node::{DriveConfig, Instruction, ReadResult, Synapse};
pub use ram::{Core, CoreConfig, ExecRecord, Pairing, Partition, PhaseExpectation};
pub use spike::{SpikePattern, SpikeSpace};
