//! The addressable synapse array.
//!
//! A [`Core`] owns `2^n` synapses. Virtual AHaH nodes are contiguous
//! partitions of that array; a spike id addresses synapse
//! `partition.base + id`. Partitions are never co-activated: every
//! instruction touches synapses of exactly one partition.
//!
//! A core is single-writer. Distinct cores share nothing and can live on
//! different threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use crate::device::{DeviceRng, DeviceState, MssParams, SimMode, StepMode};
use crate::error::{Error, Result};
use crate::node::{self, Direction, DriveConfig, Instruction, ReadResult, Synapse};
use crate::spike::SpikePattern;

pub const MAX_LOG2_CAPACITY: u32 = 28;

const MAGIC: &[u8; 4] = b"KTR1";

/// Which direction the next instruction on a partition must have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseExpectation {
    AnyPhase,
    ExpectForward,
    ExpectReverse,
}

impl PhaseExpectation {
    fn code(self) -> u8 {
        match self {
            PhaseExpectation::AnyPhase => 0,
            PhaseExpectation::ExpectForward => 1,
            PhaseExpectation::ExpectReverse => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(PhaseExpectation::AnyPhase),
            1 => Some(PhaseExpectation::ExpectForward),
            2 => Some(PhaseExpectation::ExpectReverse),
            _ => None,
        }
    }
}

/// Whether out-of-order directions are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Pairing {
    #[default]
    Strict,
    Relaxed,
}

/// Handle to a live partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Partition {
    pub core_id: u32,
    pub id: u32,
    pub base: usize,
    pub len: usize,
}

impl Partition {
    /// Core synapse index addressed by `spike_id`.
    pub fn address(&self, spike_id: usize) -> Result<usize> {
        if spike_id >= self.len {
            return Err(Error::CoActivation {
                spike: spike_id,
                len: self.len,
            });
        }
        Ok(self.base + spike_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    base: usize,
    len: usize,
    phase: PhaseExpectation,
    pairing: Pairing,
}

/// One executed instruction, kept for audit and replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecRecord {
    pub partition: u32,
    pub instruction: Instruction,
    pub pattern: SpikePattern,
    pub result: ReadResult,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreConfig {
    pub id: u32,
    pub log2_capacity: u32,
    pub params: MssParams,
    pub drive: DriveConfig,
    pub mode: SimMode,
    pub seed: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            id: 0,
            log2_capacity: 10,
            params: MssParams::default(),
            drive: DriveConfig::default(),
            mode: SimMode::Expectation,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Core {
    id: u32,
    params: MssParams,
    drive: DriveConfig,
    mode: SimMode,
    rng: DeviceRng,
    synapses: Vec<Synapse>,
    /// Everything at or above `bump` is unallocated.
    bump: usize,
    /// Sorted, coalesced free ranges below `bump`.
    free: Vec<(usize, usize)>,
    partitions: BTreeMap<u32, Slot>,
    next_partition: u32,
    seq: u64,
    logging: bool,
    log: Vec<ExecRecord>,
}

impl Core {
    pub fn new(cfg: CoreConfig) -> Result<Self> {
        cfg.params.validate()?;
        cfg.drive.validate()?;
        if cfg.log2_capacity > MAX_LOG2_CAPACITY {
            return Err(Error::Param {
                name: "log2_capacity",
                reason: format!("at most {MAX_LOG2_CAPACITY}"),
            });
        }
        let capacity = 1usize << cfg.log2_capacity;
        Ok(Self {
            id: cfg.id,
            params: cfg.params,
            drive: cfg.drive,
            mode: cfg.mode,
            rng: DeviceRng::seed_from_u64(cfg.seed),
            synapses: vec![Synapse::balanced(&cfg.params); capacity],
            bump: 0,
            free: Vec::new(),
            partitions: BTreeMap::new(),
            next_partition: 0,
            seq: 0,
            logging: true,
            log: Vec::new(),
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn capacity(&self) -> usize {
        self.synapses.len()
    }

    pub fn params(&self) -> &MssParams {
        &self.params
    }

    pub fn drive(&self) -> &DriveConfig {
        &self.drive
    }

    pub fn mode(&self) -> SimMode {
        self.mode
    }

    pub fn sequence(&self) -> u64 {
        self.seq
    }

    /// Synapses currently owned by live partitions.
    pub fn allocated(&self) -> usize {
        self.partitions.values().map(|s| s.len).sum()
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn set_logging(&mut self, on: bool) {
        self.logging = on;
    }

    pub fn log(&self) -> &[ExecRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<ExecRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn allocate(&mut self, size: usize) -> Result<Partition> {
        self.allocate_with(size, Pairing::Strict)
    }

    pub fn allocate_with(&mut self, size: usize, pairing: Pairing) -> Result<Partition> {
        if size == 0 {
            return Err(Error::Domain("partition size must be at least 1".into()));
        }
        let base = if let Some(pos) = self.free.iter().position(|&(_, len)| len >= size) {
            let (base, len) = self.free[pos];
            if len == size {
                self.free.remove(pos);
            } else {
                self.free[pos] = (base + size, len - size);
            }
            base
        } else if self.capacity() - self.bump >= size {
            let base = self.bump;
            self.bump += size;
            base
        } else {
            let largest_free = self.free.iter().map(|&(_, l)| l).max().unwrap_or(0);
            return Err(Error::Allocation {
                requested: size,
                available: largest_free.max(self.capacity() - self.bump),
            });
        };
        let id = self.next_partition;
        self.next_partition += 1;
        self.partitions.insert(
            id,
            Slot {
                base,
                len: size,
                phase: PhaseExpectation::AnyPhase,
                pairing,
            },
        );
        Ok(Partition {
            core_id: self.id,
            id,
            base,
            len: size,
        })
    }

    fn slot(&self, p: &Partition) -> Result<&Slot> {
        if p.core_id != self.id {
            return Err(Error::WrongCore {
                partition_core: p.core_id,
                core: self.id,
            });
        }
        match self.partitions.get(&p.id) {
            Some(slot) if slot.base == p.base && slot.len == p.len => Ok(slot),
            _ => Err(Error::StalePartition(p.id)),
        }
    }

    pub fn free(&mut self, p: &Partition) -> Result<()> {
        self.slot(p)?;
        self.partitions.remove(&p.id);
        let balanced = Synapse::balanced(&self.params);
        self.synapses[p.base..p.base + p.len].fill(balanced);
        self.release(p.base, p.len);
        Ok(())
    }

    fn release(&mut self, base: usize, len: usize) {
        let pos = self.free.partition_point(|&(b, _)| b < base);
        self.free.insert(pos, (base, len));
        // Coalesce with neighbours.
        if pos + 1 < self.free.len() {
            let (b, l) = self.free[pos];
            let (nb, nl) = self.free[pos + 1];
            if b + l == nb {
                self.free[pos] = (b, l + nl);
                self.free.remove(pos + 1);
            }
        }
        if pos > 0 {
            let (pb, pl) = self.free[pos - 1];
            let (b, l) = self.free[pos];
            if pb + pl == b {
                self.free[pos - 1] = (pb, pl + l);
                self.free.remove(pos);
            }
        }
        if let Some(&(b, l)) = self.free.last() {
            if b + l == self.bump {
                self.bump = b;
                self.free.pop();
            }
        }
    }

    /// Live partition handle by id.
    pub fn partition(&self, id: u32) -> Option<Partition> {
        self.partitions.get(&id).map(|s| Partition {
            core_id: self.id,
            id,
            base: s.base,
            len: s.len,
        })
    }

    pub fn partitions(&self) -> Vec<Partition> {
        self.partitions
            .keys()
            .filter_map(|&id| self.partition(id))
            .collect()
    }

    pub fn phase_expectation(&self, p: &Partition) -> Result<PhaseExpectation> {
        Ok(self.slot(p)?.phase)
    }

    pub fn set_pairing(&mut self, p: &Partition, pairing: Pairing) -> Result<()> {
        self.slot(p)?;
        if let Some(slot) = self.partitions.get_mut(&p.id) {
            slot.pairing = pairing;
        }
        Ok(())
    }

    pub fn partition_synapses(&self, p: &Partition) -> Result<&[Synapse]> {
        self.slot(p)?;
        Ok(&self.synapses[p.base..p.base + p.len])
    }

    /// Randomise a partition's devices around the balanced state. Each device
    /// gets `n_on = N/2·(1 + u)` with `u` uniform in `[−spread, spread]`.
    pub fn seed_partition(&mut self, p: &Partition, seed: u64, spread: f64) -> Result<()> {
        self.slot(p)?;
        if !(0.0..=1.0).contains(&spread) {
            return Err(Error::Domain(format!("spread {spread} outside [0, 1]")));
        }
        let mut rng = DeviceRng::seed_from_u64(seed);
        let half = self.params.n_switches as f64 / 2.0;
        let integral = self.mode == SimMode::Stochastic;
        let draw = |rng: &mut DeviceRng| {
            let n = half * (1.0 + rng.random_range(-spread..=spread));
            DeviceState::new(if integral { n.round() } else { n })
        };
        for s in &mut self.synapses[p.base..p.base + p.len] {
            s.a = draw(&mut rng);
            s.b = draw(&mut rng);
        }
        Ok(())
    }

    fn resolve_active(&self, p: &Partition, x: &SpikePattern) -> Result<Vec<usize>> {
        if x.is_empty() {
            return Err(Error::Domain("empty spike pattern".into()));
        }
        x.ids().iter().map(|&id| p.address(id)).collect()
    }

    /// Forward floating electrode voltage without adapting any device.
    /// Emulator-side diagnostic; the hardware has no such read.
    pub fn probe(&self, p: &Partition, x: &SpikePattern) -> Result<f64> {
        self.slot(p)?;
        let active = self.resolve_active(p, x)?;
        node::electrode_voltage_floating(
            &self.params,
            &self.synapses,
            &active,
            Direction::Forward,
            self.drive.v_drive,
        )
    }

    pub fn execute(
        &mut self,
        p: &Partition,
        x: &SpikePattern,
        inst: Instruction,
    ) -> Result<ReadResult> {
        let slot = *self.slot(p)?;
        let active = self.resolve_active(p, x)?;
        let direction = inst.direction();
        if slot.pairing == Pairing::Strict {
            let expected = match slot.phase {
                PhaseExpectation::AnyPhase => None,
                PhaseExpectation::ExpectForward => Some(Direction::Forward),
                PhaseExpectation::ExpectReverse => Some(Direction::Reverse),
            };
            if let Some(expected) = expected.filter(|&d| d != direction) {
                return Err(Error::Pairing {
                    partition: p.id,
                    expected: expected.name(),
                    got: direction.name(),
                });
            }
        }
        let mut mode = match self.mode {
            SimMode::Expectation => StepMode::Expectation,
            SimMode::Stochastic => StepMode::Stochastic(&mut self.rng),
        };
        let result = node::execute_phase(
            &self.params,
            &mut self.synapses,
            &active,
            inst,
            &self.drive,
            &mut mode,
        )?;
        if let Some(slot) = self.partitions.get_mut(&p.id) {
            slot.phase = match direction {
                Direction::Forward => PhaseExpectation::ExpectReverse,
                Direction::Reverse => PhaseExpectation::ExpectForward,
            };
        }
        self.seq += 1;
        if self.logging {
            self.log.push(ExecRecord {
                partition: p.id,
                instruction: inst,
                pattern: x.clone(),
                result,
                seq: self.seq,
            });
        }
        Ok(result)
    }

    /// Re-execute a recorded log and return the fresh results in order.
    pub fn replay(&mut self, records: &[ExecRecord]) -> Result<Vec<ReadResult>> {
        records
            .iter()
            .map(|r| {
                let p = self
                    .partition(r.partition)
                    .ok_or(Error::StalePartition(r.partition))?;
                self.execute(&p, &r.pattern, r.instruction)
            })
            .collect()
    }

    /// Versioned little-endian image of the whole core.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(64 + self.synapses.len() * 16);
        w.extend_from_slice(MAGIC);
        put_u64(&mut w, self.capacity() as u64);
        w.push(match self.mode {
            SimMode::Expectation => 0,
            SimMode::Stochastic => 1,
        });
        put_u32(&mut w, self.id);
        let p = &self.params;
        put_u32(&mut w, p.n_switches);
        for v in [
            p.g_on,
            p.g_off,
            p.v_on,
            p.v_off,
            p.t_c,
            p.temperature,
            p.phi,
            p.schottky_alpha_f,
            p.schottky_beta_f,
            p.schottky_alpha_r,
            p.schottky_beta_r,
            self.drive.v_drive,
            self.drive.dt,
        ] {
            put_f64(&mut w, v);
        }
        for s in &self.synapses {
            for d in [s.a, s.b] {
                match self.mode {
                    SimMode::Expectation => put_f64(&mut w, d.n_on),
                    SimMode::Stochastic => put_u32(&mut w, d.n_on as u32),
                }
            }
        }
        put_u64(&mut w, self.bump as u64);
        put_u64(&mut w, self.free.len() as u64);
        for &(b, l) in &self.free {
            put_u64(&mut w, b as u64);
            put_u64(&mut w, l as u64);
        }
        put_u64(&mut w, self.partitions.len() as u64);
        for (&id, slot) in &self.partitions {
            put_u32(&mut w, id);
            put_u64(&mut w, slot.base as u64);
            put_u64(&mut w, slot.len as u64);
            w.push(slot.phase.code());
            w.push(match slot.pairing {
                Pairing::Strict => 0,
                Pairing::Relaxed => 1,
            });
        }
        put_u32(&mut w, self.next_partition);
        put_u64(&mut w, self.seq);
        w.extend_from_slice(&self.rng.get_seed());
        put_u64(&mut w, self.rng.get_stream());
        w.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        w
    }

    pub fn restore(image: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: image, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Decode {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let cap_at = r.pos;
        let capacity = r.u64()? as usize;
        if !capacity.is_power_of_two() || capacity > 1 << MAX_LOG2_CAPACITY {
            return Err(r.error_at(cap_at, format!("capacity {capacity} is not a supported power of two")));
        }
        let mode_at = r.pos;
        let mode = match r.u8()? {
            0 => SimMode::Expectation,
            1 => SimMode::Stochastic,
            other => return Err(r.error_at(mode_at, format!("unknown mode flag {other}"))),
        };
        let id = r.u32()?;
        let params_at = r.pos;
        let mut params = MssParams {
            n_switches: r.u32()?,
            ..MssParams::default()
        };
        params.g_on = r.f64()?;
        params.g_off = r.f64()?;
        params.v_on = r.f64()?;
        params.v_off = r.f64()?;
        params.t_c = r.f64()?;
        params.temperature = r.f64()?;
        params.phi = r.f64()?;
        params.schottky_alpha_f = r.f64()?;
        params.schottky_beta_f = r.f64()?;
        params.schottky_alpha_r = r.f64()?;
        params.schottky_beta_r = r.f64()?;
        let drive = DriveConfig {
            v_drive: r.f64()?,
            dt: r.f64()?,
        };
        params
            .validate()
            .and_then(|_| drive.validate())
            .map_err(|e| r.error_at(params_at, e.to_string()))?;

        let total = params.n_switches as f64;
        let mut synapses = Vec::with_capacity(capacity);
        for _ in 0..capacity {
            let mut pair = [DeviceState::default(); 2];
            for d in &mut pair {
                let at = r.pos;
                let n_on = match mode {
                    SimMode::Expectation => r.f64()?,
                    SimMode::Stochastic => r.u32()? as f64,
                };
                if !(0.0..=total).contains(&n_on) {
                    return Err(r.error_at(at, format!("device state {n_on} out of range")));
                }
                *d = DeviceState::new(n_on);
            }
            synapses.push(Synapse {
                a: pair[0],
                b: pair[1],
            });
        }

        let bump_at = r.pos;
        let bump = r.u64()? as usize;
        if bump > capacity {
            return Err(r.error_at(bump_at, "allocator mark beyond capacity".into()));
        }
        let n_free = r.count(16)?;
        let mut free = Vec::with_capacity(n_free);
        let mut floor = 0usize;
        for _ in 0..n_free {
            let at = r.pos;
            let b = r.u64()? as usize;
            let l = r.u64()? as usize;
            if l == 0 || b < floor || b.checked_add(l).is_none_or(|end| end > bump) {
                return Err(r.error_at(at, "inconsistent free list".into()));
            }
            floor = b + l;
            free.push((b, l));
        }
        let n_parts = r.count(22)?;
        let mut partitions = BTreeMap::new();
        let mut ranges: Vec<(usize, usize)> = free.clone();
        for _ in 0..n_parts {
            let at = r.pos;
            let pid = r.u32()?;
            let base = r.u64()? as usize;
            let len = r.u64()? as usize;
            let phase = PhaseExpectation::from_code(r.u8()?)
                .ok_or_else(|| r.error_at(at, "unknown phase code".into()))?;
            let pairing = match r.u8()? {
                0 => Pairing::Strict,
                1 => Pairing::Relaxed,
                _ => return Err(r.error_at(at, "unknown pairing code".into())),
            };
            if len == 0 || base.checked_add(len).is_none_or(|end| end > bump) {
                return Err(r.error_at(at, "partition outside allocated region".into()));
            }
            ranges.push((base, len));
            if partitions
                .insert(pid, Slot { base, len, phase, pairing })
                .is_some()
            {
                return Err(r.error_at(at, format!("duplicate partition id {pid}")));
            }
        }
        ranges.sort_unstable();
        if ranges.windows(2).any(|w| w[0].0 + w[0].1 > w[1].0) {
            return Err(r.error_at(bump_at, "overlapping partitions".into()));
        }
        let next_at = r.pos;
        let next_partition = r.u32()?;
        if partitions.keys().next_back().is_some_and(|&k| k >= next_partition) {
            return Err(r.error_at(next_at, "partition counter behind live ids".into()));
        }
        let seq = r.u64()?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let mut word = [0u8; 16];
        word.copy_from_slice(r.take(16)?);
        if r.pos != image.len() {
            return Err(r.error_at(r.pos, "trailing bytes".into()));
        }
        let mut rng = DeviceRng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from_le_bytes(word));

        Ok(Self {
            id,
            params,
            drive,
            mode,
            rng,
            synapses,
            bump,
            free,
            partitions,
            next_partition,
            seq,
            logging: true,
            log: Vec::new(),
        })
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, reason: String) -> Error {
        Error::Decode { offset, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Decode {
                offset: self.pos,
                reason: format!("truncated image: need {n} more bytes"),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Element count whose entries need at least `entry` bytes each.
    fn count(&mut self, entry: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / entry {
            return Err(self.error_at(at, format!("count {n} exceeds remaining image")));
        }
        Ok(n)
    }
}
