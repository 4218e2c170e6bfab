//! The single-owner engine behind the daemon: one core, the configured
//! learners, and the latest pattern seen on every stream and joiner.
//!
//! Every inbound message is validated against a scratch copy of the routing
//! state first; the core is only touched once the whole message is known to
//! be acceptable, so a rejected message changes nothing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::Instant;

use ktram::learn::{Classifier, Clusterer};
use ktram::ram::{Core, CoreConfig};
use ktram::spike::{self, SpikePattern, SpikeSpace};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{NetlistConfig, NodeKind, StreamSource};
use crate::wire::{
    ack_line, parse_frame, Control, DataFrame, ErrorCode, Inbound, LabelConfidence, NodeResult,
    Outbound, WireError,
};

const SNAPSHOT_MAGIC: &[u8; 4] = b"KSN1";

#[derive(Debug, Clone)]
enum Learner {
    Classifier(Classifier),
    Clusterer(Clusterer),
}

impl Learner {
    fn partition_ids(&self) -> Vec<u32> {
        let parts = match self {
            Learner::Classifier(c) => c.partitions(),
            Learner::Clusterer(c) => c.partitions(),
        };
        parts.iter().map(|p| p.id).collect()
    }
}

/// Routing state and counters saved next to the core image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RouteState {
    latest: BTreeMap<String, Vec<usize>>,
    last_time: BTreeMap<String, u64>,
    partitions: BTreeMap<String, Vec<u32>>,
    counts: BTreeMap<String, Vec<u64>>,
    messages: u64,
    per_stream: BTreeMap<String, u64>,
}

pub struct Pipeline {
    cfg: NetlistConfig,
    core: Core,
    learners: Vec<Learner>,
    latest: HashMap<String, SpikePattern>,
    last_time: HashMap<String, u64>,
    /// Joiners in dependency order.
    joiner_order: Vec<usize>,
    outputs: HashSet<String>,
    started: Instant,
    messages: u64,
    errors: u64,
    per_stream: BTreeMap<String, u64>,
}

/// What the executor should do after a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub lines: Vec<String>,
    pub shutdown: bool,
}

fn internal(e: ktram::Error) -> WireError {
    WireError::new(ErrorCode::Internal, e.to_string())
}

impl Pipeline {
    pub fn new(cfg: NetlistConfig) -> ktram::Result<Self> {
        let mut core = Core::new(CoreConfig {
            id: 0,
            log2_capacity: cfg.server.log2_capacity,
            params: cfg.server.params,
            drive: cfg.server.drive,
            mode: cfg.server.mode,
            seed: cfg.server.seed,
        })?;
        core.set_logging(false);
        let mut learners = Vec::with_capacity(cfg.nodes.len());
        for n in &cfg.nodes {
            let space = SpikeSpace::new(n.size)?;
            learners.push(match &n.kind {
                NodeKind::Classifier { labels } => {
                    Learner::Classifier(Classifier::new(&mut core, labels, space)?)
                }
                NodeKind::Clusterer { features } => {
                    Learner::Clusterer(Clusterer::new(&mut core, *features, space)?)
                }
            });
        }
        let joiner_order = topo_order(&cfg);
        let outputs = cfg.outputs.iter().cloned().collect();
        Ok(Self {
            cfg,
            core,
            learners,
            latest: HashMap::new(),
            last_time: HashMap::new(),
            joiner_order,
            outputs,
            started: Instant::now(),
            messages: 0,
            errors: 0,
            per_stream: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &NetlistConfig {
        &self.cfg
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    /// Parse and act on one frame. Never panics on bad input; every failure
    /// becomes an error line.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        let result = parse_frame(line).and_then(|frame| match frame {
            Inbound::Data(f) => self.handle_data(&f).map(|out| {
                let lines = if out.is_empty() {
                    vec![ack_line(&f.stream, f.time)]
                } else {
                    out.iter().map(Outbound::to_line).collect()
                };
                Reply {
                    lines,
                    shutdown: false,
                }
            }),
            Inbound::Control(c) => self.handle_control(&c),
        });
        result.unwrap_or_else(|e| self.reject(&e))
    }

    /// Count and render an error detected before the frame reached us.
    pub fn reject(&mut self, e: &WireError) -> Reply {
        self.errors += 1;
        Reply {
            lines: vec![e.to_line()],
            shutdown: false,
        }
    }

    fn handle_control(&mut self, c: &Control) -> Result<Reply, WireError> {
        let (line, shutdown) = match c {
            Control::Status => (self.status().to_string(), false),
            Control::Snapshot(path) => {
                let bytes = self.snapshot_to(path)?;
                (
                    json!({"control": "snapshot", "path": path, "bytes": bytes}).to_string(),
                    false,
                )
            }
            Control::Restore(path) => {
                self.restore_from(path)?;
                (json!({"control": "restore", "path": path, "ok": true}).to_string(), false)
            }
            Control::Shutdown => (json!({"control": "shutdown", "ok": true}).to_string(), true),
        };
        Ok(Reply {
            lines: vec![line],
            shutdown,
        })
    }

    pub fn status(&self) -> Value {
        let capacity = self.core.capacity();
        let allocated = self.core.allocated();
        json!({
            "control": "status",
            "uptime_ms": self.started.elapsed().as_millis() as u64,
            "messages": self.messages,
            "errors": self.errors,
            "streams": self.per_stream,
            "core": {
                "capacity": capacity,
                "allocated": allocated,
                "utilization": allocated as f64 / capacity as f64,
                "sequence": self.core.sequence(),
            },
        })
    }

    fn stream_pattern(&self, f: &DataFrame) -> Result<SpikePattern, WireError> {
        let def = self.cfg.stream(&f.stream).ok_or_else(|| {
            WireError::new(ErrorCode::UnknownStream, format!("no stream named `{}`", f.stream))
        })?;
        match (&def.source, &f.spikes, f.value) {
            (StreamSource::Spikes(space), Some(ids), None) => {
                let n = space.size();
                if let Some(bad) = ids.iter().find(|&&id| id >= n as u64) {
                    return Err(WireError::new(
                        ErrorCode::SpikeRange,
                        format!("spike id {bad} outside stream `{}` of {n} channels", f.stream),
                    ));
                }
                let mut sorted: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
                sorted.sort_unstable();
                if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                    return Err(WireError::new(
                        ErrorCode::SpikeDuplicate,
                        format!("spike id {} repeated", w[0]),
                    ));
                }
                SpikePattern::new(sorted, *space).map_err(internal)
            }
            (StreamSource::Encoder(e), None, Some(v)) => {
                if !v.is_finite() {
                    return Err(WireError::new(ErrorCode::Schema, "`value` must be finite"));
                }
                let enc = self.cfg.encoder(e).expect("validated config");
                Ok(enc.encoder.encode(v))
            }
            (StreamSource::Spikes(_), _, _) => Err(WireError::new(
                ErrorCode::Schema,
                format!("stream `{}` takes `spikes`, not `value`", f.stream),
            )),
            (StreamSource::Encoder(_), _, _) => Err(WireError::new(
                ErrorCode::Schema,
                format!("stream `{}` is encoded and takes `value`, not `spikes`", f.stream),
            )),
        }
    }

    pub fn handle_data(&mut self, f: &DataFrame) -> Result<Vec<Outbound>, WireError> {
        let x = self.stream_pattern(f)?;
        if let Some(&last) = self.last_time.get(&f.stream) {
            if f.time < last {
                return Err(WireError::new(
                    ErrorCode::Time,
                    format!("time {} precedes {last} on stream `{}`", f.time, f.stream),
                ));
            }
        }

        // Route on a scratch copy.
        let mut changed: HashSet<&str> = HashSet::from([f.stream.as_str()]);
        let mut scratch: HashMap<&str, SpikePattern> = HashMap::new();
        scratch.insert(f.stream.as_str(), x);
        for &ji in &self.joiner_order {
            let j = &self.cfg.joiners[ji];
            if !j.inputs.iter().any(|i| changed.contains(i.as_str())) {
                continue;
            }
            let mut parts = Vec::with_capacity(j.inputs.len());
            for input in &j.inputs {
                let p = scratch
                    .get(input.as_str())
                    .or_else(|| self.latest.get(input));
                match p {
                    Some(p) => parts.push((
                        p.clone(),
                        SpikeSpace::new(self.cfg.space_of(input).expect("validated")).map_err(internal)?,
                    )),
                    None => break,
                }
            }
            if parts.len() == j.inputs.len() {
                let (joined, _) = spike::join(&parts).map_err(internal)?;
                scratch.insert(j.name.as_str(), joined);
                changed.insert(j.name.as_str());
            }
        }

        let triggered: Vec<usize> = (0..self.cfg.nodes.len())
            .filter(|&i| changed.contains(self.cfg.nodes[i].input.as_str()))
            .collect();
        for &i in &triggered {
            let n = &self.cfg.nodes[i];
            if scratch[n.input.as_str()].is_empty() {
                return Err(WireError::new(
                    ErrorCode::Empty,
                    format!("node `{}` would receive an empty pattern", n.name),
                ));
            }
        }
        if let Some(label) = &f.label {
            let mut consumers = 0;
            for &i in &triggered {
                if let NodeKind::Classifier { labels } = &self.cfg.nodes[i].kind {
                    if !labels.contains(label) {
                        return Err(WireError::new(
                            ErrorCode::Label,
                            format!("node `{}` has no label `{label}`", self.cfg.nodes[i].name),
                        ));
                    }
                    consumers += 1;
                }
            }
            if consumers == 0 {
                return Err(WireError::new(
                    ErrorCode::Label,
                    format!("label `{label}` given but no classifier consumes this message"),
                ));
            }
        }

        // Commit.
        let scratch: Vec<(String, SpikePattern)> =
            scratch.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
        for (k, v) in scratch {
            self.latest.insert(k, v);
        }
        self.last_time.insert(f.stream.clone(), f.time);
        self.messages += 1;
        *self.per_stream.entry(f.stream.clone()).or_default() += 1;

        let mut out = Vec::new();
        for i in triggered {
            let node = &self.cfg.nodes[i];
            let x = &self.latest[&node.input];
            let result = match &mut self.learners[i] {
                Learner::Classifier(c) => {
                    let ranking = match &f.label {
                        Some(label) => c.train_step(&mut self.core, x, label),
                        None => c.classify(&mut self.core, x),
                    }
                    .map_err(internal)?;
                    NodeResult::Ranking(
                        ranking
                            .into_iter()
                            .map(|s| LabelConfidence {
                                label: s.label,
                                confidence: s.confidence,
                            })
                            .collect(),
                    )
                }
                Learner::Clusterer(c) => {
                    NodeResult::Feature(c.cluster_step(&mut self.core, x).map_err(internal)?)
                }
            };
            if self.outputs.contains(&node.name) {
                out.push(Outbound {
                    node: node.name.clone(),
                    time: f.time,
                    result,
                });
            }
        }
        Ok(out)
    }

    fn route_state(&self) -> RouteState {
        let mut partitions = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for (n, l) in self.cfg.nodes.iter().zip(&self.learners) {
            partitions.insert(n.name.clone(), l.partition_ids());
            if let Learner::Classifier(c) = l {
                counts.insert(n.name.clone(), c.counts().to_vec());
            }
        }
        RouteState {
            latest: self
                .latest
                .iter()
                .map(|(k, v)| (k.clone(), v.ids().to_vec()))
                .collect(),
            last_time: self.last_time.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            partitions,
            counts,
            messages: self.messages,
            per_stream: self.per_stream.clone(),
        }
    }

    /// Core image plus routing state.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let core = self.core.snapshot();
        let route = serde_json::to_vec(&self.route_state()).expect("route state serialises");
        let mut out = Vec::with_capacity(core.len() + route.len() + 20);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&(core.len() as u64).to_le_bytes());
        out.extend_from_slice(&core);
        out.extend_from_slice(&(route.len() as u64).to_le_bytes());
        out.extend_from_slice(&route);
        out
    }

    pub fn snapshot_to(&self, path: &Path) -> Result<usize, WireError> {
        let bytes = self.snapshot_bytes();
        // Write then rename so a crash never leaves a half-written image.
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, &bytes)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| WireError::new(ErrorCode::Snapshot, format!("{}: {e}", path.display())))?;
        Ok(bytes.len())
    }

    pub fn restore_from(&mut self, path: &Path) -> Result<(), WireError> {
        let bytes = std::fs::read(path)
            .map_err(|e| WireError::new(ErrorCode::Restore, format!("{}: {e}", path.display())))?;
        self.restore_bytes(&bytes)
    }

    /// Replace all state with a snapshot, or leave everything untouched if
    /// the image is damaged or was taken from a different netlist.
    pub fn restore_bytes(&mut self, bytes: &[u8]) -> Result<(), WireError> {
        let bad = |detail: String| WireError::new(ErrorCode::Restore, detail);
        if bytes.len() < 12 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(bad("not a daemon snapshot (bad magic)".into()));
        }
        let core_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let core_end = 12usize
            .checked_add(core_len)
            .filter(|&e| e + 8 <= bytes.len())
            .ok_or_else(|| bad("truncated snapshot".into()))?;
        let mut core = Core::restore(&bytes[12..core_end]).map_err(|e| match e {
            ktram::Error::Decode { offset, reason } => {
                bad(format!("core image at byte {}: {reason}", offset + 12))
            }
            other => bad(other.to_string()),
        })?;
        core.set_logging(false);
        let route_len = u64::from_le_bytes(bytes[core_end..core_end + 8].try_into().unwrap()) as usize;
        let route_bytes = &bytes[core_end + 8..];
        if route_bytes.len() != route_len {
            return Err(bad("routing section length mismatch".into()));
        }
        let route: RouteState = serde_json::from_slice(route_bytes)
            .map_err(|e| bad(format!("routing section: {e}")))?;

        let mut learners = Vec::with_capacity(self.cfg.nodes.len());
        for n in &self.cfg.nodes {
            let ids = route
                .partitions
                .get(&n.name)
                .ok_or_else(|| bad(format!("snapshot has no node `{}`", n.name)))?;
            let space = SpikeSpace::new(n.size).map_err(|e| bad(e.to_string()))?;
            let learner = match &n.kind {
                NodeKind::Classifier { labels } => {
                    let counts = route
                        .counts
                        .get(&n.name)
                        .cloned()
                        .unwrap_or_else(|| vec![0; labels.len()]);
                    Classifier::from_parts(&core, labels.clone(), space, ids, counts)
                        .map(Learner::Classifier)
                }
                NodeKind::Clusterer { features } => {
                    if ids.len() != *features {
                        return Err(bad(format!("node `{}` feature count differs", n.name)));
                    }
                    Clusterer::from_parts(&core, space, ids).map(Learner::Clusterer)
                }
            }
            .map_err(|e| bad(format!("node `{}`: {e}", n.name)))?;
            learners.push(learner);
        }
        let mut latest = HashMap::new();
        for (name, ids) in route.latest {
            let size = self
                .cfg
                .space_of(&name)
                .ok_or_else(|| bad(format!("snapshot routes unknown source `{name}`")))?;
            let space = SpikeSpace::new(size).map_err(|e| bad(e.to_string()))?;
            let p = SpikePattern::new(ids, space).map_err(|e| bad(format!("`{name}`: {e}")))?;
            latest.insert(name, p);
        }

        self.core = core;
        self.learners = learners;
        self.latest = latest;
        self.last_time = route.last_time.into_iter().collect();
        self.messages = route.messages;
        self.per_stream = route.per_stream;
        Ok(())
    }
}

fn topo_order(cfg: &NetlistConfig) -> Vec<usize> {
    fn visit(i: usize, cfg: &NetlistConfig, done: &mut Vec<bool>, out: &mut Vec<usize>) {
        if done[i] {
            return;
        }
        done[i] = true;
        for input in &cfg.joiners[i].inputs {
            if let Some(k) = cfg.joiners.iter().position(|j| &j.name == input) {
                visit(k, cfg, done, out);
            }
        }
        out.push(i);
    }
    let mut done = vec![false; cfg.joiners.len()];
    let mut out = Vec::new();
    for i in 0..cfg.joiners.len() {
        visit(i, cfg, &mut done, &mut out);
    }
    out
}
