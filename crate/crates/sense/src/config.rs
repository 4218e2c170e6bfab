//! Netlist configuration: streams → encoders → joiners → learner nodes.
//!
//! The file is a YAML document restricted to scalars, maps and lists.
//! Every diagnostic carries a stable code and the 1-based line it refers to.

use std::collections::{HashMap, HashSet};
use std::fmt;

use ktram::device::{MssParams, SimMode};
use ktram::node::DriveConfig;
use ktram::spike::{ScalarEncoder, SpikeSpace};
use marked_yaml::types::{MarkedMappingNode, MarkedScalarNode, MarkedSequenceNode};
use marked_yaml::{LoaderOptions, Node};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 7313;
pub const PORT_ENV: &str = "KNOWM_SENSE_PORT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfigCode {
    Syntax,
    UnknownKey,
    MissingKey,
    Type,
    Value,
    Duplicate,
    Dangling,
    Cycle,
    SpaceMismatch,
}

impl ConfigCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfigCode::Syntax => "E_CONFIG_SYNTAX",
            ConfigCode::UnknownKey => "E_CONFIG_UNKNOWN_KEY",
            ConfigCode::MissingKey => "E_CONFIG_MISSING_KEY",
            ConfigCode::Type => "E_CONFIG_TYPE",
            ConfigCode::Value => "E_CONFIG_VALUE",
            ConfigCode::Duplicate => "E_CONFIG_DUPLICATE",
            ConfigCode::Dangling => "E_CONFIG_DANGLING",
            ConfigCode::Cycle => "E_CONFIG_CYCLE",
            ConfigCode::SpaceMismatch => "E_CONFIG_SPACE",
        }
    }
}

impl fmt::Display for ConfigCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code} at line {line}: {detail}")]
pub struct ConfigError {
    pub code: ConfigCode,
    pub line: usize,
    pub detail: String,
}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(code: ConfigCode, line: usize, detail: impl Into<String>) -> Result<T> {
    Err(ConfigError {
        code,
        line,
        detail: detail.into(),
    })
}

fn line_of(node: &Node) -> usize {
    node.span().start().map_or(0, |m| m.line())
}

fn scalar_line(s: &MarkedScalarNode) -> usize {
    s.span().start().map_or(0, |m| m.line())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub address: String,
    pub port: u16,
    pub log2_capacity: u32,
    pub mode: SimMode,
    pub seed: u64,
    pub drive: DriveConfig,
    pub params: MssParams,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            address: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            log2_capacity: 16,
            mode: SimMode::Expectation,
            seed: 0,
            drive: DriveConfig::default(),
            params: MssParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamSource {
    Spikes(SpikeSpace),
    Encoder(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamDef {
    pub name: String,
    pub source: StreamSource,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDef {
    pub name: String,
    pub encoder: ScalarEncoder,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinerDef {
    pub name: String,
    pub inputs: Vec<String>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Classifier { labels: Vec<String> },
    Clusterer { features: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDef {
    pub name: String,
    pub input: String,
    pub kind: NodeKind,
    /// Synapses per partition; equals the input's spike space.
    pub size: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetlistConfig {
    pub server: ServerConfig,
    pub encoders: Vec<EncoderDef>,
    pub streams: Vec<StreamDef>,
    pub joiners: Vec<JoinerDef>,
    pub nodes: Vec<NodeDef>,
    pub outputs: Vec<String>,
}

impl NetlistConfig {
    pub fn stream(&self, name: &str) -> Option<&StreamDef> {
        self.streams.iter().find(|s| s.name == name)
    }

    pub fn encoder(&self, name: &str) -> Option<&EncoderDef> {
        self.encoders.iter().find(|e| e.name == name)
    }

    pub fn joiner(&self, name: &str) -> Option<&JoinerDef> {
        self.joiners.iter().find(|j| j.name == name)
    }

    /// Spike space of a stream or joiner. Only meaningful on a validated
    /// config.
    pub fn space_of(&self, source: &str) -> Option<usize> {
        if let Some(s) = self.stream(source) {
            return match &s.source {
                StreamSource::Spikes(space) => Some(space.size()),
                StreamSource::Encoder(e) => self.encoder(e).map(|e| e.encoder.space().size()),
            };
        }
        let j = self.joiner(source)?;
        j.inputs.iter().map(|i| self.space_of(i)).sum()
    }

    /// Synapses the nodes will allocate.
    pub fn synapses_needed(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.kind {
                NodeKind::Classifier { labels } => labels.len() * n.size,
                NodeKind::Clusterer { features } => features * (n.size + 1),
            })
            .sum()
    }
}

/// Reads typed values out of one mapping and rejects keys nobody asked for.
struct Fields<'a> {
    map: &'a MarkedMappingNode,
    line: usize,
    context: &'a str,
    allowed: &'static [&'static str],
}

impl<'a> Fields<'a> {
    fn new(node: &'a Node, context: &'a str, allowed: &'static [&'static str]) -> Result<Self> {
        let map = node
            .as_mapping()
            .ok_or_else(|| type_error(node, context, "a mapping"))?;
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return err(
                    ConfigCode::UnknownKey,
                    scalar_line(key),
                    format!("unknown key `{}` in {context}", key.as_str()),
                );
            }
        }
        Ok(Self {
            map,
            line: line_of(node),
            context,
            allowed,
        })
    }

    fn get(&self, key: &str) -> Option<&'a Node> {
        debug_assert!(self.allowed.contains(&key));
        self.map.get_node(key)
    }

    fn require(&self, key: &str) -> Result<&'a Node> {
        self.get(key).ok_or_else(|| ConfigError {
            code: ConfigCode::MissingKey,
            line: self.line,
            detail: format!("{} lacks required key `{key}`", self.context),
        })
    }

    fn str(&self, key: &str) -> Result<Option<(String, usize)>> {
        self.get(key)
            .map(|n| scalar(n, &format!("`{key}` in {}", self.context)))
            .transpose()
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<(T, usize)>> {
        let Some((text, line)) = self.str(key)? else {
            return Ok(None);
        };
        match text.parse::<T>() {
            Ok(v) => Ok(Some((v, line))),
            Err(_) => err(
                ConfigCode::Value,
                line,
                format!("`{key}` in {} must be {what}, found `{text}`", self.context),
            ),
        }
    }
}

fn type_error(node: &Node, context: &str, want: &str) -> ConfigError {
    let got = match node {
        Node::Scalar(_) => "a scalar",
        Node::Mapping(_) => "a mapping",
        Node::Sequence(_) => "a list",
    };
    ConfigError {
        code: ConfigCode::Type,
        line: line_of(node),
        detail: format!("{context} must be {want}, found {got}"),
    }
}

fn scalar(node: &Node, context: &str) -> Result<(String, usize)> {
    match node.as_scalar() {
        Some(s) => Ok((s.as_str().to_owned(), scalar_line(s))),
        None => Err(type_error(node, context, "a scalar")),
    }
}

fn sequence<'a>(node: &'a Node, context: &str) -> Result<&'a MarkedSequenceNode> {
    node.as_sequence()
        .ok_or_else(|| type_error(node, context, "a list"))
}

fn scalar_list(node: &Node, context: &str) -> Result<Vec<(String, usize)>> {
    sequence(node, context)?
        .iter()
        .map(|n| scalar(n, &format!("entries of {context}")))
        .collect()
}

fn parse_server(node: &Node) -> Result<ServerConfig> {
    const KEYS: &[&str] = &["address", "port", "capacity", "mode", "seed", "drive", "params"];
    let f = Fields::new(node, "server", KEYS)?;
    let mut cfg = ServerConfig::default();
    if let Some((a, _)) = f.str("address")? {
        cfg.address = a;
    }
    if let Some((p, _)) = f.parsed::<u16>("port", "a port number")? {
        cfg.port = p;
    }
    if let Some((c, line)) = f.parsed::<u32>("capacity", "log2 of the synapse count")? {
        if c > ktram::ram::MAX_LOG2_CAPACITY {
            return err(
                ConfigCode::Value,
                line,
                format!("capacity is log2 of the synapse count, at most {}", ktram::ram::MAX_LOG2_CAPACITY),
            );
        }
        cfg.log2_capacity = c;
    }
    if let Some((m, _)) = f.parsed::<SimMode>("mode", "`stochastic` or `expectation`")? {
        cfg.mode = m;
    }
    if let Some((s, _)) = f.parsed::<u64>("seed", "an unsigned integer")? {
        cfg.seed = s;
    }
    if let Some(drive) = f.get("drive") {
        const DRIVE: &[&str] = &["v_drive", "dt"];
        let d = Fields::new(drive, "server.drive", DRIVE)?;
        if let Some((v, _)) = d.parsed::<f64>("v_drive", "a number")? {
            cfg.drive.v_drive = v;
        }
        if let Some((v, _)) = d.parsed::<f64>("dt", "a number")? {
            cfg.drive.dt = v;
        }
        if let Err(e) = cfg.drive.validate() {
            return err(ConfigCode::Value, line_of(drive), e.to_string());
        }
    }
    if let Some(params) = f.get("params") {
        let map = params
            .as_mapping()
            .ok_or_else(|| type_error(params, "server.params", "a mapping"))?;
        // Reuse the flat parameter format so both sources accept the same
        // keys and values.
        let mut text = String::new();
        let mut lines = Vec::new();
        for (k, v) in map.iter() {
            let (value, line) = scalar(v, &format!("server.params.{}", k.as_str()))?;
            text.push_str(&format!("{}={}\n", k.as_str(), value));
            lines.push(line);
        }
        cfg.params = MssParams::parse(&text).map_err(|e| match e {
            ktram::Error::Parse { line, reason } => ConfigError {
                code: if reason.starts_with("unknown parameter") {
                    ConfigCode::UnknownKey
                } else {
                    ConfigCode::Value
                },
                line: lines.get(line.wrapping_sub(1)).copied().unwrap_or(line_of(params)),
                detail: format!("server.params: {reason}"),
            },
            other => ConfigError {
                code: ConfigCode::Value,
                line: line_of(params),
                detail: other.to_string(),
            },
        })?;
    }
    Ok(cfg)
}

struct Names {
    seen: HashMap<String, usize>,
}

impl Names {
    fn claim(&mut self, name: &str, line: usize) -> Result<()> {
        if name.is_empty() {
            return err(ConfigCode::Value, line, "names must be non-empty");
        }
        if let Some(first) = self.seen.insert(name.to_owned(), line) {
            return err(
                ConfigCode::Duplicate,
                line,
                format!("`{name}` is already defined at line {first}"),
            );
        }
        Ok(())
    }
}

pub fn load_config(text: &str) -> Result<NetlistConfig> {
    let root = marked_yaml::parse_yaml_with_options(
        0,
        text,
        LoaderOptions::default().error_on_duplicate_keys(true),
    )
    .map_err(|e| {
        use marked_yaml::LoadError::*;
        let (code, marker) = match &e {
            TopLevelMustBeMapping(m)
            | TopLevelMustBeSequence(m)
            | UnexpectedAnchor(m)
            | MappingKeyMustBeScalar(m)
            | UnexpectedTag(m)
            | ScanError(m, _) => (ConfigCode::Syntax, Some(*m)),
            DuplicateKey(inner) => (ConfigCode::Duplicate, inner.key.span().start().copied()),
        };
        ConfigError {
            code,
            line: marker.map_or(0, |m| m.line()),
            detail: e.to_string(),
        }
    })?;

    const TOP: &[&str] = &["server", "encoders", "streams", "joiners", "nodes", "outputs"];
    let top = Fields::new(&root, "the document", TOP)?;
    let server = match top.get("server") {
        Some(n) => parse_server(n)?,
        None => ServerConfig::default(),
    };
    let mut names = Names {
        seen: HashMap::new(),
    };

    let mut encoders = Vec::new();
    if let Some(list) = top.get("encoders") {
        for item in sequence(list, "encoders")?.iter() {
            const KEYS: &[&str] = &["name", "lo", "hi", "bins", "k"];
            let f = Fields::new(item, "an encoder", KEYS)?;
            let (name, line) = scalar(f.require("name")?, "encoder name")?;
            names.claim(&name, line)?;
            f.require("lo")?;
            f.require("hi")?;
            f.require("bins")?;
            f.require("k")?;
            let lo = f.parsed::<f64>("lo", "a number")?.unwrap().0;
            let hi = f.parsed::<f64>("hi", "a number")?.unwrap().0;
            let bins = f.parsed::<usize>("bins", "a positive integer")?.unwrap().0;
            let k = f.parsed::<usize>("k", "a positive integer")?.unwrap().0;
            let encoder = ScalarEncoder::new(lo, hi, bins, k).or_else(|e| {
                err(ConfigCode::Value, line_of(item), format!("encoder `{name}`: {e}"))
            })?;
            encoders.push(EncoderDef {
                name,
                encoder,
                line: line_of(item),
            });
        }
    }

    let mut streams = Vec::new();
    let stream_list = top.require("streams")?;
    for item in sequence(stream_list, "streams")?.iter() {
        const KEYS: &[&str] = &["name", "space", "encoder"];
        let f = Fields::new(item, "a stream", KEYS)?;
        let (name, line) = scalar(f.require("name")?, "stream name")?;
        names.claim(&name, line)?;
        let source = match (f.parsed::<usize>("space", "a positive integer")?, f.str("encoder")?) {
            (Some((n, l)), None) => StreamSource::Spikes(SpikeSpace::new(n).or_else(|e| {
                err(ConfigCode::Value, l, format!("stream `{name}`: {e}"))
            })?),
            (None, Some((e, _))) => StreamSource::Encoder(e),
            (Some(_), Some(_)) => {
                return err(
                    ConfigCode::Value,
                    line_of(item),
                    format!("stream `{name}` sets both `space` and `encoder`"),
                )
            }
            (None, None) => {
                return err(
                    ConfigCode::MissingKey,
                    line_of(item),
                    format!("stream `{name}` needs `space` or `encoder`"),
                )
            }
        };
        streams.push(StreamDef {
            name,
            source,
            line: line_of(item),
        });
    }
    if streams.is_empty() {
        return err(ConfigCode::Value, line_of(stream_list), "at least one stream is required");
    }

    let mut joiners = Vec::new();
    if let Some(list) = top.get("joiners") {
        for item in sequence(list, "joiners")?.iter() {
            const KEYS: &[&str] = &["name", "inputs"];
            let f = Fields::new(item, "a joiner", KEYS)?;
            let (name, line) = scalar(f.require("name")?, "joiner name")?;
            names.claim(&name, line)?;
            let inputs = scalar_list(f.require("inputs")?, "joiner inputs")?;
            if inputs.is_empty() {
                return err(ConfigCode::Value, line, format!("joiner `{name}` has no inputs"));
            }
            joiners.push((
                JoinerDef {
                    name,
                    inputs: inputs.iter().map(|(n, _)| n.clone()).collect(),
                    line: line_of(item),
                },
                inputs,
            ));
        }
    }

    let mut nodes = Vec::new();
    let node_list = top.require("nodes")?;
    for item in sequence(node_list, "nodes")?.iter() {
        const KEYS: &[&str] = &["name", "type", "input", "labels", "features", "size"];
        let f = Fields::new(item, "a node", KEYS)?;
        let (name, line) = scalar(f.require("name")?, "node name")?;
        names.claim(&name, line)?;
        let (kind_name, kind_line) = scalar(f.require("type")?, "node type")?;
        let input = scalar(f.require("input")?, "node input")?;
        let kind = match kind_name.as_str() {
            "classifier" => {
                if f.get("features").is_some() {
                    return err(ConfigCode::Value, line, "a classifier takes `labels`, not `features`");
                }
                let labels = scalar_list(f.require("labels")?, "labels")?;
                if labels.is_empty() {
                    return err(ConfigCode::Value, line, format!("classifier `{name}` has no labels"));
                }
                let mut seen = HashSet::new();
                for (l, ll) in &labels {
                    if !seen.insert(l.clone()) {
                        return err(ConfigCode::Duplicate, *ll, format!("label `{l}` repeated"));
                    }
                }
                NodeKind::Classifier {
                    labels: labels.into_iter().map(|(l, _)| l).collect(),
                }
            }
            "clusterer" => {
                if f.get("labels").is_some() {
                    return err(ConfigCode::Value, line, "a clusterer takes `features`, not `labels`");
                }
                f.require("features")?;
                let (features, fl) = f.parsed::<usize>("features", "a positive integer")?.unwrap();
                if features == 0 {
                    return err(ConfigCode::Value, fl, "a clusterer needs at least one feature");
                }
                NodeKind::Clusterer { features }
            }
            other => {
                return err(
                    ConfigCode::Value,
                    kind_line,
                    format!("node type must be `classifier` or `clusterer`, found `{other}`"),
                )
            }
        };
        let size = f.parsed::<usize>("size", "a positive integer")?;
        nodes.push((
            NodeDef {
                name,
                input: input.0.clone(),
                kind,
                size: size.map_or(0, |s| s.0),
                line: line_of(item),
            },
            input.1,
            size.map(|s| s.1),
        ));
    }

    let outputs = scalar_list(top.require("outputs")?, "outputs")?;

    let cfg_streams: HashSet<&str> = streams.iter().map(|s| s.name.as_str()).collect();
    let cfg_joiners: HashSet<&str> = joiners.iter().map(|(j, _)| j.name.as_str()).collect();
    let cfg_encoders: HashSet<&str> = encoders.iter().map(|e| e.name.as_str()).collect();
    let cfg_nodes: HashSet<&str> = nodes.iter().map(|(n, _, _)| n.name.as_str()).collect();

    // Dangling references.
    for s in &streams {
        if let StreamSource::Encoder(e) = &s.source {
            if !cfg_encoders.contains(e.as_str()) {
                return err(
                    ConfigCode::Dangling,
                    s.line,
                    format!("stream `{}` references undefined encoder `{e}`", s.name),
                );
            }
        }
    }
    let is_source = |n: &str| cfg_streams.contains(n) || cfg_joiners.contains(n);
    for (j, inputs) in &joiners {
        for (input, line) in inputs {
            if !is_source(input) {
                return err(
                    ConfigCode::Dangling,
                    *line,
                    format!("joiner `{}` references undefined stream or joiner `{input}`", j.name),
                );
            }
        }
    }
    for (n, input_line, _) in &nodes {
        if !is_source(&n.input) {
            return err(
                ConfigCode::Dangling,
                *input_line,
                format!("node `{}` references undefined stream or joiner `{}`", n.name, n.input),
            );
        }
    }
    for (o, line) in &outputs {
        if !cfg_nodes.contains(o.as_str()) {
            return err(ConfigCode::Dangling, *line, format!("output references undefined node `{o}`"));
        }
    }

    // Cycles among joiners.
    let joiner_map: HashMap<&str, &JoinerDef> =
        joiners.iter().map(|(j, _)| (j.name.as_str(), j)).collect();
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        joiners: &HashMap<&'a str, &'a JoinerDef>,
        marks: &mut HashMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Result<()> {
        let Some(j) = joiners.get(name) else {
            return Ok(());
        };
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => {
                let start = path.iter().position(|p| *p == name).unwrap_or(0);
                let mut cycle: Vec<&str> = path[start..].to_vec();
                cycle.push(name);
                return err(
                    ConfigCode::Cycle,
                    j.line,
                    format!("joiner cycle: {}", cycle.join(" -> ")),
                );
            }
            None => {}
        }
        marks.insert(name, Mark::Active);
        path.push(name);
        for input in &j.inputs {
            visit(input, joiners, marks, path)?;
        }
        path.pop();
        marks.insert(name, Mark::Done);
        Ok(())
    }
    let mut marks = HashMap::new();
    for (j, _) in &joiners {
        visit(&j.name, &joiner_map, &mut marks, &mut Vec::new())?;
    }

    let mut cfg = NetlistConfig {
        server,
        encoders,
        streams,
        joiners: joiners.into_iter().map(|(j, _)| j).collect(),
        nodes: Vec::new(),
        outputs: Vec::new(),
    };

    // Spike-space agreement along node edges.
    for (mut n, _, size_line) in nodes {
        let space = cfg.space_of(&n.input).expect("references validated");
        if size_line.is_some() && n.size != space {
            return err(
                ConfigCode::SpaceMismatch,
                size_line.unwrap_or(n.line),
                format!(
                    "node `{}` has {} synapses per partition but `{}` carries a spike space of {space}",
                    n.name, n.size, n.input
                ),
            );
        }
        n.size = space;
        cfg.nodes.push(n);
    }
    let mut seen_out = HashSet::new();
    for (o, line) in outputs {
        if !seen_out.insert(o.clone()) {
            return err(ConfigCode::Duplicate, line, format!("output `{o}` listed twice"));
        }
        cfg.outputs.push(o);
    }

    let needed = cfg.synapses_needed();
    let capacity = 1usize << cfg.server.log2_capacity;
    if needed > capacity {
        return err(
            ConfigCode::Value,
            top.get("server").map_or(0, line_of),
            format!("nodes need {needed} synapses but the core holds {capacity}"),
        );
    }
    Ok(cfg)
}

/// Port after applying the environment override.
pub fn effective_port(configured: u16, env_value: Option<&str>) -> std::result::Result<u16, String> {
    match env_value {
        None => Ok(configured),
        Some(v) => v
            .trim()
            .parse::<u16>()
            .map_err(|_| format!("{PORT_ENV}=`{v}` is not a port number")),
    }
}
