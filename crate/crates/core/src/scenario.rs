//! Scenario files.
//!
//! A scenario is line oriented: one directive per line, `#` starts a comment.
//! Positional arguments come first, `key=value` options after. Every problem
//! in a file is reported at once, each with its line number. See the README
//! for the full grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::adversary::{AttackKind, AttackSpec, DEFAULT_BH_DELTA};
use crate::aodv::{Protocol, ProtocolConstants};
use crate::sim::mobility::{MobilityModel, Position, Waypoint};
use crate::wire::{NodeId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    /// 1-based line, or `None` for whole-file problems.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} problem(s):\n{}", .0.len(), render(.0))]
    Invalid(Vec<Issue>),
}

fn render(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Explicit,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    /// Packets per second.
    pub rate: f64,
    pub size: u32,
    pub start: f64,
    pub stop: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub sim_time: f64,
    pub seed: u64,
    pub area: (f64, f64),
    pub radio_range: f64,
    pub loss_rate: f64,
    pub prop_delay: f64,
    pub flood_jitter: f64,
    pub window: f64,
    pub placement: Placement,
    /// Declared nodes; `None` positions are drawn when placement is random.
    pub nodes: BTreeMap<NodeId, Option<Position>>,
    pub mobility: MobilityModel,
    pub waypoints: BTreeMap<NodeId, Vec<Waypoint>>,
    pub failures: Vec<(NodeId, f64)>,
    pub flows: Vec<FlowSpec>,
    pub attacks: Vec<AttackSpec>,
    pub constants: ProtocolConstants,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "unnamed".into(),
            protocol: Protocol::Aodv,
            sim_time: 500.0,
            seed: 1,
            area: (850.0, 550.0),
            radio_range: 250.0,
            loss_rate: 0.0,
            prop_delay: 0.001,
            flood_jitter: 0.000_05,
            window: 25.0,
            placement: Placement::Explicit,
            nodes: BTreeMap::new(),
            mobility: MobilityModel::Static,
            waypoints: BTreeMap::new(),
            failures: Vec::new(),
            flows: Vec::new(),
            attacks: Vec::new(),
            constants: ProtocolConstants::default(),
        }
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut p = Parser::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                p.directive(i + 1, line);
            }
        }
        p.finish()
    }

    /// The same experiment with every attacker behaving honestly.
    pub fn without_attacks(&self) -> Scenario {
        Scenario {
            attacks: Vec::new(),
            ..self.clone()
        }
    }

    pub fn with_protocol(&self, protocol: Protocol) -> Scenario {
        Scenario {
            protocol,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        Scenario {
            seed,
            ..self.clone()
        }
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Checks cross-field invariants. `parse` already calls this.
    /// Every semantic problem, including references to undeclared nodes.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = self.validate_values();
        issues.extend(self.cross_checks());
        issues
    }

    fn validate_values(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut bad = |m: String| {
            issues.push(Issue {
                line: None,
                message: m,
            })
        };
        if self.nodes.is_empty() {
            bad("no nodes declared".into());
        }
        if !positive(self.sim_time) {
            bad(format!("sim_time must be positive, got {}", self.sim_time));
        }
        if !positive(self.window) {
            bad(format!("window must be positive, got {}", self.window));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            bad(format!(
                "loss_rate must be in [0, 1], got {}",
                self.loss_rate
            ));
        }
        if !positive(self.radio_range) {
            bad("radio_range must be positive".into());
        }
        if self.prop_delay <= 0.0 || self.flood_jitter < 0.0 {
            bad("prop_delay must be positive and flood_jitter non-negative".into());
        }
        if self.placement == Placement::Explicit {
            let missing: Vec<_> = self
                .nodes
                .iter()
                .filter(|(_, p)| p.is_none())
                .map(|(id, _)| id.0.to_string())
                .collect();
            if !missing.is_empty() {
                bad(format!("nodes without a position: {}", missing.join(", ")));
            }
        }
        for (id, pos) in &self.nodes {
            if let Some(p) = pos {
                if p.x < 0.0 || p.y < 0.0 || p.x > self.area.0 || p.y > self.area.1 {
                    bad(format!(
                        "node {} at ({}, {}) lies outside the area",
                        id.0, p.x, p.y
                    ));
                }
            }
        }
        for f in &self.flows {
            if f.src == f.dst {
                bad(format!(
                    "flow {} -> {} has the same source and destination",
                    f.src.0, f.dst.0
                ));
            }
            if !positive(f.rate) || !positive(f.stop - f.start) {
                bad(format!(
                    "flow {} -> {} needs rate > 0 and stop > start",
                    f.src.0, f.dst.0
                ));
            }
        }
        issues
    }

    /// Checks the parser already makes, with line numbers, while reading.
    fn cross_checks(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut bad = |m: String| {
            issues.push(Issue {
                line: None,
                message: m,
            })
        };
        let known = |n: &NodeId| self.nodes.contains_key(n);
        for f in &self.flows {
            for n in [f.src, f.dst].iter().filter(|n| !known(n)) {
                bad(format!(
                    "flow {} -> {} names undeclared node {}",
                    f.src.0, f.dst.0, n.0
                ));
            }
        }
        for (n, _) in self.failures.iter().filter(|(n, _)| !known(n)) {
            bad(format!("failure names undeclared node {}", n.0));
        }
        for n in self.waypoints.keys().filter(|n| !known(n)) {
            bad(format!("waypoint names undeclared node {}", n.0));
        }
        for a in &self.attacks {
            for n in [a.attacker, a.target.0, a.target.1]
                .iter()
                .filter(|n| !known(n))
            {
                bad(format!("{} attack names undeclared node {}", a.kind, n.0));
            }
            if a.start.as_secs_f64() >= self.sim_time {
                bad(format!(
                    "{} attack starts at {} s, not before sim_time",
                    a.kind, a.start
                ));
            }
        }
        issues
    }
}

#[derive(Default)]
struct Parser {
    sc: Scenario,
    issues: Vec<Issue>,
    declared_count: Option<usize>,
    /// Node references to check once all declarations are known.
    refs: Vec<(usize, NodeId)>,
    /// Last line each directive appeared on.
    key_lines: BTreeMap<String, usize>,
}

const SCALARS: [&str; 5] = [
    "sim_time",
    "window",
    "loss_rate",
    "radio_range",
    "prop_delay",
];

type Opts<'a> = BTreeMap<&'a str, &'a str>;

impl Parser {
    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.issues.push(Issue {
            line: Some(line),
            message: message.into(),
        });
    }

    fn directive(&mut self, ln: usize, line: &str) {
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or_default();
        self.key_lines.insert(key.to_string(), ln);
        let rest: Vec<&str> = words.collect();
        let (pos, opts) = split_args(&rest);
        match key {
            "name" => {
                if let Some(n) = self.exact::<String>(ln, key, &pos, 1) {
                    self.sc.name = n[0].clone();
                }
            }
            "protocol" => {
                if let Some(v) = self.exact::<String>(ln, key, &pos, 1) {
                    match v[0].parse() {
                        Ok(p) => self.sc.protocol = p,
                        Err(e) => self.err(ln, e),
                    }
                }
            }
            "sim_time" => self.scalar(ln, key, &pos, |s, v| s.sim_time = v),
            "radio_range" => self.scalar(ln, key, &pos, |s, v| s.radio_range = v),
            "loss_rate" => self.scalar(ln, key, &pos, |s, v| s.loss_rate = v),
            "prop_delay" => self.scalar(ln, key, &pos, |s, v| s.prop_delay = v),
            "flood_jitter" => self.scalar(ln, key, &pos, |s, v| s.flood_jitter = v),
            "window" => self.scalar(ln, key, &pos, |s, v| s.window = v),
            "seed" => {
                if let Some(v) = self.exact::<u64>(ln, key, &pos, 1) {
                    self.sc.seed = v[0];
                }
            }
            "area" => {
                if let Some(v) = self.exact::<f64>(ln, key, &pos, 2) {
                    self.sc.area = (v[0], v[1]);
                }
            }
            "nodes" => {
                if let Some(v) = self.exact::<u32>(ln, key, &pos, 1) {
                    self.declared_count = Some(v[0] as usize);
                    for id in 1..=v[0] {
                        self.sc.nodes.entry(NodeId(id)).or_insert(None);
                    }
                }
            }
            "placement" => match pos.as_slice() {
                ["random"] => self.sc.placement = Placement::Random,
                ["explicit"] => self.sc.placement = Placement::Explicit,
                _ => self.err(ln, "placement takes `random` or `explicit`"),
            },
            "node" => {
                if let Some(v) = self.exact::<f64>(ln, key, &pos, 3) {
                    match node_id(v[0]) {
                        Some(id) => {
                            self.sc.nodes.insert(id, Some(Position::new(v[1], v[2])));
                        }
                        None => self.err(ln, format!("invalid node id {}", v[0])),
                    }
                }
            }
            "mobility" => self.mobility(ln, &pos, &opts),
            "waypoint" => self.waypoint(ln, &pos, &opts),
            "fail" => {
                if self.known_opts(ln, key, &opts, &["at"]) {
                    if let (Some(id), Some(at)) =
                        (self.node_arg(ln, &pos), self.req_f64(ln, &opts, "at"))
                    {
                        self.sc.failures.push((id, at));
                    }
                }
            }
            "flow" => self.flow(ln, &pos, &opts),
            "attack" => self.attack(ln, &pos, &opts),
            "const" => self.constant(ln, &pos),
            other => self.err(ln, format!("unknown directive `{other}`")),
        }
        if !opts.is_empty() && !matches!(key, "mobility" | "waypoint" | "fail" | "flow" | "attack")
        {
            self.err(ln, format!("`{key}` takes no key=value options"));
        }
    }

    fn exact<T: std::str::FromStr>(
        &mut self,
        ln: usize,
        key: &str,
        pos: &[&str],
        n: usize,
    ) -> Option<Vec<T>> {
        if pos.len() != n {
            self.err(
                ln,
                format!("`{key}` takes {n} argument(s), got {}", pos.len()),
            );
            return None;
        }
        let mut out = Vec::with_capacity(n);
        for p in pos {
            match p.parse() {
                Ok(v) => out.push(v),
                Err(_) => {
                    self.err(ln, format!("`{key}`: cannot parse `{p}`"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn scalar(&mut self, ln: usize, key: &str, pos: &[&str], set: impl FnOnce(&mut Scenario, f64)) {
        if let Some(v) = self.exact::<f64>(ln, key, pos, 1) {
            set(&mut self.sc, v[0]);
        }
    }

    fn known_opts(&mut self, ln: usize, key: &str, opts: &Opts, allowed: &[&str]) -> bool {
        let mut ok = true;
        for k in opts.keys() {
            if !allowed.contains(k) {
                self.err(ln, format!("`{key}`: unknown option `{k}`"));
                ok = false;
            }
        }
        ok
    }

    fn opt_f64(&mut self, ln: usize, opts: &Opts, k: &str) -> Option<f64> {
        let v = opts.get(k)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.err(ln, format!("option `{k}`: cannot parse `{v}`"));
                None
            }
        }
    }

    fn req_f64(&mut self, ln: usize, opts: &Opts, k: &str) -> Option<f64> {
        if !opts.contains_key(k) {
            self.err(ln, format!("missing option `{k}=`"));
            return None;
        }
        self.opt_f64(ln, opts, k)
    }

    fn node_ref(&mut self, ln: usize, s: &str) -> Option<NodeId> {
        match s.parse::<u32>() {
            Ok(v) if v > 0 => {
                self.refs.push((ln, NodeId(v)));
                Some(NodeId(v))
            }
            _ => {
                self.err(ln, format!("invalid node id `{s}`"));
                None
            }
        }
    }

    fn node_arg(&mut self, ln: usize, pos: &[&str]) -> Option<NodeId> {
        match pos {
            [one] => self.node_ref(ln, one),
            _ => {
                self.err(ln, "expected exactly one node id");
                None
            }
        }
    }

    fn mobility(&mut self, ln: usize, pos: &[&str], opts: &Opts) {
        match pos {
            ["static"] => {
                self.known_opts(ln, "mobility", opts, &[]);
                self.sc.mobility = MobilityModel::Static;
            }
            ["random_waypoint"] => {
                self.known_opts(ln, "mobility", opts, &["min_speed", "max_speed", "pause"]);
                let min_speed = self.opt_f64(ln, opts, "min_speed").unwrap_or(1.0);
                let max_speed = self.opt_f64(ln, opts, "max_speed").unwrap_or(5.0);
                let pause = self.opt_f64(ln, opts, "pause").unwrap_or(10.0);
                if min_speed <= 0.0 || max_speed < min_speed || pause < 0.0 {
                    self.err(ln, "need 0 < min_speed <= max_speed and pause >= 0");
                }
                self.sc.mobility = MobilityModel::RandomWaypoint {
                    min_speed,
                    max_speed,
                    pause,
                };
            }
            _ => self.err(ln, "mobility takes `static` or `random_waypoint`"),
        }
    }

    fn waypoint(&mut self, ln: usize, pos: &[&str], opts: &Opts) {
        if !self.known_opts(ln, "waypoint", opts, &["at", "x", "y", "speed"]) {
            return;
        }
        let id = self.node_arg(ln, pos);
        let at = self.req_f64(ln, opts, "at");
        let x = self.req_f64(ln, opts, "x");
        let y = self.req_f64(ln, opts, "y");
        let speed = self.req_f64(ln, opts, "speed");
        if let (Some(id), Some(at), Some(x), Some(y), Some(speed)) = (id, at, x, y, speed) {
            if speed <= 0.0 {
                self.err(ln, "waypoint speed must be positive");
            }
            if x < 0.0 || y < 0.0 || x > self.sc.area.0 || y > self.sc.area.1 {
                self.err(ln, format!("waypoint ({x}, {y}) lies outside the area"));
            }
            self.sc.waypoints.entry(id).or_default().push(Waypoint {
                at,
                to: Position::new(x, y),
                speed,
            });
        }
    }

    fn flow(&mut self, ln: usize, pos: &[&str], opts: &Opts) {
        self.known_opts(ln, "flow", opts, &["rate", "size", "start", "stop"]);
        let [src, dst] = pos else {
            self.err(ln, "flow takes `<src> <dst>`");
            return;
        };
        let (Some(src), Some(dst)) = (self.node_ref(ln, src), self.node_ref(ln, dst)) else {
            return;
        };
        if src == dst {
            self.err(
                ln,
                format!("flow source and destination are both node {}", src.0),
            );
        }
        let rate = self.opt_f64(ln, opts, "rate").unwrap_or(4.0);
        let size = self.opt_f64(ln, opts, "size").unwrap_or(512.0);
        let start = self.opt_f64(ln, opts, "start").unwrap_or(1.0);
        let stop = self.opt_f64(ln, opts, "stop").unwrap_or(f64::INFINITY);
        if rate <= 0.0 {
            self.err(ln, "flow rate must be positive");
        }
        if size < 1.0 || size > u32::MAX as f64 || size.fract() != 0.0 {
            self.err(ln, "flow size must be a positive integer");
        }
        if start < 0.0 || stop <= start {
            self.err(ln, "flow needs 0 <= start < stop");
        }
        self.sc.flows.push(FlowSpec {
            src,
            dst,
            rate,
            size: size as u32,
            start,
            stop,
        });
    }

    fn attack(&mut self, ln: usize, pos: &[&str], opts: &Opts) {
        self.known_opts(
            ln,
            "attack",
            opts,
            &[
                "node", "start", "src", "dst", "interval", "victims", "delta",
            ],
        );
        let kind = match pos {
            [k] => match k.parse::<AttackKind>() {
                Ok(k) => k,
                Err(e) => {
                    self.err(ln, e);
                    return;
                }
            },
            _ => {
                self.err(ln, "attack takes one kind: rc, rd, ri or bh");
                return;
            }
        };
        let req_node = |p: &mut Parser, k: &str| match opts.get(k) {
            Some(v) => p.node_ref(ln, v),
            None => {
                p.err(ln, format!("missing option `{k}=`"));
                None
            }
        };
        let attacker = req_node(self, "node");
        let src = req_node(self, "src");
        let dst = req_node(self, "dst");
        let start = self.req_f64(ln, opts, "start");
        let repeat = self.opt_f64(ln, opts, "interval");
        let delta = self
            .opt_f64(ln, opts, "delta")
            .unwrap_or(DEFAULT_BH_DELTA as f64);
        let mut victims = Vec::new();
        if let Some(list) = opts.get("victims") {
            for v in list.split(',') {
                if let Some(id) = self.node_ref(ln, v) {
                    victims.push(id);
                }
            }
        }
        let wanted = match kind {
            AttackKind::ResourceConsumption => Some(2),
            AttackKind::RouteDisturb => Some(1),
            _ => None,
        };
        if !victims.is_empty() && Some(victims.len()) != wanted {
            self.err(
                ln,
                format!("{kind} takes {} victim(s)", wanted.unwrap_or(0)),
            );
        }
        if repeat.is_some() && kind != AttackKind::RouteDisturb {
            self.err(ln, "only rd attacks repeat");
        }
        if matches!(repeat, Some(r) if r <= 0.0) {
            self.err(ln, "interval must be positive");
        }
        if delta < 0.0 || delta > u32::MAX as f64 || delta.fract() != 0.0 {
            self.err(ln, "delta must be a non-negative integer");
        }
        if let Some(s) = start {
            if s < 0.0 {
                self.err(ln, "attack start must be non-negative");
            }
            if s >= self.sc.sim_time {
                self.err(
                    ln,
                    format!(
                        "attack starts at {s} s, not before sim_time {} s",
                        self.sc.sim_time
                    ),
                );
            }
        }
        if let (Some(attacker), Some(src), Some(dst), Some(start)) = (attacker, src, dst, start) {
            if attacker == src || attacker == dst {
                self.err(ln, "the attacker cannot be an endpoint of the target flow");
            }
            self.sc.attacks.push(AttackSpec {
                attacker,
                kind,
                start: Timestamp::from_secs_f64(start),
                target: (src, dst),
                repeat: repeat.filter(|r| *r > 0.0).map(Duration::from_secs_f64),
                victims,
                delta: delta as u32,
            });
        }
    }

    fn constant(&mut self, ln: usize, pos: &[&str]) {
        let [name, value] = pos else {
            self.err(ln, "const takes `<name> <value>`");
            return;
        };
        let Ok(v) = value.parse::<f64>() else {
            self.err(ln, format!("const {name}: cannot parse `{value}`"));
            return;
        };
        if v < 0.0 || !v.is_finite() {
            self.err(ln, format!("const {name} must be a non-negative number"));
            return;
        }
        let c = &mut self.sc.constants;
        match *name {
            "node_traversal_time" => c.node_traversal_time = Duration::from_secs_f64(v),
            "active_route_timeout" => c.active_route_timeout = Duration::from_secs_f64(v),
            "net_diameter" => c.net_diameter = v as u32,
            "rreq_retries" => c.rreq_retries = v as u32,
            "ttl_data" => c.ttl_data = v.min(255.0) as u8,
            "queue_limit" => c.queue_limit = v as usize,
            "cache_capacity" => c.cache_capacity = v as usize,
            other => self.err(ln, format!("unknown constant `{other}`")),
        }
    }

    fn finish(mut self) -> Result<Scenario, ScenarioError> {
        let declared: BTreeSet<NodeId> = self.sc.nodes.keys().copied().collect();
        let refs = std::mem::take(&mut self.refs);
        for (ln, id) in refs {
            if !declared.contains(&id) {
                self.err(ln, format!("node {} is not declared", id.0));
            }
        }
        if let Some(n) = self.declared_count {
            if self.sc.nodes.len() != n {
                self.issues.push(Issue {
                    line: None,
                    message: format!("`nodes {n}` but {} node ids are used", self.sc.nodes.len()),
                });
            }
        }
        let sim_time = self.sc.sim_time;
        for f in &mut self.sc.flows {
            f.stop = f.stop.min(sim_time);
        }
        // Value problems name their directive first; point them at its line.
        for mut issue in self.sc.validate_values() {
            let key = issue.message.split([' ', ',']).next().unwrap_or_default();
            if SCALARS.contains(&key) {
                issue.line = self.key_lines.get(key).copied();
            }
            self.issues.push(issue);
        }
        if self.issues.is_empty() {
            Ok(self.sc)
        } else {
            Err(ScenarioError::Invalid(self.issues))
        }
    }
}

/// False for NaN as well as for non-positive values.
fn positive(v: f64) -> bool {
    v > 0.0
}

fn node_id(v: f64) -> Option<NodeId> {
    (v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(NodeId(v as u32))
}

fn split_args<'a>(words: &[&'a str]) -> (Vec<&'a str>, Opts<'a>) {
    let mut pos = Vec::new();
    let mut opts = BTreeMap::new();
    for w in words {
        match w.split_once('=') {
            Some((k, v)) => {
                opts.insert(k, v);
            }
            None => pos.push(*w),
        }
    }
    (pos, opts)
}
