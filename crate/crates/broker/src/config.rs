//! Broker configuration file.
//!
//! ```text
//! broker H
//! listen 127.0.0.1:1884
//! linktype internet door
//! deny door internet                      # or `allow t1 t2`, not both
//! bridge I 127.0.0.1:1883 ingress internet egress internet   # we dial I
//! bridge S - ingress sensitive egress sensitive              # S dials us
//! client-default ingress door egress door
//! client DB ingress door egress door      # per-client override
//! monitor im_pub cem-busywork             # native monitor by name
//! monitor-link I H m1.ea                  # automaton file
//! subscription-acl DB AC_grant
//! ```
//!
//! A bridge with an address is a parent we dial; with `-` it is a child
//! that dials us. A config that declares no link types is untyped and
//! forwards everything; its bridges write `-` for both types.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use ensemble_core::automata::EaSpec;
use ensemble_core::model::BrokeringPolicy;
use ensemble_core::text::{lex, Directive, ParseError};
use ensemble_core::{EntityId, LinkType, Topic};

/// Link type placeholder for bridges in untyped configs.
pub const UNTYPED: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// Into this broker from a client or a child broker.
    ImPub,
    /// Out of this broker to a client or a child broker.
    ImSub,
    /// Into this broker from a parent broker.
    ExPub,
    /// Out of this broker to a parent broker.
    ExSub,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::ImPub, Direction::ImSub, Direction::ExPub, Direction::ExSub];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ImPub => "im_pub",
            Direction::ImSub => "im_sub",
            Direction::ExPub => "ex_pub",
            Direction::ExSub => "ex_sub",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a monitor comes from: a native registry entry or an automaton spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitorSource {
    Native(String),
    Automaton {
        /// File the spec was read from, kept for rendering.
        path: Option<PathBuf>,
        spec: EaSpec,
    },
}

impl MonitorSource {
    /// Arguments ending in `.ea` or containing a path separator name a
    /// spec file; anything else names a native monitor.
    fn looks_like_path(arg: &str) -> bool {
        arg.ends_with(".ea") || arg.contains('/')
    }
}

impl fmt::Display for MonitorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorSource::Native(name) => f.write_str(name),
            MonitorSource::Automaton { path: Some(p), .. } => write!(f, "{}", p.display()),
            MonitorSource::Automaton { path: None, .. } => f.write_str("<inline>"),
        }
    }
}

/// The two link types a peer connection carries, from this broker's side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTypes {
    /// Type of the link from the peer into this broker.
    pub ingress: LinkType,
    /// Type of the link from this broker out to the peer.
    pub egress: LinkType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeDecl {
    /// `host:port` to dial, or `None` when the peer dials us.
    pub addr: Option<String>,
    pub types: LinkTypes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerConfig {
    pub name: EntityId,
    pub listen: SocketAddr,
    pub link_types: BTreeSet<LinkType>,
    pub allow: BTreeSet<(LinkType, LinkType)>,
    pub bridges: BTreeMap<EntityId, BridgeDecl>,
    pub client_default: Option<LinkTypes>,
    pub clients: BTreeMap<String, LinkTypes>,
    pub direction_monitors: BTreeMap<Direction, MonitorSource>,
    /// Keyed by `(src, dst)`; one end is this broker.
    pub link_monitors: BTreeMap<(String, String), MonitorSource>,
    pub acl: BTreeMap<String, BTreeSet<Topic>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
}

impl BrokerConfig {
    /// Minimal untyped config: no bridges, no monitors, no ACL.
    pub fn new(name: impl Into<EntityId>, listen: SocketAddr) -> Self {
        BrokerConfig {
            name: name.into(),
            listen,
            link_types: BTreeSet::new(),
            allow: BTreeSet::new(),
            bridges: BTreeMap::new(),
            client_default: None,
            clients: BTreeMap::new(),
            direction_monitors: BTreeMap::new(),
            link_monitors: BTreeMap::new(),
            acl: BTreeMap::new(),
        }
    }

    pub fn is_typed(&self) -> bool {
        !self.link_types.is_empty()
    }

    /// Whether an event arriving on `incoming` may leave on `outgoing`.
    /// `None` types only arise in untyped configs.
    pub fn allows(&self, incoming: Option<&LinkType>, outgoing: Option<&LinkType>) -> bool {
        if !self.is_typed() {
            return true;
        }
        match (incoming, outgoing) {
            (Some(a), Some(b)) => self.allow.contains(&(a.clone(), b.clone())),
            _ => false,
        }
    }

    /// Link types for client `id`, falling back to `client-default`.
    pub fn client_types(&self, id: &str) -> Option<&LinkTypes> {
        self.clients.get(id).or(self.client_default.as_ref())
    }

    /// Whether `client` may subscribe to `topic`. With no ACL lines at all
    /// every subscription is accepted.
    pub fn acl_permits(&self, client: &str, topic: &str) -> bool {
        self.acl.is_empty() || self.acl.get(client).is_some_and(|ts| ts.contains(topic))
    }

    pub fn parse(text: &str) -> Result<BrokerConfig, ConfigError> {
        parse(text, None)
    }

    /// Parses with relative monitor paths resolved against `base`.
    pub fn parse_with_base(text: &str, base: &Path) -> Result<BrokerConfig, ConfigError> {
        parse(text, Some(base))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BrokerConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        match parse(&text, Some(base)) {
            Err(ConfigError::Parse(source)) => Err(ConfigError::InFile {
                path: path.to_owned(),
                source,
            }),
            other => other,
        }
    }

    /// Renders in the config grammar. Automaton monitors are referenced by
    /// their recorded path, or `<name>.ea` when they have none; `files`
    /// receives every spec that must be written next to the config.
    pub fn render(&self, files: &mut BTreeMap<String, EaSpec>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "broker {}", self.name);
        let _ = writeln!(out, "listen {}", self.listen);
        if self.is_typed() {
            let types: Vec<&str> = self.link_types.iter().map(|t| t.as_str()).collect();
            let _ = writeln!(out, "linktype {}", types.join(" "));
        }
        for (a, b) in &self.allow {
            let _ = writeln!(out, "allow {a} {b}");
        }
        for (peer, b) in &self.bridges {
            let addr = b.addr.as_deref().unwrap_or("-");
            let _ = writeln!(out, "bridge {peer} {addr} ingress {} egress {}", b.types.ingress, b.types.egress);
        }
        if let Some(t) = &self.client_default {
            let _ = writeln!(out, "client-default ingress {} egress {}", t.ingress, t.egress);
        }
        for (id, t) in &self.clients {
            let _ = writeln!(out, "client {id} ingress {} egress {}", t.ingress, t.egress);
        }
        let mut source = |fallback: String, m: &MonitorSource| match m {
            MonitorSource::Native(n) => n.clone(),
            MonitorSource::Automaton { path, spec } => {
                let file = path
                    .as_ref()
                    .and_then(|p| p.file_name())
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or(fallback);
                files.insert(file.clone(), spec.clone());
                file
            }
        };
        for (dir, m) in &self.direction_monitors {
            let s = source(format!("{}-{dir}.ea", self.name), m);
            let _ = writeln!(out, "monitor {dir} {s}");
        }
        for ((src, dst), m) in &self.link_monitors {
            let s = source(format!("{src}-{dst}.ea"), m);
            let _ = writeln!(out, "monitor-link {src} {dst} {s}");
        }
        for (id, topics) in &self.acl {
            for t in topics {
                let _ = writeln!(out, "subscription-acl {id} {t}");
            }
        }
        out
    }
}

fn link_types(d: &Directive, args: &[String]) -> Result<LinkTypes, ParseError> {
    match args {
        [i, ingress, e, egress] if i == "ingress" && e == "egress" => Ok(LinkTypes {
            ingress: ingress.into(),
            egress: egress.into(),
        }),
        _ => Err(d.error("expected `ingress <type> egress <type>`")),
    }
}

fn monitor_source(d: &Directive, arg: &str, base: Option<&Path>) -> Result<MonitorSource, ConfigError> {
    if !MonitorSource::looks_like_path(arg) {
        return Ok(MonitorSource::Native(arg.to_owned()));
    }
    let rel = PathBuf::from(arg);
    let full = match base {
        Some(b) => b.join(&rel),
        None => rel.clone(),
    };
    let text = std::fs::read_to_string(&full).map_err(|e| d.error(format!("cannot read `{}`: {e}", full.display())))?;
    let spec = EaSpec::parse(&text).map_err(|source| ConfigError::InFile { path: full, source })?;
    Ok(MonitorSource::Automaton { path: Some(rel), spec })
}

fn parse(text: &str, base: Option<&Path>) -> Result<BrokerConfig, ConfigError> {
    let mut name = None;
    let mut listen = None;
    let mut cfg = BrokerConfig::new("", "0.0.0.0:0".parse().expect("literal address"));
    let mut denied: Option<Vec<(LinkType, LinkType)>> = None;
    let mut allowed = false;
    let mut used_types: Vec<(&Directive, LinkType)> = Vec::new();
    let directives = lex(text);

    for d in &directives {
        match d.keyword.as_str() {
            "broker" => {
                if name.is_some() {
                    return Err(d.error("`broker` given twice").into());
                }
                name = Some(EntityId::new(&d.exact(1)?[0]));
            }
            "listen" => {
                let a = &d.exact(1)?[0];
                listen = Some(a.parse().map_err(|_| d.error(format!("bad listen address `{a}`")))?);
            }
            "linktype" => cfg.link_types.extend(d.at_least(1)?.iter().map(LinkType::new)),
            "allow" | "deny" => {
                let a = d.exact(2)?;
                let pair = (LinkType::new(&a[0]), LinkType::new(&a[1]));
                used_types.push((d, pair.0.clone()));
                used_types.push((d, pair.1.clone()));
                if d.keyword == "allow" {
                    if denied.is_some() {
                        return Err(d.error("`allow` and `deny` cannot be mixed").into());
                    }
                    allowed = true;
                    cfg.allow.insert(pair);
                } else {
                    if allowed {
                        return Err(d.error("`allow` and `deny` cannot be mixed").into());
                    }
                    denied.get_or_insert_with(Vec::new).push(pair);
                }
            }
            "bridge" => {
                let a = d.at_least(2)?;
                let types = link_types(d, &a[2..])?;
                used_types.push((d, types.ingress.clone()));
                used_types.push((d, types.egress.clone()));
                let addr = (a[1] != "-").then(|| a[1].clone());
                if cfg.bridges.insert(a[0].as_str().into(), BridgeDecl { addr, types }).is_some() {
                    return Err(d.error(format!("bridge `{}` declared twice", a[0])).into());
                }
            }
            "client-default" => {
                let types = link_types(d, &d.args)?;
                used_types.push((d, types.ingress.clone()));
                used_types.push((d, types.egress.clone()));
                cfg.client_default = Some(types);
            }
            "client" => {
                let a = d.at_least(1)?;
                let types = link_types(d, &a[1..])?;
                used_types.push((d, types.ingress.clone()));
                used_types.push((d, types.egress.clone()));
                cfg.clients.insert(a[0].clone(), types);
            }
            "monitor" => {
                let a = d.exact(2)?;
                let dir = Direction::parse(&a[0]).ok_or_else(|| {
                    d.error(format!("unknown direction `{}`; expected im_pub, im_sub, ex_pub or ex_sub", a[0]))
                })?;
                cfg.direction_monitors.insert(dir, monitor_source(d, &a[1], base)?);
            }
            "monitor-link" => {
                let a = d.exact(3)?;
                let source = monitor_source(d, &a[2], base)?;
                cfg.link_monitors.insert((a[0].clone(), a[1].clone()), source);
            }
            "subscription-acl" => {
                let a = d.at_least(2)?;
                cfg.acl
                    .entry(a[0].clone())
                    .or_default()
                    .extend(a[1..].iter().map(Topic::new));
            }
            other => return Err(d.error(format!("unknown directive `{other}`")).into()),
        }
    }

    cfg.name = name.ok_or_else(|| ParseError::new(0, "missing `broker <name>`"))?;
    cfg.listen = listen.ok_or_else(|| ParseError::new(0, "missing `listen <addr:port>`"))?;
    for (d, t) in used_types {
        let untyped_marker = !cfg.is_typed() && t.as_str() == UNTYPED;
        if !untyped_marker && !cfg.link_types.contains(&t) {
            return Err(d.error(format!("undeclared link type `{t}`")).into());
        }
    }
    if let Some(denied) = denied {
        cfg.allow = BrokeringPolicy::complement(&cfg.link_types, &denied);
    }
    let me = cfg.name.as_str();
    for (src, dst) in cfg.link_monitors.keys() {
        if src != me && dst != me {
            let d = directives
                .iter()
                .find(|d| d.keyword == "monitor-link" && d.args[0] == *src && d.args[1] == *dst)
                .expect("binding came from a directive");
            return Err(d.error(format!("monitor-link {src} {dst} does not touch broker {me}")).into());
        }
    }
    Ok(cfg)
}
