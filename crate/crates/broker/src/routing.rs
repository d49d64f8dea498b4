//! Transport-free forwarding decisions: subscriptions, the brokering
//! table and the monitors of every link touching this broker.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use ensemble_core::automata::native::{Message, MonitorArgs, MonitorRegistry};
use ensemble_core::{EntityId, LinkType, Topic};

use crate::config::{BrokerConfig, Direction, MonitorSource};
use crate::monitor::{EaLog, LinkMonitor, MonitorError};
use crate::wire::Status;

/// The other end of a connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Peer {
    Client(String),
    Bridge(EntityId),
}

impl Peer {
    pub fn name(&self) -> &str {
        match self {
            Peer::Client(id) => id,
            Peer::Bridge(b) => b.as_str(),
        }
    }
}

impl fmt::Display for Peer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Flow {
    Ingress,
    Egress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteLog {
    pub in_link: String,
    pub in_type: String,
    pub out_link: String,
    pub out_type: String,
    pub topic: String,
    pub allowed: bool,
}

impl fmt::Display for RouteLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ROUTE {} {} {} {} {} {}",
            self.in_link,
            self.in_type,
            self.out_link,
            self.out_type,
            self.topic,
            if self.allowed { "allowed" } else { "denied" }
        )
    }
}

/// Structured line emitted by a running broker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogLine {
    Ready { name: String, addr: String },
    Bridge { peer: String, up: bool },
    Route(RouteLog),
    Ea(EaLog),
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogLine::Ready { name, addr } => write!(f, "READY {name} {addr}"),
            LogLine::Bridge { peer, up } => write!(f, "BRIDGE {peer} {}", if *up { "up" } else { "down" }),
            LogLine::Route(r) => r.fmt(f),
            LogLine::Ea(e) => e.fmt(f),
        }
    }
}

/// What one inbound publish turns into.
#[derive(Debug, Default)]
pub struct Routed {
    pub out: Vec<(Peer, Message)>,
    pub log: Vec<LogLine>,
}

#[derive(Debug)]
pub struct RoutingCore {
    config: Arc<BrokerConfig>,
    registry: MonitorRegistry,
    seed: u64,
    audit: bool,
    subscribers: HashMap<Topic, BTreeSet<String>>,
    client_topics: HashMap<String, HashSet<Topic>>,
    online: BTreeSet<EntityId>,
    /// Owned by link identity, so state survives reconnects.
    monitors: HashMap<(Peer, Flow), LinkMonitor>,
}

impl RoutingCore {
    /// Checks that every bound monitor resolves before accepting traffic.
    pub fn new(config: Arc<BrokerConfig>, registry: MonitorRegistry, seed: u64, audit: bool) -> Result<Self, MonitorError> {
        let sources = config.direction_monitors.values().chain(config.link_monitors.values());
        for source in sources {
            LinkMonitor::instantiate(source, &registry, &MonitorArgs::default())?;
        }
        Ok(RoutingCore {
            config,
            registry,
            seed,
            audit,
            subscribers: HashMap::new(),
            client_topics: HashMap::new(),
            online: BTreeSet::new(),
            monitors: HashMap::new(),
        })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    fn me(&self) -> &str {
        self.config.name.as_str()
    }

    fn is_parent(&self, peer: &Peer) -> bool {
        match peer {
            Peer::Bridge(b) => self.config.bridges.get(b).is_some_and(|d| d.addr.is_some()),
            Peer::Client(_) => false,
        }
    }

    fn link_type(&self, peer: &Peer, flow: Flow) -> Option<&LinkType> {
        let types = match peer {
            Peer::Client(id) => self.config.client_types(id),
            Peer::Bridge(b) => self.config.bridges.get(b).map(|d| &d.types),
        }?;
        Some(match flow {
            Flow::Ingress => &types.ingress,
            Flow::Egress => &types.egress,
        })
    }

    fn link_name(&self, peer: &Peer, flow: Flow) -> String {
        match flow {
            Flow::Ingress => format!("{peer}->{}", self.me()),
            Flow::Egress => format!("{}->{peer}", self.me()),
        }
    }

    /// Explicit link bindings win over direction bindings.
    fn binding(&self, peer: &Peer, flow: Flow) -> Option<&MonitorSource> {
        let (me, p) = (self.me().to_owned(), peer.name().to_owned());
        let key = match flow {
            Flow::Ingress => (p, me),
            Flow::Egress => (me, p),
        };
        let dir = match (flow, self.is_parent(peer)) {
            (Flow::Ingress, false) => Direction::ImPub,
            (Flow::Egress, false) => Direction::ImSub,
            (Flow::Ingress, true) => Direction::ExPub,
            (Flow::Egress, true) => Direction::ExSub,
        };
        self.config
            .link_monitors
            .get(&key)
            .or_else(|| self.config.direction_monitors.get(&dir))
    }

    fn monitor(&mut self, peer: &Peer, flow: Flow) -> &mut LinkMonitor {
        let key = (peer.clone(), flow);
        if !self.monitors.contains_key(&key) {
            let m = match self.binding(peer, flow) {
                None => LinkMonitor::Identity,
                Some(source) => {
                    let args = MonitorArgs {
                        link: self.link_name(peer, flow),
                        seed: self.seed,
                    };
                    LinkMonitor::instantiate(source, &self.registry, &args)
                        .expect("bindings are checked at construction")
                }
            };
            self.monitors.insert(key.clone(), m);
        }
        self.monitors.get_mut(&key).expect("inserted above")
    }

    /// Admission: typed brokers only accept clients with a type binding,
    /// and only accept bridges from declared children.
    pub fn on_connect(&mut self, peer: &Peer) -> Status {
        match peer {
            Peer::Client(id) => {
                if self.config.is_typed() && self.config.client_types(id).is_none() {
                    return Status::Denied;
                }
            }
            Peer::Bridge(b) => {
                if !self.config.bridges.contains_key(b) {
                    return Status::Denied;
                }
                self.online.insert(b.clone());
            }
        }
        Status::Ok
    }

    pub fn on_disconnect(&mut self, peer: &Peer) {
        match peer {
            Peer::Client(id) => {
                for t in self.client_topics.remove(id).unwrap_or_default() {
                    if let Some(set) = self.subscribers.get_mut(&t) {
                        set.remove(id);
                        if set.is_empty() {
                            self.subscribers.remove(&t);
                        }
                    }
                }
            }
            Peer::Bridge(b) => {
                self.online.remove(b);
            }
        }
    }

    /// Records a subscription. Repeats are idempotent.
    pub fn on_subscribe(&mut self, client: &str, topic: &str) -> Status {
        if !self.config.acl_permits(client, topic) {
            return Status::Denied;
        }
        let topic = Topic::new(topic);
        self.subscribers.entry(topic.clone()).or_default().insert(client.to_owned());
        self.client_topics.entry(client.to_owned()).or_default().insert(topic);
        Status::Ok
    }

    /// Runs the inbound link's monitor, then offers each surviving event to
    /// every matching subscriber and every online bridge other than the
    /// source, subject to the brokering table and any egress monitor.
    pub fn on_publish(&mut self, from: &Peer, message: Message) -> Routed {
        let mut routed = Routed::default();
        let audit = self.audit;
        let in_link = self.link_name(from, Flow::Ingress);
        let (events, ea) = self.monitor(from, Flow::Ingress).step(&in_link, message, audit);
        routed.log.extend(ea.map(LogLine::Ea));
        let in_type = self.link_type(from, Flow::Ingress).cloned();

        for event in events {
            let mut targets: Vec<Peer> = self
                .subscribers
                .get(&event.topic)
                .into_iter()
                .flatten()
                .map(|c| Peer::Client(c.clone()))
                .collect();
            targets.extend(self.online.iter().map(|b| Peer::Bridge(b.clone())));
            for to in targets {
                if &to == from {
                    continue;
                }
                let out_type = self.link_type(&to, Flow::Egress).cloned();
                let allowed = self.config.allows(in_type.as_ref(), out_type.as_ref());
                let out_link = audit.then(|| self.link_name(&to, Flow::Egress));
                if let Some(out_link) = out_link.clone() {
                    routed.log.push(LogLine::Route(RouteLog {
                        in_link: in_link.clone(),
                        in_type: in_type.as_ref().map_or("-".into(), |t| t.to_string()),
                        out_link,
                        out_type: out_type.as_ref().map_or("-".into(), |t| t.to_string()),
                        topic: event.topic.to_string(),
                        allowed,
                    }));
                }
                if !allowed {
                    continue;
                }
                let link = out_link.unwrap_or_default();
                let (outs, ea) = self.monitor(&to, Flow::Egress).step(&link, event.clone(), audit);
                routed.log.extend(ea.map(LogLine::Ea));
                routed.out.extend(outs.into_iter().map(|m| (to.clone(), m)));
            }
        }
        routed
    }

    /// Current state of the automaton on the link from `peer` into this
    /// broker, if one has been instantiated.
    pub fn ingress_state(&self, peer: &Peer) -> Option<&str> {
        self.monitors.get(&(peer.clone(), Flow::Ingress))?.state_name()
    }
}
