//! The system schema: connection graph, brokering policy, event policy,
//! subscriptions and task ordering.

mod format;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use format::LoadError;
pub use validate::{ValidationReport, Violation, ViolationKind};

use crate::automata::{EaError, EaSpec, EditAutomaton};
use crate::names::{EntityId, LinkType, Topic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Device,
    Broker,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Device => "device",
            EntityKind::Broker => "broker",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub name: EntityId,
    pub kind: EntityKind,
}

/// A directed network link. Each direction of a connection is its own link.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    pub src: EntityId,
    pub dst: EntityId,
}

impl Link {
    pub fn new(src: impl Into<EntityId>, dst: impl Into<EntityId>) -> Self {
        Link {
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn reversed(&self) -> Link {
        Link {
            src: self.dst.clone(),
            dst: self.src.clone(),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkClass {
    /// Device to broker.
    Publish,
    /// Broker to device.
    Notify,
    /// Broker to broker.
    Bridge,
}

impl LinkClass {
    /// Monitored links end at a broker and may carry an edit automaton.
    pub fn is_monitored(self) -> bool {
        self != LinkClass::Notify
    }
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkClass::Publish => "publish",
            LinkClass::Notify => "notify",
            LinkClass::Bridge => "bridge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("link {0} connects two devices")]
    DeviceToDevice(Link),
    #[error("automaton `{0}` defined twice")]
    DuplicateAutomaton(String),
    #[error("automaton `{name}`: {source}")]
    Automaton { name: String, source: EaError },
}

/// Entities and directed links. Declarations are kept verbatim (including
/// duplicates) so that validation can report them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConnectionGraph {
    entities: Vec<Entity>,
    kinds: BTreeMap<EntityId, EntityKind>,
    links: BTreeSet<Link>,
}

impl ConnectionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, name: impl Into<EntityId>, kind: EntityKind) {
        let name = name.into();
        self.kinds.entry(name.clone()).or_insert(kind);
        self.entities.push(Entity { name, kind });
    }

    pub fn add_device(&mut self, name: impl Into<EntityId>) {
        self.add_entity(name, EntityKind::Device);
    }

    pub fn add_broker(&mut self, name: impl Into<EntityId>) {
        self.add_entity(name, EntityKind::Broker);
    }

    /// Adds one directed link. Returns false if it was already present.
    pub fn add_link(&mut self, link: Link) -> bool {
        self.links.insert(link)
    }

    /// Entity declarations in source order, duplicates included.
    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn kind(&self, name: &str) -> Option<EntityKind> {
        self.kinds.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.kinds.contains_key(name)
    }

    pub fn is_broker(&self, name: &str) -> bool {
        self.kind(name) == Some(EntityKind::Broker)
    }

    pub fn is_device(&self, name: &str) -> bool {
        self.kind(name) == Some(EntityKind::Device)
    }

    pub fn devices(&self) -> impl Iterator<Item = &EntityId> {
        self.of_kind(EntityKind::Device)
    }

    pub fn brokers(&self) -> impl Iterator<Item = &EntityId> {
        self.of_kind(EntityKind::Broker)
    }

    fn of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &EntityId> {
        self.kinds
            .iter()
            .filter(move |(_, k)| **k == kind)
            .map(|(n, _)| n)
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn has_link(&self, src: &str, dst: &str) -> bool {
        self.links.contains(&Link::new(src, dst))
    }

    /// Links leaving `src`, ordered by destination.
    pub fn out_links<'a>(&'a self, src: &'a str) -> impl Iterator<Item = &'a Link> + 'a {
        self.links
            .range(Link::new(src, "")..)
            .take_while(move |l| l.src == src)
    }

    /// Links entering `dst`.
    pub fn in_links<'a>(&'a self, dst: &'a str) -> impl Iterator<Item = &'a Link> + 'a {
        self.links.iter().filter(move |l| l.dst == dst)
    }

    pub fn classify(&self, link: &Link) -> Result<LinkClass, ModelError> {
        let kind = |e: &EntityId| {
            self.kind(e)
                .ok_or_else(|| ModelError::UnknownEntity(e.clone()))
        };
        match (kind(&link.src)?, kind(&link.dst)?) {
            (EntityKind::Device, EntityKind::Broker) => Ok(LinkClass::Publish),
            (EntityKind::Broker, EntityKind::Device) => Ok(LinkClass::Notify),
            (EntityKind::Broker, EntityKind::Broker) => Ok(LinkClass::Bridge),
            (EntityKind::Device, EntityKind::Device) => {
                Err(ModelError::DeviceToDevice(link.clone()))
            }
        }
    }

    /// Links ending at a broker.
    pub fn monitored_links(&self) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(|l| self.is_broker(&l.dst))
    }
}

/// Link types, the per-link type assignment and the allow table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BrokeringPolicy {
    pub link_types: BTreeSet<LinkType>,
    pub type_of: BTreeMap<Link, LinkType>,
    pub allow: BTreeSet<(LinkType, LinkType)>,
}

impl BrokeringPolicy {
    pub fn allows(&self, incoming: &LinkType, outgoing: &LinkType) -> bool {
        self.allow.contains(&(incoming.clone(), outgoing.clone()))
    }

    pub fn type_of(&self, link: &Link) -> Option<&LinkType> {
        self.type_of.get(link)
    }

    /// Every declared pair except those listed.
    pub fn complement<'a>(
        types: &BTreeSet<LinkType>,
        denied: impl IntoIterator<Item = &'a (LinkType, LinkType)>,
    ) -> BTreeSet<(LinkType, LinkType)> {
        let denied: BTreeSet<&(LinkType, LinkType)> = denied.into_iter().collect();
        types
            .iter()
            .flat_map(|a| types.iter().map(move |b| (a.clone(), b.clone())))
            .filter(|p| !denied.contains(p))
            .collect()
    }
}

/// An automaton definition together with the source it was compiled from.
#[derive(Debug, Clone)]
pub struct NamedAutomaton {
    pub name: String,
    pub spec: EaSpec,
    pub automaton: EditAutomaton,
}

impl PartialEq for NamedAutomaton {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.spec == other.spec
    }
}

impl Eq for NamedAutomaton {}

/// Alphabet, named automata and their assignment to monitored links.
/// Monitored links without an assignment behave as the identity automaton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPolicy {
    alphabet: BTreeSet<Topic>,
    automata: BTreeMap<String, Arc<NamedAutomaton>>,
    assignment: BTreeMap<Link, String>,
    identity: Arc<EditAutomaton>,
}

impl Default for EventPolicy {
    fn default() -> Self {
        Self::new(BTreeSet::new())
    }
}

impl EventPolicy {
    pub fn new(alphabet: BTreeSet<Topic>) -> Self {
        EventPolicy {
            identity: Arc::new(EditAutomaton::identity(alphabet.clone())),
            alphabet,
            automata: BTreeMap::new(),
            assignment: BTreeMap::new(),
        }
    }

    pub fn alphabet(&self) -> &BTreeSet<Topic> {
        &self.alphabet
    }

    /// Compiles `spec` over the alphabet and registers it under `name`.
    pub fn define(&mut self, name: &str, spec: EaSpec) -> Result<(), ModelError> {
        if self.automata.contains_key(name) {
            return Err(ModelError::DuplicateAutomaton(name.to_owned()));
        }
        let automaton = spec
            .compile(&self.alphabet)
            .map_err(|source| ModelError::Automaton {
                name: name.to_owned(),
                source,
            })?;
        self.automata.insert(
            name.to_owned(),
            Arc::new(NamedAutomaton {
                name: name.to_owned(),
                spec,
                automaton,
            }),
        );
        Ok(())
    }

    /// Binds an automaton name to a link. Unknown names are reported by
    /// validation rather than here, so that configs can be checked whole.
    pub fn assign(&mut self, link: Link, name: &str) -> Option<String> {
        self.assignment.insert(link, name.to_owned())
    }

    pub fn automata(&self) -> impl Iterator<Item = &Arc<NamedAutomaton>> {
        self.automata.values()
    }

    pub fn automaton(&self, name: &str) -> Option<&Arc<NamedAutomaton>> {
        self.automata.get(name)
    }

    pub fn assignment(&self) -> &BTreeMap<Link, String> {
        &self.assignment
    }

    pub fn assigned(&self, link: &Link) -> Option<&Arc<NamedAutomaton>> {
        self.assignment.get(link).and_then(|n| self.automata.get(n))
    }

    /// The automaton in force on `link`: the assigned one, else identity.
    pub fn automaton_for(&self, link: &Link) -> &EditAutomaton {
        match self.assigned(link) {
            Some(named) => &named.automaton,
            None => &self.identity,
        }
    }
}

/// Topics each device has subscribed to, keyed by the notify link that
/// delivers them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subscriptions {
    pub sub: BTreeMap<Link, BTreeSet<Topic>>,
}

impl Subscriptions {
    pub fn add(&mut self, link: Link, topic: Topic) {
        self.sub.entry(link).or_default().insert(topic);
    }

    pub fn topics(&self, link: &Link) -> Option<&BTreeSet<Topic>> {
        self.sub.get(link)
    }

    pub fn is_subscribed(&self, link: &Link, topic: &str) -> bool {
        self.sub.get(link).is_some_and(|s| s.contains(topic))
    }
}

/// Which pending tasks must be handled before which others.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum TaskOrder {
    /// No task precedes another; every pending task is eligible.
    Trivial,
    /// Broker tasks before transmit tasks; transmits on one link in
    /// generation order.
    #[default]
    BrokerFifo,
}

impl TaskOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskOrder::Trivial => "trivial",
            TaskOrder::BrokerFifo => "broker-fifo",
        }
    }

    pub fn parse(s: &str) -> Option<TaskOrder> {
        match s {
            "trivial" => Some(TaskOrder::Trivial),
            "broker-fifo" => Some(TaskOrder::BrokerFifo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pub graph: ConnectionGraph,
    pub brokering: BrokeringPolicy,
    pub events: EventPolicy,
    pub subscriptions: Subscriptions,
    pub order: TaskOrder,
}

impl Schema {
    pub fn classify(&self, link: &Link) -> Result<LinkClass, ModelError> {
        self.graph.classify(link)
    }

    pub fn type_of(&self, src: &str, dst: &str) -> Option<&LinkType> {
        self.brokering.type_of(&Link::new(src, dst))
    }

    /// Whether `y` may forward an event received from `x` on to `z`.
    pub fn propagate(&self, x: &str, y: &str, z: &str) -> bool {
        match (self.type_of(x, y), self.type_of(y, z)) {
            (Some(t1), Some(t2)) => {
                self.graph.has_link(x, y)
                    && self.graph.has_link(y, z)
                    && self.brokering.allows(t1, t2)
            }
            _ => false,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate_schema(self)
    }
}
