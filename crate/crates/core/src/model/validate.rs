//! Structural checks on a schema. Violations are data, not errors.

use std::collections::BTreeSet;
use std::fmt;

use super::{EntityKind, LinkClass, Schema};
use crate::names::EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    EmptyName,
    DuplicateEntity,
    UnknownEntity,
    SelfLink,
    DeviceDeviceLink,
    AsymmetricLink,
    UntypedLink,
    TypeOnMissingLink,
    UndeclaredLinkType,
    SubscriptionOnNonNotifyLink,
    TopicOutsideAlphabet,
    AutomatonOnUnmonitoredLink,
    UnknownAutomaton,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::EmptyName => "empty name",
            ViolationKind::DuplicateEntity => "duplicate entity",
            ViolationKind::UnknownEntity => "unknown entity",
            ViolationKind::SelfLink => "self link",
            ViolationKind::DeviceDeviceLink => "device-device link",
            ViolationKind::AsymmetricLink => "asymmetric link",
            ViolationKind::UntypedLink => "untyped link",
            ViolationKind::TypeOnMissingLink => "type on missing link",
            ViolationKind::UndeclaredLinkType => "undeclared link type",
            ViolationKind::SubscriptionOnNonNotifyLink => "subscription on non-notify link",
            ViolationKind::TopicOutsideAlphabet => "topic outside alphabet",
            ViolationKind::AutomatonOnUnmonitoredLink => "automaton on unmonitored link",
            ViolationKind::UnknownAutomaton => "unknown automaton",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub kind: ViolationKind,
    /// The offending element, rendered.
    pub subject: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.subject)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, subject: impl fmt::Display) {
        self.violations.push(Violation {
            kind,
            subject: subject.to_string(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub(super) fn validate_schema(schema: &Schema) -> ValidationReport {
    let mut report = ValidationReport::default();
    let graph = &schema.graph;

    let mut seen: BTreeSet<&EntityId> = BTreeSet::new();
    for e in graph.entities() {
        if e.name.is_empty() {
            report.push(ViolationKind::EmptyName, e.kind);
        }
        if !seen.insert(&e.name) {
            report.push(ViolationKind::DuplicateEntity, &e.name);
        }
    }

    for link in graph.links() {
        let mut known = true;
        for end in [&link.src, &link.dst] {
            if !graph.contains(end) {
                report.push(ViolationKind::UnknownEntity, format_args!("{end} in {link}"));
                known = false;
            }
        }
        if link.src == link.dst {
            report.push(ViolationKind::SelfLink, link);
        }
        if known
            && graph.kind(&link.src) == Some(EntityKind::Device)
            && graph.kind(&link.dst) == Some(EntityKind::Device)
        {
            report.push(ViolationKind::DeviceDeviceLink, link);
        }
        if !graph.has_link(&link.dst, &link.src) {
            report.push(ViolationKind::AsymmetricLink, link);
        }
        match schema.brokering.type_of(link) {
            None => report.push(ViolationKind::UntypedLink, link),
            Some(t) if !schema.brokering.link_types.contains(t) => {
                report.push(ViolationKind::UndeclaredLinkType, format_args!("{t} on {link}"))
            }
            Some(_) => {}
        }
    }

    for link in schema.brokering.type_of.keys() {
        if !graph.has_link(&link.src, &link.dst) {
            report.push(ViolationKind::TypeOnMissingLink, link);
        }
    }
    for (a, b) in &schema.brokering.allow {
        for t in [a, b] {
            if !schema.brokering.link_types.contains(t) {
                report.push(ViolationKind::UndeclaredLinkType, format_args!("{t} in allow ({a}, {b})"));
            }
        }
    }

    let alphabet = schema.events.alphabet();
    for (link, topics) in &schema.subscriptions.sub {
        if !graph.has_link(&link.src, &link.dst)
            || graph.classify(link).ok() != Some(LinkClass::Notify)
        {
            report.push(ViolationKind::SubscriptionOnNonNotifyLink, link);
        }
        for t in topics.iter().filter(|t| !alphabet.contains(*t)) {
            report.push(ViolationKind::TopicOutsideAlphabet, format_args!("{t} subscribed on {link}"));
        }
    }

    for (link, name) in schema.events.assignment() {
        let monitored = graph.has_link(&link.src, &link.dst)
            && graph.classify(link).is_ok_and(LinkClass::is_monitored);
        if !monitored {
            report.push(ViolationKind::AutomatonOnUnmonitoredLink, link);
        }
        if schema.events.automaton(name).is_none() {
            report.push(ViolationKind::UnknownAutomaton, format_args!("{name} on {link}"));
        }
    }

    report
}
