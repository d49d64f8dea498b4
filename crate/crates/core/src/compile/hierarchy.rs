//! Component hierarchies: events travel up towards parents and then down,
//! never up again, so a publication is visible exactly under the common
//! ancestors of its broker.
//!
//! ```text
//! broker A C
//! device 1 2
//! parent C A        # child, then parent
//! parent 1 C
//! subscribe 2 news  # optional
//! alphabet news     # optional, inferred from subscriptions
//! ```

use std::collections::{BTreeMap, BTreeSet};

use super::CompileError;
use crate::model::{BrokeringPolicy, EventPolicy, Link, Schema};
use crate::names::{EntityId, LinkType, Topic};
use crate::text::{lex, ParseError};

pub const UP: &str = "up";
pub const DOWN: &str = "down";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HierarchyPolicy {
    pub brokers: Vec<EntityId>,
    pub devices: Vec<EntityId>,
    /// `(child, parent)` pairs.
    pub parents: BTreeSet<(EntityId, EntityId)>,
    pub subscriptions: BTreeSet<(EntityId, Topic)>,
    pub alphabet: BTreeSet<Topic>,
}

impl HierarchyPolicy {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut p = HierarchyPolicy::default();
        for d in lex(text) {
            match d.keyword.as_str() {
                "broker" => p.brokers.extend(d.at_least(1)?.iter().map(EntityId::new)),
                "device" => p.devices.extend(d.at_least(1)?.iter().map(EntityId::new)),
                "parent" => {
                    let a = d.exact(2)?;
                    p.parents.insert((a[0].as_str().into(), a[1].as_str().into()));
                }
                "subscribe" => {
                    let a = d.at_least(2)?;
                    for t in &a[1..] {
                        p.subscriptions.insert((a[0].as_str().into(), t.into()));
                    }
                }
                "alphabet" => p.alphabet.extend(d.args.iter().map(Topic::new)),
                other => return Err(d.error(format!("unknown hierarchy directive `{other}`"))),
            }
        }
        Ok(p)
    }

    fn check(&self) -> Result<(), CompileError> {
        let mut names = BTreeSet::new();
        for n in self.brokers.iter().chain(&self.devices) {
            if !names.insert(n) {
                return Err(CompileError::NameClash(n.to_string()));
            }
        }
        let devices: BTreeSet<&EntityId> = self.devices.iter().collect();
        for (child, parent) in &self.parents {
            for e in [child, parent] {
                if !names.contains(e) {
                    return Err(CompileError::UnknownEntity(e.to_string()));
                }
            }
            if devices.contains(parent) {
                return Err(CompileError::DeviceAsParent(parent.to_string()));
            }
            if child == parent {
                return Err(CompileError::SelfParent(child.to_string()));
            }
        }
        for (d, _) in &self.subscriptions {
            if !devices.contains(d) {
                return Err(CompileError::UnknownEntity(d.to_string()));
            }
        }
        // Kahn's algorithm over child -> parent edges.
        let mut indegree: BTreeMap<&EntityId, usize> = names.iter().map(|n| (*n, 0)).collect();
        for (_, parent) in &self.parents {
            *indegree.get_mut(parent).expect("checked above") += 1;
        }
        let mut ready: Vec<&EntityId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut done = 0;
        while let Some(n) = ready.pop() {
            done += 1;
            for (_, parent) in self.parents.range((n.clone(), EntityId::new(""))..).take_while(|(c, _)| c == n) {
                let deg = indegree.get_mut(parent).expect("checked above");
                *deg -= 1;
                if *deg == 0 {
                    ready.push(parent);
                }
            }
        }
        if done < names.len() {
            let stuck = indegree.iter().find(|(_, d)| **d > 0).map(|(n, _)| n.to_string());
            return Err(CompileError::Cycle(stuck.unwrap_or_default()));
        }
        Ok(())
    }
}

/// Links every child with its parent: `up` towards the parent, `down` back.
/// The policy forbids only `down` followed by `up`.
pub fn compile_hierarchy(policy: &HierarchyPolicy) -> Result<Schema, CompileError> {
    policy.check()?;
    let (up, down) = (LinkType::new(UP), LinkType::new(DOWN));
    let mut schema = Schema::default();
    for b in &policy.brokers {
        schema.graph.add_broker(b.clone());
    }
    for d in &policy.devices {
        schema.graph.add_device(d.clone());
    }
    let mut brokering = BrokeringPolicy {
        link_types: [up.clone(), down.clone()].into(),
        ..BrokeringPolicy::default()
    };
    for (child, parent) in &policy.parents {
        let l = Link::new(child.clone(), parent.clone());
        schema.graph.add_link(l.reversed());
        brokering.type_of.insert(l.reversed(), down.clone());
        schema.graph.add_link(l.clone());
        brokering.type_of.insert(l, up.clone());
    }
    brokering.allow = BrokeringPolicy::complement(&brokering.link_types, &[(down, up)]);
    schema.brokering = brokering;

    let mut alphabet = policy.alphabet.clone();
    alphabet.extend(policy.subscriptions.iter().map(|(_, t)| t.clone()));
    schema.events = EventPolicy::new(alphabet);
    for (device, topic) in &policy.subscriptions {
        let parents: Vec<EntityId> = policy
            .parents
            .iter()
            .filter(|(c, _)| c == device)
            .map(|(_, p)| p.clone())
            .collect();
        for p in parents {
            schema.subscriptions.add(Link::new(p, device.clone()), topic.clone());
        }
    }
    Ok(schema)
}
