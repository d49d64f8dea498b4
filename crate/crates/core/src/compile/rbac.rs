//! Role-based protection domains. Every role gets a publication broker and
//! a subscription broker, all joined through a central `Bus`; filters on
//! the bus links restrict what each role may publish and receive.
//!
//! ```text
//! device d1 d2
//! role staff admin
//! assign d1 staff
//! pub staff temp
//! sub staff temp alarm
//! senior admin staff     # admin inherits staff's topics
//! subscribe d2 temp
//! ```

use std::collections::{BTreeMap, BTreeSet};

use super::CompileError;
use crate::automata::EaSpec;
use crate::model::{BrokeringPolicy, EventPolicy, Link, Schema};
use crate::names::{EntityId, LinkType, Topic};
use crate::text::{lex, ParseError};

pub const BUS: &str = "Bus";
pub const SUB_UP: &str = "SubUp";
pub const SUB_DOWN: &str = "SubDown";
pub const PUB_UP: &str = "PubUp";
pub const PUB_DOWN: &str = "PubDown";
pub const DEV_UP: &str = "DevUp";
pub const DEV_DOWN: &str = "DevDown";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RbacPolicy {
    pub devices: BTreeSet<EntityId>,
    pub roles: BTreeSet<String>,
    /// Role membership, `(device, role)`.
    pub ua: BTreeSet<(EntityId, String)>,
    pub pub_of: BTreeMap<String, BTreeSet<Topic>>,
    pub sub_of: BTreeMap<String, BTreeSet<Topic>>,
    /// `(senior, junior)` pairs.
    pub seniors: BTreeSet<(String, String)>,
    pub subscriptions: BTreeSet<(EntityId, Topic)>,
    pub alphabet: BTreeSet<Topic>,
}

pub fn pub_broker(role: &str) -> EntityId {
    EntityId::new(format!("{role}.pub"))
}

pub fn sub_broker(role: &str) -> EntityId {
    EntityId::new(format!("{role}.sub"))
}

impl RbacPolicy {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut p = RbacPolicy::default();
        for d in lex(text) {
            match d.keyword.as_str() {
                "device" => p.devices.extend(d.at_least(1)?.iter().map(EntityId::new)),
                "role" => p.roles.extend(d.at_least(1)?.iter().cloned()),
                "assign" => {
                    let a = d.exact(2)?;
                    p.ua.insert((a[0].as_str().into(), a[1].clone()));
                }
                "pub" | "sub" => {
                    let a = d.at_least(1)?;
                    let map = if d.keyword == "pub" { &mut p.pub_of } else { &mut p.sub_of };
                    map.entry(a[0].clone())
                        .or_default()
                        .extend(a[1..].iter().map(Topic::new));
                }
                "senior" => {
                    let a = d.exact(2)?;
                    p.seniors.insert((a[0].clone(), a[1].clone()));
                }
                "subscribe" => {
                    let a = d.at_least(2)?;
                    for t in &a[1..] {
                        p.subscriptions.insert((a[0].as_str().into(), t.into()));
                    }
                }
                "alphabet" => p.alphabet.extend(d.args.iter().map(Topic::new)),
                other => return Err(d.error(format!("unknown rbac directive `{other}`"))),
            }
        }
        Ok(p)
    }

    pub fn roles_of<'a>(&'a self, device: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.ua.iter().filter(move |(d, _)| d == device).map(|(_, r)| r)
    }

    /// Every topic the policy mentions.
    pub fn topics(&self) -> BTreeSet<Topic> {
        let mut all = self.alphabet.clone();
        all.extend(self.pub_of.values().flatten().cloned());
        all.extend(self.sub_of.values().flatten().cloned());
        all.extend(self.subscriptions.iter().map(|(_, t)| t.clone()));
        all
    }

    fn juniors<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.seniors.iter().filter(move |(s, _)| s == role).map(|(_, j)| j)
    }

    /// `role` together with every role below it.
    fn dominated(&self, role: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![role.to_owned()];
        while let Some(r) = stack.pop() {
            if seen.insert(r.clone()) {
                stack.extend(self.juniors(&r).cloned());
            }
        }
        seen
    }

    fn check(&self) -> Result<(), CompileError> {
        let mut names: BTreeSet<String> = [BUS.to_owned()].into();
        for d in &self.devices {
            if !names.insert(d.to_string()) {
                return Err(CompileError::NameClash(d.to_string()));
            }
        }
        for r in &self.roles {
            for b in [pub_broker(r), sub_broker(r)] {
                if !names.insert(b.to_string()) {
                    return Err(CompileError::NameClash(b.to_string()));
                }
            }
        }
        let role = |r: &String| {
            if self.roles.contains(r) {
                Ok(())
            } else {
                Err(CompileError::UnknownEntity(r.clone()))
            }
        };
        let device = |d: &EntityId| {
            if self.devices.contains(d) {
                Ok(())
            } else {
                Err(CompileError::UnknownEntity(d.to_string()))
            }
        };
        for (d, r) in &self.ua {
            device(d)?;
            role(r)?;
        }
        for r in self.pub_of.keys().chain(self.sub_of.keys()) {
            role(r)?;
        }
        for (s, j) in &self.seniors {
            role(s)?;
            role(j)?;
            if s == j || self.dominated(j).contains(s) {
                return Err(CompileError::Cycle(s.clone()));
            }
        }
        for (d, _) in &self.subscriptions {
            device(d)?;
        }
        Ok(())
    }
}

/// Builds the role brokers, their links, the six-type brokering policy and
/// the pub/sub filters. Role hierarchies add a bridge from each senior's
/// publication broker to its junior's, and from each junior's subscription
/// broker to its senior's, so seniors inherit both topic sets.
pub fn compile_rbac(policy: &RbacPolicy) -> Result<Schema, CompileError> {
    policy.check()?;
    let ty = LinkType::new;
    let mut schema = Schema::default();
    let mut brokering = BrokeringPolicy {
        link_types: [SUB_UP, SUB_DOWN, PUB_UP, PUB_DOWN, DEV_UP, DEV_DOWN]
            .into_iter()
            .map(ty)
            .collect(),
        allow: [(DEV_UP, PUB_UP), (PUB_UP, SUB_DOWN), (SUB_DOWN, DEV_DOWN)]
            .into_iter()
            .map(|(a, b)| (ty(a), ty(b)))
            .collect(),
        ..BrokeringPolicy::default()
    };
    if !policy.seniors.is_empty() {
        brokering.allow.insert((ty(PUB_UP), ty(PUB_UP)));
        brokering.allow.insert((ty(SUB_DOWN), ty(SUB_DOWN)));
    }

    let mut connect = |schema: &mut Schema, a: EntityId, b: EntityId, up: &'static str, down: &'static str| {
        let l = Link::new(a, b);
        schema.graph.add_link(l.clone());
        schema.graph.add_link(l.reversed());
        brokering.type_of.insert(l.reversed(), ty(down));
        brokering.type_of.insert(l, ty(up));
    };

    schema.graph.add_broker(BUS);
    for r in &policy.roles {
        schema.graph.add_broker(pub_broker(r));
        schema.graph.add_broker(sub_broker(r));
    }
    for d in &policy.devices {
        schema.graph.add_device(d.clone());
    }
    for r in &policy.roles {
        connect(&mut schema, pub_broker(r), BUS.into(), PUB_UP, PUB_DOWN);
        connect(&mut schema, sub_broker(r), BUS.into(), SUB_UP, SUB_DOWN);
    }
    for (d, r) in &policy.ua {
        connect(&mut schema, d.clone(), pub_broker(r), DEV_UP, DEV_DOWN);
        connect(&mut schema, d.clone(), sub_broker(r), DEV_UP, DEV_DOWN);
    }
    for (senior, junior) in &policy.seniors {
        connect(&mut schema, pub_broker(senior), pub_broker(junior), PUB_UP, PUB_DOWN);
        connect(&mut schema, sub_broker(junior), sub_broker(senior), SUB_DOWN, SUB_UP);
    }
    schema.brokering = brokering;

    let mut events = EventPolicy::new(policy.topics());
    let empty = BTreeSet::new();
    for r in &policy.roles {
        let pub_name = format!("pub_{r}");
        let sub_name = format!("sub_{r}");
        let define = |events: &mut EventPolicy, name: &str, topics: &BTreeSet<Topic>| {
            events
                .define(name, EaSpec::filter(topics))
                .expect("filter topics are drawn from the alphabet");
        };
        define(&mut events, &pub_name, policy.pub_of.get(r).unwrap_or(&empty));
        define(&mut events, &sub_name, policy.sub_of.get(r).unwrap_or(&empty));
        events.assign(Link::new(pub_broker(r), BUS), &pub_name);
        events.assign(Link::new(BUS, sub_broker(r)), &sub_name);
    }
    schema.events = events;

    for (d, topic) in &policy.subscriptions {
        for r in policy.roles_of(d) {
            schema
                .subscriptions
                .add(Link::new(sub_broker(r), d.clone()), topic.clone());
        }
    }
    Ok(schema)
}

/// Direct reading of the policy: `publisher` may deliver `topic` to
/// `subscriber` iff one of its roles may publish it, one of the
/// subscriber's roles may receive it, and the subscriber asked for it.
/// Seniors hold the topics of every role below them.
pub fn rbac_oracle(policy: &RbacPolicy, publisher: &str, topic: &str, subscriber: &str) -> bool {
    let holds = |device: &str, map: &BTreeMap<String, BTreeSet<Topic>>| {
        policy.roles_of(device).any(|r| {
            policy
                .dominated(r)
                .iter()
                .any(|j| map.get(j).is_some_and(|ts| ts.contains(topic)))
        })
    };
    holds(publisher, &policy.pub_of)
        && holds(subscriber, &policy.sub_of)
        && policy
            .subscriptions
            .contains(&(EntityId::new(subscriber), Topic::new(topic)))
}
