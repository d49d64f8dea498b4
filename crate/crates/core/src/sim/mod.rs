//! Executable small-step semantics: a global clock, per-link automaton
//! states and a work list of annotated tasks, rewritten by four rules.

mod run;
mod script;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use run::{run_to_quiescence, Delivery, RunOptions, Scheduler, Trace};
pub use script::{parse_script, Publication};

use crate::automata::StateId;
use crate::model::{Link, LinkClass, Schema, TaskOrder};
use crate::names::{EntityId, Topic};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    /// Move one event across the link `src -> dst`.
    Transmit {
        src: EntityId,
        dst: EntityId,
        event: Topic,
    },
    /// Broker `at` still has to forward `events`, received from `src`.
    Broker {
        src: EntityId,
        at: EntityId,
        events: Vec<Topic>,
    },
}

impl Task {
    pub fn transmit(src: impl Into<EntityId>, dst: impl Into<EntityId>, event: impl Into<Topic>) -> Task {
        Task::Transmit {
            src: src.into(),
            dst: dst.into(),
            event: event.into(),
        }
    }

    pub fn broker(src: impl Into<EntityId>, at: impl Into<EntityId>, events: Vec<Topic>) -> Task {
        Task::Broker {
            src: src.into(),
            at: at.into(),
            events,
        }
    }

    pub fn link(&self) -> Link {
        match self {
            Task::Transmit { src, dst, .. } => Link::new(src.clone(), dst.clone()),
            Task::Broker { src, at, .. } => Link::new(src.clone(), at.clone()),
        }
    }

    pub fn is_broker(&self) -> bool {
        matches!(self, Task::Broker { .. })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Transmit { src, dst, event } => write!(f, "transmit({src},{dst},{event})"),
            Task::Broker { src, at, events } => {
                let w: Vec<&str> = events.iter().map(Topic::as_str).collect();
                write!(f, "broker({src},{at},[{}])", w.join(","))
            }
        }
    }
}

/// A task with its generation time and the time of the publication it
/// descends from. Ordered by `(t_gen, t_pub, task)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnnotatedTask {
    pub t_gen: u64,
    pub t_pub: u64,
    pub task: Task,
}

impl AnnotatedTask {
    pub fn new(task: Task, t_gen: u64, t_pub: u64) -> Self {
        AnnotatedTask { t_gen, t_pub, task }
    }
}

impl fmt::Display for AnnotatedTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{}>", self.task, self.t_gen, self.t_pub)
    }
}

/// A strict partial order on pending tasks. Only minimal tasks may fire.
pub trait TaskOrdering {
    /// True when `a` must be handled strictly before `b`.
    fn precedes(&self, a: &AnnotatedTask, b: &AnnotatedTask) -> bool;
}

impl TaskOrdering for TaskOrder {
    fn precedes(&self, a: &AnnotatedTask, b: &AnnotatedTask) -> bool {
        match self {
            TaskOrder::Trivial => false,
            TaskOrder::BrokerFifo => match (&a.task, &b.task) {
                (Task::Broker { .. }, Task::Transmit { .. }) => true,
                (
                    Task::Transmit { src: s1, dst: d1, .. },
                    Task::Transmit { src: s2, dst: d2, .. },
                ) => s1 == s2 && d1 == d2 && a.t_gen < b.t_gen,
                _ => false,
            },
        }
    }
}

/// All minimal elements of `work_list` under `ordering`.
pub fn select<'a>(
    work_list: &'a BTreeSet<AnnotatedTask>,
    ordering: &dyn TaskOrdering,
) -> Vec<&'a AnnotatedTask> {
    work_list
        .iter()
        .filter(|b| !work_list.iter().any(|a| ordering.precedes(a, b)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("{0} is not a publish link")]
    NotPublishLink(Link),
    #[error("topic `{0}` is outside the alphabet")]
    UnknownTopic(Topic),
    #[error("task {0} is not in the work list")]
    NotInWorkList(AnnotatedTask),
    #[error("task {0} is not minimal")]
    NotMinimal(AnnotatedTask),
    #[error("rule {rule} does not apply to {task}")]
    WrongRule { rule: Rule, task: AnnotatedTask },
    #[error("broker task {0} has no events left")]
    EmptyBrokerTask(AnnotatedTask),
    #[error("step bound {bound} reached with {pending} task(s) still pending")]
    StepBound { bound: u64, pending: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Publish,
    Notify,
    Deliver,
    Broker,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Publish => "T-Publish",
            Rule::Notify => "T-Notify",
            Rule::Deliver => "T-Deliver",
            Rule::Broker => "T-Broker",
        })
    }
}

/// One automaton step taken by T-Deliver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EaStep {
    pub link: Link,
    pub from: StateId,
    pub to: StateId,
    pub output: Vec<Topic>,
}

/// A rule application: the task it consumed (or created, for T-Publish) and
/// the tasks it added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Firing {
    /// Clock value before the transition.
    pub clock: u64,
    pub rule: Rule,
    pub task: AnnotatedTask,
    pub added: Vec<AnnotatedTask>,
    pub ea: Option<EaStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    pub clock: u64,
    pub ea_states: BTreeMap<Link, StateId>,
    pub work_list: BTreeSet<AnnotatedTask>,
}

impl SystemState {
    /// Clock 0, every monitored link in its automaton's initial state, no
    /// pending tasks.
    pub fn initial(schema: &Schema) -> Self {
        let ea_states = schema
            .graph
            .monitored_links()
            .map(|l| (l.clone(), schema.events.automaton_for(l).initial()))
            .collect();
        SystemState {
            clock: 0,
            ea_states,
            work_list: BTreeSet::new(),
        }
    }
}

/// A schema together with its evolving system state.
pub struct Machine<'s> {
    schema: &'s Schema,
    state: SystemState,
}

impl<'s> Machine<'s> {
    pub fn new(schema: &'s Schema) -> Self {
        Machine {
            state: SystemState::initial(schema),
            schema,
        }
    }

    pub fn schema(&self) -> &'s Schema {
        self.schema
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn is_quiescent(&self) -> bool {
        self.state.work_list.is_empty()
    }

    /// Minimal tasks under the schema's ordering.
    pub fn enabled(&self) -> Vec<&AnnotatedTask> {
        select(&self.state.work_list, &self.schema.order)
    }

    fn tick(&mut self) -> u64 {
        let t = self.state.clock;
        self.state.clock += 1;
        t
    }

    /// T-Publish: `device` hands `event` to `broker`.
    pub fn publish(&mut self, device: &str, broker: &str, event: &Topic) -> Result<Firing, SimError> {
        let link = Link::new(device, broker);
        if !self.schema.graph.has_link(device, broker)
            || self.schema.classify(&link).ok() != Some(LinkClass::Publish)
        {
            return Err(SimError::NotPublishLink(link));
        }
        if !self.schema.events.alphabet().contains(event) {
            return Err(SimError::UnknownTopic(event.clone()));
        }
        let t = self.tick();
        let task = AnnotatedTask::new(Task::transmit(device, broker, event.clone()), t, t);
        self.state.work_list.insert(task.clone());
        Ok(Firing {
            clock: t,
            rule: Rule::Publish,
            task: task.clone(),
            added: vec![task],
            ea: None,
        })
    }

    /// Fires whichever rule applies to `task`.
    pub fn fire(&mut self, task: &AnnotatedTask) -> Result<Firing, SimError> {
        let rule = self.rule_for(task)?;
        self.apply(rule, task)
    }

    pub fn notify(&mut self, task: &AnnotatedTask) -> Result<Firing, SimError> {
        self.apply(Rule::Notify, task)
    }

    pub fn deliver(&mut self, task: &AnnotatedTask) -> Result<Firing, SimError> {
        self.apply(Rule::Deliver, task)
    }

    pub fn broker(&mut self, task: &AnnotatedTask) -> Result<Firing, SimError> {
        self.apply(Rule::Broker, task)
    }

    fn rule_for(&self, task: &AnnotatedTask) -> Result<Rule, SimError> {
        match &task.task {
            Task::Broker { .. } => Ok(Rule::Broker),
            Task::Transmit { .. } => match self.schema.classify(&task.task.link()) {
                Ok(LinkClass::Notify) => Ok(Rule::Notify),
                Ok(_) => Ok(Rule::Deliver),
                Err(_) => Err(SimError::WrongRule {
                    rule: Rule::Deliver,
                    task: task.clone(),
                }),
            },
        }
    }

    fn apply(&mut self, rule: Rule, task: &AnnotatedTask) -> Result<Firing, SimError> {
        if !self.state.work_list.contains(task) {
            return Err(SimError::NotInWorkList(task.clone()));
        }
        if self.rule_for(task)? != rule {
            return Err(SimError::WrongRule {
                rule,
                task: task.clone(),
            });
        }
        let ordering = &self.schema.order;
        if self.state.work_list.iter().any(|a| ordering.precedes(a, task)) {
            return Err(SimError::NotMinimal(task.clone()));
        }
        let mut added = Vec::new();
        let mut ea = None;
        match (&task.task, rule) {
            (Task::Transmit { .. }, Rule::Notify) => {}
            (Task::Transmit { src, dst, event }, Rule::Deliver) => {
                let link = task.task.link();
                let automaton = self.schema.events.automaton_for(&link);
                let from = self.state.ea_states[&link];
                let (to, output) = automaton
                    .step(from, event)
                    .map_err(|_| SimError::UnknownTopic(event.clone()))?;
                self.state.ea_states.insert(link.clone(), to);
                if !output.is_empty() {
                    added.push(AnnotatedTask::new(
                        Task::broker(src.clone(), dst.clone(), output.clone()),
                        self.state.clock,
                        task.t_pub,
                    ));
                }
                ea = Some(EaStep {
                    link,
                    from,
                    to,
                    output,
                });
            }
            (Task::Broker { src, at, events }, Rule::Broker) => {
                let Some((head, tail)) = events.split_first() else {
                    return Err(SimError::EmptyBrokerTask(task.clone()));
                };
                let t = self.state.clock;
                if !tail.is_empty() {
                    added.push(AnnotatedTask::new(
                        Task::broker(src.clone(), at.clone(), tail.to_vec()),
                        t,
                        task.t_pub,
                    ));
                }
                for out in self.schema.graph.out_links(at) {
                    let z = &out.dst;
                    let wanted = match self.schema.classify(out) {
                        Ok(LinkClass::Bridge) => true,
                        Ok(LinkClass::Notify) => self.schema.subscriptions.is_subscribed(out, head),
                        _ => false,
                    };
                    if wanted && z != src && self.schema.propagate(src, at, z) {
                        added.push(AnnotatedTask::new(
                            Task::transmit(at.clone(), z.clone(), head.clone()),
                            t,
                            task.t_pub,
                        ));
                    }
                }
            }
            _ => unreachable!("rule_for matched the task shape"),
        }
        let clock = self.tick();
        self.state.work_list.remove(task);
        self.state.work_list.extend(added.iter().cloned());
        Ok(Firing {
            clock,
            rule,
            task: task.clone(),
            added,
            ea,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::names::topics;

    const HOME: &str = include_str!("../../../../configs/smart-home/schema.conf");

    fn home() -> Schema {
        Schema::parse(HOME).unwrap()
    }

    fn t(task: Task, g: u64, p: u64) -> AnnotatedTask {
        AnnotatedTask::new(task, g, p)
    }

    #[test]
    fn select_on_empty_is_empty() {
        assert!(select(&BTreeSet::new(), &TaskOrder::BrokerFifo).is_empty());
    }

    #[test]
    fn select_returns_antichain_and_prefers_broker_tasks() {
        let a = t(Task::transmit("MD", "S", "MD_motion"), 0, 0);
        let b = t(Task::transmit("SP", "I", "AC_grant"), 1, 1);
        let wl: BTreeSet<_> = [a.clone(), b.clone()].into();
        assert_eq!(select(&wl, &TaskOrder::BrokerFifo).len(), 2);

        let k = t(Task::broker("MD", "S", topics(["MD_motion"])), 2, 0);
        let wl: BTreeSet<_> = [a, k.clone()].into();
        assert_eq!(select(&wl, &TaskOrder::BrokerFifo), vec![&k]);
        assert_eq!(select(&wl, &TaskOrder::Trivial).len(), 2);
    }

    #[test]
    fn publish_adds_transmit_and_ticks() {
        let s = home();
        let mut m = Machine::new(&s);
        m.publish("MD", "S", &"MD_motion".into()).unwrap();
        assert_eq!(m.state().clock, 1);
        let wl: Vec<_> = m.state().work_list.iter().cloned().collect();
        assert_eq!(wl, vec![t(Task::transmit("MD", "S", "MD_motion"), 0, 0)]);
        m.publish("MD", "S", &"MD_no_motion".into()).unwrap();
        let gens: Vec<u64> = m.state().work_list.iter().map(|a| a.t_gen).collect();
        assert_eq!(gens, vec![0, 1]);
    }

    #[test]
    fn publish_on_bridge_is_rejected() {
        let s = home();
        let mut m = Machine::new(&s);
        assert!(matches!(
            m.publish("H", "I", &"MD_motion".into()),
            Err(SimError::NotPublishLink(_))
        ));
    }

    #[test]
    fn m1_deliver_discards_unlock() {
        let s = home();
        let mut m = Machine::new(&s);
        m.publish("SP", "I", &"DL_unlock".into()).unwrap();
        let first = m.enabled()[0].clone();
        let f = m.deliver(&first).unwrap();
        let k = f.added[0].clone();
        let f = m.broker(&k).unwrap();
        let to_h = f
            .added
            .iter()
            .find(|a| a.task.link() == Link::new("I", "H"))
            .unwrap()
            .clone();
        let f = m.deliver(&to_h).unwrap();
        assert!(f.added.is_empty());
        assert_eq!(f.ea.unwrap().output, Vec::<Topic>::new());
    }

    #[test]
    fn m2_deliver_advances_state() {
        let s = home();
        let mut m = Machine::new(&s);
        m.state.work_list.insert(t(Task::transmit("H", "S", "AC_request"), 0, 0));
        let task = m.enabled()[0].clone();
        let f = m.deliver(&task).unwrap();
        assert_eq!(f.added, vec![t(Task::broker("H", "S", topics(["AC_request"])), 0, 0)]);
        let m2 = s.events.automaton_for(&Link::new("H", "S"));
        assert_eq!(m2.state_name(m.state().ea_states[&Link::new("H", "S")]), "q1");
    }

    #[test]
    fn broker_never_leaks_sensitive_to_internet() {
        let s = home();
        let mut m = Machine::new(&s);
        let k = t(Task::broker("S", "H", topics(["MD_motion"])), 0, 0);
        m.state.work_list.insert(k.clone());
        let f = m.broker(&k).unwrap();
        let dsts: Vec<String> = f.added.iter().map(|a| a.task.link().to_string()).collect();
        assert_eq!(dsts, vec!["H->DB"]);
    }

    #[test]
    fn broker_splits_head_from_residual() {
        let s = home();
        let mut m = Machine::new(&s);
        let k = t(Task::broker("S", "H", topics(["MD_motion", "SC_request"])), 0, 0);
        m.state.work_list.insert(k.clone());
        let f = m.broker(&k).unwrap();
        assert_eq!(f.added[0].task, Task::broker("S", "H", topics(["SC_request"])));
        assert_eq!(f.added[1].task, Task::transmit("H", "DB", "MD_motion"));
    }

    #[test]
    fn rule_preconditions() {
        let s = home();
        let mut m = Machine::new(&s);
        let ghost = t(Task::transmit("S", "DL", "DL_unlock"), 0, 0);
        assert!(matches!(m.notify(&ghost), Err(SimError::NotInWorkList(_))));
        let k = t(Task::broker("S", "H", topics(["MD_motion"])), 0, 0);
        m.state.work_list.insert(k.clone());
        assert!(matches!(m.notify(&k), Err(SimError::WrongRule { .. })));
        let late = t(Task::transmit("S", "DL", "DL_unlock"), 1, 1);
        m.state.work_list.insert(late.clone());
        assert!(matches!(m.notify(&late), Err(SimError::NotMinimal(_))));
        m.broker(&k).unwrap();
        m.notify(&late).unwrap();
        assert!(!m.state().work_list.contains(&late));
    }
}
