//! Driving the rules to quiescence under a deterministic scheduler.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedTask, Firing, Machine, Publication, Rule, SimError, SystemState};
use crate::model::Schema;
use crate::names::{EntityId, Topic};

/// Resolves the choice among several minimal tasks.
#[derive(Debug, Clone)]
pub enum Scheduler {
    /// Smallest task by its rendered structure, then by time.
    Lexicographic,
    /// Oldest task first.
    Fifo,
    /// Uniformly random, reproducible from the seed.
    Random(Box<ChaCha8Rng>),
}

impl Scheduler {
    pub fn seeded(seed: u64) -> Self {
        Scheduler::Random(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    fn choose(&mut self, candidates: &[&AnnotatedTask]) -> usize {
        let by = |key: fn(&AnnotatedTask, &AnnotatedTask) -> std::cmp::Ordering| {
            (0..candidates.len())
                .min_by(|&i, &j| key(candidates[i], candidates[j]))
                .expect("at least one candidate")
        };
        match self {
            Scheduler::Lexicographic => {
                by(|a, b| (&a.task, a.t_gen, a.t_pub).cmp(&(&b.task, b.t_gen, b.t_pub)))
            }
            Scheduler::Fifo => by(|a, b| a.cmp(b)),
            Scheduler::Random(rng) => rng.random_range(0..candidates.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scheduler: Scheduler,
    /// Maximum number of transitions, publications included. `None` means
    /// 10,000 per publication.
    pub step_bound: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            scheduler: Scheduler::Fifo,
            step_bound: None,
        }
    }
}

/// An event handed to a device by T-Notify.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub clock: u64,
    pub device: EntityId,
    pub topic: Topic,
    pub t_pub: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub firings: Vec<Firing>,
    pub deliveries: Vec<Delivery>,
    pub final_state: SystemState,
}

impl Trace {
    /// Topics received by each device, in delivery order. Devices that
    /// received nothing are absent.
    pub fn delivered(&self) -> BTreeMap<EntityId, Vec<Topic>> {
        let mut out: BTreeMap<EntityId, Vec<Topic>> = BTreeMap::new();
        for d in &self.deliveries {
            out.entry(d.device.clone()).or_default().push(d.topic.clone());
        }
        out
    }

    pub fn delivered_to(&self, device: &str) -> Vec<Topic> {
        self.deliveries
            .iter()
            .filter(|d| d.device == device)
            .map(|d| d.topic.clone())
            .collect()
    }

    /// Every event that crossed into a given entity, whatever the link class.
    pub fn transmitted_into(&self, entity: &str) -> Vec<Topic> {
        self.firings
            .iter()
            .filter(|f| matches!(f.rule, Rule::Deliver | Rule::Notify))
            .filter_map(|f| match &f.task.task {
                super::Task::Transmit { dst, event, .. } if dst == entity => Some(event.clone()),
                _ => None,
            })
            .collect()
    }

    /// Per-device summary, one `delivered <device> <topics...>` line each,
    /// listing every device of `schema`.
    pub fn render_summary(&self, schema: &Schema) -> String {
        let delivered = self.delivered();
        let mut out = String::new();
        for d in schema.graph.devices() {
            out.push_str("delivered ");
            out.push_str(d);
            for t in delivered.get(d).into_iter().flatten() {
                out.push(' ');
                out.push_str(t);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for firing in &self.firings {
            write!(f, "{} {} {}", firing.clock, firing.rule, firing.task)?;
            if let Some(ea) = &firing.ea {
                write!(f, " ea {} {}->{} out={}", ea.link, ea.from.0, ea.to.0, ea.output.len())?;
            }
            if firing.rule != Rule::Publish {
                for a in &firing.added {
                    write!(f, " +{a}")?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Publishes `publications` in order and fires rules until the work list is
/// empty.
///
/// A publication without a time waits until the system is quiescent. A
/// publication `@t` fires as soon as the clock reaches `t`, or earlier if
/// nothing else is left to do.
pub fn run_to_quiescence(
    schema: &Schema,
    publications: &[Publication],
    options: RunOptions,
) -> Result<Trace, SimError> {
    let RunOptions {
        mut scheduler,
        step_bound,
    } = options;
    let bound = step_bound.unwrap_or(10_000 * publications.len().max(1) as u64);
    let mut machine = Machine::new(schema);
    let mut pending: VecDeque<&Publication> = publications.iter().collect();
    let mut firings = Vec::new();
    let mut deliveries = Vec::new();
    let mut steps = 0u64;

    loop {
        while let Some(p) = pending.front() {
            let ready = machine.is_quiescent()
                || p.at.is_some_and(|t| machine.state().clock >= t);
            if !ready {
                break;
            }
            if steps >= bound {
                return Err(SimError::StepBound {
                    bound,
                    pending: machine.state().work_list.len(),
                });
            }
            firings.push(machine.publish(&p.device, &p.broker, &p.topic)?);
            steps += 1;
            pending.pop_front();
        }
        if machine.is_quiescent() {
            if pending.is_empty() {
                break;
            }
            continue;
        }
        if steps >= bound {
            return Err(SimError::StepBound {
                bound,
                pending: machine.state().work_list.len(),
            });
        }
        let task = {
            let enabled = machine.enabled();
            enabled[scheduler.choose(&enabled)].clone()
        };
        let firing = machine.fire(&task)?;
        if firing.rule == Rule::Notify {
            if let super::Task::Transmit { dst, event, .. } = &task.task {
                deliveries.push(Delivery {
                    clock: firing.clock,
                    device: dst.clone(),
                    topic: event.clone(),
                    t_pub: task.t_pub,
                });
            }
        }
        firings.push(firing);
        steps += 1;
    }

    Ok(Trace {
        firings,
        deliveries,
        final_state: machine.into_state(),
    })
}
