//! Per-link monitor instances.

use std::fmt;
use std::sync::Arc;

use ensemble_core::automata::native::{Message, MonitorArgs, MonitorRegistry, NativeInstance, RegistryError};
use ensemble_core::automata::{EaError, EditAutomaton, StateId};

use crate::config::MonitorSource;

/// One automaton step, reported for audit logging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EaLog {
    pub link: String,
    pub from: String,
    pub topic: String,
    pub to: String,
    pub out_count: usize,
}

impl fmt::Display for EaLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EA {} {} {} -> {} {}", self.link, self.from, self.topic, self.to, self.out_count)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("automaton for {link}: {source}")]
    Automaton {
        link: String,
        #[source]
        source: EaError,
    },
}

/// The monitor bound to one directed link. Unbound links take the identity
/// fast path without touching any state.
#[derive(Debug)]
pub enum LinkMonitor {
    Identity,
    Automaton { ea: Arc<EditAutomaton>, state: StateId },
    Native(NativeInstance),
}

impl LinkMonitor {
    pub fn instantiate(
        source: &MonitorSource,
        registry: &MonitorRegistry,
        args: &MonitorArgs,
    ) -> Result<LinkMonitor, MonitorError> {
        Ok(match source {
            MonitorSource::Native(name) => LinkMonitor::Native(registry.instantiate(name, args)?),
            MonitorSource::Automaton { spec, .. } => {
                let ea = spec.compile_open().map_err(|source| MonitorError::Automaton {
                    link: args.link.clone(),
                    source,
                })?;
                LinkMonitor::Automaton {
                    state: ea.initial(),
                    ea: Arc::new(ea),
                }
            }
        })
    }

    /// Feeds one message through the monitor. Automaton outputs inherit the
    /// input payload. The log entry is built only when `audit` is set and
    /// the monitor is an automaton.
    pub fn step(&mut self, link: &str, message: Message, audit: bool) -> (Vec<Message>, Option<EaLog>) {
        match self {
            LinkMonitor::Identity => (vec![message], None),
            LinkMonitor::Native(m) => (m.step(&message), None),
            LinkMonitor::Automaton { ea, state } => {
                let t = ea.transition(*state, message.topic.as_str());
                let out: Vec<Message> = t
                    .output
                    .sequence(&message.topic)
                    .into_iter()
                    .map(|topic| Message {
                        topic,
                        payload: message.payload.clone(),
                    })
                    .collect();
                let log = audit.then(|| EaLog {
                    link: link.to_owned(),
                    from: ea.state_name(*state).to_owned(),
                    topic: message.topic.to_string(),
                    to: ea.state_name(t.target).to_owned(),
                    out_count: out.len(),
                });
                *state = t.target;
                (out, log)
            }
        }
    }

    pub fn state_name(&self) -> Option<&str> {
        match self {
            LinkMonitor::Automaton { ea, state } => Some(ea.state_name(*state)),
            _ => None,
        }
    }
}
