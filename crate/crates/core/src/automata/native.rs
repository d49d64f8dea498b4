//! In-process registry of native monitors.
//!
//! A native monitor is a table of three plain function pointers, so a
//! computation-heavy monitor can keep arbitrary state behind an opaque handle
//! instead of being expressed as a finite transition table.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::names::Topic;

/// An event as seen by a live monitor: topic plus opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: Topic,
    pub payload: Bytes,
}

impl Message {
    pub fn new(topic: impl Into<Topic>, payload: impl Into<Bytes>) -> Self {
        Message {
            topic: topic.into(),
            payload: payload.into(),
        }
    }
}

/// Output buffer handed to a transition callback.
#[derive(Debug, Default)]
pub struct EventQueue(Vec<Message>);

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: Message) {
        self.0.push(message);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<Message> {
        self.0
    }
}

/// Construction parameters for one monitor instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MonitorArgs {
    /// Human-readable name of the link the instance is bound to.
    pub link: String,
    pub seed: u64,
}

pub type StateHandle = Box<dyn Any + Send>;

#[derive(Clone, Copy)]
pub struct NativeMonitor {
    pub construct: fn(&MonitorArgs) -> StateHandle,
    pub destruct: fn(StateHandle),
    pub transition: fn(&Message, &mut StateHandle, &mut EventQueue),
}

impl fmt::Debug for NativeMonitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NativeMonitor { .. }")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("native monitor `{0}` is already registered")]
    Duplicate(String),
    #[error("no native monitor named `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Default)]
pub struct MonitorRegistry {
    entries: BTreeMap<String, NativeMonitor>,
}

impl MonitorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with `sem-passthrough` and `cem-busywork`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(SEM_PASSTHROUGH, passthrough())
            .and_then(|_| r.register(CEM_BUSYWORK, busywork()))
            .expect("builtin names are distinct");
        r
    }

    pub fn register(&mut self, name: &str, monitor: NativeMonitor) -> Result<(), RegistryError> {
        if self.entries.contains_key(name) {
            return Err(RegistryError::Duplicate(name.to_owned()));
        }
        self.entries.insert(name.to_owned(), monitor);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn instantiate(&self, name: &str, args: &MonitorArgs) -> Result<NativeInstance, RegistryError> {
        let vtable = *self
            .entries
            .get(name)
            .ok_or_else(|| RegistryError::Unknown(name.to_owned()))?;
        Ok(NativeInstance {
            name: name.to_owned(),
            state: Some((vtable.construct)(args)),
            vtable,
        })
    }
}

/// A constructed monitor. The destructor runs on drop.
pub struct NativeInstance {
    name: String,
    vtable: NativeMonitor,
    state: Option<StateHandle>,
}

impl NativeInstance {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn step(&mut self, message: &Message) -> Vec<Message> {
        let mut queue = EventQueue::new();
        let state = self.state.as_mut().expect("state lives until drop");
        (self.vtable.transition)(message, state, &mut queue);
        queue.into_vec()
    }
}

impl Drop for NativeInstance {
    fn drop(&mut self) {
        if let Some(state) = self.state.take() {
            (self.vtable.destruct)(state);
        }
    }
}

impl fmt::Debug for NativeInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NativeInstance")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

pub const SEM_PASSTHROUGH: &str = "sem-passthrough";
pub const CEM_BUSYWORK: &str = "cem-busywork";

/// Rounds of xorshift mixing per payload byte in `cem-busywork`.
const WORK_ROUNDS: u32 = 32;

fn passthrough() -> NativeMonitor {
    NativeMonitor {
        construct: |_| Box::new(()),
        destruct: drop,
        transition: |msg, _, out| out.push(msg.clone()),
    }
}

struct Busywork {
    rng: ChaCha8Rng,
    sink: u64,
}

fn busywork() -> NativeMonitor {
    NativeMonitor {
        construct: |args| {
            Box::new(Busywork {
                rng: ChaCha8Rng::seed_from_u64(args.seed),
                sink: 0,
            })
        },
        destruct: drop,
        transition: |msg, state, out| {
            let st = state
                .downcast_mut::<Busywork>()
                .expect("cem-busywork state");
            let mut x = st.sink | 1;
            for &b in msg.payload.iter() {
                x ^= u64::from(b);
                for _ in 0..WORK_ROUNDS {
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                }
            }
            st.sink = std::hint::black_box(x);
            let mut payload = vec![0u8; msg.payload.len()];
            st.rng.fill_bytes(&mut payload);
            out.push(Message {
                topic: msg.topic.clone(),
                payload: payload.into(),
            });
        },
    }
}
