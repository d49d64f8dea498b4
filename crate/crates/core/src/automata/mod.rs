//! Edit automata: finite-control event transformers with a total transition
//! function `(state, topic) -> (state, topic sequence)`.
//!
//! An empty output sequence suppresses the input event, a singleton passes or
//! replaces it, and a longer sequence injects events. Automata are built from
//! the textual transition-table format in [`spec`], from the [`filter`] and
//! [`mapper`] constructions, or supplied as native monitors via [`native`].

mod builders;
pub mod native;
pub mod spec;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use builders::{filter, mapper};
pub use spec::{EaSpec, Label};

use crate::names::Topic;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EaError {
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("topic `{0}` is outside the automaton alphabet")]
    UnknownTopic(Topic),
    #[error("state `{0}` declared twice")]
    DuplicateState(String),
    #[error("no initial state: mark one with `initial` or name it `q0`")]
    NoInitialState,
    #[error("more than one initial state (`{0}` and `{1}`)")]
    MultipleInitialStates(String, String),
    #[error("edge references undeclared state `{0}`")]
    UndeclaredState(String),
    #[error("state `{state}` has two edges triggered by `{topic}`")]
    DuplicateEdge { state: String, topic: Topic },
    #[error("state `{0}` has more than one wildcard edge")]
    MultipleWildcards(String),
    #[error("malformed edge label `{0}`")]
    BadLabel(String),
    #[error("topics {0:?} are not in the alphabet")]
    NotSubset(Vec<Topic>),
    #[error("mapping is undefined on {0:?}")]
    PartialMapping(Vec<Topic>),
    #[error("mapping range leaves the alphabet: {0:?}")]
    RangeOutsideAlphabet(Vec<Topic>),
}

/// Index of a state inside its automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

/// What a transition emits for its triggering event `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    /// `a -> a`
    Preserve,
    /// `a -> ε`
    Suppress,
    /// `a -> w` for an explicit `w`.
    Emit(Vec<Topic>),
}

impl Output {
    /// Materialises the output sequence for input event `input`.
    pub fn sequence(&self, input: &Topic) -> Vec<Topic> {
        match self {
            Output::Preserve => vec![input.clone()],
            Output::Suppress => Vec::new(),
            Output::Emit(w) => w.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Output::Preserve => 1,
            Output::Suppress => 0,
            Output::Emit(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub target: StateId,
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Row {
    explicit: BTreeMap<Topic, Transition>,
    /// Applies to every topic without an explicit edge, including topics
    /// outside the alphabet when stepping in open-world mode.
    fallback: Transition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditAutomaton {
    alphabet: BTreeSet<Topic>,
    states: Vec<String>,
    initial: StateId,
    rows: Vec<Row>,
}

impl EditAutomaton {
    /// Single-state automaton that preserves every event.
    pub fn identity(alphabet: BTreeSet<Topic>) -> Self {
        EditAutomaton {
            alphabet,
            states: vec!["q0".to_owned()],
            initial: StateId(0),
            rows: vec![Row {
                explicit: BTreeMap::new(),
                fallback: Transition {
                    target: StateId(0),
                    output: Output::Preserve,
                },
            }],
        }
    }

    pub fn alphabet(&self) -> &BTreeSet<Topic> {
        &self.alphabet
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, id: StateId) -> &str {
        &self.states[id.0]
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name).map(StateId)
    }

    pub fn states(&self) -> impl Iterator<Item = (StateId, &str)> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| (StateId(i), s.as_str()))
    }

    /// True when every state has no explicit edges and preserves everything.
    pub fn is_identity(&self) -> bool {
        self.rows.iter().all(|r| {
            r.explicit.is_empty()
                && r.fallback.target == self.initial
                && r.fallback.output == Output::Preserve
        }) && self.states.len() == 1
    }

    /// Open-world transition: defined for every topic string. Topics with no
    /// explicit edge take the state's wildcard (or implicit `!*`) rule.
    pub fn transition(&self, state: StateId, event: &str) -> &Transition {
        let row = &self.rows[state.0];
        row.explicit.get(event).unwrap_or(&row.fallback)
    }

    /// Closed-world step over the automaton's alphabet.
    pub fn step(&self, state: StateId, event: &Topic) -> Result<(StateId, Vec<Topic>), EaError> {
        if state.0 >= self.states.len() {
            return Err(EaError::UnknownState(format!("#{}", state.0)));
        }
        if !self.alphabet.contains(event) {
            return Err(EaError::UnknownTopic(event.clone()));
        }
        let t = self.transition(state, event);
        Ok((t.target, t.output.sequence(event)))
    }

    /// [`step`](Self::step) addressed by state name.
    pub fn step_named(&self, state: &str, event: &Topic) -> Result<(String, Vec<Topic>), EaError> {
        let id = self
            .state_id(state)
            .ok_or_else(|| EaError::UnknownState(state.to_owned()))?;
        let (next, out) = self.step(id, event)?;
        Ok((self.state_name(next).to_owned(), out))
    }

    /// Left fold of `step` from `state`, concatenating outputs.
    pub fn run_from(
        &self,
        state: StateId,
        input: &[Topic],
    ) -> Result<(StateId, Vec<Topic>), EaError> {
        let mut q = state;
        let mut out = Vec::new();
        for a in input {
            let (next, w) = self.step(q, a)?;
            out.extend(w);
            q = next;
        }
        Ok((q, out))
    }

    /// Transforms `input` starting from the initial state.
    pub fn run(&self, input: &[Topic]) -> Result<Vec<Topic>, EaError> {
        self.run_from(self.initial, input).map(|(_, w)| w)
    }
}

impl fmt::Display for EditAutomaton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, name) in self.states() {
            let row = &self.rows[id.0];
            for (topic, t) in &row.explicit {
                writeln!(
                    f,
                    "{name} --{topic}/{}--> {}",
                    render_output(&t.output, topic),
                    self.state_name(t.target)
                )?;
            }
            writeln!(
                f,
                "{name} --*/{}--> {}",
                match &row.fallback.output {
                    Output::Preserve => "*".to_owned(),
                    Output::Suppress => "ε".to_owned(),
                    Output::Emit(w) => join(w),
                },
                self.state_name(row.fallback.target)
            )?;
        }
        Ok(())
    }
}

fn render_output(out: &Output, input: &Topic) -> String {
    match out {
        Output::Preserve => input.to_string(),
        Output::Suppress => "ε".to_owned(),
        Output::Emit(w) => join(w),
    }
}

fn join(w: &[Topic]) -> String {
    if w.is_empty() {
        return "ε".to_owned();
    }
    w.iter().map(Topic::as_str).collect::<Vec<_>>().join(",")
}
