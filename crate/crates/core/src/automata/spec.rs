//! Textual transition-table format for edit automata.
//!
//! ```text
//! state q0 initial
//! state q1
//! edge q0 AC_request q1        # preserve
//! edge q1 !DL_unlock q1        # suppress
//! edge q1 a->b,c q0            # rewrite / inject
//! edge q0 * q0                 # wildcard: preserve every unlisted topic
//! ```
//!
//! Wildcard labels (`*`, `!*`, `*->w`) stand for every topic that has no
//! explicit edge out of the same state. A state without a wildcard edge gets
//! an implicit `!*` self-loop, so the compiled transition function is total.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{EaError, EditAutomaton, Output, Row, StateId, Transition};
use crate::names::Topic;
use crate::text::{lex, Directive, ParseError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    /// `a`
    Preserve(Topic),
    /// `!a`
    Suppress(Topic),
    /// `a->w1,w2,...`
    Rewrite(Topic, Vec<Topic>),
    /// `*`
    AnyPreserve,
    /// `!*`
    AnySuppress,
    /// `*->w1,w2,...`
    AnyRewrite(Vec<Topic>),
}

impl Label {
    pub fn parse(token: &str) -> Result<Label, EaError> {
        let bad = || EaError::BadLabel(token.to_owned());
        if let Some((lhs, rhs)) = token.split_once("->") {
            let out = parse_sequence(rhs).ok_or_else(bad)?;
            return if lhs == "*" {
                Ok(Label::AnyRewrite(out))
            } else if is_topic_token(lhs) {
                Ok(Label::Rewrite(Topic::new(lhs), out))
            } else {
                Err(bad())
            };
        }
        match token {
            "*" => Ok(Label::AnyPreserve),
            "!*" => Ok(Label::AnySuppress),
            _ => match token.strip_prefix('!') {
                Some(t) if is_topic_token(t) => Ok(Label::Suppress(Topic::new(t))),
                Some(_) => Err(bad()),
                None if is_topic_token(token) => Ok(Label::Preserve(Topic::new(token))),
                None => Err(bad()),
            },
        }
    }

    /// Trigger topic of an explicit label, `None` for wildcards.
    pub fn trigger(&self) -> Option<&Topic> {
        match self {
            Label::Preserve(a) | Label::Suppress(a) | Label::Rewrite(a, _) => Some(a),
            _ => None,
        }
    }

    pub fn is_wildcard(&self) -> bool {
        self.trigger().is_none()
    }

    fn output(&self) -> Output {
        match self {
            Label::Preserve(_) | Label::AnyPreserve => Output::Preserve,
            Label::Suppress(_) | Label::AnySuppress => Output::Suppress,
            Label::Rewrite(_, w) | Label::AnyRewrite(w) => Output::Emit(w.clone()),
        }
    }

    fn topics(&self) -> impl Iterator<Item = &Topic> {
        let out: &[Topic] = match self {
            Label::Rewrite(_, w) | Label::AnyRewrite(w) => w,
            _ => &[],
        };
        self.trigger().into_iter().chain(out.iter())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq = |w: &[Topic]| w.iter().map(Topic::as_str).collect::<Vec<_>>().join(",");
        match self {
            Label::Preserve(a) => write!(f, "{a}"),
            Label::Suppress(a) => write!(f, "!{a}"),
            Label::Rewrite(a, w) => write!(f, "{a}->{}", seq(w)),
            Label::AnyPreserve => f.write_str("*"),
            Label::AnySuppress => f.write_str("!*"),
            Label::AnyRewrite(w) => write!(f, "*->{}", seq(w)),
        }
    }
}

fn is_topic_token(s: &str) -> bool {
    !s.is_empty() && s != "*" && !s.starts_with('!') && !s.contains(',') && !s.contains("->")
}

fn parse_sequence(s: &str) -> Option<Vec<Topic>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',')
        .map(|t| is_topic_token(t).then(|| Topic::new(t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDecl {
    pub name: String,
    pub initial: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: String,
    pub label: Label,
    pub to: String,
}

/// Parsed (but not yet compiled) transition table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EaSpec {
    pub states: Vec<StateDecl>,
    pub edges: Vec<Edge>,
}

impl EaSpec {
    pub fn parse(text: &str) -> Result<EaSpec, ParseError> {
        Self::from_directives(&lex(text))
    }

    pub fn from_directives(directives: &[Directive]) -> Result<EaSpec, ParseError> {
        let mut spec = EaSpec::default();
        for d in directives {
            match d.keyword.as_str() {
                "state" => {
                    let args = d.at_least(1)?;
                    let initial = match &args[1..] {
                        [] => false,
                        [flag] if flag == "initial" => true,
                        _ => return Err(d.error("expected `state <name> [initial]`")),
                    };
                    spec.states.push(StateDecl {
                        name: args[0].clone(),
                        initial,
                    });
                }
                "edge" => {
                    let args = d.exact(3)?;
                    let label = Label::parse(&args[1]).map_err(|e| d.error(e.to_string()))?;
                    spec.edges.push(Edge {
                        from: args[0].clone(),
                        label,
                        to: args[2].clone(),
                    });
                }
                other => return Err(d.error(format!("unknown automaton directive `{other}`"))),
            }
        }
        Ok(spec)
    }

    /// Single-state filter passing exactly `allowed`; everything else falls to
    /// the implicit `!*` self-loop.
    pub fn filter<'a>(allowed: impl IntoIterator<Item = &'a Topic>) -> EaSpec {
        let allowed: BTreeSet<&Topic> = allowed.into_iter().collect();
        EaSpec {
            states: vec![StateDecl {
                name: "q0".into(),
                initial: true,
            }],
            edges: allowed
                .into_iter()
                .map(|a| Edge {
                    from: "q0".into(),
                    label: Label::Preserve(a.clone()),
                    to: "q0".into(),
                })
                .collect(),
        }
    }

    /// Single-state renamer with one `a->f(a)` edge per mapped topic.
    pub fn mapper(f: &BTreeMap<Topic, Topic>) -> EaSpec {
        EaSpec {
            states: vec![StateDecl {
                name: "q0".into(),
                initial: true,
            }],
            edges: f
                .iter()
                .map(|(a, b)| Edge {
                    from: "q0".into(),
                    label: Label::Rewrite(a.clone(), vec![b.clone()]),
                    to: "q0".into(),
                })
                .collect(),
        }
    }

    /// Every topic mentioned by any edge, on either side of a label.
    pub fn topics(&self) -> BTreeSet<Topic> {
        self.edges
            .iter()
            .flat_map(|e| e.label.topics().cloned())
            .collect()
    }

    /// Compiles over a closed alphabet. Topics named by the spec must belong
    /// to `alphabet`.
    pub fn compile(&self, alphabet: &BTreeSet<Topic>) -> Result<EditAutomaton, EaError> {
        let outside: Vec<Topic> = self
            .topics()
            .into_iter()
            .filter(|t| !alphabet.contains(t))
            .collect();
        if !outside.is_empty() {
            return Err(EaError::NotSubset(outside));
        }
        self.build(alphabet.clone())
    }

    /// Compiles with the spec's own topics as alphabet. Used by the live
    /// broker, which steps in open-world mode anyway.
    pub fn compile_open(&self) -> Result<EditAutomaton, EaError> {
        self.build(self.topics())
    }

    fn build(&self, alphabet: BTreeSet<Topic>) -> Result<EditAutomaton, EaError> {
        let mut index: BTreeMap<&str, StateId> = BTreeMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if index.insert(&s.name, StateId(i)).is_some() {
                return Err(EaError::DuplicateState(s.name.clone()));
            }
        }
        let marked: Vec<&StateDecl> = self.states.iter().filter(|s| s.initial).collect();
        let initial = match marked.as_slice() {
            [one] => index[one.name.as_str()],
            [] => *index.get("q0").ok_or(EaError::NoInitialState)?,
            [a, b, ..] => {
                return Err(EaError::MultipleInitialStates(a.name.clone(), b.name.clone()))
            }
        };

        let mut rows: Vec<Row> = (0..self.states.len())
            .map(|i| Row {
                explicit: BTreeMap::new(),
                fallback: Transition {
                    target: StateId(i),
                    output: Output::Suppress,
                },
            })
            .collect();
        let mut has_wildcard = vec![false; self.states.len()];

        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| EaError::UndeclaredState(name.to_owned()))
        };
        for edge in &self.edges {
            let from = lookup(&edge.from)?;
            let to = lookup(&edge.to)?;
            let transition = Transition {
                target: to,
                output: edge.label.output(),
            };
            match edge.label.trigger() {
                Some(topic) => {
                    if rows[from.0]
                        .explicit
                        .insert(topic.clone(), transition)
                        .is_some()
                    {
                        return Err(EaError::DuplicateEdge {
                            state: edge.from.clone(),
                            topic: topic.clone(),
                        });
                    }
                }
                None => {
                    if std::mem::replace(&mut has_wildcard[from.0], true) {
                        return Err(EaError::MultipleWildcards(edge.from.clone()));
                    }
                    rows[from.0].fallback = transition;
                }
            }
        }

        Ok(EditAutomaton {
            alphabet,
            states: self.states.iter().map(|s| s.name.clone()).collect(),
            initial,
            rows,
        })
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for EaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.states {
            if s.initial {
                writeln!(f, "state {} initial", s.name)?;
            } else {
                writeln!(f, "state {}", s.name)?;
            }
        }
        for e in &self.edges {
            writeln!(f, "edge {} {} {}", e.from, e.label, e.to)?;
        }
        Ok(())
    }
}

/// Parses `text` and compiles it over `alphabet` in one go.
pub fn parse_ea(text: &str, alphabet: &BTreeSet<Topic>) -> Result<EditAutomaton, ParseOrCompile> {
    let spec = EaSpec::parse(text)?;
    Ok(spec.compile(alphabet)?)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseOrCompile {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Compile(#[from] EaError),
}
