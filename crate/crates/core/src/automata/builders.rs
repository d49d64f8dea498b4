//! The filter and mapper constructions.

use std::collections::{BTreeMap, BTreeSet};

use super::{EaError, EaSpec, EditAutomaton};
use crate::names::Topic;

/// Single-state automaton preserving the topics in `allowed` and suppressing
/// every other topic of `alphabet`.
pub fn filter(
    allowed: &BTreeSet<Topic>,
    alphabet: &BTreeSet<Topic>,
) -> Result<EditAutomaton, EaError> {
    let outside: Vec<Topic> = allowed.difference(alphabet).cloned().collect();
    if !outside.is_empty() {
        return Err(EaError::NotSubset(outside));
    }
    EaSpec::filter(allowed).compile(alphabet)
}

/// Single-state automaton renaming each event `a` to `f(a)`.
pub fn mapper(
    f: &BTreeMap<Topic, Topic>,
    alphabet: &BTreeSet<Topic>,
) -> Result<EditAutomaton, EaError> {
    let undefined: Vec<Topic> = alphabet
        .iter()
        .filter(|a| !f.contains_key(*a))
        .cloned()
        .collect();
    if !undefined.is_empty() {
        return Err(EaError::PartialMapping(undefined));
    }
    let stray: Vec<Topic> = f
        .iter()
        .flat_map(|(a, b)| [a, b])
        .filter(|t| !alphabet.contains(*t))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !stray.is_empty() {
        return Err(EaError::RangeOutsideAlphabet(stray));
    }
    EaSpec::mapper(f).compile(alphabet)
}
