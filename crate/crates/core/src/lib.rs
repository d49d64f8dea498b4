//! Core model of a brokered publish/subscribe system with per-link edit
//! automata: schemas, the automata themselves, an executable operational
//! semantics, flow analyses and policy compilers.

pub mod automata;
pub mod compile;
pub mod flow;
pub mod model;
pub mod names;
pub mod sim;
pub mod text;

pub use names::{EntityId, LinkType, Topic};
