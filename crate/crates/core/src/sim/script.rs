//! Publication scripts: `publish <device> <broker> <topic> [@t]` per line.

use crate::names::{EntityId, Topic};
use crate::text::{lex, ParseError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publication {
    pub device: EntityId,
    pub broker: EntityId,
    pub topic: Topic,
    /// Earliest clock value at which the publication may happen while other
    /// work is still pending. `None` waits for quiescence.
    pub at: Option<u64>,
}

impl Publication {
    pub fn new(device: impl Into<EntityId>, broker: impl Into<EntityId>, topic: impl Into<Topic>) -> Self {
        Publication {
            device: device.into(),
            broker: broker.into(),
            topic: topic.into(),
            at: None,
        }
    }
}

pub fn parse_script(text: &str) -> Result<Vec<Publication>, ParseError> {
    lex(text)
        .iter()
        .map(|d| {
            if d.keyword != "publish" {
                return Err(d.error(format!("unknown script directive `{}`", d.keyword)));
            }
            let args = d.at_least(3)?;
            let at = match &args[3..] {
                [] => None,
                [t] => Some(
                    t.strip_prefix('@')
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| d.error(format!("expected `@<time>`, got `{t}`")))?,
                ),
                _ => return Err(d.error("expected `publish <device> <broker> <topic> [@t]`")),
            };
            Ok(Publication {
                device: args[0].as_str().into(),
                broker: args[1].as_str().into(),
                topic: args[2].as_str().into(),
                at,
            })
        })
        .collect()
}
