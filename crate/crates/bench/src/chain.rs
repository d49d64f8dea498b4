//! In-process broker chains for the throughput comparisons.
//!
//! Broker `B{i}` dials `B{i+1}`, so each broker is the parent of the one
//! before it. Publishers attach to `B0`, subscribers to the last broker.

use std::collections::BTreeSet;
use std::fmt;
use std::net::SocketAddr;

use ensemble_broker::config::{BridgeDecl, BrokerConfig, Direction, LinkTypes, MonitorSource, UNTYPED};
use ensemble_broker::{serve, BrokerHandle, ServeError, ServeOptions};
use ensemble_core::automata::native::{CEM_BUSYWORK, SEM_PASSTHROUGH};
use ensemble_core::LinkType;

use crate::run::Topology;

/// Broker configurations compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Configuration {
    /// Untyped brokers; monitors compiled in but every link is identity.
    Ori,
    /// Up/down link types with a brokering table, no monitors.
    New,
    /// As `New`, plus a pass-through native monitor on every ingress.
    Sem,
    /// As `New`, plus a compute-heavy native monitor on every ingress.
    Cem,
}

impl Configuration {
    pub const ALL: [Configuration; 4] = [Configuration::Ori, Configuration::New, Configuration::Sem, Configuration::Cem];

    pub fn as_str(self) -> &'static str {
        match self {
            Configuration::Ori => "ori",
            Configuration::New => "new",
            Configuration::Sem => "sem",
            Configuration::Cem => "cem",
        }
    }

    pub fn parse(s: &str) -> Option<Configuration> {
        Configuration::ALL.into_iter().find(|c| c.as_str() == s.to_ascii_lowercase())
    }

    fn monitor(self) -> Option<&'static str> {
        match self {
            Configuration::Sem => Some(SEM_PASSTHROUGH),
            Configuration::Cem => Some(CEM_BUSYWORK),
            _ => None,
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const UP: &str = "up";
pub const DOWN: &str = "down";

/// Config for chain broker `i`, dialing `parent` when present.
pub fn chain_config(cfg: Configuration, i: usize, parent: Option<SocketAddr>) -> BrokerConfig {
    let listen = "127.0.0.1:0".parse().expect("literal address");
    let mut c = BrokerConfig::new(format!("B{i}"), listen);
    let typed = cfg != Configuration::Ori;
    let types = |ingress: &str, egress: &str| LinkTypes {
        ingress: LinkType::new(ingress),
        egress: LinkType::new(egress),
    };
    if typed {
        c.link_types = [UP, DOWN].into_iter().map(LinkType::new).collect::<BTreeSet<_>>();
        c.allow = [(UP, UP), (UP, DOWN), (DOWN, DOWN)]
            .into_iter()
            .map(|(a, b)| (LinkType::new(a), LinkType::new(b)))
            .collect();
        c.client_default = Some(types(UP, DOWN));
    }
    if let Some(addr) = parent {
        c.bridges.insert(
            format!("B{}", i + 1).into(),
            BridgeDecl {
                addr: Some(addr.to_string()),
                types: if typed { types(DOWN, UP) } else { types(UNTYPED, UNTYPED) },
            },
        );
    }
    if i > 0 {
        c.bridges.insert(
            format!("B{}", i - 1).into(),
            BridgeDecl {
                addr: None,
                types: if typed { types(UP, DOWN) } else { types(UNTYPED, UNTYPED) },
            },
        );
    }
    if let Some(m) = cfg.monitor() {
        for d in [Direction::ImPub, Direction::ExPub] {
            c.direction_monitors.insert(d, MonitorSource::Native(m.to_owned()));
        }
    }
    c
}

pub struct Chain {
    pub brokers: Vec<BrokerHandle>,
    pub topology: Topology,
}

impl Chain {
    pub async fn shutdown(self) {
        for b in self.brokers {
            b.shutdown().await;
        }
    }
}

/// Starts `len` brokers from the last to the first so each knows its
/// parent's address, then waits for every bridge to come up.
pub async fn launch_chain(cfg: Configuration, len: usize, seed: u64) -> Result<Chain, ServeError> {
    let mut brokers: Vec<BrokerHandle> = Vec::new();
    let (up_tx, mut up_rx) = tokio::sync::mpsc::unbounded_channel();
    for i in (0..len).rev() {
        let parent = brokers.last().map(|b| b.local_addr);
        let up_tx = up_tx.clone();
        let opts = ServeOptions {
            seed,
            log: std::sync::Arc::new(move |line| {
                if let ensemble_broker::LogLine::Bridge { up: true, .. } = line {
                    let _ = up_tx.send(());
                }
            }),
            ..ServeOptions::default()
        };
        brokers.push(serve(chain_config(cfg, i, parent), opts).await?);
    }
    brokers.reverse();
    // Each bridge reports up at both ends.
    for _ in 0..2 * len.saturating_sub(1) {
        if tokio::time::timeout(std::time::Duration::from_secs(10), up_rx.recv()).await.is_err() {
            break;
        }
    }
    let topology = Topology {
        publish_to: brokers[0].local_addr,
        subscribe_at: brokers[len - 1].local_addr,
    };
    Ok(Chain { brokers, topology })
}
