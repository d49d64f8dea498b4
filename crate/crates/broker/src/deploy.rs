//! Turns a validated schema into one broker config per broker.
//!
//! Of two bridged brokers the one whose name sorts first dials the other.
//! Devices become typed clients, automata on links into a broker become
//! `monitor-link` bindings, and notify-link subscriptions become the ACL.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::Path;

use ensemble_core::model::{Link, Schema};
use ensemble_core::{EntityId, LinkType};

use crate::config::{BridgeDecl, BrokerConfig, LinkTypes, MonitorSource};

#[derive(Debug, thiserror::Error)]
pub enum DeployError {
    #[error("schema is invalid:\n{0}")]
    Invalid(String),
    #[error("no address for broker `{0}`")]
    NoAddress(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn types(schema: &Schema, peer: &EntityId, me: &EntityId) -> LinkTypes {
    let get = |a: &EntityId, b: &EntityId| -> LinkType {
        schema
            .brokering
            .type_of(&Link::new(a.clone(), b.clone()))
            .cloned()
            .expect("validated schemas type every link")
    };
    LinkTypes {
        ingress: get(peer, me),
        egress: get(me, peer),
    }
}

pub fn deploy(
    schema: &Schema,
    addrs: &BTreeMap<EntityId, SocketAddr>,
) -> Result<BTreeMap<EntityId, BrokerConfig>, DeployError> {
    let report = schema.validate();
    if !report.is_valid() {
        return Err(DeployError::Invalid(report.to_string()));
    }
    let g = &schema.graph;
    let mut out = BTreeMap::new();
    for me in g.brokers() {
        let listen = *addrs.get(me).ok_or_else(|| DeployError::NoAddress(me.to_string()))?;
        let mut cfg = BrokerConfig::new(me.clone(), listen);
        cfg.link_types = schema.brokering.link_types.clone();
        cfg.allow = schema.brokering.allow.clone();
        for link in g.out_links(me) {
            let peer = &link.dst;
            let t = types(schema, peer, me);
            if g.is_broker(peer) {
                let addr = if me < peer {
                    let a = addrs.get(peer).ok_or_else(|| DeployError::NoAddress(peer.to_string()))?;
                    Some(a.to_string())
                } else {
                    None
                };
                cfg.bridges.insert(peer.clone(), BridgeDecl { addr, types: t });
            } else {
                cfg.clients.insert(peer.to_string(), t);
                if let Some(topics) = schema.subscriptions.topics(link) {
                    cfg.acl.insert(peer.to_string(), topics.clone());
                }
            }
        }
        for (link, name) in schema.events.assignment() {
            if &link.dst != me {
                continue;
            }
            let named = schema.events.automaton(name).expect("validated schemas resolve automata");
            cfg.link_monitors.insert(
                (link.src.to_string(), me.to_string()),
                MonitorSource::Automaton {
                    path: Some(format!("{name}.ea").into()),
                    spec: named.spec.clone(),
                },
            );
        }
        out.insert(me.clone(), cfg);
    }
    Ok(out)
}

/// Writes `<broker>.conf` for every config plus the automaton files they
/// reference. Returns the config paths.
pub fn write_deployment(
    dir: &Path,
    configs: &BTreeMap<EntityId, BrokerConfig>,
) -> Result<Vec<std::path::PathBuf>, DeployError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| DeployError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = BTreeMap::new();
    let mut written = Vec::new();
    for (name, cfg) in configs {
        let path = dir.join(format!("{name}.conf"));
        std::fs::write(&path, cfg.render(&mut files)).map_err(io(&path))?;
        written.push(path);
    }
    let mut seen = BTreeSet::new();
    for (file, spec) in files {
        if seen.insert(file.clone()) {
            let path = dir.join(&file);
            std::fs::write(&path, spec.render()).map_err(io(&path))?;
        }
    }
    Ok(written)
}
