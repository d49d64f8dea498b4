//! Commands that only read and write files.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;

use ensemble_core::compile::{compile_hierarchy, compile_rbac, HierarchyPolicy, RbacPolicy};
use ensemble_core::flow::{check_blp, link_reachability, visible_with, SecurityLabeling};
use ensemble_core::model::Schema;
use ensemble_core::sim::{parse_script, run_to_quiescence, RunOptions, Scheduler, SimError};
use ensemble_core::EntityId;

use crate::error::{read, CliError};
use crate::{Outcome, PolicyStyle, SchedulerKind};

/// Loads a schema and refuses to go on if it has structural violations.
pub(crate) fn load_valid(path: &Path) -> Result<Schema, CliError> {
    let schema = Schema::load(path)?;
    let report = schema.validate();
    if !report.is_valid() {
        return Err(CliError::Usage(format!("{}: invalid schema\n{report}", path.display())));
    }
    Ok(schema)
}

pub(crate) fn simulate(
    schema: &Path,
    script: &Path,
    scheduler: SchedulerKind,
    seed: u64,
    step_bound: Option<u64>,
    trace: bool,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let s = load_valid(schema)?;
    let pubs = parse_script(&read(script)?).map_err(|source| CliError::Parse {
        path: script.to_owned(),
        source,
    })?;
    let scheduler = match scheduler {
        SchedulerKind::Fifo => Scheduler::Fifo,
        SchedulerKind::Lex => Scheduler::Lexicographic,
        SchedulerKind::Random => Scheduler::seeded(seed),
    };
    match run_to_quiescence(&s, &pubs, RunOptions { scheduler, step_bound }) {
        Ok(t) => {
            if trace {
                write!(out, "{t}")?;
            }
            write!(out, "{}", t.render_summary(&s))?;
            Ok(Outcome::Clean)
        }
        // A run that does not settle is a finding about the schema.
        Err(e @ SimError::StepBound { .. }) => {
            writeln!(out, "{e}")?;
            Ok(Outcome::Violations)
        }
        Err(e) => Err(CliError::Sim(e)),
    }
}

pub(crate) fn routes(schema: &Path, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let s = load_valid(schema)?;
    let reach = link_reachability(&s);
    for (from, to) in reach.pairs() {
        if from != to {
            writeln!(out, "route {from} {to}")?;
        }
    }
    Ok(Outcome::Clean)
}

pub(crate) fn blp(schema: &Path, labeling: &Path, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let s = load_valid(schema)?;
    let labels = SecurityLabeling::parse(&read(labeling)?, &s).map_err(|source| CliError::Parse {
        path: labeling.to_owned(),
        source,
    })?;
    let report = check_blp(&s, &labels);
    write!(out, "{report}")?;
    Ok(Outcome::from_clean(report.is_valid()))
}

pub(crate) fn visible(schema: &Path, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let s = load_valid(schema)?;
    let reach = link_reachability(&s);
    for a in s.graph.brokers() {
        for b in s.graph.brokers() {
            let v = if visible_with(&s, &reach, a, b) { "yes" } else { "no" };
            writeln!(out, "visible {a} {b} {v}")?;
        }
    }
    Ok(Outcome::Clean)
}

pub(crate) fn compile_policy(style: PolicyStyle, path: &Path) -> Result<Schema, CliError> {
    let text = read(path)?;
    let parse = |source| CliError::Parse {
        path: path.to_owned(),
        source,
    };
    let compiled = match style {
        PolicyStyle::Hierarchy => compile_hierarchy(&HierarchyPolicy::parse(&text).map_err(parse)?),
        PolicyStyle::Rbac => compile_rbac(&RbacPolicy::parse(&text).map_err(parse)?),
    };
    compiled.map_err(|source| CliError::Compile {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn compile(
    style: PolicyStyle,
    policy: &Path,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let rendered = compile_policy(style, policy)?.render();
    match output {
        Some(path) => std::fs::write(path, rendered).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?,
        None => out.write_all(rendered.as_bytes())?,
    }
    Ok(Outcome::Clean)
}

/// Explicit `NAME=ADDR` entries, then consecutive loopback ports in broker
/// name order for the rest.
pub(crate) fn addresses(
    schema: &Schema,
    explicit: &[String],
    port_base: u16,
) -> Result<BTreeMap<EntityId, SocketAddr>, CliError> {
    let mut addrs = BTreeMap::new();
    for entry in explicit {
        let (name, addr) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--addr `{entry}` is not NAME=ADDR")))?;
        if !schema.graph.is_broker(name) {
            return Err(CliError::Usage(format!("--addr names unknown broker `{name}`")));
        }
        let addr: SocketAddr = addr
            .parse()
            .map_err(|_| CliError::Usage(format!("--addr `{entry}` has a bad address")))?;
        addrs.insert(EntityId::new(name), addr);
    }
    let mut port = port_base;
    for b in schema.graph.brokers() {
        if !addrs.contains_key(b) {
            addrs.insert(b.clone(), SocketAddr::from(([127, 0, 0, 1], port)));
            port = port
                .checked_add(1)
                .ok_or_else(|| CliError::Usage("ran out of ports above --port-base".into()))?;
        }
    }
    Ok(addrs)
}

pub(crate) fn deploy(
    schema: &Path,
    outdir: &Path,
    explicit: &[String],
    port_base: u16,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let s = load_valid(schema)?;
    let addrs = addresses(&s, explicit, port_base)?;
    let configs = ensemble_broker::deploy(&s, &addrs)?;
    for path in ensemble_broker::write_deployment(outdir, &configs)? {
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(Outcome::Clean)
}
