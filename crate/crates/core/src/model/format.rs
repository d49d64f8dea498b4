//! Line-oriented schema text format.
//!
//! ```text
//! broker H                     # entity declarations, one or more names
//! device DB SC
//! linktype door internet
//! link H DB door               # both directions, same type
//! link H I internet internet   # both directions, explicit reverse type
//! arc A B t                    # a single direction
//! deny sensitive internet      # or `allow t1 t2`; the two forms do not mix
//! alphabet AC_grant DL_unlock  # optional; inferred when absent
//! subscribe H DB AC_grant      # broker, device, topics
//! automaton M1 m1.ea           # from a file next to the schema ...
//! automaton M2                 # ... or inline up to `end`
//!   state q0
//! end
//! monitor-link I H M1
//! ordering broker-fifo         # or `trivial`
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{BrokeringPolicy, EventPolicy, Link, Schema, TaskOrder};
use crate::automata::EaSpec;
use crate::names::{LinkType, Topic};
use crate::text::{lex, take_block, Directive, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
}

impl LoadError {
    pub fn path(&self) -> &Path {
        match self {
            LoadError::Io { path, .. } | LoadError::Parse { path, .. } => path,
        }
    }
}

enum AllowForm {
    Unset,
    Allow,
    Deny(Vec<(LinkType, LinkType)>, usize),
}

impl Schema {
    /// Parses a self-contained schema. `automaton NAME PATH` is rejected.
    pub fn parse(text: &str) -> Result<Schema, ParseError> {
        parse_schema(text, None)
    }

    /// Parses a schema whose automaton paths are relative to `base`.
    pub fn parse_with_base(text: &str, base: &Path) -> Result<Schema, ParseError> {
        parse_schema(text, Some(base))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Schema, LoadError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        parse_schema(&text, Some(base)).map_err(|source| LoadError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    /// Renders the schema in the text format, automata inline.
    pub fn render(&self) -> String {
        render_schema(self)
    }
}

fn parse_schema(text: &str, base: Option<&Path>) -> Result<Schema, ParseError> {
    let directives = lex(text);
    let mut schema = Schema::default();
    let mut form = AllowForm::Unset;
    let mut alphabet: Option<BTreeSet<Topic>> = None;
    let mut automata: Vec<(&Directive, EaSpec)> = Vec::new();
    let mut bindings: Vec<(&Directive, Link, String)> = Vec::new();
    let mut order_seen = false;

    let mut rest: &[Directive] = &directives;
    while let Some((d, tail)) = rest.split_first() {
        rest = tail;
        match d.keyword.as_str() {
            "device" | "broker" => {
                for name in d.at_least(1)? {
                    if d.keyword == "device" {
                        schema.graph.add_device(name);
                    } else {
                        schema.graph.add_broker(name);
                    }
                }
            }
            "linktype" => {
                for name in d.at_least(1)? {
                    schema.brokering.link_types.insert(name.into());
                }
            }
            "link" => {
                let args = d.at_least(3)?;
                if args.len() > 4 {
                    return Err(d.error("expected `link <a> <b> <type> [<reverse type>]`"));
                }
                let reverse = args.get(3).unwrap_or(&args[2]);
                add_typed_link(&mut schema, d, Link::new(&args[0], &args[1]), &args[2])?;
                add_typed_link(&mut schema, d, Link::new(&args[1], &args[0]), reverse)?;
            }
            "arc" => {
                let args = d.exact(3)?;
                add_typed_link(&mut schema, d, Link::new(&args[0], &args[1]), &args[2])?;
            }
            "allow" | "deny" => {
                let args = d.exact(2)?;
                let pair = (LinkType::new(&args[0]), LinkType::new(&args[1]));
                form = match (form, d.keyword.as_str()) {
                    (AllowForm::Unset | AllowForm::Allow, "allow") => {
                        schema.brokering.allow.insert(pair);
                        AllowForm::Allow
                    }
                    (AllowForm::Unset, "deny") => AllowForm::Deny(vec![pair], d.line),
                    (AllowForm::Deny(mut v, line), "deny") => {
                        v.push(pair);
                        AllowForm::Deny(v, line)
                    }
                    _ => return Err(d.error("`allow` and `deny` cannot be mixed")),
                };
            }
            "alphabet" => {
                alphabet
                    .get_or_insert_with(BTreeSet::new)
                    .extend(d.args.iter().map(Topic::new));
            }
            "subscribe" => {
                let args = d.at_least(3)?;
                let link = Link::new(&args[0], &args[1]);
                for t in &args[2..] {
                    schema.subscriptions.add(link.clone(), t.into());
                }
            }
            "automaton" => {
                let args = d.at_least(1)?;
                let spec = match args {
                    [_] => {
                        let (body, tail) = take_block(d, rest)?;
                        rest = tail;
                        EaSpec::from_directives(body)?
                    }
                    [_, path] => {
                        let Some(base) = base else {
                            return Err(d.error("automaton files need a schema loaded from disk"));
                        };
                        let full = base.join(path);
                        let text = std::fs::read_to_string(&full).map_err(|e| {
                            d.error(format!("cannot read `{}`: {e}", full.display()))
                        })?;
                        EaSpec::parse(&text)
                            .map_err(|e| d.error(format!("in `{}`: {e}", full.display())))?
                    }
                    _ => return Err(d.error("expected `automaton <name> [<path>]`")),
                };
                automata.push((d, spec));
            }
            "monitor-link" => {
                let args = d.exact(3)?;
                bindings.push((d, Link::new(&args[0], &args[1]), args[2].clone()));
            }
            "ordering" => {
                let args = d.exact(1)?;
                if std::mem::replace(&mut order_seen, true) {
                    return Err(d.error("`ordering` given twice"));
                }
                schema.order = TaskOrder::parse(&args[0])
                    .ok_or_else(|| d.error(format!("unknown ordering `{}`", args[0])))?;
            }
            "end" => return Err(d.error("`end` outside an automaton block")),
            other => return Err(d.error(format!("unknown directive `{other}`"))),
        }
    }

    if let AllowForm::Deny(denied, line) = form {
        for (a, b) in &denied {
            for t in [a, b] {
                if !schema.brokering.link_types.contains(t) {
                    return Err(ParseError::new(
                        line,
                        format!("`deny` names undeclared link type `{t}`"),
                    ));
                }
            }
        }
        schema.brokering.allow = BrokeringPolicy::complement(&schema.brokering.link_types, &denied);
    }

    let alphabet = alphabet.unwrap_or_else(|| {
        let mut inferred: BTreeSet<Topic> =
            schema.subscriptions.sub.values().flatten().cloned().collect();
        for (_, spec) in &automata {
            inferred.extend(spec.topics());
        }
        inferred
    });
    schema.events = EventPolicy::new(alphabet);
    for (d, spec) in automata {
        schema
            .events
            .define(&d.args[0], spec)
            .map_err(|e| d.error(e.to_string()))?;
    }
    for (d, link, name) in bindings {
        if schema.events.assign(link.clone(), &name).is_some() {
            return Err(d.error(format!("link {link} already has an automaton")));
        }
    }
    Ok(schema)
}

fn add_typed_link(schema: &mut Schema, d: &Directive, link: Link, ty: &str) -> Result<(), ParseError> {
    if !schema.graph.add_link(link.clone()) {
        return Err(d.error(format!("link {link} declared twice")));
    }
    schema.brokering.type_of.insert(link, ty.into());
    Ok(())
}

fn join<I: IntoIterator<Item = S>, S: AsRef<str>>(items: I) -> String {
    items
        .into_iter()
        .map(|s| s.as_ref().to_owned())
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_schema(schema: &Schema) -> String {
    let mut out = String::new();
    let graph = &schema.graph;
    let types = &schema.brokering;

    for e in graph.entities() {
        let _ = writeln!(out, "{} {}", e.kind, e.name);
    }
    if !types.link_types.is_empty() {
        let _ = writeln!(out, "linktype {}", join(&types.link_types));
    }
    for link in graph.links() {
        let Some(ty) = types.type_of(link) else {
            continue;
        };
        let rev = link.reversed();
        match types.type_of(&rev).filter(|_| graph.has_link(&rev.src, &rev.dst)) {
            Some(_) if rev < *link => {}
            Some(rty) if rty == ty => {
                let _ = writeln!(out, "link {} {} {ty}", link.src, link.dst);
            }
            Some(rty) => {
                let _ = writeln!(out, "link {} {} {ty} {rty}", link.src, link.dst);
            }
            None => {
                let _ = writeln!(out, "arc {} {} {ty}", link.src, link.dst);
            }
        }
    }
    for (a, b) in &types.allow {
        let _ = writeln!(out, "allow {a} {b}");
    }
    let sigma = join(schema.events.alphabet());
    let _ = writeln!(out, "{}", format!("alphabet {sigma}").trim_end());
    for (link, topics) in &schema.subscriptions.sub {
        let _ = writeln!(out, "subscribe {} {} {}", link.src, link.dst, join(topics));
    }
    for named in schema.events.automata() {
        let _ = writeln!(out, "automaton {}", named.name);
        for line in named.spec.render().lines() {
            let _ = writeln!(out, "  {line}");
        }
        let _ = writeln!(out, "end");
    }
    for (link, name) in schema.events.assignment() {
        let _ = writeln!(out, "monitor-link {} {} {name}", link.src, link.dst);
    }
    let _ = writeln!(out, "ordering {}", schema.order.as_str());
    out
}
