//! Read-down/write-up labeling checks: events may only flow towards links
//! with equal or higher security labels.
//!
//! Label files:
//!
//! ```text
//! label low high          # declare labels
//! order low high          # Hasse edge: low <= high
//! assign S H high         # optional; defaults to the link's type
//! ```

use std::collections::BTreeSet;
use std::fmt;

use super::successors;
use crate::model::{Link, LinkClass, Schema};
use crate::names::LinkType;
use crate::text::{lex, ParseError};

/// A finite partial order given by its Hasse edges. `<=` is their
/// reflexive-transitive closure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelOrder {
    labels: BTreeSet<LinkType>,
    leq: BTreeSet<(LinkType, LinkType)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrderError {
    #[error("order edge uses undeclared label `{0}`")]
    UnknownLabel(LinkType),
    #[error("labels `{0}` and `{1}` are ordered both ways")]
    Cycle(LinkType, LinkType),
}

impl LabelOrder {
    pub fn new(
        labels: BTreeSet<LinkType>,
        hasse: impl IntoIterator<Item = (LinkType, LinkType)>,
    ) -> Result<Self, OrderError> {
        let mut leq: BTreeSet<(LinkType, LinkType)> =
            labels.iter().map(|l| (l.clone(), l.clone())).collect();
        for (lo, hi) in hasse {
            for l in [&lo, &hi] {
                if !labels.contains(l) {
                    return Err(OrderError::UnknownLabel(l.clone()));
                }
            }
            leq.insert((lo, hi));
        }
        loop {
            let extra: Vec<(LinkType, LinkType)> = leq
                .iter()
                .flat_map(|(a, b)| {
                    leq.range((b.clone(), LinkType::new(""))..)
                        .take_while(move |(b2, _)| b2 == b)
                        .map(move |(_, c)| (a.clone(), c.clone()))
                })
                .filter(|p| !leq.contains(p))
                .collect();
            if extra.is_empty() {
                break;
            }
            leq.extend(extra);
        }
        for (a, b) in &leq {
            if a != b && leq.contains(&(b.clone(), a.clone())) {
                return Err(OrderError::Cycle(a.clone(), b.clone()));
            }
        }
        Ok(LabelOrder { labels, leq })
    }

    pub fn labels(&self) -> &BTreeSet<LinkType> {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn leq(&self, a: &LinkType, b: &LinkType) -> bool {
        self.leq.contains(&(a.clone(), b.clone()))
    }
}

/// A label order plus a label for every link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityLabeling {
    pub order: LabelOrder,
    pub assignment: std::collections::BTreeMap<Link, LinkType>,
}

impl SecurityLabeling {
    /// Labels every link with its type.
    pub fn from_types(schema: &Schema, order: LabelOrder) -> Self {
        SecurityLabeling {
            order,
            assignment: schema.brokering.type_of.clone(),
        }
    }

    pub fn parse(text: &str, schema: &Schema) -> Result<Self, ParseError> {
        let mut labels = BTreeSet::new();
        let mut hasse = Vec::new();
        let mut overrides = Vec::new();
        let mut order_line = 0;
        for d in lex(text) {
            match d.keyword.as_str() {
                "label" => labels.extend(d.at_least(1)?.iter().map(LinkType::new)),
                "order" => {
                    let a = d.exact(2)?;
                    order_line = order_line.max(d.line);
                    hasse.push((LinkType::new(&a[0]), LinkType::new(&a[1])));
                }
                "assign" => {
                    let a = d.exact(3)?;
                    let link = Link::new(&a[0], &a[1]);
                    if !schema.graph.has_link(&a[0], &a[1]) {
                        return Err(d.error(format!("no link {link} in the schema")));
                    }
                    overrides.push((link, LinkType::new(&a[2])));
                }
                other => return Err(d.error(format!("unknown labeling directive `{other}`"))),
            }
        }
        let order =
            LabelOrder::new(labels, hasse).map_err(|e| ParseError::new(order_line, e.to_string()))?;
        let mut labeling = SecurityLabeling::from_types(schema, order);
        labeling.assignment.extend(overrides);
        Ok(labeling)
    }

    pub fn label(&self, link: &Link) -> Option<&LinkType> {
        self.assignment.get(link)
    }

    /// `label(a) <= label(b)`, false when either is missing or unknown.
    pub fn flows(&self, a: &Link, b: &Link) -> bool {
        match (self.label(a), self.label(b)) {
            (Some(x), Some(y)) => self.order.leq(x, y),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlpViolation {
    /// A link has no label, or its label is not in the order.
    Unlabeled { link: Link, label: Option<LinkType> },
    /// The allow table names a type that is not a label.
    UnknownAllowLabel(LinkType),
    /// The allow table lets events move down the order.
    AllowPair { from: LinkType, to: LinkType },
    /// A device reads above what it may write.
    ReadDownWriteUp {
        inbound: Link,
        in_label: LinkType,
        outbound: Link,
        out_label: LinkType,
    },
    /// A broker may forward from a higher to a lower link.
    Hop {
        inbound: Link,
        in_label: LinkType,
        outbound: Link,
        out_label: LinkType,
    },
}

impl fmt::Display for BlpViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlpViolation::Unlabeled { link, label: None } => write!(f, "unlabeled link {link}"),
            BlpViolation::Unlabeled {
                link,
                label: Some(l),
            } => write!(f, "unknown label {l} on link {link}"),
            BlpViolation::UnknownAllowLabel(l) => write!(f, "unknown label {l} in allow table"),
            BlpViolation::AllowPair { from, to } => write!(f, "allow pair ({from} ≰ {to})"),
            BlpViolation::ReadDownWriteUp {
                inbound,
                in_label,
                outbound,
                out_label,
            } => write!(
                f,
                "read-down/write-up at {}: {inbound} ({in_label} ≰ {out_label}) {outbound}",
                inbound.dst
            ),
            BlpViolation::Hop {
                inbound,
                in_label,
                outbound,
                out_label,
            } => write!(
                f,
                "flow at {}: {inbound} ({in_label} ≰ {out_label}) {outbound}",
                inbound.dst
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlpReport {
    pub violations: Vec<BlpViolation>,
}

impl BlpReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for BlpReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks that the allow table is monotone, that every device reads down
/// and writes up, and that every single forwarding step a broker may take
/// is monotone (which makes every flow route monotone).
pub fn check_blp(schema: &Schema, labeling: &SecurityLabeling) -> BlpReport {
    let mut v = Vec::new();
    let order = &labeling.order;

    for link in schema.graph.links() {
        match labeling.label(link) {
            Some(l) if order.contains(l) => {}
            label => v.push(BlpViolation::Unlabeled {
                link: link.clone(),
                label: label.cloned(),
            }),
        }
    }

    let mut reported: BTreeSet<(LinkType, LinkType)> = BTreeSet::new();
    let mut unknown: BTreeSet<LinkType> = BTreeSet::new();
    for (a, b) in &schema.brokering.allow {
        for t in [a, b] {
            if !order.contains(t) && unknown.insert(t.clone()) {
                v.push(BlpViolation::UnknownAllowLabel(t.clone()));
            }
        }
        if order.contains(a) && order.contains(b) && !order.leq(a, b) {
            reported.insert((a.clone(), b.clone()));
            v.push(BlpViolation::AllowPair {
                from: a.clone(),
                to: b.clone(),
            });
        }
    }

    let labelled = |l: &Link| labeling.label(l).filter(|t| order.contains(t)).cloned();

    for device in schema.graph.devices() {
        let ins: Vec<&Link> = schema
            .graph
            .in_links(device)
            .filter(|l| schema.classify(l).ok() == Some(LinkClass::Notify))
            .collect();
        let outs: Vec<&Link> = schema
            .graph
            .out_links(device)
            .filter(|l| schema.classify(l).ok() == Some(LinkClass::Publish))
            .collect();
        for i in &ins {
            for o in &outs {
                if let (Some(li), Some(lo)) = (labelled(i), labelled(o)) {
                    if !order.leq(&li, &lo) {
                        v.push(BlpViolation::ReadDownWriteUp {
                            inbound: (*i).clone(),
                            in_label: li,
                            outbound: (*o).clone(),
                            out_label: lo,
                        });
                    }
                }
            }
        }
    }

    for link in schema.graph.links() {
        let Some(li) = labelled(link) else { continue };
        for next in successors(schema, link) {
            let Some(lo) = labelled(next) else { continue };
            if order.leq(&li, &lo) {
                continue;
            }
            let pair_reported = schema
                .type_of(&link.src, &link.dst)
                .zip(schema.type_of(&next.src, &next.dst))
                .is_some_and(|(a, b)| reported.contains(&(a.clone(), b.clone())))
                && labeling.label(link) == schema.type_of(&link.src, &link.dst)
                && labeling.label(next) == schema.type_of(&next.src, &next.dst);
            if !pair_reported {
                v.push(BlpViolation::Hop {
                    inbound: link.clone(),
                    in_label: li.clone(),
                    outbound: next.clone(),
                    out_label: lo,
                });
            }
        }
    }

    BlpReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::brute_force_routes;

    fn chain(allow: &str) -> Schema {
        Schema::parse(&format!(
            "broker A B\ndevice d e\nlinktype low high\n{allow}\n\
             link d A low low\nlink A B high high\nlink B e high high\n"
        ))
        .unwrap()
    }

    fn two_level(schema: &Schema) -> SecurityLabeling {
        SecurityLabeling::parse("label low high\norder low high\n", schema).unwrap()
    }

    #[test]
    fn order_closure_and_cycles() {
        let labels: BTreeSet<LinkType> = ["a", "b", "c"].into_iter().map(LinkType::from).collect();
        let o = LabelOrder::new(
            labels.clone(),
            [("a".into(), "b".into()), ("b".into(), "c".into())],
        )
        .unwrap();
        assert!(o.leq(&"a".into(), &"c".into()));
        assert!(!o.leq(&"c".into(), &"a".into()));
        assert!(o.leq(&"b".into(), &"b".into()));
        let err = LabelOrder::new(labels, [("a".into(), "b".into()), ("b".into(), "a".into())]);
        assert!(matches!(err, Err(OrderError::Cycle(..))));
    }

    #[test]
    fn monotone_allow_table_is_valid() {
        let s = chain("allow low low\nallow low high\nallow high high");
        let report = check_blp(&s, &two_level(&s));
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn downward_allow_pair_is_reported_once() {
        let s = chain("allow low low\nallow low high\nallow high high\nallow high low");
        let report = check_blp(&s, &two_level(&s));
        let lines: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        assert_eq!(lines, vec!["allow pair (high ≰ low)"]);
    }

    #[test]
    fn device_reading_high_and_writing_low_is_reported() {
        let s = Schema::parse(
            "broker A\ndevice d\nlinktype low high\nallow low low\nallow low high\nallow high high\n\
             link d A low high\n",
        )
        .unwrap();
        let report = check_blp(&s, &two_level(&s));
        assert!(matches!(
            report.violations.as_slice(),
            [BlpViolation::ReadDownWriteUp { .. }]
        ));
    }

    #[test]
    fn overridden_label_can_break_a_hop() {
        let s = chain("allow low low\nallow low high\nallow high high");
        let labeling =
            SecurityLabeling::parse("label low high\norder low high\nassign B e low\n", &s).unwrap();
        let report = check_blp(&s, &labeling);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, BlpViolation::Hop { .. })));
    }

    #[test]
    fn passing_check_means_monotone_routes() {
        let s = chain("allow low low\nallow low high\nallow high high");
        let labeling = two_level(&s);
        assert!(check_blp(&s, &labeling).is_valid());
        for route in brute_force_routes(&s, 6) {
            let links: Vec<Link> = route.links().collect();
            for w in links.windows(2) {
                assert!(labeling.flows(&w[0], &w[1]));
            }
        }
    }

    #[test]
    fn assign_on_missing_link_fails() {
        let s = chain("allow low low");
        assert!(SecurityLabeling::parse("label low\nassign A e low\n", &s).is_err());
    }
}
