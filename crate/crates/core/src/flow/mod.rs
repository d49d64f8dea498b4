//! Static flow analysis: which links an event entering on one link can
//! eventually leave on, under the brokering policy alone.

mod blp;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use blp::{check_blp, BlpReport, BlpViolation, LabelOrder, SecurityLabeling};

use crate::model::{Link, Schema};
use crate::names::EntityId;

/// A sequence of entities along which an event may travel. Consecutive
/// entities are linked; at every interior broker the event does not turn
/// straight back and the brokering policy permits the hop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowPath(pub Vec<EntityId>);

impl FlowPath {
    pub fn entities(&self) -> &[EntityId] {
        &self.0
    }

    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        self.0.windows(2).map(|w| Link::new(w[0].clone(), w[1].clone()))
    }

    pub fn first_link(&self) -> Option<Link> {
        self.links().next()
    }

    pub fn last_link(&self) -> Option<Link> {
        self.links().last()
    }

    /// Checks the flow-path conditions against `schema`. Interior devices
    /// impose no constraint beyond adjacency.
    pub fn is_flow_path(&self, schema: &Schema) -> bool {
        let e = &self.0;
        e.len() >= 2
            && e.windows(2).all(|w| schema.graph.has_link(&w[0], &w[1]))
            && e.windows(3).all(|w| {
                !schema.graph.is_broker(&w[1]) || (w[0] != w[2] && schema.propagate(&w[0], &w[1], &w[2]))
            })
    }

    /// A flow path whose interior entities are all brokers.
    pub fn is_flow_route(&self, schema: &Schema) -> bool {
        let e = &self.0;
        self.is_flow_path(schema)
            && e[1..e.len() - 1].iter().all(|x| schema.graph.is_broker(x))
    }
}

impl fmt::Display for FlowPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|e| e.as_str()).collect();
        f.write_str(&names.join(" "))
    }
}

/// Square boolean matrix stored as rows of 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
struct BitMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        BitMatrix {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] & (1 << (j % 64)) != 0
    }

    /// Warshall's closure: for each pivot k, every row that reaches k
    /// absorbs row k.
    fn close(&mut self) {
        let w = self.words;
        for k in 0..self.n {
            let pivot: Vec<u64> = self.bits[k * w..(k + 1) * w].to_vec();
            for i in 0..self.n {
                if self.get(i, k) {
                    for (dst, src) in self.bits[i * w..(i + 1) * w].iter_mut().zip(&pivot) {
                        *dst |= src;
                    }
                }
            }
        }
    }
}

/// Reflexive-transitive closure of the link-to-link successor relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkReachability {
    links: Vec<Link>,
    index: BTreeMap<Link, usize>,
    matrix: BitMatrix,
}

impl LinkReachability {
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// True iff some flow route starts with `from` and ends with `to`.
    pub fn reachable(&self, from: &Link, to: &Link) -> bool {
        match (self.index.get(from), self.index.get(to)) {
            (Some(&i), Some(&j)) => self.matrix.get(i, j),
            _ => false,
        }
    }

    /// All reachable `(from, to)` pairs in link order.
    pub fn pairs(&self) -> impl Iterator<Item = (&Link, &Link)> {
        let n = self.links.len();
        (0..n).flat_map(move |i| {
            (0..n)
                .filter(move |&j| self.matrix.get(i, j))
                .map(move |j| (&self.links[i], &self.links[j]))
        })
    }
}

/// Successor links of `(x, y)` in the line graph: `(y, z)` such that `y` is
/// a broker, `z != x` and the brokering policy lets `y` forward from x to z.
pub fn successors<'a>(schema: &'a Schema, link: &'a Link) -> impl Iterator<Item = &'a Link> + 'a {
    let y = &link.dst;
    let broker = schema.graph.is_broker(y);
    schema
        .graph
        .out_links(y)
        .filter(move |next| broker && next.dst != link.src && schema.propagate(&link.src, y, &next.dst))
}

/// Link-to-link reachability over every link of the schema, in O(M³/64)
/// for M links.
pub fn link_reachability(schema: &Schema) -> LinkReachability {
    let links: Vec<Link> = schema.graph.links().cloned().collect();
    let index: BTreeMap<Link, usize> = links.iter().cloned().zip(0..).collect();
    let mut matrix = BitMatrix::new(links.len());
    for (i, l) in links.iter().enumerate() {
        matrix.set(i, i);
        for next in successors(schema, l) {
            matrix.set(i, index[next]);
        }
    }
    matrix.close();
    LinkReachability {
        links,
        index,
        matrix,
    }
}

/// Every flow route of at most `max_len` entities that uses no link twice,
/// by exhaustive depth-first search over entities.
pub fn brute_force_routes(schema: &Schema, max_len: usize) -> BTreeSet<FlowPath> {
    let mut out = BTreeSet::new();
    if max_len < 2 {
        return out;
    }
    for start in schema.graph.links() {
        let mut path = vec![start.src.clone(), start.dst.clone()];
        let mut used: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
        used.insert((start.src.clone(), start.dst.clone()));
        extend(schema, max_len, &mut path, &mut used, &mut out);
    }
    out
}

fn extend(
    schema: &Schema,
    max_len: usize,
    path: &mut Vec<EntityId>,
    used: &mut BTreeSet<(EntityId, EntityId)>,
    out: &mut BTreeSet<FlowPath>,
) {
    out.insert(FlowPath(path.clone()));
    let n = path.len();
    if n >= max_len {
        return;
    }
    let (x, y) = (path[n - 2].clone(), path[n - 1].clone());
    if !schema.graph.is_broker(&y) {
        return;
    }
    let candidates: Vec<EntityId> = schema
        .graph
        .entities()
        .iter()
        .map(|e| e.name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for z in candidates {
        if z == x || !schema.graph.has_link(&y, &z) || !schema.propagate(&x, &y, &z) {
            continue;
        }
        let hop = (y.clone(), z.clone());
        if used.contains(&hop) {
            continue;
        }
        used.insert(hop.clone());
        path.push(z);
        extend(schema, max_len, path, used, out);
        path.pop();
        used.remove(&hop);
    }
}

/// Whether an event published into `publisher` can reach a device attached
/// to `subscriber`: some route runs from a publish link into the first
/// broker to a notify link out of the second.
pub fn visible(schema: &Schema, publisher: &str, subscriber: &str) -> bool {
    let reach = link_reachability(schema);
    visible_with(schema, &reach, publisher, subscriber)
}

/// [`visible`] against a precomputed reachability matrix.
pub fn visible_with(schema: &Schema, reach: &LinkReachability, publisher: &str, subscriber: &str) -> bool {
    let g = &schema.graph;
    let ins: Vec<&Link> = g.in_links(publisher).filter(|l| g.is_device(&l.src)).collect();
    let outs: Vec<&Link> = g.out_links(subscriber).filter(|l| g.is_device(&l.dst)).collect();
    ins.iter()
        .any(|i| outs.iter().any(|o| reach.reachable(i, o)))
}
