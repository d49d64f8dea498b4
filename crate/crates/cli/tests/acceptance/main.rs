//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ensemble_core::automata::EaSpec;
use ensemble_core::compile::{compile_hierarchy, compile_rbac, rbac_oracle, HierarchyPolicy, RbacPolicy};
use ensemble_core::flow::{
    brute_force_routes, check_blp, link_reachability, visible_with, LabelOrder, SecurityLabeling,
};
use ensemble_core::model::{Link, Schema};
use ensemble_core::sim::{run_to_quiescence, Publication, RunOptions, Trace};
use ensemble_core::{EntityId, LinkType, Topic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod live;

type Outcome = Result<String, String>;

pub(crate) fn config_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(rel)
}

pub(crate) fn smart_home() -> Schema {
    Schema::load(config_path("smart-home/schema.conf")).expect("shipped schema loads")
}

fn simulate(schema: &Schema, pubs: &[Publication]) -> Result<Trace, String> {
    run_to_quiescence(schema, pubs, RunOptions::default()).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// The access protocol, with each step's publisher: the request and the
/// unlock come from the doorbell at home, the grant from the phone over
/// the internet.
pub(crate) const PROTOCOL: [(&str, &str, &str); 3] = [
    ("DB", "H", "AC_request"),
    ("SP", "I", "AC_grant"),
    ("DB", "H", "DL_unlock"),
];

/// Orderings of the protocol steps that put the unlock first or second.
pub(crate) fn early_unlocks() -> Vec<[usize; 3]> {
    let all = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    all.into_iter().filter(|p| p[2] != 2).collect()
}

fn criterion_1() -> Outcome {
    let s = smart_home();
    let t = simulate(&s, &[Publication::new("MD", "S", "MD_motion")])?;
    ensure(t.delivered_to("DB") == ["MD_motion"], || format!("(a) DB got {:?}", t.delivered_to("DB")))?;
    ensure(t.transmitted_into("I").is_empty(), || {
        format!("(a) I saw {:?}", t.transmitted_into("I"))
    })?;

    let t = simulate(&s, &[Publication::new("SP", "I", "DL_unlock")])?;
    ensure(t.delivered_to("DL").is_empty(), || "(b) DL received the unlock".into())?;

    let in_order: Vec<Publication> = PROTOCOL.iter().map(|(d, b, e)| Publication::new(*d, *b, *e)).collect();
    let t = simulate(&s, &in_order)?;
    ensure(t.delivered_to("DL") == ["DL_unlock"], || {
        format!("(c) in order DL got {:?}", t.delivered_to("DL"))
    })?;
    let perms = early_unlocks();
    for p in &perms {
        let pubs: Vec<Publication> = p.iter().map(|&i| in_order[i].clone()).collect();
        let t = simulate(&s, &pubs)?;
        ensure(t.delivered_to("DL").is_empty(), || {
            format!("(c) order {p:?} delivered {:?} to DL", t.delivered_to("DL"))
        })?;
    }
    Ok(format!("3 scenarios, {} early-unlock orderings", perms.len()))
}

/// Random DAG of brokers, each device under exactly one broker.
fn random_hierarchy(rng: &mut ChaCha8Rng) -> HierarchyPolicy {
    let nb = rng.random_range(1..=6);
    let nd = rng.random_range(1..=6);
    let mut p = HierarchyPolicy {
        brokers: (0..nb).map(|i| EntityId::new(format!("b{i}"))).collect(),
        devices: (0..nd).map(|i| EntityId::new(format!("d{i}"))).collect(),
        ..HierarchyPolicy::default()
    };
    for child in 1..nb {
        for parent in 0..child {
            if rng.random_bool(0.35) {
                p.parents.insert((p.brokers[child].clone(), p.brokers[parent].clone()));
            }
        }
    }
    for d in &p.devices {
        let parent = p.brokers[rng.random_range(0..nb)].clone();
        p.parents.insert((d.clone(), parent));
    }
    p.alphabet.insert(Topic::new("e"));
    p
}

/// Reflexive ancestors of `node` under the parent relation.
fn ancestors(p: &HierarchyPolicy, node: &EntityId) -> BTreeSet<EntityId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![node.clone()];
    while let Some(n) = stack.pop() {
        if seen.insert(n.clone()) {
            stack.extend(p.parents.iter().filter(|(c, _)| *c == n).map(|(_, parent)| parent.clone()));
        }
    }
    seen
}

/// A publisher under `a` reaches a subscriber under `b` iff the brokers
/// share an ancestor. An event never goes back the way it came, so when
/// `a == b` a lone device only hears itself if two distinct branches above
/// `a` meet again at some broker.
fn scoping_oracle(p: &HierarchyPolicy, a: &EntityId, b: &EntityId) -> bool {
    let under = |broker: &EntityId| p.parents.iter().filter(|(c, par)| par == broker && p.devices.contains(c)).count();
    let (up_a, up_b) = (ancestors(p, a), ancestors(p, b));
    if up_a.is_disjoint(&up_b) || under(a) == 0 || under(b) == 0 {
        return false;
    }
    if a != b || under(a) >= 2 {
        return true;
    }
    p.brokers.iter().any(|c| p.parents.iter().filter(|(x, par)| par == c && up_a.contains(x)).count() >= 2)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = 0;
    for case in 0..500 {
        let p = random_hierarchy(&mut rng);
        let s = compile_hierarchy(&p).map_err(|e| format!("case {case}: {e}"))?;
        let reach = link_reachability(&s);
        for a in &p.brokers {
            for b in &p.brokers {
                pairs += 1;
                let got = visible_with(&s, &reach, a, b);
                ensure(got == scoping_oracle(&p, a, b), || {
                    format!("case {case}: visible({a},{b}) = {got}\n{}", s.render())
                })?;
            }
        }
    }
    Ok(format!("500 hierarchies, {pairs} broker pairs"))
}

/// Up to six entities, at most seven symmetric pairs, 2-3 link types and a
/// random allow table.
fn random_schema(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=6);
    let brokers: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.6)).collect();
    let k = rng.random_range(2..=3);
    let mut text = String::new();
    for (i, b) in brokers.iter().enumerate() {
        let _ = writeln!(text, "{} e{i}", if *b { "broker" } else { "device" });
    }
    let _ = writeln!(text, "linktype {}", (0..k).map(|t| format!("t{t}")).collect::<Vec<_>>().join(" "));
    let mut pairs = BTreeSet::new();
    for _ in 0..rng.random_range(1..=7) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b || (!brokers[a] && !brokers[b]) || !pairs.insert((a.min(b), a.max(b))) {
            continue;
        }
        let _ = writeln!(text, "link e{a} e{b} t{} t{}", rng.random_range(0..k), rng.random_range(0..k));
    }
    for a in 0..k {
        for b in 0..k {
            if rng.random_bool(0.5) {
                let _ = writeln!(text, "allow t{a} t{b}");
            }
        }
    }
    text
}

fn route_exists(routes: &BTreeSet<ensemble_core::flow::FlowPath>, from: &Link, to: &Link) -> bool {
    routes
        .iter()
        .any(|r| r.first_link().as_ref() == Some(from) && r.last_link().as_ref() == Some(to))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pairs = 0;
    for case in 0..500 {
        let text = random_schema(&mut rng);
        let s = Schema::parse(&text).map_err(|e| format!("case {case}: {e}\n{text}"))?;
        ensure(s.graph.link_count() <= 14, || format!("case {case}: too many links"))?;
        let reach = link_reachability(&s);
        let routes = brute_force_routes(&s, s.graph.link_count() + 1);
        for a in reach.links() {
            for b in reach.links() {
                pairs += 1;
                let (fast, slow) = (reach.reachable(a, b), route_exists(&routes, a, b));
                ensure(fast == slow, || format!("case {case}: {a} => {b}: closure {fast}, enumeration {slow}\n{text}"))?;
            }
        }
    }
    Ok(format!("500 schemas, {pairs} link pairs"))
}

fn random_rbac(rng: &mut ChaCha8Rng) -> RbacPolicy {
    let roles: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("r{i}")).collect();
    let devices: Vec<EntityId> = (0..rng.random_range(1..=4)).map(|i| EntityId::new(format!("d{i}"))).collect();
    let topics: Vec<Topic> = (0..rng.random_range(1..=3)).map(|i| Topic::new(format!("t{i}"))).collect();
    let mut p = RbacPolicy {
        devices: devices.iter().cloned().collect(),
        roles: roles.iter().cloned().collect(),
        alphabet: topics.iter().cloned().collect(),
        ..RbacPolicy::default()
    };
    for d in &devices {
        for r in &roles {
            if rng.random_bool(0.5) {
                p.ua.insert((d.clone(), r.clone()));
            }
        }
        for t in &topics {
            if rng.random_bool(0.5) {
                p.subscriptions.insert((d.clone(), t.clone()));
            }
        }
    }
    for r in &roles {
        for t in &topics {
            if rng.random_bool(0.5) {
                p.pub_of.entry(r.clone()).or_default().insert(t.clone());
            }
            if rng.random_bool(0.5) {
                p.sub_of.entry(r.clone()).or_default().insert(t.clone());
            }
        }
    }
    // Seniors always precede their juniors, so the hierarchy is acyclic.
    for (i, s) in roles.iter().enumerate() {
        for j in &roles[i + 1..] {
            if rng.random_bool(0.3) {
                p.seniors.insert((s.clone(), j.clone()));
            }
        }
    }
    p
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = 0;
    for case in 0..1000 {
        let p = random_rbac(&mut rng);
        let s = compile_rbac(&p).map_err(|e| format!("case {case}: {e}"))?;
        ensure(s.validate().is_valid(), || format!("case {case}: {}", s.validate()))?;
        for publisher in &p.devices {
            for topic in &p.alphabet {
                // A device publishes on every role it holds.
                let pubs: Vec<Publication> = p
                    .roles_of(publisher)
                    .map(|r| Publication::new(publisher.clone(), format!("{r}.pub"), topic.clone()))
                    .collect();
                let got: BTreeSet<EntityId> = simulate(&s, &pubs)?.delivered().into_keys().collect();
                let want: BTreeSet<EntityId> = p
                    .devices
                    .iter()
                    .filter(|d| rbac_oracle(&p, publisher, topic, d))
                    .cloned()
                    .collect();
                checks += 1;
                ensure(got == want, || {
                    format!("case {case}: {publisher} {topic}: simulator {got:?}, oracle {want:?}\n{p:?}")
                })?;
            }
        }
    }
    Ok(format!("1000 policies, {checks} publisher/topic checks"))
}

/// M2 written out by hand: request, then grant or deny, then unlock.
/// Anything unexpected is dropped without moving.
fn m2_reference(state: u8, event: &str) -> (u8, bool) {
    match (state, event) {
        (0, "AC_request") => (1, true),
        (1, "AC_grant") => (2, true),
        (1, "AC_deny") => (0, true),
        (2, "DL_unlock") => (0, true),
        (s, _) => (s, false),
    }
}

fn criterion_6() -> Outcome {
    let events = ["AC_request", "AC_grant", "AC_deny", "DL_unlock"];
    let text = std::fs::read_to_string(config_path("smart-home/m2.ea")).map_err(|e| e.to_string())?;
    let spec = EaSpec::parse(&text).map_err(|e| e.to_string())?;
    let alphabet: BTreeSet<Topic> = events.iter().map(|e| Topic::new(*e)).collect();
    let m2 = spec.compile(&alphabet).map_err(|e| e.to_string())?;
    let mut words: Vec<Vec<&str>> = vec![vec![]];
    let mut frontier = words.clone();
    for _ in 0..5 {
        frontier = frontier
            .iter()
            .flat_map(|w| events.iter().map(move |e| [w.as_slice(), &[*e]].concat()))
            .collect();
        words.extend(frontier.iter().cloned());
    }
    for w in &words {
        let input: Vec<Topic> = w.iter().map(|e| Topic::new(*e)).collect();
        let got = m2.run(&input).map_err(|e| e.to_string())?;
        let mut state = 0;
        let mut want = Vec::new();
        for e in w {
            let (next, keep) = m2_reference(state, e);
            if keep {
                want.push(Topic::new(*e));
            }
            state = next;
        }
        ensure(got == want, || format!("{w:?}: automaton {got:?}, reference {want:?}"))?;
    }
    Ok(format!("{} words", words.len()))
}

/// A chain or a diamond of labels, a schema typed with them, and a random
/// allow table of ordered pairs only.
fn random_labeled(rng: &mut ChaCha8Rng) -> (Schema, SecurityLabeling) {
    let diamond = rng.random_bool(0.3);
    let (labels, hasse): (Vec<&str>, Vec<(&str, &str)>) = if diamond {
        (vec!["lo", "left", "right", "hi"], vec![("lo", "left"), ("lo", "right"), ("left", "hi"), ("right", "hi")])
    } else {
        (vec!["lo", "mid", "hi"], vec![("lo", "mid"), ("mid", "hi")])
    };
    let order = LabelOrder::new(
        labels.iter().map(|l| LinkType::new(*l)).collect(),
        hasse.iter().map(|(a, b)| (LinkType::new(*a), LinkType::new(*b))),
    )
    .expect("fixed orders are acyclic");
    let n = rng.random_range(2..=6);
    let brokers: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.6)).collect();
    let mut text = String::new();
    for (i, b) in brokers.iter().enumerate() {
        let _ = writeln!(text, "{} e{i}", if *b { "broker" } else { "device" });
    }
    let _ = writeln!(text, "linktype {}", labels.join(" "));
    let mut pairs = BTreeSet::new();
    for _ in 0..rng.random_range(1..=7) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b || (!brokers[a] && !brokers[b]) || !pairs.insert((a.min(b), a.max(b))) {
            continue;
        }
        let pick = |rng: &mut ChaCha8Rng| labels[rng.random_range(0..labels.len())];
        let _ = writeln!(text, "link e{a} e{b} {} {}", pick(rng), pick(rng));
    }
    for a in &labels {
        for b in &labels {
            if order.leq(&LinkType::new(*a), &LinkType::new(*b)) && rng.random_bool(0.6) {
                let _ = writeln!(text, "allow {a} {b}");
            }
        }
    }
    let s = Schema::parse(&text).expect("generated schema parses");
    let labeling = SecurityLabeling::from_types(&s, order);
    (s, labeling)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut valid = Vec::new();
    let mut tries = 0;
    while valid.len() < 200 {
        tries += 1;
        ensure(tries < 100_000, || format!("only {} passing schemas generated", valid.len()))?;
        let (s, l) = random_labeled(&mut rng);
        if check_blp(&s, &l).is_valid() {
            valid.push((s, l));
        }
    }
    let mut routes_checked = 0;
    for (case, (s, l)) in valid.iter().enumerate() {
        for route in brute_force_routes(s, s.graph.link_count() + 1) {
            let links: Vec<Link> = route.links().collect();
            routes_checked += 1;
            for w in links.windows(2) {
                ensure(l.flows(&w[0], &w[1]), || {
                    format!("case {case}: route {:?} steps down at {} -> {}", route, w[0], w[1])
                })?;
            }
        }
    }
    let mut caught = 0;
    for (case, (s, l)) in valid.iter_mut().enumerate() {
        // Inject a pair that runs down or sideways in the order.
        let labels: Vec<LinkType> = l.order.labels().iter().cloned().collect();
        let bad = labels
            .iter()
            .flat_map(|a| labels.iter().map(move |b| (a.clone(), b.clone())))
            .filter(|(a, b)| !l.order.leq(a, b))
            .collect::<Vec<_>>();
        let pair = bad[rng.random_range(0..bad.len())].clone();
        s.brokering.allow.insert(pair.clone());
        let report = check_blp(s, l);
        ensure(!report.is_valid(), || format!("case {case}: injected {pair:?} went unreported"))?;
        caught += 1;
    }
    Ok(format!("200 valid schemas ({routes_checked} routes monotone), {caught}/200 injections reported"))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "smart home, simulator", limit: Some(Duration::from_secs(1)), run: criterion_1 },
        Criterion { id: 2, name: "smart home, live brokers", limit: Some(Duration::from_secs(30)), run: live::criterion_2 },
        Criterion { id: 3, name: "hierarchy scoping", limit: Some(Duration::from_secs(60)), run: criterion_3 },
        Criterion { id: 4, name: "reachability closure", limit: Some(Duration::from_secs(60)), run: criterion_4 },
        Criterion { id: 5, name: "rbac equivalence", limit: Some(Duration::from_secs(120)), run: criterion_5 },
        Criterion { id: 6, name: "automaton conventions", limit: Some(Duration::from_secs(1)), run: criterion_6 },
        Criterion { id: 7, name: "blp monotonicity", limit: Some(Duration::from_secs(60)), run: criterion_7 },
        Criterion { id: 8, name: "throughput", limit: None, run: live::criterion_8 },
        Criterion { id: 9, name: "simulator/live agreement", limit: Some(Duration::from_secs(120)), run: live::criterion_9 },
    ];
    let only: Option<u8> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_none_or(|o| o == c.id)) {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("{detail}, but took longer than {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({}): {detail} [{elapsed:.2?}]", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({}): {why} [{elapsed:.2?}]", c.id, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
