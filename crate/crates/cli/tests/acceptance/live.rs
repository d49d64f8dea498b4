//! Criteria that need sockets: spawned broker processes, in-process chains
//! and in-process ensembles compared against the simulator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ensemble_bench::{launch_chain, run_bench, BenchPlan, BenchResult, Client, Configuration};
use ensemble_broker::{deploy, serve, write_deployment, BrokerHandle, LogLine, ServeOptions};
use ensemble_core::model::Schema;
use ensemble_core::sim::{run_to_quiescence, Publication, RunOptions};
use ensemble_core::{EntityId, Topic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{early_unlocks, ensure, smart_home, Outcome, PROTOCOL};

type Lines = Arc<Mutex<Vec<String>>>;

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime starts")
}

fn free_addr() -> SocketAddr {
    let l = std::net::TcpListener::bind("127.0.0.1:0").expect("loopback bind");
    l.local_addr().expect("bound address")
}

fn snapshot(lines: &Lines) -> Vec<String> {
    lines.lock().unwrap_or_else(|e| e.into_inner()).clone()
}

async fn wait_until(what: &str, limit: Duration, mut done: impl FnMut() -> bool) -> Result<(), String> {
    let start = Instant::now();
    while !done() {
        if start.elapsed() > limit {
            return Err(format!("timed out waiting for {what}"));
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    Ok(())
}

/// An `ensemble serve --audit` child process with its stdout collected.
struct Proc {
    child: Child,
    lines: Lines,
}

impl Proc {
    fn spawn(config: &Path) -> Result<Proc, String> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_ensemble"))
            .arg("serve")
            .arg(config)
            .arg("--audit")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot spawn broker: {e}"))?;
        let lines: Lines = Arc::default();
        let stdout = child.stdout.take().expect("piped stdout");
        let sink = lines.clone();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                sink.lock().unwrap_or_else(|e| e.into_inner()).push(line);
            }
        });
        Ok(Proc { child, lines })
    }

    fn has(&self, line: &str) -> bool {
        snapshot(&self.lines).iter().any(|l| l == line)
    }

    fn count_prefix(&self, prefix: &str) -> usize {
        snapshot(&self.lines).iter().filter(|l| l.starts_with(prefix)).count()
    }

    async fn wait_for(&self, line: &str) -> Result<(), String> {
        wait_until(line, Duration::from_secs(10), || self.has(line)).await
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// The three smart-home brokers as separate processes plus one client per
/// device that takes part.
struct Home {
    _dir: tempfile::TempDir,
    procs: BTreeMap<&'static str, Proc>,
    clients: BTreeMap<&'static str, Client>,
}

impl Home {
    async fn start() -> Result<Home, String> {
        let schema = smart_home();
        let addrs: BTreeMap<EntityId, SocketAddr> =
            ["H", "I", "S"].into_iter().map(|b| (EntityId::new(b), free_addr())).collect();
        let configs = deploy(&schema, &addrs).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        write_deployment(dir.path(), &configs).map_err(|e| e.to_string())?;
        let mut procs = BTreeMap::new();
        for b in ["H", "I", "S"] {
            procs.insert(b, Proc::spawn(&dir.path().join(format!("{b}.conf")))?);
        }
        for (b, peer) in [("H", "I"), ("H", "S"), ("I", "H"), ("S", "H")] {
            procs[b].wait_for(&format!("BRIDGE {peer} up")).await?;
        }
        let mut clients = BTreeMap::new();
        for (device, broker, subs) in [
            ("DB", "H", &["MD_motion", "AC_grant"][..]),
            ("SP", "I", &["AC_request"][..]),
            ("DL", "S", &["DL_unlock"][..]),
            ("MD", "S", &[][..]),
        ] {
            let mut c = Client::connect(addrs[&EntityId::new(broker)], device)
                .await
                .map_err(|e| format!("{device}: {e}"))?;
            for t in subs {
                c.subscribe(t).await.map_err(|e| format!("{device} subscribe {t}: {e}"))?;
            }
            clients.insert(device, c);
        }
        Ok(Home {
            _dir: dir,
            procs,
            clients,
        })
    }

    async fn publish(&mut self, device: &str, topic: &str) -> Result<(), String> {
        let c = self.clients.get_mut(device).ok_or_else(|| format!("no client {device}"))?;
        c.publish(topic, &b"payload"[..]).await.map_err(|e| format!("{device}: {e}"))
    }

    /// Topics the device receives until `quiet` passes with nothing new.
    async fn received(&mut self, device: &str, quiet: Duration) -> Result<Vec<String>, String> {
        let c = self.clients.get_mut(device).ok_or_else(|| format!("no client {device}"))?;
        let mut got = Vec::new();
        while let Some(d) = c.recv_timeout(quiet).await.map_err(|e| format!("{device}: {e}"))? {
            got.push(d.topic);
        }
        Ok(got)
    }

    /// Publishes protocol steps one at a time, waiting for the door
    /// monitor to see each before sending the next.
    async fn run_protocol(&mut self, order: &[usize]) -> Result<(), String> {
        for &i in order {
            let (device, _, topic) = PROTOCOL[i];
            let before = self.procs["S"].count_prefix("EA H->S");
            self.publish(device, topic).await?;
            let s = &self.procs["S"];
            wait_until(&format!("S to see {topic}"), Duration::from_secs(5), || {
                s.count_prefix("EA H->S") > before
            })
            .await?;
        }
        Ok(())
    }
}

const QUIET: Duration = Duration::from_millis(300);

pub(crate) fn criterion_2() -> Outcome {
    runtime().block_on(async {
        let mut home = Home::start().await?;

        home.publish("MD", "MD_motion").await?;
        let db = home.received("DB", QUIET).await?;
        ensure(db == ["MD_motion"], || format!("(a) DB got {db:?}"))?;
        ensure(home.procs["H"].has("ROUTE S->H sensitive H->I internet MD_motion denied"), || {
            "(a) H did not deny the hop to I".into()
        })?;
        let leaked: Vec<String> =
            snapshot(&home.procs["I"].lines).into_iter().filter(|l| l.contains("MD_motion")).collect();
        ensure(leaked.is_empty(), || format!("(a) I saw {leaked:?}"))?;

        home.publish("SP", "DL_unlock").await?;
        home.procs["H"].wait_for("EA I->H q0 DL_unlock -> q0 0").await?;
        let dl = home.received("DL", QUIET).await?;
        ensure(dl.is_empty(), || format!("(b) DL got {dl:?}"))?;

        home.run_protocol(&[0, 1, 2]).await?;
        let dl = home.received("DL", QUIET).await?;
        ensure(dl == ["DL_unlock"], || format!("(c) in order DL got {dl:?}"))?;

        // Losing the internet broker must not stop local traffic.
        home.procs.remove("I");
        home.procs["H"].wait_for("BRIDGE I down").await?;
        home.received("DB", Duration::from_millis(50)).await?;
        home.publish("MD", "MD_motion").await?;
        let db = home.received("DB", QUIET).await?;
        ensure(db == ["MD_motion"], || format!("after killing I, DB got {db:?}"))?;
        drop(home);

        let perms = early_unlocks();
        for p in &perms {
            let mut home = Home::start().await?;
            home.run_protocol(p).await?;
            let dl = home.received("DL", QUIET).await?;
            ensure(dl.is_empty(), || format!("(c) order {p:?} delivered {dl:?} to DL"))?;
        }
        Ok(format!("3 processes, {} early-unlock orderings on fresh ensembles, I killed mid-run", perms.len()))
    })
}

const BENCH_SECS: u64 = 30;

async fn measure(cfg: Configuration, chain_len: usize, mpr: u64) -> Result<BenchResult, String> {
    let chain = launch_chain(cfg, chain_len, 8).await.map_err(|e| e.to_string())?;
    let plan = BenchPlan {
        chain_len,
        mpr,
        duration: Duration::from_secs(BENCH_SECS),
        ..BenchPlan::default()
    };
    let r = run_bench(&plan, chain.topology).await;
    chain.shutdown().await;
    let r = r.map_err(|e| e.to_string())?;
    ensure(r.valid, || format!("{cfg} x{chain_len} at {mpr}: clients failed ({r})"))?;
    Ok(r)
}

pub(crate) fn criterion_8() -> Outcome {
    const SHARED_MPR: u64 = 10_000;
    const ORDER_MPR: u64 = 30_000;
    const LOW_MPR: u64 = 1_000;
    runtime().block_on(async {
        let ori = measure(Configuration::Ori, 3, SHARED_MPR).await?;
        let new = measure(Configuration::New, 3, SHARED_MPR).await?;
        let sem = measure(Configuration::Sem, 3, ORDER_MPR).await?;
        let cem = measure(Configuration::Cem, 3, ORDER_MPR).await?;
        let low = measure(Configuration::Sem, 1, LOW_MPR).await?;
        let summary = format!(
            "{BENCH_SECS}s runs, payload {}B; ori {:.0} new {:.0} at {SHARED_MPR}; sem {:.0} cem {:.0} at {ORDER_MPR}; sem x1 {:.0} at {LOW_MPR}",
            ensemble_bench::plan::DEFAULT_PAYLOAD,
            ori.mt,
            new.mt,
            sem.mt,
            cem.mt,
            low.mt
        );
        let sustained = |r: &BenchResult| r.mt >= 0.95 * SHARED_MPR as f64;
        ensure(sustained(&ori) && sustained(&new), || format!("(a) {SHARED_MPR} not sustained by both: {summary}"))?;
        ensure(new.mt >= 0.95 * ori.mt, || format!("(a) new below 95% of ori: {summary}"))?;
        ensure(sem.mt >= cem.mt, || format!("(b) sem below cem: {summary}"))?;
        let err = (low.mt - LOW_MPR as f64).abs() / LOW_MPR as f64;
        ensure(err <= 0.05, || format!("(c) low-rate error {:.1}%: {summary}", err * 100.0))?;
        Ok(summary)
    })
}

/// Two or three brokers in a tree, 2-4 devices each on one broker, two
/// link types, a random allow table, random subscriptions and sometimes an
/// automaton on a link into a broker. Returns the schema text and the
/// publishing device.
fn random_ensemble(rng: &mut ChaCha8Rng) -> (String, usize) {
    let topics = ["x", "y", "z"];
    let nb = rng.random_range(2..=3);
    let nd = rng.random_range(2..=4);
    let ty = |rng: &mut ChaCha8Rng| ["a", "b"][rng.random_range(0..2)];
    let mut text = String::new();
    let _ = writeln!(text, "broker {}", (0..nb).map(|i| format!("B{i}")).collect::<Vec<_>>().join(" "));
    let _ = writeln!(text, "device {}", (0..nd).map(|i| format!("d{i}")).collect::<Vec<_>>().join(" "));
    let _ = writeln!(text, "linktype a b\nalphabet x y z");
    let mut into_brokers = Vec::new();
    for i in 1..nb {
        let parent = rng.random_range(0..i);
        let _ = writeln!(text, "link B{i} B{parent} {} {}", ty(rng), ty(rng));
        into_brokers.push((format!("B{i}"), format!("B{parent}")));
        into_brokers.push((format!("B{parent}"), format!("B{i}")));
    }
    for d in 0..nd {
        let b = rng.random_range(0..nb);
        let _ = writeln!(text, "link d{d} B{b} {} {}", ty(rng), ty(rng));
        into_brokers.push((format!("d{d}"), format!("B{b}")));
        let subs: Vec<&str> = topics.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        if !subs.is_empty() {
            let _ = writeln!(text, "subscribe B{b} d{d} {}", subs.join(" "));
        }
    }
    let mut allowed = false;
    for a in ["a", "b"] {
        for b in ["a", "b"] {
            if rng.random_bool(0.7) {
                allowed = true;
                let _ = writeln!(text, "allow {a} {b}");
            }
        }
    }
    if !allowed {
        let _ = writeln!(text, "allow a a");
    }
    if rng.random_bool(0.5) {
        let t = topics[rng.random_range(0..3)];
        let u = topics[rng.random_range(0..3)];
        let body = match rng.random_range(0..3) {
            0 => format!("state q0 initial\nedge q0 * q0\nedge q0 !{t} q0\n"),
            1 => format!("state p initial\nstate q\nedge p * p\nedge p {t} q\nedge q * q\nedge q !{t} p\n"),
            _ => format!("state q0 initial\nedge q0 * q0\nedge q0 {t}->{t},{u} q0\n"),
        };
        let (src, dst) = &into_brokers[rng.random_range(0..into_brokers.len())];
        let _ = write!(text, "automaton A\n{body}end\nmonitor-link {src} {dst} A\n");
    }
    (text, rng.random_range(0..nd))
}

/// Serves every broker of `schema` in-process, connects one client per
/// device, publishes `script` from `publisher` and returns what each
/// device received once the ensemble goes quiet.
async fn run_live(
    schema: &Schema,
    publisher: &EntityId,
    script: &[Topic],
) -> Result<(BTreeMap<EntityId, Vec<Topic>>, Vec<String>), String> {
    let any: SocketAddr = "127.0.0.1:0".parse().expect("literal address");
    let addrs: BTreeMap<EntityId, SocketAddr> = schema.graph.brokers().map(|b| (b.clone(), any)).collect();
    let mut configs = deploy(schema, &addrs).map_err(|e| e.to_string())?;
    let logs: Lines = Arc::default();
    let mut handles: BTreeMap<EntityId, BrokerHandle> = BTreeMap::new();
    // A broker dials peers whose names sort after its own, so start those first.
    while let Some((name, mut cfg)) = configs.pop_last() {
        for (peer, decl) in cfg.bridges.iter_mut() {
            if decl.addr.is_some() {
                decl.addr = Some(handles[peer].local_addr.to_string());
            }
        }
        let sink = logs.clone();
        let opts = ServeOptions {
            audit: true,
            log: Arc::new(move |l: &LogLine| sink.lock().unwrap_or_else(|e| e.into_inner()).push(l.to_string())),
            ..ServeOptions::default()
        };
        handles.insert(name, serve(cfg, opts).await.map_err(|e| e.to_string())?);
    }
    let bridges = schema.graph.links().filter(|l| schema.graph.is_broker(&l.src) && schema.graph.is_broker(&l.dst)).count();
    wait_until("bridges", Duration::from_secs(10), || {
        snapshot(&logs).iter().filter(|l| l.starts_with("BRIDGE") && l.ends_with(" up")).count() >= bridges
    })
    .await?;

    let delivered: Arc<Mutex<BTreeMap<EntityId, Vec<Topic>>>> = Arc::default();
    let mut readers = Vec::new();
    // Dropping a write half closes the session, so every writer is kept.
    let mut writers = BTreeMap::new();
    for d in schema.graph.devices() {
        let broker = schema
            .graph
            .out_links(d)
            .next()
            .map(|l| l.dst.clone())
            .ok_or_else(|| format!("{d} has no broker"))?;
        let mut c = Client::connect(handles[&broker].local_addr, d).await.map_err(|e| format!("{d}: {e}"))?;
        let link = ensemble_core::model::Link::new(broker, d.clone());
        for t in schema.subscriptions.topics(&link).into_iter().flatten() {
            c.subscribe(t).await.map_err(|e| format!("{d} subscribe {t}: {e}"))?;
        }
        let (mut reader, writer) = c.split();
        writers.insert(d.clone(), writer);
        let sink = delivered.clone();
        let device = d.clone();
        readers.push(tokio::spawn(async move {
            while let Ok(m) = reader.recv().await {
                sink.lock().unwrap_or_else(|e| e.into_inner()).entry(device.clone()).or_default().push(Topic::new(m.topic));
            }
        }));
    }
    let writer = writers.get_mut(publisher).ok_or_else(|| format!("no publisher {publisher}"))?;
    for t in script {
        writer.publish(t, &b"p"[..]).await.map_err(|e| e.to_string())?;
    }

    let activity = || {
        let n: usize = delivered.lock().unwrap_or_else(|e| e.into_inner()).values().map(Vec::len).sum();
        n + snapshot(&logs).len()
    };
    let mut last = activity();
    let mut still = Instant::now();
    while still.elapsed() < Duration::from_millis(150) {
        tokio::time::sleep(Duration::from_millis(10)).await;
        let now = activity();
        if now != last {
            last = now;
            still = Instant::now();
        }
    }
    drop(writers);
    for h in handles.into_values() {
        h.shutdown().await;
    }
    for r in readers {
        r.abort();
    }
    let out = delivered.lock().unwrap_or_else(|e| e.into_inner()).clone();
    Ok((out, snapshot(&logs)))
}

pub(crate) fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    runtime().block_on(async {
        let mut deliveries = 0;
        let mut monitored = 0;
        for case in 0..100 {
            let (text, p) = random_ensemble(&mut rng);
            let schema = Schema::parse(&text).map_err(|e| format!("case {case}: {e}\n{text}"))?;
            ensure(schema.validate().is_valid(), || format!("case {case}: {}\n{text}", schema.validate()))?;
            let publisher = EntityId::new(format!("d{p}"));
            let broker = schema.graph.out_links(&publisher).next().map(|l| l.dst.clone()).expect("device has a broker");
            let topics = ["x", "y", "z"];
            let script: Vec<Topic> =
                (0..rng.random_range(3..=6)).map(|_| Topic::new(topics[rng.random_range(0..3)])).collect();
            let pubs: Vec<Publication> =
                script.iter().map(|t| Publication::new(publisher.clone(), broker.clone(), t.clone())).collect();
            let sim = run_to_quiescence(&schema, &pubs, RunOptions::default())
                .map_err(|e| format!("case {case}: {e}"))?
                .delivered();
            let (live, logs) =
                run_live(&schema, &publisher, &script).await.map_err(|e| format!("case {case}: {e}"))?;
            ensure(sim == live, || {
                format!(
                    "case {case}: simulator {sim:?}, live {live:?}\nscript {script:?} from {publisher}\n{text}log:\n{}",
                    logs.join("\n")
                )
            })?;
            deliveries += sim.values().map(Vec::len).sum::<usize>();
            monitored += usize::from(!schema.events.assignment().is_empty());
        }
        Ok(format!("100 ensembles ({monitored} with an automaton), {deliveries} deliveries matched"))
    })
}
