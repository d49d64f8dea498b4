//! Fixed-rate publishers against counting subscribers.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;
use tokio::time::MissedTickBehavior;

use crate::client::Client;
use crate::plan::{topic_for, BenchPlan, BenchResult, PlanError};

/// Token-bucket granularity.
pub const TICK: Duration = Duration::from_millis(10);
/// How long to keep counting after the last publish with no new arrivals.
const DRAIN_QUIET: Duration = Duration::from_millis(500);
const DRAIN_MAX: Duration = Duration::from_secs(10);

/// Where publishers and subscribers attach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub publish_to: SocketAddr,
    pub subscribe_at: SocketAddr,
}

struct Counters {
    received: AtomicU64,
    /// Arrivals before the configured duration ran out.
    in_window: AtomicU64,
    per_second: Mutex<Vec<u64>>,
}

impl Counters {
    fn record(&self, start: Instant, window: Duration, local: &mut Vec<u64>) {
        let elapsed = start.elapsed();
        let s = elapsed.as_secs() as usize;
        if local.len() <= s {
            local.resize(s + 1, 0);
        }
        local[s] += 1;
        self.received.fetch_add(1, Ordering::Relaxed);
        if elapsed <= window {
            self.in_window.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn merge(&self, local: &[u64]) {
        let mut all = self.per_second.lock().unwrap_or_else(|e| e.into_inner());
        if all.len() < local.len() {
            all.resize(local.len(), 0);
        }
        for (a, b) in all.iter_mut().zip(local) {
            *a += b;
        }
    }
}

/// Publishes at the plan's rate for its duration and counts what the
/// subscribers receive. Each publisher releases, at every tick, however
/// many messages bring it to its pro-rata share of elapsed time, so the
/// total is exact even when ticks are late.
pub async fn run_bench(plan: &BenchPlan, topology: Topology) -> Result<BenchResult, PlanError> {
    plan.validate()?;
    let mut valid = true;
    let counters = Arc::new(Counters {
        received: AtomicU64::new(0),
        in_window: AtomicU64::new(0),
        per_second: Mutex::new(Vec::new()),
    });

    let mut subscribers = Vec::new();
    for j in 0..plan.subscribers {
        match Client::connect(topology.subscribe_at, &format!("bench-sub-{j}")).await {
            Ok(mut c) => {
                if c.subscribe(&topic_for(j)).await.is_err() {
                    valid = false;
                    continue;
                }
                subscribers.push(c);
            }
            Err(_) => valid = false,
        }
    }
    let mut publishers = Vec::new();
    for i in 0..plan.publishers {
        match Client::connect(topology.publish_to, &format!("bench-pub-{i}")).await {
            Ok(c) => publishers.push((i, c)),
            Err(_) => valid = false,
        }
    }
    // Let bridges and subscriptions settle before the clock starts.
    tokio::time::sleep(Duration::from_millis(200)).await;

    let start = Instant::now();
    let stop = tokio_util::sync::CancellationToken::new();
    let mut sub_tasks = Vec::new();
    let window = plan.duration;
    for c in subscribers {
        let counters = counters.clone();
        let stop = stop.clone();
        let (mut reader, writer) = c.split();
        sub_tasks.push(tokio::spawn(async move {
            // Dropping the write half would half-close the connection.
            let _writer = writer;
            let mut local = Vec::new();
            let mut ok = true;
            loop {
                tokio::select! {
                    _ = stop.cancelled() => break,
                    r = reader.recv() => match r {
                        Ok(_) => counters.record(start, window, &mut local),
                        Err(_) => { ok = false; break; }
                    }
                }
            }
            counters.merge(&local);
            ok
        }));
    }

    let payload = Bytes::from(vec![b'x'; plan.payload_bytes]);
    let ticks = (plan.duration.as_nanos() / TICK.as_nanos()).max(1) as u64;
    let mut pub_tasks = Vec::new();
    for (i, c) in publishers {
        let share = plan.share(i);
        let topic = plan.topic_of(i);
        let payload = payload.clone();
        let (_reader, mut writer) = c.split();
        pub_tasks.push(tokio::spawn(async move {
            let mut sent = 0u64;
            let mut interval = tokio::time::interval(TICK);
            interval.set_missed_tick_behavior(MissedTickBehavior::Skip);
            loop {
                interval.tick().await;
                let k = (start.elapsed().as_nanos() / TICK.as_nanos()) as u64 + 1;
                let due = (share as u128 * k.min(ticks) as u128 / ticks as u128) as u64;
                while sent < due {
                    if writer.feed(&topic, payload.clone()).await.is_err() {
                        return (sent, false);
                    }
                    sent += 1;
                }
                if writer.flush().await.is_err() {
                    return (sent, false);
                }
                if k >= ticks {
                    return (sent, true);
                }
            }
        }));
    }
    let mut published = 0;
    for t in pub_tasks {
        let (sent, ok) = t.await.unwrap_or((0, false));
        published += sent;
        valid &= ok;
    }

    let drain_start = Instant::now();
    let mut last = counters.received.load(Ordering::Relaxed);
    let mut last_change = Instant::now();
    while last < published && drain_start.elapsed() < DRAIN_MAX && last_change.elapsed() < DRAIN_QUIET {
        tokio::time::sleep(TICK).await;
        let now = counters.received.load(Ordering::Relaxed);
        if now != last {
            last = now;
            last_change = Instant::now();
        }
    }
    stop.cancel();
    for t in sub_tasks {
        valid &= t.await.unwrap_or(false);
    }
    let received = counters.received.load(Ordering::Relaxed);
    let in_window = counters.in_window.load(Ordering::Relaxed);
    let per_second = counters.per_second.lock().unwrap_or_else(|e| e.into_inner()).clone();
    Ok(BenchResult::new(published, received, in_window, plan.duration, per_second, valid))
}
