//! Benchmark plans and results.

use std::fmt;
use std::io::Write;
use std::time::Duration;

pub const DEFAULT_PAYLOAD: usize = 175;
pub const DEFAULT_DURATION: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchPlan {
    /// Brokers in the chain; publishers attach to the first, subscribers
    /// to the last.
    pub chain_len: usize,
    /// Messages per second over all publishers together.
    pub mpr: u64,
    pub duration: Duration,
    pub payload_bytes: usize,
    pub publishers: usize,
    pub subscribers: usize,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            chain_len: 1,
            mpr: 1000,
            duration: DEFAULT_DURATION,
            payload_bytes: DEFAULT_PAYLOAD,
            publishers: 1,
            subscribers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("message publish rate must be positive")]
    ZeroRate,
    #[error("payload must be at least one byte")]
    ZeroPayload,
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("chain needs at least one broker")]
    EmptyChain,
    #[error("need at least one publisher and one subscriber")]
    NoClients,
}

impl BenchPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.mpr == 0 {
            return Err(PlanError::ZeroRate);
        }
        if self.payload_bytes == 0 {
            return Err(PlanError::ZeroPayload);
        }
        if self.duration.is_zero() {
            return Err(PlanError::ZeroDuration);
        }
        if self.chain_len == 0 {
            return Err(PlanError::EmptyChain);
        }
        if self.publishers == 0 || self.subscribers == 0 {
            return Err(PlanError::NoClients);
        }
        Ok(())
    }

    /// Messages the run publishes in total.
    pub fn total_messages(&self) -> u64 {
        (self.mpr as u128 * self.duration.as_millis() / 1000) as u64
    }

    /// Share of the total assigned to publisher `i`.
    pub fn share(&self, i: usize) -> u64 {
        let n = self.publishers as u64;
        let total = self.total_messages();
        total / n + u64::from((i as u64) < total % n)
    }

    /// Topic publisher `i` uses. Subscriber `j` listens on `bench/j`, so each
    /// message has exactly one intended recipient.
    pub fn topic_of(&self, publisher: usize) -> String {
        topic_for(publisher % self.subscribers)
    }
}

pub fn topic_for(subscriber: usize) -> String {
    format!("bench/{subscriber}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub published: u64,
    /// Everything received, including arrivals while draining.
    pub received: u64,
    /// Received before the configured duration ran out.
    pub in_window: u64,
    pub duration: Duration,
    /// In-window arrivals per second of configured duration. A backlog
    /// drained after the run does not count.
    pub mt: f64,
    /// Received count per elapsed second since the first publish.
    pub per_second: Vec<u64>,
    /// False when a client failed to connect or dropped mid-run.
    pub valid: bool,
}

impl BenchResult {
    pub fn new(
        published: u64,
        received: u64,
        in_window: u64,
        duration: Duration,
        per_second: Vec<u64>,
        valid: bool,
    ) -> Self {
        BenchResult {
            published,
            received,
            in_window,
            duration,
            mt: in_window as f64 / duration.as_secs_f64(),
            per_second,
            valid,
        }
    }

    /// Idealized throughput: every publication is received, so MT = MPR.
    pub fn ideal(plan: &BenchPlan) -> Self {
        let n = plan.total_messages();
        let secs = plan.duration.as_secs().max(1) as usize;
        BenchResult::new(n, n, n, plan.duration, vec![n / secs as u64; secs], true)
    }

    /// Writes `second,received` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["second", "received"])?;
        for (s, n) in self.per_second.iter().enumerate() {
            w.write_record([s.to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "published={} received={} duration={:.1}s mt={:.1} valid={}",
            self.published,
            self.received,
            self.duration.as_secs_f64(),
            self.mt,
            self.valid
        )
    }
}
