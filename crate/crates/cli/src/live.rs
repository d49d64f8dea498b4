//! Commands that open sockets.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use ensemble_bench::{launch_chain, run_bench, BenchPlan, Configuration};
use ensemble_broker::{serve as serve_broker, BrokerConfig, LogLine, ServeOptions};

use crate::error::CliError;
use crate::{BenchConfig, Outcome};

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Runs until SIGINT, printing one flushed stdout line per log event.
pub(crate) fn serve(config: &Path, audit: bool, seed: u64) -> Result<Outcome, CliError> {
    let cfg = BrokerConfig::load(config)?;
    let log = Arc::new(|line: &LogLine| {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    });
    runtime()?.block_on(async move {
        let opts = ServeOptions {
            audit,
            seed,
            log,
            ..ServeOptions::default()
        };
        let handle = serve_broker(cfg, opts).await?;
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await;
        Ok(Outcome::Clean)
    })
}

pub(crate) fn plan(
    chain_len: usize,
    mpr: u64,
    duration: f64,
    payload_bytes: usize,
    publishers: usize,
    subscribers: usize,
) -> Result<BenchPlan, CliError> {
    let duration = Duration::try_from_secs_f64(duration)
        .map_err(|_| CliError::Usage(format!("bad --duration {duration}")))?;
    let plan = BenchPlan {
        chain_len,
        mpr,
        duration,
        payload_bytes,
        publishers,
        subscribers,
    };
    plan.validate()?;
    Ok(plan)
}

/// Prints the summary line; a run with failed clients counts as a violation.
pub(crate) fn bench(
    config: BenchConfig,
    plan: &BenchPlan,
    seed: u64,
    csv: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Outcome, CliError> {
    let cfg = match config {
        BenchConfig::Ori => Configuration::Ori,
        BenchConfig::New => Configuration::New,
        BenchConfig::Sem => Configuration::Sem,
        BenchConfig::Cem => Configuration::Cem,
    };
    let result = runtime()?.block_on(async {
        let chain = launch_chain(cfg, plan.chain_len, seed).await?;
        let r = run_bench(plan, chain.topology).await;
        chain.shutdown().await;
        Ok::<_, CliError>(r?)
    })?;
    writeln!(
        out,
        "config={cfg} chain={} mpr={} payload={} {result}",
        plan.chain_len, plan.mpr, plan.payload_bytes
    )?;
    if let Some(path) = csv {
        let io = |e: std::io::Error| CliError::Io {
            path: path.to_owned(),
            source: e,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        result.write_csv(file).map_err(|e| io(std::io::Error::other(e)))?;
    }
    Ok(Outcome::from_clean(result.valid))
}
