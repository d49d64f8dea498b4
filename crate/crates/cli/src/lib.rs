//! The `ensemble` command line: run brokers, simulate and analyze schemas,
//! compile policies, benchmark chains and validate config files.
//!
//! Exit codes: 0 on success, 1 when violations are found, 2 on usage or
//! config errors.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod error;
mod live;
mod offline;
mod validate;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ensemble", version, about = "Link-typed publish/subscribe broker ensembles")]
pub struct Cli {
    /// Seed for the random scheduler and seeded monitors.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one broker from a config file until interrupted.
    Serve {
        config: PathBuf,
        /// Also log every routing decision and automaton step.
        #[arg(long)]
        audit: bool,
    },
    /// Run a publication script against a schema to quiescence.
    Simulate {
        schema: PathBuf,
        script: PathBuf,
        #[arg(long, value_enum, default_value_t = SchedulerKind::Fifo)]
        scheduler: SchedulerKind,
        /// Maximum number of rule firings.
        #[arg(long)]
        step_bound: Option<u64>,
        /// Print every rule firing before the summary.
        #[arg(long)]
        trace: bool,
    },
    /// Static flow analyses over a schema.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Compile a high-level policy into a schema.
    Compile {
        #[arg(value_enum)]
        style: PolicyStyle,
        policy: PathBuf,
        /// Write the schema here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Measure throughput over an in-process broker chain.
    Bench {
        #[arg(long, value_enum, default_value_t = BenchConfig::New)]
        config: BenchConfig,
        #[arg(long, default_value_t = 1)]
        chain: usize,
        /// Messages published per second, summed over publishers.
        #[arg(long, default_value_t = 1000)]
        mpr: u64,
        /// Run length in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = ensemble_bench::plan::DEFAULT_PAYLOAD)]
        payload: usize,
        #[arg(long, default_value_t = 2)]
        publishers: usize,
        #[arg(long, default_value_t = 2)]
        subscribers: usize,
        /// Write per-second receive counts here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check schemas, broker configs, automata, policies and scripts.
    Validate {
        /// A file, or a directory whose recognized files are all checked.
        path: PathBuf,
    },
    /// Split a schema into one broker config per broker.
    Deploy {
        schema: PathBuf,
        outdir: PathBuf,
        /// Listen address of a broker, as NAME=ADDR. Repeatable.
        #[arg(long = "addr", value_name = "NAME=ADDR")]
        addrs: Vec<String>,
        /// Brokers without an explicit address listen on 127.0.0.1 from
        /// this port upwards, in name order.
        #[arg(long, default_value_t = 18830)]
        port_base: u16,
    },
}

#[derive(Debug, Subcommand)]
pub enum Analysis {
    /// Every pair of links joined by a flow route.
    Routes { schema: PathBuf },
    /// Check a labeling for read-down/write-up and monotone flows.
    Blp { schema: PathBuf, labeling: PathBuf },
    /// Which brokers' publications reach which brokers' subscribers.
    Visible { schema: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchedulerKind {
    Fifo,
    Lex,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyStyle {
    Hierarchy,
    Rbac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchConfig {
    Ori,
    New,
    Sem,
    Cem,
}

/// What a successful command found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Violations,
}

impl Outcome {
    fn from_clean(clean: bool) -> Outcome {
        if clean {
            Outcome::Clean
        } else {
            Outcome::Violations
        }
    }

    fn worst(self, other: Outcome) -> Outcome {
        if self == Outcome::Violations || other == Outcome::Violations {
            Outcome::Violations
        } else {
            Outcome::Clean
        }
    }
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Serve { config, audit } => live::serve(&config, audit, seed),
        Command::Simulate {
            schema,
            script,
            scheduler,
            step_bound,
            trace,
        } => offline::simulate(&schema, &script, scheduler, seed, step_bound, trace, out),
        Command::Analyze { analysis } => match analysis {
            Analysis::Routes { schema } => offline::routes(&schema, out),
            Analysis::Blp { schema, labeling } => offline::blp(&schema, &labeling, out),
            Analysis::Visible { schema } => offline::visible(&schema, out),
        },
        Command::Compile { style, policy, output } => offline::compile(style, &policy, output.as_deref(), out),
        Command::Bench {
            config,
            chain,
            mpr,
            duration,
            payload,
            publishers,
            subscribers,
            csv,
        } => {
            let plan = live::plan(chain, mpr, duration, payload, publishers, subscribers)?;
            live::bench(config, &plan, seed, csv.as_deref(), out)
        }
        Command::Validate { path } => validate::validate(&path, out),
        Command::Deploy {
            schema,
            outdir,
            addrs,
            port_base,
        } => offline::deploy(&schema, &outdir, &addrs, port_base, out),
    }
}

/// Runs `cli` against stdout and maps the result to an exit code.
pub fn main_with(cli: Cli) -> ExitCode {
    // Not locked: `serve` logs to stdout from its worker threads.
    let mut out = std::io::stdout();
    let result = run(cli, &mut out);
    let _ = out.flush();
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
