//! Client library for the broker wire protocol and a fixed-rate
//! throughput harness over chains of in-process brokers.

pub mod chain;
pub mod client;
pub mod plan;
pub mod run;

pub use chain::{chain_config, launch_chain, Chain, Configuration};
pub use client::{Client, ClientError, Delivery};
pub use plan::{BenchPlan, BenchResult, PlanError};
pub use run::{run_bench, Topology};
