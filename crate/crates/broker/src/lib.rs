//! A broker for link-typed ensembles: clients and peer brokers connect over
//! a small binary protocol, every forwarding decision consults the
//! brokering table, and monitored links run edit automata or native
//! monitors.

pub mod config;
pub mod deploy;
pub mod monitor;
pub mod routing;
pub mod server;
pub mod wire;

pub use config::{BrokerConfig, ConfigError, Direction, MonitorSource};
pub use deploy::{deploy, write_deployment, DeployError};
pub use routing::{LogLine, Peer, RoutingCore};
pub use server::{serve, BrokerHandle, LogSink, ServeError, ServeOptions};
pub use wire::{Frame, FrameCodec, Status, WireError};
