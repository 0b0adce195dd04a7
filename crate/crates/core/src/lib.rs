//! Cost-aware routing over a pool of chat-completion models.
//!
//! Each query is probed on every eligible model with a short token budget, a
//! selector model ranks the partial outputs, the top-k models answer in full,
//! and an aggregator model merges their answers. Further layers refine the
//! merged answer with the same k models.
//!
//! Alongside the router live cost accounting ([`cost`]), a Monte-Carlo model
//! of merge quality ([`theory`]), and a benchmark harness ([`harness`]).

pub mod aggregator;
pub mod client;
pub mod config;
pub mod cost;
pub mod error;
pub mod pipeline;
pub mod prompts;
pub mod selector;
pub mod harness;
pub mod theory;
pub mod types;

pub use client::{ModelClient, MockBackend, MockReply, MockScript};
pub use config::{load_config, load_config_file, Overrides, RouterConfig, RouterParams};
pub use cost::CostLedger;
pub use error::{ConfigError, RouteError};
pub use pipeline::{route, route_with_overrides, Router, StrategyChoice};
pub use types::{Generation, ModelSpec, Purpose, Query, RoutingTrace, Strategy, Termination};
