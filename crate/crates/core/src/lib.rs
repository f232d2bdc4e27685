//! Intrusion-tolerant request serving at desk scale.
//!
//! The pieces: a fleet of n diverse variant pools with m replicas each, a
//! scheduling proxy that picks one replica per pool and tags each request
//! with a keyed MAC, a verification proxy that votes the replicas' SQL
//! writes to unanimity before anything reaches storage, a rolling-sum
//! rejuvenation controller, and a Monte Carlo evaluator for how long the
//! fleet resists a strategic adversary.

pub mod config;
pub mod fixed;
pub mod harness;
pub mod model;
pub mod scheduler;
pub mod sim;
pub mod sql;
pub mod tag;
pub mod verifier;

pub use config::{ConfigError, SystemConfig};
pub use fixed::{Fixed, RollingSum};
pub use harness::{Behavior, Scenario, ScenarioMetrics, ScenarioReport};
pub use model::{count_serving_sets, FleetState, ReplicaRef, ReplicaStatus};
pub use scheduler::{Admission, Scheduler, ServingSet, Unavailable};
pub use tag::{RequestTag, TagKey};
