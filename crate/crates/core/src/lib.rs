//! An embedded read-aware LSM-tree key-value store.
//!
//! The tree maps its levels onto simulated heterogeneous storage tiers
//! (NVM / TLC / QLC) and keeps frequently-read keys in the upper levels:
//! a bounded clock [`tracker`] observes point reads, the [`mapper`]
//! converts the clock-value distribution into a pinning policy, and the
//! [`placer`] applies that policy during compaction, retaining popular
//! keys in the upper level and pulling popular keys up from the lower
//! level while preserving version ordering down the tree.
//!
//! Two supporting components round out the crate: [`bench`], a YCSB-style
//! workload generator and metrics harness, and [`costsim`], an analytical
//! simulator of the cost/latency trade-off across level-to-tier
//! configurations with endurance-driven spare-capacity provisioning.

pub mod bench;
pub mod config;
pub mod costsim;
pub mod engine;
pub mod error;
pub mod mapper;
pub mod placer;
pub mod tiers;
pub mod tracker;

pub use config::Options;
pub use engine::Engine;
pub use error::{Error, Result};
