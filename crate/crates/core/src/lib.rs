//! Simulation and learning for sliced network resources.
//!
//! Requests of several traffic classes arrive over time and queue in
//! per-class buffers for two resources, link bandwidth and data-center
//! compute. At each decision point an allocator splits a fixed budget of
//! each resource across the classes; unserved demand carries over and is
//! penalized together with the reservation itself. The crate provides the
//! environment ([`env`]), workload generation and trace ingestion
//! ([`workload`]), a policy-gradient learner with small dependency-free
//! neural networks ([`policy`], [`learner`]), and the static equal-split
//! allocator it is measured against ([`baseline`]).
//!
//! Everything is deterministic given three seeds: workload, network
//! initialization, and exploration.

pub mod baseline;
pub mod env;
pub mod error;
pub mod learner;
pub mod policy;
pub mod workload;

pub use env::{Allocation, Budgets, Mode, Resource, SliceEnv};
pub use error::{Error, Result};
pub use workload::{ClassSpec, EpisodeTrace, RequestEvent};
