//! Design-space exploration for transformer attention heads on modeled
//! multi-core accelerators.
//!
//! The pipeline mirrors a five-step flow: split layers into computation nodes
//! ([`depgraph`]), derive node dependencies ([`depgraph`]), cost each node on
//! each core ([`mapper`]), allocate layers to cores with a genetic search
//! ([`allocator`]) and list-schedule the nodes while tracing active feature
//! memory ([`scheduler`]). [`analysis`] holds the closed-form footprint
//! formulas that the simulation is checked against.

pub mod allocator;
pub mod analysis;
pub mod depgraph;
pub mod error;
pub mod explore;
pub mod export;
pub mod hwmodel;
pub mod mapper;
pub mod pipeline;
pub mod scheduler;
pub mod workload;

pub use error::{Error, Result};
