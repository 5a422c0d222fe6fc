//! Optimal mapping search for single-Einsum tensor workloads on a memory
//! hierarchy.
//!
//! The search enumerates dataplacements (which memory levels keep which
//! tensor tiles, and in what order), generates only the non-redundant,
//! helpful-loop dataflows for each, compiles a curried symbolic cost model per
//! (dataplacement, dataflow) pair, and explores tile shapes with
//! partial-shape Pareto pruning. An exhaustive oracle over the unpruned
//! mapspace checks the result on small instances.

pub mod arch;
pub mod config;
pub mod doc;
pub mod error;
pub mod explorer;
pub mod looptree;
pub mod mapspace;
pub mod model;
pub mod oracle;
pub mod rational;
pub mod report;
pub mod symexpr;
pub mod workload;

pub use error::{Error, Result};
pub use rational::Rational;
