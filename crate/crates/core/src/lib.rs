//! Hybrid workflow engine.
//!
//! Workflows are declarative DAGs ([`workflow`]) translated into token-driven
//! dataflow graphs ([`dataflow`]) and executed across mutually isolated sites.
//! Every byte that moves between sites is relayed through the controller by
//! the [`data`] manager.

pub mod cancel;
pub mod connectors;
pub mod data;
pub mod dataflow;
pub mod deploy;
pub mod grid;
pub mod provenance;
pub mod workflow;
