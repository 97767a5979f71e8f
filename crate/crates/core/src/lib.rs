//! Decentralized flow matching at desk scale.
//!
//! A dataset is split into `K` disjoint clusters, one expert denoiser is
//! trained per cluster with no communication between experts, and a router
//! trained on its own learns which cluster a noisy point came from. At
//! sampling time the router weights (or selects) expert velocities. The
//! [`flow`] module supplies exact analytical versions of every learned
//! quantity, so the ensemble can be checked against the flow of a single
//! model trained on all the data.

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod flow;
pub mod io;
pub mod numerics;
pub mod partition;
pub mod training;

pub use error::{Error, Result};
