//! GNN-embedded pore network model.
//!
//! An edge-level message-passing network predicts per-throat hydraulic
//! conductances, a pore-network flow solver turns them into bulk permeability,
//! and a discrete adjoint carries the permeability loss back to the network
//! weights so the conductance model trains from one scalar target per sample.

pub mod adjoint;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod network;
pub mod solver;
pub mod sparse;
pub mod training;

pub use error::{Error, ErrorKind, Result};
