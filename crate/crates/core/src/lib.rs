// SPDX-License-Identifier: Apache-2.0
//! Test point insertion for random-pattern testability.
//!
//! The crate converts gate-level netlists into and-inverter graphs, measures
//! stuck-at test coverage under pseudo-random patterns, estimates COP
//! testability, and trains a graph-based deep Q-network that inserts control
//! and observation points to raise coverage.
//!
//! It is `no_std` (with `alloc`). The `std` feature, on by default, only
//! enables runtime CPU feature detection in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod aig;
pub mod cop;
pub mod dqn;
pub mod env;
pub mod gnn;
pub mod gradcheck;
pub mod netlist;
pub mod nn;
pub mod oracle;
pub mod pretrain;
pub mod sim;
pub mod trainer;

pub use aig::{AigGraph, NodeId, NodeKind, TpType};
pub use env::{Action, Episode};
pub use netlist::{GateKind, Netlist};
