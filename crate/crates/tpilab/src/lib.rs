// SPDX-License-Identifier: Apache-2.0
//! File formats, artifacts and the `tpilab` command line built on
//! [`tpilab_core`].

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod insert;
pub mod report;
pub mod selfcheck;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
