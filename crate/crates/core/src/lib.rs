// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod data;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod lasso;
pub mod linalg;
pub mod registry;
pub mod scanners;
pub mod search;
pub mod simgen;

pub use data::{Dataset, PrefixSummaries};
pub use error::{Result, ScanError};
