// SPDX-License-Identifier: Apache-2.0

pub mod adapter;
pub mod caption;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod extract;
pub mod filter;
pub mod gce;
pub mod generate;
pub mod hashing;
pub mod nn;
pub mod pipeline;
pub mod pool;
pub mod shapes;

pub use error::{Error, Result};
