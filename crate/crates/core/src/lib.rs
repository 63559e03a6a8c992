// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod harness;
pub mod numerics;
pub mod plurdec;
pub mod sae;
pub mod steering;
pub mod tinylm;

pub use error::{Error, Result};
