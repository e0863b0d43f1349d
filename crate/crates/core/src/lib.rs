//! Multi-domain click-through-rate model with shared and domain-specific
//! experts, confidence-weighted pseudo-domain augmentation of the sparse
//! domains, and per-layer domain scaling of the shared experts.
//!
//! Everything is written against a small dense kernel ([`numeric`]) with
//! explicit backward passes; there is no autodiff tape.

pub mod data;
pub mod error;
pub mod isct;
pub mod model;
pub mod numeric;
pub mod train;

pub use error::{Error, Result};
