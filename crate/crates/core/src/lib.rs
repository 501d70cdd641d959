//! Dyadic flow tents over convex finite-type model domains in `C^n`.

pub mod domain;
pub mod extremal;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod numeric;
pub mod tents;
pub mod bergman;
pub mod boundary;
pub mod sparse;
pub mod suite;
pub mod cli;

pub use domain::{DomainKind, DomainSpec, Point};
pub use error::{Error, Result};
