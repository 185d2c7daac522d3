#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clock;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod manifold;

pub use error::{Error, Result};
pub mod controller;
pub mod factors;
pub mod sim;
pub mod vehicle;
