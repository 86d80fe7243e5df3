//! Test oracles shared by the integration tests of this crate and the
//! acceptance suite. Nothing here calls into the code under test beyond its
//! plain data types.
#![allow(dead_code)]

pub mod crash;
pub mod filter_gen;
pub mod geb_ref;
pub mod oracle;
