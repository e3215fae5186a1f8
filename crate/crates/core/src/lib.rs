//! Differentially private stream monitoring.
//!
//! A specification is parsed ([`speclang`]), checked and given a timing
//! model ([`semantics`]), analysed for per-event sensitivity
//! ([`sensitivity`]), equipped with noise barriers ([`privacy`]) and then
//! evaluated over traces ([`runtime`]).

pub mod rational;
pub mod speclang;
pub mod semantics;
pub mod sensitivity;
pub mod runtime;
pub mod privacy;
pub mod cli;
