//! Core of the private set-cardinality protocol: the prime-order group layer,
//! exponential-ElGamal counters, the proof systems, accountable consensus
//! broadcast, the deterministic network simulator, and the party state
//! machines for both roles.
//!
//! The crate is `no_std` (alloc required); everything that needs an operating
//! system (sockets, clocks, files, CLI) lives in the companion `psc` crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod broadcast;
pub mod elgamal;
pub mod group;
pub mod protocol;
pub mod transport;
pub mod wire;
pub mod zkp;
