//! Operator surface for the private set-cardinality protocol: config files,
//! observation feeds, the socket transport, party daemons, the in-process
//! simulator front end, and the adversary scenario runner. Everything
//! protocol-critical lives in `psc-core`; this crate only adds IO.

pub mod config;
pub mod feed;
pub mod json;
pub mod net;
pub mod run;

use std::sync::OnceLock;
use std::time::Instant;

/// Monotonic microseconds since first call, for phase timing reports.
pub fn monotonic_micros() -> u64 {
    static START: OnceLock<Instant> = OnceLock::new();
    let start = *START.get_or_init(Instant::now);
    Instant::now().duration_since(start).as_micros() as u64
}
