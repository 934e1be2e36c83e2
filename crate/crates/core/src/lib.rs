//! Deterministic discrete-event simulation core for C-sync, a clustering-based
//! decentralized time synchronization protocol with byzantine fault resilience,
//! together with a GTSP-style neighbor-averaging baseline.
//!
//! The crate is `no_std` (with `alloc`) so the simulation core stays free of
//! IO and host dependencies; scenario configuration, file formats and the CLI
//! live in the companion `csync-cli` crate.
//!
//! Module map:
//!
//! - [`clock`]: per-node hardware oscillator pair (crystal + DCO) and the
//!   logical clock arithmetic (rate, offset, neighbor averaging, relative
//!   rates).
//! - [`engine`]: event queue, broadcast radio channel with CSMA-CA, collisions,
//!   per-node power accounting, trace emission.
//! - [`protocol`]: the C-sync node state machine (clustering and consensus
//!   phases, role election, slot assignment, local centers).
//! - [`resilience`]: fault injection specs and the byzantine
//!   detection/correction machinery.
//! - [`gtsp`]: the neighbor-averaging baseline protocol on the same engine.
//! - [`metrics`]: synchronization error sampling, the hop-error bound, and
//!   report summaries.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod clock;
pub mod engine;
pub mod gtsp;
pub mod message;
pub mod metrics;
pub mod protocol;
pub mod resilience;
pub mod rng;
pub mod topology;

use core::fmt;

/// A node address: an 8-byte unique hardware identifier.
///
/// Addresses cannot be forged (they model hardware MAC addresses), which the
/// resilience machinery relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Simulation time in integer nanoseconds of true (wall) time.
///
/// Nanosecond granularity keeps sub-microsecond propagation delays exact while
/// a 64-bit counter still covers ~584 years of simulated time.
pub type SimNs = u64;

/// Convenience: microseconds expressed as nanoseconds.
pub const fn us(micros: u64) -> SimNs {
    micros * 1_000
}

/// Convenience: milliseconds expressed as nanoseconds.
pub const fn ms(millis: u64) -> SimNs {
    millis * 1_000_000
}

/// Convenience: seconds expressed as nanoseconds.
pub const fn secs(s: u64) -> SimNs {
    s * 1_000_000_000
}
