//! Core library for a simulated decentralized EHR overlay.
//!
//! A permissioned, hash-chained ledger is replicated across a set of
//! institution nodes by a multi-Paxos engine with a stable leader. Nodes
//! anonymize their local records, train local models, register model
//! fingerprints on the ledger (parameters never leave the owning node
//! unsolicited), and perform vote-gated rolling updates via federated
//! averaging. Everything runs on a seeded discrete-event network simulator,
//! so a given seed and configuration always reproduce the same trace.
//!
//! Module map:
//!
//! - [`netsim`]: virtual clock, event queue, link profiles, fault injection
//! - [`ledger`]: append-only hash chain, model registry queries
//! - [`consensus`]: multi-Paxos replicated log with heartbeats and joins
//! - [`institution`]: anonymization, model exchange, federation scenarios
//! - [`trainer`]: toy logistic learner plus a device-calibrated cost model
//! - [`parallel`]: batch helpers (rayon-backed unless the `parallel`
//!   feature is disabled)

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod consensus;
pub mod institution;
pub mod ledger;
pub mod netsim;
pub mod parallel;
pub mod seed;
pub mod trainer;

/// Identifier of a participating medical institution.
///
/// Institutions are indexed positions in the network roster; the id doubles
/// as the node address on the simulated network.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct InstitutionId(pub u32);

impl InstitutionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for InstitutionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for InstitutionId {
    fn from(v: u32) -> Self {
        InstitutionId(v)
    }
}
