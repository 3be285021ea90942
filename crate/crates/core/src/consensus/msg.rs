//! Protocol message schema. Every message names its kind, slot and ballot
//! where applicable, and a short value digest; the netsim trace records
//! exactly these summaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ledger::{fingerprint, CanonicalEncode, Digest, TransactionBody, TransactionRecord};
use crate::netsim::DeviceClass;
use crate::InstitutionId;

/// Proposal identifier ordered lexicographically by (round, node).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Ballot {
    pub round: u64,
    pub node: InstitutionId,
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.round, self.node)
    }
}

/// A transaction as submitted for consensus: what to append and who asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerCommand {
    pub body: TransactionBody,
    pub proposer: InstitutionId,
}

impl CanonicalEncode for LedgerCommand {
    fn encode(&self, out: &mut Vec<u8>) {
        self.body.encode(out);
        self.proposer.encode(out);
    }
}

impl LedgerCommand {
    pub fn digest(&self) -> Digest {
        fingerprint(&self.canonical_bytes())
    }

    /// Short digest identifying the command in traces.
    pub fn digest_prefix(&self) -> String {
        self.digest().to_hex()[..8].to_string()
    }
}

/// A replicated-log value: a command, or a no-op used by a new leader to
/// fill gaps left by a predecessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Noop,
    Command(LedgerCommand),
}

impl Value {
    pub fn as_command(&self) -> Option<&LedgerCommand> {
        match self {
            Value::Noop => None,
            Value::Command(c) => Some(c),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Noop => f.write_str("noop"),
            Value::Command(c) => write!(f, "{}:{}", c.body.kind(), c.digest_prefix()),
        }
    }
}

/// Accepted-state entry carried inside a Promise.
#[derive(Debug, Clone, PartialEq)]
pub struct PromisedEntry {
    pub slot: u64,
    pub ballot: Ballot,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConsensusMsg {
    /// Phase 1: claim leadership for all slots at or after `from_slot`.
    Prepare { ballot: Ballot, from_slot: u64 },
    /// Phase 1 grant, carrying previously accepted values the new leader
    /// must re-propose.
    Promise {
        ballot: Ballot,
        accepted: Vec<PromisedEntry>,
    },
    PrepareNack { promised: Ballot },
    /// Phase 2: bind `value` to `slot` under `ballot`.
    Accept {
        ballot: Ballot,
        slot: u64,
        value: Value,
    },
    Accepted { ballot: Ballot, slot: u64 },
    AcceptNack { promised: Ballot, slot: u64 },
    /// Phase 3: `value` is chosen at `slot`; replicas apply in slot order.
    Decide { slot: u64, value: Value },
    /// Relay of a non-leader proposal to the current leader.
    Forward { command: LedgerCommand },
    Heartbeat { ballot: Ballot },
    /// Sent to the bootstrap contact by an institution that wants in.
    JoinRequest {
        institution: InstitutionId,
        device_class: DeviceClass,
    },
    /// Full decided history, sent to a freshly admitted member.
    LedgerSync { decided: Vec<Value> },
}

impl ConsensusMsg {
    pub fn summary(&self) -> String {
        match self {
            ConsensusMsg::Prepare { ballot, from_slot } => {
                format!("prepare b={ballot} from_slot={from_slot}")
            }
            ConsensusMsg::Promise { ballot, accepted } => {
                format!("promise b={ballot} carried={}", accepted.len())
            }
            ConsensusMsg::PrepareNack { promised } => format!("prepare-nack promised={promised}"),
            ConsensusMsg::Accept { ballot, slot, value } => {
                format!("accept s={slot} b={ballot} v={value}")
            }
            ConsensusMsg::Accepted { ballot, slot } => format!("accepted s={slot} b={ballot}"),
            ConsensusMsg::AcceptNack { promised, slot } => {
                format!("accept-nack s={slot} promised={promised}")
            }
            ConsensusMsg::Decide { slot, value } => format!("decide s={slot} v={value}"),
            ConsensusMsg::Forward { command } => {
                format!("forward {}:{}", command.body.kind(), command.digest_prefix())
            }
            ConsensusMsg::Heartbeat { ballot } => format!("heartbeat b={ballot}"),
            ConsensusMsg::JoinRequest {
                institution,
                device_class,
            } => format!("join-request inst={institution} device={device_class}"),
            ConsensusMsg::LedgerSync { decided } => format!("ledger-sync n={}", decided.len()),
        }
    }
}

/// Timer payloads owned by the consensus node. Epoch counters invalidate
/// timers from superseded roles or rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimerKind {
    /// Leader heartbeat cadence.
    HeartbeatTick { term: u64 },
    /// Follower liveness check: elect if no leader signal since scheduled.
    ElectionCheck { epoch: u64 },
    /// Proposer progress check: re-prepare or re-send accepts.
    ProposalRetry { epoch: u64 },
    /// Scheduled moment for a non-member to request admission.
    JoinStart,
}

impl TimerKind {
    pub fn summary(&self) -> String {
        match self {
            TimerKind::HeartbeatTick { term } => format!("heartbeat-tick term={term}"),
            TimerKind::ElectionCheck { epoch } => format!("election-check epoch={epoch}"),
            TimerKind::ProposalRetry { epoch } => format!("proposal-retry epoch={epoch}"),
            TimerKind::JoinStart => "join-start".to_string(),
        }
    }
}

/// What a node asks the driver to do after handling one event.
#[derive(Debug, Clone)]
pub enum NodeEffect {
    Send {
        to: InstitutionId,
        msg: ConsensusMsg,
    },
    SetTimer {
        delay_ms: f64,
        kind: TimerKind,
    },
    /// A command was applied to this node's ledger.
    Applied { record: TransactionRecord },
    /// A decided command failed deterministic validation and was skipped
    /// on every replica alike.
    Skipped { command: LedgerCommand, reason: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ballots_order_by_round_then_node() {
        let low = Ballot { round: 1, node: InstitutionId(9) };
        let high = Ballot { round: 2, node: InstitutionId(0) };
        assert!(low < high);

        let a = Ballot { round: 2, node: InstitutionId(1) };
        let b = Ballot { round: 2, node: InstitutionId(3) };
        assert!(a < b);
    }
}
