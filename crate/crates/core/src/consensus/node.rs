//! Per-node multi-Paxos state machine.
//!
//! Handlers are pure state transitions: (state, message or timer) to
//! (state', effects). The netsim driver owns delivery; nothing here touches
//! another node or the clock directly, which keeps every schedule
//! replayable.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::msg::{
    Ballot, ConsensusMsg, LedgerCommand, NodeEffect, PromisedEntry, TimerKind, Value,
};
use crate::ledger::{CommitPolicy, Ledger, TransactionBody};
use crate::netsim::DeviceClass;
use crate::InstitutionId;

/// Protocol timing and membership parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub leader_interval_ms: f64,
    pub vote_round_delay_ms: f64,
    pub join_interval_ms: f64,
    /// Followers elect after this many silent leader intervals.
    pub election_timeout_factor: f64,
    pub initial_members: Vec<InstitutionId>,
    pub commit_policy: CommitPolicy,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            leader_interval_ms: 30.0,
            vote_round_delay_ms: 100.0,
            join_interval_ms: 10_000.0,
            election_timeout_factor: 4.0,
            initial_members: vec![InstitutionId(0)],
            commit_policy: CommitPolicy::default(),
        }
    }
}

impl ConsensusConfig {
    pub fn election_timeout_ms(&self) -> f64 {
        self.leader_interval_ms * self.election_timeout_factor
    }

    /// First listed initial member; bootstrap contact and first leader.
    pub fn initializer(&self) -> InstitutionId {
        self.initial_members[0]
    }

    fn validate(&self) {
        assert!(!self.initial_members.is_empty(), "need an initializer");
        assert!(self.leader_interval_ms > 0.0, "leader interval must be positive");
        assert!(self.vote_round_delay_ms > 0.0, "vote round delay must be positive");
        assert!(self.join_interval_ms > 0.0, "join interval must be positive");
        assert!(self.election_timeout_factor > 0.0, "timeout factor must be positive");
    }
}

struct SlotState {
    value: Value,
    acks: BTreeSet<InstitutionId>,
}

enum Role {
    Follower,
    Candidate {
        ballot: Ballot,
        promises: BTreeMap<InstitutionId, Vec<PromisedEntry>>,
    },
    Leader {
        ballot: Ballot,
        next_slot: u64,
        inflight: BTreeMap<u64, SlotState>,
    },
}

/// One institution's consensus participant: acceptor always, proposer when
/// leading, learner for the replicated log feeding its ledger replica.
pub struct ConsensusNode {
    id: InstitutionId,
    device_class: DeviceClass,
    config: ConsensusConfig,
    ledger: Ledger,
    /// False until admitted (initial members start true; joiners flip on
    /// ledger sync).
    active: bool,
    role: Role,
    leader_hint: Option<InstitutionId>,
    promised: Option<Ballot>,
    accepted: BTreeMap<u64, (Ballot, Value)>,
    decided: BTreeMap<u64, Value>,
    next_apply: u64,
    max_round_seen: u64,
    election_epoch: u64,
    retry_epoch: u64,
    /// Role-change counter; heartbeat chains from stale terms go dead.
    term: u64,
    pending: VecDeque<LedgerCommand>,
}

impl ConsensusNode {
    pub fn new(id: InstitutionId, device_class: DeviceClass, config: ConsensusConfig) -> Self {
        config.validate();
        let ledger = Ledger::new(config.initial_members.clone())
            .with_commit_policy(config.commit_policy);
        ConsensusNode {
            id,
            device_class,
            config,
            ledger,
            active: false,
            role: Role::Follower,
            leader_hint: None,
            promised: None,
            accepted: BTreeMap::new(),
            decided: BTreeMap::new(),
            next_apply: 0,
            max_round_seen: 0,
            election_epoch: 0,
            retry_epoch: 0,
            term: 0,
            pending: VecDeque::new(),
        }
    }

    /// Brings an initial member online at time zero. The initializer starts
    /// as leader at round 0; everyone else follows it.
    pub fn activate_initial(&mut self) -> Vec<NodeEffect> {
        self.active = true;
        if self.id == self.config.initializer() {
            let ballot = Ballot { round: 0, node: self.id };
            self.raise_promised(ballot);
            self.term += 1;
            self.role = Role::Leader {
                ballot,
                next_slot: 0,
                inflight: BTreeMap::new(),
            };
            vec![self.schedule_heartbeat()]
        } else {
            self.leader_hint = Some(self.config.initializer());
            vec![self.schedule_election_check()]
        }
    }

    pub fn id(&self) -> InstitutionId {
        self.id
    }

    pub fn device_class(&self) -> DeviceClass {
        self.device_class
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn is_leader(&self) -> bool {
        matches!(self.role, Role::Leader { .. })
    }

    pub fn leader_ballot(&self) -> Option<Ballot> {
        match &self.role {
            Role::Leader { ballot, .. } => Some(*ballot),
            _ => None,
        }
    }

    pub fn promised(&self) -> Option<Ballot> {
        self.promised
    }

    /// Chosen values this node has learned, by slot.
    pub fn decided_values(&self) -> &BTreeMap<u64, Value> {
        &self.decided
    }

    /// Next log slot awaiting application.
    pub fn next_apply(&self) -> u64 {
        self.next_apply
    }

    pub fn members(&self) -> BTreeSet<InstitutionId> {
        self.ledger.members()
    }

    fn quorum(&self) -> usize {
        self.members().len() / 2 + 1
    }

    fn peers(&self) -> Vec<InstitutionId> {
        self.members().into_iter().filter(|m| *m != self.id).collect()
    }

    fn raise_promised(&mut self, ballot: Ballot) {
        debug_assert!(
            self.promised.is_none_or(|p| ballot >= p),
            "promised ballot must never decrease"
        );
        if self.promised.is_none_or(|p| ballot > p) {
            self.promised = Some(ballot);
        }
        self.observe_round(ballot.round);
    }

    fn observe_round(&mut self, round: u64) {
        self.max_round_seen = self.max_round_seen.max(round);
    }

    fn schedule_heartbeat(&self) -> NodeEffect {
        NodeEffect::SetTimer {
            delay_ms: self.config.leader_interval_ms,
            kind: TimerKind::HeartbeatTick { term: self.term },
        }
    }

    fn schedule_election_check(&mut self) -> NodeEffect {
        self.election_epoch += 1;
        NodeEffect::SetTimer {
            delay_ms: self.config.election_timeout_ms(),
            kind: TimerKind::ElectionCheck { epoch: self.election_epoch },
        }
    }

    fn schedule_retry(&mut self) -> NodeEffect {
        self.retry_epoch += 1;
        NodeEffect::SetTimer {
            delay_ms: self.config.vote_round_delay_ms,
            kind: TimerKind::ProposalRetry { epoch: self.retry_epoch },
        }
    }

    fn broadcast(&self, msg: ConsensusMsg) -> Vec<NodeEffect> {
        self.peers()
            .into_iter()
            .map(|to| NodeEffect::Send { to, msg: msg.clone() })
            .collect()
    }

    /// Leader liveness signal observed; push the election horizon out.
    fn leader_seen(&mut self, leader: InstitutionId) -> Vec<NodeEffect> {
        self.leader_hint = Some(leader);
        let mut effects = vec![self.schedule_election_check()];
        effects.extend(self.flush_pending());
        effects
    }

    fn flush_pending(&mut self) -> Vec<NodeEffect> {
        let mut effects = Vec::new();
        if self.is_leader() {
            while let Some(command) = self.pending.pop_front() {
                let (_, mut fx) = self.submit_as_leader(command);
                effects.append(&mut fx);
            }
        } else if let Some(leader) = self.leader_hint {
            while let Some(command) = self.pending.pop_front() {
                effects.push(NodeEffect::Send {
                    to: leader,
                    msg: ConsensusMsg::Forward { command },
                });
            }
        }
        effects
    }

    fn step_down(&mut self) -> Vec<NodeEffect> {
        if let Role::Leader { inflight, .. } = &mut self.role {
            // Undecided proposals may be recovered by the next leader; keep
            // copies queued anyway. Replays are deduplicated at append.
            let mut requeue: Vec<LedgerCommand> = inflight
                .values()
                .filter_map(|s| s.value.as_command().cloned())
                .collect();
            self.pending.extend(requeue.drain(..));
        }
        self.role = Role::Follower;
        self.leader_hint = None;
        self.term += 1;
        self.retry_epoch += 1;
        vec![self.schedule_election_check()]
    }

    /// Proposes `command`. Leaders bind it to the next free slot and return
    /// that slot; everyone else relays toward the leader.
    pub fn submit(&mut self, command: LedgerCommand) -> (Option<u64>, Vec<NodeEffect>) {
        if self.is_leader() {
            let (slot, effects) = self.submit_as_leader(command);
            return (Some(slot), effects);
        }
        match self.leader_hint {
            Some(leader) if leader != self.id => (
                None,
                vec![NodeEffect::Send {
                    to: leader,
                    msg: ConsensusMsg::Forward { command },
                }],
            ),
            _ => {
                self.pending.push_back(command);
                (None, Vec::new())
            }
        }
    }

    fn submit_as_leader(&mut self, command: LedgerCommand) -> (u64, Vec<NodeEffect>) {
        let value = Value::Command(command);
        let Role::Leader { ballot, next_slot, .. } = &self.role else {
            unreachable!("submit_as_leader requires leadership");
        };
        let (ballot, slot) = (*ballot, *next_slot);
        let mut effects = self.open_slot(slot, ballot, value);
        if let Role::Leader { next_slot, .. } = &mut self.role {
            *next_slot = slot + 1;
        }
        effects.push(self.schedule_retry());
        (slot, effects)
    }

    /// Phase 2 for one slot: record own accept, broadcast Accept, and
    /// decide immediately when this node alone is a quorum.
    fn open_slot(&mut self, slot: u64, ballot: Ballot, value: Value) -> Vec<NodeEffect> {
        let _ = self.on_accept(ballot, slot, value.clone());
        let mut effects = self.broadcast(ConsensusMsg::Accept { ballot, slot, value: value.clone() });
        if let Role::Leader { inflight, .. } = &mut self.role {
            inflight.insert(
                slot,
                SlotState {
                    value,
                    acks: BTreeSet::from([self.id]),
                },
            );
        }
        effects.extend(self.maybe_decide(slot));
        effects
    }

    /// Phase 1 acceptor step: grant iff the ballot beats every prior
    /// promise, returning accepted values at or after `from_slot`.
    pub fn on_prepare(&mut self, ballot: Ballot, from_slot: u64) -> ConsensusMsg {
        self.observe_round(ballot.round);
        if self.promised.is_none_or(|p| ballot > p) {
            self.raise_promised(ballot);
            let accepted = self
                .accepted
                .range(from_slot..)
                .map(|(slot, (ballot, value))| PromisedEntry {
                    slot: *slot,
                    ballot: *ballot,
                    value: value.clone(),
                })
                .collect();
            ConsensusMsg::Promise { ballot, accepted }
        } else {
            ConsensusMsg::PrepareNack { promised: self.promised.expect("promised is set") }
        }
    }

    /// Phase 2 acceptor step: accept iff the ballot is at least the
    /// current promise, raising the promise when it is higher.
    pub fn on_accept(&mut self, ballot: Ballot, slot: u64, value: Value) -> ConsensusMsg {
        self.observe_round(ballot.round);
        if self.promised.is_none_or(|p| ballot >= p) {
            self.raise_promised(ballot);
            self.accepted.insert(slot, (ballot, value));
            ConsensusMsg::Accepted { ballot, slot }
        } else {
            ConsensusMsg::AcceptNack {
                promised: self.promised.expect("promised is set"),
                slot,
            }
        }
    }

    /// Phase 3 bookkeeping at the proposer: count acks, decide at quorum.
    pub fn on_accepted(&mut self, from: InstitutionId, ballot: Ballot, slot: u64) -> Vec<NodeEffect> {
        match &mut self.role {
            Role::Leader { ballot: own, inflight, .. } if *own == ballot => {
                if let Some(state) = inflight.get_mut(&slot) {
                    state.acks.insert(from);
                }
                self.maybe_decide(slot)
            }
            _ => Vec::new(),
        }
    }

    fn maybe_decide(&mut self, slot: u64) -> Vec<NodeEffect> {
        let quorum = self.quorum();
        let value = match &mut self.role {
            Role::Leader { inflight, .. } => {
                let Some(state) = inflight.get(&slot) else {
                    return Vec::new();
                };
                if state.acks.len() < quorum {
                    return Vec::new();
                }
                inflight.remove(&slot).expect("entry present").value
            }
            _ => return Vec::new(),
        };
        let mut effects = self.broadcast(ConsensusMsg::Decide { slot, value: value.clone() });
        effects.extend(self.learn(slot, value));
        effects
    }

    /// Records a chosen value and applies everything now contiguous.
    fn learn(&mut self, slot: u64, value: Value) -> Vec<NodeEffect> {
        if let Some(existing) = self.decided.get(&slot) {
            debug_assert_eq!(existing, &value, "two values chosen for slot {slot}");
            return Vec::new();
        }
        self.decided.insert(slot, value);
        self.apply_ready()
    }

    fn apply_ready(&mut self) -> Vec<NodeEffect> {
        let mut effects = Vec::new();
        while let Some(value) = self.decided.get(&self.next_apply).cloned() {
            self.next_apply += 1;
            let Value::Command(command) = value else {
                continue;
            };
            match self.ledger.append(command.body.clone(), command.proposer) {
                Ok(record) => {
                    let record = record.clone();
                    if let TransactionBody::Join { institution, .. } = &record.body {
                        if self.is_leader() {
                            effects.push(NodeEffect::Send {
                                to: *institution,
                                msg: ConsensusMsg::LedgerSync { decided: self.decided_prefix() },
                            });
                        }
                    }
                    effects.push(NodeEffect::Applied { record });
                }
                Err(err) => effects.push(NodeEffect::Skipped {
                    command,
                    reason: err.to_string(),
                }),
            }
        }
        effects
    }

    fn decided_prefix(&self) -> Vec<Value> {
        (0..self.next_apply)
            .map(|slot| self.decided[&slot].clone())
            .collect()
    }

    pub fn on_message(&mut self, from: InstitutionId, msg: ConsensusMsg) -> Vec<NodeEffect> {
        match msg {
            ConsensusMsg::Prepare { ballot, from_slot } => {
                let reply = self.on_prepare(ballot, from_slot);
                let mut effects = Vec::new();
                if matches!(reply, ConsensusMsg::Promise { .. }) && ballot.node != self.id {
                    // Someone else is electing with a better claim; yield.
                    if self.is_leader() || self.is_candidate_below(ballot) {
                        effects.extend(self.step_down());
                    } else {
                        effects.push(self.schedule_election_check());
                    }
                    self.leader_hint = None;
                }
                effects.push(NodeEffect::Send { to: from, msg: reply });
                effects
            }
            ConsensusMsg::Promise { ballot, accepted } => self.handle_promise(from, ballot, accepted),
            ConsensusMsg::PrepareNack { promised } => {
                self.observe_round(promised.round);
                match self.role {
                    Role::Candidate { .. } => vec![self.schedule_retry()],
                    _ => Vec::new(),
                }
            }
            ConsensusMsg::Accept { ballot, slot, value } => {
                let reply = self.on_accept(ballot, slot, value);
                let mut effects = Vec::new();
                if matches!(reply, ConsensusMsg::Accepted { .. }) && ballot.node != self.id {
                    if self.is_leader() || self.is_candidate_below(ballot) {
                        effects.extend(self.step_down());
                    }
                    effects.extend(self.leader_seen(ballot.node));
                }
                effects.push(NodeEffect::Send { to: from, msg: reply });
                effects
            }
            ConsensusMsg::Accepted { ballot, slot } => self.on_accepted(from, ballot, slot),
            ConsensusMsg::AcceptNack { promised, slot: _ } => {
                self.observe_round(promised.round);
                let preempted = match &self.role {
                    Role::Leader { ballot, .. } => promised > *ballot,
                    _ => false,
                };
                if preempted {
                    self.step_down()
                } else {
                    Vec::new()
                }
            }
            ConsensusMsg::Decide { slot, value } => self.learn(slot, value),
            ConsensusMsg::Forward { command } => self.route(command),
            ConsensusMsg::Heartbeat { ballot } => self.handle_heartbeat(from, ballot),
            ConsensusMsg::JoinRequest { institution, device_class } => self.route(LedgerCommand {
                body: TransactionBody::Join { institution, device_class },
                proposer: self.id,
            }),
            ConsensusMsg::LedgerSync { decided } => self.handle_sync(from, decided),
        }
    }

    fn is_candidate_below(&self, ballot: Ballot) -> bool {
        matches!(&self.role, Role::Candidate { ballot: own, .. } if *own < ballot)
    }

    /// Leader proposes, follower relays, orphan queues.
    fn route(&mut self, command: LedgerCommand) -> Vec<NodeEffect> {
        if self.is_leader() {
            return self.submit_as_leader(command).1;
        }
        match self.leader_hint {
            Some(leader) if leader != self.id => vec![NodeEffect::Send {
                to: leader,
                msg: ConsensusMsg::Forward { command },
            }],
            _ => {
                self.pending.push_back(command);
                Vec::new()
            }
        }
    }

    fn handle_promise(
        &mut self,
        from: InstitutionId,
        ballot: Ballot,
        accepted: Vec<PromisedEntry>,
    ) -> Vec<NodeEffect> {
        match &mut self.role {
            Role::Candidate { ballot: own, promises } if *own == ballot => {
                promises.insert(from, accepted);
            }
            _ => return Vec::new(),
        }
        self.try_ascend()
    }

    fn try_ascend(&mut self) -> Vec<NodeEffect> {
        let quorum = self.quorum();
        let (ballot, promises) = match &self.role {
            Role::Candidate { ballot, promises } if promises.len() >= quorum => {
                (*ballot, promises.clone())
            }
            _ => return Vec::new(),
        };

        // Highest-ballot accepted value per slot across the quorum; those
        // may already be chosen, so they must be re-proposed as-is.
        let mut recovered: BTreeMap<u64, (Ballot, Value)> = BTreeMap::new();
        for entry in promises.values().flatten() {
            if entry.slot < self.next_apply {
                continue;
            }
            match recovered.get(&entry.slot) {
                Some((b, _)) if *b >= entry.ballot => {}
                _ => {
                    recovered.insert(entry.slot, (entry.ballot, entry.value.clone()));
                }
            }
        }
        let horizon = recovered
            .keys()
            .next_back()
            .map_or(self.next_apply, |top| top + 1)
            .max(self.decided.keys().next_back().map_or(0, |top| top + 1))
            .max(self.next_apply);

        self.term += 1;
        self.role = Role::Leader {
            ballot,
            next_slot: horizon,
            inflight: BTreeMap::new(),
        };
        let mut effects = self.broadcast(ConsensusMsg::Heartbeat { ballot });
        effects.push(self.schedule_heartbeat());

        // Re-drive every open slot: recovered value, already-known decision,
        // or a gap-filling no-op.
        for slot in self.next_apply..horizon {
            let value = if let Some(value) = self.decided.get(&slot) {
                value.clone()
            } else if let Some((_, value)) = recovered.get(&slot) {
                value.clone()
            } else {
                Value::Noop
            };
            effects.extend(self.open_slot(slot, ballot, value));
        }
        if let Role::Leader { next_slot, .. } = &mut self.role {
            *next_slot = (*next_slot).max(horizon);
        }
        effects.push(self.schedule_retry());
        effects.extend(self.flush_pending());
        effects
    }

    fn handle_heartbeat(&mut self, from: InstitutionId, ballot: Ballot) -> Vec<NodeEffect> {
        self.observe_round(ballot.round);
        if self.promised.is_some_and(|p| ballot < p) {
            return Vec::new();
        }
        let mut effects = Vec::new();
        match &self.role {
            Role::Leader { ballot: own, .. } if *own < ballot => effects.extend(self.step_down()),
            Role::Leader { .. } => return Vec::new(),
            Role::Candidate { ballot: own, .. } if *own <= ballot => {
                self.role = Role::Follower;
                self.term += 1;
                self.retry_epoch += 1;
            }
            _ => {}
        }
        self.raise_promised(ballot);
        effects.extend(self.leader_seen(from));
        effects
    }

    fn handle_sync(&mut self, from: InstitutionId, decided: Vec<Value>) -> Vec<NodeEffect> {
        for (slot, value) in decided.into_iter().enumerate() {
            self.decided.entry(slot as u64).or_insert(value);
        }
        let mut effects = self.apply_ready();
        if !self.active {
            self.active = true;
            effects.extend(self.leader_seen(from));
        }
        effects
    }

    pub fn on_timer(&mut self, kind: TimerKind) -> Vec<NodeEffect> {
        match kind {
            TimerKind::HeartbeatTick { term } => {
                if term != self.term || !self.is_leader() {
                    return Vec::new();
                }
                let ballot = self.leader_ballot().expect("leader has a ballot");
                let mut effects = self.broadcast(ConsensusMsg::Heartbeat { ballot });
                effects.push(self.schedule_heartbeat());
                effects
            }
            TimerKind::ElectionCheck { epoch } => {
                if epoch != self.election_epoch
                    || !self.active
                    || !matches!(self.role, Role::Follower)
                {
                    return Vec::new();
                }
                self.start_election()
            }
            TimerKind::ProposalRetry { epoch } => {
                if epoch != self.retry_epoch {
                    return Vec::new();
                }
                match &self.role {
                    Role::Candidate { .. } => self.start_election(),
                    Role::Leader { ballot, inflight, .. } => {
                        if inflight.is_empty() {
                            return Vec::new();
                        }
                        let ballot = *ballot;
                        let resend: Vec<(u64, Value)> = inflight
                            .iter()
                            .map(|(slot, state)| (*slot, state.value.clone()))
                            .collect();
                        let mut effects = Vec::new();
                        for (slot, value) in resend {
                            effects.extend(
                                self.broadcast(ConsensusMsg::Accept { ballot, slot, value }),
                            );
                        }
                        effects.push(self.schedule_retry());
                        effects
                    }
                    Role::Follower => Vec::new(),
                }
            }
            TimerKind::JoinStart => {
                if self.active {
                    return Vec::new();
                }
                vec![
                    NodeEffect::Send {
                        to: self.config.initializer(),
                        msg: ConsensusMsg::JoinRequest {
                            institution: self.id,
                            device_class: self.device_class,
                        },
                    },
                    NodeEffect::SetTimer {
                        delay_ms: self.config.join_interval_ms,
                        kind: TimerKind::JoinStart,
                    },
                ]
            }
        }
    }

    /// Seeks leadership at a round above everything seen so far.
    fn start_election(&mut self) -> Vec<NodeEffect> {
        let round = self.max_round_seen + 1;
        let ballot = Ballot { round, node: self.id };
        self.term += 1;
        let reply = self.on_prepare(ballot, self.next_apply);
        let own_entries = match reply {
            ConsensusMsg::Promise { accepted, .. } => accepted,
            _ => unreachable!("fresh round always wins own promise"),
        };
        self.role = Role::Candidate {
            ballot,
            promises: BTreeMap::from([(self.id, own_entries)]),
        };
        let mut effects = self.broadcast(ConsensusMsg::Prepare {
            ballot,
            from_slot: self.next_apply,
        });
        effects.push(self.schedule_retry());
        effects.extend(self.try_ascend());
        effects
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::TransactionBody;

    fn ballot(round: u64, node: u32) -> Ballot {
        Ballot { round, node: InstitutionId(node) }
    }

    fn config(n: u32) -> ConsensusConfig {
        ConsensusConfig {
            initial_members: (0..n).map(InstitutionId).collect(),
            ..ConsensusConfig::default()
        }
    }

    fn member_node(id: u32, n: u32) -> ConsensusNode {
        let mut node = ConsensusNode::new(InstitutionId(id), DeviceClass::M5aXlarge, config(n));
        node.activate_initial();
        node
    }

    fn join_command(inst: u32, proposer: u32) -> LedgerCommand {
        LedgerCommand {
            body: TransactionBody::Join {
                institution: InstitutionId(inst),
                device_class: DeviceClass::Egs,
            },
            proposer: InstitutionId(proposer),
        }
    }

    #[test]
    fn fresh_acceptor_promises() {
        let mut node = member_node(1, 3);
        let reply = node.on_prepare(ballot(1, 0), 0);
        match reply {
            ConsensusMsg::Promise { ballot: b, accepted } => {
                assert_eq!(b, ballot(1, 0));
                assert!(accepted.is_empty());
            }
            other => panic!("expected promise, got {other:?}"),
        }
        assert_eq!(node.promised(), Some(ballot(1, 0)));
    }

    #[test]
    fn lower_prepare_gets_nack_with_promised() {
        let mut node = member_node(1, 3);
        node.on_prepare(ballot(2, 2), 0);
        let reply = node.on_prepare(ballot(1, 0), 0);
        assert_eq!(reply, ConsensusMsg::PrepareNack { promised: ballot(2, 2) });
    }

    #[test]
    fn promise_carries_prior_accepts() {
        let mut node = member_node(1, 3);
        let value = Value::Command(join_command(7, 0));
        node.on_accept(ballot(1, 0), 4, value.clone());
        let reply = node.on_prepare(ballot(2, 2), 0);
        match reply {
            ConsensusMsg::Promise { accepted, .. } => {
                assert_eq!(accepted.len(), 1);
                assert_eq!(accepted[0].slot, 4);
                assert_eq!(accepted[0].ballot, ballot(1, 0));
                assert_eq!(accepted[0].value, value);
            }
            other => panic!("expected promise, got {other:?}"),
        }
    }

    #[test]
    fn accept_at_promised_ballot_is_acknowledged() {
        let mut node = member_node(1, 3);
        node.on_prepare(ballot(1, 0), 0);
        let reply = node.on_accept(ballot(1, 0), 0, Value::Noop);
        assert_eq!(reply, ConsensusMsg::Accepted { ballot: ballot(1, 0), slot: 0 });
    }

    #[test]
    fn accept_below_promise_is_nacked() {
        let mut node = member_node(1, 3);
        node.on_prepare(ballot(2, 2), 0);
        let reply = node.on_accept(ballot(1, 0), 0, Value::Noop);
        assert_eq!(
            reply,
            ConsensusMsg::AcceptNack { promised: ballot(2, 2), slot: 0 }
        );
    }

    #[test]
    fn accept_above_promise_raises_it() {
        let mut node = member_node(1, 3);
        node.on_prepare(ballot(1, 0), 0);
        let reply = node.on_accept(ballot(3, 2), 0, Value::Noop);
        assert_eq!(reply, ConsensusMsg::Accepted { ballot: ballot(3, 2), slot: 0 });
        assert_eq!(node.promised(), Some(ballot(3, 2)));
    }

    #[test]
    fn promised_ballot_never_decreases() {
        let mut node = member_node(1, 5);
        let mut last = None;
        for (round, proposer) in [(1, 0), (3, 2), (2, 4), (3, 0), (5, 1)] {
            node.on_prepare(ballot(round, proposer), 0);
            let now = node.promised();
            assert!(now >= last, "promise went backwards: {last:?} -> {now:?}");
            last = now;
        }
    }

    #[test]
    fn three_member_leader_decides_on_second_ack() {
        let mut leader = member_node(0, 3);
        let (slot, effects) = leader.submit(join_command(9, 0));
        let slot = slot.expect("leader assigns a slot");
        let accepts = effects
            .iter()
            .filter(|e| matches!(e, NodeEffect::Send { msg: ConsensusMsg::Accept { .. }, .. }))
            .count();
        assert_eq!(accepts, 2);

        let effects = leader.on_accepted(InstitutionId(1), ballot(0, 0), slot);
        let decides = effects
            .iter()
            .filter(|e| matches!(e, NodeEffect::Send { msg: ConsensusMsg::Decide { .. }, .. }))
            .count();
        assert_eq!(decides, 2, "second ack (with self) reaches quorum 2 of 3");
        assert!(effects.iter().any(|e| matches!(e, NodeEffect::Applied { .. })));
    }

    #[test]
    fn single_member_decides_alone() {
        let mut leader = member_node(0, 1);
        let (slot, effects) = leader.submit(join_command(5, 0));
        assert_eq!(slot, Some(0));
        assert!(effects.iter().any(|e| matches!(e, NodeEffect::Applied { .. })));
    }

    #[test]
    fn ten_members_need_six_acks() {
        let mut leader = member_node(0, 10);
        let (slot, _) = leader.submit(join_command(20, 0));
        let slot = slot.unwrap();
        // Four remote acks plus self is five: below the quorum of six.
        for from in 1..=4 {
            let effects = leader.on_accepted(InstitutionId(from), ballot(0, 0), slot);
            assert!(effects.is_empty(), "decided too early at ack {from}");
        }
        let effects = leader.on_accepted(InstitutionId(5), ballot(0, 0), slot);
        assert!(
            effects.iter().any(|e| matches!(e, NodeEffect::Send { msg: ConsensusMsg::Decide { .. }, .. })),
            "sixth ack must decide"
        );
    }

    #[test]
    fn stale_ballot_acks_are_ignored() {
        let mut leader = member_node(0, 3);
        let (slot, _) = leader.submit(join_command(9, 0));
        let effects = leader.on_accepted(InstitutionId(1), ballot(7, 1), slot.unwrap());
        assert!(effects.is_empty());
    }

    #[test]
    fn back_to_back_proposals_take_consecutive_slots() {
        let mut leader = member_node(0, 3);
        let (first, _) = leader.submit(join_command(8, 0));
        let (second, _) = leader.submit(join_command(9, 0));
        assert_eq!(first, Some(0));
        assert_eq!(second, Some(1));
    }

    #[test]
    fn follower_relays_proposals_to_the_leader() {
        let mut follower = member_node(2, 3);
        let (slot, effects) = follower.submit(join_command(9, 2));
        assert_eq!(slot, None);
        match &effects[..] {
            [NodeEffect::Send { to, msg: ConsensusMsg::Forward { .. } }] => {
                assert_eq!(*to, InstitutionId(0));
            }
            other => panic!("expected single forward, got {other:?}"),
        }
    }
}
