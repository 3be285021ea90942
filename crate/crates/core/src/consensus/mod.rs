//! Replicated-log consensus over the simulated network.
//!
//! [`ConsensusNode`] is the pure per-node state machine; [`Network`] wires a
//! roster of them into one [`Simulation`], charges each node a fixed
//! processing cost per delivery, and relays node effects and overlay-app
//! actions back into the event queue. All measurements read the virtual
//! clock.

pub mod msg;
pub mod node;
pub mod safety;

use std::collections::BTreeMap;

use thiserror::Error;

pub use msg::{
    Ballot, ConsensusMsg, LedgerCommand, NodeEffect, PromisedEntry, TimerKind, Value,
};
pub use node::{ConsensusConfig, ConsensusNode};

use crate::ledger::{Ledger, TransactionRecord};
use crate::netsim::{
    DeviceClass, Delivered, EventKind, FaultPlan, LinkProfile, SimError, Simulation, SimPayload,
    TraceEntry,
};
use crate::InstitutionId;

/// Overlay logic layered on the replicated log: reacts to applied records,
/// exchanges its own point-to-point messages, and sets its own timers.
pub trait App {
    type Msg: Clone;
    type Timer: Clone;

    fn msg_summary(&self, msg: &Self::Msg) -> String;

    /// Wire size of an app message; model parameter transfers report their
    /// payload size here so links slow them down.
    fn msg_size(&self, _msg: &Self::Msg) -> u64 {
        0
    }

    fn timer_summary(&self, timer: &Self::Timer) -> String;

    /// Reacts to one event at `node`. `ledger` is that node's own replica;
    /// overlay decisions must come from it, never from another node's state.
    fn handle(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        event: AppEvent<Self::Msg, Self::Timer>,
        out: &mut Actions<Self::Msg, Self::Timer>,
    );
}

/// What the network hands an [`App`] at one node.
#[derive(Debug, Clone)]
pub enum AppEvent<M, T> {
    /// A command committed and passed ledger validation here.
    Applied { record: TransactionRecord },
    /// A command committed but failed ledger validation; every replica
    /// rejects it identically.
    Rejected { command: LedgerCommand, reason: String },
    Message { from: InstitutionId, msg: M },
    Timer(T),
}

enum Action<M, T> {
    Submit(LedgerCommand),
    Send { to: InstitutionId, msg: M },
    SetTimer { delay_ms: f64, timer: T },
    Note(String),
}

/// Collector for the actions an [`App`] takes while handling one event.
pub struct Actions<M, T> {
    items: Vec<Action<M, T>>,
}

impl<M, T> Actions<M, T> {
    fn new() -> Self {
        Actions { items: Vec::new() }
    }

    /// Hands a command to the local consensus node for replication.
    pub fn submit(&mut self, command: LedgerCommand) {
        self.items.push(Action::Submit(command));
    }

    pub fn send(&mut self, to: InstitutionId, msg: M) {
        self.items.push(Action::Send { to, msg });
    }

    pub fn set_timer(&mut self, delay_ms: f64, timer: T) {
        self.items.push(Action::SetTimer { delay_ms, timer });
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.items.push(Action::Note(text.into()));
    }
}

/// Everything that can sit in the simulator queue: protocol traffic, node
/// timers, and overlay traffic with its summary and size precomputed.
#[derive(Clone)]
pub enum Payload<M: Clone, T: Clone> {
    Proto(ConsensusMsg),
    NodeTimer(TimerKind),
    AppMsg { msg: M, summary: String, size: u64 },
    AppTimer { timer: T, summary: String },
}

impl<M: Clone, T: Clone> SimPayload for Payload<M, T> {
    fn size_bytes(&self) -> u64 {
        match self {
            Payload::AppMsg { size, .. } => *size,
            _ => 0,
        }
    }

    fn summary(&self) -> String {
        match self {
            Payload::Proto(msg) => msg.summary(),
            Payload::NodeTimer(kind) => kind.summary(),
            Payload::AppMsg { summary, .. } => summary.clone(),
            Payload::AppTimer { summary, .. } => summary.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub consensus: ConsensusConfig,
    /// Processing time a node spends on each delivered event; outbound
    /// bursts leave one cost apart, so wide fan-out serializes.
    pub coord_cost_ms: f64,
    pub jitter_frac: f64,
    pub faults: FaultPlan,
    /// True: whole roster is a member at time zero. False: only the first
    /// entry is; the rest join one at a time at the join interval.
    pub start_joined: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            consensus: ConsensusConfig::default(),
            coord_cost_ms: 1.0,
            jitter_frac: 0.0,
            faults: FaultPlan::default(),
            start_joined: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("condition not reached by {cap_ms} ms")]
    Deadline { cap_ms: f64 },
    #[error("simulation went idle before the condition held")]
    Stalled,
    #[error("no live leader to propose through")]
    NoLeader,
}

/// Outcome of timing one command through consensus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusMeasure {
    pub elapsed_ms: f64,
    pub slot: u64,
}

pub struct Network<A: App> {
    sim: Simulation<Payload<A::Msg, A::Timer>>,
    nodes: BTreeMap<InstitutionId, ConsensusNode>,
    app: A,
    cost_ms: f64,
}

enum Work<M, T> {
    NodeFx(Vec<NodeEffect>),
    AppActs(Vec<Action<M, T>>),
}

impl<A: App> Network<A> {
    /// Builds the cluster. `roster` order matters: the first entry is the
    /// initializer and bootstrap contact; later entries join in order.
    pub fn new(
        seed: u64,
        mut config: NetworkConfig,
        roster: &[(InstitutionId, DeviceClass)],
        app: A,
    ) -> Self {
        assert!(!roster.is_empty(), "roster must name at least one node");
        config.consensus.initial_members = if config.start_joined {
            roster.iter().map(|(id, _)| *id).collect()
        } else {
            vec![roster[0].0]
        };
        assert!(config.coord_cost_ms >= 0.0, "processing cost must be nonnegative");

        let mut sim = Simulation::new(seed);
        sim.set_fault_plan(config.faults);
        for (i, (a, class_a)) in roster.iter().enumerate() {
            for (b, class_b) in &roster[i..] {
                sim.set_link(*a, *b, LinkProfile::between(*class_a, *class_b, config.jitter_frac));
            }
        }

        let mut nodes = BTreeMap::new();
        for (id, class) in roster {
            assert!(
                nodes
                    .insert(*id, ConsensusNode::new(*id, *class, config.consensus.clone()))
                    .is_none(),
                "duplicate roster id {id}"
            );
        }

        let mut net = Network { sim, nodes, app, cost_ms: config.coord_cost_ms };
        let activate: Vec<InstitutionId> = if config.start_joined {
            roster.iter().map(|(id, _)| *id).collect()
        } else {
            vec![roster[0].0]
        };
        for id in activate {
            let effects = net.nodes.get_mut(&id).expect("roster node").activate_initial();
            net.run_cascade(id, Work::NodeFx(effects));
        }
        if !config.start_joined {
            for (offset, (id, _)) in roster[1..].iter().enumerate() {
                let delay = (offset + 1) as f64 * config.consensus.join_interval_ms;
                net.sim
                    .schedule_timer(*id, delay, Payload::NodeTimer(TimerKind::JoinStart))
                    .expect("join delay is nonnegative");
            }
        }
        net
    }

    pub fn now(&self) -> f64 {
        self.sim.now()
    }

    pub fn node(&self, id: InstitutionId) -> &ConsensusNode {
        &self.nodes[&id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ConsensusNode> {
        self.nodes.values()
    }

    pub fn app(&self) -> &A {
        &self.app
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.sim.trace()
    }

    pub fn trace_jsonl(&self) -> String {
        self.sim.trace_jsonl()
    }

    pub fn set_trace_enabled(&mut self, enabled: bool) {
        self.sim.set_trace_enabled(enabled);
    }

    pub fn set_fault_plan(&mut self, faults: FaultPlan) {
        self.sim.set_fault_plan(faults);
    }

    /// Mutes or revives a node; muted nodes drop every delivery, which
    /// models a crash.
    pub fn set_crashed(&mut self, id: InstitutionId, crashed: bool) {
        self.sim.set_muted(id, crashed);
        self.sim.note(id, if crashed { "crashed" } else { "revived" });
    }

    /// Highest-ballot node currently claiming leadership.
    pub fn current_leader(&self) -> Option<InstitutionId> {
        self.nodes
            .values()
            .filter_map(|n| n.leader_ballot().map(|b| (b, n.id())))
            .max()
            .map(|(_, id)| id)
    }

    /// Deliveries recorded at any node that arrived from `from` with a
    /// summary containing `needle`. Dropped messages never appear.
    pub fn count_deliveries_from(&self, from: InstitutionId, needle: &str) -> usize {
        let prefix = format!("from={from} ");
        self.sim
            .trace()
            .iter()
            .filter(|e| {
                e.kind == crate::netsim::TraceKind::Message
                    && e.summary.starts_with(&prefix)
                    && e.summary.contains(needle)
            })
            .count()
    }

    /// Submits `command` at `node` (leader or not) and lets routing do the
    /// rest. Returns the slot when that node led and bound one.
    pub fn submit_at(&mut self, node: InstitutionId, command: LedgerCommand) -> Option<u64> {
        let (slot, effects) = self.nodes.get_mut(&node).expect("known node").submit(command);
        self.run_cascade(node, Work::NodeFx(effects));
        slot
    }

    /// Schedules an overlay timer at `node`; scenario drivers use this to
    /// kick off app behavior.
    pub fn schedule_app_timer(&mut self, node: InstitutionId, delay_ms: f64, timer: A::Timer) {
        let payload = Payload::AppTimer { summary: self.app.timer_summary(&timer), timer };
        self.sim
            .schedule_timer(node, delay_ms, payload)
            .expect("app timers use nonnegative delays");
    }

    /// Runs every event due within the next `duration_ms` of virtual time,
    /// then advances the clock to the end of the window.
    pub fn run_for(&mut self, duration_ms: f64) -> Result<(), SimError> {
        let deadline = self.sim.now() + duration_ms;
        while let Some(delivered) = self.sim.step_until(deadline)? {
            self.dispatch(delivered);
        }
        self.sim.run_until(deadline, |_, _| {})?;
        Ok(())
    }

    /// Steps until `done` holds, returning the virtual time at which it
    /// first did. Fails past `cap_ms` or if the queue drains first.
    pub fn run_until_condition(
        &mut self,
        cap_ms: f64,
        done: impl Fn(&Self) -> bool,
    ) -> Result<f64, MeasureError> {
        loop {
            if done(self) {
                return Ok(self.sim.now());
            }
            match self.sim.step_until(cap_ms)? {
                Some(delivered) => self.dispatch(delivered),
                None if self.sim.is_idle() => return Err(MeasureError::Stalled),
                None => return Err(MeasureError::Deadline { cap_ms }),
            }
        }
    }

    /// Time for the whole roster to become active members with full
    /// membership in their ledgers, counted from network start.
    pub fn measure_init(&mut self, cap_ms: f64) -> Result<f64, MeasureError> {
        let n = self.nodes.len();
        self.run_until_condition(cap_ms, |net| {
            net.nodes
                .values()
                .all(|node| node.is_active() && node.ledger().members().len() == n)
        })
    }

    /// Times one command from leader submission until every active node has
    /// applied its slot.
    pub fn measure_consensus(
        &mut self,
        command: LedgerCommand,
        cap_ms: f64,
    ) -> Result<ConsensusMeasure, MeasureError> {
        let leader = self.current_leader().ok_or(MeasureError::NoLeader)?;
        let started = self.sim.now();
        let (slot, effects) = self.nodes.get_mut(&leader).expect("leader node").submit(command);
        let slot = slot.expect("leader binds a slot");
        self.run_cascade(leader, Work::NodeFx(effects));
        let finished = self.run_until_condition(cap_ms, |net| {
            net.nodes
                .values()
                .all(|node| !node.is_active() || node.next_apply() > slot)
        })?;
        Ok(ConsensusMeasure { elapsed_ms: finished - started, slot })
    }

    fn dispatch(&mut self, delivered: Delivered<Payload<A::Msg, A::Timer>>) {
        let node = delivered.node;
        match delivered.kind {
            EventKind::Message { from, payload } => match payload {
                Payload::Proto(msg) => {
                    let effects = self.nodes.get_mut(&node).expect("known node").on_message(from, msg);
                    self.run_cascade(node, Work::NodeFx(effects));
                }
                Payload::AppMsg { msg, .. } => {
                    let mut out = Actions::new();
                    let ledger = self.nodes[&node].ledger();
                    self.app.handle(node, ledger, AppEvent::Message { from, msg }, &mut out);
                    self.run_cascade(node, Work::AppActs(out.items));
                }
                Payload::NodeTimer(_) | Payload::AppTimer { .. } => {
                    unreachable!("timers are never sent between nodes")
                }
            },
            EventKind::Timer { payload } => match payload {
                Payload::NodeTimer(kind) => {
                    let effects = self.nodes.get_mut(&node).expect("known node").on_timer(kind);
                    self.run_cascade(node, Work::NodeFx(effects));
                }
                Payload::AppTimer { timer, .. } => {
                    let mut out = Actions::new();
                    let ledger = self.nodes[&node].ledger();
                    self.app.handle(node, ledger, AppEvent::Timer(timer), &mut out);
                    self.run_cascade(node, Work::AppActs(out.items));
                }
                Payload::Proto(_) | Payload::AppMsg { .. } => {
                    unreachable!("messages are never scheduled as timers")
                }
            },
        }
    }

    /// Runs one node's reaction to one delivery to completion. The node is
    /// busy for one processing cost; outbound messages depart one cost
    /// apart after that, and the node stays busy until the last departs.
    fn run_cascade(&mut self, node: InstitutionId, first: Work<A::Msg, A::Timer>) {
        let started = self.sim.now();
        let cost = self.cost_ms;
        self.sim.set_busy(node, started + cost);
        let mut sent = 0u32;

        let mut queue = std::collections::VecDeque::from([first]);
        while let Some(work) = queue.pop_front() {
            match work {
                Work::NodeFx(effects) => {
                    for effect in effects {
                        match effect {
                            NodeEffect::Send { to, msg } => {
                                sent += 1;
                                let at = started + cost * f64::from(sent);
                                self.sim.send_departing_at(at, node, to, Payload::Proto(msg));
                            }
                            NodeEffect::SetTimer { delay_ms, kind } => {
                                self.sim
                                    .schedule_timer(node, delay_ms, Payload::NodeTimer(kind))
                                    .expect("node timers use nonnegative delays");
                            }
                            NodeEffect::Applied { record } => {
                                let mut out = Actions::new();
                                let ledger = self.nodes[&node].ledger();
                                self.app.handle(node, ledger, AppEvent::Applied { record }, &mut out);
                                queue.push_back(Work::AppActs(out.items));
                            }
                            NodeEffect::Skipped { command, reason } => {
                                let mut out = Actions::new();
                                let ledger = self.nodes[&node].ledger();
                                self.app.handle(
                                    node,
                                    ledger,
                                    AppEvent::Rejected { command, reason },
                                    &mut out,
                                );
                                queue.push_back(Work::AppActs(out.items));
                            }
                        }
                    }
                }
                Work::AppActs(actions) => {
                    for action in actions {
                        match action {
                            Action::Submit(command) => {
                                let (_, effects) = self
                                    .nodes
                                    .get_mut(&node)
                                    .expect("known node")
                                    .submit(command);
                                queue.push_back(Work::NodeFx(effects));
                            }
                            Action::Send { to, msg } => {
                                let payload = Payload::AppMsg {
                                    summary: self.app.msg_summary(&msg),
                                    size: self.app.msg_size(&msg),
                                    msg,
                                };
                                sent += 1;
                                let at = started + cost * f64::from(sent);
                                self.sim.send_departing_at(at, node, to, payload);
                            }
                            Action::SetTimer { delay_ms, timer } => {
                                let payload = Payload::AppTimer {
                                    summary: self.app.timer_summary(&timer),
                                    timer,
                                };
                                self.sim
                                    .schedule_timer(node, delay_ms, payload)
                                    .expect("app timers use nonnegative delays");
                            }
                            Action::Note(text) => self.sim.note(node, text),
                        }
                    }
                }
            }
        }
        if sent > 0 {
            self.sim.set_busy(node, started + cost * f64::from(sent));
        }
    }
}

/// App that ignores everything; used when only the log itself is under
/// test or measurement.
pub struct NoopApp;

impl App for NoopApp {
    type Msg = ();
    type Timer = ();

    fn msg_summary(&self, _: &()) -> String {
        "app".into()
    }

    fn timer_summary(&self, _: &()) -> String {
        "app-timer".into()
    }

    fn handle(&mut self, _: InstitutionId, _: &Ledger, _: AppEvent<(), ()>, _: &mut Actions<(), ()>) {
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::TransactionBody;

    fn roster(n: u32) -> Vec<(InstitutionId, DeviceClass)> {
        (0..n).map(|i| (InstitutionId(i), DeviceClass::M5aXlarge)).collect()
    }

    fn joined_config() -> NetworkConfig {
        NetworkConfig { start_joined: true, ..NetworkConfig::default() }
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
    fn command_reaches_every_replica() {
        let mut net = Network::new(11, joined_config(), &roster(3), NoopApp);
        net.run_for(50.0).unwrap();
        let measure = net.measure_consensus(join_command(9, 0), 10_000.0).unwrap();
        assert!(measure.elapsed_ms > 0.0);
        for node in net.nodes() {
            assert!(node.next_apply() > measure.slot);
            assert!(node.ledger().members().contains(&InstitutionId(9)));
            assert!(node.ledger().verify_chain());
        }
    }

    #[test]
    fn measure_fails_on_short_deadline() {
        let mut net = Network::new(11, joined_config(), &roster(3), NoopApp);
        net.run_for(50.0).unwrap();
        // The roster spans a real link, so one virtual millisecond cannot
        // finish the round.
        let err = net.measure_consensus(join_command(9, 0), net.now() + 1.0).unwrap_err();
        assert!(matches!(err, MeasureError::Deadline { .. }));
    }

    #[test]
    fn follower_submission_is_relayed_and_committed() {
        let mut net = Network::new(13, joined_config(), &roster(3), NoopApp);
        net.run_for(50.0).unwrap();
        let slot = net.submit_at(InstitutionId(2), join_command(9, 2));
        assert_eq!(slot, None, "followers never bind slots");
        net.run_until_condition(5_000.0, |net| {
            net.nodes().all(|n| n.ledger().members().contains(&InstitutionId(9)))
        })
        .unwrap();
    }

    #[test]
    fn roster_joins_one_by_one() {
        let mut config = NetworkConfig::default();
        config.consensus.join_interval_ms = 100.0;
        let mut net = Network::new(17, config, &roster(4), NoopApp);
        let done = net.measure_init(10_000.0).unwrap();
        assert!(done >= 300.0, "last join starts at 300 ms, got {done}");
        for node in net.nodes() {
            assert_eq!(node.ledger().members().len(), 4);
            assert!(node.is_active());
            assert!(node.ledger().verify_chain());
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed: u64| {
            let config = NetworkConfig { jitter_frac: 0.3, ..joined_config() };
            let mixed = vec![
                (InstitutionId(0), DeviceClass::M5aXlarge),
                (InstitutionId(1), DeviceClass::EsLarge),
                (InstitutionId(2), DeviceClass::Egs),
            ];
            let mut net = Network::new(seed, config, &mixed, NoopApp);
            net.run_for(500.0).unwrap();
            net.trace_jsonl()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8), "different seeds should diverge under jitter");
    }
}
