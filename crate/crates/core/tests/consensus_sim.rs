//! Scheduling oracles for the consensus network: decide latency, heartbeat
//! cadence, election and retry timing, and join pacing, each checked
//! against a hand-computed event schedule.

use std::collections::BTreeMap;

use stigma_core::consensus::{
    ConsensusConfig, LedgerCommand, Network, NetworkConfig, NoopApp,
};
use stigma_core::ledger::{fingerprint, ModelDescriptor, TransactionBody};
use stigma_core::netsim::DeviceClass;
use stigma_core::InstitutionId;

fn inst(n: u32) -> InstitutionId {
    InstitutionId(n)
}

fn roster(n: u32, class: DeviceClass) -> Vec<(InstitutionId, DeviceClass)> {
    (0..n).map(|i| (inst(i), class)).collect()
}

fn register(model_id: &str, owner: InstitutionId) -> LedgerCommand {
    LedgerCommand {
        body: TransactionBody::RegisterModel {
            descriptor: ModelDescriptor {
                model_id: model_id.into(),
                owner,
                version: 1,
                algorithm_tag: "logreg".into(),
                accuracy_estimate: 0.9,
                params_fingerprint: fingerprint(model_id.as_bytes()),
                sample_count: 500,
                metrics: BTreeMap::new(),
            },
            params: None,
        },
        proposer: owner,
    }
}

fn joined_net(
    n: u32,
    class: DeviceClass,
    coord_cost_ms: f64,
    seed: u64,
) -> Network<NoopApp> {
    let config = NetworkConfig {
        coord_cost_ms,
        start_joined: true,
        ..NetworkConfig::default()
    };
    Network::new(seed, config, &roster(n, class), NoopApp)
}

// Fog links carry 12 ms each way and processing is free, so one slot is
// three message legs: Accept out (12), Accepted back (12), Decide out (12).
#[test]
fn zero_cost_fog_replicas_apply_in_exactly_36ms() {
    let mut net = joined_net(3, DeviceClass::EsLarge, 0.0, 11);
    let m = net
        .measure_consensus(register("timing", inst(0)), 10_000.0)
        .expect("decides well inside the cap");
    assert_eq!(m.slot, 0);
    assert_eq!(m.elapsed_ms, 36.0);
}

// With a 1 ms coordinator cost the legs pick up queueing: Accepts depart at
// +1 and +2, each follower spends 1 ms before replying, and the final
// Decide leaves the busy leader at +28, landing at the slower follower at
// exactly 40 ms.
#[test]
fn coordinator_cost_staggers_the_decide_to_40ms() {
    let mut net = joined_net(3, DeviceClass::EsLarge, 1.0, 11);
    let m = net
        .measure_consensus(register("timing", inst(0)), 10_000.0)
        .expect("decides well inside the cap");
    assert_eq!(m.elapsed_ms, 40.0);
}

#[test]
fn leader_heartbeats_on_the_30ms_interval() {
    let mut net = joined_net(3, DeviceClass::M5aXlarge, 0.0, 3);
    net.run_for(299.0).unwrap();
    // First tick fires one interval after activation: broadcasts at
    // t = 30, 60, ..., 270, two receivers each.
    assert_eq!(net.count_deliveries_from(inst(0), "heartbeat"), 18);
}

// Followers elect after four missed leader intervals. The crashed leader's
// one pre-crash heartbeat lands at t=0, so the first Prepare goes out at
// exactly 4 x 30 ms.
#[test]
fn silenced_leader_is_replaced_at_the_120ms_election_timeout() {
    let mut net = joined_net(3, DeviceClass::M5aXlarge, 0.0, 5);
    net.set_crashed(inst(0), true);

    net.run_for(119.0).unwrap();
    assert_eq!(net.current_leader(), Some(inst(0)), "no challenger before the timeout");

    net.run_for(81.0).unwrap();
    let first_prepare = net
        .trace()
        .iter()
        .find(|e| e.summary.contains("prepare b="))
        .expect("an election happened");
    assert_eq!(first_prepare.at_ms, 120.0);

    let leader = net.current_leader().expect("someone took over");
    assert_ne!(leader, inst(0));

    let slot = net
        .submit_at(leader, register("post-election", leader))
        .expect("new leader binds a slot");
    net.run_until_condition(net.now() + 1_000.0, |net| {
        [inst(1), inst(2)].iter().all(|id| net.node(*id).next_apply() > slot)
    })
    .expect("two live members are a quorum of three");
    assert!(net.node(inst(1)).ledger().verify_chain());
    assert_eq!(net.node(inst(0)).ledger().records().len(), 0, "crashed node saw nothing");
}

// A candidate that cannot reach quorum re-prepares every 100 ms, each time
// at a higher round, and wins as soon as a second member is back.
#[test]
fn stalled_candidate_escalates_rounds_every_100ms() {
    let mut net = joined_net(3, DeviceClass::M5aXlarge, 0.0, 9);
    net.set_crashed(inst(0), true);
    net.set_crashed(inst(2), true);

    let promised_round = |net: &Network<NoopApp>| {
        net.node(inst(1)).promised().expect("self-promise").round
    };
    net.run_for(125.0).unwrap();
    assert_eq!(promised_round(&net), 1);
    net.run_for(100.0).unwrap();
    assert_eq!(promised_round(&net), 2);
    net.run_for(100.0).unwrap();
    assert_eq!(promised_round(&net), 3);

    net.set_crashed(inst(2), false);
    net.run_for(100.0).unwrap();
    assert_eq!(net.current_leader(), Some(inst(1)));
    assert_eq!(
        net.node(inst(1)).leader_ballot().expect("ascended").round,
        4,
        "victory came from the fourth round's retry"
    );
}

// Join pacing is the initialization clock: with a 100 ms interval the
// fourth member's request, decide, and sync all land at t=300 on
// zero-latency links.
#[test]
fn initialization_time_is_set_by_the_join_schedule() {
    let config = NetworkConfig {
        consensus: ConsensusConfig { join_interval_ms: 100.0, ..ConsensusConfig::default() },
        coord_cost_ms: 0.0,
        ..NetworkConfig::default()
    };
    let mut net = Network::new(17, config, &roster(4, DeviceClass::M5aXlarge), NoopApp);
    let elapsed = net.measure_init(2_000.0).expect("joins fit the cap");
    assert_eq!(elapsed, 300.0);
    for node in net.nodes() {
        assert_eq!(node.members().len(), 4);
        assert!(node.ledger().verify_chain());
    }
}

#[test]
fn trace_export_is_parseable_jsonl() {
    let mut net = joined_net(3, DeviceClass::EsLarge, 1.0, 23);
    net.measure_consensus(register("traced", inst(0)), 10_000.0).unwrap();
    let dump = net.trace_jsonl();
    assert!(!dump.is_empty());
    let mut last = 0.0_f64;
    for line in dump.lines() {
        let value: serde_json::Value = serde_json::from_str(line).expect("valid JSON per line");
        let at = value["at_ms"].as_f64().expect("timestamped");
        assert!(at >= last, "trace times go forward");
        last = at;
    }
}
