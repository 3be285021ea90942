//! Adversarial schedule driver.
//!
//! Each seed expands into one randomized run: lossy, duplicating,
//! reordering links, random proposal times, and leader crashes. After a
//! fault-free drain the replicas are checked for agreement (no slot with
//! two chosen values), validity (nothing chosen that was never proposed),
//! and chain-prefix consistency.

use std::collections::BTreeMap;

use rand::Rng;

use super::{LedgerCommand, Network, NetworkConfig, NoopApp, Value};
use crate::ledger::{fingerprint, Digest, ModelDescriptor, TransactionBody};
use crate::netsim::{FaultPlan, DEVICE_CLASSES};
use crate::seed::stream_rng;
use crate::InstitutionId;

/// What one schedule exercised; useful when a suite wants to confirm the
/// runs were not trivially quiet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafetyReport {
    pub decided_slots: usize,
    pub submitted: usize,
    pub crashes: usize,
}

/// Runs one seeded adversarial schedule over `n` replicas and checks the
/// consensus invariants. Returns a description of the first violation.
pub fn check_adversarial_schedule(seed: u64, n: usize) -> Result<SafetyReport, String> {
    assert!(n >= 2, "adversarial runs need at least two replicas");
    let mut rng = stream_rng(seed, "paxos-safety", 0);
    let faults = FaultPlan {
        drop_prob: rng.random_range(0.0..=0.2),
        duplicate_prob: rng.random_range(0.0..=0.3),
        reorder_jitter_ms: rng.random_range(0.0..20.0),
    };
    let roster: Vec<_> = (0..n)
        .map(|i| (InstitutionId(i as u32), DEVICE_CLASSES[i % DEVICE_CLASSES.len()]))
        .collect();
    let config = NetworkConfig {
        faults,
        jitter_frac: 0.3,
        start_joined: true,
        ..NetworkConfig::default()
    };
    let mut net = Network::new(seed, config, &roster, NoopApp);
    net.set_trace_enabled(false);

    let mut submitted: Vec<Digest> = Vec::new();
    let mut crashes = 0usize;
    let mut crashed: Option<InstitutionId> = None;
    let phases = rng.random_range(5..=9);
    for phase in 0..phases {
        if let Some(id) = crashed.take() {
            net.set_crashed(id, false);
        }
        if rng.random_bool(0.7) {
            let at = InstitutionId(rng.random_range(0..n as u32));
            let command = register_command(seed, phase, at);
            submitted.push(command.digest());
            net.submit_at(at, command);
        }
        if rng.random_bool(0.4) {
            if let Some(leader) = net.current_leader() {
                net.set_crashed(leader, true);
                crashed = Some(leader);
                crashes += 1;
            }
        }
        let span = rng.random_range(80.0..260.0);
        net.run_for(span).map_err(|e| format!("seed {seed}: simulator failed mid-run: {e}"))?;
    }
    if let Some(id) = crashed.take() {
        net.set_crashed(id, false);
    }
    net.set_fault_plan(FaultPlan::default());
    net.run_for(1_500.0)
        .map_err(|e| format!("seed {seed}: simulator failed during drain: {e}"))?;

    // Agreement: at most one value chosen per slot, across all replicas.
    let mut chosen: BTreeMap<u64, Value> = BTreeMap::new();
    for node in net.nodes() {
        for (slot, value) in node.decided_values() {
            match chosen.get(slot) {
                None => {
                    chosen.insert(*slot, value.clone());
                }
                Some(existing) if existing == value => {}
                Some(existing) => {
                    return Err(format!(
                        "seed {seed}: slot {slot} chose two values: node {} has {value}, \
                         an earlier replica has {existing}",
                        node.id()
                    ));
                }
            }
        }
    }

    // Validity: every chosen command was actually submitted.
    for (slot, value) in &chosen {
        if let Value::Command(command) = value {
            if !submitted.contains(&command.digest()) {
                return Err(format!("seed {seed}: slot {slot} chose a command nobody submitted"));
            }
        }
    }

    // Replicated ledgers stay chain-valid and prefix-consistent.
    let ledgers: Vec<_> = net.nodes().map(|node| (node.id(), node.ledger())).collect();
    for (id, ledger) in &ledgers {
        if !ledger.verify_chain() {
            return Err(format!("seed {seed}: node {id} fails chain verification"));
        }
    }
    for (id_a, a) in &ledgers {
        for (id_b, b) in &ledgers {
            let shared = a.records().len().min(b.records().len());
            for i in 0..shared {
                if a.records()[i].record_digest != b.records()[i].record_digest {
                    return Err(format!(
                        "seed {seed}: nodes {id_a} and {id_b} disagree at record {i}"
                    ));
                }
            }
        }
    }

    Ok(SafetyReport { decided_slots: chosen.len(), submitted: submitted.len(), crashes })
}

fn register_command(seed: u64, phase: usize, owner: InstitutionId) -> LedgerCommand {
    let descriptor = ModelDescriptor {
        model_id: format!("safety-{seed}-{phase}"),
        owner,
        version: 1,
        algorithm_tag: "logreg".into(),
        accuracy_estimate: 0.9,
        params_fingerprint: fingerprint(format!("params-{seed}-{phase}").as_bytes()),
        sample_count: 100,
        metrics: BTreeMap::new(),
    };
    LedgerCommand {
        body: TransactionBody::RegisterModel { descriptor, params: None },
        proposer: owner,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_schedules_hold_and_decide_work() {
        let mut decided = 0;
        let mut crashes = 0;
        for seed in 0..8 {
            let report = check_adversarial_schedule(seed, 5).unwrap_or_else(|violation| {
                panic!("{violation}");
            });
            decided += report.decided_slots;
            crashes += report.crashes;
        }
        assert!(decided > 0, "eight schedules should commit something");
        assert!(crashes > 0, "eight schedules should crash a leader at least once");
    }
}
