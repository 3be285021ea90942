//! Gate suite for the guarantees the system ships on: consensus safety,
//! ledger tamper evidence, the scaling trends, cost-model calibration,
//! the privacy gate, and reproducibility. One verdict line per check;
//! the test fails if any check does.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use stigma_bench::{consensus_roster, run, summarize, write_csv, ExperimentConfig, ExperimentKind};
use stigma_core::consensus::safety::check_adversarial_schedule;
use stigma_core::consensus::{LedgerCommand, Network, NetworkConfig, NoopApp};
use stigma_core::institution::federation::{run_federation, FederationScenario, ProposalOutcome};
use stigma_core::institution::VotePolicy;
use stigma_core::ledger::{
    fingerprint, CommitPolicy, Ledger, ModelDescriptor, TransactionBody, TransactionRecord,
};
use stigma_core::netsim::{DeviceClass, LinkProfile, DEVICE_CLASSES};
use stigma_core::parallel::map_indexed;
use stigma_core::trainer::{CostModel, DeviceProfile};
use stigma_core::InstitutionId;

type Verdict = Result<String, String>;

#[test]
fn the_shipping_gate_holds() {
    let consensus_output = {
        let config = ExperimentConfig::new(ExperimentKind::Consensus);
        let output = run(&config);
        (config, output)
    };

    let results: Vec<(&str, Verdict)> = vec![
        ("paxos-safety", paxos_safety()),
        ("ledger-tamper-evidence", ledger_tamper_evidence()),
        ("consensus-scaling-trend", consensus_scaling_trend(&consensus_output)),
        ("init-schedule-and-coordinator-fanout", init_schedule_and_fanout()),
        ("consensus-latency-bound", consensus_latency_bound(&consensus_output)),
        ("cost-model-calibration", cost_model_calibration()),
        ("transfer-time-oracle", transfer_time_oracle()),
        ("privacy-gate", privacy_gate()),
        ("federation-end-to-end", federation_end_to_end()),
        ("seeded-determinism", seeded_determinism(&consensus_output)),
    ];

    let mut failed = 0;
    for (i, (name, verdict)) in results.iter().enumerate() {
        match verdict {
            Ok(detail) => println!("criterion {:02} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:02} FAIL {name}: {why}", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} gate check(s) failed; see the verdict lines above");
}

/// No slot may ever hold two different values, under message drop,
/// duplication, reordering, and crash schedules.
fn paxos_safety() -> Verdict {
    const SCHEDULES: usize = 1_000;
    let started = Instant::now();
    let reports = map_indexed(SCHEDULES, |i| {
        let n = if i % 2 == 0 { 3 } else { 5 };
        check_adversarial_schedule(20_000 + i as u64, n)
    });
    let mut decided = 0usize;
    let mut crashes = 0usize;
    for (i, report) in reports.iter().enumerate() {
        match report {
            Ok(r) => {
                decided += r.decided_slots;
                crashes += r.crashes;
            }
            Err(why) => return Err(format!("schedule {i}: {why}")),
        }
    }
    let elapsed = started.elapsed();
    if decided < SCHEDULES {
        return Err(format!("only {decided} slots decided; schedules are too idle to count"));
    }
    if elapsed > Duration::from_secs(120) {
        return Err(format!("{SCHEDULES} schedules took {elapsed:.1?}, budget is 120 s"));
    }
    Ok(format!(
        "{SCHEDULES} adversarial schedules on 3 and 5 replicas, {decided} slots decided across {crashes} crashes, no slot forked, {elapsed:.1?}"
    ))
}

/// Every single-byte mutation of a serialized 3-record ledger must break
/// parsing or chain verification.
fn ledger_tamper_evidence() -> Verdict {
    let descriptor = |model_id: &str, owner: u32| ModelDescriptor {
        model_id: model_id.into(),
        owner: InstitutionId(owner),
        version: 1,
        algorithm_tag: "logreg".into(),
        accuracy_estimate: 0.91,
        params_fingerprint: fingerprint(model_id.as_bytes()),
        sample_count: 400,
        metrics: BTreeMap::new(),
    };
    let mut ledger = Ledger::new(vec![InstitutionId(0), InstitutionId(1)]);
    ledger
        .append(
            TransactionBody::Join { institution: InstitutionId(2), device_class: DeviceClass::Egs },
            InstitutionId(0),
        )
        .map_err(|e| e.to_string())?;
    ledger
        .append(
            TransactionBody::RegisterModel { descriptor: descriptor("model-a", 0), params: None },
            InstitutionId(0),
        )
        .map_err(|e| e.to_string())?;
    ledger
        .append(
            TransactionBody::RegisterModel { descriptor: descriptor("model-b", 2), params: None },
            InstitutionId(2),
        )
        .map_err(|e| e.to_string())?;
    if !ledger.verify_chain() {
        return Err("the untampered chain must verify".into());
    }

    let serialized = serde_json::to_vec(ledger.records()).map_err(|e| e.to_string())?;
    let mut checked = 0usize;
    for position in 0..serialized.len() {
        for flip in [0x01u8, 0x80u8] {
            let mut tampered = serialized.clone();
            tampered[position] ^= flip;
            checked += 1;
            let Ok(records) = serde_json::from_slice::<Vec<TransactionRecord>>(&tampered) else {
                continue;
            };
            let rebuilt = Ledger::from_records(vec![InstitutionId(0), InstitutionId(1)], records);
            if rebuilt.verify_chain() {
                return Err(format!("byte {position} xor {flip:#04x} went undetected"));
            }
        }
    }
    Ok(format!("{checked} single-byte mutations over {} bytes all detected", serialized.len()))
}

fn means_in_order(output: &(ExperimentConfig, stigma_bench::RunOutput)) -> Result<Vec<(String, f64)>, String> {
    let (_, out) = output;
    if let Some(first) = out.failures.first() {
        return Err(format!("simulation error: {first}"));
    }
    Ok(summarize(&out.rows).into_iter().map(|s| (s.parameter, s.mean)).collect())
}

/// Mean consensus time must not shrink as the roster grows, and the
/// 10-member roster must be measurably slower than the 3-member one.
fn consensus_scaling_trend(output: &(ExperimentConfig, stigma_bench::RunOutput)) -> Verdict {
    let means = means_in_order(output)?;
    if means.len() != 4 {
        return Err(format!("expected 4 roster sizes, got {}", means.len()));
    }
    for pair in means.windows(2) {
        if pair[1].1 < pair[0].1 {
            return Err(format!(
                "mean dropped from {:.2} ms at n={} to {:.2} ms at n={}",
                pair[0].1, pair[0].0, pair[1].1, pair[1].0
            ));
        }
    }
    let ratio = means[3].1 / means[0].1;
    if ratio <= 1.0 {
        return Err(format!("mean(10)/mean(3) = {ratio:.2}, expected > 1"));
    }
    let shown: Vec<String> = means.iter().map(|(n, m)| format!("n={n} {m:.2} ms")).collect();
    Ok(format!("{}; mean(10)/mean(3) = {ratio:.1}", shown.join(", ")))
}

/// Init time is governed by the join spacing, so it grows strictly with
/// the roster; and because every slot is relayed through the leader, the
/// leader sends exactly 2(n-1) messages per decided slot.
fn init_schedule_and_fanout() -> Verdict {
    let mut config = ExperimentConfig::new(ExperimentKind::Init);
    config.reps = 5;
    let output = run(&config);
    if let Some(first) = output.failures.first() {
        return Err(format!("simulation error: {first}"));
    }
    let means = summarize(&output.rows);
    for pair in means.windows(2) {
        if pair[1].mean <= pair[0].mean {
            return Err(format!(
                "init mean not strictly increasing: n={} {:.0} ms vs n={} {:.0} ms",
                pair[0].parameter, pair[0].mean, pair[1].parameter, pair[1].mean
            ));
        }
    }
    if means[0].mean < 20_000.0 {
        return Err(format!("init(3) = {:.0} ms, expected at least 20000", means[0].mean));
    }
    if means[3].mean < 90_000.0 {
        return Err(format!("init(10) = {:.0} ms, expected at least 90000", means[3].mean));
    }

    let mut fanout = Vec::new();
    for n in [3u32, 5, 7, 10] {
        let net_config = NetworkConfig { start_joined: true, ..NetworkConfig::default() };
        let mut net = Network::new(4_242, net_config, &consensus_roster(n), NoopApp);
        net.run_for(200.0).map_err(|e| e.to_string())?;
        let leader = net.current_leader().ok_or("no leader after warmup")?;
        let command = register_command("fanout-probe", leader);
        let cap = net.now() + 60_000.0;
        let measure = net.measure_consensus(command, cap).map_err(|e| e.to_string())?;
        let accepts = net.count_deliveries_from(leader, &format!("accept s={} ", measure.slot));
        let decides = net.count_deliveries_from(leader, &format!("decide s={} ", measure.slot));
        let expected = (n - 1) as usize;
        if accepts != expected || decides != expected {
            return Err(format!(
                "n={n}: leader sent {accepts} accepts and {decides} decides for one slot, expected {expected} each"
            ));
        }
        fanout.push(accepts + decides);
    }
    let init_shown: Vec<String> =
        means.iter().map(|s| format!("n={} {:.0} ms", s.parameter, s.mean)).collect();
    Ok(format!(
        "init strictly increasing ({}); leader per-slot sends grow linearly: {:?}",
        init_shown.join(", "),
        fanout
    ))
}

/// Default 7-member roster must settle a transaction within 8 s of
/// virtual time.
fn consensus_latency_bound(output: &(ExperimentConfig, stigma_bench::RunOutput)) -> Verdict {
    let means = means_in_order(output)?;
    let (_, mean7) = means
        .iter()
        .find(|(n, _)| n == "7")
        .ok_or("no 7-member roster in the sweep")?;
    if *mean7 > 8_000.0 {
        return Err(format!("n=7 mean consensus time {mean7:.1} ms exceeds the 8000 ms bound"));
    }
    Ok(format!("n=7 mean consensus time {mean7:.2} ms, bound 8000 ms"))
}

/// The edge gateway trains in 40% of the cloud baseline's time, relaxing
/// to 0.85 saves every device at least 60%, and the constrained boards
/// save 90% at 0.70.
fn cost_model_calibration() -> Verdict {
    let model = CostModel::default();
    let est = |class: DeviceClass, acc: f64| {
        model
            .estimate_time(&DeviceProfile::table_default(class), acc)
            .map_err(|e| e.to_string())
    };
    let egs_ratio = est(DeviceClass::Egs, 0.97)? / est(DeviceClass::M5aXlarge, 0.97)?;
    if (egs_ratio - 0.40).abs() > 0.004 {
        return Err(format!("egs/m5a at 0.97 is {egs_ratio:.4}, expected 0.40 within 1%"));
    }
    for class in DEVICE_CLASSES {
        let full = est(class, 0.97)?;
        let relaxed = est(class, 0.85)?;
        if relaxed > 0.40 * full {
            return Err(format!(
                "{} at 0.85 costs {relaxed:.1} ms, more than 40% of its {full:.1} ms full-target time",
                class.name()
            ));
        }
    }
    let rpi_ratio = est(DeviceClass::Rpi4, 0.70)? / est(DeviceClass::Rpi4, 0.97)?;
    if (rpi_ratio - 0.10).abs() > 0.001 {
        return Err(format!("rpi4 0.70/0.97 ratio is {rpi_ratio:.4}, expected 0.10 within 1%"));
    }
    Ok(format!(
        "egs/m5a at 0.97 = {egs_ratio:.3}; every device saves at least 60% at 0.85; rpi4 ratio at 0.70 = {rpi_ratio:.3}"
    ))
}

/// A megabyte over a bare 27 Mb/s link takes 296.3 ms, and the link table
/// keeps the gateway ahead of the cloud tier and the boards ahead of the
/// fog tier.
fn transfer_time_oracle() -> Verdict {
    let bare = LinkProfile::new(27.0, 0.0, 0.0).nominal_transfer_time(1_000_000);
    if (bare - 296.3).abs() > 0.1 {
        return Err(format!("1 MB at 27 Mb/s computed as {bare:.3} ms, expected 296.3 within 0.1"));
    }
    let mb = |class: DeviceClass| class.self_link(0.0).nominal_transfer_time(1_000_000);
    let (egs, m5a) = (mb(DeviceClass::Egs), mb(DeviceClass::M5aXlarge));
    if egs >= m5a {
        return Err(format!("egs {egs:.1} ms is not faster than m5a.xlarge {m5a:.1} ms"));
    }
    let (rpi, esm) = (mb(DeviceClass::Rpi4), mb(DeviceClass::EsMedium));
    if rpi >= esm {
        return Err(format!("rpi4 {rpi:.1} ms is not faster than es-medium {esm:.1} ms"));
    }
    Ok(format!(
        "1 MB at 27 Mb/s = {bare:.1} ms; egs {egs:.1} ms < m5a {m5a:.1} ms; rpi4 {rpi:.1} ms < es-medium {esm:.1} ms"
    ))
}

/// Parameters move only behind a committed vote, and no message ever
/// carries a record payload, raw or anonymized.
fn privacy_gate() -> Verdict {
    const RUNS: usize = 100;
    let results = map_indexed(RUNS, one_privacy_run);
    let mut committed = 0usize;
    let mut rejected = 0usize;
    for (i, result) in results.iter().enumerate() {
        match result {
            Ok(true) => committed += 1,
            Ok(false) => rejected += 1,
            Err(why) => return Err(format!("run {i}: {why}")),
        }
    }
    if committed == 0 || rejected == 0 {
        return Err(format!(
            "vote mix produced {committed} commits and {rejected} rejections; both outcomes must occur"
        ));
    }
    Ok(format!(
        "{RUNS} runs on 3 to 10 institutions ({committed} committed, {rejected} rejected): every transfer follows the commit, no record identifiers on the wire"
    ))
}

/// Returns whether the run committed. Any gate violation is an error.
fn one_privacy_run(i: usize) -> Result<bool, String> {
    let n = 3 + i % 8;
    let policies: Vec<VotePolicy> = (0..n)
        .map(|k| match k % 3 {
            0 => VotePolicy::Approve,
            1 => VotePolicy::Random { yes_prob: 0.7 },
            _ => VotePolicy::Random { yes_prob: 0.35 },
        })
        .collect();
    let mut scenario = FederationScenario::new(9_000 + i as u64, &policies);
    scenario.dataset_n = 60;
    scenario.dataset_dim = 2;
    scenario.target_accuracy = 0.8;
    scenario.max_epochs = 60;
    scenario.join_interval_ms = 150.0;
    if i % 2 == 1 {
        scenario.commit_policy = CommitPolicy { approval_fraction: 0.5 };
    }
    let net = run_federation(&scenario).map_err(|e| e.to_string())?;

    for entry in net.trace() {
        if entry.summary.contains("pid-") || entry.summary.contains("Patient ") {
            return Err(format!("record identifier on the wire: {}", entry.summary));
        }
    }

    let (_, outcome) = net.app().outcomes().iter().next().ok_or("no proposal was raised")?;
    let transfers: Vec<(f64, String)> = net
        .trace()
        .iter()
        .filter(|e| e.summary.contains("params-transfer"))
        .map(|e| (e.at_ms, e.summary.clone()))
        .collect();
    match outcome {
        ProposalOutcome::Rejected { .. } => {
            if let Some((at, summary)) = transfers.first() {
                return Err(format!("rejected vote still moved parameters at {at} ms: {summary}"));
            }
            Ok(false)
        }
        ProposalOutcome::Committed { source_model, .. } => {
            if transfers.is_empty() {
                return Err("committed vote moved no parameters".into());
            }
            let owner = scenario
                .institutions
                .iter()
                .map(|(id, _, _)| *id)
                .find(|id| net.app().model_id(*id) == source_model)
                .ok_or("source model has no owner")?;
            let commit_seen = net
                .trace()
                .iter()
                .find(|e| {
                    e.node == owner
                        && e.summary.contains("decide s=")
                        && e.summary.contains("v=commit_update")
                })
                .map(|e| e.at_ms)
                .ok_or("source owner never saw the commit decided")?;
            for (at, summary) in &transfers {
                if *at < commit_seen {
                    return Err(format!(
                        "parameters moved at {at} ms before the owner saw the commit at {commit_seen} ms: {summary}"
                    ));
                }
            }
            Ok(true)
        }
    }
}

/// Three institutions train to the 0.97 target, register, vote, and merge
/// into a v2 model on identical verified chains.
fn federation_end_to_end() -> Verdict {
    let mut scenario = FederationScenario::new(41, &[VotePolicy::Approve; 3]);
    scenario.dataset_n = 500;
    scenario.separation = 6.0;
    scenario.target_accuracy = 0.97;
    scenario.max_epochs = 500;
    scenario.join_interval_ms = 1_000.0;

    let net = run_federation(&scenario).map_err(|e| e.to_string())?;

    let mut worst = 1.0f64;
    for (id, _, _) in &scenario.institutions {
        let achieved = net
            .app()
            .training_accuracy(*id)
            .ok_or_else(|| format!("institution {id} never finished training"))?;
        worst = worst.min(achieved);
        if achieved < 0.97 {
            return Err(format!("institution {id} holdout accuracy {achieved:.3} is below 0.97"));
        }
    }
    let (_, outcome) = net.app().outcomes().iter().next().ok_or("no proposal was raised")?;
    let ProposalOutcome::Committed { source_model, target_model } = outcome else {
        return Err(format!("unanimous approval must commit, got {outcome:?}"));
    };
    if source_model == target_model {
        return Err("merge must pull a peer's model, not its own".into());
    }
    let dumps: Vec<String> = net.nodes().map(|n| n.ledger().dump_jsonl()).collect();
    if !dumps.windows(2).all(|w| w[0] == w[1]) {
        return Err("replicas exported different logs".into());
    }
    for node in net.nodes() {
        if !node.ledger().verify_chain() {
            return Err(format!("chain verification failed at {}", node.id()));
        }
        if node.ledger().latest_version(target_model) != Some(2) {
            return Err(format!("{} does not hold {target_model} v2", node.id()));
        }
    }
    Ok(format!(
        "all three trained to at least {worst:.3}, update committed, v2 of {target_model} on identical verified chains"
    ))
}

/// The same configuration must reproduce the same CSV bytes, including
/// across the threaded repetition runner.
fn seeded_determinism(output: &(ExperimentConfig, stigma_bench::RunOutput)) -> Verdict {
    let (config, first) = output;
    let again = run(config);
    let a = write_csv(config, &first.rows);
    let b = write_csv(config, &again.rows);
    if a != b {
        return Err("two consensus sweeps with the same seed diverged".into());
    }
    let transfer = ExperimentConfig::new(ExperimentKind::Transfer);
    let t1 = write_csv(&transfer, &run(&transfer).rows);
    let t2 = write_csv(&transfer, &run(&transfer).rows);
    if t1 != t2 {
        return Err("two transfer sweeps with the same seed diverged".into());
    }
    Ok(format!(
        "repeated consensus and transfer sweeps reproduced byte-identical CSV ({} and {} bytes)",
        a.len(),
        t1.len()
    ))
}

fn register_command(model_id: &str, owner: InstitutionId) -> LedgerCommand {
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
