//! End-to-end federation scenarios: local training on synthetic records,
//! fingerprint registration, discovery, voting, and the vote-gated merge.

use stigma_core::institution::federation::{
    run_federation, FederationScenario, ProposalOutcome,
};
use stigma_core::institution::VotePolicy;
use stigma_core::ledger::{CommitPolicy, TransactionKind};

#[test]
fn three_institutions_train_register_vote_and_merge() {
    let mut scenario = FederationScenario::new(41, &[VotePolicy::Approve; 3]);
    scenario.dataset_n = 500;
    scenario.separation = 6.0;
    scenario.target_accuracy = 0.97;
    scenario.max_epochs = 500;
    scenario.join_interval_ms = 1_000.0;

    let net = run_federation(&scenario).expect("scenario completes");

    for (id, _, _) in &scenario.institutions {
        let achieved = net.app().training_accuracy(*id).expect("trained");
        assert!(achieved >= 0.97, "institution {id} holdout accuracy {achieved}");
    }

    let (_, outcome) = net.app().outcomes().iter().next().expect("one proposal");
    let ProposalOutcome::Committed { source_model, target_model } = outcome else {
        panic!("unanimous approval must commit, got {outcome:?}");
    };
    assert_ne!(source_model, target_model, "merge pulls a peer's model");

    let dumps: Vec<String> = net.nodes().map(|n| n.ledger().dump_jsonl()).collect();
    for node in net.nodes() {
        let ledger = node.ledger();
        assert!(ledger.verify_chain());
        assert_eq!(ledger.latest_version(target_model), Some(2));
        assert_eq!(ledger.registered_models().len(), 3);
    }
    assert!(
        dumps.windows(2).all(|w| w[0] == w[1]),
        "replicas export identical logs"
    );
}

#[test]
fn ten_member_update_is_one_proposal_ten_votes_one_commit() {
    let mut scenario = FederationScenario::new(29, &[VotePolicy::Approve; 10]);
    scenario.dataset_n = 60;
    scenario.dataset_dim = 2;
    scenario.target_accuracy = 0.8;
    scenario.max_epochs = 80;
    scenario.join_interval_ms = 150.0;

    let net = run_federation(&scenario).expect("scenario completes");

    let count = |kind: TransactionKind| {
        net.node(scenario.initiator())
            .ledger()
            .records()
            .iter()
            .filter(|r| r.kind == kind)
            .count()
    };
    assert_eq!(count(TransactionKind::Join), 9, "the initializer never joins itself");
    assert_eq!(count(TransactionKind::ProposeUpdate), 1);
    assert_eq!(count(TransactionKind::Vote), 10, "every member's vote is a transaction");
    assert_eq!(count(TransactionKind::CommitUpdate), 1);
    assert_eq!(count(TransactionKind::RegisterModel), 11, "ten locals plus the merged v2");
}

#[test]
fn majority_policy_commits_over_dissent() {
    let policies = [
        VotePolicy::Approve,
        VotePolicy::Approve,
        VotePolicy::Approve,
        VotePolicy::Reject,
        VotePolicy::Reject,
    ];
    let mut scenario = FederationScenario::new(31, &policies);
    scenario.dataset_n = 60;
    scenario.dataset_dim = 2;
    scenario.target_accuracy = 0.8;
    scenario.max_epochs = 80;
    scenario.join_interval_ms = 150.0;
    scenario.commit_policy = CommitPolicy { approval_fraction: 0.5 };

    let net = run_federation(&scenario).expect("scenario completes");
    let (proposal_id, outcome) = net.app().outcomes().iter().next().expect("one proposal");
    assert!(matches!(outcome, ProposalOutcome::Committed { .. }));

    let votes = net.node(scenario.initiator()).ledger().votes_for(proposal_id);
    assert_eq!(votes.values().filter(|yes| **yes).count(), 3);
    assert_eq!(votes.values().filter(|yes| !**yes).count(), 2);

    let target = net.app().model_id(scenario.initiator()).to_string();
    for node in net.nodes() {
        assert_eq!(node.ledger().latest_version(&target), Some(2));
    }
}
