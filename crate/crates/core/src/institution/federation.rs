//! Federated overlay behavior: each institution ingests records, anonymizes
//! them, trains locally, and registers its model fingerprint. One designated
//! initiator then runs a rolling update: pick the best peer model from the
//! ledger, propose, collect votes, and only after a committed approval fetch
//! the parameters, merge, and register the next version.
//!
//! Raw and anonymized records never leave their institution; the only
//! payloads on the wire are parameter requests and vote-gated parameter
//! transfers.

use std::collections::BTreeMap;

use rand::Rng;

use super::{
    anonymize, merge_models, AnonRecord, ModelParams, ProposalId, RawRecord, UpdateProposal,
    VotePolicy,
};
use crate::consensus::{
    Actions, App, AppEvent, ConsensusConfig, LedgerCommand, MeasureError, Network, NetworkConfig,
};
use crate::ledger::{
    CommitPolicy, Ledger, ModelDescriptor, SuitabilityQuery, TransactionBody, TransactionRecord,
};
use crate::netsim::{DeviceClass, DEVICE_CLASSES};
use crate::seed::{derive_salt, derive_seed, stream_rng};
use crate::trainer::{
    accuracy_on, holdout_split, make_dataset_dim, train_toy, CostModel, DeviceProfile,
    SyntheticDataset, TrainOutcome,
};
use crate::InstitutionId;

/// Overlay wire messages. There is deliberately no variant that could carry
/// a patient record.
#[derive(Debug, Clone)]
pub enum FedMsg {
    ParamsRequest { proposal_id: ProposalId },
    ParamsTransfer { proposal_id: ProposalId, params: ModelParams },
}

#[derive(Debug, Clone, Copy)]
pub enum FedTimer {
    /// Kick off ingest, anonymization, and local training.
    TrainStart,
    /// Local training finished; register the fingerprint.
    TrainingDone,
}

/// How a rolling update ended, recorded at the proposer.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalOutcome {
    Committed { source_model: String, target_model: String },
    Rejected { yes: usize, required: usize },
}

/// One full federation run: roster, scripted votes, data shape, policy.
#[derive(Debug, Clone)]
pub struct FederationScenario {
    pub seed: u64,
    pub institutions: Vec<(InstitutionId, DeviceClass, VotePolicy)>,
    pub dataset_n: usize,
    pub dataset_dim: usize,
    pub separation: f64,
    pub target_accuracy: f64,
    pub max_epochs: u32,
    pub commit_policy: CommitPolicy,
    pub join_interval_ms: f64,
    pub coord_cost_ms: f64,
    pub jitter_frac: f64,
    pub cost_model: CostModel,
}

impl FederationScenario {
    /// Roster of `policies.len()` institutions with ids 0.., cycling device
    /// classes, voting as scripted.
    pub fn new(seed: u64, policies: &[VotePolicy]) -> Self {
        assert!(policies.len() >= 2, "a federation needs at least two institutions");
        let institutions = policies
            .iter()
            .enumerate()
            .map(|(i, policy)| {
                (InstitutionId(i as u32), DEVICE_CLASSES[i % DEVICE_CLASSES.len()], *policy)
            })
            .collect();
        FederationScenario {
            seed,
            institutions,
            dataset_n: 120,
            dataset_dim: 3,
            separation: 3.0,
            target_accuracy: 0.85,
            max_epochs: 150,
            commit_policy: CommitPolicy::default(),
            join_interval_ms: 10_000.0,
            coord_cost_ms: 1.0,
            jitter_frac: 0.0,
            cost_model: CostModel::default(),
        }
    }

    pub fn initiator(&self) -> InstitutionId {
        self.institutions[0].0
    }
}

struct InstState {
    device_class: DeviceClass,
    vote_policy: VotePolicy,
    dataset: SyntheticDataset,
    model_id: String,
    anonymized: usize,
    trained: Option<TrainOutcome>,
    merged: Option<ModelParams>,
    started: bool,
    proposed: bool,
    /// Parameter requests that arrived before this node saw the commit.
    deferred_requests: Vec<(InstitutionId, ProposalId)>,
}

pub struct FederationApp {
    seed: u64,
    target_accuracy: f64,
    max_epochs: u32,
    initiator: InstitutionId,
    expected_models: usize,
    cost_model: CostModel,
    algorithm_tag: String,
    states: BTreeMap<InstitutionId, InstState>,
    outcomes: BTreeMap<ProposalId, ProposalOutcome>,
}

impl FederationApp {
    pub fn new(scenario: &FederationScenario) -> Self {
        let mut states = BTreeMap::new();
        for (id, device_class, vote_policy) in &scenario.institutions {
            let dataset = make_dataset_dim(
                derive_seed(scenario.seed, "fed-data", u64::from(id.0)),
                scenario.dataset_n,
                scenario.separation,
                scenario.dataset_dim,
            )
            .expect("scenario dataset parameters are valid");
            states.insert(
                *id,
                InstState {
                    device_class: *device_class,
                    vote_policy: *vote_policy,
                    dataset,
                    model_id: format!("model-{id}"),
                    anonymized: 0,
                    trained: None,
                    merged: None,
                    started: false,
                    proposed: false,
                    deferred_requests: Vec::new(),
                },
            );
        }
        FederationApp {
            seed: scenario.seed,
            target_accuracy: scenario.target_accuracy,
            max_epochs: scenario.max_epochs,
            initiator: scenario.initiator(),
            expected_models: scenario.institutions.len(),
            cost_model: scenario.cost_model.clone(),
            algorithm_tag: "logreg".into(),
            states,
            outcomes: BTreeMap::new(),
        }
    }

    pub fn outcomes(&self) -> &BTreeMap<ProposalId, ProposalOutcome> {
        &self.outcomes
    }

    pub fn training_accuracy(&self, id: InstitutionId) -> Option<f64> {
        self.states[&id].trained.as_ref().map(|t| t.achieved_accuracy)
    }

    pub fn merged_params(&self, id: InstitutionId) -> Option<&ModelParams> {
        self.states[&id].merged.as_ref()
    }

    pub fn anonymized_count(&self, id: InstitutionId) -> usize {
        self.states[&id].anonymized
    }

    pub fn model_id(&self, id: InstitutionId) -> &str {
        &self.states[&id].model_id
    }

    fn train_seed(&self, id: InstitutionId) -> u64 {
        derive_seed(self.seed, "fed-train", u64::from(id.0))
    }

    /// Ingest, anonymize, train on the anonymized measurements, and set the
    /// completion timer at the device's estimated training time.
    fn start_training(&mut self, node: InstitutionId, out: &mut Actions<FedMsg, FedTimer>) {
        let train_seed = self.train_seed(node);
        let target = self.target_accuracy;
        let max_epochs = self.max_epochs;
        let state = self.states.get_mut(&node).expect("scenario institution");
        if state.started {
            return;
        }
        state.started = true;

        let salt = derive_salt(self.seed, u64::from(node.0));
        let anon: Vec<AnonRecord> = staging_records(node, &state.dataset)
            .iter()
            .map(|record| anonymize(record, &salt).expect("staging records carry patient ids"))
            .collect();
        state.anonymized = anon.len();

        // Training inputs come from the anonymized records, not the raw
        // staging set; labels are supervision, not identity.
        let dim = state.dataset.dim();
        let features: Vec<Vec<f64>> = anon
            .iter()
            .map(|record| (0..dim).map(|j| record.measurements[&feature_name(j)]).collect())
            .collect();
        let training = SyntheticDataset {
            features,
            labels: state.dataset.labels.clone(),
            separation: state.dataset.separation,
        };
        let outcome = train_toy(&training, target, max_epochs, train_seed)
            .expect("scenario datasets have both classes");
        let device = DeviceProfile::table_default(state.device_class);
        let train_ms = self
            .cost_model
            .estimate_time(&device, target)
            .expect("cost model covers every roster device");
        out.note(format!(
            "anonymized {} records; training for {train_ms:.0} ms",
            state.anonymized
        ));
        state.trained = Some(outcome);
        out.set_timer(train_ms, FedTimer::TrainingDone);
    }

    fn finish_training(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        let state = &self.states[&node];
        let Some(trained) = &state.trained else {
            return;
        };
        let version = ledger.latest_version(&state.model_id).unwrap_or(0) + 1;
        let descriptor = ModelDescriptor {
            model_id: state.model_id.clone(),
            owner: node,
            version,
            algorithm_tag: self.algorithm_tag.clone(),
            accuracy_estimate: trained.achieved_accuracy,
            params_fingerprint: trained.params.fingerprint(),
            sample_count: trained.params.sample_count,
            metrics: BTreeMap::new(),
        };
        out.submit(LedgerCommand {
            body: TransactionBody::RegisterModel { descriptor, params: None },
            proposer: node,
        });
    }

    /// The initiator proposes once every expected model is registered.
    fn maybe_propose(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        if node != self.initiator || self.states[&node].proposed {
            return;
        }
        if ledger.registered_models().len() < self.expected_models {
            return;
        }
        let query = SuitabilityQuery {
            algorithm_tag: self.algorithm_tag.clone(),
            min_accuracy: 0.5,
            querier: node,
        };
        let Some(best) = ledger.find_suitable(&query).into_iter().next() else {
            out.note("rolling update skipped: no suitable peer model");
            return;
        };
        let state = self.states.get_mut(&node).expect("scenario institution");
        state.proposed = true;
        let proposal = UpdateProposal {
            proposal_id: ProposalId { proposer: node, counter: 1 },
            source_model: best.model_id.clone(),
            target_model: state.model_id.clone(),
            proposer: node,
            params_fingerprint: best.params_fingerprint,
        };
        out.note(format!(
            "rolling update: merge {} (acc {:.3}) into {}",
            best.model_id, best.accuracy_estimate, state.model_id
        ));
        out.submit(LedgerCommand {
            body: TransactionBody::ProposeUpdate(proposal),
            proposer: node,
        });
    }

    fn cast_vote(
        &mut self,
        node: InstitutionId,
        proposal: &UpdateProposal,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        let policy = self.states[&node].vote_policy;
        let approve = match policy {
            VotePolicy::Approve => true,
            VotePolicy::Reject => false,
            VotePolicy::Random { yes_prob } => {
                let tag = format!("fed-vote-{node}-{}", proposal.proposal_id);
                stream_rng(self.seed, &tag, 0).random_bool(yes_prob)
            }
        };
        out.submit(LedgerCommand {
            body: TransactionBody::Vote {
                proposal_id: proposal.proposal_id,
                voter: node,
                approve,
            },
            proposer: node,
        });
    }

    /// Proposer tallies once every member's vote is on the ledger.
    fn maybe_close_vote(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        proposal_id: ProposalId,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        if proposal_id.proposer != node || self.outcomes.contains_key(&proposal_id) {
            return;
        }
        let members = ledger.members();
        let votes = ledger.votes_for(&proposal_id);
        if votes.len() < members.len() {
            return;
        }
        let yes = votes.values().filter(|approve| **approve).count();
        let required = ledger.commit_policy().required_votes(members.len());
        if yes >= required {
            let proposal = ledger.find_proposal(&proposal_id).expect("tallied proposal exists");
            self.outcomes.insert(
                proposal_id,
                ProposalOutcome::Committed {
                    source_model: proposal.source_model.clone(),
                    target_model: proposal.target_model.clone(),
                },
            );
            out.note(format!("update approved {yes}/{}; committing", members.len()));
            out.submit(LedgerCommand {
                body: TransactionBody::CommitUpdate { proposal_id },
                proposer: node,
            });
        } else {
            self.outcomes.insert(proposal_id, ProposalOutcome::Rejected { yes, required });
            out.note(format!(
                "update rejected: {yes} yes of {required} required; no parameters move"
            ));
        }
    }

    /// Release parameters only when this node's own ledger shows the
    /// committed approval; anything earlier waits.
    fn serve_params(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        requester: InstitutionId,
        proposal_id: ProposalId,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        let committed = ledger.is_committed(&proposal_id);
        let owns_source = ledger
            .find_proposal(&proposal_id)
            .and_then(|p| ledger.registered_models().get(&p.source_model).cloned())
            .is_some_and(|d| d.owner == node);
        if committed && owns_source {
            let params = self.states[&node]
                .trained
                .as_ref()
                .expect("source owner trained before registering")
                .params
                .clone();
            out.note(format!("serving params for {proposal_id}: commit verified"));
            out.send(requester, FedMsg::ParamsTransfer { proposal_id, params });
        } else if owns_source {
            self.states
                .get_mut(&node)
                .expect("scenario institution")
                .deferred_requests
                .push((requester, proposal_id));
            out.note(format!("deferring params request {proposal_id}: commit not local yet"));
        } else {
            out.note(format!("refusing params request {proposal_id}: not the source owner"));
        }
    }

    fn merge_and_reregister(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        proposal_id: ProposalId,
        params: ModelParams,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        let Some(proposal) = ledger.find_proposal(&proposal_id) else {
            out.note(format!("dropping transfer for unknown proposal {proposal_id}"));
            return;
        };
        if params.fingerprint() != proposal.params_fingerprint {
            out.note(format!("dropping transfer for {proposal_id}: fingerprint mismatch"));
            return;
        }
        let train_seed = self.train_seed(node);
        let state = self.states.get_mut(&node).expect("scenario institution");
        let own = &state.trained.as_ref().expect("proposer trained first").params;
        let merged = merge_models(own, &params).expect("roster models share one dimension");

        let (_, holdout) = holdout_split(state.dataset.len(), train_seed);
        let features: Vec<Vec<f64>> =
            holdout.iter().map(|&i| state.dataset.features[i].clone()).collect();
        let labels: Vec<bool> = holdout.iter().map(|&i| state.dataset.labels[i]).collect();
        let accuracy = accuracy_on(&merged, &features, &labels);

        let version = ledger.latest_version(&proposal.target_model).unwrap_or(0) + 1;
        let descriptor = ModelDescriptor {
            model_id: proposal.target_model.clone(),
            owner: node,
            version,
            algorithm_tag: self.algorithm_tag.clone(),
            accuracy_estimate: accuracy,
            params_fingerprint: merged.fingerprint(),
            sample_count: merged.sample_count,
            metrics: BTreeMap::new(),
        };
        out.note(format!(
            "merged {} into {}: holdout acc {accuracy:.3}, registering v{version}",
            proposal.source_model, proposal.target_model
        ));
        state.merged = Some(merged);
        out.submit(LedgerCommand {
            body: TransactionBody::RegisterModel { descriptor, params: None },
            proposer: node,
        });
    }

    fn on_applied(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        record: &TransactionRecord,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        match &record.body {
            TransactionBody::Join { institution, .. } => {
                if *institution == node {
                    self.start_training(node, out);
                }
            }
            TransactionBody::RegisterModel { .. } => {
                self.maybe_propose(node, ledger, out);
            }
            TransactionBody::ProposeUpdate(proposal) => {
                let proposal = proposal.clone();
                self.cast_vote(node, &proposal, out);
            }
            TransactionBody::Vote { proposal_id, .. } => {
                self.maybe_close_vote(node, ledger, *proposal_id, out);
            }
            TransactionBody::CommitUpdate { proposal_id } => {
                let proposal_id = *proposal_id;
                if let Some(proposal) = ledger.find_proposal(&proposal_id) {
                    if proposal.proposer == node {
                        if let Some(source) = ledger.registered_models().get(&proposal.source_model)
                        {
                            out.note(format!("fetching params of {}", proposal.source_model));
                            out.send(source.owner, FedMsg::ParamsRequest { proposal_id });
                        }
                    }
                }
                let deferred = {
                    let state = self.states.get_mut(&node).expect("scenario institution");
                    let mut matched = Vec::new();
                    state.deferred_requests.retain(|(from, pid)| {
                        if *pid == proposal_id {
                            matched.push(*from);
                            false
                        } else {
                            true
                        }
                    });
                    matched
                };
                for requester in deferred {
                    self.serve_params(node, ledger, requester, proposal_id, out);
                }
            }
        }
    }
}

impl App for FederationApp {
    type Msg = FedMsg;
    type Timer = FedTimer;

    fn msg_summary(&self, msg: &FedMsg) -> String {
        match msg {
            FedMsg::ParamsRequest { proposal_id } => format!("params-request {proposal_id}"),
            FedMsg::ParamsTransfer { proposal_id, params } => {
                format!("params-transfer {proposal_id} bytes={}", self.msg_size_of(params))
            }
        }
    }

    fn msg_size(&self, msg: &FedMsg) -> u64 {
        match msg {
            FedMsg::ParamsRequest { .. } => 64,
            FedMsg::ParamsTransfer { params, .. } => self.msg_size_of(params),
        }
    }

    fn timer_summary(&self, timer: &FedTimer) -> String {
        match timer {
            FedTimer::TrainStart => "train-start".into(),
            FedTimer::TrainingDone => "training-done".into(),
        }
    }

    fn handle(
        &mut self,
        node: InstitutionId,
        ledger: &Ledger,
        event: AppEvent<FedMsg, FedTimer>,
        out: &mut Actions<FedMsg, FedTimer>,
    ) {
        match event {
            AppEvent::Timer(FedTimer::TrainStart) => self.start_training(node, out),
            AppEvent::Timer(FedTimer::TrainingDone) => self.finish_training(node, ledger, out),
            AppEvent::Applied { record } => self.on_applied(node, ledger, &record, out),
            AppEvent::Rejected { command, reason } => {
                out.note(format!("replica skipped {}: {reason}", command.body.kind()));
            }
            AppEvent::Message { from, msg } => match msg {
                FedMsg::ParamsRequest { proposal_id } => {
                    self.serve_params(node, ledger, from, proposal_id, out);
                }
                FedMsg::ParamsTransfer { proposal_id, params } => {
                    self.merge_and_reregister(node, ledger, proposal_id, params, out);
                }
            },
        }
    }
}

impl FederationApp {
    fn msg_size_of(&self, params: &ModelParams) -> u64 {
        24 + 8 * params.weights.len() as u64
    }
}

fn feature_name(j: usize) -> String {
    format!("x{j}")
}

/// Synthesizes the pre-anonymization intake set for one institution. The
/// identifying fields exist to be stripped; measurement keys are
/// `x0..x{dim-1}`.
pub fn staging_records(id: InstitutionId, dataset: &SyntheticDataset) -> Vec<RawRecord> {
    dataset
        .features
        .iter()
        .enumerate()
        .map(|(k, row)| RawRecord {
            name: format!("Patient {id}-{k}"),
            patient_id: format!("pid-{id}-{k}"),
            age: 18 + ((k as u32 * 13 + id.0 * 7) % 72),
            zip: format!("{:05}", 10_000 + (k * 37 + id.index()) % 89_999),
            measurements: row
                .iter()
                .enumerate()
                .map(|(j, value)| (feature_name(j), *value))
                .collect(),
        })
        .collect()
}

/// Runs a scenario to its natural end: either the merged model's new
/// version is applied everywhere, or the rejection is fully recorded.
pub fn run_federation(scenario: &FederationScenario) -> Result<Network<FederationApp>, MeasureError> {
    let roster: Vec<(InstitutionId, DeviceClass)> =
        scenario.institutions.iter().map(|(id, class, _)| (*id, *class)).collect();
    let app = FederationApp::new(scenario);
    let config = NetworkConfig {
        consensus: ConsensusConfig {
            join_interval_ms: scenario.join_interval_ms,
            commit_policy: scenario.commit_policy,
            ..ConsensusConfig::default()
        },
        coord_cost_ms: scenario.coord_cost_ms,
        jitter_frac: scenario.jitter_frac,
        ..NetworkConfig::default()
    };
    let mut net = Network::new(scenario.seed, config, &roster, app);
    net.schedule_app_timer(scenario.initiator(), 0.0, FedTimer::TrainStart);

    let cap = scenario.join_interval_ms * scenario.institutions.len() as f64 * 2.0 + 120_000.0;
    net.run_until_condition(cap, |net| {
        let Some((proposal_id, outcome)) = net.app().outcomes().iter().next() else {
            return false;
        };
        match outcome {
            ProposalOutcome::Committed { target_model, .. } => net
                .nodes()
                .all(|node| node.ledger().latest_version(target_model) == Some(2)),
            ProposalOutcome::Rejected { .. } => {
                let members = net.nodes().count();
                net.nodes()
                    .all(|node| node.ledger().votes_for(proposal_id).len() == members)
            }
        }
    })?;
    net.run_for(200.0)?;
    Ok(net)
}
