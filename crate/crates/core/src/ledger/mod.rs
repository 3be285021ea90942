//! Append-only, hash-chained, fingerprint-only permissioned ledger.
//!
//! Each replica holds the full history of committed transactions. A record
//! stores model *fingerprints* and metadata only; parameter vectors and
//! patient records never appear in a transaction body, and the append path
//! rejects any attempt to smuggle them in. Records are chained by digest,
//! so any byte of a committed record that changes breaks [`Ledger::verify_chain`].

mod canonical;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::institution::{ModelParams, ProposalId, UpdateProposal};
use crate::netsim::DeviceClass;
use crate::InstitutionId;

pub use canonical::CanonicalEncode;

/// SHA-256 digest; the only fingerprint type that ever reaches a record.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

/// Chain anchor: `prev_digest` of the record at slot 0.
pub const GENESIS_DIGEST: Digest = Digest([0u8; 32]);

impl Digest {
    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let bytes = hex::decode(s)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| hex::FromHexError::InvalidStringLength)?;
        Ok(Digest(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl CanonicalEncode for Digest {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
}

/// SHA-256 fingerprint of an arbitrary payload.
pub fn fingerprint(payload: &[u8]) -> Digest {
    Digest(Sha256::digest(payload).into())
}

/// Registered model metadata. Fingerprint and statistics only; the actual
/// parameters stay with the owning institution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub owner: InstitutionId,
    pub version: u64,
    pub algorithm_tag: String,
    pub accuracy_estimate: f64,
    pub params_fingerprint: Digest,
    pub sample_count: u64,
    /// Free-form inference/performance metrics reported alongside the model.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl CanonicalEncode for ModelDescriptor {
    fn encode(&self, out: &mut Vec<u8>) {
        self.model_id.encode(out);
        self.owner.encode(out);
        self.version.encode(out);
        self.algorithm_tag.encode(out);
        self.accuracy_estimate.encode(out);
        self.params_fingerprint.encode(out);
        self.sample_count.encode(out);
        self.metrics.encode(out);
    }
}

/// Transaction discriminant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransactionKind {
    Join,
    RegisterModel,
    ProposeUpdate,
    Vote,
    CommitUpdate,
}

impl fmt::Display for TransactionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TransactionKind::Join => "join",
            TransactionKind::RegisterModel => "register_model",
            TransactionKind::ProposeUpdate => "propose_update",
            TransactionKind::Vote => "vote",
            TransactionKind::CommitUpdate => "commit_update",
        };
        f.write_str(s)
    }
}

/// Kind-specific transaction payload as submitted for consensus.
///
/// `RegisterModel.params` exists only so the append policy has something to
/// reject: a compliant node always submits `None`, and any decided command
/// carrying `Some` parameters is refused by every replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransactionBody {
    Join {
        institution: InstitutionId,
        device_class: DeviceClass,
    },
    RegisterModel {
        descriptor: ModelDescriptor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<ModelParams>,
    },
    ProposeUpdate(UpdateProposal),
    Vote {
        proposal_id: ProposalId,
        voter: InstitutionId,
        approve: bool,
    },
    CommitUpdate {
        proposal_id: ProposalId,
    },
}

impl TransactionBody {
    pub fn kind(&self) -> TransactionKind {
        match self {
            TransactionBody::Join { .. } => TransactionKind::Join,
            TransactionBody::RegisterModel { .. } => TransactionKind::RegisterModel,
            TransactionBody::ProposeUpdate(_) => TransactionKind::ProposeUpdate,
            TransactionBody::Vote { .. } => TransactionKind::Vote,
            TransactionBody::CommitUpdate { .. } => TransactionKind::CommitUpdate,
        }
    }
}

impl CanonicalEncode for TransactionBody {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            TransactionBody::Join {
                institution,
                device_class,
            } => {
                out.push(0);
                institution.encode(out);
                device_class.name().encode(out);
            }
            TransactionBody::RegisterModel { descriptor, params } => {
                out.push(1);
                descriptor.encode(out);
                params.encode(out);
            }
            TransactionBody::ProposeUpdate(p) => {
                out.push(2);
                p.encode(out);
            }
            TransactionBody::Vote {
                proposal_id,
                voter,
                approve,
            } => {
                out.push(3);
                proposal_id.encode(out);
                voter.encode(out);
                approve.encode(out);
            }
            TransactionBody::CommitUpdate { proposal_id } => {
                out.push(4);
                proposal_id.encode(out);
            }
        }
    }
}

/// One committed, hash-chained ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub slot: u64,
    pub kind: TransactionKind,
    pub body: TransactionBody,
    pub proposer: InstitutionId,
    pub prev_digest: Digest,
    pub record_digest: Digest,
}

impl TransactionRecord {
    /// Digest over (slot, body incl. kind tag, proposer, prev_digest).
    pub fn compute_digest(
        slot: u64,
        body: &TransactionBody,
        proposer: InstitutionId,
        prev_digest: Digest,
    ) -> Digest {
        let mut bytes = Vec::new();
        slot.encode(&mut bytes);
        body.encode(&mut bytes);
        proposer.encode(&mut bytes);
        prev_digest.encode(&mut bytes);
        fingerprint(&bytes)
    }
}

/// How many member votes a `CommitUpdate` needs. Default is unanimity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommitPolicy {
    /// Fraction of current members that must have voted yes, in (0, 1].
    pub approval_fraction: f64,
}

impl Default for CommitPolicy {
    fn default() -> Self {
        CommitPolicy {
            approval_fraction: 1.0,
        }
    }
}

impl CommitPolicy {
    pub fn required_votes(&self, member_count: usize) -> usize {
        (self.approval_fraction * member_count as f64).ceil() as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("fingerprint-only policy: transaction body carries raw model parameters")]
    RawParamsRejected,
    #[error("model {model_id} version must increase: latest {latest}, got {got}")]
    VersionNotIncreasing {
        model_id: String,
        latest: u64,
        got: u64,
    },
    #[error("accuracy estimate {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("proposal references unregistered model {0}")]
    UnknownModel(String),
    #[error("unknown proposal {0}")]
    UnknownProposal(ProposalId),
    #[error("duplicate proposal id {0}")]
    DuplicateProposal(ProposalId),
    #[error("institution {0} is already a member")]
    DuplicateJoin(InstitutionId),
    #[error("duplicate vote on {proposal_id} from {voter}")]
    DuplicateVote {
        proposal_id: ProposalId,
        voter: InstitutionId,
    },
    #[error("commit policy not satisfied for {proposal_id}: {yes} yes of {required} required")]
    CommitPolicyNotSatisfied {
        proposal_id: ProposalId,
        yes: usize,
        required: usize,
    },
    #[error("proposal {0} already committed")]
    AlreadyCommitted(ProposalId),
}

/// Query for [`Ledger::find_suitable`].
#[derive(Debug, Clone)]
pub struct SuitabilityQuery {
    pub algorithm_tag: String,
    pub min_accuracy: f64,
    /// Models owned by the querier are never suitable for the querier.
    pub querier: InstitutionId,
}

/// A replica of the append-only transaction log.
#[derive(Debug, Clone)]
pub struct Ledger {
    records: Vec<TransactionRecord>,
    initial_members: Vec<InstitutionId>,
    commit_policy: CommitPolicy,
}

impl Ledger {
    pub fn new(initial_members: Vec<InstitutionId>) -> Self {
        Ledger {
            records: Vec::new(),
            initial_members,
            commit_policy: CommitPolicy::default(),
        }
    }

    pub fn with_commit_policy(mut self, policy: CommitPolicy) -> Self {
        self.commit_policy = policy;
        self
    }

    /// Rehydrates a replica from exported records, trusting nothing:
    /// callers decide what a false [`Ledger::verify_chain`] means.
    pub fn from_records(
        initial_members: Vec<InstitutionId>,
        records: Vec<TransactionRecord>,
    ) -> Self {
        Ledger {
            records,
            initial_members,
            commit_policy: CommitPolicy::default(),
        }
    }

    pub fn records(&self) -> &[TransactionRecord] {
        &self.records
    }

    pub fn commit_policy(&self) -> CommitPolicy {
        self.commit_policy
    }

    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Current membership: the founding members plus every committed join.
    pub fn members(&self) -> BTreeSet<InstitutionId> {
        let mut members: BTreeSet<_> = self.initial_members.iter().copied().collect();
        for record in &self.records {
            if let TransactionBody::Join { institution, .. } = &record.body {
                members.insert(*institution);
            }
        }
        members
    }

    /// Appends a decided transaction at the next slot.
    ///
    /// Only the consensus layer calls this, with a value that a quorum chose;
    /// validation is deterministic, so every replica accepts or rejects a
    /// decided command identically.
    pub fn append(
        &mut self,
        body: TransactionBody,
        proposer: InstitutionId,
    ) -> Result<&TransactionRecord, LedgerError> {
        self.validate(&body)?;
        let slot = self.len();
        let prev_digest = self
            .records
            .last()
            .map(|r| r.record_digest)
            .unwrap_or(GENESIS_DIGEST);
        let record_digest = TransactionRecord::compute_digest(slot, &body, proposer, prev_digest);
        self.records.push(TransactionRecord {
            slot,
            kind: body.kind(),
            body,
            proposer,
            prev_digest,
            record_digest,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    fn validate(&self, body: &TransactionBody) -> Result<(), LedgerError> {
        match body {
            TransactionBody::Join { institution, .. } => {
                if self.members().contains(institution) {
                    return Err(LedgerError::DuplicateJoin(*institution));
                }
            }
            TransactionBody::RegisterModel { descriptor, params } => {
                if params.is_some() {
                    return Err(LedgerError::RawParamsRejected);
                }
                if !(0.0..=1.0).contains(&descriptor.accuracy_estimate) {
                    return Err(LedgerError::AccuracyOutOfRange(descriptor.accuracy_estimate));
                }
                if let Some(latest) = self.latest_version(&descriptor.model_id) {
                    if descriptor.version <= latest {
                        return Err(LedgerError::VersionNotIncreasing {
                            model_id: descriptor.model_id.clone(),
                            latest,
                            got: descriptor.version,
                        });
                    }
                }
            }
            TransactionBody::ProposeUpdate(proposal) => {
                if self.find_proposal(&proposal.proposal_id).is_some() {
                    return Err(LedgerError::DuplicateProposal(proposal.proposal_id));
                }
                for model_id in [&proposal.source_model, &proposal.target_model] {
                    if self.latest_version(model_id).is_none() {
                        return Err(LedgerError::UnknownModel(model_id.clone()));
                    }
                }
            }
            TransactionBody::Vote {
                proposal_id, voter, ..
            } => {
                if self.find_proposal(proposal_id).is_none() {
                    return Err(LedgerError::UnknownProposal(*proposal_id));
                }
                if self.votes_for(proposal_id).contains_key(voter) {
                    return Err(LedgerError::DuplicateVote {
                        proposal_id: *proposal_id,
                        voter: *voter,
                    });
                }
            }
            TransactionBody::CommitUpdate { proposal_id } => {
                if self.find_proposal(proposal_id).is_none() {
                    return Err(LedgerError::UnknownProposal(*proposal_id));
                }
                if self.is_committed(proposal_id) {
                    return Err(LedgerError::AlreadyCommitted(*proposal_id));
                }
                let yes = self
                    .votes_for(proposal_id)
                    .values()
                    .filter(|approve| **approve)
                    .count();
                let required = self.commit_policy.required_votes(self.members().len());
                if yes < required {
                    return Err(LedgerError::CommitPolicyNotSatisfied {
                        proposal_id: *proposal_id,
                        yes,
                        required,
                    });
                }
            }
        }
        Ok(())
    }

    /// True iff every record's digest recomputes and links to its predecessor.
    pub fn verify_chain(&self) -> bool {
        let mut prev = GENESIS_DIGEST;
        for (index, record) in self.records.iter().enumerate() {
            if record.slot != index as u64 || record.prev_digest != prev {
                return false;
            }
            if record.kind != record.body.kind() {
                return false;
            }
            let expected = TransactionRecord::compute_digest(
                record.slot,
                &record.body,
                record.proposer,
                record.prev_digest,
            );
            if record.record_digest != expected {
                return false;
            }
            prev = record.record_digest;
        }
        true
    }

    /// Latest registered version of `model_id`, if any.
    pub fn latest_version(&self, model_id: &str) -> Option<u64> {
        self.register_records()
            .filter(|d| d.model_id == model_id)
            .map(|d| d.version)
            .max()
    }

    /// Latest-version descriptor per model id.
    pub fn registered_models(&self) -> BTreeMap<String, ModelDescriptor> {
        let mut latest: BTreeMap<String, ModelDescriptor> = BTreeMap::new();
        for descriptor in self.register_records() {
            match latest.get(&descriptor.model_id) {
                Some(existing) if existing.version >= descriptor.version => {}
                _ => {
                    latest.insert(descriptor.model_id.clone(), descriptor.clone());
                }
            }
        }
        latest
    }

    fn register_records(&self) -> impl Iterator<Item = &ModelDescriptor> {
        self.records.iter().filter_map(|r| match &r.body {
            TransactionBody::RegisterModel { descriptor, .. } => Some(descriptor),
            _ => None,
        })
    }

    /// Latest-version models matching the query, best accuracy first and
    /// model id as tie-break; the querier's own models are excluded.
    pub fn find_suitable(&self, query: &SuitabilityQuery) -> Vec<ModelDescriptor> {
        self.find_suitable_with(query, |_| true)
    }

    /// [`Ledger::find_suitable`] with an extra caller-supplied predicate.
    pub fn find_suitable_with<F>(
        &self,
        query: &SuitabilityQuery,
        predicate: F,
    ) -> Vec<ModelDescriptor>
    where
        F: Fn(&ModelDescriptor) -> bool,
    {
        let mut matches: Vec<ModelDescriptor> = self
            .registered_models()
            .into_values()
            .filter(|d| {
                d.algorithm_tag == query.algorithm_tag
                    && d.accuracy_estimate >= query.min_accuracy
                    && d.owner != query.querier
                    && predicate(d)
            })
            .collect();
        matches.sort_by(|a, b| {
            b.accuracy_estimate
                .total_cmp(&a.accuracy_estimate)
                .then_with(|| a.model_id.cmp(&b.model_id))
        });
        matches
    }

    pub fn find_proposal(&self, id: &ProposalId) -> Option<&UpdateProposal> {
        self.records.iter().find_map(|r| match &r.body {
            TransactionBody::ProposeUpdate(p) if p.proposal_id == *id => Some(p),
            _ => None,
        })
    }

    /// Committed votes on a proposal, by voter.
    pub fn votes_for(&self, id: &ProposalId) -> BTreeMap<InstitutionId, bool> {
        self.records
            .iter()
            .filter_map(|r| match &r.body {
                TransactionBody::Vote {
                    proposal_id,
                    voter,
                    approve,
                } if proposal_id == id => Some((*voter, *approve)),
                _ => None,
            })
            .collect()
    }

    pub fn is_committed(&self, id: &ProposalId) -> bool {
        self.records.iter().any(|r| {
            matches!(&r.body, TransactionBody::CommitUpdate { proposal_id } if proposal_id == id)
        })
    }

    /// One JSON record per line, digests hex-encoded.
    pub fn dump_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}
