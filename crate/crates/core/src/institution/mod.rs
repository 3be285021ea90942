//! The per-hospital node: record anonymization, local model handling, and
//! the vote-gated rolling-update flow in [`federation`].
//!
//! Raw records never leave the institution that ingested them; only
//! anonymized records feed training, and only model parameters travel
//! between nodes, after a committed vote.

pub mod federation;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{fingerprint, CanonicalEncode, Digest};
use crate::InstitutionId;

/// Ingested patient record, before any filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub name: String,
    pub patient_id: String,
    pub age: u32,
    pub zip: String,
    /// Named numeric features, e.g. sensor samples.
    pub measurements: BTreeMap<String, f64>,
}

/// Anonymized record: direct identifiers dropped, quasi-identifiers
/// generalized, measurements untouched.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnonRecord {
    pub pseudonym: Digest,
    pub age_band: String,
    pub zip2: String,
    pub measurements: BTreeMap<String, f64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnonymizeError {
    #[error("record has no patient id")]
    MissingPatientId,
    #[error("salt must be nonempty")]
    EmptySalt,
}

/// Strips direct identifiers and generalizes quasi-identifiers.
///
/// The pseudonym is `fingerprint(salt || patient_id)`: stable within an
/// institution (same salt), unlinkable across institutions (different
/// salts). Ages collapse to 10-year bands, zips to a 2-digit prefix.
pub fn anonymize(record: &RawRecord, salt: &[u8]) -> Result<AnonRecord, AnonymizeError> {
    if record.patient_id.is_empty() {
        return Err(AnonymizeError::MissingPatientId);
    }
    if salt.is_empty() {
        return Err(AnonymizeError::EmptySalt);
    }
    let mut keyed = salt.to_vec();
    keyed.extend_from_slice(record.patient_id.as_bytes());
    let decade = record.age / 10 * 10;
    Ok(AnonRecord {
        pseudonym: fingerprint(&keyed),
        age_band: format!("{}-{}", decade, decade + 9),
        zip2: record.zip.chars().take(2).collect(),
        measurements: record.measurements.clone(),
    })
}

/// Dense model parameters plus the sample count that produced them.
/// These travel only over direct peer-to-peer messages; the ledger sees
/// nothing but their fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Weight vector, bias last.
    pub weights: Vec<f64>,
    pub sample_count: u64,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn fingerprint(&self) -> Digest {
        fingerprint(&self.canonical_bytes())
    }
}

impl CanonicalEncode for ModelParams {
    fn encode(&self, out: &mut Vec<u8>) {
        self.weights.encode(out);
        self.sample_count.encode(out);
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MergeError {
    #[error("dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("merge requires at least one sample on either side")]
    NoSamples,
}

/// Sample-count-weighted average of two parameter vectors:
/// `out[i] = (n_a * a[i] + n_b * b[i]) / (n_a + n_b)`.
pub fn merge_models(a: &ModelParams, b: &ModelParams) -> Result<ModelParams, MergeError> {
    if a.dim() != b.dim() {
        return Err(MergeError::DimensionMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    let (na, nb) = (a.sample_count as f64, b.sample_count as f64);
    let total = na + nb;
    if total == 0.0 {
        return Err(MergeError::NoSamples);
    }
    let weights = a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(wa, wb)| (na * wa + nb * wb) / total)
        .collect();
    Ok(ModelParams {
        weights,
        sample_count: a.sample_count + b.sample_count,
    })
}

/// Identifier for an update proposal: proposer plus a local counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProposalId {
    pub proposer: InstitutionId,
    pub counter: u64,
}

impl fmt::Display for ProposalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}-{}", self.proposer, self.counter)
    }
}

impl CanonicalEncode for ProposalId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.proposer.encode(out);
        self.counter.encode(out);
    }
}

/// Offer to merge a registered peer model into the proposer's own model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateProposal {
    pub proposal_id: ProposalId,
    /// Registered model whose parameters are requested.
    pub source_model: String,
    /// Proposer's model that gets the merged update.
    pub target_model: String,
    pub proposer: InstitutionId,
    /// Fingerprint of the offered update's parameters.
    pub params_fingerprint: Digest,
}

impl CanonicalEncode for UpdateProposal {
    fn encode(&self, out: &mut Vec<u8>) {
        self.proposal_id.encode(out);
        self.source_model.encode(out);
        self.target_model.encode(out);
        self.proposer.encode(out);
        self.params_fingerprint.encode(out);
    }
}

/// How an institution answers vote requests; tests script these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotePolicy {
    #[default]
    Approve,
    Reject,
    /// Approve with the given probability, drawn from the institution's
    /// seeded stream.
    Random { yes_prob: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> RawRecord {
        RawRecord {
            name: "A".to_string(),
            patient_id: "p1".to_string(),
            age: 34,
            zip: "90210".to_string(),
            measurements: BTreeMap::from([("hr".to_string(), 72.0)]),
        }
    }

    #[test]
    fn anonymize_generalizes_and_pseudonymizes() {
        let record = sample_record();
        let anon = anonymize(&record, b"salt-a").unwrap();
        let mut keyed = b"salt-a".to_vec();
        keyed.extend_from_slice(b"p1");
        assert_eq!(anon.pseudonym, fingerprint(&keyed));
        assert_eq!(anon.age_band, "30-39");
        assert_eq!(anon.zip2, "90");
        assert_eq!(anon.measurements[&"hr".to_string()], 72.0);
    }

    #[test]
    fn same_salt_links_same_patient() {
        let record = sample_record();
        let first = anonymize(&record, b"salt-a").unwrap();
        let second = anonymize(&record, b"salt-a").unwrap();
        assert_eq!(first.pseudonym, second.pseudonym);
    }

    #[test]
    fn different_salts_unlink_across_institutions() {
        let record = sample_record();
        let ours = anonymize(&record, b"salt-a").unwrap();
        let theirs = anonymize(&record, b"salt-b").unwrap();
        assert_ne!(ours.pseudonym, theirs.pseudonym);
    }

    #[test]
    fn anonymize_requires_patient_id_and_salt() {
        let mut record = sample_record();
        record.patient_id.clear();
        assert_eq!(
            anonymize(&record, b"salt"),
            Err(AnonymizeError::MissingPatientId)
        );
        assert_eq!(
            anonymize(&sample_record(), b""),
            Err(AnonymizeError::EmptySalt)
        );
    }

    #[test]
    fn merge_weights_by_sample_count() {
        let a = ModelParams {
            weights: vec![1.0, 3.0],
            sample_count: 2,
        };
        let b = ModelParams {
            weights: vec![4.0, 0.0],
            sample_count: 1,
        };
        let merged = merge_models(&a, &b).unwrap();
        assert_eq!(merged.weights, vec![2.0, 2.0]);
        assert_eq!(merged.sample_count, 3);
    }

    #[test]
    fn merge_is_commutative_and_idempotent_on_equal_inputs() {
        let a = ModelParams {
            weights: vec![0.5, -1.5, 2.0],
            sample_count: 7,
        };
        let b = ModelParams {
            weights: vec![3.0, 0.25, -4.0],
            sample_count: 3,
        };
        assert_eq!(merge_models(&a, &b).unwrap(), merge_models(&b, &a).unwrap());

        let same = merge_models(&a, &a).unwrap();
        assert_eq!(same.weights, a.weights);
    }

    #[test]
    fn merge_rejects_mismatched_dimensions() {
        let a = ModelParams {
            weights: vec![1.0],
            sample_count: 1,
        };
        let b = ModelParams {
            weights: vec![1.0, 2.0],
            sample_count: 1,
        };
        assert_eq!(
            merge_models(&a, &b),
            Err(MergeError::DimensionMismatch { a: 1, b: 2 })
        );
    }
}
