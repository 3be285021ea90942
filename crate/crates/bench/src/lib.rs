//! Experiment harness behind the `stigma-bench` binary.
//!
//! Each experiment sweeps one parameter (institution count, device class,
//! or target accuracy), repeats every point with derived seeds, and emits
//! rows plus per-parameter mean and sample standard deviation. Repetitions
//! are independent simulations, so they fan out across worker threads and
//! are reassembled in input order; output is byte-stable for a given
//! configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use stigma_core::consensus::{
    ConsensusConfig, LedgerCommand, Network, NetworkConfig, NoopApp,
};
use stigma_core::institution::federation::staging_records;
use stigma_core::institution::anonymize;
use stigma_core::ledger::{fingerprint, ModelDescriptor, TransactionBody};
use stigma_core::netsim::{DeviceClass, DEVICE_CLASSES};
use stigma_core::parallel::map_indexed;
use stigma_core::seed::{derive_salt, derive_seed, stream_rng};
use stigma_core::trainer::{
    make_dataset_dim, train_toy, CostModel, DeviceProfile, SyntheticDataset, DEFAULT_MAX_EPOCHS,
};
use stigma_core::InstitutionId;

pub const ACCURACY_TARGETS: [f64; 3] = [0.97, 0.85, 0.70];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Init,
    Consensus,
    Training,
    EdgeAccuracy,
    Transfer,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Init,
        ExperimentKind::Consensus,
        ExperimentKind::Training,
        ExperimentKind::EdgeAccuracy,
        ExperimentKind::Transfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Init => "init",
            ExperimentKind::Consensus => "consensus",
            ExperimentKind::Training => "training",
            ExperimentKind::EdgeAccuracy => "edge-accuracy",
            ExperimentKind::Transfer => "transfer",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::UnknownExperiment(s.to_string()))
    }
}

/// Synthetic-record generator knobs, settable from the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams { seed: 7, n: 500, dim: 4, separation: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub institutions: Vec<u32>,
    pub reps: u32,
    pub seed: u64,
    pub leader_interval_ms: f64,
    pub vote_delay_ms: f64,
    pub join_interval_s: f64,
    pub coord_cost_ms: f64,
    pub jitter: f64,
    pub size_bytes: u64,
    pub out: Option<PathBuf>,
    pub cost_model: CostModel,
    pub dataset: DatasetParams,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            institutions: vec![3, 5, 7, 10],
            reps: 10,
            seed: 42,
            leader_interval_ms: 30.0,
            vote_delay_ms: 100.0,
            join_interval_s: 10.0,
            coord_cost_ms: 1.0,
            jitter: 0.3,
            size_bytes: 1_000_000,
            out: None,
            cost_model: CostModel::default(),
            dataset: DatasetParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.reps < 1 {
            return Err(ConfigError::NoRepetitions);
        }
        if self.institutions.is_empty() {
            return Err(ConfigError::NoInstitutions);
        }
        if let Some(&n) = self.institutions.iter().find(|&&n| n < 1) {
            return Err(ConfigError::BadInstitutionCount(n));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(ConfigError::BadJitter(self.jitter));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.leader_interval_ms)
            || !positive(self.vote_delay_ms)
            || !positive(self.join_interval_s)
            || !(self.coord_cost_ms.is_finite() && self.coord_cost_ms >= 0.0)
        {
            return Err(ConfigError::BadTiming);
        }
        if self.dataset.n < 2 || self.dataset.dim < 1 {
            return Err(ConfigError::BadDataset);
        }
        Ok(())
    }

    pub fn join_interval_ms(&self) -> f64 {
        self.join_interval_s * 1000.0
    }

    fn network_config(&self, start_joined: bool) -> NetworkConfig {
        NetworkConfig {
            consensus: ConsensusConfig {
                leader_interval_ms: self.leader_interval_ms,
                vote_round_delay_ms: self.vote_delay_ms,
                join_interval_ms: self.join_interval_ms(),
                ..ConsensusConfig::default()
            },
            coord_cost_ms: self.coord_cost_ms,
            jitter_frac: self.jitter,
            start_joined,
            ..NetworkConfig::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown experiment `{0}`; expected init, consensus, training, edge-accuracy, or transfer")]
    UnknownExperiment(String),
    #[error("no experiment named; pass one as the first argument or set it in the config file")]
    MissingExperiment,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("institutions list must not be empty")]
    NoInstitutions,
    #[error("institution counts must be at least 1, got {0}")]
    BadInstitutionCount(u32),
    #[error("jitter must lie in [0, 1), got {0}")]
    BadJitter(f64),
    #[error("intervals must be positive and the coordinator cost nonnegative")]
    BadTiming,
    #[error("dataset needs n >= 2 and dim >= 1")]
    BadDataset,
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// One configuration layer: the config file and the command line both parse
/// into this shape, and later layers override earlier ones field by field.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub experiment: Option<String>,
    pub institutions: Option<Vec<u32>>,
    pub reps: Option<u32>,
    pub seed: Option<u64>,
    pub leader_interval_ms: Option<f64>,
    pub vote_delay_ms: Option<f64>,
    pub join_interval_s: Option<f64>,
    pub coord_cost_ms: Option<f64>,
    pub jitter: Option<f64>,
    pub size_bytes: Option<u64>,
    pub out: Option<PathBuf>,
    pub cost_model: Option<CostModel>,
    pub dataset: Option<DatasetParams>,
}

pub fn load_file_config(path: &PathBuf) -> Result<PartialConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.clone(), source })
}

/// Folds layers over the defaults, later layers winning, then validates.
pub fn build_config(layers: &[PartialConfig]) -> Result<ExperimentConfig, ConfigError> {
    let kind = layers
        .iter()
        .rev()
        .find_map(|l| l.experiment.as_deref())
        .ok_or(ConfigError::MissingExperiment)?
        .parse::<ExperimentKind>()?;
    let mut config = ExperimentConfig::new(kind);
    for layer in layers {
        if let Some(v) = &layer.institutions {
            config.institutions = v.clone();
        }
        if let Some(v) = layer.reps {
            config.reps = v;
        }
        if let Some(v) = layer.seed {
            config.seed = v;
        }
        if let Some(v) = layer.leader_interval_ms {
            config.leader_interval_ms = v;
        }
        if let Some(v) = layer.vote_delay_ms {
            config.vote_delay_ms = v;
        }
        if let Some(v) = layer.join_interval_s {
            config.join_interval_s = v;
        }
        if let Some(v) = layer.coord_cost_ms {
            config.coord_cost_ms = v;
        }
        if let Some(v) = layer.jitter {
            config.jitter = v;
        }
        if let Some(v) = layer.size_bytes {
            config.size_bytes = v;
        }
        if let Some(v) = &layer.out {
            config.out = Some(v.clone());
        }
        if let Some(v) = &layer.cost_model {
            config.cost_model = v.clone();
        }
        if let Some(v) = layer.dataset {
            config.dataset = v;
        }
    }
    config.validate()?;
    Ok(config)
}

/// Institutions come online cloud tier first, then the edge boards, then
/// the fog cluster, cycling for larger rosters. Growing the roster this way
/// never removes a slow quorum member, so consensus time scales with n.
pub fn consensus_roster(n: u32) -> Vec<(InstitutionId, DeviceClass)> {
    const ORDER: [DeviceClass; 7] = [
        DeviceClass::M5aXlarge,
        DeviceClass::C5Large,
        DeviceClass::Njn,
        DeviceClass::Rpi4,
        DeviceClass::EsLarge,
        DeviceClass::EsMedium,
        DeviceClass::Egs,
    ];
    (0..n)
        .map(|i| (InstitutionId(i), ORDER[i as usize % ORDER.len()]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub parameter: String,
    pub run: u32,
    pub seed: u64,
    /// Measured virtual milliseconds; a livelocked or capped run leaves
    /// this empty and flags the row as an error.
    pub value: Option<f64>,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<String>,
}

impl RunOutput {
    fn push(&mut self, kind: ExperimentKind, parameter: &str, run: u32, seed: u64, result: Result<f64, String>) {
        let value = match result {
            Ok(v) => Some(v),
            Err(why) => {
                self.failures.push(format!("{kind} {parameter} run {run}: {why}"));
                None
            }
        };
        self.rows.push(ResultRow {
            experiment: kind,
            parameter: parameter.to_string(),
            run,
            seed,
            value,
        });
    }
}

pub fn run(config: &ExperimentConfig) -> RunOutput {
    match config.kind {
        ExperimentKind::Init => init_experiment(config),
        ExperimentKind::Consensus => consensus_experiment(config),
        ExperimentKind::Training => training_experiment(config),
        ExperimentKind::EdgeAccuracy => edge_accuracy_experiment(config),
        ExperimentKind::Transfer => transfer_experiment(config),
    }
}

/// Time for the whole roster to join at the configured spacing.
fn init_experiment(config: &ExperimentConfig) -> RunOutput {
    let mut out = RunOutput::default();
    for &n in &config.institutions {
        let results = map_indexed(config.reps as usize, |r| {
            let seed = config.seed + r as u64;
            let mut net =
                Network::new(seed, config.network_config(false), &consensus_roster(n), NoopApp);
            net.set_trace_enabled(false);
            let cap = config.join_interval_ms() * (f64::from(n) + 2.0) + 60_000.0;
            net.measure_init(cap).map_err(|e| e.to_string())
        });
        for (r, result) in results.into_iter().enumerate() {
            out.push(config.kind, &n.to_string(), r as u32, config.seed + r as u64, result);
        }
    }
    out
}

/// Time for one transaction to be applied by every member of a settled
/// network.
fn consensus_experiment(config: &ExperimentConfig) -> RunOutput {
    let mut out = RunOutput::default();
    for &n in &config.institutions {
        let results = map_indexed(config.reps as usize, |r| {
            let seed = config.seed + r as u64;
            let mut net =
                Network::new(seed, config.network_config(true), &consensus_roster(n), NoopApp);
            net.set_trace_enabled(false);
            net.run_for(200.0).map_err(|e| e.to_string())?;
            let owner = net.current_leader().ok_or("no leader after warmup")?;
            let command = register_command(&format!("bench-n{n}"), owner, config.dataset.n);
            net.measure_consensus(command, net.now() + 60_000.0)
                .map(|m| m.elapsed_ms)
                .map_err(|e| e.to_string())
        });
        for (r, result) in results.into_iter().enumerate() {
            out.push(config.kind, &n.to_string(), r as u32, config.seed + r as u64, result);
        }
    }
    out
}

fn register_command(model_id: &str, owner: InstitutionId, sample_count: usize) -> LedgerCommand {
    LedgerCommand {
        body: TransactionBody::RegisterModel {
            descriptor: ModelDescriptor {
                model_id: model_id.into(),
                owner,
                version: 1,
                algorithm_tag: "logreg".into(),
                accuracy_estimate: 0.9,
                params_fingerprint: fingerprint(model_id.as_bytes()),
                sample_count: sample_count as u64,
                metrics: BTreeMap::new(),
            },
            params: None,
        },
        proposer: owner,
    }
}

/// Modeled time for each device class to train to the 0.97 target. Each
/// repetition also runs the functional pipeline once (ingest, anonymize,
/// train on the anonymized measurements) so the timing rows never outlive
/// a broken learner.
fn training_experiment(config: &ExperimentConfig) -> RunOutput {
    let mut out = RunOutput::default();
    let pipeline: Vec<Result<(), String>> = map_indexed(config.reps as usize, |r| {
        training_pipeline(config, r as u64).map(|_| ())
    });
    for class in DEVICE_CLASSES {
        let estimate = config
            .cost_model
            .estimate_time(&DeviceProfile::table_default(class), 0.97)
            .map_err(|e| e.to_string());
        for r in 0..config.reps {
            let result = match (&estimate, &pipeline[r as usize]) {
                (Ok(ms), Ok(())) => Ok(*ms),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            out.push(config.kind, class.name(), r, config.seed + u64::from(r), result);
        }
    }
    out
}

fn training_pipeline(config: &ExperimentConfig, run: u64) -> Result<f64, String> {
    let d = config.dataset;
    let dataset = make_dataset_dim(d.seed + run, d.n, d.separation, d.dim)
        .map_err(|e| e.to_string())?;
    let salt = derive_salt(config.seed + run, 0);
    let anon: Vec<_> = staging_records(InstitutionId(0), &dataset)
        .iter()
        .map(|record| anonymize(record, &salt).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let features = anon
        .iter()
        .map(|record| (0..d.dim).map(|j| record.measurements[&format!("x{j}")]).collect())
        .collect();
    let rebuilt = SyntheticDataset {
        features,
        labels: dataset.labels.clone(),
        separation: dataset.separation,
    };
    let outcome = train_toy(
        &rebuilt,
        0.97,
        DEFAULT_MAX_EPOCHS,
        derive_seed(config.seed + run, "bench-train", 0),
    )
    .map_err(|e| e.to_string())?;
    Ok(outcome.achieved_accuracy)
}

/// Modeled training time per device at each accuracy target; the tradeoff
/// the constrained tier exploits.
fn edge_accuracy_experiment(config: &ExperimentConfig) -> RunOutput {
    let mut out = RunOutput::default();
    for class in DEVICE_CLASSES {
        for target in ACCURACY_TARGETS {
            let parameter = format!("{}@{target:.2}", class.name());
            let estimate = config
                .cost_model
                .estimate_time(&DeviceProfile::table_default(class), target)
                .map_err(|e| e.to_string());
            for r in 0..config.reps {
                out.push(config.kind, &parameter, r, config.seed + u64::from(r), estimate.clone());
            }
        }
    }
    out
}

/// One-way time to move the configured payload across each device's own
/// link profile.
fn transfer_experiment(config: &ExperimentConfig) -> RunOutput {
    let mut out = RunOutput::default();
    for (i, class) in DEVICE_CLASSES.into_iter().enumerate() {
        let link = class.self_link(config.jitter);
        for r in 0..config.reps {
            let seed = config.seed + u64::from(r);
            let mut rng = stream_rng(seed, "bench-transfer", i as u64);
            let ms = link.transfer_time(config.size_bytes, &mut rng);
            out.push(config.kind, class.name(), r, seed, Ok(ms));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub parameter: String,
    pub mean: f64,
    pub stddev: f64,
    pub samples: usize,
}

impl Summary {
    pub fn coefficient_of_variation(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.stddev / self.mean
        }
    }
}

/// Per-parameter mean and sample standard deviation (n-1 denominator) over
/// the rows that produced a value, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<Summary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for row in rows {
        if !groups.contains_key(row.parameter.as_str()) {
            order.push(&row.parameter);
        }
        let bucket = groups.entry(&row.parameter).or_default();
        if let Some(v) = row.value {
            bucket.push(v);
        }
    }
    order
        .into_iter()
        .map(|parameter| {
            let values = &groups[parameter];
            let n = values.len();
            let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
            let stddev = if n < 2 {
                0.0
            } else {
                let sq = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                (sq / (n - 1) as f64).sqrt()
            };
            Summary { parameter: parameter.to_string(), mean, stddev, samples: n }
        })
        .collect()
}

/// Fixed schema: `experiment,parameter,run,seed,value,unit,status`, one row
/// per run followed by `run=mean` and `run=stddev` summary rows per
/// parameter. Values print in shortest round-trip form, so a reader parses
/// back the exact numbers.
pub fn write_csv(config: &ExperimentConfig, rows: &[ResultRow]) -> String {
    let mut out = String::from("experiment,parameter,run,seed,value,unit,status\n");
    for row in rows {
        let (value, status) = match row.value {
            Some(v) => (v.to_string(), "ok"),
            None => (String::new(), "error"),
        };
        out.push_str(&format!(
            "{},{},{},{},{},ms,{}\n",
            row.experiment, row.parameter, row.run, row.seed, value, status
        ));
    }
    for summary in summarize(rows) {
        let status = if summary.samples == 0 { "error" } else { "ok" };
        let (mean, stddev) = if summary.samples == 0 {
            (String::new(), String::new())
        } else {
            (summary.mean.to_string(), summary.stddev.to_string())
        };
        out.push_str(&format!(
            "{},{},mean,{},{},ms,{}\n",
            config.kind, summary.parameter, config.seed, mean, status
        ));
        out.push_str(&format!(
            "{},{},stddev,{},{},ms,{}\n",
            config.kind, summary.parameter, config.seed, stddev, status
        ));
    }
    out
}
