//! The keep/revert search loop over the four conditions, and JSONL run logs.

mod llm;
mod proposers;

#[cfg(feature = "http")]
pub use llm::{llm_proposer, HttpTransport};
pub use llm::{
    extract_mutation, render_history, LlmProposer, PromptTemplate, Transport, HP_ONLY_SENTENCE,
    LLM_ENDPOINT_ENV, LLM_KEY_ENV, LLM_MAX_ATTEMPTS,
};
pub use proposers::{random_nas_proposer, scripted_proposer, RandomNasProposer, ScriptedProposer};

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::config::Condition;
use crate::config::{apply_edits_forced, apply_mutation, ArchConfig, ConfigMutation, HpConfig, SearchConstraint, TrackConfig, TrackName};
use crate::trainer::{run_experiment, Budget, ExperimentContext, ExperimentRecord};

/// Experiments per run unless overridden.
pub const DEFAULT_N: usize = 100;

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("missing configuration: {0}")]
    Config(String),
}

/// A proposed mutation. `malformed` marks a no-op standing in for a response
/// that could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub mutation: ConfigMutation,
    pub malformed: bool,
}

impl From<ConfigMutation> for Proposal {
    fn from(mutation: ConfigMutation) -> Self {
        Self { mutation, malformed: false }
    }
}

/// Produces the next mutation. Implementations fill `old_value` from `current`.
pub trait Proposer {
    fn propose(
        &mut self,
        history: &RunLog,
        current: (&ArchConfig, &HpConfig),
        constraint: &SearchConstraint,
    ) -> Result<Proposal, ProposerError>;

    fn descriptor(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub condition: Condition,
    pub track: TrackName,
    pub run_id: String,
    pub seed: u64,
    pub n_experiments: usize,
    pub baseline_val_bpb: Option<f64>,
    pub proposer: String,
    pub created_unix: u64,
    pub budget: Budget,
    pub track_config: TrackConfig,
    pub baseline_arch: ArchConfig,
    pub baseline_hp: HpConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<ExperimentRecord>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("run log line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("run log is empty")]
    Empty,
    #[error("run log records are not numbered 1..k (found {found} at position {position})")]
    Index { position: usize, found: usize },
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        Self { header, records: Vec::new() }
    }

    /// Header plus one line per record.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(lines: impl Iterator<Item = io::Result<String>>) -> Result<Self, LogError> {
        let mut header = None;
        let mut records: Vec<ExperimentRecord> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let json = |e| LogError::Json { line: i + 1, source: e };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(json)?);
            } else {
                let r: ExperimentRecord = serde_json::from_str(&line).map_err(json)?;
                if r.index != records.len() + 1 {
                    return Err(LogError::Index { position: records.len() + 1, found: r.index });
                }
                records.push(r);
            }
        }
        Ok(Self { header: header.ok_or(LogError::Empty)?, records })
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::from_lines(BufReader::new(File::open(path)?).lines())
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Baseline plus every kept mutation, replayed in order.
    pub fn replay_current(&self) -> (ArchConfig, HpConfig) {
        let mut cur = (self.header.baseline_arch.clone(), self.header.baseline_hp.clone());
        for r in self.records.iter().filter(|r| r.kept) {
            cur = apply_edits_forced(&cur.0, &cur.1, &r.mutation).unwrap_or((r.arch_after.clone(), r.hp_after.clone()));
        }
        cur
    }

    /// Lowest successful val_bpb, the baseline included.
    pub fn best_val_bpb(&self) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.succeeded())
            .filter_map(|r| r.val_bpb)
            .chain(self.header.baseline_val_bpb)
            .min_by(f64::total_cmp)
    }

    /// Config with the lowest val_bpb (the baseline when nothing beat it).
    pub fn best_config(&self) -> (ArchConfig, HpConfig) {
        let mut best = (self.header.baseline_val_bpb.unwrap_or(f64::INFINITY), None);
        for r in self.records.iter().filter(|r| r.succeeded()) {
            let v = r.val_bpb.expect("succeeded");
            if v < best.0 {
                best = (v, Some(r));
            }
        }
        match best.1 {
            Some(r) => (r.arch_after.clone(), r.hp_after.clone()),
            None => (self.header.baseline_arch.clone(), self.header.baseline_hp.clone()),
        }
    }

    pub fn kept_mutations(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.records.iter().filter(|r| r.kept)
    }
}

/// Appends a header and then records to a file, flushing and syncing each line
/// so an interrupted run leaves a readable prefix.
pub struct RunLogWriter {
    out: BufWriter<File>,
}

impl RunLogWriter {
    pub fn create(path: &Path, header: &RunHeader) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = Self { out: BufWriter::new(File::create(path)?) };
        w.line(&serde_json::to_string(header).expect("header serializes"))?;
        Ok(w)
    }

    pub fn append(&mut self, r: &ExperimentRecord) -> io::Result<()> {
        self.line(&serde_json::to_string(r).expect("record serializes"))
    }

    fn line(&mut self, s: &str) -> io::Result<()> {
        self.out.write_all(s.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

/// Everything that identifies one run.
#[derive(Debug, Clone)]
pub struct SearchSpec {
    pub condition: Condition,
    pub n: usize,
    pub budget: Budget,
    pub seed: u64,
    pub run_id: String,
    pub baseline_arch: ArchConfig,
    pub baseline_hp: HpConfig,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn rejected_record(index: usize, seed: u64, mutation: ConfigMutation, cur: &(ArchConfig, HpConfig)) -> ExperimentRecord {
    ExperimentRecord {
        index,
        mutation,
        arch_after: cur.0.clone(),
        hp_after: cur.1.clone(),
        val_bpb: None,
        crashed: false,
        kept: false,
        seed,
        steps_run: 0,
        wall_seconds: 0.0,
        param_count: 0,
        rejected: true,
    }
}

/// Runs a full search. See [`run_search_with`].
pub fn run_search(
    spec: &SearchSpec,
    proposer: &mut dyn Proposer,
    ctx: &ExperimentContext<'_>,
    out: Option<&Path>,
) -> Result<RunLog, io::Error> {
    run_search_with(spec, proposer, ctx, out, &mut |_| {})
}

/// Evaluates the baseline, then `spec.n` propose/validate/train steps. A
/// mutation is kept iff its val_bpb is strictly below the current best; every
/// experiment uses `spec.seed`, so an unchanged config reproduces its score and
/// ties revert. `fixed_default` runs record the baseline only. Only log I/O can
/// fail.
pub fn run_search_with(
    spec: &SearchSpec,
    proposer: &mut dyn Proposer,
    ctx: &ExperimentContext<'_>,
    out: Option<&Path>,
    on_record: &mut dyn FnMut(&ExperimentRecord),
) -> Result<RunLog, io::Error> {
    let constraint = SearchConstraint::for_condition(spec.condition);
    let baseline = run_experiment(ctx, &spec.baseline_arch, &spec.baseline_hp, spec.budget, spec.seed);
    let header = RunHeader {
        condition: spec.condition,
        track: ctx.track.name,
        run_id: spec.run_id.clone(),
        seed: spec.seed,
        n_experiments: spec.n,
        baseline_val_bpb: baseline.val_bpb,
        proposer: if spec.condition == Condition::FixedDefault { "none".to_string() } else { proposer.descriptor() },
        created_unix: now_unix(),
        budget: spec.budget,
        track_config: ctx.track.clone(),
        baseline_arch: spec.baseline_arch.clone(),
        baseline_hp: spec.baseline_hp.clone(),
    };
    let mut writer = out.map(|p| RunLogWriter::create(p, &header)).transpose()?;
    let mut log = RunLog::new(header);
    if spec.condition == Condition::FixedDefault {
        return Ok(log);
    }

    let mut current = (spec.baseline_arch.clone(), spec.baseline_hp.clone());
    // A crashed baseline never blocks the first success.
    let mut best = baseline.val_bpb.unwrap_or(f64::INFINITY);
    for index in 1..=spec.n {
        let record = match proposer.propose(&log, (&current.0, &current.1), &constraint) {
            Err(e) => rejected_record(index, spec.seed, ConfigMutation::noop(format!("proposer error: {e}")), &current),
            Ok(p) if p.malformed => rejected_record(index, spec.seed, p.mutation, &current),
            Ok(p) => match apply_mutation(&current.0, &current.1, &p.mutation, &constraint) {
                Err(rej) => {
                    let mut m = p.mutation;
                    m.rationale = format!("[rejected: {rej}] {}", m.rationale);
                    rejected_record(index, spec.seed, m, &current)
                }
                Ok((arch, hp)) => {
                    let mut r = run_experiment(ctx, &arch, &hp, spec.budget, spec.seed);
                    r.index = index;
                    r.mutation = p.mutation;
                    if let Some(v) = r.val_bpb.filter(|&v| v < best) {
                        r.kept = true;
                        best = v;
                        current = (arch, hp);
                    }
                    r
                }
            },
        };
        if let Some(w) = writer.as_mut() {
            w.append(&record)?;
        }
        on_record(&record);
        log.records.push(record);
    }
    Ok(log)
}

/// Default run id: condition, track and seed.
pub fn default_run_id(condition: Condition, track: TrackName, seed: u64) -> String {
    format!("{condition}-{track}-s{seed}")
}
