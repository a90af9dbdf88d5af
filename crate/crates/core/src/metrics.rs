//! Per-run and per-condition search metrics.
//!
//! AUC-OC is the unit-width rectangle sum over the N experiment positions, so a
//! constant curve at `c` has area exactly `c·N` (not the trapezoid's `c·(N−1)`).

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Condition;
use crate::search::RunLog;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("total improvement is zero; percentages are undefined")]
    DegenerateTotal,
    #[error("{0} has no runs")]
    Empty(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFarCurve {
    pub run_id: String,
    pub values: Vec<f64>,
}

/// Running minimum of successful val_bpb over the header's N positions, seeded
/// with the baseline. Crashes and rejections are skipped; positions past the
/// last record repeat the final value. A crashed baseline seeds with +inf.
pub fn best_so_far(log: &RunLog) -> BestSoFarCurve {
    let n = log.header.n_experiments.max(log.records.len());
    let mut best = log.header.baseline_val_bpb.unwrap_or(f64::INFINITY);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        if let Some(r) = log.records.get(k) {
            if let Some(v) = r.val_bpb.filter(|_| r.succeeded()) {
                best = best.min(v);
            }
        }
        values.push(best);
    }
    BestSoFarCurve { run_id: log.header.run_id.clone(), values }
}

pub fn auc_oc(curve: &BestSoFarCurve) -> f64 {
    curve.values.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepRate {
    pub kept: usize,
    pub eligible: usize,
    pub rate: f64,
    /// No eligible experiments; `rate` is reported as 0.
    pub degenerate: bool,
}

pub fn keep_rate(log: &RunLog) -> KeepRate {
    let eligible = log.records.iter().filter(|r| r.succeeded()).count();
    let kept = log.records.iter().filter(|r| r.kept).count();
    let rate = if eligible == 0 { 0.0 } else { kept as f64 / eligible as f64 };
    KeepRate { kept, eligible, rate, degenerate: eligible == 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub track: String,
    pub total_improvement: f64,
    pub hp_contribution: f64,
    pub arch_contribution: f64,
    pub hp_pct: f64,
    pub arch_pct: f64,
    pub bpb_fixed: f64,
    pub bpb_hp_only: f64,
    pub bpb_agent: f64,
    pub n_hp_only: usize,
    pub n_agent: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Splits the fixed-default → agent improvement into an HP-tuning part
/// (fixed − mean HP-only) and an architecture part (mean HP-only − mean agent).
pub fn decompose(
    track: &str,
    best_fixed: f64,
    best_hp_runs: &[f64],
    best_agent_runs: &[f64],
) -> Result<DecompositionResult, MetricsError> {
    if best_hp_runs.is_empty() {
        return Err(MetricsError::Empty("hp_only"));
    }
    if best_agent_runs.is_empty() {
        return Err(MetricsError::Empty("agent"));
    }
    let (hp, agent) = (mean(best_hp_runs), mean(best_agent_runs));
    let total = best_fixed - agent;
    if total == 0.0 {
        return Err(MetricsError::DegenerateTotal);
    }
    let hp_contribution = best_fixed - hp;
    let arch_contribution = hp - agent;
    Ok(DecompositionResult {
        track: track.to_string(),
        total_improvement: total,
        hp_contribution,
        arch_contribution,
        hp_pct: hp_contribution / total * 100.0,
        arch_pct: arch_contribution / total * 100.0,
        bpb_fixed: best_fixed,
        bpb_hp_only: hp,
        bpb_agent: agent,
        n_hp_only: best_hp_runs.len(),
        n_agent: best_agent_runs.len(),
    })
}

/// One run's headline numbers, from a log or from a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub track: String,
    pub condition: Condition,
    pub run: String,
    pub auc_oc: f64,
    pub best_bpb: f64,
    #[serde(skip)]
    pub keep: Option<KeepRate>,
    #[serde(skip)]
    pub curve: Option<BestSoFarCurve>,
}

impl RunSummary {
    pub fn from_log(log: &RunLog) -> Self {
        let curve = best_so_far(log);
        Self {
            track: log.header.track.to_string(),
            condition: log.header.condition,
            run: log.header.run_id.clone(),
            auc_oc: auc_oc(&curve),
            best_bpb: curve.values.last().copied().or(log.header.baseline_val_bpb).unwrap_or(f64::INFINITY),
            keep: Some(keep_rate(log)),
            curve: Some(curve),
        }
    }
}

/// Reads `track,condition,run,auc_oc,best_bpb` rows.
pub fn read_run_table(path: &Path) -> Result<Vec<RunSummary>, MetricsError> {
    read_run_table_from(std::fs::File::open(path)?)
}

pub fn read_run_table_from<R: io::Read>(r: R) -> Result<Vec<RunSummary>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<RunSummary>, _>>()?)
}

pub fn write_run_table<W: io::Write>(rows: &[RunSummary], w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-track best-bpb lists keyed by condition.
pub fn group_best(rows: &[RunSummary]) -> BTreeMap<String, BTreeMap<Condition, Vec<f64>>> {
    let mut out: BTreeMap<String, BTreeMap<Condition, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        out.entry(r.track.clone()).or_default().entry(r.condition).or_default().push(r.best_bpb);
    }
    out
}

/// Decomposes every track that has fixed-default, HP-only and agent runs. The
/// fixed-default value is the mean over its runs (normally exactly one).
pub fn decompose_all(rows: &[RunSummary]) -> Vec<(String, Result<DecompositionResult, MetricsError>)> {
    group_best(rows)
        .into_iter()
        .map(|(track, by)| {
            let get = |c| by.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            let fixed = get(Condition::FixedDefault);
            let res = if fixed.is_empty() {
                Err(MetricsError::Empty("fixed_default"))
            } else {
                decompose(&track, mean(fixed), get(Condition::HpOnly), get(Condition::Agent))
            };
            (track, res)
        })
        .collect()
}

/// `track,total_impr_bpb,hp_pct,arch_pct,n_runs_per_condition`, full precision.
pub fn write_decomposition_csv<W: io::Write>(results: &[DecompositionResult], w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["track", "total_impr_bpb", "hp_pct", "arch_pct", "n_runs_per_condition"])?;
    for d in results {
        out.write_record([
            d.track.clone(),
            d.total_improvement.to_string(),
            d.hp_pct.to_string(),
            d.arch_pct.to_string(),
            format!("hp_only={};agent={}", d.n_hp_only, d.n_agent),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ArchConfig, ConfigMutation, HpConfig, TrackConfig, TrackName};
    use crate::search::RunHeader;
    use crate::trainer::{Budget, ExperimentRecord};

    pub(crate) fn log_with(baseline: Option<f64>, n: usize, outcomes: &[(Option<f64>, bool)]) -> RunLog {
        let arch = ArchConfig::desk(16);
        let hp = HpConfig::desk(16);
        let header = RunHeader {
            condition: Condition::Agent,
            track: TrackName::SmilesLike,
            run_id: "r".into(),
            seed: 0,
            n_experiments: n,
            baseline_val_bpb: baseline,
            proposer: "test".into(),
            created_unix: 0,
            budget: Budget::Steps(1),
            track_config: TrackConfig::desk(TrackName::SmilesLike),
            baseline_arch: arch.clone(),
            baseline_hp: hp.clone(),
        };
        let mut best = baseline.unwrap_or(f64::INFINITY);
        let records = outcomes
            .iter()
            .enumerate()
            .map(|(i, &(v, rejected))| {
                let kept = v.is_some_and(|v| v < best);
                if kept {
                    best = v.unwrap();
                }
                ExperimentRecord {
                    index: i + 1,
                    mutation: ConfigMutation::default(),
                    arch_after: arch.clone(),
                    hp_after: hp.clone(),
                    val_bpb: v,
                    crashed: v.is_none() && !rejected,
                    kept,
                    seed: 0,
                    steps_run: 1,
                    wall_seconds: 0.0,
                    param_count: 0,
                    rejected,
                }
            })
            .collect();
        RunLog { header, records }
    }

    #[test]
    fn crash_is_skipped_and_baseline_seeds_the_curve() {
        let log = log_with(Some(0.75), 3, &[(None, false), (Some(0.7), false), (Some(0.8), false)]);
        assert_eq!(best_so_far(&log).values, vec![0.75, 0.70, 0.70]);
    }

    #[test]
    fn all_crashed_is_flat_at_baseline() {
        let log = log_with(Some(2.0), 4, &[(None, false), (None, true), (None, false), (None, false)]);
        assert_eq!(best_so_far(&log).values, vec![2.0; 4]);
    }

    #[test]
    fn short_logs_are_flat_extended() {
        let log = log_with(Some(0.5961), 100, &[]);
        let c = best_so_far(&log);
        assert_eq!(c.values.len(), 100);
        assert!((auc_oc(&c) - 59.61).abs() < 1e-9);
        let log = log_with(Some(1.0), 5, &[(Some(0.5), false)]);
        assert_eq!(best_so_far(&log).values, vec![0.5; 5]);
    }

    #[test]
    fn keep_rate_counts() {
        // 3 kept among 10 eligible, plus 2 crashes
        let mut outcomes = vec![(Some(0.9), false), (Some(0.8), false), (Some(0.7), false)];
        outcomes.extend(std::iter::repeat_n((Some(0.95), false), 7));
        outcomes.extend([(None, false), (None, false)]);
        let k = keep_rate(&log_with(Some(1.0), 12, &outcomes));
        assert_eq!((k.kept, k.eligible), (3, 10));
        assert!((k.rate - 0.3).abs() < 1e-15);
        let k = keep_rate(&log_with(Some(1.0), 100, &[]));
        assert!(k.degenerate && k.rate == 0.0);
    }

    #[test]
    fn decomposition_identities() {
        let d = decompose("t", 1.0, &[0.9, 0.8], &[0.85]).unwrap();
        assert!((d.hp_contribution + d.arch_contribution - d.total_improvement).abs() < 1e-12);
        assert!((d.hp_pct + d.arch_pct - 100.0).abs() < 1e-12);
        let d = decompose("t", 1.0, &[0.8], &[0.8]).unwrap();
        assert_eq!((d.hp_pct, d.arch_pct), (100.0, 0.0));
        assert!(matches!(decompose("t", 0.8, &[0.9], &[0.8]), Err(MetricsError::DegenerateTotal)));
        assert!(decompose("t", 0.8, &[], &[0.7]).is_err());
    }
}
