//! Studies run on finished searches: best-architecture features, cross-track
//! transfer, layer freezing, length matching, innovation and technique
//! classification, and the on-disk report bundle.

mod report;
mod techniques;

pub use report::{generate_report, render_report, ReportFiles, ReportInput, ReportOptions};
pub use techniques::{classify_techniques, TechniqueMatch, TechniqueRegistry, TechniqueRule};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    apply_edits_forced, get_field, validate_config, ArchConfig, Condition, ConfigMutation, FieldValue, HpConfig,
    TrackConfig, ARCH_FIELDS,
};
use crate::data::{Corpus, DataError, Split, TrackData};
use crate::model::ModelParams;
use crate::search::RunLog;
use crate::stats::{binomial_tail, FeatureVector};
use crate::trainer::{train_and_evaluate, Budget, ExperimentContext, TrainFailure, TrainOptions, DEFAULT_EVAL_BATCHES};

/// Universal iff every per-track degradation is strictly below this.
pub const UNIVERSAL_THRESHOLD_PCT: f64 = 1.0;
/// Null universal rate for the binomial test.
pub const PREDICTED_UNIVERSAL_RATE: f64 = 0.35;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("run {0} has no successful experiment")]
    NoSuccess(String),
    #[error("source parameters have {params} blocks, architecture has depth {arch}")]
    DepthMismatch { params: usize, arch: usize },
    #[error("freeze level {level} exceeds depth {depth}")]
    FreezeLevel { level: usize, depth: usize },
    #[error("truncated length {len} outside 2..={seq_len}")]
    TruncatedLength { len: usize, seq_len: usize },
    #[error("{tracks} tracks but {configs} configurations")]
    TrackCount { tracks: usize, configs: usize },
    #[error(transparent)]
    Train(#[from] TrainFailure),
}

/// A track ready for training: its corpus plus the default architecture and
/// HPs every study trains with.
#[derive(Debug, Clone)]
pub struct TrackSetup {
    pub track: TrackConfig,
    pub corpus: Corpus,
    pub baseline_arch: ArchConfig,
    pub default_hp: HpConfig,
    pub eval_batches: usize,
}

impl TrackSetup {
    /// Loads (or synthesizes) the track's corpus with desk defaults.
    pub fn desk(track: TrackConfig, synthetic_lines: usize, seed: u64) -> Result<Self, DataError> {
        let data = TrackData::load(&track, synthetic_lines, seed)?;
        Ok(Self {
            baseline_arch: ArchConfig::desk(track.seq_len),
            default_hp: HpConfig::desk(track.seq_len),
            corpus: data.corpus,
            track,
            eval_batches: DEFAULT_EVAL_BATCHES,
        })
    }

    pub fn context(&self) -> ExperimentContext<'_> {
        ExperimentContext { track: &self.track, corpus: &self.corpus, eval_batches: self.eval_batches }
    }

    pub fn name(&self) -> String {
        self.track.name.to_string()
    }

    fn train(&self, arch: &ArchConfig, budget: Budget, seed: u64, opts: &TrainOptions) -> Result<(ModelParams, f64), TrainFailure> {
        train_and_evaluate(&self.context(), arch, &self.default_hp, budget, seed, opts).map(|(o, bpb)| (o.params, bpb))
    }
}

/// Maps `f` over `items`, on a `threads`-wide pool when more than one thread
/// is requested. Output order always matches input order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = threads;
    items.iter().map(f).collect()
}

fn rel_change_pct(value: f64, reference: f64) -> f64 {
    (value - reference) / reference * 100.0
}

/// Numeric architecture fields become numeric features, everything else is
/// categorical.
pub fn arch_features(arch: &ArchConfig) -> (BTreeMap<String, f64>, BTreeMap<String, String>) {
    let hp = HpConfig::desk(2);
    let (mut numeric, mut categorical) = (BTreeMap::new(), BTreeMap::new());
    for &name in ARCH_FIELDS {
        match get_field(arch, &hp, name) {
            Some(FieldValue::Int(i)) => {
                numeric.insert(name.to_string(), i as f64);
            }
            Some(FieldValue::Real(x)) => {
                numeric.insert(name.to_string(), x);
            }
            Some(v) => {
                categorical.insert(name.to_string(), v.to_string());
            }
            None => {}
        }
    }
    (numeric, categorical)
}

/// Features of the best configuration a run reached, labelled by its track.
pub fn extract_features(log: &RunLog) -> Result<FeatureVector, AnalysisError> {
    if log.best_val_bpb().is_none() {
        return Err(AnalysisError::NoSuccess(log.header.run_id.clone()));
    }
    let (arch, _) = log.best_config();
    let (numeric, categorical) = arch_features(&arch);
    Ok(FeatureVector { track: log.header.track.to_string(), label: log.header.run_id.clone(), numeric, categorical })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub source_track: String,
    pub target_track: String,
    pub native_bpb: Option<f64>,
    pub transfer_bpb: Option<f64>,
    /// Negative means the transferred architecture beat the native one.
    pub rel_change_pct: Option<f64>,
    pub crashed: bool,
}

/// Trains every track's best architecture on every track with the target's
/// default HPs. Row-major over (source, target); the diagonal is the native
/// run and has change 0.
pub fn transfer_matrix(
    setups: &[TrackSetup],
    best: &[ArchConfig],
    budget: Budget,
    seed: u64,
    threads: usize,
) -> Result<Vec<TransferCell>, AnalysisError> {
    if setups.len() != best.len() {
        return Err(AnalysisError::TrackCount { tracks: setups.len(), configs: best.len() });
    }
    let n = setups.len();
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).map(move |t| (s, t))).collect();
    let scores = par_map(&jobs, threads, |&(s, t)| {
        setups[t].train(&best[s], budget, seed, &TrainOptions::default()).ok().map(|r| r.1)
    });
    let native = |t: usize| scores[t * n + t];
    Ok(jobs
        .iter()
        .zip(&scores)
        .map(|(&(s, t), &score)| {
            let native_bpb = native(t);
            let rel = match (score, native_bpb) {
                _ if s == t => native_bpb.map(|_| 0.0),
                (Some(x), Some(y)) => Some(rel_change_pct(x, y)),
                _ => None,
            };
            TransferCell {
                source_track: setups[s].name(),
                target_track: setups[t].name(),
                native_bpb,
                transfer_bpb: score,
                rel_change_pct: rel,
                crashed: rel.is_none(),
            }
        })
        .collect())
}

/// Trains `arch` on one track and returns the parameters.
pub fn train_source(setup: &TrackSetup, arch: &ArchConfig, budget: Budget, seed: u64) -> Result<ModelParams, AnalysisError> {
    Ok(setup.train(arch, budget, seed, &TrainOptions::default())?.0)
}

fn vocab_facing(name: &str) -> bool {
    matches!(name.rsplit('.').next(), Some("token_embedding" | "unembedding" | "value_embed"))
}

/// Source weights for `arch` at a new vocabulary: vocab-facing tensors are
/// freshly initialized, everything else is copied.
pub fn transplant(source: &ModelParams, arch: &ArchConfig, vocab: usize, seed: u64) -> Result<ModelParams, AnalysisError> {
    if source.layers.len() != arch.depth {
        return Err(AnalysisError::DepthMismatch { params: source.layers.len(), arch: arch.depth });
    }
    source.check_shapes(arch).map_err(TrainFailure::from)?;
    let mut out = ModelParams::init(arch, vocab, seed);
    for ((name, dst), (_, src)) in out.named_mut().into_iter().zip(source.named()) {
        if !vocab_facing(&name) {
            dst.clone_from(src);
        }
    }
    Ok(out)
}

/// Mask over [`ModelParams::named`] freezing the `k` deepest blocks, except
/// their vocab-facing value embeddings.
pub fn freeze_mask(params: &ModelParams, k: usize) -> Vec<bool> {
    let first = params.layers.len().saturating_sub(k);
    params
        .named()
        .iter()
        .map(|(name, _)| {
            let layer = name.strip_prefix("layers.").and_then(|r| r.split('.').next()).and_then(|l| l.parse::<usize>().ok());
            layer.is_some_and(|l| l >= first) && !vocab_facing(name)
        })
        .collect()
}

/// FNV-1a over the raw bits of the masked tensors.
pub fn masked_checksum(params: &ModelParams, mask: &[bool]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for ((_, t), _) in params.named().iter().zip(mask).filter(|(_, &m)| m) {
        for x in &t.data {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezePoint {
    pub level: usize,
    pub val_bpb: Option<f64>,
    /// Relative to level 0.
    pub degradation_pct: Option<f64>,
    /// Checksum of the frozen tensors unchanged by fine-tuning.
    pub frozen_intact: bool,
}

/// For each level `k`: transplant the source weights, freeze the `k` deepest
/// blocks and fine-tune the rest on the target. Level 0 is always trained as
/// the reference.
pub fn layer_freeze_curve(
    source: &ModelParams,
    arch: &ArchConfig,
    target: &TrackSetup,
    levels: &[usize],
    budget: Budget,
    seed: u64,
    threads: usize,
) -> Result<Vec<FreezePoint>, AnalysisError> {
    let start = transplant(source, arch, target.corpus.vocab_size(), seed)?;
    if let Some(&level) = levels.iter().find(|&&l| l > arch.depth) {
        return Err(AnalysisError::FreezeLevel { level, depth: arch.depth });
    }
    let mut all = vec![0];
    all.extend(levels.iter().copied().filter(|&l| l != 0));
    let runs = par_map(&all, threads, |&k| {
        let mask = freeze_mask(&start, k);
        let before = masked_checksum(&start, &mask);
        let opts = TrainOptions { init: Some(start.clone()), frozen: Some(mask.clone()) };
        match target.train(arch, budget, seed, &opts) {
            Ok((params, bpb)) => (Some(bpb), masked_checksum(&params, &mask) == before),
            Err(_) => (None, true),
        }
    });
    let reference = runs[0].0;
    let point = |k: usize, (bpb, intact): (Option<f64>, bool)| FreezePoint {
        level: k,
        val_bpb: bpb,
        degradation_pct: bpb.zip(reference).map(|(b, r)| if k == 0 { 0.0 } else { rel_change_pct(b, r) }),
        frozen_intact: intact,
    };
    let by_level: BTreeMap<usize, FreezePoint> = all.iter().zip(runs).map(|(&k, r)| (k, point(k, r))).collect();
    Ok(levels.iter().map(|k| by_level[k].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthMatch {
    pub truncated_len: usize,
    pub full_bpb: f64,
    pub truncated_bpb: f64,
    pub rel_change_pct: f64,
    pub full_val_bytes: usize,
    pub truncated_val_bytes: usize,
}

/// `hp` with its token count recomputed for a different sequence length.
pub fn hp_for_seq_len(hp: &HpConfig, seq_len: usize) -> HpConfig {
    HpConfig { total_batch_tokens: hp.device_batch_seqs * seq_len * hp.grad_accum_steps, ..hp.clone() }
}

/// Trains `arch` on the target at full length once, then at each truncated
/// length, and reports each change against the full-length run.
pub fn length_match_sweep(
    arch: &ArchConfig,
    target: &TrackSetup,
    lens: &[usize],
    budget: Budget,
    seed: u64,
    threads: usize,
) -> Result<Vec<LengthMatch>, AnalysisError> {
    let seq_len = target.track.seq_len;
    if let Some(&len) = lens.iter().find(|&&l| l < 2 || l > seq_len) {
        return Err(AnalysisError::TruncatedLength { len, seq_len });
    }
    let mut all = vec![seq_len];
    all.extend(lens.iter().copied().filter(|&l| l != seq_len));
    let runs = par_map(&all, threads, |&len| {
        let corpus = target.corpus.truncated(len);
        let track = TrackConfig { seq_len: len, ..target.track.clone() };
        let hp = hp_for_seq_len(&target.default_hp, len);
        let ctx = ExperimentContext { track: &track, corpus: &corpus, eval_batches: target.eval_batches };
        train_and_evaluate(&ctx, arch, &hp, budget, seed, &TrainOptions::default())
            .map(|(_, bpb)| (bpb, corpus.total_bytes(Split::Val)))
    });
    let runs: Vec<(f64, usize)> = runs.into_iter().collect::<Result<_, _>>()?;
    let (full_bpb, full_val_bytes) = runs[0];
    let by_len: BTreeMap<usize, (f64, usize)> = all.iter().copied().zip(runs).collect();
    Ok(lens
        .iter()
        .map(|len| {
            let (bpb, bytes) = by_len[len];
            LengthMatch {
                truncated_len: *len,
                full_bpb,
                truncated_bpb: bpb,
                rel_change_pct: rel_change_pct(bpb, full_bpb),
                full_val_bytes,
                truncated_val_bytes: bytes,
            }
        })
        .collect())
}

/// Single-length form of [`length_match_sweep`].
pub fn length_match_eval(
    arch: &ArchConfig,
    target: &TrackSetup,
    truncated_len: usize,
    budget: Budget,
    seed: u64,
) -> Result<LengthMatch, AnalysisError> {
    Ok(length_match_sweep(arch, target, &[truncated_len], budget, seed, 1)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationSource {
    pub mutation: ConfigMutation,
    pub origin_run: String,
    pub origin_track: String,
}

/// Every kept mutation of every agent run.
pub fn innovations_from_logs(logs: &[RunLog]) -> Vec<InnovationSource> {
    logs.iter()
        .filter(|l| l.header.condition == Condition::Agent)
        .flat_map(|l| {
            l.kept_mutations().map(|r| InnovationSource {
                mutation: r.mutation.clone(),
                origin_run: l.header.run_id.clone(),
                origin_track: l.header.track.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Universal,
    Specific,
}

/// Strict threshold: a degradation of exactly 1% is specific. NaN is specific.
pub fn classify_degradations(degradations: impl IntoIterator<Item = f64>) -> Classification {
    if degradations.into_iter().all(|d| d < UNIVERSAL_THRESHOLD_PCT) {
        Classification::Universal
    } else {
        Classification::Specific
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Innovation {
    pub source: InnovationSource,
    /// Per-track change vs. that track's baseline; +inf when training crashed.
    pub degradation_pct: BTreeMap<String, f64>,
    /// `None` when excluded.
    pub classification: Option<Classification>,
    pub inapplicable: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationSummary {
    pub universal: usize,
    pub classified: usize,
    pub excluded: usize,
    /// `P(X ≥ universal)` under the predicted universal rate.
    pub binomial_p: f64,
}

pub fn summarize_innovations(innovations: &[Innovation]) -> InnovationSummary {
    let classified = innovations.iter().filter(|i| i.classification.is_some()).count();
    let universal = innovations.iter().filter(|i| i.classification == Some(Classification::Universal)).count();
    InnovationSummary {
        universal,
        classified,
        excluded: innovations.len() - classified,
        binomial_p: binomial_tail(universal as u64, classified as u64, PREDICTED_UNIVERSAL_RATE),
    }
}

/// Applies each innovation to every track's baseline, trains it, and classifies
/// it by its worst per-track degradation. Innovations that do not apply to some
/// track's baseline are excluded.
pub fn classify_innovations(
    sources: &[InnovationSource],
    setups: &[TrackSetup],
    budget: Budget,
    seed: u64,
    threads: usize,
) -> Vec<Innovation> {
    let baselines = par_map(setups, threads, |s| s.train(&s.baseline_arch, budget, seed, &TrainOptions::default()).ok().map(|r| r.1));

    // Applied configs per (innovation, track), or the reason it does not apply.
    let applied: Vec<Vec<Result<(ArchConfig, HpConfig), String>>> = sources
        .iter()
        .map(|src| {
            setups
                .iter()
                .zip(&baselines)
                .map(|(s, base)| {
                    if base.is_none() {
                        return Err(format!("baseline crashed on {}", s.name()));
                    }
                    let (arch, hp) = apply_edits_forced(&s.baseline_arch, &s.default_hp, &src.mutation)
                        .map_err(|e| format!("{}: {e}", s.name()))?;
                    validate_config(&arch, &hp, &s.track).map_err(|v| {
                        let msgs: Vec<String> = v.iter().map(|x| format!("{}: {}", x.field, x.message)).collect();
                        format!("{}: {}", s.name(), msgs.join("; "))
                    })?;
                    Ok((arch, hp))
                })
                .collect()
        })
        .collect();

    let jobs: Vec<(usize, usize)> = applied
        .iter()
        .enumerate()
        .filter(|(_, per)| per.iter().all(Result::is_ok))
        .flat_map(|(i, per)| (0..per.len()).map(move |t| (i, t)))
        .collect();
    let scores = par_map(&jobs, threads, |&(i, t)| {
        let (arch, hp) = applied[i][t].as_ref().expect("filtered");
        let s = &setups[t];
        if *arch == s.baseline_arch && *hp == s.default_hp {
            return baselines[t];
        }
        train_and_evaluate(&s.context(), arch, hp, budget, seed, &TrainOptions::default()).ok().map(|r| r.1)
    });
    let mut per_innovation: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    for (&(i, t), score) in jobs.iter().zip(scores) {
        let base = baselines[t].expect("applicable implies baseline");
        let d = score.map_or(f64::INFINITY, |v| rel_change_pct(v, base));
        per_innovation.entry(i).or_default().insert(setups[t].name(), d);
    }

    sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let inapplicable = applied[i].iter().find_map(|r| r.as_ref().err().cloned());
            let degradation_pct = per_innovation.remove(&i).unwrap_or_default();
            let classification = inapplicable.is_none().then(|| classify_degradations(degradation_pct.values().copied()));
            Innovation { source: src.clone(), degradation_pct, classification, inapplicable }
        })
        .collect()
}
