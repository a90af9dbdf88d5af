//! One budgeted train-and-evaluate experiment.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate_config, ArchConfig, ConfigMutation, HpConfig, TrackConfig};
use crate::data::{make_batches, BatchStream, Corpus, DataError, Split};
use crate::model::{compute_grads_scaled, forward_logits, loss_stats, LossStats, ModelError, ModelParams};
use crate::optim::OptimState;

/// Sequences per evaluation batch.
pub const EVAL_BATCH_SEQS: usize = 16;
pub const DEFAULT_EVAL_BATCHES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Steps(usize),
    Seconds(f64),
}

impl Budget {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Budget::Steps(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub index: usize,
    pub mutation: ConfigMutation,
    pub arch_after: ArchConfig,
    pub hp_after: HpConfig,
    pub val_bpb: Option<f64>,
    pub crashed: bool,
    pub kept: bool,
    pub seed: u64,
    pub steps_run: usize,
    pub wall_seconds: f64,
    pub param_count: usize,
    /// The proposal broke the condition's constraint and was never trained.
    #[serde(default)]
    pub rejected: bool,
}

impl ExperimentRecord {
    /// A successful, non-rejected experiment.
    pub fn succeeded(&self) -> bool {
        !self.crashed && !self.rejected && self.val_bpb.is_some()
    }
}

#[derive(Debug, Error)]
pub enum TrainFailure {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("panic during training: {0}")]
    Panic(String),
}

/// Everything an experiment reads besides the configuration under test.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentContext<'a> {
    pub track: &'a TrackConfig,
    pub corpus: &'a Corpus,
    pub eval_batches: usize,
}

impl<'a> ExperimentContext<'a> {
    pub fn new(track: &'a TrackConfig, corpus: &'a Corpus) -> Self {
        Self { track, corpus, eval_batches: DEFAULT_EVAL_BATCHES }
    }
}

/// Optional knobs for [`train_model`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Start from these parameters instead of a fresh seeded init.
    pub init: Option<ModelParams>,
    /// Aligned with [`ModelParams::named`]; `true` entries are never updated.
    pub frozen: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub steps_run: usize,
    /// Mean training cross-entropy per optimizer step, in bits per byte.
    pub train_bpb: Vec<f64>,
}

/// Trains under MuonAdamW and the LR/WD schedules until the budget runs out.
/// A non-finite loss, or a weight outside the f32 range, aborts with
/// [`TrainFailure::NonFinite`].
pub fn train_model(
    arch: &ArchConfig,
    hp: &HpConfig,
    corpus: &Corpus,
    budget: Budget,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainFailure> {
    let mut params = match &opts.init {
        Some(p) => p.clone(),
        None => ModelParams::init(arch, corpus.vocab_size(), seed),
    };
    params.check_shapes(arch)?;
    let mut optim = OptimState::new(&params);
    let mut stream = BatchStream::new(corpus, Split::Train, hp.device_batch_seqs, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let accum = hp.grad_accum_steps.max(1);
    let start = Instant::now();
    let mut train_bpb = Vec::new();
    let mut step = 0;
    // Wall-clock budgets map elapsed time onto a fine fixed schedule grid.
    const CLOCK_GRID: usize = 1_000_000;
    loop {
        let (pos, total) = match budget {
            Budget::Steps(n) => {
                if step >= n {
                    break;
                }
                (step, n)
            }
            Budget::Seconds(s) => {
                let frac = start.elapsed().as_secs_f64() / s.max(f64::MIN_POSITIVE);
                if frac >= 1.0 {
                    break;
                }
                ((frac * CLOCK_GRID as f64) as usize, CLOCK_GRID)
            }
        };
        let mut grads: Option<ModelParams> = None;
        let mut stats = LossStats { nats: 0.0, targets: 0, bytes: 0 };
        for _ in 0..accum {
            let batch = stream.next().ok_or(DataError::EmptySplit("train"))?;
            let (g, s) = compute_grads_scaled(&params, arch, &batch, 1.0 / accum as f64)?;
            stats.merge(&s);
            match grads.as_mut() {
                Some(acc) => {
                    for ((_, a), (_, b)) in acc.named_mut().into_iter().zip(g.named()) {
                        a.add_scaled(b, 1.0);
                    }
                }
                None => grads = Some(g),
            }
        }
        let bpb = stats.bpb();
        if !bpb.is_finite() {
            return Err(TrainFailure::NonFinite { step });
        }
        train_bpb.push(bpb);
        let grads = grads.expect("accum >= 1");
        optim.step(&mut params, &grads, hp, pos, total, opts.frozen.as_deref());
        if !within_f32_range(&params) {
            return Err(TrainFailure::NonFinite { step });
        }
        step += 1;
    }
    Ok(TrainOutcome { params, steps_run: step, train_bpb })
}

/// Any weight past `f32::MAX` would already be infinite in single precision.
fn within_f32_range(params: &ModelParams) -> bool {
    params.named().iter().all(|(_, t)| t.data.iter().all(|x| x.abs() <= f32::MAX as f64))
}

/// Pooled bits per byte over the first `n_batches` of a seeded shuffle of `split`.
pub fn evaluate_bpb(
    params: &ModelParams,
    arch: &ArchConfig,
    corpus: &Corpus,
    split: Split,
    n_batches: usize,
    seed: u64,
) -> Result<f64, TrainFailure> {
    let batches = make_batches(corpus, split, EVAL_BATCH_SEQS, seed)?;
    let mut total = LossStats { nats: 0.0, targets: 0, bytes: 0 };
    for b in batches.iter().take(n_batches.max(1)) {
        let logits = forward_logits(params, arch, b)?;
        total.merge(&loss_stats(&logits, b));
    }
    Ok(total.bpb())
}

/// Validation bits per byte; never modifies `params`.
pub fn evaluate_val_bpb(
    params: &ModelParams,
    arch: &ArchConfig,
    corpus: &Corpus,
    eval_batches: usize,
    seed: u64,
) -> Result<f64, TrainFailure> {
    evaluate_bpb(params, arch, corpus, Split::Val, eval_batches, seed)
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}

/// Trains, evaluates and returns the trained parameters, or the failure.
pub fn train_and_evaluate(
    ctx: &ExperimentContext<'_>,
    arch: &ArchConfig,
    hp: &HpConfig,
    budget: Budget,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(TrainOutcome, f64), TrainFailure> {
    if let Err(v) = validate_config(arch, hp, ctx.track) {
        let msg: Vec<String> = v.iter().map(|x| format!("{}: {}", x.field, x.message)).collect();
        return Err(TrainFailure::Invalid(msg.join("; ")));
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        let outcome = train_model(arch, hp, ctx.corpus, budget, seed, opts)?;
        let bpb = evaluate_val_bpb(&outcome.params, arch, ctx.corpus, ctx.eval_batches, seed)?;
        if !bpb.is_finite() {
            return Err(TrainFailure::NonFinite { step: outcome.steps_run });
        }
        Ok((outcome, bpb))
    }));
    result.unwrap_or_else(|e| Err(TrainFailure::Panic(panic_message(e))))
}

/// Runs one experiment. Every failure becomes a crashed record.
pub fn run_experiment(
    ctx: &ExperimentContext<'_>,
    arch: &ArchConfig,
    hp: &HpConfig,
    budget: Budget,
    seed: u64,
) -> ExperimentRecord {
    let start = Instant::now();
    let param_count = crate::model::param_count_for(arch, ctx.corpus.vocab_size());
    let result = train_and_evaluate(ctx, arch, hp, budget, seed, &TrainOptions::default());
    let (val_bpb, steps_run) = match &result {
        Ok((o, bpb)) => (Some(*bpb), o.steps_run),
        Err(_) => (None, 0),
    };
    ExperimentRecord {
        index: 0,
        mutation: ConfigMutation::default(),
        arch_after: arch.clone(),
        hp_after: hp.clone(),
        crashed: val_bpb.is_none(),
        val_bpb,
        kept: false,
        seed,
        steps_run,
        wall_seconds: start.elapsed().as_secs_f64(),
        param_count,
        rejected: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{TrackName, ValueEmbeddings};
    use crate::data::TrackData;

    fn setup(seq_len: usize) -> (TrackConfig, TrackData) {
        let track = TrackConfig { seq_len, ..TrackConfig::desk(TrackName::SmilesLike) };
        let data = TrackData::load(&track, 400, 7).unwrap();
        (track, data)
    }

    fn tiny(seq_len: usize) -> (ArchConfig, HpConfig) {
        (ArchConfig { depth: 1, width: 32, heads: 2, kv_heads: 2, ..ArchConfig::desk(seq_len) }, HpConfig::desk_batch(seq_len, 4, 1))
    }

    #[test]
    fn step_budget_is_bitwise_reproducible() {
        let (track, data) = setup(32);
        let (arch, hp) = tiny(32);
        let ctx = ExperimentContext::new(&track, &data.corpus);
        let a = run_experiment(&ctx, &arch, &hp, Budget::Steps(5), 3);
        let b = run_experiment(&ctx, &arch, &hp, Budget::Steps(5), 3);
        assert!(!a.crashed);
        assert_eq!(a.val_bpb.unwrap().to_bits(), b.val_bpb.unwrap().to_bits());
        assert_eq!(a.steps_run, 5);
    }

    #[test]
    fn huge_matrix_lr_crashes_cleanly() {
        let (track, data) = setup(32);
        let (arch, hp) = tiny(32);
        let hp = HpConfig { lr_matrix: 1e6, ..hp };
        let ctx = ExperimentContext::new(&track, &data.corpus);
        let r = run_experiment(&ctx, &arch, &hp, Budget::Steps(20), 1);
        assert!(r.crashed);
        assert!(r.val_bpb.is_none());
        assert!(!r.kept);
    }

    #[test]
    fn invalid_config_is_a_crash_not_a_panic() {
        let (track, data) = setup(32);
        let (arch, hp) = tiny(32);
        let ctx = ExperimentContext::new(&track, &data.corpus);
        let bad = ArchConfig { heads: 3, ..arch.clone() };
        assert!(run_experiment(&ctx, &bad, &hp, Budget::Steps(2), 1).crashed);
        let bad_batch = HpConfig { total_batch_tokens: 7, ..hp };
        assert!(run_experiment(&ctx, &arch, &bad_batch, Budget::Steps(2), 1).crashed);
    }

    #[test]
    fn evaluation_is_pure_and_repeatable() {
        let (_, data) = setup(32);
        let (arch, _) = tiny(32);
        let p = ModelParams::init(&arch, data.corpus.vocab_size(), 0);
        let before = p.checksum();
        let a = evaluate_val_bpb(&p, &arch, &data.corpus, 5, 9).unwrap();
        let b = evaluate_val_bpb(&p, &arch, &data.corpus, 5, 9).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(p.checksum(), before);
    }

    #[test]
    fn untrained_byte_model_is_near_eight_bits() {
        // 256 one-byte tokens; the last id doubles as pad
        let mut token_bytes = vec![1u32; 256];
        token_bytes[255] = 0;
        let sequences: Vec<Vec<u32>> = (0..40u32).map(|i| (0..32).map(|j| (i * 31 + j * 17) % 255).collect()).collect();
        let corpus = Corpus { sequences, train: (0..30).collect(), val: (30..40).collect(), seq_len: 32, pad_id: 255, token_bytes };
        let arch = ArchConfig { value_embeddings: ValueEmbeddings::Off, ..tiny(32).0 };
        let p = ModelParams::init(&arch, 256, 0);
        let bpb = evaluate_val_bpb(&p, &arch, &corpus, 5, 0).unwrap();
        assert!((bpb - 8.0).abs() < 0.2, "{bpb}");
    }
}
