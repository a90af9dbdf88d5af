//! `searchlab` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use searchlab::config::TrackName;
use searchlab::{Budget, Condition};

#[derive(Parser, Debug)]
#[command(name = "searchlab", version, about = "Four-condition architecture search at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Corpus and sequence-length settings shared by every training command.
#[derive(Args, Debug, Clone)]
pub struct DataOpts {
    /// Synthetic lines generated per track when no corpus file is given.
    #[arg(long, default_value_t = 2000)]
    pub lines: usize,
    /// Override the track's sequence length.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Seed for corpus generation and the train/val split.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Corpus file for a track, as TRACK=PATH. Repeatable.
    #[arg(long, value_name = "TRACK=PATH")]
    pub corpus: Vec<String>,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct BudgetOpts {
    /// Optimizer steps per training job (deterministic).
    #[arg(long, conflicts_with = "seconds")]
    pub steps: Option<usize>,
    /// Wall-clock seconds per training job.
    #[arg(long)]
    pub seconds: Option<f64>,
}

impl BudgetOpts {
    pub fn budget(&self) -> Budget {
        match (self.steps, self.seconds) {
            (_, Some(s)) => Budget::Seconds(s),
            (Some(n), None) => Budget::Steps(n),
            (None, None) => Budget::Steps(200),
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceArg {
    Desk,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one search under a condition and stream its JSONL log.
    Run {
        #[arg(value_parser = parse_condition)]
        condition: Condition,
        #[arg(long, value_parser = parse_track, default_value = "smiles_like")]
        track: TrackName,
        /// Config file (key = value) over track, architecture and HP fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// random | scripted:PATH | llm[:MODEL]. Defaults by condition.
        #[arg(long)]
        proposer: Option<String>,
        /// JSON prompt template {"system": ..., "user": ...} for llm proposers.
        #[arg(long)]
        prompt: Option<PathBuf>,
        /// Random-NAS search space.
        #[arg(long, value_enum, default_value_t = SpaceArg::Desk)]
        space: SpaceArg,
        #[arg(long, default_value_t = searchlab::search::DEFAULT_N)]
        n: usize,
        #[command(flatten)]
        budget: BudgetOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        run_id: Option<String>,
        /// Output JSONL path (default runs/<run_id>.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataOpts,
    },
    /// Build the report bundle from run logs and/or a per-run results table.
    Analyze {
        /// Log files or glob patterns.
        logs: Vec<String>,
        /// CSV of track,condition,run,auc_oc,best_bpb rows.
        #[arg(long)]
        table: Option<PathBuf>,
        /// JSON object mapping family names to "<comparison>/<test>" members.
        #[arg(long)]
        families: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[arg(long, default_value_t = 10_000)]
        n_perm: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-track transfer matrix of best architectures.
    Transfer {
        #[arg(long, value_delimiter = ',', value_parser = parse_track, default_value = "smiles_like,protein_like,nlp_like")]
        tracks: Vec<TrackName>,
        /// Best architecture for a track, as TRACK=PATH (run log or config file).
        #[arg(long, value_name = "TRACK=PATH")]
        best: Vec<String>,
        #[command(flatten)]
        budget: BudgetOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "transfer.csv")]
        out: PathBuf,
        #[command(flatten)]
        data: DataOpts,
    },
    /// Degradation curve from freezing the deepest blocks of a source model.
    Freeze {
        #[arg(long, value_parser = parse_track)]
        source: TrackName,
        #[arg(long, value_parser = parse_track)]
        target: TrackName,
        /// Architecture (run log or config file); defaults to the source baseline.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Freeze levels; defaults to 0..=depth.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<usize>,
        #[command(flatten)]
        budget: BudgetOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "freeze.csv")]
        out: PathBuf,
        #[command(flatten)]
        data: DataOpts,
    },
    /// Change in val_bpb when training on truncated target sequences.
    Lengthmatch {
        #[arg(long, value_parser = parse_track)]
        target: TrackName,
        /// Architecture (run log or config file); defaults to the target baseline.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Truncated lengths; defaults to a quarter, half and all of seq_len.
        #[arg(long, value_delimiter = ',')]
        lens: Vec<usize>,
        #[command(flatten)]
        budget: BudgetOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "lengthmatch.csv")]
        out: PathBuf,
        #[command(flatten)]
        data: DataOpts,
    },
    /// Classify kept agent mutations as universal or track-specific.
    Innovations {
        /// Agent run logs or glob patterns.
        logs: Vec<String>,
        #[arg(long, value_delimiter = ',', value_parser = parse_track, default_value = "smiles_like,protein_like,nlp_like")]
        tracks: Vec<TrackName>,
        #[command(flatten)]
        budget: BudgetOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "innovations.csv")]
        out: PathBuf,
        #[command(flatten)]
        data: DataOpts,
    },
    /// Print random-NAS architectures as JSON lines.
    SampleNas {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SpaceArg::Full)]
        space: SpaceArg,
        /// Sequence length of the base architecture.
        #[arg(long, default_value_t = 256)]
        seq_len: usize,
    },
    /// Write a synthetic corpus for a track.
    GenCorpus {
        #[arg(long, value_parser = parse_track)]
        track: TrackName,
        #[arg(long, default_value_t = 2000)]
        lines: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse().map_err(|_| format!("unknown condition `{s}` (agent, random_nas, hp_only, fixed_default)"))
}

fn parse_track(s: &str) -> Result<TrackName, String> {
    s.parse().map_err(|_| format!("unknown track `{s}` (smiles_like, protein_like, nlp_like, custom)"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { condition, track, config, proposer, prompt, space, n, budget, seed, run_id, out, data } => {
            commands::run(commands::RunArgs {
                condition,
                track,
                config,
                proposer,
                prompt,
                space,
                n,
                budget: budget.budget(),
                seed,
                run_id,
                out,
                data,
            })
        }
        Command::Analyze { logs, table, families, out, resamples, n_perm, seed } => {
            commands::analyze(&logs, table.as_deref(), families.as_deref(), &out, resamples, n_perm, seed)
        }
        Command::Transfer { tracks, best, budget, seed, parallel, out, data } => {
            commands::transfer(&tracks, &best, budget.budget(), seed, parallel, &out, &data)
        }
        Command::Freeze { source, target, arch, levels, budget, seed, parallel, out, data } => {
            commands::freeze(source, target, arch.as_deref(), &levels, budget.budget(), seed, parallel, &out, &data)
        }
        Command::Lengthmatch { target, arch, lens, budget, seed, parallel, out, data } => {
            commands::lengthmatch(target, arch.as_deref(), &lens, budget.budget(), seed, parallel, &out, &data)
        }
        Command::Innovations { logs, tracks, budget, seed, parallel, out, data } => {
            commands::innovations(&logs, &tracks, budget.budget(), seed, parallel, &out, &data)
        }
        Command::SampleNas { n, seed, space, seq_len } => commands::sample_nas(n, seed, space, seq_len),
        Command::GenCorpus { track, lines, seed, out } => commands::gen_corpus(track, lines, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
