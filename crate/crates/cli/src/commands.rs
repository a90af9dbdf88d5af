use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use searchlab::analysis::{
    classify_innovations, generate_report, innovations_from_logs, layer_freeze_curve, length_match_sweep,
    summarize_innovations, train_source, transfer_matrix, Classification, ReportInput, ReportOptions, TrackSetup,
};
use searchlab::config::{parse_config_text, NasSpace, TrackName};
use searchlab::data::{generate_synthetic_corpus, TrackData};
use searchlab::metrics::{keep_rate, read_run_table};
use searchlab::search::{
    default_run_id, llm_proposer, random_nas_proposer, run_search_with, scripted_proposer, PromptTemplate, Proposer,
    SearchSpec,
};
use searchlab::trainer::ExperimentContext;
use searchlab::{ArchConfig, Budget, Condition, ConfigMutation, HpConfig, RunLog, TrackConfig};

use crate::{DataOpts, SpaceArg};

fn write_manifest(path: &Path, command: &str, settings: Value) -> Result<()> {
    let manifest = json!({
        "tool": "searchlab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "settings": settings,
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `foo.csv` → `foo.manifest.json`.
fn manifest_beside(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Expands glob patterns (literal paths pass through), sorted and deduplicated.
fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let matches: Vec<PathBuf> = glob::glob(p)
            .with_context(|| format!("bad pattern `{p}`"))?
            .collect::<Result<_, _>>()?;
        if matches.is_empty() {
            bail!("no files match `{p}`");
        }
        out.extend(matches);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn track_pairs(pairs: &[String]) -> Result<BTreeMap<TrackName, PathBuf>> {
    pairs
        .iter()
        .map(|s| {
            let (t, p) = s.split_once('=').ok_or_else(|| anyhow!("expected TRACK=PATH, got `{s}`"))?;
            let track = t.parse().map_err(|_| anyhow!("unknown track `{t}`"))?;
            Ok((track, PathBuf::from(p)))
        })
        .collect()
}

fn track_config(name: TrackName, data: &DataOpts) -> Result<TrackConfig> {
    let mut track = TrackConfig::desk(name);
    if let Some(s) = data.seq_len {
        track.seq_len = s;
    }
    track.corpus_path = track_pairs(&data.corpus)?.remove(&name);
    Ok(track)
}

fn setup(name: TrackName, data: &DataOpts) -> Result<TrackSetup> {
    let track = track_config(name, data)?;
    TrackSetup::desk(track, data.lines, data.data_seed).with_context(|| format!("loading track {name}"))
}

/// Architecture from a run log (its best configuration) or a config file.
fn load_arch(path: &Path, base: &TrackSetup) -> Result<ArchConfig> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let log = RunLog::load(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(log.best_config().0);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (arch, _, _) = parse_config_text(&text, base.baseline_arch.clone(), base.default_hp.clone(), base.track.clone())?;
    Ok(arch)
}

fn budget_json(b: Budget) -> Value {
    serde_json::to_value(b).unwrap_or(Value::Null)
}

pub struct RunArgs {
    pub condition: Condition,
    pub track: TrackName,
    pub config: Option<PathBuf>,
    pub proposer: Option<String>,
    pub prompt: Option<PathBuf>,
    pub space: SpaceArg,
    pub n: usize,
    pub budget: Budget,
    pub seed: u64,
    pub run_id: Option<String>,
    pub out: Option<PathBuf>,
    pub data: DataOpts,
}

fn make_proposer(spec: &str, args: &RunArgs) -> Result<Box<dyn Proposer>> {
    let (kind, rest) = spec.split_once(':').map_or((spec, None), |(k, r)| (k, Some(r)));
    Ok(match kind {
        "none" => Box::new(scripted_proposer(Vec::new())),
        "random" => {
            let space = match args.space {
                SpaceArg::Desk => NasSpace::desk(),
                SpaceArg::Full => NasSpace::full_scale(),
            };
            Box::new(random_nas_proposer(args.seed, space))
        }
        "scripted" => {
            let path = rest.ok_or_else(|| anyhow!("scripted proposer needs a file: scripted:PATH"))?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let script: Vec<ConfigMutation> = serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
            Box::new(scripted_proposer(script))
        }
        "llm" => {
            let model = rest.ok_or_else(|| anyhow!("llm proposer needs a model name: llm:MODEL"))?;
            let template = match &args.prompt {
                Some(p) => Some(serde_json::from_str::<PromptTemplate>(&fs::read_to_string(p)?)?),
                None => None,
            };
            Box::new(llm_proposer(None, model, template)?)
        }
        other => bail!("unknown proposer `{other}` (random, scripted:PATH, llm:MODEL, none)"),
    })
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut track = track_config(args.track, &args.data)?;
    let (mut arch, mut hp) = (ArchConfig::desk(track.seq_len), HpConfig::desk(track.seq_len));
    if let Some(p) = &args.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        // Defaults depend on seq_len, so resolve the track first and parse again.
        let (_, _, t) = parse_config_text(&text, arch.clone(), hp.clone(), track.clone())?;
        (arch, hp, track) = parse_config_text(&text, ArchConfig::desk(t.seq_len), HpConfig::desk(t.seq_len), t)?;
    }
    let proposer_spec = args.proposer.clone().unwrap_or_else(|| {
        match args.condition {
            Condition::RandomNas => "random",
            Condition::FixedDefault => "none",
            Condition::Agent | Condition::HpOnly => "llm",
        }
        .to_string()
    });
    let mut proposer = make_proposer(&proposer_spec, &args)?;
    let data = TrackData::load(&track, args.data.lines, args.data.data_seed).context("loading corpus")?;
    let run_id = args.run_id.clone().unwrap_or_else(|| default_run_id(args.condition, track.name, args.seed));
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{run_id}.jsonl")));

    write_manifest(
        &manifest_beside(&out),
        "run",
        json!({
            "condition": args.condition,
            "run_id": run_id,
            "proposer": proposer_spec,
            "n": args.n,
            "budget": budget_json(args.budget),
            "seed": args.seed,
            "space": format!("{:?}", args.space).to_lowercase(),
            "lines": args.data.lines,
            "data_seed": args.data.data_seed,
            "track": track,
            "arch": arch,
            "hp": hp,
            "out": out,
        }),
    )?;

    let spec = SearchSpec {
        condition: args.condition,
        n: args.n,
        budget: args.budget,
        seed: args.seed,
        run_id,
        baseline_arch: arch,
        baseline_hp: hp,
    };
    let ctx = ExperimentContext::new(&track, &data.corpus);
    let n = args.n;
    let log = run_search_with(&spec, proposer.as_mut(), &ctx, Some(&out), &mut |r| {
        let status = if r.rejected {
            "rejected".to_string()
        } else if r.crashed {
            "crashed".to_string()
        } else {
            format!("val_bpb {:.4}{}", r.val_bpb.unwrap_or(f64::NAN), if r.kept { " kept" } else { "" })
        };
        eprintln!("[{}/{n}] {status}", r.index);
    })
    .with_context(|| format!("writing {}", out.display()))?;

    let k = keep_rate(&log);
    match log.best_val_bpb() {
        Some(b) => println!("best val_bpb {b:.6}"),
        None => println!("best val_bpb n/a (every experiment crashed)"),
    }
    println!("keep rate {}/{} = {:.3}", k.kept, k.eligible, k.rate);
    println!("log {}", out.display());
    Ok(())
}

pub fn analyze(
    patterns: &[String],
    table: Option<&Path>,
    families: Option<&Path>,
    out: &Path,
    resamples: usize,
    n_perm: usize,
    seed: u64,
) -> Result<()> {
    let paths = expand(patterns)?;
    let logs = paths
        .iter()
        .map(|p| RunLog::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut input = ReportInput::from_logs(logs);
    if let Some(t) = table {
        input.runs.extend(read_run_table(t).with_context(|| format!("reading {}", t.display()))?);
    }
    if let Some(f) = families {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        input.families = Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?);
    }
    if input.runs.is_empty() {
        eprintln!("warning: no runs supplied; writing an empty report");
    }
    let opts = ReportOptions { bootstrap_resamples: resamples, n_perm, seed };
    let files = generate_report(&input, &opts, out).with_context(|| format!("writing {}", out.display()))?;
    for w in &files.warnings {
        eprintln!("warning: {w}");
    }
    write_manifest(
        &out.join("manifest.json"),
        "analyze",
        json!({
            "logs": paths,
            "table": table,
            "families": families,
            "resamples": resamples,
            "n_perm": n_perm,
            "seed": seed,
        }),
    )?;
    println!("wrote {} files to {}", files.files.len() + 1, out.display());
    Ok(())
}

fn data_json(data: &DataOpts) -> Value {
    json!({ "lines": data.lines, "seq_len": data.seq_len, "data_seed": data.data_seed, "corpus": data.corpus })
}

pub fn transfer(
    tracks: &[TrackName],
    best: &[String],
    budget: Budget,
    seed: u64,
    parallel: usize,
    out: &Path,
    data: &DataOpts,
) -> Result<()> {
    let setups = tracks.iter().map(|&t| setup(t, data)).collect::<Result<Vec<_>>>()?;
    let given = track_pairs(best)?;
    let archs = setups
        .iter()
        .map(|s| given.get(&s.track.name).map_or(Ok(s.baseline_arch.clone()), |p| load_arch(p, s)))
        .collect::<Result<Vec<_>>>()?;
    let cells = transfer_matrix(&setups, &archs, budget, seed, parallel)?;
    write_csv(out, &cells)?;
    write_manifest(
        &manifest_beside(out),
        "transfer",
        json!({ "tracks": tracks, "best": best, "archs": archs, "budget": budget_json(budget), "seed": seed, "parallel": parallel, "data": data_json(data) }),
    )?;
    for c in &cells {
        let v = c.rel_change_pct.map_or("crashed".to_string(), |v| format!("{v:+.2}%"));
        println!("{} -> {}: {v}", c.source_track, c.target_track);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn freeze(
    source: TrackName,
    target: TrackName,
    arch: Option<&Path>,
    levels: &[usize],
    budget: Budget,
    seed: u64,
    parallel: usize,
    out: &Path,
    data: &DataOpts,
) -> Result<()> {
    let (src, dst) = (setup(source, data)?, setup(target, data)?);
    let arch = match arch {
        Some(p) => load_arch(p, &src)?,
        None => src.baseline_arch.clone(),
    };
    let levels: Vec<usize> = if levels.is_empty() { (0..=arch.depth).collect() } else { levels.to_vec() };
    let params = train_source(&src, &arch, budget, seed).context("training the source model")?;
    let curve = layer_freeze_curve(&params, &arch, &dst, &levels, budget, seed, parallel)?;
    write_csv(out, &curve)?;
    write_manifest(
        &manifest_beside(out),
        "freeze",
        json!({ "source": source, "target": target, "arch": arch, "levels": levels, "budget": budget_json(budget), "seed": seed, "parallel": parallel, "data": data_json(data) }),
    )?;
    for p in &curve {
        let d = p.degradation_pct.map_or("crashed".to_string(), |d| format!("{d:+.2}%"));
        println!("frozen {}: {d}", p.level);
    }
    if curve.iter().any(|p| !p.frozen_intact) {
        bail!("frozen parameters changed during fine-tuning");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn lengthmatch(
    target: TrackName,
    arch: Option<&Path>,
    lens: &[usize],
    budget: Budget,
    seed: u64,
    parallel: usize,
    out: &Path,
    data: &DataOpts,
) -> Result<()> {
    let t = setup(target, data)?;
    let arch = match arch {
        Some(p) => load_arch(p, &t)?,
        None => t.baseline_arch.clone(),
    };
    let seq = t.track.seq_len;
    let lens: Vec<usize> = if lens.is_empty() { vec![(seq / 4).max(2), (seq / 2).max(2), seq] } else { lens.to_vec() };
    let res = length_match_sweep(&arch, &t, &lens, budget, seed, parallel)?;
    write_csv(out, &res)?;
    write_manifest(
        &manifest_beside(out),
        "lengthmatch",
        json!({ "target": target, "arch": arch, "lens": lens, "budget": budget_json(budget), "seed": seed, "parallel": parallel, "data": data_json(data) }),
    )?;
    for r in &res {
        println!("len {}: {:+.2}%", r.truncated_len, r.rel_change_pct);
    }
    Ok(())
}

#[derive(Serialize)]
struct InnovationRow {
    origin_run: String,
    origin_track: String,
    edits: String,
    classification: String,
    degradation_pct: String,
    inapplicable: String,
}

pub fn innovations(
    patterns: &[String],
    tracks: &[TrackName],
    budget: Budget,
    seed: u64,
    parallel: usize,
    out: &Path,
    data: &DataOpts,
) -> Result<()> {
    let paths = expand(patterns)?;
    let logs = paths
        .iter()
        .map(|p| RunLog::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let sources = innovations_from_logs(&logs);
    let setups = tracks.iter().map(|&t| setup(t, data)).collect::<Result<Vec<_>>>()?;
    let inn = classify_innovations(&sources, &setups, budget, seed, parallel);
    let rows: Vec<InnovationRow> = inn
        .iter()
        .map(|i| InnovationRow {
            origin_run: i.source.origin_run.clone(),
            origin_track: i.source.origin_track.clone(),
            edits: i
                .source
                .mutation
                .edits
                .iter()
                .map(|e| format!("{}:{}->{}", e.field, e.old_value, e.new_value))
                .collect::<Vec<_>>()
                .join(";"),
            classification: match i.classification {
                Some(Classification::Universal) => "universal",
                Some(Classification::Specific) => "specific",
                None => "excluded",
            }
            .to_string(),
            degradation_pct: i.degradation_pct.iter().map(|(t, d)| format!("{t}={d}")).collect::<Vec<_>>().join(";"),
            inapplicable: i.inapplicable.clone().unwrap_or_default(),
        })
        .collect();
    write_csv(out, &rows)?;
    let s = summarize_innovations(&inn);
    write_manifest(
        &manifest_beside(out),
        "innovations",
        json!({ "logs": paths, "tracks": tracks, "budget": budget_json(budget), "seed": seed, "parallel": parallel, "data": data_json(data) }),
    )?;
    println!(
        "universal {} of {} classified ({} excluded); binomial p = {:.3e}",
        s.universal, s.classified, s.excluded, s.binomial_p
    );
    Ok(())
}

pub fn sample_nas(n: usize, seed: u64, space: SpaceArg, seq_len: usize) -> Result<()> {
    let (space, base) = match space {
        SpaceArg::Desk => (NasSpace::desk(), ArchConfig::desk(seq_len)),
        SpaceArg::Full => (NasSpace::full_scale(), ArchConfig::baseline(seq_len)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        println!("{}", serde_json::to_string(&space.sample(&base, &mut rng))?);
    }
    Ok(())
}

pub fn gen_corpus(track: TrackName, lines: usize, seed: u64, out: &Path) -> Result<()> {
    let text = generate_synthetic_corpus(track, lines, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    write_manifest(&manifest_beside(out), "gen-corpus", json!({ "track": track, "lines": lines, "seed": seed }))?;
    println!("wrote {} lines ({} bytes) to {}", text.lines().count(), text.len(), out.display());
    Ok(())
}
