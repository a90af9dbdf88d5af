use searchlab::analysis::{
    classify_degradations, classify_innovations, classify_techniques, extract_features, freeze_mask, layer_freeze_curve,
    length_match_sweep, render_report, summarize_innovations, train_source, transfer_matrix, transplant, AnalysisError,
    Classification, InnovationSource, ReportInput, ReportOptions, TechniqueRegistry, TrackSetup,
};
use searchlab::config::{FieldValue, TrackName};
use searchlab::data::Split;
use searchlab::search::RunHeader;
use searchlab::{ArchConfig, Budget, Condition, ConfigMutation, ExperimentRecord, HpConfig, RunLog, TrackConfig};

fn header(arch: &ArchConfig, hp: &HpConfig) -> RunHeader {
    RunHeader {
        condition: Condition::Agent,
        track: TrackName::SmilesLike,
        run_id: "agent-1".into(),
        seed: 0,
        n_experiments: 10,
        baseline_val_bpb: Some(2.0),
        proposer: "scripted".into(),
        created_unix: 0,
        budget: Budget::Steps(1),
        track_config: TrackConfig::desk(TrackName::SmilesLike),
        baseline_arch: arch.clone(),
        baseline_hp: hp.clone(),
    }
}

/// A log whose records carry the given mutations, each kept and improving.
fn kept_log(mutations: Vec<ConfigMutation>) -> RunLog {
    let (arch, hp) = (ArchConfig::baseline(64), HpConfig::desk(64));
    let mut log = RunLog::new(header(&arch, &hp));
    for (i, m) in mutations.into_iter().enumerate() {
        log.records.push(ExperimentRecord {
            index: i + 1,
            mutation: m,
            arch_after: arch.clone(),
            hp_after: hp.clone(),
            val_bpb: Some(1.9 - 0.01 * i as f64),
            crashed: false,
            kept: true,
            seed: 0,
            steps_run: 1,
            wall_seconds: 0.0,
            param_count: 0,
            rejected: false,
        });
    }
    log
}

fn int_edit(field: &str, old: i64, new: i64) -> ConfigMutation {
    ConfigMutation::single(field, FieldValue::Int(old), FieldValue::Int(new))
}

fn matched(log: &RunLog) -> Vec<bool> {
    classify_techniques(log).iter().map(|m| m.matched).collect()
}

#[test]
fn technique_rules() {
    assert_eq!(matched(&kept_log(vec![])), vec![false; 5]);
    assert_eq!(matched(&kept_log(vec![int_edit("width", 320, 256)])), vec![false, true, false, false, false]);
    // opposite directions spread over two kept mutations
    let m = matched(&kept_log(vec![int_edit("depth", 6, 4), int_edit("width", 320, 384)]));
    assert_eq!(m, vec![false, false, false, true, false]);
    // and within one mutation
    let mut both = int_edit("depth", 6, 4);
    both.edits.extend(int_edit("width", 320, 384).edits);
    assert!(matched(&kept_log(vec![both]))[3]);
    // same direction is not a rebalance
    assert!(!matched(&kept_log(vec![int_edit("depth", 4, 6), int_edit("width", 320, 384)]))[3]);
    let win = ConfigMutation::single("attention_pattern", FieldValue::Text("full".into()), FieldValue::Text("windowed".into()));
    assert!(matched(&kept_log(vec![win]))[0]);
    assert!(matched(&kept_log(vec![int_edit("window_size", 128, 64)]))[0]);
    let pos = ConfigMutation::single("positional", FieldValue::Text("rope".into()), FieldValue::Text("none".into()));
    assert!(matched(&kept_log(vec![pos]))[2]);
    let wd = ConfigMutation::single("weight_decay", FieldValue::Real(0.2), FieldValue::Real(0.3));
    assert_eq!(matched(&kept_log(vec![wd])), vec![false, false, false, false, true]);

    // reverted mutations never count
    let mut log = kept_log(vec![int_edit("width", 320, 256)]);
    log.records[0].kept = false;
    assert_eq!(matched(&log), vec![false; 5]);
}

#[test]
fn registry_accepts_new_rules() {
    let mut reg = TechniqueRegistry::standard();
    reg.register("gated_mlp", "switch to a gated activation", |kept| {
        kept.iter()
            .filter(|r| r.mutation.edit("activation").is_some_and(|e| e.new_value == FieldValue::Text("swiglu".into())))
            .map(|r| r.index)
            .collect()
    });
    let m = ConfigMutation::single("activation", FieldValue::Text("relu_squared".into()), FieldValue::Text("swiglu".into()));
    let res = reg.classify(&kept_log(vec![m]));
    assert_eq!(res.len(), 6);
    assert_eq!(res[5].technique, "gated_mlp");
    assert_eq!(res[5].triggered_by, vec![1]);
}

#[test]
fn universality_threshold_is_strict() {
    assert_eq!(classify_degradations([0.0, 0.999_999]), Classification::Universal);
    assert_eq!(classify_degradations([0.0, 1.0]), Classification::Specific);
    assert_eq!(classify_degradations([-5.0, -0.1]), Classification::Universal);
    assert_eq!(classify_degradations([f64::INFINITY]), Classification::Specific);
    assert_eq!(classify_degradations([f64::NAN]), Classification::Specific);
}

#[test]
fn features_read_the_best_config() {
    let (arch, hp) = (ArchConfig::baseline(64), HpConfig::desk(64));
    let mut log = RunLog::new(header(&arch, &hp));
    let f = extract_features(&log).unwrap();
    assert_eq!(f.numeric["width"], arch.width as f64);
    assert_eq!(f.track, "smiles_like");

    let wide = ArchConfig { width: 256, ..arch.clone() };
    let mut log2 = kept_log(vec![int_edit("width", arch.width as i64, 256)]);
    log2.records[0].arch_after = wide;
    assert_eq!(extract_features(&log2).unwrap().numeric["width"], 256.0);

    log.header.baseline_val_bpb = None;
    assert!(matches!(extract_features(&log), Err(AnalysisError::NoSuccess(_))));
}

fn tiny(name: TrackName, seed: u64) -> TrackSetup {
    let track = TrackConfig { seq_len: 32, ..TrackConfig::desk(name) };
    let mut s = TrackSetup::desk(track, 600, seed).unwrap();
    s.baseline_arch = ArchConfig { width: 32, ..ArchConfig::desk(32) };
    s.eval_batches = 2;
    s
}

#[test]
fn transfer_matrix_on_two_tracks() {
    let setups = [tiny(TrackName::SmilesLike, 1), tiny(TrackName::ProteinLike, 2)];
    let best = [setups[0].baseline_arch.clone(), ArchConfig { depth: 1, ..setups[1].baseline_arch.clone() }];
    let cells = transfer_matrix(&setups, &best, Budget::Steps(20), 3, 2).unwrap();
    assert_eq!(cells.len(), 4);
    for c in &cells {
        assert!(!c.crashed);
        let rel = c.rel_change_pct.unwrap();
        assert!(rel.is_finite());
        if c.source_track == c.target_track {
            assert_eq!(rel, 0.0);
        } else {
            let (x, y) = (c.transfer_bpb.unwrap(), c.native_bpb.unwrap());
            assert!((rel - (x - y) / y * 100.0).abs() < 1e-12);
        }
    }
    // threads do not change results
    assert_eq!(cells, transfer_matrix(&setups, &best, Budget::Steps(20), 3, 1).unwrap());
    assert!(transfer_matrix(&setups, &best[..1], Budget::Steps(1), 0, 1).is_err());
}

#[test]
fn freezing_keeps_frozen_blocks_bitwise() {
    let (src, dst) = (tiny(TrackName::SmilesLike, 1), tiny(TrackName::ProteinLike, 2));
    let arch = src.baseline_arch.clone();
    let params = train_source(&src, &arch, Budget::Steps(15), 4).unwrap();
    let moved = transplant(&params, &arch, dst.corpus.vocab_size(), 4).unwrap();
    assert_eq!(moved.layers[0].attn_q, params.layers[0].attn_q);
    assert_eq!(moved.token_embedding.shape().0, dst.corpus.vocab_size());
    let mask = freeze_mask(&moved, 1);
    assert_eq!(mask.iter().filter(|&&m| m).count(), 8);

    let curve = layer_freeze_curve(&params, &arch, &dst, &[0, 1, 2], Budget::Steps(15), 4, 2).unwrap();
    assert_eq!(curve.iter().map(|p| p.level).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(curve[0].degradation_pct, Some(0.0));
    assert!(curve.iter().all(|p| p.frozen_intact && p.degradation_pct.unwrap().is_finite()));

    let shallow = ArchConfig { depth: 1, ..arch.clone() };
    assert!(matches!(
        layer_freeze_curve(&params, &shallow, &dst, &[0], Budget::Steps(1), 0, 1),
        Err(AnalysisError::DepthMismatch { .. })
    ));
    assert!(matches!(
        layer_freeze_curve(&params, &arch, &dst, &[3], Budget::Steps(1), 0, 1),
        Err(AnalysisError::FreezeLevel { .. })
    ));
}

#[test]
fn length_matching() {
    let t = tiny(TrackName::ProteinLike, 5);
    let arch = t.baseline_arch.clone();
    let res = length_match_sweep(&arch, &t, &[8, 16, 32], Budget::Steps(15), 6, 2).unwrap();
    assert_eq!(res[2].rel_change_pct, 0.0);
    assert!(res.iter().all(|r| r.truncated_bpb.is_finite()));
    // char tokens are one byte each: val bytes are Σ min(len, line length)
    let expect = |len: usize| -> usize { t.corpus.val.iter().map(|&i| t.corpus.sequences[i].len().min(len)).sum() };
    for r in &res {
        assert_eq!(r.truncated_val_bytes, expect(r.truncated_len));
        assert_eq!(r.full_val_bytes, t.corpus.total_bytes(Split::Val));
    }
    assert!(matches!(
        length_match_sweep(&arch, &t, &[1], Budget::Steps(1), 0, 1),
        Err(AnalysisError::TruncatedLength { .. })
    ));
}

#[test]
fn innovations_on_two_tracks() {
    let setups = [tiny(TrackName::SmilesLike, 1), tiny(TrackName::ProteinLike, 2)];
    let src = |m: ConfigMutation| InnovationSource { mutation: m, origin_run: "r".into(), origin_track: "smiles_like".into() };
    let sources = vec![
        src(ConfigMutation::noop("nothing")),
        src(int_edit("depth", 2, 1)),
        src(int_edit("heads", 2, 5)),
    ];
    let inn = classify_innovations(&sources, &setups, Budget::Steps(15), 7, 2);
    assert_eq!(inn[0].classification, Some(Classification::Universal));
    assert!(inn[0].degradation_pct.values().all(|&d| d == 0.0));
    assert!(inn[1].classification.is_some() && inn[1].degradation_pct.len() == 2);
    // heads=5 does not divide width 32
    assert!(inn[2].inapplicable.is_some() && inn[2].classification.is_none());
    let s = summarize_innovations(&inn);
    assert_eq!((s.classified, s.excluded), (2, 1));
    assert!(s.binomial_p > 0.0 && s.binomial_p <= 1.0);
}

#[test]
fn empty_report_is_a_valid_skeleton() {
    let files = render_report(&ReportInput::default(), &ReportOptions::default());
    for t in ["decomposition", "auc_comparison", "per_run", "transfer", "stats", "gower_matrix"] {
        let body = &files.files[&format!("tables/{t}.csv")];
        assert_eq!(body.lines().count(), 1, "{t} should be header-only");
    }
    assert!(files.files["report.md"].contains("No runs supplied."));
}

#[test]
fn fixture_report_is_deterministic_and_matches_decomposition() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_runs.csv");
    let runs = searchlab::metrics::read_run_table(&path).unwrap();
    let input = ReportInput { runs, ..ReportInput::default() };
    let opts = ReportOptions { bootstrap_resamples: 2000, n_perm: 100, seed: 1 };
    let a = render_report(&input, &opts);
    assert_eq!(a, render_report(&input, &opts));

    let mut rdr = csv::Reader::from_reader(a.files["tables/decomposition.csv"].as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let nlp = rows.iter().find(|r| &r[0] == "nlp_like").unwrap();
    let arch: f64 = nlp[3].parse().unwrap();
    assert!((arch - 81.0).abs() < 1.0, "{arch}");

    let dir = tempfile::tempdir().unwrap();
    searchlab::analysis::generate_report(&input, &opts, dir.path()).unwrap();
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| nlp_like |"));
    assert!(dir.path().join("tables/stats.csv").exists());
}

#[test]
fn freezing_more_blocks_hurts_more_on_average() {
    let (src, dst) = (tiny(TrackName::NlpLike, 1), tiny(TrackName::SmilesLike, 2));
    let arch = src.baseline_arch.clone();
    let (mut one, mut all) = (0.0, 0.0);
    for seed in 0..3 {
        let params = train_source(&src, &arch, Budget::Steps(60), seed).unwrap();
        let curve = layer_freeze_curve(&params, &arch, &dst, &[1, 2], Budget::Steps(60), seed, 2).unwrap();
        one += curve[0].degradation_pct.unwrap();
        all += curve[1].degradation_pct.unwrap();
    }
    assert!(all >= one, "full freeze {all} vs one block {one}");
}
