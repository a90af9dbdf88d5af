use std::time::Instant;

use searchlab::config::{ArchConfig, HpConfig, TrackConfig, TrackName};
use searchlab::data::{Split, TrackData};
use searchlab::trainer::{evaluate_bpb, run_experiment, train_model, Budget, ExperimentContext, TrainOptions};

fn smiles(seq_len: usize) -> (TrackConfig, TrackData) {
    let track = TrackConfig { seq_len, ..TrackConfig::desk(TrackName::SmilesLike) };
    let data = TrackData::load(&track, 2000, 11).unwrap();
    (track, data)
}

fn small_arch(seq_len: usize) -> ArchConfig {
    ArchConfig { depth: 2, width: 32, heads: 2, kv_heads: 2, ..ArchConfig::desk(seq_len) }
}

#[test]
fn training_beats_the_uniform_model() {
    let (track, data) = smiles(32);
    let arch = small_arch(32);
    let hp = HpConfig::desk_batch(32, 8, 1);
    let ctx = ExperimentContext::new(&track, &data.corpus);
    let t = Instant::now();
    let r = run_experiment(&ctx, &arch, &hp, Budget::Steps(500), 0);
    let uniform = (data.corpus.vocab_size() as f64).log2();
    let bpb = r.val_bpb.expect("run must not crash");
    eprintln!("500 steps: val_bpb {bpb:.4} (uniform {uniform:.4}) in {:.2}s", t.elapsed().as_secs_f64());
    assert!(bpb < uniform);
    assert!(bpb < uniform - 1.0, "expected clear learning, got {bpb}");
}

#[test]
fn doubling_the_budget_does_not_hurt() {
    let (_, data) = smiles(32);
    let arch = small_arch(32);
    let hp = HpConfig::desk_batch(32, 8, 1);
    let final_train = |n| {
        let out = train_model(&arch, &hp, &data.corpus, Budget::Steps(n), 3, &TrainOptions::default()).unwrap();
        evaluate_bpb(&out.params, &arch, &data.corpus, Split::Train, 8, 99).unwrap()
    };
    for n in [50, 100, 200] {
        let (a, b) = (final_train(n), final_train(2 * n));
        eprintln!("n={n}: {a:.4} -> 2n: {b:.4}");
        assert!(b <= a + 0.05, "n={n}: {a} vs {b}");
    }
}

#[test]
fn wall_clock_budget_stops_on_time() {
    let (_, data) = smiles(32);
    let arch = small_arch(32);
    let hp = HpConfig::desk_batch(32, 4, 1);
    let t = Instant::now();
    let out = train_model(&arch, &hp, &data.corpus, Budget::Seconds(0.3), 0, &TrainOptions::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(out.steps_run > 0);
    assert!(secs < 1.5, "{secs}");
}

#[test]
fn frozen_parameters_are_untouched() {
    let (_, data) = smiles(32);
    let arch = small_arch(32);
    let hp = HpConfig::desk_batch(32, 4, 1);
    let init = searchlab::model::ModelParams::init(&arch, data.corpus.vocab_size(), 5);
    let names: Vec<String> = init.named().into_iter().map(|(n, _)| n).collect();
    let frozen: Vec<bool> = names.iter().map(|n| n.starts_with("layers.1.")).collect();
    let opts = TrainOptions { init: Some(init.clone()), frozen: Some(frozen.clone()) };
    let out = train_model(&arch, &hp, &data.corpus, Budget::Steps(10), 5, &opts).unwrap();
    for (((name, before), (_, after)), f) in init.named().into_iter().zip(out.params.named()).zip(&frozen) {
        if *f {
            assert_eq!(before, after, "{name} moved while frozen");
        }
    }
    assert_ne!(out.params.checksum(), init.checksum());
}
