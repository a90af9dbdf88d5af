//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searchlab::config::{Activation, ArchConfig, AttentionPattern, Positional, ResidualScaling, ValueEmbeddings};
use searchlab::model::{compute_grads, forward_logits, loss_stats, Batch, ModelParams};
use searchlab::tensor::Tensor;

/// U by direct pair counting (a > b scores 1, ties ½).
pub fn u_direct(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided exact p by visiting every subset of the pooled values.
pub fn mw_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, na) = (pooled.len(), a.len());
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let dev = (u_direct(a, b) - mu).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for (i, &v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 { xa.push(v) } else { xb.push(v) }
        }
        total += 1;
        if (u_direct(&xa, &xb) - mu).abs() >= dev - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

pub fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Exact two-sided Fisher p from integer hypergeometric counts.
pub fn fisher_integer(t: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = t;
    let (r1, c1, c2) = (a + b, a + c, b + d);
    let weight = |x: u64| choose(c1, x) * choose(c2, r1 - x);
    let obs = weight(a);
    let lo = r1.saturating_sub(c2);
    let num: u128 = (lo..=r1.min(c1)).map(weight).filter(|&w| w <= obs).sum();
    num as f64 / choose(a + b + c + d, r1) as f64
}

pub fn clustered(groups: usize, per: usize, within: f64, cross: f64) -> (Vec<Vec<f64>>, Vec<String>) {
    let n = groups * per;
    let labels: Vec<String> = (0..n).map(|i| format!("g{}", i / per)).collect();
    let m = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else if i / per == j / per { within } else { cross }).collect())
        .collect();
    (m, labels)
}

pub fn gradient_variants() -> Vec<(String, ArchConfig)> {
    let base = ArchConfig {
        depth: 2,
        width: 16,
        heads: 2,
        kv_heads: 2,
        ffn_mult: 2.0,
        window_size: 2,
        residual_scaling: ResidualScaling::LearnedPerLayer,
        ..ArchConfig::desk(6)
    };
    let mut out = Vec::new();
    for &act in Activation::ALL {
        out.push((format!("act={act}"), ArchConfig { activation: act, ..base.clone() }));
    }
    for &ve in ValueEmbeddings::ALL {
        out.push((format!("ve={ve}"), ArchConfig { value_embeddings: ve, ..base.clone() }));
    }
    out.push(("full".into(), ArchConfig { attention_pattern: AttentionPattern::Full, ..base.clone() }));
    out.push(("tied".into(), ArchConfig { weight_tying: true, ..base.clone() }));
    out.push(("gqa".into(), ArchConfig { heads: 4, kv_heads: 2, ..base.clone() }));
    out.push(("nope".into(), ArchConfig { positional: Positional::None, ..base.clone() }));
    out.push(("fixed_resid".into(), ArchConfig { residual_scaling: ResidualScaling::Fixed, ..base }));
    out
}

fn mean_loss(p: &ModelParams, arch: &ArchConfig, b: &Batch) -> f64 {
    loss_stats(&forward_logits(p, arch, b).unwrap(), b).mean_nats()
}

/// Worst per-tensor relative error `|fd - analytic| / max(|fd|, |analytic|)` in 2-norm.
pub fn worst_relative_error(arch: &ArchConfig, seed: u64) -> (String, f64) {
    let vocab = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(arch, vocab, seed);
    // Move every tensor off its init so gains, gates and scales carry signal.
    for (_, t) in params.named_mut() {
        for x in &mut t.data {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let seqs: Vec<Vec<u32>> = vec![
        (0..6).map(|_| rng.random_range(0..vocab as u32)).collect(),
        (0..4).map(|_| rng.random_range(0..vocab as u32)).collect(),
    ];
    let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
    let batch = Batch::from_sequences(&refs, 6, (vocab - 1) as u32, |_| 1);
    let (grads, _) = compute_grads(&params, arch, &batch).unwrap();

    let h = 1e-5;
    let mut worst = (String::new(), 0.0f64);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let n = params.named()[ti].1.len();
        let analytic = grads.named()[ti].1.data.clone();
        let mut diff2 = 0.0;
        let mut fd2 = 0.0;
        let mut an2 = 0.0;
        for i in 0..n {
            let orig = params.named()[ti].1.data[i];
            params.named_mut()[ti].1.data[i] = orig + h;
            let up = mean_loss(&params, arch, &batch);
            params.named_mut()[ti].1.data[i] = orig - h;
            let down = mean_loss(&params, arch, &batch);
            params.named_mut()[ti].1.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            diff2 += (fd - analytic[i]).powi(2);
            fd2 += fd * fd;
            an2 += analytic[i] * analytic[i];
        }
        let denom = fd2.sqrt().max(an2.sqrt());
        let rel = if denom < 1e-10 { diff2.sqrt() } else { diff2.sqrt() / denom };
        if rel > worst.1 {
            worst = (name.clone(), rel);
        }
    }
    worst
}

/// Per-head attention with an explicit softmax over the visible prefix.
pub fn naive_mha(q: &Tensor, k: &Tensor, v: &Tensor, b: usize, t: usize, heads: usize, window: Option<usize>) -> Tensor {
    let hd = q.cols / heads;
    let mut out = Tensor::zeros(q.rows, q.cols);
    for bi in 0..b {
        for h in 0..heads {
            for i in 0..t {
                let lo = window.map_or(0, |w| (i + 1).saturating_sub(w));
                let scores: Vec<f64> = (lo..=i)
                    .map(|s| (0..hd).map(|d| q.get(bi * t + i, h * hd + d) * k.get(bi * t + s, h * hd + d)).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (j, s) in (lo..=i).enumerate() {
                    let p = (scores[j] - m).exp() / z;
                    for d in 0..hd {
                        out.data[(bi * t + i) * q.cols + h * hd + d] += p * v.get(bi * t + s, h * hd + d);
                    }
                }
            }
        }
    }
    out
}
