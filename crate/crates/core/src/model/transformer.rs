use std::f64::consts::LN_2;

use super::ops::{
    activation_grad, apply_activation, rmsnorm_rows, rmsnorm_rows_backward, sigmoid, RopeTable,
    ROPE_BASE,
};
use super::{Batch, LayerParams, ModelError, ModelParams};
use crate::config::{Activation, ArchConfig, Positional};
use crate::tensor::{matmul, matmul_acc, matmul_nt, matmul_tn_acc, Tensor};

/// Cross-entropy totals over the valid targets of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    /// Sum of per-token cross-entropy, in nats.
    pub nats: f64,
    pub targets: usize,
    pub bytes: usize,
}

impl LossStats {
    pub fn mean_nats(&self) -> f64 {
        if self.targets == 0 {
            0.0
        } else {
            self.nats / self.targets as f64
        }
    }

    pub fn bpb(&self) -> f64 {
        if self.bytes == 0 {
            0.0
        } else {
            self.nats / (LN_2 * self.bytes as f64)
        }
    }

    pub fn merge(&mut self, other: &LossStats) {
        self.nats += other.nats;
        self.targets += other.targets;
        self.bytes += other.bytes;
    }
}

struct Dims {
    b: usize,
    t: usize,
    heads: usize,
    kv_heads: usize,
    head_dim: usize,
}

/// Per-(sequence, head) dense `T x T` softmax weights, zero outside the mask.
struct AttnProbs {
    data: Vec<f64>,
    t: usize,
}

impl AttnProbs {
    #[inline]
    fn row(&self, bh: usize, t: usize) -> &[f64] {
        let start = (bh * self.t + t) * self.t;
        &self.data[start..start + self.t]
    }
}

#[inline]
fn visible_start(t: usize, window: Option<usize>) -> usize {
    match window {
        Some(w) => (t + 1).saturating_sub(w.max(1)),
        None => 0,
    }
}

fn attention_forward(q: &Tensor, k: &Tensor, v: &Tensor, d: &Dims, window: Option<usize>) -> (Tensor, AttnProbs) {
    let hd = d.head_dim;
    let group = d.heads / d.kv_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut y = Tensor::zeros(d.b * d.t, d.heads * hd);
    let mut probs = AttnProbs { data: vec![0.0; d.b * d.heads * d.t * d.t], t: d.t };
    for b in 0..d.b {
        for h in 0..d.heads {
            let g = h / group;
            let bh = b * d.heads + h;
            for t in 0..d.t {
                let lo = visible_start(t, window);
                let qrow = &q.row(b * d.t + t)[h * hd..(h + 1) * hd];
                let start = (bh * d.t + t) * d.t;
                let prow = &mut probs.data[start..start + d.t];
                let mut max = f64::NEG_INFINITY;
                for s in lo..=t {
                    let krow = &k.row(b * d.t + s)[g * hd..(g + 1) * hd];
                    let score = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                    prow[s] = score;
                    max = max.max(score);
                }
                let mut sum = 0.0;
                for p in &mut prow[lo..=t] {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                for p in &mut prow[lo..=t] {
                    *p /= sum;
                }
                let yrow = &mut y.row_mut(b * d.t + t)[h * hd..(h + 1) * hd];
                for s in lo..=t {
                    let p = prow[s];
                    let vrow = &v.row(b * d.t + s)[g * hd..(g + 1) * hd];
                    for (o, vv) in yrow.iter_mut().zip(vrow) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    (y, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &AttnProbs,
    dy: &Tensor,
    d: &Dims,
    window: Option<usize>,
) -> (Tensor, Tensor, Tensor) {
    let hd = d.head_dim;
    let group = d.heads / d.kv_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = Tensor::zeros(q.rows, q.cols);
    let mut dk = Tensor::zeros(k.rows, k.cols);
    let mut dv = Tensor::zeros(v.rows, v.cols);
    let mut dscore = vec![0.0; d.t];
    for b in 0..d.b {
        for h in 0..d.heads {
            let g = h / group;
            let bh = b * d.heads + h;
            for t in 0..d.t {
                let lo = visible_start(t, window);
                let prow = probs.row(bh, t);
                let r = b * d.t + t;
                let dyrow = &dy.row(r)[h * hd..(h + 1) * hd];
                let mut weighted = 0.0;
                for s in lo..=t {
                    let vrow = &v.row(b * d.t + s)[g * hd..(g + 1) * hd];
                    let dp = dyrow.iter().zip(vrow).map(|(a, b)| a * b).sum::<f64>();
                    dscore[s] = dp;
                    weighted += prow[s] * dp;
                }
                for s in lo..=t {
                    dscore[s] = prow[s] * (dscore[s] - weighted) * scale;
                }
                let qrow = &q.row(r)[h * hd..(h + 1) * hd];
                for s in lo..=t {
                    let rs = b * d.t + s;
                    let ds = dscore[s];
                    let krow = &k.row(rs)[g * hd..(g + 1) * hd];
                    let dqrow = &mut dq.row_mut(r)[h * hd..(h + 1) * hd];
                    for (o, kk) in dqrow.iter_mut().zip(krow) {
                        *o += ds * kk;
                    }
                    let dkrow = &mut dk.row_mut(rs)[g * hd..(g + 1) * hd];
                    for (o, qq) in dkrow.iter_mut().zip(qrow) {
                        *o += ds * qq;
                    }
                    let p = prow[s];
                    let dvrow = &mut dv.row_mut(rs)[g * hd..(g + 1) * hd];
                    for (o, dd) in dvrow.iter_mut().zip(dyrow) {
                        *o += p * dd;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Causal scaled-dot-product attention over row-major `(B·T) x (heads·head_dim)`
/// queries and `(B·T) x (kv_heads·head_dim)` keys/values. Query head `h` reads
/// kv head `h / (heads / kv_heads)`. `window = Some(w)` limits each query to
/// the `w` most recent positions including itself.
pub fn causal_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    batch: usize,
    seq_len: usize,
    heads: usize,
    kv_heads: usize,
    window: Option<usize>,
) -> Tensor {
    let head_dim = q.cols / heads;
    let dims = Dims { b: batch, t: seq_len, heads, kv_heads, head_dim };
    attention_forward(q, k, v, &dims, window).0
}

fn rope_rows(x: &mut Tensor, heads: usize, head_dim: usize, seq_len: usize, table: &RopeTable, inverse: bool) {
    for r in 0..x.rows {
        let pos = r % seq_len;
        let row = x.row_mut(r);
        for h in 0..heads {
            table.rotate(&mut row[h * head_dim..(h + 1) * head_dim], pos, inverse);
        }
    }
}

struct LayerCache {
    x_in: Tensor,
    inv1: Vec<f64>,
    n1: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: AttnProbs,
    y: Tensor,
    att: Tensor,
    x_mid: Tensor,
    inv2: Vec<f64>,
    n2: Tensor,
    u: Tensor,
    h: Tensor,
    m: Tensor,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    x_final: Tensor,
    inv_f: Vec<f64>,
    nf: Tensor,
}

fn resid_scale(t: &Option<Tensor>) -> f64 {
    t.as_ref().map_or(1.0, |s| s.data[0])
}

fn mlp_activate(kind: Activation, u: &Tensor, hidden: usize) -> Tensor {
    let mut h = Tensor::zeros(u.rows, hidden);
    for r in 0..u.rows {
        let urow = u.row(r);
        let hrow = h.row_mut(r);
        if kind.is_gated() {
            for j in 0..hidden {
                hrow[j] = urow[j] * apply_activation(kind, urow[hidden + j]);
            }
        } else {
            for j in 0..hidden {
                hrow[j] = apply_activation(kind, urow[j]);
            }
        }
    }
    h
}

fn mlp_activate_backward(kind: Activation, u: &Tensor, dh: &Tensor, hidden: usize) -> Tensor {
    let mut du = Tensor::zeros(u.rows, u.cols);
    for r in 0..u.rows {
        let (urow, dhrow) = (u.row(r), dh.row(r));
        let durow = du.row_mut(r);
        if kind.is_gated() {
            for j in 0..hidden {
                let (value, gate) = (urow[j], urow[hidden + j]);
                durow[j] = dhrow[j] * apply_activation(kind, gate);
                durow[hidden + j] = dhrow[j] * value * activation_grad(kind, gate);
            }
        } else {
            for j in 0..hidden {
                durow[j] = dhrow[j] * activation_grad(kind, urow[j]);
            }
        }
    }
    du
}

fn check_inputs(params: &ModelParams, arch: &ArchConfig, batch: &Batch) -> Result<(), ModelError> {
    params.check_shapes(arch)?;
    let vocab = params.vocab_size();
    if let Some(&id) = batch.token_ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(ModelError::TokenOutOfRange { id, vocab });
    }
    if batch.token_ids.len() != batch.rows() {
        return Err(ModelError::Layout("batch grid size mismatch".to_string()));
    }
    if arch.depth > 0 && (arch.heads == 0 || arch.kv_heads == 0 || arch.heads % arch.kv_heads != 0) {
        return Err(ModelError::Layout("heads must be a multiple of kv_heads".to_string()));
    }
    Ok(())
}

fn forward_impl(params: &ModelParams, arch: &ArchConfig, batch: &Batch) -> (Tensor, ForwardCache) {
    let (b, t) = (batch.batch_size, batch.seq_len);
    let n = b * t;
    let c = arch.width;
    let hd = arch.head_dim();
    let dims = Dims { b, t, heads: arch.heads, kv_heads: arch.kv_heads, head_dim: hd };
    let rope = (arch.positional == Positional::Rope && arch.depth > 0).then(|| RopeTable::new(t, hd, ROPE_BASE));
    let hidden = arch.ffn_hidden();

    let mut x = Tensor::zeros(n, c);
    for r in 0..n {
        x.row_mut(r).copy_from_slice(params.token_embedding.row(batch.token_ids[r] as usize));
    }

    let mut caches = Vec::with_capacity(arch.depth);
    for (l, lp) in params.layers.iter().enumerate() {
        let x_in = x.clone();
        let (n1, inv1) = rmsnorm_rows(&x, &lp.attn_norm.data);
        let mut q = matmul_nt(&n1, &lp.attn_q);
        let mut k = matmul_nt(&n1, &lp.attn_k);
        let mut v = matmul_nt(&n1, &lp.attn_v);
        if let (Some(ve), Some(gate)) = (&lp.value_embed, &lp.value_gate) {
            let g: Vec<f64> = gate.data.iter().map(|&z| sigmoid(z)).collect();
            for r in 0..n {
                let erow = ve.row(batch.token_ids[r] as usize);
                for ((o, e), gg) in v.row_mut(r).iter_mut().zip(erow).zip(&g) {
                    *o += gg * e;
                }
            }
        }
        if let Some(table) = &rope {
            rope_rows(&mut q, arch.heads, hd, t, table, false);
            rope_rows(&mut k, arch.kv_heads, hd, t, table, false);
        }
        let window = arch.window_for_layer(l);
        let (y, probs) = attention_forward(&q, &k, &v, &dims, window);
        let att = matmul_nt(&y, &lp.attn_o);
        x.add_scaled(&att, resid_scale(&lp.resid_attn));
        let x_mid = x.clone();
        let (n2, inv2) = rmsnorm_rows(&x, &lp.mlp_norm.data);
        let u = matmul_nt(&n2, &lp.mlp_in);
        let h = mlp_activate(arch.activation, &u, hidden);
        let m = matmul_nt(&h, &lp.mlp_out);
        x.add_scaled(&m, resid_scale(&lp.resid_mlp));
        caches.push(LayerCache { x_in, inv1, n1, q, k, v, probs, y, att, x_mid, inv2, n2, u, h, m });
    }

    let (nf, inv_f) = rmsnorm_rows(&x, &params.final_norm.data);
    let unembed = params.unembedding.as_ref().unwrap_or(&params.token_embedding);
    let logits = matmul_nt(&nf, unembed);
    (logits, ForwardCache { layers: caches, x_final: x, inv_f, nf })
}

/// Logits for every position, `(B·T) x vocab`, row `b·T + t`.
pub fn forward_logits(params: &ModelParams, arch: &ArchConfig, batch: &Batch) -> Result<Tensor, ModelError> {
    check_inputs(params, arch, batch)?;
    Ok(forward_impl(params, arch, batch).0)
}

/// Cross-entropy over valid next-token targets. If `dlogits` is given it
/// receives `scale · d(mean CE)/d logits`.
fn loss_with_grad(logits: &Tensor, batch: &Batch, mut dlogits: Option<(&mut Tensor, f64)>) -> LossStats {
    let (b, t) = (batch.batch_size, batch.seq_len);
    let mut stats = LossStats { nats: 0.0, targets: 0, bytes: 0 };
    let targets: Vec<(usize, usize)> = (0..b)
        .flat_map(|bi| (0..t.saturating_sub(1)).map(move |ti| bi * t + ti))
        .filter(|&r| batch.valid[r + 1])
        .map(|r| (r, batch.token_ids[r + 1] as usize))
        .collect();
    let count = targets.len().max(1) as f64;
    for &(r, target) in &targets {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        stats.nats += lse - row[target];
        stats.targets += 1;
        stats.bytes += batch.token_bytes[r + 1] as usize;
        if let Some((d, scale)) = dlogits.as_mut() {
            let drow = d.row_mut(r);
            for (j, (o, z)) in drow.iter_mut().zip(row).enumerate() {
                let p = (z - lse).exp();
                *o = (p - if j == target { 1.0 } else { 0.0 }) * *scale / count;
            }
        }
    }
    stats
}

/// Cross-entropy totals for precomputed logits.
pub fn loss_stats(logits: &Tensor, batch: &Batch) -> LossStats {
    loss_with_grad(logits, batch, None)
}

/// Bits per byte: summed cross-entropy (nats) over `ln 2 ·` bytes of the predicted span.
pub fn loss_bpb(logits: &Tensor, batch: &Batch) -> f64 {
    loss_stats(logits, batch).bpb()
}

/// Exact gradients of the mean next-token cross-entropy.
pub fn compute_grads(params: &ModelParams, arch: &ArchConfig, batch: &Batch) -> Result<(ModelParams, LossStats), ModelError> {
    compute_grads_scaled(params, arch, batch, 1.0)
}

/// Gradients of `scale ·` mean cross-entropy.
pub fn compute_grads_scaled(
    params: &ModelParams,
    arch: &ArchConfig,
    batch: &Batch,
    scale: f64,
) -> Result<(ModelParams, LossStats), ModelError> {
    check_inputs(params, arch, batch)?;
    let (logits, cache) = forward_impl(params, arch, batch);
    let mut dlogits = Tensor::zeros(logits.rows, logits.cols);
    let stats = loss_with_grad(&logits, batch, Some((&mut dlogits, scale)));
    drop(logits);

    let mut grads = params.zeros_like();
    let (b, t) = (batch.batch_size, batch.seq_len);
    let n = b * t;
    let c = arch.width;
    let hd = arch.head_dim();
    let hidden = arch.ffn_hidden();
    let dims = Dims { b, t, heads: arch.heads, kv_heads: arch.kv_heads, head_dim: hd };
    let rope = (arch.positional == Positional::Rope && arch.depth > 0).then(|| RopeTable::new(t, hd, ROPE_BASE));

    // unembedding + final norm
    let unembed = params.unembedding.as_ref().unwrap_or(&params.token_embedding);
    let dnf = matmul(&dlogits, unembed);
    match grads.unembedding.as_mut() {
        Some(gu) => matmul_tn_acc(&dlogits, &cache.nf, gu),
        None => matmul_tn_acc(&dlogits, &cache.nf, &mut grads.token_embedding),
    }
    drop(dlogits);
    let mut dx = Tensor::zeros(n, c);
    rmsnorm_rows_backward(&cache.x_final, &params.final_norm.data, &cache.inv_f, &dnf, &mut dx, &mut grads.final_norm.data);

    for (l, (lp, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl: &mut LayerParams = &mut grads.layers[l];

        // MLP branch
        let rm = resid_scale(&lp.resid_mlp);
        if let Some(g) = gl.resid_mlp.as_mut() {
            g.data[0] += dx.data.iter().zip(&lc.m.data).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut dm = dx.clone();
        dm.scale(rm);
        matmul_tn_acc(&dm, &lc.h, &mut gl.mlp_out);
        let dh = matmul(&dm, &lp.mlp_out);
        let du = mlp_activate_backward(arch.activation, &lc.u, &dh, hidden);
        matmul_tn_acc(&du, &lc.n2, &mut gl.mlp_in);
        let dn2 = matmul(&du, &lp.mlp_in);
        rmsnorm_rows_backward(&lc.x_mid, &lp.mlp_norm.data, &lc.inv2, &dn2, &mut dx, &mut gl.mlp_norm.data);

        // attention branch
        let ra = resid_scale(&lp.resid_attn);
        if let Some(g) = gl.resid_attn.as_mut() {
            g.data[0] += dx.data.iter().zip(&lc.att.data).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut datt = dx.clone();
        datt.scale(ra);
        matmul_tn_acc(&datt, &lc.y, &mut gl.attn_o);
        let dy = matmul(&datt, &lp.attn_o);
        let window = arch.window_for_layer(l);
        let (mut dq, mut dk, dv) = attention_backward(&lc.q, &lc.k, &lc.v, &lc.probs, &dy, &dims, window);
        if let (Some(ve), Some(gate), Some(gve), Some(ggate)) =
            (&lp.value_embed, &lp.value_gate, gl.value_embed.as_mut(), gl.value_gate.as_mut())
        {
            let sig: Vec<f64> = gate.data.iter().map(|&z| sigmoid(z)).collect();
            for r in 0..n {
                let id = batch.token_ids[r] as usize;
                let dvrow = dv.row(r);
                let erow = ve.row(id);
                for j in 0..dvrow.len() {
                    ggate.data[j] += dvrow[j] * erow[j] * sig[j] * (1.0 - sig[j]);
                }
                for (o, (dd, s)) in gve.row_mut(id).iter_mut().zip(dvrow.iter().zip(&sig)) {
                    *o += dd * s;
                }
            }
        }
        if let Some(table) = &rope {
            rope_rows(&mut dq, arch.heads, hd, t, table, true);
            rope_rows(&mut dk, arch.kv_heads, hd, t, table, true);
        }
        matmul_tn_acc(&dq, &lc.n1, &mut gl.attn_q);
        matmul_tn_acc(&dk, &lc.n1, &mut gl.attn_k);
        matmul_tn_acc(&dv, &lc.n1, &mut gl.attn_v);
        let mut dn1 = matmul(&dq, &lp.attn_q);
        matmul_acc(&dk, &lp.attn_k, &mut dn1);
        matmul_acc(&dv, &lp.attn_v, &mut dn1);
        rmsnorm_rows_backward(&lc.x_in, &lp.attn_norm.data, &lc.inv1, &dn1, &mut dx, &mut gl.attn_norm.data);
    }

    for r in 0..n {
        let id = batch.token_ids[r] as usize;
        for (o, d) in grads.token_embedding.row_mut(id).iter_mut().zip(dx.row(r)) {
            *o += d;
        }
    }
    Ok((grads, stats))
}
