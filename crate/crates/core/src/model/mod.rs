//! Configurable decoder-only transformer with hand-written exact gradients.
//!
//! Weight matrices use the `out x in` layout, so a linear layer computes
//! `x · Wᵀ`. Everything runs in `f64`.

mod ops;
mod transformer;

pub use ops::{
    activation_grad, apply_activation, rmsnorm, rope_rotate, sigmoid, RopeTable, RMS_EPS, ROPE_BASE,
};
pub use transformer::{
    causal_attention, compute_grads, compute_grads_scaled, forward_logits, loss_bpb, loss_stats,
    LossStats,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ArchConfig, ResidualScaling};
use crate::tensor::Tensor;

/// Value-embedding gates start here, so sigmoid(gate) ≈ 0.12.
pub const VALUE_GATE_INIT: f64 = -2.0;
/// Standard deviation of the untied unembedding at init (near-uniform logits).
pub const UNEMBED_INIT_STD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch at `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: (usize, usize), found: (usize, usize) },
    #[error("parameter layout does not match the architecture: {0}")]
    Layout(String),
    #[error("token id {id} out of range for vocab {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub attn_norm: Tensor,
    pub attn_q: Tensor,
    pub attn_k: Tensor,
    pub attn_v: Tensor,
    pub attn_o: Tensor,
    pub mlp_norm: Tensor,
    /// `hidden x width`, or `2·hidden x width` (value ‖ gate) for gated MLPs.
    pub mlp_in: Tensor,
    pub mlp_out: Tensor,
    pub resid_attn: Option<Tensor>,
    pub resid_mlp: Option<Tensor>,
    pub value_embed: Option<Tensor>,
    pub value_gate: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub token_embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_norm: Tensor,
    /// `vocab x width`; absent when tied to `token_embedding`.
    pub unembedding: Option<Tensor>,
}

/// Optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// 2-D attention / MLP weights (Muon).
    Matrix,
    Embedding,
    Unembedding,
    Gain,
    Scalar,
}

impl ParamKind {
    pub fn of(name: &str) -> ParamKind {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        match leaf {
            "attn_q" | "attn_k" | "attn_v" | "attn_o" | "mlp_in" | "mlp_out" => ParamKind::Matrix,
            "token_embedding" | "value_embed" => ParamKind::Embedding,
            "unembedding" => ParamKind::Unembedding,
            "attn_norm" | "mlp_norm" | "final_norm" => ParamKind::Gain,
            _ => ParamKind::Scalar,
        }
    }
}

/// Expected `(rows, cols)` of every named parameter for an architecture.
pub fn expected_shapes(arch: &ArchConfig, vocab: usize) -> Vec<(String, (usize, usize))> {
    let c = arch.width;
    let d = arch.head_dim();
    let q_dim = arch.heads * d;
    let kv_dim = arch.kv_heads * d;
    let hidden = arch.ffn_hidden();
    let mlp_in_rows = if arch.activation.is_gated() { 2 * hidden } else { hidden };
    let mut out = vec![("token_embedding".to_string(), (vocab, c))];
    for l in 0..arch.depth {
        let p = |n: &str| format!("layers.{l}.{n}");
        out.push((p("attn_norm"), (1, c)));
        out.push((p("attn_q"), (q_dim, c)));
        out.push((p("attn_k"), (kv_dim, c)));
        out.push((p("attn_v"), (kv_dim, c)));
        out.push((p("attn_o"), (c, q_dim)));
        out.push((p("mlp_norm"), (1, c)));
        out.push((p("mlp_in"), (mlp_in_rows, c)));
        out.push((p("mlp_out"), (c, hidden)));
        if arch.residual_scaling == ResidualScaling::LearnedPerLayer {
            out.push((p("resid_attn"), (1, 1)));
            out.push((p("resid_mlp"), (1, 1)));
        }
        if arch.has_value_embedding(l) {
            out.push((p("value_embed"), (vocab, kv_dim)));
            out.push((p("value_gate"), (1, kv_dim)));
        }
    }
    out.push(("final_norm".to_string(), (1, c)));
    if !arch.weight_tying {
        out.push(("unembedding".to_string(), (vocab, c)));
    }
    out
}

impl ModelParams {
    /// Seeded init: embeddings N(0, 1), matrices N(0, 1/fan_in), gains and
    /// residual scales 1, value gates -2, untied unembedding N(0, 1e-6).
    pub fn init(arch: &ArchConfig, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)).collect())
        };
        let c = arch.width;
        let d = arch.head_dim();
        let q_dim = arch.heads * d;
        let kv_dim = arch.kv_heads * d;
        let hidden = arch.ffn_hidden();
        let mlp_in_rows = if arch.activation.is_gated() { 2 * hidden } else { hidden };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        let token_embedding = gauss(vocab, c, 1.0);
        let mut layers = Vec::with_capacity(arch.depth);
        for l in 0..arch.depth {
            let learned = arch.residual_scaling == ResidualScaling::LearnedPerLayer;
            let ve = arch.has_value_embedding(l);
            layers.push(LayerParams {
                attn_norm: Tensor::filled(1, c, 1.0),
                attn_q: gauss(q_dim, c, fan(c)),
                attn_k: gauss(kv_dim, c, fan(c)),
                attn_v: gauss(kv_dim, c, fan(c)),
                attn_o: gauss(c, q_dim, fan(q_dim)),
                mlp_norm: Tensor::filled(1, c, 1.0),
                mlp_in: gauss(mlp_in_rows, c, fan(c)),
                mlp_out: gauss(c, hidden, fan(hidden)),
                resid_attn: learned.then(|| Tensor::filled(1, 1, 1.0)),
                resid_mlp: learned.then(|| Tensor::filled(1, 1, 1.0)),
                value_embed: ve.then(|| gauss(vocab, kv_dim, 1.0)),
                value_gate: ve.then(|| Tensor::filled(1, kv_dim, VALUE_GATE_INIT)),
            });
        }
        let final_norm = Tensor::filled(1, c, 1.0);
        let unembedding = (!arch.weight_tying).then(|| gauss(vocab, c, UNEMBED_INIT_STD));
        Self { token_embedding, layers, final_norm, unembedding }
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.rows
    }

    /// Zero tensors with the same layout.
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.rows, t.cols);
        let zo = |t: &Option<Tensor>| t.as_ref().map(z);
        Self {
            token_embedding: z(&self.token_embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: z(&l.attn_norm),
                    attn_q: z(&l.attn_q),
                    attn_k: z(&l.attn_k),
                    attn_v: z(&l.attn_v),
                    attn_o: z(&l.attn_o),
                    mlp_norm: z(&l.mlp_norm),
                    mlp_in: z(&l.mlp_in),
                    mlp_out: z(&l.mlp_out),
                    resid_attn: zo(&l.resid_attn),
                    resid_mlp: zo(&l.resid_mlp),
                    value_embed: zo(&l.value_embed),
                    value_gate: zo(&l.value_gate),
                })
                .collect(),
            final_norm: z(&self.final_norm),
            unembedding: zo(&self.unembedding),
        }
    }

    /// All tensors with canonical names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{l}.{n}");
            out.push((p("attn_norm"), &layer.attn_norm));
            out.push((p("attn_q"), &layer.attn_q));
            out.push((p("attn_k"), &layer.attn_k));
            out.push((p("attn_v"), &layer.attn_v));
            out.push((p("attn_o"), &layer.attn_o));
            out.push((p("mlp_norm"), &layer.mlp_norm));
            out.push((p("mlp_in"), &layer.mlp_in));
            out.push((p("mlp_out"), &layer.mlp_out));
            if let Some(t) = &layer.resid_attn {
                out.push((p("resid_attn"), t));
            }
            if let Some(t) = &layer.resid_mlp {
                out.push((p("resid_mlp"), t));
            }
            if let Some(t) = &layer.value_embed {
                out.push((p("value_embed"), t));
            }
            if let Some(t) = &layer.value_gate {
                out.push((p("value_gate"), t));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        if let Some(t) = &self.unembedding {
            out.push(("unembedding".to_string(), t));
        }
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("token_embedding".to_string(), &mut self.token_embedding)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{l}.{n}");
            out.push((p("attn_norm"), &mut layer.attn_norm));
            out.push((p("attn_q"), &mut layer.attn_q));
            out.push((p("attn_k"), &mut layer.attn_k));
            out.push((p("attn_v"), &mut layer.attn_v));
            out.push((p("attn_o"), &mut layer.attn_o));
            out.push((p("mlp_norm"), &mut layer.mlp_norm));
            out.push((p("mlp_in"), &mut layer.mlp_in));
            out.push((p("mlp_out"), &mut layer.mlp_out));
            if let Some(t) = &mut layer.resid_attn {
                out.push((p("resid_attn"), t));
            }
            if let Some(t) = &mut layer.resid_mlp {
                out.push((p("resid_mlp"), t));
            }
            if let Some(t) = &mut layer.value_embed {
                out.push((p("value_embed"), t));
            }
            if let Some(t) = &mut layer.value_gate {
                out.push((p("value_gate"), t));
            }
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        if let Some(t) = &mut self.unembedding {
            out.push(("unembedding".to_string(), t));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Order-sensitive FNV-1a digest over the raw bits of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named() {
            for x in &t.data {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn check_shapes(&self, arch: &ArchConfig) -> Result<(), ModelError> {
        let expected = expected_shapes(arch, self.vocab_size());
        let found = self.named();
        if expected.len() != found.len() {
            return Err(ModelError::Layout(format!(
                "expected {} tensors, found {}",
                expected.len(),
                found.len()
            )));
        }
        for ((en, es), (fname, t)) in expected.iter().zip(&found) {
            if en != fname {
                return Err(ModelError::Layout(format!("expected `{en}`, found `{fname}`")));
            }
            if *es != t.shape() {
                return Err(ModelError::ShapeMismatch {
                    name: en.clone(),
                    expected: *es,
                    found: t.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Parameter count implied by an architecture, without allocating.
pub fn param_count_for(arch: &ArchConfig, vocab: usize) -> usize {
    expected_shapes(arch, vocab).iter().map(|(_, (r, c))| r * c).sum()
}

/// A fixed-shape `batch_size x seq_len` grid of token ids.
///
/// Position `t` predicts position `t + 1`; a target only counts toward loss and
/// byte totals when it is `valid` (padding is not).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub token_ids: Vec<u32>,
    /// UTF-8 byte length of each token; 0 for padding.
    pub token_bytes: Vec<u32>,
    pub valid: Vec<bool>,
}

impl Batch {
    /// Right-pads (or truncates) each sequence to `seq_len`.
    pub fn from_sequences(
        seqs: &[&[u32]],
        seq_len: usize,
        pad_id: u32,
        byte_len: impl Fn(u32) -> u32,
    ) -> Self {
        let batch_size = seqs.len();
        let mut token_ids = Vec::with_capacity(batch_size * seq_len);
        let mut token_bytes = Vec::with_capacity(batch_size * seq_len);
        let mut valid = Vec::with_capacity(batch_size * seq_len);
        for s in seqs {
            for t in 0..seq_len {
                match s.get(t) {
                    Some(&id) => {
                        token_ids.push(id);
                        token_bytes.push(byte_len(id));
                        valid.push(true);
                    }
                    None => {
                        token_ids.push(pad_id);
                        token_bytes.push(0);
                        valid.push(false);
                    }
                }
            }
        }
        Self { batch_size, seq_len, token_ids, token_bytes, valid }
    }

    /// Bytes of each sequence's text (all valid tokens).
    pub fn byte_lengths(&self) -> Vec<usize> {
        (0..self.batch_size)
            .map(|b| {
                let r = b * self.seq_len..(b + 1) * self.seq_len;
                self.token_bytes[r.clone()]
                    .iter()
                    .zip(&self.valid[r])
                    .filter(|(_, v)| **v)
                    .map(|(n, _)| *n as usize)
                    .sum()
            })
            .collect()
    }

    /// Bytes of the predicted span (valid targets at positions 1..T).
    pub fn target_bytes(&self) -> usize {
        (0..self.batch_size)
            .flat_map(|b| (1..self.seq_len).map(move |t| b * self.seq_len + t))
            .filter(|&r| self.valid[r])
            .map(|r| self.token_bytes[r] as usize)
            .sum()
    }

    pub fn rows(&self) -> usize {
        self.batch_size * self.seq_len
    }
}
