//! Architecture / hyperparameter configuration space, structured mutations
//! over it, and the per-condition constraints on which fields may move.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! text_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ConfigError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(ConfigError::InvalidValue {
                        field: stringify!($name).to_string(),
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

text_enum!(Activation {
    Relu => "relu",
    Gelu => "gelu",
    Silu => "silu",
    ReluSquared => "relu_squared",
    Swiglu => "swiglu",
    Geglu => "geglu",
});

impl Activation {
    /// Gated variants split `mlp_in`'s output into value and gate halves.
    pub fn is_gated(self) -> bool {
        matches!(self, Activation::Swiglu | Activation::Geglu)
    }
}

text_enum!(AttentionPattern { Full => "full", Windowed => "windowed" });
text_enum!(WindowTag { Short => "short", Long => "long" });
text_enum!(Positional { Rope => "rope", None => "none" });
text_enum!(NormKind { Rmsnorm => "rmsnorm" });
text_enum!(ValueEmbeddings {
    Off => "off",
    Alternating => "alternating",
    EveryLayer => "every_layer",
});
text_enum!(ResidualScaling { Fixed => "fixed", LearnedPerLayer => "learned_per_layer" });
text_enum!(TrackName {
    SmilesLike => "smiles_like",
    ProteinLike => "protein_like",
    NlpLike => "nlp_like",
    Custom => "custom",
});
text_enum!(TokenizerKind { Char => "char", Bpe => "bpe" });
text_enum!(
    /// The four experimental conditions.
    Condition {
        Agent => "agent",
        RandomNas => "random_nas",
        HpOnly => "hp_only",
        FixedDefault => "fixed_default",
    }
);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{field}`")]
    InvalidValue { field: String, value: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub ffn_mult: f64,
    pub activation: Activation,
    pub attention_pattern: AttentionPattern,
    pub window_cycle: Vec<WindowTag>,
    pub window_size: usize,
    pub positional: Positional,
    pub norm: NormKind,
    pub value_embeddings: ValueEmbeddings,
    pub residual_scaling: ResidualScaling,
    pub weight_tying: bool,
}

impl ArchConfig {
    /// The shared six-layer baseline (width 320, five 64-wide heads, 5x ReluSquared
    /// MLP, SSSL windows, RoPE, alternating value embeddings, untied embeddings).
    pub fn baseline(seq_len: usize) -> Self {
        Self {
            depth: 6,
            width: 320,
            heads: 5,
            kv_heads: 5,
            ffn_mult: 5.0,
            activation: Activation::ReluSquared,
            attention_pattern: AttentionPattern::Windowed,
            window_cycle: vec![WindowTag::Short, WindowTag::Short, WindowTag::Short, WindowTag::Long],
            window_size: (seq_len / 4).max(1),
            positional: Positional::Rope,
            norm: NormKind::Rmsnorm,
            value_embeddings: ValueEmbeddings::Alternating,
            residual_scaling: ResidualScaling::Fixed,
            weight_tying: false,
        }
    }

    /// The baseline shrunk to something a laptop CPU trains in seconds.
    pub fn desk(seq_len: usize) -> Self {
        Self { depth: 2, width: 64, heads: 2, kv_heads: 2, ..Self::baseline(seq_len) }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads.max(1)
    }

    pub fn ffn_hidden(&self) -> usize {
        ((self.ffn_mult * self.width as f64).round() as usize).max(1)
    }

    /// Attention window for a layer, `None` meaning full causal.
    pub fn window_for_layer(&self, layer: usize) -> Option<usize> {
        match self.attention_pattern {
            AttentionPattern::Full => None,
            AttentionPattern::Windowed => {
                if self.window_cycle.is_empty() {
                    return None;
                }
                match self.window_cycle[layer % self.window_cycle.len()] {
                    WindowTag::Short => Some(self.window_size),
                    WindowTag::Long => None,
                }
            }
        }
    }

    /// Alternating value embeddings live on even-indexed layers.
    pub fn has_value_embedding(&self, layer: usize) -> bool {
        match self.value_embeddings {
            ValueEmbeddings::Off => false,
            ValueEmbeddings::Alternating => layer % 2 == 0,
            ValueEmbeddings::EveryLayer => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpConfig {
    pub lr_embedding: f64,
    pub lr_unembedding: f64,
    pub lr_matrix: f64,
    pub lr_scalar: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub warmdown_ratio: f64,
    pub total_batch_tokens: usize,
    pub device_batch_seqs: usize,
    pub grad_accum_steps: usize,
}

impl HpConfig {
    pub fn with_batch(seq_len: usize, device_batch_seqs: usize, grad_accum_steps: usize) -> Self {
        Self {
            lr_embedding: 0.6,
            lr_unembedding: 0.004,
            lr_matrix: 0.04,
            lr_scalar: 0.5,
            weight_decay: 0.2,
            adam_beta1: 0.8,
            adam_beta2: 0.95,
            warmdown_ratio: 0.5,
            total_batch_tokens: device_batch_seqs * seq_len * grad_accum_steps,
            device_batch_seqs,
            grad_accum_steps,
        }
    }

    /// 65,536-token optimizer batches with no accumulation.
    pub fn full_scale(seq_len: usize) -> Self {
        Self::with_batch(seq_len, (65_536 / seq_len).max(1), 1)
    }

    /// Desk preset: smaller learning rates. The full-scale scalar LR makes
    /// models a few thousand parameters wide oscillate after a few hundred steps.
    pub fn desk(seq_len: usize) -> Self {
        Self::desk_batch(seq_len, 8, 1)
    }

    pub fn desk_batch(seq_len: usize, device_batch_seqs: usize, grad_accum_steps: usize) -> Self {
        Self {
            lr_embedding: 0.1,
            lr_unembedding: 0.004,
            lr_matrix: 0.02,
            lr_scalar: 0.05,
            ..Self::with_batch(seq_len, device_batch_seqs, grad_accum_steps)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub name: TrackName,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub tokenizer: TokenizerKind,
    pub corpus_path: Option<PathBuf>,
    pub split_fraction: f64,
}

impl TrackConfig {
    /// Desk-scale preset for a named track (shorter sequences, small BPE vocab).
    pub fn desk(name: TrackName) -> Self {
        let (vocab_size, seq_len, tokenizer) = match name {
            TrackName::SmilesLike => (37, 64, TokenizerKind::Char),
            TrackName::ProteinLike => (24, 128, TokenizerKind::Char),
            TrackName::NlpLike => (512, 128, TokenizerKind::Bpe),
            TrackName::Custom => (256, 64, TokenizerKind::Char),
        };
        Self { name, vocab_size, seq_len, tokenizer, corpus_path: None, split_fraction: 0.9 }
    }

    /// Full-scale vocabulary and sequence lengths.
    pub fn full_scale(name: TrackName) -> Self {
        let (vocab_size, seq_len) = match name {
            TrackName::SmilesLike => (37, 256),
            TrackName::ProteinLike => (24, 512),
            TrackName::NlpLike => (8192, 2048),
            TrackName::Custom => (256, 256),
        };
        Self { vocab_size, seq_len, ..Self::desk(name) }
    }
}

/// A value carried by a field edit. Deserialization tries the variants in order,
/// so JSON integers land in `Int` and are coerced to reals where needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    List(Vec<String>),
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Bool(b) => write!(f, "{b}"),
            FieldValue::Int(i) => write!(f, "{i}"),
            FieldValue::Real(x) => write!(f, "{x}"),
            FieldValue::Text(s) => f.write_str(s),
            FieldValue::List(items) => f.write_str(&items.join(",")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Count,
    Real,
    Bool,
    Enum,
    Tags,
}

pub const ARCH_FIELDS: &[&str] = &[
    "depth",
    "width",
    "heads",
    "kv_heads",
    "ffn_mult",
    "activation",
    "attention_pattern",
    "window_cycle",
    "window_size",
    "positional",
    "norm",
    "value_embeddings",
    "residual_scaling",
    "weight_tying",
];

pub const HP_FIELDS: &[&str] = &[
    "lr_embedding",
    "lr_unembedding",
    "lr_matrix",
    "lr_scalar",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "warmdown_ratio",
    "total_batch_tokens",
    "device_batch_seqs",
    "grad_accum_steps",
];

pub const TRACK_FIELDS: &[&str] =
    &["name", "vocab_size", "seq_len", "tokenizer", "corpus_path", "split_fraction"];

pub fn is_arch_field(name: &str) -> bool {
    ARCH_FIELDS.contains(&name)
}

pub fn is_hp_field(name: &str) -> bool {
    HP_FIELDS.contains(&name)
}

pub fn field_kind(name: &str) -> Option<FieldKind> {
    Some(match name {
        "depth" | "width" | "heads" | "kv_heads" | "window_size" | "total_batch_tokens"
        | "device_batch_seqs" | "grad_accum_steps" => FieldKind::Count,
        "ffn_mult" | "lr_embedding" | "lr_unembedding" | "lr_matrix" | "lr_scalar"
        | "weight_decay" | "adam_beta1" | "adam_beta2" | "warmdown_ratio" => FieldKind::Real,
        "weight_tying" => FieldKind::Bool,
        "activation" | "attention_pattern" | "positional" | "norm" | "value_embeddings"
        | "residual_scaling" => FieldKind::Enum,
        "window_cycle" => FieldKind::Tags,
        _ => return None,
    })
}

fn invalid(field: &str, value: &FieldValue) -> ConfigError {
    ConfigError::InvalidValue { field: field.to_string(), value: value.to_string() }
}

fn as_count(field: &str, v: &FieldValue) -> Result<usize, ConfigError> {
    match v {
        FieldValue::Int(i) if *i >= 0 => Ok(*i as usize),
        FieldValue::Real(x) if *x >= 0.0 && x.fract() == 0.0 && *x < 1e15 => Ok(*x as usize),
        FieldValue::Text(s) => s.trim().parse().map_err(|_| invalid(field, v)),
        _ => Err(invalid(field, v)),
    }
}

fn as_real(field: &str, v: &FieldValue) -> Result<f64, ConfigError> {
    match v {
        FieldValue::Int(i) => Ok(*i as f64),
        FieldValue::Real(x) => Ok(*x),
        FieldValue::Text(s) => s.trim().parse().map_err(|_| invalid(field, v)),
        _ => Err(invalid(field, v)),
    }
}

fn as_bool(field: &str, v: &FieldValue) -> Result<bool, ConfigError> {
    match v {
        FieldValue::Bool(b) => Ok(*b),
        FieldValue::Text(s) => s.trim().parse().map_err(|_| invalid(field, v)),
        _ => Err(invalid(field, v)),
    }
}

fn as_enum<T: FromStr<Err = ConfigError>>(field: &str, v: &FieldValue) -> Result<T, ConfigError> {
    match v {
        FieldValue::Text(s) => s.parse().map_err(|_| invalid(field, v)),
        _ => Err(invalid(field, v)),
    }
}

fn as_tags(field: &str, v: &FieldValue) -> Result<Vec<WindowTag>, ConfigError> {
    let items: Vec<String> = match v {
        FieldValue::List(items) => items.clone(),
        FieldValue::Text(s) if s.trim().is_empty() => Vec::new(),
        FieldValue::Text(s) => s.split(',').map(|p| p.trim().to_string()).collect(),
        _ => return Err(invalid(field, v)),
    };
    items.iter().map(|s| s.parse().map_err(|_| invalid(field, v))).collect()
}

/// Reads a field of `arch ∪ hp` by its canonical name.
pub fn get_field(arch: &ArchConfig, hp: &HpConfig, name: &str) -> Option<FieldValue> {
    use FieldValue::*;
    Some(match name {
        "depth" => Int(arch.depth as i64),
        "width" => Int(arch.width as i64),
        "heads" => Int(arch.heads as i64),
        "kv_heads" => Int(arch.kv_heads as i64),
        "ffn_mult" => Real(arch.ffn_mult),
        "activation" => Text(arch.activation.to_string()),
        "attention_pattern" => Text(arch.attention_pattern.to_string()),
        "window_cycle" => List(arch.window_cycle.iter().map(|t| t.to_string()).collect()),
        "window_size" => Int(arch.window_size as i64),
        "positional" => Text(arch.positional.to_string()),
        "norm" => Text(arch.norm.to_string()),
        "value_embeddings" => Text(arch.value_embeddings.to_string()),
        "residual_scaling" => Text(arch.residual_scaling.to_string()),
        "weight_tying" => Bool(arch.weight_tying),
        "lr_embedding" => Real(hp.lr_embedding),
        "lr_unembedding" => Real(hp.lr_unembedding),
        "lr_matrix" => Real(hp.lr_matrix),
        "lr_scalar" => Real(hp.lr_scalar),
        "weight_decay" => Real(hp.weight_decay),
        "adam_beta1" => Real(hp.adam_beta1),
        "adam_beta2" => Real(hp.adam_beta2),
        "warmdown_ratio" => Real(hp.warmdown_ratio),
        "total_batch_tokens" => Int(hp.total_batch_tokens as i64),
        "device_batch_seqs" => Int(hp.device_batch_seqs as i64),
        "grad_accum_steps" => Int(hp.grad_accum_steps as i64),
        _ => return None,
    })
}

/// Writes a field of `arch ∪ hp`, coercing compatible value representations.
pub fn set_field(
    arch: &mut ArchConfig,
    hp: &mut HpConfig,
    name: &str,
    v: &FieldValue,
) -> Result<(), ConfigError> {
    match name {
        "depth" => arch.depth = as_count(name, v)?,
        "width" => arch.width = as_count(name, v)?,
        "heads" => arch.heads = as_count(name, v)?,
        "kv_heads" => arch.kv_heads = as_count(name, v)?,
        "ffn_mult" => arch.ffn_mult = as_real(name, v)?,
        "activation" => arch.activation = as_enum(name, v)?,
        "attention_pattern" => arch.attention_pattern = as_enum(name, v)?,
        "window_cycle" => arch.window_cycle = as_tags(name, v)?,
        "window_size" => arch.window_size = as_count(name, v)?,
        "positional" => arch.positional = as_enum(name, v)?,
        "norm" => arch.norm = as_enum(name, v)?,
        "value_embeddings" => arch.value_embeddings = as_enum(name, v)?,
        "residual_scaling" => arch.residual_scaling = as_enum(name, v)?,
        "weight_tying" => arch.weight_tying = as_bool(name, v)?,
        "lr_embedding" => hp.lr_embedding = as_real(name, v)?,
        "lr_unembedding" => hp.lr_unembedding = as_real(name, v)?,
        "lr_matrix" => hp.lr_matrix = as_real(name, v)?,
        "lr_scalar" => hp.lr_scalar = as_real(name, v)?,
        "weight_decay" => hp.weight_decay = as_real(name, v)?,
        "adam_beta1" => hp.adam_beta1 = as_real(name, v)?,
        "adam_beta2" => hp.adam_beta2 = as_real(name, v)?,
        "warmdown_ratio" => hp.warmdown_ratio = as_real(name, v)?,
        "total_batch_tokens" => hp.total_batch_tokens = as_count(name, v)?,
        "device_batch_seqs" => hp.device_batch_seqs = as_count(name, v)?,
        "grad_accum_steps" => hp.grad_accum_steps = as_count(name, v)?,
        _ => return Err(ConfigError::UnknownKey(name.to_string())),
    }
    Ok(())
}

/// Compares two values as the named field would interpret them.
fn field_values_equal(name: &str, a: &FieldValue, b: &FieldValue) -> bool {
    let (mut arch_a, mut hp_a) = (ArchConfig::baseline(64), HpConfig::desk(64));
    let (mut arch_b, mut hp_b) = (arch_a.clone(), hp_a.clone());
    match (set_field(&mut arch_a, &mut hp_a, name, a), set_field(&mut arch_b, &mut hp_b, name, b)) {
        (Ok(()), Ok(())) => get_field(&arch_a, &hp_a, name) == get_field(&arch_b, &hp_b, name),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEdit {
    pub field: String,
    pub old_value: FieldValue,
    pub new_value: FieldValue,
}

/// A structured edit over `ArchConfig ∪ HpConfig`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigMutation {
    pub edits: Vec<FieldEdit>,
    #[serde(default)]
    pub rationale: String,
}

impl ConfigMutation {
    pub fn noop(rationale: impl Into<String>) -> Self {
        Self { edits: Vec::new(), rationale: rationale.into() }
    }

    pub fn single(field: &str, old_value: FieldValue, new_value: FieldValue) -> Self {
        Self {
            edits: vec![FieldEdit { field: field.to_string(), old_value, new_value }],
            rationale: String::new(),
        }
    }

    pub fn with_rationale(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = rationale.into();
        self
    }

    pub fn is_noop(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn edit(&self, field: &str) -> Option<&FieldEdit> {
        self.edits.iter().find(|e| e.field == field)
    }

    pub fn touches_arch(&self) -> bool {
        self.edits.iter().any(|e| is_arch_field(&e.field))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConstraint {
    pub condition: Condition,
    pub mutable_fields: BTreeSet<String>,
}

impl SearchConstraint {
    pub fn for_condition(condition: Condition) -> Self {
        let fields: Vec<&str> = match condition {
            Condition::Agent | Condition::RandomNas => {
                ARCH_FIELDS.iter().chain(HP_FIELDS).copied().collect()
            }
            Condition::HpOnly => HP_FIELDS.to_vec(),
            Condition::FixedDefault => Vec::new(),
        };
        Self { condition, mutable_fields: fields.into_iter().map(String::from).collect() }
    }

    pub fn allows(&self, field: &str) -> bool {
        self.mutable_fields.contains(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionKind {
    ConstraintViolation,
    StaleOldValue,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("mutation rejected ({kind:?}) at `{field}`")]
pub struct Rejection {
    pub kind: RejectionKind,
    pub field: String,
}

/// Applies `m` to copies of the configs if every edited field is mutable under
/// `c` and every old value matches the current state.
pub fn apply_mutation(
    arch: &ArchConfig,
    hp: &HpConfig,
    m: &ConfigMutation,
    c: &SearchConstraint,
) -> Result<(ArchConfig, HpConfig), Rejection> {
    let reject = |kind, field: &str| Rejection { kind, field: field.to_string() };
    let mut seen = BTreeSet::new();
    for e in &m.edits {
        if field_kind(&e.field).is_none() || !seen.insert(e.field.as_str()) {
            return Err(reject(RejectionKind::Malformed, &e.field));
        }
        if !c.allows(&e.field) {
            return Err(reject(RejectionKind::ConstraintViolation, &e.field));
        }
    }
    let (mut new_arch, mut new_hp) = (arch.clone(), hp.clone());
    for e in &m.edits {
        let current = get_field(arch, hp, &e.field).expect("known field");
        if !field_values_equal(&e.field, &current, &e.old_value) {
            return Err(reject(RejectionKind::StaleOldValue, &e.field));
        }
        set_field(&mut new_arch, &mut new_hp, &e.field, &e.new_value)
            .map_err(|_| reject(RejectionKind::Malformed, &e.field))?;
    }
    Ok((new_arch, new_hp))
}

/// Writes every edit's new value regardless of constraints or old values.
pub fn apply_edits_forced(
    arch: &ArchConfig,
    hp: &HpConfig,
    m: &ConfigMutation,
) -> Result<(ArchConfig, HpConfig), ConfigError> {
    let (mut new_arch, mut new_hp) = (arch.clone(), hp.clone());
    for e in &m.edits {
        set_field(&mut new_arch, &mut new_hp, &e.field, &e.new_value)?;
    }
    Ok((new_arch, new_hp))
}

/// Minimal field-level diff from `a` to `b`, in canonical field order.
pub fn diff_configs(a: (&ArchConfig, &HpConfig), b: (&ArchConfig, &HpConfig)) -> ConfigMutation {
    let edits = ARCH_FIELDS
        .iter()
        .chain(HP_FIELDS)
        .filter_map(|name| {
            let old_value = get_field(a.0, a.1, name)?;
            let new_value = get_field(b.0, b.1, name)?;
            let same = match (&old_value, &new_value) {
                (FieldValue::Real(x), FieldValue::Real(y)) => x.to_bits() == y.to_bits(),
                (x, y) => x == y,
            };
            (!same).then(|| FieldEdit { field: name.to_string(), old_value, new_value })
        })
        .collect();
    ConfigMutation { edits, rationale: String::new() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Every violated invariant, or `Ok` if all hold.
pub fn validate_config(
    arch: &ArchConfig,
    hp: &HpConfig,
    track: &TrackConfig,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut v = |field: &str, message: String| {
        out.push(Violation { field: field.to_string(), message })
    };

    for (name, n) in [
        ("depth", arch.depth),
        ("width", arch.width),
        ("heads", arch.heads),
        ("kv_heads", arch.kv_heads),
        ("window_size", arch.window_size),
    ] {
        if n == 0 {
            v(name, format!("{name} must be >= 1"));
        }
    }
    if arch.heads > 0 && arch.width % arch.heads != 0 {
        v("heads", "width mod heads ≠ 0".to_string());
    }
    if arch.kv_heads > 0 && arch.heads % arch.kv_heads != 0 {
        v("kv_heads", "heads mod kv_heads ≠ 0".to_string());
    }
    if arch.positional == Positional::Rope
        && arch.heads > 0
        && arch.width % arch.heads == 0
        && arch.head_dim() % 2 != 0
    {
        v("positional", "rope needs an even head_dim".to_string());
    }
    if !(arch.ffn_mult.is_finite() && arch.ffn_mult > 0.0) {
        v("ffn_mult", "ffn_mult must be a positive finite number".to_string());
    }
    if arch.attention_pattern == AttentionPattern::Windowed && arch.window_cycle.is_empty() {
        v("window_cycle", "window_cycle must be non-empty when windowed".to_string());
    }

    for (name, x) in [
        ("lr_embedding", hp.lr_embedding),
        ("lr_unembedding", hp.lr_unembedding),
        ("lr_matrix", hp.lr_matrix),
        ("lr_scalar", hp.lr_scalar),
    ] {
        if !(x.is_finite() && x > 0.0) {
            v(name, format!("{name} must be positive"));
        }
    }
    if !(hp.weight_decay.is_finite() && hp.weight_decay >= 0.0) {
        v("weight_decay", "weight_decay must be nonnegative".to_string());
    }
    for (name, b) in [("adam_beta1", hp.adam_beta1), ("adam_beta2", hp.adam_beta2)] {
        if !(b > 0.0 && b < 1.0) {
            v(name, format!("{name} must lie in (0, 1)"));
        }
    }
    if !(0.0..=1.0).contains(&hp.warmdown_ratio) {
        v("warmdown_ratio", "warmdown_ratio must lie in [0, 1]".to_string());
    }
    for (name, n) in [
        ("total_batch_tokens", hp.total_batch_tokens),
        ("device_batch_seqs", hp.device_batch_seqs),
        ("grad_accum_steps", hp.grad_accum_steps),
    ] {
        if n == 0 {
            v(name, format!("{name} must be >= 1"));
        }
    }
    if hp.device_batch_seqs * track.seq_len * hp.grad_accum_steps != hp.total_batch_tokens {
        v(
            "total_batch_tokens",
            format!(
                "device_batch_seqs × seq_len × grad_accum_steps = {} ≠ total_batch_tokens {}",
                hp.device_batch_seqs * track.seq_len * hp.grad_accum_steps,
                hp.total_batch_tokens
            ),
        );
    }

    if track.seq_len < 2 {
        v("seq_len", "seq_len must be >= 2".to_string());
    }
    if track.vocab_size < 2 {
        v("vocab_size", "vocab_size must be >= 2".to_string());
    }
    if !(track.split_fraction > 0.0 && track.split_fraction < 1.0) {
        v("split_fraction", "split_fraction must lie in (0, 1)".to_string());
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Discrete random-NAS search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NasSpace {
    pub depth_min: usize,
    pub depth_max: usize,
    pub widths: Vec<usize>,
    pub heads_min: usize,
    pub heads_max: usize,
    pub activations: Vec<Activation>,
    pub patterns: Vec<AttentionPattern>,
}

impl NasSpace {
    /// depth 3..=8, width 128..=512 step 32, heads 2..=8.
    pub fn full_scale() -> Self {
        Self {
            depth_min: 3,
            depth_max: 8,
            widths: (128..=512).step_by(32).collect(),
            heads_min: 2,
            heads_max: 8,
            activations: vec![
                Activation::Relu,
                Activation::Gelu,
                Activation::Silu,
                Activation::ReluSquared,
            ],
            patterns: vec![AttentionPattern::Full, AttentionPattern::Windowed],
        }
    }

    /// Same shape of space, small enough for CPU runs.
    pub fn desk() -> Self {
        Self {
            depth_min: 1,
            depth_max: 4,
            widths: vec![32, 48, 64],
            heads_min: 1,
            heads_max: 4,
            ..Self::full_scale()
        }
    }

    /// Samples a configuration; fields outside the space come from `base`,
    /// except `kv_heads`, which always equals `heads`.
    pub fn sample<R: Rng>(&self, base: &ArchConfig, rng: &mut R) -> ArchConfig {
        let depth = rng.random_range(self.depth_min..=self.depth_max);
        let width = self.widths[rng.random_range(0..self.widths.len())];
        let heads = loop {
            let h = rng.random_range(self.heads_min..=self.heads_max);
            if width % h == 0 && (width / h) % 2 == 0 {
                break h;
            }
        };
        let activation = self.activations[rng.random_range(0..self.activations.len())];
        let attention_pattern = self.patterns[rng.random_range(0..self.patterns.len())];
        ArchConfig { depth, width, heads, kv_heads: heads, activation, attention_pattern, ..base.clone() }
    }
}

/// Samples the full random-NAS space around the seq-256 baseline.
pub fn sample_random_nas(seed: u64) -> ArchConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NasSpace::full_scale().sample(&ArchConfig::baseline(256), &mut rng)
}

fn track_set(track: &mut TrackConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::InvalidValue { field: key.to_string(), value: value.to_string() };
    match key {
        "name" => track.name = value.parse()?,
        "vocab_size" => track.vocab_size = value.parse().map_err(|_| bad())?,
        "seq_len" => track.seq_len = value.parse().map_err(|_| bad())?,
        "tokenizer" => track.tokenizer = value.parse()?,
        "corpus_path" => {
            track.corpus_path = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
        }
        "split_fraction" => track.split_fraction = value.parse().map_err(|_| bad())?,
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Parses a flat `key = value` config file over arch, HP and track fields,
/// starting from the given defaults. `#` starts a comment.
pub fn parse_config_text(
    text: &str,
    mut arch: ArchConfig,
    mut hp: HpConfig,
    mut track: TrackConfig,
) -> Result<(ArchConfig, HpConfig, TrackConfig), ConfigError> {
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey(key.to_string()));
        }
        if TRACK_FIELDS.contains(&key) {
            track_set(&mut track, key, value)?;
        } else if field_kind(key).is_some() {
            set_field(&mut arch, &mut hp, key, &FieldValue::Text(value.to_string()))?;
        } else {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
    }
    Ok((arch, hp, track))
}

/// Canonical config text; `parse_config_text` reads it back exactly.
pub fn to_config_text(arch: &ArchConfig, hp: &HpConfig, track: &TrackConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("name = {}\n", track.name));
    out.push_str(&format!("vocab_size = {}\n", track.vocab_size));
    out.push_str(&format!("seq_len = {}\n", track.seq_len));
    out.push_str(&format!("tokenizer = {}\n", track.tokenizer));
    if let Some(p) = &track.corpus_path {
        out.push_str(&format!("corpus_path = {}\n", p.display()));
    }
    out.push_str(&format!("split_fraction = {}\n", track.split_fraction));
    for name in ARCH_FIELDS.iter().chain(HP_FIELDS) {
        let value = get_field(arch, hp, name).expect("canonical field");
        out.push_str(&format!("{name} = {value}\n"));
    }
    out
}
