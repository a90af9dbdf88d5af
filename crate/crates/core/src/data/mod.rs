//! Tokenizers, corpora with deterministic splits, batch assembly, and synthetic
//! desk-scale text for the three tracks.

mod synth;
mod tokenizer;

pub use synth::{generate_synthetic_corpus, PROTEIN_ALPHABET, SMILES_ALPHABET};
pub use tokenizer::{train_bpe, Tokenizer, BPE_PAD};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{TokenizerKind, TrackConfig, TrackName};
use crate::model::Batch;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("symbol {0:?} is not in the tokenizer alphabet")]
    UnknownSymbol(char),
    #[error("BPE target vocabulary {0} is below 257 (256 bytes + pad)")]
    VocabTooSmall(usize),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("corpus has no non-empty lines")]
    EmptyCorpus,
    #[error("no synthetic generator for track `{0}`")]
    NoSynthetic(TrackName),
    #[error("tokenizer file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Tokenized sequences with a seeded train/validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub sequences: Vec<Vec<u32>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seq_len: usize,
    pub pad_id: u32,
    /// Bytes per token id (0 for padding).
    pub token_bytes: Vec<u32>,
}

impl Corpus {
    /// One sequence per non-empty line, truncated to `seq_len`. Line terminators
    /// are not tokens and never count toward byte totals.
    pub fn from_text(
        text: &str,
        tokenizer: &Tokenizer,
        seq_len: usize,
        split_fraction: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        let mut sequences = Vec::new();
        for line in text.lines() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut ids = tokenizer.encode(line)?;
            ids.truncate(seq_len);
            sequences.push(ids);
        }
        if sequences.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let (train, val) = split_indices(sequences.len(), split_fraction, seed);
        Ok(Self { sequences, train, val, seq_len, pad_id: tokenizer.pad_id, token_bytes: tokenizer.byte_len_table() })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// The same corpus with every sequence cut to `len` tokens.
    pub fn truncated(&self, len: usize) -> Self {
        let mut out = self.clone();
        for s in &mut out.sequences {
            s.truncate(len);
        }
        out.seq_len = len.min(self.seq_len);
        out
    }

    pub fn total_bytes(&self, split: Split) -> usize {
        self.indices(split)
            .iter()
            .flat_map(|&i| self.sequences[i].iter())
            .map(|&id| self.token_bytes[id as usize] as usize)
            .sum()
    }

    pub fn batch_of(&self, idx: &[usize]) -> Batch {
        let seqs: Vec<&[u32]> = idx.iter().map(|&i| self.sequences[i].as_slice()).collect();
        Batch::from_sequences(&seqs, self.seq_len, self.pad_id, |id| self.token_bytes[id as usize])
    }
}

/// Seeded shuffle, first `round(n·fraction)` go to train. With at least two
/// sequences both sides are kept non-empty.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    } else {
        n_train = n;
    }
    let val = idx.split_off(n_train);
    (idx, val)
}

/// One epoch of shuffled fixed-shape batches; the last short batch is kept.
pub fn make_batches(corpus: &Corpus, split: Split, device_batch_seqs: usize, seed: u64) -> Result<Vec<Batch>, DataError> {
    let idx = corpus.indices(split);
    if idx.is_empty() {
        return Err(DataError::EmptySplit(split_name(split)));
    }
    let mut order = idx.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(device_batch_seqs.max(1)).map(|c| corpus.batch_of(c)).collect())
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "validation",
    }
}

/// Endless batch stream: epoch `e` is [`make_batches`] with seed `seed + e`.
pub struct BatchStream<'a> {
    corpus: &'a Corpus,
    split: Split,
    device_batch_seqs: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Batch>,
}

impl<'a> BatchStream<'a> {
    pub fn new(corpus: &'a Corpus, split: Split, device_batch_seqs: usize, seed: u64) -> Result<Self, DataError> {
        let first = make_batches(corpus, split, device_batch_seqs, seed)?;
        Ok(Self { corpus, split, device_batch_seqs, seed, epoch: 0, pending: first.into_iter() })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.epoch += 1;
        let seed = self.seed.wrapping_add(self.epoch);
        self.pending = make_batches(self.corpus, self.split, self.device_batch_seqs, seed).ok()?.into_iter();
        self.pending.next()
    }
}

/// Tokenizer plus corpus for one track.
#[derive(Debug, Clone)]
pub struct TrackData {
    pub tokenizer: Tokenizer,
    pub corpus: Corpus,
}

impl TrackData {
    /// Loads `track.corpus_path` if set, otherwise generates `synthetic_lines`
    /// lines of the track's synthetic text. Char tracks with a known alphabet use
    /// it directly; other char tracks use the text's alphabet; BPE tracks train
    /// to `track.vocab_size`.
    pub fn load(track: &TrackConfig, synthetic_lines: usize, seed: u64) -> Result<Self, DataError> {
        let text = match &track.corpus_path {
            Some(p) => read_corpus(p)?,
            None => generate_synthetic_corpus(track.name, synthetic_lines, seed)?,
        };
        Self::from_text(track, &text, seed)
    }

    pub fn from_text(track: &TrackConfig, text: &str, seed: u64) -> Result<Self, DataError> {
        let tokenizer = match (track.tokenizer, track.name) {
            (TokenizerKind::Char, TrackName::SmilesLike) if track.corpus_path.is_none() => {
                Tokenizer::char_level(SMILES_ALPHABET.chars())
            }
            (TokenizerKind::Char, TrackName::ProteinLike) if track.corpus_path.is_none() => {
                Tokenizer::char_level(PROTEIN_ALPHABET.chars())
            }
            (TokenizerKind::Char, _) => Tokenizer::char_from_text(text),
            (TokenizerKind::Bpe, _) => train_bpe(text.as_bytes(), track.vocab_size.max(257))?,
        };
        let corpus = Corpus::from_text(text, &tokenizer, track.seq_len, track.split_fraction, seed)?;
        Ok(Self { tokenizer, corpus })
    }
}

/// Reads a corpus file, replacing invalid UTF-8 sequences.
pub fn read_corpus(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Tokenizer, String) {
        let text: String = (0..10).map(|i| format!("{}\n", "ab".repeat(i + 1))).collect();
        (Tokenizer::char_from_text(&text), text)
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let (train, val) = split_indices(100, 0.9, 3);
        assert_eq!((train.len(), val.len()), (90, 10));
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.9, 3), (train, val));
        assert_ne!(split_indices(100, 0.9, 4).0, split_indices(100, 0.9, 3).0);
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let (tok, text) = toy();
        let mut corpus = Corpus::from_text(&text, &tok, 8, 0.9, 0).unwrap();
        corpus.train = (0..10).collect();
        let batches = make_batches(&corpus, Split::Train, 4, 1).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.batch_size).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(make_batches(&corpus, Split::Train, 4, 1).unwrap(), batches);
        corpus.val.clear();
        assert!(matches!(make_batches(&corpus, Split::Val, 4, 1), Err(DataError::EmptySplit(_))));
    }

    #[test]
    fn char_bytes_equal_string_length() {
        let (tok, text) = toy();
        let corpus = Corpus::from_text(&text, &tok, 64, 0.5, 0).unwrap();
        let b = corpus.batch_of(&(0..10).collect::<Vec<_>>());
        let lens: usize = b.byte_lengths().iter().sum();
        let chars: usize = text.lines().map(str::len).sum();
        assert_eq!(lens, chars);
    }

    #[test]
    fn stream_crosses_epochs() {
        let (tok, text) = toy();
        let corpus = Corpus::from_text(&text, &tok, 8, 0.8, 0).unwrap();
        let s: Vec<Batch> = BatchStream::new(&corpus, Split::Train, 3, 5).unwrap().take(7).collect();
        assert_eq!(s.len(), 7);
        assert_eq!(s[0..3], make_batches(&corpus, Split::Train, 3, 5).unwrap()[..]);
    }

    #[test]
    fn truncation_shrinks_bytes() {
        let (tok, text) = toy();
        let corpus = Corpus::from_text(&text, &tok, 20, 0.8, 0).unwrap();
        let short = corpus.truncated(5);
        assert!(short.total_bytes(Split::Train) < corpus.total_bytes(Split::Train));
        assert!(short.sequences.iter().all(|s| s.len() <= 5));
        assert_eq!(corpus.truncated(20), corpus);
    }

    #[test]
    fn track_data_vocab_sizes() {
        let smiles = TrackData::load(&TrackConfig::desk(TrackName::SmilesLike), 50, 1).unwrap();
        assert_eq!(smiles.tokenizer.vocab_size(), 37);
        let protein = TrackData::load(&TrackConfig::desk(TrackName::ProteinLike), 50, 1).unwrap();
        assert_eq!(protein.tokenizer.vocab_size(), 24);
        let nlp = TrackData::load(&TrackConfig { vocab_size: 300, ..TrackConfig::desk(TrackName::NlpLike) }, 200, 1).unwrap();
        assert_eq!(nlp.tokenizer.vocab_size(), 300);
    }
}
