use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::config::TokenizerKind;

/// Character- or byte-pair tokenizer. The last char id and id 256 for BPE are padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub kind: TokenizerKind,
    /// UTF-8 bytes of each token; the pad token is empty.
    pub vocab: Vec<Vec<u8>>,
    pub merges: Vec<(u32, u32)>,
    pub pad_id: u32,
    /// Set when BPE training ran out of repeated pairs before reaching its target.
    pub corpus_too_small: bool,
    #[serde(skip)]
    char_index: HashMap<char, u32>,
    #[serde(skip)]
    merge_rank: HashMap<(u32, u32), u32>,
}

pub const BPE_PAD: u32 = 256;

impl Tokenizer {
    /// One token per distinct character, ordered by code point, then the pad token.
    pub fn char_level(alphabet: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = alphabet.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let mut vocab: Vec<Vec<u8>> = chars.iter().map(|c| c.to_string().into_bytes()).collect();
        let pad_id = vocab.len() as u32;
        vocab.push(Vec::new());
        let mut tok = Self {
            kind: TokenizerKind::Char,
            vocab,
            merges: Vec::new(),
            pad_id,
            corpus_too_small: false,
            char_index: HashMap::new(),
            merge_rank: HashMap::new(),
        };
        tok.rebuild_index();
        tok
    }

    /// Character alphabet of `text`, newlines excluded.
    pub fn char_from_text(text: &str) -> Self {
        Self::char_level(text.chars().filter(|&c| c != '\n' && c != '\r'))
    }

    fn rebuild_index(&mut self) {
        self.char_index.clear();
        self.merge_rank.clear();
        match self.kind {
            TokenizerKind::Char => {
                for (id, bytes) in self.vocab.iter().enumerate() {
                    if let Ok(s) = std::str::from_utf8(bytes) {
                        if let Some(c) = s.chars().next() {
                            self.char_index.insert(c, id as u32);
                        }
                    }
                }
            }
            TokenizerKind::Bpe => {
                for (rank, &pair) in self.merges.iter().enumerate() {
                    self.merge_rank.insert(pair, rank as u32);
                }
            }
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn byte_len(&self, id: u32) -> u32 {
        self.vocab.get(id as usize).map_or(0, |b| b.len() as u32)
    }

    pub fn byte_len_table(&self) -> Vec<u32> {
        self.vocab.iter().map(|b| b.len() as u32).collect()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, DataError> {
        match self.kind {
            TokenizerKind::Char => text
                .chars()
                .map(|c| self.char_index.get(&c).copied().ok_or(DataError::UnknownSymbol(c)))
                .collect(),
            TokenizerKind::Bpe => Ok(pre_split(text.as_bytes()).flat_map(|chunk| self.encode_chunk(chunk)).collect()),
        }
    }

    fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merge_rank.get(&(w[0], w[1])).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let pair = self.merges[rank as usize];
            let new_id = BPE_PAD + 1 + rank;
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter().flat_map(|&id| self.vocab.get(id as usize).cloned().unwrap_or_default()).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    /// Plain-text form: a header, one hex-encoded vocab entry per line, then merges.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tokenizer {}", self.kind);
        let _ = writeln!(out, "pad {}", self.pad_id);
        let _ = writeln!(out, "corpus_too_small {}", self.corpus_too_small);
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for tok in &self.vocab {
            let hex: String = tok.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(out, "{}", if hex.is_empty() { "-".to_string() } else { hex });
        }
        let _ = writeln!(out, "merges {}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let mut next = |prefix: &str| -> Result<(usize, String), DataError> {
            let (i, line) = lines.next().ok_or(DataError::Format { line: 0, message: "truncated file".into() })?;
            if prefix.is_empty() {
                return Ok((i, line.to_string()));
            }
            line.strip_prefix(prefix)
                .map(|rest| (i, rest.trim().to_string()))
                .ok_or_else(|| DataError::Format { line: i + 1, message: format!("expected `{prefix}`") })
        };
        let bad = |line: usize, message: &str| DataError::Format { line: line + 1, message: message.into() };
        let (i, kind) = next("tokenizer ")?;
        let kind: TokenizerKind = kind.parse().map_err(|_| bad(i, "unknown tokenizer kind"))?;
        let (i, pad) = next("pad ")?;
        let pad_id: u32 = pad.parse().map_err(|_| bad(i, "bad pad id"))?;
        let (i, small) = next("corpus_too_small ")?;
        let corpus_too_small: bool = small.parse().map_err(|_| bad(i, "bad flag"))?;
        let (i, n) = next("vocab ")?;
        let n: usize = n.parse().map_err(|_| bad(i, "bad vocab count"))?;
        let mut vocab = Vec::with_capacity(n);
        for _ in 0..n {
            let (i, line) = next("")?;
            if line == "-" {
                vocab.push(Vec::new());
                continue;
            }
            if line.len() % 2 != 0 {
                return Err(bad(i, "odd hex length"));
            }
            let bytes = (0..line.len())
                .step_by(2)
                .map(|k| u8::from_str_radix(&line[k..k + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|_| bad(i, "bad hex"))?;
            vocab.push(bytes);
        }
        let (i, m) = next("merges ")?;
        let m: usize = m.parse().map_err(|_| bad(i, "bad merge count"))?;
        let mut merges = Vec::with_capacity(m);
        for _ in 0..m {
            let (i, line) = next("")?;
            let (a, b) = line.split_once(' ').ok_or_else(|| bad(i, "expected `a b`"))?;
            merges.push((a.parse().map_err(|_| bad(i, "bad id"))?, b.parse().map_err(|_| bad(i, "bad id"))?));
        }
        let mut tok = Self { kind, vocab, merges, pad_id, corpus_too_small, char_index: HashMap::new(), merge_rank: HashMap::new() };
        tok.rebuild_index();
        Ok(tok)
    }
}

/// Splits bytes so that merges never cross a space or newline boundary: each
/// chunk is a run of non-space bytes, optionally preceded by one space.
fn pre_split(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let mut i = start + 1;
        let boundary = |b: u8| b == b' ' || b == b'\n' || b == b'\r';
        if bytes[start] == b'\n' || bytes[start] == b'\r' {
            let chunk = &bytes[start..i];
            start = i;
            return Some(chunk);
        }
        while i < bytes.len() && !boundary(bytes[i]) {
            i += 1;
        }
        let chunk = &bytes[start..i];
        start = i;
        Some(chunk)
    })
}

/// Byte-level BPE. Ids 0..256 are raw bytes, 256 is padding, merges follow.
/// Each round merges the most frequent adjacent pair; ties go to the pair whose
/// byte strings compare smallest. Stops early (flagging `corpus_too_small`) when
/// no pair occurs at least twice.
pub fn train_bpe(text: &[u8], target_vocab: usize) -> Result<Tokenizer, DataError> {
    if target_vocab < 257 {
        return Err(DataError::VocabTooSmall(target_vocab));
    }
    let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    vocab.push(Vec::new());

    let mut words: BTreeMap<&[u8], usize> = BTreeMap::new();
    for chunk in pre_split(text) {
        *words.entry(chunk).or_insert(0) += 1;
    }
    let mut words: Vec<(Vec<u32>, usize)> =
        words.into_iter().map(|(w, n)| (w.iter().map(|&b| b as u32).collect(), n)).collect();

    let mut merges = Vec::new();
    let mut too_small = false;
    while vocab.len() < target_vocab {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (w, n) in &words {
            for pair in w.windows(2) {
                *counts.entry((pair[0], pair[1])).or_insert(0) += n;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&vocab[pa.0 as usize], &vocab[pa.1 as usize]);
                let kb = (&vocab[pb.0 as usize], &vocab[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((pair, _)) = best.filter(|(_, c)| *c >= 2) else {
            too_small = true;
            break;
        };
        let new_id = vocab.len() as u32;
        let mut merged = vocab[pair.0 as usize].clone();
        merged.extend_from_slice(&vocab[pair.1 as usize]);
        vocab.push(merged);
        merges.push(pair);
        for (w, _) in &mut words {
            if w.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && (w[i], w[i + 1]) == pair {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(w[i]);
                    i += 1;
                }
            }
            *w = out;
        }
    }
    let mut tok = Tokenizer {
        kind: TokenizerKind::Bpe,
        vocab,
        merges,
        pad_id: BPE_PAD,
        corpus_too_small: too_small,
        char_index: HashMap::new(),
        merge_rank: HashMap::new(),
    };
    tok.rebuild_index();
    Ok(tok)
}
