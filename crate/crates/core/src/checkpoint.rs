//! Flat parameter checkpoints: a text header (tensor name, shape, offset) followed
//! by little-endian `f64` data.
//!
//! ```text
//! searchlab-checkpoint 1
//! meta <key> <value>
//! tensor <name> <rows> <cols> <offset>
//! end
//! <raw bytes>
//! ```
//! Offsets count `f64` elements from the start of the data section.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::config::ArchConfig;
use crate::model::{ModelError, ModelParams};
use crate::optim::{AdamState, OptimState, SlotState};
use crate::tensor::Tensor;

const MAGIC: &str = "searchlab-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("checkpoint header line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("tensor `{0}` missing from checkpoint")]
    Missing(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(params: &ModelParams, optim: Option<&OptimState>) -> Self {
        let mut ck = Self::default();
        for (name, t) in params.named() {
            ck.tensors.push((name, t.clone()));
        }
        if let Some(st) = optim {
            for slot in &st.slots {
                match &slot.state {
                    SlotState::Muon { momentum } => {
                        ck.tensors.push((format!("optim.{}.momentum", slot.name), momentum.clone()));
                    }
                    SlotState::AdamW(a) => {
                        ck.tensors.push((format!("optim.{}.exp_avg", slot.name), a.exp_avg.clone()));
                        ck.tensors.push((format!("optim.{}.exp_avg_sq", slot.name), a.exp_avg_sq.clone()));
                        ck.meta.insert(format!("optim.{}.step", slot.name), a.step.to_string());
                    }
                }
            }
        }
        ck
    }

    fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds parameters for `arch` (and optimizer buffers when present).
    pub fn into_model(&self, arch: &ArchConfig) -> Result<(ModelParams, Option<OptimState>), CheckpointError> {
        let vocab = self.get("token_embedding").ok_or_else(|| CheckpointError::Missing("token_embedding".into()))?.rows;
        let mut params = ModelParams::init(arch, vocab, 0);
        for (name, t) in params.named_mut() {
            let src = self.get(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(ModelError::ShapeMismatch { name, expected: t.shape(), found: src.shape() }.into());
            }
            t.data.copy_from_slice(&src.data);
        }
        if !self.tensors.iter().any(|(n, _)| n.starts_with("optim.")) {
            return Ok((params, None));
        }
        let mut st = OptimState::new(&params);
        for slot in &mut st.slots {
            match &mut slot.state {
                SlotState::Muon { momentum } => {
                    let key = format!("optim.{}.momentum", slot.name);
                    *momentum = self.get(&key).cloned().ok_or(CheckpointError::Missing(key))?;
                }
                SlotState::AdamW(a) => {
                    let k1 = format!("optim.{}.exp_avg", slot.name);
                    let k2 = format!("optim.{}.exp_avg_sq", slot.name);
                    let step = self.meta.get(&format!("optim.{}.step", slot.name)).and_then(|s| s.parse().ok()).unwrap_or(0);
                    *a = AdamState {
                        exp_avg: self.get(&k1).cloned().ok_or(CheckpointError::Missing(k1))?,
                        exp_avg_sq: self.get(&k2).cloned().ok_or(CheckpointError::Missing(k2))?,
                        step,
                    };
                }
            }
        }
        Ok((params, Some(st)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            writeln!(w, "tensor {name} {} {} {offset}", t.rows, t.cols)?;
            offset += t.len();
        }
        writeln!(w, "end")?;
        for (_, t) in &self.tensors {
            for x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(r);
        let mut ck = Self::default();
        let mut headers = Vec::new();
        let mut line = String::new();
        let mut n = 0;
        loop {
            line.clear();
            n += 1;
            if r.read_line(&mut line)? == 0 {
                return Err(CheckpointError::Header { line: n, message: "missing `end`".into() });
            }
            let text = line.trim_end();
            let bad = |message: &str| CheckpointError::Header { line: n, message: message.into() };
            if n == 1 {
                if text != MAGIC {
                    return Err(bad("not a searchlab checkpoint"));
                }
                continue;
            }
            if text == "end" {
                break;
            }
            let parts: Vec<&str> = text.split(' ').collect();
            match parts.as_slice() {
                ["meta", k, v @ ..] => {
                    ck.meta.insert(k.to_string(), v.join(" "));
                }
                ["tensor", name, rows, cols, offset] => {
                    let p = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
                    headers.push((name.to_string(), p(rows)?, p(cols)?, p(offset)?));
                }
                _ => return Err(bad("unrecognised line")),
            }
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() % 8 != 0 {
            return Err(CheckpointError::Header { line: n, message: "data section is not a whole number of f64".into() });
        }
        let floats: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        for (name, rows, cols, offset) in headers {
            let end = offset + rows * cols;
            if end > floats.len() {
                return Err(CheckpointError::Header { line: n, message: format!("`{name}` runs past end of data") });
            }
            ck.tensors.push((name, Tensor::from_vec(rows, cols, floats[offset..end].to_vec())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let f = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HpConfig;
    use crate::model::compute_grads;
    use crate::model::Batch;

    #[test]
    fn roundtrip_params_and_optimizer() {
        let arch = ArchConfig::desk(8);
        let mut params = ModelParams::init(&arch, 11, 4);
        let mut st = OptimState::new(&params);
        let b = Batch::from_sequences(&[&[1, 2, 3, 4, 5]], 8, 10, |_| 1);
        let (g, _) = compute_grads(&params, &arch, &b).unwrap();
        st.step(&mut params, &g, &HpConfig::desk(8), 0, 10, None);

        let ck = Checkpoint::from_model(&params, Some(&st));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let (p2, s2) = back.into_model(&arch).unwrap();
        assert_eq!(p2.checksum(), params.checksum());
        assert_eq!(s2.unwrap(), st);
    }

    #[test]
    fn header_is_readable_text() {
        let arch = ArchConfig { depth: 1, ..ArchConfig::desk(8) };
        let ck = Checkpoint::from_model(&ModelParams::init(&arch, 5, 0), None);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf);
        assert!(text.starts_with("searchlab-checkpoint 1\ntensor token_embedding 5 64 0\n"));
        assert!(Checkpoint::read_from(&b"garbage\n"[..]).is_err());
    }

    #[test]
    fn wrong_arch_is_rejected() {
        let arch = ArchConfig::desk(8);
        let ck = Checkpoint::from_model(&ModelParams::init(&arch, 5, 0), None);
        let wider = ArchConfig { width: 32, heads: 1, kv_heads: 1, ..arch };
        assert!(ck.into_model(&wider).is_err());
    }
}
