//! Versioned JSON checkpoint container with named parameter banks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::nn::{Mat, Module};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Tie,
    Tsg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bank {
    pub frozen: bool,
    pub params: BTreeMap<String, StoredParam>,
}

impl Bank {
    pub fn capture(module: &dyn Module, frozen: bool) -> Self {
        let mut params = BTreeMap::new();
        module.visit(&mut |name, p| {
            params.insert(
                name.to_string(),
                StoredParam {
                    shape: [p.value.nrows(), p.value.ncols()],
                    data: p.value.iter().copied().collect(),
                },
            );
        });
        Self { frozen, params }
    }

    /// Copy stored values into `module`; every module parameter must be present with its shape.
    pub fn restore(&self, module: &mut dyn Module) -> Result<()> {
        let mut err = None;
        let frozen = self.frozen;
        module.visit_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.params.get(name) {
                Some(s) if s.shape == [p.value.nrows(), p.value.ncols()] && s.data.len() == p.value.len() => {
                    p.value = Mat::from_shape_vec((s.shape[0], s.shape[1]), s.data.clone()).expect("shape checked");
                    p.zero_grad();
                    p.frozen = frozen;
                }
                Some(s) => {
                    err = Some(Error::Checkpoint(format!(
                        "parameter {name}: stored shape {:?}, model expects {:?}",
                        s.shape,
                        p.value.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("parameter {name} missing"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// sha256 over names, shapes and the exact bit patterns of every value.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            h.update([0]);
            for d in p.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &p.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn module_hash(module: &dyn Module) -> String {
    Bank::capture(module, false).hash()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub epoch: usize,
    #[serde(default)]
    pub metric: Option<f64>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: CheckpointKind,
    pub config: serde_json::Value,
    pub vocab: Tokenizer,
    pub vocab_hash: String,
    pub banks: BTreeMap<String, Bank>,
    pub meta: Meta,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: serde_json::Value, vocab: Tokenizer) -> Self {
        let vocab_hash = vocab.hash();
        Self {
            version: VERSION,
            kind,
            config,
            vocab,
            vocab_hash,
            banks: BTreeMap::new(),
            meta: Meta::default(),
        }
    }

    pub fn bank(&self, name: &str) -> Result<&Bank> {
        self.banks
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("bank `{name}` missing")))
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.vocab.hash() != ck.vocab_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so a crash never leaves a truncated checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Rng64};
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng64::seed_from_u64(0);
        let lin = Linear::new(3, 4, &mut rng);
        let tok = Tokenizer::build(["a b c"], 1);
        let mut ck = Checkpoint::new(CheckpointKind::Tie, serde_json::json!({"x": 1}), tok);
        ck.banks.insert("head".into(), Bank::capture(&lin, true));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let mut other = Linear::zeros(3, 4);
        back.bank("head").unwrap().restore(&mut other).unwrap();
        assert_eq!(other.w.value, lin.w.value);
        assert!(other.w.frozen);
        assert_eq!(module_hash(&other), module_hash(&lin));
        let mut wrong = Linear::zeros(4, 4);
        assert!(back.bank("head").unwrap().restore(&mut wrong).is_err());
    }

    #[test]
    fn tampered_vocab_rejected() {
        let tok = Tokenizer::build(["a b c"], 1);
        let ck = Checkpoint::new(CheckpointKind::Tsg, serde_json::Value::Null, tok);
        let text = ck.to_json().unwrap().replace("\"a\"", "\"z\"");
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
