//! Single-file checkpoints:
//!
//! ```text
//! b"UNTK" | version: u32 LE | metadata length: u64 LE | metadata JSON | f32 LE payload
//! ```
//!
//! The payload holds every parameter tensor in store order, followed by the
//! first and then the second Adam moments in the same order.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{AdamW, AdamWConfig};
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 4] = b"UNTK";
pub const FORMAT_VERSION: u32 = 1;
const SECTIONS: [&str; 3] = ["param", "adam_m", "adam_v"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::CorruptCheckpoint("invalid rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    adam_t: u64,
    rng: RngState,
    sections: Vec<String>,
    /// Floats per section.
    section_len: usize,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub store: ParameterStore<f32>,
    pub optimizer: AdamW<f32>,
    pub train: TrainConfig,
    pub step: u64,
    pub rng: RngState,
}

pub fn adamw_config(train: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        learning_rate: train.learning_rate,
        beta1: train.adam_beta1,
        beta2: train.adam_beta2,
        eps: train.adam_eps,
        weight_decay: train.weight_decay,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for id in self.store.ids() {
            let v = self.store.value(id);
            tensors.push(TensorEntry { name: self.store.name(id).to_string(), shape: v.shape().to_vec(), offset });
            offset += v.len();
        }
        let meta = Metadata {
            model: self.model.config.clone(),
            train: self.train.clone(),
            step: self.step,
            adam_t: self.optimizer.t,
            rng: self.rng.clone(),
            sections: SECTIONS.iter().map(|s| s.to_string()).collect(),
            section_len: offset,
            tensors,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 12 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let params = self.store.ids().map(|id| self.store.value(id));
        for t in params.chain(&self.optimizer.m).chain(&self.optimizer.v) {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let json_end = usize::try_from(json_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("metadata length exceeds file"))?;
        let meta: Metadata = serde_json::from_slice(&bytes[16..json_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
        if meta.sections != SECTIONS {
            return Err(corrupt("unexpected payload sections"));
        }
        let (model, mut store) = Model::new::<f32>(meta.model.clone(), 0)
            .map_err(|e| Error::CorruptCheckpoint(format!("model config: {e}")))?;
        let payload = &bytes[json_end..];
        let expected = store.num_scalars();
        if meta.section_len != expected || payload.len() != 4 * 3 * expected {
            return Err(Error::CorruptCheckpoint(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                4 * 3 * expected
            )));
        }
        if meta.tensors.len() != store.len() {
            return Err(corrupt("tensor manifest does not match the model"));
        }
        let floats: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let ids: Vec<_> = store.ids().collect();
        let mut m = Vec::with_capacity(ids.len());
        let mut v = Vec::with_capacity(ids.len());
        for (entry, &id) in meta.tensors.iter().zip(&ids) {
            let shape = store.value(id).shape().to_vec();
            if entry.name != store.name(id) || entry.shape != shape || entry.offset + shape.iter().product::<usize>() > expected {
                return Err(Error::CorruptCheckpoint(format!("tensor `{}` does not match the model", entry.name)));
            }
            let n: usize = shape.iter().product();
            let slice = |section: usize| {
                let start = section * expected + entry.offset;
                Tensor::new(shape.clone(), floats[start..start + n].to_vec())
            };
            *store.value_mut(id) = slice(0)?;
            m.push(slice(1)?);
            v.push(slice(2)?);
        }
        meta.rng.restore()?;
        let optimizer = AdamW { config: adamw_config(&meta.train), t: meta.adam_t, m, v };
        Ok(Self { model, store, optimizer, train: meta.train, step: meta.step, rng: meta.rng })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let config = ModelConfig { hidden: 8, heads: 2, ffn_dim: 8, vocab_size: 10, ..ModelConfig::default() };
        let (model, mut store) = Model::new::<f32>(config, 3).unwrap();
        let mut optimizer = AdamW::new(AdamWConfig::default(), &store);
        for id in store.ids().collect::<Vec<_>>() {
            store.grad_mut(id).data_mut().iter_mut().enumerate().for_each(|(i, g)| *g = (i as f32).sin());
        }
        optimizer.step(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u64();
        Checkpoint { model, store, optimizer, train: TrainConfig::default(), step: 1, rng: RngState::capture(&rng) }
    }

    #[test]
    fn byte_exact_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(loaded.optimizer, ck.optimizer);
        for id in ck.store.ids() {
            assert_eq!(loaded.store.value(id), ck.store.value(id));
        }
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.next_u32();
        let state = RngState::capture(&rng);
        let mut restored = state.restore().unwrap();
        assert_eq!(rng.next_u64(), restored.next_u64());
    }

    #[test]
    fn truncated_or_damaged_files_are_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 15, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "{cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::CorruptCheckpoint(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::CorruptCheckpoint(_))));
    }
}
