//! Checkpoint files: magic "SG2M", version, JSON header (config plus
//! tensor manifest), little-endian f32 payload, trailing CRC32.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::csvio::write_atomic;
use crate::networks::{Discriminator, Generator};
use crate::rng::Rng;
use crate::training::Trainer;

pub const MAGIC: &[u8; 4] = b"SG2M";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("header json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint/config mismatch: {0}")]
    Incompatible(String),
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, t) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *t = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    step: u64,
    images_seen: u64,
    pl_ema: f32,
    manifest: Vec<ManifestEntry>,
}

/// In-memory checkpoint contents.
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub images_seen: u64,
    pub pl_ema: f32,
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

/// Which weight set to instantiate from a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSet {
    Raw,
    Ema,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Checkpoint {
        let mut tensors = Vec::new();
        for (_, name, tensor) in t.generator.store.iter() {
            tensors.push((name.to_string(), tensor.shape().to_vec(), tensor.to_vec()));
        }
        for (_, name, tensor) in t.discriminator.store.iter() {
            tensors.push((name.to_string(), tensor.shape().to_vec(), tensor.to_vec()));
        }
        for ((_, name, tensor), ema) in t.generator.store.iter().zip(t.ema_weights()) {
            tensors.push((format!("ema.{name}"), tensor.shape().to_vec(), ema.clone()));
        }
        Checkpoint {
            config: t.cfg.clone(),
            step: t.step,
            images_seen: t.images_seen(),
            pl_ema: t.pl_state.ema,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut payload: Vec<u8> = Vec::new();
        let mut manifest = Vec::with_capacity(self.tensors.len());
        for (name, shape, data) in &self.tensors {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: payload.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            images_seen: self.images_seen,
            pl_ema: self.pl_ema,
            manifest,
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len() + 4);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        bytes.extend_from_slice(&payload);
        let crc = crc32(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        write_atomic(path, &bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 20 {
            return Err(CheckpointError::Corrupt("file too short".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let computed = crc32(body);
        if stored != computed {
            return Err(CheckpointError::CrcMismatch { stored, computed });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        if header_end > body.len() {
            return Err(CheckpointError::Corrupt("header length out of range".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let payload = &body[header_end..];

        let mut tensors = Vec::with_capacity(header.manifest.len());
        for entry in &header.manifest {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 4;
            if end > payload.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor '{}' extends past the payload",
                    entry.name
                )));
            }
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((entry.name.clone(), entry.shape.clone(), data));
        }
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            images_seen: header.images_seen,
            pl_ema: header.pl_ema,
            tensors,
        })
    }

    /// Instantiates a generator from the stored weights. Every parameter
    /// shape is checked against the manifest before anything is applied.
    pub fn build_generator(&self, which: WeightSet) -> Result<Generator, CheckpointError> {
        let mut rng = Rng::new(0);
        let mut g = Generator::new(&self.config.network, &mut rng);
        let prefix = match which {
            WeightSet::Raw => "",
            WeightSet::Ema => "ema.",
        };
        let mut updates = Vec::new();
        for (id, name, tensor) in g.store.iter() {
            let key = format!("{prefix}{name}");
            let (shape, data) = self
                .tensor(&key)
                .ok_or_else(|| CheckpointError::Incompatible(format!("missing tensor '{key}'")))?;
            if shape != tensor.shape() {
                return Err(CheckpointError::Incompatible(format!(
                    "tensor '{key}' has shape {shape:?}, config expects {:?}",
                    tensor.shape()
                )));
            }
            updates.push((id, data.to_vec()));
        }
        for (id, data) in updates {
            g.store.set_data(id, data);
        }
        Ok(g)
    }

    pub fn build_discriminator(&self) -> Result<Discriminator, CheckpointError> {
        let mut rng = Rng::new(0);
        let mut d = Discriminator::new(&self.config.network, &mut rng);
        let mut updates = Vec::new();
        for (id, name, tensor) in d.store.iter() {
            let (shape, data) = self
                .tensor(name)
                .ok_or_else(|| CheckpointError::Incompatible(format!("missing tensor '{name}'")))?;
            if shape != tensor.shape() {
                return Err(CheckpointError::Incompatible(format!(
                    "tensor '{name}' has shape {shape:?}, config expects {:?}",
                    tensor.shape()
                )));
            }
            updates.push((id, data.to_vec()));
        }
        for (id, data) in updates {
            d.store.set_data(id, data);
        }
        Ok(d)
    }
}
