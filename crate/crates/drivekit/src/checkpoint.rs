//! Checkpoints: magic "DKPT1", a length-prefixed JSON header naming every
//! parameter and its shape plus the schedule state and encoder config,
//! followed by raw little-endian f32 payloads in header order. Round-trips
//! bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamStore;
use crate::perception::EncoderConfig;
use crate::tensor::ParamValue;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"DKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic (not a DKPT1 checkpoint)")]
    BadMagic,
    #[error("truncated: need {need} more bytes")]
    Truncated { need: usize },
    #[error("header json: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unsupported dtype {0:?}")]
    Dtype(String),
    #[error("parameter {name}: shape {shape:?} disagrees with payload")]
    ShapeMismatch { name: String, shape: Vec<usize> },
    #[error("header too large ({0} bytes)")]
    HeaderTooLarge(u32),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ScheduleState {
    pub epoch: u32,
    pub global_step: u64,
    pub base_lr: f32,
    pub lr: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema: String,
    dtype: String,
    fingerprint: String,
    schedule: ScheduleState,
    encoder: EncoderConfig,
    params: Vec<ParamEntry>,
}

pub struct Checkpoint {
    pub store: ParamStore,
    pub encoder: EncoderConfig,
    pub schedule: ScheduleState,
    pub fingerprint: String,
}

pub fn encode(
    store: &ParamStore,
    encoder: &EncoderConfig,
    schedule: &ScheduleState,
    fingerprint: &str,
) -> Vec<u8> {
    let params: Vec<ParamEntry> = store
        .iter()
        .map(|(name, value)| ParamEntry {
            name: name.clone(),
            shape: value.shape.clone(),
        })
        .collect();
    let header = Header {
        schema: "DKPT1".into(),
        dtype: "f32".into(),
        fingerprint: fingerprint.to_string(),
        schedule: schedule.clone(),
        encoder: encoder.clone(),
        params,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(5 + 4 + header_json.len() + 4 * store.num_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, value) in store.iter() {
        for &v in &value.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 5 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 9 {
        return Err(CheckpointError::Truncated {
            need: 9 - bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if header_len > 16 * 1024 * 1024 {
        return Err(CheckpointError::HeaderTooLarge(header_len));
    }
    let header_end = 9 + header_len as usize;
    if bytes.len() < header_end {
        return Err(CheckpointError::Truncated {
            need: header_end - bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[9..header_end])?;
    if header.dtype != "f32" {
        return Err(CheckpointError::Dtype(header.dtype));
    }

    let mut store = ParamStore::new();
    let mut offset = header_end;
    for entry in &header.params {
        let count: usize = entry.shape.iter().product();
        let byte_len = count.checked_mul(4).ok_or(CheckpointError::ShapeMismatch {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
        })?;
        if bytes.len() < offset + byte_len {
            return Err(CheckpointError::Truncated {
                need: offset + byte_len - bytes.len(),
            });
        }
        let mut data = Vec::with_capacity(count);
        for chunk in bytes[offset..offset + byte_len].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        store.insert(
            entry.name.clone(),
            ParamValue {
                shape: entry.shape.clone(),
                data,
            },
        );
        offset += byte_len;
    }
    Ok(Checkpoint {
        store,
        encoder: header.encoder,
        schedule: header.schedule,
        fingerprint: header.fingerprint,
    })
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    encoder: &EncoderConfig,
    schedule: &ScheduleState,
    fingerprint: &str,
) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(store, encoder, schedule, fingerprint))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn sample_store() -> ParamStore {
        let mut store = ParamStore::new();
        store.register("w.a", vec![2, 3], Init::HeUniform { fan_in: 2 }, 5);
        store.register("w.b", vec![4], Init::Uniform { limit: 0.7 }, 5);
        store.register("bn.running_var", vec![2], Init::Ones, 5);
        store
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let store = sample_store();
        let encoder = EncoderConfig::default();
        let sched = ScheduleState {
            epoch: 7,
            global_step: 123,
            base_lr: 1e-4,
            lr: 1e-5,
        };
        let bytes = encode(&store, &encoder, &sched, "fp123");
        let ckpt = decode(&bytes).unwrap();
        assert_eq!(ckpt.fingerprint, "fp123");
        assert_eq!(ckpt.schedule, sched);
        assert_eq!(ckpt.encoder, encoder);
        for (name, value) in store.iter() {
            let back = ckpt.store.get(name);
            assert_eq!(&back.shape, &value.shape);
            for (a, b) in back.data.iter().zip(value.data.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name} not bit-exact");
            }
        }
        // encode(decode(x)) == x
        let again = encode(&ckpt.store, &ckpt.encoder, &ckpt.schedule, &ckpt.fingerprint);
        assert_eq!(again, bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(decode(b"nope!"), Err(CheckpointError::BadMagic)));
        assert!(matches!(
            decode(b"DKPT1"),
            Err(CheckpointError::Truncated { .. })
        ));
        // header length claims more than available
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        bytes.extend_from_slice(&1000u32.to_le_bytes());
        bytes.extend_from_slice(b"{}");
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let store = sample_store();
        let bytes = encode(
            &store,
            &EncoderConfig::default(),
            &ScheduleState::default(),
            "",
        );
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode(cut),
            Err(CheckpointError::Truncated { .. })
        ));
    }

    #[test]
    fn nan_and_negative_zero_survive() {
        let mut store = ParamStore::new();
        store.insert(
            "x".into(),
            ParamValue {
                shape: vec![3],
                data: vec![f32::NAN, -0.0, 1.5e-42],
            },
        );
        let bytes = encode(
            &store,
            &EncoderConfig::default(),
            &ScheduleState::default(),
            "",
        );
        let back = decode(&bytes).unwrap();
        let d = &back.store.get("x").data;
        assert_eq!(d[0].to_bits(), f32::NAN.to_bits());
        assert_eq!(d[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(d[2].to_bits(), 1.5e-42f32.to_bits());
    }
}
