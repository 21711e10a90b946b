//! Binary container used for persisted arrays: an 8-byte magic, a little-endian
//! u32 header length, a JSON header and a little-endian f32 payload. The header
//! records the payload's SHA-256 so corrupted files are rejected on load.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CIRCAMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model container (bad magic)")]
    BadMagic,
    #[error("container truncated")]
    Truncated,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("expected a {expected} container, found {found}")]
    Kind { expected: String, found: String },
    #[error("payload checksum mismatch")]
    Checksum,
    #[error("payload holds {got} values, header declares {expected}")]
    Length { expected: usize, got: usize },
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope<M> {
    version: u32,
    kind: String,
    values: usize,
    sha256: String,
    meta: M,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn payload_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serializes `meta` and `values` under the given kind tag.
pub fn encode<M: Serialize>(kind: &str, meta: &M, values: &[f32]) -> Vec<u8> {
    let payload = payload_bytes(values);
    let env = Envelope {
        version: FORMAT_VERSION,
        kind: kind.to_string(),
        values: values.len(),
        sha256: sha256_hex(&payload),
        meta,
    };
    let header = serde_json::to_vec(&env).expect("header serialization");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Checksum of the payload section of an encoded container.
pub fn payload_checksum(values: &[f32]) -> String {
    sha256_hex(&payload_bytes(values))
}

pub fn decode<M: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<(M, Vec<f32>), ContainerError> {
    if bytes.len() < 12 {
        return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(8)]) {
            ContainerError::Truncated
        } else {
            ContainerError::BadMagic
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = bytes.get(12..12 + hlen).ok_or(ContainerError::Truncated)?;
    let env: Envelope<M> = serde_json::from_slice(header)?;
    if env.version != FORMAT_VERSION {
        return Err(ContainerError::Version(env.version));
    }
    if env.kind != kind {
        return Err(ContainerError::Kind {
            expected: kind.to_string(),
            found: env.kind,
        });
    }
    let payload = &bytes[12 + hlen..];
    if payload.len() != env.values * 4 {
        return Err(if payload.len() < env.values * 4 {
            ContainerError::Truncated
        } else {
            ContainerError::Length {
                expected: env.values,
                got: payload.len() / 4,
            }
        });
    }
    if sha256_hex(payload) != env.sha256 {
        return Err(ContainerError::Checksum);
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((env.meta, values))
}
