//! Binary container shared by checkpoints and measurement files.
//!
//! Layout: 8-byte magic `PHFORGE1`, little-endian `u64` header length, UTF-8
//! JSON header, then the payload as little-endian `f64` values.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PHFORGE1";

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    payload_len: usize,
    #[serde(flatten)]
    meta: H,
}

pub(crate) fn write<H: Serialize>(mut w: impl Write, kind: &str, meta: &H, payload: &[f64]) -> Result<()> {
    let header = serde_json::to_vec(&Envelope {
        kind: kind.to_owned(),
        payload_len: payload.len(),
        meta,
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read<H: DeserializeOwned>(mut r: impl Read, kind: &str) -> Result<(H, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let env: Envelope<H> = serde_json::from_slice(&header)?;
    if env.kind != kind {
        return Err(Error::Format(format!("expected a `{kind}` file, found `{}`", env.kind)));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != env.payload_len * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header promises {} values",
            bytes.len(),
            env.payload_len
        )));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((env.meta, payload))
}
