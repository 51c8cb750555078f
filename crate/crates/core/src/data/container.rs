//! Binary container shared by datasets, parameter files and checkpoints:
//! a JSON manifest followed by a flat little-endian f64 payload, sealed by a
//! SHA-256 trailer. See `docs/file-format.md`.

use super::{DataError, Result};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

pub const MAGIC: [u8; 8] = *b"MILDATA\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Encodes `manifest` and `payload` into container bytes.
pub fn encode(manifest: &serde_json::Value, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest)?;
    let json_len = u32::try_from(json.len()).map_err(|_| DataError::Invalid("manifest exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(8 + 4 + 4 + json.len() + 8 + 8 * payload.len() + DIGEST_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Checks the trailer first, so a damaged file never yields partial data.
pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<f64>)> {
    if bytes.len() < MAGIC.len() + 4 + 4 + 8 + DIGEST_LEN {
        return Err(DataError::Checksum);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(DataError::Checksum);
    }
    if body[..8] != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(DataError::Version(version));
    }
    let json_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let rest = &body[16..];
    if rest.len() < json_len + 8 {
        return Err(DataError::Invalid("manifest length exceeds file".into()));
    }
    let manifest = serde_json::from_slice(&rest[..json_len])?;
    let rest = &rest[json_len..];
    let count = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() != count.checked_mul(8).ok_or(DataError::Checksum)? {
        return Err(DataError::Invalid(format!("payload holds {} bytes, header says {count} values", rest.len())));
    }
    let payload = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((manifest, payload))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_file(path: &Path, manifest: &serde_json::Value, payload: &[f64]) -> Result<()> {
    let bytes = encode(manifest, payload)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
    decode(&std::fs::read(path)?)
}

/// Sequential reader over a payload.
pub struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        Cursor { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let end = self.pos + n;
        if end > self.data.len() {
            return Err(DataError::Invalid(format!("payload too short: need {end} values, have {}", self.data.len())));
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(DataError::Invalid(format!("{} unread payload values", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip() {
        let m = json!({"kind": "x", "n": [1, 2]});
        let p = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300];
        let (m2, p2) = decode(&encode(&m, &p).unwrap()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncation_and_corruption_fail_checksum() {
        let bytes = encode(&json!({}), &[1.0, 2.0, 3.0]).unwrap();
        for cut in [1, 8, 20, bytes.len() - 1] {
            assert_eq!(decode(&bytes[..bytes.len() - cut]).unwrap_err(), DataError::Checksum);
        }
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert_eq!(decode(&bad).unwrap_err(), DataError::Checksum);
    }

    #[test]
    fn unknown_version_is_reported() {
        let mut bytes = encode(&json!({}), &[]).unwrap();
        bytes[8] = 9;
        let n = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert_eq!(decode(&bytes).unwrap_err(), DataError::Version(9));
    }
}
