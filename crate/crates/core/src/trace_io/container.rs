//! Versioned binary trace container.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "A2TR"                     4 bytes magic
//! format_version             u32 (currently 1)
//! n_layers, n_heads, seq_len u32 each
//! provenance_len             u32, followed by that many UTF-8 bytes
//! payload                    for q in 0..seq_len, for unit in 0..n_layers*n_heads:
//!                              q + 1 f64 values (row q of that head)
//! checksum                   u64, FNV-1a 64 over the payload bytes
//! ```

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::attn_model::trace::{tri_len, AttentionTrace, HeadGrid, TriRows};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"A2TR";
pub const FORMAT_VERSION: u32 = 1;

/// FNV-1a 64 of a byte slice.
pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn payload_bytes(trace: &AttentionTrace) -> Vec<u8> {
    let grid = trace.grid();
    let mut out = Vec::with_capacity(grid.units() * tri_len(trace.seq_len()) * 8);
    for q in 0..trace.seq_len() {
        for unit in 0..grid.units() {
            for v in trace.rows().unit_row(unit, q) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Serializes a trace; also returns the payload checksum.
pub fn encode_trace(trace: &AttentionTrace) -> Result<(Vec<u8>, u64)> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Malformed(format!("{what} {v} exceeds u32")))
    };
    let prov = trace.provenance.as_bytes();
    let payload = payload_bytes(trace);
    let sum = checksum(&payload);
    let mut out = Vec::with_capacity(4 + 4 * 5 + prov.len() + payload.len() + 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(trace.n_layers(), "n_layers")?.to_le_bytes());
    out.extend_from_slice(&dim(trace.n_heads(), "n_heads")?.to_le_bytes());
    out.extend_from_slice(&dim(trace.seq_len(), "seq_len")?.to_le_bytes());
    out.extend_from_slice(&dim(prov.len(), "provenance length")?.to_le_bytes());
    out.extend_from_slice(prov);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok((out, sum))
}

/// Writes a trace file and returns its payload checksum.
pub fn write_trace(trace: &AttentionTrace, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let (bytes, sum) = encode_trace(trace)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sum)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<AttentionTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trace(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Malformed(format!(
                    "truncated file: need {n} bytes for {what} at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses and fully validates a trace; nothing is returned on any error.
pub fn decode_trace(bytes: &[u8]) -> Result<AttentionTrace> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u32("format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_layers = cur.u32("n_layers")? as usize;
    let n_heads = cur.u32("n_heads")? as usize;
    let seq_len = cur.u32("seq_len")? as usize;
    let prov_len = cur.u32("provenance length")? as usize;
    let provenance = std::str::from_utf8(cur.take(prov_len, "provenance")?)
        .map_err(|e| Error::Malformed(format!("provenance is not UTF-8: {e}")))?
        .to_string();

    let grid = HeadGrid::new(n_layers, n_heads);
    let n_reals = grid
        .units()
        .checked_mul(tri_len(seq_len))
        .filter(|_| seq_len < u32::MAX as usize)
        .ok_or_else(|| Error::Malformed("dimensions overflow".into()))?;
    let payload = cur.take(
        n_reals
            .checked_mul(8)
            .ok_or_else(|| Error::Malformed("dimensions overflow".into()))?,
        "payload",
    )?;
    let stored = u64::from_le_bytes(cur.take(8, "checksum")?.try_into().unwrap());
    if cur.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} unexpected trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let computed = checksum(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut rows = TriRows::zeros(grid, seq_len);
    let mut reals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for q in 0..seq_len {
        for unit in 0..grid.units() {
            for v in rows.unit_row_mut(unit, q) {
                *v = reals.next().expect("payload length checked");
            }
        }
    }
    AttentionTrace::new(rows, provenance)
}
