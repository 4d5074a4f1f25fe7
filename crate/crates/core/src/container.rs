//! Byte format for a list of quantized layers.
//!
//! ```text
//! magic      8 bytes  "DNSQUANT"
//! version    u32      1
//! layers     u32
//! length     u64      payload bytes
//! payload    layer records, back to back
//! crc32      u32      IEEE CRC-32 of the payload
//! ```
//!
//! All integers are little-endian. See `docs/FORMAT.md` for the record
//! layout.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dns::{CsrMatrix, HybridSplit};
use crate::nuq::{ClusterMethod, QuantConfig};
use crate::packfmt::{row_bytes, PackedDense, QuantizedLayer};
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"DNSQUANT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Serializes `layers` into a checksummed container.
pub fn encode(layers: &[QuantizedLayer]) -> Vec<u8> {
    let mut payload = Vec::new();
    for layer in layers {
        encode_layer(&mut payload, layer);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

/// Header fields and checksum state, without decoding layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub version: u32,
    pub layer_count: u32,
    pub payload_len: u64,
    pub stored_crc: u32,
    pub computed_crc: u32,
}

impl Envelope {
    pub fn checksum_ok(&self) -> bool {
        self.stored_crc == self.computed_crc
    }
}

/// Reads the header and both checksums. Fails on structural problems but
/// not on a checksum mismatch.
pub fn envelope(bytes: &[u8]) -> Result<(Envelope, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader::new(&bytes[8..HEADER_LEN]);
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let layer_count = r.u32()?;
    let payload_len = r.u64()?;
    let body = usize::try_from(payload_len).map_err(|_| Error::DimensionOverflow)?;
    let expected = HEADER_LEN
        .checked_add(body)
        .and_then(|n| n.checked_add(4))
        .ok_or(Error::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + body];
    let stored_crc = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    Ok((
        Envelope {
            version,
            layer_count,
            payload_len,
            stored_crc,
            computed_crc: crc32fast::hash(payload),
        },
        payload,
    ))
}

/// Parses and validates a container.
pub fn decode(bytes: &[u8]) -> Result<Vec<QuantizedLayer>> {
    let (env, payload) = envelope(bytes)?;
    if !env.checksum_ok() {
        return Err(Error::ChecksumMismatch {
            stored: env.stored_crc,
            computed: env.computed_crc,
        });
    }
    let mut r = Reader::new(payload);
    let mut layers = Vec::new();
    for _ in 0..env.layer_count {
        layers.push(decode_layer(&mut r)?);
    }
    if r.remaining() != 0 {
        return Err(Error::TrailingBytes(r.remaining()));
    }
    Ok(layers)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_layer(out: &mut Vec<u8>, layer: &QuantizedLayer) {
    put_u32(out, layer.name.len());
    out.extend_from_slice(layer.name.as_bytes());

    let cfg = &layer.config;
    out.push(cfg.bits);
    out.push(cfg.method.code());
    out.extend_from_slice(&cfg.sensitive_fraction.to_le_bytes());
    out.extend_from_slice(&cfg.outlier_fraction.to_le_bytes());
    put_u64(out, cfg.group_size as u64);
    put_u64(out, cfg.kmeans_max_iters as u64);
    out.extend_from_slice(&cfg.kmeans_tol.to_le_bytes());
    put_u64(out, cfg.seed);
    put_u64(out, cfg.hybrid_top_k as u64);

    let p = &layer.packed;
    out.push(p.bits());
    put_u32(out, p.rows());
    put_u32(out, p.cols());
    put_u32(out, p.group_len());
    for v in p.luts() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(p.payload());

    let s = &layer.sparse;
    put_u32(out, s.nnz());
    for &v in s.row_ptr() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &c in s.col_idx() {
        out.extend_from_slice(&(c as u16).to_le_bytes());
    }
    for v in s.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }

    put_u32(out, layer.hybrid.dense_row_ids.len());
    for &r in &layer.hybrid.dense_row_ids {
        put_u32(out, r);
    }
}

fn decode_layer(r: &mut Reader<'_>) -> Result<QuantizedLayer> {
    let name_len = r.u32()? as usize;
    let name =
        String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::MalformedHeader("layer name is not UTF-8"))?;

    let bits = r.u8()?;
    let method = ClusterMethod::from_code(r.u8()?).ok_or(Error::MalformedHeader("unknown cluster method"))?;
    let config = QuantConfig {
        bits,
        method,
        sensitive_fraction: r.f64()?,
        outlier_fraction: r.f64()?,
        group_size: r.usize64()?,
        kmeans_max_iters: r.usize64()?,
        kmeans_tol: r.f64()?,
        seed: r.u64()?,
        hybrid_top_k: r.usize64()?,
    };
    config.validate()?;

    let packed_bits = r.u8()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let group_len = r.u32()? as usize;
    if packed_bits != bits {
        return Err(Error::InvalidLayer("packed width differs from configured width".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyDimension { rows, cols });
    }
    if group_len == 0 || !cols.is_multiple_of(group_len) {
        return Err(Error::GroupSize {
            group_size: group_len,
            cols,
        });
    }
    let lut_len = (rows * (cols / group_len))
        .checked_mul(1usize << packed_bits.min(8))
        .ok_or(Error::DimensionOverflow)?;
    let luts = r.f32s(lut_len)?;
    let payload_len = rows
        .checked_mul(row_bytes(cols, packed_bits))
        .ok_or(Error::DimensionOverflow)?;
    let payload = r.take(payload_len)?.to_vec();
    let packed = PackedDense::new(packed_bits, rows, cols, group_len, luts, payload)?;

    let nnz = r.u32()? as usize;
    let mut row_ptr = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        row_ptr.push(r.u32()?);
    }
    let col_bytes = r.take(nnz.checked_mul(2).ok_or(Error::DimensionOverflow)?)?;
    let col_idx = col_bytes
        .chunks_exact(2)
        .map(|b| u32::from(u16::from_le_bytes([b[0], b[1]])))
        .collect();
    let values = r.f32s(nnz)?;
    let sparse = CsrMatrix::new(rows, cols, row_ptr, col_idx, values)?;

    let promoted = r.u32()? as usize;
    if promoted > rows {
        return Err(Error::InvalidCsr("more promoted rows than matrix rows"));
    }
    let mut ids = Vec::with_capacity(promoted);
    for _ in 0..promoted {
        ids.push(r.u32()? as usize);
    }
    let hybrid = HybridSplit::from_row_ids(&sparse, config.hybrid_top_k, ids)?;
    QuantizedLayer::new(name, config, packed, sparse, hybrid)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn usize64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::DimensionOverflow)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::DimensionOverflow)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}
