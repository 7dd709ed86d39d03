use std::fs;
use std::path::Path;

use super::{CtcLattice, FeatIoError, FeatureMatrix, Result, Vocabulary};
use crate::binio::{put_f32, put_u32, ByteCursor, Truncated};

pub(super) const SFM_MAGIC: &[u8; 4] = b"SFM1";
pub(super) const CLG_MAGIC: &[u8; 4] = b"CLG1";
pub(super) const SFM_HEADER_LEN: usize = 16;
const NO_INDEX: u32 = u32::MAX;

impl From<Truncated> for FeatIoError {
    fn from(t: Truncated) -> Self {
        FeatIoError::TruncatedFile {
            offset: t.offset,
            wanted: t.wanted,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatIoError + '_ {
    move |source| FeatIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_magic(cur: &mut ByteCursor<'_>, magic: &'static [u8; 4]) -> Result<()> {
    let found = cur.take(4)?;
    if found != magic {
        return Err(FeatIoError::BadMagic {
            offset: 0,
            expected: std::str::from_utf8(magic).unwrap(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

fn finish(cur: &ByteCursor<'_>) -> Result<()> {
    if cur.remaining() != 0 {
        return Err(FeatIoError::TrailingBytes {
            offset: cur.offset(),
            extra: cur.remaining(),
        });
    }
    Ok(())
}

pub fn encode_feature_matrix(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(SFM_HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(SFM_MAGIC);
    put_u32(&mut out, m.rows() as u32);
    put_u32(&mut out, m.dim() as u32);
    put_u32(&mut out, m.layer_tag);
    for &v in m.as_slice() {
        if !v.is_finite() {
            return Err(FeatIoError::NonFiniteValue { offset: out.len() });
        }
        put_f32(&mut out, v);
    }
    Ok(out)
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut cur = ByteCursor::new(bytes);
    check_magic(&mut cur, SFM_MAGIC)?;
    let rows = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let layer_tag = cur.u32()?;
    if rows == 0 || dim == 0 {
        return Err(FeatIoError::InvalidShape {
            rows,
            dim,
            reason: "both dimensions must be at least 1",
        });
    }
    let n = rows.checked_mul(dim).ok_or(FeatIoError::InvalidShape {
        rows,
        dim,
        reason: "shape overflows",
    })?;
    if cur.remaining() < n.saturating_mul(4) {
        return Err(FeatIoError::TruncatedFile {
            offset: bytes.len(),
            wanted: n * 4 - cur.remaining(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = cur.offset();
        let v = cur.f32()?;
        if !v.is_finite() {
            return Err(FeatIoError::NonFiniteValue { offset });
        }
        data.push(v);
    }
    finish(&cur)?;
    FeatureMatrix::new(rows, dim, data, layer_tag)
}

pub fn write_feature_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_matrix(m)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_feature_matrix(&bytes)
}

pub fn encode_lattice(lat: &CtcLattice) -> Vec<u8> {
    let vocab = lat.vocab();
    let mut out = Vec::new();
    out.extend_from_slice(CLG_MAGIC);
    put_u32(&mut out, lat.frames() as u32);
    put_u32(&mut out, vocab.len() as u32);
    put_u32(&mut out, vocab.blank().map_or(NO_INDEX, |i| i as u32));
    put_u32(&mut out, vocab.space().map_or(NO_INDEX, |i| i as u32));
    for s in vocab.symbols() {
        put_u32(&mut out, s.len() as u32);
        out.extend_from_slice(s.as_bytes());
    }
    for &v in lat.as_slice() {
        put_f32(&mut out, v);
    }
    out
}

pub fn decode_lattice(bytes: &[u8]) -> Result<CtcLattice> {
    let mut cur = ByteCursor::new(bytes);
    check_magic(&mut cur, CLG_MAGIC)?;
    let frames = cur.u32()? as usize;
    let v = cur.u32()? as usize;
    let opt = |x: u32| (x != NO_INDEX).then_some(x as usize);
    let blank = opt(cur.u32()?);
    let space = opt(cur.u32()?);
    let mut symbols = Vec::with_capacity(v.min(1 << 16));
    for _ in 0..v {
        let len = cur.u32()? as usize;
        let offset = cur.offset();
        let raw = cur.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|_| FeatIoError::BadUtf8 { offset })?;
        symbols.push(s.to_string());
    }
    let vocab = Vocabulary::new(symbols, blank, space)?;
    let n = frames.saturating_mul(v);
    if cur.remaining() < n.saturating_mul(4) {
        return Err(FeatIoError::TruncatedFile {
            offset: bytes.len(),
            wanted: n * 4 - cur.remaining(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = cur.offset();
        let x = cur.f32()?;
        if x.is_nan() || x == f32::INFINITY {
            return Err(FeatIoError::NonFiniteValue { offset });
        }
        data.push(x);
    }
    finish(&cur)?;
    CtcLattice::new(frames, data, vocab)
}

pub fn write_lattice(lat: &CtcLattice, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_lattice(lat)).map_err(io_err(path))
}

pub fn read_lattice(path: impl AsRef<Path>) -> Result<CtcLattice> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_lattice(&bytes)
}
