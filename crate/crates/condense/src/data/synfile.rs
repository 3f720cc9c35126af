//! Binary container for synthetic sets.
//!
//! Layout (all multi-byte integers little-endian):
//!
//! ```text
//! magic   b"DSA1"
//! u32     format version (currently 1)
//! u8      dtype tag (0 = f32)
//! u32 x4  n, channels, height, width
//! u32 x2  classes, images per class
//! string  dataset name (u32 length + UTF-8 bytes)
//! u32     normalization channel count, then f32 means, then f32 stds
//! u32     label count, then u32 labels
//! f32...  pixel data, n * channels * height * width values
//! string  resolved configuration snapshot
//! u32     loss-trace length, then f32 values
//! u32     CRC32 of every preceding byte
//! ```
//!
//! The checksum is verified before the body is parsed, so any corrupted
//! byte after the version field surfaces as a checksum error rather than a
//! misparse.

use super::{io_err, DataError, Normalization};
use crate::synthetic::{LossTrace, SyntheticSet};
use autodiff::{Shape, Tensor};
use std::path::Path;

const MAGIC: [u8; 4] = *b"DSA1";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

struct Reader<'a> {
    file: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.bytes.len() - self.pos < n {
            return Err(DataError::Truncated {
                file: self.file.to_path_buf(),
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, DataError> {
        let b = self.take(count * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn string(&mut self) -> Result<String, DataError> {
        let len = self.u32()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec()).map_err(|_| DataError::Malformed {
            file: self.file.to_path_buf(),
            detail: format!("invalid UTF-8 string at offset {}", self.pos - len),
        })
    }
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

/// Serializes a synthetic set to `file`. Reading the file back yields a
/// bit-identical set.
pub fn write_synthetic_set(file: &Path, set: &SyntheticSet) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    for d in [set.n(), set.channels(), set.height(), set.width()] {
        out.extend((d as u32).to_le_bytes());
    }
    out.extend((set.classes as u32).to_le_bytes());
    out.extend((set.ipc as u32).to_le_bytes());
    push_string(&mut out, &set.dataset);
    out.extend((set.norm.mean.len() as u32).to_le_bytes());
    for &m in &set.norm.mean {
        out.extend(m.to_le_bytes());
    }
    for &s in &set.norm.std {
        out.extend(s.to_le_bytes());
    }
    out.extend((set.labels.len() as u32).to_le_bytes());
    for &l in &set.labels {
        out.extend((l as u32).to_le_bytes());
    }
    for &v in set.images.data() {
        out.extend(v.to_le_bytes());
    }
    push_string(&mut out, &set.config_text);
    out.extend((set.trace.per_iter.len() as u32).to_le_bytes());
    for &v in &set.trace.per_iter {
        out.extend(v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    std::fs::write(file, out).map_err(|e| io_err(file, e))
}

/// Reads a synthetic set written by [`write_synthetic_set`].
pub fn read_synthetic_set(file: &Path) -> Result<SyntheticSet, DataError> {
    let bytes = std::fs::read(file).map_err(|e| io_err(file, e))?;
    let mut r = Reader { file, bytes: &bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        let found = u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]);
        return Err(DataError::BadMagic {
            file: file.to_path_buf(),
            offset: 0,
            found,
            expected: u32::from_be_bytes(MAGIC),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DataError::Version {
            file: file.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < r.pos + 4 {
        return Err(DataError::Truncated {
            file: file.to_path_buf(),
            offset: bytes.len(),
            needed: r.pos + 4 - bytes.len(),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let tail = &bytes[bytes.len() - 4..];
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DataError::Checksum {
            file: file.to_path_buf(),
            stored,
            computed,
        });
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("unsupported dtype tag {dtype}"),
        });
    }
    let n = r.u32()? as usize;
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let ipc = r.u32()? as usize;
    if classes * ipc != n {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("{classes} classes x {ipc} per class does not equal {n} images"),
        });
    }
    let dataset = r.string()?;
    let norm_c = r.u32()? as usize;
    if norm_c != c {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("normalization has {norm_c} channels, images have {c}"),
        });
    }
    let mean = r.f32s(norm_c)?;
    let std = r.f32s(norm_c)?;
    let label_count = r.u32()? as usize;
    if label_count != n {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("{label_count} labels for {n} images"),
        });
    }
    let mut labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        labels.push(r.u32()? as usize);
    }
    let pixels = r.f32s(n * c * h * w)?;
    let config_text = r.string()?;
    let trace_len = r.u32()? as usize;
    let trace = r.f32s(trace_len)?;
    if r.pos != body.len() {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("{} unread bytes before checksum", body.len() - r.pos),
        });
    }
    Ok(SyntheticSet {
        images: Tensor::from_vec(Shape::d4(n, c, h, w), pixels),
        labels,
        classes,
        ipc,
        dataset,
        norm: Normalization { mean, std },
        config_text,
        trace: LossTrace { per_iter: trace },
    })
}
