//! IDX image and label files (big-endian headers, one byte per element).

use super::{io_err, DataError, RawImages};
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    file: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn open(file: &'a Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(file).map_err(|e| io_err(file, e))?;
        Ok(Self { file, bytes, pos: 0 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
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

    fn u32_be(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads an IDX3 image file into raw single-channel images.
///
/// The header is `0x00000803`, image count, rows, cols, all big-endian,
/// followed by `count * rows * cols` pixel bytes.
pub fn load_idx_images(file: &Path) -> Result<RawImages, DataError> {
    let mut cur = Cursor::open(file)?;
    let magic = cur.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            file: file.to_path_buf(),
            offset: 0,
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n = cur.u32_be()? as usize;
    let h = cur.u32_be()? as usize;
    let w = cur.u32_be()? as usize;
    if h == 0 || w == 0 {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("zero image dimensions {h}x{w}"),
        });
    }
    let data = cur.take(n * h * w)?.to_vec();
    if cur.pos != cur.bytes.len() {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!(
                "{} trailing bytes after {} expected payload bytes",
                cur.bytes.len() - cur.pos,
                n * h * w
            ),
        });
    }
    Ok(RawImages { data, n, c: 1, h, w })
}

/// Reads an IDX1 label file.
///
/// The header is `0x00000801` and a big-endian count, followed by one label
/// byte per item.
pub fn load_idx_labels(file: &Path) -> Result<Vec<usize>, DataError> {
    let mut cur = Cursor::open(file)?;
    let magic = cur.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            file: file.to_path_buf(),
            offset: 0,
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let n = cur.u32_be()? as usize;
    let labels = cur.take(n)?.iter().map(|&b| b as usize).collect();
    if cur.pos != cur.bytes.len() {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!("{} trailing bytes after labels", cur.bytes.len() - cur.pos),
        });
    }
    Ok(labels)
}

/// Writes images back out in IDX3 format (used by fixture tooling and tests).
pub fn write_idx_images(file: &Path, raw: &RawImages) -> Result<(), DataError> {
    assert_eq!(raw.c, 1, "IDX3 stores single-channel images");
    let mut out = Vec::with_capacity(16 + raw.data.len());
    out.extend(IMAGE_MAGIC.to_be_bytes());
    out.extend((raw.n as u32).to_be_bytes());
    out.extend((raw.h as u32).to_be_bytes());
    out.extend((raw.w as u32).to_be_bytes());
    out.extend(&raw.data);
    std::fs::write(file, out).map_err(|e| io_err(file, e))
}

/// Writes labels in IDX1 format.
pub fn write_idx_labels(file: &Path, labels: &[usize]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    std::fs::write(file, out).map_err(|e| io_err(file, e))
}
