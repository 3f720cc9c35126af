//! SVHN cropped digits in the pre-converted raw binary layout.
//!
//! The upstream distribution ships `.mat` containers; this loader reads the
//! flat conversion documented in the README: `svhn-train.bin` and
//! `svhn-test.bin`, each a sequence of records holding one label byte
//! (0 through 9) followed by 3072 pixel bytes in channel planes (red, green,
//! blue), row-major within each 32x32 plane.

use super::{io_err, DataError, Dataset, RawImages};
use std::path::Path;

const PIXELS: usize = 3 * 32 * 32;

fn load_split(file: &Path) -> Result<(RawImages, Vec<usize>), DataError> {
    let bytes = std::fs::read(file).map_err(|e| io_err(file, e))?;
    let record = 1 + PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(DataError::Malformed {
            file: file.to_path_buf(),
            detail: format!(
                "file length {} is not a positive multiple of the {record}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(DataError::Malformed {
                file: file.to_path_buf(),
                detail: format!("record {i} has label {label}, expected 0 through 9"),
            });
        }
        labels.push(label);
        data.extend_from_slice(&rec[1..]);
    }
    Ok((RawImages { data, n, c: 3, h: 32, w: 32 }, labels))
}

/// Loads SVHN train and test splits from `dir`.
pub fn load_svhn(dir: &Path) -> Result<Dataset, DataError> {
    let (train, train_labels) = load_split(&dir.join("svhn-train.bin"))?;
    let (test, test_labels) = load_split(&dir.join("svhn-test.bin"))?;
    Ok(Dataset::from_raw("svhn", 10, train, train_labels, test, test_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_raw_records() {
        let dir = std::env::temp_dir().join("condense-svhn-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let mut train = vec![4u8];
        train.extend(std::iter::repeat_n(200u8, PIXELS));
        train.push(9);
        train.extend(std::iter::repeat_n(10u8, PIXELS));
        std::fs::write(dir.join("svhn-train.bin"), &train).unwrap();
        let mut test = vec![0u8];
        test.extend(std::iter::repeat_n(128u8, PIXELS));
        std::fs::write(dir.join("svhn-test.bin"), &test).unwrap();
        let ds = load_svhn(&dir).unwrap();
        assert_eq!(ds.train.labels(), &[4, 9]);
        assert_eq!(ds.test.n(), 1);
        assert!(ds.is_digit_like());
    }

    #[test]
    fn out_of_range_label_is_malformed() {
        let dir = std::env::temp_dir().join("condense-svhn-badlabel");
        std::fs::create_dir_all(&dir).unwrap();
        let mut train = vec![10u8];
        train.extend(std::iter::repeat_n(0u8, PIXELS));
        std::fs::write(dir.join("svhn-train.bin"), &train).unwrap();
        std::fs::write(dir.join("svhn-test.bin"), &train).unwrap();
        assert!(matches!(load_svhn(&dir), Err(DataError::Malformed { .. })));
    }
}
