//! CIFAR-10 and CIFAR-100 binary batches.

use super::{io_err, DataError, Dataset, RawImages};
use std::path::Path;

const PLANE: usize = 32 * 32;
const PIXELS: usize = 3 * PLANE;

fn read_records(
    file: &Path,
    label_bytes: usize,
    label_index: usize,
) -> Result<(Vec<u8>, Vec<usize>), DataError> {
    let bytes = std::fs::read(file).map_err(|e| io_err(file, e))?;
    let record = label_bytes + PIXELS;
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
    for rec in bytes.chunks_exact(record) {
        labels.push(rec[label_index] as usize);
        data.extend_from_slice(&rec[label_bytes..]);
    }
    Ok((data, labels))
}

fn load_split(
    dir: &Path,
    files: &[&str],
    label_bytes: usize,
    label_index: usize,
) -> Result<(RawImages, Vec<usize>), DataError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let (d, l) = read_records(&dir.join(name), label_bytes, label_index)?;
        data.extend(d);
        labels.extend(l);
    }
    let n = labels.len();
    Ok((RawImages { data, n, c: 3, h: 32, w: 32 }, labels))
}

/// Loads the five CIFAR-10 training batches and the test batch from `dir`.
///
/// Each record is one label byte followed by 3072 pixel bytes in channel
/// planes (red, green, blue), row-major within each plane.
pub fn load_cifar10(dir: &Path) -> Result<Dataset, DataError> {
    let train_files = [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
    ];
    let (train, train_labels) = load_split(dir, &train_files, 1, 0)?;
    let (test, test_labels) = load_split(dir, &["test_batch.bin"], 1, 0)?;
    Ok(Dataset::from_raw("cifar10", 10, train, train_labels, test, test_labels))
}

/// Loads CIFAR-100 from `dir`, keeping the fine label of each record.
///
/// Records carry two label bytes (coarse, then fine) before the 3072 pixel
/// bytes.
pub fn load_cifar100(dir: &Path) -> Result<Dataset, DataError> {
    let (train, train_labels) = load_split(dir, &["train.bin"], 2, 1)?;
    let (test, test_labels) = load_split(dir, &["test.bin"], 2, 1)?;
    Ok(Dataset::from_raw("cifar100", 100, train, train_labels, test, test_labels))
}
