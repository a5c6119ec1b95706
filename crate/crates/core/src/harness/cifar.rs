use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::netzoo::{Dataset, Sample};

/// One label byte followed by a 3x32x32 channel-major image.
pub const RECORD_BYTES: usize = 3073;
pub const CLASSES: usize = 10;

/// Reads a CIFAR-10 binary batch (e.g. `test_batch.bin`), keeping file order.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes, None)
}

/// The first `count` records of a CIFAR-10 binary batch.
pub fn load_cifar10_first(path: impl AsRef<Path>, count: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes, Some(count))
}

/// Decodes records, scaling pixels by 1/255. With `limit`, only the first
/// `limit` records are decoded, but the whole buffer must still consist of
/// complete records.
pub fn parse_cifar10(bytes: &[u8], limit: Option<usize>) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::DatasetFormat(format!(
            "truncated record: {} bytes is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let records = bytes.len() / RECORD_BYTES;
    let take = limit.map_or(records, |l| l.min(records));
    let mut samples = Vec::with_capacity(take);
    for (i, record) in bytes.chunks_exact(RECORD_BYTES).take(take).enumerate() {
        let label = record[0] as usize;
        if label >= CLASSES {
            return Err(Error::DatasetFormat(format!("record {i} has label byte {label}")));
        }
        let pixels = record[1..].iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(Sample::new(Tensor::new(vec![3, 32, 32], pixels)?, label));
    }
    Dataset::new(samples, CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; RECORD_BYTES];
        r[0] = label;
        r
    }

    #[test]
    fn record_arithmetic_and_scaling() {
        let mut bytes = Vec::new();
        for i in 0..5u8 {
            bytes.extend(record(i, 255));
        }
        let data = parse_cifar10(&bytes, None).unwrap();
        assert_eq!(data.len(), 5);
        assert_eq!(data.get(3).unwrap().label, 3);
        assert!(data.get(0).unwrap().image.data().iter().all(|&v| v == 1.0));
        assert_eq!(parse_cifar10(&bytes, Some(2)).unwrap().len(), 2);
    }

    #[test]
    fn bad_label_and_truncation() {
        assert!(matches!(parse_cifar10(&record(17, 0), None), Err(Error::DatasetFormat(_))));
        assert!(matches!(parse_cifar10(&record(1, 0)[..3000], None), Err(Error::DatasetFormat(_))));
    }
}
