//! Readers and writers for the CIFAR binary record layouts.
//!
//! CIFAR-10 records are 1 label byte followed by 3072 pixel bytes; CIFAR-100
//! records carry a coarse and a fine label byte before the pixels. Pixels are
//! three 32×32 channel planes (R, G, B), each row-major.

use super::Dataset;
use crate::error::{Error, Result};

pub const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    #[default]
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordLayout {
    Cifar10,
    Cifar100,
}

fn pixels(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&b| f64::from(b) / 255.0).collect()
}

pub fn read_cifar10(bytes: &[u8]) -> Result<Dataset> {
    const RECORD: usize = 1 + PIXELS;
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 data of {} bytes is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    let mut inputs = Vec::with_capacity(bytes.len() / RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!(
                "record {i}: label byte {} > 9",
                rec[0]
            )));
        }
        labels.push(usize::from(rec[0]));
        inputs.push(pixels(&rec[1..]));
    }
    Dataset::new(inputs, labels, PIXELS, 10)
}

pub fn read_cifar100(bytes: &[u8], granularity: Granularity) -> Result<Dataset> {
    const RECORD: usize = 2 + PIXELS;
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-100 data of {} bytes is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    let mut inputs = Vec::with_capacity(bytes.len() / RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let (coarse, fine) = (rec[0], rec[1]);
        if coarse > 19 {
            return Err(Error::Format(format!(
                "record {i}: coarse label {coarse} > 19"
            )));
        }
        if fine > 99 {
            return Err(Error::Format(format!("record {i}: fine label {fine} > 99")));
        }
        labels.push(usize::from(match granularity {
            Granularity::Fine => fine,
            Granularity::Coarse => coarse,
        }));
        inputs.push(pixels(&rec[2..]));
    }
    let k = match granularity {
        Granularity::Fine => 100,
        Granularity::Coarse => 20,
    };
    Dataset::new(inputs, labels, PIXELS, k)
}

/// Serialises `ds` in a CIFAR record layout, quantising each value as
/// `round(255·clamp(v, 0, 1))`. The CIFAR-100 layout writes `label / 5` as
/// the coarse byte.
pub fn write_records(ds: &Dataset, layout: RecordLayout) -> Result<Vec<u8>> {
    if ds.dim() != PIXELS {
        return Err(Error::Parameter(format!(
            "record layout needs {PIXELS} values per sample, dataset has {}",
            ds.dim()
        )));
    }
    let max_label = match layout {
        RecordLayout::Cifar10 => 9,
        RecordLayout::Cifar100 => 99,
    };
    let header = match layout {
        RecordLayout::Cifar10 => 1,
        RecordLayout::Cifar100 => 2,
    };
    let mut out = Vec::with_capacity(ds.len() * (header + PIXELS));
    for (x, &y) in ds.inputs().iter().zip(ds.labels()) {
        if y > max_label {
            return Err(Error::Parameter(format!(
                "label {y} does not fit the record layout"
            )));
        }
        let y = y as u8;
        if layout == RecordLayout::Cifar100 {
            out.push(y / 5);
        }
        out.push(y);
        out.extend(x.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record10(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, PIXELS));
        r
    }

    #[test]
    fn cifar10_fixture() {
        let ds = read_cifar10(&record10(7, 255)).unwrap();
        assert_eq!(ds.labels(), &[7]);
        assert!(ds.input(0).iter().all(|&v| v == 1.0));
        assert_eq!(ds.dim(), 3072);
    }

    #[test]
    fn cifar10_empty_and_index() {
        assert!(read_cifar10(&[]).unwrap().is_empty());
        let mut bytes = record10(0, 3);
        bytes.extend(record10(9, 4));
        let ds = read_cifar10(&bytes).unwrap();
        assert_eq!(ds.class_indices(0), &[0]);
        assert_eq!(ds.class_indices(9), &[1]);
        assert!(ds.class_indices(5).is_empty());
    }

    #[test]
    fn cifar10_errors() {
        assert!(matches!(read_cifar10(&[0u8; 3072]), Err(Error::Format(_))));
        let mut bytes = record10(1, 0);
        bytes.extend(record10(10, 0));
        let msg = read_cifar10(&bytes).unwrap_err().to_string();
        assert!(msg.contains("record 1"), "{msg}");
    }

    #[test]
    fn cifar100_granularity() {
        let mut rec = vec![3u8, 42u8];
        rec.extend(std::iter::repeat_n(128, PIXELS));
        assert_eq!(
            read_cifar100(&rec, Granularity::Fine).unwrap().labels(),
            &[42]
        );
        let coarse = read_cifar100(&rec, Granularity::Coarse).unwrap();
        assert_eq!(coarse.labels(), &[3]);
        assert_eq!(coarse.num_classes(), 20);
        rec[1] = 100;
        let msg = read_cifar100(&rec, Granularity::Fine)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("record 0"), "{msg}");
        assert!(read_cifar100(&rec[1..], Granularity::Fine).is_err());
    }

    #[test]
    fn pixels_requantize_exactly() {
        let mut bytes = vec![5u8];
        bytes.extend((0..PIXELS).map(|i| (i % 256) as u8));
        let ds = read_cifar10(&bytes).unwrap();
        assert_eq!(write_records(&ds, RecordLayout::Cifar10).unwrap(), bytes);
    }
}
