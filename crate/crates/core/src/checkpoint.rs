//! Binary checkpoint of a model and its prototype bank.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "AMV1"
//! u64 × 5          input_dim, patch_len, hidden_dim, num_classes, pooling code
//! f64 × ...        parameters in declaration order, each row-major
//! u8  × K          prototype seen flags
//! f64 × K·n        prototypes, class-major
//! ```

use crate::error::{Error, Result};
use crate::model::{Pooling, SdsmConfig, SdsmModel};
use crate::numerics::Tensor;
use crate::prototypes::PrototypeBank;

pub const MAGIC: &[u8; 4] = b"AMV1";

pub fn write_checkpoint(model: &SdsmModel, bank: &PrototypeBank) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        c.input_dim as u64,
        c.patch_len as u64,
        c.hidden_dim as u64,
        c.num_classes as u64,
        c.pooling.code(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in model.params() {
        for v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend(bank.seen_flags().iter().map(|&s| u8::from(s)));
    for v in bank.prototypes().iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Parses a checkpoint; `alpha` and `tau` configure the restored bank.
pub fn read_checkpoint(bytes: &[u8], alpha: f64, tau: f64) -> Result<(SdsmModel, PrototypeBank)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
    }
    let config = SdsmConfig {
        input_dim: dims[0],
        patch_len: dims[1],
        hidden_dim: dims[2],
        num_classes: dims[3],
        pooling: Pooling::from_code(r.u64()?)?,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let tensors = SdsmModel::param_shapes(&config)
        .into_iter()
        .map(|shape| {
            let len = shape.iter().product();
            Tensor::new(shape, r.f64s(len)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = SdsmModel::from_tensors(config, tensors)?;
    let (k, n) = (config.num_classes, config.hidden_dim);
    let seen = r
        .take(k)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("bad seen flag {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let flat = r.f64s(k * n)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in checkpoint",
            bytes.len() - r.pos
        )));
    }
    let protos = flat.chunks(n).map(<[f64]>::to_vec).collect();
    let bank = PrototypeBank::from_parts(protos, seen, alpha, tau)?;
    Ok((model, bank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip_and_header() {
        let cfg = SdsmConfig {
            input_dim: 6,
            patch_len: 3,
            hidden_dim: 4,
            num_classes: 3,
            pooling: Pooling::Last,
        };
        let model = SdsmModel::new(cfg, &mut seeded(9)).unwrap();
        let mut bank = PrototypeBank::new(3, 4, 0.9, 0.1).unwrap();
        bank.update_prototypes(&[vec![1.0, -2.0, 0.5, 3.0]], &[1])
            .unwrap();
        let bytes = write_checkpoint(&model, &bank);
        assert_eq!(&bytes[..4], b"AMV1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 6);
        assert_eq!(u64::from_le_bytes(bytes[36..44].try_into().unwrap()), 0);
        let n_params: usize = SdsmModel::param_shapes(&cfg)
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum();
        assert_eq!(bytes.len(), 4 + 40 + 8 * n_params + 3 + 8 * 12);

        let (m2, b2) = read_checkpoint(&bytes, 0.9, 0.1).unwrap();
        assert_eq!(m2.tensors(), model.tensors());
        assert_eq!(b2, bank);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = SdsmConfig {
            input_dim: 4,
            patch_len: 2,
            hidden_dim: 2,
            num_classes: 2,
            pooling: Pooling::Mean,
        };
        let model = SdsmModel::new(cfg, &mut seeded(1)).unwrap();
        let bank = PrototypeBank::new(2, 2, 0.9, 0.1).unwrap();
        let bytes = write_checkpoint(&model, &bank);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1], 0.9, 0.1).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad, 0.9, 0.1).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_checkpoint(&extra, 0.9, 0.1).is_err());
    }
}
