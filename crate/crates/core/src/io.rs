//! Tensor file round-trip in the `.lrt` format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  b"LRT1"           4 bytes
//! dtype  u8                0 = f32, 1 = f64
//! ndim   u8
//! dims   ndim x u64
//! data   row-major payload
//! ```
//!
//! A scalar f64 tensor (dims `[1]`) is exactly 22 bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const LRT_MAGIC: &[u8; 4] = b"LRT1";

/// A loaded tensor whose precision was chosen by the file, not the caller.
#[derive(Clone, Debug)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    /// Widen (losslessly for f32 inputs) to f64.
    pub fn into_f64(self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t,
        }
    }
}

/// Exact on-disk size for a given shape/precision.
pub fn lrt_byte_len(dtype: DType, dims: &[usize]) -> usize {
    let n: usize = dims.iter().product();
    4 + 1 + 1 + 8 * dims.len() + dtype.size() * n
}

pub fn encode_tensor<S: Element>(t: &Tensor<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(lrt_byte_len(S::DTYPE, t.dims()));
    out.extend_from_slice(LRT_MAGIC);
    out.push(S::DTYPE.code());
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    let need = |n: usize, what: &str| -> Result<()> {
        if bytes.len() < n {
            Err(Error::Format(format!("truncated .lrt: missing {what}")))
        } else {
            Ok(())
        }
    };
    need(6, "header")?;
    if &bytes[0..4] != LRT_MAGIC {
        return Err(Error::Format("bad .lrt magic".into()));
    }
    let dtype = DType::from_code(bytes[4])?;
    let ndim = bytes[5] as usize;
    if ndim == 0 {
        return Err(Error::Format("tensor with zero axes".into()));
    }
    need(6 + 8 * ndim, "dims")?;
    let mut dims = Vec::with_capacity(ndim);
    let mut n: usize = 1;
    for i in 0..ndim {
        let off = 6 + 8 * i;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let d = usize::try_from(d)
            .map_err(|_| Error::Format(format!("axis length {d} exceeds usize")))?;
        if d == 0 {
            return Err(Error::Format("zero-length axis".into()));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format("element count overflow".into()))?;
        dims.push(d);
    }
    let payload = &bytes[6 + 8 * ndim..];
    let expect = n * dtype.size();
    if payload.len() != expect {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expect}",
            payload.len()
        )));
    }
    Ok(match dtype {
        DType::F32 => {
            let data = payload.chunks_exact(4).map(f32::read_le).collect();
            AnyTensor::F32(Tensor::new(dims, data)?)
        }
        DType::F64 => {
            let data = payload.chunks_exact(8).map(f64::read_le).collect();
            AnyTensor::F64(Tensor::new(dims, data)?)
        }
    })
}

pub fn save_tensor<S: Element>(t: &Tensor<S>, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<AnyTensor> {
    let bytes = fs::read(path)?;
    decode_tensor(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn scalar_f64_is_22_bytes() {
        let t = Tensor::new(vec![1], vec![3.5f64]).unwrap();
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), 22);
        assert_eq!(lrt_byte_len(DType::F64, &[1]), 22);
    }

    #[test]
    fn byte_len_formula() {
        assert_eq!(lrt_byte_len(DType::F32, &[2, 3, 4]), 6 + 24 + 4 * 24);
        assert_eq!(lrt_byte_len(DType::F64, &[5]), 6 + 8 + 40);
    }

    #[test]
    fn round_trip_bit_identical_both_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(77);

        let t64 = Tensor::<f64>::new(vec![3, 4, 5], rng.normals(60)).unwrap();
        let p64 = dir.path().join("a.lrt");
        save_tensor(&t64, &p64).unwrap();
        match load_tensor(&p64).unwrap() {
            AnyTensor::F64(back) => {
                assert_eq!(back.dims(), t64.dims());
                for (a, b) in back.data().iter().zip(t64.data()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("dtype changed"),
        }

        let t32: Tensor<f32> = t64.cast();
        let p32 = dir.path().join("b.lrt");
        save_tensor(&t32, &p32).unwrap();
        match load_tensor(&p32).unwrap() {
            AnyTensor::F32(back) => {
                for (a, b) in back.data().iter().zip(t32.data()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("dtype changed"),
        }
        assert_eq!(
            std::fs::metadata(&p32).unwrap().len() as usize,
            lrt_byte_len(DType::F32, &[3, 4, 5])
        );
    }

    #[test]
    fn bad_magic_rejected() {
        let t = Tensor::new(vec![1], vec![1.0f64]).unwrap();
        let mut bytes = encode_tensor(&t);
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_rejected_at_every_prefix() {
        let t = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_tensor(&t);
        for cut in 0..bytes.len() {
            assert!(
                decode_tensor(&bytes[..cut]).is_err(),
                "prefix of {cut} bytes should not decode"
            );
        }
        assert!(decode_tensor(&bytes).is_ok());
    }

    #[test]
    fn trailing_garbage_rejected() {
        let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        let mut bytes = encode_tensor(&t);
        bytes.push(0);
        assert!(decode_tensor(&bytes).is_err());
    }
}
