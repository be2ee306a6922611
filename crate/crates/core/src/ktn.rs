//! KTN1 tensor files.
//!
//! Layout: magic `KTN1`, little-endian `u32` dtype code, `u32` rank, `rank`
//! little-endian `u64` dims, then the row-major payload. Complex dtypes are
//! interleaved `(re, im)` pairs.

use crate::{Error, Result};
use num_complex::Complex64;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 4] = *b"KTN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    Complex64 = 0,
    Complex128 = 1,
    F32 = 2,
    F64 = 3,
}

impl DType {
    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(DType::Complex64),
            1 => Some(DType::Complex128),
            2 => Some(DType::F32),
            3 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Complex64 => "complex64",
            DType::Complex128 => "complex128",
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "complex64" => Some(DType::Complex64),
            "complex128" => Some(DType::Complex128),
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }

    fn element_bytes(self) -> usize {
        match self {
            DType::Complex64 => 8,
            DType::Complex128 => 16,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
}

/// An in-memory KTN1 tensor. Values are held in double precision; `dtype`
/// selects the on-disk encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct KtnTensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl KtnTensor {
    pub fn complex(dims: Vec<usize>, data: Vec<Complex64>) -> Self {
        Self {
            dtype: DType::Complex128,
            dims,
            data: TensorData::Complex(data),
        }
    }

    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            dtype: DType::F64,
            dims,
            data: TensorData::Real(data),
        }
    }

    pub fn mask(dims: Vec<usize>, values: Vec<f32>) -> Self {
        Self {
            dtype: DType::F32,
            dims,
            data: TensorData::Real(values.into_iter().map(f64::from).collect()),
        }
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn as_complex(&self) -> Option<&[Complex64]> {
        match &self.data {
            TensorData::Complex(v) => Some(v),
            TensorData::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Some(v),
            TensorData::Complex(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let is_complex = matches!(self.dtype, DType::Complex64 | DType::Complex128);
        let len = match &self.data {
            TensorData::Complex(v) if is_complex => v.len(),
            TensorData::Real(v) if !is_complex => v.len(),
            _ => {
                return Err(Error::invalid(format!(
                    "payload kind does not match dtype {}",
                    self.dtype.name()
                )))
            }
        };
        if len != self.numel() {
            return Err(Error::dim(format!(
                "tensor dims {:?} hold {} elements, payload has {len}",
                self.dims,
                self.numel()
            )));
        }
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + len * self.dtype.element_bytes());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(self.dtype as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match (&self.data, self.dtype) {
            (TensorData::Complex(v), DType::Complex64) => {
                for c in v {
                    out.extend_from_slice(&(c.re as f32).to_le_bytes());
                    out.extend_from_slice(&(c.im as f32).to_le_bytes());
                }
            }
            (TensorData::Complex(v), _) => {
                for c in v {
                    out.extend_from_slice(&c.re.to_le_bytes());
                    out.extend_from_slice(&c.im.to_le_bytes());
                }
            }
            (TensorData::Real(v), DType::F32) => {
                for x in v {
                    out.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
            (TensorData::Real(v), _) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| "truncated header")?;
        if magic != MAGIC {
            return Err(format!("bad magic {magic:02x?}"));
        }
        let code = read_u32(&mut cur)?;
        let dtype = DType::from_code(code).ok_or_else(|| format!("unknown dtype code {code}"))?;
        let ndim = read_u32(&mut cur)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            cur.read_exact(&mut b).map_err(|_| "truncated dims")?;
            dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| "dim overflows usize")?);
        }
        let numel: usize = dims.iter().product();
        let expected = numel
            .checked_mul(dtype.element_bytes())
            .ok_or("payload size overflow")?;
        if cur.len() != expected {
            return Err(format!("payload has {} bytes, expected {expected}", cur.len()));
        }
        let data = match dtype {
            DType::Complex64 => TensorData::Complex(
                cur.chunks_exact(8)
                    .map(|c| {
                        let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                        let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                        Complex64::new(re as f64, im as f64)
                    })
                    .collect(),
            ),
            DType::Complex128 => TensorData::Complex(
                cur.chunks_exact(16)
                    .map(|c| {
                        let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
                        let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
                        Complex64::new(re, im)
                    })
                    .collect(),
            ),
            DType::F32 => TensorData::Real(
                cur.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            ),
            DType::F64 => TensorData::Real(
                cur.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dtype, dims, data })
    }
}

fn read_u32(cur: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| "truncated header")?;
    Ok(u32::from_le_bytes(b))
}

pub fn write(path: impl AsRef<Path>, tensor: &KtnTensor) -> Result<()> {
    let bytes = tensor.to_bytes()?;
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<KtnTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    KtnTensor::from_bytes(&bytes).map_err(|message| Error::Format {
        path: PathBuf::from(path),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = KtnTensor::mask(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let b = t.to_bytes().unwrap();
        assert_eq!(&b[0..4], &[0x4B, 0x54, 0x4E, 0x31]);
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..20], &2u64.to_le_bytes());
        assert_eq!(&b[20..28], &3u64.to_le_bytes());
        assert_eq!(b.len(), 28 + 6 * 4);
        assert_eq!(&b[28..32], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = KtnTensor::real(vec![2], vec![1.0, 2.0]);
        let mut b = t.to_bytes().unwrap();
        assert!(KtnTensor::from_bytes(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(KtnTensor::from_bytes(&b).is_err());
    }

    #[test]
    fn payload_kind_must_match_dtype() {
        let t = KtnTensor::real(vec![1], vec![1.0]).with_dtype(DType::Complex128);
        assert!(t.to_bytes().is_err());
        let t = KtnTensor::real(vec![3], vec![1.0]);
        assert!(t.to_bytes().is_err());
    }

    proptest! {
        #[test]
        fn complex128_and_f64_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let n = vals.len();
            let real = KtnTensor::real(vec![n], vals.clone());
            prop_assert_eq!(KtnTensor::from_bytes(&real.to_bytes().unwrap()).unwrap(), real);
            let cx: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, -v * 0.5)).collect();
            let c = KtnTensor::complex(vec![1, n], cx);
            prop_assert_eq!(KtnTensor::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        }

        #[test]
        fn complex64_round_trip_is_f32_exact(vals in prop::collection::vec(-1e3f32..1e3, 1..20)) {
            let cx: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v as f64, 2.0 * v as f64)).collect();
            let t = KtnTensor::complex(vec![vals.len()], cx).with_dtype(DType::Complex64);
            prop_assert_eq!(KtnTensor::from_bytes(&t.to_bytes().unwrap()).unwrap(), t);
        }
    }
}
