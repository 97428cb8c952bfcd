//! Binary tensor container (`SKTN`) and named-tensor checkpoints (`SKCK`).
//!
//! Tensor layout, little-endian: magic `SKTN`, version `u32 = 1`, dtype `u8`
//! (0 = f32, 1 = f64), ndim `u8`, dims `u32[ndim]`, then row-major data.
//! A checkpoint is magic `SKCK`, version `u32 = 1`, followed by entries of
//! `(name length u32, name bytes, SKTN tensor)` until end of file.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::tensor::{DType, Element};

pub const TENSOR_MAGIC: [u8; 4] = *b"SKTN";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SKCK";
pub const FORMAT_VERSION: u32 = 1;

/// A decoded tensor of either supported dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(a) => a.shape(),
            AnyTensor::F64(a) => a.shape(),
        }
    }

    /// Converts to the requested element type.
    pub fn cast<F: Element>(&self) -> ArrayD<F> {
        match self {
            AnyTensor::F32(a) => a.mapv(|x| F::of(x as f64)),
            AnyTensor::F64(a) => a.mapv(F::of),
        }
    }
}

pub fn encode_tensor<F: Element>(t: &ArrayD<F>, out: &mut Vec<u8>) -> Result<()> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::arg(format!("{} dimensions exceed the container limit", t.ndim())));
    }
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(F::DTYPE.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::arg(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.len() * F::DTYPE.size());
    for &x in t.as_standard_layout().iter() {
        x.write_le(out);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

fn read_data<F: Element>(r: &mut Reader<'_>, shape: &[usize]) -> Result<ArrayD<F>> {
    let n: usize = shape.iter().product();
    let size = F::DTYPE.size();
    let raw = r.take(n * size, "tensor data")?;
    let data: Vec<F> = raw.chunks_exact(size).map(F::read_le).collect();
    Ok(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data"))
}

fn decode_at(r: &mut Reader<'_>) -> Result<AnyTensor> {
    let start = r.offset();
    if r.take(4, "magic")? != TENSOR_MAGIC {
        return Err(Error::format(start, "bad tensor magic, expected SKTN"));
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(at, format!("unsupported tensor version {version}")));
    }
    let at = r.offset();
    let code = r.u8("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::format(at, format!("unknown dtype code {code}")))?;
    let ndim = r.u8("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let at = r.offset();
        let d = r.u32("dimension")? as usize;
        if d == 0 {
            return Err(Error::format(at, "zero-length dimension"));
        }
        shape.push(d);
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(read_data(r, &shape)?),
        DType::F64 => AnyTensor::F64(read_data(r, &shape)?),
    })
}

/// Decodes one tensor that must span all of `bytes`.
pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader { bytes, pos: 0, base: 0 };
    let t = decode_at(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.offset(), "trailing bytes after tensor data"));
    }
    Ok(t)
}

pub fn save_tensor<F: Element>(path: impl AsRef<Path>, t: &ArrayD<F>) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn encode_checkpoint<F: Element>(entries: &[(String, &ArrayD<F>)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in entries {
        let len = u32::try_from(name.len()).map_err(|_| Error::arg("parameter name too long"))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut buf)?;
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { bytes, pos: 0, base: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic, expected SKCK"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let at = r.offset();
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_string();
        out.push((name, decode_at(&mut r)?));
    }
    Ok(out)
}

pub fn save_checkpoint<F: Element>(path: impl AsRef<Path>, entries: &[(String, &ArrayD<F>)]) -> Result<()> {
    fs::write(path, encode_checkpoint(entries)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, AnyTensor)>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![1.0f32, -2.0]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SKTN");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(buf[8], 0);
        assert_eq!(buf[9], 2);
        assert_eq!(&buf[10..14], &2u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1u32.to_le_bytes());
        assert_eq!(&buf[18..22], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 26);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = ArrayD::from_elem(IxDyn(&[3, 4]), 0.5f64);
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf).unwrap();
        for cut in [0, 3, 9, 12, buf.len() - 1] {
            match decode_tensor(&buf[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_dtype() {
        assert!(matches!(decode_tensor(b"NOPE\x01\0\0\0\0\0"), Err(Error::Format { offset: 0, .. })));
        let mut buf = Vec::new();
        encode_tensor(&ArrayD::from_elem(IxDyn(&[1]), 1.0f32), &mut buf).unwrap();
        buf[8] = 7;
        assert!(matches!(decode_tensor(&buf), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn checkpoint_entries() {
        let a = ArrayD::from_elem(IxDyn(&[2]), 1.5f32);
        let b = ArrayD::from_elem(IxDyn(&[1, 3]), -1.0f32);
        let bytes = encode_checkpoint(&[("a".into(), &a), ("layer.b".into(), &b)]).unwrap();
        assert_eq!(&bytes[..4], b"SKCK");
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, "layer.b");
        assert_eq!(back[1].1, AnyTensor::F32(b));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (seed as f64 + i as f64).sin()).collect();
            let t = ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap();
            let mut buf = Vec::new();
            encode_tensor(&t, &mut buf).unwrap();
            prop_assert_eq!(decode_tensor(&buf).unwrap(), AnyTensor::F64(t));
        }
    }
}
