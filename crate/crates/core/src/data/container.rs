//! `.hpdt` files: a fixed little-endian header, the raw row-major payload
//! and an FNV-1a-64 checksum of the payload.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HPDT"
//! 4       1     version (1)
//! 5       1     dtype code (1 = f32, 2 = f64)
//! 6       1     rank (4)
//! 7       16    extents, 4 x u32 LE
//! 23      ..    payload, product(extents) * dtype size bytes
//! end-8   8     FNV-1a-64 of the payload, u64 LE
//! ```

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, LoadError, Result};
use crate::tensor::{DType, Scalar, Tensor4};

pub const MAGIC: [u8; 4] = *b"HPDT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 23;
const CHECKSUM_LEN: usize = 8;

fn checksum(payload: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(payload);
    h.finish()
}

pub fn encode_tensor<T: Scalar>(t: &Tensor4<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * T::DTYPE.size() + CHECKSUM_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(4);
    for e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::Argument(format!("extent {e} does not fit u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    let sum = checksum(&out[HEADER_LEN..]);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor4<T>, LoadError> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(LoadError::Length {
            expected: HEADER_LEN + CHECKSUM_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(LoadError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(LoadError::Version(bytes[4]));
    }
    let dtype = DType::from_code(bytes[5]).ok_or(LoadError::Dtype(bytes[5]))?;
    if dtype != T::DTYPE {
        return Err(LoadError::WrongDtype {
            expected: T::DTYPE.code(),
            found: dtype.code(),
        });
    }
    if bytes[6] != 4 {
        return Err(LoadError::Rank(bytes[6]));
    }
    let mut ext = [0u32; 4];
    for (i, e) in ext.iter_mut().enumerate() {
        *e = u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().expect("4 bytes"));
    }
    let numel = ext
        .iter()
        .try_fold(1usize, |acc, &e| if e == 0 { None } else { acc.checked_mul(e as usize) })
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or(LoadError::Extents(ext))?;
    let expected = numel
        .checked_add(HEADER_LEN + CHECKSUM_LEN)
        .ok_or(LoadError::Extents(ext))?;
    if bytes.len() != expected {
        return Err(LoadError::Length {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + numel];
    let stored = u64::from_le_bytes(bytes[HEADER_LEN + numel..].try_into().expect("8 bytes"));
    let computed = checksum(payload);
    if stored != computed {
        return Err(LoadError::Checksum { stored, computed });
    }
    let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
    let shape = ext.map(|e| e as usize);
    Ok(Tensor4::from_vec(shape, data).expect("extents checked above"))
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor4<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor4<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_tensor(&bytes)?)
}
