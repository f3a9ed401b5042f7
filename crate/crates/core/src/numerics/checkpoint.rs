//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//! `"SGIR"`, version `u32`, parameter count `u32`, then per parameter
//! name length `u32`, UTF-8 name, rank `u32`, `rank` dims as `u64`, and the
//! payload as `f64`.

use std::io::{Read, Write};

use super::store::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGIR";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, store: &ParamStore<T>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, p) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new(0);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::cast_from(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        if store.contains(&name) {
            return Err(Error::Format(format!("duplicate parameter `{name}`")));
        }
        store.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let mut s: ParamStore<f64> = ParamStore::new(3);
        s.insert("b", Tensor::from_vec([2, 3], vec![1.0, -2.5, 3.0, 1e-300, 0.1, 7.0]).unwrap());
        s.insert("a", Tensor::scalar(0.1 + 0.2));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"SGIR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        let back: ParamStore<f64> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(back.get("b").unwrap(), s.get("b").unwrap());
        assert_eq!(back.get("a").unwrap(), s.get("a").unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_checkpoint::<f64, _>(&b"NOPE\x01\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
        let mut s: ParamStore<f64> = ParamStore::new(0);
        s.insert("w", Tensor::zeros([4]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint::<f64, _>(&buf[..]).is_err());
    }

    #[test]
    fn loads_into_single_precision() {
        let mut s: ParamStore<f64> = ParamStore::new(0);
        s.insert("w", Tensor::from_vec([2], vec![0.5, -1.25]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        let back: ParamStore<f32> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.get("w").unwrap().data(), &[0.5f32, -1.25]);
    }
}
