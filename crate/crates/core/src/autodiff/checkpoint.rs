//! `MRCP` parameter checkpoints.
//!
//! Layout (all integers little-endian): magic `MRCP`, `u32` version, then
//! records until end of file. Each record is `u32` name length, UTF-8 name,
//! `u32` rank, `rank × u32` dims and the row-major `f64` payload.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::params::ParamStore;
use super::tensor::{Tensor, TensorError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRCP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint truncated or corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_checkpoint<T: Scalar, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let value = store.value(id);
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in value.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32, CheckpointError> {
    let bytes = buf
        .get(*pos..*pos + 4)
        .ok_or_else(|| CheckpointError::Corrupt(format!("unexpected end at byte {}", *pos)))?;
    *pos += 4;
    Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ParamStore<T>, CheckpointError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 4 || &buf[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut pos = 4;
    let version = read_u32(&buf, &mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionUnsupported(version));
    }
    let mut store = ParamStore::new();
    while pos < buf.len() {
        let len = read_u32(&buf, &mut pos)? as usize;
        let name = buf
            .get(pos..pos + len)
            .ok_or_else(|| CheckpointError::Corrupt("name runs past end".into()))?;
        let name = std::str::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("name is not UTF-8".into()))?
            .to_string();
        pos += len;
        let rank = read_u32(&buf, &mut pos)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!(
                "implausible rank {rank} for `{name}`"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&buf, &mut pos)? as usize);
        }
        let count: usize = shape.iter().product();
        let bytes = buf
            .get(pos..pos + count * 8)
            .ok_or_else(|| CheckpointError::Corrupt(format!("payload of `{name}` truncated")))?;
        pos += count * 8;
        let data = bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_layout() {
        let mut s = ParamStore::<f64>::new();
        s.insert(
            "w",
            Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap(),
        )
        .unwrap();
        s.insert("b", Tensor::scalar(0.25)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"MRCP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        // name length, then "w"
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], b'w');
        let back: ParamStore<f64> = read_checkpoint(bytes.as_slice()).unwrap();
        assert!(back.same_values(&s));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            read_checkpoint::<f64, _>(&b"NOPE"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut v = b"MRCP".to_vec();
        v.extend_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint::<f64, _>(v.as_slice()),
            Err(CheckpointError::VersionUnsupported(7))
        ));
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::zeros(&[4, 4])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            read_checkpoint::<f64, _>(bytes.as_slice()),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
