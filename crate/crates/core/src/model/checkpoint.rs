//! `PXCK` checkpoint container.
//!
//! Layout (little-endian): magic `PXCK`, `u32` version, `u32`-length-prefixed
//! UTF-8 JSON configuration document, then named tensors until end of file,
//! each as `u32`-length-prefixed UTF-8 name, `u32` rank, `rank × u32`
//! extents and `f32` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ModelError, ParamStore};
use crate::numerics::Tensor;
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every tensor of `store` with the same-named checkpoint
    /// tensor; names absent from `store` are ignored.
    pub fn restore_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<(), ModelError> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for (name, slot) in names.iter().zip(store.tensors_mut()) {
            let t = self
                .tensor(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
        }
        if !store.all_finite() {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        let doc = serde_json::to_string(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        put_bytes(&mut w, doc.as_bytes())?;
        for (name, t) in &self.tensors {
            put_bytes(&mut w, name.as_bytes())?;
            put_u32(&mut w, to_u32(t.rank())?)?;
            for &e in t.shape() {
                put_u32(&mut w, to_u32(e)?)?;
            }
            let mut buf = Vec::with_capacity(t.numel() * 4);
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint(format!("unknown magic {magic:?}")));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let doc = get_string(&mut r)?;
        let config = serde_json::from_str(&doc).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
        let mut tensors = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("tensor name not UTF-8".into()))?;
            let rank = get_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| get_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn to_u32(n: usize) -> Result<u32, ModelError> {
    u32::try_from(n).map_err(|_| ModelError::Checkpoint(format!("{n} exceeds u32")))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<(), ModelError> {
    put_u32(w, to_u32(b.len())?)?;
    w.write_all(b)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_string<R: Read>(r: &mut R) -> Result<String, ModelError> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ModelError::Checkpoint("config document not UTF-8".into()))
}
