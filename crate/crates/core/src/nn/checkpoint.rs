//! Little-endian tensor archive.
//!
//! Layout: magic `APGA`, `u32` format version, then records until end of file. Each record is
//! `u32` name length, UTF-8 name bytes, `u32` rank, `u64` per dimension, `u8` precision tag
//! (0 = f32, 1 = f64), raw element bytes.

use std::path::Path;

use super::adam::AdamState;
use super::params::Parameterized;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"APGA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    fn of<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::PRECISION {
            Precision::F32 => TensorData::F32(t.cast()),
            Precision::F64 => TensorData::F64(t.cast()),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            TensorData::F32(_) => Precision::F32,
            TensorData::F64(_) => Precision::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, TensorData)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push((name.into(), TensorData::of(t)));
    }

    pub fn push_f64(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, &Tensor::scalar(value));
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .map(TensorData::to)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        let t = self.tensor::<f64>(name)?;
        t.data()
            .first()
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("empty scalar {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for (name, data) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(data.shape().len() as u32).to_le_bytes());
            for &d in data.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(data.precision().tag());
            match data {
                TensorData::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                TensorData::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut entries = Vec::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let precision = Precision::from_tag(r.take(1)?[0])
                .ok_or_else(|| Error::Checkpoint(format!("bad precision tag for {name}")))?;
            let n: usize = dims.iter().product();
            let raw = r.take(n * precision.byte_width())?;
            let data = match precision {
                Precision::F32 => TensorData::F32(Tensor::from_vec(
                    &dims,
                    raw.chunks_exact(4).map(f32::read_le).collect(),
                )?),
                Precision::F64 => TensorData::F64(Tensor::from_vec(
                    &dims,
                    raw.chunks_exact(8).map(f64::read_le).collect(),
                )?),
            };
            entries.push((name, data));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so an interrupted write never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save_params<T: Scalar, M: Parameterized<T> + ?Sized>(&mut self, prefix: &str, model: &M) {
        for (name, t) in model.parameters() {
            self.push(format!("{prefix}/{name}"), t);
        }
    }

    pub fn load_params<T: Scalar, M: Parameterized<T> + ?Sized>(&self, prefix: &str, model: &mut M) -> Result<()> {
        for (name, t) in model.parameters_mut() {
            let full = format!("{prefix}/{name}");
            let src = self.tensor::<T>(&full)?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{full}: stored shape {:?} does not match model {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src;
        }
        Ok(())
    }

    pub fn save_adam<T: Scalar>(&mut self, prefix: &str, adam: &AdamState<T>) {
        self.push_f64(format!("{prefix}/step"), adam.step_count() as f64);
        for (name, m, v) in adam.moments() {
            self.push(format!("{prefix}/m/{name}"), m);
            self.push(format!("{prefix}/v/{name}"), v);
        }
    }

    /// Restores moments for the parameters of `model`; absent moments mean no update happened yet.
    pub fn load_adam<T: Scalar, M: Parameterized<T> + ?Sized>(
        &self,
        prefix: &str,
        model: &M,
        adam: &mut AdamState<T>,
    ) -> Result<()> {
        let step = self.f64(&format!("{prefix}/step"))? as u64;
        let mut moments = Vec::new();
        if step > 0 {
            for (name, _) in model.parameters() {
                let m = self.tensor(&format!("{prefix}/m/{name}"))?;
                let v = self.tensor(&format!("{prefix}/v/{name}"))?;
                moments.push((name, m, v));
            }
        }
        adam.restore(step, moments);
        Ok(())
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
