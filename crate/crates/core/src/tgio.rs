//! `.tg` binary tensor container.
//!
//! Layout: magic `TGRD`, version byte `0x01`, dtype byte (`0x00` float64,
//! `0x01` uint8), ndim byte, `ndim` little-endian `u64` dimensions, then the
//! row-major payload (little-endian for float64).
//!
//! Grids and soft labelings are stored as float64 `[H, W, C]`; label maps as
//! uint8 `[H, W]`; scribble masks as uint8 `[H, W]` with 255 = unlabeled.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{LabelMap, ScribbleMask, SoftLabeling, TensorGrid};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const VERSION: u8 = 0x01;
pub const UNLABELED: u8 = 255;

#[derive(Clone, Debug, PartialEq)]
pub enum TgPayload {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgTensor {
    pub dims: Vec<u64>,
    pub payload: TgPayload,
}

impl TgTensor {
    pub fn f64(dims: Vec<u64>, data: Vec<f64>) -> Self {
        Self { dims, payload: TgPayload::F64(data) }
    }

    pub fn u8(dims: Vec<u64>, data: Vec<u8>) -> Self {
        Self { dims, payload: TgPayload::U8(data) }
    }

    fn element_count(dims: &[u64]) -> Result<usize> {
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
            .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::Format("too many dimensions".into()));
        }
        let n = Self::element_count(&self.dims)?;
        let (dtype, len) = match &self.payload {
            TgPayload::F64(v) => (0x00u8, v.len()),
            TgPayload::U8(v) => (0x01u8, v.len()),
        };
        if len != n {
            return Err(Error::Format(format!("payload has {len} elements, dims imply {n}")));
        }
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + len * 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(dtype);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.payload {
            TgPayload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TgPayload::U8(v) => out.extend_from_slice(v),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut head = [0u8; 7];
        r.read_exact(&mut head).map_err(|_| Error::Format("truncated header".into()))?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a .tg file".into()));
        }
        if head[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", head[4])));
        }
        let dtype = head[5];
        let ndim = head[6] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::Format("truncated dimensions".into()))?;
            dims.push(u64::from_le_bytes(b));
        }
        let n = Self::element_count(&dims)?;
        let payload = match dtype {
            0x00 => {
                if r.len() != n * 8 {
                    return Err(Error::Format(format!(
                        "float64 payload has {} bytes, expected {}",
                        r.len(),
                        n * 8
                    )));
                }
                TgPayload::F64(
                    r.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            0x01 => {
                if r.len() != n {
                    return Err(Error::Format(format!(
                        "uint8 payload has {} bytes, expected {n}",
                        r.len()
                    )));
                }
                TgPayload::U8(r.to_vec())
            }
            other => return Err(Error::Format(format!("unknown dtype byte {other:#04x}"))),
        };
        Ok(Self { dims, payload })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    fn hw(&self) -> Result<(usize, usize)> {
        if self.dims.len() < 2 {
            return Err(Error::Format(format!("expected at least 2 dims, got {}", self.dims.len())));
        }
        Ok((self.dims[0] as usize, self.dims[1] as usize))
    }
}

impl<T: Scalar> From<&TensorGrid<T>> for TgTensor {
    fn from(g: &TensorGrid<T>) -> Self {
        TgTensor::f64(
            vec![g.height() as u64, g.width() as u64, g.channels() as u64],
            g.data().iter().map(|v| v.as_f64()).collect(),
        )
    }
}

impl<T: Scalar> From<&SoftLabeling<T>> for TgTensor {
    fn from(p: &SoftLabeling<T>) -> Self {
        TgTensor::f64(
            vec![p.height() as u64, p.width() as u64, p.classes() as u64],
            p.probs().iter().map(|v| v.as_f64()).collect(),
        )
    }
}

impl TgTensor {
    pub fn from_labels(m: &LabelMap) -> Result<Self> {
        let data = m
            .labels()
            .iter()
            .map(|&l| {
                u8::try_from(l)
                    .ok()
                    .filter(|&b| b != UNLABELED)
                    .ok_or_else(|| Error::Format(format!("label {l} does not fit in uint8")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TgTensor::u8(vec![m.height() as u64, m.width() as u64], data))
    }

    pub fn from_scribbles(s: &ScribbleMask) -> Result<Self> {
        let data = s
            .entries()
            .iter()
            .map(|e| match e {
                None => Ok(UNLABELED),
                Some(l) => u8::try_from(*l)
                    .ok()
                    .filter(|&b| b != UNLABELED)
                    .ok_or_else(|| Error::Format(format!("label {l} does not fit in uint8"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TgTensor::u8(vec![s.height() as u64, s.width() as u64], data))
    }

    /// Float64 tensor of rank 2 or 3 as a grid (rank 2 means one channel).
    pub fn to_grid<T: Scalar>(&self) -> Result<TensorGrid<T>> {
        let (h, w) = self.hw()?;
        let c = match self.dims.len() {
            2 => 1,
            3 => self.dims[2] as usize,
            n => return Err(Error::Format(format!("grid tensor must have rank 2 or 3, got {n}"))),
        };
        match &self.payload {
            TgPayload::F64(v) => TensorGrid::new(h, w, c, v.iter().map(|&x| T::lit(x)).collect()),
            TgPayload::U8(v) => TensorGrid::new(h, w, c, v.iter().map(|&x| T::lit(x as f64)).collect()),
        }
    }

    pub fn to_soft<T: Scalar>(&self) -> Result<SoftLabeling<T>> {
        if self.dims.len() != 3 {
            return Err(Error::Format("soft labeling tensor must have rank 3".into()));
        }
        let (h, w) = self.hw()?;
        match &self.payload {
            TgPayload::F64(v) => SoftLabeling::new(
                h,
                w,
                self.dims[2] as usize,
                v.iter().map(|&x| T::lit(x)).collect(),
            ),
            TgPayload::U8(_) => Err(Error::Format("soft labeling must be float64".into())),
        }
    }

    pub fn to_labels(&self) -> Result<LabelMap> {
        let (h, w) = self.hw()?;
        match &self.payload {
            TgPayload::U8(v) if self.dims.len() == 2 => {
                if v.contains(&UNLABELED) {
                    return Err(Error::Format("label map contains the unlabeled marker".into()));
                }
                LabelMap::new(h, w, v.iter().map(|&b| b as usize).collect())
            }
            _ => Err(Error::Format("label map must be a rank-2 uint8 tensor".into())),
        }
    }

    pub fn to_scribbles(&self) -> Result<ScribbleMask> {
        let (h, w) = self.hw()?;
        match &self.payload {
            TgPayload::U8(v) if self.dims.len() == 2 => ScribbleMask::new(
                h,
                w,
                v.iter().map(|&b| (b != UNLABELED).then_some(b as usize)).collect(),
            ),
            _ => Err(Error::Format("scribble mask must be a rank-2 uint8 tensor".into())),
        }
    }
}

pub fn write_grid<T: Scalar>(path: impl AsRef<Path>, g: &TensorGrid<T>) -> Result<()> {
    TgTensor::from(g).write(path)
}

pub fn read_grid<T: Scalar>(path: impl AsRef<Path>) -> Result<TensorGrid<T>> {
    TgTensor::read(path)?.to_grid()
}

pub fn write_soft<T: Scalar>(path: impl AsRef<Path>, p: &SoftLabeling<T>) -> Result<()> {
    TgTensor::from(p).write(path)
}

pub fn read_soft<T: Scalar>(path: impl AsRef<Path>) -> Result<SoftLabeling<T>> {
    TgTensor::read(path)?.to_soft()
}

pub fn write_labels(path: impl AsRef<Path>, m: &LabelMap) -> Result<()> {
    TgTensor::from_labels(m)?.write(path)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    TgTensor::read(path)?.to_labels()
}

pub fn write_scribbles(path: impl AsRef<Path>, s: &ScribbleMask) -> Result<()> {
    TgTensor::from_scribbles(s)?.write(path)
}

pub fn read_scribbles(path: impl AsRef<Path>) -> Result<ScribbleMask> {
    TgTensor::read(path)?.to_scribbles()
}
