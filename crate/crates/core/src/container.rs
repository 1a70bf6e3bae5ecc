//! `TWLD` world container.
//!
//! ```text
//! "TWLD" | version u16 | X Y Z u32 | C u32 | flag u8 (0 dense, 1 sparse)
//! dense:  X*Y*Z*C f32 in canonical order
//! sparse: count u64, then per entry x y z u32 and C f32
//! ```
//! All integers and reals little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Coord, DenseWorld, SparseWorld};

pub const MAGIC: &[u8; 4] = b"TWLD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12 + 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub enum WorldFile {
    Dense(DenseWorld),
    Sparse(SparseWorld),
}

impl WorldFile {
    pub fn dims(&self) -> Coord {
        match self {
            WorldFile::Dense(w) => w.dims(),
            WorldFile::Sparse(w) => w.dims(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            WorldFile::Dense(w) => w.channels(),
            WorldFile::Sparse(w) => w.channels(),
        }
    }

    /// Dense view; sparse worlds are filled with zeros.
    pub fn into_dense(self) -> DenseWorld {
        match self {
            WorldFile::Dense(w) => w,
            WorldFile::Sparse(w) => w.densify(0.0),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            WorldFile::Dense(w) => encode_dense(w),
            WorldFile::Sparse(w) => encode_sparse(w),
        }
    }
}

fn header(out: &mut Vec<u8>, dims: Coord, channels: usize, flag: u8) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    out.push(flag);
}

pub fn encode_dense(w: &DenseWorld) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + w.data().len() * 4);
    header(&mut out, w.dims(), w.channels(), 0);
    for v in w.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_sparse(w: &SparseWorld) -> Vec<u8> {
    let c = w.channels();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 + w.len() * (12 + 4 * c));
    header(&mut out, w.dims(), c, 1);
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for i in 0..w.len() {
        for q in w.coords()[i] {
            out.extend_from_slice(&q.to_le_bytes());
        }
        for v in w.entry(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
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
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated world file: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<WorldFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a TWLD world file".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported world file version {version}")));
    }
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let channels = r.u32()? as usize;
    let flag = r.take(1)?[0];
    let world = match flag {
        0 => {
            let n = dims
                .iter()
                .try_fold(channels, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("world size overflows".into()))?;
            WorldFile::Dense(DenseWorld::from_data(dims, channels, r.f32s(n)?)?)
        }
        1 => {
            let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
            let entry = 12 + 4 * channels;
            if count.checked_mul(entry).is_none_or(|b| b > bytes.len() - r.pos) {
                return Err(Error::Format(format!("sparse entry count {count} exceeds file size")));
            }
            let mut coords = Vec::with_capacity(count);
            let mut values = Vec::with_capacity(count * channels);
            for _ in 0..count {
                coords.push([r.u32()?, r.u32()?, r.u32()?]);
                values.extend(r.f32s(channels)?);
            }
            WorldFile::Sparse(SparseWorld::from_sorted(dims, channels, coords, values)?)
        }
        other => return Err(Error::Format(format!("unknown storage flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after world data",
            bytes.len() - r.pos
        )));
    }
    Ok(world)
}

pub fn save(path: &Path, world: &WorldFile) -> Result<()> {
    fs::write(path, world.to_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<WorldFile> {
    decode(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Parse {
            path: path.display().to_string(),
            message: m,
        },
        other => other,
    })
}

pub fn save_dense(path: &Path, world: &DenseWorld) -> Result<()> {
    fs::write(path, encode_dense(world))?;
    Ok(())
}

pub fn load_dense(path: &Path) -> Result<DenseWorld> {
    Ok(load(path)?.into_dense())
}
