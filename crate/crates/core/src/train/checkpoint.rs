//! Named-array container.
//!
//! Layout: the magic `SSCTL1`, then per array a little-endian `u32` name
//! length, the UTF-8 name, a dtype byte (0 = f64, 1 = raw bytes), a `u32`
//! rank, `u32` dims and the little-endian payload.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 6] = b"SSCTL1";

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Tensor),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arrays: Vec<(String, ArrayData)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn u32_len(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Internal(format!("{what} {n} does not fit in 32 bits")))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.arrays.push((name.into(), ArrayData::F64(t.clone())));
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.arrays.push((name.into(), ArrayData::Bytes(bytes)));
    }

    pub fn push_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        self.push_bytes(name, serde_json::to_vec(value)?);
        Ok(())
    }

    fn find(&self, name: &str) -> Result<&ArrayData> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no array `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _)| n == name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.find(name)? {
            ArrayData::F64(t) => Ok(t),
            ArrayData::Bytes(_) => Err(Error::Validation(format!("array `{name}` is not f64"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.find(name)? {
            ArrayData::Bytes(b) => Ok(b),
            ArrayData::F64(_) => Err(Error::Validation(format!(
                "array `{name}` is not raw bytes"
            ))),
        }
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_slice(self.bytes(name)?)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        for (name, data) in &self.arrays {
            out.extend(u32_len(name.len(), "name length")?);
            out.extend(name.as_bytes());
            match data {
                ArrayData::F64(t) => {
                    out.push(0);
                    out.extend(u32_len(t.shape().len(), "rank")?);
                    for &d in t.shape() {
                        out.extend(u32_len(d, "dimension")?);
                    }
                    for v in t.data() {
                        out.extend(v.to_le_bytes());
                    }
                }
                ArrayData::Bytes(b) => {
                    out.push(1);
                    out.extend(u32_len(1, "rank")?);
                    out.extend(u32_len(b.len(), "dimension")?);
                    out.extend(b);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let mut arrays = Vec::new();
        while r.pos < buf.len() {
            let len = r.u32("name length")?;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format {
                    offset: at,
                    reason: "name is not UTF-8".into(),
                })?
                .to_string();
            let at = r.pos;
            let dtype = r.take(1, "dtype")?[0];
            let rank = r.u32("rank")?;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(r.u32("dimension")?);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format {
                    offset: at,
                    reason: format!("array `{name}` is too large"),
                })?;
            let data = match dtype {
                0 => {
                    let bytes =
                        r.take(count.saturating_mul(8), "f64 payload")?;
                    let values = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                        .collect();
                    ArrayData::F64(Tensor::new(dims, values)?)
                }
                1 if rank == 1 => ArrayData::Bytes(r.take(count, "byte payload")?.to_vec()),
                other => {
                    return Err(Error::Format {
                        offset: at,
                        reason: format!("unknown dtype {other} (rank {rank}) for `{name}`"),
                    })
                }
            };
            arrays.push((name, data));
        }
        Ok(Self { arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
