//! Binary tensor checkpoints: `"CBCK"`, `u32` version, `u32` count, then per
//! tensor a `u16` name length, UTF-8 name, `u8` rank, `u32` dims and
//! little-endian `f32` values. All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{NumError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered list of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<(String, Tensor)>) -> Self {
        Checkpoint { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(NumError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NumError::UnsupportedVersion(version));
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NumError::InvalidName { offset: at })?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(NumError::Truncated { offset: r.pos })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { tensors })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NumError::Truncated {
                offset: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(vec![
            ("a.w".into(), Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap()),
            ("b".into(), Tensor::scalar(7.0)),
        ])
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn rejects_magic_and_version() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(NumError::BadMagic(_))));
        let mut b = sample().to_bytes();
        b[4] = 9;
        assert_eq!(
            Checkpoint::from_bytes(&b),
            Err(NumError::UnsupportedVersion(9))
        );
    }

    #[test]
    fn truncation_reports_offset() {
        let b = sample().to_bytes();
        let cut = &b[..b.len() - 3];
        assert_eq!(
            Checkpoint::from_bytes(cut),
            Err(NumError::Truncated { offset: cut.len() })
        );
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ck");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }
}
