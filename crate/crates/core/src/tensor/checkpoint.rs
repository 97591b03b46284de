//! Flat named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "THEGAU1"            7-byte magic
//! u32                  tensor count
//! per tensor:
//!   u32 + bytes        UTF-8 name
//!   u32 + u64 * rank   shape
//!   f64 * numel        values
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"THEGAU1";

pub fn write_checkpoint<'a, W: Write>(
    mut out: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "bad magic; not a THEGAU1 checkpoint".into(),
        ));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("shape overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..4, cols in 0usize..4, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) as f64).sin()).collect();
            let t = Tensor::from_rows(rows, cols, data).unwrap();
            let s = Tensor::scalar(seed as f64);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, [("w", &t), ("bias.0", &s)]).unwrap();
            let back = read_checkpoint(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].1, &t);
            prop_assert_eq!(&back[1].0, "bias.0");
            prop_assert_eq!(&back[1].1, &s);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint(&b"NOTGAU1\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, [("w", &Tensor::zeros(2, 2))]).unwrap();
        buf.pop();
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
