//! Little-endian tensor container shared by the parameter and image files:
//! 4-byte ASCII magic, `u32` version, `u32` entry count, then per entry a
//! `u32` rank, `rank` `u32` dims and `prod(dims)` `f64` values.

pub(crate) struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub(crate) fn encode(magic: &[u8; 4], version: u32, entries: &[(&[usize], &[f64])]) -> Vec<u8> {
    let payload: usize = entries.iter().map(|(d, v)| 4 + 4 * d.len() + 8 * v.len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (dims, values) in entries {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in *dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in *values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) fn decode(magic: &[u8; 4], version: u32, bytes: &[u8]) -> Result<Vec<Tensor>, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    let found = cur.take(4)?;
    if found != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(found),
            String::from_utf8_lossy(magic)
        ));
    }
    let found_version = cur.u32()?;
    if found_version != version {
        return Err(format!("unsupported version {found_version}, expected {version}"));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::new();
    for e in 0..count {
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(format!("entry {e}: implausible rank {rank}"));
        }
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("entry {e}: dims overflow"))?;
        let raw = cur.take(len.checked_mul(8).ok_or("payload too large")?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        entries.push(Tensor { dims, values });
    }
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    Ok(entries)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )),
        }
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
