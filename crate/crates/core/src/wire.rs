//! Little-endian encoding shared by ghost exchange and checkpoint files.

use crate::forest::CellKey;

/// Encoded size of a [`CellKey`]: tree, level, anchor x, anchor y.
pub const CELL_KEY_BYTES: usize = 4 + 1 + 4 + 4;

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_key(buf: &mut Vec<u8>, key: &CellKey) {
    put_u32(buf, key.tree);
    buf.push(key.level);
    put_u32(buf, key.x);
    put_u32(buf, key.y);
}

/// Cursor over a byte slice; every read fails cleanly on truncation.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    pub fn u8(&mut self) -> Option<u8> {
        Some(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.bytes(4)?.try_into().ok()?))
    }

    pub fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.bytes(8)?.try_into().ok()?))
    }

    /// Reads a key without validating alignment.
    pub fn raw_key(&mut self) -> Option<(u32, u8, u32, u32)> {
        Some((self.u32()?, self.u8()?, self.u32()?, self.u32()?))
    }

    pub fn key(&mut self) -> Option<CellKey> {
        let (t, l, x, y) = self.raw_key()?;
        CellKey::new(t, l, x, y).ok()
    }
}

/// Ghost-exchange payload: per cell the key, a u32 count and u64 indices.
pub fn encode_cell_lists<'a>(cells: impl IntoIterator<Item = (&'a CellKey, &'a [u64])>) -> Vec<u8> {
    let mut buf = Vec::new();
    for (key, list) in cells {
        put_key(&mut buf, key);
        put_u32(&mut buf, list.len() as u32);
        for &v in list {
            put_u64(&mut buf, v);
        }
    }
    buf
}

pub fn decode_cell_lists(buf: &[u8]) -> Result<Vec<(CellKey, Vec<u64>)>, String> {
    let mut r = Reader::new(buf);
    let mut out = Vec::new();
    while !r.is_empty() {
        let key = r.key().ok_or("bad cell key")?;
        let n = r.u32().ok_or("truncated count")? as usize;
        if r.remaining() < n * 8 {
            return Err("truncated index list".into());
        }
        let list = (0..n).map(|_| r.u64().unwrap()).collect();
        out.push((key, list));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_list_layout() {
        let k = CellKey::new(2, 1, 1 << 29, 0).unwrap();
        let buf = encode_cell_lists([(&k, &[7u64, u64::MAX][..])]);
        assert_eq!(buf.len(), CELL_KEY_BYTES + 4 + 16);
        assert_eq!(&buf[0..4], &2u32.to_le_bytes());
        assert_eq!(buf[4], 1);
        assert_eq!(&buf[5..9], &(1u32 << 29).to_le_bytes());
        assert_eq!(&buf[13..17], &2u32.to_le_bytes());
        assert_eq!(&buf[17..25], &7u64.to_le_bytes());
        assert_eq!(decode_cell_lists(&buf).unwrap(), vec![(k, vec![7, u64::MAX])]);
    }

    #[test]
    fn truncated_list_rejected() {
        let k = CellKey::root(0);
        let buf = encode_cell_lists([(&k, &[1u64, 2][..])]);
        assert!(decode_cell_lists(&buf[..buf.len() - 1]).is_err());
        assert!(decode_cell_lists(&buf[..3]).is_err());
    }
}
