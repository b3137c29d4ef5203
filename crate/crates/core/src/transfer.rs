//! Variable-size per-cell data: packing into an offsets/bytes pair,
//! redistribution after repartitioning, and checkpoint files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::TransferError;
use crate::fabric::{Communicator, Rank};
use crate::forest::CellKey;
use crate::wire::{put_key, put_u32, put_u64, Reader, CELL_KEY_BYTES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HPDK";
pub const CHECKPOINT_VERSION: u32 = 1;

const STAGE_TRANSFER: &str = "repartition-transfer";

/// Payloads of a sequence of cells stored back to back; the payload of cell
/// `j` is `data[offsets[j]..offsets[j + 1]]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PackedCellData {
    pub cells: Vec<CellKey>,
    pub offsets: Vec<u64>,
    pub data: Vec<u8>,
}

impl PackedCellData {
    pub fn new() -> Self {
        PackedCellData { cells: Vec::new(), offsets: vec![0], data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn payload(&self, j: usize) -> &[u8] {
        &self.data[self.offsets[j] as usize..self.offsets[j + 1] as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &[u8])> + '_ {
        self.cells.iter().enumerate().map(move |(j, k)| (k, self.payload(j)))
    }

    /// Per-cell payloads keyed by cell.
    pub fn unpack(&self) -> BTreeMap<CellKey, Vec<u8>> {
        self.iter().map(|(k, p)| (*k, p.to_vec())).collect()
    }

    fn push(&mut self, key: CellKey, payload: &[u8]) {
        self.cells.push(key);
        self.data.extend_from_slice(payload);
        self.offsets.push(self.data.len() as u64);
    }

    fn validate(&self) -> Result<(), TransferError> {
        if self.offsets.len() != self.cells.len() + 1
            || self.offsets[0] != 0
            || self.offsets.windows(2).any(|w| w[0] > w[1])
            || *self.offsets.last().unwrap() != self.data.len() as u64
        {
            return Err(TransferError::BadOffsets);
        }
        Ok(())
    }
}

/// Packs payloads in the given cell order. Sizes are collected first so the
/// byte array is allocated once.
pub fn pack(cells: &[CellKey], mut payload_of: impl FnMut(&CellKey) -> Vec<u8>) -> PackedCellData {
    let payloads: Vec<Vec<u8>> = cells.iter().map(&mut payload_of).collect();
    let mut offsets = Vec::with_capacity(cells.len() + 1);
    offsets.push(0u64);
    for p in &payloads {
        offsets.push(offsets.last().unwrap() + p.len() as u64);
    }
    let mut data = Vec::with_capacity(*offsets.last().unwrap() as usize);
    for p in &payloads {
        data.extend_from_slice(p);
    }
    PackedCellData { cells: cells.to_vec(), offsets, data }
}

/// Bytes moved between ranks by a transfer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransferReport {
    pub messages: usize,
    pub bytes: u64,
}

/// Moves every cell's payload from its current rank (the index into
/// `packed`) to `new_owner`. Each destination gets one header message with
/// keys and offsets and one data message. Results are in curve order.
pub fn repartition_transfer<C: Communicator + ?Sized>(
    packed: &[PackedCellData],
    new_owner: &BTreeMap<CellKey, Rank>,
    fabric: &C,
) -> Result<(Vec<PackedCellData>, TransferReport), TransferError> {
    let nranks = fabric.size();
    if packed.len() != nranks {
        return Err(crate::fabric::FabricError::ParticipationMismatch { expected: nranks, got: packed.len() }.into());
    }
    let mut kept: Vec<Vec<(CellKey, Vec<u8>)>> = vec![Vec::new(); nranks];
    let mut report = TransferReport::default();
    for (p, local) in packed.iter().enumerate() {
        local.validate()?;
        // Same-destination cells form contiguous runs.
        let mut order: Vec<(Rank, usize)> = Vec::with_capacity(local.len());
        for (j, key) in local.cells.iter().enumerate() {
            let q = *new_owner.get(key).ok_or(TransferError::UnknownCell(*key))?;
            if q >= nranks {
                return Err(crate::fabric::FabricError::InvalidRank(q).into());
            }
            order.push((q, j));
        }
        order.sort();
        let mut start = 0;
        while start < order.len() {
            let q = order[start].0;
            let end = start + order[start..].iter().take_while(|(r, _)| *r == q).count();
            if q == p {
                kept[p].extend(order[start..end].iter().map(|&(_, j)| (local.cells[j], local.payload(j).to_vec())));
            } else {
                let mut header = Vec::new();
                put_u64(&mut header, (end - start) as u64);
                let mut data = Vec::new();
                let mut offset = 0u64;
                put_u64(&mut header, 0);
                for &(_, j) in &order[start..end] {
                    put_key(&mut header, &local.cells[j]);
                    offset += local.payload(j).len() as u64;
                    put_u64(&mut header, offset);
                    data.extend_from_slice(local.payload(j));
                }
                report.messages += 2;
                report.bytes += (header.len() + data.len()) as u64;
                fabric.post(STAGE_TRANSFER, p, q, header)?;
                fabric.post(STAGE_TRANSFER, p, q, data)?;
            }
            start = end;
        }
    }
    let inboxes = fabric.deliver(STAGE_TRANSFER)?;
    for (p, inbox) in inboxes.into_iter().enumerate() {
        for pair in inbox.chunks(2) {
            let [(_, header), (_, data)] = pair else {
                return Err(TransferError::Truncated);
            };
            let mut r = Reader::new(header);
            let n = r.u64().ok_or(TransferError::Truncated)? as usize;
            let mut prev = r.u64().ok_or(TransferError::Truncated)?;
            for _ in 0..n {
                let key = r.key().ok_or(TransferError::Truncated)?;
                let next = r.u64().ok_or(TransferError::Truncated)?;
                if next < prev || next as usize > data.len() {
                    return Err(TransferError::BadOffsets);
                }
                if new_owner.get(&key) != Some(&p) {
                    return Err(TransferError::DestinationMismatch { rank: p, cell: key });
                }
                kept[p].push((key, data[prev as usize..next as usize].to_vec()));
                prev = next;
            }
        }
    }
    let result = kept
        .into_iter()
        .map(|mut cells| {
            cells.sort_by_key(|a| a.0);
            let mut out = PackedCellData::new();
            for (k, payload) in cells {
                out.push(k, &payload);
            }
            out
        })
        .collect();
    Ok((result, report))
}

/// Checkpoint bytes: magic, version, cell count, keys, offsets, data.
pub fn encode_checkpoint(packed: &PackedCellData) -> Result<Vec<u8>, TransferError> {
    packed.validate()?;
    let mut buf = Vec::with_capacity(16 + packed.len() * (CELL_KEY_BYTES + 8) + 8 + packed.data.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u64(&mut buf, packed.len() as u64);
    for key in &packed.cells {
        put_key(&mut buf, key);
    }
    for &o in &packed.offsets {
        put_u64(&mut buf, o);
    }
    buf.extend_from_slice(&packed.data);
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PackedCellData, TransferError> {
    let mut r = Reader::new(bytes);
    if r.bytes(4).ok_or(TransferError::Truncated)? != CHECKPOINT_MAGIC {
        return Err(TransferError::BadMagic);
    }
    let version = r.u32().ok_or(TransferError::Truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(TransferError::BadVersion(version));
    }
    let n = r.u64().ok_or(TransferError::Truncated)?;
    let n = usize::try_from(n).map_err(|_| TransferError::Truncated)?;
    let min_len = n.checked_mul(CELL_KEY_BYTES + 8).and_then(|v| v.checked_add(8)).ok_or(TransferError::Truncated)?;
    if r.remaining() < min_len {
        return Err(TransferError::Truncated);
    }
    let mut cells = Vec::with_capacity(n);
    for _ in 0..n {
        cells.push(r.key().ok_or(TransferError::BadOffsets)?);
    }
    let offsets: Vec<u64> = (0..=n).map(|_| r.u64().unwrap()).collect();
    let total = *offsets.last().unwrap();
    if total as usize != r.remaining() {
        return Err(TransferError::Truncated);
    }
    let data = r.bytes(total as usize).ok_or(TransferError::Truncated)?.to_vec();
    let packed = PackedCellData { cells, offsets, data };
    packed.validate()?;
    Ok(packed)
}

pub fn checkpoint_save(path: &Path, packed: &PackedCellData) -> Result<(), TransferError> {
    fs::write(path, encode_checkpoint(packed)?)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<PackedCellData, TransferError> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn shard_path(prefix: &Path, rank: Rank) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".rank{rank}.hpdk"));
    PathBuf::from(s)
}

pub fn meta_path(prefix: &Path) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes one shard per rank plus a metadata file with the rank count and
/// the cycle number.
pub fn save_sharded(prefix: &Path, shards: &[PackedCellData], cycle: u64) -> Result<(), TransferError> {
    for (p, shard) in shards.iter().enumerate() {
        checkpoint_save(&shard_path(prefix, p), shard)?;
    }
    fs::write(meta_path(prefix), format!("ranks={}\ncycle={}\n", shards.len(), cycle))?;
    Ok(())
}

/// Reads all shards written by [`save_sharded`]; returns them with the cycle.
pub fn load_sharded(prefix: &Path) -> Result<(Vec<PackedCellData>, u64), TransferError> {
    let meta = fs::read_to_string(meta_path(prefix))?;
    let mut ranks = None;
    let mut cycle = None;
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| TransferError::Metadata(line.to_string()))?;
        let v: u64 = v.trim().parse().map_err(|_| TransferError::Metadata(line.to_string()))?;
        match k.trim() {
            "ranks" => ranks = Some(v as usize),
            "cycle" => cycle = Some(v),
            _ => return Err(TransferError::Metadata(line.to_string())),
        }
    }
    let ranks = ranks.ok_or_else(|| TransferError::Metadata("missing ranks".into()))?;
    let cycle = cycle.ok_or_else(|| TransferError::Metadata("missing cycle".into()))?;
    let shards = (0..ranks).map(|p| checkpoint_load(&shard_path(prefix, p))).collect::<Result<_, _>>()?;
    Ok((shards, cycle))
}
