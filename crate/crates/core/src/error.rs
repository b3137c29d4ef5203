use thiserror::Error;

use crate::fabric::{FabricError, Rank};
use crate::forest::CellKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("depth exceeded: level {level} is beyond the maximum refinement depth")]
    DepthExceeded { level: u8 },
    #[error("anchor of {key:?} is not aligned to its level")]
    MisalignedAnchor { key: CellKey },
    #[error("two trees share origin {origin:?}")]
    OverlappingTrees { origin: (i64, i64) },
    #[error("leaves {a:?} and {b:?} overlap")]
    OverlappingLeaves { a: CellKey, b: CellKey },
    #[error("tree {tree} is not covered exactly once")]
    IncompleteCover { tree: u32 },
    #[error("leaf refers to unknown tree {tree}")]
    UnknownTree { tree: u32 },
    #[error("expected {expected} adaptation flags, got {got}")]
    FlagCount { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ElementError {
    #[error("unknown active FE index {0}")]
    UnknownIndex(usize),
    #[error("degree {0} outside the supported range 1..=12")]
    UnsupportedDegree(u32),
    #[error("element degrees must be strictly increasing")]
    NotIncreasing,
    #[error("element collection is empty")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnumerationError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error("rank {rank}: no active FE index for owned cell {cell:?}")]
    MissingActiveIndex { rank: Rank, cell: CellKey },
    #[error("rank {rank}: stray ghost data for cell {cell:?} from rank {from}")]
    StrayGhostData { rank: Rank, from: Rank, cell: CellKey },
    #[error("rank {rank}: incomplete ghost closure on cell {cell:?}")]
    IncompleteGhostClosure { rank: Rank, cell: CellKey },
    #[error("rank {rank}: conflicting indices {a} and {b} for the same degree of freedom")]
    ConflictingIndex { rank: Rank, a: u64, b: u64 },
    #[error("malformed wire payload: {0}")]
    Wire(String),
    #[error("expected {expected} per-rank inputs, got {got}")]
    RankCount { expected: usize, got: usize },
    #[error("index is the invalid sentinel")]
    Sentinel,
    #[error("index {0} is outside [0, N)")]
    OutOfRange(u64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("circular constraint involving degree of freedom {0}")]
    Circular(u64),
    #[error("edges do not form a hanging configuration")]
    NotHanging,
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint has wrong magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint is truncated or has inconsistent lengths")]
    Truncated,
    #[error("offsets are not a valid CSR layout")]
    BadOffsets,
    #[error("rank {rank} received cell {cell:?} it does not newly own")]
    DestinationMismatch { rank: Rank, cell: CellKey },
    #[error("cell {0:?} has no owner in the given map")]
    UnknownCell(CellKey),
    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
}
