//! Distributed enumeration of degrees of freedom for hp-adaptive continuous
//! finite elements on quadtree forests.

pub mod constraints;
pub mod element;
pub mod enumerate;
pub mod error;
pub mod fabric;
pub mod forest;
pub mod oracle;
pub mod partition;
pub mod transfer;
pub mod wire;

pub use element::{ElementCollection, FeIndex, LagrangeElement, Rational};
pub use enumerate::{ActiveFeMap, Distribution, EntityDofStore, NumberCache, INVALID};
pub use error::{ConstraintError, ElementError, EnumerationError, MeshError, TransferError};
pub use fabric::{Communicator, Rank, SimFabric};
pub use forest::{AdaptFlag, CellKey, Connectivity, Forest, LocalView};
