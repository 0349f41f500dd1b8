//! Multivariate community Hawkes models for continuous-time networks.
//!
//! Nodes belong to blocks; every ordered node pair is a Hawkes process whose
//! base rate, jump sizes and kernel weights are shared by all pairs of the
//! same block pair. An event on `(x, y)` can excite up to six kinds of pairs
//! (see [`model::ExcitationType`]).

pub mod branching;
pub mod error;
pub mod eval;
pub mod events;
pub mod fit;
pub mod model;
pub mod motifs;
pub mod simulate;
pub mod spectral;

pub use error::{MulchError, Result};
pub use events::{Event, EventStream, IdMap};
pub use model::{Alpha, BlockPairParams, ExcitationType, Membership, MembershipFile, MulchModel};
