//! Shamir-based secure multiparty computation for privacy-preserving
//! aggregation among network domains.
//!
//! Input peers split their private data into shares, one per privacy peer.
//! The privacy peers run the protocols in [`protocols`] on those shares
//! with the round-based [`engine`], using the comparison operations in
//! [`compare`], and publish only the aggregate result.

pub mod compare;
pub mod engine;
pub mod field;
pub mod harness;
pub mod protocols;
pub mod sharing;
pub mod transport;

pub use compare::BitwiseSharing;
pub use engine::{Ctx, Engine, EngineError, OpOutput, Operand, Operation, Reveal, RevealKind, Stats};
pub use field::{default_field, find_prime, small_field, Fe, Field, FieldError};
pub use protocols::{
    CorrelationConfig, CorrelationResult, DistinctResult, EntropyResult, Event, ProtocolError, ReconstructedEvent,
};
pub use sharing::{Degree, ShareVector, SharingError};
pub use transport::{Exchange, Hello, MsgType, Role, RoundBatch, TrafficStats, TransportError, WireFrame};
